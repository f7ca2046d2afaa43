//! Encoder-decoder CNN predicting `λ1`, `λ2` and the initial level set.
//!
//! Layout for `depth = D`, widths `c_l = base · 2^l`:
//!
//! * encoder level `l < D`: two 3×3 conv units on the running features,
//!   plus (for `l > 0`) two conv units on the input image average-pooled
//!   `l` times, summed, then a dilated residual unit (dilation 2). Its
//!   output is the skip for level `l` and is pooled into level `l + 1`.
//! * bottleneck at `1/2^D` resolution: a conv unit to `c_D`, residual
//!   blocks with dilations 1, 2, 4, then dilated spatial pyramid pooling.
//! * decoder: bilinear ×2, concatenation with the skip, two conv units,
//!   per level; two more conv units at full resolution.
//! * heads: three 1×1 convs. `λ = scale · softplus(z)`, `φ0 = clamp(z, ±τ)`.
//!
//! A conv unit is conv → ReLU → batch norm.

pub mod store;

use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchNormMode, Tape, Var};
use crate::error::{Error, Result};
use crate::real::Real;
pub use store::{
    checkpoint_paths, load_checkpoint, read_manifest, save_checkpoint, Bound, Entry, EntryKind, Init, Manifest, ParamSpec,
    WeightStore,
};

/// How the region weights are produced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaMode {
    /// Per-pixel maps from two 1×1 heads.
    #[default]
    Maps,
    /// One trainable scalar each, broadcast over the image.
    ConstLambda,
}

impl std::str::FromStr for LambdaMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "maps" => Ok(Self::Maps),
            "const-lambda" => Ok(Self::ConstLambda),
            other => Err(format!("unknown lambda mode `{other}` (expected maps or const-lambda)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub base_channels: usize,
    /// Number of encoder resolutions.
    pub depth: usize,
    pub residual_dilations: Vec<usize>,
    pub dspp_rates: Vec<usize>,
    /// `λ = lambda_scale · softplus(z)`.
    pub lambda_scale: f64,
    /// `φ0` is clamped to `[-phi0_clamp, phi0_clamp]`.
    pub phi0_clamp: f64,
    pub lambda_mode: LambdaMode,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            base_channels: 8,
            depth: 3,
            residual_dilations: vec![1, 2, 4],
            dspp_rates: vec![1, 6, 12, 18],
            lambda_scale: 1.0,
            phi0_clamp: 50.0,
            lambda_mode: LambdaMode::Maps,
        }
    }
}

impl BackboneConfig {
    /// A small network for gradient checks and quick tests.
    pub fn tiny() -> Self {
        Self { base_channels: 2, depth: 2, residual_dilations: vec![1, 2], dspp_rates: vec![1, 2], ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |r: &str| Err(Error::Config(format!("backbone: {r}")));
        if self.base_channels == 0 {
            return bad("base_channels must be positive");
        }
        if self.depth == 0 || self.depth > 8 {
            return bad("depth must be in 1..=8");
        }
        if self.dspp_rates.is_empty() || self.dspp_rates.contains(&0) || self.residual_dilations.contains(&0) {
            return bad("dilation rates must be positive and dspp_rates non-empty");
        }
        if !(self.lambda_scale > 0.0) || !(self.phi0_clamp > 0.0) {
            return bad("lambda_scale and phi0_clamp must be > 0");
        }
        Ok(())
    }

    /// Channel width at resolution level `l`.
    pub fn width(&self, l: usize) -> usize {
        self.base_channels << l
    }

    /// Spatial dims must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.depth
    }
}

fn conv_specs(out: &mut Vec<ParamSpec>, name: &str, cin: usize, cout: usize, k: usize) {
    out.push(ParamSpec::param(format!("{name}.weight"), &[cout, cin, k, k], Init::FanIn(cin * k * k)));
    out.push(ParamSpec::param(format!("{name}.bias"), &[cout], Init::Zeros));
}

fn bn_specs(out: &mut Vec<ParamSpec>, name: &str, c: usize) {
    out.push(ParamSpec::param(format!("{name}.gamma"), &[c], Init::Ones));
    out.push(ParamSpec::param(format!("{name}.beta"), &[c], Init::Zeros));
    out.push(ParamSpec::buffer(format!("{name}.running_mean"), &[c], Init::Zeros));
    out.push(ParamSpec::buffer(format!("{name}.running_var"), &[c], Init::Ones));
}

/// conv → ReLU → BN unit `name` (`name.conv`, `name.bn`).
pub fn unit_specs(out: &mut Vec<ParamSpec>, name: &str, cin: usize, cout: usize, k: usize) {
    conv_specs(out, &format!("{name}.conv"), cin, cout, k);
    bn_specs(out, &format!("{name}.bn"), cout);
}

/// Tensors of one dilated residual block.
pub fn residual_specs(out: &mut Vec<ParamSpec>, name: &str, c: usize) {
    conv_specs(out, &format!("{name}.conv1"), c, c, 3);
    bn_specs(out, &format!("{name}.bn"), c);
    conv_specs(out, &format!("{name}.conv2"), c, c, 3);
}

/// Tensors of a pyramid pooling module with `rates.len()` branches.
pub fn dspp_specs(out: &mut Vec<ParamSpec>, name: &str, c: usize, branches: usize) {
    for b in 0..branches {
        unit_specs(out, &format!("{name}.branch{b}"), c, c, 3);
    }
    unit_specs(out, &format!("{name}.fuse"), branches * c, c, 1);
}

/// Layer-building view over a bound store.
pub struct Layers<'s, 't, T: Real> {
    store: &'s mut WeightStore<T>,
    bound: &'s Bound<'t, T>,
    mode: BatchNormMode,
}

impl<'s, 't, T: Real> Layers<'s, 't, T> {
    pub fn new(store: &'s mut WeightStore<T>, bound: &'s Bound<'t, T>, mode: BatchNormMode) -> Self {
        Self { store, bound, mode }
    }

    fn var(&self, name: &str) -> Result<Var<'t, T>> {
        self.store
            .position(name)
            .and_then(|k| self.bound.var(k))
            .ok_or_else(|| Error::Checkpoint { tensor: name.to_string(), reason: "parameter not bound".into() })
    }

    pub fn conv(&self, x: Var<'t, T>, name: &str, dilation: usize) -> Result<Var<'t, T>> {
        let w = self.var(&format!("{name}.weight"))?;
        let b = self.var(&format!("{name}.bias"))?;
        x.conv2d(w, Some(b), dilation, 1)
    }

    pub fn batch_norm(&mut self, x: Var<'t, T>, name: &str) -> Result<Var<'t, T>> {
        let gamma = self.var(&format!("{name}.gamma"))?;
        let beta = self.var(&format!("{name}.beta"))?;
        let (rm_name, rv_name) = (format!("{name}.running_mean"), format!("{name}.running_var"));
        let missing = |n: &str| Error::Checkpoint { tensor: n.to_string(), reason: "missing buffer".into() };
        let rm_k = self.store.position(&rm_name).ok_or_else(|| missing(&rm_name))?;
        let rv_k = self.store.position(&rv_name).ok_or_else(|| missing(&rv_name))?;
        let entries = self.store.entries_mut();
        let mut rm = std::mem::replace(&mut entries[rm_k].value, crate::Tensor::zeros(&[0]));
        let mut rv = std::mem::replace(&mut entries[rv_k].value, crate::Tensor::zeros(&[0]));
        let out = x.batch_norm(gamma, beta, &mut rm, &mut rv, self.mode);
        entries[rm_k].value = rm;
        entries[rv_k].value = rv;
        out
    }

    /// conv → ReLU → BN.
    pub fn unit(&mut self, x: Var<'t, T>, name: &str, dilation: usize) -> Result<Var<'t, T>> {
        let y = self.conv(x, &format!("{name}.conv"), dilation)?.relu();
        self.batch_norm(y, &format!("{name}.bn"))
    }

    /// `relu(x + conv_d(bn(relu(conv_d(x)))))`.
    pub fn residual_block(&mut self, x: Var<'t, T>, name: &str, dilation: usize) -> Result<Var<'t, T>> {
        let y = self.conv(x, &format!("{name}.conv1"), dilation)?.relu();
        let y = self.batch_norm(y, &format!("{name}.bn"))?;
        let y = self.conv(y, &format!("{name}.conv2"), dilation)?;
        Ok(x.add(y)?.relu())
    }

    /// Parallel 3×3 dilated units, concatenated and fused by a 1×1 unit.
    pub fn dspp(&mut self, x: Var<'t, T>, name: &str, rates: &[usize]) -> Result<Var<'t, T>> {
        let mut branches = Vec::with_capacity(rates.len());
        for (b, &r) in rates.iter().enumerate() {
            branches.push(self.unit(x, &format!("{name}.branch{b}"), r)?);
        }
        let cat = Var::concat_channels(&branches)?;
        self.unit(cat, &format!("{name}.fuse"), 1)
    }
}

/// The three output maps, each `[B, 1, H, W]`.
pub struct Heads<'t, T> {
    pub lambda1: Var<'t, T>,
    pub lambda2: Var<'t, T>,
    pub phi0: Var<'t, T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    pub config: BackboneConfig,
}

impl Backbone {
    pub fn new(config: BackboneConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    /// Every tensor of the network, in a fixed order.
    pub fn layout(&self) -> Vec<ParamSpec> {
        let c = &self.config;
        let d = c.depth;
        let mut s = Vec::new();
        for l in 0..d {
            let cin = if l == 0 { 1 } else { c.width(l - 1) };
            unit_specs(&mut s, &format!("enc{l}.unit1"), cin, c.width(l), 3);
            unit_specs(&mut s, &format!("enc{l}.unit2"), c.width(l), c.width(l), 3);
            if l > 0 {
                unit_specs(&mut s, &format!("enc{l}.scale1"), 1, c.width(l), 3);
                unit_specs(&mut s, &format!("enc{l}.scale2"), c.width(l), c.width(l), 3);
            }
            residual_specs(&mut s, &format!("enc{l}.res"), c.width(l));
        }
        unit_specs(&mut s, "bottleneck.unit", c.width(d - 1), c.width(d), 3);
        for k in 0..c.residual_dilations.len() {
            residual_specs(&mut s, &format!("bottleneck.res{k}"), c.width(d));
        }
        dspp_specs(&mut s, "dspp", c.width(d), c.dspp_rates.len());
        for l in (0..d).rev() {
            unit_specs(&mut s, &format!("dec{l}.unit1"), c.width(l + 1) + c.width(l), c.width(l), 3);
            unit_specs(&mut s, &format!("dec{l}.unit2"), c.width(l), c.width(l), 3);
        }
        unit_specs(&mut s, "final.unit1", c.width(0), c.width(0), 3);
        unit_specs(&mut s, "final.unit2", c.width(0), c.width(0), 3);
        match c.lambda_mode {
            LambdaMode::Maps => {
                conv_specs(&mut s, "head.lambda1", c.width(0), 1, 1);
                conv_specs(&mut s, "head.lambda2", c.width(0), 1, 1);
            }
            LambdaMode::ConstLambda => {
                s.push(ParamSpec::param("head.lambda1_const", &[1], Init::Zeros));
                s.push(ParamSpec::param("head.lambda2_const", &[1], Init::Zeros));
            }
        }
        conv_specs(&mut s, "head.phi0", c.width(0), 1, 1);
        s
    }

    pub fn init<T: Real>(&self, seed: u64) -> Result<WeightStore<T>> {
        WeightStore::init(&self.layout(), seed)
    }

    /// Forward pass on a `[B, 1, H, W]` batch with `H`, `W` multiples of
    /// `2^depth`. Batch-norm running statistics are updated in train mode.
    pub fn forward<'t, T: Real>(
        &self,
        store: &mut WeightStore<T>,
        bound: &Bound<'t, T>,
        x: Var<'t, T>,
        mode: BatchNormMode,
    ) -> Result<Heads<'t, T>> {
        let c = &self.config;
        let shape = x.shape();
        let m = c.size_multiple();
        if shape.len() != 4 || shape[1] != 1 {
            return Err(Error::invalid("backbone", format!("expected [B, 1, H, W] input, got {shape:?}")));
        }
        if shape[2] % m != 0 || shape[3] % m != 0 {
            return Err(Error::invalid(
                "backbone",
                format!("spatial dims {}x{} are not multiples of {m}", shape[2], shape[3]),
            ));
        }
        let mut net = Layers::new(store, bound, mode);
        let mut skips = Vec::with_capacity(c.depth);
        let mut h = x;
        for l in 0..c.depth {
            if l > 0 {
                h = h.downsample2()?;
            }
            let mut y = net.unit(h, &format!("enc{l}.unit1"), 1)?;
            y = net.unit(y, &format!("enc{l}.unit2"), 1)?;
            if l > 0 {
                let xs = x.resize(-(l as i32))?;
                let b = net.unit(xs, &format!("enc{l}.scale1"), 1)?;
                let b = net.unit(b, &format!("enc{l}.scale2"), 1)?;
                y = y.add(b)?;
            }
            h = net.residual_block(y, &format!("enc{l}.res"), 2)?;
            skips.push(h);
        }
        h = net.unit(h.downsample2()?, "bottleneck.unit", 1)?;
        for (k, &d) in c.residual_dilations.iter().enumerate() {
            h = net.residual_block(h, &format!("bottleneck.res{k}"), d)?;
        }
        h = net.dspp(h, "dspp", &c.dspp_rates)?;
        for l in (0..c.depth).rev() {
            let up = h.upsample2();
            h = Var::concat_channels(&[up, skips[l]])?;
            h = net.unit(h, &format!("dec{l}.unit1"), 1)?;
            h = net.unit(h, &format!("dec{l}.unit2"), 1)?;
        }
        h = net.unit(h, "final.unit1", 1)?;
        h = net.unit(h, "final.unit2", 1)?;

        let (lambda1, lambda2) = match c.lambda_mode {
            LambdaMode::Maps => (
                net.conv(h, "head.lambda1", 1)?.softplus().scale(c.lambda_scale),
                net.conv(h, "head.lambda2", 1)?.softplus().scale(c.lambda_scale),
            ),
            LambdaMode::ConstLambda => {
                let out = [shape[0], 1, shape[2], shape[3]];
                (
                    net.var("head.lambda1_const")?.softplus().scale(c.lambda_scale).expand(&out)?,
                    net.var("head.lambda2_const")?.softplus().scale(c.lambda_scale).expand(&out)?,
                )
            }
        };
        let phi0 = net.conv(h, "head.phi0", 1)?.clamp(-c.phi0_clamp, c.phi0_clamp);
        Ok(Heads { lambda1, lambda2, phi0 })
    }

    /// Convenience forward with constant weights on a fresh tape; returns
    /// `(λ1, λ2, φ0)` values.
    pub fn predict<T: Real>(
        &self,
        store: &mut WeightStore<T>,
        x: &crate::Tensor<T>,
        mode: BatchNormMode,
    ) -> Result<(crate::Tensor<T>, crate::Tensor<T>, crate::Tensor<T>)> {
        let tape = Tape::new();
        let bound = store.bind(&tape, false);
        let heads = self.forward(store, &bound, tape.constant(x.clone()), mode)?;
        Ok(((*heads.lambda1.value()).clone(), (*heads.lambda2.value()).clone(), (*heads.phi0.value()).clone()))
    }
}
