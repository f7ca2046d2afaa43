//! Joint training of the backbone through the unrolled contour evolution.
//!
//! Each step: `λ1, λ2, φ0 = f(X)`, `N` evolution steps from `φ0`,
//! `Yout = sigmoid(φN)`, soft Dice against the ground truth,
//! backpropagation through everything, Adam update.

mod loss;
mod optim;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use loss::{mse, soft_dice_loss, DICE_SMOOTH};
pub use optim::{adam_step, learning_rate, AdamConfig};

use crate::acm::{evolve, evolve_eval, AcmConfig};
use crate::autodiff::{BatchNormMode, Tape};
use crate::backbone::{save_checkpoint, Backbone, BackboneConfig, WeightStore};
use crate::data::{exact_signed_distance, pad_grid, pad_mask, unpad_grid, Padding, Sample};
use crate::error::{Error, Result};
use crate::metrics::{self, Mask, MetricsReport};
use crate::real::Real;
use crate::tensor::{Grid2D, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "f32" => Ok(Self::F32),
            "f64" => Ok(Self::F64),
            other => Err(format!("unknown precision `{other}` (expected f32 or f64)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Multiplier applied every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Unrolled evolution steps during training.
    pub acm_steps: usize,
    pub seed: u64,
    pub precision: Precision,
    /// Weight of the optional `φ0` distance-map regression loss.
    pub aux_sdf_weight: f64,
    /// Leave wall-clock times out of the run log.
    pub deterministic: bool,
    /// Used when the dataset carries no split file.
    pub train_fraction: f64,
    pub boundary_tolerance: f64,
    /// Narrow-band evolution when evaluating.
    pub eval_banded: bool,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            lr_decay: 0.1,
            lr_decay_every: 10,
            batch_size: 4,
            epochs: 30,
            acm_steps: 20,
            seed: 0,
            precision: Precision::F32,
            aux_sdf_weight: 0.0,
            deterministic: false,
            train_fraction: 0.8,
            boundary_tolerance: metrics::DEFAULT_BOUNDARY_TOLERANCE,
            eval_banded: true,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |r: &str| Err(Error::Config(format!("train: {r}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if !(self.lr_decay > 0.0) || self.lr_decay_every == 0 {
            return bad("lr_decay must be > 0 and lr_decay_every >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.acm_steps == 0 {
            return bad("acm_steps must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return bad("train_fraction must be in [0, 1]");
        }
        if !(self.aux_sdf_weight >= 0.0) || !(self.boundary_tolerance >= 0.0) {
            return bad("aux_sdf_weight and boundary_tolerance must be >= 0");
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad("adam betas must be in [0, 1) and eps > 0");
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        learning_rate(self.learning_rate, self.lr_decay, self.lr_decay_every, epoch)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
    pub wall_time: Option<f64>,
}

/// Held-out means after an epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub images: usize,
    pub dice: f64,
    pub iou: f64,
    pub wcov: f64,
    pub boundf: f64,
    pub rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub eval: Option<EvalSummary>,
    /// This epoch's weights became the best checkpoint.
    pub best: bool,
    pub wall_time: Option<f64>,
}

/// One line of the JSON-lines run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LogRecord {
    Config { seed: u64, config: serde_json::Value },
    Step(StepRecord),
    Epoch(EpochRecord),
}

/// Append-only run log, optionally mirrored to a file line by line.
pub struct RunLog {
    records: Vec<LogRecord>,
    sink: Option<(PathBuf, BufWriter<File>)>,
}

impl RunLog {
    pub fn in_memory() -> Self {
        Self { records: Vec::new(), sink: None }
    }

    pub fn to_file(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self { records: Vec::new(), sink: Some((path.to_path_buf(), BufWriter::new(f))) })
    }

    pub fn push(&mut self, record: LogRecord) -> Result<()> {
        if let Some((path, w)) = &mut self.sink {
            let line = serde_json::to_string(&record).expect("log record serializes");
            writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| Error::io(path.clone(), e))?;
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<LogRecord> {
        self.records
    }

    pub fn read(path: &Path) -> Result<Vec<LogRecord>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.lines()
            .map(|l| serde_json::from_str(l).map_err(|e| Error::Data { path: path.to_path_buf(), reason: e.to_string() }))
            .collect()
    }
}

/// Where and how a training run reports.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Receives `run.jsonl` and `checkpoints/{initial,last,best}.{bin,json}`.
    pub out_dir: Option<PathBuf>,
    /// Extra fields echoed into the log and checkpoints under `"data"`.
    pub data_echo: serde_json::Value,
    /// One line per epoch on stderr.
    pub progress: bool,
}

pub struct TrainOutcome<T> {
    pub last: WeightStore<T>,
    pub best: WeightStore<T>,
    pub best_epoch: Option<usize>,
    pub best_dice: Option<f64>,
    pub log: Vec<LogRecord>,
}

/// Full configuration echo written to logs and checkpoint manifests.
pub fn config_echo(backbone: &BackboneConfig, acm: &AcmConfig, train: &TrainConfig, data: &serde_json::Value) -> serde_json::Value {
    serde_json::json!({ "backbone": backbone, "acm": acm, "train": train, "data": data })
}

struct Prepared<T> {
    image: Tensor<T>,
    target: Tensor<T>,
    sdf: Option<Tensor<T>>,
}

fn prepare<T: Real>(s: &Sample, multiple: usize, with_sdf: bool) -> Prepared<T> {
    let (h, w) = s.shape();
    let pad = Padding::to_multiple(h, w, multiple);
    let (ph, pw) = pad.padded_shape();
    let mask = pad_mask(&s.mask, &pad);
    let as4 = |g: Grid2D<f64>| g.cast::<T>().reshape(&[1, 1, ph, pw]).expect("plane reshape");
    Prepared {
        image: as4(pad_grid(&s.image, &pad)),
        target: as4(mask.to_grid()),
        sdf: with_sdf.then(|| as4(exact_signed_distance(&mask))),
    }
}

fn stack<T: Real>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let shape = parts[0].shape().to_vec();
    if let Some(p) = parts.iter().find(|p| p.shape() != shape.as_slice()) {
        return Err(Error::ShapeMismatch { op: "batch (use batch_size = 1 for mixed sizes)", left: shape, right: p.shape().to_vec() });
    }
    let mut data = Vec::with_capacity(parts.len() * parts[0].len());
    for p in parts {
        data.extend_from_slice(p.data());
    }
    Tensor::from_vec(&[parts.len(), shape[1], shape[2], shape[3]], data)
}

/// Segmentation of one image plus the diagnostic maps, all unpadded.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    /// `φN > 0`.
    pub mask: Mask,
    pub phi_n: Grid2D<f64>,
    pub phi0: Grid2D<f64>,
    pub lambda1: Grid2D<f64>,
    pub lambda2: Grid2D<f64>,
}

/// Forward pass in eval mode followed by `acm.iterations` evolution steps.
pub fn infer<T: Real>(net: &Backbone, store: &mut WeightStore<T>, image: &Grid2D<f64>, acm: &AcmConfig, banded: bool) -> Result<Inference> {
    if image.rank() != 2 {
        return Err(Error::invalid("infer", format!("expected a 2-D image, got shape {:?}", image.shape())));
    }
    let (h, w) = image.spatial();
    let pad = Padding::to_multiple(h, w, net.config.size_multiple());
    let (ph, pw) = pad.padded_shape();
    let x = pad_grid(image, &pad).cast::<T>().reshape(&[1, 1, ph, pw])?;
    let (l1, l2, p0) = net.predict(store, &x, BatchNormMode::Eval)?;
    let plane = |t: Tensor<T>| t.reshape(&[ph, pw]).expect("plane reshape");
    let (l1, l2, p0) = (plane(l1), plane(l2), plane(p0));
    let phi_n = evolve_eval(&p0, &plane(x), &l1, &l2, acm, banded)?;
    let un = |t: &Tensor<T>| unpad_grid(t, &pad).cast::<f64>();
    let phi_n = un(&phi_n);
    Ok(Inference {
        mask: Mask::from_fn(h, w, |i, j| phi_n.at2(i, j) > 0.0),
        phi_n,
        phi0: un(&p0),
        lambda1: un(&l1),
        lambda2: un(&l2),
    })
}

/// Metrics of the model on `samples`.
pub fn evaluate<T: Real>(net: &Backbone, store: &mut WeightStore<T>, samples: &[Sample], acm: &AcmConfig, banded: bool, tolerance: f64) -> Result<MetricsReport> {
    let mut per_image = Vec::with_capacity(samples.len());
    for s in samples {
        let out = infer(net, store, &s.image, acm, banded)?;
        per_image.push(metrics::evaluate_instances(&s.id, &s.mask, &s.instance_labels(), &out.mask, tolerance)?);
    }
    Ok(MetricsReport::from_images(per_image, tolerance))
}

fn summary(r: &MetricsReport) -> EvalSummary {
    EvalSummary { images: r.per_image.len(), dice: r.mean_dice, iou: r.miou, wcov: r.mean_wcov, boundf: r.mean_boundf, rmse: r.mean_rmse }
}

/// Train on `train_set`, evaluating on `test_set` after every epoch.
///
/// A non-finite loss or gradient aborts with [`Error::NonFinite`]; the
/// checkpoints already on disk (initial, last completed epoch, best) are
/// left untouched.
pub fn train<T: Real>(
    train_set: &[Sample],
    test_set: &[Sample],
    backbone: &BackboneConfig,
    acm: &AcmConfig,
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    acm.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("train: the training set is empty".into()));
    }
    let net = Backbone::new(backbone.clone())?;
    let echo = config_echo(backbone, acm, cfg, &opts.data_echo);
    let ck_dir = opts.out_dir.as_ref().map(|d| d.join("checkpoints"));
    let save = |store: &WeightStore<T>, name: &str| -> Result<()> {
        match &ck_dir {
            Some(dir) => save_checkpoint(store, &dir.join(name), &echo, cfg.seed),
            None => Ok(()),
        }
    };
    let mut log = match &opts.out_dir {
        Some(dir) => RunLog::to_file(&dir.join("run.jsonl"))?,
        None => RunLog::in_memory(),
    };
    log.push(LogRecord::Config { seed: cfg.seed, config: echo.clone() })?;

    let multiple = net.config.size_multiple();
    let with_sdf = cfg.aux_sdf_weight > 0.0;
    let data: Vec<Prepared<T>> = train_set.iter().map(|s| prepare(s, multiple, with_sdf)).collect();

    let mut store = net.init::<T>(cfg.seed)?;
    save(&store, "initial")?;
    let mut best = store.clone();
    let (mut best_epoch, mut best_dice) = (None, None::<f64>);
    let start = Instant::now();
    let clock = |deterministic: bool| (!deterministic).then(|| start.elapsed().as_secs_f64());

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let items: Vec<&Prepared<T>> = chunk.iter().map(|&k| &data[k]).collect();
            let images = stack(&items.iter().map(|p| &p.image).collect::<Vec<_>>())?;
            let targets = stack(&items.iter().map(|p| &p.target).collect::<Vec<_>>())?;

            let tape = Tape::new();
            let bound = store.bind(&tape, true);
            let x = tape.constant(images);
            let heads = net.forward(&mut store, &bound, x, BatchNormMode::Train)?;
            let phi = evolve(heads.phi0, x, heads.lambda1, heads.lambda2, acm, cfg.acm_steps)?;
            let mut loss = soft_dice_loss(phi.sigmoid(), tape.constant(targets))?;
            if with_sdf {
                let sdf = stack(&items.iter().map(|p| p.sdf.as_ref().expect("prepared with sdf")).collect::<Vec<_>>())?;
                loss = loss.add(mse(heads.phi0, tape.constant(sdf))?.scale(cfg.aux_sdf_weight))?;
            }
            let loss_value = Real::to_f64(loss.item());
            let step = store.step + 1;
            if !loss_value.is_finite() {
                return Err(Error::NonFinite { context: format!("training loss (epoch {epoch}, step {step})"), index: 0 });
            }
            let grads = loss.backward()?;
            let grads: Vec<Option<Tensor<T>>> = (0..store.len())
                .map(|k| bound.var(k).and_then(|v| grads.get(v).cloned()))
                .collect();
            let grad_norm = grads
                .iter()
                .flatten()
                .flat_map(|g| g.data().iter())
                .map(|&v| Real::to_f64(v) * Real::to_f64(v))
                .sum::<f64>()
                .sqrt();
            drop(bound);
            adam_step(&mut store, &grads, lr, &cfg.adam)?;
            loss_sum += loss_value;
            batches += 1;
            log.push(LogRecord::Step(StepRecord { epoch, step, lr, loss: loss_value, grad_norm, wall_time: clock(cfg.deterministic) }))?;
        }

        let eval = if test_set.is_empty() {
            None
        } else {
            Some(summary(&evaluate(&net, &mut store, test_set, acm, cfg.eval_banded, cfg.boundary_tolerance)?))
        };
        let improved = match (&eval, best_dice) {
            (Some(e), Some(b)) => e.dice > b,
            (Some(_), None) => true,
            (None, _) => true,
        };
        if improved {
            best = store.clone();
            best_epoch = Some(epoch);
            best_dice = eval.as_ref().map(|e| e.dice);
            save(&best, "best")?;
        }
        save(&store, "last")?;
        if opts.progress {
            match &eval {
                Some(e) => eprintln!(
                    "epoch {epoch:>3}  lr {lr:.0e}  loss {:.4}  dice {:.4}  boundf {:.4}",
                    loss_sum / batches as f64,
                    e.dice,
                    e.boundf
                ),
                None => eprintln!("epoch {epoch:>3}  lr {lr:.0e}  loss {:.4}", loss_sum / batches as f64),
            }
        }
        log.push(LogRecord::Epoch(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / batches as f64,
            eval,
            best: improved,
            wall_time: clock(cfg.deterministic),
        }))?;
    }
    Ok(TrainOutcome { last: store, best, best_epoch, best_dice, log: log.into_records() })
}
