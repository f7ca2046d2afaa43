use std::path::PathBuf;

use contour_core::acm::{circle_sdf, evolve_eval, AcmConfig};
use contour_core::data::io::{read_gray, read_mask};
use contour_core::data::{exact_signed_distance, write_mask_png};
use contour_core::metrics::Mask;
use contour_core::Grid2D;

use super::{read_raw, write_raw};
use crate::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Init {
    /// Signed distance of a circle.
    Circle,
    /// Signed distance of a binary mask file.
    Mask,
    /// Raw little-endian f64 level set of the image size.
    SdfFile,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    pub image: PathBuf,
    /// Output mask PNG.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "circle")]
    pub init: Init,
    /// Circle radius (default: a quarter of the smaller side).
    #[arg(long)]
    pub radius: Option<f64>,
    /// Circle center as `row,col` (default: image center).
    #[arg(long, value_parser = parse_center)]
    pub center: Option<(f64, f64)>,
    /// Mask or raw level-set file for `--init mask|sdf-file`.
    #[arg(long)]
    pub init_file: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda2: f64,
    #[arg(long, default_value_t = 200)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0.2)]
    pub mu: f64,
    #[arg(long, default_value_t = 0.0)]
    pub nu: f64,
    #[arg(long, default_value_t = 1.0)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0.5)]
    pub dt: f64,
    /// Local-mean window radius.
    #[arg(long, default_value_t = 5)]
    pub window: usize,
    /// Whole-image region means.
    #[arg(long)]
    pub global_means: bool,
    #[arg(long, default_value_t = 8.0)]
    pub band: f64,
    /// Update every pixel instead of the narrow band.
    #[arg(long)]
    pub full_grid: bool,
    /// Also dump the final level set as raw little-endian f64.
    #[arg(long)]
    pub phi_out: Option<PathBuf>,
    /// Also dump the initial level set as raw little-endian f64.
    #[arg(long)]
    pub phi0_out: Option<PathBuf>,
}

fn parse_center(s: &str) -> Result<(f64, f64), String> {
    let (r, c) = s.split_once(',').ok_or_else(|| format!("expected row,col, got `{s}`"))?;
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}"));
    Ok((num(r)?, num(c)?))
}

impl Args {
    pub fn acm(&self) -> AcmConfig {
        AcmConfig {
            mu: self.mu,
            nu: self.nu,
            epsilon: self.epsilon,
            dt: self.dt,
            radius: self.window,
            global_means: self.global_means,
            band_half_width: self.band,
            iterations: self.iterations,
            ..AcmConfig::default()
        }
    }

    fn initial(&self, h: usize, w: usize) -> CliResult<Grid2D<f64>> {
        let file = || self.init_file.as_ref().ok_or_else(|| CliError::config("--init-file is required for this --init"));
        match self.init {
            Init::Circle => {
                let center = self.center.unwrap_or(((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0));
                let radius = self.radius.unwrap_or(h.min(w) as f64 / 4.0);
                if !(radius > 0.0) {
                    return Err(CliError::config("--radius must be > 0"));
                }
                Ok(circle_sdf(h, w, center, radius))
            }
            Init::Mask => {
                let m = read_mask(file()?)?;
                if (m.height(), m.width()) != (h, w) {
                    return Err(CliError::config(format!("init mask is {}x{}, image is {h}x{w}", m.height(), m.width())));
                }
                Ok(exact_signed_distance(&m))
            }
            Init::SdfFile => read_raw(file()?, h, w),
        }
    }
}

pub fn run(args: Args) -> CliResult<()> {
    let acm = args.acm();
    acm.validate()?;
    let image = read_gray(&args.image)?;
    let (h, w) = image.spatial();
    let phi0 = args.initial(h, w)?;
    let l1 = Grid2D::full(&[h, w], args.lambda1);
    let l2 = Grid2D::full(&[h, w], args.lambda2);
    let phi = evolve_eval(&phi0, &image, &l1, &l2, &acm, !args.full_grid)?;
    let mask = Mask::from_fn(h, w, |i, j| phi.at2(i, j) > 0.0);
    write_mask_png(&mask, &args.out)?;
    if let Some(p) = &args.phi_out {
        write_raw(&phi, p)?;
    }
    if let Some(p) = &args.phi0_out {
        write_raw(&phi0, p)?;
    }
    println!("{} foreground pixels after {} steps", mask.count(), acm.iterations);
    Ok(())
}
