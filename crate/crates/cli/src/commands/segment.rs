use std::path::{Path, PathBuf};

use contour_core::backbone::{load_checkpoint, read_manifest, Backbone, WeightStore};
use contour_core::data::io::{rasters, read_gray};
use contour_core::data::{write_gray_png, write_mask_png};
use contour_core::training::{infer, Inference};
use contour_core::Real;

use super::{normalize, write_raw};
use crate::config::RunConfig;
use crate::{CliError, CliResult};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Checkpoint path, or a training output folder (uses its best checkpoint).
    #[arg(long)]
    pub weights: PathBuf,
    /// Folder of images, or a dataset folder with images/.
    #[arg(long)]
    pub input: PathBuf,
    /// Receives masks/, maps/ (viewable PNGs) and raw/ (little-endian f64).
    #[arg(long)]
    pub out: PathBuf,
    /// Evolution steps (default: from the checkpoint config).
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Update every pixel instead of the narrow band.
    #[arg(long)]
    pub full_grid: bool,
}

/// Network, weights and run configuration restored from a checkpoint.
pub struct Model<T> {
    pub net: Backbone,
    pub store: WeightStore<T>,
    pub config: RunConfig,
}

/// Stored dtype of a checkpoint.
pub fn checkpoint_dtype(path: &Path) -> CliResult<String> {
    Ok(read_manifest(path)?.dtype)
}

pub fn load_model<T: Real>(path: &Path) -> CliResult<Model<T>> {
    let manifest = read_manifest(path)?;
    let mut echo = manifest.config.clone();
    if let Some(obj) = echo.as_object_mut() {
        obj.remove("data");
    }
    let config: RunConfig = serde_json::from_value(echo)
        .map_err(|e| CliError::io(format!("{}: checkpoint config: {e}", path.display())))?;
    let net = Backbone::new(config.backbone.clone())?;
    let (store, _) = load_checkpoint::<T>(path, &net.layout())?;
    Ok(Model { net, store, config })
}

fn segment_all<T: Real>(args: &Args, ckpt: &Path) -> CliResult<usize> {
    let mut model = load_model::<T>(ckpt)?;
    let mut acm = model.config.acm.clone();
    if let Some(n) = args.iterations {
        acm.iterations = n;
    }
    acm.validate()?;
    let inputs = rasters(&super::image_dir(&args.input))?;
    if inputs.is_empty() {
        return Err(CliError::io(format!("{}: no png/pgm images", args.input.display())));
    }
    for (id, path) in &inputs {
        let image = read_gray(path)?;
        let out = infer(&model.net, &mut model.store, &image, &acm, !args.full_grid)?;
        write_outputs(&args.out, id, &out)?;
    }
    Ok(inputs.len())
}

/// Mask PNG, min-max scaled PNG panels and raw dumps of every map.
pub fn write_outputs(out: &Path, id: &str, r: &Inference) -> CliResult<()> {
    write_mask_png(&r.mask, &out.join("masks").join(format!("{id}.png")))?;
    for (name, grid) in [("phi0", &r.phi0), ("lambda1", &r.lambda1), ("lambda2", &r.lambda2), ("phin", &r.phi_n)] {
        write_gray_png(&normalize(grid), &out.join("maps").join(format!("{id}_{name}.png")))?;
        write_raw(grid, &out.join("raw").join(format!("{id}_{name}.bin")))?;
    }
    Ok(())
}

pub fn run(args: Args) -> CliResult<()> {
    let ckpt = super::resolve_checkpoint(&args.weights);
    let n = match checkpoint_dtype(&ckpt)?.as_str() {
        "f32" => segment_all::<f32>(&args, &ckpt)?,
        "f64" => segment_all::<f64>(&args, &ckpt)?,
        other => return Err(CliError::io(format!("{}: unsupported dtype {other}", ckpt.display()))),
    };
    println!("segmented {n} images into {}", args.out.display());
    Ok(())
}
