use std::fmt::Write as _;
use std::path::PathBuf;

use contour_core::data::io::{rasters, read_labels, read_mask};
use contour_core::metrics::{evaluate_instances, MetricsReport, DEFAULT_BOUNDARY_TOLERANCE};
use contour_core::{metrics, Error};

use crate::{CliError, CliResult};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Predicted masks (a folder, or one with masks/).
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth masks (a folder, or a dataset with masks/ and instances/).
    #[arg(long)]
    pub gt: PathBuf,
    /// Receives metrics.csv and metrics.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Boundary matching distance in pixels.
    #[arg(long, default_value_t = DEFAULT_BOUNDARY_TOLERANCE)]
    pub tolerance: f64,
}

pub const CSV_HEADER: &str = "id,dice,iou,wcov,boundf,rmse,gt_instances,pred_instances";

pub fn run(args: Args) -> CliResult<()> {
    if !(args.tolerance >= 0.0) {
        return Err(CliError::config("--tolerance must be >= 0"));
    }
    let gt = rasters(&super::mask_dir(&args.gt))?;
    let pred = rasters(&super::mask_dir(&args.pred))?;
    let inst_dir = args.gt.join("instances");
    if let Some(id) = gt.keys().find(|k| !pred.contains_key(*k)) {
        return Err(CliError::io(format!("{}: no prediction for `{id}`", args.pred.display())));
    }
    if let Some(id) = pred.keys().find(|k| !gt.contains_key(*k)) {
        return Err(CliError::io(format!("{}: no ground truth for `{id}`", args.gt.display())));
    }
    let mut per_image = Vec::with_capacity(gt.len());
    for (id, gpath) in &gt {
        let g = read_mask(gpath)?;
        let p = read_mask(&pred[id])?;
        if (g.height(), g.width()) != (p.height(), p.width()) {
            return Err(Error::Data {
                path: pred[id].clone(),
                reason: format!("prediction is {}x{}, ground truth {}x{}", p.height(), p.width(), g.height(), g.width()),
            }
            .into());
        }
        let labels = match rasters(&inst_dir).ok().and_then(|m| m.get(id).cloned()) {
            Some(path) => read_labels(&path)?,
            None => metrics::connected_components(&g, metrics::Connectivity::Eight),
        };
        per_image.push(evaluate_instances(id, &g, &labels, &p, args.tolerance)?);
    }
    let report = MetricsReport::from_images(per_image, args.tolerance);

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for m in &report.per_image {
        writeln!(csv, "{},{},{},{},{},{},{},{}", m.id, m.dice, m.iou, m.wcov, m.boundf, m.rmse, m.gt_instances, m.pred_instances)
            .expect("string write");
    }
    super::write_file(&args.out.join("metrics.csv"), csv)?;
    super::write_file(&args.out.join("metrics.json"), serde_json::to_string_pretty(&report).expect("report serializes"))?;
    println!(
        "{} images  dice {:.4}  miou {:.4}  wcov {:.4}  boundf {:.4}  rmse {:.4}",
        report.per_image.len(),
        report.mean_dice,
        report.miou,
        report.mean_wcov,
        report.mean_boundf,
        report.mean_rmse
    );
    Ok(())
}
