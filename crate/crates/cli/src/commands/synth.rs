use std::path::PathBuf;

use contour_core::data::{synth_generate, write_dataset, ShapeFamily, Split, SynthSpec};

use crate::{CliError, CliResult};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Output dataset folder.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 250)]
    pub images: usize,
    /// Images reserved for the test split (default: a fifth).
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 1)]
    pub min_instances: usize,
    #[arg(long, default_value_t = 4)]
    pub max_instances: usize,
    /// disks, rectangles, unions or mixed.
    #[arg(long, default_value = "disks")]
    pub shapes: ShapeFamily,
    #[arg(long, default_value_t = 5.0)]
    pub min_radius: f64,
    #[arg(long, default_value_t = 11.0)]
    pub max_radius: f64,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    /// Disable the illumination ramp.
    #[arg(long)]
    pub no_gradient: bool,
    #[arg(long, default_value_t = 0.5)]
    pub gradient_strength: f64,
    /// Minimum background gap between instances, in pixels.
    #[arg(long, default_value_t = 2)]
    pub gap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl Args {
    pub fn spec(&self) -> SynthSpec {
        SynthSpec {
            images: self.images,
            size: self.size,
            min_instances: self.min_instances,
            max_instances: self.max_instances,
            shapes: self.shapes,
            min_radius: self.min_radius,
            max_radius: self.max_radius,
            noise_sigma: self.noise,
            gradient: !self.no_gradient,
            gradient_strength: self.gradient_strength,
            gap: self.gap,
            seed: self.seed,
            ..SynthSpec::default()
        }
    }
}

/// The last `test` samples form the test split.
pub fn run(args: Args) -> CliResult<()> {
    let spec = args.spec();
    let test = args.test.unwrap_or(args.images / 5);
    if test > args.images {
        return Err(CliError::config(format!("--test {test} exceeds --images {}", args.images)));
    }
    let samples = synth_generate(&spec)?;
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let cut = ids.len() - test;
    let split = Split { train: ids[..cut].to_vec(), test: ids[cut..].to_vec() };
    write_dataset(&samples, &args.out, Some(&split))?;
    let text = toml::to_string(&spec).expect("spec serializes");
    super::write_file(&args.out.join("synth.toml"), text)?;
    println!("wrote {} images ({} train, {} test) to {}", ids.len(), cut, test, args.out.display());
    Ok(())
}
