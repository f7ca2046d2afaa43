use std::path::{Path, PathBuf};

use contour_core::backbone::{checkpoint_paths, LambdaMode};
use contour_core::data::{load_folder, load_split, split_fractions, Sample};
use contour_core::training::{train, Precision, TrainOptions};

use crate::config::RunConfig;
use crate::{CliError, CliResult};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Dataset folder with images/, masks/ and optionally split.json.
    #[arg(long)]
    pub data: PathBuf,
    /// Receives run.jsonl, config.toml and checkpoints/.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// maps or const-lambda.
    #[arg(long)]
    pub ablation: Option<LambdaMode>,
    #[arg(long)]
    pub acm_steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// f32 or f64.
    #[arg(long)]
    pub precision: Option<Precision>,
    /// Omit wall-clock times so that reruns are bitwise identical.
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Suppress per-epoch progress lines.
    #[arg(long)]
    pub quiet: bool,
}

impl Args {
    /// File values with flag overrides applied.
    pub fn run_config(&self) -> CliResult<RunConfig> {
        let mut c = RunConfig::load_or_default(self.config.as_deref())?;
        if let Some(m) = self.ablation {
            c.backbone.lambda_mode = m;
        }
        if let Some(n) = self.acm_steps {
            c.train.acm_steps = n;
        }
        if let Some(s) = self.seed {
            c.train.seed = s;
        }
        if let Some(p) = self.precision {
            c.train.precision = p;
        }
        if self.deterministic {
            c.train.deterministic = true;
        }
        if let Some(e) = self.epochs {
            c.train.epochs = e;
        }
        if let Some(lr) = self.lr {
            c.train.learning_rate = lr;
        }
        if let Some(b) = self.batch_size {
            c.train.batch_size = b;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Train and test samples: `split.json` if present, else a seeded
/// shuffle with the configured train fraction.
pub fn load_partitions(data: &Path, cfg: &RunConfig) -> CliResult<(Vec<Sample>, Vec<Sample>)> {
    let samples = load_folder(data)?;
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let split = match load_split(data)? {
        Some(s) => s,
        None => split_fractions(&ids, cfg.train.train_fraction, cfg.train.seed)?,
    };
    let (tr, te) = split.indices(&ids)?;
    Ok((tr.iter().map(|&i| samples[i].clone()).collect(), te.iter().map(|&i| samples[i].clone()).collect()))
}

pub fn run(args: Args) -> CliResult<()> {
    let cfg = args.run_config()?;
    let (train_set, test_set) = load_partitions(&args.data, &cfg)?;
    super::create_dir(&args.out)?;
    super::write_file(&args.out.join("config.toml"), cfg.to_toml())?;
    let opts = TrainOptions {
        out_dir: Some(args.out.clone()),
        data_echo: serde_json::json!({
            "path": args.data.display().to_string(),
            "train": train_set.len(),
            "test": test_set.len(),
        }),
        progress: !args.quiet,
    };
    let result = match cfg.train.precision {
        Precision::F32 => {
            train::<f32>(&train_set, &test_set, &cfg.backbone, &cfg.acm, &cfg.train, &opts).map(|o| (o.best_epoch, o.best_dice))
        }
        Precision::F64 => {
            train::<f64>(&train_set, &test_set, &cfg.backbone, &cfg.acm, &cfg.train, &opts).map(|o| (o.best_epoch, o.best_dice))
        }
    };
    match result {
        Ok((epoch, dice)) => {
            match (epoch, dice) {
                (Some(e), Some(d)) => println!("best held-out dice {d:.4} at epoch {e}"),
                _ => println!("training finished"),
            }
            Ok(())
        }
        Err(e) if e.is_numerical() => {
            let dir = args.out.join("checkpoints");
            let last_good = ["last", "initial"].into_iter().map(|n| dir.join(n)).find(|p| checkpoint_paths(p).1.exists());
            let hint = match last_good {
                Some(p) => format!("; last good checkpoint: {}", p.display()),
                None => String::new(),
            };
            Err(CliError::numerical(format!("{e}{hint}")))
        }
        Err(e) => Err(e.into()),
    }
}
