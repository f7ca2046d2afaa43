//! TOML run configuration.
//!
//! ```toml
//! [backbone]
//! base_channels = 8
//! lambda_mode = "maps"       # or "const-lambda"
//!
//! [acm]
//! mu = 0.2
//! radius = 5
//!
//! [train]
//! epochs = 30
//! precision = "f32"
//! ```
//!
//! Every section and key is optional; unknown keys are rejected.
//! Command-line flags override file values.

use std::path::Path;

use contour_core::acm::AcmConfig;
use contour_core::backbone::BackboneConfig;
use contour_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backbone: BackboneConfig,
    pub acm: AcmConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::config(format!("invalid config: {}", e.message())))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message)))
    }

    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.backbone.validate()?;
        self.acm.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
