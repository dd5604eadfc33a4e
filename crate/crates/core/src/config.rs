//! Pipeline parameters as a flat TOML document.
//!
//! ```toml
//! k = 10
//! l = 50
//! lambda_safety = 0.95
//! threshold = 0.5
//! prior = "distance"
//! prior_scale = 0.3
//! ransac_iterations = 1000
//! ransac_threshold = 0.05
//! seed = 7
//! ```
//!
//! Missing keys take their defaults; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::inference::LbpOptions;
use crate::matchgraph::{GraphConfig, DEFAULT_K, DEFAULT_L, DEFAULT_LAMBDA_SAFETY};
use crate::matching::PriorMode;
use crate::pipeline::{FilterConfig, DEFAULT_THRESHOLD};
use crate::registration::RansacConfig;
use crate::{Error, Result};

/// Seed used whenever none is given.
pub const DEFAULT_SEED: u64 = 0x5EED;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    #[default]
    Uniform,
    Distance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub k: usize,
    pub l: usize,
    pub lambda_safety: f64,
    pub lbp_tol: f64,
    pub lbp_max_iters: usize,
    pub damping: f64,
    pub threshold: f64,
    pub prior: PriorKind,
    pub prior_scale: f64,
    pub ransac_iterations: usize,
    pub ransac_threshold: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let lbp = LbpOptions::default();
        let ransac = RansacConfig::default();
        Self {
            k: DEFAULT_K,
            l: DEFAULT_L,
            lambda_safety: DEFAULT_LAMBDA_SAFETY,
            lbp_tol: lbp.tol,
            lbp_max_iters: lbp.max_iters,
            damping: lbp.damping,
            threshold: DEFAULT_THRESHOLD,
            prior: PriorKind::Uniform,
            prior_scale: 1.0,
            ransac_iterations: ransac.iterations,
            ransac_threshold: ransac.inlier_threshold,
            seed: DEFAULT_SEED,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| toml_error("config", text, &e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::FileIo {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.filter_config().validate()?;
        self.ransac_config().validate()
    }

    pub fn prior_mode(&self) -> PriorMode {
        match self.prior {
            PriorKind::Uniform => PriorMode::Uniform,
            PriorKind::Distance => PriorMode::Distance { scale: self.prior_scale },
        }
    }

    pub fn filter_config(&self) -> FilterConfig {
        FilterConfig {
            graph: GraphConfig {
                k: self.k,
                l: self.l,
                lambda_safety: self.lambda_safety,
                prior: self.prior_mode(),
            },
            lbp: LbpOptions {
                max_iters: self.lbp_max_iters,
                tol: self.lbp_tol,
                damping: self.damping,
            },
            threshold: self.threshold,
        }
    }

    pub fn ransac_config(&self) -> RansacConfig {
        RansacConfig {
            iterations: self.ransac_iterations,
            inlier_threshold: self.ransac_threshold,
            seed: self.seed,
        }
    }
}

pub(crate) fn toml_error(context: &str, text: &str, e: &toml::de::Error) -> Error {
    let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
    Error::parse(context, line, e.message())
}
