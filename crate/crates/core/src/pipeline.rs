//! The end-to-end RMBP filter: build the match graph, run belief
//! propagation, threshold the marginals.

use serde::{Deserialize, Serialize};

use crate::geometry::{NeighborIndex, PointCloud};
use crate::inference::{partition_indices, run_lbp, ConvergenceReport, LbpOptions, Marginals};
use crate::matchgraph::{build_graph, GraphConfig, MatchGraph};
use crate::matching::Correspondence;
use crate::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub graph: GraphConfig,
    pub lbp: LbpOptions,
    pub threshold: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            graph: GraphConfig::default(),
            lbp: LbpOptions::default(),
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        self.graph.validate()?;
        self.lbp.validate()?;
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub graph: MatchGraph,
    pub marginals: Marginals,
    pub report: ConvergenceReport,
    /// Positions into the input match list, ascending.
    pub kept: Vec<usize>,
    pub rejected: Vec<usize>,
}

impl FilterOutcome {
    pub fn kept_matches(&self, matches: &[Correspondence]) -> Vec<Correspondence> {
        self.kept.iter().map(|&i| matches[i]).collect()
    }
}

/// Runs the filter with neighbour indices built on the fly.
pub fn rmbp_filter(
    cloud_p: &PointCloud,
    cloud_q: &PointCloud,
    matches: &[Correspondence],
    config: &FilterConfig,
) -> Result<FilterOutcome> {
    let idx_p = NeighborIndex::build(cloud_p)?;
    let idx_q = NeighborIndex::build(cloud_q)?;
    rmbp_filter_indexed(&idx_p, &idx_q, matches, config)
}

pub fn rmbp_filter_indexed(
    idx_p: &NeighborIndex,
    idx_q: &NeighborIndex,
    matches: &[Correspondence],
    config: &FilterConfig,
) -> Result<FilterOutcome> {
    config.validate()?;
    let graph = build_graph(matches, idx_p, idx_q, &config.graph)?;
    let (marginals, report) = run_lbp(&graph, &config.lbp)?;
    if !report.converged {
        log::warn!(
            "belief propagation stopped after {} rounds with delta {:.3e}",
            report.iterations,
            report.final_delta
        );
    }
    let (kept, rejected) = partition_indices(&marginals, config.threshold)?;
    Ok(FilterOutcome {
        graph,
        marginals,
        report,
        kept,
        rejected,
    })
}
