//! Putative correspondences from descriptor similarity, and the per-match
//! observation messages fed to the graphical model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptors::{squared_distance, DescriptorSet};
use crate::{Error, Result};

/// A putative match between point `p` of cloud P and point `q` of cloud Q.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub p: usize,
    pub q: usize,
    pub descriptor_distance: f64,
}

impl Correspondence {
    pub fn new(p: usize, q: usize, descriptor_distance: f64) -> Self {
        Self {
            p,
            q,
            descriptor_distance,
        }
    }
}

/// Likelihood of a match being an outlier (first) or inlier (second)
/// given its own evidence alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationMessage {
    pub outlier: f64,
    pub inlier: f64,
}

impl ObservationMessage {
    pub const UNIFORM: Self = Self {
        outlier: 0.5,
        inlier: 0.5,
    };

    /// Builds a message from an inlier likelihood in `[0, 1]`.
    pub fn from_inlier(inlier: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&inlier) {
            return Err(Error::InvalidParameter(format!("inlier likelihood {inlier} outside [0, 1]")));
        }
        Ok(Self {
            outlier: 1.0 - inlier,
            inlier,
        })
    }
}

impl Default for ObservationMessage {
    fn default() -> Self {
        Self::UNIFORM
    }
}

/// How observation messages are derived from descriptor distances.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum PriorMode {
    /// Every match starts at (0.5, 0.5).
    #[default]
    Uniform,
    /// Gaussian kernel on descriptor distance, see [`observation_from_distance`].
    Distance { scale: f64 },
}

/// Half-width of the band observation likelihoods are confined to.
pub const PRIOR_BAND: f64 = 0.25;

/// Maps a descriptor distance to an observation message.
///
/// `g = exp(−d² / (2·scale²))` is rescaled into `[0.5 − β, 0.5 + β]` with
/// β = [`PRIOR_BAND`]; the result is monotone decreasing in distance.
pub fn observation_from_distance(c: &Correspondence, scale: f64) -> Result<ObservationMessage> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidParameter(format!("prior scale must be positive, got {scale}")));
    }
    let d = c.descriptor_distance;
    let g = (-(d * d) / (2.0 * scale * scale)).exp();
    let inlier = 0.5 - PRIOR_BAND + 2.0 * PRIOR_BAND * g;
    Ok(ObservationMessage {
        outlier: 1.0 - inlier,
        inlier,
    })
}

pub fn observation(c: &Correspondence, prior: PriorMode) -> Result<ObservationMessage> {
    match prior {
        PriorMode::Uniform => Ok(ObservationMessage::UNIFORM),
        PriorMode::Distance { scale } => observation_from_distance(c, scale),
    }
}

fn check_dims(a: &DescriptorSet, b: &DescriptorSet) -> Result<()> {
    if !a.is_empty() && !b.is_empty() && a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}

/// Row of `to` nearest to `query`, ties to the lower keypoint index.
fn nearest(query: &[f64], to: &DescriptorSet) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (row, d) in to.descriptors().iter().enumerate() {
        let d2 = squared_distance(query, d.values());
        let better = match best {
            None => true,
            Some((brow, bd2)) => d2 < bd2 || (d2 == bd2 && to.indices()[row] < to.indices()[brow]),
        };
        if better {
            best = Some((row, d2));
        }
    }
    best
}

fn sort_matches(m: &mut [Correspondence]) {
    m.sort_by(|a, b| (a.p, a.q).cmp(&(b.p, b.q)));
}

/// Pairs whose descriptors are each other's nearest neighbour (Euclidean).
pub fn mutual_best_match(a: &DescriptorSet, b: &DescriptorSet) -> Result<Vec<Correspondence>> {
    check_dims(a, b)?;
    if a.is_empty() || b.is_empty() {
        return Ok(Vec::new());
    }
    let a_to_b: Vec<(usize, f64)> = a
        .descriptors()
        .par_iter()
        .map(|d| nearest(d.values(), b).expect("b is nonempty"))
        .collect();
    let b_to_a: Vec<usize> = b
        .descriptors()
        .par_iter()
        .map(|d| nearest(d.values(), a).expect("a is nonempty").0)
        .collect();
    let mut out: Vec<Correspondence> = a_to_b
        .iter()
        .enumerate()
        .filter(|&(ra, &(rb, _))| b_to_a[rb] == ra)
        .map(|(ra, &(rb, d2))| Correspondence::new(a.indices()[ra], b.indices()[rb], d2.sqrt()))
        .collect();
    sort_matches(&mut out);
    Ok(out)
}

/// Lowe-style ratio test: keeps `a → b₁` when `d(a, b₁) < ratio · d(a, b₂)`.
pub fn ratio_test_match(a: &DescriptorSet, b: &DescriptorSet, ratio: f64) -> Result<Vec<Correspondence>> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidParameter(format!("ratio must lie in (0, 1), got {ratio}")));
    }
    if b.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "ratio test needs at least 2 candidates, got {}",
            b.len()
        )));
    }
    check_dims(a, b)?;
    let key = |row: usize, d2: f64| (d2, b.indices()[row]);
    let mut out: Vec<Correspondence> = a
        .descriptors()
        .par_iter()
        .enumerate()
        .filter_map(|(ra, da)| {
            let mut first: Option<(f64, usize, usize)> = None;
            let mut second: Option<(f64, usize, usize)> = None;
            for (rb, db) in b.descriptors().iter().enumerate() {
                let (d2, idx) = key(rb, squared_distance(da.values(), db.values()));
                let cand = (d2, idx, rb);
                let lt = |x: &(f64, usize, usize), y: &Option<(f64, usize, usize)>| match y {
                    None => true,
                    Some(y) => x.0 < y.0 || (x.0 == y.0 && x.1 < y.1),
                };
                if lt(&cand, &first) {
                    second = first;
                    first = Some(cand);
                } else if lt(&cand, &second) {
                    second = Some(cand);
                }
            }
            let (f, s) = (first?, second?);
            let (d1, d2) = (f.0.sqrt(), s.0.sqrt());
            (d1 < ratio * d2).then(|| Correspondence::new(a.indices()[ra], b.indices()[f.2], d1))
        })
        .collect();
    sort_matches(&mut out);
    Ok(out)
}
