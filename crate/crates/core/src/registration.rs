//! Rigid registration from correspondences and the evaluation metrics of
//! the outlier-rejection benchmark.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{Point3, PointCloud, RigidTransform};
use crate::matching::Correspondence;
use crate::{Error, Result};

/// Minimal sample size for a rigid 3D fit.
pub const SAMPLE_SIZE: usize = 3;

/// Relative eigenvalue floor below which a point set counts as collinear.
const COLLINEAR_TOL: f64 = 1e-12;

fn centroid(points: impl Iterator<Item = Vector3<f64>>) -> (Vector3<f64>, usize) {
    let mut sum = Vector3::zeros();
    let mut n = 0;
    for p in points {
        sum += p;
        n += 1;
    }
    (sum / n.max(1) as f64, n)
}

fn check_spread(scatter: &Matrix3<f64>, side: &str) -> Result<()> {
    let mut ev: Vec<f64> = SymmetricEigen::new(*scatter).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) {
        return Err(Error::Degenerate(format!("{side} points coincide")));
    }
    if ev[1] <= COLLINEAR_TOL * ev[0] {
        return Err(Error::Degenerate(format!("{side} points are collinear")));
    }
    Ok(())
}

/// Least-squares rigid fit minimising `Σ ‖R·p + t − q‖²` over `(p, q)`
/// pairs. Reflections are corrected by flipping the smallest singular
/// direction.
pub fn kabsch(pairs: &[(Point3, Point3)]) -> Result<RigidTransform> {
    if pairs.len() < SAMPLE_SIZE {
        return Err(Error::Degenerate(format!(
            "need at least {SAMPLE_SIZE} pairs, got {}",
            pairs.len()
        )));
    }
    let (cp, n) = centroid(pairs.iter().map(|(p, _)| p.to_vector()));
    let (cq, _) = centroid(pairs.iter().map(|(_, q)| q.to_vector()));
    let mut h = Matrix3::zeros();
    let mut sp = Matrix3::zeros();
    let mut sq = Matrix3::zeros();
    for (p, q) in pairs {
        let a = p.to_vector() - cp;
        let b = q.to_vector() - cq;
        h += a * b.transpose();
        sp += a * a.transpose();
        sq += b * b.transpose();
    }
    check_spread(&sp, "source")?;
    check_spread(&sq, "target")?;
    let _ = n;

    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Degenerate("svd did not converge".into())),
    };
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rotation = v * correction * u.transpose();
    let translation = cq - rotation * cp;
    RigidTransform::new(rotation, translation).map_err(|e| Error::Degenerate(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    pub iterations: usize,
    pub inlier_threshold: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            inlier_threshold: 0.05,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("ransac iterations must be at least 1".into()));
        }
        if !(self.inlier_threshold > 0.0 && self.inlier_threshold.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "ransac threshold must be positive, got {}",
                self.inlier_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub transform: RigidTransform,
    /// Positions (into the input match list) of the best hypothesis' consensus.
    pub consensus: Vec<usize>,
    /// False when no hypothesis gathered any support; `transform` is then
    /// the identity.
    pub found: bool,
    pub best_iteration: Option<usize>,
}

fn resolve_pairs(matches: &[Correspondence], p: &PointCloud, q: &PointCloud) -> Result<Vec<(Point3, Point3)>> {
    matches.iter().map(|c| Ok((p.get(c.p)?, q.get(c.q)?))).collect()
}

fn consensus_of(t: &RigidTransform, pairs: &[(Point3, Point3)], threshold: f64) -> Vec<usize> {
    pairs
        .iter()
        .enumerate()
        .filter(|(_, (p, q))| (t.transform_vector(&p.to_vector()) - q.to_vector()).norm() < threshold)
        .map(|(i, _)| i)
        .collect()
}

fn hypothesis(pairs: &[(Point3, Point3)], seed: u64, iteration: usize) -> Option<RigidTransform> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    let sample = rand::seq::index::sample(&mut rng, pairs.len(), SAMPLE_SIZE);
    let minimal: Vec<(Point3, Point3)> = sample.iter().map(|i| pairs[i]).collect();
    kabsch(&minimal).ok()
}

/// Vanilla RANSAC over minimal 3-samples followed by a Kabsch refit on the
/// best consensus. Iteration `i` draws from ChaCha stream `i` of `seed`, so
/// results do not depend on scheduling; ties go to the lower iteration.
pub fn ransac_register(
    matches: &[Correspondence],
    cloud_p: &PointCloud,
    cloud_q: &PointCloud,
    config: &RansacConfig,
) -> Result<RansacResult> {
    config.validate()?;
    if matches.len() < SAMPLE_SIZE {
        return Err(Error::Degenerate(format!(
            "ransac needs at least {SAMPLE_SIZE} matches, got {}",
            matches.len()
        )));
    }
    let pairs = resolve_pairs(matches, cloud_p, cloud_q)?;
    let threshold = config.inlier_threshold;

    let best = (0..config.iterations)
        .into_par_iter()
        .map(|it| {
            let support = hypothesis(&pairs, config.seed, it)
                .map(|t| consensus_of(&t, &pairs, threshold).len())
                .unwrap_or(0);
            (support, it)
        })
        .reduce(
            || (0, usize::MAX),
            |a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a },
        );

    if best.0 == 0 {
        return Ok(RansacResult {
            transform: RigidTransform::identity(),
            consensus: Vec::new(),
            found: false,
            best_iteration: None,
        });
    }
    let model = hypothesis(&pairs, config.seed, best.1).expect("best hypothesis was fitted");
    let consensus = consensus_of(&model, &pairs, threshold);
    let refit: Vec<(Point3, Point3)> = consensus.iter().map(|&i| pairs[i]).collect();
    let transform = kabsch(&refit).unwrap_or(model);
    Ok(RansacResult {
        transform,
        consensus,
        found: true,
        best_iteration: Some(best.1),
    })
}

/// Least-squares fit over every match, no outlier handling.
pub fn kabsch_register(matches: &[Correspondence], cloud_p: &PointCloud, cloud_q: &PointCloud) -> Result<RigidTransform> {
    kabsch(&resolve_pairs(matches, cloud_p, cloud_q)?)
}

/// Ground-truth inlier flag per match.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchLabels(pub Vec<bool>);

impl MatchLabels {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn inliers(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

/// An exact count ratio; undefined when the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRatio {
    pub num: usize,
    pub den: usize,
}

impl CountRatio {
    pub fn value(&self) -> Option<f64> {
        (self.den > 0).then(|| self.num as f64 / self.den as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MetricCounts {
    pub matches: usize,
    pub inliers: usize,
    pub outliers: usize,
    pub kept: usize,
    pub kept_inliers: usize,
    pub rejected: usize,
    pub true_rejections: usize,
}

/// Outlier-rejection precision/recall (OP, OR) and inlier-selection
/// precision/recall (IP, IR). `None` means the denominator was zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchMetrics {
    pub counts: MetricCounts,
    pub op: Option<f64>,
    pub or: Option<f64>,
    pub ip: Option<f64>,
    pub ir: Option<f64>,
}

impl MatchMetrics {
    pub fn op_ratio(&self) -> CountRatio {
        CountRatio { num: self.counts.true_rejections, den: self.counts.rejected }
    }

    pub fn or_ratio(&self) -> CountRatio {
        CountRatio { num: self.counts.true_rejections, den: self.counts.outliers }
    }

    pub fn ip_ratio(&self) -> CountRatio {
        CountRatio { num: self.counts.kept_inliers, den: self.counts.kept }
    }

    pub fn ir_ratio(&self) -> CountRatio {
        CountRatio { num: self.counts.kept_inliers, den: self.counts.inliers }
    }
}

/// OP = true rejections / rejections, OR = true rejections / outliers,
/// IP = kept inliers / kept, IR = kept inliers / inliers.
pub fn match_metrics(kept: &[usize], labels: &MatchLabels) -> Result<MatchMetrics> {
    let n = labels.len();
    let mut mask = vec![false; n];
    for &k in kept {
        if k >= n {
            return Err(Error::IndexOutOfRange { index: k, len: n });
        }
        mask[k] = true;
    }
    let mut c = MetricCounts {
        matches: n,
        ..Default::default()
    };
    for (&is_inlier, &is_kept) in labels.0.iter().zip(&mask) {
        match (is_inlier, is_kept) {
            (true, true) => {
                c.inliers += 1;
                c.kept += 1;
                c.kept_inliers += 1;
            }
            (true, false) => {
                c.inliers += 1;
                c.rejected += 1;
            }
            (false, true) => {
                c.outliers += 1;
                c.kept += 1;
            }
            (false, false) => {
                c.outliers += 1;
                c.rejected += 1;
                c.true_rejections += 1;
            }
        }
    }
    let mut m = MatchMetrics {
        counts: c,
        op: None,
        or: None,
        ip: None,
        ir: None,
    };
    m.op = m.op_ratio().value();
    m.or = m.or_ratio().value();
    m.ip = m.ip_ratio().value();
    m.ir = m.ir_ratio().value();
    Ok(m)
}

/// Median over the cloud of `‖t_est(p) − t_gt(p)‖`; the mean of the two
/// middle values for even sizes.
pub fn median_point_distance(t_est: &RigidTransform, t_gt: &RigidTransform, cloud: &PointCloud) -> Result<f64> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut d: Vec<f64> = cloud
        .points()
        .iter()
        .map(|p| t_est.apply_point(p).distance(&t_gt.apply_point(p)))
        .collect();
    Ok(median(&mut d).expect("nonempty"))
}

pub(crate) fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}
