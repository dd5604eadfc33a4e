//! Synthetic outlier-ratio sweep: a fixed number of inlier matches, an
//! increasing number of outlier matches, and per-method filtering and
//! registration scores.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::geometry::{Point3, PointCloud, RigidTransform};
use crate::matching::Correspondence;
use crate::pipeline::rmbp_filter;
use crate::registration::{
    kabsch_register, match_metrics, median, median_point_distance, ransac_register, MatchLabels, MatchMetrics,
};
use crate::{io, Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Residual bound, in noise standard deviations, separating inliers from
/// outliers.
pub const RESIDUAL_SIGMAS: f64 = 4.0;

/// Registration succeeds when the median point distance is below this
/// many noise standard deviations.
pub const SUCCESS_SIGMAS: f64 = 10.0;

/// Rank threshold used by the sweep. Scenes hold `inlier_count / clusters`
/// inliers per cluster (5 by default), and the compatible vote only
/// outweighs the incompatible one when `k − 1` barely exceeds that.
pub const BENCH_K: usize = 6;

pub const CSV_HEADER: &str = "ratio,method,OP,OR,IP,IR,median_dist,mean_runtime_ms,n_seeds,success_rate,schema_version";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformMagnitude {
    /// Radians.
    pub max_angle: f64,
    pub max_translation: f64,
}

impl Default for TransformMagnitude {
    fn default() -> Self {
        Self {
            max_angle: std::f64::consts::PI,
            max_translation: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Minimum cloud size; points beyond those used by matches are
    /// unmatched clutter.
    pub num_points: usize,
    pub inlier_count: usize,
    /// Outliers per inlier.
    pub outlier_ratios: Vec<f64>,
    pub noise_sigma: f64,
    pub transform_magnitude: TransformMagnitude,
    pub seed: u64,
    pub clusters: usize,
    pub cluster_sigma: f64,
    /// Draw inlier points uniformly instead of from the cluster mixture.
    pub uniform: bool,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            num_points: 0,
            inlier_count: 100,
            outlier_ratios: vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0],
            noise_sigma: 0.005,
            transform_magnitude: TransformMagnitude::default(),
            seed: 0,
            clusters: 20,
            cluster_sigma: 0.01,
            uniform: false,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.inlier_count < 3 {
            return bad(format!("inlier_count must be at least 3, got {}", self.inlier_count));
        }
        if let Some(r) = self.outlier_ratios.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            return bad(format!("outlier ratios must be positive, got {r}"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be non-negative, got {}", self.noise_sigma));
        }
        if !self.uniform && (self.clusters == 0 || !(self.cluster_sigma > 0.0)) {
            return bad("cluster mixture needs clusters ≥ 1 and cluster_sigma > 0".into());
        }
        let m = &self.transform_magnitude;
        if !(m.max_angle >= 0.0 && m.max_angle <= std::f64::consts::PI && m.max_translation >= 0.0) {
            return bad("transform magnitude out of range".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub cloud_p: PointCloud,
    pub cloud_q: PointCloud,
    pub gt_transform: RigidTransform,
    pub matches: Vec<Correspondence>,
    pub labels: MatchLabels,
}

impl SyntheticScene {
    pub fn inlier_fraction(&self) -> f64 {
        self.labels.inliers() as f64 / self.labels.len().max(1) as f64
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream(base: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(id);
    rng
}

fn unit_cube(rng: &mut impl Rng) -> Vector3<f64> {
    Vector3::new(rng.random(), rng.random(), rng.random())
}

fn gaussian3(rng: &mut impl Rng) -> Vector3<f64> {
    Vector3::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    )
}

/// Gaussian noise conditioned on `‖n‖ ≤ 4σ`.
fn bounded_noise(rng: &mut impl Rng, sigma: f64) -> Vector3<f64> {
    if sigma == 0.0 {
        return Vector3::zeros();
    }
    loop {
        let n = gaussian3(rng) * sigma;
        if n.norm() <= RESIDUAL_SIGMAS * sigma {
            return n;
        }
    }
}

fn random_transform(rng: &mut impl Rng, m: &TransformMagnitude) -> RigidTransform {
    let axis = loop {
        let a = gaussian3(rng);
        if a.norm() > 1e-9 {
            break a;
        }
    };
    let angle = rng.random::<f64>() * m.max_angle;
    let t = loop {
        let t = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if t.norm() <= 1.0 {
            break t * m.max_translation;
        }
    };
    RigidTransform::from_axis_angle(&axis, angle, t)
}

/// Builds one scene. Inlier points come from a Gaussian cluster mixture in
/// the unit cube, outlier and clutter points are uniform in the cube, and
/// `Q = gt(P) + noise`. Inlier `i` pairs `P[i]` with `Q[i]`; each outlier
/// pairs a distinct outlier point of `P` with a distinct non-corresponding
/// point of `Q` whose residual exceeds `4σ`, so every point belongs to at
/// most one match. Inliers and the transform depend only on `(cfg, seed)`,
/// so a sweep adds outliers to a fixed inlier set.
pub fn generate_scene(cfg: &SceneConfig, ratio: f64, seed: u64) -> Result<SyntheticScene> {
    cfg.validate()?;
    if !(ratio >= 0.0 && ratio.is_finite()) {
        return Err(Error::InvalidParameter(format!("ratio must be non-negative, got {ratio}")));
    }
    let base = splitmix(cfg.seed ^ splitmix(seed));
    let mut rng_in = stream(base, 0);
    let mut rng_out = stream(base, 1);
    let mut rng_perm = stream(base, 2);

    let gt = random_transform(&mut rng_in, &cfg.transform_magnitude);
    let n_in = cfg.inlier_count;
    let n_out = (ratio * n_in as f64).round() as usize;
    let sigma = cfg.noise_sigma;

    let centers: Vec<Vector3<f64>> = (0..cfg.clusters).map(|_| unit_cube(&mut rng_in) * 0.8 + Vector3::repeat(0.1)).collect();
    let mut p: Vec<Vector3<f64>> = Vec::new();
    let mut q: Vec<Vector3<f64>> = Vec::new();
    for i in 0..n_in {
        let x = if cfg.uniform {
            unit_cube(&mut rng_in)
        } else {
            centers[i % centers.len()] + gaussian3(&mut rng_in) * cfg.cluster_sigma
        };
        p.push(x);
        q.push(gt.transform_vector(&x) + bounded_noise(&mut rng_in, sigma));
    }
    let n_extra = cfg.num_points.saturating_sub(n_in + n_out);
    for _ in 0..n_out + n_extra {
        let x = unit_cube(&mut rng_out);
        p.push(x);
        q.push(gt.transform_vector(&x) + bounded_noise(&mut rng_out, sigma));
    }

    // Outlier i pairs P[n_in + i] with Q[targets[i]], drawn from the
    // non-inlier points of Q without replacement.
    let mut targets: Vec<usize> = (n_in..p.len()).collect();
    targets.shuffle(&mut rng_out);
    let bound = RESIDUAL_SIGMAS * sigma;
    let valid = |src: usize, dst: usize| src != dst && (gt.transform_vector(&p[src]) - q[dst]).norm() > bound;
    for i in 0..n_out {
        let src = n_in + i;
        let mut tries = 0;
        while !valid(src, targets[i]) {
            let j = rng_out.random_range(0..targets.len());
            let swap_ok = valid(src, targets[j]) && (j >= n_out || valid(n_in + j, targets[i]));
            if swap_ok {
                targets.swap(i, j);
            }
            tries += 1;
            if tries > 10_000 {
                return Err(Error::Scene(format!(
                    "cannot draw {n_out} outlier matches from {} candidate points",
                    targets.len()
                )));
            }
        }
    }

    let mut perm_p: Vec<usize> = (0..p.len()).collect();
    let mut perm_q: Vec<usize> = (0..q.len()).collect();
    perm_p.shuffle(&mut rng_perm);
    perm_q.shuffle(&mut rng_perm);
    // perm maps old index → new index.
    let mut new_p = vec![Point3::default(); p.len()];
    let mut new_q = vec![Point3::default(); q.len()];
    for (old, &new) in perm_p.iter().enumerate() {
        new_p[new] = Point3::from_vector(&p[old]);
    }
    for (old, &new) in perm_q.iter().enumerate() {
        new_q[new] = Point3::from_vector(&q[old]);
    }

    let mut labelled: Vec<(Correspondence, bool)> = (0..n_in)
        .map(|i| (Correspondence::new(perm_p[i], perm_q[i], 0.0), true))
        .chain((0..n_out).map(|i| (Correspondence::new(perm_p[n_in + i], perm_q[targets[i]], 0.0), false)))
        .collect();
    labelled.sort_by_key(|(c, _)| (c.p, c.q));
    let (matches, labels): (Vec<_>, Vec<_>) = labelled.into_iter().unzip();

    Ok(SyntheticScene {
        cloud_p: PointCloud::new("P", new_p)?,
        cloud_q: PointCloud::new("Q", new_q)?,
        gt_transform: gt,
        matches,
        labels: MatchLabels(labels),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "rmbp")]
    Rmbp,
    #[serde(rename = "ransac_only")]
    RansacOnly,
    #[serde(rename = "rmbp+ransac")]
    RmbpRansac,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::None, Method::Rmbp, Method::RansacOnly, Method::RmbpRansac];

    pub fn name(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Rmbp => "rmbp",
            Method::RansacOnly => "ransac_only",
            Method::RmbpRansac => "rmbp+ransac",
        }
    }

    fn filters(self) -> bool {
        matches!(self, Method::Rmbp | Method::RmbpRansac)
    }

    fn uses_ransac(self) -> bool {
        matches!(self, Method::RansacOnly | Method::RmbpRansac)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub scene: SceneConfig,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub pipeline: PipelineConfig,
    /// Record wall-clock runtimes. Off by default so reports are
    /// byte-reproducible.
    pub timing: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            methods: Method::ALL.to_vec(),
            seeds: (0..20).collect(),
            pipeline: PipelineConfig {
                k: BENCH_K,
                ..Default::default()
            },
            timing: false,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.pipeline.validate()?;
        if self.methods.is_empty() {
            return Err(Error::InvalidParameter("no methods selected".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidParameter("no seeds selected".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SweepConfig = toml::from_str(text).map_err(|e| Error::parse("sweep config", 0, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One (ratio, method, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub method: Method,
    pub seed: u64,
    pub metrics: Option<MatchMetrics>,
    pub median_distance: Option<f64>,
    pub success: bool,
    pub runtime_ms: Option<f64>,
    pub lbp_iterations: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAggregate {
    pub ratio: f64,
    pub method: Method,
    pub op: Option<f64>,
    pub or: Option<f64>,
    pub ip: Option<f64>,
    pub ir: Option<f64>,
    pub median_dist: Option<f64>,
    pub mean_dist: Option<f64>,
    pub mean_runtime_ms: Option<f64>,
    pub n_seeds: usize,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub schema_version: u32,
    pub config: SweepConfig,
    pub rows: Vec<SweepRow>,
    pub aggregates: Vec<SweepAggregate>,
}

impl SweepResult {
    pub fn aggregate(&self, ratio: f64, method: Method) -> Option<&SweepAggregate> {
        self.aggregates.iter().find(|a| a.ratio == ratio && a.method == method)
    }
}

struct CellOutcome {
    metrics: MatchMetrics,
    transform: Result<RigidTransform>,
    lbp_iterations: Option<usize>,
}

fn run_method(scene: &SyntheticScene, method: Method, cfg: &PipelineConfig) -> Result<CellOutcome> {
    let all: Vec<usize> = (0..scene.matches.len()).collect();
    let (kept, lbp_iterations) = if method.filters() {
        let out = rmbp_filter(&scene.cloud_p, &scene.cloud_q, &scene.matches, &cfg.filter_config())?;
        (out.kept, Some(out.report.iterations))
    } else {
        (all, None)
    };
    let metrics = match_metrics(&kept, &scene.labels)?;
    let subset: Vec<Correspondence> = kept.iter().map(|&i| scene.matches[i]).collect();
    let transform = if method.uses_ransac() {
        ransac_register(&subset, &scene.cloud_p, &scene.cloud_q, &cfg.ransac_config()).map(|r| r.transform)
    } else {
        kabsch_register(&subset, &scene.cloud_p, &scene.cloud_q)
    };
    Ok(CellOutcome {
        metrics,
        transform,
        lbp_iterations,
    })
}

fn run_cell(cfg: &SweepConfig, ratio: f64, seed: u64) -> Vec<SweepRow> {
    let scene = generate_scene(&cfg.scene, ratio, seed);
    let success_bound = SUCCESS_SIGMAS * cfg.scene.noise_sigma;
    cfg.methods
        .iter()
        .map(|&method| {
            let mut row = SweepRow {
                ratio,
                method,
                seed,
                metrics: None,
                median_distance: None,
                success: false,
                runtime_ms: None,
                lbp_iterations: None,
                error: None,
            };
            let scene = match &scene {
                Ok(s) => s,
                Err(e) => {
                    row.error = Some(e.to_string());
                    return row;
                }
            };
            let start = Instant::now();
            let outcome = run_method(scene, method, &cfg.pipeline);
            if cfg.timing {
                row.runtime_ms = Some(start.elapsed().as_secs_f64() * 1e3);
            }
            match outcome {
                Ok(o) => {
                    row.metrics = Some(o.metrics);
                    row.lbp_iterations = o.lbp_iterations;
                    match o.transform.and_then(|t| median_point_distance(&t, &scene.gt_transform, &scene.cloud_p)) {
                        Ok(d) => {
                            row.median_distance = Some(d);
                            row.success = d < success_bound;
                        }
                        Err(e) => row.error = Some(e.to_string()),
                    }
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            row
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn aggregate(rows: &[SweepRow]) -> Vec<SweepAggregate> {
    let mut out: Vec<SweepAggregate> = Vec::new();
    for group in rows.chunk_by(|a, b| a.ratio == b.ratio && a.method == b.method) {
        let metric = |f: fn(&MatchMetrics) -> Option<f64>| mean(group.iter().filter_map(|r| r.metrics.as_ref().and_then(f)));
        let mut dists: Vec<f64> = group.iter().filter_map(|r| r.median_distance).collect();
        out.push(SweepAggregate {
            ratio: group[0].ratio,
            method: group[0].method,
            op: metric(|m| m.op),
            or: metric(|m| m.or),
            ip: metric(|m| m.ip),
            ir: metric(|m| m.ir),
            mean_dist: mean(dists.iter().copied()),
            median_dist: median(&mut dists),
            mean_runtime_ms: mean(group.iter().filter_map(|r| r.runtime_ms)),
            n_seeds: group.len(),
            success_rate: group.iter().filter(|r| r.success).count() as f64 / group.len() as f64,
        });
    }
    out
}

/// Runs every (ratio, seed) scene through every method. Cells run in
/// parallel; failures become rows with `error` set. Rows are sorted by
/// (ratio, method, seed).
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let cells: Vec<(f64, u64)> = cfg
        .scene
        .outlier_ratios
        .iter()
        .flat_map(|&r| cfg.seeds.iter().map(move |&s| (r, s)))
        .collect();
    let mut rows: Vec<SweepRow> = cells.par_iter().flat_map_iter(|&(r, s)| run_cell(cfg, r, s)).collect();
    rows.sort_by(|a, b| a.ratio.total_cmp(&b.ratio).then(a.method.cmp(&b.method)).then(a.seed.cmp(&b.seed)));
    let aggregates = aggregate(&rows);
    Ok(SweepResult {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        rows,
        aggregates,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "null".to_string(), |x| x.to_string())
}

pub fn write_csv<W: Write>(mut out: W, result: &SweepResult) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for a in &result.aggregates {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            a.ratio,
            a.method,
            opt(a.op),
            opt(a.or),
            opt(a.ip),
            opt(a.ir),
            opt(a.median_dist),
            opt(a.mean_runtime_ms),
            a.n_seeds,
            a.success_rate,
            result.schema_version
        )?;
    }
    Ok(())
}

pub fn write_json<W: Write>(out: W, result: &SweepResult) -> Result<()> {
    serde_json::to_writer_pretty(out, result)?;
    Ok(())
}

pub fn read_json(text: &str) -> Result<SweepResult> {
    Ok(serde_json::from_str(text)?)
}

/// The JSON mirror sits next to the CSV with a `.json` extension.
pub fn json_path_for(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Writes the CSV and its JSON mirror atomically.
pub fn emit_report(result: &SweepResult, csv_path: &Path) -> Result<()> {
    io::write_atomic(csv_path, |w| write_csv(w, result))?;
    io::write_atomic(&json_path_for(csv_path), |w| write_json(w, result))
}
