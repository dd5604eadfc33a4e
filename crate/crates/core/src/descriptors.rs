//! Descriptor vectors and a deterministic local shape descriptor.
//!
//! The matcher treats descriptors as opaque fixed-length vectors. For
//! end-to-end runs without a learned descriptor, [`stand_in_descriptor`]
//! summarises the radius-ball neighbourhood of a point with rigid-motion
//! invariant statistics.

use std::io::BufRead;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::geometry::{NeighborIndex, PointCloud};
use crate::{Error, Result};

/// Number of radial histogram bins in the stand-in descriptor.
pub const RADIAL_BINS: usize = 8;
/// Length of the stand-in descriptor: 2 shape ratios, 1 centroid offset,
/// the radial histogram and 2 reserved zeros.
pub const STAND_IN_DIM: usize = 2 + 1 + RADIAL_BINS + 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    values: Vec<f64>,
    normalized: bool,
}

impl Descriptor {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("descriptor has non-finite entry".into()));
        }
        Ok(Self {
            values,
            normalized: false,
        })
    }

    /// Scales to unit L2 norm. A zero vector stays zero and unflagged.
    pub fn normalized(mut self) -> Self {
        let n = self.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            self.values.iter_mut().for_each(|v| *v /= n);
            self.normalized = true;
        }
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn distance(&self, other: &Descriptor) -> f64 {
        squared_distance(&self.values, &other.values).sqrt()
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Descriptors keyed by keypoint index, all of one dimension.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DescriptorSet {
    dim: usize,
    indices: Vec<usize>,
    descriptors: Vec<Descriptor>,
}

impl DescriptorSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    pub fn push(&mut self, index: usize, d: Descriptor) -> Result<()> {
        if self.descriptors.is_empty() && self.dim == 0 {
            self.dim = d.dim();
        }
        if d.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: d.dim(),
            });
        }
        self.indices.push(index);
        self.descriptors.push(d);
        Ok(())
    }

    /// Builds a set whose keypoint indices are `0..rows.len()`.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut set = Self::default();
        for (i, r) in rows.into_iter().enumerate() {
            set.push(i, Descriptor::new(r)?)?;
        }
        Ok(set)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn descriptors(&self) -> &[Descriptor] {
        &self.descriptors
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Descriptor)> {
        self.indices.iter().copied().zip(self.descriptors.iter())
    }
}

/// Output of [`stand_in_descriptor`]; `empty_neighborhood` is set when the
/// radius ball held no other point and the descriptor is all zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDescriptor {
    pub descriptor: Descriptor,
    pub empty_neighborhood: bool,
}

/// Local shape descriptor of `point` over its radius-ball neighbourhood
/// (the point itself excluded).
///
/// Layout: `[λ2/λ1, λ3/λ1, |centroid − p|/r, h0..h7, 0, 0]` with the
/// covariance eigenvalues sorted descending and `h` the fraction of
/// neighbours in each of 8 equal radial shells over `[0, r]`. The vector is
/// L2-normalised.
pub fn stand_in_descriptor(
    cloud: &PointCloud,
    index: &NeighborIndex,
    point: usize,
    radius: f64,
) -> Result<LocalDescriptor> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidParameter(format!("radius must be positive, got {radius}")));
    }
    let origin = cloud.get(point)?;
    let center = origin.to_vector();
    let hood = index.within_radius(&origin.to_array(), radius, Some(point));
    if hood.is_empty() {
        return Ok(LocalDescriptor {
            descriptor: Descriptor {
                values: vec![0.0; STAND_IN_DIM],
                normalized: false,
            },
            empty_neighborhood: true,
        });
    }

    let n = hood.len() as f64;
    let offsets: Vec<Vector3<f64>> = hood
        .iter()
        .map(|&(i, _)| cloud[i].to_vector() - center)
        .collect();
    let mean = offsets.iter().fold(Vector3::zeros(), |acc, v| acc + v) / n;
    let mut cov = Matrix3::zeros();
    for v in &offsets {
        let c = v - mean;
        cov += c * c.transpose();
    }
    cov /= n;
    let mut eig: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().map(|v| v.max(0.0)).collect();
    eig.sort_by(|a, b| b.total_cmp(a));

    let mut values = Vec::with_capacity(STAND_IN_DIM);
    if eig[0] > 0.0 {
        values.push(eig[1] / eig[0]);
        values.push(eig[2] / eig[0]);
    } else {
        values.extend([0.0, 0.0]);
    }
    values.push(mean.norm() / radius);

    let mut bins = [0.0; RADIAL_BINS];
    for &(_, d2) in &hood {
        let b = ((d2.sqrt() / radius) * RADIAL_BINS as f64) as usize;
        bins[b.min(RADIAL_BINS - 1)] += 1.0;
    }
    values.extend(bins.iter().map(|c| c / n));
    values.extend([0.0, 0.0]);

    Ok(LocalDescriptor {
        descriptor: Descriptor::new(values)?.normalized(),
        empty_neighborhood: false,
    })
}

/// Computes [`stand_in_descriptor`] for every point of the cloud.
pub fn describe_cloud(cloud: &PointCloud, index: &NeighborIndex, radius: f64) -> Result<Vec<LocalDescriptor>> {
    use rayon::prelude::*;
    (0..cloud.len())
        .into_par_iter()
        .map(|i| stand_in_descriptor(cloud, index, i, radius))
        .collect()
}

/// Parses the descriptor text format: one row per keypoint, the keypoint
/// index followed by the descriptor values, whitespace separated. Blank
/// lines and `#` comments are skipped.
pub fn load_descriptors<R: BufRead>(source: R) -> Result<DescriptorSet> {
    let mut set = DescriptorSet::default();
    let mut row = 0usize;
    for (lineno, line) in source.lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let mut fields = text.split_whitespace();
        let index: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| Error::parse("descriptors", lineno + 1, "expected a non-negative keypoint index"))?;
        let values = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse("descriptors", lineno + 1, e.to_string()))?;
        if !set.is_empty() && values.len() != set.dim() {
            return Err(Error::DescriptorRow {
                row,
                expected: set.dim(),
                found: values.len(),
            });
        }
        let d = Descriptor::new(values).map_err(|e| Error::parse("descriptors", lineno + 1, e.to_string()))?;
        set.push(index, d)?;
        row += 1;
    }
    Ok(set)
}

/// Writes the format read by [`load_descriptors`].
pub fn write_descriptors<W: std::io::Write>(mut out: W, set: &DescriptorSet) -> Result<()> {
    for (index, d) in set.iter() {
        write!(out, "{index}")?;
        for v in d.values() {
            write!(out, " {v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
