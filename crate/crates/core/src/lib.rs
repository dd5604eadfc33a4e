//! Point-cloud correspondence toolkit built around a belief-propagation
//! outlier filter.
//!
//! Putative matches between two clouds become nodes of a pairwise binary
//! Markov random field. Pairs of matches whose endpoints are mutual
//! k-nearest neighbours in both clouds are *compatible*; pairs that are near
//! in one cloud but far apart in the other are *incompatible*. Loopy belief
//! propagation over that graph yields a per-match inlier marginal, and
//! matches below a threshold are discarded before rigid registration.
//!
//! Modules, bottom up:
//!
//! - [`geometry`]: points, clouds, rigid transforms, the k-d tree and the
//!   distance-rank primitive.
//! - [`descriptors`]: opaque descriptor vectors and a deterministic local
//!   shape descriptor for end-to-end runs.
//! - [`matching`]: mutual-nearest and ratio-test matching, observation priors.
//! - [`matchgraph`]: neighbour classification and graph construction.
//! - [`inference`]: loopy belief propagation, exact enumeration, filtering.
//! - [`registration`]: Kabsch, RANSAC and evaluation metrics.
//! - [`bench`]: synthetic scenes and the outlier-ratio sweep.
//! - [`io`] / [`config`]: file formats and pipeline configuration used by
//!   the `rmbp` binary.

pub mod bench;
pub mod config;
pub mod descriptors;
mod error;
pub mod geometry;
pub mod inference;
pub mod io;
pub mod matchgraph;
pub mod matching;
pub mod pipeline;
pub mod registration;

pub use error::{Error, Result};
