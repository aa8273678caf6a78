//! Streams of detections with weak inflow/outflow labels, and the
//! partitioned similarity matrix between two δ-adjacent frames.
//!
//! For frames `i` and `j`, detections of `i` are split by their outflow flag
//! and detections of `j` by their inflow flag. Individuals flagged 0 on both
//! sides are the shared groups, and the inner-product matrix between the two
//! frames is laid out as
//!
//! ```text
//!            shared_j   inflow_j
//! shared_i  [   S0    |    S1   ]
//! outflow_i [   S2    |    S3   ]
//! ```
//!
//! with `S0` square of side `m`, the number of shared individuals.

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const UNIT_TOLERANCE: f64 = 1e-12;

/// Scales `v` to unit Euclidean norm.
pub fn normalize_feature(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateFeature);
    }
    let norm = l2_norm(v);
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::DegenerateFeature);
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    x: f64,
    y: f64,
    feature: Vec<f64>,
    gt_id: Option<u64>,
}

impl Detection {
    /// Builds a detection, normalizing the feature. Vectors that are already
    /// unit length to within 1e-12 are stored unchanged so that serialized
    /// streams read back bit-identical.
    pub fn new(x: f64, y: f64, feature: Vec<f64>, gt_id: Option<u64>) -> Result<Self> {
        if feature.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateFeature);
        }
        let norm = l2_norm(&feature);
        let feature = if (norm - 1.0).abs() <= UNIT_TOLERANCE {
            feature
        } else {
            normalize_feature(&feature)?
        };
        Ok(Self {
            x,
            y,
            feature,
            gt_id,
        })
    }

    pub fn coordinate(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    pub fn feature(&self) -> &[f64] {
        &self.feature
    }

    pub fn dim(&self) -> usize {
        self.feature.len()
    }

    pub fn gt_id(&self) -> Option<u64> {
        self.gt_id
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    frame_index: usize,
    timestamp: f64,
    detections: Vec<Detection>,
    inflow: Vec<bool>,
    outflow: Vec<bool>,
}

impl FrameRecord {
    pub fn new(
        frame_index: usize,
        timestamp: f64,
        detections: Vec<Detection>,
        inflow: Vec<bool>,
        outflow: Vec<bool>,
    ) -> Result<Self> {
        if frame_index == 0 {
            return Err(Error::InvalidStream("frame index must be >= 1".into()));
        }
        if !timestamp.is_finite() {
            return Err(Error::InvalidStream(format!(
                "frame {frame_index}: timestamp is not finite"
            )));
        }
        let n = detections.len();
        if inflow.len() != n || outflow.len() != n {
            return Err(Error::InvalidStream(format!(
                "frame {frame_index}: {n} detections but {} inflow and {} outflow flags",
                inflow.len(),
                outflow.len()
            )));
        }
        Ok(Self {
            frame_index,
            timestamp,
            detections,
            inflow,
            outflow,
        })
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn inflow(&self) -> &[bool] {
        &self.inflow
    }

    pub fn outflow(&self) -> &[bool] {
        &self.outflow
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionStream {
    frames: Vec<FrameRecord>,
    delta: f64,
    feature_dim: usize,
}

impl DetectionStream {
    /// Validates feature dimensions and that timestamps advance by exactly
    /// `delta` (to 1e-6 relative).
    pub fn new(frames: Vec<FrameRecord>, delta: f64, feature_dim: usize) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidStream(format!(
                "delta must be positive, got {delta}"
            )));
        }
        for frame in &frames {
            for det in frame.detections() {
                if det.dim() != feature_dim {
                    return Err(Error::DimensionMismatch {
                        expected: feature_dim,
                        found: det.dim(),
                    });
                }
            }
        }
        for pair in frames.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if b.frame_index <= a.frame_index {
                return Err(Error::InvalidStream(format!(
                    "frame index {} does not follow {}",
                    b.frame_index, a.frame_index
                )));
            }
            let step = b.timestamp - a.timestamp;
            let tol = 1e-6 * delta.max(b.timestamp.abs());
            if (step - delta).abs() > tol {
                return Err(Error::InvalidStream(format!(
                    "frames {} and {} are {step}s apart, expected {delta}s",
                    a.frame_index, b.frame_index
                )));
            }
        }
        Ok(Self {
            frames,
            delta,
            feature_dim,
        })
    }

    pub fn frames(&self) -> &[FrameRecord] {
        &self.frames
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Builds the similarity blocks for every pair of consecutive frames.
    pub fn adjacent_blocks(&self) -> Result<Vec<SimilarityBlocks>> {
        self.frames
            .windows(2)
            .map(|w| partition_similarity(&w[0], &w[1]))
            .collect()
    }
}

/// Number of individuals shared by two adjacent frames, read off the
/// outflow flags of the earlier frame and the inflow flags of the later one.
pub fn shared_count(outflow_i: &[bool], inflow_j: &[bool]) -> Result<usize> {
    let outflow_zeros = outflow_i.iter().filter(|&&b| !b).count();
    let inflow_zeros = inflow_j.iter().filter(|&&b| !b).count();
    if outflow_zeros != inflow_zeros {
        return Err(Error::InconsistentWeakLabels {
            outflow_zeros,
            inflow_zeros,
        });
    }
    Ok(outflow_zeros)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityBlocks {
    /// Full similarity matrix in block order.
    matrix: Array2<f64>,
    m: usize,
    /// `perm_i[r]` is the original detection index of block row `r`.
    perm_i: Vec<usize>,
    perm_j: Vec<usize>,
}

impl SimilarityBlocks {
    /// Wraps a similarity matrix that is already in block order, with
    /// identity permutations.
    pub fn from_matrix(matrix: Array2<f64>, m: usize) -> Result<Self> {
        let (rows, cols) = matrix.dim();
        if m > rows || m > cols {
            return Err(Error::InvalidBlocks(format!(
                "shared count {m} exceeds matrix shape {rows}x{cols}"
            )));
        }
        if let Some(v) = matrix.iter().find(|v| v.is_nan() || v.abs() > 1.0) {
            return Err(Error::InvalidBlocks(format!("entry {v} outside [-1, 1]")));
        }
        Ok(Self {
            matrix,
            m,
            perm_i: (0..rows).collect(),
            perm_j: (0..cols).collect(),
        })
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.matrix.view()
    }

    pub fn shared(&self) -> usize {
        self.m
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn s0(&self) -> ArrayView2<'_, f64> {
        self.matrix.slice(s![..self.m, ..self.m])
    }

    pub fn s1(&self) -> ArrayView2<'_, f64> {
        self.matrix.slice(s![..self.m, self.m..])
    }

    pub fn s2(&self) -> ArrayView2<'_, f64> {
        self.matrix.slice(s![self.m.., ..self.m])
    }

    pub fn s3(&self) -> ArrayView2<'_, f64> {
        self.matrix.slice(s![self.m.., self.m..])
    }

    pub fn perm_i(&self) -> &[usize] {
        &self.perm_i
    }

    pub fn perm_j(&self) -> &[usize] {
        &self.perm_j
    }

    /// Maps a block-order (row, col) pair back to original detection indices.
    pub fn original_indices(&self, row: usize, col: usize) -> (usize, usize) {
        (self.perm_i[row], self.perm_j[col])
    }
}

/// Stable permutation listing flag-0 indices first, then flag-1 indices.
fn shared_first(flags: &[bool]) -> Vec<usize> {
    let shared = (0..flags.len()).filter(|&k| !flags[k]);
    let flowing = (0..flags.len()).filter(|&k| flags[k]);
    shared.chain(flowing).collect()
}

pub fn partition_similarity(
    frame_i: &FrameRecord,
    frame_j: &FrameRecord,
) -> Result<SimilarityBlocks> {
    let m = shared_count(frame_i.outflow(), frame_j.inflow())?;
    let perm_i = shared_first(frame_i.outflow());
    let perm_j = shared_first(frame_j.inflow());

    let (di, dj) = (frame_i.detections(), frame_j.detections());
    if let (Some(a), Some(b)) = (di.first(), dj.first()) {
        if a.dim() != b.dim() {
            return Err(Error::DimensionMismatch {
                expected: a.dim(),
                found: b.dim(),
            });
        }
    }

    let matrix = Array2::from_shape_fn((perm_i.len(), perm_j.len()), |(r, c)| {
        dot(di[perm_i[r]].feature(), dj[perm_j[c]].feature()).clamp(-1.0, 1.0)
    });
    Ok(SimilarityBlocks {
        matrix,
        m,
        perm_i,
        perm_j,
    })
}
