//! Counting error over a set of videos.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoResult {
    pub video_id: String,
    /// Video length in any unit shared by the whole set.
    pub length: u64,
    pub gt_count: u64,
    pub pred_count: f64,
}

impl VideoResult {
    fn abs_error(&self) -> f64 {
        (self.gt_count as f64 - self.pred_count).abs()
    }
}

fn non_empty(results: &[VideoResult]) -> Result<()> {
    if results.is_empty() {
        return Err(Error::Empty("no videos to evaluate"));
    }
    Ok(())
}

/// Mean absolute error of the per-video counts.
pub fn mae(results: &[VideoResult]) -> Result<f64> {
    non_empty(results)?;
    Ok(results.iter().map(VideoResult::abs_error).sum::<f64>() / results.len() as f64)
}

/// Root-mean-square error of the per-video counts. Named MSE after the
/// column heading used in the counting literature.
pub fn mse(results: &[VideoResult]) -> Result<f64> {
    non_empty(results)?;
    let sq: f64 = results.iter().map(|r| r.abs_error().powi(2)).sum();
    Ok((sq / results.len() as f64).sqrt())
}

/// Length-weighted relative absolute error, in percent.
pub fn wrae(results: &[VideoResult]) -> Result<f64> {
    non_empty(results)?;
    if let Some(r) = results.iter().find(|r| r.gt_count == 0) {
        return Err(Error::ZeroGroundTruth(r.video_id.clone()));
    }
    let total_length: f64 = results.iter().map(|r| r.length as f64).sum();
    if total_length <= 0.0 {
        return Err(Error::Empty("total video length is zero"));
    }
    // Single division per term keeps simple ratios exact.
    Ok(results
        .iter()
        .map(|r| (r.length as f64 * r.abs_error() * 100.0) / (r.gt_count as f64 * total_length))
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub mae: f64,
    pub mse: f64,
    pub wrae: f64,
}

pub fn evaluate(results: &[VideoResult]) -> Result<MetricsSummary> {
    Ok(MetricsSummary {
        mae: mae(results)?,
        mse: mse(results)?,
        wrae: wrae(results)?,
    })
}
