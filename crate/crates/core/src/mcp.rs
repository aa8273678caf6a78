//! Memory-based count predictor.
//!
//! Every individual seen recently owns a memory entry holding up to `memmax`
//! appearance templates and a time-to-live counter. Each sampled frame is
//! matched against memory with the Hungarian method on template costs;
//! detections whose matched cost exceeds `zeta`, or that found no entry, are
//! counted as inflow and open a new entry.
//!
//! An entry survives `ttlmax` consecutive sampled steps without a match and is
//! dropped on the next miss, so `ttlmax = 0` keeps only individuals that were
//! matched in the previous step.

use std::collections::VecDeque;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::assign::hungarian;
use crate::error::{Error, Result};
use crate::model::{dot, Detection, DetectionStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateAggregator {
    /// Cost of the least similar template.
    Max,
    /// Cost of the most similar template.
    Min,
    Mean,
}

impl FromStr for TemplateAggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Self::Max),
            "min" => Ok(Self::Min),
            "mean" => Ok(Self::Mean),
            other => Err(Error::InvalidConfig(format!(
                "unknown aggregator {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McpConfig {
    pub zeta: f64,
    pub ttlmax: u32,
    pub memmax: usize,
    pub aggregator: TemplateAggregator,
}

impl Default for McpConfig {
    fn default() -> Self {
        Self {
            zeta: 0.7,
            ttlmax: 3,
            memmax: 5,
            aggregator: TemplateAggregator::Max,
        }
    }
}

impl McpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.zeta >= 0.0 && self.zeta.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "zeta must be >= 0, got {}",
                self.zeta
            )));
        }
        if self.memmax == 0 {
            return Err(Error::InvalidConfig("memmax must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateEntry {
    pub entry_id: u64,
    /// Oldest first.
    pub templates: VecDeque<Vec<f64>>,
    pub ttl: u32,
}

impl TemplateEntry {
    fn push_template(&mut self, feature: &[f64], memmax: usize) {
        if self.templates.len() == memmax {
            self.templates.pop_front();
        }
        self.templates.push_back(feature.to_vec());
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryState {
    pub entries: Vec<TemplateEntry>,
    pub next_entry_id: u64,
}

impl MemoryState {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn template_cost(
    feature: &[f64],
    entry: &TemplateEntry,
    aggregator: TemplateAggregator,
) -> Result<f64> {
    let mut costs = entry.templates.iter().map(|g| {
        if g.len() != feature.len() {
            return Err(Error::DimensionMismatch {
                expected: g.len(),
                found: feature.len(),
            });
        }
        Ok(1.0 - dot(feature, g))
    });
    let first = costs.next().ok_or_else(|| {
        Error::InvalidConfig(format!("entry {} has no templates", entry.entry_id))
    })??;
    let (mut acc, mut n) = (first, 1usize);
    for c in costs {
        let c = c?;
        acc = match aggregator {
            TemplateAggregator::Max => acc.max(c),
            TemplateAggregator::Min => acc.min(c),
            TemplateAggregator::Mean => acc + c,
        };
        n += 1;
    }
    Ok(match aggregator {
        TemplateAggregator::Mean => acc / n as f64,
        _ => acc,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub inflow_count: usize,
    /// `(detection index, entry id)` for detections matched to memory.
    pub associations: Vec<(usize, u64)>,
    pub new_entry_ids: Vec<u64>,
}

pub fn step(
    memory: MemoryState,
    detections: &[Detection],
    cfg: &McpConfig,
) -> Result<(MemoryState, StepReport)> {
    cfg.validate()?;
    let MemoryState {
        mut entries,
        mut next_entry_id,
    } = memory;

    let mut cost = Array2::zeros((detections.len(), entries.len()));
    for (u, det) in detections.iter().enumerate() {
        for (e, entry) in entries.iter().enumerate() {
            cost[[u, e]] = template_cost(det.feature(), entry, cfg.aggregator)?;
        }
    }
    let assignment = hungarian(cost.view())?;

    let mut matched_entry = vec![None; detections.len()];
    for &(u, e) in &assignment.pairs {
        if cost[[u, e]] <= cfg.zeta {
            matched_entry[u] = Some(e);
        }
    }

    let mut refreshed = vec![false; entries.len()];
    let mut report = StepReport::default();
    for (u, e) in matched_entry.iter().enumerate() {
        if let Some(e) = *e {
            refreshed[e] = true;
            let entry = &mut entries[e];
            entry.push_template(detections[u].feature(), cfg.memmax);
            entry.ttl = cfg.ttlmax;
            report.associations.push((u, entry.entry_id));
        }
    }

    let mut kept = Vec::with_capacity(entries.len() + detections.len());
    for (mut entry, hit) in entries.into_iter().zip(refreshed) {
        if hit {
            kept.push(entry);
        } else if entry.ttl > 0 {
            entry.ttl -= 1;
            kept.push(entry);
        }
    }

    for (u, det) in detections.iter().enumerate() {
        if matched_entry[u].is_none() {
            let entry_id = next_entry_id;
            next_entry_id += 1;
            kept.push(TemplateEntry {
                entry_id,
                templates: VecDeque::from([det.feature().to_vec()]),
                ttl: cfg.ttlmax,
            });
            report.new_entry_ids.push(entry_id);
        }
    }
    report.inflow_count = report.new_entry_ids.len();

    Ok((
        MemoryState {
            entries: kept,
            next_entry_id,
        },
        report,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameCount {
    pub frame_index: usize,
    #[serde(flatten)]
    pub step: StepReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CountReport {
    pub per_step: Vec<FrameCount>,
    pub total: usize,
}

/// Counts unique individuals in an already δ-sampled stream. The first
/// frame seeds memory, so all of its detections count.
pub fn count_video(stream: &DetectionStream, cfg: &McpConfig) -> Result<CountReport> {
    cfg.validate()?;
    let mut memory = MemoryState::default();
    let mut report = CountReport::default();
    for frame in stream.frames() {
        let (next, step_report) = step(memory, frame.detections(), cfg)?;
        memory = next;
        report.total += step_report.inflow_count;
        report.per_step.push(FrameCount {
            frame_index: frame.frame_index(),
            step: step_report,
        });
    }
    Ok(report)
}
