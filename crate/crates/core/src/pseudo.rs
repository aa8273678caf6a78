//! Pseudo-trajectory labels recovered from the transport plans of a weakly
//! labelled stream.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::loss::{soft_contrastive_loss, LossConfig};
use crate::model::{partition_similarity, DetectionStream};

/// One-to-one matching between the shared individuals of two adjacent
/// frames, in original detection indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMatching {
    pub frame_i: usize,
    pub frame_j: usize,
    pub matches: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: usize,
    /// `(frame_index, detection_index)` in frame order.
    pub points: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabels {
    pub pairs: Vec<PairMatching>,
    pub trajectories: Vec<Trajectory>,
}

pub fn pseudo_trajectories(stream: &DetectionStream, cfg: &LossConfig) -> Result<PseudoLabels> {
    cfg.validate()?;
    let frames = stream.frames();

    let mut pairs = Vec::with_capacity(frames.len().saturating_sub(1));
    for w in frames.windows(2) {
        let blocks = partition_similarity(&w[0], &w[1])?;
        let plan = soft_contrastive_loss(&blocks, cfg)?.plan;
        let mut matches: Vec<(usize, usize)> = plan
            .round()
            .pairs
            .into_iter()
            .map(|(r, c)| blocks.original_indices(r, c))
            .collect();
        matches.sort_unstable();
        pairs.push(PairMatching {
            frame_i: w[0].frame_index(),
            frame_j: w[1].frame_index(),
            matches,
        });
    }

    let mut trajectories: Vec<Trajectory> = Vec::new();
    let mut owner: Vec<usize> = Vec::new();
    if let Some(first) = frames.first() {
        for d in 0..first.len() {
            owner.push(trajectories.len());
            trajectories.push(Trajectory {
                id: trajectories.len(),
                points: vec![(first.frame_index(), d)],
            });
        }
    }
    for (pair, frame) in pairs.iter().zip(frames.iter().skip(1)) {
        let mut next_owner = vec![usize::MAX; frame.len()];
        for &(i, j) in &pair.matches {
            next_owner[j] = owner[i];
        }
        for (d, slot) in next_owner.iter_mut().enumerate() {
            if *slot == usize::MAX {
                *slot = trajectories.len();
                trajectories.push(Trajectory {
                    id: trajectories.len(),
                    points: Vec::new(),
                });
            }
            trajectories[*slot].points.push((frame.frame_index(), d));
        }
        owner = next_owner;
    }

    Ok(PseudoLabels {
        pairs,
        trajectories,
    })
}
