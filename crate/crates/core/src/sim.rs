//! Synthetic detection streams with ground-truth identities.
//!
//! Each identity has a fixed base appearance on the unit sphere; its observed
//! feature in a frame is the base plus Gaussian noise, renormalized. Weak
//! inflow/outflow flags are derived from identity presence in adjacent
//! frames. Everything is a pure function of the config and its seed.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dot, normalize_feature, Detection, DetectionStream, FrameRecord};

const BASE_STREAM: u64 = 1;
const PRESENCE_STREAM: u64 = 2;
const RENDER_STREAM: u64 = 3;
const MAX_BASE_ATTEMPTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryExitModel {
    /// Every identity is present in every frame.
    Persistent,
    /// Each identity occupies `[t_in, t_out]` with both ends uniform over
    /// the frame range.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub num_identities: usize,
    pub num_frames: usize,
    pub delta: f64,
    pub feature_dim: usize,
    pub feature_noise_sigma: f64,
    pub entry_exit_model: EntryExitModel,
    /// Probability that an identity leaves once inside its lifespan and
    /// comes back.
    pub reentry_probability: f64,
    /// Inclusive range for the number of sampled frames a re-entering
    /// identity is absent.
    pub reentry_gap: (usize, usize),
    /// When set, base features are rejection-sampled so every pair has
    /// `|cos| < cap`.
    pub max_base_similarity: Option<f64>,
    pub scene_size: (f64, f64),
    pub walk_step_sigma: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            num_identities: 20,
            num_frames: 30,
            delta: 3.0,
            feature_dim: 64,
            feature_noise_sigma: 0.0,
            entry_exit_model: EntryExitModel::Uniform,
            reentry_probability: 0.0,
            reentry_gap: (1, 3),
            max_base_similarity: None,
            scene_size: (1920.0, 1080.0),
            walk_step_sigma: 10.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.num_frames == 0 {
            return bad("num_frames must be >= 1");
        }
        if self.feature_dim < 2 {
            return bad("feature_dim must be >= 2");
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad("delta must be positive");
        }
        if !(self.feature_noise_sigma >= 0.0 && self.feature_noise_sigma.is_finite()) {
            return bad("feature noise sigma must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.reentry_probability) {
            return bad("reentry probability must lie in [0, 1]");
        }
        if self.reentry_gap.0 == 0 || self.reentry_gap.0 > self.reentry_gap.1 {
            return bad("reentry gap must be a non-empty range starting at >= 1");
        }
        if let Some(cap) = self.max_base_similarity {
            if !(cap > 0.0 && cap <= 1.0) {
                return bad("max base similarity must lie in (0, 1]");
            }
        }
        if !(self.scene_size.0 > 0.0 && self.scene_size.1 > 0.0) {
            return bad("scene size must be positive");
        }
        if !(self.walk_step_sigma >= 0.0 && self.walk_step_sigma.is_finite()) {
            return bad("walk step sigma must be >= 0");
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

fn random_unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        if let Ok(unit) = normalize_feature(&v) {
            return unit;
        }
    }
}

/// Base appearance of every identity.
pub fn base_features(cfg: &SimConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let mut rng = cfg.rng(BASE_STREAM);
    let mut bases: Vec<Vec<f64>> = Vec::with_capacity(cfg.num_identities);
    for id in 0..cfg.num_identities {
        let mut attempts = 0;
        let base = loop {
            let candidate = random_unit(&mut rng, cfg.feature_dim);
            let ok = match cfg.max_base_similarity {
                None => true,
                Some(cap) => bases.iter().all(|b| dot(b, &candidate).abs() < cap),
            };
            if ok {
                break candidate;
            }
            attempts += 1;
            if attempts == MAX_BASE_ATTEMPTS {
                return Err(Error::InvalidConfig(format!(
                    "could not place identity {id} under similarity cap {:?} in dimension {}",
                    cfg.max_base_similarity, cfg.feature_dim
                )));
            }
        };
        bases.push(base);
    }
    Ok(bases)
}

/// Presence table `[identity][frame]` drawn from the entry/exit model.
pub fn sample_presence(cfg: &SimConfig) -> Result<Vec<Vec<bool>>> {
    cfg.validate()?;
    let mut rng = cfg.rng(PRESENCE_STREAM);
    let n = cfg.num_frames;
    let mut presence = Vec::with_capacity(cfg.num_identities);
    for _ in 0..cfg.num_identities {
        let (t_in, t_out) = match cfg.entry_exit_model {
            EntryExitModel::Persistent => (0, n - 1),
            EntryExitModel::Uniform => {
                let a = rng.random_range(0..n);
                let b = rng.random_range(0..n);
                (a.min(b), a.max(b))
            }
        };
        let mut row: Vec<bool> = (0..n).map(|t| (t_in..=t_out).contains(&t)).collect();
        let interior = (t_out - t_in).saturating_sub(1);
        if rng.random_bool(cfg.reentry_probability) && interior >= cfg.reentry_gap.0 {
            let gap = rng.random_range(cfg.reentry_gap.0..=cfg.reentry_gap.1.min(interior));
            let start = rng.random_range(t_in + 1..=t_out - gap);
            row[start..start + gap].iter_mut().for_each(|p| *p = false);
        }
        presence.push(row);
    }
    Ok(presence)
}

/// Inflow flags for the current frame and outflow flags for the previous one,
/// from the ground-truth identity of each detection.
pub fn derive_weak_labels(prev_ids: &[u64], curr_ids: &[u64]) -> (Vec<bool>, Vec<bool>) {
    let prev: HashSet<u64> = prev_ids.iter().copied().collect();
    let curr: HashSet<u64> = curr_ids.iter().copied().collect();
    let inflow = curr_ids.iter().map(|id| !prev.contains(id)).collect();
    let outflow = prev_ids.iter().map(|id| !curr.contains(id)).collect();
    (inflow, outflow)
}

/// Renders a stream for an explicit presence table (`presence[id][frame]`);
/// appearance, motion and detection order still come from the config seed.
pub fn render_scene(cfg: &SimConfig, presence: &[Vec<bool>]) -> Result<DetectionStream> {
    cfg.validate()?;
    if presence.len() != cfg.num_identities || presence.iter().any(|r| r.len() != cfg.num_frames) {
        return Err(Error::InvalidConfig(format!(
            "presence table must be {} identities by {} frames",
            cfg.num_identities, cfg.num_frames
        )));
    }
    let bases = base_features(cfg)?;
    let mut rng = cfg.rng(RENDER_STREAM);
    let noise = Normal::new(0.0, cfg.feature_noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let step = Normal::new(0.0, cfg.walk_step_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let (w, h) = cfg.scene_size;
    let mut positions: Vec<(f64, f64)> = (0..cfg.num_identities)
        .map(|_| (rng.random_range(0.0..w), rng.random_range(0.0..h)))
        .collect();

    let mut frame_ids: Vec<Vec<u64>> = Vec::with_capacity(cfg.num_frames);
    let mut frame_dets: Vec<Vec<Detection>> = Vec::with_capacity(cfg.num_frames);
    for t in 0..cfg.num_frames {
        if t > 0 && cfg.walk_step_sigma > 0.0 {
            for p in positions.iter_mut() {
                p.0 = (p.0 + step.sample(&mut rng)).clamp(0.0, w);
                p.1 = (p.1 + step.sample(&mut rng)).clamp(0.0, h);
            }
        }
        let mut ids: Vec<usize> = presence
            .iter()
            .enumerate()
            .filter(|(_, row)| row[t])
            .map(|(i, _)| i)
            .collect();
        ids.shuffle(&mut rng);
        let mut dets = Vec::with_capacity(ids.len());
        for &i in &ids {
            let feature = if cfg.feature_noise_sigma > 0.0 {
                bases[i]
                    .iter()
                    .map(|b| b + noise.sample(&mut rng))
                    .collect()
            } else {
                bases[i].clone()
            };
            let (x, y) = positions[i];
            dets.push(Detection::new(x, y, feature, Some(i as u64))?);
        }
        frame_ids.push(ids.into_iter().map(|i| i as u64).collect());
        frame_dets.push(dets);
    }

    let n = cfg.num_frames;
    let mut inflows: Vec<Vec<bool>> = Vec::with_capacity(n);
    let mut outflows: Vec<Vec<bool>> = Vec::with_capacity(n);
    for t in 0..n {
        if t == 0 {
            inflows.push(vec![true; frame_ids[0].len()]);
        } else {
            let (inflow, outflow) = derive_weak_labels(&frame_ids[t - 1], &frame_ids[t]);
            inflows.push(inflow);
            outflows.push(outflow);
        }
    }
    outflows.push(vec![true; frame_ids[n - 1].len()]);

    let frames = frame_dets
        .into_iter()
        .zip(inflows.into_iter().zip(outflows))
        .enumerate()
        .map(|(t, (dets, (inflow, outflow)))| {
            FrameRecord::new(t + 1, t as f64 * cfg.delta, dets, inflow, outflow)
        })
        .collect::<Result<Vec<_>>>()?;
    DetectionStream::new(frames, cfg.delta, cfg.feature_dim)
}

pub fn generate_scene(cfg: &SimConfig) -> Result<DetectionStream> {
    let presence = sample_presence(cfg)?;
    render_scene(cfg, &presence)
}

/// Number of distinct ground-truth identities in the stream.
pub fn gt_unique_count(stream: &DetectionStream) -> Result<usize> {
    let mut ids = BTreeSet::new();
    for frame in stream.frames() {
        for det in frame.detections() {
            let id = det.gt_id().ok_or(Error::MissingGroundTruth {
                frame: frame.frame_index(),
            })?;
            ids.insert(id);
        }
    }
    Ok(ids.len())
}

/// Longest run of consecutive frames any identity is absent between two
/// appearances.
pub fn max_absence_gap(presence: &[Vec<bool>]) -> usize {
    presence
        .iter()
        .map(|row| {
            let mut longest = 0;
            let mut run = 0;
            let mut seen = false;
            for &p in row {
                if p {
                    if seen {
                        longest = longest.max(run);
                    }
                    seen = true;
                    run = 0;
                } else {
                    run += 1;
                }
            }
            longest
        })
        .max()
        .unwrap_or(0)
}
