//! Finite-difference checks of the analytic loss gradient.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::loss::{frozen_objective, loss_gradient, soft_contrastive_loss, LossConfig};
use crate::model::{normalize_feature, SimilarityBlocks};

/// Relative errors use denominators no smaller than this, so entries whose
/// true gradient is zero are compared in absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Dimension of the random features behind [`random_blocks`].
const FEATURE_DIM: usize = 4;

fn random_unit(rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..FEATURE_DIM)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        if let Ok(unit) = normalize_feature(&v) {
            return unit;
        }
    }
}

/// Similarity blocks of random unit features, with at most `max_rows` rows,
/// `max_cols` columns and `max_shared` shared individuals.
pub fn random_blocks(
    rng: &mut impl Rng,
    max_rows: usize,
    max_cols: usize,
    max_shared: usize,
) -> Result<SimilarityBlocks> {
    let rows = rng.random_range(1..=max_rows.max(1));
    let cols = rng.random_range(1..=max_cols.max(1));
    let m = rng.random_range(0..=max_shared.min(rows).min(cols));
    let a: Vec<Vec<f64>> = (0..rows).map(|_| random_unit(rng)).collect();
    let b: Vec<Vec<f64>> = (0..cols).map(|_| random_unit(rng)).collect();
    let s = Array2::from_shape_fn((rows, cols), |(r, c)| {
        a[r].iter()
            .zip(&b[c])
            .map(|(x, y)| x * y)
            .sum::<f64>()
            .clamp(-1.0, 1.0)
    });
    SimilarityBlocks::from_matrix(s, m)
}

/// Largest relative error between [`loss_gradient`] and central differences
/// with step `h` of the pair objective under the same fixed transport plan.
pub fn max_relative_error(blocks: &SimilarityBlocks, cfg: &LossConfig, h: f64) -> Result<f64> {
    let analytic = loss_gradient(blocks, cfg)?;
    let omega = soft_contrastive_loss(blocks, cfg)?.plan.omega;
    let m = blocks.shared();
    let mut probe = blocks.matrix().to_owned();
    let mut worst: f64 = 0.0;
    for (r, c) in ndarray::indices(probe.dim()) {
        let orig = probe[[r, c]];
        probe[[r, c]] = orig + h;
        let up = frozen_objective(probe.view(), m, omega.view(), cfg);
        probe[[r, c]] = orig - h;
        let down = frozen_objective(probe.view(), m, omega.view(), cfg);
        probe[[r, c]] = orig;
        let numeric = (up - down) / (2.0 * h);
        let exact = analytic[[r, c]];
        let err = (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
        worst = worst.max(err);
    }
    Ok(worst)
}
