//! Group-level matching loss.
//!
//! Shared individuals of two adjacent frames must be matched one-to-one, but
//! which pairs match is unknown. The soft contrastive term scores every shared
//! pair by a contrastive similarity `C` and weights it by a doubly stochastic
//! plan `Ω` solving balanced optimal transport with cost `1 - C`. Entries of
//! `S1` and `S2` enter only as negatives in the denominator of `C`. The hinge
//! term pushes the outflow-by-inflow block `S3` below a threshold.
//!
//! The soft contrastive loss of a pair is reported divided by `m`; the raw
//! sum is available alongside it.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::assign::{hungarian, Assignment};
use crate::error::{Error, Result};
use crate::model::SimilarityBlocks;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Multiplier applied to similarities inside the exponent (1/γ).
    pub temperature_scale: f64,
    pub hinge_threshold: f64,
    pub sinkhorn_reg: f64,
    pub sinkhorn_max_iters: usize,
    pub sinkhorn_tol: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature_scale: 10.0,
            hinge_threshold: 0.3,
            sinkhorn_reg: 0.05,
            sinkhorn_max_iters: 500,
            sinkhorn_tol: 1e-6,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.temperature_scale) {
            return Err(Error::InvalidConfig(
                "temperature scale must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.hinge_threshold) {
            return Err(Error::InvalidConfig(
                "hinge threshold must lie in [0, 1)".into(),
            ));
        }
        if !positive(self.sinkhorn_reg) {
            return Err(Error::InvalidConfig(
                "sinkhorn regularization must be positive".into(),
            ));
        }
        if self.sinkhorn_max_iters == 0 {
            return Err(Error::InvalidConfig(
                "sinkhorn needs at least one iteration".into(),
            ));
        }
        if !positive(self.sinkhorn_tol) {
            return Err(Error::InvalidConfig(
                "sinkhorn tolerance must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub omega: Array2<f64>,
    pub converged: bool,
    pub iterations_used: usize,
}

impl TransportPlan {
    fn empty() -> Self {
        Self {
            omega: Array2::zeros((0, 0)),
            converged: true,
            iterations_used: 0,
        }
    }

    /// Largest deviation of any row or column sum from 1.
    pub fn marginal_violation(&self) -> f64 {
        marginal_violation(self.omega.view())
    }

    /// Nearest permutation, found as the assignment maximizing total plan mass.
    pub fn round(&self) -> Assignment {
        hungarian(self.omega.mapv(|w| 1.0 - w).view()).expect("plan entries are finite")
    }
}

fn marginal_violation(omega: ArrayView2<'_, f64>) -> f64 {
    let rows = omega.rows().into_iter().map(|r| (r.sum() - 1.0).abs());
    let cols = omega.columns().into_iter().map(|c| (c.sum() - 1.0).abs());
    rows.chain(cols).fold(0.0, f64::max)
}

/// Per-entry contrastive similarity for the shared block, plus the log of
/// each denominator (needed by the gradient).
struct Contrast {
    c: Array2<f64>,
    log_denom: Array2<f64>,
}

fn contrast(s: ArrayView2<'_, f64>, m: usize, scale: f64) -> Contrast {
    let logits = s.mapv(|v| scale * v);
    let row_max: Array1<f64> = logits
        .rows()
        .into_iter()
        .map(|r| r.fold(f64::NEG_INFINITY, |a, &b| a.max(b)))
        .collect();
    let col_max: Array1<f64> = logits
        .columns()
        .into_iter()
        .map(|c| c.fold(f64::NEG_INFINITY, |a, &b| a.max(b)))
        .collect();
    let row_sum: Array1<f64> = logits
        .rows()
        .into_iter()
        .zip(row_max.iter())
        .map(|(r, &mx)| r.iter().map(|&l| (l - mx).exp()).sum())
        .collect();
    let col_sum: Array1<f64> = logits
        .columns()
        .into_iter()
        .zip(col_max.iter())
        .map(|(c, &mx)| c.iter().map(|&l| (l - mx).exp()).sum())
        .collect();

    let mut c = Array2::zeros((m, m));
    let mut log_denom = Array2::zeros((m, m));
    for u in 0..m {
        for v in 0..m {
            let shift = row_max[u].max(col_max[v]);
            let own = (logits[[u, v]] - shift).exp();
            let denom = row_sum[u] * (row_max[u] - shift).exp()
                + col_sum[v] * (col_max[v] - shift).exp()
                - own;
            c[[u, v]] = own / denom;
            log_denom[[u, v]] = shift + denom.ln();
        }
    }
    Contrast { c, log_denom }
}

/// Contrastive similarity of every shared pair. Denominators run over the
/// full row and column of `S`, so `S1`/`S2` entries act as negatives.
pub fn contrastive_similarity(
    blocks: &SimilarityBlocks,
    temperature_scale: f64,
) -> Result<Array2<f64>> {
    if blocks.shared() == 0 {
        return Err(Error::NoSharedIndividuals);
    }
    Ok(contrast(blocks.matrix(), blocks.shared(), temperature_scale).c)
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + values.map(|v| (v - mx).exp()).sum::<f64>().ln()
}

/// Every this many Sinkhorn sweeps, try one Newton step on the dual.
const NEWTON_EVERY: usize = 5;

/// One damped Newton step on the dual potentials. The Hessian system is
/// solved by Jacobi-preconditioned conjugate gradients; the step is halved
/// until the marginal violation drops below `err`. Returns the violation
/// after the step, or `err` unchanged when no step helped.
fn newton_step(cost: ArrayView2<'_, f64>, f: &mut [f64], g: &mut [f64], eps: f64, err: f64) -> f64 {
    let n = f.len();
    let plan = Array2::from_shape_fn((n, n), |(u, v)| ((f[u] + g[v] - cost[[u, v]]) / eps).exp());
    let r: Vec<f64> = plan.rows().into_iter().map(|row| row.sum()).collect();
    let c: Vec<f64> = plan.columns().into_iter().map(|col| col.sum()).collect();
    if r.iter().chain(&c).any(|&x| !(x > 0.0 && x.is_finite())) {
        return err;
    }
    let diag: Vec<f64> = r.iter().chain(&c).copied().collect();
    let apply = |x: &[f64]| -> Vec<f64> {
        let mut y = vec![0.0; 2 * n];
        for u in 0..n {
            let mut acc = r[u] * x[u];
            for v in 0..n {
                acc += plan[[u, v]] * x[n + v];
            }
            y[u] = acc;
        }
        for v in 0..n {
            let mut acc = c[v] * x[n + v];
            for u in 0..n {
                acc += plan[[u, v]] * x[u];
            }
            y[n + v] = acc;
        }
        y
    };
    let rhs: Vec<f64> = r.iter().chain(&c).map(|&s| eps * (1.0 - s)).collect();

    let mut x = vec![0.0; 2 * n];
    let mut res = rhs.clone();
    let mut z: Vec<f64> = res.iter().zip(&diag).map(|(a, d)| a / d).collect();
    let mut dir = z.clone();
    let mut rz: f64 = res.iter().zip(&z).map(|(a, b)| a * b).sum();
    let rhs_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    for _ in 0..4 * n {
        let hd = apply(&dir);
        let curv: f64 = dir.iter().zip(&hd).map(|(a, b)| a * b).sum();
        if curv.is_nan() || curv <= 0.0 {
            break;
        }
        let alpha = rz / curv;
        for i in 0..2 * n {
            x[i] += alpha * dir[i];
            res[i] -= alpha * hd[i];
        }
        if res.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-12 * rhs_norm {
            break;
        }
        z = res.iter().zip(&diag).map(|(a, d)| a / d).collect();
        let rz_next: f64 = res.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..2 * n {
            dir[i] = z[i] + beta * dir[i];
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return err;
    }

    let mut step = 1.0;
    for _ in 0..20 {
        let tf: Vec<f64> = (0..n).map(|u| f[u] + step * x[u]).collect();
        let tg: Vec<f64> = (0..n).map(|v| g[v] + step * x[n + v]).collect();
        let trial = Array2::from_shape_fn((n, n), |(u, v)| {
            ((tf[u] + tg[v] - cost[[u, v]]) / eps).exp()
        });
        let trial_err = marginal_violation(trial.view());
        if trial_err < err {
            f.copy_from_slice(&tf);
            g.copy_from_slice(&tg);
            return trial_err;
        }
        step *= 0.5;
    }
    err
}

/// Entropy-regularized balanced transport between two uniform unit-mass
/// marginals, iterated on dual potentials in the log domain.
///
/// `iterations_used` counts Sinkhorn sweeps; the interleaved Newton steps
/// are not counted separately.
pub fn sinkhorn(
    cost: ArrayView2<'_, f64>,
    reg: f64,
    max_iters: usize,
    tol: f64,
) -> Result<TransportPlan> {
    let (n, m) = cost.dim();
    if n != m {
        return Err(Error::InvalidCostMatrix(format!(
            "expected a square matrix, got {n}x{m}"
        )));
    }
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidCostMatrix("non-finite entry".into()));
    }
    if !(reg > 0.0 && reg.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "sinkhorn regularization must be positive, got {reg}"
        )));
    }
    if n == 0 {
        return Ok(TransportPlan::empty());
    }

    let mut f = vec![0.0f64; n];
    let mut g = vec![0.0f64; n];
    let plan_from = |f: &[f64], g: &[f64], eps: f64| {
        Array2::from_shape_fn((n, n), |(u, v)| ((f[u] + g[v] - cost[[u, v]]) / eps).exp())
    };

    // Epsilon scaling: halve the regularization from the cost range down to
    // `reg`, warm-starting the potentials at each stage. Intermediate stages
    // get a bounded share of the iteration budget.
    let range = cost.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
        - cost.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let mut schedule = Vec::new();
    let mut eps = reg;
    while eps < range {
        eps *= 2.0;
        schedule.push(eps);
    }
    schedule.reverse();
    schedule.push(reg);

    let mut iterations_used = 0;
    let mut converged = false;
    let last_stage = schedule.len() - 1;
    for (stage, &eps) in schedule.iter().enumerate() {
        let budget = if stage == last_stage {
            max_iters - iterations_used
        } else {
            max_iters / (4 * schedule.len())
        };
        for k in 0..budget {
            for u in 0..n {
                f[u] = -eps * log_sum_exp((0..n).map(|v| (g[v] - cost[[u, v]]) / eps));
            }
            for v in 0..n {
                g[v] = -eps * log_sum_exp((0..n).map(|u| (f[u] - cost[[u, v]]) / eps));
            }
            iterations_used += 1;

            let mut err = marginal_violation(plan_from(&f, &g, eps).view());
            if err >= tol && k % NEWTON_EVERY == NEWTON_EVERY - 1 {
                err = newton_step(cost, &mut f, &mut g, eps, err);
            }
            if err < tol {
                converged = stage == last_stage;
                break;
            }
        }
    }

    let omega = plan_from(&f, &g, reg);
    if omega.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidCostMatrix("transport plan diverged".into()));
    }
    Ok(TransportPlan {
        omega,
        converged,
        iterations_used,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveLoss {
    /// `-Σ Ω∘C`, in `[-m, 0]`.
    pub raw: f64,
    /// `raw / m`, or 0 when there are no shared individuals.
    pub normalized: f64,
    pub plan: TransportPlan,
}

pub fn soft_contrastive_loss(
    blocks: &SimilarityBlocks,
    cfg: &LossConfig,
) -> Result<ContrastiveLoss> {
    cfg.validate()?;
    let m = blocks.shared();
    if m == 0 {
        return Ok(ContrastiveLoss {
            raw: 0.0,
            normalized: 0.0,
            plan: TransportPlan::empty(),
        });
    }
    let c = contrast(blocks.matrix(), m, cfg.temperature_scale).c;
    let cost = c.mapv(|v| 1.0 - v);
    let plan = sinkhorn(
        cost.view(),
        cfg.sinkhorn_reg,
        cfg.sinkhorn_max_iters,
        cfg.sinkhorn_tol,
    )?;
    let raw = -(&plan.omega * &c).sum();
    Ok(ContrastiveLoss {
        raw,
        normalized: raw / m as f64,
        plan,
    })
}

/// Contrastive loss with the plan replaced by a known association:
/// `association[u]` is the shared column matched to shared row `u`.
pub fn supervised_contrastive_loss(
    blocks: &SimilarityBlocks,
    association: &[usize],
    cfg: &LossConfig,
) -> Result<f64> {
    cfg.validate()?;
    let m = blocks.shared();
    let mut seen = vec![false; m];
    if association.len() != m {
        return Err(Error::NotBijective(m));
    }
    for &v in association {
        if v >= m || std::mem::replace(&mut seen[v], true) {
            return Err(Error::NotBijective(m));
        }
    }
    if m == 0 {
        return Ok(0.0);
    }
    let c = contrast(blocks.matrix(), m, cfg.temperature_scale).c;
    let raw: f64 = association
        .iter()
        .enumerate()
        .map(|(u, &v)| c[[u, v]])
        .sum();
    Ok(-raw / m as f64)
}

pub fn hinge_loss(s3: ArrayView2<'_, f64>, threshold: f64) -> f64 {
    if s3.is_empty() {
        return 0.0;
    }
    s3.iter().map(|&v| (v - threshold).max(0.0)).sum::<f64>() / s3.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairLoss {
    pub contrastive: ContrastiveLoss,
    pub hinge: f64,
}

impl PairLoss {
    pub fn total(&self) -> f64 {
        self.contrastive.normalized + self.hinge
    }
}

pub fn pair_loss(blocks: &SimilarityBlocks, cfg: &LossConfig) -> Result<PairLoss> {
    Ok(PairLoss {
        contrastive: soft_contrastive_loss(blocks, cfg)?,
        hinge: hinge_loss(blocks.s3(), cfg.hinge_threshold),
    })
}

/// Sum of per-pair totals over all adjacent pairs.
pub fn gml_loss(pairs: &[SimilarityBlocks], cfg: &LossConfig) -> Result<f64> {
    pairs
        .iter()
        .map(|b| pair_loss(b, cfg).map(|l| l.total()))
        .sum()
}

/// Pair objective with `omega` held fixed, evaluated on an arbitrary
/// block-ordered similarity matrix.
pub fn frozen_objective(
    s: ArrayView2<'_, f64>,
    m: usize,
    omega: ArrayView2<'_, f64>,
    cfg: &LossConfig,
) -> f64 {
    let contrastive = if m == 0 {
        0.0
    } else {
        let c = contrast(s, m, cfg.temperature_scale).c;
        -(&omega * &c).sum() / m as f64
    };
    let s3 = s.slice(ndarray::s![m.., m..]);
    contrastive + hinge_loss(s3, cfg.hinge_threshold)
}

/// Analytic gradient of [`frozen_objective`] with respect to every entry of `s`.
pub fn frozen_gradient(
    s: ArrayView2<'_, f64>,
    m: usize,
    omega: ArrayView2<'_, f64>,
    cfg: &LossConfig,
) -> Array2<f64> {
    let (rows, cols) = s.dim();
    let mut grad = Array2::zeros((rows, cols));

    if m > 0 {
        let a = cfg.temperature_scale;
        let Contrast { c, log_denom } = contrast(s, m, a);
        let w = &omega * &c;
        let inv_m = 1.0 / m as f64;
        for x in 0..rows {
            for y in 0..cols {
                let logit = a * s[[x, y]];
                // Σ over shared (u, v) whose denominator contains S[x, y] of
                // Ω_uv C_uv E_xy / D_uv.
                let mut through_denoms = 0.0;
                if x < m {
                    for v in 0..m {
                        through_denoms += w[[x, v]] * (logit - log_denom[[x, v]]).exp();
                    }
                }
                if y < m {
                    for u in 0..m {
                        through_denoms += w[[u, y]] * (logit - log_denom[[u, y]]).exp();
                    }
                }
                let mut d = -a * through_denoms;
                if x < m && y < m {
                    // Counted twice above; plus the numerator term.
                    d += a * w[[x, y]] * c[[x, y]];
                    d += a * w[[x, y]];
                }
                grad[[x, y]] = -inv_m * d;
            }
        }
    }

    let hinge_rows = rows - m;
    let hinge_cols = cols - m;
    if hinge_rows > 0 && hinge_cols > 0 {
        let slope = 1.0 / (hinge_rows * hinge_cols) as f64;
        for x in m..rows {
            for y in m..cols {
                if s[[x, y]] > cfg.hinge_threshold {
                    grad[[x, y]] += slope;
                }
            }
        }
    }
    grad
}

/// Gradient of the pair loss with respect to the full similarity matrix (in
/// block order), treating the solved plan as a constant.
pub fn loss_gradient(blocks: &SimilarityBlocks, cfg: &LossConfig) -> Result<Array2<f64>> {
    let contrastive = soft_contrastive_loss(blocks, cfg)?;
    Ok(frozen_gradient(
        blocks.matrix(),
        blocks.shared(),
        contrastive.plan.omega.view(),
        cfg,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn blocks(s: Array2<f64>, m: usize) -> SimilarityBlocks {
        SimilarityBlocks::from_matrix(s, m).unwrap()
    }

    #[test]
    fn single_pair_contrast_is_one() {
        for s in [-0.7, 0.0, 0.4, 1.0] {
            for scale in [0.5, 10.0, 100.0] {
                let c = contrastive_similarity(&blocks(array![[s]], 1), scale).unwrap();
                assert_eq!(c, array![[1.0]]);
            }
        }
    }

    #[test]
    fn low_temperature_limit() {
        let c = contrastive_similarity(&blocks(array![[1.0, 0.0], [0.0, 1.0]], 2), 200.0).unwrap();
        assert!((c[[0, 0]] - 1.0).abs() < 1e-12);
        assert!(c[[0, 1]] < 1e-12);
    }

    #[test]
    fn contrast_needs_shared() {
        let b = blocks(array![[0.2, 0.1]], 0);
        assert!(matches!(
            contrastive_similarity(&b, 10.0),
            Err(Error::NoSharedIndividuals)
        ));
    }

    #[test]
    fn sinkhorn_trivial() {
        let plan = sinkhorn(array![[3.5]].view(), 0.05, 10, 1e-9).unwrap();
        assert!((plan.omega[[0, 0]] - 1.0).abs() < 1e-12);
        assert!(plan.converged);
    }

    #[test]
    fn sinkhorn_prefers_identity() {
        let plan = sinkhorn(array![[0.0, 1.0], [1.0, 0.0]].view(), 1e-3, 500, 1e-9).unwrap();
        for ((u, v), &w) in plan.omega.indexed_iter() {
            let target = if u == v { 1.0 } else { 0.0 };
            assert!((w - target).abs() < 1e-3);
        }
    }

    #[test]
    fn sinkhorn_rejects_nan() {
        let err = sinkhorn(
            array![[0.0, f64::INFINITY], [1.0, 0.0]].view(),
            0.1,
            10,
            1e-6,
        )
        .unwrap_err();
        assert!(err.to_string().starts_with("invalid cost matrix"));
    }

    #[test]
    fn hinge_examples() {
        assert_eq!(hinge_loss(Array2::zeros((0, 3)).view(), 0.2), 0.0);
        assert!((hinge_loss(array![[0.5]].view(), 0.2) - 0.3).abs() < 1e-12);
        let s3 = array![[0.1, 0.9], [0.3, 0.2]];
        assert!((hinge_loss(s3.view(), 0.3) - 0.15).abs() < 1e-12);
    }

    #[test]
    fn zero_shared_contributes_nothing() {
        let b = blocks(array![[0.1, 0.2]], 0);
        let l = soft_contrastive_loss(&b, &LossConfig::default()).unwrap();
        assert_eq!(l.raw, 0.0);
        assert_eq!(l.plan.omega.len(), 0);
    }

    #[test]
    fn forced_single_pair() {
        let l = soft_contrastive_loss(&blocks(array![[0.3]], 1), &LossConfig::default()).unwrap();
        assert!((l.raw + 1.0).abs() < 1e-12);
        assert!((l.normalized + 1.0).abs() < 1e-12);
    }

    #[test]
    fn supervised_rejects_non_bijection() {
        let b = blocks(array![[1.0, 0.0], [0.0, 1.0]], 2);
        let cfg = LossConfig::default();
        assert!(supervised_contrastive_loss(&b, &[0, 0], &cfg).is_err());
        assert!(supervised_contrastive_loss(&b, &[0], &cfg).is_err());
        assert!(supervised_contrastive_loss(&b, &[1, 2], &cfg).is_err());
    }

    #[test]
    fn hinge_gradient_slopes() {
        let s = array![[0.5]];
        let g = frozen_gradient(
            s.view(),
            0,
            Array2::zeros((0, 0)).view(),
            &LossConfig {
                hinge_threshold: 0.2,
                ..LossConfig::default()
            },
        );
        assert_eq!(g, array![[1.0]]);
        let g = frozen_gradient(
            array![[0.1]].view(),
            0,
            Array2::zeros((0, 0)).view(),
            &LossConfig {
                hinge_threshold: 0.2,
                ..LossConfig::default()
            },
        );
        assert_eq!(g, array![[0.0]]);
    }

    #[test]
    fn config_validation() {
        let bad = LossConfig {
            temperature_scale: 0.0,
            ..LossConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = LossConfig {
            sinkhorn_max_iters: 0,
            ..LossConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
