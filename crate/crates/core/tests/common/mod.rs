//! Independent oracles shared by the integration suites. Nothing here calls
//! into the code paths it is used to check.
#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Inner-product matrix of two sets of random unit vectors.
pub fn random_similarity(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    dim: usize,
) -> Array2<f64> {
    let a: Vec<_> = (0..rows).map(|_| random_unit(rng, dim)).collect();
    let b: Vec<_> = (0..cols).map(|_| random_unit(rng, dim)).collect();
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        a[r].iter()
            .zip(&b[c])
            .map(|(x, y)| x * y)
            .sum::<f64>()
            .clamp(-1.0, 1.0)
    })
}

/// Every permutation of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for k in 0..used.len() {
            if !used[k] {
                used[k] = true;
                prefix.push(k);
                go(prefix, used, out);
                prefix.pop();
                used[k] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Minimum-cost permutation of a square matrix together with the gap to the
/// second-best permutation.
pub fn best_permutation(cost: &Array2<f64>) -> (Vec<usize>, f64, f64) {
    let mut scored: Vec<(f64, Vec<usize>)> = permutations(cost.nrows())
        .into_iter()
        .map(|p| (p.iter().enumerate().map(|(r, &c)| cost[[r, c]]).sum(), p))
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let gap = if scored.len() > 1 {
        scored[1].0 - scored[0].0
    } else {
        f64::INFINITY
    };
    let (best, perm) = scored.swap_remove(0);
    (perm, best, gap)
}

/// Contrastive similarity of shared pair (u, v), summed term by term with no
/// max-shift.
pub fn direct_contrast(s: &Array2<f64>, scale: f64, u: usize, v: usize) -> f64 {
    let e = |r: usize, c: usize| (scale * s[[r, c]]).exp();
    let mut denom = e(u, v);
    for r in 0..s.nrows() {
        if r != u {
            denom += e(r, v);
        }
    }
    for c in 0..s.ncols() {
        if c != v {
            denom += e(u, c);
        }
    }
    e(u, v) / denom
}

/// Pair objective with a fixed plan: -(1/m) Σ Ω∘C over the shared block plus
/// the mean hinge over the unmatched block.
pub fn direct_objective(
    s: &Array2<f64>,
    m: usize,
    omega: &Array2<f64>,
    scale: f64,
    theta: f64,
) -> f64 {
    let mut contrastive = 0.0;
    for u in 0..m {
        for v in 0..m {
            contrastive -= omega[[u, v]] * direct_contrast(s, scale, u, v);
        }
    }
    if m > 0 {
        contrastive /= m as f64;
    }
    let (rows, cols) = s.dim();
    let mut hinge = 0.0;
    let count = (rows - m) * (cols - m);
    for r in m..rows {
        for c in m..cols {
            hinge += (s[[r, c]] - theta).max(0.0);
        }
    }
    if count > 0 {
        hinge /= count as f64;
    }
    contrastive + hinge
}

/// Central finite differences of `f` at every entry of `s`.
pub fn central_differences(
    s: &Array2<f64>,
    h: f64,
    f: impl Fn(&Array2<f64>) -> f64,
) -> Array2<f64> {
    let mut grad = Array2::zeros(s.dim());
    let mut probe = s.clone();
    for idx in ndarray::indices(s.dim()) {
        let (r, c) = idx;
        let orig = s[[r, c]];
        probe[[r, c]] = orig + h;
        let up = f(&probe);
        probe[[r, c]] = orig - h;
        let down = f(&probe);
        probe[[r, c]] = orig;
        grad[[r, c]] = (up - down) / (2.0 * h);
    }
    grad
}

/// Largest entrywise relative error, with denominators floored at 1e-6 so
/// exactly-zero gradients compare absolutely.
pub fn max_relative_error(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
