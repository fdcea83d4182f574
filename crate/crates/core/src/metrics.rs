//! Error measures between an estimate and a ground-truth model.
//!
//! A DoMA model is only identifiable up to a common shift of all blocks and a
//! reordering of the blocks inside each part, so parameter errors are taken
//! after removing both ambiguities.

use itertools::Itertools;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, DomaError, Result};
use crate::model::{Dataset, DomaModel};

/// Largest `k1! * k2!` that [`resolve_ambiguity`] will enumerate.
pub const MAX_PERMUTATION_PAIRS: u128 = 10_000_000;

/// Optimal shift and block matching between an estimate and the truth.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbiguityResolution {
    /// Shift `v` added to every estimated block.
    pub shift: Vec<f64>,
    /// Estimated beta block matched to true block `j` is `perm_beta[j]`.
    pub perm_beta: Vec<usize>,
    /// Estimated alpha block matched to true block `l` is `perm_alpha[l]`.
    pub perm_alpha: Vec<usize>,
    /// `sum_j |beta_hat[perm_beta[j]] - beta*_j + v|^2 + sum_l |alpha_hat[perm_alpha[l]] - alpha*_l + v|^2`
    pub sq_error: f64,
}

fn factorial(k: usize) -> u128 {
    (1..=k as u128).product()
}

fn check_shapes(est: &DomaModel, truth: &DomaModel) -> Result<()> {
    if (est.d(), est.k1(), est.k2()) != (truth.d(), truth.k1(), truth.k2()) {
        return Err(DomaError::InvalidInput(format!(
            "shape mismatch: estimate (d={}, k1={}, k2={}) vs truth (d={}, k1={}, k2={})",
            est.d(),
            est.k1(),
            est.k2(),
            truth.d(),
            truth.k1(),
            truth.k2()
        )));
    }
    Ok(())
}

/// Residual blocks `est[perm[j]] - truth[j]` summed and squared-summed,
/// for every permutation of one part.
struct PartCandidates {
    perms: Vec<Vec<usize>>,
    sums: Vec<Vec<f64>>,
    sq: Vec<f64>,
}

fn part_candidates<'a>(
    est: impl Fn(usize) -> &'a [f64],
    truth: impl Fn(usize) -> &'a [f64],
    k: usize,
    w: usize,
) -> PartCandidates {
    let mut out = PartCandidates { perms: Vec::new(), sums: Vec::new(), sq: Vec::new() };
    for perm in (0..k).permutations(k) {
        let mut sum = vec![0.0; w];
        let mut sq = 0.0;
        for (j, &p) in perm.iter().enumerate() {
            for ((s, e), t) in sum.iter_mut().zip(est(p)).zip(truth(j)) {
                let h = e - t;
                *s += h;
                sq += h * h;
            }
        }
        out.perms.push(perm);
        out.sums.push(sum);
        out.sq.push(sq);
    }
    out
}

/// Exact minimization over block permutations of both parts and a common
/// shift. For fixed permutations the objective is a convex quadratic in the
/// shift whose minimizer is minus the mean residual block; with `S` the sum of
/// the `k1 + k2` residual blocks the minimum is `sum |h|^2 - |S|^2 / (k1 + k2)`.
///
/// Permutations are visited in lexicographic order and only a strictly
/// smaller objective replaces the incumbent.
pub fn resolve_ambiguity(est: &DomaModel, truth: &DomaModel) -> Result<AmbiguityResolution> {
    check_shapes(est, truth)?;
    let (k1, k2, w) = (truth.k1(), truth.k2(), truth.width());
    let pairs = factorial(k1).saturating_mul(factorial(k2));
    if pairs > MAX_PERMUTATION_PAIRS {
        return Err(DomaError::TooLarge(pairs));
    }
    let b = part_candidates(|j| est.beta_block(j), |j| truth.beta_block(j), k1, w);
    let a = part_candidates(|l| est.alpha_block(l), |l| truth.alpha_block(l), k2, w);
    let total = (k1 + k2) as f64;

    let mut best: Option<(f64, usize, usize)> = None;
    for (pb, (sb, qb)) in b.sums.iter().zip(&b.sq).enumerate() {
        for (pa, (sa, qa)) in a.sums.iter().zip(&a.sq).enumerate() {
            let s2: f64 = sb.iter().zip(sa).map(|(x, y)| (x + y) * (x + y)).sum();
            let obj = (qb + qa - s2 / total).max(0.0);
            if best.is_none_or(|(o, _, _)| obj < o) {
                best = Some((obj, pb, pa));
            }
        }
    }
    let (_, pb, pa) = best.expect("at least one permutation pair");
    let shift: Vec<f64> = b.sums[pb].iter().zip(&a.sums[pa]).map(|(x, y)| -(x + y) / total).collect();
    let perm_beta = b.perms[pb].clone();
    let perm_alpha = a.perms[pa].clone();
    // Recompute the objective directly at the minimizer rather than through
    // the expanded form, which cancels catastrophically near zero.
    let mut sq_error = 0.0;
    for (j, &p) in perm_beta.iter().enumerate() {
        sq_error += block_sq_dist(est.beta_block(p), truth.beta_block(j), &shift);
    }
    for (l, &p) in perm_alpha.iter().enumerate() {
        sq_error += block_sq_dist(est.alpha_block(p), truth.alpha_block(l), &shift);
    }
    Ok(AmbiguityResolution { shift, perm_beta, perm_alpha, sq_error })
}

fn block_sq_dist(est: &[f64], truth: &[f64], shift: &[f64]) -> f64 {
    est.iter()
        .zip(truth)
        .zip(shift)
        .map(|((e, t), v)| {
            let r = e - t + v;
            r * r
        })
        .sum()
}

/// Ambiguity-resolved squared error normalized by `|[beta*; alpha*]|^2`.
pub fn relative_param_error(est: &DomaModel, truth: &DomaModel) -> Result<f64> {
    let norm: f64 = truth.beta_stacked().iter().chain(truth.alpha_stacked()).map(|v| v * v).sum();
    if norm == 0.0 {
        return Err(DomaError::DivisionByZero("ground-truth parameters are all zero"));
    }
    Ok(resolve_ambiguity(est, truth)?.sq_error / norm)
}

/// `sum (y_i - f(x_i))^2 / sum y_i^2`.
pub fn test_nmse(model: &DomaModel, data: &Dataset) -> Result<f64> {
    check_dim(model.d(), data.d())?;
    let (mut num, mut den) = (0.0, 0.0);
    for (x, &y) in data.rows().zip(data.targets()) {
        let r = y - model.eval_unchecked(x);
        num += r * r;
        den += y * y;
    }
    if den == 0.0 {
        return Err(DomaError::DivisionByZero("all test targets are zero"));
    }
    Ok(num / den)
}

/// Monte Carlo estimate of `E_x |f_est(x) - f_truth(x)|^2` over standard
/// normal covariates.
pub fn generalization_gap<R: Rng + ?Sized>(
    est: &DomaModel,
    truth: &DomaModel,
    mc_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    check_dim(truth.d(), est.d())?;
    if mc_samples == 0 {
        return Err(DomaError::InvalidInput("mc_samples must be at least 1".into()));
    }
    let mut x = vec![0.0; truth.d()];
    let mut sum = 0.0;
    for _ in 0..mc_samples {
        x.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let r = est.eval_unchecked(&x) - truth.eval_unchecked(&x);
        sum += r * r;
    }
    Ok(sum / mc_samples as f64)
}
