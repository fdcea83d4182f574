//! Spectral initialization.
//!
//! With standard normal covariates the moments
//! `m1 = E[y x]` and `M2 = E[y (x x^T - I)]` lie in the span of the slope
//! differences `[beta_j - alpha_l]_{1:d}`, a space of dimension at most
//! `k1 + k2 - 1`. The initializer estimates that subspace from the top left
//! singular vectors of `M = m1 m1^T + M2`, draws random candidate models with
//! slopes inside it, polishes each with a few ABGD sweeps and keeps the one
//! with the smallest loss.
//!
//! Candidate `t` draws from its own ChaCha stream `(seed, t)`, so candidate
//! streams are nested across `T` and independent of scheduling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, DomaError, Result};
use crate::model::{Dataset, DomaModel};
use crate::optimizer::{loss, refine};

/// Empirical `m1`, `M2` and `M = m1 m1^T + M2`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimates {
    pub m1: DVector<f64>,
    pub m2: DMatrix<f64>,
    pub m: DMatrix<f64>,
}

/// Orthonormal `d x r` basis of the estimated slope subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    pub v: DMatrix<f64>,
}

impl SubspaceBasis {
    pub fn rank(&self) -> usize {
        self.v.ncols()
    }

    /// Norm of the component of `u` orthogonal to the basis.
    pub fn residual_norm(&self, u: &[f64]) -> f64 {
        let u = DVector::from_column_slice(u);
        let proj = &self.v * (self.v.transpose() * &u);
        (u - proj).norm()
    }
}

/// Magnitude of randomly drawn candidates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateScale {
    /// Sample standard deviation of the targets.
    Auto,
    Fixed(f64),
}

impl std::str::FromStr for CandidateScale {
    type Err = DomaError;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(CandidateScale::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.is_finite() => Ok(CandidateScale::Fixed(v)),
            _ => Err(DomaError::InvalidInput(format!("scale must be `auto` or a non-negative number, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    /// Number of random candidates `T`.
    pub t_candidates: usize,
    /// ABGD sweeps applied to each candidate before scoring.
    pub refine_sweeps: usize,
    pub scale: CandidateScale,
    pub seed: u64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig { t_candidates: 100, refine_sweeps: 5, scale: CandidateScale::Auto, seed: 0 }
    }
}

pub fn estimate_moments(data: &Dataset) -> MomentEstimates {
    let d = data.d();
    let n = data.n() as f64;
    let mut m1 = DVector::<f64>::zeros(d);
    let mut m2 = DMatrix::<f64>::zeros(d, d);
    let mut y_sum = 0.0;
    for (x, &y) in data.rows().zip(data.targets()) {
        y_sum += y;
        for a in 0..d {
            let yx = y * x[a];
            m1[a] += yx;
            for b in a..d {
                m2[(a, b)] += yx * x[b];
            }
        }
    }
    m1 /= n;
    for a in 0..d {
        for b in a..d {
            let v = m2[(a, b)] / n;
            m2[(a, b)] = v;
            m2[(b, a)] = v;
        }
        m2[(a, a)] -= y_sum / n;
    }
    let m = &m1 * m1.transpose() + &m2;
    MomentEstimates { m1, m2, m }
}

/// Top-`r` left singular vectors of `M`, by descending singular value.
pub fn subspace(moments: &MomentEstimates, r: usize) -> Result<SubspaceBasis> {
    let d = moments.m.nrows();
    if r == 0 || r > d {
        return Err(DomaError::InvalidInput(format!("subspace rank must be in 1..={d}, got {r}")));
    }
    let svd = moments.m.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let cols: Vec<_> = order[..r].iter().map(|&c| u.column(c).into_owned()).collect();
    Ok(SubspaceBasis { v: DMatrix::from_columns(&cols) })
}

/// Draws a candidate whose slopes are `scale * V c` with `c ~ N(0, I_r)` and
/// whose intercepts are `N(0, scale^2)`.
pub fn sample_candidate<R: Rng + ?Sized>(
    basis: &SubspaceBasis,
    k1: usize,
    k2: usize,
    scale: f64,
    rng: &mut R,
) -> Result<DomaModel> {
    let (d, r) = basis.v.shape();
    if r == 0 || k1 == 0 || k2 == 0 {
        return Err(DomaError::InvalidInput("candidate sampling needs a non-empty basis and k1, k2 >= 1".into()));
    }
    let mut draw_block = || {
        let c = DVector::from_fn(r, |_, _| rng.sample::<f64, _>(StandardNormal));
        let slope = &basis.v * c;
        let mut theta: Vec<f64> = slope.iter().map(|v| scale * v).collect();
        theta.push(scale * rng.sample::<f64, _>(StandardNormal));
        theta
    };
    let beta: Vec<f64> = (0..k1).flat_map(|_| draw_block()).collect();
    let alpha: Vec<f64> = (0..k2).flat_map(|_| draw_block()).collect();
    DomaModel::from_stacked(d, beta, alpha)
}

fn resolve_scale(scale: CandidateScale, data: &Dataset) -> f64 {
    match scale {
        CandidateScale::Fixed(s) => s,
        CandidateScale::Auto => {
            let y = data.targets();
            let n = y.len() as f64;
            let mean = y.iter().sum::<f64>() / n;
            let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
            let sd = var.sqrt();
            if sd > 0.0 {
                sd
            } else {
                1.0
            }
        }
    }
}

/// Candidate stream `t` of a run seeded with `seed`.
pub fn candidate_rng(seed: u64, t: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t as u64);
    rng
}

/// Best refined candidate together with its loss and the candidate index.
#[derive(Debug, Clone, PartialEq)]
pub struct Initialization {
    pub model: DomaModel,
    pub loss: f64,
    pub candidate: usize,
}

/// Randomized spectral initialization; see the module docs.
pub fn initialize(data: &Dataset, k1: usize, k2: usize, config: &InitConfig) -> Result<DomaModel> {
    initialize_detailed(data, k1, k2, config).map(|init| init.model)
}

/// As [`initialize`], also reporting which candidate won and its loss.
pub fn initialize_detailed(data: &Dataset, k1: usize, k2: usize, config: &InitConfig) -> Result<Initialization> {
    if config.t_candidates == 0 {
        return Err(DomaError::InvalidInput("t_candidates must be at least 1".into()));
    }
    if k1 == 0 || k2 == 0 {
        return Err(DomaError::InvalidInput("k1 and k2 must be at least 1".into()));
    }
    let d = data.d();
    let moments = estimate_moments(data);
    let r = (k1 + k2 - 1).min(d);
    let basis = subspace(&moments, r)?;
    let scale = resolve_scale(config.scale, data);

    let scored: Vec<Option<(f64, DomaModel)>> = (0..config.t_candidates)
        .into_par_iter()
        .map(|t| {
            let mut rng = candidate_rng(config.seed, t);
            let cand = sample_candidate(&basis, k1, k2, scale, &mut rng).ok()?;
            let refined = refine(&cand, data, config.refine_sweeps)?;
            let l = loss(&refined, data).ok()?;
            l.is_finite().then_some((l, refined))
        })
        .collect();

    let mut best: Option<(usize, f64)> = None;
    for (t, s) in scored.iter().enumerate() {
        if let Some((l, _)) = s {
            if best.is_none_or(|(_, b)| *l < b) {
                best = Some((t, *l));
            }
        }
    }
    let (t, l) = best.ok_or(DomaError::InitializationFailed { candidates: config.t_candidates })?;
    let model = scored.into_iter().nth(t).flatten().expect("winner exists").1;
    Ok(Initialization { model, loss: l, candidate: t })
}

/// Numerical rank: singular values above `1e-8` times the largest.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > 1e-8 * max).count()
}

/// Rank of the `(d+1) x (k1 k2)` matrix of all differences `beta_j - alpha_l`.
pub fn pairwise_difference_rank(model: &DomaModel) -> usize {
    let cols: Vec<DVector<f64>> = model
        .beta_blocks()
        .flat_map(|b| {
            model.alpha_blocks().map(move |a| DVector::from_iterator(b.len(), b.iter().zip(a).map(|(x, y)| x - y)))
        })
        .collect();
    numerical_rank(&DMatrix::from_columns(&cols))
}

/// Rank of `{theta - v}` over all blocks `theta` of both parts, where `v` is
/// block `anchor` of the concatenation `[beta_1..beta_k1, alpha_1..alpha_k2]`.
pub fn shifted_stack_rank(model: &DomaModel, anchor: usize) -> Result<usize> {
    let blocks: Vec<&[f64]> = model.beta_blocks().chain(model.alpha_blocks()).collect();
    let v = *blocks
        .get(anchor)
        .ok_or_else(|| DomaError::InvalidInput(format!("anchor {anchor} out of range ({} blocks)", blocks.len())))?;
    let cols: Vec<DVector<f64>> =
        blocks.iter().map(|t| DVector::from_iterator(v.len(), t.iter().zip(v).map(|(x, y)| x - y))).collect();
    Ok(numerical_rank(&DMatrix::from_columns(&cols)))
}

/// Monte Carlo evaluation of `sum_{j,l} [beta_j - alpha_l]_{1:d} P(x in C_j cap C_l)`
/// under standard normal covariates, by classifying draws into cells.
pub fn population_m1_oracle<R: Rng + ?Sized>(
    model: &DomaModel,
    mc_samples: usize,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if mc_samples == 0 {
        return Err(DomaError::InvalidInput("mc_samples must be at least 1".into()));
    }
    let d = model.d();
    let mut counts = vec![0usize; model.k1() * model.k2()];
    let mut x = vec![0.0; d];
    for _ in 0..mc_samples {
        x.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let (j, l) = model.argmax_pair(&x)?;
        counts[j * model.k2() + l] += 1;
    }
    let mut m1 = DVector::zeros(d);
    for j in 0..model.k1() {
        for l in 0..model.k2() {
            let c = counts[j * model.k2() + l];
            if c == 0 {
                continue;
            }
            let p = c as f64 / mc_samples as f64;
            let (b, a) = (model.beta_block(j), model.alpha_block(l));
            for i in 0..d {
                m1[i] += (b[i] - a[i]) * p;
            }
        }
    }
    check_dim(d, m1.len())?;
    Ok(m1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data_from(model: &DomaModel, xs: Vec<Vec<f64>>) -> Dataset {
        let ys = xs.iter().map(|x| model.evaluate(x).unwrap()).collect();
        Dataset::new(xs, ys).unwrap()
    }

    #[test]
    fn zero_targets_give_zero_moments() {
        let data = Dataset::new(vec![vec![1.0, 2.0], vec![-0.5, 0.3]], vec![0.0, 0.0]).unwrap();
        let m = estimate_moments(&data);
        assert!(m.m1.iter().all(|&v| v == 0.0));
        assert!(m.m2.iter().all(|&v| v == 0.0));
        assert!(m.m.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn moments_match_direct_sums() {
        let xs = vec![vec![1.0, 2.0], vec![-0.5, 0.3], vec![0.2, -1.0]];
        let ys = vec![1.5, -2.0, 0.7];
        let data = Dataset::new(xs.clone(), ys.clone()).unwrap();
        let m = estimate_moments(&data);
        for a in 0..2 {
            let m1: f64 = xs.iter().zip(&ys).map(|(x, y)| y * x[a]).sum::<f64>() / 3.0;
            assert!((m.m1[a] - m1).abs() < 1e-15);
            for b in 0..2 {
                let delta = if a == b { 1.0 } else { 0.0 };
                let m2: f64 = xs.iter().zip(&ys).map(|(x, y)| y * (x[a] * x[b] - delta)).sum::<f64>() / 3.0;
                assert!((m.m2[(a, b)] - m2).abs() < 1e-15);
                assert!((m.m[(a, b)] - (m.m1[a] * m.m1[b] + m.m2[(a, b)])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rank_one_subspace() {
        let u = DVector::from_vec(vec![1.0, 2.0, -2.0]);
        let w = DVector::from_vec(vec![0.5, 0.0, 1.0]);
        let m = &u * w.transpose();
        let est = MomentEstimates { m1: DVector::zeros(3), m2: m.clone(), m };
        let basis = subspace(&est, 1).unwrap();
        let cos = (basis.v.column(0).dot(&u) / u.norm()).abs();
        assert!((cos - 1.0).abs() < 1e-10);
        assert!(subspace(&est, 4).is_err());
        assert!(subspace(&est, 0).is_err());
    }

    #[test]
    fn degenerate_zero_matrix_subspace() {
        let est = MomentEstimates { m1: DVector::zeros(3), m2: DMatrix::zeros(3, 3), m: DMatrix::zeros(3, 3) };
        let basis = subspace(&est, 2).unwrap();
        let gram = basis.v.transpose() * &basis.v;
        assert!((gram - DMatrix::identity(2, 2)).norm() < 1e-10);
    }

    #[test]
    fn candidates_live_in_the_subspace_and_are_reproducible() {
        let est = MomentEstimates {
            m1: DVector::zeros(4),
            m2: DMatrix::zeros(4, 4),
            m: DMatrix::from_fn(4, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0),
        };
        let basis = subspace(&est, 2).unwrap();
        let a = sample_candidate(&basis, 3, 2, 1.7, &mut candidate_rng(9, 0)).unwrap();
        let b = sample_candidate(&basis, 3, 2, 1.7, &mut candidate_rng(9, 0)).unwrap();
        assert_eq!(a, b);
        for theta in a.beta_blocks().chain(a.alpha_blocks()) {
            assert!(basis.residual_norm(&theta[..4]) <= 1e-10);
        }
        let zero = sample_candidate(&basis, 3, 2, 0.0, &mut candidate_rng(9, 1)).unwrap();
        assert!(zero.beta_stacked().iter().chain(zero.alpha_stacked()).all(|&v| v == 0.0));
    }

    #[test]
    fn single_zero_candidate_is_returned() {
        let truth = DomaModel::new(vec![vec![1.0, 0.0, 0.5]], vec![vec![0.0, 1.0, 0.0]]).unwrap();
        let xs = (0..10).map(|i| vec![(i as f64).sin(), (i as f64 * 1.3).cos()]).collect();
        let data = data_from(&truth, xs);
        let cfg = InitConfig { t_candidates: 1, refine_sweeps: 0, scale: CandidateScale::Fixed(0.0), seed: 0 };
        assert_eq!(initialize(&data, 2, 1, &cfg).unwrap(), DomaModel::zeros(2, 2, 1).unwrap());
    }

    #[test]
    fn more_candidates_never_hurt() {
        let truth = DomaModel::new(
            vec![vec![1.0, 0.0, 0.5], vec![-1.0, 0.4, 0.0]],
            vec![vec![0.0, 1.0, 0.0], vec![0.3, -0.8, 0.2]],
        )
        .unwrap();
        let xs = (0..60).map(|i| vec![(i as f64 * 0.7).sin() * 2.0, (i as f64 * 1.3).cos() * 1.5]).collect();
        let data = data_from(&truth, xs);
        let mut prev = f64::INFINITY;
        for t in [5, 20, 50] {
            let cfg = InitConfig { t_candidates: t, refine_sweeps: 2, seed: 11, ..InitConfig::default() };
            let best = initialize_detailed(&data, 2, 2, &cfg).unwrap();
            assert!(best.loss <= prev);
            prev = best.loss;
        }
    }

    #[test]
    fn difference_rank_examples() {
        let same = DomaModel::new(vec![vec![1.0, 2.0]], vec![vec![1.0, 2.0]]).unwrap();
        assert_eq!(pairwise_difference_rank(&same), 0);
        let one = DomaModel::new(vec![vec![1.0, 2.0]], vec![vec![0.0, 2.0]]).unwrap();
        assert_eq!(pairwise_difference_rank(&one), 1);
        let two = DomaModel::new(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]], vec![vec![0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(pairwise_difference_rank(&two), 2);
        for anchor in 0..3 {
            assert_eq!(shifted_stack_rank(&two, anchor).unwrap(), 2);
        }
        assert!(shifted_stack_rank(&two, 3).is_err());
    }

    #[test]
    fn single_cell_oracle_is_exact() {
        let m = DomaModel::new(vec![vec![1.0, -2.0, 0.5]], vec![vec![0.25, 1.0, 3.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m1 = population_m1_oracle(&m, 10, &mut rng).unwrap();
        assert_eq!(m1.as_slice(), &[0.75, -3.0]);
    }

    #[test]
    fn abs_model_oracle_is_near_zero() {
        let m = DomaModel::new(vec![vec![1.0, 0.0], vec![-1.0, 0.0]], vec![vec![0.0, 0.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mc = 100_000;
        let m1 = population_m1_oracle(&m, mc, &mut rng).unwrap();
        assert!(m1[0].abs() < 3.0 / (mc as f64).sqrt());
    }

    #[test]
    fn scale_parsing() {
        assert_eq!("auto".parse::<CandidateScale>().unwrap(), CandidateScale::Auto);
        assert_eq!("2.5".parse::<CandidateScale>().unwrap(), CandidateScale::Fixed(2.5));
        assert!("-1".parse::<CandidateScale>().is_err());
        assert!("big".parse::<CandidateScale>().is_err());
    }
}
