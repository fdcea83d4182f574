//! Synthetic ground truths, covariate samplers and seeded Monte Carlo grids.
//!
//! Every trial is a pure function of its cell, settings and a 64-bit seed.
//! Trial seeds come from [`trial_seed`], a SplitMix64 mix of
//! `(base_seed, cell index, trial index)`, and each trial splits its seed into
//! independent ChaCha streams for the ground truth, training data, test data
//! and initializer. Grid output therefore does not depend on scheduling.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DomaError, Result};
use crate::metrics::{relative_param_error, test_nmse};
use crate::model::{Dataset, DomaModel};
use crate::optimizer::{fit, FitConfig};
use crate::spectral::{initialize, CandidateScale, InitConfig};

/// Consecutive rejections tolerated by [`sample_ground_truth`].
pub const MAX_REJECTIONS: usize = 1000;
/// Probe draws used to estimate cell probabilities of a candidate truth.
pub const CELL_PROBES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSpec {
    pub d: usize,
    pub k1: usize,
    pub k2: usize,
    /// Minimum pairwise slope distance inside each part.
    pub kappa_min: f64,
    /// Standard deviation of every sampled parameter entry.
    pub param_scale: f64,
    pub seed: u64,
}

impl GroundTruthSpec {
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// Zero-mean covariate laws with identity covariance (after rescaling).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CovariateDistribution {
    #[default]
    StandardNormal,
    /// Uniform on `[-h, h]^d`, rescaled to unit variance per coordinate.
    UniformCube { half_width: f64 },
    /// Mixture of `N(c_m, I)` components. Centers are re-centered on their
    /// weighted mean and the draw is divided by `sqrt(1 + sum_m w_m |c_m|^2 / d)`
    /// so that the average coordinate variance is one.
    GaussianMixture { centers: Vec<Vec<f64>>, weights: Vec<f64> },
}

impl CovariateDistribution {
    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            CovariateDistribution::StandardNormal => Ok(()),
            CovariateDistribution::UniformCube { half_width } => {
                if *half_width > 0.0 && half_width.is_finite() {
                    Ok(())
                } else {
                    Err(DomaError::InvalidInput(format!("half_width must be positive, got {half_width}")))
                }
            }
            CovariateDistribution::GaussianMixture { centers, weights } => {
                if centers.is_empty() || centers.len() != weights.len() {
                    return Err(DomaError::InvalidInput(
                        "mixture needs one weight per center and at least one center".into(),
                    ));
                }
                if centers.iter().any(|c| c.len() != d) {
                    return Err(DomaError::DimensionMismatch {
                        expected: d,
                        found: centers.iter().map(Vec::len).find(|&l| l != d).unwrap_or(d),
                    });
                }
                let total: f64 = weights.iter().sum();
                if weights.iter().any(|w| *w < 0.0) || (total - 1.0).abs() > 1e-9 {
                    return Err(DomaError::InvalidInput(format!(
                        "mixture weights must be non-negative and sum to 1, got sum {total}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Fills `x` with one draw. Assumes [`Self::validate`] passed for `x.len()`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, x: &mut [f64]) {
        match self {
            CovariateDistribution::StandardNormal => {
                x.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            }
            CovariateDistribution::UniformCube { .. } => {
                // U(-h, h) has variance h^2 / 3; after rescaling h drops out.
                let a = 3f64.sqrt();
                x.iter_mut().for_each(|v| *v = rng.random_range(-a..a));
            }
            CovariateDistribution::GaussianMixture { centers, weights } => {
                let d = x.len();
                let mut mean = vec![0.0; d];
                for (c, w) in centers.iter().zip(weights) {
                    mean.iter_mut().zip(c).for_each(|(m, cv)| *m += w * cv);
                }
                let spread: f64 = centers
                    .iter()
                    .zip(weights)
                    .map(|(c, w)| w * c.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                    .sum();
                let norm = (1.0 + spread / d as f64).sqrt();
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = centers.len() - 1;
                for (m, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        pick = m;
                        break;
                    }
                }
                for ((v, c), m) in x.iter_mut().zip(&centers[pick]).zip(&mean) {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = (c - m + z) / norm;
                }
            }
        }
    }
}

/// Smallest pairwise slope distance inside either part, or `None` when both
/// parts have a single block.
pub fn slope_separation(model: &DomaModel) -> Option<f64> {
    let d = model.d();
    let mut best: Option<f64> = None;
    for blocks in [model.beta_blocks().collect::<Vec<_>>(), model.alpha_blocks().collect::<Vec<_>>()] {
        for (i, a) in blocks.iter().enumerate() {
            for b in &blocks[i + 1..] {
                let dist = a[..d].iter().zip(&b[..d]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                best = Some(best.map_or(dist, |v: f64| v.min(dist)));
            }
        }
    }
    best
}

/// Empirical cell probabilities of a model under standard normal covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMass {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    /// `joint[j * k2 + l]`: probability of landing in beta cell `j` and alpha cell `l`.
    pub joint: Vec<f64>,
}

impl CellMass {
    pub fn min_cell(&self) -> f64 {
        self.beta.iter().chain(&self.alpha).cloned().fold(f64::INFINITY, f64::min)
    }

    /// Largest exponent `r` with `P(C_j cap C_l) <= P(C_j) / k1^r` and
    /// `<= P(C_l) / k2^r` for every pair; `None` if no pair constrains it.
    pub fn intersection_exponent(&self) -> Option<f64> {
        let (k1, k2) = (self.beta.len(), self.alpha.len());
        let mut r = f64::INFINITY;
        for j in 0..k1 {
            for l in 0..k2 {
                let p = self.joint[j * k2 + l];
                if p == 0.0 {
                    continue;
                }
                if k1 > 1 {
                    r = r.min((self.beta[j] / p).ln() / (k1 as f64).ln());
                }
                if k2 > 1 {
                    r = r.min((self.alpha[l] / p).ln() / (k2 as f64).ln());
                }
            }
        }
        r.is_finite().then_some(r)
    }
}

pub fn cell_mass<R: Rng + ?Sized>(model: &DomaModel, probes: usize, rng: &mut R) -> CellMass {
    let (k1, k2) = (model.k1(), model.k2());
    let mut joint = vec![0usize; k1 * k2];
    let mut x = vec![0.0; model.d()];
    for _ in 0..probes {
        x.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let (j, l) = model.argmax_pair(&x).expect("probe has model dimension");
        joint[j * k2 + l] += 1;
    }
    let p = |c: usize| c as f64 / probes as f64;
    CellMass {
        beta: (0..k1).map(|j| p((0..k2).map(|l| joint[j * k2 + l]).sum())).collect(),
        alpha: (0..k2).map(|l| p((0..k1).map(|j| joint[j * k2 + l]).sum())).collect(),
        joint: joint.into_iter().map(p).collect(),
    }
}

/// Draws parameters i.i.d. `N(0, param_scale^2)` until the slope separation
/// reaches `kappa_min` and every cell carries at least `1 / (4k)` of the
/// probe mass, `k = max(k1, k2)`.
pub fn sample_ground_truth<R: Rng + ?Sized>(spec: &GroundTruthSpec, rng: &mut R) -> Result<DomaModel> {
    let GroundTruthSpec { d, k1, k2, kappa_min, param_scale, .. } = *spec;
    if d == 0 || k1 == 0 || k2 == 0 {
        return Err(DomaError::InvalidInput("d, k1 and k2 must be at least 1".into()));
    }
    if kappa_min.is_nan() || kappa_min < 0.0 || param_scale.is_nan() || param_scale <= 0.0 {
        return Err(DomaError::InvalidInput(format!(
            "need kappa_min >= 0 and param_scale > 0, got {kappa_min} and {param_scale}"
        )));
    }
    let floor = 1.0 / (4.0 * k1.max(k2) as f64);
    let w = d + 1;
    for _ in 0..MAX_REJECTIONS {
        let mut draw =
            |len: usize| -> Vec<f64> { (0..len).map(|_| param_scale * rng.sample::<f64, _>(StandardNormal)).collect() };
        let beta = draw(k1 * w);
        let alpha = draw(k2 * w);
        let model = DomaModel::from_stacked(d, beta, alpha)?;
        if slope_separation(&model).is_some_and(|s| s < kappa_min) {
            continue;
        }
        let mass = cell_mass(&model, CELL_PROBES, rng);
        if mass.min_cell() < floor {
            continue;
        }
        log::debug!(
            "ground truth accepted: min cell mass {:.3}, intersection exponent {:?}",
            mass.min_cell(),
            mass.intersection_exponent()
        );
        return Ok(model);
    }
    Err(DomaError::InfeasibleSpec(format!(
        "{MAX_REJECTIONS} consecutive draws violated kappa_min = {kappa_min} or the cell-mass floor {floor:.4}"
    )))
}

/// `y_i = f(x_i) + z_i` with `x_i ~ dist` and `z_i ~ N(0, sigma_z^2)`.
pub fn generate_dataset<R: Rng + ?Sized>(
    model: &DomaModel,
    n: usize,
    dist: &CovariateDistribution,
    sigma_z: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if n == 0 {
        return Err(DomaError::InvalidInput("n must be at least 1".into()));
    }
    if !sigma_z.is_finite() || sigma_z < 0.0 {
        return Err(DomaError::InvalidInput(format!("sigma_z must be non-negative, got {sigma_z}")));
    }
    let d = model.d();
    dist.validate(d)?;
    let mut x = vec![0.0; n * d];
    let mut y = Vec::with_capacity(n);
    for row in x.chunks_exact_mut(d) {
        dist.sample_into(rng, row);
        let z = if sigma_z > 0.0 { sigma_z * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
        y.push(model.eval_unchecked(row) + z);
    }
    Dataset::from_flat(d, x, y)
}

/// Moves the stacked beta and the stacked alpha each by exactly `radius`
/// along independent uniformly random directions.
pub fn perturbed_init<R: Rng + ?Sized>(truth: &DomaModel, radius: f64, rng: &mut R) -> Result<DomaModel> {
    if !radius.is_finite() || radius < 0.0 {
        return Err(DomaError::InvalidInput(format!("radius must be non-negative, got {radius}")));
    }
    let mut perturb = |params: &[f64]| -> Vec<f64> {
        let dir: Vec<f64> = params.iter().map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        params.iter().zip(&dir).map(|(p, u)| p + radius * u / norm).collect()
    };
    let beta = perturb(truth.beta_stacked());
    let alpha = perturb(truth.alpha_stacked());
    DomaModel::from_stacked(truth.d(), beta, alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Truth perturbed inside the basin of attraction.
    OraclePerturbation,
    /// Randomized spectral initializer.
    Spectral,
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitKind::OraclePerturbation => "oracle_perturbation",
            InitKind::Spectral => "spectral",
        })
    }
}

impl FromStr for InitKind {
    type Err = DomaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle_perturbation" | "oracle" => Ok(InitKind::OraclePerturbation),
            "spectral" => Ok(InitKind::Spectral),
            other => Err(DomaError::InvalidInput(format!("unknown init kind `{other}`"))),
        }
    }
}

/// One `(n, d, k1, k2, sigma_z)` point of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub n: usize,
    pub d: usize,
    pub k1: usize,
    pub k2: usize,
    pub sigma_z: f64,
}

/// Knobs shared by every trial of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialSettings {
    pub kappa_min: f64,
    pub param_scale: f64,
    /// Oracle perturbation radius in units of the truth's slope separation.
    pub radius_kappa: f64,
    pub covariates: CovariateDistribution,
    /// Size of the noiseless test set used for NMSE.
    pub n_test: usize,
    pub fit: FitConfig,
    pub t_candidates: usize,
    pub refine_sweeps: usize,
    pub scale: CandidateScale,
}

impl Default for TrialSettings {
    fn default() -> Self {
        let init = InitConfig::default();
        TrialSettings {
            kappa_min: 0.5,
            param_scale: 1.0,
            radius_kappa: 0.05,
            covariates: CovariateDistribution::StandardNormal,
            n_test: 1000,
            fit: FitConfig::default(),
            t_candidates: init.t_candidates,
            refine_sweeps: init.refine_sweeps,
            scale: init.scale,
        }
    }
}

/// Outcome of a single trial. A failed trial keeps its slot with
/// `rel_error = nmse = inf` and `converged = false`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub n: usize,
    pub d: usize,
    pub k1: usize,
    pub k2: usize,
    pub sigma_z: f64,
    pub seed: u64,
    pub init_kind: InitKind,
    pub rel_error: f64,
    pub nmse: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl TrialRecord {
    pub fn failed(&self) -> bool {
        !self.rel_error.is_finite()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `splitmix64(splitmix64(splitmix64(base) ^ cell) ^ trial)`.
pub fn trial_seed(base_seed: u64, cell: usize, trial: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(base_seed) ^ cell as u64) ^ trial as u64)
}

/// Named sub-streams of a trial seed.
#[derive(Debug, Clone, Copy)]
pub enum TrialStream {
    Truth = 0,
    Train = 1,
    Test = 2,
    Init = 3,
}

pub fn trial_rng(seed: u64, stream: TrialStream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Everything a trial produces, for callers that need more than the record.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub truth: DomaModel,
    pub train: Dataset,
    pub init: DomaModel,
    pub record: TrialRecord,
    pub estimate: Option<DomaModel>,
}

/// Samples the truth, training data and initialization of a trial.
pub fn prepare_trial(
    cell: &GridCell,
    seed: u64,
    init_kind: InitKind,
    settings: &TrialSettings,
) -> Result<(DomaModel, Dataset, DomaModel)> {
    let spec = GroundTruthSpec {
        d: cell.d,
        k1: cell.k1,
        k2: cell.k2,
        kappa_min: settings.kappa_min,
        param_scale: settings.param_scale,
        seed,
    };
    let truth = sample_ground_truth(&spec, &mut trial_rng(seed, TrialStream::Truth))?;
    let train =
        generate_dataset(&truth, cell.n, &settings.covariates, cell.sigma_z, &mut trial_rng(seed, TrialStream::Train))?;
    let init = match init_kind {
        InitKind::OraclePerturbation => {
            let kappa = slope_separation(&truth).unwrap_or(1.0);
            perturbed_init(&truth, settings.radius_kappa * kappa, &mut trial_rng(seed, TrialStream::Init))?
        }
        InitKind::Spectral => {
            let cfg = InitConfig {
                t_candidates: settings.t_candidates,
                refine_sweeps: settings.refine_sweeps,
                scale: settings.scale,
                seed: trial_rng(seed, TrialStream::Init).random(),
            };
            initialize(&train, cell.k1, cell.k2, &cfg)?
        }
    };
    Ok((truth, train, init))
}

/// Runs one seeded trial end to end.
pub fn run_trial(cell: &GridCell, seed: u64, init_kind: InitKind, settings: &TrialSettings) -> Result<TrialOutcome> {
    let (truth, train, init) = prepare_trial(cell, seed, init_kind, settings)?;
    let mut record = TrialRecord {
        n: cell.n,
        d: cell.d,
        k1: cell.k1,
        k2: cell.k2,
        sigma_z: cell.sigma_z,
        seed,
        init_kind,
        rel_error: f64::INFINITY,
        nmse: f64::INFINITY,
        iterations: 0,
        converged: false,
    };
    let estimate = match fit(&train, &init, &settings.fit) {
        Ok(report) => {
            let test = generate_dataset(
                &truth,
                settings.n_test.max(1),
                &settings.covariates,
                0.0,
                &mut trial_rng(seed, TrialStream::Test),
            )?;
            record.rel_error = relative_param_error(&report.model, &truth)?;
            record.nmse = test_nmse(&report.model, &test).unwrap_or(f64::INFINITY);
            record.iterations = report.iterations;
            record.converged = report.converged;
            Some(report.model)
        }
        Err(DomaError::Divergence { iterations, .. }) => {
            record.iterations = iterations;
            None
        }
        Err(e) => return Err(e),
    };
    Ok(TrialOutcome { truth, train, init, record, estimate })
}

/// Runs `trials_per_cell` seeded trials for every cell, in parallel, and
/// returns the records ordered by `(cell, trial)`. Trial errors never abort
/// the grid; they produce a flagged record.
pub fn run_grid(
    grid: &[GridCell],
    trials_per_cell: usize,
    init_kind: InitKind,
    base_seed: u64,
    settings: &TrialSettings,
) -> Result<Vec<TrialRecord>> {
    if trials_per_cell == 0 {
        return Err(DomaError::InvalidInput("trials_per_cell must be at least 1".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|c| (0..trials_per_cell).map(move |t| (c, t))).collect();
    Ok(jobs
        .into_par_iter()
        .map(|(c, t)| {
            let cell = &grid[c];
            let seed = trial_seed(base_seed, c, t);
            match run_trial(cell, seed, init_kind, settings) {
                Ok(outcome) => outcome.record,
                Err(e) => {
                    log::warn!("trial (cell {c}, trial {t}) failed: {e}");
                    TrialRecord {
                        n: cell.n,
                        d: cell.d,
                        k1: cell.k1,
                        k2: cell.k2,
                        sigma_z: cell.sigma_z,
                        seed,
                        init_kind,
                        rel_error: f64::INFINITY,
                        nmse: f64::INFINITY,
                        iterations: 0,
                        converged: false,
                    }
                }
            }
        })
        .collect())
}

/// A grid definition as read from a TOML or JSON config. Cells are the
/// explicit `cells` followed by the product `d x n_over_d x k x sigma_z`
/// (with `n = d * n_over_d` and `k1 = k2 = k`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentGrid {
    pub cells: Vec<GridCell>,
    pub d: Vec<usize>,
    pub n_over_d: Vec<usize>,
    pub k: Vec<usize>,
    pub sigma_z: Vec<f64>,
    pub trials_per_cell: usize,
    pub init_kind: InitKind,
    pub base_seed: u64,
    pub settings: TrialSettings,
}

impl Default for ExperimentGrid {
    /// The desk-scale phase-transition sweep.
    fn default() -> Self {
        ExperimentGrid {
            cells: Vec::new(),
            d: vec![5, 10, 20],
            n_over_d: vec![2, 5, 10, 20, 50, 100],
            k: vec![2],
            sigma_z: vec![0.0, 0.1],
            trials_per_cell: 20,
            init_kind: InitKind::OraclePerturbation,
            base_seed: 0,
            settings: TrialSettings::default(),
        }
    }
}

impl ExperimentGrid {
    pub fn expand(&self) -> Vec<GridCell> {
        let mut cells = self.cells.clone();
        for &d in &self.d {
            for &ratio in &self.n_over_d {
                for &k in &self.k {
                    for &sigma_z in &self.sigma_z {
                        cells.push(GridCell { n: d * ratio, d, k1: k, k2: k, sigma_z });
                    }
                }
            }
        }
        cells
    }

    pub fn run(&self) -> Result<Vec<TrialRecord>> {
        run_grid(&self.expand(), self.trials_per_cell, self.init_kind, self.base_seed, &self.settings)
    }
}

/// Per-cell medians of a record table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub n: usize,
    pub d: usize,
    pub k1: usize,
    pub k2: usize,
    pub sigma_z: f64,
    pub init_kind: InitKind,
    pub trials: usize,
    pub median_rel_error: f64,
    pub median_log10_rel_error: f64,
    pub median_nmse: f64,
    pub converged_fraction: f64,
}

/// Median with infinities sorted last; average of the middle pair for even counts.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 || v[m - 1] == v[m] {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Groups records by cell, in order of first appearance.
pub fn summarize(records: &[TrialRecord]) -> Vec<CellSummary> {
    let key = |r: &TrialRecord| (r.n, r.d, r.k1, r.k2, r.sigma_z.to_bits(), r.init_kind);
    let mut groups: Vec<(_, Vec<&TrialRecord>)> = Vec::new();
    for r in records {
        match groups.iter_mut().find(|(k, _)| *k == key(r)) {
            Some((_, g)) => g.push(r),
            None => groups.push((key(r), vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|(_, g)| {
            let first = g[0];
            let rel: Vec<f64> = g.iter().map(|r| r.rel_error).collect();
            let log_rel: Vec<f64> = rel.iter().map(|e| e.log10()).collect();
            let nmse: Vec<f64> = g.iter().map(|r| r.nmse).collect();
            CellSummary {
                n: first.n,
                d: first.d,
                k1: first.k1,
                k2: first.k2,
                sigma_z: first.sigma_z,
                init_kind: first.init_kind,
                trials: g.len(),
                median_rel_error: median(&rel),
                median_log10_rel_error: median(&log_rel),
                median_nmse: median(&nmse),
                converged_fraction: g.iter().filter(|r| r.converged).count() as f64 / g.len() as f64,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::loss;

    fn spec(d: usize, k: usize, kappa_min: f64) -> GroundTruthSpec {
        GroundTruthSpec { d, k1: k, k2: k, kappa_min, param_scale: 1.0, seed: 1 }
    }

    #[test]
    fn single_block_truth_is_accepted_immediately() {
        let s = spec(3, 1, 1e9);
        let m = sample_ground_truth(&s, &mut s.rng()).unwrap();
        assert_eq!((m.k1(), m.k2()), (1, 1));
    }

    #[test]
    fn sampled_truth_satisfies_constraints_on_fresh_probes() {
        let s = spec(5, 2, 0.5);
        let m = sample_ground_truth(&s, &mut s.rng()).unwrap();
        assert!(slope_separation(&m).unwrap() >= 0.5);
        let mass = cell_mass(&m, 20_000, &mut ChaCha8Rng::seed_from_u64(77));
        // floor 1/8 = 0.125, minus a few probe standard errors
        assert!(mass.min_cell() > 0.125 - 0.015, "{mass:?}");
    }

    #[test]
    fn impossible_separation_is_infeasible() {
        let s = spec(2, 2, 1e6);
        assert!(matches!(sample_ground_truth(&s, &mut s.rng()), Err(DomaError::InfeasibleSpec(_))));
    }

    #[test]
    fn noiseless_dataset_has_zero_loss() {
        let s = spec(4, 2, 0.5);
        let m = sample_ground_truth(&s, &mut s.rng()).unwrap();
        let data = generate_dataset(&m, 200, &CovariateDistribution::StandardNormal, 0.0, &mut s.rng()).unwrap();
        assert_eq!(loss(&m, &data).unwrap(), 0.0);
    }

    #[test]
    fn noise_level_sets_the_loss() {
        let s = spec(3, 2, 0.5);
        let m = sample_ground_truth(&s, &mut s.rng()).unwrap();
        let n = 20_000;
        let data = generate_dataset(&m, n, &CovariateDistribution::StandardNormal, 0.1, &mut s.rng()).unwrap();
        let l = loss(&m, &data).unwrap();
        let tol = 3.0 * 0.01 / (2.0 * n as f64).sqrt();
        assert!((l - 0.005).abs() < tol, "loss {l}");
    }

    #[test]
    fn datasets_are_reproducible() {
        let s = spec(3, 2, 0.5);
        let m = sample_ground_truth(&s, &mut s.rng()).unwrap();
        let dist = CovariateDistribution::UniformCube { half_width: 2.0 };
        let a = generate_dataset(&m, 50, &dist, 0.1, &mut trial_rng(4, TrialStream::Train)).unwrap();
        let b = generate_dataset(&m, 50, &dist, 0.1, &mut trial_rng(4, TrialStream::Train)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn covariates_are_centered_and_isotropic() {
        let d = 2;
        let dists = [
            CovariateDistribution::StandardNormal,
            CovariateDistribution::UniformCube { half_width: 5.0 },
            CovariateDistribution::GaussianMixture {
                centers: vec![vec![3.0, 0.0], vec![-1.0, 2.0]],
                weights: vec![0.25, 0.75],
            },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for dist in dists {
            dist.validate(d).unwrap();
            let n = 100_000;
            let mut mean = [0.0; 2];
            let mut var = 0.0;
            let mut x = [0.0; 2];
            for _ in 0..n {
                dist.sample_into(&mut rng, &mut x);
                mean[0] += x[0];
                mean[1] += x[1];
                var += x[0] * x[0] + x[1] * x[1];
            }
            assert!(mean.iter().all(|m| (m / n as f64).abs() < 0.02), "{dist:?}");
            assert!((var / (n as f64 * d as f64) - 1.0).abs() < 0.02, "{dist:?}");
        }
        let bad = CovariateDistribution::GaussianMixture { centers: vec![vec![0.0, 0.0]], weights: vec![0.5] };
        assert!(bad.validate(2).is_err());
    }

    #[test]
    fn perturbation_radius_is_exact() {
        let s = spec(4, 2, 0.5);
        let m = sample_ground_truth(&s, &mut s.rng()).unwrap();
        assert_eq!(perturbed_init(&m, 0.0, &mut s.rng()).unwrap(), m);
        let p = perturbed_init(&m, 0.3, &mut s.rng()).unwrap();
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        assert!((dist(p.beta_stacked(), m.beta_stacked()) - 0.3).abs() < 1e-12);
        assert!((dist(p.alpha_stacked(), m.alpha_stacked()) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn single_oracle_trial_recovers_truth() {
        let grid = [GridCell { n: 200, d: 4, k1: 2, k2: 2, sigma_z: 0.0 }];
        let records = run_grid(&grid, 1, InitKind::OraclePerturbation, 3, &TrialSettings::default()).unwrap();
        assert_eq!(records.len(), 1);
        assert!(records[0].rel_error < 1e-10, "{:?}", records[0]);
        assert!(records[0].converged);
    }

    #[test]
    fn grids_are_deterministic() {
        let grid = [
            GridCell { n: 60, d: 3, k1: 2, k2: 2, sigma_z: 0.1 },
            GridCell { n: 90, d: 3, k1: 2, k2: 1, sigma_z: 0.0 },
        ];
        let settings = TrialSettings::default();
        let a = run_grid(&grid, 3, InitKind::OraclePerturbation, 5, &settings).unwrap();
        let b = run_grid(&grid, 3, InitKind::OraclePerturbation, 5, &settings).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
        assert_eq!(a[3].k2, 1);
    }

    #[test]
    fn trial_seeds_are_distinct() {
        let mut seeds: Vec<u64> = (0..4).flat_map(|c| (0..50).map(move |t| trial_seed(0, c, t))).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 200);
        assert_ne!(trial_seed(0, 0, 1), trial_seed(0, 1, 0));
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[1.0, f64::INFINITY, f64::INFINITY]), f64::INFINITY);
    }

    #[test]
    fn default_grid_expands_to_desk_scale() {
        let grid = ExperimentGrid::default();
        let cells = grid.expand();
        assert_eq!(cells.len(), 3 * 6 * 2);
        assert_eq!(cells[0], GridCell { n: 10, d: 5, k1: 2, k2: 2, sigma_z: 0.0 });
    }

    #[test]
    fn intersection_exponent_of_independent_cells() {
        let mass = CellMass { beta: vec![0.5, 0.5], alpha: vec![0.5, 0.5], joint: vec![0.25; 4] };
        assert!((mass.intersection_exponent().unwrap() - 1.0).abs() < 1e-12);
    }
}
