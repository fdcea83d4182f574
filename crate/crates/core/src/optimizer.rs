//! Squared loss, block generalized gradients and the adaptive block gradient
//! descent (ABGD) iteration.
//!
//! One sweep updates every `beta` block simultaneously from `(beta^t, alpha^t)`
//! and then every `alpha` block from `(beta^{t+1}, alpha^t)`. Block `j` moves
//! by `mu_j * grad_j` with `mu_j = n / |I_j|`, the inverse empirical mass of
//! its cell, so a block whose cell holds no samples stays put.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, DomaError, Result};
use crate::model::{affine, max_piece, ActivationIndex, Dataset, DomaModel};

/// Stop rule and iteration cap for [`fit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Stop once the larger relative block change of a sweep is `<= gamma`.
    pub gamma: f64,
    pub max_iters: usize,
    /// Keep per-sweep loss and parameter-change traces.
    pub record_trace: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { gamma: 1e-10, max_iters: 2000, record_trace: false }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(DomaError::InvalidInput(format!(
                "gamma must be a finite non-negative number, got {}",
                self.gamma
            )));
        }
        if self.max_iters == 0 {
            return Err(DomaError::InvalidInput("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Result of [`fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: DomaModel,
    pub iterations: usize,
    pub converged: bool,
    /// `loss(beta^t, alpha^t)` at the start of each sweep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_trace: Option<Vec<f64>>,
    /// Stop-rule ratio of each sweep; empty unless traces were requested.
    #[serde(default, skip_serializing)]
    pub change_trace: Vec<f64>,
}

/// `(1/2n) * sum_i (y_i - f(x_i))^2`.
pub fn loss(model: &DomaModel, data: &Dataset) -> Result<f64> {
    check_dim(model.d(), data.d())?;
    let sum: f64 = data
        .rows()
        .zip(data.targets())
        .map(|(x, &y)| {
            let r = y - model.eval_unchecked(x);
            r * r
        })
        .sum();
    Ok(sum / (2.0 * data.n() as f64))
}

/// Adaptive step size `n / cell_size`, or zero for an empty cell.
pub fn step_size(cell_size: usize, n: usize) -> f64 {
    if cell_size == 0 {
        0.0
    } else {
        n as f64 / cell_size as f64
    }
}

fn check_index(model: &DomaModel, data: &Dataset, idx: &ActivationIndex) -> Result<()> {
    check_dim(model.d(), data.d())?;
    check_dim(model.k1(), idx.beta_cells.len())?;
    check_dim(model.k2(), idx.alpha_cells.len())?;
    debug_assert_eq!(idx, &model.activation_index(data)?, "activation index is stale for this model");
    Ok(())
}

/// Partial generalized gradient of the loss with respect to `beta_j`:
/// `(1/n) * sum_{i in I_j} (<xi_i, beta_j> - max_l <xi_i, alpha_l> - y_i) xi_i`.
pub fn grad_beta_block(model: &DomaModel, data: &Dataset, idx: &ActivationIndex, j: usize) -> Result<Vec<f64>> {
    check_index(model, data, idx)?;
    let cell = idx
        .beta_cells
        .get(j)
        .ok_or_else(|| DomaError::InvalidInput(format!("beta block {j} out of range (k1 = {})", model.k1())))?;
    let theta = model.beta_block(j);
    let w = model.width();
    Ok(block_gradient(data, cell, |x, y| affine(theta, x) - max_piece(&model.alpha, w, x).1 - y))
}

/// Partial generalized gradient with respect to `alpha_l`:
/// `(1/n) * sum_{i in I_l} (<xi_i, alpha_l> - max_j <xi_i, beta_j> + y_i) xi_i`.
pub fn grad_alpha_block(model: &DomaModel, data: &Dataset, idx: &ActivationIndex, l: usize) -> Result<Vec<f64>> {
    check_index(model, data, idx)?;
    let cell = idx
        .alpha_cells
        .get(l)
        .ok_or_else(|| DomaError::InvalidInput(format!("alpha block {l} out of range (k2 = {})", model.k2())))?;
    let theta = model.alpha_block(l);
    let w = model.width();
    Ok(block_gradient(data, cell, |x, y| affine(theta, x) - max_piece(&model.beta, w, x).1 + y))
}

fn block_gradient(data: &Dataset, cell: &[usize], residual: impl Fn(&[f64], f64) -> f64) -> Vec<f64> {
    let d = data.d();
    let mut g = vec![0.0; d + 1];
    for &i in cell {
        let x = data.row(i);
        let r = residual(x, data.targets()[i]);
        accumulate(&mut g, r, x);
    }
    let n = data.n() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    g
}

/// `acc += r * [x; 1]`
#[inline]
fn accumulate(acc: &mut [f64], r: f64, x: &[f64]) {
    let d = x.len();
    for (a, xv) in acc[..d].iter_mut().zip(x) {
        *a += r * xv;
    }
    acc[d] += r;
}

/// Reusable buffers for [`Sweeper`].
struct Sweeper {
    alpha_arg: Vec<usize>,
    alpha_max: Vec<f64>,
    acc: Vec<f64>,
    counts: Vec<usize>,
}

impl Sweeper {
    fn new(model: &DomaModel, n: usize) -> Self {
        Sweeper {
            alpha_arg: vec![0; n],
            alpha_max: vec![0.0; n],
            acc: vec![0.0; model.k1().max(model.k2()) * model.width()],
            counts: vec![0; model.k1().max(model.k2())],
        }
    }

    /// One ABGD sweep in place; returns the loss of the model it started from.
    fn sweep(&mut self, model: &mut DomaModel, data: &Dataset) -> f64 {
        let w = model.width();
        let n = data.n();
        let ys = data.targets();

        // Step 1: beta blocks from (beta^t, alpha^t).
        let (acc, counts) = (&mut self.acc[..model.k1() * w], &mut self.counts[..model.k1()]);
        acc.fill(0.0);
        counts.fill(0);
        let mut sq = 0.0;
        for (i, x) in data.rows().enumerate() {
            let (j, vb) = max_piece(&model.beta, w, x);
            let (l, va) = max_piece(&model.alpha, w, x);
            self.alpha_arg[i] = l;
            self.alpha_max[i] = va;
            let r = vb - va - ys[i];
            sq += r * r;
            counts[j] += 1;
            accumulate(&mut acc[j * w..(j + 1) * w], r, x);
        }
        apply_steps(&mut model.beta, acc, counts, n);

        // Step 2: alpha blocks from (beta^{t+1}, alpha^t); the alpha cells are
        // those of alpha^t, already recorded above.
        let (acc, counts) = (&mut self.acc[..model.k2() * w], &mut self.counts[..model.k2()]);
        acc.fill(0.0);
        counts.fill(0);
        for (i, x) in data.rows().enumerate() {
            let l = self.alpha_arg[i];
            let vb = max_piece(&model.beta, w, x).1;
            let r = self.alpha_max[i] - vb + ys[i];
            counts[l] += 1;
            accumulate(&mut acc[l * w..(l + 1) * w], r, x);
        }
        apply_steps(&mut model.alpha, acc, counts, n);

        sq / (2.0 * n as f64)
    }
}

fn apply_steps(params: &mut [f64], acc: &[f64], counts: &[usize], n: usize) {
    let w = acc.len() / counts.len();
    let inv_n = 1.0 / n as f64;
    for ((theta, g), &c) in params.chunks_exact_mut(w).zip(acc.chunks_exact(w)).zip(counts) {
        if c == 0 {
            continue;
        }
        let mu = step_size(c, n);
        for (t, gv) in theta.iter_mut().zip(g) {
            *t -= mu * (gv * inv_n);
        }
    }
}

/// One full ABGD sweep (beta step, then alpha step).
pub fn abgd_sweep(model: &DomaModel, data: &Dataset) -> Result<DomaModel> {
    check_dim(model.d(), data.d())?;
    let mut next = model.clone();
    Sweeper::new(model, data.n()).sweep(&mut next, data);
    Ok(next)
}

fn relative_change(new: &[f64], old: &[f64]) -> f64 {
    let diff = new.iter().zip(old).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let norm = old.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}

/// Runs ABGD from `init` until the relative-change stop rule fires or the
/// iteration cap is reached.
pub fn fit(data: &Dataset, init: &DomaModel, config: &FitConfig) -> Result<FitReport> {
    fit_with_observer(data, init, config, |_, _| {})
}

/// As [`fit`], calling `observer(t, model)` after sweep `t` (1-based).
pub fn fit_with_observer(
    data: &Dataset,
    init: &DomaModel,
    config: &FitConfig,
    mut observer: impl FnMut(usize, &DomaModel),
) -> Result<FitReport> {
    config.validate()?;
    check_dim(init.d(), data.d())?;
    let mut model = init.clone();
    let mut prev = init.clone();
    let mut sweeper = Sweeper::new(init, data.n());
    let mut loss_trace = Vec::new();
    let mut change_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iters {
        let before = sweeper.sweep(&mut model, data);
        iterations += 1;
        if config.record_trace {
            loss_trace.push(before);
        }
        let finite = before.is_finite() && model.beta.iter().chain(&model.alpha).all(|v| v.is_finite());
        if !finite {
            return Err(DomaError::Divergence { iterations, loss_trace });
        }
        let change = relative_change(&model.beta, &prev.beta).max(relative_change(&model.alpha, &prev.alpha));
        if config.record_trace {
            change_trace.push(change);
        }
        observer(iterations, &model);
        if change <= config.gamma {
            converged = true;
            break;
        }
        prev.beta.copy_from_slice(&model.beta);
        prev.alpha.copy_from_slice(&model.alpha);
    }

    Ok(FitReport { model, iterations, converged, loss_trace: config.record_trace.then_some(loss_trace), change_trace })
}

/// Runs exactly `sweeps` ABGD sweeps without a stop rule. Returns the final
/// model, or `None` if the iterates stop being finite.
pub(crate) fn refine(model: &DomaModel, data: &Dataset, sweeps: usize) -> Option<DomaModel> {
    let mut m = model.clone();
    let mut sweeper = Sweeper::new(model, data.n());
    for _ in 0..sweeps {
        let before = sweeper.sweep(&mut m, data);
        if !before.is_finite() {
            return None;
        }
    }
    m.beta.iter().chain(&m.alpha).all(|v| v.is_finite()).then_some(m)
}
