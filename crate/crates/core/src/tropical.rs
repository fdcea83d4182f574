//! Lossless compression through Newton polytopes.
//!
//! A max-affine function only depends on the convex hull of its parameter
//! vectors: a block lying inside the hull of the other blocks never attains
//! the maximum alone and can be dropped without changing the function. The
//! same holds for each part of a DoMA model separately.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, DomaError, Result};
use crate::model::DomaModel;

/// Default absolute distance below which a point counts as inside a hull.
pub const DEFAULT_TOL: f64 = 1e-8;

const MAX_ITERS: usize = 200_000;
/// Iterate movement below which the solve is considered stalled.
const STALL: f64 = 1e-15;

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &mut [f64]) {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        cumsum += ui;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter_mut().for_each(|x| *x = (*x - theta).max(0.0));
}

/// Result of the distance-to-hull solve.
#[derive(Debug, Clone, PartialEq)]
pub struct HullDistance {
    /// Distance at the final iterate (an upper bound on the true distance).
    pub upper: f64,
    /// Certified lower bound on the true distance.
    pub lower: f64,
    /// Convex weights of the final iterate.
    pub weights: Vec<f64>,
}

/// Minimizes `|p - sum_i w_i points_i|` over the simplex with accelerated
/// projected gradient, stopping once the distance is below `tol`, the
/// Frank-Wolfe duality gap certifies it is above `tol`, or the iterate stops
/// moving.
pub fn hull_distance(p: &[f64], points: &[&[f64]], tol: f64) -> Result<HullDistance> {
    if points.is_empty() {
        return Err(DomaError::InvalidInput("hull needs at least one point".into()));
    }
    let dim = p.len();
    for q in points {
        check_dim(dim, q.len())?;
    }
    let m = points.len();
    let pm = DMatrix::from_fn(dim, m, |r, c| points[c][r]);
    let pv = DVector::from_column_slice(p);
    let gram = pm.transpose() * &pm;
    let b = pm.transpose() * &pv;
    let lipschitz = SymmetricEigen::new(gram.clone()).eigenvalues.iter().cloned().fold(0.0, f64::max);

    let residual = |w: &DVector<f64>| (&pm * w - &pv).norm();
    let mut w = DVector::from_element(m, 1.0 / m as f64);
    if lipschitz == 0.0 {
        let dist = residual(&w);
        return Ok(HullDistance { upper: dist, lower: dist, weights: w.as_slice().to_vec() });
    }
    let step = 1.0 / lipschitz;
    let mut y = w.clone();
    let mut momentum = 1.0f64;
    let mut lower = 0.0f64;
    let mut upper = residual(&w);

    for _ in 0..MAX_ITERS {
        let grad = &gram * &y - &b;
        let mut next = &y - step * &grad;
        project_simplex(next.as_mut_slice());

        // Restart momentum when the step points uphill.
        let restart = (&next - &w).dot(&(&y - &next)) > 0.0;
        let next_momentum = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
        let moved = (&next - &w).norm();
        if restart {
            y = next.clone();
            momentum = 1.0;
        } else {
            y = &next + ((momentum - 1.0) / next_momentum) * (&next - &w);
            momentum = next_momentum;
        }
        w = next;

        let r = &pm * &w - &pv;
        upper = r.norm();
        if upper <= tol {
            break;
        }
        // f(w) - gap <= f* with f = |r|^2 / 2 and gap = <g, w> - min_i g_i.
        let g = pm.transpose() * &r;
        let gap = g.dot(&w) - g.min();
        let f_lower = 0.5 * upper * upper - gap;
        if f_lower > 0.0 {
            lower = lower.max((2.0 * f_lower).sqrt());
        }
        if lower > tol || moved < STALL {
            break;
        }
    }
    Ok(HullDistance { upper, lower, weights: w.as_slice().to_vec() })
}

/// Whether `p` lies within `tol` of the convex hull of `points`.
pub fn hull_membership(p: &[f64], points: &[&[f64]], tol: f64) -> Result<bool> {
    Ok(hull_distance(p, points, tol)?.upper <= tol)
}

/// Scans blocks in ascending order and marks block `j` inactive when it lies
/// in the hull of the blocks that are still active, excluding itself. At
/// least one block always survives.
pub fn inactive_indices(params: &[&[f64]], tol: f64) -> Result<Vec<usize>> {
    if params.is_empty() {
        return Err(DomaError::InvalidInput("need at least one parameter block".into()));
    }
    let mut active = vec![true; params.len()];
    let mut removed = Vec::new();
    for j in 0..params.len() {
        let others: Vec<&[f64]> =
            params.iter().enumerate().filter(|&(i, _)| i != j && active[i]).map(|(_, p)| *p).collect();
        if others.is_empty() {
            continue;
        }
        if hull_membership(params[j], &others, tol)? {
            active[j] = false;
            removed.push(j);
        }
    }
    Ok(removed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub removed_beta: Vec<usize>,
    pub removed_alpha: Vec<usize>,
    pub model: DomaModel,
}

/// Drops every block that lies in the hull of the surviving blocks of its
/// part.
pub fn compress(model: &DomaModel, tol: f64) -> Result<CompressionReport> {
    let beta: Vec<&[f64]> = model.beta_blocks().collect();
    let alpha: Vec<&[f64]> = model.alpha_blocks().collect();
    let removed_beta = inactive_indices(&beta, tol)?;
    let removed_alpha = inactive_indices(&alpha, tol)?;
    let keep = |blocks: &[&[f64]], removed: &[usize]| -> Vec<f64> {
        blocks.iter().enumerate().filter(|(i, _)| !removed.contains(i)).flat_map(|(_, b)| b.iter().copied()).collect()
    };
    let compressed = DomaModel::from_stacked(model.d(), keep(&beta, &removed_beta), keep(&alpha, &removed_alpha))?;
    Ok(CompressionReport { removed_beta, removed_alpha, model: compressed })
}

/// Whether `a` and `b` agree within `tol` on every point of `xs`.
pub fn equivalent_on_samples(a: &DomaModel, b: &DomaModel, xs: &[Vec<f64>], tol: f64) -> Result<bool> {
    check_dim(a.d(), b.d())?;
    for x in xs {
        if (a.evaluate(x)? - b.evaluate(x)?).abs() > tol {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_projection() {
        let mut v = vec![0.5, 0.5];
        project_simplex(&mut v);
        assert_eq!(v, vec![0.5, 0.5]);
        let mut v = vec![2.0, 0.0, -1.0];
        project_simplex(&mut v);
        assert_eq!(v, vec![1.0, 0.0, 0.0]);
        let mut v = vec![0.3, 0.3, 0.3];
        project_simplex(&mut v);
        assert!(v.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn membership_examples() {
        let a = [1.0, 0.0];
        let b = [-1.0, 0.0];
        let pts: Vec<&[f64]> = vec![&a, &b];
        assert!(hull_membership(&[1.0, 0.0], &pts, DEFAULT_TOL).unwrap());
        assert!(hull_membership(&[0.5, 0.0], &pts, DEFAULT_TOL).unwrap());
        assert!(!hull_membership(&[2.0, 0.0], &pts, DEFAULT_TOL).unwrap());
        let far = hull_distance(&[2.0, 0.0], &pts, DEFAULT_TOL).unwrap();
        assert!(far.lower > 0.99 && far.upper >= far.lower);
        assert!(hull_membership(&[1.0], &pts, DEFAULT_TOL).is_err());
        assert!(hull_membership(&[1.0, 0.0], &[], DEFAULT_TOL).is_err());
    }

    #[test]
    fn all_zero_points() {
        let z = [0.0, 0.0];
        assert!(hull_membership(&[0.0, 0.0], &[&z], DEFAULT_TOL).unwrap());
        assert!(!hull_membership(&[0.0, 1.0], &[&z], DEFAULT_TOL).unwrap());
    }

    #[test]
    fn duplicates_leave_one_survivor() {
        let p = [0.3, -1.0, 2.0];
        let params: Vec<&[f64]> = vec![&p; 4];
        assert_eq!(inactive_indices(&params, DEFAULT_TOL).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn half_slope_is_inactive() {
        let (a, b, c) = ([-1.0, 0.0], [1.0, 0.0], [0.5, 0.0]);
        assert_eq!(inactive_indices(&[&a, &b, &c], DEFAULT_TOL).unwrap(), vec![2]);
    }

    #[test]
    fn affinely_independent_points_all_survive() {
        let (a, b, c, d) = ([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]);
        assert!(inactive_indices(&[&a, &b, &c, &d], DEFAULT_TOL).unwrap().is_empty());
    }

    #[test]
    fn compress_max_of_three_lines() {
        let m = DomaModel::new(vec![vec![-1.0, 0.0], vec![1.0, 0.0], vec![0.5, 0.0]], vec![vec![0.0, 0.0]]).unwrap();
        let report = compress(&m, DEFAULT_TOL).unwrap();
        assert_eq!(report.removed_beta, vec![2]);
        assert!(report.removed_alpha.is_empty());
        assert_eq!(report.model.k1(), 2);
        let xs: Vec<Vec<f64>> = (0..41).map(|i| vec![-2.0 + 0.1 * i as f64]).collect();
        assert!(equivalent_on_samples(&m, &report.model, &xs, 1e-12).unwrap());
    }

    #[test]
    fn equivalence_checks() {
        let m = DomaModel::new(vec![vec![1.0, 2.0, 0.0], vec![-1.0, 0.5, 1.0]], vec![vec![0.0, 0.0, 0.3]]).unwrap();
        let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![(i as f64).sin(), (i as f64).cos()]).collect();
        assert!(equivalent_on_samples(&m, &m, &xs, 0.0).unwrap());
        let swapped = m.permuted(&[1, 0], &[0]).unwrap();
        assert!(equivalent_on_samples(&m, &swapped, &xs, 0.0).unwrap());
        let other = m.shifted(&[0.0, 0.0, 0.0]).unwrap().permuted(&[0, 0], &[0]).unwrap();
        assert!(!equivalent_on_samples(&m, &other, &xs, 1e-9).unwrap());
        assert!(equivalent_on_samples(&m, &DomaModel::zeros(1, 1, 1).unwrap(), &xs, 1.0).is_err());
    }
}
