//! The difference-of-max-affine (DoMA) function and its cell partition.
//!
//! A model of order `(k1, k2)` in dimension `d` is
//!
//! ```text
//! f(x) = max_j <beta_j, [x; 1]> - max_l <alpha_l, [x; 1]>
//! ```
//!
//! where every parameter block has `d + 1` entries: `d` slope coefficients
//! followed by one intercept. The augmented covariate `[x; 1]` is never
//! materialized; [`affine`] folds the trailing one into the dot product.
//!
//! Ties on cell boundaries resolve to the lowest block index.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, DomaError, Result};

/// `<theta, [x; 1]>` for a parameter block `theta` of length `x.len() + 1`.
#[inline]
pub fn affine(theta: &[f64], x: &[f64]) -> f64 {
    debug_assert_eq!(theta.len(), x.len() + 1);
    let (slope, intercept) = theta.split_at(x.len());
    slope.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + intercept[0]
}

/// Index and value of the largest affine piece; the first maximal index wins.
#[inline]
pub(crate) fn max_piece(params: &[f64], width: usize, x: &[f64]) -> (usize, f64) {
    let mut blocks = params.chunks_exact(width);
    let mut best = (0, affine(blocks.next().expect("at least one block"), x));
    for (j, theta) in blocks.enumerate() {
        let v = affine(theta, x);
        if v > best.1 {
            best = (j + 1, v);
        }
    }
    best
}

/// On-disk/JSON form of a model. Accepts anything shaped like the format so
/// that [`ModelRecord::validate`] can report every defect at once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub d: usize,
    pub k1: usize,
    pub k2: usize,
    pub beta: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
}

/// One defect found by [`ModelRecord::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum ModelIssue {
    ZeroDimension,
    EmptyPart { part: Part },
    CountMismatch { part: Part, declared: usize, found: usize },
    WrongParameterLength { part: Part, block: usize, expected: usize, found: usize },
    NonFiniteEntry { part: Part, block: usize, entry: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Beta,
    Alpha,
}

impl fmt::Display for Part {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Part::Beta => "beta",
            Part::Alpha => "alpha",
        })
    }
}

impl fmt::Display for ModelIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelIssue::ZeroDimension => write!(f, "dimension d must be at least 1"),
            ModelIssue::EmptyPart { part } => write!(f, "{part} must have at least one block"),
            ModelIssue::CountMismatch { part, declared, found } => {
                write!(f, "{part}: declared {declared} blocks, found {found}")
            }
            ModelIssue::WrongParameterLength { part, block, expected, found } => {
                write!(f, "wrong parameter length: {part}[{block}] has {found} entries, expected {expected}")
            }
            ModelIssue::NonFiniteEntry { part, block, entry } => {
                write!(f, "non-finite entry: {part}[{block}][{entry}]")
            }
        }
    }
}

impl ModelRecord {
    /// Reports every structural defect; never panics.
    pub fn validate(&self) -> std::result::Result<(), Vec<ModelIssue>> {
        let mut issues = Vec::new();
        if self.d == 0 {
            issues.push(ModelIssue::ZeroDimension);
        }
        for (part, declared, blocks) in [(Part::Beta, self.k1, &self.beta), (Part::Alpha, self.k2, &self.alpha)] {
            if blocks.is_empty() {
                issues.push(ModelIssue::EmptyPart { part });
            }
            if declared != blocks.len() {
                issues.push(ModelIssue::CountMismatch { part, declared, found: blocks.len() });
            }
            for (block, theta) in blocks.iter().enumerate() {
                if theta.len() != self.d + 1 {
                    issues.push(ModelIssue::WrongParameterLength {
                        part,
                        block,
                        expected: self.d + 1,
                        found: theta.len(),
                    });
                }
                for (entry, v) in theta.iter().enumerate() {
                    if !v.is_finite() {
                        issues.push(ModelIssue::NonFiniteEntry { part, block, entry });
                    }
                }
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(issues)
        }
    }
}

/// A validated DoMA model. Parameter blocks are stored contiguously,
/// `k * (d + 1)` values per part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRecord", into = "ModelRecord")]
pub struct DomaModel {
    d: usize,
    k1: usize,
    k2: usize,
    pub(crate) beta: Vec<f64>,
    pub(crate) alpha: Vec<f64>,
}

impl TryFrom<ModelRecord> for DomaModel {
    type Error = DomaError;

    fn try_from(record: ModelRecord) -> Result<Self> {
        if let Err(issues) = record.validate() {
            let msg = issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; ");
            return Err(DomaError::InvalidInput(msg));
        }
        Ok(DomaModel {
            d: record.d,
            k1: record.k1,
            k2: record.k2,
            beta: record.beta.concat(),
            alpha: record.alpha.concat(),
        })
    }
}

impl From<DomaModel> for ModelRecord {
    fn from(model: DomaModel) -> Self {
        model.to_record()
    }
}

impl DomaModel {
    /// Builds a model from per-block parameter vectors, each of length `d + 1`.
    pub fn new(beta: Vec<Vec<f64>>, alpha: Vec<Vec<f64>>) -> Result<Self> {
        let d = beta
            .first()
            .map(|b| b.len().saturating_sub(1))
            .ok_or_else(|| DomaError::InvalidInput("beta must have at least one block".into()))?;
        DomaModel::try_from(ModelRecord { d, k1: beta.len(), k2: alpha.len(), beta, alpha })
    }

    /// Builds a model from stacked parameters (`k1 * (d + 1)` and `k2 * (d + 1)` values).
    pub fn from_stacked(d: usize, beta: Vec<f64>, alpha: Vec<f64>) -> Result<Self> {
        let w = d + 1;
        if d == 0
            || beta.is_empty()
            || alpha.is_empty()
            || !beta.len().is_multiple_of(w)
            || !alpha.len().is_multiple_of(w)
        {
            return Err(DomaError::InvalidInput(format!(
                "stacked parameters of length {} and {} do not split into blocks of {w}",
                beta.len(),
                alpha.len()
            )));
        }
        if let Some(v) = beta.iter().chain(&alpha).find(|v| !v.is_finite()) {
            return Err(DomaError::InvalidInput(format!("non-finite entry {v}")));
        }
        Ok(DomaModel { d, k1: beta.len() / w, k2: alpha.len() / w, beta, alpha })
    }

    /// The all-zero model of the given shape.
    pub fn zeros(d: usize, k1: usize, k2: usize) -> Result<Self> {
        Self::from_stacked(d, vec![0.0; k1 * (d + 1)], vec![0.0; k2 * (d + 1)])
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k1(&self) -> usize {
        self.k1
    }

    pub fn k2(&self) -> usize {
        self.k2
    }

    /// Length of one parameter block, `d + 1`.
    pub fn width(&self) -> usize {
        self.d + 1
    }

    pub fn beta_block(&self, j: usize) -> &[f64] {
        let w = self.width();
        &self.beta[j * w..(j + 1) * w]
    }

    pub fn alpha_block(&self, l: usize) -> &[f64] {
        let w = self.width();
        &self.alpha[l * w..(l + 1) * w]
    }

    pub fn beta_blocks(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.beta.chunks_exact(self.d + 1)
    }

    pub fn alpha_blocks(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.alpha.chunks_exact(self.d + 1)
    }

    /// Stacked `[beta_1; ...; beta_k1]`.
    pub fn beta_stacked(&self) -> &[f64] {
        &self.beta
    }

    /// Stacked `[alpha_1; ...; alpha_k2]`.
    pub fn alpha_stacked(&self) -> &[f64] {
        &self.alpha
    }

    pub fn to_record(&self) -> ModelRecord {
        ModelRecord {
            d: self.d,
            k1: self.k1,
            k2: self.k2,
            beta: self.beta_blocks().map(<[f64]>::to_vec).collect(),
            alpha: self.alpha_blocks().map(<[f64]>::to_vec).collect(),
        }
    }

    /// Re-checks the model invariants (finiteness can be lost by arithmetic
    /// performed on the stacked parameters).
    pub fn validate(&self) -> std::result::Result<(), Vec<ModelIssue>> {
        self.to_record().validate()
    }

    /// Adds `v` (length `d + 1`) to every block of both parts. The function
    /// is unchanged by this operation.
    pub fn shifted(&self, v: &[f64]) -> Result<Self> {
        check_dim(self.width(), v.len())?;
        let mut out = self.clone();
        let w = self.width();
        for theta in out.beta.chunks_exact_mut(w).chain(out.alpha.chunks_exact_mut(w)) {
            theta.iter_mut().zip(v).for_each(|(t, s)| *t += s);
        }
        Ok(out)
    }

    /// Reorders blocks: block `j` of the output is block `perm[j]` of `self`.
    pub fn permuted(&self, perm_beta: &[usize], perm_alpha: &[usize]) -> Result<Self> {
        check_dim(self.k1, perm_beta.len())?;
        check_dim(self.k2, perm_alpha.len())?;
        let beta = perm_beta.iter().flat_map(|&j| self.beta_block(j).to_vec()).collect();
        let alpha = perm_alpha.iter().flat_map(|&l| self.alpha_block(l).to_vec()).collect();
        Self::from_stacked(self.d, beta, alpha)
    }

    /// `f(x) = max_j <beta_j,[x;1]> - max_l <alpha_l,[x;1]>`.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.d, x.len())?;
        Ok(self.eval_unchecked(x))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> f64 {
        let w = self.width();
        max_piece(&self.beta, w, x).1 - max_piece(&self.alpha, w, x).1
    }

    /// Maximizing block indices `(j, l)` at `x`, zero-based; ties go to the
    /// lowest index.
    pub fn argmax_pair(&self, x: &[f64]) -> Result<(usize, usize)> {
        check_dim(self.d, x.len())?;
        let w = self.width();
        Ok((max_piece(&self.beta, w, x).0, max_piece(&self.alpha, w, x).0))
    }

    /// Partitions the sample indices of `data` by maximizing block in each part.
    pub fn activation_index(&self, data: &Dataset) -> Result<ActivationIndex> {
        check_dim(self.d, data.d())?;
        let w = self.width();
        let mut beta_cells = vec![Vec::new(); self.k1];
        let mut alpha_cells = vec![Vec::new(); self.k2];
        for (i, x) in data.rows().enumerate() {
            beta_cells[max_piece(&self.beta, w, x).0].push(i);
            alpha_cells[max_piece(&self.alpha, w, x).0].push(i);
        }
        Ok(ActivationIndex { beta_cells, alpha_cells })
    }
}

/// Sample indices grouped by the block that attains each maximum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationIndex {
    pub beta_cells: Vec<Vec<usize>>,
    pub alpha_cells: Vec<Vec<usize>>,
}

impl ActivationIndex {
    pub fn beta_cell_sizes(&self) -> Vec<usize> {
        self.beta_cells.iter().map(Vec::len).collect()
    }

    pub fn alpha_cell_sizes(&self) -> Vec<usize> {
        self.alpha_cells.iter().map(Vec::len).collect()
    }
}

/// `n` covariate rows in `R^d` (stored row-major) with scalar targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    d: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        let d = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| DomaError::InvalidInput("dataset must have at least one sample".into()))?;
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(DomaError::DimensionMismatch { expected: d, found: bad.len() });
        }
        Self::from_flat(d, rows.concat(), y)
    }

    pub fn from_flat(d: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(DomaError::InvalidInput("covariate dimension must be at least 1".into()));
        }
        if y.is_empty() {
            return Err(DomaError::InvalidInput("dataset must have at least one sample".into()));
        }
        check_dim(y.len() * d, x.len())?;
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(DomaError::InvalidInput("dataset contains a non-finite entry".into()));
        }
        Ok(Dataset { d, x, y })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.x.chunks_exact(self.d)
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }

    pub fn covariates_flat(&self) -> &[f64] {
        &self.x
    }

    /// Same covariates, new targets.
    pub fn with_targets(&self, y: Vec<f64>) -> Result<Self> {
        Self::from_flat(self.d, self.x.clone(), y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abs_model() -> DomaModel {
        DomaModel::new(vec![vec![1.0, 0.0], vec![-1.0, 0.0]], vec![vec![0.0, 0.0]]).unwrap()
    }

    fn mixed_model() -> DomaModel {
        DomaModel::new(vec![vec![2.0, 1.0], vec![-1.0, 0.0]], vec![vec![0.5, 0.0], vec![0.0, -1.0]]).unwrap()
    }

    #[test]
    fn identical_parts_cancel() {
        let m = DomaModel::new(vec![vec![1.0, 0.0]], vec![vec![1.0, 0.0]]).unwrap();
        for x in [-3.0, 0.0, 7.5] {
            assert_eq!(m.evaluate(&[x]).unwrap(), 0.0);
        }
    }

    #[test]
    fn abs_value_construction() {
        assert_eq!(abs_model().evaluate(&[2.0]).unwrap(), 2.0);
        assert_eq!(abs_model().evaluate(&[-3.0]).unwrap(), 3.0);
    }

    #[test]
    fn mixed_model_matches_enumeration() {
        // beta values at x=1: 3, -1; alpha values: 0.5, -1
        assert_eq!(mixed_model().evaluate(&[1.0]).unwrap(), 2.5);
        assert_eq!(mixed_model().argmax_pair(&[1.0]).unwrap(), (0, 0));
    }

    #[test]
    fn argmax_ties_go_to_lowest_index() {
        assert_eq!(abs_model().argmax_pair(&[2.0]).unwrap().0, 0);
        assert_eq!(abs_model().argmax_pair(&[0.0]).unwrap().0, 0);
        assert_eq!(abs_model().argmax_pair(&[-1.0]).unwrap().0, 1);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        assert!(matches!(
            abs_model().evaluate(&[1.0, 2.0]),
            Err(DomaError::DimensionMismatch { expected: 1, found: 2 })
        ));
    }

    #[test]
    fn activation_index_small() {
        let data = Dataset::new(vec![vec![-1.0], vec![1.0]], vec![0.0, 0.0]).unwrap();
        let idx = abs_model().activation_index(&data).unwrap();
        assert_eq!(idx.beta_cells, vec![vec![1], vec![0]]);
        assert_eq!(idx.alpha_cells, vec![vec![0, 1]]);
    }

    #[test]
    fn activation_index_degenerate_data() {
        let data = Dataset::new(vec![vec![0.3]; 5], vec![0.0; 5]).unwrap();
        let idx = mixed_model().activation_index(&data).unwrap();
        assert_eq!(idx.beta_cell_sizes(), vec![5, 0]);
        assert_eq!(idx.alpha_cell_sizes(), vec![5, 0]);
    }

    #[test]
    fn validate_reports_defects() {
        let good = abs_model().to_record();
        assert!(good.validate().is_ok());

        let mut short = good.clone();
        short.beta[1] = vec![1.0];
        let issues = short.validate().unwrap_err();
        assert!(issues[0].to_string().starts_with("wrong parameter length"));

        let mut nan = good.clone();
        nan.alpha[0][1] = f64::NAN;
        let issues = nan.validate().unwrap_err();
        assert_eq!(issues.len(), 1);
        assert!(issues[0].to_string().starts_with("non-finite entry"));

        let mut empty = good;
        empty.alpha.clear();
        empty.k2 = 0;
        assert_eq!(empty.validate().unwrap_err(), vec![ModelIssue::EmptyPart { part: Part::Alpha }]);
    }

    #[test]
    fn json_format_round_trips() {
        let m = mixed_model();
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(text, r#"{"d":1,"k1":2,"k2":2,"beta":[[2.0,1.0],[-1.0,0.0]],"alpha":[[0.5,0.0],[0.0,-1.0]]}"#);
        let back: DomaModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<DomaModel>(r#"{"d":1,"k1":1,"k2":1,"beta":[[1]],"alpha":[[0,0]]}"#).is_err());
    }

    #[test]
    fn dataset_rejects_ragged_and_non_finite() {
        assert!(Dataset::new(vec![vec![1.0], vec![1.0, 2.0]], vec![0.0, 0.0]).is_err());
        assert!(Dataset::new(vec![vec![f64::INFINITY]], vec![0.0]).is_err());
        assert!(Dataset::new(vec![], vec![]).is_err());
        assert!(Dataset::new(vec![vec![1.0]], vec![0.0, 1.0]).is_err());
    }
}
