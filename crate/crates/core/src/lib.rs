//! Fitting continuous piecewise-linear functions as a difference of two
//! max-affine functions.
//!
//! The crate is organized around the estimation pipeline:
//!
//! * [`model`]: the model, its evaluation and cell partition.
//! * [`optimizer`]: squared loss and adaptive block gradient descent.
//! * [`spectral`]: moment-based subspace estimation and randomized
//!   initialization.
//! * [`tropical`]: lossless pruning of blocks inside the convex hull of
//!   the others.
//! * [`metrics`]: ambiguity-resolved parameter error, test NMSE and the
//!   generalization gap.
//! * [`synth`]: ground-truth sampling and seeded Monte Carlo grids.
//! * [`io`]: CSV datasets and trial tables.
//!
//! ```
//! use doma::{DomaModel, Dataset, FitConfig, fit};
//!
//! // |x| written as max(x, -x) - max(0)
//! let truth = DomaModel::new(vec![vec![1.0, 0.0], vec![-1.0, 0.0]], vec![vec![0.0, 0.0]])?;
//! let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![-2.0 + 0.1 * i as f64 + 0.01]).collect();
//! let ys = xs.iter().map(|x| truth.evaluate(x)).collect::<Result<Vec<_>, _>>()?;
//! let data = Dataset::new(xs, ys)?;
//!
//! let init = DomaModel::new(vec![vec![0.9, 0.1], vec![-1.1, 0.0]], vec![vec![0.0, 0.05]])?;
//! let report = fit(&data, &init, &FitConfig::default())?;
//! assert!(report.converged);
//! assert!((report.model.evaluate(&[-1.5])? - 1.5).abs() < 1e-8);
//! # Ok::<(), doma::DomaError>(())
//! ```

pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod optimizer;
pub mod spectral;
pub mod synth;
pub mod tropical;

pub use error::{DomaError, Result};
pub use metrics::{generalization_gap, relative_param_error, resolve_ambiguity, test_nmse, AmbiguityResolution};
pub use model::{affine, ActivationIndex, Dataset, DomaModel, ModelIssue, ModelRecord};
pub use optimizer::{
    abgd_sweep, fit, fit_with_observer, grad_alpha_block, grad_beta_block, loss, step_size, FitConfig, FitReport,
};
pub use spectral::{
    estimate_moments, initialize, pairwise_difference_rank, population_m1_oracle, sample_candidate, subspace,
    CandidateScale, InitConfig, MomentEstimates, SubspaceBasis,
};
pub use synth::{
    generate_dataset, perturbed_init, run_grid, sample_ground_truth, CovariateDistribution, ExperimentGrid, GridCell,
    GroundTruthSpec, InitKind, TrialRecord, TrialSettings,
};
pub use tropical::{compress, equivalent_on_samples, hull_membership, inactive_indices, CompressionReport};

/// Runs the code listings of the guide in `book/` as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/abgd.md")]
    mod abgd {}
    #[doc = include_str!("../../../book/src/initialization.md")]
    mod initialization {}
    #[doc = include_str!("../../../book/src/tropical.md")]
    mod tropical {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
