//! Weighting, aggregation and certification of classifier ensembles with
//! second-order (tandem-loss) PAC-Bayesian bounds.
//!
//! The pipeline takes held-out predictions of `M` ensemble members:
//!
//! 1. [`data`] loads and validates predictions, labels, hold-out masks and a prior.
//! 2. [`loss`] turns them into member losses and the pairwise tandem-loss matrix.
//! 3. [`optimize`] minimizes the tandem bound (or the first-order baseline)
//!    over the weights `ρ` and the trade-off `λ`.
//! 4. [`bounds`] certifies the weighted majority vote.
//! 5. [`aggregate`] and [`protocol`] predict and measure accuracy, including
//!    test-time cross-validation and ensemble subsampling.
//!
//! [`sim`] generates synthetic ensembles with known risks for validation.
//!
//! ```
//! use ensemble_pac::prelude::*;
//!
//! let spec = SyntheticSpec::independent(vec![0.2, 0.25, 0.3], 2000, 7);
//! let ensemble = generate_ensemble(&spec, PredictionMode::Prob).unwrap();
//! let fit = fit(&ensemble, &Weighting::Optimize(Objective::Tandem), 0.05, &OptimizerConfig::default()).unwrap();
//! assert!(fit.tandem.value < 1.0);
//! assert!((fit.rho.iter().sum::<f64>() - 1.0).abs() < 1e-12);
//! ```

// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregate;
pub mod bounds;
pub mod cli;
pub mod data;
pub mod error;
pub mod loss;
pub mod optimize;
pub mod protocol;
pub mod report;
pub mod sim;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::aggregate::{evaluate, predict_all, predict_avg, predict_mv, Aggregation};
    pub use crate::bounds::{
        first_order_bound, hoeffding_mv_bound, kl_divergence, tandem_bound, BoundParams, BoundReport,
    };
    pub use crate::data::{
        load_manifest, validate, write_manifest, Ensemble, LabelVector, Member, OverlapMask, PredictionMode,
        PredictionSet, WeightDistribution,
    };
    pub use crate::loss::{error_indicators, expected_gibbs, expected_tandem, tandem_tables, LossTables};
    pub use crate::optimize::{optimal_lambda, optimize_weights, Objective, OptimizerConfig};
    pub use crate::protocol::{fit, loss_tables, ttcv_run, Weighting};
    pub use crate::sim::{exact_mv_error_binomial, generate, generate_ensemble, mc_mv_error, SyntheticSpec};
}

// Compile and run the guide's code listings as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/tandem-loss.md")]
    mod tandem_loss {}
    #[doc = include_str!("../../../book/src/bounds.md")]
    mod bounds {}
    #[doc = include_str!("../../../book/src/optimization.md")]
    mod optimization {}
    #[doc = include_str!("../../../book/src/aggregation.md")]
    mod aggregation {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
