//! Selection confidence sets for equally weighted portfolios.
//!
//! Given a panel of asset returns and a portfolio loss (mean-variance,
//! negative Sharpe, or Gaussian expected shortfall), this crate
//! enumerates every equally weighted subset of the asset universe,
//! finds the empirically optimal selection, and screens all candidates
//! against it with a one-sided studentized test. The retained set — the
//! selection confidence set — covers the true optimal selection with
//! probability at least 1 - alpha asymptotically.
//!
//! Modules:
//! - [`panel`]: return panels, CSV I/O, price-to-log-return conversion
//! - [`selection`]: subset bitmasks and Gray-code enumeration
//! - [`moments`]: sample moments and asymptotic covariance blocks
//! - [`loss`]: loss functionals, gradients, the studentized statistic
//! - [`screening`]: empirical optimum and confidence-set construction
//! - [`metrics`]: post-selection summaries (RMI, spreads, importances)
//! - [`simulate`]: population models, Monte Carlo coverage, theory
//! - [`cli`]: command-line front end

// index-based loops over symmetric matrices and `!(x > 0.0)` NaN guards
// are intentional throughout the numeric code
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod moments;
pub mod panel;
pub mod screening;
pub mod selection;
pub mod simulate;

pub use error::{Error, Result};
pub use loss::{CovMode, LossSpec, ScreenStatistic};
pub use panel::ReturnPanel;
pub use screening::{
    build_scs, empirical_optimum, plausibility_check, MaskRecord, PlausibilityReport,
    ScreenConfig, ScsResult,
};
pub use selection::SelectionMask;
