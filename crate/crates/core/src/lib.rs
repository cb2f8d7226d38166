//! Construction and evaluation of D-optimal minimax split-plot designs.
//!
//! The loss of a split-plot design under the D-optimal minimax criterion is
//! evaluated in closed form ([`criterion`]), maintained incrementally under
//! point-exchange moves ([`updates`]), and minimized by a simulated annealing
//! point-exchange search ([`annealer`]). The [`oracle`] module re-derives the
//! loss by brute force and is used to check the fast paths.

pub mod annealer;
#[cfg(feature = "cli")]
pub mod cli;
pub mod contrasts;
pub mod criterion;
pub mod design;
pub mod error;
pub mod oracle;
pub mod presets;
pub mod problem;
pub mod updates;

pub use annealer::{AnnealParams, SearchOutcome};
pub use contrasts::{Factor, FactorLayout, RequirementSet, Role, Term};
pub use criterion::{CriterionState, LossReport};
pub use design::{SplitPlotDesign, VarianceSpec, WholePlot};
pub use error::{Error, Result};
pub use problem::Problem;
