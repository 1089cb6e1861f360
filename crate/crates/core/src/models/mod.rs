//! GARCH(p₁,p₂), AR(1)–GARCH(1,1) and ARMA(1,1)–GARCH(1,1) models:
//! parameter spaces, simulation, filtering and analytic gradients.

mod filter;
mod innovations;
mod params;
mod simulate;

pub use filter::{
    filter, filter_from, gradients, gradients_from, min_length, w_blocks, FilteredPath, Gradients, Presample,
    WBlocks,
};
pub use innovations::{Contaminated, InnovationLaw, Innovations};
pub use params::{Bounds, ModelKind, ModelParams};
pub(crate) use params::project_values;
pub use simulate::{simulate, simulate_unchecked, SimulatedPath, DEFAULT_BURN_IN};
