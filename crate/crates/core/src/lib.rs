//! Numerical laboratory for the Wright-Fisher diffusion with selection and
//! mutation: diffusion analytics (stationary laws, hitting-time moments,
//! ergodicity-condition integrals), path simulation, likelihood-based
//! inference for the selection parameter, and replicated Monte Carlo
//! experiments with deterministic parallel seeding.

pub mod diffusion;
pub mod estimate;
pub mod lab;
pub mod quad;
pub mod rng;
pub mod simulate;
pub mod special;
pub mod stats;
pub mod wright_fisher;

pub use diffusion::{Diffusion, InitialLaw};
pub use quad::{Interval, QuadConfig, QuadratureResult};
pub use wright_fisher::WfParams;
