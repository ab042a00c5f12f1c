pub mod checks;
pub mod decay_iteration;
pub mod error;
pub mod expr;
pub mod fit;
pub mod harness;
pub mod ma_solver;
pub mod mode_ode;
pub mod model_space;
pub mod par;
pub mod quadrature;
pub mod radial;
pub mod report;
pub mod special;
pub mod spectral_poisson;
pub use error::{LabError, Result};
