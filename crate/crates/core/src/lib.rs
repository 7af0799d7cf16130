#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod fields;
pub mod grid;
pub mod kinetic;
pub mod measure;
pub mod numeric;
pub mod params;
pub mod stability;
pub mod transport;
pub mod vlasov;

pub use error::{Error, Result};
pub use grid::{FieldGrid, Grid, GridDensity, ScalarGrid};
pub use measure::{periodic_distance, validate_coupling, Coupling, EmpiricalMeasure};
pub use params::{Domain, Params, Sign};
