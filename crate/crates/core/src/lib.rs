pub mod config;
pub mod error;
pub mod expoly;
pub mod filtering;
pub mod intensity;
pub mod kernels;
pub mod laplace;
pub mod limits;
pub mod models;
pub mod poly;
pub mod quad;
pub mod renewal;
pub mod simulate;

pub use error::{Error, Result};
pub use expoly::{ExpPoly, Term, C64};
pub use laplace::{invert_lt, lt_of, neumann_series, RationalLT};
