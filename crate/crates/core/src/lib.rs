//! Optimization landscapes of shallow polynomial networks.
//!
//! A width-`r` network `f(x) = Σ α_i (w_i·x)^d` is identified with the
//! symmetric tensor `Σ α_i w_i^{⊗d}`. Training it against a teacher is a
//! low-rank approximation problem in `Sym^d(ℝ^n)` under an inner product
//! induced by the data distribution. The modules cover that algebra, the
//! moment-tensor metrics, the parameterization map, closed-form critical
//! points for quadratic networks, training dynamics, and focal-point probes.

pub mod discriminant;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod network;
pub mod quadlandscape;
pub mod symtensor;

pub use error::{Error, Result};
pub use metrics::{MetricOperator, MomentSpec};
pub use network::NetworkParams;
pub use quadlandscape::{CriticalPoint, QuadMetric};
pub use symtensor::SymTensor;
