//! Nonsmooth Levenberg-Marquardt methods for over-determined mixed nonlinear
//! complementarity systems.
//!
//! A mixed nonlinear complementarity system (MNLCS) couples a square-or-tall
//! block of equations `H(w, xi) = 0` with complementarity conditions
//! `G(w, xi) <= 0`, `xi >= 0`, `G(w, xi)^T xi = 0`. Reformulating the
//! complementarity part with a residual function (componentwise maximum or
//! Fischer-Burmeister) turns the whole system into a nonsmooth least-squares
//! problem, which the solvers in this crate attack with Levenberg-Marquardt
//! steps built on Newton-derivatives instead of classical Jacobians.
//!
//! Module map:
//!
//! * [`ncp`] - scalar complementarity functions and their Newton-derivatives.
//! * [`mnlcs`] - problem container, stacked residuals, Newton-derivative
//!   matrices, merit function, and index-set classification.
//! * [`solver`] - the local and globalized Levenberg-Marquardt iterations.
//! * [`bilevel`] - stationarity systems of bilevel programs expressed as
//!   MNLCS instances, plus the built-in example problems.
//! * [`regularity`] - full-rank diagnostics that certify the local
//!   convergence assumptions at a candidate solution.
//! * [`bench`] - experiment sweeps, run records, and performance profiles.

pub mod bench;
pub mod bilevel;
pub mod mnlcs;
pub mod ncp;
pub mod regularity;
pub mod solver;

/// Scalar type accepted by every numerical routine in this crate.
///
/// Blanket-implemented for `f32` and `f64`; all internal constants are
/// converted through [`real`] so the algorithms stay precision-agnostic.
pub trait Real:
    nalgebra::RealField + num_traits::FromPrimitive + num_traits::ToPrimitive + Copy + Send + Sync
{
}

impl<T> Real for T where
    T: nalgebra::RealField
        + num_traits::FromPrimitive
        + num_traits::ToPrimitive
        + Copy
        + Send
        + Sync
{
}

/// Converts an `f64` constant into the active scalar type.
#[inline]
pub fn real<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("constant not representable in scalar type")
}

/// Widens a scalar back to `f64`, e.g. for reporting and CSV output.
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().expect("scalar not representable as f64")
}

/// Dynamically sized column vector over the crate scalar.
pub type Vector<T> = nalgebra::DVector<T>;
/// Dynamically sized dense matrix over the crate scalar.
pub type Matrix<T> = nalgebra::DMatrix<T>;

/// Double-precision iterate, the default working type.
pub type Iterate64 = mnlcs::Iterate<f64>;
/// Double-precision complementarity system.
pub type MnlcsProblem64 = mnlcs::MnlcsProblem<f64>;
/// Double-precision solver configuration.
pub type LmConfig64 = solver::LmConfig<f64>;
/// Double-precision solve outcome.
pub type LmResult64 = solver::LmResult<f64>;
/// Double-precision two-level problem description.
pub type BilevelProblem64 = bilevel::BilevelProblem<f64>;
