//! Scalar complementarity functions and their Newton-derivatives.
//!
//! A pair `(a, b)` satisfies `a <= 0`, `b <= 0`, `ab = 0` exactly when
//! `max(a, b) = 0`, and exactly when the Fischer-Burmeister function
//! [`phi_fb`] vanishes. Both residual forms are nonsmooth along their kink
//! sets, but each admits a Newton-derivative: a single-valued substitute
//! `D` for the classical derivative with the approximation property
//! `f(z + d) - f(z) - D(z + d) d = o(|d|)` as `d -> 0`. The functions here
//! are piecewise smooth and positively homogeneous, so the remainder is in
//! fact `O(|d|^2)` away from kink crossings and vanishes identically when
//! the base point is the kink itself.

use crate::{real, Real, Vector};
use nalgebra::RowDVector;

/// Fischer-Burmeister function `a + b + sqrt(a^2 + b^2)`.
///
/// The square root is evaluated through `hypot` so that large arguments do
/// not overflow in the intermediate squares.
#[inline]
pub fn phi_fb<T: Real>(a: T, b: T) -> T {
    a + b + a.hypot(b)
}

/// Newton-derivative of `(a, b) -> max(a, b)`.
///
/// Returns the selection row `(1, 0)` or `(0, 1)`; ties `a == b` take the
/// first slot.
#[inline]
pub fn dn_max<T: Real>(a: T, b: T) -> [T; 2] {
    if a >= b {
        [T::one(), T::zero()]
    } else {
        [T::zero(), T::one()]
    }
}

/// Newton-derivative of the Euclidean norm, as a row vector.
///
/// Away from the origin this is the classical derivative `z^T / |z|`. At the
/// origin the constant row `sqrt(p)/p * e^T` is used; like every other value
/// of this map it has unit norm.
pub fn dn_norm<T: Real>(z: &Vector<T>) -> RowDVector<T> {
    let n = z.norm();
    if n > T::zero() {
        RowDVector::from_fn(z.len(), |_, j| z[j] / n)
    } else {
        let p: T = real(z.len() as f64);
        RowDVector::from_element(z.len(), p.sqrt() / p)
    }
}

/// Newton-derivative of the Fischer-Burmeister function.
///
/// Away from the origin: `(1 + a/r, 1 + b/r)` with `r = sqrt(a^2 + b^2)`.
/// At the origin both slots take the value `1 + sqrt(2)/2`. The origin test
/// is exact on purpose: the solver layers key their biactive-set logic to
/// the same comparison.
#[inline]
pub fn dn_phi_fb<T: Real>(a: T, b: T) -> [T; 2] {
    if a == T::zero() && b == T::zero() {
        let v = T::one() + real(std::f64::consts::FRAC_1_SQRT_2);
        [v, v]
    } else {
        let r = a.hypot(b);
        [T::one() + a / r, T::one() + b / r]
    }
}
