//! Bilevel problem model and its reformulation as a complementarity system.
//!
//! A problem here is
//!
//! ```text
//! min F(x,y)  s.t.  G(x,y) <= 0,  y solves  min_y f(x,y) s.t. g(x,y) <= 0,
//! ```
//!
//! with everything twice continuously differentiable. Replacing the lower
//! level by its KKT conditions and writing partial penalization with weight
//! `lambda` on the lower-level multiplier yields a stationarity system in
//! `(x, y)` and multipliers `(mu, nu, nu_hat)`:
//!
//! * equation block `H`: the upper Lagrangian gradient
//!   `grad F + G'^T mu + g'^T (nu - lambda nu_hat)` over `(x,y)` together
//!   with the lower stationarity `grad_y f + g_y'^T nu_hat`;
//! * complementarity block: `G <= 0 perp mu >= 0`, `g <= 0 perp nu >= 0`,
//!   `g <= 0 perp nu_hat >= 0`.
//!
//! Three settings package this as an [`MnlcsProblem`]:
//!
//! * [`build_para`]: `lambda` is a fixed positive parameter.
//! * [`build_var1`]: `lambda` joins the multiplier vector; the sign
//!   constraint `lambda >= 0` is encoded as one more complementarity pair
//!   with a constraint that is identically zero.
//! * [`build_var2`]: `lambda = zeta^2` with `zeta` appended to the primal
//!   variables; no stationarity equation in `zeta` is added, so the system
//!   is over-determined.

use crate::mnlcs::{Iterate, MnlcsProblem};
use crate::ncp::phi_fb;
use crate::{real, Matrix, Real, Vector};
use std::sync::Arc;

pub type ScalarFn<T> = Box<dyn Fn(&Vector<T>) -> T + Send + Sync>;
pub type GradFn<T> = Box<dyn Fn(&Vector<T>) -> Vector<T> + Send + Sync>;
pub type HessFn<T> = Box<dyn Fn(&Vector<T>) -> Matrix<T> + Send + Sync>;
pub type ConsFn<T> = Box<dyn Fn(&Vector<T>) -> Vector<T> + Send + Sync>;
pub type ConsJacFn<T> = Box<dyn Fn(&Vector<T>) -> Matrix<T> + Send + Sync>;
/// Hessian of one constraint component, selected by index.
pub type ConsHessFn<T> = Box<dyn Fn(&Vector<T>, usize) -> Matrix<T> + Send + Sync>;

/// Objective with first and second derivatives, all in the full variable
/// `w = (x, y)` of length `n + m`.
pub struct ScalarBundle<T: Real> {
    pub value: ScalarFn<T>,
    pub gradient: GradFn<T>,
    pub hessian: HessFn<T>,
}

/// Inequality constraint block `c(w) <= 0` with Jacobian and per-component
/// Hessians, again in `w = (x, y)`.
pub struct ConstraintBundle<T: Real> {
    pub value: ConsFn<T>,
    pub jacobian: ConsJacFn<T>,
    pub hessian: ConsHessFn<T>,
}

/// Bilevel problem data. `x` has length `n`, `y` length `m`; the upper
/// constraints `G` have `s` components and the lower constraints `g` have
/// `t` components.
pub struct BilevelProblem<T: Real> {
    n: usize,
    m: usize,
    s: usize,
    t: usize,
    obj_upper: ScalarBundle<T>,
    obj_lower: ScalarBundle<T>,
    cons_upper: ConstraintBundle<T>,
    cons_lower: ConstraintBundle<T>,
}

impl<T: Real> BilevelProblem<T> {
    pub fn new(
        n: usize,
        m: usize,
        s: usize,
        t: usize,
        obj_upper: ScalarBundle<T>,
        obj_lower: ScalarBundle<T>,
        cons_upper: ConstraintBundle<T>,
        cons_lower: ConstraintBundle<T>,
    ) -> Self {
        assert!(n >= 1 && m >= 1, "need at least one variable on each level");
        Self {
            n,
            m,
            s,
            t,
            obj_upper,
            obj_lower,
            cons_upper,
            cons_lower,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn s(&self) -> usize {
        self.s
    }
    pub fn t(&self) -> usize {
        self.t
    }
    /// Length of `w = (x, y)`.
    pub fn dim_w(&self) -> usize {
        self.n + self.m
    }

    fn check_w(&self, w: &Vector<T>) {
        assert_eq!(w.len(), self.dim_w(), "w has wrong length");
    }

    pub fn upper_obj(&self, w: &Vector<T>) -> T {
        self.check_w(w);
        (self.obj_upper.value)(w)
    }

    pub fn upper_obj_grad(&self, w: &Vector<T>) -> Vector<T> {
        self.check_w(w);
        let g = (self.obj_upper.gradient)(w);
        assert_eq!(g.len(), self.dim_w(), "upper gradient has wrong length");
        g
    }

    pub fn upper_obj_hess(&self, w: &Vector<T>) -> Matrix<T> {
        self.check_w(w);
        let h = (self.obj_upper.hessian)(w);
        assert_eq!(h.shape(), (self.dim_w(), self.dim_w()), "upper Hessian shape");
        h
    }

    pub fn lower_obj(&self, w: &Vector<T>) -> T {
        self.check_w(w);
        (self.obj_lower.value)(w)
    }

    pub fn lower_obj_grad(&self, w: &Vector<T>) -> Vector<T> {
        self.check_w(w);
        let g = (self.obj_lower.gradient)(w);
        assert_eq!(g.len(), self.dim_w(), "lower gradient has wrong length");
        g
    }

    pub fn lower_obj_hess(&self, w: &Vector<T>) -> Matrix<T> {
        self.check_w(w);
        let h = (self.obj_lower.hessian)(w);
        assert_eq!(h.shape(), (self.dim_w(), self.dim_w()), "lower Hessian shape");
        h
    }

    pub fn upper_cons(&self, w: &Vector<T>) -> Vector<T> {
        self.check_w(w);
        let v = (self.cons_upper.value)(w);
        assert_eq!(v.len(), self.s, "G has wrong length");
        v
    }

    pub fn upper_cons_jac(&self, w: &Vector<T>) -> Matrix<T> {
        self.check_w(w);
        let j = (self.cons_upper.jacobian)(w);
        assert_eq!(j.shape(), (self.s, self.dim_w()), "G Jacobian shape");
        j
    }

    pub fn upper_cons_hess(&self, w: &Vector<T>, i: usize) -> Matrix<T> {
        self.check_w(w);
        assert!(i < self.s, "upper constraint index out of range");
        let h = (self.cons_upper.hessian)(w, i);
        assert_eq!(h.shape(), (self.dim_w(), self.dim_w()), "G Hessian shape");
        h
    }

    pub fn lower_cons(&self, w: &Vector<T>) -> Vector<T> {
        self.check_w(w);
        let v = (self.cons_lower.value)(w);
        assert_eq!(v.len(), self.t, "g has wrong length");
        v
    }

    pub fn lower_cons_jac(&self, w: &Vector<T>) -> Matrix<T> {
        self.check_w(w);
        let j = (self.cons_lower.jacobian)(w);
        assert_eq!(j.shape(), (self.t, self.dim_w()), "g Jacobian shape");
        j
    }

    pub fn lower_cons_hess(&self, w: &Vector<T>, i: usize) -> Matrix<T> {
        self.check_w(w);
        assert!(i < self.t, "lower constraint index out of range");
        let h = (self.cons_lower.hessian)(w, i);
        assert_eq!(h.shape(), (self.dim_w(), self.dim_w()), "g Hessian shape");
        h
    }
}

/// A candidate stationarity point with all multipliers.
///
/// `zeta` is `Some` only for points produced by or destined for the squared
/// setting, where `lambda = zeta^2` holds by construction.
#[derive(Clone, Debug)]
pub struct StationarityPoint<T: Real> {
    pub x: Vector<T>,
    pub y: Vector<T>,
    pub mu: Vector<T>,
    pub nu: Vector<T>,
    pub nu_hat: Vector<T>,
    pub lambda: T,
    pub zeta: Option<T>,
}

impl<T: Real> StationarityPoint<T> {
    pub fn new(
        x: Vector<T>,
        y: Vector<T>,
        mu: Vector<T>,
        nu: Vector<T>,
        nu_hat: Vector<T>,
        lambda: T,
    ) -> Self {
        Self {
            x,
            y,
            mu,
            nu,
            nu_hat,
            lambda,
            zeta: None,
        }
    }

    /// Sets `zeta` and ties `lambda = zeta^2`.
    pub fn with_zeta(mut self, zeta: T) -> Self {
        self.zeta = Some(zeta);
        self.lambda = zeta * zeta;
        self
    }

    fn check_shapes(&self, bp: &BilevelProblem<T>) {
        assert_eq!(self.x.len(), bp.n, "x has wrong length");
        assert_eq!(self.y.len(), bp.m, "y has wrong length");
        assert_eq!(self.mu.len(), bp.s, "mu has wrong length");
        assert_eq!(self.nu.len(), bp.t, "nu has wrong length");
        assert_eq!(self.nu_hat.len(), bp.t, "nu_hat has wrong length");
    }

    fn w(&self) -> Vector<T> {
        let mut w = Vector::zeros(self.x.len() + self.y.len());
        w.rows_mut(0, self.x.len()).copy_from(&self.x);
        w.rows_mut(self.x.len(), self.y.len()).copy_from(&self.y);
        w
    }
}

/// Which reformulation to build and how to move points in and out of it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SettingKind<T: Real> {
    /// Fixed penalization weight `lambda > 0`.
    Para(T),
    /// `lambda` appended to the multipliers, sign handled by an extra
    /// complementarity pair against the zero constraint.
    Var1,
    /// `lambda = zeta^2` with `zeta` appended to the primal variables.
    Var2,
}

impl<T: Real> SettingKind<T> {
    pub fn name(&self) -> &'static str {
        match self {
            SettingKind::Para(_) => "para",
            SettingKind::Var1 => "var1",
            SettingKind::Var2 => "var2",
        }
    }

    pub fn build(&self, bp: &Arc<BilevelProblem<T>>) -> MnlcsProblem<T> {
        match *self {
            SettingKind::Para(lambda) => build_para(bp, lambda),
            SettingKind::Var1 => build_var1(bp),
            SettingKind::Var2 => build_var2(bp),
        }
    }

    /// Lays a stationarity point out as an iterate of the built system.
    pub fn pack(&self, bp: &BilevelProblem<T>, pt: &StationarityPoint<T>) -> Iterate<T> {
        pt.check_shapes(bp);
        let (n, m, s, t) = (bp.n, bp.m, bp.s, bp.t);
        let mut multipliers = Vector::zeros(s + 2 * t);
        multipliers.rows_mut(0, s).copy_from(&pt.mu);
        multipliers.rows_mut(s, t).copy_from(&pt.nu);
        multipliers.rows_mut(s + t, t).copy_from(&pt.nu_hat);
        match self {
            SettingKind::Para(_) => Iterate::new(pt.w(), multipliers),
            SettingKind::Var1 => {
                let mut xi = Vector::zeros(s + 2 * t + 1);
                xi.rows_mut(0, s + 2 * t).copy_from(&multipliers);
                xi[s + 2 * t] = pt.lambda;
                Iterate::new(pt.w(), xi)
            }
            SettingKind::Var2 => {
                let zeta = pt.zeta.unwrap_or_else(|| pt.lambda.sqrt());
                let mut w = Vector::zeros(n + m + 1);
                w.rows_mut(0, n + m).copy_from(&pt.w());
                w[n + m] = zeta;
                Iterate::new(w, multipliers)
            }
        }
    }

    /// Inverse of [`SettingKind::pack`].
    pub fn unpack(&self, bp: &BilevelProblem<T>, z: &Iterate<T>) -> StationarityPoint<T> {
        let (n, m, s, t) = (bp.n, bp.m, bp.s, bp.t);
        let take = |v: &Vector<T>, at: usize, len: usize| v.rows(at, len).into_owned();
        let (lambda, zeta) = match *self {
            SettingKind::Para(lambda) => {
                assert_eq!(z.w.len(), n + m);
                assert_eq!(z.xi.len(), s + 2 * t);
                (lambda, None)
            }
            SettingKind::Var1 => {
                assert_eq!(z.w.len(), n + m);
                assert_eq!(z.xi.len(), s + 2 * t + 1);
                (z.xi[s + 2 * t], None)
            }
            SettingKind::Var2 => {
                assert_eq!(z.w.len(), n + m + 1);
                assert_eq!(z.xi.len(), s + 2 * t);
                let zeta = z.w[n + m];
                (zeta * zeta, Some(zeta))
            }
        };
        StationarityPoint {
            x: take(&z.w, 0, n),
            y: take(&z.w, n, m),
            mu: take(&z.xi, 0, s),
            nu: take(&z.xi, s, t),
            nu_hat: take(&z.xi, s + t, t),
            lambda,
            zeta,
        }
    }
}

/// Raw stationarity residual of the bilevel system at a candidate point.
///
/// Stacks, in order: the upper Lagrangian gradient over `(x,y)`, the lower
/// stationarity over `y`, the three Fischer-Burmeister complementarity
/// blocks `phi(G_i, -mu_i)`, `phi(g_i, -nu_i)`, `phi(g_i, -nu_hat_i)`, and
/// `min(lambda, 0)`. The result is zero exactly at stationarity points.
pub fn kkt_residual<T: Real>(bp: &BilevelProblem<T>, pt: &StationarityPoint<T>) -> Vector<T> {
    pt.check_shapes(bp);
    let (n, m, s, t) = (bp.n, bp.m, bp.s, bp.t);
    let w = pt.w();
    let coef = &pt.nu - &pt.nu_hat * pt.lambda;
    let upper = upper_lagrangian_grad(bp, &w, &pt.mu, &coef);
    let lower = lower_stationarity(bp, &w, &pt.nu_hat);
    let gu = bp.upper_cons(&w);
    let gl = bp.lower_cons(&w);

    let mut out = Vector::zeros(n + 2 * m + s + 2 * t + 1);
    out.rows_mut(0, n + m).copy_from(&upper);
    out.rows_mut(n + m, m).copy_from(&lower);
    let mut at = n + 2 * m;
    for i in 0..s {
        out[at + i] = phi_fb(gu[i], -pt.mu[i]);
    }
    at += s;
    for i in 0..t {
        out[at + i] = phi_fb(gl[i], -pt.nu[i]);
    }
    at += t;
    for i in 0..t {
        out[at + i] = phi_fb(gl[i], -pt.nu_hat[i]);
    }
    out[at + t] = pt.lambda.min(T::zero());
    out
}

/// `grad F + G'^T mu + g'^T coef` over `w = (x,y)`.
fn upper_lagrangian_grad<T: Real>(
    bp: &BilevelProblem<T>,
    w: &Vector<T>,
    mu: &Vector<T>,
    coef: &Vector<T>,
) -> Vector<T> {
    bp.upper_obj_grad(w)
        + bp.upper_cons_jac(w).tr_mul(mu)
        + bp.lower_cons_jac(w).tr_mul(coef)
}

/// `grad_y f + g_y'^T nu_hat`, length `m`.
fn lower_stationarity<T: Real>(
    bp: &BilevelProblem<T>,
    w: &Vector<T>,
    nu_hat: &Vector<T>,
) -> Vector<T> {
    let (n, m) = (bp.n, bp.m);
    bp.lower_obj_grad(w).rows(n, m).into_owned()
        + bp.lower_cons_jac(w).columns(n, m).tr_mul(nu_hat)
}

/// `hess F + sum_i mu_i hess G_i + sum_i coef_i hess g_i` over `w`.
pub(crate) fn upper_lagrangian_hess<T: Real>(
    bp: &BilevelProblem<T>,
    w: &Vector<T>,
    mu: &Vector<T>,
    coef: &Vector<T>,
) -> Matrix<T> {
    let mut h = bp.upper_obj_hess(w);
    for i in 0..bp.s {
        let c = mu[i];
        h.zip_apply(&bp.upper_cons_hess(w, i), |a, b| *a += c * b);
    }
    for i in 0..bp.t {
        let c = coef[i];
        h.zip_apply(&bp.lower_cons_hess(w, i), |a, b| *a += c * b);
    }
    h
}

/// The `y`-rows of `hess f + sum_i nu_hat_i hess g_i`, shape `m x (n+m)`.
fn lower_lagrangian_hess_yrows<T: Real>(
    bp: &BilevelProblem<T>,
    w: &Vector<T>,
    nu_hat: &Vector<T>,
) -> Matrix<T> {
    let mut h = bp.lower_obj_hess(w);
    for i in 0..bp.t {
        let c = nu_hat[i];
        h.zip_apply(&bp.lower_cons_hess(w, i), |a, b| *a += c * b);
    }
    h.rows(bp.n, bp.m).into_owned()
}

/// `[H_upper; H_lower]`: the equation block shared by all three settings,
/// evaluated at `(x,y)` with multipliers `(mu, nu, nu_hat)` and weight
/// `lambda`. Length `n + 2m`.
fn equation_block<T: Real>(
    bp: &BilevelProblem<T>,
    w: &Vector<T>,
    mu: &Vector<T>,
    nu: &Vector<T>,
    nu_hat: &Vector<T>,
    lambda: T,
) -> Vector<T> {
    let (n, m) = (bp.n, bp.m);
    let coef = nu - nu_hat * lambda;
    let mut out = Vector::zeros(n + 2 * m);
    out.rows_mut(0, n + m)
        .copy_from(&upper_lagrangian_grad(bp, w, mu, &coef));
    out.rows_mut(n + m, m)
        .copy_from(&lower_stationarity(bp, w, nu_hat));
    out
}

/// `[G; g; g]` evaluated at `(x,y)`, length `s + 2t`.
fn stacked_constraints<T: Real>(bp: &BilevelProblem<T>, w: &Vector<T>) -> Vector<T> {
    let (s, t) = (bp.s, bp.t);
    let mut out = Vector::zeros(s + 2 * t);
    out.rows_mut(0, s).copy_from(&bp.upper_cons(w));
    let gl = bp.lower_cons(w);
    out.rows_mut(s, t).copy_from(&gl);
    out.rows_mut(s + t, t).copy_from(&gl);
    out
}

fn split_multipliers<T: Real>(
    xi: &Vector<T>,
    s: usize,
    t: usize,
) -> (Vector<T>, Vector<T>, Vector<T>) {
    (
        xi.rows(0, s).into_owned(),
        xi.rows(s, t).into_owned(),
        xi.rows(s + t, t).into_owned(),
    )
}

/// Derivative blocks of the equation stack, written into `jh` starting at
/// the given column offsets. `w_col` is where the `(x,y)` columns start,
/// `mult_col` where the multiplier columns start.
#[allow(clippy::too_many_arguments)]
fn fill_equation_jacobian<T: Real>(
    jh: &mut Matrix<T>,
    bp: &BilevelProblem<T>,
    w: &Vector<T>,
    mu: &Vector<T>,
    nu: &Vector<T>,
    nu_hat: &Vector<T>,
    lambda: T,
    w_col: usize,
    mult_col: usize,
) {
    let (n, m, s, t) = (bp.n, bp.m, bp.s, bp.t);
    let coef = nu - nu_hat * lambda;
    let jg_upper_t = bp.upper_cons_jac(w).transpose();
    let jg_lower = bp.lower_cons_jac(w);
    let jg_lower_t = jg_lower.transpose();

    // Rows 0..n+m: derivative of the upper Lagrangian gradient.
    jh.view_mut((0, w_col), (n + m, n + m))
        .copy_from(&upper_lagrangian_hess(bp, w, mu, &coef));
    jh.view_mut((0, mult_col), (n + m, s)).copy_from(&jg_upper_t);
    jh.view_mut((0, mult_col + s), (n + m, t))
        .copy_from(&jg_lower_t);
    jh.view_mut((0, mult_col + s + t), (n + m, t))
        .copy_from(&(&jg_lower_t * (-lambda)));

    // Rows n+m..n+2m: derivative of the lower stationarity block.
    jh.view_mut((n + m, w_col), (m, n + m))
        .copy_from(&lower_lagrangian_hess_yrows(bp, w, nu_hat));
    jh.view_mut((n + m, mult_col + s + t), (m, t))
        .copy_from(&jg_lower.columns(n, m).transpose());
}

/// Jacobian of `[G; g; g]` with respect to `(x,y)`, written into `jg` at
/// column offset `w_col` (all other columns stay zero).
fn fill_constraint_jacobian<T: Real>(
    jg: &mut Matrix<T>,
    bp: &BilevelProblem<T>,
    w: &Vector<T>,
    w_col: usize,
) {
    let (n, m, s, t) = (bp.n, bp.m, bp.s, bp.t);
    jg.view_mut((0, w_col), (s, n + m))
        .copy_from(&bp.upper_cons_jac(w));
    let jl = bp.lower_cons_jac(w);
    jg.view_mut((s, w_col), (t, n + m)).copy_from(&jl);
    jg.view_mut((s + t, w_col), (t, n + m)).copy_from(&jl);
}

/// Fixed-weight reformulation: `w = (x,y)`, multipliers `(mu, nu, nu_hat)`.
///
/// Dimensions `p1 = n+m`, `p2 = s+2t`, `q1 = n+2m`: the system has `m` more
/// equations than primal unknowns. Panics if `lambda <= 0`.
pub fn build_para<T: Real>(bp: &Arc<BilevelProblem<T>>, lambda: T) -> MnlcsProblem<T> {
    assert!(lambda > T::zero(), "lambda must be positive");
    let (n, m, s, t) = (bp.n, bp.m, bp.s, bp.t);
    let (p1, p2, q1) = (n + m, s + 2 * t, n + 2 * m);

    let b = bp.clone();
    let h = Box::new(move |w: &Vector<T>, xi: &Vector<T>| {
        let (mu, nu, nu_hat) = split_multipliers(xi, s, t);
        equation_block(&b, w, &mu, &nu, &nu_hat, lambda)
    });

    let b = bp.clone();
    let jac_h = Box::new(move |w: &Vector<T>, xi: &Vector<T>| {
        let (mu, nu, nu_hat) = split_multipliers(xi, s, t);
        let mut jh = Matrix::zeros(q1, p1 + p2);
        fill_equation_jacobian(&mut jh, &b, w, &mu, &nu, &nu_hat, lambda, 0, p1);
        jh
    });

    let b = bp.clone();
    let g = Box::new(move |w: &Vector<T>, _: &Vector<T>| stacked_constraints(&b, w));

    let b = bp.clone();
    let jac_g = Box::new(move |w: &Vector<T>, _: &Vector<T>| {
        let mut jg = Matrix::zeros(p2, p1 + p2);
        fill_constraint_jacobian(&mut jg, &b, w, 0);
        jg
    });

    MnlcsProblem::new(p1, p2, q1, h, jac_h, g, jac_g)
}

/// Variable-weight reformulation: `lambda` becomes the last multiplier,
/// constrained to `lambda >= 0` through a complementarity pair with the
/// identically zero constraint (`max(0, -lambda) = 0` iff `lambda >= 0`).
///
/// Dimensions `p1 = n+m`, `p2 = s+2t+1`, `q1 = n+2m`.
pub fn build_var1<T: Real>(bp: &Arc<BilevelProblem<T>>) -> MnlcsProblem<T> {
    let (n, m, s, t) = (bp.n, bp.m, bp.s, bp.t);
    let (p1, p2, q1) = (n + m, s + 2 * t + 1, n + 2 * m);

    let b = bp.clone();
    let h = Box::new(move |w: &Vector<T>, xi: &Vector<T>| {
        let (mu, nu, nu_hat) = split_multipliers(xi, s, t);
        let lambda = xi[s + 2 * t];
        equation_block(&b, w, &mu, &nu, &nu_hat, lambda)
    });

    let b = bp.clone();
    let jac_h = Box::new(move |w: &Vector<T>, xi: &Vector<T>| {
        let (mu, nu, nu_hat) = split_multipliers(xi, s, t);
        let lambda = xi[s + 2 * t];
        let mut jh = Matrix::zeros(q1, p1 + p2);
        fill_equation_jacobian(&mut jh, &b, w, &mu, &nu, &nu_hat, lambda, 0, p1);
        // lambda-column: d/d lambda of g'^T (nu - lambda nu_hat).
        let lam_col = -(b.lower_cons_jac(w).tr_mul(&nu_hat));
        jh.view_mut((0, p1 + s + 2 * t), (n + m, 1)).copy_from(&lam_col);
        jh
    });

    let b = bp.clone();
    let g = Box::new(move |w: &Vector<T>, _: &Vector<T>| {
        let mut out = Vector::zeros(p2);
        out.rows_mut(0, s + 2 * t)
            .copy_from(&stacked_constraints(&b, w));
        out
    });

    let b = bp.clone();
    let jac_g = Box::new(move |w: &Vector<T>, _: &Vector<T>| {
        let mut jg = Matrix::zeros(p2, p1 + p2);
        fill_constraint_jacobian(&mut jg, &b, w, 0);
        jg
    });

    MnlcsProblem::new(p1, p2, q1, h, jac_h, g, jac_g)
}

/// Squared-weight reformulation: `w = (x, y, zeta)` with `lambda = zeta^2`,
/// multipliers `(mu, nu, nu_hat)` as in the fixed-weight setting. No
/// stationarity equation in `zeta` is added.
///
/// Dimensions `p1 = n+m+1`, `p2 = s+2t`, `q1 = n+2m`.
pub fn build_var2<T: Real>(bp: &Arc<BilevelProblem<T>>) -> MnlcsProblem<T> {
    let (n, m, s, t) = (bp.n, bp.m, bp.s, bp.t);
    let (p1, p2, q1) = (n + m + 1, s + 2 * t, n + 2 * m);

    let b = bp.clone();
    let h = Box::new(move |w: &Vector<T>, xi: &Vector<T>| {
        let xy = w.rows(0, n + m).into_owned();
        let zeta = w[n + m];
        let (mu, nu, nu_hat) = split_multipliers(xi, s, t);
        equation_block(&b, &xy, &mu, &nu, &nu_hat, zeta * zeta)
    });

    let b = bp.clone();
    let jac_h = Box::new(move |w: &Vector<T>, xi: &Vector<T>| {
        let xy = w.rows(0, n + m).into_owned();
        let zeta = w[n + m];
        let (mu, nu, nu_hat) = split_multipliers(xi, s, t);
        let mut jh = Matrix::zeros(q1, p1 + p2);
        fill_equation_jacobian(&mut jh, &b, &xy, &mu, &nu, &nu_hat, zeta * zeta, 0, p1);
        // zeta-column: d/d zeta of g'^T (nu - zeta^2 nu_hat).
        let two: T = real(2.0);
        let zeta_col = b.lower_cons_jac(&xy).tr_mul(&nu_hat) * (-two * zeta);
        jh.view_mut((0, n + m), (n + m, 1)).copy_from(&zeta_col);
        jh
    });

    let b = bp.clone();
    let g = Box::new(move |w: &Vector<T>, _: &Vector<T>| {
        let xy = w.rows(0, n + m).into_owned();
        stacked_constraints(&b, &xy)
    });

    let b = bp.clone();
    let jac_g = Box::new(move |w: &Vector<T>, _: &Vector<T>| {
        let xy = w.rows(0, n + m).into_owned();
        let mut jg = Matrix::zeros(p2, p1 + p2);
        fill_constraint_jacobian(&mut jg, &b, &xy, 0);
        jg
    });

    MnlcsProblem::new(p1, p2, q1, h, jac_h, g, jac_g)
}

/// Small nonconvex test problem with a known global minimizer.
///
/// ```text
/// min (x-8)^2 + (y-9)^2   s.t.  x >= 0,  y in argmin{(y-3)^2 : y^2 <= x}
/// ```
///
/// The global minimizer is `(x,y) = (9,3)` with objective value 37; the
/// lower-level constraint is active there and the lower level satisfies
/// LICQ, so its multiplier set is `{0}`.
pub fn make_example8<T: Real>() -> BilevelProblem<T> {
    let two: T = real(2.0);
    BilevelProblem::new(
        1,
        1,
        1,
        1,
        ScalarBundle {
            value: Box::new(move |w: &Vector<T>| {
                let dx = w[0] - real(8.0);
                let dy = w[1] - real(9.0);
                dx * dx + dy * dy
            }),
            gradient: Box::new(move |w: &Vector<T>| {
                Vector::from_column_slice(&[two * (w[0] - real(8.0)), two * (w[1] - real(9.0))])
            }),
            hessian: Box::new(move |_: &Vector<T>| Matrix::from_diagonal_element(2, 2, two)),
        },
        ScalarBundle {
            value: Box::new(move |w: &Vector<T>| {
                let dy = w[1] - real(3.0);
                dy * dy
            }),
            gradient: Box::new(move |w: &Vector<T>| {
                Vector::from_column_slice(&[T::zero(), two * (w[1] - real(3.0))])
            }),
            hessian: Box::new(move |_: &Vector<T>| {
                let mut h = Matrix::zeros(2, 2);
                h[(1, 1)] = two;
                h
            }),
        },
        ConstraintBundle {
            value: Box::new(move |w: &Vector<T>| Vector::from_column_slice(&[-w[0]])),
            jacobian: Box::new(move |_: &Vector<T>| {
                Matrix::from_row_slice(1, 2, &[-T::one(), T::zero()])
            }),
            hessian: Box::new(move |_: &Vector<T>, _| Matrix::zeros(2, 2)),
        },
        ConstraintBundle {
            value: Box::new(move |w: &Vector<T>| {
                Vector::from_column_slice(&[w[1] * w[1] - w[0]])
            }),
            jacobian: Box::new(move |w: &Vector<T>| {
                Matrix::from_row_slice(1, 2, &[-T::one(), two * w[1]])
            }),
            hessian: Box::new(move |_: &Vector<T>, _| {
                let mut h = Matrix::zeros(2, 2);
                h[(1, 1)] = two;
                h
            }),
        },
    )
}

/// Transportation network size: 5 supply nodes, 7 demand nodes.
pub const TRANSPORT_SUPPLIES: usize = 5;
pub const TRANSPORT_DEMANDS: usize = 7;

/// Inverse transportation problem: recover supply capacities from observed
/// flows.
///
/// The lower level is a linear transportation program in the flows
/// `y in R^{5x7}` (row-major): minimize `sum c_ij y_ij` subject to row sums
/// bounded by the supplies `x`, column sums covering the demands `b`, and
/// `y >= 0`. The upper level picks `x >= 0` with total supply at least the
/// total demand to bring `y` close to a noisy observation `y_o`:
/// `min 0.5 |y - y_o|^2`.
///
/// Costs, demands, and observation noise are drawn deterministically from
/// `seed`, so equal seeds give identical instances. `y_o` is the equal-split
/// feasible flow (`b_j / 5` on every route into demand `j`) plus Gaussian
/// noise with standard deviation 0.01.
pub fn make_transportation<T: Real>(seed: u64) -> BilevelProblem<T> {
    use rand::Rng;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    let n = TRANSPORT_SUPPLIES;
    let l = TRANSPORT_DEMANDS;
    let m = n * l;
    let s = n + 1;
    let t = n + l + m;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let costs: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
    let demands: Vec<f64> = (0..l).map(|_| rng.gen_range(1..=9) as f64).collect();
    let noise = Normal::new(0.0, 0.01).expect("valid normal parameters");
    let mut observed = vec![0.0f64; m];
    for (k, slot) in observed.iter_mut().enumerate() {
        let j = k % l;
        *slot = demands[j] / n as f64 + noise.sample(&mut rng);
    }

    let c: Vector<T> = Vector::from_iterator(m, costs.iter().map(|&v| real(v)));
    let b: Vector<T> = Vector::from_iterator(l, demands.iter().map(|&v| real(v)));
    let y_o: Vector<T> = Vector::from_iterator(m, observed.iter().map(|&v| real(v)));

    let half: T = real(0.5);
    let dim = n + m;

    let y_obs = y_o.clone();
    let upper_value = Box::new(move |w: &Vector<T>| {
        let mut acc = T::zero();
        for k in 0..m {
            let d = w[n + k] - y_obs[k];
            acc += d * d;
        }
        acc * half
    });
    let y_obs = y_o.clone();
    let upper_gradient = Box::new(move |w: &Vector<T>| {
        let mut g = Vector::zeros(dim);
        for k in 0..m {
            g[n + k] = w[n + k] - y_obs[k];
        }
        g
    });
    let upper_hessian = Box::new(move |_: &Vector<T>| {
        let mut h = Matrix::zeros(dim, dim);
        for k in 0..m {
            h[(n + k, n + k)] = T::one();
        }
        h
    });

    let c_lower = c.clone();
    let lower_value = Box::new(move |w: &Vector<T>| {
        let mut acc = T::zero();
        for k in 0..m {
            acc += c_lower[k] * w[n + k];
        }
        acc
    });
    let c_lower = c;
    let lower_gradient = Box::new(move |w: &Vector<T>| {
        let _ = w;
        let mut g = Vector::zeros(dim);
        for k in 0..m {
            g[n + k] = c_lower[k];
        }
        g
    });
    let lower_hessian = Box::new(move |_: &Vector<T>| Matrix::zeros(dim, dim));

    // Upper constraints: -x_i <= 0 and total demand minus total supply <= 0.
    let b_upper = b.clone();
    let upper_cons = Box::new(move |w: &Vector<T>| {
        let mut v = Vector::zeros(n + 1);
        for i in 0..n {
            v[i] = -w[i];
        }
        let mut total = T::zero();
        for j in 0..l {
            total += b_upper[j];
        }
        for i in 0..n {
            total -= w[i];
        }
        v[n] = total;
        v
    });
    let upper_cons_jac = Box::new(move |_: &Vector<T>| {
        let mut jac = Matrix::zeros(n + 1, dim);
        for i in 0..n {
            jac[(i, i)] = -T::one();
            jac[(n, i)] = -T::one();
        }
        jac
    });
    let upper_cons_hess = Box::new(move |_: &Vector<T>, _| Matrix::zeros(dim, dim));

    // Lower constraints in order: n supply rows (row sum of y minus x_i),
    // l demand rows (demand minus column sum), m nonnegativity rows (-y).
    let b_lower = b;
    let lower_cons = Box::new(move |w: &Vector<T>| {
        let mut v = Vector::zeros(t);
        for i in 0..n {
            let mut row_sum = T::zero();
            for j in 0..l {
                row_sum += w[n + i * l + j];
            }
            v[i] = row_sum - w[i];
        }
        for j in 0..l {
            let mut col_sum = T::zero();
            for i in 0..n {
                col_sum += w[n + i * l + j];
            }
            v[n + j] = b_lower[j] - col_sum;
        }
        for k in 0..m {
            v[n + l + k] = -w[n + k];
        }
        v
    });
    let lower_cons_jac = Box::new(move |_: &Vector<T>| {
        let mut jac = Matrix::zeros(t, dim);
        for i in 0..n {
            jac[(i, i)] = -T::one();
            for j in 0..l {
                jac[(i, n + i * l + j)] = T::one();
            }
        }
        for j in 0..l {
            for i in 0..n {
                jac[(n + j, n + i * l + j)] = -T::one();
            }
        }
        for k in 0..m {
            jac[(n + l + k, n + k)] = -T::one();
        }
        jac
    });
    let lower_cons_hess = Box::new(move |_: &Vector<T>, _| Matrix::zeros(dim, dim));

    BilevelProblem::new(
        n,
        m,
        s,
        t,
        ScalarBundle {
            value: upper_value,
            gradient: upper_gradient,
            hessian: upper_hessian,
        },
        ScalarBundle {
            value: lower_value,
            gradient: lower_gradient,
            hessian: lower_hessian,
        },
        ConstraintBundle {
            value: upper_cons,
            jacobian: upper_cons_jac,
            hessian: upper_cons_hess,
        },
        ConstraintBundle {
            value: lower_cons,
            jacobian: lower_cons_jac,
            hessian: lower_cons_hess,
        },
    )
}

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: [&str; 2] = ["example8", "transport"];

/// Looks up a built-in benchmark problem. `seed` only affects "transport".
pub fn builtin<T: Real>(name: &str, seed: u64) -> Option<BilevelProblem<T>> {
    match name {
        "example8" => Some(make_example8()),
        "transport" => Some(make_transportation(seed)),
        _ => None,
    }
}
