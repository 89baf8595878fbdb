//! Mixed nonlinear complementarity systems and their residual machinery.
//!
//! A problem couples `H(w, xi) = 0` (q1 equations, possibly more equations
//! than `w` has entries) with the complementarity conditions
//! `G(w, xi) <= 0`, `xi >= 0`, `G(w, xi)^T xi = 0` (p2 pairs). Stacking an
//! NCP residual on the pairs `(G_i, -xi_i)` under the equation block yields
//! the two residual maps
//!
//! ```text
//! F_max(z) = [H(z); max(G(z), -xi)]      F_fb(z) = [H(z); phi_fb(G(z), -xi)]
//! ```
//!
//! whose common root set is exactly the solution set of the system. This
//! module owns the problem container, both residuals, their
//! Newton-derivative matrices, the merit function `Psi_fb = 0.5 |F_fb|^2`
//! with its gradient, the complementarity index sets, and a
//! finite-difference validator for user-supplied Jacobians.

use crate::{ncp, real, Matrix, Real, Vector};

/// Vector-valued problem callback taking the blocks `w` and `xi`.
pub type VecFn<T> = Box<dyn Fn(&Vector<T>, &Vector<T>) -> Vector<T> + Send + Sync>;
/// Jacobian callback; columns run over the stacked variable `(w, xi)`.
pub type JacFn<T> = Box<dyn Fn(&Vector<T>, &Vector<T>) -> Matrix<T> + Send + Sync>;

/// A point of the combined space, kept in its two natural blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct Iterate<T: Real> {
    pub w: Vector<T>,
    pub xi: Vector<T>,
}

impl<T: Real> Iterate<T> {
    pub fn new(w: Vector<T>, xi: Vector<T>) -> Self {
        Self { w, xi }
    }

    /// Splits a stacked vector `z = (w, xi)` at position `p1`.
    pub fn from_stacked(z: &Vector<T>, p1: usize) -> Self {
        assert!(p1 <= z.len(), "split point {p1} beyond vector length {}", z.len());
        Self {
            w: z.rows(0, p1).into_owned(),
            xi: z.rows(p1, z.len() - p1).into_owned(),
        }
    }

    /// Stacks the two blocks back into one vector.
    pub fn stacked(&self) -> Vector<T> {
        let mut z = Vector::zeros(self.dim());
        z.rows_mut(0, self.w.len()).copy_from(&self.w);
        z.rows_mut(self.w.len(), self.xi.len()).copy_from(&self.xi);
        z
    }

    pub fn dim(&self) -> usize {
        self.w.len() + self.xi.len()
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().all(|v| v.is_finite()) && self.xi.iter().all(|v| v.is_finite())
    }

    /// Returns `self + alpha * d` for a stacked direction `d`.
    pub fn add_scaled(&self, d: &Vector<T>, alpha: T) -> Self {
        assert_eq!(d.len(), self.dim(), "direction length mismatch");
        let p1 = self.w.len();
        let mut out = self.clone();
        for i in 0..p1 {
            out.w[i] += alpha * d[i];
        }
        for j in 0..self.xi.len() {
            out.xi[j] += alpha * d[p1 + j];
        }
        out
    }
}

/// Complementarity classification of a point. Index sets are 0-based subsets
/// of `{0, ..., p2-1}`.
///
/// `i0`/`i_minus` partition the pairs by activity of `G_i` (up to `act_tol`),
/// `i_plus`/`i00` refine `i0` by the sign of `xi_i`, and `i_ge`/`i_lt` are
/// the branch sets of the max residual, always decided by the exact
/// comparison `G_i >= -xi_i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComplIndexSets {
    pub i0: Vec<usize>,
    pub i_minus: Vec<usize>,
    pub i_plus: Vec<usize>,
    pub i00: Vec<usize>,
    pub i_ge: Vec<usize>,
    pub i_lt: Vec<usize>,
}

/// Where a finite-difference mismatch or non-finite entry was found.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JacBlock {
    H,
    G,
}

/// Per-point outcome of [`MnlcsProblem::validate_derivatives`].
#[derive(Clone, Debug)]
pub struct PointValidation<T: Real> {
    pub max_rel_err_h: T,
    pub worst_h: (usize, usize),
    pub max_rel_err_g: T,
    pub worst_g: (usize, usize),
    pub nonfinite_entries: Vec<(JacBlock, usize, usize)>,
    pub pass: bool,
}

/// Finite-difference validation report over a list of points.
#[derive(Clone, Debug)]
pub struct DerivativeValidation<T: Real> {
    pub points: Vec<PointValidation<T>>,
    pub pass: bool,
}

/// Relative mismatch above which a Jacobian entry fails validation.
pub const VALIDATION_TOL: f64 = 1e-5;
/// Central-difference step used by the validator.
pub const VALIDATION_STEP: f64 = 1e-6;

/// Problem container: dimensions plus the four evaluation callbacks.
///
/// Callbacks must be reentrant and return the declared shapes; a shape
/// mismatch is a programming error in the problem definition and panics.
pub struct MnlcsProblem<T: Real> {
    p1: usize,
    p2: usize,
    q1: usize,
    h: VecFn<T>,
    jac_h: JacFn<T>,
    g: VecFn<T>,
    jac_g: JacFn<T>,
}

impl<T: Real> MnlcsProblem<T> {
    pub fn new(
        p1: usize,
        p2: usize,
        q1: usize,
        h: VecFn<T>,
        jac_h: JacFn<T>,
        g: VecFn<T>,
        jac_g: JacFn<T>,
    ) -> Self {
        assert!(p1 >= 1, "w block must be nonempty");
        Self { p1, p2, q1, h, jac_h, g, jac_g }
    }

    pub fn p1(&self) -> usize {
        self.p1
    }

    pub fn p2(&self) -> usize {
        self.p2
    }

    pub fn q1(&self) -> usize {
        self.q1
    }

    /// Total number of unknowns `p1 + p2`.
    pub fn dim(&self) -> usize {
        self.p1 + self.p2
    }

    /// Number of residual rows `q1 + p2`.
    pub fn residual_dim(&self) -> usize {
        self.q1 + self.p2
    }

    fn check_point(&self, z: &Iterate<T>) {
        assert_eq!(z.w.len(), self.p1, "w block has wrong length");
        assert_eq!(z.xi.len(), self.p2, "xi block has wrong length");
    }

    pub fn eval_h(&self, z: &Iterate<T>) -> Vector<T> {
        self.check_point(z);
        let v = (self.h)(&z.w, &z.xi);
        assert_eq!(v.len(), self.q1, "eval_H returned wrong length");
        v
    }

    pub fn eval_jac_h(&self, z: &Iterate<T>) -> Matrix<T> {
        self.check_point(z);
        let m = (self.jac_h)(&z.w, &z.xi);
        assert_eq!(m.shape(), (self.q1, self.dim()), "jac_H returned wrong shape");
        m
    }

    pub fn eval_g(&self, z: &Iterate<T>) -> Vector<T> {
        self.check_point(z);
        let v = (self.g)(&z.w, &z.xi);
        assert_eq!(v.len(), self.p2, "eval_G returned wrong length");
        v
    }

    pub fn eval_jac_g(&self, z: &Iterate<T>) -> Matrix<T> {
        self.check_point(z);
        let m = (self.jac_g)(&z.w, &z.xi);
        assert_eq!(m.shape(), (self.p2, self.dim()), "jac_G returned wrong shape");
        m
    }

    /// Complementarity index sets at `z`.
    ///
    /// `act_tol = 0` gives the exact classification; diagnostics at computed
    /// (inexact) points typically pass a small positive tolerance.
    pub fn index_sets(&self, z: &Iterate<T>, act_tol: T) -> ComplIndexSets {
        assert!(act_tol >= T::zero(), "act_tol must be nonnegative");
        let g = self.eval_g(z);
        let mut sets = ComplIndexSets {
            i0: Vec::new(),
            i_minus: Vec::new(),
            i_plus: Vec::new(),
            i00: Vec::new(),
            i_ge: Vec::new(),
            i_lt: Vec::new(),
        };
        for i in 0..self.p2 {
            if g[i] >= -act_tol {
                sets.i0.push(i);
                if z.xi[i] > act_tol {
                    sets.i_plus.push(i);
                } else {
                    sets.i00.push(i);
                }
            } else {
                sets.i_minus.push(i);
            }
            // Branch sets use the exact comparison: any choice on the kink
            // itself yields a valid Newton-derivative, and the tie goes to
            // the G branch.
            if g[i] >= -z.xi[i] {
                sets.i_ge.push(i);
            } else {
                sets.i_lt.push(i);
            }
        }
        sets
    }

    /// Max residual `[H(z); max(G_i(z), -xi_i)]`.
    pub fn residual_max(&self, z: &Iterate<T>) -> Vector<T> {
        let h = self.eval_h(z);
        let g = self.eval_g(z);
        let mut r = Vector::zeros(self.residual_dim());
        r.rows_mut(0, self.q1).copy_from(&h);
        for i in 0..self.p2 {
            r[self.q1 + i] = g[i].max(-z.xi[i]);
        }
        r
    }

    /// Fischer-Burmeister residual `[H(z); phi_fb(G_i(z), -xi_i)]`.
    pub fn residual_fb(&self, z: &Iterate<T>) -> Vector<T> {
        let h = self.eval_h(z);
        let g = self.eval_g(z);
        let mut r = Vector::zeros(self.residual_dim());
        r.rows_mut(0, self.q1).copy_from(&h);
        for i in 0..self.p2 {
            r[self.q1 + i] = ncp::phi_fb(g[i], -z.xi[i]);
        }
        r
    }

    /// Merit function `0.5 * |F_fb(z)|^2`.
    pub fn psi_fb(&self, z: &Iterate<T>) -> T {
        self.residual_fb(z).norm_squared() * real(0.5)
    }

    /// Newton-derivative of the max residual.
    ///
    /// Top block `jac_H`; bottom block row `i` is row `i` of `jac_G` when
    /// `G_i >= -xi_i` and `-e_i^T` on the `xi` block otherwise.
    pub fn dn_f_max(&self, z: &Iterate<T>) -> Matrix<T> {
        let jh = self.eval_jac_h(z);
        let jg = self.eval_jac_g(z);
        let g = self.eval_g(z);
        let p = self.dim();
        let mut m = Matrix::zeros(self.residual_dim(), p);
        m.view_mut((0, 0), (self.q1, p)).copy_from(&jh);
        for i in 0..self.p2 {
            if g[i] >= -z.xi[i] {
                m.row_mut(self.q1 + i).copy_from(&jg.row(i));
            } else {
                m[(self.q1 + i, self.p1 + i)] = -T::one();
            }
        }
        m
    }

    /// Newton-derivative of the Fischer-Burmeister residual.
    ///
    /// Bottom block row `i` is `va_i * jac_G row i - vb_i * e_i^T` with
    /// `(va_i, vb_i)` the Newton-derivative of `phi_fb` at `(G_i, -xi_i)`,
    /// i.e. `(1 + G_i/r_i, 1 - xi_i/r_i)` off the biactive set and both
    /// `1 + sqrt(2)/2` on it (exact test `G_i = xi_i = 0`).
    pub fn dn_f_fb(&self, z: &Iterate<T>) -> Matrix<T> {
        let jh = self.eval_jac_h(z);
        let jg = self.eval_jac_g(z);
        let g = self.eval_g(z);
        let p = self.dim();
        let mut m = Matrix::zeros(self.residual_dim(), p);
        m.view_mut((0, 0), (self.q1, p)).copy_from(&jh);
        for i in 0..self.p2 {
            let [va, vb] = ncp::dn_phi_fb(g[i], -z.xi[i]);
            let mut row = m.row_mut(self.q1 + i);
            for j in 0..p {
                row[j] = va * jg[(i, j)];
            }
            row[self.p1 + i] -= vb;
        }
        m
    }

    /// Gradient of the merit function, `dn_f_fb(z)^T * residual_fb(z)`.
    ///
    /// Computed through exactly that product, so the identity with the
    /// Newton-derivative holds bitwise at every point.
    pub fn grad_psi_fb(&self, z: &Iterate<T>) -> Vector<T> {
        self.dn_f_fb(z).tr_mul(&self.residual_fb(z))
    }

    /// Compares `jac_H`/`jac_G` against central finite differences of the
    /// value callbacks (step 1e-6) at each given point; an entry passes at
    /// relative error 1e-5. Non-finite entries are reported, not thrown.
    pub fn validate_derivatives(&self, points: &[Iterate<T>]) -> DerivativeValidation<T> {
        let step: T = real(VALIDATION_STEP);
        let tol: T = real(VALIDATION_TOL);
        let mut out = DerivativeValidation { points: Vec::with_capacity(points.len()), pass: true };

        for z in points {
            self.check_point(z);
            let jh = self.eval_jac_h(z);
            let jg = self.eval_jac_g(z);
            let mut pv = PointValidation {
                max_rel_err_h: T::zero(),
                worst_h: (0, 0),
                max_rel_err_g: T::zero(),
                worst_g: (0, 0),
                nonfinite_entries: Vec::new(),
                pass: true,
            };

            for j in 0..self.dim() {
                let plus = z.add_scaled(&Vector::from_fn(self.dim(), |k, _| {
                    if k == j { T::one() } else { T::zero() }
                }), step);
                let minus = z.add_scaled(&Vector::from_fn(self.dim(), |k, _| {
                    if k == j { T::one() } else { T::zero() }
                }), -step);
                let dh = (self.eval_h(&plus) - self.eval_h(&minus)) / (step + step);
                let dg = (self.eval_g(&plus) - self.eval_g(&minus)) / (step + step);

                for r in 0..self.q1 {
                    let (a, fd) = (jh[(r, j)], dh[r]);
                    if !a.is_finite() || !fd.is_finite() {
                        pv.nonfinite_entries.push((JacBlock::H, r, j));
                        continue;
                    }
                    let err = (a - fd).abs() / T::one().max(fd.abs());
                    if err > pv.max_rel_err_h {
                        pv.max_rel_err_h = err;
                        pv.worst_h = (r, j);
                    }
                }
                for r in 0..self.p2 {
                    let (a, fd) = (jg[(r, j)], dg[r]);
                    if !a.is_finite() || !fd.is_finite() {
                        pv.nonfinite_entries.push((JacBlock::G, r, j));
                        continue;
                    }
                    let err = (a - fd).abs() / T::one().max(fd.abs());
                    if err > pv.max_rel_err_g {
                        pv.max_rel_err_g = err;
                        pv.worst_g = (r, j);
                    }
                }
            }

            pv.pass = pv.nonfinite_entries.is_empty()
                && pv.max_rel_err_h <= tol
                && pv.max_rel_err_g <= tol;
            out.pass &= pv.pass;
            out.points.push(pv);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const SQRT2: f64 = std::f64::consts::SQRT_2;

    /// 1-D mixed linear system: H(w, xi) = w + xi, G(w, xi) = -w. Its unique
    /// solution is the origin, where the single pair is biactive.
    fn linear_1d() -> MnlcsProblem<f64> {
        MnlcsProblem::new(
            1,
            1,
            1,
            Box::new(|w, xi| dvector![w[0] + xi[0]]),
            Box::new(|_, _| dmatrix![1.0, 1.0]),
            Box::new(|w, _| dvector![-w[0]]),
            Box::new(|_, _| dmatrix![-1.0, 0.0]),
        )
    }

    /// Small smooth 2+2 system with a nonlinear equation block, used for
    /// gradient and validation tests.
    fn quad_2x2() -> MnlcsProblem<f64> {
        MnlcsProblem::new(
            2,
            2,
            3,
            Box::new(|w, xi| {
                dvector![
                    w[0] * w[0] + w[1] - xi[0],
                    w[0] - w[1] * w[1] + xi[1],
                    w[0] + w[1]
                ]
            }),
            Box::new(|w, _| {
                dmatrix![
                    2.0 * w[0], 1.0, -1.0, 0.0;
                    1.0, -2.0 * w[1], 0.0, 1.0;
                    1.0, 1.0, 0.0, 0.0
                ]
            }),
            Box::new(|w, xi| dvector![w[0] - 1.0 + 0.5 * xi[0], -w[1] - 2.0 + xi[1]]),
            Box::new(|_, _| {
                dmatrix![
                    1.0, 0.0, 0.5, 0.0;
                    0.0, -1.0, 0.0, 1.0
                ]
            }),
        )
    }

    fn pt(w: &[f64], xi: &[f64]) -> Iterate<f64> {
        Iterate::new(Vector::from_row_slice(w), Vector::from_row_slice(xi))
    }

    #[test]
    fn iterate_stacking_round_trip() {
        let z = pt(&[1.0, 2.0], &[3.0, 4.0, 5.0]);
        let s = z.stacked();
        assert_eq!(s, dvector![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(Iterate::from_stacked(&s, 2), z);
        let moved = z.add_scaled(&dvector![1.0, 1.0, 1.0, 1.0, 1.0], 0.5);
        assert_eq!(moved.w, dvector![1.5, 2.5]);
        assert_eq!(moved.xi, dvector![3.5, 4.5, 5.5]);
    }

    #[test]
    fn index_sets_linear_1d() {
        let prob = linear_1d();
        let sets = prob.index_sets(&pt(&[0.0], &[0.0]), 0.0);
        assert_eq!(sets.i00, vec![0]);
        assert_eq!(sets.i_ge, vec![0]);
        assert!(sets.i_minus.is_empty() && sets.i_plus.is_empty() && sets.i_lt.is_empty());

        // G < 0 with xi = 0: inactive, max takes the xi branch.
        let sets = prob.index_sets(&pt(&[1.0], &[0.0]), 0.0);
        assert_eq!(sets.i_minus, vec![0]);
        assert_eq!(sets.i_lt, vec![0]);
        assert!(sets.i0.is_empty());
    }

    #[test]
    fn index_set_partitions_hold_on_random_points() {
        let prob = quad_2x2();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let z = pt(
                &[rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)],
                &[rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)],
            );
            let s = prob.index_sets(&z, 1e-8);
            let mut both: Vec<usize> = s.i0.iter().chain(&s.i_minus).copied().collect();
            both.sort_unstable();
            assert_eq!(both, vec![0, 1]);
            let mut refine: Vec<usize> = s.i_plus.iter().chain(&s.i00).copied().collect();
            refine.sort_unstable();
            assert_eq!(refine, s.i0);
            let mut branches: Vec<usize> = s.i_ge.iter().chain(&s.i_lt).copied().collect();
            branches.sort_unstable();
            assert_eq!(branches, vec![0, 1]);
        }
    }

    #[test]
    fn residuals_linear_1d() {
        let prob = linear_1d();
        let z = pt(&[1.0], &[1.0]);
        assert_eq!(prob.residual_max(&z), dvector![2.0, -1.0]);
        let fb = prob.residual_fb(&z);
        assert_eq!(fb[0], 2.0);
        assert_relative_eq!(fb[1], -2.0 + SQRT2, max_relative = 1e-15);
        assert_relative_eq!(
            prob.psi_fb(&z),
            0.5 * (4.0 + (2.0 - SQRT2) * (2.0 - SQRT2)),
            max_relative = 1e-15
        );

        let origin = pt(&[0.0], &[0.0]);
        assert_eq!(prob.residual_max(&origin).norm(), 0.0);
        assert_eq!(prob.residual_fb(&origin).norm(), 0.0);
        assert_eq!(prob.grad_psi_fb(&origin).norm(), 0.0);
    }

    #[test]
    fn psi_fb_is_half_squared_residual() {
        let prob = quad_2x2();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let z = pt(
                &[rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)],
                &[rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)],
            );
            assert_eq!(prob.psi_fb(&z), 0.5 * prob.residual_fb(&z).norm_squared());
        }
    }

    #[test]
    fn dn_f_max_branch_matrices() {
        let prob = linear_1d();
        assert_eq!(prob.dn_f_max(&pt(&[0.0], &[0.0])), dmatrix![1.0, 1.0; -1.0, 0.0]);
        assert_eq!(prob.dn_f_max(&pt(&[1.0], &[0.0])), dmatrix![1.0, 1.0; 0.0, -1.0]);
    }

    #[test]
    fn dn_f_max_pure_equation_system_is_jac_h() {
        let prob = MnlcsProblem::<f64>::new(
            2,
            0,
            3,
            Box::new(|w, _| dvector![w[0], w[1], w[0] + w[1]]),
            Box::new(|_, _| dmatrix![1.0, 0.0; 0.0, 1.0; 1.0, 1.0]),
            Box::new(|_, _| dvector![]),
            Box::new(|_, _| Matrix::zeros(0, 2)),
        );
        let z = pt(&[0.3, -0.7], &[]);
        assert_eq!(prob.dn_f_max(&z), prob.eval_jac_h(&z));
    }

    #[test]
    fn dn_f_fb_biactive_and_strict_rows() {
        let prob = linear_1d();
        let c = 1.0 + SQRT2 / 2.0;
        let m = prob.dn_f_fb(&pt(&[0.0], &[0.0]));
        assert_eq!(m[(0, 0)], 1.0);
        assert_eq!(m[(0, 1)], 1.0);
        assert_eq!(m[(1, 0)], -c);
        assert_eq!(m[(1, 1)], -c);

        // Strict complementarity (G = -1 < 0, xi = 0): va = 0, vb = 1, so the
        // bottom row selects -xi only.
        let m = prob.dn_f_fb(&pt(&[1.0], &[0.0]));
        assert_eq!(m[(1, 0)], 0.0);
        assert_eq!(m[(1, 1)], -1.0);
    }

    #[test]
    fn grad_psi_fb_hand_value_and_identity() {
        let prob = linear_1d();
        let z = pt(&[1.0], &[1.0]);
        // va = 1 - 1/sqrt(2) = vb at (G, -xi) = (-1, -1); bottom row of the
        // Newton-derivative is (-va, -vb); residual is (2, -2+sqrt(2)).
        let expected = 5.0 - 2.0 * SQRT2;
        let grad = prob.grad_psi_fb(&z);
        assert_relative_eq!(grad[0], expected, max_relative = 1e-14);
        assert_relative_eq!(grad[1], expected, max_relative = 1e-14);
        assert_eq!(grad, prob.dn_f_fb(&z).tr_mul(&prob.residual_fb(&z)));
    }

    /// Central-difference oracle for the merit gradient at kink-free points.
    #[test]
    fn grad_psi_fb_matches_finite_differences() {
        let prob = quad_2x2();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h = 1e-6;
        let mut checked = 0;
        while checked < 100 {
            let z = pt(
                &[rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
                &[rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
            );
            let g = prob.eval_g(&z);
            if (0..2).any(|i| g[i].hypot(z.xi[i]) < 1e-2) {
                continue;
            }
            let grad = prob.grad_psi_fb(&z);
            for j in 0..4 {
                let e = Vector::from_fn(4, |k, _| if k == j { 1.0 } else { 0.0 });
                let fd = (prob.psi_fb(&z.add_scaled(&e, h)) - prob.psi_fb(&z.add_scaled(&e, -h)))
                    / (2.0 * h);
                let denom = 1.0f64.max(fd.abs());
                assert!(
                    (grad[j] - fd).abs() / denom <= 1e-5,
                    "gradient component {j} = {} vs finite difference {fd}",
                    grad[j]
                );
            }
            checked += 1;
        }
    }

    #[test]
    fn validate_derivatives_accepts_correct_jacobians() {
        let prob = quad_2x2();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let points: Vec<_> = (0..10)
            .map(|_| {
                pt(
                    &[rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
                    &[rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
                )
            })
            .collect();
        let report = prob.validate_derivatives(&points);
        assert!(report.pass);
        assert!(report.points.iter().all(|p| p.pass && p.nonfinite_entries.is_empty()));
    }

    #[test]
    fn validate_derivatives_flags_perturbed_entry() {
        let prob = MnlcsProblem::new(
            1,
            1,
            1,
            Box::new(|w: &Vector<f64>, xi: &Vector<f64>| dvector![w[0] + xi[0]]),
            // Entry (0, 1) is off by +0.1.
            Box::new(|_, _| dmatrix![1.0, 1.1]),
            Box::new(|w, _| dvector![-w[0]]),
            Box::new(|_, _| dmatrix![-1.0, 0.0]),
        );
        let report = prob.validate_derivatives(&[pt(&[0.4], &[0.2])]);
        assert!(!report.pass);
        assert!(!report.points[0].pass);
        assert_eq!(report.points[0].worst_h, (0, 1));
        assert!((report.points[0].max_rel_err_h - 0.1).abs() < 1e-9);
    }

    #[test]
    fn validate_derivatives_affine_h_is_machine_exact() {
        let prob = linear_1d();
        let report = prob.validate_derivatives(&[pt(&[0.7], &[-0.3])]);
        assert!(report.pass);
        assert!(report.points[0].max_rel_err_h < 1e-8);
    }

    #[test]
    #[should_panic(expected = "wrong length")]
    fn shape_mismatch_is_a_hard_error() {
        let prob = MnlcsProblem::new(
            1,
            1,
            2,
            // Declared q1 = 2 but returns length 1.
            Box::new(|w: &Vector<f64>, xi: &Vector<f64>| dvector![w[0] + xi[0]]),
            Box::new(|_, _| Matrix::zeros(2, 2)),
            Box::new(|w, _| dvector![-w[0]]),
            Box::new(|_, _| dmatrix![-1.0, 0.0]),
        );
        prob.eval_h(&pt(&[1.0], &[1.0]));
    }
}
