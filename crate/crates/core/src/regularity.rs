//! Diagnostics for the assumptions behind fast local convergence.
//!
//! The local LM method converges quadratically near a solution when every
//! Jacobian the Newton-derivative can produce there has full column rank.
//! For the max residual that is a finite family indexed by subsets of the
//! biactive set, so [`check_max_regularity`] decides it exactly. For the FB
//! residual the family is a product of circles, one per biactive pair, and
//! [`check_fb_regularity`] samples it: a Fail is an exact certificate, a
//! Pass with nonempty biactive set is heuristic and flagged as such.
//!
//! For stationarity systems coming from a bilevel problem, the rank
//! condition follows from classical constraint qualifications plus a
//! second-order condition; [`check_llicq`], [`check_blicq`], [`check_soc`],
//! and [`check_biactive_inclusion`] test those ingredients directly.

use crate::bilevel::{upper_lagrangian_hess, BilevelProblem};
use crate::mnlcs::{Iterate, MnlcsProblem};
use crate::{real, Matrix, Real, Vector};

/// Active-set classification tolerance for computed (inexact) points.
pub const DEFAULT_ACT_TOL: f64 = 1e-8;
/// Smallest singular value accepted as "full rank" for O(1)-scaled data.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;
/// Circle samples per biactive index in [`check_fb_regularity`].
pub const DEFAULT_SAMPLES_PER_INDEX: usize = 64;
/// Eigenvalue threshold for the reduced Hessian in [`check_soc`].
const SOC_EIG_TOL: f64 = 1e-10;
/// Exact subset enumeration bound for [`check_max_regularity`].
const MAX_BIACTIVE_EXACT: usize = 20;
/// Cap on sampled direction combinations in [`check_fb_regularity`]; above
/// it the check reports Inconclusive instead of running for hours.
const COMBINATION_BUDGET: u128 = 2_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    /// Process exit code used by the command-line `check`.
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Pass => 0,
            Verdict::Fail => 1,
            Verdict::Inconclusive => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "Pass",
            Verdict::Fail => "Fail",
            Verdict::Inconclusive => "Inconclusive",
        }
    }
}

/// Which member of the Jacobian family a witness refers to.
#[derive(Clone, Debug)]
pub enum WitnessParams<T: Real> {
    /// Biactive indices routed to the constraint-gradient branch; the rest
    /// of the biactive set took the multiplier branch.
    Subset(Vec<usize>),
    /// Sampled `(a_i, b_i)` circle parameters per biactive index.
    CircleSamples(Vec<(usize, T, T)>),
}

#[derive(Clone, Debug)]
pub struct Witness<T: Real> {
    pub params: WitnessParams<T>,
    pub sigma_min: T,
}

#[derive(Clone, Debug)]
pub struct RegularityReport<T: Real> {
    pub verdict: Verdict,
    /// The family member with the smallest singular value seen; on Fail this
    /// is a rank-deficiency certificate.
    pub witnesses: Vec<Witness<T>>,
    pub act_tol: T,
    pub rank_tol: T,
    pub notes: Vec<String>,
}

impl<T: Real> RegularityReport<T> {
    fn inconclusive(act_tol: T, rank_tol: T, note: String) -> Self {
        Self {
            verdict: Verdict::Inconclusive,
            witnesses: Vec::new(),
            act_tol,
            rank_tol,
            notes: vec![note],
        }
    }
}

/// Branch classification of one complementarity pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum PairClass {
    /// Constraint strictly active, multiplier positive: gradient branch.
    Plus,
    /// Constraint strictly inactive: multiplier branch.
    Minus,
    /// Biactive; the family quantifies over this index. Payload is the
    /// position within the biactive list.
    Biactive(usize),
}

fn classify_pairs<T: Real>(prob: &MnlcsProblem<T>, z: &Iterate<T>, act_tol: T) -> Vec<PairClass> {
    let sets = prob.index_sets(z, act_tol);
    let mut class = vec![PairClass::Minus; prob.p2()];
    for &i in &sets.i_plus {
        class[i] = PairClass::Plus;
    }
    for (j, &i) in sets.i00.iter().enumerate() {
        class[i] = PairClass::Biactive(j);
    }
    class
}

fn smallest_singular_value<T: Real>(m: &Matrix<T>) -> T {
    let sv = m.clone().svd(false, false).singular_values;
    sv.iter().copied().fold(T::max_value().unwrap(), T::min)
}

/// Smallest singular value as a full-column-rank indicator: a matrix with
/// fewer rows than columns can never have full column rank, so it scores 0.
fn column_rank_score<T: Real>(m: &Matrix<T>) -> T {
    if m.nrows() < m.ncols() {
        T::zero()
    } else {
        smallest_singular_value(m)
    }
}

fn has_full_row_rank<T: Real>(m: &Matrix<T>, tol: T) -> bool {
    if m.nrows() == 0 {
        return true;
    }
    if m.nrows() > m.ncols() {
        return false;
    }
    smallest_singular_value(m) >= tol
}

/// Exact rank check over the whole Jacobian family of the max residual.
///
/// For every subset `I` of the biactive set, stacks the equation Jacobian
/// over the constraint-gradient rows (strictly active indices plus `I`) and
/// the negated multiplier-selector rows (the rest), and requires full column
/// rank. Enumerating all `2^|biactive|` subsets is exact; beyond
/// `MAX_BIACTIVE_EXACT` indices the check refuses and reports Inconclusive.
pub fn check_max_regularity<T: Real>(
    prob: &MnlcsProblem<T>,
    z: &Iterate<T>,
    act_tol: T,
    rank_tol: T,
) -> RegularityReport<T> {
    let class = classify_pairs(prob, z, act_tol);
    let biactive: Vec<usize> = class
        .iter()
        .enumerate()
        .filter_map(|(i, c)| matches!(c, PairClass::Biactive(_)).then_some(i))
        .collect();
    let k = biactive.len();
    if k > MAX_BIACTIVE_EXACT {
        return RegularityReport::inconclusive(
            act_tol,
            rank_tol,
            format!("biactive set has {k} indices; exact enumeration capped at {MAX_BIACTIVE_EXACT}"),
        );
    }

    let (p1, p2, q1) = (prob.p1(), prob.p2(), prob.q1());
    let jh = prob.eval_jac_h(z);
    let jg = prob.eval_jac_g(z);
    let cols = p1 + p2;
    let mut stack = Matrix::zeros(q1 + p2, cols);
    stack.view_mut((0, 0), (q1, cols)).copy_from(&jh);

    let mut worst: Option<Witness<T>> = None;
    let mut verdict = Verdict::Pass;
    for mask in 0u64..(1u64 << k) {
        for (i, c) in class.iter().enumerate() {
            let gradient_branch = match *c {
                PairClass::Plus => true,
                PairClass::Minus => false,
                PairClass::Biactive(j) => mask & (1 << j) != 0,
            };
            let mut row = stack.row_mut(q1 + i);
            row.fill(T::zero());
            if gradient_branch {
                row.copy_from(&jg.row(i));
            } else {
                row[p1 + i] = -T::one();
            }
        }
        let score = column_rank_score(&stack);
        if score < rank_tol {
            verdict = Verdict::Fail;
        }
        if worst.as_ref().is_none_or(|w| score < w.sigma_min) {
            let subset = biactive
                .iter()
                .enumerate()
                .filter_map(|(j, &i)| (mask & (1 << j) != 0).then_some(i))
                .collect();
            worst = Some(Witness {
                params: WitnessParams::Subset(subset),
                sigma_min: score,
            });
        }
    }

    RegularityReport {
        verdict,
        witnesses: worst.into_iter().collect(),
        act_tol,
        rank_tol,
        notes: Vec::new(),
    }
}

/// Sampled rank check over the Jacobian family of the FB residual.
///
/// Strictly inactive pairs contribute the fixed row `-e_i`, strictly active
/// ones their constraint gradient; each biactive pair contributes
/// `a * grad - b * e_i` with `(a,b)` running over the circle
/// `(a-1)^2 + (b-1)^2 = 1`. The circle is sampled at `samples_per_index`
/// equispaced angles plus the mandatory angles `pi/4` (the classical
/// worst case `a = b = 1 + sqrt(2)/2`), `pi`, and `3*pi/2`. A Fail is an
/// exact certificate; a Pass with biactive indices only covers the sampled
/// directions and is annotated accordingly.
pub fn check_fb_regularity<T: Real>(
    prob: &MnlcsProblem<T>,
    z: &Iterate<T>,
    act_tol: T,
    rank_tol: T,
    samples_per_index: usize,
) -> RegularityReport<T> {
    assert!(samples_per_index >= 1, "need at least one sample per index");
    let class = classify_pairs(prob, z, act_tol);
    let biactive: Vec<usize> = class
        .iter()
        .enumerate()
        .filter_map(|(i, c)| matches!(c, PairClass::Biactive(_)).then_some(i))
        .collect();
    let k = biactive.len();

    let mut samples: Vec<(T, T)> = Vec::with_capacity(samples_per_index + 3);
    let tau: f64 = 2.0 * std::f64::consts::PI;
    for j in 0..samples_per_index {
        let theta = tau * j as f64 / samples_per_index as f64;
        samples.push((real(1.0 + theta.cos()), real(1.0 + theta.sin())));
    }
    for theta in [
        std::f64::consts::FRAC_PI_4,
        std::f64::consts::PI,
        3.0 * std::f64::consts::FRAC_PI_2,
    ] {
        samples.push((real(1.0 + theta.cos()), real(1.0 + theta.sin())));
    }
    let n_samples = samples.len();

    let combos = (n_samples as u128).pow(k as u32);
    if combos > COMBINATION_BUDGET {
        return RegularityReport::inconclusive(
            act_tol,
            rank_tol,
            format!(
                "{n_samples}^{k} = {combos} sampled combinations exceed the budget of \
                 {COMBINATION_BUDGET}; lower samples_per_index to get a verdict"
            ),
        );
    }

    let (p1, p2, q1) = (prob.p1(), prob.p2(), prob.q1());
    let jh = prob.eval_jac_h(z);
    let jg = prob.eval_jac_g(z);
    let cols = p1 + p2;
    let mut stack = Matrix::zeros(q1 + p2, cols);
    stack.view_mut((0, 0), (q1, cols)).copy_from(&jh);
    // Fixed rows never change across combinations; write them once.
    for (i, c) in class.iter().enumerate() {
        let mut row = stack.row_mut(q1 + i);
        match c {
            PairClass::Plus => row.copy_from(&jg.row(i)),
            PairClass::Minus => row[p1 + i] = -T::one(),
            PairClass::Biactive(_) => {}
        }
    }

    let mut digits = vec![0usize; k];
    let mut worst: Option<Witness<T>> = None;
    let mut verdict = Verdict::Pass;
    loop {
        for (j, &i) in biactive.iter().enumerate() {
            let (a, b) = samples[digits[j]];
            let mut row = stack.row_mut(q1 + i);
            row.copy_from(&(jg.row(i) * a));
            row[p1 + i] -= b;
        }
        let score = column_rank_score(&stack);
        if score < rank_tol {
            verdict = Verdict::Fail;
        }
        if worst.as_ref().is_none_or(|w| score < w.sigma_min) {
            let params = biactive
                .iter()
                .enumerate()
                .map(|(j, &i)| {
                    let (a, b) = samples[digits[j]];
                    (i, a, b)
                })
                .collect();
            worst = Some(Witness {
                params: WitnessParams::CircleSamples(params),
                sigma_min: score,
            });
        }

        // Mixed-radix increment over the biactive digits.
        let mut carry = 0;
        while carry < k {
            digits[carry] += 1;
            if digits[carry] < n_samples {
                break;
            }
            digits[carry] = 0;
            carry += 1;
        }
        if carry == k {
            break;
        }
    }

    let mut notes = Vec::new();
    if verdict == Verdict::Pass && k > 0 {
        notes.push(format!(
            "Pass covers only the {n_samples} sampled directions per biactive index \
             (Fail verdicts are exact certificates)"
        ));
    }
    RegularityReport {
        verdict,
        witnesses: worst.into_iter().collect(),
        act_tol,
        rank_tol,
        notes,
    }
}

fn stack_xy<T: Real>(x: &Vector<T>, y: &Vector<T>) -> Vector<T> {
    let mut w = Vector::zeros(x.len() + y.len());
    w.rows_mut(0, x.len()).copy_from(x);
    w.rows_mut(x.len(), y.len()).copy_from(y);
    w
}

fn select_rows<T: Real>(m: &Matrix<T>, rows: &[usize]) -> Matrix<T> {
    let mut out = Matrix::zeros(rows.len(), m.ncols());
    for (r, &i) in rows.iter().enumerate() {
        out.row_mut(r).copy_from(&m.row(i));
    }
    out
}

/// Lower-level constraint qualification: the gradients with respect to `y`
/// of the active lower constraints are linearly independent.
pub fn check_llicq<T: Real>(
    bp: &BilevelProblem<T>,
    x: &Vector<T>,
    y: &Vector<T>,
    act_tol: T,
) -> bool {
    let w = stack_xy(x, y);
    let g = bp.lower_cons(&w);
    let active: Vec<usize> = (0..bp.t()).filter(|&i| g[i] >= -act_tol).collect();
    let jac_y = bp.lower_cons_jac(&w).columns(bp.n(), bp.m()).into_owned();
    has_full_row_rank(&select_rows(&jac_y, &active), real(DEFAULT_RANK_TOL))
}

/// Combined constraint qualification: the gradients with respect to the
/// full `(x, y)` of all active upper and lower constraints are linearly
/// independent.
pub fn check_blicq<T: Real>(
    bp: &BilevelProblem<T>,
    x: &Vector<T>,
    y: &Vector<T>,
    act_tol: T,
) -> bool {
    let w = stack_xy(x, y);
    let gu = bp.upper_cons(&w);
    let gl = bp.lower_cons(&w);
    let ju = bp.upper_cons_jac(&w);
    let jl = bp.lower_cons_jac(&w);
    let mut rows = Matrix::zeros(0, bp.dim_w());
    let mut push = |row: nalgebra::RowDVector<T>| {
        rows = rows.clone().insert_row(rows.nrows(), T::zero());
        let last = rows.nrows() - 1;
        rows.row_mut(last).copy_from(&row);
    };
    for i in 0..bp.s() {
        if gu[i] >= -act_tol {
            push(ju.row(i).into_owned());
        }
    }
    for i in 0..bp.t() {
        if gl[i] >= -act_tol {
            push(jl.row(i).into_owned());
        }
    }
    has_full_row_rank(&rows, real(DEFAULT_RANK_TOL))
}

/// Orthonormal basis of the null space of `a`, via the eigendecomposition
/// of the Gram matrix. Zero rows of `a` mean the whole space.
fn null_space_basis<T: Real>(a: &Matrix<T>, tol: T) -> Matrix<T> {
    let d = a.ncols();
    if a.nrows() == 0 {
        return Matrix::identity(d, d);
    }
    let eig = nalgebra::SymmetricEigen::new(a.tr_mul(a));
    let keep: Vec<usize> = (0..d)
        .filter(|&i| eig.eigenvalues[i].max(T::zero()).sqrt() < tol)
        .collect();
    let mut basis = Matrix::zeros(d, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        basis.column_mut(c).copy_from(&eig.eigenvectors.column(i));
    }
    basis
}

/// Second-order condition at a stationarity candidate: the Hessian of the
/// upper Lagrangian, reduced to the critical subspace (the common null space
/// of the strictly active constraint gradients), is positive definite.
///
/// "Strictly active" means the constraint is active and the corresponding
/// multiplier exceeds `act_tol`; for the lower constraints either of the two
/// multipliers counts. Returns true vacuously when the critical subspace is
/// trivial.
#[allow(clippy::too_many_arguments)]
pub fn check_soc<T: Real>(
    bp: &BilevelProblem<T>,
    x: &Vector<T>,
    y: &Vector<T>,
    mu: &Vector<T>,
    nu: &Vector<T>,
    nu_hat: &Vector<T>,
    lambda: T,
    act_tol: T,
) -> bool {
    let w = stack_xy(x, y);
    let gu = bp.upper_cons(&w);
    let gl = bp.lower_cons(&w);
    let ju = bp.upper_cons_jac(&w);
    let jl = bp.lower_cons_jac(&w);

    let strict_upper: Vec<usize> = (0..bp.s())
        .filter(|&i| gu[i] >= -act_tol && mu[i] > act_tol)
        .collect();
    let strict_lower: Vec<usize> = (0..bp.t())
        .filter(|&i| gl[i] >= -act_tol && (nu[i] > act_tol || nu_hat[i] > act_tol))
        .collect();

    let mut pinned = Matrix::zeros(strict_upper.len() + strict_lower.len(), bp.dim_w());
    for (r, &i) in strict_upper.iter().enumerate() {
        pinned.row_mut(r).copy_from(&ju.row(i));
    }
    for (r, &i) in strict_lower.iter().enumerate() {
        pinned
            .row_mut(strict_upper.len() + r)
            .copy_from(&jl.row(i));
    }

    let basis = null_space_basis(&pinned, real(DEFAULT_RANK_TOL));
    if basis.ncols() == 0 {
        return true;
    }

    let coef = nu - nu_hat * lambda;
    let hess = upper_lagrangian_hess(bp, &w, mu, &coef);
    let reduced = basis.tr_mul(&(&hess * &basis));
    let sym = (&reduced + reduced.transpose()) * real::<T>(0.5);
    let eig = nalgebra::SymmetricEigen::new(sym);
    eig.eigenvalues
        .iter()
        .copied()
        .fold(T::max_value().unwrap(), T::min)
        > real(SOC_EIG_TOL)
}

/// Tests whether every lower constraint that is biactive with respect to
/// `nu_hat` (active constraint, vanishing multiplier) carries a strictly
/// positive multiplier in `nu`.
pub fn check_biactive_inclusion<T: Real>(
    bp: &BilevelProblem<T>,
    x: &Vector<T>,
    y: &Vector<T>,
    nu: &Vector<T>,
    nu_hat: &Vector<T>,
    act_tol: T,
) -> bool {
    let w = stack_xy(x, y);
    let g = bp.lower_cons(&w);
    (0..bp.t()).all(|i| {
        let biactive = g[i] >= -act_tol && nu_hat[i].abs() <= act_tol;
        !biactive || nu[i] > act_tol
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bilevel::{build_para, make_example8, SettingKind, StationarityPoint};
    use crate::mnlcs::MnlcsProblem;
    use nalgebra::{dmatrix, dvector};
    use std::sync::Arc;

    fn act() -> f64 {
        DEFAULT_ACT_TOL
    }
    fn rank() -> f64 {
        DEFAULT_RANK_TOL
    }

    /// One equation w + xi = 0 with constraint -w <= 0 complementarity.
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

    fn origin() -> Iterate<f64> {
        Iterate::new(dvector![0.0], dvector![0.0])
    }

    #[test]
    fn max_regularity_passes_on_the_kinked_example() {
        let prob = linear_1d();
        let report = check_max_regularity(&prob, &origin(), act(), rank());
        assert_eq!(report.verdict, Verdict::Pass);
        assert_eq!(report.witnesses.len(), 1);
        assert!(report.witnesses[0].sigma_min >= rank());
    }

    #[test]
    fn fb_regularity_fails_on_the_kinked_example_with_exact_witness() {
        let prob = linear_1d();
        let report =
            check_fb_regularity(&prob, &origin(), act(), rank(), DEFAULT_SAMPLES_PER_INDEX);
        assert_eq!(report.verdict, Verdict::Fail);
        let w = &report.witnesses[0];
        assert!(w.sigma_min < rank());
        match &w.params {
            WitnessParams::CircleSamples(samples) => {
                assert_eq!(samples.len(), 1);
                let (i, a, b) = samples[0];
                assert_eq!(i, 0);
                let expect = 1.0 + std::f64::consts::SQRT_2 / 2.0;
                assert!((a - expect).abs() < 1e-12, "a = {a}");
                assert!((b - expect).abs() < 1e-12, "b = {b}");
            }
            other => panic!("unexpected witness {other:?}"),
        }
    }

    #[test]
    fn empty_biactive_set_gives_identical_verdicts() {
        // At (1, 0) the pair (-1, 0) is strictly inactive: no biactive index.
        let prob = linear_1d();
        let z = Iterate::new(dvector![1.0], dvector![0.0]);
        let max_report = check_max_regularity(&prob, &z, act(), rank());
        let fb_report = check_fb_regularity(&prob, &z, act(), rank(), 8);
        assert_eq!(max_report.verdict, fb_report.verdict);
        assert!(fb_report.notes.is_empty(), "no sampling caveat needed");
        // A single subset is enumerated; its score matches a direct check.
        assert_eq!(max_report.witnesses.len(), 1);
        let jh = prob.eval_jac_h(&z);
        let jg = prob.eval_jac_g(&z);
        let mut direct = Matrix::<f64>::zeros(2, 2);
        direct.view_mut((0, 0), (1, 2)).copy_from(&jh);
        // Strictly inactive: multiplier-branch row.
        let _ = jg;
        direct[(1, 1)] = -1.0;
        let sigma = smallest_singular_value(&direct);
        assert!((max_report.witnesses[0].sigma_min - sigma).abs() < 1e-14);
    }

    #[test]
    fn duplicated_constraint_rows_fail_max_regularity() {
        // Two identical constraints, both strictly active: the stacked rows
        // repeat and the matrix cannot have full column rank.
        let prob = MnlcsProblem::new(
            1,
            2,
            1,
            Box::new(|w: &Vector<f64>, _: &Vector<f64>| dvector![w[0]]),
            Box::new(|_, _| dmatrix![1.0, 0.0, 0.0]),
            Box::new(|w, _| dvector![w[0], w[0]]),
            Box::new(|_, _| dmatrix![1.0, 0.0, 0.0; 1.0, 0.0, 0.0]),
        );
        let z = Iterate::new(dvector![0.0], dvector![1.0, 1.0]);
        let report = check_max_regularity(&prob, &z, act(), rank());
        assert_eq!(report.verdict, Verdict::Fail);
        assert!(report.witnesses[0].sigma_min < rank());
    }

    #[test]
    fn fb_sampling_is_monotone_under_refinement() {
        // The 8-sample grid is a subset of the 32-sample grid (plus the same
        // mandatory extras), so a Pass at 32 implies a Pass at 8.
        let bp = Arc::new(make_example8());
        let pt = StationarityPoint::new(
            dvector![9.0],
            dvector![3.0],
            dvector![0.0],
            dvector![2.0],
            dvector![0.0],
            1.0,
        );
        let prob = build_para(&bp, 1.0);
        let z = SettingKind::Para(1.0).pack(&bp, &pt);
        let coarse = check_fb_regularity(&prob, &z, act(), rank(), 8);
        let fine = check_fb_regularity(&prob, &z, act(), rank(), 32);
        assert_eq!(fine.verdict, Verdict::Pass);
        assert_eq!(coarse.verdict, Verdict::Pass);
        assert!(!fine.notes.is_empty(), "sampled Pass must carry the caveat");
    }

    #[test]
    fn combination_budget_reports_inconclusive() {
        // Four biactive pairs at 64+3 samples each overflow the budget.
        let prob = MnlcsProblem::new(
            4,
            4,
            4,
            Box::new(|w: &Vector<f64>, _: &Vector<f64>| w.clone()),
            Box::new(|_, _| {
                let mut j = Matrix::zeros(4, 8);
                j.view_mut((0, 0), (4, 4)).copy_from(&Matrix::identity(4, 4));
                j
            }),
            Box::new(|w, _| w.clone()),
            Box::new(|_, _| {
                let mut j = Matrix::zeros(4, 8);
                j.view_mut((0, 0), (4, 4)).copy_from(&Matrix::identity(4, 4));
                j
            }),
        );
        let z = Iterate::new(Vector::zeros(4), Vector::zeros(4));
        let report = check_fb_regularity(&prob, &z, act(), rank(), 64);
        assert_eq!(report.verdict, Verdict::Inconclusive);
        assert!(report.notes[0].contains("budget"));
        // The same point is fine with a coarser sampling.
        let report = check_fb_regularity(&prob, &z, act(), rank(), 16);
        assert_ne!(report.verdict, Verdict::Inconclusive);
    }

    #[test]
    fn constraint_qualifications_on_the_known_solution() {
        let bp = make_example8::<f64>();
        let x = dvector![9.0];
        let y = dvector![3.0];
        assert!(check_llicq(&bp, &x, &y, act()));
        assert!(check_blicq(&bp, &x, &y, act()));
        assert!(check_soc(
            &bp,
            &x,
            &y,
            &dvector![0.0],
            &dvector![2.0],
            &dvector![0.0],
            1.0,
            act()
        ));
        assert!(check_biactive_inclusion(
            &bp,
            &x,
            &y,
            &dvector![2.0],
            &dvector![0.0],
            act()
        ));
    }

    #[test]
    fn composite_conditions_imply_system_regularity() {
        // With all four bilevel conditions holding at the solution, both
        // rank checks on the assembled system must come out clean.
        let bp = Arc::new(make_example8::<f64>());
        let pt = StationarityPoint::new(
            dvector![9.0],
            dvector![3.0],
            dvector![0.0],
            dvector![2.0],
            dvector![0.0],
            1.0,
        );
        let prob = build_para(&bp, 1.0);
        let z = SettingKind::Para(1.0).pack(&bp, &pt);
        let max_report = check_max_regularity(&prob, &z, act(), rank());
        assert_eq!(max_report.verdict, Verdict::Pass);
        let fb_report =
            check_fb_regularity(&prob, &z, act(), rank(), DEFAULT_SAMPLES_PER_INDEX);
        assert_eq!(fb_report.verdict, Verdict::Pass);
    }

    /// Linear two-variable problem with configurable constraints, used to
    /// exercise degenerate corners of the bilevel checks.
    fn flat_problem(duplicate_lower: bool) -> BilevelProblem<f64> {
        use crate::bilevel::{ConstraintBundle, ScalarBundle};
        let t = if duplicate_lower { 2 } else { 1 };
        BilevelProblem::new(
            1,
            1,
            1,
            t,
            ScalarBundle {
                value: Box::new(|w: &Vector<f64>| w[0]),
                gradient: Box::new(|_| dvector![1.0, 0.0]),
                hessian: Box::new(|_| Matrix::zeros(2, 2)),
            },
            ScalarBundle {
                value: Box::new(|w: &Vector<f64>| w[1]),
                gradient: Box::new(|_| dvector![0.0, 1.0]),
                hessian: Box::new(|_| Matrix::zeros(2, 2)),
            },
            ConstraintBundle {
                value: Box::new(|w: &Vector<f64>| dvector![-w[0]]),
                jacobian: Box::new(|_| dmatrix![-1.0, 0.0]),
                hessian: Box::new(|_, _| Matrix::zeros(2, 2)),
            },
            ConstraintBundle {
                value: Box::new(move |w: &Vector<f64>| {
                    if duplicate_lower {
                        dvector![-w[1], -w[1]]
                    } else {
                        dvector![-w[1]]
                    }
                }),
                jacobian: Box::new(move |_| {
                    if duplicate_lower {
                        dmatrix![0.0, -1.0; 0.0, -1.0]
                    } else {
                        dmatrix![0.0, -1.0]
                    }
                }),
                hessian: Box::new(|_, _| Matrix::zeros(2, 2)),
            },
        )
    }

    #[test]
    fn duplicated_lower_constraint_breaks_llicq() {
        let x = dvector![0.0];
        let y = dvector![0.0];
        assert!(check_llicq(&flat_problem(false), &x, &y, act()));
        assert!(!check_llicq(&flat_problem(true), &x, &y, act()));
        assert!(!check_blicq(&flat_problem(true), &x, &y, act()));
    }

    #[test]
    fn soc_fails_on_flat_hessian_with_nontrivial_critical_space() {
        // No strictly active multipliers: the critical subspace is the whole
        // plane, and the Lagrangian Hessian is identically zero.
        let bp = flat_problem(false);
        assert!(!check_soc(
            &bp,
            &dvector![1.0],
            &dvector![1.0],
            &dvector![0.0],
            &dvector![0.0],
            &dvector![0.0],
            1.0,
            act()
        ));
    }

    #[test]
    fn soc_holds_vacuously_when_all_directions_are_pinned() {
        // Both constraint gradients active with positive multipliers span
        // the plane, so the critical subspace is trivial.
        use crate::bilevel::{ConstraintBundle, ScalarBundle};
        let bp = BilevelProblem::new(
            1,
            1,
            1,
            1,
            ScalarBundle {
                value: Box::new(|_: &Vector<f64>| 0.0),
                gradient: Box::new(|_| dvector![0.0, 0.0]),
                hessian: Box::new(|_| Matrix::zeros(2, 2)),
            },
            ScalarBundle {
                value: Box::new(|_: &Vector<f64>| 0.0),
                gradient: Box::new(|_| dvector![0.0, 0.0]),
                hessian: Box::new(|_| Matrix::zeros(2, 2)),
            },
            ConstraintBundle {
                value: Box::new(|w: &Vector<f64>| dvector![w[0] + w[1]]),
                jacobian: Box::new(|_| dmatrix![1.0, 1.0]),
                hessian: Box::new(|_, _| Matrix::zeros(2, 2)),
            },
            ConstraintBundle {
                value: Box::new(|w: &Vector<f64>| dvector![w[0] - w[1]]),
                jacobian: Box::new(|_| dmatrix![1.0, -1.0]),
                hessian: Box::new(|_, _| Matrix::zeros(2, 2)),
            },
        );
        assert!(check_soc(
            &bp,
            &dvector![0.0],
            &dvector![0.0],
            &dvector![1.0],
            &dvector![1.0],
            &dvector![0.0],
            1.0,
            act()
        ));
    }

    #[test]
    fn biactive_inclusion_edge_cases() {
        let bp = flat_problem(false);
        let x = dvector![0.0];
        let y = dvector![0.0];
        // Active constraint, nu_hat positive: biactive set empty.
        assert!(check_biactive_inclusion(
            &bp,
            &x,
            &y,
            &dvector![0.0],
            &dvector![1.0],
            act()
        ));
        // Both multipliers vanish on an active constraint: violated.
        assert!(!check_biactive_inclusion(
            &bp,
            &x,
            &y,
            &dvector![0.0],
            &dvector![0.0],
            act()
        ));
    }
}
