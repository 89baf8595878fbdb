//! Levenberg-Marquardt iterations on the nonsmooth residuals.
//!
//! Three entry points share one engine:
//!
//! * [`local_lm`] - undamped steps `z <- z + d` with `d` from [`lm_step`];
//!   fast near a solution, no global safeguard.
//! * [`global_lm_mix`] - direction from the max residual's Newton-derivative,
//!   globalized by a merit-decrease ratio test on `Psi_fb`, an angle test,
//!   and Armijo backtracking with a gradient fallback.
//! * [`global_lm_fb`] - same skeleton with the direction taken from the
//!   Fischer-Burmeister residual itself (its normal-equation right-hand side
//!   is exactly `-grad Psi_fb`).
//!
//! Both globalized methods are descent methods for `Psi_fb`; the engine
//! asserts the monotone decrease outright.

use crate::mnlcs::{Iterate, MnlcsProblem};
use crate::{real, to_f64, Matrix, Real, Vector};
use std::time::Instant;
use thiserror::Error;

/// Which residual supplies the LM direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DirectionKind {
    MaxResidual,
    FbResidual,
}

/// How an accepted iteration moved.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepType {
    /// Undamped LM step accepted by the ratio test.
    FullLm,
    /// LM direction kept after the ratio test failed, with Armijo damping.
    DampedLm,
    /// Steepest-descent fallback with Armijo damping.
    Gradient,
}

impl StepType {
    pub fn as_str(self) -> &'static str {
        match self {
            StepType::FullLm => "full_lm",
            StepType::DampedLm => "damped_lm",
            StepType::Gradient => "gradient",
        }
    }
}

/// Why a run stopped. The numeric codes are stable and used in run records.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TermCode {
    /// Iteration cap reached.
    MaxIter,
    /// Residual norm fell below `tau_abs`.
    SmallResidual,
    /// Merit gradient fell below `tau_abs_stat` while the residual is still
    /// large: the run found a (possibly non-solution) stationary point.
    StationaryMerit,
}

impl TermCode {
    pub fn code(self) -> u8 {
        match self {
            TermCode::MaxIter => 0,
            TermCode::SmallResidual => 1,
            TermCode::StationaryMerit => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(TermCode::MaxIter),
            1 => Some(TermCode::SmallResidual),
            2 => Some(TermCode::StationaryMerit),
            _ => None,
        }
    }
}

/// Per-iteration record. Values describe the state at the *start* of the
/// iteration plus the step that was then taken.
#[derive(Clone, Copy, Debug)]
pub struct TraceRecord<T: Real> {
    pub iter: usize,
    pub psi_fb: T,
    pub norm_f_fb: T,
    pub norm_grad_psi: T,
    pub nu: T,
    pub step_type: StepType,
    pub alpha: T,
    /// Norm of the LM direction before any fallback replacement.
    pub direction_norm: T,
    /// `Psi_fb(z + d) / Psi_fb(z)` for the undamped LM trial; the ratio test
    /// accepts when this is at most `kappa`.
    pub merit_ratio: T,
}

/// Outcome of a solve.
#[derive(Clone, Debug)]
pub struct LmResult<T: Real> {
    pub z_final: Iterate<T>,
    pub term: TermCode,
    pub iterations: usize,
    pub full_lm_steps: usize,
    pub damped_lm_steps: usize,
    pub gradient_steps: usize,
    pub elapsed_seconds: f64,
    pub trace: Vec<TraceRecord<T>>,
    pub final_psi_fb: T,
    pub final_norm_f_fb: T,
    pub final_norm_grad: T,
}

/// Parameters shared by all solver entry points.
///
/// `new` fills in a balanced default set; override fields as needed and
/// rely on [`LmConfig::validate`], which every solver calls on entry.
#[derive(Clone, Copy, Debug)]
pub struct LmConfig<T: Real> {
    /// Ratio-test factor in (0,1): accept the full LM step when
    /// `Psi_fb(z+d) <= kappa * Psi_fb(z)`.
    pub kappa: T,
    /// Residual tolerance (> 0) for Term=1.
    pub tau_abs: T,
    /// Merit-gradient tolerance (> 0) for Term=2.
    pub tau_abs_stat: T,
    /// Armijo slope factor in (0,1).
    pub sigma: T,
    /// Backtracking factor in (0,1).
    pub beta: T,
    /// Regularization rule `nu = min(gamma1, gamma2 * |F|)`; both > 0.
    pub gamma1: T,
    pub gamma2: T,
    /// Angle-test factor (> 0) for the max-direction method.
    pub rho1: T,
    /// Small-direction guard (> 0) for the max-direction method.
    pub rho2: T,
    /// Angle-test factor (> 0) for the FB-direction method.
    pub rho: T,
    pub max_iter: usize,
    pub direction_kind: DirectionKind,
}

impl<T: Real> LmConfig<T> {
    pub fn new(direction_kind: DirectionKind) -> Self {
        Self {
            kappa: real(0.8),
            tau_abs: real(1e-6),
            tau_abs_stat: real(1e-8),
            sigma: real(0.5),
            beta: real(0.5),
            gamma1: real(0.5),
            gamma2: real(0.5),
            rho1: real(1e-2),
            rho2: real(1e-12),
            rho: real(1e-2),
            max_iter: 100_000,
            direction_kind,
        }
    }

    pub fn validate(&self) -> Result<(), LmError> {
        let open01 = |v: T| v > T::zero() && v < T::one();
        let checks: [(&str, bool); 8] = [
            ("kappa must lie in (0,1)", open01(self.kappa)),
            ("tau_abs must be positive", self.tau_abs > T::zero()),
            ("tau_abs_stat must be positive", self.tau_abs_stat > T::zero()),
            ("sigma must lie in (0,1)", open01(self.sigma)),
            ("beta must lie in (0,1)", open01(self.beta)),
            (
                "gamma1 and gamma2 must be positive",
                self.gamma1 > T::zero() && self.gamma2 > T::zero(),
            ),
            (
                "rho1, rho2, rho must be positive",
                self.rho1 > T::zero() && self.rho2 > T::zero() && self.rho > T::zero(),
            ),
            ("max_iter must be at least 1", self.max_iter >= 1),
        ];
        for (msg, ok) in checks {
            if !ok {
                return Err(LmError::InvalidConfig(msg.to_string()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum LmError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("regularized normal matrix could not be factorized (non-finite input)")]
    Factorization,
    #[error("iterate became non-finite at iteration {iteration}")]
    NonFiniteIterate { iteration: usize },
    #[error(
        "gradient line search found no decrease within {halvings} halvings at iteration {iteration}"
    )]
    LineSearchStalled { iteration: usize, halvings: usize },
}

/// Backtracking cap: `beta^100` underflows any meaningful step length, so
/// reaching it signals numerical breakdown rather than a short step.
const MAX_HALVINGS: usize = 100;

/// Solves `(J^T J + nu I) d = -J^T F` by Cholesky factorization.
///
/// `nu > 0` makes the normal matrix symmetric positive definite, so the
/// factorization fails only on non-finite input.
pub fn lm_step<T: Real>(j: &Matrix<T>, f: &Vector<T>, nu: T) -> Result<Vector<T>, LmError> {
    assert!(nu > T::zero(), "nu must be positive");
    assert_eq!(j.nrows(), f.len(), "J and F row counts differ");
    let p = j.ncols();
    let mut a = j.tr_mul(j);
    for i in 0..p {
        a[(i, i)] += nu;
    }
    let rhs = -j.tr_mul(f);
    let chol = nalgebra::linalg::Cholesky::new(a).ok_or(LmError::Factorization)?;
    Ok(chol.solve(&rhs))
}

/// Undamped iteration `z <- z + d`: every step is a full LM step on the
/// configured residual. Stops at `|F(z)| < tau_abs` (Term=1) or at the
/// iteration cap (Term=0).
pub fn local_lm<T: Real>(
    prob: &MnlcsProblem<T>,
    z0: &Iterate<T>,
    cfg: &LmConfig<T>,
) -> Result<LmResult<T>, LmError> {
    cfg.validate()?;
    let clock = Instant::now();
    let mut z = z0.clone();
    let mut trace = Vec::new();
    let mut k = 0usize;
    let term = loop {
        if !z.is_finite() {
            return Err(LmError::NonFiniteIterate { iteration: k });
        }
        let f = match cfg.direction_kind {
            DirectionKind::MaxResidual => prob.residual_max(&z),
            DirectionKind::FbResidual => prob.residual_fb(&z),
        };
        let norm_f = f.norm();
        if norm_f < cfg.tau_abs {
            break TermCode::SmallResidual;
        }
        if k >= cfg.max_iter {
            break TermCode::MaxIter;
        }
        let nu = cfg.gamma1.min(cfg.gamma2 * norm_f);
        let j = match cfg.direction_kind {
            DirectionKind::MaxResidual => prob.dn_f_max(&z),
            DirectionKind::FbResidual => prob.dn_f_fb(&z),
        };
        let d = lm_step(&j, &f, nu)?;
        let f_fb = prob.residual_fb(&z);
        let norm_fb = f_fb.norm();
        trace.push(TraceRecord {
            iter: k,
            psi_fb: f_fb.norm_squared() * real(0.5),
            norm_f_fb: norm_fb,
            norm_grad_psi: prob.grad_psi_fb(&z).norm(),
            nu,
            step_type: StepType::FullLm,
            alpha: T::one(),
            direction_norm: d.norm(),
            merit_ratio: T::zero(),
        });
        z = z.add_scaled(&d, T::one());
        k += 1;
    };

    let f_fb = prob.residual_fb(&z);
    let grad = prob.grad_psi_fb(&z);
    Ok(LmResult {
        term,
        iterations: k,
        full_lm_steps: k,
        damped_lm_steps: 0,
        gradient_steps: 0,
        elapsed_seconds: clock.elapsed().as_secs_f64(),
        final_psi_fb: f_fb.norm_squared() * real(0.5),
        final_norm_f_fb: f_fb.norm(),
        final_norm_grad: grad.norm(),
        trace,
        z_final: z,
    })
}

/// Globalized method with the LM direction taken from the max residual.
///
/// Requires `direction_kind = MaxResidual`; see the module docs for the
/// ratio test / angle test / Armijo cascade.
pub fn global_lm_mix<T: Real>(
    prob: &MnlcsProblem<T>,
    z0: &Iterate<T>,
    cfg: &LmConfig<T>,
) -> Result<LmResult<T>, LmError> {
    if cfg.direction_kind != DirectionKind::MaxResidual {
        return Err(LmError::InvalidConfig(
            "global_lm_mix requires direction_kind = MaxResidual".to_string(),
        ));
    }
    global_engine(prob, z0, cfg)
}

/// Globalized method with the LM direction taken from the FB residual.
///
/// Requires `direction_kind = FbResidual`. The normal-equation right-hand
/// side coincides with `-grad Psi_fb`, matching the merit function exactly.
pub fn global_lm_fb<T: Real>(
    prob: &MnlcsProblem<T>,
    z0: &Iterate<T>,
    cfg: &LmConfig<T>,
) -> Result<LmResult<T>, LmError> {
    if cfg.direction_kind != DirectionKind::FbResidual {
        return Err(LmError::InvalidConfig(
            "global_lm_fb requires direction_kind = FbResidual".to_string(),
        ));
    }
    global_engine(prob, z0, cfg)
}

/// Dispatches to the globalized method selected by `cfg.direction_kind`.
pub fn solve_global<T: Real>(
    prob: &MnlcsProblem<T>,
    z0: &Iterate<T>,
    cfg: &LmConfig<T>,
) -> Result<LmResult<T>, LmError> {
    match cfg.direction_kind {
        DirectionKind::MaxResidual => global_lm_mix(prob, z0, cfg),
        DirectionKind::FbResidual => global_lm_fb(prob, z0, cfg),
    }
}

fn global_engine<T: Real>(
    prob: &MnlcsProblem<T>,
    z0: &Iterate<T>,
    cfg: &LmConfig<T>,
) -> Result<LmResult<T>, LmError> {
    cfg.validate()?;
    let clock = Instant::now();
    let half: T = real(0.5);
    let mut z = z0.clone();
    let mut trace: Vec<TraceRecord<T>> = Vec::new();
    let mut full_lm_steps = 0usize;
    let mut damped_lm_steps = 0usize;
    let mut gradient_steps = 0usize;
    let mut k = 0usize;

    let (term, final_psi, final_norm_fb, final_norm_grad) = loop {
        if !z.is_finite() {
            return Err(LmError::NonFiniteIterate { iteration: k });
        }
        let f_fb = prob.residual_fb(&z);
        let psi = f_fb.norm_squared() * half;
        let norm_fb = f_fb.norm();
        // Same assembly as grad_psi_fb: transpose product with the FB
        // Newton-derivative.
        let j_fb = prob.dn_f_fb(&z);
        let grad = j_fb.tr_mul(&f_fb);
        let norm_grad = grad.norm();

        if norm_fb < cfg.tau_abs {
            break (TermCode::SmallResidual, psi, norm_fb, norm_grad);
        }
        if norm_grad < cfg.tau_abs_stat {
            break (TermCode::StationaryMerit, psi, norm_fb, norm_grad);
        }
        if k >= cfg.max_iter {
            break (TermCode::MaxIter, psi, norm_fb, norm_grad);
        }

        let nu = cfg.gamma1.min(cfg.gamma2 * norm_fb);
        let (j, f) = match cfg.direction_kind {
            DirectionKind::MaxResidual => (prob.dn_f_max(&z), prob.residual_max(&z)),
            DirectionKind::FbResidual => (j_fb, f_fb),
        };
        let d = lm_step(&j, &f, nu)?;
        let direction_norm = d.norm();

        let z_full = z.add_scaled(&d, T::one());
        let psi_full = prob.psi_fb(&z_full);
        let merit_ratio = psi_full / psi;

        let step_type;
        let alpha;
        let psi_next;
        let z_next;
        if psi_full <= cfg.kappa * psi {
            step_type = StepType::FullLm;
            alpha = T::one();
            psi_next = psi_full;
            z_next = z_full;
            full_lm_steps += 1;
        } else {
            // Armijo backtracking from alpha = beta ("smallest positive
            // integer" exponent; the undamped step is only reachable through
            // the ratio test above).
            let armijo = |dir: &Vector<T>, slope: T| -> Option<(T, T, Iterate<T>)> {
                let mut a = cfg.beta;
                for _ in 0..MAX_HALVINGS {
                    let trial = z.add_scaled(dir, a);
                    let psi_trial = prob.psi_fb(&trial);
                    if psi_trial <= psi + a * cfg.sigma * slope {
                        return Some((a, psi_trial, trial));
                    }
                    a *= cfg.beta;
                }
                None
            };

            // Keep the LM direction only if it is a safely scaled descent
            // direction. A poorly scaled LM direction can pass the angle
            // test and still need a step far below beta^MAX_HALVINGS, so
            // exhausting the budget there demotes to steepest descent too.
            // The merit function is continuously differentiable, which
            // makes gradient backtracking fail only through numerical
            // breakdown; that one condition is reported as an error.
            let slope_lm = grad.dot(&d);
            let lm_direction_ok = match cfg.direction_kind {
                DirectionKind::MaxResidual => {
                    slope_lm <= -cfg.rho1 * norm_grad * direction_norm
                        && direction_norm >= cfg.rho2
                }
                DirectionKind::FbResidual => {
                    slope_lm <= -cfg.rho * norm_grad * direction_norm
                }
            };
            let damped = if lm_direction_ok {
                armijo(&d, slope_lm)
            } else {
                None
            };
            let (a, psi_a, z_a) = match damped {
                Some(hit) => {
                    step_type = StepType::DampedLm;
                    damped_lm_steps += 1;
                    hit
                }
                None => {
                    let dir = -grad.clone();
                    let slope = -(norm_grad * norm_grad);
                    let hit = armijo(&dir, slope).ok_or(LmError::LineSearchStalled {
                        iteration: k,
                        halvings: MAX_HALVINGS,
                    })?;
                    step_type = StepType::Gradient;
                    gradient_steps += 1;
                    hit
                }
            };
            alpha = a;
            psi_next = psi_a;
            z_next = z_a;
        }

        assert!(psi_next <= psi, "merit function increased on an accepted step");
        trace.push(TraceRecord {
            iter: k,
            psi_fb: psi,
            norm_f_fb: norm_fb,
            norm_grad_psi: norm_grad,
            nu,
            step_type,
            alpha,
            direction_norm,
            merit_ratio,
        });
        z = z_next;
        k += 1;
    };

    debug_assert_eq!(full_lm_steps + damped_lm_steps + gradient_steps, k);
    Ok(LmResult {
        term,
        iterations: k,
        full_lm_steps,
        damped_lm_steps,
        gradient_steps,
        elapsed_seconds: clock.elapsed().as_secs_f64(),
        final_psi_fb: final_psi,
        final_norm_f_fb: final_norm_fb,
        final_norm_grad,
        trace,
        z_final: z,
    })
}

/// Writes the iteration trace as CSV.
pub fn write_trace_csv<T: Real, W: std::io::Write>(
    result: &LmResult<T>,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "iter,psi_fb,norm_F_fb,norm_grad_psi,nu,step_type,alpha")?;
    for r in &result.trace {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.iter,
            to_f64(r.psi_fb),
            to_f64(r.norm_f_fb),
            to_f64(r.norm_grad_psi),
            to_f64(r.nu),
            r.step_type.as_str(),
            to_f64(r.alpha),
        )?;
    }
    Ok(())
}
