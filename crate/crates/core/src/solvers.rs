//! Time integration: ten interchangeable stepping strategies behind a
//! name-keyed registry, the Newton corrector for the implicit families,
//! and the transient main loop that ties stepping to event handling.
//!
//! Method roster (registry names):
//!
//! | name             | family              | order | step control          |
//! |------------------|---------------------|-------|-----------------------|
//! | `improved_euler` | explicit RK         | 2     | fixed                 |
//! | `heun`           | explicit RK         | 3     | fixed                 |
//! | `rk4`            | explicit RK         | 4     | fixed                 |
//! | `rkf45`          | explicit embedded   | 4(5)  | truncation estimate   |
//! | `bs23`           | explicit embedded   | 3(2)  | truncation estimate   |
//! | `backward_euler` | implicit            | 1     | fixed                 |
//! | `trapezoidal`    | implicit            | 2     | fixed                 |
//! | `be_auto`        | implicit            | 1     | Newton iteration count|
//! | `tr_auto`        | implicit            | 2     | Newton iteration count|
//! | `trbdf2`         | implicit composite  | 2     | truncation estimate   |
//!
//! Truncation-error control compares the weighted error norm
//! `max_i |e_i| / (1 + |x_i|)` (state entries only) against
//! [`SolverConfig::tol_lte`] and rescales the step by
//! `safety * (tol/err)^(1/p)` within the configured caps. Iteration-count
//! control halves the step when Newton works too hard (or fails) and
//! grows it by 1.5x when Newton converges almost immediately.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DVector;

use crate::assembly::{Scheme, StateVector, SystemGraph};
use crate::error::SolveError;
use crate::events::{collect_breaks, plan_crossing, CrossingTracker, EventConfig};
use crate::netlist::SolveSpec;

pub const DEFAULT_TOL_LTE: f64 = 1e-6;
pub const DEFAULT_NEWTON_TOL_ABS: f64 = 1e-8;
pub const DEFAULT_NEWTON_TOL_REL: f64 = 1e-6;
pub const DEFAULT_NEWTON_MAX_ITERS: u32 = 20;
pub const DEFAULT_H_MIN: f64 = 1e-12;

/// TR sub-step fraction of the TR-BDF2 composite; this value makes both
/// sub-steps share one iteration-matrix scaling.
pub const TRBDF2_GAMMA: f64 = 2.0 - std::f64::consts::SQRT_2;

/// Multiplier turning the second divided difference of the state
/// derivatives into the TR-BDF2 truncation-error estimate; equals the
/// magnitude of the method's h^3 error constant.
const TRBDF2_ERROR_SCALE: f64 = (3.0 * std::f64::consts::SQRT_2 - 4.0) / 6.0;

/// Full configuration of one transient run.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Registry name of the integration method.
    pub method: String,
    pub t_start: f64,
    pub t_end: f64,
    /// First trial step size.
    pub h_init: f64,
    /// Floor for controller-proposed steps. Landings forced by events
    /// or the end time may be shorter.
    pub h_min: f64,
    /// Cap for every accepted step.
    pub h_max: f64,
    /// Truncation-error tolerance for the embedded/composite methods.
    pub tol_lte: f64,
    pub newton_tol_abs: f64,
    pub newton_tol_rel: f64,
    pub newton_max_iters: u32,
    /// Controller safety factor in (0, 1].
    pub safety: f64,
    /// Largest allowed step growth per accepted step (> 1).
    pub grow_cap: f64,
    /// Smallest allowed step shrink per rejection (< 1).
    pub shrink_cap: f64,
    /// Newton iteration count at or above which `be_auto`/`tr_auto`
    /// reject the step.
    pub iters_high: u32,
    /// Newton iteration count below which `be_auto`/`tr_auto` grow the
    /// step.
    pub iters_low: u32,
    /// Consecutive rejections tolerated before the run aborts.
    pub max_rejections: u32,
}

impl SolverConfig {
    /// A minimal configuration for tests and simple fixed-step runs.
    pub fn basic(method: &str, t_end: f64, h: f64) -> SolverConfig {
        SolverConfig {
            method: method.to_string(),
            t_start: 0.0,
            t_end,
            h_init: h,
            h_min: DEFAULT_H_MIN.min(h),
            h_max: t_end.max(h),
            tol_lte: DEFAULT_TOL_LTE,
            newton_tol_abs: DEFAULT_NEWTON_TOL_ABS,
            newton_tol_rel: DEFAULT_NEWTON_TOL_REL,
            newton_max_iters: DEFAULT_NEWTON_MAX_ITERS,
            safety: 0.9,
            grow_cap: 4.0,
            shrink_cap: 0.1,
            iters_high: 10,
            iters_low: 4,
            max_rejections: 20,
        }
    }

    /// Builds a validated configuration from a netlist `solve` section.
    pub fn from_spec(spec: &SolveSpec) -> Result<SolverConfig, SolveError> {
        let method = spec
            .method
            .clone()
            .ok_or_else(|| SolveError::BadConfig("no integration method set".to_string()))?;
        let t_start = spec.t_start.unwrap_or(0.0);
        let t_end = spec
            .t_end
            .ok_or_else(|| SolveError::BadConfig("no end time set".to_string()))?;
        let h_init = spec
            .h_init
            .ok_or_else(|| SolveError::BadConfig("no initial step size set".to_string()))?;
        let h_min = spec.h_min.unwrap_or_else(|| DEFAULT_H_MIN.min(h_init));
        let h_max = spec
            .h_max
            .unwrap_or_else(|| (t_end - t_start).max(h_init));
        let cfg = SolverConfig {
            method,
            t_start,
            t_end,
            h_init,
            h_min,
            h_max,
            tol_lte: spec.tol.unwrap_or(DEFAULT_TOL_LTE),
            newton_tol_abs: spec.newton_tol.unwrap_or(DEFAULT_NEWTON_TOL_ABS),
            newton_tol_rel: spec.newton_tol_rel.unwrap_or(DEFAULT_NEWTON_TOL_REL),
            newton_max_iters: spec.newton_max_iters.unwrap_or(DEFAULT_NEWTON_MAX_ITERS),
            ..SolverConfig::basic("", 1.0, 1.0)
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        let bad = |msg: String| Err(SolveError::BadConfig(msg));
        if self.method.is_empty() {
            return bad("no integration method set".to_string());
        }
        if !(self.t_end > self.t_start) {
            return bad(format!(
                "end time {} must exceed start time {}",
                self.t_end, self.t_start
            ));
        }
        if !(self.h_min > 0.0) {
            return bad(format!("h_min must be positive, got {}", self.h_min));
        }
        if !(self.h_min <= self.h_init && self.h_init <= self.h_max) {
            return bad(format!(
                "step bounds must satisfy h_min <= h_init <= h_max, got {} / {} / {}",
                self.h_min, self.h_init, self.h_max
            ));
        }
        for (name, v) in [
            ("tol_lte", self.tol_lte),
            ("newton_tol_abs", self.newton_tol_abs),
            ("newton_tol_rel", self.newton_tol_rel),
        ] {
            if !(v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return bad(format!("safety must lie in (0, 1], got {}", self.safety));
        }
        if !(self.grow_cap > 1.0) {
            return bad(format!("grow_cap must exceed 1, got {}", self.grow_cap));
        }
        if !(self.shrink_cap > 0.0 && self.shrink_cap < 1.0) {
            return bad(format!(
                "shrink_cap must lie in (0, 1), got {}",
                self.shrink_cap
            ));
        }
        if self.iters_low >= self.iters_high {
            return bad(format!(
                "iteration thresholds must satisfy iters_low < iters_high, got {} / {}",
                self.iters_low, self.iters_high
            ));
        }
        if self.max_rejections == 0 {
            return bad("max_rejections must be positive".to_string());
        }
        Ok(())
    }
}

/// Outcome of one trial step.
#[derive(Debug, Clone)]
pub enum StepAttempt {
    Accepted {
        x_new: StateVector,
        /// Weighted truncation-error norm; zero for methods without an
        /// estimator.
        lte: f64,
        h_used: f64,
        /// Controller proposal for the next step, within
        /// `[h_min, h_max]`.
        h_next: f64,
        newton_iters: u32,
    },
    Rejected {
        lte: f64,
        h_next: f64,
        newton_iters: u32,
        reason: String,
    },
}

/// One time-integration strategy. Implementations are stateless; all
/// per-run state lives in the main loop.
pub trait IntegrationMethod: Send + Sync {
    /// Registry key.
    fn name(&self) -> &'static str;
    /// Whether steps are solved with Newton iteration (and therefore
    /// tolerate algebraic loops).
    fn is_implicit(&self) -> bool;
    /// Whether the method adjusts its own step size.
    fn is_adaptive(&self) -> bool;
    /// Tries one step from `x_n` of size `h`, landing at exactly
    /// `t_new` (the caller fixes the landing time so event points are
    /// hit without rounding).
    fn attempt(
        &self,
        graph: &SystemGraph,
        x_n: &StateVector,
        h: f64,
        t_new: f64,
        cfg: &SolverConfig,
    ) -> Result<StepAttempt, SolveError>;
}

/// Name-keyed strategy table of the built-in integration methods.
pub struct MethodRegistry {
    methods: BTreeMap<&'static str, Arc<dyn IntegrationMethod>>,
}

impl MethodRegistry {
    pub fn builtin() -> MethodRegistry {
        let mut methods: BTreeMap<&'static str, Arc<dyn IntegrationMethod>> = BTreeMap::new();
        let all: Vec<Arc<dyn IntegrationMethod>> = vec![
            Arc::new(ImprovedEuler),
            Arc::new(Heun3),
            Arc::new(ClassicRk4),
            Arc::new(Rkf45),
            Arc::new(Bs23),
            Arc::new(BackwardEuler),
            Arc::new(Trapezoidal),
            Arc::new(BeAuto),
            Arc::new(TrAuto),
            Arc::new(TrBdf2),
        ];
        for m in all {
            methods.insert(m.name(), m);
        }
        MethodRegistry { methods }
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn IntegrationMethod>> {
        self.methods.get(name).cloned()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.methods.contains_key(name)
    }

    /// Registered names in sorted order.
    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.methods.keys().copied()
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Weighted error norm over state entries: `max_i |e_i| / (1 + |x_i|)`.
fn lte_norm(graph: &SystemGraph, err: &[f64], x_ref: &StateVector) -> f64 {
    graph
        .state_indices()
        .iter()
        .map(|&i| err[i].abs() / (1.0 + x_ref.values[i].abs()))
        .fold(0.0_f64, f64::max)
}

/// Standard step rescaling: `h * clamp(safety*(tol/lte)^(1/p), caps)`,
/// clamped into `[h_min, h_max]`. A zero estimate grows by the full
/// cap.
fn controlled_h(h: f64, lte: f64, order: u32, cfg: &SolverConfig) -> f64 {
    let factor = if lte > 0.0 {
        cfg.safety * (cfg.tol_lte / lte).powf(1.0 / order as f64)
    } else {
        cfg.grow_cap
    };
    (h * factor.clamp(cfg.shrink_cap, cfg.grow_cap)).clamp(cfg.h_min, cfg.h_max)
}

/// Builds the stage state `x_n + sum_j c_j k_j` at time `t`, completes
/// its algebraic variables, and returns it with its state derivatives.
fn stage(
    graph: &SystemGraph,
    x_n: &StateVector,
    t: f64,
    terms: &[(f64, &[f64])],
) -> Result<(StateVector, Vec<f64>), SolveError> {
    let mut x = x_n.clone();
    x.t = t;
    for (c, k) in terms {
        for (v, kv) in x.values.iter_mut().zip(k.iter()) {
            *v += c * kv;
        }
    }
    let dx = graph.rhs(&mut x)?;
    Ok((x, dx))
}

fn fixed_accept(x_new: StateVector, h: f64) -> StepAttempt {
    StepAttempt::Accepted {
        x_new,
        lte: 0.0,
        h_used: h,
        h_next: h,
        newton_iters: 0,
    }
}

/// Two-stage explicit method: predictor step then trapezoidal average
/// of the end-point slopes.
pub struct ImprovedEuler;

impl IntegrationMethod for ImprovedEuler {
    fn name(&self) -> &'static str {
        "improved_euler"
    }
    fn is_implicit(&self) -> bool {
        false
    }
    fn is_adaptive(&self) -> bool {
        false
    }
    fn attempt(
        &self,
        graph: &SystemGraph,
        x_n: &StateVector,
        h: f64,
        t_new: f64,
        _cfg: &SolverConfig,
    ) -> Result<StepAttempt, SolveError> {
        let (_, k1) = stage(graph, x_n, x_n.t, &[])?;
        let (_, k2) = stage(graph, x_n, t_new, &[(h, &k1)])?;
        let (x_new, _) = stage(graph, x_n, t_new, &[(h / 2.0, &k1), (h / 2.0, &k2)])?;
        Ok(fixed_accept(x_new, h))
    }
}

/// Third-order explicit method with stages at 1/3 and 2/3 of the step.
pub struct Heun3;

impl IntegrationMethod for Heun3 {
    fn name(&self) -> &'static str {
        "heun"
    }
    fn is_implicit(&self) -> bool {
        false
    }
    fn is_adaptive(&self) -> bool {
        false
    }
    fn attempt(
        &self,
        graph: &SystemGraph,
        x_n: &StateVector,
        h: f64,
        t_new: f64,
        _cfg: &SolverConfig,
    ) -> Result<StepAttempt, SolveError> {
        let t = x_n.t;
        let (_, k1) = stage(graph, x_n, t, &[])?;
        let (_, k2) = stage(graph, x_n, t + h / 3.0, &[(h / 3.0, &k1)])?;
        let (_, k3) = stage(graph, x_n, t + 2.0 * h / 3.0, &[(2.0 * h / 3.0, &k2)])?;
        let (x_new, _) = stage(graph, x_n, t_new, &[(h / 4.0, &k1), (3.0 * h / 4.0, &k3)])?;
        Ok(fixed_accept(x_new, h))
    }
}

/// The classical four-stage fourth-order method.
pub struct ClassicRk4;

impl IntegrationMethod for ClassicRk4 {
    fn name(&self) -> &'static str {
        "rk4"
    }
    fn is_implicit(&self) -> bool {
        false
    }
    fn is_adaptive(&self) -> bool {
        false
    }
    fn attempt(
        &self,
        graph: &SystemGraph,
        x_n: &StateVector,
        h: f64,
        t_new: f64,
        _cfg: &SolverConfig,
    ) -> Result<StepAttempt, SolveError> {
        let t = x_n.t;
        let (_, k1) = stage(graph, x_n, t, &[])?;
        let (_, k2) = stage(graph, x_n, t + h / 2.0, &[(h / 2.0, &k1)])?;
        let (_, k3) = stage(graph, x_n, t + h / 2.0, &[(h / 2.0, &k2)])?;
        let (_, k4) = stage(graph, x_n, t_new, &[(h, &k3)])?;
        let (x_new, _) = stage(
            graph,
            x_n,
            t_new,
            &[
                (h / 6.0, &k1),
                (h / 3.0, &k2),
                (h / 3.0, &k3),
                (h / 6.0, &k4),
            ],
        )?;
        Ok(fixed_accept(x_new, h))
    }
}

/// Fehlberg's six-stage embedded pair; advances with the fourth-order
/// solution and controls the step with the 4/5 difference.
pub struct Rkf45;

impl IntegrationMethod for Rkf45 {
    fn name(&self) -> &'static str {
        "rkf45"
    }
    fn is_implicit(&self) -> bool {
        false
    }
    fn is_adaptive(&self) -> bool {
        true
    }
    fn attempt(
        &self,
        graph: &SystemGraph,
        x_n: &StateVector,
        h: f64,
        t_new: f64,
        cfg: &SolverConfig,
    ) -> Result<StepAttempt, SolveError> {
        let t = x_n.t;
        let (_, k1) = stage(graph, x_n, t, &[])?;
        let (_, k2) = stage(graph, x_n, t + h / 4.0, &[(h / 4.0, &k1)])?;
        let (_, k3) = stage(
            graph,
            x_n,
            t + 3.0 * h / 8.0,
            &[(3.0 * h / 32.0, &k1), (9.0 * h / 32.0, &k2)],
        )?;
        let (_, k4) = stage(
            graph,
            x_n,
            t + 12.0 * h / 13.0,
            &[
                (1932.0 * h / 2197.0, &k1),
                (-7200.0 * h / 2197.0, &k2),
                (7296.0 * h / 2197.0, &k3),
            ],
        )?;
        let (_, k5) = stage(
            graph,
            x_n,
            t_new,
            &[
                (439.0 * h / 216.0, &k1),
                (-8.0 * h, &k2),
                (3680.0 * h / 513.0, &k3),
                (-845.0 * h / 4104.0, &k4),
            ],
        )?;
        let (_, k6) = stage(
            graph,
            x_n,
            t + h / 2.0,
            &[
                (-8.0 * h / 27.0, &k1),
                (2.0 * h, &k2),
                (-3544.0 * h / 2565.0, &k3),
                (1859.0 * h / 4104.0, &k4),
                (-11.0 * h / 40.0, &k5),
            ],
        )?;
        let (x4, _) = stage(
            graph,
            x_n,
            t_new,
            &[
                (25.0 * h / 216.0, &k1),
                (1408.0 * h / 2565.0, &k3),
                (2197.0 * h / 4104.0, &k4),
                (-h / 5.0, &k5),
            ],
        )?;
        // Difference of the order-5 and order-4 weights.
        let d = [
            1.0 / 360.0,
            0.0,
            -128.0 / 4275.0,
            -2197.0 / 75240.0,
            1.0 / 50.0,
            2.0 / 55.0,
        ];
        let ks = [&k1, &k2, &k3, &k4, &k5, &k6];
        let n = x_n.values.len();
        let mut err = vec![0.0; n];
        for (w, k) in d.iter().zip(ks) {
            for i in 0..n {
                err[i] += h * w * k[i];
            }
        }
        let lte = lte_norm(graph, &err, &x4);
        let h_next = controlled_h(h, lte, 5, cfg);
        if lte <= cfg.tol_lte {
            Ok(StepAttempt::Accepted {
                x_new: x4,
                lte,
                h_used: h,
                h_next,
                newton_iters: 0,
            })
        } else {
            Ok(StepAttempt::Rejected {
                lte,
                h_next,
                newton_iters: 0,
                reason: format!("truncation error {lte:.3e} above tolerance"),
            })
        }
    }
}

/// The 3(2) embedded pair; advances with the third-order solution.
pub struct Bs23;

impl IntegrationMethod for Bs23 {
    fn name(&self) -> &'static str {
        "bs23"
    }
    fn is_implicit(&self) -> bool {
        false
    }
    fn is_adaptive(&self) -> bool {
        true
    }
    fn attempt(
        &self,
        graph: &SystemGraph,
        x_n: &StateVector,
        h: f64,
        t_new: f64,
        cfg: &SolverConfig,
    ) -> Result<StepAttempt, SolveError> {
        let t = x_n.t;
        let (_, k1) = stage(graph, x_n, t, &[])?;
        let (_, k2) = stage(graph, x_n, t + h / 2.0, &[(h / 2.0, &k1)])?;
        let (_, k3) = stage(graph, x_n, t + 3.0 * h / 4.0, &[(3.0 * h / 4.0, &k2)])?;
        let (x3, k4) = stage(
            graph,
            x_n,
            t_new,
            &[
                (2.0 * h / 9.0, &k1),
                (h / 3.0, &k2),
                (4.0 * h / 9.0, &k3),
            ],
        )?;
        // Third-order weights minus the embedded second-order weights.
        let d = [-5.0 / 72.0, 1.0 / 12.0, 1.0 / 9.0, -1.0 / 8.0];
        let ks = [&k1, &k2, &k3, &k4];
        let n = x_n.values.len();
        let mut err = vec![0.0; n];
        for (w, k) in d.iter().zip(ks) {
            for i in 0..n {
                err[i] += h * w * k[i];
            }
        }
        let lte = lte_norm(graph, &err, &x3);
        let h_next = controlled_h(h, lte, 3, cfg);
        if lte <= cfg.tol_lte {
            Ok(StepAttempt::Accepted {
                x_new: x3,
                lte,
                h_used: h,
                h_next,
                newton_iters: 0,
            })
        } else {
            Ok(StepAttempt::Rejected {
                lte,
                h_next,
                newton_iters: 0,
                reason: format!("truncation error {lte:.3e} above tolerance"),
            })
        }
    }
}

/// Why a Newton solve stopped without converging.
#[derive(Debug, Clone)]
pub enum NewtonFailure {
    MaxIters { residual: f64 },
    Singular { suspects: String },
}

/// Result of one Newton solve.
#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: StateVector,
    /// Corrections actually applied.
    pub iters: u32,
    pub converged: bool,
    pub residual_norm: f64,
    pub failure: Option<NewtonFailure>,
}

/// Damped-free Newton iteration on the implicit residual. Convergence
/// is declared when the residual norm and the *pending* correction are
/// both small, before that correction is applied — an already-converged
/// guess therefore reports zero iterations, and an affine residual
/// exactly one.
pub fn newton_solve(
    graph: &SystemGraph,
    x_old: &StateVector,
    scheme: Scheme,
    h: f64,
    guess: StateVector,
    cfg: &SolverConfig,
) -> Result<NewtonOutcome, SolveError> {
    let mut x = guess;
    let mut iters = 0u32;
    loop {
        let r = graph.residual(&x, x_old, scheme, h)?;
        let r_norm = inf_norm(&r);
        let jac = graph.jacobian(&x, scheme, h)?;
        let lu = jac.clone().lu();
        let delta = match lu.solve(&(-&r)) {
            Some(d) => d,
            None => {
                let suspects = graph.describe_singularity(&jac);
                return Ok(NewtonOutcome {
                    x,
                    iters,
                    converged: false,
                    residual_norm: r_norm,
                    failure: Some(NewtonFailure::Singular { suspects }),
                });
            }
        };
        let d_norm = inf_norm(&delta);
        let x_norm = max_abs(&x.values);
        if r_norm <= cfg.newton_tol_abs && d_norm <= cfg.newton_tol_rel * (1.0 + x_norm) {
            return Ok(NewtonOutcome {
                x,
                iters,
                converged: true,
                residual_norm: r_norm,
                failure: None,
            });
        }
        if iters >= cfg.newton_max_iters {
            return Ok(NewtonOutcome {
                x,
                iters,
                converged: false,
                residual_norm: r_norm,
                failure: Some(NewtonFailure::MaxIters { residual: r_norm }),
            });
        }
        for (v, d) in x.values.iter_mut().zip(delta.iter()) {
            *v += d;
        }
        iters += 1;
    }
}

/// Turns a failed Newton outcome into the abort error used by
/// fixed-step implicit methods.
fn newton_abort(t: f64, outcome: &NewtonOutcome) -> SolveError {
    match &outcome.failure {
        Some(NewtonFailure::Singular { suspects }) => SolveError::SingularJacobian {
            t,
            suspects: suspects.clone(),
        },
        _ => SolveError::NewtonDiverged {
            t,
            iterations: outcome.iters as usize,
            residual: outcome.residual_norm,
        },
    }
}

fn implicit_fixed_attempt(
    graph: &SystemGraph,
    x_n: &StateVector,
    h: f64,
    t_new: f64,
    cfg: &SolverConfig,
    scheme: Scheme,
) -> Result<StepAttempt, SolveError> {
    let mut guess = x_n.clone();
    guess.t = t_new;
    let out = newton_solve(graph, x_n, scheme, h, guess, cfg)?;
    if !out.converged {
        return Err(newton_abort(t_new, &out));
    }
    Ok(StepAttempt::Accepted {
        x_new: out.x,
        lte: 0.0,
        h_used: h,
        h_next: h,
        newton_iters: out.iters,
    })
}

pub struct BackwardEuler;

impl IntegrationMethod for BackwardEuler {
    fn name(&self) -> &'static str {
        "backward_euler"
    }
    fn is_implicit(&self) -> bool {
        true
    }
    fn is_adaptive(&self) -> bool {
        false
    }
    fn attempt(
        &self,
        graph: &SystemGraph,
        x_n: &StateVector,
        h: f64,
        t_new: f64,
        cfg: &SolverConfig,
    ) -> Result<StepAttempt, SolveError> {
        implicit_fixed_attempt(graph, x_n, h, t_new, cfg, Scheme::BackwardEuler)
    }
}

pub struct Trapezoidal;

impl IntegrationMethod for Trapezoidal {
    fn name(&self) -> &'static str {
        "trapezoidal"
    }
    fn is_implicit(&self) -> bool {
        true
    }
    fn is_adaptive(&self) -> bool {
        false
    }
    fn attempt(
        &self,
        graph: &SystemGraph,
        x_n: &StateVector,
        h: f64,
        t_new: f64,
        cfg: &SolverConfig,
    ) -> Result<StepAttempt, SolveError> {
        implicit_fixed_attempt(graph, x_n, h, t_new, cfg, Scheme::Trapezoidal)
    }
}

/// Shared body of the iteration-count-controlled implicit methods.
fn nr_auto_attempt(
    graph: &SystemGraph,
    x_n: &StateVector,
    h: f64,
    t_new: f64,
    cfg: &SolverConfig,
    scheme: Scheme,
) -> Result<StepAttempt, SolveError> {
    let mut guess = x_n.clone();
    guess.t = t_new;
    let out = newton_solve(graph, x_n, scheme, h, guess, cfg)?;
    let h_retry = (h / 2.0).max(cfg.h_min);
    if !out.converged {
        let reason = match &out.failure {
            Some(NewtonFailure::Singular { suspects }) => {
                format!("singular Jacobian ({suspects})")
            }
            _ => format!(
                "Newton did not converge in {} iterations (residual {:.3e})",
                out.iters, out.residual_norm
            ),
        };
        return Ok(StepAttempt::Rejected {
            lte: 0.0,
            h_next: h_retry,
            newton_iters: out.iters,
            reason,
        });
    }
    if out.iters > cfg.iters_high {
        return Ok(StepAttempt::Rejected {
            lte: 0.0,
            h_next: h_retry,
            newton_iters: out.iters,
            reason: format!(
                "Newton needed {} iterations (limit {})",
                out.iters, cfg.iters_high
            ),
        });
    }
    let h_next = if out.iters < cfg.iters_low {
        (1.5 * h).clamp(cfg.h_min, cfg.h_max)
    } else {
        h.clamp(cfg.h_min, cfg.h_max)
    };
    Ok(StepAttempt::Accepted {
        x_new: out.x,
        lte: 0.0,
        h_used: h,
        h_next,
        newton_iters: out.iters,
    })
}

pub struct BeAuto;

impl IntegrationMethod for BeAuto {
    fn name(&self) -> &'static str {
        "be_auto"
    }
    fn is_implicit(&self) -> bool {
        true
    }
    fn is_adaptive(&self) -> bool {
        true
    }
    fn attempt(
        &self,
        graph: &SystemGraph,
        x_n: &StateVector,
        h: f64,
        t_new: f64,
        cfg: &SolverConfig,
    ) -> Result<StepAttempt, SolveError> {
        nr_auto_attempt(graph, x_n, h, t_new, cfg, Scheme::BackwardEuler)
    }
}

pub struct TrAuto;

impl IntegrationMethod for TrAuto {
    fn name(&self) -> &'static str {
        "tr_auto"
    }
    fn is_implicit(&self) -> bool {
        true
    }
    fn is_adaptive(&self) -> bool {
        true
    }
    fn attempt(
        &self,
        graph: &SystemGraph,
        x_n: &StateVector,
        h: f64,
        t_new: f64,
        cfg: &SolverConfig,
    ) -> Result<StepAttempt, SolveError> {
        nr_auto_attempt(graph, x_n, h, t_new, cfg, Scheme::Trapezoidal)
    }
}

/// Trapezoidal sub-step over `gamma*h` followed by a two-step backward
/// difference to the end of the step; L-stable, second order, with a
/// third-order truncation estimate from the divided difference of the
/// three stage derivatives.
pub struct TrBdf2;

impl IntegrationMethod for TrBdf2 {
    fn name(&self) -> &'static str {
        "trbdf2"
    }
    fn is_implicit(&self) -> bool {
        true
    }
    fn is_adaptive(&self) -> bool {
        true
    }
    fn attempt(
        &self,
        graph: &SystemGraph,
        x_n: &StateVector,
        h: f64,
        t_new: f64,
        cfg: &SolverConfig,
    ) -> Result<StepAttempt, SolveError> {
        let gamma = TRBDF2_GAMMA;
        let h_retry = (h / 2.0).max(cfg.h_min);
        let reject_newton = |stage: &str, out: &NewtonOutcome, iters: u32| StepAttempt::Rejected {
            lte: 0.0,
            h_next: h_retry,
            newton_iters: iters,
            reason: format!(
                "{stage} sub-step Newton failure after {} iterations (residual {:.3e})",
                out.iters, out.residual_norm
            ),
        };

        let t_gamma = x_n.t + gamma * h;
        let mut guess = x_n.clone();
        guess.t = t_gamma;
        let s1 = newton_solve(graph, x_n, Scheme::Trapezoidal, gamma * h, guess, cfg)?;
        if !s1.converged {
            return Ok(reject_newton("trapezoidal", &s1, s1.iters));
        }
        let x_gamma = s1.x;

        let mut guess = x_gamma.clone();
        guess.t = t_new;
        let s2 = newton_solve(
            graph,
            &x_gamma,
            Scheme::Bdf2 {
                x_oldest: x_n,
                gamma,
            },
            h,
            guess,
            cfg,
        )?;
        let total_iters = s1.iters + s2.iters;
        if !s2.converged {
            return Ok(reject_newton("backward-difference", &s2, total_iters));
        }
        let x_new = s2.x;

        let g_n = graph.state_derivatives(x_n)?;
        let g_gamma = graph.state_derivatives(&x_gamma)?;
        let g_new = graph.state_derivatives(&x_new)?;
        let w0 = 2.0 / gamma;
        let w_gamma = -2.0 / (gamma * (1.0 - gamma));
        let w1 = 2.0 / (1.0 - gamma);
        let n = x_n.values.len();
        let mut est = vec![0.0; n];
        for i in 0..n {
            est[i] =
                TRBDF2_ERROR_SCALE * h * (w0 * g_n[i] + w_gamma * g_gamma[i] + w1 * g_new[i]);
        }
        let lte = lte_norm(graph, &est, &x_new);
        let h_next = controlled_h(h, lte, 3, cfg);
        if lte <= cfg.tol_lte {
            Ok(StepAttempt::Accepted {
                x_new,
                lte,
                h_used: h,
                h_next,
                newton_iters: total_iters,
            })
        } else {
            Ok(StepAttempt::Rejected {
                lte,
                h_next,
                newton_iters: total_iters,
                reason: format!("truncation error {lte:.3e} above tolerance"),
            })
        }
    }
}

/// Aggregate counters of one transient run.
#[derive(Debug, Clone, Default)]
pub struct RunStats {
    pub steps_accepted: usize,
    pub steps_rejected: usize,
    pub newton_iters: u64,
    /// Largest accepted step size.
    pub max_accepted_h: f64,
    /// Controller step size when the run finished.
    pub h_final: f64,
}

/// Accepted trajectory and counters.
#[derive(Debug, Clone)]
pub struct RunResult {
    /// Accepted points in time order, starting at the initial point and
    /// ending exactly at the configured end time.
    pub history: Vec<StateVector>,
    pub stats: RunStats,
}

/// A consistent initial point: states at their startup values,
/// algebraic variables solved. Acyclic systems are evaluated directly;
/// systems with algebraic loops need an implicit method and are
/// initialized with a Newton solve that pins the states.
pub fn initial_point(
    graph: &SystemGraph,
    cfg: &SolverConfig,
    implicit: bool,
) -> Result<StateVector, SolveError> {
    if graph.algebraic_loop().is_none() {
        return Ok(graph.initial_state(cfg.t_start)?);
    }
    if !implicit {
        // Surface the loop as the explicit-method error it is.
        graph.eval_order()?;
        unreachable!("eval_order must fail when a loop exists");
    }
    let start = graph.startup_state(cfg.t_start)?;
    let out = newton_solve(graph, &start, Scheme::Startup, 0.0, start.clone(), cfg)?;
    if !out.converged {
        return Err(newton_abort(cfg.t_start, &out));
    }
    Ok(out.x)
}

/// Runs the transient simulation: repeatedly trial-steps with the
/// configured method, clamps trial steps so accepted points land
/// exactly on waveform breaks, injected crossing brackets, and the end
/// time, and collects every accepted point.
pub fn run_transient(
    graph: &SystemGraph,
    cfg: &SolverConfig,
    events: &EventConfig,
    registry: &MethodRegistry,
) -> Result<RunResult, SolveError> {
    cfg.validate()?;
    let method = registry.get(&cfg.method).ok_or_else(|| {
        SolveError::BadConfig(format!(
            "unknown method `{}`; available: {}",
            cfg.method,
            registry.names().collect::<Vec<_>>().join(", ")
        ))
    })?;

    let x0 = initial_point(graph, cfg, method.is_implicit())?;
    let mut history = vec![x0.clone()];
    let mut tracker = CrossingTracker::new(graph);
    if events.enabled {
        tracker.record(graph, &x0);
    }

    let mut x = x0;
    let mut h = cfg.h_init.clamp(cfg.h_min, cfg.h_max);
    let mut stats = RunStats {
        h_final: h,
        ..RunStats::default()
    };
    // Next forced landing from a crossing plan, recomputed after every
    // accepted point.
    let mut forced: Option<f64> = None;
    let mut rejections_in_row = 0u32;
    let end_guard = 1e-12 * cfg.t_end.abs().max(1.0);

    while x.t < cfg.t_end - end_guard {
        let t = x.t;
        let natural = t + h;
        let mut stop = natural;
        // Snap the final step so the run ends exactly on t_end even
        // after accumulated rounding.
        if stop >= cfg.t_end - end_guard {
            stop = cfg.t_end;
        }
        if events.enabled {
            let breaks = collect_breaks(graph, t, cfg.t_end);
            if let Some(tb) = breaks.first() {
                if tb <= stop {
                    stop = tb;
                }
            }
        }
        if let Some(tf) = forced {
            if tf <= stop {
                stop = tf;
            }
        }
        let clamped = stop != natural;
        let h_trial = stop - t;
        if !(h_trial > 0.0) {
            return Err(SolveError::StepControl {
                t,
                reason: format!("trial step collapsed to {h_trial}"),
            });
        }

        match method.attempt(graph, &x, h_trial, stop, cfg)? {
            StepAttempt::Accepted {
                x_new,
                h_next,
                newton_iters,
                ..
            } => {
                stats.steps_accepted += 1;
                stats.newton_iters += u64::from(newton_iters);
                stats.max_accepted_h = stats.max_accepted_h.max(h_trial);
                rejections_in_row = 0;
                x = x_new;
                history.push(x.clone());
                // A clamped landing says nothing about the right cruise
                // step, so keep the controller's h in that case.
                if !clamped {
                    h = h_next;
                }
                forced = None;
                if events.enabled {
                    tracker.record(graph, &x);
                    let proposals =
                        tracker.proposals(graph, h, events.extrapolation_override);
                    if let Some(plan) = plan_crossing(&proposals, events.delta(h)) {
                        forced = plan
                            .next_target(x.t)
                            .filter(|&tf| tf <= cfg.t_end);
                    }
                }
            }
            StepAttempt::Rejected {
                h_next,
                newton_iters,
                ..
            } => {
                stats.steps_rejected += 1;
                stats.newton_iters += u64::from(newton_iters);
                rejections_in_row += 1;
                if rejections_in_row >= cfg.max_rejections {
                    return Err(SolveError::TooManyRejections {
                        t,
                        count: rejections_in_row as usize,
                    });
                }
                h = h_next;
            }
        }
        stats.h_final = h;
    }

    Ok(RunResult { history, stats })
}
