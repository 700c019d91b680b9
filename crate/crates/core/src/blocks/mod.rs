//! Block template library.
//!
//! A *template* describes one reusable block type: its ports, parameters,
//! and the functions the solver needs from it.  Every template implements
//! the [`BlockTemplate`] trait and is registered by name in a
//! [`TemplateRegistry`]; the netlist refers to templates purely by those
//! names.
//!
//! Templates come in two kinds:
//!
//! * **evaluate** — outputs are an instantaneous function of the inputs
//!   (`sum_2`, `gain`, sources, ...).  Explicit methods call
//!   [`BlockTemplate::eval_outputs`]; implicit methods use the residual
//!   form `g_i = y_i - f_i(inputs) = 0` together with the analytic
//!   Jacobian entries.
//! * **integrate** — the block owns one ODE per output/aux variable
//!   (`integrator`, `lag_1`, `indmc1`).  [`BlockTemplate::derivatives`]
//!   returns the right-hand sides for explicit methods; the same values
//!   are returned through [`BlockTemplate::residuals`] for implicit
//!   methods, which wrap them in the chosen time discretization.
//!
//! Both paths must agree exactly: the default `residuals` implementation
//! for integrate templates *is* `derivatives`, so a template author writes
//! the right-hand side once.  The Jacobian entries, however, are always
//! analytic and hand-written per template; the test-suite checks each of
//! them against central finite differences.

use std::collections::BTreeMap;
use std::collections::VecDeque;
use std::sync::Arc;

use crate::error::BlockError;

mod comparator;
mod dynamics;
mod machine;
mod math;
mod sources;

pub use comparator::Comparator;
pub use dynamics::{Integrator, Lag1};
pub use machine::{AbcToDq, InductionMachine};
pub use math::{CosFn, Gain, Mult2, Pwl10Xy, SinFn, Sum2, Sum3};
pub use sources::{ConstSource, Pwl20, SineSource, StepSource, TriangleSource};

/// Whether a template's outputs are instantaneous functions or ODE states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateKind {
    /// Outputs are algebraic functions of the inputs (and time).
    Evaluate,
    /// Each output/aux variable is a state with its own ODE.
    Integrate,
}

/// Whether the Jacobian entries depend on the evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianKind {
    /// Entries depend only on parameters; computed once per run.
    Constant,
    /// Entries depend on signal values; recomputed every evaluation.
    Variable,
}

/// Reference to one variable of a template, by port/aux position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum VarRef {
    Input(usize),
    Output(usize),
    Aux(usize),
}

/// A named real parameter with its default value.
#[derive(Debug, Clone)]
pub struct RealParam {
    pub name: &'static str,
    pub default: f64,
}

/// A named integer parameter with its default value.
#[derive(Debug, Clone)]
pub struct IntParam {
    pub name: &'static str,
    pub default: i64,
}

/// A named string parameter with its default value.
#[derive(Debug, Clone)]
pub struct StrParam {
    pub name: &'static str,
    pub default: &'static str,
}

/// Static description of a template: ports, parameters and equation shape.
///
/// `f_var_map` names, for each ODE right-hand side, the output/aux variable
/// it is the derivative of.  `g_var_map` names, for each residual, every
/// variable that may appear in it; Jacobian entries outside this set are
/// rejected, which keeps the declared sparsity pattern honest.
#[derive(Debug, Clone)]
pub struct TemplateDescriptor {
    pub name: &'static str,
    pub kind: TemplateKind,
    pub inputs: Vec<&'static str>,
    pub outputs: Vec<&'static str>,
    pub aux_vars: Vec<&'static str>,
    pub real_params: Vec<RealParam>,
    pub integer_params: Vec<IntParam>,
    pub string_params: Vec<StrParam>,
    /// Initial values for state variables, overridable per instance.
    pub startup_params: Vec<RealParam>,
    /// Names of derived quantities observable through `output_params`.
    pub out_params: Vec<&'static str>,
    pub n_f: usize,
    pub n_g: usize,
    pub f_var_map: Vec<VarRef>,
    pub g_var_map: Vec<Vec<VarRef>>,
    pub jacobian_kind: JacobianKind,
}

impl TemplateDescriptor {
    /// Number of state variables this template contributes (outputs + aux
    /// covered by `f_var_map`; zero for evaluate templates).
    pub fn n_states(&self) -> usize {
        self.n_f
    }

    pub fn real_index(&self, name: &str) -> Option<usize> {
        self.real_params.iter().position(|p| p.name == name)
    }

    pub fn integer_index(&self, name: &str) -> Option<usize> {
        self.integer_params.iter().position(|p| p.name == name)
    }

    pub fn string_index(&self, name: &str) -> Option<usize> {
        self.string_params.iter().position(|p| p.name == name)
    }

    pub fn startup_index(&self, name: &str) -> Option<usize> {
        self.startup_params.iter().position(|p| p.name == name)
    }

    pub fn input_index(&self, name: &str) -> Option<usize> {
        self.inputs.iter().position(|p| *p == name)
    }

    pub fn output_index(&self, name: &str) -> Option<usize> {
        self.outputs.iter().position(|p| *p == name)
    }

    /// The name behind a [`VarRef`], for diagnostics.  Out-of-range
    /// references are rendered positionally instead of panicking.
    pub fn var_name(&self, var: VarRef) -> String {
        let lookup = |list: &[&'static str], i: usize, kind: &str| {
            list.get(i)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("<{kind} #{i}>"))
        };
        match var {
            VarRef::Input(i) => lookup(&self.inputs, i, "input"),
            VarRef::Output(i) => lookup(&self.outputs, i, "output"),
            VarRef::Aux(i) => lookup(&self.aux_vars, i, "aux"),
        }
    }

    fn var_in_range(&self, var: VarRef) -> bool {
        match var {
            VarRef::Input(i) => i < self.inputs.len(),
            VarRef::Output(i) => i < self.outputs.len(),
            VarRef::Aux(i) => i < self.aux_vars.len(),
        }
    }

    /// Check the structural rules every template must satisfy.
    pub fn validate(&self) -> Result<(), BlockError> {
        let fail = |reason: String| {
            Err(BlockError::BadDefinition {
                template: self.name.to_string(),
                reason,
            })
        };
        if self.name.is_empty() {
            return fail("template name is empty".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in self
            .inputs
            .iter()
            .chain(self.outputs.iter())
            .chain(self.aux_vars.iter())
        {
            if !is_identifier(name) {
                return fail(format!("`{name}` is not a valid port name"));
            }
            if !seen.insert(*name) {
                return fail(format!("duplicate port/aux name `{name}`"));
            }
        }
        let mut pseen = std::collections::BTreeSet::new();
        for name in self
            .real_params
            .iter()
            .map(|p| p.name)
            .chain(self.integer_params.iter().map(|p| p.name))
            .chain(self.string_params.iter().map(|p| p.name))
            .chain(self.startup_params.iter().map(|p| p.name))
        {
            if !is_identifier(name) {
                return fail(format!("`{name}` is not a valid parameter name"));
            }
            if !pseen.insert(name) {
                return fail(format!("duplicate parameter name `{name}`"));
            }
            if seen.contains(name) {
                return fail(format!("`{name}` is both a port and a parameter"));
            }
        }
        match self.kind {
            TemplateKind::Evaluate => {
                if self.n_f != 0 || !self.f_var_map.is_empty() {
                    return fail("evaluate templates must have no ODEs".into());
                }
                if !self.aux_vars.is_empty() {
                    return fail("evaluate templates must have no aux variables".into());
                }
                if self.n_g != self.outputs.len() {
                    return fail(format!(
                        "evaluate templates need one residual per output ({} vs {})",
                        self.n_g,
                        self.outputs.len()
                    ));
                }
            }
            TemplateKind::Integrate => {
                if self.n_f == 0 {
                    return fail("integrate templates must own at least one ODE".into());
                }
                if self.n_g != self.n_f {
                    return fail("integrate templates need one residual per ODE".into());
                }
                if self.f_var_map.len() != self.n_f {
                    return fail("f_var_map length must equal the ODE count".into());
                }
                let mut fseen = std::collections::BTreeSet::new();
                for var in &self.f_var_map {
                    if matches!(var, VarRef::Input(_)) {
                        return fail("an input cannot be a state variable".into());
                    }
                    if !self.var_in_range(*var) {
                        return fail("f_var_map entry out of range".into());
                    }
                    if !fseen.insert(*var) {
                        return fail("f_var_map entries must be distinct".into());
                    }
                }
                if self.startup_params.len() != self.n_f {
                    return fail("integrate templates need one startup parameter per state".into());
                }
                // Every output and every aux variable must be a state.
                let covered = self.outputs.len() + self.aux_vars.len();
                if covered != self.n_f {
                    return fail(format!(
                        "every output/aux variable needs an ODE ({covered} variables, {} ODEs)",
                        self.n_f
                    ));
                }
            }
        }
        if self.g_var_map.len() != self.n_g {
            return fail("g_var_map length must equal the residual count".into());
        }
        for (gi, vars) in self.g_var_map.iter().enumerate() {
            for var in vars {
                if !self.var_in_range(*var) {
                    return fail(format!("g_var_map[{gi}] references a variable out of range"));
                }
            }
        }
        Ok(())
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Per-instance parameter values, resolved against a descriptor's defaults.
///
/// All vectors are indexed in the declaration order of the descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedParams {
    pub reals: Vec<f64>,
    pub integers: Vec<i64>,
    pub strings: Vec<String>,
    pub startup: Vec<f64>,
}

impl ResolvedParams {
    /// Start from the descriptor's default values.
    pub fn defaults(desc: &TemplateDescriptor) -> Self {
        ResolvedParams {
            reals: desc.real_params.iter().map(|p| p.default).collect(),
            integers: desc.integer_params.iter().map(|p| p.default).collect(),
            strings: desc
                .string_params
                .iter()
                .map(|p| p.default.to_string())
                .collect(),
            startup: desc.startup_params.iter().map(|p| p.default).collect(),
        }
    }

    pub fn real(&self, idx: usize) -> f64 {
        self.reals[idx]
    }

    pub fn integer(&self, idx: usize) -> i64 {
        self.integers[idx]
    }

    pub fn string(&self, idx: usize) -> &str {
        &self.strings[idx]
    }
}

/// Signal values visible to a template during one evaluation.
///
/// The slices are ordered like the descriptor's `inputs`, `outputs` and
/// `aux_vars` lists.  `one_time` holds the values produced by
/// [`BlockTemplate::one_time`] at build time.
pub struct EvalContext<'a> {
    pub t: f64,
    pub inputs: &'a [f64],
    pub outputs: &'a [f64],
    pub aux: &'a [f64],
    pub params: &'a ResolvedParams,
    pub one_time: &'a [f64],
}

impl<'a> EvalContext<'a> {
    /// Value behind a [`VarRef`].
    pub fn var(&self, var: VarRef) -> f64 {
        match var {
            VarRef::Input(i) => self.inputs[i],
            VarRef::Output(i) => self.outputs[i],
            VarRef::Aux(i) => self.aux[i],
        }
    }
}

/// Collects analytic Jacobian entries from a template, rejecting any entry
/// for a variable the template did not declare in its `g_var_map`.
pub struct JacobianSink<'a> {
    desc: &'a TemplateDescriptor,
    entries: Vec<(usize, VarRef, f64)>,
}

impl<'a> JacobianSink<'a> {
    pub fn new(desc: &'a TemplateDescriptor) -> Self {
        JacobianSink {
            desc,
            entries: Vec::new(),
        }
    }

    /// Record d(residual `g`)/d(`var`) = `value`.
    pub fn set(&mut self, g: usize, var: VarRef, value: f64) -> Result<(), BlockError> {
        if g >= self.desc.n_g {
            return Err(BlockError::BadDefinition {
                template: self.desc.name.to_string(),
                reason: format!("Jacobian entry for residual {g} out of range"),
            });
        }
        if !self.desc.g_var_map[g].contains(&var) {
            return Err(BlockError::BadDefinition {
                template: self.desc.name.to_string(),
                reason: format!(
                    "Jacobian entry for undeclared variable `{}` in residual {g}",
                    self.desc.var_name(var)
                ),
            });
        }
        self.entries.push((g, var, value));
        Ok(())
    }

    /// All recorded entries, in insertion order.
    pub fn entries(&self) -> &[(usize, VarRef, f64)] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<(usize, VarRef, f64)> {
        self.entries
    }
}

/// The strategy interface every block template implements.
///
/// Only the methods matching the template's kind need to be overridden:
/// evaluate templates implement `eval_outputs` and `jacobian`; integrate
/// templates implement `derivatives`, `jacobian` and `startup`.  The
/// residual form is derived automatically (`y - f(x)` for evaluate
/// templates, the raw right-hand side for integrate templates) so the
/// explicit and implicit paths cannot drift apart.
pub trait BlockTemplate: Send + Sync {
    fn descriptor(&self) -> &TemplateDescriptor;

    /// Evaluate-kind only: write each output value.
    fn eval_outputs(&self, _ctx: &EvalContext, _out: &mut [f64]) -> Result<(), BlockError> {
        Err(self.unsupported("eval_outputs"))
    }

    /// Integrate-kind only: write d(state)/dt for each ODE, in `f_var_map`
    /// order.
    fn derivatives(&self, _ctx: &EvalContext, _f: &mut [f64]) -> Result<(), BlockError> {
        Err(self.unsupported("derivatives"))
    }

    /// Residual values used by implicit methods.  `g` has length `n_g`.
    ///
    /// Evaluate kind: `g_i = y_i - f_i(inputs)`, which the solver drives to
    /// zero.  Integrate kind: `g_i` is the raw ODE right-hand side; the
    /// assembly wraps it in the time discretization.
    fn residuals(&self, ctx: &EvalContext, g: &mut [f64]) -> Result<(), BlockError> {
        let desc = self.descriptor();
        match desc.kind {
            TemplateKind::Integrate => self.derivatives(ctx, g),
            TemplateKind::Evaluate => {
                let mut f = vec![0.0; g.len()];
                self.eval_outputs(ctx, &mut f)?;
                for (i, gi) in g.iter_mut().enumerate() {
                    *gi = ctx.outputs[i] - f[i];
                }
                Ok(())
            }
        }
    }

    /// Analytic partial derivatives of every residual with respect to the
    /// variables declared in `g_var_map`.
    fn jacobian(&self, ctx: &EvalContext, sink: &mut JacobianSink) -> Result<(), BlockError>;

    /// Initial value for each state, in `f_var_map` order.  The default
    /// returns the startup parameters directly, which is the common case.
    fn startup(&self, params: &ResolvedParams) -> Vec<f64> {
        params.startup.clone()
    }

    /// Values computed once per run from the parameters (derived
    /// inductances, reciprocal coefficients, ...).  Parameter combinations
    /// that make the template ill-defined are rejected here.
    fn one_time(&self, _params: &ResolvedParams) -> Result<Vec<f64>, BlockError> {
        Ok(Vec::new())
    }

    /// Next time > `t_now` at which this block's waveform has a corner or
    /// jump, if any.  Times must be computed from an integer lattice index
    /// (never by repeated addition) so that the same corner is always
    /// reported bit-identically.
    fn next_break(&self, _t_now: f64, _params: &ResolvedParams) -> Option<f64> {
        None
    }

    /// Crossing-aware blocks return the scalar whose zero crossing matters
    /// (the comparator returns `x1 - x2`); all others return `None`.
    fn crossing_signal(&self, _inputs: &[f64], _params: &ResolvedParams) -> Option<f64> {
        None
    }

    /// Observable derived quantities, in `out_params` order.  The default
    /// exposes ports by name; templates with computed observables (torque,
    /// currents, ...) override this.
    fn output_params(&self, ctx: &EvalContext, out: &mut [f64]) -> Result<(), BlockError> {
        let desc = self.descriptor();
        for (slot, name) in desc.out_params.iter().enumerate() {
            let value = if let Some(i) = desc.input_index(name) {
                ctx.inputs[i]
            } else if let Some(i) = desc.output_index(name) {
                ctx.outputs[i]
            } else if let Some(i) = desc.aux_vars.iter().position(|a| a == name) {
                ctx.aux[i]
            } else {
                return Err(BlockError::BadDefinition {
                    template: desc.name.to_string(),
                    reason: format!("out_param `{name}` is not a port of this template"),
                });
            };
            out[slot] = value;
        }
        Ok(())
    }

    #[doc(hidden)]
    fn unsupported(&self, operation: &'static str) -> BlockError {
        BlockError::Unsupported {
            template: self.descriptor().name.to_string(),
            operation,
        }
    }
}

/// Name-keyed registry of block templates.
///
/// Registration validates the descriptor, so a malformed template can never
/// reach the assembly stage.
pub struct TemplateRegistry {
    map: BTreeMap<String, Arc<dyn BlockTemplate>>,
}

impl TemplateRegistry {
    /// An empty registry.
    pub fn new() -> Self {
        TemplateRegistry {
            map: BTreeMap::new(),
        }
    }

    /// The registry holding every built-in template.
    pub fn builtin() -> Self {
        let mut reg = TemplateRegistry::new();
        let all: Vec<Arc<dyn BlockTemplate>> = vec![
            Arc::new(ConstSource::new()),
            Arc::new(StepSource::new()),
            Arc::new(SineSource::new()),
            Arc::new(TriangleSource::new()),
            Arc::new(Pwl20::new()),
            Arc::new(Pwl10Xy::new()),
            Arc::new(Sum2::new()),
            Arc::new(Sum3::new()),
            Arc::new(Gain::new()),
            Arc::new(Mult2::new()),
            Arc::new(SinFn::new()),
            Arc::new(CosFn::new()),
            Arc::new(Integrator::new()),
            Arc::new(Lag1::new()),
            Arc::new(Comparator::new()),
            Arc::new(AbcToDq::new()),
            Arc::new(InductionMachine::new()),
        ];
        for t in all {
            reg.register(t).expect("built-in template must validate");
        }
        reg
    }

    /// Register a template, validating its descriptor.
    pub fn register(&mut self, template: Arc<dyn BlockTemplate>) -> Result<(), BlockError> {
        let desc = template.descriptor();
        desc.validate()?;
        let name = desc.name.to_string();
        if self.map.contains_key(&name) {
            return Err(BlockError::BadDefinition {
                template: name,
                reason: "a template with this name is already registered".into(),
            });
        }
        self.map.insert(name, template);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn BlockTemplate>> {
        self.map.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    /// Template names in sorted order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        TemplateRegistry::builtin()
    }
}

/// How a crossing time is extrapolated from recent samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExtrapolationMode {
    #[default]
    Linear,
    Quadratic,
}

impl ExtrapolationMode {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "linear" => Some(ExtrapolationMode::Linear),
            "quadratic" => Some(ExtrapolationMode::Quadratic),
            _ => None,
        }
    }
}

/// Maximum number of history samples kept per crossing-aware block.
pub const CROSSING_HISTORY: usize = 3;

/// Per-instance mutable state carried across a run: recent input samples
/// for crossing extrapolation and bookkeeping for break emission.
#[derive(Debug, Clone, Default)]
pub struct BlockRuntimeState {
    /// Up to [`CROSSING_HISTORY`] past `(time, inputs)` records, oldest
    /// first; only accepted time points are recorded.
    pub history: VecDeque<(f64, Vec<f64>)>,
    /// Last break time this block reported and the run landed on.
    pub last_break_emitted: Option<f64>,
}

impl BlockRuntimeState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record an accepted sample.  Times must be strictly increasing.
    pub fn push_sample(&mut self, t: f64, inputs: Vec<f64>) {
        if let Some((last, _)) = self.history.back() {
            debug_assert!(t > *last, "history times must strictly increase");
        }
        if self.history.len() == CROSSING_HISTORY {
            self.history.pop_front();
        }
        self.history.push_back((t, inputs));
    }
}

/// Collinearity threshold for the quadratic extrapolator: three samples
/// whose quadratic coefficient is below `1e-12` times the natural scale
/// `max(1, |u|) / span^2` are treated as a straight line.
const CURVATURE_REL_TOL: f64 = 1e-12;

/// Predict the time at which the block's crossing signal reaches zero.
///
/// Uses the samples recorded in `state` (the newest of which is the current
/// point `t0`).  Returns `Some(t')` only when `t0 < t' <= t0 + dt_normal`;
/// crossings further away are picked up on a later step.  Returns `None`
/// when the signal has already crossed (the sign changed between the last
/// two samples), when it is moving away from zero, or when fewer than two
/// samples exist.
///
/// `Linear` mode extrapolates the secant through the last two samples.
/// `Quadratic` mode fits a parabola through three samples and takes its
/// smallest root after `t0`, falling back to the secant when the samples
/// are collinear or the parabola never reaches zero; if the parabola has
/// real roots but none after `t0`, no crossing is proposed.
pub fn propose_crossing(
    template: &dyn BlockTemplate,
    state: &BlockRuntimeState,
    params: &ResolvedParams,
    dt_normal: f64,
    mode: ExtrapolationMode,
) -> Option<f64> {
    let mut samples: Vec<(f64, f64)> = Vec::with_capacity(CROSSING_HISTORY);
    for (t, inputs) in state.history.iter() {
        samples.push((*t, template.crossing_signal(inputs, params)?));
    }
    if samples.len() < 2 {
        return None;
    }
    let (t0, u0) = *samples.last().unwrap();
    let (_, u_prev) = samples[samples.len() - 2];
    // Already at or past the crossing: nothing to anticipate.
    if u0 == 0.0 || (u0 > 0.0) != (u_prev > 0.0) {
        return None;
    }
    let window = |t: f64| if t > t0 && t <= t0 + dt_normal { Some(t) } else { None };
    let linear = |(ta, ua): (f64, f64), (tb, ub): (f64, f64)| -> Option<f64> {
        let slope = (ub - ua) / (tb - ta);
        if slope == 0.0 {
            return None;
        }
        window(tb - ub / slope)
    };
    match mode {
        ExtrapolationMode::Linear => linear(samples[samples.len() - 2], samples[samples.len() - 1]),
        ExtrapolationMode::Quadratic => {
            if samples.len() < 3 {
                return linear(samples[0], samples[1]);
            }
            let (ta, ua) = samples[0];
            let (tb, ub) = samples[1];
            let (tc, uc) = samples[2];
            // Newton divided differences, expressed around the newest time
            // so that shifting all samples in time shifts the root exactly.
            let d1 = (ub - ua) / (tb - ta);
            let d2 = (uc - ub) / (tc - tb);
            let a = (d2 - d1) / (tc - ta);
            let span = tc - ta;
            let u_scale = ua.abs().max(ub.abs()).max(uc.abs()).max(1.0);
            if (2.0 * a).abs() < CURVATURE_REL_TOL * u_scale / (span * span) {
                return linear((tb, ub), (tc, uc));
            }
            // u(s) = a s^2 + b s + c with s = t - tc.
            let b = d2 + a * (tc - tb);
            let c = uc;
            let disc = b * b - 4.0 * a * c;
            if disc < 0.0 {
                return linear((tb, ub), (tc, uc));
            }
            let sq = disc.sqrt();
            // Numerically stable pair of roots.
            let q = -0.5 * (b + b.signum() * sq);
            let mut roots = [q / a, if q != 0.0 { c / q } else { -b / a }];
            roots.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let s = roots.iter().copied().find(|s| *s > 0.0)?;
            window(tc + s)
        }
    }
}
