//! Source templates: blocks with no inputs whose output is a prescribed
//! function of time.
//!
//! Sources with waveform corners (`step_source`, `triangle_source`,
//! `pwl20`) report those corner times through
//! [`BlockTemplate::next_break`] so the solver can land on them exactly
//! instead of stepping across them.

use crate::error::BlockError;

use super::{
    BlockTemplate, EvalContext, JacobianKind, JacobianSink, RealParam, ResolvedParams,
    IntParam, TemplateDescriptor, TemplateKind, VarRef,
};

fn source_descriptor(
    name: &'static str,
    real_params: Vec<RealParam>,
    integer_params: Vec<IntParam>,
) -> TemplateDescriptor {
    TemplateDescriptor {
        name,
        kind: TemplateKind::Evaluate,
        inputs: vec![],
        outputs: vec!["y"],
        aux_vars: vec![],
        real_params,
        integer_params,
        string_params: vec![],
        startup_params: vec![],
        out_params: vec!["y"],
        n_f: 0,
        n_g: 1,
        f_var_map: vec![],
        // The residual y - f(t) involves only the output variable.
        g_var_map: vec![vec![VarRef::Output(0)]],
        jacobian_kind: JacobianKind::Constant,
    }
}

/// `const`: constant output `y = k`.
pub struct ConstSource {
    desc: TemplateDescriptor,
}

impl ConstSource {
    pub fn new() -> Self {
        ConstSource {
            desc: source_descriptor(
                "const",
                vec![RealParam {
                    name: "k",
                    default: 0.0,
                }],
                vec![],
            ),
        }
    }
}

impl BlockTemplate for ConstSource {
    fn descriptor(&self) -> &TemplateDescriptor {
        &self.desc
    }

    fn eval_outputs(&self, ctx: &EvalContext, out: &mut [f64]) -> Result<(), BlockError> {
        out[0] = ctx.params.real(0);
        Ok(())
    }

    fn jacobian(&self, _ctx: &EvalContext, sink: &mut JacobianSink) -> Result<(), BlockError> {
        sink.set(0, VarRef::Output(0), 1.0)
    }
}

/// `step_source`: `y0` before `t0`, `y1` from `t0` onwards.
pub struct StepSource {
    desc: TemplateDescriptor,
}

impl StepSource {
    pub fn new() -> Self {
        StepSource {
            desc: source_descriptor(
                "step_source",
                vec![
                    RealParam {
                        name: "t0",
                        default: 0.0,
                    },
                    RealParam {
                        name: "y0",
                        default: 0.0,
                    },
                    RealParam {
                        name: "y1",
                        default: 1.0,
                    },
                ],
                vec![],
            ),
        }
    }
}

impl BlockTemplate for StepSource {
    fn descriptor(&self) -> &TemplateDescriptor {
        &self.desc
    }

    fn eval_outputs(&self, ctx: &EvalContext, out: &mut [f64]) -> Result<(), BlockError> {
        let (t0, y0, y1) = (ctx.params.real(0), ctx.params.real(1), ctx.params.real(2));
        out[0] = if ctx.t < t0 { y0 } else { y1 };
        Ok(())
    }

    fn jacobian(&self, _ctx: &EvalContext, sink: &mut JacobianSink) -> Result<(), BlockError> {
        sink.set(0, VarRef::Output(0), 1.0)
    }

    fn next_break(&self, t_now: f64, params: &ResolvedParams) -> Option<f64> {
        let t0 = params.real(0);
        if t_now < t0 {
            Some(t0)
        } else {
            None
        }
    }
}

/// `sine_source`: `y = offset + a * sin(2*pi*f*t + phi)`.
pub struct SineSource {
    desc: TemplateDescriptor,
}

impl SineSource {
    pub fn new() -> Self {
        SineSource {
            desc: source_descriptor(
                "sine_source",
                vec![
                    RealParam {
                        name: "a",
                        default: 1.0,
                    },
                    RealParam {
                        name: "f",
                        default: 1.0,
                    },
                    RealParam {
                        name: "phi",
                        default: 0.0,
                    },
                    RealParam {
                        name: "offset",
                        default: 0.0,
                    },
                ],
                vec![],
            ),
        }
    }
}

impl BlockTemplate for SineSource {
    fn descriptor(&self) -> &TemplateDescriptor {
        &self.desc
    }

    fn eval_outputs(&self, ctx: &EvalContext, out: &mut [f64]) -> Result<(), BlockError> {
        let (a, f, phi, offset) = (
            ctx.params.real(0),
            ctx.params.real(1),
            ctx.params.real(2),
            ctx.params.real(3),
        );
        out[0] = offset + a * (2.0 * std::f64::consts::PI * f * ctx.t + phi).sin();
        Ok(())
    }

    fn jacobian(&self, _ctx: &EvalContext, sink: &mut JacobianSink) -> Result<(), BlockError> {
        sink.set(0, VarRef::Output(0), 1.0)
    }
}

/// `triangle_source`: symmetric triangle wave of period `T`, swinging
/// between `-a` and `+a`, starting at `-a`.  Its corners (alternating
/// peaks and valleys) sit exactly on the half-period lattice `k * T/2`.
pub struct TriangleSource {
    desc: TemplateDescriptor,
}

impl TriangleSource {
    pub fn new() -> Self {
        TriangleSource {
            desc: source_descriptor(
                "triangle_source",
                vec![
                    RealParam {
                        name: "a",
                        default: 1.0,
                    },
                    RealParam {
                        name: "T",
                        default: 1.0,
                    },
                ],
                vec![],
            ),
        }
    }
}

impl BlockTemplate for TriangleSource {
    fn descriptor(&self) -> &TemplateDescriptor {
        &self.desc
    }

    fn eval_outputs(&self, ctx: &EvalContext, out: &mut [f64]) -> Result<(), BlockError> {
        let (a, period) = (ctx.params.real(0), ctx.params.real(1));
        let tau = ctx.t.rem_euclid(period);
        let half = 0.5 * period;
        out[0] = if tau <= half {
            -a + 4.0 * a * tau / period
        } else {
            3.0 * a - 4.0 * a * tau / period
        };
        Ok(())
    }

    fn jacobian(&self, _ctx: &EvalContext, sink: &mut JacobianSink) -> Result<(), BlockError> {
        sink.set(0, VarRef::Output(0), 1.0)
    }

    fn one_time(&self, params: &ResolvedParams) -> Result<Vec<f64>, BlockError> {
        if params.real(1) <= 0.0 {
            return Err(BlockError::BadParameter {
                template: "triangle_source".into(),
                param: "T".into(),
                reason: "period must be positive".into(),
            });
        }
        Ok(Vec::new())
    }

    /// Corners lie at `k * T/2`; the index `k` is computed first and the
    /// time derived from it in one multiplication, so every corner is
    /// reported with the same bit pattern no matter where the query
    /// starts from.
    fn next_break(&self, t_now: f64, params: &ResolvedParams) -> Option<f64> {
        let half = 0.5 * params.real(1);
        let mut k = (t_now / half).floor() as i64 + 1;
        let mut candidate = k as f64 * half;
        while candidate <= t_now {
            k += 1;
            candidate = k as f64 * half;
        }
        Some(candidate)
    }
}

const PWL20_T_NAMES: [&str; 20] = [
    "t1", "t2", "t3", "t4", "t5", "t6", "t7", "t8", "t9", "t10", "t11", "t12", "t13", "t14",
    "t15", "t16", "t17", "t18", "t19", "t20",
];
const PWL20_Y_NAMES: [&str; 20] = [
    "y1", "y2", "y3", "y4", "y5", "y6", "y7", "y8", "y9", "y10", "y11", "y12", "y13", "y14",
    "y15", "y16", "y17", "y18", "y19", "y20",
];

/// `pwl20`: piecewise-linear waveform through up to 20 `(t_k, y_k)`
/// points.  `n` selects how many points are active.  Before `t1` the
/// output holds `y1`; after `t_n` it holds `y_n`.  Every active table
/// time is a break point.
pub struct Pwl20 {
    desc: TemplateDescriptor,
}

impl Pwl20 {
    pub fn new() -> Self {
        let mut real_params = Vec::with_capacity(40);
        for k in 0..20 {
            real_params.push(RealParam {
                name: PWL20_T_NAMES[k],
                default: 0.0,
            });
            real_params.push(RealParam {
                name: PWL20_Y_NAMES[k],
                default: 0.0,
            });
        }
        Pwl20 {
            desc: source_descriptor(
                "pwl20",
                real_params,
                vec![IntParam {
                    name: "n",
                    default: 2,
                }],
            ),
        }
    }

    /// Active `(t, y)` pairs; the table layout interleaves t/y parameters.
    fn table(params: &ResolvedParams) -> Vec<(f64, f64)> {
        let n = params.integer(0).clamp(0, 20) as usize;
        (0..n)
            .map(|k| (params.real(2 * k), params.real(2 * k + 1)))
            .collect()
    }
}

impl BlockTemplate for Pwl20 {
    fn descriptor(&self) -> &TemplateDescriptor {
        &self.desc
    }

    fn eval_outputs(&self, ctx: &EvalContext, out: &mut [f64]) -> Result<(), BlockError> {
        out[0] = interp_clamped(&Pwl20::table(ctx.params), ctx.t);
        Ok(())
    }

    fn jacobian(&self, _ctx: &EvalContext, sink: &mut JacobianSink) -> Result<(), BlockError> {
        sink.set(0, VarRef::Output(0), 1.0)
    }

    fn one_time(&self, params: &ResolvedParams) -> Result<Vec<f64>, BlockError> {
        let n = params.integer(0);
        if !(2..=20).contains(&n) {
            return Err(BlockError::BadParameter {
                template: "pwl20".into(),
                param: "n".into(),
                reason: format!("point count must be between 2 and 20, got {n}"),
            });
        }
        let table = Pwl20::table(params);
        for w in table.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(BlockError::BadParameter {
                    template: "pwl20".into(),
                    param: "t".into(),
                    reason: format!("table times must strictly increase ({} then {})", w[0].0, w[1].0),
                });
            }
        }
        Ok(Vec::new())
    }

    fn next_break(&self, t_now: f64, params: &ResolvedParams) -> Option<f64> {
        Pwl20::table(params)
            .iter()
            .map(|(t, _)| *t)
            .find(|t| *t > t_now)
    }
}

/// Piecewise-linear interpolation with constant extension outside the
/// table range.
fn interp_clamped(table: &[(f64, f64)], x: f64) -> f64 {
    let first = table.first().expect("table is never empty");
    let last = table.last().expect("table is never empty");
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    for w in table.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x <= x1 {
            return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
        }
    }
    last.1
}

/// Segment slope of the table at `x` (zero outside the table range).
pub(crate) fn interp_slope(table: &[(f64, f64)], x: f64) -> f64 {
    let first = table.first().expect("table is never empty");
    let last = table.last().expect("table is never empty");
    if x <= first.0 || x >= last.0 {
        return 0.0;
    }
    for w in table.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x <= x1 {
            return (y1 - y0) / (x1 - x0);
        }
    }
    0.0
}
