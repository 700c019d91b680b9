//! Algebraic function templates: weighted sums, products, gains,
//! trigonometric maps and the static piecewise-linear map.
//!
//! All of these are evaluate-kind: the output is an instantaneous
//! function of the inputs.  Implicit methods see them through the
//! residual `g = y - f(inputs)` whose analytic partial derivatives each
//! template provides.

use crate::error::BlockError;

use super::sources::interp_slope;
use super::{
    BlockTemplate, EvalContext, JacobianKind, JacobianSink, RealParam, ResolvedParams,
    IntParam, TemplateDescriptor, TemplateKind, VarRef,
};

fn map_descriptor(
    name: &'static str,
    inputs: Vec<&'static str>,
    real_params: Vec<RealParam>,
    integer_params: Vec<IntParam>,
    jacobian_kind: JacobianKind,
) -> TemplateDescriptor {
    let mut g_vars = vec![VarRef::Output(0)];
    g_vars.extend((0..inputs.len()).map(VarRef::Input));
    let mut out_params = inputs.clone();
    out_params.push("y");
    TemplateDescriptor {
        name,
        kind: TemplateKind::Evaluate,
        inputs,
        outputs: vec!["y"],
        aux_vars: vec![],
        real_params,
        integer_params,
        string_params: vec![],
        startup_params: vec![],
        out_params,
        n_f: 0,
        n_g: 1,
        f_var_map: vec![],
        g_var_map: vec![g_vars],
        jacobian_kind,
    }
}

/// `sum_2`: `y = k1*x1 + k2*x2`.
pub struct Sum2 {
    desc: TemplateDescriptor,
}

impl Sum2 {
    pub fn new() -> Self {
        Sum2 {
            desc: map_descriptor(
                "sum_2",
                vec!["x1", "x2"],
                vec![
                    RealParam {
                        name: "k1",
                        default: 1.0,
                    },
                    RealParam {
                        name: "k2",
                        default: 1.0,
                    },
                ],
                vec![],
                JacobianKind::Constant,
            ),
        }
    }
}

impl BlockTemplate for Sum2 {
    fn descriptor(&self) -> &TemplateDescriptor {
        &self.desc
    }

    fn eval_outputs(&self, ctx: &EvalContext, out: &mut [f64]) -> Result<(), BlockError> {
        out[0] = ctx.params.real(0) * ctx.inputs[0] + ctx.params.real(1) * ctx.inputs[1];
        Ok(())
    }

    fn jacobian(&self, ctx: &EvalContext, sink: &mut JacobianSink) -> Result<(), BlockError> {
        sink.set(0, VarRef::Output(0), 1.0)?;
        sink.set(0, VarRef::Input(0), -ctx.params.real(0))?;
        sink.set(0, VarRef::Input(1), -ctx.params.real(1))
    }
}

/// `sum_3`: `y = k1*x1 + k2*x2 + k3*x3`.
pub struct Sum3 {
    desc: TemplateDescriptor,
}

impl Sum3 {
    pub fn new() -> Self {
        Sum3 {
            desc: map_descriptor(
                "sum_3",
                vec!["x1", "x2", "x3"],
                vec![
                    RealParam {
                        name: "k1",
                        default: 1.0,
                    },
                    RealParam {
                        name: "k2",
                        default: 1.0,
                    },
                    RealParam {
                        name: "k3",
                        default: 1.0,
                    },
                ],
                vec![],
                JacobianKind::Constant,
            ),
        }
    }
}

impl BlockTemplate for Sum3 {
    fn descriptor(&self) -> &TemplateDescriptor {
        &self.desc
    }

    fn eval_outputs(&self, ctx: &EvalContext, out: &mut [f64]) -> Result<(), BlockError> {
        out[0] = ctx.params.real(0) * ctx.inputs[0]
            + ctx.params.real(1) * ctx.inputs[1]
            + ctx.params.real(2) * ctx.inputs[2];
        Ok(())
    }

    fn jacobian(&self, ctx: &EvalContext, sink: &mut JacobianSink) -> Result<(), BlockError> {
        sink.set(0, VarRef::Output(0), 1.0)?;
        for i in 0..3 {
            sink.set(0, VarRef::Input(i), -ctx.params.real(i))?;
        }
        Ok(())
    }
}

/// `gain`: `y = k*x`.
pub struct Gain {
    desc: TemplateDescriptor,
}

impl Gain {
    pub fn new() -> Self {
        Gain {
            desc: map_descriptor(
                "gain",
                vec!["x"],
                vec![RealParam {
                    name: "k",
                    default: 1.0,
                }],
                vec![],
                JacobianKind::Constant,
            ),
        }
    }
}

impl BlockTemplate for Gain {
    fn descriptor(&self) -> &TemplateDescriptor {
        &self.desc
    }

    fn eval_outputs(&self, ctx: &EvalContext, out: &mut [f64]) -> Result<(), BlockError> {
        out[0] = ctx.params.real(0) * ctx.inputs[0];
        Ok(())
    }

    fn jacobian(&self, ctx: &EvalContext, sink: &mut JacobianSink) -> Result<(), BlockError> {
        sink.set(0, VarRef::Output(0), 1.0)?;
        sink.set(0, VarRef::Input(0), -ctx.params.real(0))
    }
}

/// `mult_2`: `y = k*x1*x2`.
pub struct Mult2 {
    desc: TemplateDescriptor,
}

impl Mult2 {
    pub fn new() -> Self {
        Mult2 {
            desc: map_descriptor(
                "mult_2",
                vec!["x1", "x2"],
                vec![RealParam {
                    name: "k",
                    default: 1.0,
                }],
                vec![],
                JacobianKind::Variable,
            ),
        }
    }
}

impl BlockTemplate for Mult2 {
    fn descriptor(&self) -> &TemplateDescriptor {
        &self.desc
    }

    fn eval_outputs(&self, ctx: &EvalContext, out: &mut [f64]) -> Result<(), BlockError> {
        out[0] = ctx.params.real(0) * ctx.inputs[0] * ctx.inputs[1];
        Ok(())
    }

    fn jacobian(&self, ctx: &EvalContext, sink: &mut JacobianSink) -> Result<(), BlockError> {
        let k = ctx.params.real(0);
        sink.set(0, VarRef::Output(0), 1.0)?;
        sink.set(0, VarRef::Input(0), -k * ctx.inputs[1])?;
        sink.set(0, VarRef::Input(1), -k * ctx.inputs[0])
    }
}

/// `sin_fn`: `y = a*sin(k*x + phi)`.
pub struct SinFn {
    desc: TemplateDescriptor,
}

fn trig_params() -> Vec<RealParam> {
    vec![
        RealParam {
            name: "a",
            default: 1.0,
        },
        RealParam {
            name: "k",
            default: 1.0,
        },
        RealParam {
            name: "phi",
            default: 0.0,
        },
    ]
}

impl SinFn {
    pub fn new() -> Self {
        SinFn {
            desc: map_descriptor(
                "sin_fn",
                vec!["x"],
                trig_params(),
                vec![],
                JacobianKind::Variable,
            ),
        }
    }
}

impl BlockTemplate for SinFn {
    fn descriptor(&self) -> &TemplateDescriptor {
        &self.desc
    }

    fn eval_outputs(&self, ctx: &EvalContext, out: &mut [f64]) -> Result<(), BlockError> {
        let (a, k, phi) = (ctx.params.real(0), ctx.params.real(1), ctx.params.real(2));
        out[0] = a * (k * ctx.inputs[0] + phi).sin();
        Ok(())
    }

    fn jacobian(&self, ctx: &EvalContext, sink: &mut JacobianSink) -> Result<(), BlockError> {
        let (a, k, phi) = (ctx.params.real(0), ctx.params.real(1), ctx.params.real(2));
        sink.set(0, VarRef::Output(0), 1.0)?;
        sink.set(0, VarRef::Input(0), -a * k * (k * ctx.inputs[0] + phi).cos())
    }
}

/// `cos_fn`: `y = a*cos(k*x + phi)`.
pub struct CosFn {
    desc: TemplateDescriptor,
}

impl CosFn {
    pub fn new() -> Self {
        CosFn {
            desc: map_descriptor(
                "cos_fn",
                vec!["x"],
                trig_params(),
                vec![],
                JacobianKind::Variable,
            ),
        }
    }
}

impl BlockTemplate for CosFn {
    fn descriptor(&self) -> &TemplateDescriptor {
        &self.desc
    }

    fn eval_outputs(&self, ctx: &EvalContext, out: &mut [f64]) -> Result<(), BlockError> {
        let (a, k, phi) = (ctx.params.real(0), ctx.params.real(1), ctx.params.real(2));
        out[0] = a * (k * ctx.inputs[0] + phi).cos();
        Ok(())
    }

    fn jacobian(&self, ctx: &EvalContext, sink: &mut JacobianSink) -> Result<(), BlockError> {
        let (a, k, phi) = (ctx.params.real(0), ctx.params.real(1), ctx.params.real(2));
        sink.set(0, VarRef::Output(0), 1.0)?;
        sink.set(0, VarRef::Input(0), a * k * (k * ctx.inputs[0] + phi).sin())
    }
}

const PWL10_X_NAMES: [&str; 10] =
    ["x1", "x2", "x3", "x4", "x5", "x6", "x7", "x8", "x9", "x10"];
const PWL10_Y_NAMES: [&str; 10] =
    ["y1", "y2", "y3", "y4", "y5", "y6", "y7", "y8", "y9", "y10"];

/// `pwl10_xy`: static piecewise-linear map `y = f(x)` through up to 10
/// `(x_k, y_k)` points.  Outside the table range the output holds the
/// nearest end value.
pub struct Pwl10Xy {
    desc: TemplateDescriptor,
}

impl Pwl10Xy {
    pub fn new() -> Self {
        let mut real_params = Vec::with_capacity(20);
        for k in 0..10 {
            real_params.push(RealParam {
                name: PWL10_X_NAMES[k],
                default: 0.0,
            });
            real_params.push(RealParam {
                name: PWL10_Y_NAMES[k],
                default: 0.0,
            });
        }
        Pwl10Xy {
            desc: map_descriptor(
                "pwl10_xy",
                vec!["x"],
                real_params,
                vec![IntParam {
                    name: "n",
                    default: 2,
                }],
                JacobianKind::Variable,
            ),
        }
    }

    fn table(params: &ResolvedParams) -> Vec<(f64, f64)> {
        let n = params.integer(0).clamp(0, 10) as usize;
        (0..n)
            .map(|k| (params.real(2 * k), params.real(2 * k + 1)))
            .collect()
    }
}

impl BlockTemplate for Pwl10Xy {
    fn descriptor(&self) -> &TemplateDescriptor {
        &self.desc
    }

    fn eval_outputs(&self, ctx: &EvalContext, out: &mut [f64]) -> Result<(), BlockError> {
        let table = Pwl10Xy::table(ctx.params);
        let x = ctx.inputs[0];
        let first = table[0];
        let last = *table.last().unwrap();
        out[0] = if x <= first.0 {
            first.1
        } else if x >= last.0 {
            last.1
        } else {
            let mut y = last.1;
            for w in table.windows(2) {
                if x <= w[1].0 {
                    y = w[0].1 + (w[1].1 - w[0].1) * (x - w[0].0) / (w[1].0 - w[0].0);
                    break;
                }
            }
            y
        };
        Ok(())
    }

    fn jacobian(&self, ctx: &EvalContext, sink: &mut JacobianSink) -> Result<(), BlockError> {
        let table = Pwl10Xy::table(ctx.params);
        sink.set(0, VarRef::Output(0), 1.0)?;
        sink.set(0, VarRef::Input(0), -interp_slope(&table, ctx.inputs[0]))
    }

    fn one_time(&self, params: &ResolvedParams) -> Result<Vec<f64>, BlockError> {
        let n = params.integer(0);
        if !(2..=10).contains(&n) {
            return Err(BlockError::BadParameter {
                template: "pwl10_xy".into(),
                param: "n".into(),
                reason: format!("point count must be between 2 and 10, got {n}"),
            });
        }
        let table = Pwl10Xy::table(params);
        for w in table.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(BlockError::BadParameter {
                    template: "pwl10_xy".into(),
                    param: "x".into(),
                    reason: format!(
                        "table abscissae must strictly increase ({} then {})",
                        w[0].0, w[1].0
                    ),
                });
            }
        }
        Ok(Vec::new())
    }
}

#[cfg(test)]
mod tests {
    use super::super::{BlockTemplate, EvalContext, JacobianSink, ResolvedParams, VarRef};
    use super::*;

    fn ctx_eval(
        template: &dyn BlockTemplate,
        params: &ResolvedParams,
        inputs: &[f64],
        output: f64,
    ) -> (f64, f64) {
        let outputs = [output];
        let ctx = EvalContext {
            t: 0.0,
            inputs,
            outputs: &outputs,
            aux: &[],
            params,
            one_time: &[],
        };
        let mut out = [0.0];
        template.eval_outputs(&ctx, &mut out).unwrap();
        let mut g = [0.0];
        template.residuals(&ctx, &mut g).unwrap();
        (out[0], g[0])
    }

    #[test]
    fn sum_2_value_and_residual() {
        let b = Sum2::new();
        let p = ResolvedParams::defaults(b.descriptor());
        // Unit weights: y = x1 + x2; a stale output of 4 leaves residual -1.
        let (y, g) = ctx_eval(&b, &p, &[2.0, 3.0], 4.0);
        assert_eq!(y, 5.0);
        assert_eq!(g, -1.0);
    }

    #[test]
    fn sum_2_jacobian_entries() {
        let b = Sum2::new();
        let mut p = ResolvedParams::defaults(b.descriptor());
        p.reals[0] = 2.0;
        p.reals[1] = -0.5;
        let ctx = EvalContext {
            t: 0.0,
            inputs: &[1.0, 1.0],
            outputs: &[0.0],
            aux: &[],
            params: &p,
            one_time: &[],
        };
        let mut sink = JacobianSink::new(b.descriptor());
        b.jacobian(&ctx, &mut sink).unwrap();
        assert_eq!(
            sink.entries(),
            &[
                (0, VarRef::Output(0), 1.0),
                (0, VarRef::Input(0), -2.0),
                (0, VarRef::Input(1), 0.5),
            ]
        );
    }

    #[test]
    fn sum_3_and_gain() {
        let b = Sum3::new();
        let mut p = ResolvedParams::defaults(b.descriptor());
        p.reals[2] = -1.0;
        let (y, _) = ctx_eval(&b, &p, &[1.0, 2.0, 3.0], 0.0);
        assert_eq!(y, 0.0);

        let g = Gain::new();
        let mut p = ResolvedParams::defaults(g.descriptor());
        p.reals[0] = -2.5;
        let (y, _) = ctx_eval(&g, &p, &[4.0], 0.0);
        assert_eq!(y, -10.0);
    }

    #[test]
    fn mult_2_value_and_derivatives() {
        let b = Mult2::new();
        let mut p = ResolvedParams::defaults(b.descriptor());
        p.reals[0] = 3.0;
        let (y, _) = ctx_eval(&b, &p, &[2.0, -4.0], 0.0);
        assert_eq!(y, -24.0);
        let ctx = EvalContext {
            t: 0.0,
            inputs: &[2.0, -4.0],
            outputs: &[0.0],
            aux: &[],
            params: &p,
            one_time: &[],
        };
        let mut sink = JacobianSink::new(b.descriptor());
        b.jacobian(&ctx, &mut sink).unwrap();
        assert_eq!(
            sink.entries(),
            &[
                (0, VarRef::Output(0), 1.0),
                (0, VarRef::Input(0), 12.0),  // -k*x2
                (0, VarRef::Input(1), -6.0), // -k*x1
            ]
        );
    }

    #[test]
    fn trig_maps() {
        let s = SinFn::new();
        let p = ResolvedParams::defaults(s.descriptor());
        let (y, _) = ctx_eval(&s, &p, &[std::f64::consts::FRAC_PI_2], 0.0);
        assert!((y - 1.0).abs() < 1e-12);

        let c = CosFn::new();
        let mut p = ResolvedParams::defaults(c.descriptor());
        p.reals[2] = std::f64::consts::FRAC_PI_2; // phi: cos(x + pi/2) = -sin x
        let (y, _) = ctx_eval(&c, &p, &[0.25], 0.0);
        assert!((y + 0.25f64.sin()).abs() < 1e-12);
    }

    fn pwl10_with_points(points: &[(f64, f64)]) -> (Pwl10Xy, ResolvedParams) {
        let b = Pwl10Xy::new();
        let mut p = ResolvedParams::defaults(b.descriptor());
        p.integers[0] = points.len() as i64;
        for (k, (x, y)) in points.iter().enumerate() {
            p.reals[2 * k] = *x;
            p.reals[2 * k + 1] = *y;
        }
        (b, p)
    }

    #[test]
    fn pwl10_maps_and_clamps() {
        let (b, p) = pwl10_with_points(&[(0.0, 0.0), (1.0, 2.0), (2.0, 3.0)]);
        assert_eq!(ctx_eval(&b, &p, &[0.5], 0.0).0, 1.0);
        assert_eq!(ctx_eval(&b, &p, &[1.5], 0.0).0, 2.5);
        assert_eq!(ctx_eval(&b, &p, &[-1.0], 0.0).0, 0.0);
        assert_eq!(ctx_eval(&b, &p, &[5.0], 0.0).0, 3.0);
    }

    #[test]
    fn pwl10_slope_follows_segment() {
        let (b, p) = pwl10_with_points(&[(0.0, 0.0), (1.0, 2.0), (2.0, 3.0)]);
        let ctx = EvalContext {
            t: 0.0,
            inputs: &[0.5],
            outputs: &[0.0],
            aux: &[],
            params: &p,
            one_time: &[],
        };
        let mut sink = JacobianSink::new(b.descriptor());
        b.jacobian(&ctx, &mut sink).unwrap();
        assert_eq!(sink.entries()[1], (0, VarRef::Input(0), -2.0));
        // Outside the table the map is flat.
        let ctx = EvalContext {
            t: 0.0,
            inputs: &[9.0],
            outputs: &[0.0],
            aux: &[],
            params: &p,
            one_time: &[],
        };
        let mut sink = JacobianSink::new(b.descriptor());
        b.jacobian(&ctx, &mut sink).unwrap();
        assert_eq!(sink.entries()[1], (0, VarRef::Input(0), -0.0));
    }

    #[test]
    fn pwl10_rejects_bad_tables() {
        let (b, p) = pwl10_with_points(&[(1.0, 0.0), (0.5, 1.0)]);
        assert!(b.one_time(&p).is_err());
    }
}
