//! The comparator: a two-level switch with crossing support.

use crate::error::BlockError;

use super::{
    BlockTemplate, EvalContext, ExtrapolationMode, JacobianKind, JacobianSink, RealParam,
    ResolvedParams, StrParam, TemplateDescriptor, TemplateKind, VarRef,
};

/// `comparator`: `y = y_high` when `x1 > x2`, else `y_low`.  No
/// hysteresis: equality selects `y_low`.
///
/// The block is crossing-aware: it exposes `u = x1 - x2` so the event
/// machinery can predict when the switch will flip and place time points
/// tightly around the flip.  The `extrapolation` string parameter selects
/// the predictor (`linear` or `quadratic`) per instance.
pub struct Comparator {
    desc: TemplateDescriptor,
}

impl Comparator {
    pub fn new() -> Self {
        Comparator {
            desc: TemplateDescriptor {
                name: "comparator",
                kind: TemplateKind::Evaluate,
                inputs: vec!["x1", "x2"],
                outputs: vec!["y"],
                aux_vars: vec![],
                real_params: vec![
                    RealParam {
                        name: "y_high",
                        default: 1.0,
                    },
                    RealParam {
                        name: "y_low",
                        default: -1.0,
                    },
                ],
                integer_params: vec![],
                string_params: vec![StrParam {
                    name: "extrapolation",
                    default: "linear",
                }],
                startup_params: vec![],
                out_params: vec!["x1", "x2", "y"],
                n_f: 0,
                n_g: 1,
                f_var_map: vec![],
                g_var_map: vec![vec![
                    VarRef::Output(0),
                    VarRef::Input(0),
                    VarRef::Input(1),
                ]],
                jacobian_kind: JacobianKind::Constant,
            },
        }
    }

    /// The instance's extrapolation mode parameter.
    pub fn extrapolation_mode(params: &ResolvedParams) -> Result<ExtrapolationMode, BlockError> {
        ExtrapolationMode::from_name(params.string(0)).ok_or_else(|| BlockError::BadParameter {
            template: "comparator".into(),
            param: "extrapolation".into(),
            reason: format!("unknown mode `{}` (expected linear or quadratic)", params.string(0)),
        })
    }
}

impl BlockTemplate for Comparator {
    fn descriptor(&self) -> &TemplateDescriptor {
        &self.desc
    }

    fn eval_outputs(&self, ctx: &EvalContext, out: &mut [f64]) -> Result<(), BlockError> {
        out[0] = if ctx.inputs[0] > ctx.inputs[1] {
            ctx.params.real(0)
        } else {
            ctx.params.real(1)
        };
        Ok(())
    }

    /// The residual is `y - (selected level)`; within either branch the
    /// level does not depend on the inputs, so the input derivatives are
    /// identically zero.
    fn jacobian(&self, _ctx: &EvalContext, sink: &mut JacobianSink) -> Result<(), BlockError> {
        sink.set(0, VarRef::Output(0), 1.0)?;
        sink.set(0, VarRef::Input(0), 0.0)?;
        sink.set(0, VarRef::Input(1), 0.0)
    }

    fn one_time(&self, params: &ResolvedParams) -> Result<Vec<f64>, BlockError> {
        Comparator::extrapolation_mode(params)?;
        Ok(Vec::new())
    }

    fn crossing_signal(&self, inputs: &[f64], _params: &ResolvedParams) -> Option<f64> {
        Some(inputs[0] - inputs[1])
    }
}
