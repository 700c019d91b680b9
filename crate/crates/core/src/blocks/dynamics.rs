//! Single-state dynamic templates: the integrator and the first-order
//! lag.
//!
//! These are integrate-kind: the output is a state variable with its own
//! ODE.  `derivatives` returns the right-hand side for explicit methods;
//! implicit methods receive the same value through `residuals` and wrap
//! it in the chosen discretization.

use crate::error::BlockError;

use super::{
    BlockTemplate, EvalContext, JacobianKind, JacobianSink, RealParam, ResolvedParams,
    TemplateDescriptor, TemplateKind, VarRef,
};

/// `integrator`: `dy/dt = k*x`, starting from `y_st`.
pub struct Integrator {
    desc: TemplateDescriptor,
}

impl Integrator {
    pub fn new() -> Self {
        Integrator {
            desc: TemplateDescriptor {
                name: "integrator",
                kind: TemplateKind::Integrate,
                inputs: vec!["x"],
                outputs: vec!["y"],
                aux_vars: vec![],
                real_params: vec![RealParam {
                    name: "k",
                    default: 1.0,
                }],
                integer_params: vec![],
                string_params: vec![],
                startup_params: vec![RealParam {
                    name: "y_st",
                    default: 0.0,
                }],
                out_params: vec!["x", "y"],
                n_f: 1,
                n_g: 1,
                f_var_map: vec![VarRef::Output(0)],
                g_var_map: vec![vec![VarRef::Input(0)]],
                jacobian_kind: JacobianKind::Constant,
            },
        }
    }
}

impl BlockTemplate for Integrator {
    fn descriptor(&self) -> &TemplateDescriptor {
        &self.desc
    }

    fn derivatives(&self, ctx: &EvalContext, f: &mut [f64]) -> Result<(), BlockError> {
        f[0] = ctx.params.real(0) * ctx.inputs[0];
        Ok(())
    }

    fn jacobian(&self, ctx: &EvalContext, sink: &mut JacobianSink) -> Result<(), BlockError> {
        sink.set(0, VarRef::Input(0), ctx.params.real(0))
    }
}

/// `lag_1`: first-order lag `dy/dt = (x - y)/tr`, starting from `y_st`.
///
/// The step response from rest reaches `1 - 1/e` of the input at
/// `t = tr`.
pub struct Lag1 {
    desc: TemplateDescriptor,
}

impl Lag1 {
    pub fn new() -> Self {
        Lag1 {
            desc: TemplateDescriptor {
                name: "lag_1",
                kind: TemplateKind::Integrate,
                inputs: vec!["x"],
                outputs: vec!["y"],
                aux_vars: vec![],
                real_params: vec![RealParam {
                    name: "tr",
                    default: 1.0,
                }],
                integer_params: vec![],
                string_params: vec![],
                startup_params: vec![RealParam {
                    name: "y_st",
                    default: 0.0,
                }],
                out_params: vec!["x", "y"],
                n_f: 1,
                n_g: 1,
                f_var_map: vec![VarRef::Output(0)],
                g_var_map: vec![vec![VarRef::Input(0), VarRef::Output(0)]],
                jacobian_kind: JacobianKind::Constant,
            },
        }
    }
}

impl BlockTemplate for Lag1 {
    fn descriptor(&self) -> &TemplateDescriptor {
        &self.desc
    }

    fn derivatives(&self, ctx: &EvalContext, f: &mut [f64]) -> Result<(), BlockError> {
        f[0] = (ctx.inputs[0] - ctx.outputs[0]) / ctx.params.real(0);
        Ok(())
    }

    fn jacobian(&self, ctx: &EvalContext, sink: &mut JacobianSink) -> Result<(), BlockError> {
        let inv_tr = 1.0 / ctx.params.real(0);
        sink.set(0, VarRef::Input(0), inv_tr)?;
        sink.set(0, VarRef::Output(0), -inv_tr)
    }

    fn one_time(&self, params: &ResolvedParams) -> Result<Vec<f64>, BlockError> {
        if params.real(0) <= 0.0 {
            return Err(BlockError::BadParameter {
                template: "lag_1".into(),
                param: "tr".into(),
                reason: "time constant must be positive".into(),
            });
        }
        Ok(Vec::new())
    }
}
