//! Electric machine templates: the stationary-frame abc-to-dq transform
//! and a squirrel-cage induction machine model.

use crate::error::BlockError;

use super::{
    BlockTemplate, EvalContext, IntParam, JacobianKind, JacobianSink, RealParam, ResolvedParams,
    StrParam, TemplateDescriptor, TemplateKind, VarRef,
};

const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// `abc_to_dq`: stationary-frame, amplitude-invariant three-phase
/// transform:
///
/// ```text
/// q = (2/3) * (a - b/2 - c/2)
/// d = (c - b) / sqrt(3)
/// ```
///
/// The `convention` string parameter selects the d-axis sign:
/// `stationary` (default) as above, or `stationary_flip` with `d`
/// negated, for wiring against material that uses the opposite
/// orientation.
pub struct AbcToDq {
    desc: TemplateDescriptor,
}

impl AbcToDq {
    pub fn new() -> Self {
        AbcToDq {
            desc: TemplateDescriptor {
                name: "abc_to_dq",
                kind: TemplateKind::Evaluate,
                inputs: vec!["a", "b", "c"],
                outputs: vec!["q", "d"],
                aux_vars: vec![],
                real_params: vec![],
                integer_params: vec![],
                string_params: vec![StrParam {
                    name: "convention",
                    default: "stationary",
                }],
                startup_params: vec![],
                out_params: vec!["a", "b", "c", "q", "d"],
                n_f: 0,
                n_g: 2,
                f_var_map: vec![],
                g_var_map: vec![
                    vec![
                        VarRef::Output(0),
                        VarRef::Input(0),
                        VarRef::Input(1),
                        VarRef::Input(2),
                    ],
                    vec![VarRef::Output(1), VarRef::Input(1), VarRef::Input(2)],
                ],
                jacobian_kind: JacobianKind::Constant,
            },
        }
    }

    fn d_sign(params: &ResolvedParams) -> Result<f64, BlockError> {
        match params.string(0) {
            "stationary" => Ok(1.0),
            "stationary_flip" => Ok(-1.0),
            other => Err(BlockError::BadParameter {
                template: "abc_to_dq".into(),
                param: "convention".into(),
                reason: format!("unknown convention `{other}`"),
            }),
        }
    }
}

impl BlockTemplate for AbcToDq {
    fn descriptor(&self) -> &TemplateDescriptor {
        &self.desc
    }

    fn eval_outputs(&self, ctx: &EvalContext, out: &mut [f64]) -> Result<(), BlockError> {
        let (a, b, c) = (ctx.inputs[0], ctx.inputs[1], ctx.inputs[2]);
        let sign = AbcToDq::d_sign(ctx.params)?;
        out[0] = (2.0 / 3.0) * (a - 0.5 * b - 0.5 * c);
        out[1] = sign * (c - b) / SQRT_3;
        Ok(())
    }

    fn jacobian(&self, ctx: &EvalContext, sink: &mut JacobianSink) -> Result<(), BlockError> {
        let sign = AbcToDq::d_sign(ctx.params)?;
        sink.set(0, VarRef::Output(0), 1.0)?;
        sink.set(0, VarRef::Input(0), -2.0 / 3.0)?;
        sink.set(0, VarRef::Input(1), 1.0 / 3.0)?;
        sink.set(0, VarRef::Input(2), 1.0 / 3.0)?;
        sink.set(1, VarRef::Output(1), 1.0)?;
        sink.set(1, VarRef::Input(1), sign / SQRT_3)?;
        sink.set(1, VarRef::Input(2), -sign / SQRT_3)
    }

    fn one_time(&self, params: &ResolvedParams) -> Result<Vec<f64>, BlockError> {
        AbcToDq::d_sign(params)?;
        Ok(Vec::new())
    }
}

// Layout of the induction machine's one-time vector.
const OT_CA: usize = 3; //  lr / (lm * le)
const OT_CB: usize = 4; //  1 / le
const OT_CC: usize = 5; //  1 / lm
const OT_CD: usize = 6; //  lls/lm + 1
const OT_CE: usize = 7; //  (3/4) * poles * lm
const OT_CJ: usize = 8; //  1 / j
const OT_HP: usize = 9; //  poles / 2

/// `indmc1`: squirrel-cage induction machine in the stationary dq frame,
/// with stator/rotor flux linkages and mechanical speed as states.
///
/// States: `psids`, `psiqs`, `psidr`, `psiqr` (flux linkages, auxiliary
/// variables) and the output `wrm` (mechanical speed).  Inputs are the
/// stationary-frame stator voltages `vqs`, `vds` and load torque `tl`.
///
/// ```text
/// d(psids)/dt = vds - rs*ids
/// d(psiqs)/dt = vqs - rs*iqs
/// d(psidr)/dt = -(poles/2)*wrm*psiqr - rr*idr
/// d(psiqr)/dt = +(poles/2)*wrm*psidr - rr*iqr
/// d(wrm)/dt   = (tem - tl)/j
/// ```
///
/// with the algebraic chain
///
/// ```text
/// ids = (lr/(lm*le))*psids - psidr/le        (likewise iqs)
/// idr = psids/lm - (lls/lm + 1)*ids          (likewise iqr)
/// tem = (3/4)*poles*lm*(iqs*idr - ids*iqr)
/// ls = lls + lm,  lr = llr + lm,  le = ls*lr/lm - lm
/// ```
///
/// The derived inductances and coefficient reciprocals are computed once
/// per run; `lm = 0`, `j = 0` or a singular `le` are parameter errors.
pub struct InductionMachine {
    desc: TemplateDescriptor,
}

impl InductionMachine {
    pub fn new() -> Self {
        InductionMachine {
            desc: TemplateDescriptor {
                name: "indmc1",
                kind: TemplateKind::Integrate,
                inputs: vec!["vqs", "vds", "tl"],
                outputs: vec!["wrm"],
                aux_vars: vec!["psids", "psiqs", "psidr", "psiqr"],
                real_params: vec![
                    RealParam {
                        name: "rs",
                        default: 0.435,
                    },
                    RealParam {
                        name: "rr",
                        default: 0.816,
                    },
                    RealParam {
                        name: "lls",
                        default: 2.0e-3,
                    },
                    RealParam {
                        name: "llr",
                        default: 2.0e-3,
                    },
                    RealParam {
                        name: "lm",
                        default: 69.31e-3,
                    },
                    RealParam {
                        name: "j",
                        default: 0.089,
                    },
                ],
                integer_params: vec![IntParam {
                    name: "poles",
                    default: 4,
                }],
                string_params: vec![],
                startup_params: vec![
                    RealParam {
                        name: "psids_st",
                        default: 0.0,
                    },
                    RealParam {
                        name: "psiqs_st",
                        default: 0.0,
                    },
                    RealParam {
                        name: "psidr_st",
                        default: 0.0,
                    },
                    RealParam {
                        name: "psiqr_st",
                        default: 0.0,
                    },
                    RealParam {
                        name: "wrm_st",
                        default: 0.0,
                    },
                ],
                out_params: vec![
                    "tem", "wrm", "ids", "iqs", "idr", "iqr", "psids", "psiqs", "psidr", "psiqr",
                ],
                n_f: 5,
                n_g: 5,
                f_var_map: vec![
                    VarRef::Aux(0),
                    VarRef::Aux(1),
                    VarRef::Aux(2),
                    VarRef::Aux(3),
                    VarRef::Output(0),
                ],
                g_var_map: vec![
                    vec![VarRef::Input(1), VarRef::Aux(0), VarRef::Aux(2)],
                    vec![VarRef::Input(0), VarRef::Aux(1), VarRef::Aux(3)],
                    vec![
                        VarRef::Output(0),
                        VarRef::Aux(0),
                        VarRef::Aux(2),
                        VarRef::Aux(3),
                    ],
                    vec![
                        VarRef::Output(0),
                        VarRef::Aux(1),
                        VarRef::Aux(2),
                        VarRef::Aux(3),
                    ],
                    vec![
                        VarRef::Input(2),
                        VarRef::Aux(0),
                        VarRef::Aux(1),
                        VarRef::Aux(2),
                        VarRef::Aux(3),
                    ],
                ],
                jacobian_kind: JacobianKind::Variable,
            },
        }
    }

    /// Stator and rotor currents from the flux linkages.
    fn currents(ctx: &EvalContext) -> (f64, f64, f64, f64) {
        let ot = ctx.one_time;
        let (psids, psiqs, psidr, psiqr) = (ctx.aux[0], ctx.aux[1], ctx.aux[2], ctx.aux[3]);
        let ids = ot[OT_CA] * psids - ot[OT_CB] * psidr;
        let iqs = ot[OT_CA] * psiqs - ot[OT_CB] * psiqr;
        let idr = ot[OT_CC] * psids - ot[OT_CD] * ids;
        let iqr = ot[OT_CC] * psiqs - ot[OT_CD] * iqs;
        (ids, iqs, idr, iqr)
    }
}

impl BlockTemplate for InductionMachine {
    fn descriptor(&self) -> &TemplateDescriptor {
        &self.desc
    }

    fn derivatives(&self, ctx: &EvalContext, f: &mut [f64]) -> Result<(), BlockError> {
        let ot = ctx.one_time;
        let (vqs, vds, tl) = (ctx.inputs[0], ctx.inputs[1], ctx.inputs[2]);
        let (rs, rr) = (ctx.params.real(0), ctx.params.real(1));
        let wrm = ctx.outputs[0];
        let (psidr, psiqr) = (ctx.aux[2], ctx.aux[3]);
        let (ids, iqs, idr, iqr) = InductionMachine::currents(ctx);
        let tem = ot[OT_CE] * (iqs * idr - ids * iqr);
        f[0] = vds - rs * ids;
        f[1] = vqs - rs * iqs;
        f[2] = -ot[OT_HP] * wrm * psiqr - rr * idr;
        f[3] = ot[OT_HP] * wrm * psidr - rr * iqr;
        f[4] = ot[OT_CJ] * (tem - tl);
        Ok(())
    }

    fn jacobian(&self, ctx: &EvalContext, sink: &mut JacobianSink) -> Result<(), BlockError> {
        let ot = ctx.one_time;
        let (rs, rr) = (ctx.params.real(0), ctx.params.real(1));
        let wrm = ctx.outputs[0];
        let (psidr, psiqr) = (ctx.aux[2], ctx.aux[3]);
        let (ids, iqs, idr, iqr) = InductionMachine::currents(ctx);
        // Current sensitivities to the flux linkages (d and q chains are
        // identical by symmetry).
        let dis_dpsis = ot[OT_CA]; //  d(ids)/d(psids) = d(iqs)/d(psiqs)
        let dis_dpsir = -ot[OT_CB]; // d(ids)/d(psidr) = d(iqs)/d(psiqr)
        let dir_dpsis = ot[OT_CC] - ot[OT_CD] * dis_dpsis; // d(idr)/d(psids)
        let dir_dpsir = -ot[OT_CD] * dis_dpsir; //            d(idr)/d(psidr)

        // Stator flux rows.
        sink.set(0, VarRef::Input(1), 1.0)?;
        sink.set(0, VarRef::Aux(0), -rs * dis_dpsis)?;
        sink.set(0, VarRef::Aux(2), -rs * dis_dpsir)?;
        sink.set(1, VarRef::Input(0), 1.0)?;
        sink.set(1, VarRef::Aux(1), -rs * dis_dpsis)?;
        sink.set(1, VarRef::Aux(3), -rs * dis_dpsir)?;

        // Rotor flux rows.
        sink.set(2, VarRef::Output(0), -ot[OT_HP] * psiqr)?;
        sink.set(2, VarRef::Aux(3), -ot[OT_HP] * wrm)?;
        sink.set(2, VarRef::Aux(0), -rr * dir_dpsis)?;
        sink.set(2, VarRef::Aux(2), -rr * dir_dpsir)?;
        sink.set(3, VarRef::Output(0), ot[OT_HP] * psidr)?;
        sink.set(3, VarRef::Aux(2), ot[OT_HP] * wrm)?;
        sink.set(3, VarRef::Aux(1), -rr * dir_dpsis)?;
        sink.set(3, VarRef::Aux(3), -rr * dir_dpsir)?;

        // Speed row: product rule through the torque expression.
        let ce = ot[OT_CE];
        let dtem_dpsids = ce * (iqs * dir_dpsis - dis_dpsis * iqr);
        let dtem_dpsidr = ce * (iqs * dir_dpsir - dis_dpsir * iqr);
        let dtem_dpsiqs = ce * (dis_dpsis * idr - ids * dir_dpsis);
        let dtem_dpsiqr = ce * (dis_dpsir * idr - ids * dir_dpsir);
        sink.set(4, VarRef::Input(2), -ot[OT_CJ])?;
        sink.set(4, VarRef::Aux(0), ot[OT_CJ] * dtem_dpsids)?;
        sink.set(4, VarRef::Aux(1), ot[OT_CJ] * dtem_dpsiqs)?;
        sink.set(4, VarRef::Aux(2), ot[OT_CJ] * dtem_dpsidr)?;
        sink.set(4, VarRef::Aux(3), ot[OT_CJ] * dtem_dpsiqr)
    }

    fn one_time(&self, params: &ResolvedParams) -> Result<Vec<f64>, BlockError> {
        let bad = |param: &str, reason: &str| {
            Err(BlockError::BadParameter {
                template: "indmc1".into(),
                param: param.into(),
                reason: reason.into(),
            })
        };
        let (lls, llr, lm, j) = (
            params.real(2),
            params.real(3),
            params.real(4),
            params.real(5),
        );
        let poles = params.integer(0);
        if lm == 0.0 {
            return bad("lm", "magnetizing inductance must be nonzero");
        }
        if j == 0.0 {
            return bad("j", "inertia must be nonzero");
        }
        if poles < 2 {
            return bad("poles", "pole count must be at least 2");
        }
        let ls = lls + lm;
        let lr = llr + lm;
        let le = ls * lr / lm - lm;
        if le == 0.0 {
            return bad("lm", "derived inductance ls*lr/lm - lm is singular");
        }
        let p = poles as f64;
        Ok(vec![
            ls,
            lr,
            le,
            lr / (lm * le),
            1.0 / le,
            1.0 / lm,
            lls / lm + 1.0,
            0.75 * p * lm,
            1.0 / j,
            0.5 * p,
        ])
    }

    fn output_params(&self, ctx: &EvalContext, out: &mut [f64]) -> Result<(), BlockError> {
        let (ids, iqs, idr, iqr) = InductionMachine::currents(ctx);
        let tem = ctx.one_time[OT_CE] * (iqs * idr - ids * iqr);
        out[0] = tem;
        out[1] = ctx.outputs[0];
        out[2] = ids;
        out[3] = iqs;
        out[4] = idr;
        out[5] = iqr;
        out[6] = ctx.aux[0];
        out[7] = ctx.aux[1];
        out[8] = ctx.aux[2];
        out[9] = ctx.aux[3];
        Ok(())
    }
}
