//! System assembly: turns a flat netlist into an executable equation
//! system.
//!
//! Every net and every block-internal (aux) variable gets a dense index.
//! Each variable is *driven* by exactly one block residual, and the
//! residual's global equation row is the variable's own index, so the
//! system is square by construction:
//!
//! * an evaluate-kind block's residual `g_i = y_i - f_i(x)` drives its
//!   i-th output net (an algebraic variable);
//! * an integrate-kind block's i-th right-hand side drives the state
//!   variable named by its `f_var_map` (the time discretization is
//!   applied here, not in the template).
//!
//! Explicit methods use [`SystemGraph::rhs`], which evaluates algebraic
//! blocks in topological order and then collects state derivatives.
//! Implicit methods use [`SystemGraph::residual`] and
//! [`SystemGraph::jacobian`] with a [`Scheme`] describing the time
//! discretization of the state rows.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::blocks::{
    BlockTemplate, EvalContext, JacobianKind, JacobianSink, ResolvedParams, TemplateKind,
    TemplateRegistry, VarRef,
};
use crate::error::AssemblyError;
use crate::netlist::FlatNetlist;

/// All signal values at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub t: f64,
    /// Dense values over the graph's variable table.
    pub values: Vec<f64>,
}

impl StateVector {
    pub fn new(t: f64, n: usize) -> Self {
        StateVector {
            t,
            values: vec![0.0; n],
        }
    }
}

/// Time-discretization applied to state equations when assembling the
/// implicit residual and Jacobian.
#[derive(Clone, Copy)]
pub enum Scheme<'a> {
    /// `r = y_new - y_old - h*g(x_new)`
    BackwardEuler,
    /// `r = y_new - y_old - (h/2)*(g(x_new) + g(x_old))`
    Trapezoidal,
    /// Two-step backward difference over the unequal-step points
    /// `x_oldest` at `t_n`, `x_old` at `t_n + gamma*h`, `x_new` at
    /// `t_n + h`. Coefficients come from differentiating the quadratic
    /// through the three points at the newest time.
    Bdf2 {
        x_oldest: &'a StateVector,
        gamma: f64,
    },
    /// Consistent initialization: state rows pin `x_new` to `x_old`,
    /// algebraic rows are the raw residuals. Solving this yields
    /// algebraic values consistent with the startup states even in the
    /// presence of algebraic loops.
    Startup,
}

impl<'a> Scheme<'a> {
    fn requires_positive_step(&self) -> bool {
        !matches!(self, Scheme::Startup)
    }

    /// Multiplier applied to `dg/dx` on state rows.
    fn state_scale(&self, h: f64) -> f64 {
        match self {
            Scheme::BackwardEuler => h,
            Scheme::Trapezoidal => h / 2.0,
            Scheme::Bdf2 { gamma, .. } => (1.0 - gamma) * h / (2.0 - gamma),
            Scheme::Startup => 0.0,
        }
    }
}

/// One block instance bound into the global variable table.
pub struct BlockBinding {
    pub name: String,
    pub template: Arc<dyn BlockTemplate>,
    pub params: ResolvedParams,
    /// Values computed once per run by [`BlockTemplate::one_time`].
    pub one_time: Vec<f64>,
    /// Global variable index per input port.
    pub input_vars: Vec<usize>,
    /// Global variable index per output port.
    pub output_vars: Vec<usize>,
    /// Global variable index per aux variable.
    pub aux_vars: Vec<usize>,
    /// Global equation row for each local residual; for state rows this
    /// equals the index of the state variable the row governs.
    pub residual_rows: Vec<usize>,
    pub is_integrate: bool,
    /// Jacobian entries cached at build time for templates whose
    /// entries do not depend on signal values.
    cached_jacobian: Option<Vec<(usize, VarRef, f64)>>,
}

impl BlockBinding {
    /// Resolves a template-local variable reference to its global index.
    pub fn var_of(&self, var: VarRef) -> usize {
        match var {
            VarRef::Input(i) => self.input_vars[i],
            VarRef::Output(i) => self.output_vars[i],
            VarRef::Aux(i) => self.aux_vars[i],
        }
    }
}

struct VarInfo {
    name: String,
    is_state: bool,
}

/// The assembled system: variable table, block bindings, and the
/// evaluation order for explicit methods. Immutable after build.
pub struct SystemGraph {
    vars: Vec<VarInfo>,
    var_index: BTreeMap<String, usize>,
    blocks: Vec<BlockBinding>,
    block_index: BTreeMap<String, usize>,
    state_vars: Vec<usize>,
    algebraic_vars: Vec<usize>,
    /// Indices into `blocks` of evaluate-kind instances in dependency
    /// order, or a description of the algebraic loop that prevents one.
    eval_order: Result<Vec<usize>, String>,
    /// For each equation row: (block index, local residual index).
    row_owner: Vec<(usize, usize)>,
}

impl std::fmt::Debug for SystemGraph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SystemGraph")
            .field("n_vars", &self.vars.len())
            .field("n_states", &self.state_vars.len())
            .field("n_blocks", &self.blocks.len())
            .finish()
    }
}

/// Working buffers for one block evaluation.
struct Gather {
    inputs: Vec<f64>,
    outputs: Vec<f64>,
    aux: Vec<f64>,
}

impl SystemGraph {
    /// Builds the executable system from a flat netlist. Performs
    /// one-time parameter computation for every instance and caches
    /// constant Jacobian contributions.
    pub fn build(
        flat: &FlatNetlist,
        registry: &TemplateRegistry,
    ) -> Result<SystemGraph, AssemblyError> {
        // Variable table: canonical nets sorted by name, then each
        // instance's aux variables in declaration order (instances are
        // already sorted by hierarchical name).
        let mut vars: Vec<VarInfo> = Vec::new();
        let mut var_index: BTreeMap<String, usize> = BTreeMap::new();
        for net in flat.canonical_nets() {
            let idx = vars.len();
            vars.push(VarInfo {
                name: net.clone(),
                is_state: false,
            });
            var_index.insert(net, idx);
        }
        for inst in &flat.instances {
            let template = registry.get(&inst.template_name).ok_or_else(|| {
                AssemblyError::Structure(format!(
                    "instance `{}` uses unknown template `{}`",
                    inst.name, inst.template_name
                ))
            })?;
            for aux in &template.descriptor().aux_vars {
                let name = format!("{}.{aux}", inst.name);
                if var_index.contains_key(&name) {
                    return Err(AssemblyError::Structure(format!(
                        "internal variable `{name}` collides with an existing net"
                    )));
                }
                let idx = vars.len();
                vars.push(VarInfo {
                    name: name.clone(),
                    is_state: false,
                });
                var_index.insert(name, idx);
            }
        }

        // Bind blocks and determine, for every variable, the single
        // residual that drives it.
        let n = vars.len();
        let mut blocks: Vec<BlockBinding> = Vec::new();
        let mut block_index: BTreeMap<String, usize> = BTreeMap::new();
        let mut drivers: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];

        for inst in &flat.instances {
            let template = registry
                .get(&inst.template_name)
                .expect("checked above")
                .clone();
            let desc = template.descriptor().clone();

            let input_vars: Vec<usize> = inst
                .input_nets
                .iter()
                .map(|net| var_index[net.as_str()])
                .collect();
            let output_vars: Vec<usize> = inst
                .output_nets
                .iter()
                .map(|net| var_index[net.as_str()])
                .collect();
            let aux_vars: Vec<usize> = desc
                .aux_vars
                .iter()
                .map(|aux| var_index[format!("{}.{aux}", inst.name).as_str()])
                .collect();

            let one_time = template.one_time(&inst.params).map_err(|source| {
                AssemblyError::Block {
                    block: inst.name.clone(),
                    source,
                }
            })?;

            let is_integrate = desc.kind == TemplateKind::Integrate;
            let block_idx = blocks.len();
            let mut residual_rows = Vec::with_capacity(desc.n_g);
            for i in 0..desc.n_g {
                let target = if is_integrate {
                    let var_ref = desc.f_var_map[i];
                    match var_ref {
                        VarRef::Output(j) => output_vars[j],
                        VarRef::Aux(j) => aux_vars[j],
                        VarRef::Input(_) => {
                            return Err(AssemblyError::Structure(format!(
                                "template `{}` declares an input as a state",
                                desc.name
                            )))
                        }
                    }
                } else {
                    output_vars[i]
                };
                residual_rows.push(target);
                drivers[target].push((block_idx, i));
                if is_integrate {
                    vars[target].is_state = true;
                }
            }

            block_index.insert(inst.name.clone(), block_idx);
            blocks.push(BlockBinding {
                name: inst.name.clone(),
                template,
                params: inst.params.clone(),
                one_time,
                input_vars,
                output_vars,
                aux_vars,
                residual_rows,
                is_integrate,
                cached_jacobian: None,
            });
        }

        // Driver checks: every variable needs exactly one equation.
        let mut row_owner: Vec<(usize, usize)> = vec![(usize::MAX, usize::MAX); n];
        for (var, ds) in drivers.iter().enumerate() {
            match ds.len() {
                1 => row_owner[var] = ds[0],
                0 => {
                    let reader = blocks
                        .iter()
                        .find(|b| b.input_vars.contains(&var))
                        .map(|b| b.name.clone());
                    match reader {
                        Some(reader) => {
                            return Err(AssemblyError::UndrivenNet {
                                net: vars[var].name.clone(),
                                reader,
                            })
                        }
                        None => {
                            return Err(AssemblyError::NotSquare {
                                variables: n,
                                equations: n - 1,
                            })
                        }
                    }
                }
                count => {
                    let names: Vec<&str> =
                        ds.iter().map(|(b, _)| blocks[*b].name.as_str()).collect();
                    return Err(AssemblyError::MultipleDrivers {
                        net: vars[var].name.clone(),
                        count,
                        drivers: names.join(", "),
                    });
                }
            }
        }

        let state_vars: Vec<usize> = (0..n).filter(|&i| vars[i].is_state).collect();
        let algebraic_vars: Vec<usize> = (0..n).filter(|&i| !vars[i].is_state).collect();

        let eval_order = compute_eval_order(&blocks, &row_owner, &vars);

        let mut graph = SystemGraph {
            vars,
            var_index,
            blocks,
            block_index,
            state_vars,
            algebraic_vars,
            eval_order,
            row_owner,
        };
        graph.cache_constant_jacobians()?;
        Ok(graph)
    }

    /// Evaluates and stores Jacobian entries for templates that declare
    /// them independent of signal values.
    fn cache_constant_jacobians(&mut self) -> Result<(), AssemblyError> {
        let zero = StateVector::new(0.0, self.vars.len());
        for idx in 0..self.blocks.len() {
            if self.blocks[idx].template.descriptor().jacobian_kind != JacobianKind::Constant {
                continue;
            }
            let entries = self.block_jacobian_entries(&self.blocks[idx], &zero)?;
            self.blocks[idx].cached_jacobian = Some(entries);
        }
        Ok(())
    }

    pub fn n_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn n_states(&self) -> usize {
        self.state_vars.len()
    }

    pub fn var_name(&self, idx: usize) -> &str {
        &self.vars[idx].name
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.var_index.get(name).copied()
    }

    pub fn is_state(&self, idx: usize) -> bool {
        self.vars[idx].is_state
    }

    pub fn state_indices(&self) -> &[usize] {
        &self.state_vars
    }

    pub fn algebraic_indices(&self) -> &[usize] {
        &self.algebraic_vars
    }

    pub fn blocks(&self) -> &[BlockBinding] {
        &self.blocks
    }

    pub fn block_by_name(&self, name: &str) -> Option<&BlockBinding> {
        self.block_index.get(name).map(|&i| &self.blocks[i])
    }

    /// The algebraic-loop description, if the evaluate-block dependency
    /// graph is cyclic.
    pub fn algebraic_loop(&self) -> Option<&str> {
        self.eval_order.as_ref().err().map(|s| s.as_str())
    }

    /// Topological order of evaluate-kind blocks (indices into
    /// [`SystemGraph::blocks`]). Errors if the blocks form an algebraic
    /// loop, which explicit methods cannot handle.
    pub fn eval_order(&self) -> Result<&[usize], AssemblyError> {
        match &self.eval_order {
            Ok(order) => Ok(order),
            Err(cycle) => Err(AssemblyError::AlgebraicLoop {
                cycle: cycle.clone(),
            }),
        }
    }

    fn gather(&self, block: &BlockBinding, x: &StateVector) -> Gather {
        Gather {
            inputs: block.input_vars.iter().map(|&i| x.values[i]).collect(),
            outputs: block.output_vars.iter().map(|&i| x.values[i]).collect(),
            aux: block.aux_vars.iter().map(|&i| x.values[i]).collect(),
        }
    }

    fn check_finite(
        &self,
        values: &[f64],
        block: &BlockBinding,
        operation: &str,
        t: f64,
    ) -> Result<(), AssemblyError> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(AssemblyError::NonFinite {
                block: block.name.clone(),
                operation: operation.to_string(),
                t,
            })
        }
    }

    /// Initial values with every state at its startup value and all
    /// algebraic entries zero (a Newton starting guess).
    pub fn startup_state(&self, t0: f64) -> Result<StateVector, AssemblyError> {
        let mut x = StateVector::new(t0, self.vars.len());
        for block in &self.blocks {
            if !block.is_integrate {
                continue;
            }
            let values = block.template.startup(&block.params);
            if values.len() != block.residual_rows.len() {
                return Err(AssemblyError::Structure(format!(
                    "block `{}` returned {} startup values for {} states",
                    block.name,
                    values.len(),
                    block.residual_rows.len()
                )));
            }
            for (row, value) in block.residual_rows.iter().zip(values) {
                x.values[*row] = value;
            }
        }
        Ok(x)
    }

    /// Initial state via direct evaluation: states at startup values,
    /// algebraic variables computed in dependency order. Requires the
    /// system to be free of algebraic loops; looped systems are
    /// initialized by the solver with a Newton solve instead.
    pub fn initial_state(&self, t0: f64) -> Result<StateVector, AssemblyError> {
        let mut x = self.startup_state(t0)?;
        self.eval_algebraic_into(&mut x)?;
        Ok(x)
    }

    /// Fills every algebraic variable from the states and `x.t` by
    /// walking evaluate-kind blocks in topological order.
    pub fn eval_algebraic_into(&self, x: &mut StateVector) -> Result<(), AssemblyError> {
        let order = self.eval_order()?;
        for &bi in order {
            let block = &self.blocks[bi];
            let gathered = self.gather(block, x);
            let ctx = EvalContext {
                t: x.t,
                inputs: &gathered.inputs,
                outputs: &gathered.outputs,
                aux: &gathered.aux,
                params: &block.params,
                one_time: &block.one_time,
            };
            let mut out = vec![0.0; block.output_vars.len()];
            block
                .template
                .eval_outputs(&ctx, &mut out)
                .map_err(|source| AssemblyError::Block {
                    block: block.name.clone(),
                    source,
                })?;
            self.check_finite(&out, block, "eval_outputs", x.t)?;
            for (&var, value) in block.output_vars.iter().zip(out) {
                x.values[var] = value;
            }
        }
        Ok(())
    }

    /// Completes `x` (fills algebraic variables) and returns the state
    /// derivative vector, dense over the full variable table with zeros
    /// in algebraic slots.
    pub fn rhs(&self, x: &mut StateVector) -> Result<Vec<f64>, AssemblyError> {
        self.eval_algebraic_into(x)?;
        self.state_derivatives(x)
    }

    /// State derivatives evaluated against `x` exactly as given (no
    /// algebraic completion); dense with zeros in algebraic slots. Use
    /// on points whose algebraic values are already consistent, e.g.
    /// accepted or Newton-solved states.
    pub fn state_derivatives(&self, x: &StateVector) -> Result<Vec<f64>, AssemblyError> {
        let mut dx = vec![0.0; self.vars.len()];
        for block in &self.blocks {
            if !block.is_integrate {
                continue;
            }
            let gathered = self.gather(block, x);
            let ctx = EvalContext {
                t: x.t,
                inputs: &gathered.inputs,
                outputs: &gathered.outputs,
                aux: &gathered.aux,
                params: &block.params,
                one_time: &block.one_time,
            };
            let mut f = vec![0.0; block.residual_rows.len()];
            block
                .template
                .derivatives(&ctx, &mut f)
                .map_err(|source| AssemblyError::Block {
                    block: block.name.clone(),
                    source,
                })?;
            self.check_finite(&f, block, "derivatives", x.t)?;
            for (&row, value) in block.residual_rows.iter().zip(f) {
                dx[row] = value;
            }
        }
        Ok(dx)
    }

    /// Local residual vector of one block evaluated against `x`.
    fn block_residuals(
        &self,
        block: &BlockBinding,
        x: &StateVector,
    ) -> Result<Vec<f64>, AssemblyError> {
        let gathered = self.gather(block, x);
        let ctx = EvalContext {
            t: x.t,
            inputs: &gathered.inputs,
            outputs: &gathered.outputs,
            aux: &gathered.aux,
            params: &block.params,
            one_time: &block.one_time,
        };
        let mut g = vec![0.0; block.residual_rows.len()];
        block
            .template
            .residuals(&ctx, &mut g)
            .map_err(|source| AssemblyError::Block {
                block: block.name.clone(),
                source,
            })?;
        self.check_finite(&g, block, "residuals", x.t)?;
        Ok(g)
    }

    /// Assembles the implicit residual `r(x_new) = 0` for the given
    /// scheme. `x_old` is the previous accepted point (for
    /// [`Scheme::Bdf2`], the intermediate point at `t_n + gamma*h`).
    pub fn residual(
        &self,
        x_new: &StateVector,
        x_old: &StateVector,
        scheme: Scheme,
        h: f64,
    ) -> Result<DVector<f64>, AssemblyError> {
        if scheme.requires_positive_step() && !(h > 0.0) {
            return Err(AssemblyError::Structure(format!(
                "implicit residual requires a positive step, got h = {h}"
            )));
        }
        let n = self.vars.len();
        let mut r = DVector::zeros(n);
        for block in &self.blocks {
            if block.is_integrate {
                match scheme {
                    Scheme::Startup => {
                        for &row in &block.residual_rows {
                            r[row] = x_new.values[row] - x_old.values[row];
                        }
                    }
                    Scheme::BackwardEuler => {
                        let g_new = self.block_residuals(block, x_new)?;
                        for (&row, g) in block.residual_rows.iter().zip(g_new) {
                            r[row] = x_new.values[row] - x_old.values[row] - h * g;
                        }
                    }
                    Scheme::Trapezoidal => {
                        let g_new = self.block_residuals(block, x_new)?;
                        let g_old = self.block_residuals(block, x_old)?;
                        for ((&row, gn), go) in
                            block.residual_rows.iter().zip(g_new).zip(g_old)
                        {
                            r[row] =
                                x_new.values[row] - x_old.values[row] - 0.5 * h * (gn + go);
                        }
                    }
                    Scheme::Bdf2 { x_oldest, gamma } => {
                        let denom = gamma * (2.0 - gamma);
                        let c_mid = 1.0 / denom;
                        let c_oldest = -(1.0 - gamma) * (1.0 - gamma) / denom;
                        let c_g = scheme.state_scale(h);
                        let g_new = self.block_residuals(block, x_new)?;
                        for (&row, g) in block.residual_rows.iter().zip(g_new) {
                            r[row] = x_new.values[row]
                                - c_mid * x_old.values[row]
                                - c_oldest * x_oldest.values[row]
                                - c_g * g;
                        }
                    }
                }
            } else {
                let g_new = self.block_residuals(block, x_new)?;
                for (&row, g) in block.residual_rows.iter().zip(g_new) {
                    r[row] = g;
                }
            }
        }
        Ok(r)
    }

    /// Jacobian entries of one block at `x`, either cached (constant
    /// templates) or freshly evaluated.
    fn block_jacobian_entries(
        &self,
        block: &BlockBinding,
        x: &StateVector,
    ) -> Result<Vec<(usize, VarRef, f64)>, AssemblyError> {
        if let Some(cached) = &block.cached_jacobian {
            return Ok(cached.clone());
        }
        let gathered = self.gather(block, x);
        let ctx = EvalContext {
            t: x.t,
            inputs: &gathered.inputs,
            outputs: &gathered.outputs,
            aux: &gathered.aux,
            params: &block.params,
            one_time: &block.one_time,
        };
        let desc = block.template.descriptor();
        let mut sink = JacobianSink::new(desc);
        block
            .template
            .jacobian(&ctx, &mut sink)
            .map_err(|source| AssemblyError::Block {
                block: block.name.clone(),
                source,
            })?;
        let entries = sink.into_entries();
        for (_, _, v) in &entries {
            if !v.is_finite() {
                return Err(AssemblyError::NonFinite {
                    block: block.name.clone(),
                    operation: "jacobian".to_string(),
                    t: x.t,
                });
            }
        }
        Ok(entries)
    }

    /// Assembles `dr/dx_new` for the given scheme. State rows get an
    /// identity contribution from the `x_new` term plus the scheme's
    /// scaling of the template derivatives; algebraic rows copy the
    /// template entries directly.
    pub fn jacobian(
        &self,
        x_new: &StateVector,
        scheme: Scheme,
        h: f64,
    ) -> Result<DMatrix<f64>, AssemblyError> {
        if scheme.requires_positive_step() && !(h > 0.0) {
            return Err(AssemblyError::Structure(format!(
                "implicit Jacobian requires a positive step, got h = {h}"
            )));
        }
        let n = self.vars.len();
        let mut jac = DMatrix::zeros(n, n);
        let state_scale = scheme.state_scale(h);
        for block in &self.blocks {
            if block.is_integrate {
                for &row in &block.residual_rows {
                    jac[(row, row)] += 1.0;
                }
                if state_scale != 0.0 {
                    let entries = self.block_jacobian_entries(block, x_new)?;
                    for (g_idx, var, value) in entries {
                        let row = block.residual_rows[g_idx];
                        let col = block.var_of(var);
                        jac[(row, col)] -= state_scale * value;
                    }
                }
            } else {
                let entries = self.block_jacobian_entries(block, x_new)?;
                for (g_idx, var, value) in entries {
                    let row = block.residual_rows[g_idx];
                    let col = block.var_of(var);
                    jac[(row, col)] += value;
                }
            }
        }
        Ok(jac)
    }

    /// Names the equations likely responsible for a singular Jacobian:
    /// any all-zero row or column, reported by variable name and the
    /// owning block.
    pub fn describe_singularity(&self, jac: &DMatrix<f64>) -> String {
        let n = self.vars.len();
        let mut suspects: Vec<String> = Vec::new();
        for row in 0..n {
            if (0..n).all(|col| jac[(row, col)] == 0.0) {
                let (block, slot) = self.row_owner[row];
                suspects.push(format!(
                    "equation for `{}` (residual {slot} of `{}`) is all zero",
                    self.vars[row].name, self.blocks[block].name
                ));
            }
        }
        for col in 0..n {
            if (0..n).all(|row| jac[(row, col)] == 0.0) {
                suspects.push(format!(
                    "no equation depends on `{}`",
                    self.vars[col].name
                ));
            }
        }
        if suspects.is_empty() {
            "no structurally zero row or column; numerically singular".to_string()
        } else {
            suspects.join("; ")
        }
    }

    /// Observable values of one block (see
    /// [`BlockTemplate::output_params`]), in `out_params` order.
    pub fn out_param_values(
        &self,
        block: &BlockBinding,
        x: &StateVector,
    ) -> Result<Vec<f64>, AssemblyError> {
        let gathered = self.gather(block, x);
        let ctx = EvalContext {
            t: x.t,
            inputs: &gathered.inputs,
            outputs: &gathered.outputs,
            aux: &gathered.aux,
            params: &block.params,
            one_time: &block.one_time,
        };
        let desc = block.template.descriptor();
        let mut out = vec![0.0; desc.out_params.len()];
        block
            .template
            .output_params(&ctx, &mut out)
            .map_err(|source| AssemblyError::Block {
                block: block.name.clone(),
                source,
            })?;
        Ok(out)
    }
}

/// Kahn's algorithm over evaluate-kind blocks. Edges run from the block
/// driving an input net to the block reading it; integrate-kind drivers
/// (states) and unconnected roots impose no ordering.
fn compute_eval_order(
    blocks: &[BlockBinding],
    row_owner: &[(usize, usize)],
    vars: &[VarInfo],
) -> Result<Vec<usize>, String> {
    let nodes: Vec<usize> = (0..blocks.len()).filter(|&i| !blocks[i].is_integrate).collect();
    let mut in_degree: BTreeMap<usize, usize> = nodes.iter().map(|&i| (i, 0)).collect();
    let mut edges: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();

    for &consumer in &nodes {
        for &var in &blocks[consumer].input_vars {
            if vars[var].is_state {
                continue;
            }
            let (producer, _) = row_owner[var];
            if producer == consumer {
                // Self-loop: direct feedback through one block.
                return Err(format!(
                    "{} -> {}",
                    blocks[consumer].name, blocks[consumer].name
                ));
            }
            if blocks[producer].is_integrate {
                continue;
            }
            if edges.entry(producer).or_default().insert(consumer) {
                *in_degree.get_mut(&consumer).expect("evaluate node") += 1;
            }
        }
    }

    let mut ready: VecDeque<usize> = in_degree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(&i, _)| i)
        .collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(node) = ready.pop_front() {
        order.push(node);
        if let Some(next) = edges.get(&node) {
            for &consumer in next {
                let d = in_degree.get_mut(&consumer).expect("evaluate node");
                *d -= 1;
                if *d == 0 {
                    ready.push_back(consumer);
                }
            }
        }
    }
    if order.len() == nodes.len() {
        return Ok(order);
    }

    // Cycle: walk successors among the leftover nodes until one repeats.
    let leftover: BTreeSet<usize> = nodes
        .iter()
        .copied()
        .filter(|i| !order.contains(i))
        .collect();
    let start = *leftover.iter().next().expect("non-empty leftover");
    let mut path = vec![start];
    let mut seen: BTreeSet<usize> = [start].into();
    let mut current = start;
    loop {
        let next = edges
            .iter()
            .filter(|(p, cs)| **p == current && cs.iter().any(|c| leftover.contains(c)))
            .flat_map(|(_, cs)| cs.iter().copied())
            .find(|c| leftover.contains(c));
        let Some(next) = next else {
            break;
        };
        if !seen.insert(next) {
            path.push(next);
            let cycle_start = path.iter().position(|&p| p == next).expect("seen node");
            let names: Vec<&str> = path[cycle_start..]
                .iter()
                .map(|&i| blocks[i].name.as_str())
                .collect();
            return Err(names.join(" -> "));
        }
        path.push(next);
        current = next;
    }
    let names: Vec<&str> = leftover.iter().map(|&i| blocks[i].name.as_str()).collect();
    Err(names.join(" -> "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::TemplateRegistry;
    use crate::netlist::{flatten, parse_str};

    fn registry() -> TemplateRegistry {
        TemplateRegistry::builtin()
    }

    fn graph(text: &str) -> Result<SystemGraph, AssemblyError> {
        let reg = registry();
        let nl = parse_str(text, "test.fsn", &reg).expect("parse");
        let flat = flatten(&nl, &reg).expect("flatten");
        SystemGraph::build(&flat, &reg)
    }

    /// Two-pole RC ladder driven by a unit source: three weighted sums,
    /// three gains, two integrators. R1 = R2 = 1 kΩ, C1 = 1 µF and C2
    /// configurable, so 1/(R1·C1) = 1/(R2·C1) = 1000.
    fn rc_text(c2_inv_r2: f64) -> String {
        format!(
            "block vs const y=vin k=1
block d1 sum_2 x1=vin x2=v1 y=e1 k1=1 k2=-1
block d2 sum_2 x1=v1 x2=v2 y=e2 k1=1 k2=-1
block ga gain x=e1 y=i1 k=1000
block gb gain x=e2 y=i2 k=1000
block gc gain x=e2 y=i3 k={c2_inv_r2}
block f1 sum_2 x1=i1 x2=i2 y=dv1 k1=1 k2=-1
block int1 integrator x=dv1 y=v1
block int2 integrator x=i3 y=v2
"
        )
    }

    /// Scalar decay dy/dt = -y closed through a gain block.
    const DECAY: &str = "block neg gain x=y y=f k=-1
block int integrator x=f y=y y_st=1
";

    #[test]
    fn const_integrator_chain_counts() {
        let g = graph("block src const y=u k=2\nblock int integrator x=u y=v\n").unwrap();
        assert_eq!(g.n_vars(), 2);
        assert_eq!(g.n_states(), 1);
        assert_eq!(g.algebraic_indices().len(), 1);
        let v = g.var_index("v").unwrap();
        assert!(g.is_state(v));
        assert!(!g.is_state(g.var_index("u").unwrap()));
    }

    #[test]
    fn rc_system_has_exactly_two_states() {
        let g = graph(&rc_text(1000.0)).unwrap();
        assert_eq!(g.n_states(), 2);
        let states: Vec<&str> = g.state_indices().iter().map(|&i| g.var_name(i)).collect();
        assert_eq!(states, vec!["v1", "v2"]);
    }

    #[test]
    fn multi_driver_net_is_rejected() {
        let err = graph("block a const y=u k=1\nblock b const y=u k=2\n").unwrap_err();
        match err {
            AssemblyError::MultipleDrivers { net, count, drivers } => {
                assert_eq!(net, "u");
                assert_eq!(count, 2);
                assert!(drivers.contains('a') && drivers.contains('b'));
            }
            other => panic!("expected MultipleDrivers, got {other}"),
        }
    }

    #[test]
    fn undriven_net_is_rejected() {
        let err = graph("block g gain x=phantom y=out\n").unwrap_err();
        match err {
            AssemblyError::UndrivenNet { net, reader } => {
                assert_eq!(net, "phantom");
                assert_eq!(reader, "g");
            }
            other => panic!("expected UndrivenNet, got {other}"),
        }
    }

    #[test]
    fn variable_indexing_is_deterministic() {
        let names = |g: &SystemGraph| -> Vec<String> {
            (0..g.n_vars()).map(|i| g.var_name(i).to_string()).collect()
        };
        let g1 = graph(&rc_text(1000.0)).unwrap();
        let g2 = graph(&rc_text(1000.0)).unwrap();
        assert_eq!(names(&g1), names(&g2));
    }

    #[test]
    fn eval_order_follows_dataflow() {
        let g = graph(
            "block src const y=a k=1
block g1 gain x=a y=b k=2
block s sum_2 x1=b x2=a y=c
block g2 gain x=c y=d k=3
",
        )
        .unwrap();
        let order = g.eval_order().unwrap();
        let pos = |name: &str| {
            order
                .iter()
                .position(|&i| g.blocks()[i].name == name)
                .unwrap()
        };
        assert!(pos("src") < pos("g1"));
        assert!(pos("g1") < pos("s"));
        assert!(pos("s") < pos("g2"));
    }

    #[test]
    fn integrator_outputs_are_eval_order_roots() {
        let g = graph(
            "block c1 const y=u1 k=1
block c2 const y=u2 k=2
block i1 integrator x=u1 y=s1
block i2 integrator x=u2 y=s2
block add sum_2 x1=s1 x2=s2 y=tot
",
        )
        .unwrap();
        let order = g.eval_order().unwrap();
        // Only evaluate-kind blocks appear; the adder's inputs are
        // states so it has no ordering constraints.
        let names: BTreeSet<&str> = order.iter().map(|&i| g.blocks()[i].name.as_str()).collect();
        assert_eq!(names, ["add", "c1", "c2"].into_iter().collect());
    }

    #[test]
    fn direct_algebraic_self_loop_is_detected() {
        let g = graph("block c const y=a k=1\nblock s sum_2 x1=a x2=y y=y\n").unwrap();
        assert!(g.algebraic_loop().is_some());
        let err = g.eval_order().unwrap_err();
        assert!(err.to_string().contains("s -> s"), "{err}");
    }

    #[test]
    fn two_block_algebraic_loop_names_the_cycle() {
        let g = graph(
            "block g1 gain x=b y=a k=1
block g2 gain x=a y=b k=1
",
        )
        .unwrap();
        let err = g.eval_order().unwrap_err();
        let text = err.to_string();
        assert!(text.contains("g1") && text.contains("g2"), "{text}");
    }

    #[test]
    fn eval_algebraic_const_and_sum() {
        let g = graph(
            "block c1 const y=a k=2
block c2 const y=b k=3
block s sum_2 x1=a x2=b y=c
",
        )
        .unwrap();
        let mut x = StateVector::new(7.25, g.n_vars());
        g.eval_algebraic_into(&mut x).unwrap();
        assert_eq!(x.values[g.var_index("a").unwrap()], 2.0);
        assert_eq!(x.values[g.var_index("c").unwrap()], 5.0);
    }

    #[test]
    fn eval_algebraic_triangle_peak_at_half_period() {
        let g = graph("block tri triangle_source y=w T=2\n").unwrap();
        let w = g.var_index("w").unwrap();
        let mut x = StateVector::new(1.0, g.n_vars());
        g.eval_algebraic_into(&mut x).unwrap();
        assert!((x.values[w] - 1.0).abs() < 1e-12, "peak at t = T/2");
        let mut x = StateVector::new(0.5, g.n_vars());
        g.eval_algebraic_into(&mut x).unwrap();
        assert!(x.values[w].abs() < 1e-12, "zero at t = T/4");
    }

    #[test]
    fn rhs_integrator_fed_by_const() {
        let g = graph("block c const y=u k=2\nblock i integrator x=u y=v\n").unwrap();
        let mut x = g.initial_state(0.0).unwrap();
        let dx = g.rhs(&mut x).unwrap();
        assert_eq!(dx[g.var_index("v").unwrap()], 2.0);
        assert_eq!(dx[g.var_index("u").unwrap()], 0.0);
    }

    #[test]
    fn rhs_rc_from_rest_matches_hand_computation() {
        let g = graph(&rc_text(10_000.0)).unwrap();
        let mut x = g.initial_state(0.0).unwrap();
        let dx = g.rhs(&mut x).unwrap();
        // v1 = v2 = 0, vin = 1: dv1/dt = 1000*(1-0) - 1000*0 = 1000,
        // dv2/dt = (1/(R2*C2))*(v1-v2) = 0.
        assert!((dx[g.var_index("v1").unwrap()] - 1000.0).abs() < 1e-12);
        assert_eq!(dx[g.var_index("v2").unwrap()], 0.0);
    }

    #[test]
    fn rhs_lag_at_equilibrium_is_zero() {
        let g = graph("block c const y=u k=3\nblock l lag_1 x=u y=v tr=0.5 y_st=3\n").unwrap();
        let mut x = g.initial_state(0.0).unwrap();
        let dx = g.rhs(&mut x).unwrap();
        assert_eq!(dx[g.var_index("v").unwrap()], 0.0);
    }

    #[test]
    fn initial_state_uses_startup_values() {
        let g = graph("block c const y=u k=5\nblock i integrator x=u y=v y_st=-1\n").unwrap();
        let x = g.initial_state(0.0).unwrap();
        assert_eq!(x.values[g.var_index("v").unwrap()], -1.0);
        assert_eq!(x.values[g.var_index("u").unwrap()], 5.0);
    }

    /// Consistent decay state: y at the given value, f = -y.
    fn decay_state(g: &SystemGraph, t: f64, y: f64) -> StateVector {
        let mut x = StateVector::new(t, g.n_vars());
        x.values[g.var_index("y").unwrap()] = y;
        x.values[g.var_index("f").unwrap()] = -y;
        x
    }

    #[test]
    fn backward_euler_residual_matches_hand_computation() {
        let g = graph(DECAY).unwrap();
        let y_row = g.var_index("y").unwrap();
        let f_row = g.var_index("f").unwrap();
        let h = 0.1;
        let x_old = decay_state(&g, 0.0, 1.0);

        // Trial x_new = x_old: r_y = 1 - 1 - 0.1*(-1) = 0.1.
        let mut x_new = x_old.clone();
        x_new.t = h;
        let r = g.residual(&x_new, &x_old, Scheme::BackwardEuler, h).unwrap();
        assert!((r[y_row] - 0.1).abs() < 1e-15, "r = {}", r[y_row]);
        assert_eq!(r[f_row], 0.0);

        // Converged point y = y_old/(1+h).
        let x_new = decay_state(&g, h, 1.0 / 1.1);
        let r = g.residual(&x_new, &x_old, Scheme::BackwardEuler, h).unwrap();
        assert!(r[y_row].abs() < 1e-15);
        assert!(r[f_row].abs() < 1e-15);
    }

    #[test]
    fn trapezoidal_residual_vanishes_at_closed_form_update() {
        let g = graph(DECAY).unwrap();
        let y_row = g.var_index("y").unwrap();
        let h = 0.1;
        let x_old = decay_state(&g, 0.0, 1.0);
        let y_new = (1.0 - h / 2.0) / (1.0 + h / 2.0);
        let x_new = decay_state(&g, h, y_new);
        let r = g.residual(&x_new, &x_old, Scheme::Trapezoidal, h).unwrap();
        assert!(r[y_row].abs() < 1e-15, "r = {}", r[y_row]);
    }

    #[test]
    fn trapezoidal_and_backward_euler_agree_as_h_vanishes() {
        let g = graph(DECAY).unwrap();
        let x_old = decay_state(&g, 0.0, 1.0);
        let x_new = decay_state(&g, 0.0, 0.5);
        let h = 1e-300;
        let r_tr = g.residual(&x_new, &x_old, Scheme::Trapezoidal, h).unwrap();
        let r_be = g.residual(&x_new, &x_old, Scheme::BackwardEuler, h).unwrap();
        assert_eq!(r_tr, r_be);
    }

    #[test]
    fn nonpositive_step_is_rejected() {
        let g = graph(DECAY).unwrap();
        let x = decay_state(&g, 0.0, 1.0);
        assert!(g.residual(&x, &x, Scheme::BackwardEuler, 0.0).is_err());
        assert!(g.residual(&x, &x, Scheme::BackwardEuler, -0.1).is_err());
        assert!(g.jacobian(&x, Scheme::Trapezoidal, 0.0).is_err());
    }

    /// The BDF2 stage must reproduce any quadratic trajectory exactly:
    /// with a ramp source (value = t) feeding an integrator, the exact
    /// solution is y(t) = t²/2, and the three-point residual vanishes
    /// for every (t0, h, gamma).
    #[test]
    fn bdf2_residual_is_exact_on_quadratic_trajectories()  {
        let g = graph(
            "block ramp pwl20 y=r n=2 t1=0 y1=0 t2=10 y2=10
block int integrator x=r y=q
",
        )
        .unwrap();
        let q = g.var_index("q").unwrap();
        let r_net = g.var_index("r").unwrap();
        let make = |t: f64| {
            let mut x = StateVector::new(t, g.n_vars());
            x.values[q] = t * t / 2.0;
            x.values[r_net] = t;
            x
        };
        let gamma = 2.0 - std::f64::consts::SQRT_2;
        for (t0, h) in [(0.3, 0.2), (1.0, 0.5), (2.0, 1e-3)] {
            let x_oldest = make(t0);
            let x_mid = make(t0 + gamma * h);
            let x_new = make(t0 + h);
            let r = g
                .residual(
                    &x_new,
                    &x_mid,
                    Scheme::Bdf2 {
                        x_oldest: &x_oldest,
                        gamma,
                    },
                    h,
                )
                .unwrap();
            assert!(r[q].abs() < 1e-13, "t0={t0} h={h}: r = {}", r[q]);
        }

        // Negative control: perturbing the new value by eps moves the
        // residual by eps.
        let x_oldest = make(0.3);
        let x_mid = make(0.3 + gamma * 0.2);
        let mut x_new = make(0.5);
        x_new.values[q] += 1e-3;
        let r = g
            .residual(
                &x_new,
                &x_mid,
                Scheme::Bdf2 {
                    x_oldest: &x_oldest,
                    gamma,
                },
                0.2,
            )
            .unwrap();
        assert!((r[q] - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn startup_scheme_pins_states_and_keeps_raw_algebraic_rows() {
        let g = graph(DECAY).unwrap();
        let y_row = g.var_index("y").unwrap();
        let f_row = g.var_index("f").unwrap();
        let x_old = decay_state(&g, 0.0, 1.0);
        // Inconsistent trial: y drifted, f not yet -y.
        let mut x_new = x_old.clone();
        x_new.values[y_row] = 1.5;
        x_new.values[f_row] = 0.25;
        let r = g.residual(&x_new, &x_old, Scheme::Startup, 0.0).unwrap();
        assert_eq!(r[y_row], 0.5);
        assert_eq!(r[f_row], 0.25 - (-1.5));
        let jac = g.jacobian(&x_new, Scheme::Startup, 0.0).unwrap();
        assert_eq!(jac[(y_row, y_row)], 1.0);
        assert_eq!(jac[(y_row, f_row)], 0.0);
    }

    #[test]
    fn backward_euler_jacobian_matches_hand_computation() {
        let g = graph(DECAY).unwrap();
        let y = g.var_index("y").unwrap();
        let f = g.var_index("f").unwrap();
        let h = 0.1;
        let x = decay_state(&g, h, 1.0);
        let jac = g.jacobian(&x, Scheme::BackwardEuler, h).unwrap();
        // State row: d/dy = 1, d/df = -h * (dg/df) = -h since g = f.
        assert_eq!(jac[(y, y)], 1.0);
        assert_eq!(jac[(y, f)], -h);
        // Gain residual f - (-1)*y: d/df = 1, d/dy = 1.
        assert_eq!(jac[(f, f)], 1.0);
        assert_eq!(jac[(f, y)], 1.0);
        // Schur complement reproduces the scalar BE Jacobian 1 + h.
        let schur = jac[(y, y)] - jac[(y, f)] * jac[(f, y)] / jac[(f, f)];
        assert!((schur - 1.1).abs() < 1e-15);
    }

    #[test]
    fn sum_block_jacobian_row_is_parameter_weights() {
        let g = graph(
            "block c1 const y=a k=1
block c2 const y=b k=2
block s sum_2 x1=a x2=b y=c k1=3 k2=-4
block i integrator x=c y=z
",
        )
        .unwrap();
        let row = g.var_index("c").unwrap();
        let x = g.initial_state(0.0).unwrap();
        let jac = g.jacobian(&x, Scheme::BackwardEuler, 0.1).unwrap();
        assert_eq!(jac[(row, g.var_index("c").unwrap())], 1.0);
        assert_eq!(jac[(row, g.var_index("a").unwrap())], -3.0);
        assert_eq!(jac[(row, g.var_index("b").unwrap())], 4.0);
    }

    #[test]
    fn jacobian_matches_finite_differences_on_rc() {
        let g = graph(&rc_text(10_000.0)).unwrap();
        let n = g.n_vars();
        let h = 1e-4;
        let mut x_new = g.initial_state(0.0).unwrap();
        // Move off the trivial point so every path is exercised.
        for (i, v) in x_new.values.iter_mut().enumerate() {
            *v += 0.1 + 0.03 * i as f64;
        }
        let x_old = g.initial_state(0.0).unwrap();
        let jac = g.jacobian(&x_new, Scheme::BackwardEuler, h).unwrap();
        for col in 0..n {
            let delta = 1e-6 * (1.0 + x_new.values[col].abs());
            let mut plus = x_new.clone();
            plus.values[col] += delta;
            let mut minus = x_new.clone();
            minus.values[col] -= delta;
            let rp = g.residual(&plus, &x_old, Scheme::BackwardEuler, h).unwrap();
            let rm = g.residual(&minus, &x_old, Scheme::BackwardEuler, h).unwrap();
            for row in 0..n {
                let fd = (rp[row] - rm[row]) / (2.0 * delta);
                let an = jac[(row, col)];
                let scale = 1.0_f64.max(an.abs()).max(fd.abs());
                assert!(
                    (fd - an).abs() <= 1e-5 * scale,
                    "row {row} col {col}: fd {fd} vs analytic {an}"
                );
            }
        }
    }

    #[test]
    fn constant_jacobians_are_cached_and_stable() {
        let g = graph(&rc_text(1000.0)).unwrap();
        let x1 = g.initial_state(0.0).unwrap();
        let mut x2 = x1.clone();
        for v in x2.values.iter_mut() {
            *v += 41.5;
        }
        let j1 = g.jacobian(&x1, Scheme::BackwardEuler, 0.1).unwrap();
        let j2 = g.jacobian(&x2, Scheme::BackwardEuler, 0.1).unwrap();
        // Every template in the RC fixture declares constant entries,
        // so the Jacobian is identical at different operating points.
        assert_eq!(j1, j2);
    }

    #[test]
    fn non_finite_evaluation_is_attributed_to_the_block() {
        let g = graph(
            "block i1 integrator x=w y=v y_st=1e308
block m mult_2 x1=v x2=v y=w
",
        )
        .unwrap();
        let mut x = g.startup_state(0.0).unwrap();
        let err = g.eval_algebraic_into(&mut x).unwrap_err();
        match err {
            AssemblyError::NonFinite { block, .. } => assert_eq!(block, "m"),
            other => panic!("expected NonFinite, got {other}"),
        }
    }

    #[test]
    fn bad_block_parameters_fail_at_build_with_attribution() {
        let err = graph("block c const y=u k=1\nblock l lag_1 x=u y=v tr=-1\n").unwrap_err();
        match err {
            AssemblyError::Block { block, .. } => assert_eq!(block, "l"),
            other => panic!("expected Block error, got {other}"),
        }
    }

    #[test]
    fn machine_aux_variables_enter_the_table() {
        let g = graph(
            "block vq const y=vq k=0
block vd const y=vd k=0
block tl const y=tl k=0
block m indmc1 vqs=vq vds=vd tl=tl wrm=speed
",
        )
        .unwrap();
        assert_eq!(g.n_states(), 5);
        assert!(g.var_index("m.psids").is_some());
        assert!(g.var_index("m.psiqr").is_some());
        assert!(g.is_state(g.var_index("speed").unwrap()));
    }

    #[test]
    fn out_param_values_expose_port_values() {
        let g = graph("block c const y=a k=2\nblock gn gain x=a y=b k=3\n").unwrap();
        let mut x = StateVector::new(0.0, g.n_vars());
        g.eval_algebraic_into(&mut x).unwrap();
        let block = g.block_by_name("gn").unwrap();
        let values = g.out_param_values(block, &x).unwrap();
        // out_params for gain are (x, y).
        assert_eq!(values, vec![2.0, 6.0]);
    }

    #[test]
    fn describe_singularity_names_zero_rows() {
        let g = graph(DECAY).unwrap();
        let n = g.n_vars();
        let zero = DMatrix::zeros(n, n);
        let text = g.describe_singularity(&zero);
        assert!(text.contains("all zero"), "{text}");
    }
}
