//! Subcircuit expansion and output-path resolution.
//!
//! Flattening walks the instance tree depth-first. Each subcircuit
//! instance contributes a name prefix (`motor.` for instance `motor`),
//! a parameter environment (declared defaults, caller overrides, then
//! `derive` definitions in order), and a pad map translating its
//! boundary nets to the caller's nets. Library-block instances become
//! [`FlatInstance`] records with fully evaluated parameters and
//! canonical net names.

use std::collections::{BTreeMap, BTreeSet};

use super::expr::ParamExpr;
use super::parser::suggestion;
use super::{
    FlatInstance, FlatNetlist, Instance, NetToken, Netlist, OutputBinding, PadDirection,
    ResolvedOutVar, SubcircuitDef,
};
use crate::blocks::{ResolvedParams, TemplateRegistry};
use crate::error::NetlistError;

const MAX_DEPTH: usize = 64;
const MAX_EXPORT_HOPS: usize = 32;

/// Expands every subcircuit instance, evaluates all parameters, and
/// resolves output requests. The returned instances are sorted by
/// hierarchical name.
pub fn flatten(netlist: &Netlist, registry: &TemplateRegistry) -> Result<FlatNetlist, NetlistError> {
    let mut expander = Expander {
        registry,
        subs: &netlist.subcircuits,
        instances: Vec::new(),
        net_aliases: BTreeMap::new(),
        exports: BTreeMap::new(),
        stack: Vec::new(),
    };
    expander.expand_scope("", &netlist.top, &BTreeMap::new(), &BTreeMap::new())?;

    let Expander {
        mut instances,
        net_aliases,
        exports,
        ..
    } = expander;
    instances.sort_by(|a, b| a.name.cmp(&b.name));

    let net_set: BTreeSet<String> = instances
        .iter()
        .flat_map(|inst| inst.input_nets.iter().chain(inst.output_nets.iter()))
        .cloned()
        .collect();

    let mut out_vars: Vec<ResolvedOutVar> = Vec::new();
    for ov in &netlist.out_vars {
        let binding = resolve_path_parts(
            &instances,
            &net_set,
            &net_aliases,
            &exports,
            registry,
            &ov.path,
            0,
        )
        .map_err(|e| at(&ov.file, ov.line, e))?;
        out_vars.push(ResolvedOutVar {
            alias: ov.alias.clone(),
            path: ov.path.clone(),
            binding,
        });
    }

    // Output groups may reference declared aliases or direct paths; a
    // direct path becomes an implicit alias so the recorder always has
    // a binding per requested column.
    for group in &netlist.outputs {
        for var in &group.vars {
            if out_vars.iter().any(|ov| ov.alias == *var) {
                continue;
            }
            let binding = resolve_path_parts(
                &instances,
                &net_set,
                &net_aliases,
                &exports,
                registry,
                var,
                0,
            )
            .map_err(|e| {
                at(
                    "netlist",
                    group.line,
                    prefix_message(e, &format!("in output `{}`: ", group.file_name)),
                )
            })?;
            out_vars.push(ResolvedOutVar {
                alias: var.clone(),
                path: var.clone(),
                binding,
            });
        }
    }

    Ok(FlatNetlist {
        instances,
        out_vars,
        outputs: netlist.outputs.clone(),
        solve: netlist.solve.clone(),
        net_aliases,
        exports,
    })
}

fn at(file: &str, line: usize, err: NetlistError) -> NetlistError {
    match err {
        NetlistError::Semantic { context, message } if context.is_empty() => {
            NetlistError::Semantic {
                context: format!("{file}:{line}"),
                message,
            }
        }
        other => other,
    }
}

fn prefix_message(err: NetlistError, prefix: &str) -> NetlistError {
    match err {
        NetlistError::Semantic { context, message } => NetlistError::Semantic {
            context,
            message: format!("{prefix}{message}"),
        },
        other => other,
    }
}

/// A semantic error not yet tied to a source location.
fn loose(message: String) -> NetlistError {
    NetlistError::Semantic {
        context: String::new(),
        message,
    }
}

struct Expander<'a> {
    registry: &'a TemplateRegistry,
    subs: &'a BTreeMap<String, SubcircuitDef>,
    instances: Vec<FlatInstance>,
    net_aliases: BTreeMap<String, String>,
    exports: BTreeMap<String, String>,
    /// Subcircuit names currently being expanded (recursion guard).
    stack: Vec<String>,
}

impl<'a> Expander<'a> {
    fn expand_scope(
        &mut self,
        prefix: &str,
        scope: &[Instance],
        env: &BTreeMap<String, f64>,
        pad_map: &BTreeMap<String, String>,
    ) -> Result<(), NetlistError> {
        self.check_virtual_labels(scope)?;

        for inst in scope {
            let full_name = qualify(prefix, &inst.name);
            if let Some(template) = self.registry.get(&inst.template) {
                let template = template.clone();
                self.expand_leaf(prefix, inst, &full_name, template.descriptor(), env, pad_map)?;
            } else if let Some(sub) = self.subs.get(&inst.template) {
                self.expand_subcircuit(prefix, inst, &full_name, sub, env, pad_map)?;
            } else {
                // The parser validates template names; reaching this
                // branch means the netlist was constructed by hand.
                return Err(NetlistError::Semantic {
                    context: format!("{}:{}", inst.file, inst.line),
                    message: format!("unknown template or subcircuit `{}`", inst.template),
                });
            }
        }
        Ok(())
    }

    /// Enforces the virtual-net contract within one scope: a label has
    /// exactly one sink (`port=>label`), and sources (`port=label>`)
    /// require that sink to exist.
    fn check_virtual_labels(&self, scope: &[Instance]) -> Result<(), NetlistError> {
        let mut sinks: BTreeMap<&str, &Instance> = BTreeMap::new();
        for inst in scope {
            for (port, token) in &inst.bindings {
                if let NetToken::VirtualSink(label) = token {
                    if let Some(first) = sinks.insert(label.as_str(), inst) {
                        return Err(NetlistError::Semantic {
                            context: format!("{}:{}", inst.file, inst.line),
                            message: format!(
                                "virtual net `{label}` has more than one sink `>{label}` \
                                 (first at `{}`, again at `{}.{port}`)",
                                first.name, inst.name
                            ),
                        });
                    }
                }
            }
        }
        for inst in scope {
            for (port, token) in &inst.bindings {
                if let NetToken::VirtualSource(label) = token {
                    if !sinks.contains_key(label.as_str()) {
                        return Err(NetlistError::Semantic {
                            context: format!("{}:{}", inst.file, inst.line),
                            message: format!(
                                "virtual source `{label}>` on `{}.{port}` has no matching \
                                 sink `>{label}` in this scope",
                                inst.name
                            ),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Canonical net for a locally written net name: pad names map to
    /// the caller's net, everything else is prefixed into this scope.
    fn resolve_net(
        &mut self,
        prefix: &str,
        local: &str,
        pad_map: &BTreeMap<String, String>,
    ) -> String {
        let canonical = match pad_map.get(local) {
            Some(mapped) => mapped.clone(),
            None => qualify(prefix, local),
        };
        self.net_aliases
            .entry(qualify(prefix, local))
            .or_insert_with(|| canonical.clone());
        canonical
    }

    fn expand_leaf(
        &mut self,
        prefix: &str,
        inst: &Instance,
        full_name: &str,
        desc: &crate::blocks::TemplateDescriptor,
        env: &BTreeMap<String, f64>,
        pad_map: &BTreeMap<String, String>,
    ) -> Result<(), NetlistError> {
        let here = format!("{}:{}", inst.file, inst.line);
        let mut params = ResolvedParams::defaults(desc);

        for (key, expr) in &inst.value_params {
            let value = eval_instance_expr(expr, env, inst, key)?;
            if let Some(i) = desc.real_index(key) {
                params.reals[i] = value;
            } else if let Some(i) = desc.startup_index(key) {
                params.startup[i] = value;
            } else if let Some(i) = desc.integer_index(key) {
                if value.fract() != 0.0 || value.abs() > i64::MAX as f64 {
                    return Err(NetlistError::Semantic {
                        context: here.clone(),
                        message: format!(
                            "parameter `{key}` of `{}` must be an integer, got {value}",
                            inst.name
                        ),
                    });
                }
                params.integers[i] = value as i64;
            } else {
                return Err(NetlistError::Semantic {
                    context: here.clone(),
                    message: format!("`{}` has no numeric parameter `{key}`", inst.template),
                });
            }
        }
        for (key, word) in &inst.word_params {
            match desc.string_index(key) {
                Some(i) => params.strings[i] = word.clone(),
                None => {
                    return Err(NetlistError::Semantic {
                        context: here.clone(),
                        message: format!("`{}` has no string parameter `{key}`", inst.template),
                    })
                }
            }
        }

        let binding_of = |port: &str| -> Option<&NetToken> {
            inst.bindings
                .iter()
                .find(|(name, _)| name == port)
                .map(|(_, tok)| tok)
        };

        let mut input_nets = Vec::with_capacity(desc.inputs.len());
        for port in &desc.inputs {
            match binding_of(port) {
                Some(token) => {
                    let net = self.resolve_net(prefix, token.label(), pad_map);
                    input_nets.push(net);
                }
                None => {
                    return Err(NetlistError::Semantic {
                        context: here.clone(),
                        message: format!(
                            "input port `{port}` of `{}` is not connected",
                            inst.name
                        ),
                    })
                }
            }
        }
        let mut output_nets = Vec::with_capacity(desc.outputs.len());
        for port in &desc.outputs {
            match binding_of(port) {
                Some(token) => {
                    let net = self.resolve_net(prefix, token.label(), pad_map);
                    output_nets.push(net);
                }
                None => {
                    // Unconnected outputs still need a variable: give
                    // them a private net named after the port.
                    let net = format!("{full_name}.{port}");
                    self.net_aliases.entry(net.clone()).or_insert_with(|| net.clone());
                    output_nets.push(net);
                }
            }
        }

        self.instances.push(FlatInstance {
            name: full_name.to_string(),
            template_name: inst.template.clone(),
            input_nets,
            output_nets,
            params,
            origin_line: inst.line,
        });
        Ok(())
    }

    fn expand_subcircuit(
        &mut self,
        prefix: &str,
        inst: &Instance,
        full_name: &str,
        sub: &SubcircuitDef,
        env: &BTreeMap<String, f64>,
        pad_map: &BTreeMap<String, String>,
    ) -> Result<(), NetlistError> {
        let here = format!("{}:{}", inst.file, inst.line);
        if self.stack.iter().any(|s| s == &sub.name) {
            let mut cycle = self.stack.clone();
            cycle.push(sub.name.clone());
            return Err(NetlistError::Semantic {
                context: here,
                message: format!(
                    "recursive subcircuit instantiation: {}",
                    cycle.join(" -> ")
                ),
            });
        }
        if self.stack.len() >= MAX_DEPTH {
            return Err(NetlistError::Semantic {
                context: here,
                message: format!("subcircuit nesting deeper than {MAX_DEPTH} levels"),
            });
        }

        // Caller-side override values, evaluated in the caller's
        // environment.
        let mut overrides: BTreeMap<&str, f64> = BTreeMap::new();
        for (key, expr) in &inst.value_params {
            let value = eval_instance_expr(expr, env, inst, key)?;
            overrides.insert(key.as_str(), value);
        }
        if let Some((key, _)) = inst.word_params.first() {
            return Err(NetlistError::Semantic {
                context: here.clone(),
                message: format!(
                    "subcircuit `{}` has no string parameter `{key}`",
                    sub.name
                ),
            });
        }

        // Child environment: declared parameters in order (defaults may
        // reference earlier parameters), then derived values in order.
        let mut child_env: BTreeMap<String, f64> = BTreeMap::new();
        for (name, default_expr) in &sub.params {
            let value = match overrides.remove(name.as_str()) {
                Some(v) => v,
                None => default_expr.eval(&child_env).map_err(|message| {
                    NetlistError::Expr {
                        file: sub.file.clone(),
                        line: sub.line,
                        expr: default_expr.to_string(),
                        message: format!(
                            "default for parameter `{name}` of subcircuit `{}`: {message}",
                            sub.name
                        ),
                    }
                })?,
            };
            ensure_finite(value, name, &here)?;
            child_env.insert(name.clone(), value);
        }
        for (name, expr) in &sub.derives {
            let value = expr.eval(&child_env).map_err(|message| NetlistError::Expr {
                file: sub.file.clone(),
                line: sub.line,
                expr: expr.to_string(),
                message: format!("derive `{name}` in subcircuit `{}`: {message}", sub.name),
            })?;
            ensure_finite(value, name, &here)?;
            child_env.insert(name.clone(), value);
        }

        // Pad map: each pad of the subcircuit becomes an alias for a
        // caller-side net.
        let mut child_pads: BTreeMap<String, String> = BTreeMap::new();
        for pad in &sub.pads {
            let binding = inst
                .bindings
                .iter()
                .find(|(name, _)| *name == pad.name)
                .map(|(_, tok)| tok);
            let caller_net = match binding {
                Some(token) => self.resolve_net(prefix, token.label(), pad_map),
                None => match pad.direction {
                    PadDirection::Input => {
                        return Err(NetlistError::Semantic {
                            context: here.clone(),
                            message: format!(
                                "input pad `{}` of `{}` is not connected",
                                pad.name, inst.name
                            ),
                        })
                    }
                    PadDirection::Output => {
                        let net = format!("{full_name}.{}", pad.name);
                        self.net_aliases
                            .entry(net.clone())
                            .or_insert_with(|| net.clone());
                        net
                    }
                },
            };
            self.net_aliases
                .entry(format!("{full_name}.{}", pad.name))
                .or_insert_with(|| caller_net.clone());
            child_pads.insert(pad.name.clone(), caller_net);
        }

        // Exports become path aliases resolved after expansion.
        let child_prefix = format!("{full_name}.");
        for (exported, path) in &sub.exports {
            self.exports.insert(
                format!("{full_name}.{exported}"),
                format!("{child_prefix}{path}"),
            );
        }

        self.stack.push(sub.name.clone());
        let result = self.expand_scope(&child_prefix, &sub.instances, &child_env, &child_pads);
        self.stack.pop();
        result
    }
}

fn qualify(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}{name}")
    }
}

fn ensure_finite(value: f64, name: &str, context: &str) -> Result<(), NetlistError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(NetlistError::Semantic {
            context: context.to_string(),
            message: format!("parameter `{name}` evaluated to a non-finite value ({value})"),
        })
    }
}

fn eval_instance_expr(
    expr: &ParamExpr,
    env: &BTreeMap<String, f64>,
    inst: &Instance,
    key: &str,
) -> Result<f64, NetlistError> {
    let value = expr.eval(env).map_err(|message| NetlistError::Expr {
        file: inst.file.clone(),
        line: inst.line,
        expr: expr.to_string(),
        message: format!("parameter `{key}` of `{}`: {message}", inst.name),
    })?;
    ensure_finite(value, key, &format!("{}:{}", inst.file, inst.line))?;
    Ok(value)
}

/// Resolves a dotted path to a net or a block observable.
#[allow(clippy::too_many_arguments)]
fn resolve_path_parts(
    instances: &[FlatInstance],
    net_set: &BTreeSet<String>,
    aliases: &BTreeMap<String, String>,
    exports: &BTreeMap<String, String>,
    registry: &TemplateRegistry,
    path: &str,
    depth: usize,
) -> Result<OutputBinding, NetlistError> {
    if depth > MAX_EXPORT_HOPS {
        return Err(loose(format!(
            "output path `{path}` chains through more than {MAX_EXPORT_HOPS} exports"
        )));
    }
    if net_set.contains(path) {
        return Ok(OutputBinding::Net(path.to_string()));
    }
    if let Some(canonical) = aliases.get(path) {
        if net_set.contains(canonical) {
            return Ok(OutputBinding::Net(canonical.clone()));
        }
    }
    if let Some(target) = exports.get(path) {
        return resolve_path_parts(
            instances, net_set, aliases, exports, registry, target, depth + 1,
        );
    }
    if let Some((inst_path, last)) = path.rsplit_once('.') {
        if let Ok(idx) = instances.binary_search_by(|i| i.name.as_str().cmp(inst_path)) {
            let inst = &instances[idx];
            let template = registry.get(&inst.template_name).ok_or_else(|| {
                loose(format!(
                    "instance `{inst_path}` uses unknown template `{}`",
                    inst.template_name
                ))
            })?;
            let desc = template.descriptor();
            if desc.out_params.iter().any(|p| *p == last) {
                return Ok(OutputBinding::OutParam {
                    instance: inst_path.to_string(),
                    param: last.to_string(),
                });
            }
            let hint = suggestion(last, desc.out_params.iter().copied());
            return Err(loose(format!(
                "`{inst_path}` has no observable named `{last}`{}; available: {}",
                hint.map(|h| format!(" (did you mean `{h}`?)")).unwrap_or_default(),
                desc.out_params.join(", ")
            )));
        }
    }

    // Nothing matched: offer the closest known name.
    let mut pool: Vec<String> = net_set.iter().cloned().collect();
    pool.extend(aliases.keys().cloned());
    pool.extend(exports.keys().cloned());
    for inst in instances {
        if let Some(template) = registry.get(&inst.template_name) {
            for p in &template.descriptor().out_params {
                pool.push(format!("{}.{p}", inst.name));
            }
        }
    }
    pool.sort();
    pool.dedup();
    let hint = suggestion(path, pool.iter().map(|s| s.as_str()));
    Err(loose(format!(
        "unknown output path `{path}`{}",
        hint.map(|h| format!(" (did you mean `{h}`?)")).unwrap_or_default()
    )))
}

impl FlatNetlist {
    /// Resolves a dotted output path against this flat netlist.
    pub fn resolve_path(
        &self,
        path: &str,
        registry: &TemplateRegistry,
    ) -> Result<OutputBinding, NetlistError> {
        let net_set: BTreeSet<String> = self.canonical_nets().into_iter().collect();
        resolve_path_parts(
            &self.instances,
            &net_set,
            &self.net_aliases,
            &self.exports,
            registry,
            path,
            0,
        )
    }

    /// Renders the canonical flat text form. Parsing and re-flattening
    /// the result reproduces the same instances, outputs and solver
    /// settings; parameter values are printed with enough digits to
    /// round-trip exactly.
    pub fn to_text(&self, registry: &TemplateRegistry) -> String {
        let mut out = String::new();
        for inst in &self.instances {
            let Some(template) = registry.get(&inst.template_name) else {
                continue;
            };
            let desc = template.descriptor();
            out.push_str("block ");
            out.push_str(&inst.name);
            out.push(' ');
            out.push_str(&inst.template_name);
            for (port, net) in desc.inputs.iter().zip(&inst.input_nets) {
                out.push_str(&format!(" {port}={net}"));
            }
            for (port, net) in desc.outputs.iter().zip(&inst.output_nets) {
                out.push_str(&format!(" {port}={net}"));
            }
            for (p, v) in desc.real_params.iter().zip(&inst.params.reals) {
                out.push_str(&format!(" {}={}", p.name, fmt_value(*v)));
            }
            for (p, v) in desc.integer_params.iter().zip(&inst.params.integers) {
                out.push_str(&format!(" {}={v}", p.name));
            }
            for (p, v) in desc.string_params.iter().zip(&inst.params.strings) {
                if v.chars().any(|c| c.is_whitespace() || c == '#') {
                    out.push_str(&format!(" {}=\"{v}\"", p.name));
                } else {
                    out.push_str(&format!(" {}={v}", p.name));
                }
            }
            for (p, v) in desc.startup_params.iter().zip(&inst.params.startup) {
                out.push_str(&format!(" {}={}", p.name, fmt_value(*v)));
            }
            out.push('\n');
        }
        for ov in &self.out_vars {
            let path = match &ov.binding {
                OutputBinding::Net(net) => net.clone(),
                OutputBinding::OutParam { instance, param } => format!("{instance}.{param}"),
            };
            out.push_str(&format!("outvar {} = {path}\n", ov.alias));
        }
        for group in &self.outputs {
            let file = if group
                .file_name
                .chars()
                .any(|c| c.is_whitespace() || c == '#')
            {
                format!("\"{}\"", group.file_name)
            } else {
                group.file_name.clone()
            };
            out.push_str(&format!("output file={file} vars={}", group.vars.join(",")));
            if let Some(interval) = group.interval {
                out.push_str(&format!(" interval={}", fmt_value(interval)));
            }
            out.push('\n');
        }
        let s = &self.solve;
        let mut solve_parts: Vec<String> = Vec::new();
        if let Some(v) = &s.method {
            solve_parts.push(format!("method={v}"));
        }
        if let Some(v) = s.t_start {
            solve_parts.push(format!("t_start={}", fmt_value(v)));
        }
        if let Some(v) = s.t_end {
            solve_parts.push(format!("t_end={}", fmt_value(v)));
        }
        if let Some(v) = s.h_init {
            solve_parts.push(format!("h_init={}", fmt_value(v)));
        }
        if let Some(v) = s.h_min {
            solve_parts.push(format!("h_min={}", fmt_value(v)));
        }
        if let Some(v) = s.h_max {
            solve_parts.push(format!("h_max={}", fmt_value(v)));
        }
        if let Some(v) = s.tol {
            solve_parts.push(format!("tol={}", fmt_value(v)));
        }
        if let Some(v) = s.newton_tol {
            solve_parts.push(format!("newton_tol={}", fmt_value(v)));
        }
        if let Some(v) = s.newton_tol_rel {
            solve_parts.push(format!("newton_tol_rel={}", fmt_value(v)));
        }
        if let Some(v) = s.newton_max_iters {
            solve_parts.push(format!("newton_max_iters={v}"));
        }
        if let Some(v) = s.events {
            solve_parts.push(format!("events={}", if v { "on" } else { "off" }));
        }
        if let Some(v) = &s.extrapolation {
            solve_parts.push(format!("extrapolation={v}"));
        }
        if !solve_parts.is_empty() {
            out.push_str(&format!("solve {}\n", solve_parts.join(" ")));
        }
        out
    }
}

/// Shortest decimal form that parses back to the identical `f64`.
fn fmt_value(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::super::parser::parse_str;
    use super::*;
    use crate::blocks::TemplateRegistry;

    fn registry() -> TemplateRegistry {
        TemplateRegistry::builtin()
    }

    fn flat(text: &str) -> Result<FlatNetlist, NetlistError> {
        let reg = registry();
        let nl = parse_str(text, "test.fsn", &reg)?;
        flatten(&nl, &reg)
    }

    const NESTED: &str = "\
subckt inner
pad in u
pad out y
param g=2
block amp gain x=u y=y k=g
endsubckt
subckt outer
pad in u
pad out y
param g=3 extra=1
derive gg = g*extra
block pre inner u=u y=>mid g=gg
block post gain x=mid> y=y k=1
endsubckt
block src const y=s k=1.5
block chain outer u=s g=4
outvar out = chain.y
output file=o.csv vars=out
solve method=rk4 t_end=1
";

    #[test]
    fn nested_subcircuits_flatten_with_prefixed_names() {
        let f = flat(NESTED).unwrap();
        let names: Vec<&str> = f.instances.iter().map(|i| i.name.as_str()).collect();
        assert_eq!(names, vec!["chain.post", "chain.pre.amp", "src"]);

        let amp = f.instance("chain.pre.amp").unwrap();
        assert_eq!(amp.template_name, "gain");
        assert_eq!(amp.input_nets, vec!["s"]);
        assert_eq!(amp.output_nets, vec!["chain.mid"]);
        assert_eq!(amp.params.reals, vec![4.0]); // override g=4 via derive gg

        let post = f.instance("chain.post").unwrap();
        assert_eq!(post.input_nets, vec!["chain.mid"]);
        assert_eq!(post.output_nets, vec!["chain.y"]); // implicit pad net

        assert_eq!(f.out_vars.len(), 1);
        assert_eq!(
            f.out_vars[0].binding,
            OutputBinding::Net("chain.y".to_string())
        );
    }

    #[test]
    fn default_parameters_apply_when_not_overridden() {
        let f = flat(
            "subckt s
pad out y
param g=7
block a const y=y k=g
endsubckt
block one s
",
        )
        .unwrap();
        let a = f.instance("one.a").unwrap();
        assert_eq!(a.params.reals, vec![7.0]);
        assert_eq!(a.output_nets, vec!["one.y"]);
    }

    #[test]
    fn defaults_may_reference_earlier_parameters() {
        let f = flat(
            "subckt s
pad out y
param a=2 b=a*3
block c const y=y k=b
endsubckt
block one s a=5
",
        )
        .unwrap();
        assert_eq!(f.instance("one.c").unwrap().params.reals, vec![15.0]);
    }

    #[test]
    fn recursive_subcircuits_are_rejected() {
        let err = flat(
            "subckt a
pad out y
block inner a y=y
endsubckt
block top a
",
        )
        .unwrap_err();
        assert!(err.to_string().contains("recursive"), "{err}");
        assert!(err.to_string().contains("a -> a"), "{err}");
    }

    #[test]
    fn unconnected_input_port_is_an_error() {
        let err = flat("block i integrator y=v\n").unwrap_err();
        assert!(
            err.to_string().contains("input port `x` of `i` is not connected"),
            "{err}"
        );
    }

    #[test]
    fn unconnected_input_pad_is_an_error() {
        let err = flat(
            "subckt s
pad in u
pad out y
block g gain x=u y=y
endsubckt
block one s
",
        )
        .unwrap_err();
        assert!(err.to_string().contains("input pad `u`"), "{err}");
    }

    #[test]
    fn unconnected_output_port_gets_a_private_net() {
        let f = flat("block src const\n").unwrap();
        assert_eq!(f.instances[0].output_nets, vec!["src.y"]);
    }

    #[test]
    fn virtual_net_rules_are_enforced() {
        let err = flat(
            "block a const y=>sig
block b const y=>sig
",
        )
        .unwrap_err();
        assert!(err.to_string().contains("more than one sink"), "{err}");

        let err = flat("block b integrator x=sig> y=out\n").unwrap_err();
        assert!(err.to_string().contains("no matching sink"), "{err}");
    }

    #[test]
    fn virtual_labels_are_scoped_to_their_subcircuit() {
        // The same label in two sibling scopes refers to two different
        // nets, and a sink in one scope does not satisfy a source in
        // another.
        let f = flat(
            "subckt s
pad out y
block a const y=>m
block b gain x=m> y=y
endsubckt
block one s
block two s
",
        )
        .unwrap();
        assert_eq!(f.instance("one.b").unwrap().input_nets, vec!["one.m"]);
        assert_eq!(f.instance("two.b").unwrap().input_nets, vec!["two.m"]);
    }

    #[test]
    fn integer_parameters_must_be_integral() {
        let err = flat("block p pwl20 n=2.5\n").unwrap_err();
        assert!(err.to_string().contains("must be an integer"), "{err}");
    }

    #[test]
    fn out_param_paths_resolve_to_block_observables() {
        let f = flat(
            "block src const y=u k=2
block m gain x=u y=v k=3
outvar probe = m.x
",
        )
        .unwrap();
        assert_eq!(
            f.out_vars[0].binding,
            OutputBinding::OutParam {
                instance: "m".to_string(),
                param: "x".to_string()
            }
        );
    }

    #[test]
    fn exports_resolve_through_outpar() {
        let f = flat(
            "subckt s
pad in u
pad out y
block lag lag_1 x=u y=y tr=0.5
outpar inner = lag.y
endsubckt
block src const y=a
block f1 s u=a y=b
outvar w = f1.inner
",
        )
        .unwrap();
        match &f.out_vars[0].binding {
            OutputBinding::Net(net) => assert_eq!(net, "b"),
            OutputBinding::OutParam { instance, param } => {
                assert_eq!(instance, "f1.lag");
                assert_eq!(param, "y");
            }
        }
    }

    #[test]
    fn unknown_output_path_gets_a_suggestion() {
        let err = flat(
            "block src const y=wrm
outvar w = wmr
",
        )
        .unwrap_err();
        let text = err.to_string();
        assert!(text.contains("unknown output path `wmr`"), "{text}");
        assert!(text.contains("did you mean `wrm`"), "{text}");
    }

    #[test]
    fn output_group_vars_may_be_direct_paths() {
        let f = flat(
            "block src const y=u
output file=o.csv vars=u
",
        )
        .unwrap();
        assert_eq!(f.out_vars.len(), 1);
        assert_eq!(f.out_vars[0].alias, "u");
        assert_eq!(f.out_vars[0].binding, OutputBinding::Net("u".to_string()));
    }

    #[test]
    fn output_group_with_unknown_var_fails() {
        let err = flat(
            "block src const y=u
output file=o.csv vars=nope
",
        )
        .unwrap_err();
        assert!(err.to_string().contains("unknown output path"), "{err}");
    }

    #[test]
    fn flat_text_round_trips_exactly() {
        let reg = registry();
        let f1 = flat(NESTED).unwrap();
        let text1 = f1.to_text(&reg);
        let nl2 = parse_str(&text1, "flat.fsn", &reg).unwrap();
        let f2 = flatten(&nl2, &reg).unwrap();
        assert_eq!(f1.instances, f2.instances);
        assert_eq!(f1.out_vars, f2.out_vars);
        assert_eq!(f1.outputs, f2.outputs);
        assert_eq!(f1.solve, f2.solve);
        let text2 = f2.to_text(&reg);
        assert_eq!(text1, text2, "canonical text must be a fixed point");
    }

    #[test]
    fn awkward_parameter_values_round_trip() {
        let reg = registry();
        let f1 = flat(
            "block s sine_source y=u a=0.1 f=1e-7 phi=-3.3333333333333335
solve t_end=0.30000000000000004
",
        )
        .unwrap();
        let text = f1.to_text(&reg);
        let f2 = flatten(&parse_str(&text, "flat.fsn", &reg).unwrap(), &reg).unwrap();
        assert_eq!(f1.instances, f2.instances);
        assert_eq!(f1.solve, f2.solve);
    }

    #[test]
    fn startup_overrides_survive_flattening() {
        let f = flat("block i integrator x=u y=v y_st=-2.5\n").unwrap();
        // `integrator` has one startup slot.
        assert_eq!(f.instance("i").unwrap().params.startup, vec![-2.5]);
    }

    #[test]
    fn flatten_is_idempotent_on_already_flat_netlists() {
        let reg = registry();
        let f1 = flat(NESTED).unwrap();
        let text1 = f1.to_text(&reg);
        let f2 = flatten(&parse_str(&text1, "f.fsn", &reg).unwrap(), &reg).unwrap();
        let text2 = f2.to_text(&reg);
        let f3 = flatten(&parse_str(&text2, "f.fsn", &reg).unwrap(), &reg).unwrap();
        assert_eq!(f2.instances, f3.instances);
    }
}
