//! Line-oriented netlist parser.
//!
//! Parsing runs in two phases. Phase A reads files (following
//! `include` directives), strips comments, joins continuation lines,
//! and records every directive structurally; subcircuit definitions are
//! collected along the way. Phase B classifies each `key=value` pair on
//! `block` lines against the referenced template's declared ports and
//! parameters — this has to wait until all subcircuits are known, since
//! a block line may instantiate a subcircuit defined later in the file
//! or in an included file.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use super::expr::{parse_expr, ParamExpr};
use super::{
    Instance, NetToken, Netlist, OutVar, OutputGroup, Pad, PadDirection, SolveSpec, SubcircuitDef,
};
use crate::blocks::{ExtrapolationMode, TemplateRegistry};
use crate::error::NetlistError;

const MAX_INCLUDE_DEPTH: usize = 32;

/// Parses a netlist from a file on disk. `include` paths are resolved
/// relative to the directory of the file that contains them.
pub fn parse_file(path: &Path, registry: &TemplateRegistry) -> Result<Netlist, NetlistError> {
    let mut session = Session::new(registry);
    session.read_file(path)?;
    session.finish()
}

/// Parses a netlist from in-memory text. `file_label` is used in
/// diagnostics; `include` paths are resolved relative to the current
/// working directory.
pub fn parse_str(
    text: &str,
    file_label: &str,
    registry: &TemplateRegistry,
) -> Result<Netlist, NetlistError> {
    let mut session = Session::new(registry);
    session.read_text(text, file_label, Path::new("."))?;
    session.finish()
}

/// One raw `key=value` pair from a `block` line, kept until the
/// referenced template is known.
#[derive(Debug, Clone)]
struct RawKv {
    key: String,
    value: String,
    line: usize,
    value_col: usize,
}

#[derive(Debug, Clone)]
struct RawInstance {
    name: String,
    template: String,
    template_col: usize,
    kvs: Vec<RawKv>,
    file: String,
    line: usize,
}

struct RawSub {
    def: SubcircuitDef,
    raw_instances: Vec<RawInstance>,
}

struct Session<'r> {
    registry: &'r TemplateRegistry,
    top_raw: Vec<RawInstance>,
    subs: Vec<RawSub>,
    out_vars: Vec<OutVar>,
    outputs: Vec<OutputGroup>,
    solve: SolveSpec,
    include_stack: Vec<PathBuf>,
}

/// A comment-stripped, continuation-joined directive line.
struct Logical {
    number: usize,
    tokens: Vec<(usize, String)>,
}

impl<'r> Session<'r> {
    fn new(registry: &'r TemplateRegistry) -> Self {
        Self {
            registry,
            top_raw: Vec::new(),
            subs: Vec::new(),
            out_vars: Vec::new(),
            outputs: Vec::new(),
            solve: SolveSpec::default(),
            include_stack: Vec::new(),
        }
    }

    fn read_file(&mut self, path: &Path) -> Result<(), NetlistError> {
        let canonical = path.canonicalize().unwrap_or_else(|_| path.to_path_buf());
        if self.include_stack.contains(&canonical) {
            return Err(NetlistError::Semantic {
                context: path.display().to_string(),
                message: "include cycle detected".into(),
            });
        }
        if self.include_stack.len() >= MAX_INCLUDE_DEPTH {
            return Err(NetlistError::Semantic {
                context: path.display().to_string(),
                message: format!("include nesting deeper than {MAX_INCLUDE_DEPTH} levels"),
            });
        }
        let text = fs::read_to_string(path).map_err(|source| NetlistError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        self.include_stack.push(canonical);
        let result = self.read_text(&text, &path.display().to_string(), &base);
        self.include_stack.pop();
        result
    }

    fn read_text(&mut self, text: &str, file: &str, base: &Path) -> Result<(), NetlistError> {
        // Subcircuit bodies must open and close within a single file, so
        // the "currently open definition" is local to this call.
        let mut open_sub: Option<RawSub> = None;

        for logical in assemble_logical_lines(text, file)? {
            let Logical { number, tokens } = logical;
            if tokens.is_empty() {
                continue;
            }
            let (kw_col, keyword) = (&tokens[0].0, tokens[0].1.as_str());
            let err = |col: usize, message: String| NetlistError::Syntax {
                file: file.to_string(),
                line: number,
                column: col,
                message,
            };

            match keyword {
                "include" => {
                    if open_sub.is_some() {
                        return Err(err(*kw_col, "`include` is not allowed inside a subcircuit definition".into()));
                    }
                    if tokens.len() != 2 {
                        return Err(err(*kw_col, "usage: include <path>".into()));
                    }
                    let target = base.join(&tokens[1].1);
                    self.read_file(&target)?;
                }
                "block" => {
                    let raw = parse_block_line(&tokens, file, number)?;
                    let scope = match &mut open_sub {
                        Some(sub) => &mut sub.raw_instances,
                        None => &mut self.top_raw,
                    };
                    if scope.iter().any(|other| other.name == raw.name) {
                        return Err(err(
                            tokens[1].0,
                            format!("duplicate instance name `{}` in this scope", raw.name),
                        ));
                    }
                    scope.push(raw);
                }
                "subckt" => {
                    if open_sub.is_some() {
                        return Err(err(*kw_col, "subcircuit definitions cannot be nested".into()));
                    }
                    if tokens.len() != 2 {
                        return Err(err(*kw_col, "usage: subckt <name>".into()));
                    }
                    let name = tokens[1].1.clone();
                    validate_name(&name, false, file, number, tokens[1].0)?;
                    if self.registry.contains(&name) {
                        return Err(err(
                            tokens[1].0,
                            format!("subcircuit name `{name}` collides with a library template"),
                        ));
                    }
                    if self.subs.iter().any(|s| s.def.name == name) {
                        return Err(err(
                            tokens[1].0,
                            format!("subcircuit `{name}` is defined more than once"),
                        ));
                    }
                    open_sub = Some(RawSub {
                        def: SubcircuitDef {
                            name,
                            pads: Vec::new(),
                            params: Vec::new(),
                            derives: Vec::new(),
                            instances: Vec::new(),
                            exports: Vec::new(),
                            file: file.to_string(),
                            line: number,
                        },
                        raw_instances: Vec::new(),
                    });
                }
                "endsubckt" => match open_sub.take() {
                    Some(sub) => self.subs.push(sub),
                    None => {
                        return Err(err(*kw_col, "`endsubckt` without a matching `subckt`".into()))
                    }
                },
                "pad" => {
                    let sub = open_sub.as_mut().ok_or_else(|| {
                        err(*kw_col, "`pad` is only allowed inside a subcircuit definition".into())
                    })?;
                    if tokens.len() != 3 {
                        return Err(err(*kw_col, "usage: pad in|out <name>".into()));
                    }
                    let direction = match tokens[1].1.as_str() {
                        "in" => PadDirection::Input,
                        "out" => PadDirection::Output,
                        other => {
                            return Err(err(
                                tokens[1].0,
                                format!("pad direction must be `in` or `out`, found `{other}`"),
                            ))
                        }
                    };
                    let name = tokens[2].1.clone();
                    validate_name(&name, false, file, number, tokens[2].0)?;
                    if sub.def.pads.iter().any(|p| p.name == name) {
                        return Err(err(tokens[2].0, format!("duplicate pad `{name}`")));
                    }
                    sub.def.pads.push(Pad { name, direction });
                }
                "param" => {
                    let sub = open_sub.as_mut().ok_or_else(|| {
                        err(
                            *kw_col,
                            "`param` is only allowed inside a subcircuit definition".into(),
                        )
                    })?;
                    if tokens.len() < 2 {
                        return Err(err(*kw_col, "usage: param <name>=<expr>...".into()));
                    }
                    for (col, tok) in &tokens[1..] {
                        let (key, value, value_col) = split_kv(tok, *col, file, number)?;
                        validate_name(&key, false, file, number, *col)?;
                        if sub.def.params.iter().any(|(n, _)| *n == key) {
                            return Err(err(*col, format!("duplicate parameter `{key}`")));
                        }
                        let expr = parse_expr_at(&value, file, number, value_col)?;
                        sub.def.params.push((key, expr));
                    }
                }
                "derive" => {
                    let sub = open_sub.as_mut().ok_or_else(|| {
                        err(
                            *kw_col,
                            "`derive` is only allowed inside a subcircuit definition".into(),
                        )
                    })?;
                    let (name, value, col) = name_eq_rest(&tokens, file, number, "derive <name> = <expr>")?;
                    validate_name(&name, false, file, number, col)?;
                    if sub.def.params.iter().any(|(n, _)| *n == name)
                        || sub.def.derives.iter().any(|(n, _)| *n == name)
                    {
                        return Err(err(col, format!("`{name}` is already defined in this subcircuit")));
                    }
                    let expr = parse_expr_at(&value, file, number, col)?;
                    sub.def.derives.push((name, expr));
                }
                "outpar" => {
                    let sub = open_sub.as_mut().ok_or_else(|| {
                        err(
                            *kw_col,
                            "`outpar` is only allowed inside a subcircuit definition".into(),
                        )
                    })?;
                    let (name, path, col) =
                        name_eq_rest(&tokens, file, number, "outpar <exported> = <path>")?;
                    validate_name(&name, false, file, number, col)?;
                    validate_name(&path, true, file, number, col)?;
                    if sub.def.exports.iter().any(|(n, _)| *n == name) {
                        return Err(err(col, format!("duplicate outpar `{name}`")));
                    }
                    sub.def.exports.push((name, path));
                }
                "outvar" => {
                    if open_sub.is_some() {
                        return Err(err(*kw_col, "`outvar` is not allowed inside a subcircuit definition (use `outpar`)".into()));
                    }
                    let (alias, path, col) =
                        name_eq_rest(&tokens, file, number, "outvar <alias> = <path>")?;
                    validate_name(&alias, false, file, number, col)?;
                    validate_name(&path, true, file, number, col)?;
                    if self.out_vars.iter().any(|v| v.alias == alias) {
                        return Err(err(col, format!("duplicate outvar alias `{alias}`")));
                    }
                    self.out_vars.push(OutVar {
                        alias,
                        path,
                        file: file.to_string(),
                        line: number,
                    });
                }
                "output" => {
                    if open_sub.is_some() {
                        return Err(err(*kw_col, "`output` is not allowed inside a subcircuit definition".into()));
                    }
                    self.outputs.push(parse_output_line(&tokens, file, number)?);
                }
                "solve" => {
                    if open_sub.is_some() {
                        return Err(err(*kw_col, "`solve` is not allowed inside a subcircuit definition".into()));
                    }
                    if tokens.len() < 2 {
                        return Err(err(*kw_col, "usage: solve <key>=<value>...".into()));
                    }
                    for (col, tok) in &tokens[1..] {
                        let (key, value, value_col) = split_kv(tok, *col, file, number)?;
                        set_solve_key(&mut self.solve, &key, &value, file, number, *col, value_col)?;
                    }
                }
                other => {
                    return Err(err(
                        *kw_col,
                        format!(
                            "unknown directive `{other}` (expected one of: include, block, \
                             subckt, endsubckt, pad, param, derive, outpar, outvar, output, solve)"
                        ),
                    ))
                }
            }
        }

        if let Some(sub) = open_sub {
            return Err(NetlistError::Syntax {
                file: file.to_string(),
                line: sub.def.line,
                column: 1,
                message: format!(
                    "subcircuit `{}` is missing its `endsubckt`",
                    sub.def.name
                ),
            });
        }
        Ok(())
    }

    /// Phase B: classify block-line bindings now that every subcircuit
    /// definition is known.
    fn finish(self) -> Result<Netlist, NetlistError> {
        let Session {
            registry,
            top_raw,
            subs,
            out_vars,
            outputs,
            solve,
            ..
        } = self;

        let mut subcircuits: BTreeMap<String, SubcircuitDef> = BTreeMap::new();
        let mut raw_bodies: Vec<(String, Vec<RawInstance>)> = Vec::new();
        for sub in subs {
            raw_bodies.push((sub.def.name.clone(), sub.raw_instances));
            subcircuits.insert(sub.def.name.clone(), sub.def);
        }

        let mut top = Vec::with_capacity(top_raw.len());
        for raw in top_raw {
            top.push(classify_instance(raw, registry, &subcircuits)?);
        }
        for (sub_name, raws) in raw_bodies {
            let mut instances = Vec::with_capacity(raws.len());
            for raw in raws {
                instances.push(classify_instance(raw, registry, &subcircuits)?);
            }
            subcircuits
                .get_mut(&sub_name)
                .expect("subcircuit body registered above")
                .instances = instances;
        }

        Ok(Netlist {
            top,
            subcircuits,
            out_vars,
            outputs,
            solve,
        })
    }
}

/// Splits text into comment-stripped, continuation-joined logical lines
/// and tokenizes each. Columns are 1-based byte offsets into the
/// physical source line. A `"`-quoted span keeps whitespace and `#`.
fn assemble_logical_lines(text: &str, file: &str) -> Result<Vec<Logical>, NetlistError> {
    let mut out = Vec::new();
    let mut pending: Option<Logical> = None;

    for (idx, raw) in text.lines().enumerate() {
        let number = idx + 1;
        let trimmed = raw.trim_end();
        let (body, continued) = match trimmed.strip_suffix('\\') {
            Some(rest) => (rest, true),
            None => (trimmed, false),
        };
        let mut tokens = tokenize(body, file, number)?;

        let mut logical = match pending.take() {
            Some(mut prev) => {
                prev.tokens.append(&mut tokens);
                prev
            }
            None => Logical { number, tokens },
        };
        if continued {
            pending = Some(logical);
        } else {
            if !logical.tokens.is_empty() {
                out.push(std::mem::replace(
                    &mut logical,
                    Logical {
                        number: 0,
                        tokens: Vec::new(),
                    },
                ));
            }
            let _ = logical;
        }
    }
    if let Some(last) = pending {
        if !last.tokens.is_empty() {
            out.push(last);
        }
    }
    Ok(out)
}

fn tokenize(line: &str, file: &str, number: usize) -> Result<Vec<(usize, String)>, NetlistError> {
    let mut tokens: Vec<(usize, String)> = Vec::new();
    let mut current = String::new();
    let mut start = 0usize;
    let mut in_quotes = false;
    let mut quote_start = 0usize;

    for (i, ch) in line.char_indices() {
        if in_quotes {
            if ch == '"' {
                in_quotes = false;
            } else {
                current.push(ch);
            }
            continue;
        }
        match ch {
            '"' => {
                if current.is_empty() {
                    start = i;
                }
                quote_start = i;
                in_quotes = true;
            }
            '#' => break,
            c if c.is_whitespace() => {
                if !current.is_empty() {
                    tokens.push((start + 1, std::mem::take(&mut current)));
                }
            }
            c => {
                if current.is_empty() {
                    start = i;
                }
                current.push(c);
            }
        }
    }
    if in_quotes {
        return Err(NetlistError::Syntax {
            file: file.to_string(),
            line: number,
            column: quote_start + 1,
            message: "unterminated quote".into(),
        });
    }
    if !current.is_empty() {
        tokens.push((start + 1, current));
    }
    Ok(tokens)
}

/// Splits a `key=value` token at its first `=`.
fn split_kv(
    token: &str,
    col: usize,
    file: &str,
    line: usize,
) -> Result<(String, String, usize), NetlistError> {
    match token.split_once('=') {
        Some((key, value)) if !key.is_empty() && !value.is_empty() => Ok((
            key.to_string(),
            value.to_string(),
            col + key.len() + 1,
        )),
        _ => Err(NetlistError::Syntax {
            file: file.to_string(),
            line,
            column: col,
            message: format!("expected `key=value`, found `{token}`"),
        }),
    }
}

/// For directives of the form `keyword <name> = <rest with spaces>`:
/// joins all tokens after the keyword and splits at the first `=`.
/// Returns (name, rest, column of the first payload token).
fn name_eq_rest(
    tokens: &[(usize, String)],
    file: &str,
    line: usize,
    usage: &str,
) -> Result<(String, String, usize), NetlistError> {
    let err = |col: usize, message: String| NetlistError::Syntax {
        file: file.to_string(),
        line,
        column: col,
        message,
    };
    if tokens.len() < 2 {
        return Err(err(tokens[0].0, format!("usage: {usage}")));
    }
    let col = tokens[1].0;
    let joined = tokens[1..]
        .iter()
        .map(|(_, t)| t.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    match joined.split_once('=') {
        Some((name, rest)) => {
            let name = name.trim().to_string();
            let rest = rest.trim().to_string();
            if name.is_empty() || rest.is_empty() {
                return Err(err(col, format!("usage: {usage}")));
            }
            Ok((name, rest, col))
        }
        None => Err(err(col, format!("usage: {usage}"))),
    }
}

fn parse_expr_at(
    text: &str,
    file: &str,
    line: usize,
    col: usize,
) -> Result<ParamExpr, NetlistError> {
    parse_expr(text).map_err(|e| NetlistError::Syntax {
        file: file.to_string(),
        line,
        column: col + e.offset,
        message: format!("in expression `{text}`: {}", e.message),
    })
}

fn parse_block_line(
    tokens: &[(usize, String)],
    file: &str,
    line: usize,
) -> Result<RawInstance, NetlistError> {
    let err = |col: usize, message: String| NetlistError::Syntax {
        file: file.to_string(),
        line,
        column: col,
        message,
    };
    if tokens.len() < 3 {
        return Err(err(
            tokens[0].0,
            "usage: block <instance> <template> <port>=<net>... <param>=<value>...".into(),
        ));
    }
    let name = tokens[1].1.clone();
    validate_name(&name, true, file, line, tokens[1].0)?;
    let template = tokens[2].1.clone();
    validate_name(&template, false, file, line, tokens[2].0)?;

    let mut kvs: Vec<RawKv> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (col, tok) in &tokens[3..] {
        let (key, value, value_col) = split_kv(tok, *col, file, line)?;
        if !seen.insert(key.clone()) {
            return Err(err(*col, format!("duplicate `{key}=` on this block line")));
        }
        kvs.push(RawKv {
            key,
            value,
            line,
            value_col,
        });
    }
    Ok(RawInstance {
        name,
        template,
        template_col: tokens[2].0,
        kvs,
        file: file.to_string(),
        line,
    })
}

fn parse_output_line(
    tokens: &[(usize, String)],
    file: &str,
    line: usize,
) -> Result<OutputGroup, NetlistError> {
    let err = |col: usize, message: String| NetlistError::Syntax {
        file: file.to_string(),
        line,
        column: col,
        message,
    };
    let mut file_name: Option<String> = None;
    let mut vars: Option<Vec<String>> = None;
    let mut interval: Option<f64> = None;
    for (col, tok) in &tokens[1..] {
        let (key, value, value_col) = split_kv(tok, *col, file, line)?;
        match key.as_str() {
            "file" => file_name = Some(value),
            "vars" => {
                let list: Vec<String> = value
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
                if list.is_empty() {
                    return Err(err(value_col, "`vars=` must list at least one variable".into()));
                }
                for v in &list {
                    validate_name(v, true, file, line, value_col)?;
                }
                vars = Some(list);
            }
            "interval" => {
                let v = super::expr::eval_expr_text(
                    &value,
                    &BTreeMap::new(),
                    file,
                    line,
                    value_col,
                )?;
                if !(v.is_finite() && v > 0.0) {
                    return Err(err(
                        value_col,
                        format!("`interval=` must be a positive number, got {v}"),
                    ));
                }
                interval = Some(v);
            }
            other => {
                return Err(err(
                    *col,
                    format!("unknown output option `{other}` (expected file, vars, interval)"),
                ))
            }
        }
    }
    let file_name = file_name
        .ok_or_else(|| err(tokens[0].0, "`output` requires `file=<path>`".into()))?;
    let vars =
        vars.ok_or_else(|| err(tokens[0].0, "`output` requires `vars=<list>`".into()))?;
    Ok(OutputGroup {
        file_name,
        vars,
        interval,
        line,
    })
}

fn set_solve_key(
    solve: &mut SolveSpec,
    key: &str,
    value: &str,
    file: &str,
    line: usize,
    key_col: usize,
    value_col: usize,
) -> Result<(), NetlistError> {
    let err = |col: usize, message: String| NetlistError::Syntax {
        file: file.to_string(),
        line,
        column: col,
        message,
    };
    let number = |value: &str| -> Result<f64, NetlistError> {
        super::expr::eval_expr_text(value, &BTreeMap::new(), file, line, value_col)
    };
    match key {
        "method" => solve.method = Some(value.to_string()),
        "t_start" => solve.t_start = Some(number(value)?),
        "t_end" => solve.t_end = Some(number(value)?),
        "h_init" => solve.h_init = Some(number(value)?),
        "h_min" => solve.h_min = Some(number(value)?),
        "h_max" => solve.h_max = Some(number(value)?),
        "tol" => solve.tol = Some(number(value)?),
        "newton_tol" => solve.newton_tol = Some(number(value)?),
        "newton_tol_rel" => solve.newton_tol_rel = Some(number(value)?),
        "newton_max_iters" => {
            let v = number(value)?;
            if v.fract() != 0.0 || v < 1.0 || v > u32::MAX as f64 {
                return Err(err(
                    value_col,
                    format!("`newton_max_iters` must be a positive integer, got {value}"),
                ));
            }
            solve.newton_max_iters = Some(v as u32);
        }
        "events" => {
            solve.events = Some(match value {
                "on" | "true" | "1" => true,
                "off" | "false" | "0" => false,
                other => {
                    return Err(err(
                        value_col,
                        format!("`events` must be on or off, got `{other}`"),
                    ))
                }
            });
        }
        "extrapolation" => {
            ExtrapolationMode::from_name(value).ok_or_else(|| {
                err(
                    value_col,
                    format!("`extrapolation` must be linear or quadratic, got `{value}`"),
                )
            })?;
            solve.extrapolation = Some(value.to_string());
        }
        other => {
            return Err(err(
                key_col,
                format!(
                    "unknown solve option `{other}` (expected one of: method, t_start, t_end, \
                     h_init, h_min, h_max, tol, newton_tol, newton_tol_rel, newton_max_iters, \
                     events, extrapolation)"
                ),
            ))
        }
    }
    Ok(())
}

/// Classifies a raw block line against the referenced template or
/// subcircuit: each `key=` becomes a port binding, a numeric parameter
/// expression, or a string parameter.
fn classify_instance(
    raw: RawInstance,
    registry: &TemplateRegistry,
    subcircuits: &BTreeMap<String, SubcircuitDef>,
) -> Result<Instance, NetlistError> {
    let RawInstance {
        name,
        template,
        template_col,
        kvs,
        file,
        line,
    } = raw;

    enum Slot {
        Port,
        Value,
        Word,
    }

    let lookup: Box<dyn Fn(&str) -> Option<Slot>>;
    let mut known: Vec<String> = Vec::new();

    if let Some(tmpl) = registry.get(&template) {
        let desc = tmpl.descriptor();
        known.extend(desc.inputs.iter().map(|s| s.to_string()));
        known.extend(desc.outputs.iter().map(|s| s.to_string()));
        known.extend(desc.real_params.iter().map(|p| p.name.to_string()));
        known.extend(desc.integer_params.iter().map(|p| p.name.to_string()));
        known.extend(desc.string_params.iter().map(|p| p.name.to_string()));
        known.extend(desc.startup_params.iter().map(|p| p.name.to_string()));
        let desc = desc.clone();
        lookup = Box::new(move |key: &str| {
            if desc.inputs.iter().any(|p| *p == key) || desc.outputs.iter().any(|p| *p == key) {
                Some(Slot::Port)
            } else if desc.real_params.iter().any(|p| p.name == key)
                || desc.integer_params.iter().any(|p| p.name == key)
                || desc.startup_params.iter().any(|p| p.name == key)
            {
                Some(Slot::Value)
            } else if desc.string_params.iter().any(|p| p.name == key) {
                Some(Slot::Word)
            } else {
                None
            }
        });
    } else if let Some(sub) = subcircuits.get(&template) {
        known.extend(sub.pads.iter().map(|p| p.name.clone()));
        known.extend(sub.params.iter().map(|(n, _)| n.clone()));
        let pads: BTreeSet<String> = sub.pads.iter().map(|p| p.name.clone()).collect();
        let params: BTreeSet<String> = sub.params.iter().map(|(n, _)| n.clone()).collect();
        lookup = Box::new(move |key: &str| {
            if pads.contains(key) {
                Some(Slot::Port)
            } else if params.contains(key) {
                Some(Slot::Value)
            } else {
                None
            }
        });
    } else {
        let mut candidates: Vec<String> = registry.names().map(|s| s.to_string()).collect();
        candidates.extend(subcircuits.keys().cloned());
        let hint = suggestion(&template, candidates.iter().map(|s| s.as_str()));
        return Err(NetlistError::Syntax {
            file,
            line,
            column: template_col,
            message: format!(
                "unknown template or subcircuit `{template}`{}",
                hint.map(|h| format!(" (did you mean `{h}`?)")).unwrap_or_default()
            ),
        });
    }

    let mut bindings = Vec::new();
    let mut value_params = Vec::new();
    let mut word_params = Vec::new();
    for kv in kvs {
        match lookup(&kv.key) {
            Some(Slot::Port) => {
                let token = parse_net_token(&kv.value, &file, kv.line, kv.value_col)?;
                bindings.push((kv.key, token));
            }
            Some(Slot::Value) => {
                let expr = parse_expr_at(&kv.value, &file, kv.line, kv.value_col)?;
                value_params.push((kv.key, expr));
            }
            Some(Slot::Word) => {
                word_params.push((kv.key, kv.value));
            }
            None => {
                let hint = suggestion(&kv.key, known.iter().map(|s| s.as_str()));
                return Err(NetlistError::Syntax {
                    file,
                    line: kv.line,
                    column: kv.value_col - kv.key.len() - 1,
                    message: format!(
                        "`{template}` has no port or parameter named `{}`{}",
                        kv.key,
                        hint.map(|h| format!(" (did you mean `{h}`?)")).unwrap_or_default()
                    ),
                });
            }
        }
    }

    Ok(Instance {
        name,
        template,
        bindings,
        value_params,
        word_params,
        file,
        line,
    })
}

fn parse_net_token(
    value: &str,
    file: &str,
    line: usize,
    col: usize,
) -> Result<NetToken, NetlistError> {
    let token = if let Some(label) = value.strip_prefix('>') {
        NetToken::VirtualSink(label.to_string())
    } else if let Some(label) = value.strip_suffix('>') {
        NetToken::VirtualSource(label.to_string())
    } else {
        NetToken::Plain(value.to_string())
    };
    validate_name(token.label(), true, file, line, col)?;
    Ok(token)
}

/// Validates an identifier. With `allow_dots`, dots may appear in the
/// interior (hierarchical names); leading/trailing/double dots are
/// always rejected.
pub(crate) fn validate_name(
    name: &str,
    allow_dots: bool,
    file: &str,
    line: usize,
    col: usize,
) -> Result<(), NetlistError> {
    let bad = |message: String| NetlistError::Syntax {
        file: file.to_string(),
        line,
        column: col,
        message,
    };
    if name.is_empty() {
        return Err(bad("empty name".into()));
    }
    let bytes = name.as_bytes();
    let first_ok = bytes[0].is_ascii_alphabetic() || bytes[0] == b'_';
    if !first_ok {
        return Err(bad(format!(
            "invalid name `{name}`: must start with a letter or `_`"
        )));
    }
    let mut prev_dot = false;
    for (i, &b) in bytes.iter().enumerate() {
        let ok = b.is_ascii_alphanumeric() || b == b'_' || (b == b'.' && allow_dots);
        if !ok {
            return Err(bad(format!(
                "invalid name `{name}`: unexpected character `{}`",
                name[i..].chars().next().unwrap()
            )));
        }
        if b == b'.' {
            if prev_dot || i == bytes.len() - 1 {
                return Err(bad(format!("invalid name `{name}`: malformed dotted path")));
            }
            prev_dot = true;
        } else {
            prev_dot = false;
        }
    }
    Ok(())
}

/// Nearest candidate by edit distance, if close enough to be a
/// plausible typo.
pub(crate) fn suggestion<'a>(
    name: &str,
    candidates: impl Iterator<Item = &'a str>,
) -> Option<String> {
    let mut best: Option<(usize, &str)> = None;
    for cand in candidates {
        let d = edit_distance(name, cand);
        if best.map_or(true, |(bd, bc)| d < bd || (d == bd && cand < bc)) {
            best = Some((d, cand));
        }
    }
    let (d, cand) = best?;
    let budget = (name.len().max(cand.len()) / 3).max(2);
    (d <= budget).then(|| cand.to_string())
}

fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            cur[j] = (prev[j] + 1).min(cur[j - 1] + 1).min(prev[j - 1] + cost);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}
