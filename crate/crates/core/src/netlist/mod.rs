//! Netlist parsing, subcircuit flattening, and output-path resolution.
//!
//! A netlist is a line-oriented text description of a block diagram:
//! block instances wired together by named nets, optional subcircuit
//! definitions (reusable diagram fragments with parameters), output
//! requests, and solver settings. Parsing produces a hierarchical
//! [`Netlist`]; [`flatten`] expands all subcircuit instances into a
//! [`FlatNetlist`] containing only library blocks, which is what the
//! assembly stage consumes.
//!
//! # Grammar
//!
//! One directive per line; `#` starts a comment; a trailing `\` joins
//! the next line. Identifiers are `[A-Za-z_][A-Za-z0-9_]*` (dots are
//! allowed in the interior of net and path names).
//!
//! ```text
//! include <path>
//! block <instance> <template> <port>=<net>... <param>=<value>...
//! subckt <name>
//!   pad in|out <name>
//!   param <name>=<expr>...
//!   derive <name> = <expr>
//!   block ...
//!   outpar <exported> = <path>
//! endsubckt
//! outvar <alias> = <path>
//! output file=<path> vars=<alias>,<alias>,... [interval=<expr>]
//! solve <key>=<value>...
//! ```
//!
//! A port binding of the form `port=>label` attaches the port to the
//! virtual net `label` and marks this occurrence as the label's single
//! *sink* (the defining end); `port=label>` attaches to the same net as
//! a *source* (a reading end). Virtual nets let diagrams avoid drawing
//! long wires; each label must have exactly one sink, and every source
//! must refer to an existing sink in the same scope.

pub mod expr;
mod flatten;
mod parser;

use std::collections::BTreeMap;

pub use expr::{parse_expr, ParamExpr};
pub use flatten::flatten;
pub use parser::{parse_file, parse_str};

use crate::blocks::ResolvedParams;

/// How a `port=value` token on a `block` line refers to a net.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NetToken {
    /// An ordinary named net.
    Plain(String),
    /// `port=>label`: the defining (sink) end of virtual net `label`.
    VirtualSink(String),
    /// `port=label>`: a reading (source) end of virtual net `label`.
    VirtualSource(String),
}

impl NetToken {
    /// The net label this token refers to, ignoring virtual direction.
    pub fn label(&self) -> &str {
        match self {
            NetToken::Plain(s) | NetToken::VirtualSink(s) | NetToken::VirtualSource(s) => s,
        }
    }
}

/// One `block` line: an instance of a library template or a subcircuit.
#[derive(Debug, Clone)]
pub struct Instance {
    pub name: String,
    /// Template or subcircuit name as written.
    pub template: String,
    /// Port (or pad) bindings in source order.
    pub bindings: Vec<(String, NetToken)>,
    /// Numeric parameter overrides (real, integer, and startup values for
    /// library blocks; parameter overrides for subcircuit instances).
    pub value_params: Vec<(String, ParamExpr)>,
    /// String-valued parameter overrides.
    pub word_params: Vec<(String, String)>,
    pub file: String,
    pub line: usize,
}

/// Direction of a subcircuit pad.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadDirection {
    Input,
    Output,
}

/// A subcircuit boundary connector.
#[derive(Debug, Clone)]
pub struct Pad {
    pub name: String,
    pub direction: PadDirection,
}

/// A `subckt ... endsubckt` definition.
#[derive(Debug, Clone)]
pub struct SubcircuitDef {
    pub name: String,
    pub pads: Vec<Pad>,
    /// Declared parameters with default expressions, in source order.
    /// Defaults may reference parameters declared earlier in the list.
    pub params: Vec<(String, ParamExpr)>,
    /// Derived local values, evaluated in source order after parameters.
    pub derives: Vec<(String, ParamExpr)>,
    pub instances: Vec<Instance>,
    /// `outpar` exports: exported name -> internal path.
    pub exports: Vec<(String, String)>,
    pub file: String,
    pub line: usize,
}

/// An `outvar` line: gives a short alias to an internal quantity.
#[derive(Debug, Clone)]
pub struct OutVar {
    pub alias: String,
    pub path: String,
    pub file: String,
    pub line: usize,
}

/// An `output` line: one file to be written after the run.
#[derive(Debug, Clone)]
pub struct OutputGroup {
    pub file_name: String,
    /// Aliases (from `outvar`) or direct paths, in column order.
    pub vars: Vec<String>,
    /// Fixed sampling interval; `None` records every accepted step.
    pub interval: Option<f64>,
    pub line: usize,
}

/// Equality is structural; the diagnostic `line` is excluded (see
/// [`FlatInstance`]).
impl PartialEq for OutputGroup {
    fn eq(&self, other: &Self) -> bool {
        self.file_name == other.file_name
            && self.vars == other.vars
            && self.interval == other.interval
    }
}

/// Solver settings from `solve` lines. Every field is optional so the
/// command line can distinguish "set in the netlist" from "defaulted";
/// precedence is command line over netlist over built-in defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveSpec {
    pub method: Option<String>,
    pub t_start: Option<f64>,
    pub t_end: Option<f64>,
    pub h_init: Option<f64>,
    pub h_min: Option<f64>,
    pub h_max: Option<f64>,
    pub tol: Option<f64>,
    pub newton_tol: Option<f64>,
    pub newton_tol_rel: Option<f64>,
    pub newton_max_iters: Option<u32>,
    pub events: Option<bool>,
    pub extrapolation: Option<String>,
}

/// Parsed (still hierarchical) netlist.
#[derive(Debug, Clone, Default)]
pub struct Netlist {
    pub top: Vec<Instance>,
    pub subcircuits: BTreeMap<String, SubcircuitDef>,
    pub out_vars: Vec<OutVar>,
    pub outputs: Vec<OutputGroup>,
    pub solve: SolveSpec,
}

/// A fully resolved library-block instance in a flat netlist.
#[derive(Debug, Clone)]
pub struct FlatInstance {
    /// Hierarchical name, e.g. `motor.int_psids`.
    pub name: String,
    pub template_name: String,
    /// Canonical net per input port, in template port order.
    pub input_nets: Vec<String>,
    /// Canonical net per output port, in template port order.
    pub output_nets: Vec<String>,
    pub params: ResolvedParams,
    /// Line of the originating `block` directive (for diagnostics).
    pub origin_line: usize,
}

/// Equality is structural: two instances are equal when they describe
/// the same block with the same wiring and parameters. The diagnostic
/// `origin_line` is deliberately excluded so that a netlist and its
/// canonical flat rendering compare equal.
impl PartialEq for FlatInstance {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.template_name == other.template_name
            && self.input_nets == other.input_nets
            && self.output_nets == other.output_nets
            && self.params == other.params
    }
}

/// Where a resolved output path points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutputBinding {
    /// The value on a net (an input or output signal).
    Net(String),
    /// A named observable computed by a block instance.
    OutParam { instance: String, param: String },
}

/// An output alias resolved against the flat netlist.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedOutVar {
    pub alias: String,
    pub path: String,
    pub binding: OutputBinding,
}

/// Result of flattening: library-block instances only, with all
/// subcircuit structure expanded and all parameters evaluated.
#[derive(Debug, Clone, Default)]
pub struct FlatNetlist {
    /// Instances sorted by hierarchical name.
    pub instances: Vec<FlatInstance>,
    pub out_vars: Vec<ResolvedOutVar>,
    pub outputs: Vec<OutputGroup>,
    pub solve: SolveSpec,
    /// Every hierarchical net name (pads, subcircuit-local nets,
    /// virtual labels) mapped to its canonical flat net.
    pub net_aliases: BTreeMap<String, String>,
    /// `outpar` exports: qualified exported path -> qualified target path.
    pub exports: BTreeMap<String, String>,
}

impl FlatNetlist {
    /// All canonical net names, sorted and de-duplicated.
    pub fn canonical_nets(&self) -> Vec<String> {
        let mut nets: Vec<String> = self
            .instances
            .iter()
            .flat_map(|inst| inst.input_nets.iter().chain(inst.output_nets.iter()))
            .cloned()
            .collect();
        nets.sort();
        nets.dedup();
        nets
    }

    /// Looks up the instance with the given hierarchical name.
    pub fn instance(&self, name: &str) -> Option<&FlatInstance> {
        self.instances
            .binary_search_by(|inst| inst.name.as_str().cmp(name))
            .ok()
            .map(|i| &self.instances[i])
    }
}
