//! Core library of the `flowsim` flow-graph ODE simulator.
//!
//! A simulation model is a netlist of *blocks* wired together by named
//! *nets*.  Each block is an instance of a *template* — a reusable
//! description of a transfer function (`sum_2`, `gain`, ...) or of a small
//! ODE system (`integrator`, `lag_1`, `indmc1`, ...).  The pipeline is:
//!
//! 1. [`netlist`] parses the textual netlist, expands subcircuits and
//!    resolves parameter expressions into a flat instance list.
//! 2. [`assembly`] turns the flat netlist into a [`assembly::SystemGraph`]:
//!    a square system pairing every net / auxiliary variable with its
//!    defining equation, plus the evaluation order used by explicit
//!    methods and the residual/Jacobian machinery used by implicit ones.
//! 3. [`solvers`] integrates the system over time.  The ten integration
//!    methods all implement the [`solvers::IntegrationMethod`] strategy
//!    trait and are looked up by name, so the method is a run-time choice.
//! 4. [`events`] keeps time steps honest around waveform corners (break
//!    points) and comparator switchings (crossing refinement).
//! 5. [`output`] records waveforms and writes CSV / SVG files.
//!
//! Block templates live in [`blocks`]; they are registered by name in a
//! [`blocks::TemplateRegistry`] and looked up when the netlist is parsed.

pub mod assembly;
pub mod blocks;
pub mod error;
pub mod events;
pub mod netlist;
pub mod output;
pub mod solvers;

pub use error::{Error, ErrorCategory};
