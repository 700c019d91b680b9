//! Waveform capture and serialization: tabulates requested signals at
//! accepted time points (either every point or resampled onto a fixed
//! grid), writes full-precision CSV, parses it back, and renders
//! stand-alone SVG plots.
//!
//! Recording is a pure observer of the solver history; nothing here
//! feeds back into the simulation.

use std::fmt::Write as _;
use std::path::Path;

use crate::assembly::{StateVector, SystemGraph};
use crate::error::{AssemblyError, Error, OutputError};

/// A rectangular waveform table: a `time` column plus one column per
/// requested signal. Row width is constant and times strictly increase.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformTable {
    /// Column labels; `columns[0]` is always `time`.
    pub columns: Vec<String>,
    /// Rows of `columns.len()` values each, in time order.
    pub rows: Vec<Vec<f64>>,
}

impl WaveformTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// The values of one column, by name.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }
}

/// When rows are emitted relative to the accepted-point stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    /// One row per accepted point.
    EveryPoint,
    /// One row per grid time `t0 + k*interval`, taken from the nearest
    /// accepted point at or after the grid time; no interpolation, so
    /// event-resolved waveform corners survive resampling.
    FixedInterval(f64),
}

/// Where a channel's value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelBinding {
    /// A dense variable (net or auxiliary state) by index.
    Var(usize),
    /// A derived output parameter: block index, out-param position.
    OutParam { block: usize, param: usize },
}

impl ChannelBinding {
    pub fn value(&self, graph: &SystemGraph, x: &StateVector) -> Result<f64, AssemblyError> {
        match *self {
            ChannelBinding::Var(i) => Ok(x.values[i]),
            ChannelBinding::OutParam { block, param } => {
                let values = graph.out_param_values(&graph.blocks()[block], x)?;
                Ok(values[param])
            }
        }
    }
}

/// Resolves a signal path to a binding: first as a variable (net or
/// `instance.aux`), then as `instance.out_param`.
pub fn resolve_channel(graph: &SystemGraph, path: &str) -> Result<ChannelBinding, OutputError> {
    if let Some(idx) = graph.var_index(path) {
        return Ok(ChannelBinding::Var(idx));
    }
    if let Some((inst, param)) = path.rsplit_once('.') {
        if let Some(block) = graph.block_by_name(inst) {
            let desc = block.template.descriptor();
            if let Some(p) = desc.out_params.iter().position(|n| *n == param) {
                let b = graph
                    .blocks()
                    .iter()
                    .position(|bb| bb.name == inst)
                    .expect("block_by_name and blocks() agree");
                return Ok(ChannelBinding::OutParam { block: b, param: p });
            }
        }
    }
    let mut available: Vec<String> = (0..graph.n_vars())
        .map(|i| graph.var_name(i).to_string())
        .collect();
    for block in graph.blocks() {
        for p in block.template.descriptor().out_params.iter() {
            available.push(format!("{}.{}", block.name, p));
        }
    }
    Err(OutputError::UnknownColumn {
        name: path.to_string(),
        available: available.join(", "),
    })
}

/// Relative tolerance when matching accepted times against grid times.
fn grid_tol(interval: f64) -> f64 {
    1e-9 * interval
}

/// Incremental row collector implementing both sampling modes.
#[derive(Debug, Clone)]
pub struct Recorder {
    columns: Vec<String>,
    sampling: Sampling,
    rows: Vec<Vec<f64>>,
    t_first: Option<f64>,
    /// Index of the next pending grid time (fixed-interval mode).
    next_k: u64,
}

impl Recorder {
    /// `labels` are the signal columns; the `time` column is implicit.
    pub fn new(labels: &[String], sampling: Sampling) -> Recorder {
        let mut columns = Vec::with_capacity(labels.len() + 1);
        columns.push("time".to_string());
        columns.extend(labels.iter().cloned());
        Recorder {
            columns,
            sampling,
            rows: Vec::new(),
            t_first: None,
            next_k: 0,
        }
    }

    /// Offers one accepted point. Rows are appended according to the
    /// sampling mode. Times must strictly increase and `values` must
    /// match the label count; violations are programming errors.
    pub fn push(&mut self, t: f64, values: &[f64]) {
        assert_eq!(
            values.len(),
            self.columns.len() - 1,
            "recorder row width mismatch"
        );
        if let Some(last) = self.rows.last() {
            assert!(t > last[0], "recorder times must strictly increase");
        }
        let emit = match self.sampling {
            Sampling::EveryPoint => true,
            Sampling::FixedInterval(dt) => {
                let t0 = *self.t_first.get_or_insert(t);
                let tol = grid_tol(dt);
                let grid = t0 + self.next_k as f64 * dt;
                if t >= grid - tol {
                    // Skip every grid time this point also covers.
                    while t0 + self.next_k as f64 * dt <= t + tol {
                        self.next_k += 1;
                    }
                    true
                } else {
                    false
                }
            }
        };
        if emit {
            let mut row = Vec::with_capacity(self.columns.len());
            row.push(t);
            row.extend_from_slice(values);
            self.rows.push(row);
        }
    }

    pub fn finish(self) -> WaveformTable {
        WaveformTable {
            columns: self.columns,
            rows: self.rows,
        }
    }
}

/// Tabulates the given channels over a run history.
pub fn build_table(
    graph: &SystemGraph,
    history: &[StateVector],
    channels: &[(String, ChannelBinding)],
    sampling: Sampling,
) -> Result<WaveformTable, Error> {
    if history.is_empty() {
        return Err(OutputError::Empty.into());
    }
    let labels: Vec<String> = channels.iter().map(|(l, _)| l.clone()).collect();
    let mut rec = Recorder::new(&labels, sampling);
    let mut values = vec![0.0; channels.len()];
    for point in history {
        for (slot, (_, binding)) in values.iter_mut().zip(channels) {
            *slot = binding.value(graph, point)?;
        }
        rec.push(point.t, &values);
    }
    Ok(rec.finish())
}

/// Quotes a CSV field per RFC 4180 when it contains a comma, quote, or
/// line break.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Formats one value with 17 significant digits, enough for exact
/// `f64` round-tripping.
fn csv_number(v: f64) -> String {
    format!("{v:.16e}")
}

/// Renders the table as CSV text: a header row, one line per sample,
/// every line (including the last) newline-terminated.
pub fn format_csv(table: &WaveformTable) -> String {
    let mut out = String::new();
    let header: Vec<String> = table.columns.iter().map(|c| csv_field(c)).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in &table.rows {
        let fields: Vec<String> = row.iter().map(|v| csv_number(*v)).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Writes the table as CSV to `path`.
pub fn write_csv(table: &WaveformTable, path: &Path) -> Result<(), OutputError> {
    std::fs::write(path, format_csv(table)).map_err(|source| OutputError::Write {
        path: path.display().to_string(),
        source,
    })
}

/// Splits one CSV record into fields, honoring RFC 4180 quoting.
fn split_csv_line(line: &str, line_no: usize) -> Result<Vec<String>, OutputError> {
    let mut fields = Vec::new();
    let mut field = String::new();
    let mut chars = line.chars().peekable();
    let mut in_quotes = false;
    while let Some(c) = chars.next() {
        if in_quotes {
            match c {
                '"' => {
                    if chars.peek() == Some(&'"') {
                        chars.next();
                        field.push('"');
                    } else {
                        in_quotes = false;
                    }
                }
                other => field.push(other),
            }
        } else {
            match c {
                '"' if field.is_empty() => in_quotes = true,
                '"' => {
                    return Err(OutputError::Csv {
                        line: line_no,
                        message: "stray quote inside unquoted field".to_string(),
                    })
                }
                ',' => fields.push(std::mem::take(&mut field)),
                other => field.push(other),
            }
        }
    }
    if in_quotes {
        return Err(OutputError::Csv {
            line: line_no,
            message: "unterminated quoted field".to_string(),
        });
    }
    fields.push(field);
    Ok(fields)
}

/// Parses CSV text produced by [`format_csv`] back into a table.
pub fn parse_csv(text: &str) -> Result<WaveformTable, OutputError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(OutputError::Csv {
        line: 1,
        message: "missing header row".to_string(),
    })?;
    let columns = split_csv_line(header, 1)?;
    if columns.is_empty() || columns[0] != "time" {
        return Err(OutputError::Csv {
            line: 1,
            message: "first column must be `time`".to_string(),
        });
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields = split_csv_line(line, line_no)?;
        if fields.len() != columns.len() {
            return Err(OutputError::Csv {
                line: line_no,
                message: format!(
                    "expected {} fields, found {}",
                    columns.len(),
                    fields.len()
                ),
            });
        }
        let mut row = Vec::with_capacity(fields.len());
        for f in &fields {
            let v: f64 = f.trim().parse().map_err(|_| OutputError::Csv {
                line: line_no,
                message: format!("`{f}` is not a number"),
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    Ok(WaveformTable { columns, rows })
}

/// Plot layout: which columns to draw and the canvas size.
#[derive(Debug, Clone)]
pub struct PlotSpec {
    /// Column providing the horizontal axis (usually `time`).
    pub x: String,
    /// Columns drawn as traces, one polyline each.
    pub y: Vec<String>,
    pub width: u32,
    pub height: u32,
    pub title: Option<String>,
}

impl PlotSpec {
    /// All non-time columns of `table` against time, at 800x600.
    pub fn all_traces(table: &WaveformTable) -> PlotSpec {
        PlotSpec {
            x: "time".to_string(),
            y: table.columns.iter().skip(1).cloned().collect(),
            width: 800,
            height: 600,
            title: None,
        }
    }
}

/// Fixed trace palette, cycled when there are more traces than colors.
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

/// Data range padded by 5% on both sides; a zero-width range is padded
/// to one unit on each side of the value instead.
fn padded_range(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        (lo - 1.0, hi + 1.0)
    }
}

/// Largest "nice" tick step (1, 2, or 5 times a power of ten) giving at
/// most `max_ticks` intervals over `range`.
fn nice_step(range: f64, max_ticks: usize) -> f64 {
    let raw = range / max_ticks as f64;
    let mag = 10_f64.powf(raw.log10().floor());
    for m in [1.0, 2.0, 5.0] {
        if m * mag >= raw {
            return m * mag;
        }
    }
    10.0 * mag
}

/// Tick label with just enough decimals for the step size.
fn tick_label(v: f64, step: f64) -> String {
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let text = format!("{v:.decimals$}");
    // Avoid the "-0" label.
    if text.starts_with('-') && text.trim_start_matches(['-', '0', '.']).is_empty() {
        text[1..].to_string()
    } else {
        text
    }
}

fn tick_positions(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let mut ticks = Vec::new();
    let first = (lo / step).ceil();
    let mut k = first;
    while k * step <= hi + 1e-9 * step {
        ticks.push(k * step);
        k += 1.0;
    }
    ticks
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the table as a stand-alone SVG 1.1 document: one polyline
/// per trace over auto-scaled axes with tick labels and a legend.
/// Output is a pure function of the inputs.
pub fn emit_svg(table: &WaveformTable, spec: &PlotSpec) -> Result<String, OutputError> {
    if table.rows.is_empty() {
        return Err(OutputError::Empty);
    }
    let col = |name: &str| -> Result<usize, OutputError> {
        table.column_index(name).ok_or_else(|| OutputError::UnknownColumn {
            name: name.to_string(),
            available: table.columns.join(", "),
        })
    };
    let xi = col(&spec.x)?;
    let yis: Vec<usize> = spec.y.iter().map(|n| col(n)).collect::<Result<_, _>>()?;

    let min_max = |idx: usize| {
        table.rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r[idx]), hi.max(r[idx]))
        })
    };
    let (x_lo_raw, x_hi_raw) = min_max(xi);
    let (mut y_lo_raw, mut y_hi_raw) = (f64::INFINITY, f64::NEG_INFINITY);
    for &yi in &yis {
        let (lo, hi) = min_max(yi);
        y_lo_raw = y_lo_raw.min(lo);
        y_hi_raw = y_hi_raw.max(hi);
    }
    if yis.is_empty() {
        (y_lo_raw, y_hi_raw) = (0.0, 0.0);
    }
    let (x_lo, x_hi) = padded_range(x_lo_raw, x_hi_raw);
    let (y_lo, y_hi) = padded_range(y_lo_raw, y_hi_raw);

    let w = spec.width as f64;
    let h = spec.height as f64;
    let (ml, mr, mt, mb) = (70.0, 20.0, 40.0, 50.0);
    let (pw, ph) = (w - ml - mr, h - mt - mb);
    let px = |x: f64| ml + (x - x_lo) / (x_hi - x_lo) * pw;
    let py = |y: f64| mt + (1.0 - (y - y_lo) / (y_hi - y_lo)) * ph;

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        spec.width, spec.height, spec.width, spec.height
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    if let Some(title) = &spec.title {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
            ml + pw / 2.0,
            xml_escape(title)
        );
    }

    let x_step = nice_step(x_hi - x_lo, 8);
    let y_step = nice_step(y_hi - y_lo, 8);
    for tx in tick_positions(x_lo, x_hi, x_step) {
        let gx = px(tx);
        let _ = writeln!(
            svg,
            r##"<line x1="{gx:.2}" y1="{:.2}" x2="{gx:.2}" y2="{:.2}" stroke="#dddddd"/>"##,
            mt,
            mt + ph
        );
        let _ = writeln!(
            svg,
            r#"<text x="{gx:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
            mt + ph + 18.0,
            tick_label(tx, x_step)
        );
    }
    for ty in tick_positions(y_lo, y_hi, y_step) {
        let gy = py(ty);
        let _ = writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{gy:.2}" x2="{:.2}" y2="{gy:.2}" stroke="#dddddd"/>"##,
            ml,
            ml + pw
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="12">{}</text>"#,
            ml - 8.0,
            gy + 4.0,
            tick_label(ty, y_step)
        );
    }
    let _ = writeln!(
        svg,
        r#"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );

    for (trace, &yi) in yis.iter().enumerate() {
        let color = PALETTE[trace % PALETTE.len()];
        let mut points = String::new();
        for row in &table.rows {
            let _ = write!(points, "{:.2},{:.2} ", px(row[xi]), py(row[yi]));
        }
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.trim_end()
        );
    }

    for (trace, name) in spec.y.iter().enumerate() {
        let color = PALETTE[trace % PALETTE.len()];
        let ly = mt + 16.0 + trace as f64 * 18.0;
        let lx = ml + pw - 150.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="1.5"/>"#,
            ly - 4.0,
            lx + 24.0,
            ly - 4.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{ly:.2}" font-family="sans-serif" font-size="12">{}</text>"#,
            lx + 30.0,
            xml_escape(name)
        );
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Writes the rendered SVG to `path`.
pub fn write_svg(
    table: &WaveformTable,
    spec: &PlotSpec,
    path: &Path,
) -> Result<(), OutputError> {
    let doc = emit_svg(table, spec)?;
    std::fs::write(path, doc).map_err(|source| OutputError::Write {
        path: path.display().to_string(),
        source,
    })
}
