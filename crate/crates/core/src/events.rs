//! Abrupt-change handling: break scheduling and crossing-point
//! injection.
//!
//! Sources with corners (triangle, step, piecewise-linear) publish the
//! next time at which their waveform has a kink via
//! [`crate::blocks::BlockTemplate::next_break`]; the solver clamps its
//! step so an accepted point lands exactly on each break. Comparators
//! publish a smooth signal whose zero crossing flips their output; the
//! [`CrossingTracker`] extrapolates that signal forward from accepted
//! points and, when a crossing is imminent, the solver injects one time
//! point just before and one just after the predicted crossing so the
//! output transition is resolved within a narrow window instead of a
//! full step.
//!
//! Both mechanisms are pure refinements: with events disabled the
//! solver's time grid is exactly the baseline stepper's.

use crate::assembly::{StateVector, SystemGraph};
use crate::blocks::{propose_crossing, BlockRuntimeState, ExtrapolationMode};

/// Relative tolerance for treating two nearby event times as the same
/// instant.
fn time_tol(t: f64) -> f64 {
    1e-12 * t.abs().max(1.0)
}

/// Runtime switches for the event machinery.
#[derive(Debug, Clone)]
pub struct EventConfig {
    /// Master switch; off disables both breaks and crossings.
    pub enabled: bool,
    /// When set, overrides every block's own extrapolation-mode
    /// parameter.
    pub extrapolation_override: Option<ExtrapolationMode>,
    /// Half-width of the injected bracket around a predicted crossing,
    /// as a fraction of the normal step.
    pub delta_factor: f64,
    /// Absolute lower bound on the bracket half-width in seconds.
    pub delta_floor: f64,
}

impl Default for EventConfig {
    fn default() -> Self {
        EventConfig {
            enabled: true,
            extrapolation_override: None,
            delta_factor: 1e-4,
            delta_floor: 1e-12,
        }
    }
}

impl EventConfig {
    pub fn disabled() -> Self {
        EventConfig {
            enabled: false,
            ..EventConfig::default()
        }
    }

    /// Bracket half-width for the given normal step size.
    pub fn delta(&self, dt_normal: f64) -> f64 {
        (self.delta_factor * dt_normal).max(self.delta_floor)
    }
}

/// Upcoming waveform corners, ordered by time, deduplicated within
/// [`time_tol`].
#[derive(Debug, Clone, Default)]
pub struct BreakSchedule {
    /// `(time, originating instance)` sorted by time.
    pending: Vec<(f64, String)>,
}

impl BreakSchedule {
    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    /// Earliest pending break time.
    pub fn first(&self) -> Option<f64> {
        self.pending.first().map(|(t, _)| *t)
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.pending.iter().map(|(t, _)| *t)
    }

    pub fn entries(&self) -> &[(f64, String)] {
        &self.pending
    }

    fn insert(&mut self, t: f64, origin: &str) {
        let pos = self.pending.partition_point(|(pt, _)| *pt < t);
        let tol = time_tol(t);
        if pos < self.pending.len() && (self.pending[pos].0 - t).abs() <= tol {
            return;
        }
        if pos > 0 && (t - self.pending[pos - 1].0).abs() <= tol {
            return;
        }
        self.pending.insert(pos, (t, origin.to_string()));
    }
}

/// Gathers the next break from every block, keeping those strictly
/// after `t_now` and no later than `t_end`.
pub fn collect_breaks(graph: &SystemGraph, t_now: f64, t_end: f64) -> BreakSchedule {
    let mut schedule = BreakSchedule::default();
    for block in graph.blocks() {
        if let Some(tb) = block.template.next_break(t_now, &block.params) {
            if tb > t_now + time_tol(t_now) && tb <= t_end {
                schedule.insert(tb, &block.name);
            }
        }
    }
    schedule
}

/// Shortens a proposed step so it cannot jump over the earliest pending
/// break; a step ending exactly on the break is left unchanged.
pub fn clamp_step(t_now: f64, h_proposed: f64, schedule: &BreakSchedule) -> f64 {
    match schedule.first() {
        Some(tb) if t_now + h_proposed > tb => tb - t_now,
        _ => h_proposed,
    }
}

/// A resolved decision to bracket a predicted crossing at `t_prime`
/// with accepted points just before and just after it.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossingPlan {
    pub t_prime: f64,
    pub t_before: f64,
    pub t_after: f64,
    /// Instance whose signal is about to cross.
    pub origin: String,
}

impl CrossingPlan {
    /// The next time point this plan forces, strictly after `t_now`:
    /// first the point before the crossing, then the point after, then
    /// nothing (plan exhausted).
    pub fn next_target(&self, t_now: f64) -> Option<f64> {
        let guard = time_tol(t_now);
        if self.t_before > t_now + guard {
            Some(self.t_before)
        } else if self.t_after > t_now + guard {
            Some(self.t_after)
        } else {
            None
        }
    }
}

/// Chooses the earliest proposed crossing and builds its bracket of
/// half-width `delta`.
pub fn plan_crossing(
    proposals: &[(String, f64)],
    delta: f64,
) -> Option<CrossingPlan> {
    let (origin, t_prime) = proposals
        .iter()
        .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite crossing times"))?;
    Some(CrossingPlan {
        t_prime: *t_prime,
        t_before: t_prime - delta,
        t_after: t_prime + delta,
        origin: origin.clone(),
    })
}

/// Per-run history of crossing signals at accepted points, one entry
/// per block that defines a crossing signal.
pub struct CrossingTracker {
    entries: Vec<(usize, BlockRuntimeState)>,
}

impl CrossingTracker {
    /// Registers every block whose template defines a crossing signal.
    pub fn new(graph: &SystemGraph) -> Self {
        let entries = graph
            .blocks()
            .iter()
            .enumerate()
            .filter_map(|(idx, block)| {
                let probe = vec![0.0; block.input_vars.len()];
                block
                    .template
                    .crossing_signal(&probe, &block.params)
                    .map(|_| (idx, BlockRuntimeState::new()))
            })
            .collect();
        CrossingTracker { entries }
    }

    /// Whether any block participates in crossing detection.
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Records an accepted point. Call exactly once per accepted point,
    /// in time order; rejected trials must not be recorded.
    pub fn record(&mut self, graph: &SystemGraph, x: &StateVector) {
        for (idx, state) in &mut self.entries {
            let block = &graph.blocks()[*idx];
            let inputs: Vec<f64> = block.input_vars.iter().map(|&v| x.values[v]).collect();
            state.push_sample(x.t, inputs);
        }
    }

    /// Predicted crossing times within the next normal step, as
    /// `(instance name, t_prime)` pairs. Each block uses its own
    /// extrapolation-mode parameter unless `mode_override` is set.
    pub fn proposals(
        &self,
        graph: &SystemGraph,
        dt_normal: f64,
        mode_override: Option<ExtrapolationMode>,
    ) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for (idx, state) in &self.entries {
            let block = &graph.blocks()[*idx];
            let mode = mode_override.unwrap_or_else(|| block_mode(block));
            if let Some(t_prime) = propose_crossing(
                block.template.as_ref(),
                state,
                &block.params,
                dt_normal,
                mode,
            ) {
                out.push((block.name.clone(), t_prime));
            }
        }
        out
    }
}

/// A block's own extrapolation preference, taken from its
/// `extrapolation` string parameter when declared.
fn block_mode(block: &crate::assembly::BlockBinding) -> ExtrapolationMode {
    block
        .template
        .descriptor()
        .string_index("extrapolation")
        .and_then(|i| ExtrapolationMode::from_name(block.params.string(i)))
        .unwrap_or_default()
}
