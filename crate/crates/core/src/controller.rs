//! Continuous-time and event-triggered boundary feedback.
//!
//! Both controllers predict `ubar` on the determinate set and steer the
//! boundary value `v(0, t + tau_v(0))` to the reference `g_ref(t + tau_v(0))`.
//! The continuous controller recomputes the input at every integrator step;
//! the event-triggered one holds it until the predicted boundary value under
//! the held input leaves the band `|.| <= eps(t)`.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::expr::CoeffFn;
use crate::linear::{closed_form_trigger, closed_form_update, KernelVector};
use crate::model::{signature, Grid, SystemModel};
use crate::predictor::Predictor;
use crate::sim::{self, EventRecord, InputSignal, StateProfile, StepHook, Trajectory};

/// Pairs of events on consecutive steps tolerated before a run is flagged.
pub const ZENO_PAIR_LIMIT: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TriggerRule {
    Fixed {
        eps: f64,
    },
    /// `eps(t) = max(eps_min, gain * ||w(., t)||_inf)`; `eps_min = 0` drops the floor.
    StateDependent {
        eps_min: f64,
        gain: f64,
    },
    /// Checks only at multiples of `period`, against `eps / 2`.
    Periodic {
        period: f64,
        eps: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerPolicy {
    pub rule: TriggerRule,
    /// Reference `g_ref(t)` for `v(0, t)`; zero when absent.
    pub reference: Option<CoeffFn>,
}

impl TriggerPolicy {
    pub fn fixed(eps: f64) -> Self {
        TriggerPolicy {
            rule: TriggerRule::Fixed { eps },
            reference: None,
        }
    }

    pub fn state_dependent(eps_min: f64, gain: f64) -> Self {
        TriggerPolicy {
            rule: TriggerRule::StateDependent { eps_min, gain },
            reference: None,
        }
    }

    pub fn periodic(period: f64, eps: f64) -> Self {
        TriggerPolicy {
            rule: TriggerRule::Periodic { period, eps },
            reference: None,
        }
    }

    pub fn with_reference(mut self, reference: CoeffFn) -> Self {
        self.reference = Some(reference);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, z: f64| {
            if z > 0.0 && z.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be positive and finite, got {z}")))
            }
        };
        match self.rule {
            TriggerRule::Fixed { eps } => positive("policy.eps", eps)?,
            TriggerRule::StateDependent { eps_min, gain } => {
                positive("policy.gain", gain)?;
                if !(eps_min >= 0.0 && eps_min.is_finite()) {
                    return Err(Error::invalid("policy.eps_min", "must be finite and nonnegative"));
                }
            }
            TriggerRule::Periodic { period, eps } => {
                positive("policy.period", period)?;
                positive("policy.eps", eps)?;
            }
        }
        if let Some(r) = &self.reference {
            if r.variables() != signature::T {
                return Err(Error::invalid("policy.reference", "must be a function of t"));
            }
        }
        Ok(())
    }

    /// `eps(t)` as promised for `|v(0, t) - g_ref(t)|`.
    pub fn eps(&self, norm: f64) -> f64 {
        match self.rule {
            TriggerRule::Fixed { eps } | TriggerRule::Periodic { eps, .. } => eps,
            TriggerRule::StateDependent { eps_min, gain } => eps_min.max(gain * norm),
        }
    }

    /// Threshold the trigger value is compared against.
    pub fn threshold(&self, norm: f64) -> f64 {
        match self.rule {
            TriggerRule::Periodic { eps, .. } => 0.5 * eps,
            _ => self.eps(norm),
        }
    }

    pub fn reference_at(&self, t: f64) -> f64 {
        self.reference.as_ref().map_or(0.0, |r| r.eval(&[t]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub u_bar: f64,
    pub t_last: f64,
    pub event_log: Vec<EventRecord>,
}

impl ControllerState {
    pub fn new(u0: f64, t0: f64) -> Self {
        ControllerState {
            u_bar: u0,
            t_last: t0,
            event_log: Vec::new(),
        }
    }
}

/// How trigger values and updates are computed.
#[derive(Debug, Clone)]
pub enum Evaluator {
    Pipeline(Predictor),
    ClosedForm { kernels: KernelVector, horizon: f64 },
}

impl Evaluator {
    pub fn horizon(&self) -> f64 {
        match self {
            Evaluator::Pipeline(p) => p.horizon(),
            Evaluator::ClosedForm { horizon, .. } => *horizon,
        }
    }

    /// Trigger value for held input `u_bar` against reference `r`, and the
    /// update if `|trigger| > threshold`.
    fn check(&self, w: &StateProfile, u_bar: f64, r: f64, threshold: f64) -> Result<(f64, Option<f64>)> {
        match self {
            Evaluator::Pipeline(p) => {
                let slice = p.predict_ubar(w)?;
                let trig = p.solve_vbar(&slice, u_bar)?[0] - r;
                if trig.abs() > threshold {
                    let n = p.grid().n_cells();
                    Ok((trig, Some(p.solve_target(&slice, r)?[n])))
                } else {
                    Ok((trig, None))
                }
            }
            Evaluator::ClosedForm { kernels, .. } => {
                let trig = closed_form_trigger(kernels, w, u_bar)? - r;
                if trig.abs() > threshold {
                    Ok((trig, Some(r + closed_form_update(kernels, w)?)))
                } else {
                    Ok((trig, None))
                }
            }
        }
    }
}

/// Input `vbar*(1)` of the continuous-time controller with target
/// `vbar*(0) = r`.
pub fn continuous_control_with(p: &Predictor, w_t: &StateProfile, r: f64) -> Result<f64> {
    let slice = p.predict_ubar(w_t)?;
    Ok(p.solve_target(&slice, r)?[p.grid().n_cells()])
}

/// Continuous-time control input for stabilization at the origin.
pub fn continuous_control(m: &SystemModel, grid: &Grid, w_t: &StateProfile) -> Result<f64> {
    continuous_control_with(&Predictor::new(m, grid)?, w_t, 0.0)
}

/// Event-triggered controller wired as a simulator hook.
#[derive(Debug, Clone)]
pub struct EventTriggeredController {
    eval: Evaluator,
    policy: TriggerPolicy,
    state: ControllerState,
    next_check: f64,
    t0: f64,
}

impl EventTriggeredController {
    pub fn new(m: &SystemModel, grid: &Grid, policy: TriggerPolicy, u0: f64, t0: f64) -> Result<Self> {
        Self::with_evaluator(Evaluator::Pipeline(Predictor::new(m, grid)?), policy, u0, t0)
    }

    pub fn with_evaluator(eval: Evaluator, policy: TriggerPolicy, u0: f64, t0: f64) -> Result<Self> {
        policy.validate()?;
        if !u0.is_finite() {
            return Err(Error::invalid("u0", "must be finite"));
        }
        Ok(EventTriggeredController {
            eval,
            policy,
            state: ControllerState::new(u0, t0),
            next_check: t0,
            t0,
        })
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    pub fn into_state(self) -> ControllerState {
        self.state
    }

    pub fn policy(&self) -> &TriggerPolicy {
        &self.policy
    }

    /// Runs one check on `w`; returns the new held input on an event.
    pub fn on_step(&mut self, step: usize, w: &StateProfile) -> Result<Option<f64>> {
        if let TriggerRule::Periodic { period, .. } = self.policy.rule {
            if w.t < self.next_check - 1e-9 * period {
                return Ok(None);
            }
            let k = ((w.t - self.t0) / period + 1e-9).floor();
            self.next_check = self.t0 + (k + 1.0) * period;
        }
        let r = self.policy.reference_at(w.t + self.eval.horizon());
        let threshold = self.policy.threshold(w.norm_inf());
        let (trig, update) = self.eval.check(w, self.state.u_bar, r, threshold)?;
        let Some(u_new) = update else {
            return Ok(None);
        };
        if !u_new.is_finite() {
            return Err(Error::NonFinite(format!("input update at t = {}", w.t)));
        }
        let s = &mut self.state;
        s.event_log.push(EventRecord {
            k: s.event_log.len() + 1,
            t: w.t,
            u_old: s.u_bar,
            u_new,
            trigger_value: trig,
            step,
        });
        s.u_bar = u_new;
        s.t_last = w.t;
        Ok(Some(u_new))
    }
}

impl StepHook for EventTriggeredController {
    fn after_step(&mut self, step: usize, s: &StateProfile) -> Result<Option<f64>> {
        self.on_step(step, s)
    }
}

/// One check of the event-triggered loop as a pure function of its inputs.
pub fn event_triggered_hook(
    m: &SystemModel,
    grid: &Grid,
    policy: &TriggerPolicy,
    cs: ControllerState,
    w_t: &StateProfile,
) -> Result<(f64, ControllerState)> {
    let step = cs.event_log.last().map_or(0, |e| e.step + 1);
    let mut c = EventTriggeredController::new(m, grid, policy.clone(), cs.u_bar, cs.t_last)?;
    c.state = cs;
    c.on_step(step, w_t)?;
    Ok((c.state.u_bar, c.state))
}

#[derive(Debug, Clone)]
pub enum ControlLaw {
    OpenLoop(InputSignal),
    Continuous {
        reference: Option<CoeffFn>,
    },
    EventTriggered(TriggerPolicy),
    EventTriggeredLinear {
        policy: TriggerPolicy,
        kernels: KernelVector,
    },
}

/// One row of the diagnostics series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticRow {
    pub t: f64,
    pub norm_w_inf: f64,
    pub v0: f64,
    pub eps_t: Option<f64>,
    pub input: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub dt: f64,
    /// `tau_v(0)`.
    pub horizon: f64,
    /// `tau_v(0) + tau_u(1)`.
    pub settling_time: f64,
    pub event_count: usize,
    pub min_dwell: Option<f64>,
    pub consecutive_event_pairs: usize,
    pub zeno_suspected: bool,
    /// `max |v(0,t) - g_ref(t)|` over `t >= horizon`.
    pub max_v0_error_after_horizon: Option<f64>,
    /// `max (|v(0,t) - g_ref(t)| - eps(t))` over `t >= horizon`.
    pub max_trigger_excess: Option<f64>,
    pub initial_norm: f64,
    pub max_norm: f64,
    pub final_norm: f64,
    pub distinct_inputs: usize,
}

#[derive(Debug, Clone)]
pub struct ClosedLoopRecord {
    pub trajectory: Trajectory,
    pub series: Vec<DiagnosticRow>,
    pub diagnostics: Diagnostics,
}

impl ClosedLoopRecord {
    pub fn events(&self) -> &[EventRecord] {
        &self.trajectory.events
    }

    /// `t,norm_w_inf,v0,eps_t,U`; `eps_t` is empty when no policy applies.
    pub fn write_diagnostics_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,norm_w_inf,v0,eps_t,U")?;
        for r in &self.series {
            let eps = r.eps_t.map(|e| format!("{e:e}")).unwrap_or_default();
            writeln!(w, "{:e},{:e},{:e},{},{:e}", r.t, r.norm_w_inf, r.v0, eps, r.input)?;
        }
        Ok(())
    }
}

/// Event-triggered closed loop with the generic prediction pipeline.
pub fn run_closed_loop(
    m: &SystemModel,
    grid: &Grid,
    policy: &TriggerPolicy,
    w0: &StateProfile,
    u0: f64,
    t_end: f64,
) -> Result<ClosedLoopRecord> {
    run_with_law(m, grid, &ControlLaw::EventTriggered(policy.clone()), w0, u0, t_end)
}

/// Runs the plant from `w0` to `t_end` under `law`. `u0` is the input held
/// before the first update; open-loop runs ignore it.
pub fn run_with_law(
    m: &SystemModel,
    grid: &Grid,
    law: &ControlLaw,
    w0: &StateProfile,
    u0: f64,
    t_end: f64,
) -> Result<ClosedLoopRecord> {
    if !(t_end > w0.t) {
        return Err(Error::invalid("t_end", format!("must exceed the start time {}", w0.t)));
    }
    let rhs = sim::semi_discretize(m, grid)?;
    let held = InputSignal::Held { value: u0, since: w0.t };
    let (trajectory, policy, reference) = match law {
        ControlLaw::OpenLoop(input) => (sim::simulate(&rhs, w0, input, t_end, None)?, None, None),
        ControlLaw::Continuous { reference } => {
            let p = Predictor::new(m, grid)?;
            let horizon = p.horizon();
            let mut hook = |_: usize, w: &StateProfile| -> Result<Option<f64>> {
                let r = reference.as_ref().map_or(0.0, |f| f.eval(&[w.t + horizon]));
                continuous_control_with(&p, w, r).map(Some)
            };
            let traj = sim::simulate(&rhs, w0, &held, t_end, Some(&mut hook))?;
            (traj, None, reference.clone())
        }
        ControlLaw::EventTriggered(policy) | ControlLaw::EventTriggeredLinear { policy, .. } => {
            let eval = match law {
                ControlLaw::EventTriggeredLinear { kernels, .. } => Evaluator::ClosedForm {
                    kernels: kernels.clone(),
                    horizon: Predictor::new(m, grid)?.horizon(),
                },
                _ => Evaluator::Pipeline(Predictor::new(m, grid)?),
            };
            let mut c = EventTriggeredController::with_evaluator(eval, policy.clone(), u0, w0.t)?;
            let mut traj = sim::simulate(&rhs, w0, &held, t_end, Some(&mut c))?;
            traj.events = c.into_state().event_log;
            (traj, Some(policy), policy.reference.clone())
        }
    };
    let times = crate::model::NodeTimes::new(m, grid)?;
    Ok(summarize(
        trajectory,
        policy,
        reference.as_ref(),
        rhs.stable_dt(),
        &times,
    ))
}

fn summarize(
    trajectory: Trajectory,
    policy: Option<&TriggerPolicy>,
    reference: Option<&CoeffFn>,
    dt: f64,
    times: &crate::model::NodeTimes,
) -> ClosedLoopRecord {
    let horizon = times.tau_v[0];
    let series: Vec<DiagnosticRow> = trajectory
        .profiles
        .iter()
        .zip(&trajectory.boundary_trace)
        .map(|(p, b)| {
            let norm = p.norm_inf();
            DiagnosticRow {
                t: p.t,
                norm_w_inf: norm,
                v0: b.v0,
                eps_t: policy.map(|pol| pol.eps(norm)),
                input: b.input,
            }
        })
        .collect();

    let mut max_err: Option<f64> = None;
    let mut max_excess: Option<f64> = None;
    for r in series.iter().filter(|r| r.t >= horizon) {
        let err = (r.v0 - reference.map_or(0.0, |f| f.eval(&[r.t]))).abs();
        max_err = Some(max_err.map_or(err, |m| m.max(err)));
        if let Some(eps) = r.eps_t {
            let ex = err - eps;
            max_excess = Some(max_excess.map_or(ex, |m| m.max(ex)));
        }
    }

    let events = &trajectory.events;
    let min_dwell = events.windows(2).map(|e| e[1].t - e[0].t).min_by(f64::total_cmp);
    let pairs = events.windows(2).filter(|e| e[1].step == e[0].step + 1).count();
    let mut inputs: Vec<u64> = trajectory.boundary_trace.iter().map(|b| b.input.to_bits()).collect();
    inputs.sort_unstable();
    inputs.dedup();

    let diagnostics = Diagnostics {
        dt,
        horizon,
        settling_time: times.settling_time(),
        event_count: events.len(),
        min_dwell,
        consecutive_event_pairs: pairs,
        zeno_suspected: pairs > ZENO_PAIR_LIMIT,
        max_v0_error_after_horizon: max_err,
        max_trigger_excess: max_excess,
        initial_norm: series.first().map_or(0.0, |r| r.norm_w_inf),
        max_norm: series.iter().fold(0.0f64, |m, r| m.max(r.norm_w_inf)),
        final_norm: series.last().map_or(0.0, |r| r.norm_w_inf),
        distinct_inputs: inputs.len(),
    };
    ClosedLoopRecord {
        trajectory,
        series,
        diagnostics,
    }
}

/// Empirical stand-ins `(c1, c2)` for the prediction and convergence gains.
///
/// `c1` is the largest ratio of the determinate-set sup-norm to `||w||_inf`
/// over random states. `c2` is the largest ratio of `sup ||w||_inf` after the
/// settling time to `|r|` when the continuous controller tracks a constant
/// boundary target `r` from rest.
pub fn estimate_gain_constants(m: &SystemModel, grid: &Grid, samples: usize, seed: u64) -> Result<(f64, f64)> {
    if samples == 0 {
        return Err(Error::invalid("samples", "must be positive"));
    }
    let p = Predictor::new(m, grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.n_nodes();

    let mut c1 = 0.0f64;
    for _ in 0..samples {
        let amp = rng.random_range(0.1..2.0);
        let mut w = StateProfile::zeros(grid, 0.0);
        for i in 0..n {
            w.u[i] = amp * rng.random_range(-1.0..1.0);
            w.v[i] = amp * rng.random_range(-1.0..1.0);
        }
        let norm = w.norm_inf();
        if norm == 0.0 {
            continue;
        }
        let (su, sv) = p.predict_rectangle(&w, w.v[n - 1])?.determinate_sup();
        c1 = c1.max(su.max(sv) / norm);
    }

    let settle = p.node_times().settling_time();
    let mut c2 = 0.0f64;
    for _ in 0..samples.min(4) {
        let r: f64 = rng.random_range(0.05..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let law = ControlLaw::Continuous {
            reference: Some(CoeffFn::constant(r, signature::T)),
        };
        let rec = run_with_law(m, grid, &law, &StateProfile::zeros(grid, 0.0), 0.0, 2.0 * settle)?;
        let sup = rec
            .series
            .iter()
            .filter(|row| row.t >= settle)
            .fold(0.0f64, |acc, row| acc.max(row.norm_w_inf));
        c2 = c2.max(sup / r.abs());
    }
    Ok((c1, c2))
}
