//! Method-of-lines simulation of the plant: first-order upwind differences
//! in space, classical RK4 in time, algebraic boundary nodes.

use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::expr::CoeffFn;
use crate::model::{Grid, SystemModel};

/// Ratio of the time step to `h / k_lambda`.
pub const CFL_FACTOR: f64 = 0.5;

/// Sup-norm beyond which a run is aborted as blown up.
pub const BLOW_UP_NORM: f64 = 1e6;

/// Samples used to bound the speeds when sizing the time step.
const SPEED_SAMPLES: usize = 1001;

/// `(u, v)` sampled on the grid nodes at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateProfile {
    pub t: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl StateProfile {
    pub fn zeros(grid: &Grid, t: f64) -> Self {
        StateProfile {
            t,
            u: vec![0.0; grid.n_nodes()],
            v: vec![0.0; grid.n_nodes()],
        }
    }

    /// Samples `u0(x)` and `v0(x)` on the grid.
    pub fn from_fns(grid: &Grid, u0: &CoeffFn, v0: &CoeffFn, t: f64) -> Result<Self> {
        let xs = grid.nodes();
        let s = StateProfile {
            t,
            u: xs.iter().map(|&x| u0.eval(&[x])).collect(),
            v: xs.iter().map(|&x| v0.eval(&[x])).collect(),
        };
        if !s.is_finite() {
            return Err(Error::NonFinite("initial profile".into()));
        }
        Ok(s)
    }

    pub fn n_nodes(&self) -> usize {
        self.u.len()
    }

    /// `max(|u|, |v|)` over all nodes.
    pub fn norm_inf(&self) -> f64 {
        self.u.iter().chain(&self.v).fold(0.0f64, |m, &z| m.max(z.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|z| z.is_finite())
    }

    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        if self.u.len() != grid.n_nodes() || self.v.len() != grid.n_nodes() {
            return Err(Error::GridMismatch {
                expected: grid.n_nodes(),
                found: self.u.len().min(self.v.len()),
            });
        }
        Ok(())
    }
}

/// Boundary input `U(t)`.
#[derive(Debug, Clone, PartialEq)]
pub enum InputSignal {
    /// `U(t) = value` from `since` on (right-continuous hold).
    Held { value: f64, since: f64 },
    /// Zero-order hold through a time-sorted table; before the first entry the
    /// first value applies.
    Sampled(Vec<(f64, f64)>),
    /// Open-loop expression in `t`.
    Function(CoeffFn),
}

impl InputSignal {
    pub fn held(value: f64) -> Self {
        InputSignal::Held { value, since: 0.0 }
    }

    pub fn value_at(&self, t: f64) -> f64 {
        match self {
            InputSignal::Held { value, .. } => *value,
            InputSignal::Sampled(table) => {
                let k = table.partition_point(|&(tk, _)| tk <= t);
                table.get(k.saturating_sub(1)).map_or(0.0, |&(_, u)| u)
            }
            InputSignal::Function(f) => f.eval(&[t]),
        }
    }
}

/// One row of the boundary trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryRecord {
    pub t: f64,
    pub v0: f64,
    pub u0: f64,
    pub input: f64,
}

/// One input update of an event-triggered loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    pub k: usize,
    pub t: f64,
    pub u_old: f64,
    pub u_new: f64,
    /// Trigger value that caused the update.
    pub trigger_value: f64,
    /// Index of the integrator step at which the update happened.
    pub step: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub profiles: Vec<StateProfile>,
    pub boundary_trace: Vec<BoundaryRecord>,
    pub events: Vec<EventRecord>,
}

impl Trajectory {
    pub fn last(&self) -> &StateProfile {
        self.profiles.last().expect("trajectory is never empty")
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.profiles.iter().map(|p| p.t)
    }

    /// Long format `t,x,u,v`, one row per node and stored time.
    pub fn write_csv<W: Write>(&self, grid: &Grid, mut w: W) -> io::Result<()> {
        writeln!(w, "t,x,u,v")?;
        let xs = grid.nodes();
        for p in &self.profiles {
            for (i, x) in xs.iter().enumerate() {
                writeln!(w, "{:e},{:e},{:e},{:e}", p.t, x, p.u[i], p.v[i])?;
            }
        }
        Ok(())
    }

    pub fn write_boundary_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,v0,u0,U")?;
        for r in &self.boundary_trace {
            writeln!(w, "{:e},{:e},{:e},{:e}", r.t, r.v0, r.u0, r.input)?;
        }
        Ok(())
    }

    pub fn write_events_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write_events_csv(&self.events, &mut w)
    }
}

pub fn write_events_csv<W: Write>(events: &[EventRecord], mut w: W) -> io::Result<()> {
    writeln!(w, "k,t_k,U_old,U_new")?;
    for e in events {
        writeln!(w, "{},{:e},{:e},{:e}", e.k, e.t, e.u_old, e.u_new)?;
    }
    Ok(())
}

/// Spatial operator of the semi-discrete plant with speeds cached on nodes.
#[derive(Debug, Clone)]
pub struct RightHandSide {
    model: SystemModel,
    grid: Grid,
    x: Vec<f64>,
    lam_u: Vec<f64>,
    lam_v: Vec<f64>,
    k_lambda: f64,
}

/// Builds the upwind operator for `m` on `grid`.
pub fn semi_discretize(m: &SystemModel, grid: &Grid) -> Result<RightHandSide> {
    let (k_lambda, _) = m.speed_bounds(SPEED_SAMPLES.max(grid.n_nodes()))?;
    let x = grid.nodes();
    let lam_u: Vec<f64> = x.iter().map(|&x| m.speed_u(x)).collect();
    let lam_v: Vec<f64> = x.iter().map(|&x| m.speed_v(x)).collect();
    // Speed bounds sampled a separate lattice; the nodes must pass as well.
    for (i, (&a, &b)) in lam_u.iter().zip(&lam_v).enumerate() {
        if !(a > 0.0) || !(b > 0.0) {
            return Err(Error::NonPositiveSpeed {
                which: if a > 0.0 { "lambda_v" } else { "lambda_u" },
                x: x[i],
                value: a.min(b),
            });
        }
    }
    let k_lambda = lam_u.iter().chain(&lam_v).fold(k_lambda, |m, &l| m.max(l));
    Ok(RightHandSide {
        model: m.clone(),
        grid: *grid,
        x,
        lam_u,
        lam_v,
        k_lambda,
    })
}

impl RightHandSide {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn model(&self) -> &SystemModel {
        &self.model
    }

    pub fn k_lambda(&self) -> f64 {
        self.k_lambda
    }

    /// `CFL_FACTOR * h / k_lambda`.
    pub fn stable_dt(&self) -> f64 {
        CFL_FACTOR * self.grid.h() / self.k_lambda
    }

    /// Imposes `u_0 = g(v_0, t)` and `v_n = input`.
    #[inline]
    pub fn apply_closures(&self, t: f64, u: &mut [f64], v: &mut [f64], input: f64) {
        let n = self.grid.n_cells();
        v[n] = input;
        u[0] = self.model.boundary(v[0], t);
    }

    /// Time derivatives of the free nodes; boundary slots are zero.
    pub fn eval(&self, u: &[f64], v: &[f64], du: &mut [f64], dv: &mut [f64]) {
        let n = self.grid.n_cells();
        let inv_h = self.grid.n_cells() as f64;
        du[0] = 0.0;
        dv[n] = 0.0;
        for i in 0..=n {
            let x = self.x[i];
            if i >= 1 {
                du[i] = -self.lam_u[i] * (u[i] - u[i - 1]) * inv_h + self.model.source_u(u[i], v[i], x);
            }
            if i < n {
                dv[i] = self.lam_v[i] * (v[i + 1] - v[i]) * inv_h + self.model.source_v(u[i], v[i], x);
            }
        }
    }
}

/// One RK4 step. Boundary closures are re-imposed on every stage state and
/// on the result.
pub fn step(rhs: &RightHandSide, s: &StateProfile, input: &InputSignal, dt: f64) -> Result<StateProfile> {
    s.check_grid(&rhs.grid)?;
    let limit = rhs.stable_dt();
    if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt, limit });
    }
    let mut ws = Workspace::new(rhs.grid.n_nodes());
    let mut out = s.clone();
    rk4_in_place(rhs, &mut out, input, dt, &mut ws);
    if !out.is_finite() {
        return Err(Error::NonFinite(format!("state at t = {}", out.t)));
    }
    Ok(out)
}

struct Workspace {
    k: [(Vec<f64>, Vec<f64>); 4],
    stage: (Vec<f64>, Vec<f64>),
}

impl Workspace {
    fn new(n: usize) -> Self {
        let z = || (vec![0.0; n], vec![0.0; n]);
        Workspace {
            k: [z(), z(), z(), z()],
            stage: z(),
        }
    }
}

fn rk4_in_place(rhs: &RightHandSide, s: &mut StateProfile, input: &InputSignal, dt: f64, ws: &mut Workspace) {
    let t0 = s.t;
    let nodes = s.u.len();
    let offsets = [0.0, 0.5, 0.5, 1.0];
    for stage in 0..4 {
        let ts = t0 + offsets[stage] * dt;
        let (su, sv) = &mut ws.stage;
        if stage == 0 {
            su.copy_from_slice(&s.u);
            sv.copy_from_slice(&s.v);
        } else {
            let (ku, kv) = &ws.k[stage - 1];
            let c = offsets[stage] * dt;
            for i in 0..nodes {
                su[i] = s.u[i] + c * ku[i];
                sv[i] = s.v[i] + c * kv[i];
            }
        }
        rhs.apply_closures(ts, su, sv, input.value_at(ts));
        let (ku, kv) = &mut ws.k[stage];
        rhs.eval(su, sv, ku, kv);
    }
    let c = dt / 6.0;
    for i in 0..nodes {
        s.u[i] += c * (ws.k[0].0[i] + 2.0 * ws.k[1].0[i] + 2.0 * ws.k[2].0[i] + ws.k[3].0[i]);
        s.v[i] += c * (ws.k[0].1[i] + 2.0 * ws.k[1].1[i] + 2.0 * ws.k[2].1[i] + ws.k[3].1[i]);
    }
    s.t = t0 + dt;
    rhs.apply_closures(s.t, &mut s.u, &mut s.v, input.value_at(s.t));
}

/// Called on the initial profile and after every accepted step. Returning
/// `Some(value)` switches the plant to the held input `value` from the
/// current time on.
pub trait StepHook {
    fn after_step(&mut self, step: usize, s: &StateProfile) -> Result<Option<f64>>;
}

impl<F> StepHook for F
where
    F: FnMut(usize, &StateProfile) -> Result<Option<f64>>,
{
    fn after_step(&mut self, step: usize, s: &StateProfile) -> Result<Option<f64>> {
        self(step, s)
    }
}

/// Step times `t0 + k*dt`, the last one truncated to land on `t_end`.
pub fn step_times(t0: f64, t_end: f64, dt: f64) -> Vec<f64> {
    let span = t_end - t0;
    if !(span > 0.0) {
        return Vec::new();
    }
    let mut n = (span / dt).ceil() as usize;
    // Absorb a last step shorter than rounding noise.
    if n > 1 && span - (n - 1) as f64 * dt <= 1e-9 * dt {
        n -= 1;
    }
    let mut ts: Vec<f64> = (1..n).map(|k| t0 + k as f64 * dt).collect();
    ts.push(t_end);
    ts
}

/// Marches from `s0` to `t_end` with the fixed step `rhs.stable_dt()`,
/// storing every profile.
pub fn simulate(
    rhs: &RightHandSide,
    s0: &StateProfile,
    input: &InputSignal,
    t_end: f64,
    mut hook: Option<&mut dyn StepHook>,
) -> Result<Trajectory> {
    s0.check_grid(&rhs.grid)?;
    if t_end < s0.t {
        return Err(Error::invalid(
            "t_end",
            format!("{t_end} precedes the initial time {}", s0.t),
        ));
    }
    let dt = rhs.stable_dt();
    let n = rhs.grid.n_cells();
    let mut input = input.clone();
    let mut traj = Trajectory::default();

    let mut cur = s0.clone();
    rhs.apply_closures(cur.t, &mut cur.u, &mut cur.v, input.value_at(cur.t));
    let record = |traj: &mut Trajectory,
                  hook: &mut Option<&mut dyn StepHook>,
                  input: &mut InputSignal,
                  step: usize,
                  mut s: StateProfile|
     -> Result<StateProfile> {
        if let Some(h) = hook.as_deref_mut() {
            if let Some(value) = h.after_step(step, &s)? {
                *input = InputSignal::Held { value, since: s.t };
                s.v[n] = value;
            }
        }
        traj.boundary_trace.push(BoundaryRecord {
            t: s.t,
            v0: s.v[0],
            u0: s.u[0],
            input: s.v[n],
        });
        traj.profiles.push(s.clone());
        Ok(s)
    };

    cur = record(&mut traj, &mut hook, &mut input, 0, cur)?;
    let mut ws = Workspace::new(rhs.grid.n_nodes());
    let mut t_prev = cur.t;
    for (k, t_next) in step_times(s0.t, t_end, dt).into_iter().enumerate() {
        rk4_in_place(rhs, &mut cur, &input, t_next - t_prev, &mut ws);
        // Pin the clock to the schedule so restarted runs step identically.
        cur.t = t_next;
        t_prev = t_next;
        if !cur.is_finite() {
            return Err(Error::NonFinite(format!("state at t = {t_next}")));
        }
        let norm = cur.norm_inf();
        if norm > BLOW_UP_NORM {
            return Err(Error::BlowUp { t: t_next, norm });
        }
        cur = record(&mut traj, &mut hook, &mut input, k + 1, cur)?;
    }
    Ok(traj)
}

/// Path `(z, s)` of the `u`-characteristic `dz/ds = lambda_u(z)`, `z(t0) = x0`,
/// integrated with RK4 steps of at most `ds_max` and clipped at `z = 1`.
pub fn trace_characteristic(m: &SystemModel, x0: f64, t0: f64, t1: f64, ds_max: f64) -> Result<Vec<(f64, f64)>> {
    if t1 < t0 {
        return Err(Error::invalid("t1", "must not precede t0"));
    }
    if !(ds_max > 0.0) {
        return Err(Error::invalid("ds_max", "must be positive"));
    }
    let lam = |z: f64| m.speed_u(z.clamp(0.0, 1.0));
    let mut path = vec![(x0, t0)];
    let mut z = x0;
    let mut s_prev = t0;
    for s in step_times(t0, t1, ds_max) {
        let ds = s - s_prev;
        if z < 1.0 {
            let k1 = lam(z);
            let k2 = lam(z + 0.5 * ds * k1);
            let k3 = lam(z + 0.5 * ds * k2);
            let k4 = lam(z + ds * k3);
            z = (z + ds / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)).min(1.0);
        }
        path.push((z, s));
        s_prev = s;
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::signature;

    fn transport() -> SystemModel {
        SystemModel::parse("1", "1", "0", "0", "0").unwrap()
    }

    #[test]
    fn linear_profile_has_exact_upwind_slope() {
        let grid = Grid::new(20).unwrap();
        let rhs = semi_discretize(&transport(), &grid).unwrap();
        let u: Vec<f64> = grid.nodes().iter().map(|x| 3.0 * x - 1.0).collect();
        let v = vec![0.0; grid.n_nodes()];
        let (mut du, mut dv) = (vec![0.0; 21], vec![0.0; 21]);
        rhs.eval(&u, &v, &mut du, &mut dv);
        for &d in &du[1..] {
            assert!((d + 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_state_zero_rhs() {
        let grid = Grid::new(10).unwrap();
        let rhs = semi_discretize(&SystemModel::reference_example(), &grid).unwrap();
        let z = vec![0.0; 11];
        let (mut du, mut dv) = (vec![1.0; 11], vec![1.0; 11]);
        rhs.eval(&z, &z, &mut du, &mut dv);
        assert!(du.iter().chain(&dv).all(|&d| d == 0.0));
        let s = step(
            &rhs,
            &StateProfile::zeros(&grid, 0.0),
            &InputSignal::held(0.0),
            rhs.stable_dt(),
        )
        .unwrap();
        assert!(s.norm_inf() == 0.0);
    }

    #[test]
    fn coupling_vanishes_on_diagonal() {
        let m = SystemModel::reference_example();
        assert_eq!(m.source_v(1.0, 1.0, 0.0), 0.0);
    }

    #[test]
    fn cfl_enforced() {
        let grid = Grid::new(10).unwrap();
        let rhs = semi_discretize(&transport(), &grid).unwrap();
        let s = StateProfile::zeros(&grid, 0.0);
        assert!(matches!(
            step(&rhs, &s, &InputSignal::held(0.0), 2.0 * rhs.stable_dt()),
            Err(Error::Cfl { .. })
        ));
    }

    #[test]
    fn empty_horizon() {
        let grid = Grid::new(10).unwrap();
        let rhs = semi_discretize(&transport(), &grid).unwrap();
        let s = StateProfile::zeros(&grid, 1.0);
        let traj = simulate(&rhs, &s, &InputSignal::held(0.0), 1.0, None).unwrap();
        assert_eq!(traj.profiles.len(), 1);
        assert!(simulate(&rhs, &s, &InputSignal::held(0.0), 0.5, None).is_err());
    }

    #[test]
    fn step_schedule_lands_on_end() {
        let ts = step_times(0.0, 1.0, 0.3);
        assert_eq!(ts.len(), 4);
        assert_eq!(*ts.last().unwrap(), 1.0);
        let ts = step_times(0.0, 0.9, 0.3);
        assert_eq!(ts.len(), 3);
        assert!(step_times(1.0, 1.0, 0.1).is_empty());
    }

    #[test]
    fn sampled_input_holds() {
        let sig = InputSignal::Sampled(vec![(0.0, 1.0), (1.0, 2.0)]);
        assert_eq!(sig.value_at(0.5), 1.0);
        assert_eq!(sig.value_at(1.0), 2.0);
        assert_eq!(sig.value_at(-1.0), 1.0);
        let f = InputSignal::Function(CoeffFn::parse("2*t", signature::T).unwrap());
        assert_eq!(f.value_at(1.5), 3.0);
    }

    #[test]
    fn boundary_closures_hold_on_every_profile() {
        let grid = Grid::new(25).unwrap();
        let m = SystemModel::reference_example();
        let rhs = semi_discretize(&m, &grid).unwrap();
        let one = CoeffFn::parse("1", signature::X).unwrap();
        let s0 = StateProfile::from_fns(&grid, &one, &one, 0.0).unwrap();
        let input = InputSignal::Function(CoeffFn::parse("0.3*sin(t)", signature::T).unwrap());
        let traj = simulate(&rhs, &s0, &input, 1.0, None).unwrap();
        for (p, b) in traj.profiles.iter().zip(&traj.boundary_trace) {
            assert_eq!(p.u[0], m.boundary(p.v[0], p.t));
            assert_eq!(p.v[25], input.value_at(p.t));
            assert_eq!(b.input, p.v[25]);
            assert_eq!(b.t, p.t);
        }
        assert!(traj.times().zip(traj.times().skip(1)).all(|(a, b)| b > a));
    }

    #[test]
    fn hook_switches_input() {
        let grid = Grid::new(10).unwrap();
        let rhs = semi_discretize(&transport(), &grid).unwrap();
        let s0 = StateProfile::zeros(&grid, 0.0);
        let mut hook = |step: usize, _: &StateProfile| Ok((step == 3).then_some(2.0));
        let traj = simulate(&rhs, &s0, &InputSignal::held(0.0), 0.2, Some(&mut hook)).unwrap();
        assert_eq!(traj.boundary_trace[2].input, 0.0);
        assert!(traj.boundary_trace[3..].iter().all(|b| b.input == 2.0));
        assert_eq!(traj.profiles[3].v[10], 2.0);
    }

    #[test]
    fn characteristic_unit_speed() {
        let path = trace_characteristic(&transport(), 0.2, 1.0, 1.5, 0.01).unwrap();
        for &(z, s) in &path {
            assert!((z - (0.2 + s - 1.0)).abs() < 1e-12);
        }
        let path = trace_characteristic(&transport(), 0.5, 0.0, 2.0, 0.01).unwrap();
        assert_eq!(path.last().unwrap().0, 1.0);
    }

    #[test]
    fn characteristic_reaches_breakpoint() {
        let m = SystemModel::reference_example();
        let path = trace_characteristic(&m, 0.0, 0.0, 4.0, 1e-3).unwrap();
        assert!(path.windows(2).all(|w| w[1].0 >= w[0].0));
        // first sample at or beyond x = 0.5
        let (z, s) = *path.iter().find(|(z, _)| *z >= 0.5 - 1e-12).unwrap();
        assert!((s - 2.5).abs() <= 1e-3 + 1e-9, "z = {z}, s = {s}");
    }
}
