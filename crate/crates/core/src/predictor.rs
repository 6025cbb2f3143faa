//! Predictions on the determinate set.
//!
//! Given the state `w(., t)`, the trace `ubar(x) = u(x, t + tau_v(x))` is
//! fixed no matter which input is applied after `t`. It is computed on a
//! characteristic grid: column `i` (node `x_i`) carries points at which a
//! `v`-characteristic crosses it. The `v`-characteristic that starts at node
//! `x_j` at time `t` meets column `i <= j` at `t + tau_v(x_i) - tau_v(x_j)`; the
//! one that leaves `x = 1` at `t + tau_v(0) - tau_v(x_m)` meets it at
//! `t + tau_v(x_i) + tau_v(0) - tau_v(x_m)` for `m <= i`. Along these lines `v`
//! is transported exactly; `u` is traced back one cell along its own
//! characteristic and interpolated in time on the neighbouring column.
//! Sources are integrated with Heun's method.
//!
//! The points launched from `x = 1` after `t` are the only ones that see the
//! stand-in input, and no `u` update below the line `s = t + tau_v(x)` ever
//! reads them, so the prediction is independent of the stand-in by
//! construction rather than up to discretization noise.
//!
//! `vbar` and the target `vbar*` solve `dvbar/dtau = f_v(ubar, vbar, x)` in the
//! travel-time variable `tau = tau_v(x)` with the implicit trapezoidal rule.
//! The rule is symmetric, so the downward solve from `x = 1` and the upward
//! solve from `x = 0` are exact inverses of each other up to rounding.

use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::model::{Grid, NodeTimes, SystemModel};
use crate::sim::StateProfile;

/// `ubar(x_i) = u(x_i, t + tau_v(x_i))` on the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacteristicSlice {
    pub t: f64,
    pub ubar: Vec<f64>,
    pub tau_v_nodes: Vec<f64>,
}

impl CharacteristicSlice {
    pub fn n_nodes(&self) -> usize {
        self.ubar.len()
    }

    fn check(&self) -> Result<()> {
        if self.ubar.len() < 2 || self.tau_v_nodes.len() != self.ubar.len() {
            return Err(Error::GridMismatch {
                expected: self.tau_v_nodes.len(),
                found: self.ubar.len(),
            });
        }
        if !self.ubar.iter().all(|z| z.is_finite()) {
            return Err(Error::NonFinite("characteristic slice".into()));
        }
        Ok(())
    }
}

/// Full solution on the characteristic grid over `[t, t + tau_v(0)]`.
#[derive(Debug, Clone)]
pub struct PredictionRectangle {
    pub t: f64,
    /// Per column: absolute times, `u`, `v`.
    pub columns: Vec<ColumnValues>,
    /// Number of cells; column `i` entries `0..=n-i` lie in the determinate set
    /// (the last of them on the line `s = t + tau_v(x_i)`).
    n: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ColumnValues {
    pub x: f64,
    pub t: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl PredictionRectangle {
    /// `u` on the line `s = t + tau_v(x)`.
    pub fn ubar(&self) -> Vec<f64> {
        self.columns.iter().enumerate().map(|(i, c)| c.u[self.n - i]).collect()
    }

    /// `(sup |u|, sup |v|)` over the determinate sets; `v` excludes the line.
    pub fn determinate_sup(&self) -> (f64, f64) {
        let mut su = 0.0f64;
        let mut sv = 0.0f64;
        for (i, c) in self.columns.iter().enumerate() {
            for k in 0..=self.n - i {
                su = su.max(c.u[k].abs());
                if k < self.n - i {
                    sv = sv.max(c.v[k].abs());
                }
            }
        }
        (su, sv)
    }

    /// `x,t,u,v,determinate` rows, column by column.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x,t,u,v,determinate")?;
        for (i, c) in self.columns.iter().enumerate() {
            for k in 0..c.t.len() {
                writeln!(
                    w,
                    "{:e},{:e},{:e},{:e},{}",
                    c.x,
                    c.t[k],
                    c.u[k],
                    c.v[k],
                    u8::from(k <= self.n - i)
                )?;
            }
        }
        Ok(())
    }
}

/// Reusable prediction machinery for one model on one grid.
#[derive(Debug, Clone)]
pub struct Predictor {
    model: SystemModel,
    grid: Grid,
    times: NodeTimes,
    x: Vec<f64>,
    /// `v` transit time of cell `[x_i, x_{i+1}]`.
    dv: Vec<f64>,
    /// `u` transit time of cell `[x_i, x_{i+1}]`.
    du: Vec<f64>,
    /// Relative point times per column, rectangle layout.
    col_times: Vec<Vec<f64>>,
}

struct Work {
    t: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    fu: Vec<Vec<f64>>,
    fv: Vec<Vec<f64>>,
}

impl Predictor {
    pub fn new(m: &SystemModel, grid: &Grid) -> Result<Self> {
        m.speed_bounds(grid.n_nodes().max(101))?;
        let times = NodeTimes::new(m, grid)?;
        let n = grid.n_cells();
        let a = &times.tau_v;
        let b = &times.tau_u;
        let dv: Vec<f64> = (0..n).map(|i| a[i] - a[i + 1]).collect();
        let du: Vec<f64> = (0..n).map(|i| b[i + 1] - b[i]).collect();
        let col_times = (0..=n)
            .map(|i| {
                (0..=n)
                    .map(|k| {
                        if k <= n - i {
                            a[i] - a[i + k]
                        } else {
                            a[i] + a[0] - a[k - (n - i)]
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Predictor {
            model: m.clone(),
            grid: *grid,
            x: grid.nodes(),
            dv,
            du,
            col_times,
            times,
        })
    }

    pub fn model(&self) -> &SystemModel {
        &self.model
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn node_times(&self) -> &NodeTimes {
        &self.times
    }

    /// `tau_v(0)`, the prediction horizon.
    pub fn horizon(&self) -> f64 {
        self.times.tau_v[0]
    }

    /// Predicts `ubar(., t)` from the state `w_t`.
    pub fn predict_ubar(&self, w_t: &StateProfile) -> Result<CharacteristicSlice> {
        let work = self.solve(w_t, None)?;
        let n = self.grid.n_cells();
        let ubar: Vec<f64> = (0..=n).map(|i| work.u[i][n - i]).collect();
        if !ubar.iter().all(|z| z.is_finite()) {
            return Err(Error::NonFinite("prediction".into()));
        }
        Ok(CharacteristicSlice {
            t: w_t.t,
            ubar,
            tau_v_nodes: self.times.tau_v.clone(),
        })
    }

    /// Solves the plant over the whole rectangle `[0,1] x [t, t + tau_v(0)]`
    /// with the input held at `standin` after `t`.
    pub fn predict_rectangle(&self, w_t: &StateProfile, standin: f64) -> Result<PredictionRectangle> {
        let work = self.solve(w_t, Some(standin))?;
        let columns = (0..=self.grid.n_cells())
            .map(|i| ColumnValues {
                x: self.x[i],
                t: work.t[i].iter().map(|s| w_t.t + s).collect(),
                u: work.u[i].clone(),
                v: work.v[i].clone(),
            })
            .collect();
        Ok(PredictionRectangle {
            t: w_t.t,
            columns,
            n: self.grid.n_cells(),
        })
    }

    pub fn solve_vbar(&self, slice: &CharacteristicSlice, terminal: f64) -> Result<Vec<f64>> {
        solve_vbar(&self.model, slice, terminal)
    }

    pub fn solve_target(&self, slice: &CharacteristicSlice, v0_target: f64) -> Result<Vec<f64>> {
        solve_target(&self.model, slice, v0_target)
    }

    fn solve(&self, w: &StateProfile, standin: Option<f64>) -> Result<Work> {
        w.check_grid(&self.grid)?;
        if !w.is_finite() {
            return Err(Error::NonFinite("state handed to the predictor".into()));
        }
        let n = self.grid.n_cells();
        let m = &self.model;
        let x = &self.x;
        let len = |i: usize| if standin.is_some() { n + 1 } else { n - i + 1 };
        let mut work = Work {
            t: (0..=n).map(|i| self.col_times[i][..len(i)].to_vec()).collect(),
            u: (0..=n).map(|i| vec![0.0; len(i)]).collect(),
            v: (0..=n).map(|i| vec![0.0; len(i)]).collect(),
            fu: (0..=n).map(|i| vec![0.0; len(i)]).collect(),
            fv: (0..=n).map(|i| vec![0.0; len(i)]).collect(),
        };
        for i in 0..=n {
            let (u, v) = (w.u[i], w.v[i]);
            work.u[i][0] = u;
            work.v[i][0] = v;
            work.fu[i][0] = m.source_u(u, v, x[i]);
            work.fv[i][0] = m.source_v(u, v, x[i]);
        }

        // Characteristics launched from the initial line, then from x = 1.
        for c in 1..=n {
            for i in (0..c).rev() {
                self.advance(&mut work, w, i, c - i, None);
            }
        }
        if let Some(standin) = standin {
            for mm in 1..=n {
                let c = n + mm;
                for i in (mm..=n).rev() {
                    let value = (i == n).then_some(standin);
                    self.advance(&mut work, w, i, c - i, value);
                }
            }
        }
        Ok(work)
    }

    /// Fills entry `k >= 1` of column `i`. `boundary_v` replaces the `v`
    /// transport on column `n` above the determinate set.
    fn advance(&self, work: &mut Work, w: &StateProfile, i: usize, k: usize, boundary_v: Option<f64>) {
        let m = &self.model;
        let x = self.x[i];
        let t_rel = work.t[i][k];

        // v along its characteristic from column i + 1.
        let (v_pred, v_base) = match boundary_v {
            Some(value) => (value, None),
            None => {
                let (vp, fvp) = (work.v[i + 1][k - 1], work.fv[i + 1][k - 1]);
                let dur = self.dv[i];
                (vp + dur * fvp, Some((vp, fvp, dur)))
            }
        };

        // u traced back to column i - 1 or to the initial line.
        let u_base = (i > 0).then(|| {
            let dur = self.du[i - 1];
            let foot = t_rel - dur;
            let (uf, vf, xf, dur) = if foot < 0.0 {
                let theta = t_rel / dur;
                (
                    w.u[i] + theta * (w.u[i - 1] - w.u[i]),
                    w.v[i] + theta * (w.v[i - 1] - w.v[i]),
                    x - theta * self.grid.h(),
                    t_rel,
                )
            } else {
                let (uf, vf) = interpolate_column(work, i - 1, k, foot);
                (uf, vf, self.x[i - 1], dur)
            };
            (uf, m.source_u(uf, vf, xf), dur)
        });

        let t_abs = w.t + t_rel;
        let u_pred = match u_base {
            Some((uf, fuf, dur)) => uf + dur * fuf,
            None => m.boundary(v_pred, t_abs),
        };
        let v_new = match v_base {
            Some((vp, fvp, dur)) => vp + 0.5 * dur * (fvp + m.source_v(u_pred, v_pred, x)),
            None => v_pred,
        };
        let u_new = match u_base {
            Some((uf, fuf, dur)) => uf + 0.5 * dur * (fuf + m.source_u(u_pred, v_pred, x)),
            None => m.boundary(v_new, t_abs),
        };
        work.u[i][k] = u_new;
        work.v[i][k] = v_new;
        work.fu[i][k] = m.source_u(u_new, v_new, x);
        work.fv[i][k] = m.source_v(u_new, v_new, x);
    }
}

/// Linear interpolation of `(u, v)` on column `col` at relative time `s`,
/// using entries `0..=last` (the ones already computed). Extrapolates from the
/// last two entries when `s` lies beyond them, which only happens when a cell's
/// `v` transit time exceeds a neighbour's `u` plus `v` transit times.
fn interpolate_column(work: &Work, col: usize, last: usize, s: f64) -> (f64, f64) {
    let ts = &work.t[col][..=last];
    let p = ts.partition_point(|&tk| tk <= s);
    let hi = p.clamp(1, last.max(1)).min(last);
    let lo = hi.saturating_sub(1);
    if hi == lo {
        return (work.u[col][lo], work.v[col][lo]);
    }
    let theta = (s - ts[lo]) / (ts[hi] - ts[lo]);
    let lerp = |z: &[f64]| z[lo] + theta * (z[hi] - z[lo]);
    (lerp(&work.u[col]), lerp(&work.v[col]))
}

/// Solves `y = c + k * f(y)` for scalar `y` by the secant method.
fn solve_implicit<F: Fn(f64) -> f64>(c: f64, k: f64, f: F, guess: f64) -> Option<f64> {
    let phi = |y: f64| y - c - k * f(y);
    let mut y0 = guess;
    let mut p0 = phi(y0);
    if p0 == 0.0 {
        return Some(y0);
    }
    let mut y1 = c + k * f(y0);
    for _ in 0..100 {
        let p1 = phi(y1);
        if !p1.is_finite() {
            return None;
        }
        if p1 == 0.0 || (y1 - y0).abs() <= 4.0 * f64::EPSILON * y1.abs() {
            return Some(y1);
        }
        if p1 == p0 {
            // Flat secant: fall back to a fixed-point step.
            y0 = y1;
            p0 = p1;
            y1 = c + k * f(y1);
            continue;
        }
        let y2 = y1 - p1 * (y1 - y0) / (p1 - p0);
        y0 = y1;
        p0 = p1;
        y1 = y2;
    }
    let p = phi(y1);
    (p.abs() <= 1e-13 * y1.abs().max(c.abs()).max(f64::MIN_POSITIVE)).then_some(y1)
}

fn node_x(i: usize, n: usize) -> f64 {
    if i == n {
        1.0
    } else {
        i as f64 / n as f64
    }
}

/// `vbar` with `vbar(1) = terminal`, integrated from `x = 1` down to `x = 0`.
/// Entry 0 is the predicted boundary value `v(0, t + tau_v(0))`.
pub fn solve_vbar(m: &SystemModel, slice: &CharacteristicSlice, terminal: f64) -> Result<Vec<f64>> {
    slice.check()?;
    let n = slice.n_nodes() - 1;
    let a = &slice.tau_v_nodes;
    let mut out = vec![0.0; n + 1];
    out[n] = terminal;
    let mut f_prev = m.source_v(slice.ubar[n], terminal, 1.0);
    for i in (0..n).rev() {
        let x = node_x(i, n);
        let half = 0.5 * (a[i] - a[i + 1]);
        let ub = slice.ubar[i];
        let c = out[i + 1] + half * f_prev;
        let y = solve_implicit(c, half, |y| m.source_v(ub, y, x), out[i + 1] + 2.0 * half * f_prev)
            .ok_or(Error::RootNonConvergence { x })?;
        out[i] = y;
        f_prev = m.source_v(ub, y, x);
        if !f_prev.is_finite() {
            return Err(Error::NonFinite(format!("f_v along vbar at x = {x}")));
        }
    }
    Ok(out)
}

/// Target `vbar*` with `vbar*(0) = v0_target`, integrated from `x = 0` up to
/// `x = 1`. The last entry is the input that realises the target.
pub fn solve_target(m: &SystemModel, slice: &CharacteristicSlice, v0_target: f64) -> Result<Vec<f64>> {
    slice.check()?;
    let n = slice.n_nodes() - 1;
    let a = &slice.tau_v_nodes;
    let mut out = vec![0.0; n + 1];
    out[0] = v0_target;
    let mut f_prev = m.source_v(slice.ubar[0], v0_target, 0.0);
    for i in 0..n {
        let x = node_x(i + 1, n);
        let half = 0.5 * (a[i] - a[i + 1]);
        let ub = slice.ubar[i + 1];
        let c = out[i] - half * f_prev;
        let y = solve_implicit(c, -half, |y| m.source_v(ub, y, x), out[i] - 2.0 * half * f_prev)
            .ok_or(Error::RootNonConvergence { x })?;
        out[i + 1] = y;
        f_prev = m.source_v(ub, y, x);
        if !f_prev.is_finite() {
            return Err(Error::NonFinite(format!("f_v along vbar* at x = {x}")));
        }
    }
    Ok(out)
}

/// One-shot prediction; prefer [`Predictor`] in loops.
pub fn predict_ubar(m: &SystemModel, grid: &Grid, w_t: &StateProfile) -> Result<CharacteristicSlice> {
    Predictor::new(m, grid)?.predict_ubar(w_t)
}
