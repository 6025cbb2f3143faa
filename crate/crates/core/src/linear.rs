//! Closed-form trigger and update for linear plants
//!
//! ```text
//! u_t = -eps1(x) u_x + c1(x) v
//! v_t =  eps2(x) v_x + c2(x) u
//! u(0, t) = q v(0, t),   v(1, t) = U(t)
//! ```
//!
//! For these plants the predicted boundary value is affine in the state and
//! the held input,
//!
//! ```text
//! vbar(0) = Ubar - sum_i w_i (K_vu[i] u_i + K_vv[i] v_i)
//! U_new   =        sum_i w_i (K_vu[i] u_i + K_vv[i] v_i)
//! ```
//!
//! with trapezoidal weights `w_i`. The kernels are read off the prediction
//! pipeline's response to unit states, so both formulas reproduce the
//! pipeline to rounding on the grid they were extracted on.

use std::io::{self, BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::expr::CoeffFn;
use crate::model::{signature, Grid, SystemModel};
use crate::predictor::{solve_vbar, Predictor};
use crate::sim::StateProfile;

/// Superposition defect above which the pipeline is declared nonlinear.
pub const LINEARITY_TOL: f64 = 1e-8;

const CACHE_MAGIC: &str = "# etbc-kernels v1";

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystemSpec {
    pub eps1: CoeffFn,
    pub eps2: CoeffFn,
    pub c1: CoeffFn,
    pub c2: CoeffFn,
    pub q: f64,
}

/// Expression sources of a [`LinearSystemSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSources {
    pub eps1: String,
    pub eps2: String,
    pub c1: String,
    pub c2: String,
    pub q: f64,
}

impl LinearSystemSpec {
    pub fn parse(eps1: &str, eps2: &str, c1: &str, c2: &str, q: f64) -> Result<Self> {
        Self::from_sources(&LinearSources {
            eps1: eps1.into(),
            eps2: eps2.into(),
            c1: c1.into(),
            c2: c2.into(),
            q,
        })
    }

    pub fn from_sources(src: &LinearSources) -> Result<Self> {
        let field = |name: &str, text: &str| {
            CoeffFn::parse(text, signature::X).map_err(|source| Error::Parse {
                field: format!("linear.{name}"),
                source,
            })
        };
        if !src.q.is_finite() {
            return Err(Error::invalid("linear.q", "must be finite"));
        }
        let spec = LinearSystemSpec {
            eps1: field("eps1", &src.eps1)?,
            eps2: field("eps2", &src.eps2)?,
            c1: field("c1", &src.c1)?,
            c2: field("c2", &src.c2)?,
            q: src.q,
        };
        spec.to_system_model()?.speed_bounds(1001)?;
        Ok(spec)
    }

    pub fn sources(&self) -> LinearSources {
        LinearSources {
            eps1: self.eps1.source().into(),
            eps2: self.eps2.source().into(),
            c1: self.c1.source().into(),
            c2: self.c2.source().into(),
            q: self.q,
        }
    }

    /// `lambda_u = eps1`, `lambda_v = eps2`, `f_u = c1 v`, `f_v = c2 u`,
    /// `g = q v`.
    pub fn to_system_model(&self) -> Result<SystemModel> {
        SystemModel::parse(
            self.eps1.source(),
            self.eps2.source(),
            &format!("({}) * v", self.c1.source()),
            &format!("({}) * u", self.c2.source()),
            &format!("{:?} * v", self.q),
        )
    }

    /// SHA-256 over the canonical coefficient forms and the grid size.
    pub fn hash(&self, grid: &Grid) -> String {
        let mut h = Sha256::new();
        for (name, f) in [
            ("eps1", &self.eps1),
            ("eps2", &self.eps2),
            ("c1", &self.c1),
            ("c2", &self.c2),
        ] {
            h.update(format!("{name}={f};"));
        }
        h.update(format!("q={:?};n_cells={}", self.q, grid.n_cells()));
        hex::encode(h.finalize())
    }
}

/// Samples of `K_vu(1, x_i)` and `K_vv(1, x_i)` on the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelVector {
    pub k_vu: Vec<f64>,
    pub k_vv: Vec<f64>,
}

impl KernelVector {
    pub fn n_nodes(&self) -> usize {
        self.k_vu.len()
    }

    fn weights_for(&self, s: &StateProfile) -> Result<Vec<f64>> {
        let n = self.n_nodes();
        if n < 2 || self.k_vv.len() != n {
            return Err(Error::invalid("kernels", "K_vu and K_vv lengths differ"));
        }
        let grid = Grid::new(n - 1)?;
        s.check_grid(&grid)?;
        Ok(grid.trapezoid_weights())
    }

    /// `sum_i w_i (K_vu[i] u_i + K_vv[i] v_i)`.
    fn pairing(&self, s: &StateProfile) -> Result<f64> {
        let w = self.weights_for(s)?;
        Ok((0..w.len())
            .map(|i| w[i] * (self.k_vu[i] * s.u[i] + self.k_vv[i] * s.v[i]))
            .sum())
    }

    pub fn write_csv<W: Write>(&self, hash: &str, mut w: W) -> io::Result<()> {
        writeln!(w, "{CACHE_MAGIC}")?;
        writeln!(w, "# spec-sha256 {hash}")?;
        writeln!(w, "x,K_vu,K_vv")?;
        let n = self.n_nodes() - 1;
        for i in 0..=n {
            let x = if i == n { 1.0 } else { i as f64 / n as f64 };
            writeln!(w, "{:e},{:e},{:e}", x, self.k_vu[i], self.k_vv[i])?;
        }
        Ok(())
    }

    /// Reads a cache written by [`KernelVector::write_csv`], rejecting it
    /// unless its hash equals `expected_hash`.
    pub fn read_csv<R: BufRead>(r: R, expected_hash: &str) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| Error::invalid("kernel cache", "truncated header"))
        };
        if next()?.trim() != CACHE_MAGIC {
            return Err(Error::invalid("kernel cache", "missing magic line"));
        }
        let hash_line = next()?;
        let hash = hash_line
            .trim()
            .strip_prefix("# spec-sha256 ")
            .ok_or_else(|| Error::invalid("kernel cache", "missing hash line"))?;
        if hash != expected_hash {
            return Err(Error::StaleCache(hash.to_string()));
        }
        if next()?.trim() != "x,K_vu,K_vv" {
            return Err(Error::invalid("kernel cache", "unexpected column header"));
        }
        let mut k = KernelVector {
            k_vu: Vec::new(),
            k_vv: Vec::new(),
        };
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<f64> = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::invalid("kernel cache", format!("row {}: {e}", row + 1)))?;
            if cols.len() != 3 || !cols.iter().all(|c| c.is_finite()) {
                return Err(Error::invalid("kernel cache", format!("row {}: malformed", row + 1)));
            }
            k.k_vu.push(cols[1]);
            k.k_vv.push(cols[2]);
        }
        if k.n_nodes() < 2 {
            return Err(Error::invalid("kernel cache", "fewer than two rows"));
        }
        Ok(k)
    }
}

/// Predicted boundary value `vbar(0)` of the generic pipeline for state `s`
/// and held input `u_bar`.
pub fn pipeline_trigger(p: &Predictor, s: &StateProfile, u_bar: f64) -> Result<f64> {
    let slice = p.predict_ubar(s)?;
    Ok(solve_vbar(p.model(), &slice, u_bar)?[0])
}

/// Input update of the generic pipeline with target `vbar*(0) = 0`.
pub fn pipeline_update(p: &Predictor, s: &StateProfile) -> Result<f64> {
    let slice = p.predict_ubar(s)?;
    Ok(p.solve_target(&slice, 0.0)?[p.grid().n_cells()])
}

fn unit_state(grid: &Grid, node: usize, in_v: bool) -> StateProfile {
    let mut s = StateProfile::zeros(grid, 0.0);
    if in_v {
        s.v[node] = 1.0;
    } else {
        s.u[node] = 1.0;
    }
    s
}

/// Extracts the kernels by probing the prediction pipeline with unit states.
pub fn extract_kernels(spec: &LinearSystemSpec, grid: &Grid) -> Result<KernelVector> {
    let m = spec.to_system_model()?;
    let p = Predictor::new(&m, grid)?;
    let n_nodes = grid.n_nodes();
    let w = grid.trapezoid_weights();

    let zero = StateProfile::zeros(grid, 0.0);
    let input_gain = pipeline_trigger(&p, &zero, 1.0)?;
    if (input_gain - 1.0).abs() > LINEARITY_TOL {
        return Err(Error::Nonlinear {
            defect: (input_gain - 1.0).abs(),
        });
    }

    let responses: Vec<f64> = (0..2 * n_nodes)
        .into_par_iter()
        .map(|j| pipeline_trigger(&p, &unit_state(grid, j % n_nodes, j >= n_nodes), 0.0))
        .collect::<Result<_>>()?;
    let k_vu: Vec<f64> = (0..n_nodes).map(|i| -responses[i] / w[i]).collect();
    let k_vv: Vec<f64> = (0..n_nodes).map(|i| -responses[n_nodes + i] / w[i]).collect();
    if !k_vu.iter().chain(&k_vv).all(|k| k.is_finite()) {
        return Err(Error::NonFinite("kernel samples".into()));
    }

    // Superposition on a few pairs, plus homogeneity and the input channel.
    let scale = responses.iter().fold(1.0f64, |a, r| a.max(r.abs()));
    let last = n_nodes - 1;
    let probes = [(0, last), (last / 2, last / 3 + n_nodes), (n_nodes, 2 * n_nodes - 1)];
    for (a, b) in probes {
        let mut s = unit_state(grid, a % n_nodes, a >= n_nodes);
        let e = unit_state(grid, b % n_nodes, b >= n_nodes);
        for i in 0..n_nodes {
            s.u[i] = 2.0 * s.u[i] + e.u[i];
            s.v[i] = 2.0 * s.v[i] + e.v[i];
        }
        let got = pipeline_trigger(&p, &s, 0.5)?;
        let want = 2.0 * responses[a] + responses[b] + 0.5;
        let defect = (got - want).abs() / scale;
        if defect > LINEARITY_TOL {
            return Err(Error::Nonlinear { defect });
        }
    }
    Ok(KernelVector { k_vu, k_vv })
}

/// `Ubar - sum_i w_i (K_vu[i] u_i + K_vv[i] v_i)`.
pub fn closed_form_trigger(k: &KernelVector, s: &StateProfile, u_bar: f64) -> Result<f64> {
    Ok(u_bar - k.pairing(s)?)
}

/// `sum_i w_i (K_vu[i] u_i + K_vv[i] v_i)`, the input that zeroes the trigger.
pub fn closed_form_update(k: &KernelVector, s: &StateProfile) -> Result<f64> {
    k.pairing(s)
}
