//! Plant models: coefficient functions, assumption checks and
//! characteristic travel times.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::CoeffFn;

/// Argument lists of the model's coefficient functions.
pub mod signature {
    pub const X: &[&str] = &["x"];
    pub const T: &[&str] = &["t"];
    pub const UVX: &[&str] = &["u", "v", "x"];
    pub const VT: &[&str] = &["v", "t"];
}

/// Absolute tolerance for the equilibrium conditions at the origin.
pub const EQUILIBRIUM_TOL: f64 = 1e-12;

/// Half-width of the state box on which Lipschitz constants are sampled.
pub const LIPSCHITZ_BOX: f64 = 5.0;

/// Time window on which `g` is sampled.
pub const BOUNDARY_MAP_HORIZON: f64 = 10.0;

/// Uniform grid `x_i = i / n_cells` on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    n_cells: usize,
}

impl Grid {
    pub fn new(n_cells: usize) -> Result<Self> {
        if n_cells == 0 {
            return Err(Error::invalid("n_cells", "must be positive"));
        }
        Ok(Grid { n_cells })
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_nodes(&self) -> usize {
        self.n_cells + 1
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n_cells as f64
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        if i == self.n_cells {
            1.0
        } else {
            i as f64 / self.n_cells as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|i| self.x(i)).collect()
    }

    /// Trapezoidal quadrature weights on the nodes.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let h = self.h();
        let mut w = vec![h; self.n_nodes()];
        w[0] = 0.5 * h;
        w[self.n_cells] = 0.5 * h;
        w
    }
}

/// The 2x2 semilinear plant
///
/// ```text
/// u_t = -lambda_u(x) u_x + f_u(u, v, x)
/// v_t =  lambda_v(x) v_x + f_v(u, v, x)
/// u(0, t) = g(v(0, t), t),   v(1, t) = U(t)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub lambda_u: CoeffFn,
    pub lambda_v: CoeffFn,
    pub f_u: CoeffFn,
    pub f_v: CoeffFn,
    pub g: CoeffFn,
}

/// Expression sources of a [`SystemModel`], as stored in model files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSources {
    pub lambda_u: String,
    pub lambda_v: String,
    pub f_u: String,
    pub f_v: String,
    pub g: String,
}

fn parse_field(field: &str, src: &str, vars: &[&str]) -> Result<CoeffFn> {
    CoeffFn::parse(src, vars).map_err(|source| Error::Parse {
        field: field.to_string(),
        source,
    })
}

impl SystemModel {
    pub fn from_sources(src: &ModelSources) -> Result<Self> {
        Ok(SystemModel {
            lambda_u: parse_field("lambda_u", &src.lambda_u, signature::X)?,
            lambda_v: parse_field("lambda_v", &src.lambda_v, signature::X)?,
            f_u: parse_field("f_u", &src.f_u, signature::UVX)?,
            f_v: parse_field("f_v", &src.f_v, signature::UVX)?,
            g: parse_field("g", &src.g, signature::VT)?,
        })
    }

    pub fn parse(lambda_u: &str, lambda_v: &str, f_u: &str, f_v: &str, g: &str) -> Result<Self> {
        Self::from_sources(&ModelSources {
            lambda_u: lambda_u.into(),
            lambda_v: lambda_v.into(),
            f_u: f_u.into(),
            f_v: f_v.into(),
            g: g.into(),
        })
    }

    pub fn sources(&self) -> ModelSources {
        ModelSources {
            lambda_u: self.lambda_u.source().to_string(),
            lambda_v: self.lambda_v.source().to_string(),
            f_u: self.f_u.source().to_string(),
            f_v: self.f_v.source().to_string(),
            g: self.g.source().to_string(),
        }
    }

    /// Open-loop unstable benchmark: piecewise `lambda_u`, sinusoidal couplings
    /// and a reflecting boundary `u(0) = -v(0)`.
    pub fn reference_example() -> Self {
        Self::parse(
            "case(x < 0.5, 0.2, 2 - x)",
            "1 + 0.5*x",
            "sin(u + v)/(3 - x)",
            "sin(v - u)",
            "-v",
        )
        .expect("built-in model parses")
    }

    #[inline]
    pub fn speed_u(&self, x: f64) -> f64 {
        self.lambda_u.eval(&[x])
    }

    #[inline]
    pub fn speed_v(&self, x: f64) -> f64 {
        self.lambda_v.eval(&[x])
    }

    #[inline]
    pub fn source_u(&self, u: f64, v: f64, x: f64) -> f64 {
        self.f_u.eval(&[u, v, x])
    }

    #[inline]
    pub fn source_v(&self, u: f64, v: f64, x: f64) -> f64 {
        self.f_v.eval(&[u, v, x])
    }

    #[inline]
    pub fn boundary(&self, v: f64, t: f64) -> f64 {
        self.g.eval(&[v, t])
    }

    /// Speed bounds `(k_lambda, k_lambda_inv)` from `samples` equispaced points
    /// plus both sides of every breakpoint. Fails on a non-positive speed.
    pub fn speed_bounds(&self, samples: usize) -> Result<(f64, f64)> {
        let mut xs: Vec<f64> = (0..samples.max(2))
            .map(|k| k as f64 / (samples.max(2) - 1) as f64)
            .collect();
        for &b in self.lambda_u.breakpoints().iter().chain(self.lambda_v.breakpoints()) {
            if (0.0..=1.0).contains(&b) {
                xs.extend([b, prev_float(b).max(0.0), next_float(b).min(1.0)]);
            }
        }
        let (mut k_max, mut k_inv) = (0.0f64, 0.0f64);
        for &x in &xs {
            for (which, lam) in [("lambda_u", self.speed_u(x)), ("lambda_v", self.speed_v(x))] {
                if !lam.is_finite() {
                    return Err(Error::NonFinite(format!("{which} at x = {x}")));
                }
                if lam <= 0.0 {
                    return Err(Error::NonPositiveSpeed { which, x, value: lam });
                }
                k_max = k_max.max(lam);
                k_inv = k_inv.max(1.0 / lam);
            }
        }
        Ok((k_max, k_inv))
    }
}

fn next_float(x: f64) -> f64 {
    x + x.abs().max(1.0) * f64::EPSILON
}

fn prev_float(x: f64) -> f64 {
    x - x.abs().max(1.0) * f64::EPSILON
}

/// Bounds derived from sampling a model. `c1_emp`/`c2_emp` are filled in by
/// [`crate::controller::estimate_gain_constants`] and are diagnostics only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelBounds {
    pub k_lambda: f64,
    pub k_lambda_inv: f64,
    pub l_f: f64,
    pub l_g: f64,
    pub c1_emp: Option<f64>,
    pub c2_emp: Option<f64>,
}

/// Checks speed positivity and the equilibrium conditions on a sample
/// lattice and estimates the Lipschitz constants by central differences.
pub fn validate_model(m: &SystemModel, samples: usize) -> Result<ModelBounds> {
    if samples < 2 {
        return Err(Error::invalid("samples", "need at least 2"));
    }
    let (k_lambda, k_lambda_inv) = m.speed_bounds(samples)?;
    let xs: Vec<f64> = (0..samples).map(|k| k as f64 / (samples - 1) as f64).collect();
    let ts: Vec<f64> = xs.iter().map(|s| s * BOUNDARY_MAP_HORIZON).collect();

    for &x in &xs {
        for (which, val) in [("f_u", m.source_u(0.0, 0.0, x)), ("f_v", m.source_v(0.0, 0.0, x))] {
            if !(val.abs() <= EQUILIBRIUM_TOL) {
                return Err(Error::NotEquilibrium {
                    which,
                    at: format!("x = {x}"),
                    value: val,
                });
            }
        }
    }
    for &t in &ts {
        let val = m.boundary(0.0, t);
        if !(val.abs() <= EQUILIBRIUM_TOL) {
            return Err(Error::NotEquilibrium {
                which: "g",
                at: format!("t = {t}"),
                value: val,
            });
        }
    }

    // Central differences on a state lattice over [-B, B]^2.
    const STATES: usize = 11;
    let dw = 1e-6;
    let lattice: Vec<f64> = (0..STATES)
        .map(|k| -LIPSCHITZ_BOX + 2.0 * LIPSCHITZ_BOX * k as f64 / (STATES - 1) as f64)
        .collect();
    let mut l_f = 0.0f64;
    for &x in &xs {
        for &u in &lattice {
            for &v in &lattice {
                for f in [&m.f_u, &m.f_v] {
                    let du = (f.eval(&[u + dw, v, x]) - f.eval(&[u - dw, v, x])) / (2.0 * dw);
                    let dv = (f.eval(&[u, v + dw, x]) - f.eval(&[u, v - dw, x])) / (2.0 * dw);
                    let row = du.abs() + dv.abs();
                    if !row.is_finite() {
                        return Err(Error::NonFinite(format!(
                            "coupling derivative at (u, v, x) = ({u}, {v}, {x})"
                        )));
                    }
                    l_f = l_f.max(row);
                }
            }
        }
    }
    let mut l_g = 0.0f64;
    for &t in &ts {
        for &v in &lattice {
            let d = (m.boundary(v + dw, t) - m.boundary(v - dw, t)) / (2.0 * dw);
            if !d.is_finite() {
                return Err(Error::NonFinite(format!("dg/dv at (v, t) = ({v}, {t})")));
            }
            l_g = l_g.max(d.abs());
        }
    }

    Ok(ModelBounds {
        k_lambda,
        k_lambda_inv,
        l_f,
        l_g,
        c1_emp: None,
        c2_emp: None,
    })
}

/// Composite Simpson's rule on `[a, b]`, halving the panel width until two
/// successive estimates agree to `1e-9` (relative to `max(1, |I|)`).
///
/// Endpoints are sampled a hair inside the interval so that a jump sitting
/// exactly on `a` or `b` contributes its one-sided limit.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> Result<f64> {
    const TOL: f64 = 1e-9;
    const MAX_LEVEL: u32 = 22;
    if b == a {
        return Ok(0.0);
    }
    let nudge = (b - a) * 1e-13;
    let fa = f(a + nudge);
    let fb = f(b - nudge);
    let mut n: usize = 2;
    let mut ends = fa + fb;
    let mut odd_sum = f(0.5 * (a + b));
    let mut even_sum = 0.0;
    let mut prev = (b - a) / 6.0 * (ends + 4.0 * odd_sum);
    if !prev.is_finite() {
        return Err(Error::QuadratureNonConvergence { a, b });
    }
    for _ in 0..MAX_LEVEL {
        n *= 2;
        let hstep = (b - a) / n as f64;
        even_sum += odd_sum;
        odd_sum = (0..n / 2).map(|k| f(a + (2 * k + 1) as f64 * hstep)).sum::<f64>();
        ends = fa + fb;
        let cur = hstep / 3.0 * (ends + 4.0 * odd_sum + 2.0 * even_sum);
        if !cur.is_finite() {
            break;
        }
        if (cur - prev).abs() <= TOL * cur.abs().max(1.0) {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(Error::QuadratureNonConvergence { a, b })
}

/// `int_a^b dxi / lambda(xi)`, split at the breakpoints of `lambda`.
pub fn travel_time(lambda: &CoeffFn, a: f64, b: f64) -> Result<f64> {
    let mut cuts = vec![a];
    cuts.extend(lambda.breakpoints().iter().copied().filter(|&p| p > a && p < b));
    cuts.push(b);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        total += simpson(|x| 1.0 / lambda.eval(&[x]), w[0], w[1])?;
    }
    Ok(total)
}

/// `(tau_u(x), tau_v(x))`: travel time of a `u`-characteristic from `0` to
/// `x` and of a `v`-characteristic from `1` to `x`.
pub fn characteristic_times(m: &SystemModel, x: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::invalid("x", format!("{x} is outside [0, 1]")));
    }
    Ok((travel_time(&m.lambda_u, 0.0, x)?, travel_time(&m.lambda_v, x, 1.0)?))
}

/// Travel times at every grid node, accumulated cell by cell.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeTimes {
    /// `tau_u(x_i)`, nondecreasing from 0.
    pub tau_u: Vec<f64>,
    /// `tau_v(x_i)`, nonincreasing to 0.
    pub tau_v: Vec<f64>,
}

impl NodeTimes {
    pub fn new(m: &SystemModel, grid: &Grid) -> Result<Self> {
        let n = grid.n_cells();
        let mut cell_u = Vec::with_capacity(n);
        let mut cell_v = Vec::with_capacity(n);
        for i in 0..n {
            cell_u.push(travel_time(&m.lambda_u, grid.x(i), grid.x(i + 1))?);
            cell_v.push(travel_time(&m.lambda_v, grid.x(i), grid.x(i + 1))?);
        }
        let mut tau_u = vec![0.0; n + 1];
        for i in 0..n {
            tau_u[i + 1] = tau_u[i] + cell_u[i];
        }
        let mut tau_v = vec![0.0; n + 1];
        for i in (0..n).rev() {
            tau_v[i] = tau_v[i + 1] + cell_v[i];
        }
        Ok(NodeTimes { tau_u, tau_v })
    }

    /// `tau_v(0) + tau_u(1)`, the finite settling time of the continuous loop.
    pub fn settling_time(&self) -> f64 {
        self.tau_v[0] + self.tau_u[self.tau_u.len() - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_model() -> SystemModel {
        SystemModel::parse("1", "1", "0", "0", "0").unwrap()
    }

    #[test]
    fn reference_example_bounds() {
        let m = SystemModel::reference_example();
        let b = validate_model(&m, 101).unwrap();
        assert!((b.k_lambda - 1.5).abs() < 1e-12, "{}", b.k_lambda);
        assert!((b.k_lambda_inv - 5.0).abs() < 1e-12, "{}", b.k_lambda_inv);
        // |d/du| + |d/dv| of sin(u+v)/(3-x) peaks at 2/2 = 1 on x = 1; sin(v-u) gives 2.
        assert!((b.l_f - 2.0).abs() < 1e-6, "{}", b.l_f);
        assert!((b.l_g - 1.0).abs() < 1e-6);
        assert!(b.c1_emp.is_none());
    }

    #[test]
    fn zero_speed_rejected() {
        let m = SystemModel::parse("0", "1", "0", "0", "0").unwrap();
        assert!(matches!(
            validate_model(&m, 11),
            Err(Error::NonPositiveSpeed { which: "lambda_u", .. })
        ));
    }

    #[test]
    fn shifted_equilibrium_rejected() {
        let m = SystemModel::parse("1", "1", "u + 1", "0", "0").unwrap();
        assert!(matches!(
            validate_model(&m, 11),
            Err(Error::NotEquilibrium { which: "f_u", .. })
        ));
        let m = SystemModel::parse("1", "1", "0", "0", "v + 0.1*t").unwrap();
        assert!(matches!(
            validate_model(&m, 11),
            Err(Error::NotEquilibrium { which: "g", .. })
        ));
    }

    #[test]
    fn too_few_samples() {
        assert!(validate_model(&unit_model(), 1).is_err());
    }

    #[test]
    fn unit_speed_times() {
        let m = unit_model();
        for x in [0.0, 0.3, 0.71, 1.0] {
            let (tu, tv) = characteristic_times(&m, x).unwrap();
            assert!((tu - x).abs() < 1e-14);
            assert!((tv - (1.0 - x)).abs() < 1e-14);
        }
        assert!(characteristic_times(&m, 1.5).is_err());
    }

    #[test]
    fn reference_example_times() {
        let m = SystemModel::reference_example();
        let (_, tv0) = characteristic_times(&m, 0.0).unwrap();
        let (tu1, _) = characteristic_times(&m, 1.0).unwrap();
        assert!((tv0 - 2.0 * 1.5f64.ln()).abs() < 1e-8 * tv0);
        assert!((tu1 - (2.5 + 1.5f64.ln())).abs() < 1e-8 * tu1);
    }

    #[test]
    fn node_times_accumulate() {
        let m = SystemModel::reference_example();
        let grid = Grid::new(50).unwrap();
        let nt = NodeTimes::new(&m, &grid).unwrap();
        assert_eq!(nt.tau_u[0], 0.0);
        assert_eq!(nt.tau_v[50], 0.0);
        assert!((nt.settling_time() - (3.0 * 1.5f64.ln() + 2.5)).abs() < 1e-8);
        for i in 0..=50 {
            let (tu, tv) = characteristic_times(&m, grid.x(i)).unwrap();
            assert!((nt.tau_u[i] - tu).abs() < 1e-9);
            assert!((nt.tau_v[i] - tv).abs() < 1e-9);
        }
    }

    #[test]
    fn grid_basics() {
        assert!(Grid::new(0).is_err());
        let g = Grid::new(4).unwrap();
        assert_eq!(g.nodes(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.trapezoid_weights().iter().sum::<f64>(), 1.0);
    }
}
