use etbc_core::sim::{self, InputSignal, StateProfile};
use etbc_core::{CoeffFn, Grid, SystemModel};

fn final_state(n: usize) -> (Grid, StateProfile) {
    let grid = Grid::new(n).unwrap();
    let m = SystemModel::reference_example();
    let u0 = CoeffFn::parse("-0.4*(1 - x)", &["x"]).unwrap();
    let v0 = CoeffFn::parse("0.4*(1 - x)^2", &["x"]).unwrap();
    let w0 = StateProfile::from_fns(&grid, &u0, &v0, 0.0).unwrap();
    let rhs = sim::semi_discretize(&m, &grid).unwrap();
    let traj = sim::simulate(&rhs, &w0, &InputSignal::held(0.0), 1.0, None).unwrap();
    (grid, traj.last().clone())
}

fn sample(w: &StateProfile, grid: &Grid, x: f64) -> (f64, f64) {
    let s = x / grid.h();
    let i = (s.floor() as usize).min(grid.n_cells() - 1);
    let th = s - i as f64;
    let lerp = |a: &[f64]| a[i] + th * (a[i + 1] - a[i]);
    (lerp(&w.u), lerp(&w.v))
}

#[test]
fn nonlinear_plant_converges_at_first_order() {
    let (fine_grid, fine) = final_state(800);
    let errors: Vec<f64> = [50, 100, 200]
        .iter()
        .map(|&n| {
            let (grid, w) = final_state(n);
            (0..=n)
                .map(|i| {
                    let (u, v) = sample(&fine, &fine_grid, grid.x(i));
                    (w.u[i] - u).abs().max((w.v[i] - v).abs())
                })
                .fold(0.0, f64::max)
        })
        .collect();
    for e in errors.windows(2) {
        let order = (e[0] / e[1]).log2();
        assert!((0.6..=1.4).contains(&order), "errors {errors:?}");
    }
}
