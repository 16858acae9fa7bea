use smt_core::physics::{
    ode_residual_alpha, pde_residual_t, robin_residual, HeatState, Side, TaskSpec,
};
use smt_core::solver::{solve, Grid, SolutionField};

/// Fine reference field with a snapshot every 10 s.
fn field(task: &TaskSpec) -> SolutionField {
    let grid = Grid::new(81, 0.1, task.t_end())
        .unwrap()
        .with_output_interval(10.0);
    solve(task, &grid).unwrap()
}

/// Worst residual of the gridded solution, each relative to the size of its
/// largest term at that point (floored to skip near-equilibrium points).
fn residuals(task: &TaskSpec, f: &SolutionField) -> (f64, f64, f64) {
    let m = &task.material;
    let dx = f.positions[1] - f.positions[0];
    let (mut pde, mut ode, mut bc) = (0.0f64, 0.0f64, 0.0f64);
    for it in 1..f.nt() - 1 {
        // central differences in time cannot resolve the start-up transient
        // or the kinks of the air temperature
        let t = f.times[it];
        if t < 300.0
            || task
                .cycle
                .breakpoints
                .iter()
                .any(|&(b, _)| (t - b).abs() <= 60.0)
        {
            continue;
        }
        let dt = f.times[it + 1] - f.times[it - 1];
        let ddt = |g: &dyn Fn(usize) -> f64| (g(it + 1) - g(it - 1)) / dt;
        for ix in 1..f.nx() - 1 {
            let s = HeatState {
                dt_dt: ddt(&|j| f.temp_at(j, ix)),
                d2t_dx2: (f.temp_at(it, ix + 1) - 2.0 * f.temp_at(it, ix) + f.temp_at(it, ix - 1))
                    / (dx * dx),
                dalpha_dt: ddt(&|j| f.alpha_at(j, ix)),
            };
            let terms = [
                m.heat_capacity() * s.dt_dt,
                m.kxx * s.d2t_dx2,
                m.reaction_heat() * s.dalpha_dt,
            ];
            let scale = terms.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1e3);
            pde = pde.max(pde_residual_t(&s, m).abs() / scale);
            let r = ode_residual_alpha(
                f.alpha_at(it, ix),
                f.temp_at(it, ix),
                s.dalpha_dt,
                &task.kinetics,
            )
            .unwrap();
            ode = ode.max(r.abs() / s.dalpha_dt.abs().max(1e-6));
        }
        // second-order one-sided surface gradients
        let n = f.nx() - 1;
        let top = (3.0 * f.temp_at(it, n) - 4.0 * f.temp_at(it, n - 1) + f.temp_at(it, n - 2))
            / (2.0 * dx);
        let bottom =
            (-3.0 * f.temp_at(it, 0) + 4.0 * f.temp_at(it, 1) - f.temp_at(it, 2)) / (2.0 * dx);
        for (side, ts, g) in [
            (Side::Top, f.temp_at(it, n), top),
            (Side::Bottom, f.temp_at(it, 0), bottom),
        ] {
            let r = robin_residual(side, ts, g, f.times[it], task).unwrap();
            bc = bc.max(r.abs() / (m.kxx * g).abs().max(100.0));
        }
    }
    (pde, ode, bc)
}

#[test]
fn reference_field_satisfies_the_pointwise_residuals() {
    for task in [
        TaskSpec::default(),
        TaskSpec::with_htc(40.0, 40.0),
        TaskSpec::with_htc(60.0, 20.0),
    ] {
        let (pde, ode, bc) = residuals(&task, &field(&task));
        assert!(
            pde < 2e-2 && ode < 2e-2 && bc < 2e-2,
            "htc {}/{}: pde {pde:.2e} ode {ode:.2e} bc {bc:.2e}",
            task.h_top,
            task.h_bottom
        );
    }
}
