use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smt_core::meta::{
    adapt, inner_update, meta_gradient, outer_update, support_points, train_smt, warmup,
    MetaConfig, MetaLearnerState, MetaTask, TaskDistribution,
};
use smt_core::net::{init_params, NetworkArch, Objective};
use smt_core::physics::TaskSpec;
use smt_core::scalar::Scalar;
use smt_core::sequential::{Seeds, SegmentSchedule};
use smt_core::training::{
    fit_adam, AdamState, FitSpec, IcTargets, LossWeights, LrSchedule, Normalization, PinnProblem,
    PointCounts,
};
use smt_core::Result;

/// Σ_j (θ_j − c_j)²
struct Quadratic(Vec<f64>);

impl Objective for Quadratic {
    fn parameter_count(&self) -> usize {
        self.0.len()
    }

    fn value_and_grad<S: Scalar>(&self, p: &[S]) -> Result<(S, Vec<S>)> {
        let mut v = S::from_f64(0.0);
        let mut g = Vec::with_capacity(p.len());
        for (x, c) in p.iter().zip(&self.0) {
            let d = *x - S::from_f64(*c);
            v += d * d;
            g.push(d * S::from_f64(2.0));
        }
        Ok((v, g))
    }
}

/// Σ_j a_j θ_j⁴ + θ_0 θ_1, a non-quadratic toy with a varying Hessian.
struct Quartic(Vec<f64>);

impl Objective for Quartic {
    fn parameter_count(&self) -> usize {
        self.0.len()
    }

    fn value_and_grad<S: Scalar>(&self, p: &[S]) -> Result<(S, Vec<S>)> {
        let mut v = p[0] * p[1];
        let mut g = vec![S::from_f64(0.0); p.len()];
        g[0] += p[1];
        g[1] += p[0];
        for (j, (x, a)) in p.iter().zip(&self.0).enumerate() {
            let x2 = *x * *x;
            v += x2 * x2 * S::from_f64(*a);
            g[j] += x2 * *x * S::from_f64(4.0 * a);
        }
        Ok((v, g))
    }
}

#[test]
fn inner_step_hand_values() {
    let q = Quadratic(vec![1.0]);
    assert!((inner_update(&q, &[0.0], 0.1, 1).unwrap()[0] - 0.2).abs() < 1e-15);
    assert_eq!(inner_update(&q, &[0.3], 0.0, 3).unwrap(), vec![0.3]);
    assert_eq!(inner_update(&q, &[1.0], 0.5, 2).unwrap(), vec![1.0]);
}

#[test]
fn quadratic_family_closed_form() {
    let cs = [0.5, -1.0, 2.0, 0.25];
    let tasks: Vec<_> = cs
        .iter()
        .map(|&c| MetaTask {
            train: Quadratic(vec![c]),
            test: Quadratic(vec![c]),
        })
        .collect();
    for &alpha in &[0.0, 0.1, 0.3] {
        for &theta in &[-0.7, 0.0, 1.3] {
            let (v, g) = meta_gradient(&tasks, &[theta], alpha, 1, 0).unwrap();
            let k = (1.0 - 2.0 * alpha) * (1.0 - 2.0 * alpha);
            let value: f64 = cs.iter().map(|c| k * (theta - c) * (theta - c)).sum();
            let deriv: f64 = cs.iter().map(|c| 2.0 * k * (theta - c)).sum();
            assert!((v - value).abs() < 1e-12);
            assert!((g[0] - deriv).abs() < 1e-12, "{} vs {deriv}", g[0]);
        }
    }
}

fn fd_meta<O: Objective>(
    tasks: &[MetaTask<O>],
    theta: &[f64],
    lr: f64,
    steps: usize,
    h: f64,
) -> Vec<f64> {
    (0..theta.len())
        .map(|i| {
            let mut p = theta.to_vec();
            p[i] += h;
            let up = meta_gradient(tasks, &p, lr, steps, 0).unwrap().0;
            p[i] -= 2.0 * h;
            let dn = meta_gradient(tasks, &p, lr, steps, 0).unwrap().0;
            (up - dn) / (2.0 * h)
        })
        .collect()
}

#[test]
fn toy_meta_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tasks: Vec<_> = (0..3)
        .map(|_| MetaTask {
            train: Quartic((0..4).map(|_| rng.gen_range(0.2..1.0)).collect()),
            test: Quartic((0..4).map(|_| rng.gen_range(0.2..1.0)).collect()),
        })
        .collect();
    for steps in [1, 2] {
        let theta: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, g) = meta_gradient(&tasks, &theta, 0.05, steps, 0).unwrap();
        let fd = fd_meta(&tasks, &theta, 0.05, steps, 1e-5);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() / a.abs().max(1e-3) < 1e-6, "{a} vs {b}");
        }
    }
}

fn small_pinn_setup() -> (
    Vec<TaskSpec>,
    Vec<(smt_core::training::PointSet, smt_core::training::PointSet)>,
    NetworkArch,
) {
    let tasks = vec![
        TaskSpec::with_htc(60.0, 90.0),
        TaskSpec::with_htc(110.0, 45.0),
    ];
    let arch = NetworkArch::new(1, 4);
    let seeds = Seeds::new(3);
    let pts = (0..2)
        .map(|i| {
            support_points(
                PointCounts::new(10, 2, 2),
                (3600.0, 5400.0),
                0.03,
                seeds,
                0,
                i,
            )
            .unwrap()
        })
        .collect();
    (tasks, pts, arch)
}

#[test]
fn pinn_meta_gradient_matches_finite_differences() {
    let (tasks, pts, arch) = small_pinn_setup();
    let norm = Normalization::new(3600.0, 5400.0, 0.03).unwrap();
    let ics: Vec<_> = tasks.iter().map(IcTargets::from_task).collect();
    let w = LossWeights::default();
    let mtasks: Vec<_> = (0..2)
        .map(|i| MetaTask {
            train: PinnProblem::new(arch, &tasks[i], &pts[i].0, &ics[i], w, norm),
            test: PinnProblem::new(arch, &tasks[i], &pts[i].1, &ics[i], w, norm),
        })
        .collect();
    // shift the output biases so α̂ sits well above the α0 floor and T̂ near 100 °C
    let mut theta = init_params(arch, 8).unwrap().values;
    let n = theta.len();
    theta[n - 2] += 0.5;
    theta[n - 1] += 0.3;
    let lr = 1e-3;
    let (_, g) = meta_gradient(&mtasks, &theta, lr, 1, 0).unwrap();
    let fd = fd_meta(&mtasks, &theta, lr, 1, 1e-5);
    let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (a, b) in g.iter().zip(&fd) {
        assert!(
            (a - b).abs() <= 1e-4 * a.abs().max(1e-2 * scale),
            "{a} vs {b}"
        );
    }
    // the second-order term matters at this rate
    let (_, g0) = meta_gradient(&mtasks, &theta, 0.0, 1, 0).unwrap();
    assert!(g.iter().zip(&g0).any(|(a, b)| (a - b).abs() > 1e-6 * scale));
}

#[test]
fn zero_inner_rate_is_joint_descent() {
    let (tasks, pts, arch) = small_pinn_setup();
    let norm = Normalization::new(3600.0, 5400.0, 0.03).unwrap();
    let ics: Vec<_> = tasks.iter().map(IcTargets::from_task).collect();
    let w = LossWeights::default();
    let mtasks: Vec<_> = (0..2)
        .map(|i| MetaTask {
            train: PinnProblem::new(arch, &tasks[i], &pts[i].0, &ics[i], w, norm),
            test: PinnProblem::new(arch, &tasks[i], &pts[i].1, &ics[i], w, norm),
        })
        .collect();
    let params = init_params(arch, 2).unwrap();
    let cfg = MetaConfig {
        inner_lr: 0.0,
        ..Default::default()
    };
    let mut state = MetaLearnerState::new(0, params.clone(), norm, &cfg);
    let sched = LrSchedule::Constant { lr: 1e-3 };
    outer_update(&mut state, &mtasks, &sched, 1).unwrap();

    let mut joint = params.values.clone();
    let mut pooled = vec![0.0; joint.len()];
    for t in &mtasks {
        let (_, g) = t.test.loss_and_grad(&joint).unwrap();
        for (a, b) in pooled.iter_mut().zip(g) {
            *a += b;
        }
    }
    AdamState::new(joint.len())
        .step(&mut joint, &pooled, 1e-3)
        .unwrap();
    let diff = state
        .params
        .values
        .iter()
        .zip(&joint)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff <= 1e-12, "max difference {diff}");
}

#[test]
fn single_task_zero_rate_is_plain_training() {
    let task = TaskSpec::default();
    let sched = SegmentSchedule::uniform(task.t_end(), 1).unwrap();
    let cfg = MetaConfig {
        arch: NetworkArch::new(1, 6),
        counts: PointCounts::new(12, 4, 4),
        inner_lr: 0.0,
        epochs: 15,
        warmup_epochs: 0,
        outer_lr: LrSchedule::Constant { lr: 1e-3 },
        log_every: 0,
        ..Default::default()
    };
    let seeds = Seeds::new(5);
    let (states, _) = train_smt(std::slice::from_ref(&task), &sched, &cfg, seeds).unwrap();

    let (_, test) = support_points(cfg.counts, (0.0, task.t_end()), 0.03, seeds, 0, 0).unwrap();
    let ic = IcTargets::from_task(&task);
    let norm = Normalization::new(0.0, task.t_end(), 0.03).unwrap();
    let prob = PinnProblem::new(cfg.arch, &task, &test, &ic, cfg.weights, norm);
    let mut p = init_params(cfg.arch, seeds.init).unwrap().values;
    let spec = FitSpec {
        method: "pinn".into(),
        segment: 0,
        epochs: 15,
        schedule: cfg.outer_lr,
        log_every: 0,
    };
    let mut adam = AdamState::new(p.len());
    fit_adam(&mut p, &mut adam, &spec, |q| prob.loss_and_grad(q)).unwrap();
    assert_eq!(states[0].params.values, p);
}

#[test]
fn warmup_ignores_residual_terms_and_descends() {
    let task = TaskSpec::with_htc(80.0, 50.0);
    let arch = NetworkArch::new(2, 8);
    let norm = Normalization::new(0.0, 1800.0, 0.03).unwrap();
    let ic = IcTargets::from_task(&task);
    let seeds = Seeds::new(1);
    let (a, _) =
        support_points(PointCounts::new(30, 6, 6), (0.0, 1800.0), 0.03, seeds, 0, 0).unwrap();
    let mut b = a.clone();
    b.collocation
        .iter_mut()
        .for_each(|p| p.0 = 900.0 + 0.5 * p.0);
    let w = LossWeights::default();
    let pa = PinnProblem::new(arch, &task, &a, &ic, w, norm);
    let pb = PinnProblem::new(arch, &task, &b, &ic, w, norm);
    let init = init_params(arch, 3).unwrap();
    let lr = LrSchedule::Constant { lr: 1e-3 };

    let mut unchanged = init.clone();
    assert!(warmup(&mut unchanged, &[pa], 0, lr).unwrap().is_none());
    assert_eq!(unchanged, init);

    let (mut x, mut y) = (init.clone(), init.clone());
    warmup(&mut x, &[pa], 50, lr).unwrap();
    warmup(&mut y, &[pb], 50, lr).unwrap();
    assert_eq!(x, y);
    let before = pa.loss(&init.values).unwrap().ic_bc(&w);
    let after = pa.loss(&x.values).unwrap().ic_bc(&w);
    assert!(after < before, "{after} !< {before}");
}

#[test]
fn adaptation_steps() {
    let task = TaskSpec::with_htc(50.0, 50.0);
    let arch = NetworkArch::new(2, 8);
    let norm = Normalization::new(0.0, 1800.0, 0.03).unwrap();
    let ic = IcTargets::from_task(&task);
    let (pts, _) = support_points(
        PointCounts::new(30, 6, 6),
        (0.0, 1800.0),
        0.03,
        Seeds::new(2),
        0,
        0,
    )
    .unwrap();
    let prob = PinnProblem::new(arch, &task, &pts, &ic, LossWeights::default(), norm);
    let cfg = MetaConfig {
        arch,
        ..Default::default()
    };
    for seed in 0..3 {
        let state = MetaLearnerState::new(0, init_params(arch, seed).unwrap(), norm, &cfg);
        assert_eq!(adapt(&state, &prob, 0, 1e-3).unwrap(), state.params);
        let one = adapt(&state, &prob, 1, 1e-4).unwrap();
        assert!(
            prob.loss(&one.values).unwrap().total < prob.loss(&state.params.values).unwrap().total
        );
    }
}

#[test]
fn support_tasks_are_in_range_and_reproducible() {
    let d = TaskDistribution {
        n_support: 50,
        seed: 9,
        ..Default::default()
    };
    let a = d.sample(&TaskSpec::default()).unwrap();
    assert_eq!(a, d.sample(&TaskSpec::default()).unwrap());
    assert_eq!(a.len(), 50);
    assert!(a
        .iter()
        .all(|t| (40.0..=120.0).contains(&t.h_top) && (40.0..=120.0).contains(&t.h_bottom)));
    assert!(TaskDistribution { n_support: 0, ..d }
        .sample(&TaskSpec::default())
        .is_err());
    assert!(TaskDistribution {
        htc_range: (90.0, 40.0),
        ..d
    }
    .validate()
    .is_err());
}

#[test]
fn two_segment_chain_runs_and_hands_off() {
    let d = TaskDistribution {
        n_support: 2,
        seed: 1,
        ..Default::default()
    };
    let tasks = d.sample(&TaskSpec::default()).unwrap();
    let sched = SegmentSchedule::uniform(tasks[0].t_end(), 2).unwrap();
    let cfg = MetaConfig {
        arch: NetworkArch::new(1, 6),
        counts: PointCounts::new(12, 4, 4),
        epochs: 4,
        warmup_epochs: 3,
        log_every: 1,
        ..Default::default()
    };
    let (states, report) = train_smt(&tasks, &sched, &cfg, Seeds::new(1)).unwrap();
    assert_eq!(states.len(), 2);
    assert_eq!(states[1].norm.t_lo, sched.boundaries[1]);
    assert!(report.segments[0].warmup.is_some() && report.segments[1].warmup.is_none());
    assert_eq!(report.log.rows.len(), 8);
    let again = train_smt(&tasks, &sched, &cfg, Seeds::new(1)).unwrap().0;
    assert_eq!(states, again);
}
