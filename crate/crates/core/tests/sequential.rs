use smt_core::net::{init_params, NetworkArch};
use smt_core::physics::{CureCycle, TaskSpec};
use smt_core::sequential::{
    adapt_chain, train_bcpinn, train_marching, train_pinn, train_tm, train_tm_adaptive, AdaptSpec,
    AdaptiveConfig, BoundaryOrigin, Epsilon, Finetune, Seeds, SegmentBudget, SegmentNet,
    SegmentSchedule, StitchedModel,
};
use smt_core::training::{LrSchedule, Normalization, PointCounts};

fn tiny_budget(epochs: u64) -> SegmentBudget {
    SegmentBudget {
        arch: NetworkArch::new(2, 8),
        epochs,
        counts: PointCounts::new(24, 6, 6),
        lr: LrSchedule::exp_decay(1e-3),
        log_every: 0,
        ..Default::default()
    }
}

#[test]
fn schedule_ownership_and_validation() {
    let s = SegmentSchedule::uniform(600.0, 3).unwrap();
    assert_eq!(s.boundaries, vec![0.0, 200.0, 400.0, 600.0]);
    assert_eq!(s.owner(0.0).unwrap(), 0);
    assert_eq!(s.owner(199.9).unwrap(), 0);
    // a shared boundary belongs to the later segment, the end to the last
    assert_eq!(s.owner(200.0).unwrap(), 1);
    assert_eq!(s.owner(600.0).unwrap(), 2);
    assert!(s.owner(600.1).is_err() && s.owner(-0.1).is_err());
    assert!(s.added_boundaries().is_empty());
    assert!(SegmentSchedule::uniform(600.0, 0).is_err());
    assert!(SegmentSchedule::from_boundaries(vec![0.0, 300.0, 300.0]).is_err());
    assert!(SegmentSchedule::from_boundaries(vec![10.0, 300.0]).is_err());
}

#[test]
fn stitched_prediction_routes_to_owner_and_round_trips() {
    let arch = NetworkArch::new(2, 6);
    let segments: Vec<SegmentNet> = (0..2)
        .map(|i| SegmentNet {
            params: init_params(arch, 10 + i).unwrap(),
            norm: Normalization::new(300.0 * i as f64, 300.0 * (i + 1) as f64, 0.03).unwrap(),
        })
        .collect();
    let model = StitchedModel {
        schedule: SegmentSchedule::uniform(600.0, 2).unwrap(),
        segments,
    };
    let first =
        StitchedModel::single(model.segments[0].params.clone(), model.segments[0].norm).unwrap();
    let mut second =
        StitchedModel::single(model.segments[1].params.clone(), model.segments[1].norm).unwrap();
    second.schedule = SegmentSchedule::from_boundaries(vec![0.0, 600.0]).unwrap();
    assert_eq!(
        model.predict(120.0, 0.01).unwrap(),
        first.predict(120.0, 0.01).unwrap()
    );
    assert_eq!(
        model.predict(300.0, 0.02).unwrap(),
        second.predict(300.0, 0.02).unwrap()
    );
    assert!(model.predict(100.0, 0.031).is_err());

    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let back = StitchedModel::load(dir.path()).unwrap();
    assert_eq!(back, model);
    let ts = [0.0, 150.0, 299.0, 300.0, 600.0];
    let xs = [0.0, 0.01, 0.02, 0.03, 0.015];
    assert_eq!(
        back.predict_batch(&ts, &xs, 0).unwrap(),
        model.predict_batch(&ts, &xs, 0).unwrap()
    );
}

#[test]
fn untrained_chain_is_continuous_across_boundaries() {
    // with no epochs each segment is the previous network re-expressed on its
    // own interval, so the stitched model is one smooth function
    let task = TaskSpec::default();
    let sched = SegmentSchedule::uniform(task.t_end(), 4).unwrap();
    let (model, report) = train_tm(&task, &sched, &tiny_budget(0), Seeds::new(3)).unwrap();
    assert_eq!(report.segments.len(), 4);
    for &b in &sched.boundaries[1..4] {
        let k = sched.owner(b).unwrap();
        for x in [0.0, 0.012, 0.03] {
            let left = model.segments[k - 1].clone();
            let right = model.segments[k].clone();
            let l = StitchedModel {
                schedule: SegmentSchedule::from_boundaries(vec![0.0, task.t_end()]).unwrap(),
                segments: vec![left],
            };
            let r = StitchedModel {
                schedule: SegmentSchedule::from_boundaries(vec![0.0, task.t_end()]).unwrap(),
                segments: vec![right],
            };
            let (a, b2) = (l.predict(b, x).unwrap(), r.predict(b, x).unwrap());
            assert!(
                (a.0 - b2.0).abs() < 1e-9 && (a.1 - b2.1).abs() < 1e-12,
                "{a:?} vs {b2:?}"
            );
        }
    }
}

#[test]
fn training_is_deterministic_and_pinn_is_one_segment_tm() {
    let task = TaskSpec::default();
    let budget = tiny_budget(20);
    let sched = SegmentSchedule::uniform(task.t_end(), 2).unwrap();
    let a = train_tm(&task, &sched, &budget, Seeds::new(4)).unwrap();
    let b = train_tm(&task, &sched, &budget, Seeds::new(4)).unwrap();
    assert_eq!(a.0, b.0);
    let losses = |r: &smt_core::sequential::TrainReport| {
        r.segments.iter().map(|s| s.final_loss).collect::<Vec<_>>()
    };
    assert_eq!(losses(&a.1), losses(&b.1));
    let c = train_tm(&task, &sched, &budget, Seeds::new(5)).unwrap();
    assert_ne!(a.0, c.0);

    let one = SegmentSchedule::uniform(task.t_end(), 1).unwrap();
    let tm = train_tm(&task, &one, &budget, Seeds::new(4)).unwrap().0;
    let pinn = train_pinn(&task, &budget, Seeds::new(4)).unwrap().0;
    assert_eq!(tm, pinn);
}

#[test]
fn marching_rejects_mismatched_heads() {
    let task = TaskSpec::default();
    let sched = SegmentSchedule::uniform(task.t_end(), 2).unwrap();
    let mut budget = tiny_budget(1);
    budget.arch = budget.arch.with_outputs(4);
    assert!(train_marching(
        std::slice::from_ref(&task),
        &sched,
        None,
        &budget,
        Seeds::new(1),
        "tm"
    )
    .is_err());
    let short = SegmentSchedule::uniform(task.t_end() / 2.0, 2).unwrap();
    assert!(train_tm(&task, &short, &tiny_budget(1), Seeds::new(1)).is_err());
}

#[test]
fn infinite_threshold_keeps_the_schedule() {
    let task = TaskSpec::default();
    let cfg = AdaptiveConfig {
        epsilon: Epsilon::never(),
        ..Default::default()
    };
    let (model, report) =
        train_tm_adaptive(&task, 10, cfg, &tiny_budget(2), Seeds::new(1)).unwrap();
    assert_eq!(
        model.schedule,
        SegmentSchedule::uniform(task.t_end(), 10).unwrap()
    );
    assert_eq!(report.checks.len(), 9);
    assert!(report.checks.iter().all(|c| !c.split));
}

#[test]
fn failing_checks_halve_down_to_min_len() {
    let task = TaskSpec::default();
    let cfg = AdaptiveConfig {
        epsilon: Epsilon::Absolute(f64::NEG_INFINITY),
        min_len: Some(task.t_end() / 8.0),
        ..Default::default()
    };
    let (model, report) = train_tm_adaptive(&task, 2, cfg, &tiny_budget(1), Seeds::new(1)).unwrap();
    // every check fails; halving stops once a half would be shorter than 37.5 min
    let m = 60.0;
    assert_eq!(
        model.schedule.boundaries,
        vec![0.0, 150.0 * m, 187.5 * m, 225.0 * m, 262.5 * m, 300.0 * m]
    );
    assert_eq!(
        model.schedule.added_boundaries(),
        vec![187.5 * m, 225.0 * m, 262.5 * m]
    );
    assert_eq!(model.schedule.provenance[1], BoundaryOrigin::Initial);
    assert_eq!(report.warnings.len(), 4);
    assert!(report
        .warnings
        .iter()
        .all(|w| (w.t_hi - w.t_lo - 37.5 * m).abs() < 1e-9));
}

#[test]
fn no_splits_without_reaction_heat() {
    let mut task = TaskSpec::default();
    task.material.h_r = 0.0;
    task.cycle = CureCycle::constant(120.0, task.t_end());
    let budget = SegmentBudget {
        arch: NetworkArch::new(2, 16),
        epochs: 400,
        counts: PointCounts::new(80, 16, 10),
        lr: LrSchedule::exp_decay(1e-3),
        log_every: 0,
        ..Default::default()
    };
    let (model, report) =
        train_tm_adaptive(&task, 10, AdaptiveConfig::default(), &budget, Seeds::new(2)).unwrap();
    assert_eq!(model.schedule.len(), 10, "checks: {:?}", report.checks);
}

#[test]
fn bcpinn_memory_grows_per_segment() {
    let task = TaskSpec::default();
    let sched = SegmentSchedule::uniform(task.t_end(), 3).unwrap();
    let (model, report, memory) =
        train_bcpinn(&task, &sched, &tiny_budget(0), 40, Seeds::new(1)).unwrap();
    assert_eq!(memory.len(), 120);
    assert_eq!(model.segments.len(), 1);
    assert_eq!(report.segments.len(), 3);
    assert!(report.segments[0].final_loss.memory.is_none());
    assert!(report.segments[2].final_loss.memory.is_some());
    // untrained: the labels are the network's own outputs
    for m in memory.iter().step_by(7) {
        let (t, a) = model.predict(m.t, m.x).unwrap();
        assert!((t / 200.0 - m.t_hat).abs() < 1e-12 && (a - m.alpha_hat).abs() < 1e-12);
        assert!((0.0..=task.t_end()).contains(&m.t));
    }
    let (a, b) = (&memory[..40], &memory[40..80]);
    assert!(
        a.iter().all(|m| m.t <= sched.boundaries[1])
            && b.iter().all(|m| m.t >= sched.boundaries[1])
    );
}

#[test]
fn adaptation_with_no_epochs_is_identity_and_freezing_is_exact() {
    let task = TaskSpec::default();
    let sched = SegmentSchedule::uniform(task.t_end(), 2).unwrap();
    let (model, _) = train_tm(&task, &sched, &tiny_budget(5), Seeds::new(1)).unwrap();
    let new_task = TaskSpec::with_htc(50.0, 50.0);
    let mut spec = AdaptSpec {
        counts: PointCounts::new(20, 4, 4),
        weights: Default::default(),
        scaling: Default::default(),
        epochs: 0,
        optimizers: vec![
            Finetune::Gd { lr: 1e-4 },
            Finetune::Adam {
                lr: LrSchedule::Constant { lr: 1e-3 },
            },
        ],
        trainable: None,
    };
    assert_eq!(
        adapt_chain(&model, &new_task, &spec, 1, "x").unwrap().0,
        model
    );

    spec.epochs = 5;
    let out = model.arch().output_layer_range();
    spec.trainable = Some(out.clone());
    let (adapted, _) = adapt_chain(&model, &new_task, &spec, 1, "x").unwrap();
    for (a, b) in adapted.segments.iter().zip(&model.segments) {
        assert_eq!(a.params.values[..out.start], b.params.values[..out.start]);
        assert_ne!(a.params.values[out.clone()], b.params.values[out.clone()]);
    }
    spec.optimizers.pop();
    assert!(adapt_chain(&model, &new_task, &spec, 1, "x").is_err());
}
