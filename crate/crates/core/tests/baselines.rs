use smt_core::baselines::{
    adapt_mtl, adapt_tl, train_mtl, train_tl_source, MtlHeadMap, TL_SOURCE_HTC,
};
use smt_core::net::NetworkArch;
use smt_core::physics::TaskSpec;
use smt_core::sequential::{train_tm, Seeds, SegmentBudget, SegmentSchedule};
use smt_core::training::{LrSchedule, PointCounts};

fn budget(epochs: u64) -> SegmentBudget {
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
fn donor_is_nearest_pair_with_low_index_ties() {
    let map = MtlHeadMap::default();
    // (60,20) and (80,40) are both √1000 away from (50,50)
    assert_eq!(map.donor(&TaskSpec::with_htc(50.0, 50.0)).unwrap(), 0);
    assert_eq!(map.donor(&TaskSpec::with_htc(115.0, 75.0)).unwrap(), 1);
    assert_eq!(map.donor(&TaskSpec::with_htc(85.0, 45.0)).unwrap(), 2);
    assert_eq!(map.donor(&TaskSpec::with_htc(40.0, 40.0)).unwrap(), 0);
    assert!(MtlHeadMap { htc: vec![] }
        .donor(&TaskSpec::default())
        .is_err());
    assert_eq!(map.output_dim(), 6);
}

#[test]
fn tl_source_is_tm_on_the_source_task() {
    let base = TaskSpec::default();
    let sched = SegmentSchedule::uniform(base.t_end(), 2).unwrap();
    let (src, _) = train_tl_source(&base, &sched, &budget(10), Seeds::new(2)).unwrap();
    let task = TaskSpec::with_htc(TL_SOURCE_HTC.0, TL_SOURCE_HTC.1);
    assert_eq!(
        src,
        train_tm(&task, &sched, &budget(10), Seeds::new(2))
            .unwrap()
            .0
    );

    let target = TaskSpec::with_htc(50.0, 50.0);
    assert_eq!(adapt_tl(&src, &target, &budget(10), 0, 1).unwrap().0, src);
    let (moved, _) = adapt_tl(&src, &target, &budget(10), 3, 1).unwrap();
    for (a, b) in moved.segments.iter().zip(&src.segments) {
        let out = a.params.arch.output_layer_range();
        // every layer moves, not just the output layer
        assert_ne!(a.params.values[..out.start], b.params.values[..out.start]);
    }
}

#[test]
fn single_task_mtl_is_tm() {
    let base = TaskSpec::default();
    let sched = SegmentSchedule::uniform(base.t_end(), 2).unwrap();
    let map = MtlHeadMap {
        htc: vec![(70.0, 90.0)],
    };
    let (mtl, _) = train_mtl(&base, &map, &sched, &budget(8), Seeds::new(3)).unwrap();
    let tm = train_tm(
        &TaskSpec::with_htc(70.0, 90.0),
        &sched,
        &budget(8),
        Seeds::new(3),
    )
    .unwrap()
    .0;
    assert_eq!(mtl, tm);
}

#[test]
fn mtl_adaptation_freezes_the_trunk() {
    let base = TaskSpec::default();
    let sched = SegmentSchedule::uniform(base.t_end(), 2).unwrap();
    let map = MtlHeadMap::default();
    let (model, _) = train_mtl(&base, &map, &sched, &budget(5), Seeds::new(1)).unwrap();
    assert_eq!(model.heads(), 3);
    let target = TaskSpec::with_htc(85.0, 45.0);

    let (same, _) = adapt_mtl(&model, &map, &target, &budget(5), 0, 4).unwrap();
    let ts = [100.0, 5000.0, 9000.0, 17000.0];
    let xs = [0.0, 0.01, 0.02, 0.03];
    assert_eq!(
        same.predict_batch(&ts, &xs, 0).unwrap(),
        model.predict_batch(&ts, &xs, 2).unwrap()
    );

    let (tuned, _) = adapt_mtl(&model, &map, &target, &budget(5), 6, 4).unwrap();
    for (a, b) in tuned.segments.iter().zip(&same.segments) {
        let out = a.params.arch.output_layer_range();
        assert_eq!(a.params.values[..out.start], b.params.values[..out.start]);
        assert_ne!(a.params.values[out.clone()], b.params.values[out]);
    }
    assert!(adapt_mtl(
        &model,
        &MtlHeadMap {
            htc: vec![(1.0, 1.0)]
        },
        &target,
        &budget(5),
        1,
        4
    )
    .is_err());
}
