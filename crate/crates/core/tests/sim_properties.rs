use afdplan_core::pipeline_sim::{simulate, BoMode, JitterKind, Resource, SimSpec, StageTiming};
use proptest::prelude::*;

fn arb_mode() -> impl Strategy<Value = BoMode> {
    prop::sample::select(vec![BoMode::Nbo, BoMode::TwoBo, BoMode::ThreeBo])
}

// Microsecond-granular timings keep every duration an exact tick count.
fn arb_timing() -> impl Strategy<Value = StageTiming> {
    (0u32..1000, 0u32..500, 0u32..1000, 0u32..500).prop_map(|(a, d, f, c)| {
        StageTiming::new(
            f64::from(a) * 1e-6,
            f64::from(d) * 1e-6,
            f64::from(f) * 1e-6,
            f64::from(c) * 1e-6,
        )
    })
}

fn arb_spec() -> impl Strategy<Value = SimSpec> {
    (arb_mode(), 1u32..12, arb_timing(), 0u8..3, 0.0f64..0.3, any::<u64>()).prop_map(
        |(mode, layers, t, jitter, mag, seed)| {
            let kind = match jitter {
                0 => JitterKind::None,
                1 => JitterKind::UniformFraction,
                _ => JitterKind::LogNormal,
            };
            SimSpec::new(mode, layers, t).with_jitter(kind, mag, seed)
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn identical_specs_give_identical_traces(spec in arb_spec()) {
        let a = simulate(&spec).unwrap();
        let b = simulate(&spec).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn every_item_runs_once_without_overlap(spec in arb_spec()) {
        let r = simulate(&spec).unwrap();
        for res in Resource::ALL {
            let mut items: Vec<_> = r.trace.iter().filter(|e| e.resource == res).collect();
            let mut keys: Vec<_> = items.iter().map(|e| (e.layer, e.microbatch)).collect();
            keys.sort_unstable();
            keys.dedup();
            prop_assert_eq!(keys.len(), (spec.n_layers * spec.n_microbatches) as usize);
            prop_assert_eq!(items.len(), keys.len());
            items.sort_by(|a, b| a.start.total_cmp(&b.start));
            for w in items.windows(2) {
                prop_assert!(w[0].end <= w[1].start, "{:?} overlaps {:?}", w[0], w[1]);
            }
            let s = r.stats(res);
            prop_assert!((s.busy + s.bubble_total - s.active_window).abs() < 1e-12);
            prop_assert!(r.makespan + 1e-12 >= s.busy);
        }
    }

    #[test]
    fn makespan_respects_lower_bound(mode in arb_mode(), layers in 1u32..12, t in arb_timing()) {
        let r = simulate(&SimSpec::new(mode, layers, t)).unwrap();
        let bound = f64::from(layers * mode.microbatches()) * t.t_a.max(t.t_f);
        prop_assert!(r.makespan + 1e-12 >= bound);
    }

    #[test]
    fn makespan_is_monotone_in_each_stage(
        mode in arb_mode(), layers in 1u32..12, t in arb_timing(),
        which in 0usize..4, extra in 1u32..400,
    ) {
        let res = Resource::ALL[which];
        let base = simulate(&SimSpec::new(mode, layers, t)).unwrap().makespan;
        let longer = t.with_duration(res, t.duration(res) + f64::from(extra) * 1e-6);
        let grown = simulate(&SimSpec::new(mode, layers, longer)).unwrap().makespan;
        prop_assert!(grown >= base, "{:?} +{}us: {} -> {}", res, extra, base, grown);
    }
}
