//! Property tests against independent host-side oracles.

use proptest::prelude::*;
use star_core::attention::AttentionConfig;
use star_core::costmodel::{cost_report, softmax_schedule, CostParams, StageLatencyModel};
use star_core::crossbar::{cam_search, first_set_index, merge_matches, CamTable};
use star_core::engine::{EngineConfig, SoftmaxEngine};
use star_core::fxp::{quantize, FxFormat};

mod common;
use common::{composed_softmax, host_quantize};

fn small_format() -> impl Strategy<Value = FxFormat> {
    (2u32..=6, any::<bool>())
        .prop_flat_map(|(t, s)| (Just(t), 0..t, Just(s)))
        .prop_map(|(t, f, s)| FxFormat::new(t, f, s).unwrap())
}

fn input_format() -> impl Strategy<Value = FxFormat> {
    (1u32..=16, any::<bool>())
        .prop_flat_map(|(t, s)| (Just(t), 0..t, Just(s)))
        .prop_map(|(t, f, s)| FxFormat::new(t, f, s).unwrap())
}

proptest! {
    #[test]
    fn quantize_is_idempotent(fmt in input_format(), x in -70000.0f64..70000.0) {
        let once = quantize(x, fmt).unwrap().value;
        let twice = quantize(once.to_f64(), fmt).unwrap();
        prop_assert_eq!(twice.value, once);
        prop_assert!(!twice.saturated);
    }

    #[test]
    fn quantize_is_monotone(fmt in input_format(), a in -70000.0f64..70000.0, b in -70000.0f64..70000.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(quantize(lo, fmt).unwrap().value.raw <= quantize(hi, fmt).unwrap().value.raw);
    }

    #[test]
    fn quantize_error_within_half_step(fmt in input_format(), u in 0.0f64..1.0) {
        let (lo, hi) = (fmt.min_value().to_f64(), fmt.max_value().to_f64());
        let x = lo + u * (hi - lo);
        let q = quantize(x, fmt).unwrap();
        prop_assert!(!q.saturated);
        prop_assert!((q.value.to_f64() - x).abs() <= fmt.step() / 2.0);
        prop_assert_eq!(q.value.raw, host_quantize(x, fmt).0);
    }

    #[test]
    fn cam_search_hits_the_row_holding_the_value(fmt in small_format(), seed in any::<u64>()) {
        let table = CamTable::new(fmt);
        let span = (fmt.max_raw() - fmt.min_raw() + 1) as u64;
        let raw = fmt.min_raw() + (seed % span) as i64;
        let m = cam_search(&table, fmt.from_raw(raw).unwrap()).unwrap();
        prop_assert_eq!(m.count_ones(), 1);
        let row = m.one_hot_index().unwrap();
        prop_assert_eq!(table.value(row).unwrap().raw, raw);
    }

    #[test]
    fn merged_first_set_row_is_the_max(fmt in small_format(), picks in prop::collection::vec(any::<u64>(), 1..16)) {
        let table = CamTable::new(fmt);
        let span = (fmt.max_raw() - fmt.min_raw() + 1) as u64;
        let raws: Vec<i64> = picks.iter().map(|p| fmt.min_raw() + (p % span) as i64).collect();
        let ms = raws
            .iter()
            .map(|&r| cam_search(&table, fmt.from_raw(r).unwrap()))
            .collect::<Result<Vec<_>, _>>()
            .unwrap();
        let merged = merge_matches(&ms).unwrap();
        let row = first_set_index(&merged).unwrap();
        prop_assert_eq!(table.value(row).unwrap().raw, *raws.iter().max().unwrap());
    }

    #[test]
    fn engine_equals_composed_oracle(
        fmt in small_format(),
        x in prop::collection::vec(-40.0f64..40.0, 1..=8),
    ) {
        let cfg = EngineConfig::default().with_input_format(fmt);
        let engine = SoftmaxEngine::new(cfg).unwrap();
        let (out, trace) = engine.softmax(&x).unwrap();
        let (want, sat) = composed_softmax(&x, &cfg);
        prop_assert_eq!(out.iter().map(|v| v.raw).collect::<Vec<_>>(), want);
        prop_assert_eq!(trace.saturation_events, sat);
        let hist_total: i64 = trace.histogram.iter().sum();
        prop_assert_eq!(hist_total, x.len() as i64);
    }
}

fn params_strategy() -> impl Strategy<Value = CostParams> {
    prop::collection::vec(0.0f64..10.0, 32).prop_map(|vals| {
        let mut p = CostParams::zero();
        for (slot, v) in p.components.scalars_mut().into_iter().zip(vals) {
            *slot = v;
        }
        // Latencies of at least one unit keep the efficiency finite.
        for c in star_core::costmodel::Component::ALL {
            p.components.get_mut(c).latency_ns += 1.0;
        }
        p
    })
}

fn small_attention() -> AttentionConfig {
    AttentionConfig {
        seq_len: 16,
        d_model: 32,
        n_heads: 2,
        matmul_tile: 8,
        scale_scores: true,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cost_totals_never_decrease(p in params_strategy(), field in 0usize..32, bump in 0.0f64..5.0) {
        let ecfg = EngineConfig::default();
        let acfg = small_attention();
        let before = cost_report(&ecfg, &acfg, &p).unwrap();
        let mut q = p.clone();
        *q.components.scalars_mut()[field] += bump;
        let after = cost_report(&ecfg, &acfg, &q).unwrap();
        prop_assert!(after.total_area_um2 >= before.total_area_um2);
        prop_assert!(after.total_energy_pj >= before.total_energy_pj);
        prop_assert!(after.total_static_power_mw >= before.total_static_power_mw);
        prop_assert!(after.attention_latency_ns >= before.attention_latency_ns);
        prop_assert!(after.attention_latency_unpipelined_ns >= before.attention_latency_unpipelined_ns);
        prop_assert!(after.softmax_latency_ns >= before.softmax_latency_ns);
        // Average power is energy over time, so slower units lower it.
        let is_latency = field % 4 == 2;
        let tol = 1e-9 * before.total_power_mw.max(1.0);
        if is_latency {
            prop_assert!(after.total_power_mw <= before.total_power_mw + tol);
        } else {
            prop_assert!(after.total_power_mw >= before.total_power_mw - tol);
        }
    }

    #[test]
    fn pipelined_schedule_dominates_and_replays(
        p in params_strategy(),
        m in 1usize..24,
        n in 1usize..64,
        shared in any::<bool>(),
    ) {
        let mut p = p;
        p.pipeline.shared_camsub = shared;
        let model = StageLatencyModel::default();
        let piped = softmax_schedule(m, n, &model, &p, true);
        let seq = softmax_schedule(m, n, &model, &p, false);
        let d = model.durations(n, &p);
        piped.verify(&d).unwrap();
        seq.verify(&d).unwrap();
        prop_assert!(piped.makespan_ns <= seq.makespan_ns * (1.0 + 1e-12));
        if m == 1 {
            prop_assert_eq!(piped.makespan_ns, seq.makespan_ns);
        }
    }
}
