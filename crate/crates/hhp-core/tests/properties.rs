use std::collections::BTreeMap;

use hhp_core::analysis::roofline;
use hhp_core::architecture::{architecture_fixture, architecture_fixtures, HHPConfig};
use hhp_core::mapper::{search, Limiter, MapperOptions, OpCost, SearchBudget, UnitView};
use hhp_core::partitioner::required_bandwidth;
use hhp_core::scheduler::{simulate, simulate_with_priority, ScheduleResult};
use hhp_core::workload::{build_cascade, workload_fixtures, Cascade, EinsumOp, PartitionStyle, Phase, SeqShape};
use proptest::prelude::*;

fn flat_cost(latency: f64, energy: f64) -> OpCost {
    OpCost {
        latency_cycles: latency,
        compute_cycles: latency,
        ideal_compute_cycles: latency,
        per_level_reads: BTreeMap::new(),
        per_level_writes: BTreeMap::new(),
        transfer_cycles: BTreeMap::new(),
        energy_by_level: [("DRAM".to_string(), energy * 0.75), ("RF".to_string(), energy * 0.25)].into(),
        energy,
        utilization: 1.0,
        limiting_resource: Limiter::Compute,
        macs: 1,
        padded_macs: 1,
    }
}

#[derive(Debug, Clone)]
struct Dag {
    cascade: Cascade,
    assignment: BTreeMap<String, String>,
    costs: BTreeMap<String, OpCost>,
}

/// Random DAG over the compound fixture's three units. Each op may depend
/// on any earlier op.
fn dag_strategy() -> impl Strategy<Value = Dag> {
    (1usize..40).prop_flat_map(|n| {
        (
            proptest::collection::vec(proptest::collection::vec(any::<bool>(), n), n),
            proptest::collection::vec(0usize..3, n),
            proptest::collection::vec(1u32..500, n),
            proptest::collection::vec(1u64..4, n),
            0.0f64..0.5,
        )
            .prop_map(move |(adj, units, lat, weights, density)| {
                let unit_ids = ["leaf-a", "leaf-b", "llb-c"];
                let mut ops = Vec::with_capacity(n);
                let mut assignment = BTreeMap::new();
                let mut costs = BTreeMap::new();
                for i in 0..n {
                    let id = format!("op{i:02}");
                    // Thin out edges so both chains and wide DAGs appear.
                    let deps: Vec<String> = (0..i)
                        .filter(|&j| adj[i][j] && ((i * 31 + j * 17) % 100) as f64 / 100.0 < density)
                        .map(|j| format!("op{j:02}"))
                        .collect();
                    let mut op = EinsumOp::gemm(&id, 1, 1, 1, Phase::Encoder).with_deps(deps);
                    op.weight = weights[i];
                    ops.push(op);
                    assignment.insert(id.clone(), unit_ids[units[i]].to_string());
                    costs.insert(id, flat_cost(lat[i] as f64, lat[i] as f64 * 3.0));
                }
                Dag {
                    cascade: Cascade { name: "dag".into(), partition_style: PartitionStyle::IntraCascade, ops },
                    assignment,
                    costs,
                }
            })
    })
}

fn compound() -> HHPConfig {
    architecture_fixture("compound").expect("fixture")
}

fn weighted_latency(d: &Dag, op: &EinsumOp) -> f64 {
    d.costs[&op.id].latency_cycles * op.weight as f64
}

fn critical_path(d: &Dag) -> f64 {
    let mut finish: BTreeMap<&str, f64> = BTreeMap::new();
    for op in &d.cascade.ops {
        let ready = op.deps.iter().map(|x| finish[x.as_str()]).fold(0.0, f64::max);
        finish.insert(&op.id, ready + weighted_latency(d, op));
    }
    finish.values().copied().fold(0.0, f64::max)
}

fn check_schedule(d: &Dag, r: &ScheduleResult) -> Result<(), TestCaseError> {
    let cp = critical_path(d);
    prop_assert!(r.makespan_cycles >= cp, "makespan {} < critical path {cp}", r.makespan_cycles);
    let mut busy: BTreeMap<&str, f64> = BTreeMap::new();
    for op in &d.cascade.ops {
        *busy.entry(d.assignment[&op.id].as_str()).or_default() += weighted_latency(d, op);
    }
    for (u, b) in &busy {
        prop_assert!(r.makespan_cycles >= *b, "makespan {} < busy {b} on {u}", r.makespan_cycles);
    }
    let serial: f64 = d.cascade.ops.iter().map(|o| weighted_latency(d, o)).sum();
    prop_assert!(r.makespan_cycles <= serial);

    let by_id: BTreeMap<&str, _> = r.ops.iter().map(|s| (s.op_id.as_str(), s)).collect();
    for op in &d.cascade.ops {
        let s = by_id[op.id.as_str()];
        for dep in &op.deps {
            prop_assert!(s.start_cycle >= by_id[dep.as_str()].end_cycle);
        }
    }
    for u in busy.keys() {
        let mut spans: Vec<(f64, f64)> =
            r.ops.iter().filter(|s| s.unit == *u).map(|s| (s.start_cycle, s.end_cycle)).collect();
        spans.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for w in spans.windows(2) {
            prop_assert!(w[1].0 >= w[0].1, "overlap on {u}");
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn schedule_respects_lower_bounds(d in dag_strategy()) {
        let r = simulate(&d.cascade, &d.assignment, &d.costs, &compound()).unwrap();
        check_schedule(&d, &r)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn energy_is_independent_of_tie_break(d in dag_strategy(), seed in any::<u64>()) {
        let cfg = compound();
        let base = simulate(&d.cascade, &d.assignment, &d.costs, &cfg).unwrap();
        // Any permutation of the ready-queue keys, including non-topological ones.
        let n = d.cascade.ops.len();
        let mut rank: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            rank.swap(i, (s >> 33) as usize % (i + 1));
        }
        let permuted = simulate_with_priority(&d.cascade, &d.assignment, &d.costs, &cfg, &rank).unwrap();
        check_schedule(&d, &permuted)?;
        prop_assert_eq!(base.total_energy, permuted.total_energy);
        prop_assert_eq!(&base.energy_by_level, &permuted.energy_by_level);
        prop_assert_eq!(&base.energy_by_unit, &permuted.energy_by_unit);
    }

    #[test]
    fn roofline_is_min_of_roofs(ai in 0.001f64..10_000.0, peak in 1.0f64..1e6, bw in 0.1f64..1e4) {
        let p = roofline(ai, peak, bw).unwrap();
        prop_assert_eq!(p.attainable_macs_per_cycle, peak.min(ai * bw));
    }

    #[test]
    fn required_bandwidth_reaches_the_attainable_roof(
        ai in 0.01f64..1000.0, peak in 1.0f64..1e5, bw_peak in 0.1f64..1e4,
    ) {
        let need = required_bandwidth(ai, peak, bw_peak).unwrap();
        prop_assert!(need <= bw_peak);
        let full = roofline(ai, peak, bw_peak).unwrap().attainable_macs_per_cycle;
        let p = roofline(ai, peak, need).unwrap();
        prop_assert!((p.attainable_macs_per_cycle - full).abs() <= 1e-9 * full);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sampled_mappings_are_physical(
        m in 1u64..300, n in 1u64..300, k in 1u64..300, seed in any::<u64>(), which in 0usize..4,
    ) {
        let cfg = architecture_fixture("leaf-crossnode").unwrap();
        let ids = ["high", "low", "high", "low"];
        let unit = UnitView::for_sub(&cfg, ids[which], &MapperOptions::default()).unwrap();
        let op = EinsumOp::gemm("g", m, n, k, Phase::Encoder);
        let budget = SearchBudget::RandomSample { samples: 200, seed };
        let (map, cost) = search(&op, &unit, budget).unwrap();
        prop_assert!(cost.latency_cycles >= cost.ideal_compute_cycles);
        prop_assert!(cost.utilization <= 1.0 + 1e-12);
        prop_assert!(cost.padded_macs >= cost.macs);
        prop_assert!(cost.energy >= cost.padded_macs as f64 * cfg.mac_energy);
        // Every tensor is read from DRAM at least once.
        prop_assert!(cost.per_level_reads["DRAM"] >= m * k + k * n);
        prop_assert!(cost.per_level_writes["DRAM"] >= m * n);
        prop_assert!(map.spatial.pes() <= unit.pe_count);
        // Same seed, same answer.
        let (map2, cost2) = search(&op, &unit, budget).unwrap();
        prop_assert_eq!(map, map2);
        prop_assert_eq!(cost, cost2);
    }

    #[test]
    fn scaled_specs_keep_heads_and_divide_dims(idx in 0usize..3, den in prop::sample::select(vec![1u64, 2, 4, 8, 16])) {
        let spec = &workload_fixtures()[idx];
        let lens = match spec.seq {
            SeqShape::Encoder { seq_len } => vec![seq_len],
            SeqShape::Decoder { prefill_len, decode_len } => vec![prefill_len, decode_len],
        };
        let divisible = spec.d_model % den == 0 && lens.iter().all(|l| l % den == 0);
        let scaled = spec.scaled(1, den);
        prop_assert_eq!(scaled.is_ok(), divisible);
        let Ok(s) = scaled else { return Ok(()) };
        prop_assert_eq!(s.n_heads, spec.n_heads);
        prop_assert_eq!(s.d_model * den, spec.d_model);
        let c = build_cascade(&s).unwrap();
        c.validate().unwrap();
        let pos: BTreeMap<usize, usize> =
            c.topo_order().unwrap().into_iter().enumerate().map(|(p, i)| (i, p)).collect();
        let index = c.index_of();
        for (i, op) in c.ops.iter().enumerate() {
            for d in &op.deps {
                prop_assert!(pos[&index[d.as_str()]] < pos[&i]);
            }
        }
        let back = Cascade::from_json(&c.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, c);
    }
}

#[test]
fn fixtures_round_trip_and_keep_their_class() {
    for cfg in architecture_fixtures() {
        let json = cfg.to_json().unwrap();
        let back = HHPConfig::from_json(&json).unwrap();
        assert_eq!(back, cfg, "{}", cfg.name);
        assert_eq!(back.classify().unwrap(), cfg.classify().unwrap());
        assert!(back.validate().is_empty(), "{}: {:?}", cfg.name, back.validate());
    }
}
