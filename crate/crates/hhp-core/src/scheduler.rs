//! Dependency-driven list scheduling of a costed cascade.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::architecture::HHPConfig;
use crate::error::{Error, Result};
use crate::mapper::OpCost;
use crate::workload::Cascade;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledOp {
    pub op_id: String,
    pub unit: String,
    pub start_cycle: f64,
    pub end_cycle: f64,
    /// Energy of all replicated executions.
    pub energy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Start,
    End,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub cycle: f64,
    pub unit: String,
    pub op: String,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleResult {
    /// In cascade order.
    pub ops: Vec<ScheduledOp>,
    pub makespan_cycles: f64,
    pub busy_cycles: BTreeMap<String, f64>,
    /// Busy time over makespan.
    pub utilization: BTreeMap<String, f64>,
    /// Real MACs over the unit's peak throughput across the makespan.
    pub pe_utilization: BTreeMap<String, f64>,
    pub energy_by_level: BTreeMap<String, f64>,
    pub energy_by_unit: BTreeMap<String, f64>,
    pub total_energy: f64,
    pub timeline: Vec<Event>,
}

/// Schedules with the default priority: topological position, then op id.
pub fn simulate(
    cascade: &Cascade,
    assignment: &BTreeMap<String, String>,
    costs: &BTreeMap<String, OpCost>,
    config: &HHPConfig,
) -> Result<ScheduleResult> {
    let topo = cascade.topo_order()?;
    let mut rank = vec![0usize; cascade.ops.len()];
    for (pos, &i) in topo.iter().enumerate() {
        rank[i] = pos;
    }
    simulate_with_priority(cascade, assignment, costs, config, &rank)
}

/// Schedules with `rank[i]` as op `i`'s priority among ready ops on the
/// same unit (lower first, op id breaking ties).
pub fn simulate_with_priority(
    cascade: &Cascade,
    assignment: &BTreeMap<String, String>,
    costs: &BTreeMap<String, OpCost>,
    config: &HHPConfig,
    rank: &[usize],
) -> Result<ScheduleResult> {
    let n = cascade.ops.len();
    if rank.len() != n {
        return Err(Error::Schedule(format!("{} priorities for {n} ops", rank.len())));
    }
    let index = cascade.index_of();
    let mut unit_of = Vec::with_capacity(n);
    let mut cost_of = Vec::with_capacity(n);
    for op in &cascade.ops {
        let u = assignment
            .get(&op.id)
            .ok_or_else(|| Error::Schedule(format!("op `{}` is not assigned", op.id)))?;
        let ui = config
            .sub_accels
            .iter()
            .position(|s| &s.id == u)
            .ok_or_else(|| Error::UnknownUnit(u.clone()))?;
        unit_of.push(ui);
        let c = costs
            .get(&op.id)
            .ok_or_else(|| Error::Schedule(format!("op `{}` has no cost", op.id)))?;
        cost_of.push(c.scaled(op.weight));
    }
    let mut waiting: Vec<usize> = cascade.ops.iter().map(|o| o.deps.len()).collect();
    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, op) in cascade.ops.iter().enumerate() {
        for d in &op.deps {
            let j = *index
                .get(d.as_str())
                .ok_or_else(|| Error::Schedule(format!("op `{}` depends on unknown `{d}`", op.id)))?;
            dependents[j].push(i);
        }
    }

    let n_units = config.sub_accels.len();
    let mut ready: Vec<Vec<usize>> = vec![Vec::new(); n_units];
    for i in 0..n {
        if waiting[i] == 0 {
            ready[unit_of[i]].push(i);
        }
    }
    let mut running: Vec<Option<(usize, f64)>> = vec![None; n_units];
    let mut start = vec![f64::NAN; n];
    let mut end = vec![f64::NAN; n];
    let mut timeline = Vec::with_capacity(2 * n);
    let mut now = 0.0f64;
    let mut done = 0;

    while done < n {
        for u in 0..n_units {
            if running[u].is_some() || ready[u].is_empty() {
                continue;
            }
            let (pos, &i) = ready[u]
                .iter()
                .enumerate()
                .min_by_key(|(_, &i)| (rank[i], &cascade.ops[i].id))
                .expect("non-empty");
            ready[u].swap_remove(pos);
            start[i] = now;
            let finish = now + cost_of[i].latency_cycles;
            running[u] = Some((i, finish));
            timeline.push(Event {
                cycle: now,
                unit: config.sub_accels[u].id.clone(),
                op: cascade.ops[i].id.clone(),
                kind: EventKind::Start,
            });
        }
        let next = running
            .iter()
            .flatten()
            .map(|&(_, f)| f)
            .fold(f64::INFINITY, f64::min);
        if !next.is_finite() {
            return Err(Error::Schedule("no runnable op; the dependency graph has a cycle".into()));
        }
        now = next;
        for u in 0..n_units {
            if let Some((i, f)) = running[u] {
                if f == now {
                    running[u] = None;
                    end[i] = f;
                    done += 1;
                    timeline.push(Event {
                        cycle: f,
                        unit: config.sub_accels[u].id.clone(),
                        op: cascade.ops[i].id.clone(),
                        kind: EventKind::End,
                    });
                    for &j in &dependents[i] {
                        waiting[j] -= 1;
                        if waiting[j] == 0 {
                            ready[unit_of[j]].push(j);
                        }
                    }
                }
            }
        }
    }

    let makespan = end.iter().copied().fold(0.0, f64::max);
    let mut busy: BTreeMap<String, f64> = config.sub_accels.iter().map(|s| (s.id.clone(), 0.0)).collect();
    let mut ideal: BTreeMap<String, f64> = busy.clone();
    let mut energy_by_unit = busy.clone();
    let mut energy_by_level: BTreeMap<String, f64> = BTreeMap::new();
    let mut ops = Vec::with_capacity(n);
    for i in 0..n {
        let unit = &config.sub_accels[unit_of[i]].id;
        let c = &cost_of[i];
        *busy.get_mut(unit).expect("unit listed") += c.latency_cycles;
        *ideal.get_mut(unit).expect("unit listed") += c.ideal_compute_cycles;
        *energy_by_unit.get_mut(unit).expect("unit listed") += c.energy;
        for (level, e) in &c.energy_by_level {
            *energy_by_level.entry(level.clone()).or_default() += e;
        }
        ops.push(ScheduledOp {
            op_id: cascade.ops[i].id.clone(),
            unit: unit.clone(),
            start_cycle: start[i],
            end_cycle: end[i],
            energy: c.energy,
        });
    }
    let frac = |v: f64| if makespan > 0.0 { v / makespan } else { 0.0 };
    let utilization = busy.iter().map(|(k, &v)| (k.clone(), frac(v))).collect();
    let pe_utilization = ideal.iter().map(|(k, &v)| (k.clone(), frac(v))).collect();
    let total_energy = cost_of.iter().map(|c| c.energy).sum();
    Ok(ScheduleResult {
        ops,
        makespan_cycles: makespan,
        busy_cycles: busy,
        utilization,
        pe_utilization,
        energy_by_level,
        energy_by_unit,
        total_energy,
        timeline,
    })
}

/// Busy fraction per unit per bucket. The last bucket may be shorter than
/// `bucket_cycles`; its fraction is over its actual length.
pub fn utilization_timeline(result: &ScheduleResult, bucket_cycles: f64) -> Result<BTreeMap<String, Vec<f64>>> {
    if !(bucket_cycles > 0.0) {
        return Err(Error::config(format!("bucket_cycles must be positive, got {bucket_cycles}")));
    }
    let span = result.makespan_cycles;
    let n_buckets = (span / bucket_cycles).ceil() as usize;
    let mut out: BTreeMap<String, Vec<f64>> =
        result.busy_cycles.keys().map(|u| (u.clone(), vec![0.0; n_buckets])).collect();
    for op in &result.ops {
        let series = out.get_mut(&op.unit).expect("unit listed");
        let (s, e) = (op.start_cycle, op.end_cycle);
        if e <= s {
            continue;
        }
        let first = (s / bucket_cycles).floor() as usize;
        let last = ((e / bucket_cycles).ceil() as usize).min(n_buckets);
        for (b, slot) in series.iter_mut().enumerate().take(last).skip(first) {
            let lo = b as f64 * bucket_cycles;
            let hi = (lo + bucket_cycles).min(span);
            let overlap = (e.min(hi) - s.max(lo)).max(0.0);
            *slot += overlap / (hi - lo);
        }
    }
    Ok(out)
}

/// `cycle_bucket,unit,busy_fraction` rows, units in name order.
pub fn timeline_csv(series: &BTreeMap<String, Vec<f64>>, bucket_cycles: f64) -> String {
    let mut s = String::from("cycle_bucket,unit,busy_fraction\n");
    for (unit, v) in series {
        for (b, f) in v.iter().enumerate() {
            let _ = writeln!(s, "{},{unit},{f:.6}", b as f64 * bucket_cycles);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::architecture::architecture_fixture;
    use crate::mapper::Limiter;
    use crate::workload::{EinsumOp, PartitionStyle, Phase};

    pub(crate) fn flat_cost(latency: f64, energy: f64) -> OpCost {
        OpCost {
            latency_cycles: latency,
            compute_cycles: latency,
            ideal_compute_cycles: latency,
            per_level_reads: BTreeMap::new(),
            per_level_writes: BTreeMap::new(),
            transfer_cycles: BTreeMap::new(),
            energy_by_level: [("DRAM".to_string(), energy)].into(),
            energy,
            utilization: 1.0,
            limiting_resource: Limiter::Compute,
            macs: 1,
            padded_macs: 1,
        }
    }

    fn cascade(ops: Vec<EinsumOp>) -> Cascade {
        Cascade { name: "t".into(), partition_style: PartitionStyle::IntraCascade, ops }
    }

    fn op(id: &str, deps: &[&str]) -> EinsumOp {
        EinsumOp::gemm(id, 1, 1, 1, Phase::Encoder).with_deps(deps.iter().copied())
    }

    fn run(c: &Cascade, units: &[&str], lat: &[f64]) -> ScheduleResult {
        let cfg = architecture_fixture("leaf-crossnode").unwrap();
        let a = c.ops.iter().zip(units).map(|(o, u)| (o.id.clone(), u.to_string())).collect();
        let costs = c.ops.iter().zip(lat).map(|(o, &l)| (o.id.clone(), flat_cost(l, l))).collect();
        simulate(c, &a, &costs, &cfg).unwrap()
    }

    #[test]
    fn independent_ops_serialize_on_one_unit_and_overlap_on_two() {
        let c = cascade(vec![op("a", &[]), op("b", &[])]);
        assert_eq!(run(&c, &["high", "high"], &[5.0, 5.0]).makespan_cycles, 10.0);
        assert_eq!(run(&c, &["high", "low"], &[5.0, 5.0]).makespan_cycles, 5.0);
    }

    #[test]
    fn chain_makespan_is_latency_sum() {
        let c = cascade(vec![op("a", &[]), op("b", &["a"]), op("c", &["b"])]);
        for units in [["high", "high", "high"], ["high", "low", "high"]] {
            assert_eq!(run(&c, &units, &[1.0, 2.0, 4.0]).makespan_cycles, 7.0);
        }
    }

    #[test]
    fn weights_scale_latency_and_energy() {
        let mut o = op("a", &[]);
        o.weight = 3;
        let r = run(&cascade(vec![o]), &["high"], &[2.0]);
        assert_eq!(r.makespan_cycles, 6.0);
        assert_eq!(r.total_energy, 6.0);
        assert_eq!(r.energy_by_level["DRAM"], 6.0);
    }

    #[test]
    fn missing_cost_is_an_error() {
        let c = cascade(vec![op("a", &[])]);
        let cfg = architecture_fixture("leaf-crossnode").unwrap();
        let a = [("a".to_string(), "high".to_string())].into();
        assert!(simulate(&c, &a, &BTreeMap::new(), &cfg).is_err());
    }

    #[test]
    fn timeline_buckets() {
        let c = cascade(vec![op("a", &[]), op("b", &[])]);
        let r = run(&c, &["high", "low"], &[10.0, 5.0]);
        let t = utilization_timeline(&r, 1.0).unwrap();
        assert_eq!(t["high"], vec![1.0; 10]);
        assert_eq!(&t["low"][..5], &[1.0; 5]);
        assert_eq!(&t["low"][5..], &[0.0; 5]);
        let t = utilization_timeline(&r, 4.0).unwrap();
        assert_eq!(t["high"], vec![1.0, 1.0, 1.0]);
        let integral: f64 = t["low"].iter().zip([4.0, 4.0, 2.0]).map(|(f, w)| f * w).sum();
        assert!((integral - 5.0).abs() < 1e-9);
        assert!(utilization_timeline(&r, 0.0).is_err());
    }
}
