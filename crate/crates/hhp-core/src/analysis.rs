//! Roofline arithmetic, the per-configuration pipeline and cross-configuration
//! comparison.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::architecture::{HHPConfig, HetClass, HierClass};
use crate::error::{Error, Result};
use crate::mapper::{cost_cascade_blackbox, MapperOptions, Mapping, OpCost, SearchBudget};
use crate::partitioner::{
    apply_plan, assign_ops, make_partition_plan, precheck_assignment, Assignment, PartitionPlan,
    PlanOverrides, Policy, WorkloadKind,
};
use crate::scheduler::{simulate, ScheduleResult};
use crate::workload::{Cascade, ReuseClass};

/// Name of the root memory level in every bundled architecture.
pub const DRAM_LEVEL: &str = "DRAM";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bound {
    ComputeBound,
    MemoryBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RooflinePoint {
    pub ai: f64,
    pub attainable_macs_per_cycle: f64,
    pub bound: Bound,
}

pub fn roofline(ai: f64, peak_macs_per_cycle: f64, bw_words_per_cycle: f64) -> Result<RooflinePoint> {
    if !(ai > 0.0 && peak_macs_per_cycle > 0.0 && bw_words_per_cycle > 0.0) {
        return Err(Error::config("roofline needs positive inputs"));
    }
    let tipping = peak_macs_per_cycle / bw_words_per_cycle;
    Ok(RooflinePoint {
        ai,
        attainable_macs_per_cycle: peak_macs_per_cycle.min(ai * bw_words_per_cycle),
        bound: if ai >= tipping { Bound::ComputeBound } else { Bound::MemoryBound },
    })
}

/// Knobs shared by every configuration in a comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    /// Reuse threshold; defaults to the machine's roofline tipping point.
    pub threshold: Option<f64>,
    /// Defaults to phase-based for decoders and reuse-based for encoders.
    pub policy: Option<Policy>,
    pub manual: Option<BTreeMap<String, String>>,
    pub overrides: PlanOverrides,
    pub budget: SearchBudget,
    pub mapper: MapperOptions,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            threshold: None,
            policy: None,
            manual: None,
            overrides: PlanOverrides::default(),
            budget: SearchBudget::RandomSample { samples: 2000, seed: 1 },
            mapper: MapperOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineResult {
    pub config: String,
    pub workload: String,
    pub hier_class: HierClass,
    pub het_class: HetClass,
    pub plan: PartitionPlan,
    pub assignment: Assignment,
    /// Per-execution cost of each op.
    pub op_costs: BTreeMap<String, OpCost>,
    pub mappings: BTreeMap<String, Mapping>,
    pub searches: usize,
    pub schedule: ScheduleResult,
    /// Real MACs including replicated executions.
    pub total_macs: u64,
    pub macs_per_energy_unit: f64,
    /// Non-DRAM energy of ops in each reuse class.
    pub onchip_energy_by_reuse: BTreeMap<String, f64>,
    /// Share of on-chip energy spent on high-reuse ops.
    pub high_reuse_onchip_share: f64,
}

impl PipelineResult {
    pub fn makespan(&self) -> f64 {
        self.schedule.makespan_cycles
    }

    pub fn total_energy(&self) -> f64 {
        self.schedule.total_energy
    }

    /// Level with the largest energy (the MAC pseudo-level included).
    pub fn dominant_energy_level(&self) -> Option<&str> {
        self.schedule
            .energy_by_level
            .iter()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k.as_str())
    }
}

fn reuse_key(r: ReuseClass) -> &'static str {
    match r {
        ReuseClass::HighReuse => "high_reuse",
        ReuseClass::LowReuse => "low_reuse",
    }
}

/// Partition, map and schedule `cascade` on `config`.
pub fn run_pipeline(config: &HHPConfig, cascade: &Cascade, opts: &PipelineOptions) -> Result<PipelineResult> {
    config.validate_strict()?;
    cascade.validate()?;
    let (hier, het) = config.classify()?;
    let kind = WorkloadKind::of(cascade);
    let threshold = opts.threshold.unwrap_or_else(|| config.ai_tipping());
    let policy = opts.policy.unwrap_or(match kind {
        WorkloadKind::Decoder => Policy::PhaseBased,
        WorkloadKind::Encoder => Policy::ByReuse,
    });
    let assignment = assign_ops(cascade, config, threshold, policy, opts.manual.as_ref())?;
    let plan = make_partition_plan(config, kind, &opts.overrides)?;
    let partitioned = apply_plan(config, &plan)?;
    precheck_assignment(cascade, &assignment, &partitioned, &opts.mapper)?;
    let costs = cost_cascade_blackbox(cascade, &assignment.units, &partitioned, opts.budget, &opts.mapper)?;
    let schedule = simulate(cascade, &assignment.units, &costs.costs, &partitioned)?;

    let mut onchip: BTreeMap<String, f64> =
        [ReuseClass::HighReuse, ReuseClass::LowReuse].map(|r| (reuse_key(r).to_string(), 0.0)).into();
    for op in &cascade.ops {
        let c = &costs.costs[&op.id];
        let e: f64 = c
            .energy_by_level
            .iter()
            .filter(|(k, _)| k.as_str() != DRAM_LEVEL)
            .map(|(_, v)| v)
            .sum();
        *onchip.get_mut(reuse_key(assignment.reuse[&op.id])).expect("both keys present") += e * op.weight as f64;
    }
    let onchip_total: f64 = onchip.values().sum();
    let high_share = if onchip_total > 0.0 { onchip["high_reuse"] / onchip_total } else { 0.0 };
    let total_macs: u64 = cascade.ops.iter().map(|o| o.weighted_macs()).sum();
    Ok(PipelineResult {
        config: config.name.clone(),
        workload: cascade.name.clone(),
        hier_class: hier,
        het_class: het,
        plan,
        assignment,
        op_costs: costs.costs,
        mappings: costs.mappings,
        searches: costs.searches,
        macs_per_energy_unit: total_macs as f64 / schedule.total_energy,
        schedule,
        total_macs,
        onchip_energy_by_reuse: onchip,
        high_reuse_onchip_share: high_share,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Validation,
    Unmappable,
    Internal,
}

impl FailureKind {
    pub fn of(e: &Error) -> Self {
        match e {
            Error::Config(_) | Error::Validation(_) | Error::UnknownUnit(_) | Error::Json(_) => {
                FailureKind::Validation
            }
            Error::Unmappable { .. } => FailureKind::Unmappable,
            Error::Schedule(_) | Error::Io(_) => FailureKind::Internal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub kind: FailureKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub config: String,
    /// Baseline makespan over this makespan.
    pub speedup: Option<f64>,
    pub result: Option<PipelineResult>,
    pub failure: Option<Failure>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub workload: String,
    pub baseline: String,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonReport {
    pub fn row(&self, config: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.config == config)
    }

    pub fn result(&self, config: &str) -> Option<&PipelineResult> {
        self.row(config).and_then(|r| r.result.as_ref())
    }

    pub fn failures(&self) -> impl Iterator<Item = (&str, &Failure)> {
        self.rows.iter().filter_map(|r| r.failure.as_ref().map(|f| (r.config.as_str(), f)))
    }
}

/// Index of the default baseline: the first leaf-only homogeneous config,
/// else the first config.
pub fn default_baseline(configs: &[HHPConfig]) -> usize {
    configs
        .iter()
        .position(|c| matches!(c.classify(), Ok((HierClass::LeafOnly, HetClass::Homogeneous))))
        .unwrap_or(0)
}

/// Runs the pipeline for every config; a failing config is recorded and the
/// rest proceed. Rows follow config order.
pub fn compare(
    configs: &[HHPConfig],
    cascade: &Cascade,
    opts: &PipelineOptions,
    baseline: Option<usize>,
) -> Result<ComparisonReport> {
    if configs.is_empty() {
        return Err(Error::config("nothing to compare"));
    }
    let base = baseline.unwrap_or_else(|| default_baseline(configs));
    if base >= configs.len() {
        return Err(Error::config(format!("baseline index {base} out of range")));
    }
    let results: Vec<Result<PipelineResult>> =
        configs.par_iter().map(|c| run_pipeline(c, cascade, opts)).collect();
    let base_makespan = results[base].as_ref().ok().map(PipelineResult::makespan);
    let rows = configs
        .iter()
        .zip(results)
        .map(|(c, r)| match r {
            Ok(res) => ComparisonRow {
                config: c.name.clone(),
                speedup: base_makespan.map(|b| b / res.makespan()),
                result: Some(res),
                failure: None,
            },
            Err(e) => ComparisonRow {
                config: c.name.clone(),
                speedup: None,
                result: None,
                failure: Some(Failure { kind: FailureKind::of(&e), message: e.to_string() }),
            },
        })
        .collect();
    Ok(ComparisonReport { workload: cascade.name.clone(), baseline: configs[base].name.clone(), rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::architecture::{architecture_fixture, dram_words_per_cycle};
    use crate::workload::{build_cascade, build_encoder_cascade, EinsumOp, PartitionStyle, Phase, TransformerSpec};

    #[test]
    fn roofline_table_values() {
        let p = roofline(160.0, 40960.0, 256.0).unwrap();
        assert_eq!(p.attainable_macs_per_cycle, 40960.0);
        assert_eq!(p.bound, Bound::ComputeBound);
        let p = roofline(16.0, 40960.0, 256.0).unwrap();
        assert_eq!(p.attainable_macs_per_cycle, 4096.0);
        assert_eq!(p.bound, Bound::MemoryBound);
        assert_eq!(roofline(1e12, 40960.0, 256.0).unwrap().attainable_macs_per_cycle, 40960.0);
        assert!(roofline(-1.0, 1.0, 1.0).is_err());
    }

    fn small_opts() -> PipelineOptions {
        PipelineOptions { budget: SearchBudget::RandomSample { samples: 200, seed: 5 }, ..Default::default() }
    }

    #[test]
    fn identical_configs_both_have_unit_speedup() {
        let cfg = architecture_fixture("leaf-homogeneous").unwrap();
        let c = build_encoder_cascade(&TransformerSpec::encoder("e", 128, 4, 32)).unwrap();
        let r = compare(&[cfg.clone(), cfg], &c, &small_opts(), None).unwrap();
        assert_eq!(r.rows[0].speedup, Some(1.0));
        assert_eq!(r.rows[1].speedup, Some(1.0));
    }

    #[test]
    fn doubling_bandwidth_doubles_memory_bound_speed() {
        let mut base = architecture_fixture("leaf-homogeneous").unwrap();
        base.set_dram_bandwidth(dram_words_per_cycle(512));
        let mut fast = base.clone();
        fast.name = "fast".into();
        fast.set_dram_bandwidth(2.0 * dram_words_per_cycle(512));
        let ops = (0..4).map(|i| EinsumOp::gemm(format!("gemv{i}"), 1, 256, 256, Phase::Decode)).collect();
        let c = Cascade { name: "gemv".into(), partition_style: PartitionStyle::InterCascade, ops };
        let r = compare(&[base, fast], &c, &small_opts(), None).unwrap();
        let s = r.rows[1].speedup.unwrap();
        assert!((s - 2.0).abs() < 1e-9, "speedup {s}");
    }

    #[test]
    fn failures_are_recorded_per_config() {
        let good = architecture_fixture("leaf-homogeneous").unwrap();
        let mut bad = good.clone();
        bad.name = "tiny-rf".into();
        for l in bad.levels.iter_mut().filter(|l| l.depth > 0) {
            l.capacity_bytes = Some(1);
        }
        let c = build_encoder_cascade(&TransformerSpec::encoder("e", 64, 4, 16)).unwrap();
        let r = compare(&[good, bad], &c, &small_opts(), None).unwrap();
        assert!(r.rows[0].result.is_some());
        assert_eq!(r.rows[1].failure.as_ref().unwrap().kind, FailureKind::Unmappable);
    }

    #[test]
    fn energy_totals_agree() {
        let cfg = architecture_fixture("hier-crossdepth").unwrap();
        let spec = TransformerSpec::decoder("d", 128, 4, 32, 8);
        let c = build_cascade(&spec).unwrap();
        let r = run_pipeline(&cfg, &c, &small_opts()).unwrap();
        let by_level: f64 = r.schedule.energy_by_level.values().sum();
        let by_unit: f64 = r.schedule.energy_by_unit.values().sum();
        let by_op: f64 = c.ops.iter().map(|o| r.op_costs[&o.id].energy * o.weight as f64).sum();
        for v in [by_level, by_unit] {
            assert!((v - by_op).abs() <= 1e-9 * by_op);
        }
        assert!((r.macs_per_energy_unit - r.total_macs as f64 / by_op).abs() < 1e-9);
    }
}
