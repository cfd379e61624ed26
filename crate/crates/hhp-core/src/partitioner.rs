//! Op-to-unit assignment and static splits of shared resources.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::architecture::{HHPConfig, HetClass, SubAccelerator};
use crate::error::{Error, Result};
use crate::mapper::{minimum_tile_violation, MapperOptions, UnitView};
use crate::workload::{classify_reuse, Cascade, Phase, ReuseClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Arithmetic intensity against a threshold; decode ops are always low.
    ByReuse,
    /// Prefill and encoder ops on the high unit, decode ops on the low unit.
    PhaseBased,
    /// An explicit op → unit map.
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub units: BTreeMap<String, String>,
    pub reuse: BTreeMap<String, ReuseClass>,
    pub reuse_threshold: f64,
    pub policy: Policy,
}

impl Assignment {
    pub fn unit_of(&self, op_id: &str) -> Option<&str> {
        self.units.get(op_id).map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadKind {
    Encoder,
    Decoder,
}

impl WorkloadKind {
    pub fn of(cascade: &Cascade) -> Self {
        if cascade.ops.iter().any(|o| o.phase != Phase::Encoder) {
            WorkloadKind::Decoder
        } else {
            WorkloadKind::Encoder
        }
    }

    /// Low-unit share of shared bandwidth in two-unit plans.
    pub fn default_bw_low(self) -> f64 {
        match self {
            WorkloadKind::Encoder => 0.5,
            WorkloadKind::Decoder => 0.75,
        }
    }
}

/// The unit with the most PEs; the first listed wins ties.
pub fn high_unit(config: &HHPConfig) -> &SubAccelerator {
    let mut best = &config.sub_accels[0];
    for s in &config.sub_accels[1..] {
        if s.pe_count > best.pe_count {
            best = s;
        }
    }
    best
}

/// The first listed unit other than the high unit.
pub fn low_unit(config: &HHPConfig) -> Option<&SubAccelerator> {
    let high = &high_unit(config).id;
    config.sub_accels.iter().find(|s| &s.id != high)
}

fn is_homogeneous(config: &HHPConfig) -> Result<bool> {
    Ok(config.classify()?.1 == HetClass::Homogeneous)
}

pub fn assign_ops(
    cascade: &Cascade,
    config: &HHPConfig,
    threshold: f64,
    policy: Policy,
    manual: Option<&BTreeMap<String, String>>,
) -> Result<Assignment> {
    if config.sub_accels.is_empty() {
        return Err(Error::config("architecture has no sub-accelerators"));
    }
    if policy == Policy::ByReuse && !(threshold > 0.0) {
        return Err(Error::config(format!("reuse threshold must be positive, got {threshold}")));
    }
    let mut reuse = BTreeMap::new();
    for op in &cascade.ops {
        let class = match policy {
            Policy::PhaseBased => match op.phase {
                Phase::Decode => ReuseClass::LowReuse,
                _ => ReuseClass::HighReuse,
            },
            _ => classify_reuse(op, threshold, true),
        };
        reuse.insert(op.id.clone(), class);
    }

    let units = if policy == Policy::Manual {
        let map = manual.ok_or_else(|| Error::config("manual policy needs an assignment map"))?;
        let mut units = BTreeMap::new();
        for op in &cascade.ops {
            let u = map
                .get(&op.id)
                .ok_or_else(|| Error::config(format!("manual assignment is missing op `{}`", op.id)))?;
            config.sub(u)?;
            units.insert(op.id.clone(), u.clone());
        }
        units
    } else if is_homogeneous(config)? {
        let only = &config.sub_accels[0].id;
        cascade.ops.iter().map(|o| (o.id.clone(), only.clone())).collect()
    } else {
        let high = &high_unit(config).id;
        let low = &low_unit(config).expect("heterogeneous configs have two units").id;
        cascade
            .ops
            .iter()
            .map(|o| {
                let u = match reuse[&o.id] {
                    ReuseClass::HighReuse => high,
                    ReuseClass::LowReuse => low,
                };
                (o.id.clone(), u.clone())
            })
            .collect()
    };
    Ok(Assignment { units, reuse, reuse_threshold: threshold, policy })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitShare {
    pub id: String,
    pub pe_count: u64,
    pub bw_fraction: f64,
    pub llb_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub units: Vec<UnitShare>,
}

/// Low-unit shares for two-unit plans; anything unset takes the default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanOverrides {
    #[serde(default)]
    pub bw_fraction_low: Option<f64>,
    #[serde(default)]
    pub llb_fraction_low: Option<f64>,
}

fn check_fraction(name: &str, f: f64) -> Result<f64> {
    if f > 0.0 && f < 1.0 {
        Ok(f)
    } else {
        Err(Error::config(format!("{name} must lie strictly between 0 and 1, got {f}")))
    }
}

/// Splits shared bandwidth and LLB capacity across units.
///
/// * One unit, or a homogeneous machine: the first unit, which runs every
///   op, gets everything; the rest get nothing.
/// * Two heterogeneous units: LLB in the ratio of PE counts; bandwidth
///   0.25/0.75 (high/low) for decoders and 0.5/0.5 for encoders.
/// * Three or more: the fractions written in the configuration.
pub fn make_partition_plan(
    config: &HHPConfig,
    kind: WorkloadKind,
    overrides: &PlanOverrides,
) -> Result<PartitionPlan> {
    let share = |s: &SubAccelerator, bw: f64, llb: f64| UnitShare {
        id: s.id.clone(),
        pe_count: s.pe_count,
        bw_fraction: bw,
        llb_fraction: llb,
    };
    let subs = &config.sub_accels;
    if subs.len() == 1 || is_homogeneous(config)? {
        let units = subs
            .iter()
            .enumerate()
            .map(|(i, s)| if i == 0 { share(s, 1.0, 1.0) } else { share(s, 0.0, 0.0) })
            .collect();
        return Ok(PartitionPlan { units });
    }
    if subs.len() > 2 {
        if overrides.bw_fraction_low.is_some() || overrides.llb_fraction_low.is_some() {
            return Err(Error::config(
                "fraction overrides apply to two-unit machines; set fractions in the architecture",
            ));
        }
        let units = subs.iter().map(|s| share(s, s.bw_fraction, s.llb_fraction)).collect();
        return Ok(PartitionPlan { units });
    }
    let high = high_unit(config);
    let bw_low = check_fraction("bw_fraction_low", overrides.bw_fraction_low.unwrap_or(kind.default_bw_low()))?;
    let total = config.total_pes() as f64;
    let llb_low = match overrides.llb_fraction_low {
        Some(f) => check_fraction("llb_fraction_low", f)?,
        None => 1.0 - high.pe_count as f64 / total,
    };
    let units = subs
        .iter()
        .map(|s| {
            if s.id == high.id {
                share(s, 1.0 - bw_low, 1.0 - llb_low)
            } else {
                share(s, bw_low, llb_low)
            }
        })
        .collect();
    Ok(PartitionPlan { units })
}

/// Copy of `config` with the plan's fractions written in.
pub fn apply_plan(config: &HHPConfig, plan: &PartitionPlan) -> Result<HHPConfig> {
    let mut out = config.clone();
    for u in &plan.units {
        let s = out
            .sub_accels
            .iter_mut()
            .find(|s| s.id == u.id)
            .ok_or_else(|| Error::UnknownUnit(u.id.clone()))?;
        s.bw_fraction = u.bw_fraction;
        s.llb_fraction = u.llb_fraction;
    }
    let bw: f64 = plan.units.iter().map(|u| u.bw_fraction).sum();
    let llb: f64 = plan.units.iter().map(|u| u.llb_fraction).sum();
    if bw > 1.0 + 1e-9 || llb > 1.0 + 1e-9 {
        return Err(Error::config(format!("plan fractions sum to bw {bw}, llb {llb}")));
    }
    Ok(out)
}

/// Fails on the first op whose smallest tile cannot fit its unit.
pub fn precheck_assignment(
    cascade: &Cascade,
    assignment: &Assignment,
    config: &HHPConfig,
    options: &MapperOptions,
) -> Result<()> {
    let mut views: BTreeMap<&str, UnitView> = BTreeMap::new();
    for op in &cascade.ops {
        let unit = assignment
            .unit_of(&op.id)
            .ok_or_else(|| Error::Schedule(format!("op `{}` is not assigned", op.id)))?;
        if !views.contains_key(unit) {
            views.insert(unit, UnitView::for_sub(config, unit, options)?);
        }
        if let Some(reason) = minimum_tile_violation(op, &views[unit]) {
            return Err(Error::Unmappable { op: op.id.clone(), unit: unit.to_string(), reason });
        }
    }
    Ok(())
}

/// Bandwidth an op needs to run at full compute rate: `peak / op_ai`,
/// capped at `bw_peak`.
pub fn required_bandwidth(op_ai: f64, peak_macs_per_cycle: f64, bw_peak_words_per_cycle: f64) -> Result<f64> {
    if !(op_ai > 0.0 && peak_macs_per_cycle > 0.0 && bw_peak_words_per_cycle > 0.0) {
        return Err(Error::config("required_bandwidth needs positive inputs"));
    }
    let ai_tipping = peak_macs_per_cycle / bw_peak_words_per_cycle;
    Ok((bw_peak_words_per_cycle * ai_tipping / op_ai).min(bw_peak_words_per_cycle))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::architecture::architecture_fixture;
    use crate::workload::{arithmetic_intensity, build_decoder_cascade, build_encoder_cascade, TransformerSpec};

    fn fixture(name: &str) -> HHPConfig {
        architecture_fixture(name).unwrap()
    }

    #[test]
    fn phase_based_puts_decode_on_low_unit() {
        let c = build_decoder_cascade(&TransformerSpec::decoder("d", 64, 4, 12, 3)).unwrap();
        let cfg = fixture("leaf-crossnode");
        let a = assign_ops(&c, &cfg, 160.0, Policy::PhaseBased, None).unwrap();
        for op in &c.ops {
            let want = if op.phase == Phase::Decode { "low" } else { "high" };
            assert_eq!(a.unit_of(&op.id), Some(want), "{}", op.id);
        }
    }

    #[test]
    fn by_reuse_splits_encoder_between_gemms_and_attention() {
        let c = build_encoder_cascade(&TransformerSpec::encoder("bert", 1024, 16, 256)).unwrap();
        let cfg = fixture("leaf-crossnode");
        let a = assign_ops(&c, &cfg, 100.0, Policy::ByReuse, None).unwrap();
        assert_eq!(a.unit_of("L0.logit"), Some("low"));
        assert_eq!(a.unit_of("L0.attend"), Some("low"));
        for g in ["q_gen", "k_gen", "v_gen", "deproj", "ffn1", "ffn2"] {
            assert_eq!(a.unit_of(&format!("L0.{g}")), Some("high"), "{g}");
        }
    }

    #[test]
    fn homogeneous_assigns_everything_to_one_unit() {
        let c = build_encoder_cascade(&TransformerSpec::encoder("e", 64, 4, 16)).unwrap();
        let a = assign_ops(&c, &fixture("leaf-homogeneous"), 160.0, Policy::ByReuse, None).unwrap();
        assert!(a.units.values().all(|u| u == "array"));
        let a = assign_ops(&c, &fixture("hier-homogeneous"), 160.0, Policy::ByReuse, None).unwrap();
        let first = &fixture("hier-homogeneous").sub_accels[0].id;
        assert!(a.units.values().all(|u| u == first));
    }

    #[test]
    fn manual_map_must_cover_every_op() {
        let c = build_encoder_cascade(&TransformerSpec::encoder("e", 64, 4, 16)).unwrap();
        let mut map: BTreeMap<String, String> =
            c.ops.iter().map(|o| (o.id.clone(), "high".to_string())).collect();
        let cfg = fixture("leaf-crossnode");
        assert!(assign_ops(&c, &cfg, 1.0, Policy::Manual, Some(&map)).is_ok());
        map.remove("L0.ffn2");
        let err = assign_ops(&c, &cfg, 1.0, Policy::Manual, Some(&map)).unwrap_err();
        assert!(err.to_string().contains("L0.ffn2"));
    }

    #[test]
    fn phase_and_reuse_policies_agree_between_decode_and_prefill_intensity() {
        let c = build_decoder_cascade(&TransformerSpec::decoder("d", 256, 4, 64, 8)).unwrap();
        let ai = |p: Phase| c.ops.iter().filter(move |o| o.phase == p).map(arithmetic_intensity);
        let max_decode = ai(Phase::Decode).fold(0.0, f64::max);
        let min_prefill = ai(Phase::Prefill).fold(f64::INFINITY, f64::min);
        assert!(max_decode < min_prefill);
        let t = (max_decode + min_prefill) / 2.0;
        let cfg = fixture("leaf-crossnode");
        let a = assign_ops(&c, &cfg, t, Policy::ByReuse, None).unwrap();
        let b = assign_ops(&c, &cfg, t, Policy::PhaseBased, None).unwrap();
        assert_eq!(a.units, b.units);
    }

    #[test]
    fn two_unit_plans() {
        let cfg = fixture("leaf-crossnode");
        let p = make_partition_plan(&cfg, WorkloadKind::Decoder, &PlanOverrides::default()).unwrap();
        assert_eq!((p.units[0].bw_fraction, p.units[1].bw_fraction), (0.25, 0.75));
        assert!((p.units[0].llb_fraction - 0.8).abs() < 1e-12);
        assert!((p.units[1].llb_fraction - 0.2).abs() < 1e-12);
        let p = make_partition_plan(&cfg, WorkloadKind::Encoder, &PlanOverrides::default()).unwrap();
        assert_eq!((p.units[0].bw_fraction, p.units[1].bw_fraction), (0.5, 0.5));
        let o = PlanOverrides { bw_fraction_low: Some(0.5), llb_fraction_low: None };
        let p = make_partition_plan(&cfg, WorkloadKind::Decoder, &o).unwrap();
        assert_eq!((p.units[0].bw_fraction, p.units[1].bw_fraction), (0.5, 0.5));
        for u in &p.units {
            assert!(u.bw_fraction > 0.0);
        }
        let sum: f64 = p.units.iter().map(|u| u.llb_fraction).sum();
        assert!((sum - 1.0).abs() < 1e-12);
        let bad = PlanOverrides { bw_fraction_low: Some(1.2), llb_fraction_low: None };
        assert!(make_partition_plan(&cfg, WorkloadKind::Decoder, &bad).is_err());
    }

    #[test]
    fn applied_plan_validates() {
        let cfg = fixture("hier-crossdepth");
        let p = make_partition_plan(&cfg, WorkloadKind::Decoder, &PlanOverrides::default()).unwrap();
        let applied = apply_plan(&cfg, &p).unwrap();
        assert!(applied.validate().is_empty(), "{:?}", applied.validate());
    }

    #[test]
    fn required_bandwidth_at_table_values() {
        let r = required_bandwidth(170.67, 40960.0, 256.0).unwrap();
        assert!((r - 40960.0 / 170.67).abs() < 1e-9);
        assert_eq!(required_bandwidth(160.0, 40960.0, 256.0).unwrap(), 256.0);
        assert_eq!(required_bandwidth(80.0, 40960.0, 256.0).unwrap(), 256.0);
        assert!(required_bandwidth(0.0, 40960.0, 256.0).is_err());
    }
}
