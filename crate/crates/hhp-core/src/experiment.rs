//! Experiment configuration files, runs, sweeps and report writing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::{compare, ComparisonReport, FailureKind, PipelineOptions};
use crate::architecture::{architecture_fixture, dram_words_per_cycle, EnergyTable, HHPConfig};
use crate::error::{Error, Result};
use crate::mapper::{MapperOptions, SearchBudget};
use crate::partitioner::{PlanOverrides, Policy};
use crate::scheduler::{timeline_csv, utilization_timeline};
use crate::workload::{build_cascade, workload_fixture, Cascade, TransformerSpec};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_MAX_SWEEP_POINTS: usize = 1024;
/// Buckets per run when no bucket size is given.
pub const DEFAULT_TIMELINE_BUCKETS: f64 = 100.0;

/// A positive rational written `"num/den"` or as a bare integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Scale {
    pub num: u64,
    pub den: u64,
}

impl Scale {
    pub const ONE: Scale = Scale { num: 1, den: 1 };

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl FromStr for Scale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("scale `{s}` is not a positive rational like \"1/8\""));
        let (n, d) = match s.split_once('/') {
            Some((n, d)) => (n.trim(), d.trim()),
            None => (s.trim(), "1"),
        };
        let num: u64 = n.parse().map_err(|_| bad())?;
        let den: u64 = d.parse().map_err(|_| bad())?;
        if num == 0 || den == 0 {
            return Err(bad());
        }
        Ok(Scale { num, den })
    }
}

impl std::fmt::Display for Scale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl Serialize for Scale {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Scale {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArchitectureRef {
    Fixture(String),
    File { path: PathBuf },
    Inline(Box<HHPConfig>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WorkloadRef {
    Fixture(String),
    Detailed(WorkloadEntry),
}

/// One workload with optional per-workload scale and decode stride. Exactly
/// one of `fixture`, `spec` and `cascade` is set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<TransformerSpec>,
    /// Path to a cascade JSON file; used as is, never scaled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cascade: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<Scale>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decode_stride: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSettings {
    #[serde(default)]
    pub policy: Option<Policy>,
    /// Absolute reuse threshold in MACs per word.
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub bw_fraction_low: Option<f64>,
    #[serde(default)]
    pub llb_fraction_low: Option<f64>,
    /// Op id → unit id, for the manual policy.
    #[serde(default)]
    pub manual: Option<BTreeMap<String, String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(default)]
    pub dram_bandwidth_bits: Option<Vec<u64>>,
    #[serde(default)]
    pub bw_fraction_low: Option<Vec<f64>>,
    #[serde(default)]
    pub scale: Option<Vec<Scale>>,
}

impl SweepAxes {
    fn validate(&self) -> Result<()> {
        let lens = [
            self.dram_bandwidth_bits.as_ref().map(Vec::len),
            self.bw_fraction_low.as_ref().map(Vec::len),
            self.scale.as_ref().map(Vec::len),
        ];
        if lens.iter().all(Option::is_none) {
            return Err(Error::config("sweep needs at least one axis"));
        }
        if lens.contains(&Some(0)) {
            return Err(Error::config("sweep axes must not be empty"));
        }
        Ok(())
    }

    pub fn point_count(&self) -> usize {
        [
            self.dram_bandwidth_bits.as_ref().map(Vec::len),
            self.bw_fraction_low.as_ref().map(Vec::len),
            self.scale.as_ref().map(Vec::len),
        ]
        .iter()
        .map(|l| l.unwrap_or(1))
        .product()
    }
}

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}
fn default_scale() -> Scale {
    Scale { num: 1, den: 8 }
}
fn default_stride() -> u64 {
    64
}
fn default_bandwidth() -> u64 {
    2048
}
fn default_budget() -> SearchBudget {
    SearchBudget::RandomSample { samples: 2000, seed: 1 }
}
fn default_derate() -> f64 {
    1.0
}
fn default_max_points() -> usize {
    DEFAULT_MAX_SWEEP_POINTS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub name: String,
    pub architectures: Vec<ArchitectureRef>,
    pub workloads: Vec<WorkloadRef>,
    #[serde(default = "default_scale")]
    pub scale: Scale,
    #[serde(default = "default_stride")]
    pub decode_stride: u64,
    #[serde(default = "default_bandwidth")]
    pub dram_bandwidth_bits: u64,
    #[serde(default)]
    pub partition: PartitionSettings,
    #[serde(default = "default_budget")]
    pub mapper: SearchBudget,
    #[serde(default = "default_derate")]
    pub capacity_derate: f64,
    /// Config name used as the speedup baseline.
    #[serde(default)]
    pub baseline: Option<String>,
    #[serde(default)]
    pub energy_table: Option<EnergyTable>,
    #[serde(default)]
    pub bucket_cycles: Option<f64>,
    #[serde(default)]
    pub sweep: Option<SweepAxes>,
    #[serde(default = "default_max_points")]
    pub max_sweep_points: usize,
}

/// Describes where in the file a JSON error sits.
fn json_error(path: &Path, e: serde_json::Error) -> Error {
    Error::config(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column()))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(&read(path)?).map_err(|e| json_error(path, e))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.architectures.is_empty() || self.workloads.is_empty() {
            return Err(Error::config("need at least one architecture and one workload"));
        }
        if self.decode_stride == 0 || self.dram_bandwidth_bits == 0 {
            return Err(Error::config("decode_stride and dram_bandwidth_bits must be positive"));
        }
        if !(self.capacity_derate > 0.0 && self.capacity_derate <= 1.0) {
            return Err(Error::config("capacity_derate must lie in (0, 1]"));
        }
        if let Some(b) = self.bucket_cycles {
            if !(b > 0.0) {
                return Err(Error::config("bucket_cycles must be positive"));
            }
        }
        if let SearchBudget::RandomSample { samples: 0, .. } = self.mapper {
            return Err(Error::config("mapper sample count must be positive"));
        }
        for w in &self.workloads {
            if let WorkloadRef::Detailed(e) = w {
                let set = [e.fixture.is_some(), e.spec.is_some(), e.cascade.is_some()];
                if set.iter().filter(|&&b| b).count() != 1 {
                    return Err(Error::config("a workload entry sets exactly one of fixture, spec, cascade"));
                }
                if e.decode_stride == Some(0) {
                    return Err(Error::config("decode_stride must be positive"));
                }
            }
        }
        if let Some(s) = &self.sweep {
            s.validate()?;
        }
        Ok(())
    }

    /// Seed of a random-sample budget, replaced.
    pub fn with_seed(mut self, seed: u64) -> Self {
        if let SearchBudget::RandomSample { samples, .. } = self.mapper {
            self.mapper = SearchBudget::RandomSample { samples, seed };
        }
        self
    }
}

/// Architectures resolved and checked, before any per-point adjustment.
pub fn resolve_architectures(exp: &ExperimentConfig, base_dir: &Path) -> Result<Vec<HHPConfig>> {
    let mut out = Vec::new();
    for a in &exp.architectures {
        let cfg = match a {
            ArchitectureRef::Fixture(name) => architecture_fixture(name)
                .ok_or_else(|| Error::config(format!("unknown architecture fixture `{name}`")))?,
            ArchitectureRef::File { path } => {
                let p = base_dir.join(path);
                serde_json::from_str(&read(&p)?).map_err(|e| json_error(&p, e))?
            }
            ArchitectureRef::Inline(c) => (**c).clone(),
        };
        cfg.validate_strict()
            .map_err(|e| Error::Validation(vec![format!("architecture `{}`: {e}", cfg.name)]))?;
        out.push(cfg);
    }
    let mut names = std::collections::BTreeSet::new();
    for c in &out {
        if !names.insert(c.name.as_str()) {
            return Err(Error::config(format!("architecture name `{}` appears twice", c.name)));
        }
    }
    Ok(out)
}

/// A workload resolved to a cascade, with the scale it was built at.
#[derive(Debug, Clone)]
pub struct ResolvedWorkload {
    pub cascade: Cascade,
    pub scale: Scale,
}

pub fn resolve_workload(
    w: &WorkloadRef,
    exp: &ExperimentConfig,
    scale_override: Option<Scale>,
    base_dir: &Path,
) -> Result<ResolvedWorkload> {
    let entry = match w {
        WorkloadRef::Fixture(name) => WorkloadEntry { fixture: Some(name.clone()), ..Default::default() },
        WorkloadRef::Detailed(e) => e.clone(),
    };
    if let Some(path) = &entry.cascade {
        let p = base_dir.join(path);
        let c: Cascade = serde_json::from_str(&read(&p)?).map_err(|e| json_error(&p, e))?;
        c.validate()?;
        return Ok(ResolvedWorkload { cascade: c, scale: Scale::ONE });
    }
    let spec = match (&entry.fixture, &entry.spec) {
        (Some(name), _) => {
            workload_fixture(name).ok_or_else(|| Error::config(format!("unknown workload fixture `{name}`")))?
        }
        (None, Some(s)) => s.clone(),
        (None, None) => return Err(Error::config("workload entry names nothing")),
    };
    let scale = scale_override.or(entry.scale).unwrap_or(exp.scale);
    let mut spec = spec.scaled(scale.num, scale.den)?;
    spec.decode_stride = entry.decode_stride.unwrap_or(exp.decode_stride);
    let mut cascade = build_cascade(&spec)?;
    if scale != Scale::ONE {
        cascade.name = format!("{}@{scale}", cascade.name);
    }
    Ok(ResolvedWorkload { cascade, scale })
}

/// One point of a run or sweep: axis values that differ from the base
/// experiment.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SweepPoint {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dram_bandwidth_bits: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bw_fraction_low: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<Scale>,
}

impl SweepPoint {
    fn label(&self) -> String {
        let mut parts = Vec::new();
        if let Some(b) = self.dram_bandwidth_bits {
            parts.push(format!("dram_bandwidth_bits={b}"));
        }
        if let Some(f) = self.bw_fraction_low {
            parts.push(format!("bw_fraction_low={f}"));
        }
        if let Some(s) = self.scale {
            parts.push(format!("scale={s}"));
        }
        parts.join(";")
    }

    fn is_empty(&self) -> bool {
        self.dram_bandwidth_bits.is_none() && self.bw_fraction_low.is_none() && self.scale.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkloadRun {
    pub workload: String,
    pub scale: String,
    pub reuse_threshold: f64,
    pub comparison: ComparisonReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointRun {
    pub point: SweepPoint,
    pub workloads: Vec<WorkloadRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub experiment: String,
    pub energy_units: String,
    pub mapper: SearchBudget,
    pub points: Vec<PointRun>,
}

impl ExperimentReport {
    pub fn failures(&self) -> Vec<(String, String, FailureKind, String)> {
        let mut out = Vec::new();
        for p in &self.points {
            for w in &p.workloads {
                for (cfg, f) in w.comparison.failures() {
                    out.push((cfg.to_string(), w.workload.clone(), f.kind, f.message.clone()));
                }
            }
        }
        out
    }

    /// The single comparison for `workload` in an unswept run.
    pub fn comparison(&self, workload: &str) -> Option<&ComparisonReport> {
        self.points
            .first()?
            .workloads
            .iter()
            .find(|w| w.workload == workload)
            .map(|w| &w.comparison)
    }
}

/// Everything a run can change on top of the experiment file.
#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub energy_table: Option<EnergyTable>,
    pub bucket_cycles: Option<f64>,
}

fn energy_label(exp: &ExperimentConfig, o: &RunOverrides) -> String {
    if exp.energy_table.is_some() || o.energy_table.is_some() {
        "user energy table".into()
    } else {
        "relative units".into()
    }
}

fn run_point(
    exp: &ExperimentConfig,
    archs: &[HHPConfig],
    point: &SweepPoint,
    energy: Option<&EnergyTable>,
    base_dir: &Path,
) -> Result<PointRun> {
    let bits = point.dram_bandwidth_bits.unwrap_or(exp.dram_bandwidth_bits);
    let mut configs = archs.to_vec();
    for c in &mut configs {
        c.set_dram_bandwidth(dram_words_per_cycle(bits));
        if let Some(t) = energy {
            c.apply_energy_table(t)?;
        }
    }
    let baseline = match &exp.baseline {
        Some(name) => Some(
            configs
                .iter()
                .position(|c| &c.name == name)
                .ok_or_else(|| Error::config(format!("baseline `{name}` is not in the architecture list")))?,
        ),
        None => None,
    };
    let mut workloads = Vec::new();
    for w in &exp.workloads {
        let resolved = resolve_workload(w, exp, point.scale, base_dir)?;
        // The tipping point of the full machine, shrunk with the workload
        // since arithmetic intensity scales with its dimensions.
        let threshold = exp.partition.threshold.unwrap_or_else(|| {
            let tipping = configs[baseline.unwrap_or(0)].ai_tipping();
            tipping * resolved.scale.as_f64()
        });
        let opts = PipelineOptions {
            threshold: Some(threshold),
            policy: exp.partition.policy,
            manual: exp.partition.manual.clone(),
            overrides: PlanOverrides {
                bw_fraction_low: point.bw_fraction_low.or(exp.partition.bw_fraction_low),
                llb_fraction_low: exp.partition.llb_fraction_low,
            },
            budget: exp.mapper,
            mapper: MapperOptions { capacity_derate: exp.capacity_derate },
        };
        let comparison = compare(&configs, &resolved.cascade, &opts, baseline)?;
        workloads.push(WorkloadRun {
            workload: resolved.cascade.name.clone(),
            scale: resolved.scale.to_string(),
            reuse_threshold: threshold,
            comparison,
        });
    }
    Ok(PointRun { point: point.clone(), workloads })
}

/// Every point of the sweep's Cartesian product, in axis order.
pub fn sweep_points(axes: &SweepAxes) -> Vec<SweepPoint> {
    let bw: Vec<Option<u64>> = axes.dram_bandwidth_bits.as_ref().map_or(vec![None], |v| v.iter().map(|&x| Some(x)).collect());
    let fr: Vec<Option<f64>> = axes.bw_fraction_low.as_ref().map_or(vec![None], |v| v.iter().map(|&x| Some(x)).collect());
    let sc: Vec<Option<Scale>> = axes.scale.as_ref().map_or(vec![None], |v| v.iter().map(|&x| Some(x)).collect());
    let mut out = Vec::new();
    for &b in &bw {
        for &f in &fr {
            for &s in &sc {
                out.push(SweepPoint { dram_bandwidth_bits: b, bw_fraction_low: f, scale: s });
            }
        }
    }
    out
}

fn effective(exp: &ExperimentConfig, o: &RunOverrides) -> ExperimentConfig {
    let mut e = exp.clone();
    if let Some(seed) = o.seed {
        e = e.with_seed(seed);
    }
    e
}

/// Runs the experiment once at its base settings.
pub fn run(exp: &ExperimentConfig, base_dir: &Path, o: &RunOverrides) -> Result<ExperimentReport> {
    exp.validate()?;
    let exp = effective(exp, o);
    let archs = resolve_architectures(&exp, base_dir)?;
    let energy = o.energy_table.as_ref().or(exp.energy_table.as_ref());
    let point = run_point(&exp, &archs, &SweepPoint::default(), energy, base_dir)?;
    Ok(ExperimentReport {
        schema_version: SCHEMA_VERSION,
        experiment: exp.name.clone(),
        energy_units: energy_label(&exp, o),
        mapper: exp.mapper,
        points: vec![point],
    })
}

/// Runs every point of the experiment's sweep axes.
pub fn sweep(exp: &ExperimentConfig, base_dir: &Path, o: &RunOverrides) -> Result<ExperimentReport> {
    exp.validate()?;
    let axes = exp.sweep.as_ref().ok_or_else(|| Error::config("experiment has no sweep axes"))?;
    let n = axes.point_count();
    if n > exp.max_sweep_points {
        return Err(Error::config(format!(
            "sweep has {n} points, more than max_sweep_points = {}",
            exp.max_sweep_points
        )));
    }
    let exp = effective(exp, o);
    let archs = resolve_architectures(&exp, base_dir)?;
    let energy = o.energy_table.as_ref().or(exp.energy_table.as_ref());
    let points = sweep_points(axes)
        .iter()
        .map(|p| run_point(&exp, &archs, p, energy, base_dir))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        schema_version: SCHEMA_VERSION,
        experiment: exp.name.clone(),
        energy_units: energy_label(&exp, o),
        mapper: exp.mapper,
        points,
    })
}

fn config_label(point: &SweepPoint, config: &str) -> String {
    if point.is_empty() {
        config.to_string()
    } else {
        format!("{config}[{}]", point.label())
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Long-format `config,workload,metric,value` rows.
pub fn summary_csv(report: &ExperimentReport) -> String {
    let mut s = String::from("config,workload,metric,value\n");
    for p in &report.points {
        for w in &p.workloads {
            for row in &w.comparison.rows {
                let cfg = csv_field(&config_label(&p.point, &row.config));
                let wl = csv_field(&w.workload);
                let mut put = |metric: &str, value: String| {
                    let _ = writeln!(s, "{cfg},{wl},{},{value}", csv_field(metric));
                };
                let Some(r) = &row.result else {
                    let f = row.failure.as_ref().expect("failed rows carry a failure");
                    put("status", format!("{:?}", f.kind).to_lowercase());
                    continue;
                };
                put("status", "ok".into());
                put("makespan_cycles", r.makespan().to_string());
                if let Some(sp) = row.speedup {
                    put("speedup", sp.to_string());
                }
                put("total_energy", r.total_energy().to_string());
                put("total_macs", r.total_macs.to_string());
                put("macs_per_energy_unit", r.macs_per_energy_unit.to_string());
                put("mapper_searches", r.searches.to_string());
                for (level, e) in &r.schedule.energy_by_level {
                    put(&format!("energy.{level}"), e.to_string());
                }
                for (unit, e) in &r.schedule.energy_by_unit {
                    put(&format!("energy_unit.{unit}"), e.to_string());
                }
                for (class, e) in &r.onchip_energy_by_reuse {
                    put(&format!("onchip_energy.{class}"), e.to_string());
                }
                put("high_reuse_onchip_share", r.high_reuse_onchip_share.to_string());
                for (unit, u) in &r.schedule.utilization {
                    put(&format!("busy_fraction.{unit}"), u.to_string());
                }
                for (unit, u) in &r.schedule.pe_utilization {
                    put(&format!("pe_utilization.{unit}"), u.to_string());
                }
            }
        }
    }
    s
}

/// `config,workload,cycle_bucket,unit,busy_fraction` rows.
pub fn timeline_csv_all(report: &ExperimentReport, bucket_cycles: Option<f64>) -> Result<String> {
    let mut s = String::from("config,workload,cycle_bucket,unit,busy_fraction\n");
    for p in &report.points {
        for w in &p.workloads {
            for row in &w.comparison.rows {
                let Some(r) = &row.result else { continue };
                let bucket = bucket_cycles.unwrap_or_else(|| {
                    (r.makespan() / DEFAULT_TIMELINE_BUCKETS).max(f64::MIN_POSITIVE)
                });
                let series = utilization_timeline(&r.schedule, bucket)?;
                let prefix = format!(
                    "{},{},",
                    csv_field(&config_label(&p.point, &row.config)),
                    csv_field(&w.workload)
                );
                for line in timeline_csv(&series, bucket).lines().skip(1) {
                    s.push_str(&prefix);
                    s.push_str(line);
                    s.push('\n');
                }
            }
        }
    }
    Ok(s)
}

/// One row per (point, workload, config) with axis values as columns.
pub fn sweep_csv(report: &ExperimentReport) -> String {
    let mut s = String::from(
        "dram_bandwidth_bits,bw_fraction_low,scale,workload,config,status,makespan_cycles,speedup,total_energy,macs_per_energy_unit\n",
    );
    let opt = |v: Option<String>| v.unwrap_or_default();
    for p in &report.points {
        for w in &p.workloads {
            for row in &w.comparison.rows {
                let r = row.result.as_ref();
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{},{}",
                    opt(p.point.dram_bandwidth_bits.map(|v| v.to_string())),
                    opt(p.point.bw_fraction_low.map(|v| v.to_string())),
                    opt(p.point.scale.map(|v| v.to_string())),
                    csv_field(&w.workload),
                    csv_field(&row.config),
                    if r.is_some() { "ok".to_string() } else { format!("{:?}", row.failure.as_ref().map(|f| f.kind).expect("failed")).to_lowercase() },
                    opt(r.map(|r| r.makespan().to_string())),
                    opt(row.speedup.map(|v| v.to_string())),
                    opt(r.map(|r| r.total_energy().to_string())),
                    opt(r.map(|r| r.macs_per_energy_unit.to_string())),
                );
            }
        }
    }
    s
}

/// Writes report.json, summary.csv, timeline.csv and, for sweeps, sweep.csv.
pub fn write_outputs(report: &ExperimentReport, out: &Path, bucket_cycles: Option<f64>, is_sweep: bool) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(report)?)?;
    std::fs::write(out.join("summary.csv"), summary_csv(report))?;
    std::fs::write(out.join("timeline.csv"), timeline_csv_all(report, bucket_cycles)?)?;
    if is_sweep {
        std::fs::write(out.join("sweep.csv"), sweep_csv(report))?;
    }
    Ok(())
}

pub fn load_energy_table(path: &Path) -> Result<EnergyTable> {
    serde_json::from_str(&read(path)?).map_err(|e| json_error(path, e))
}
