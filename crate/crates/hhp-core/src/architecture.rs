//! Memory hierarchies, sub-accelerators and the two-axis taxonomy.
//!
//! The hierarchy is a tree rooted at DRAM (depth 0). Shared levels have one
//! instance for the whole chip; private levels are instantiated per
//! sub-accelerator, and `per_pe` levels once per processing element. A
//! sub-accelerator consumes data from the level at its `attach_depth` and
//! never touches deeper levels.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::Dim;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryLevel {
    pub name: String,
    pub depth: u32,
    /// `None` means unbounded (DRAM).
    pub capacity_bytes: Option<u64>,
    /// Words per cycle per instance.
    pub read_bw: f64,
    pub write_bw: f64,
    pub energy_per_word: f64,
    pub shared: bool,
    /// One instance per PE (register files) rather than per array.
    #[serde(default)]
    pub per_pe: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubAccelerator {
    pub id: String,
    pub pe_count: u64,
    pub rows: u64,
    pub cols: u64,
    pub attach_depth: u32,
    pub bw_fraction: f64,
    pub llb_fraction: f64,
}

impl SubAccelerator {
    /// Datapath identity used by the taxonomy: PE count and array geometry.
    pub fn datapath(&self) -> (u64, u64, u64) {
        (self.pe_count, self.rows, self.cols)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HierClass {
    LeafOnly,
    Hierarchical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HetClass {
    Homogeneous,
    IntraNode,
    CrossNode,
    CrossDepth,
    Compound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HHPConfig {
    pub name: String,
    pub levels: Vec<MemoryLevel>,
    pub sub_accels: Vec<SubAccelerator>,
    pub fsm_groups: Vec<Vec<String>>,
    /// Dimension parallelized across columns inside an intra-node FSM group.
    #[serde(default = "default_col_dim")]
    pub shared_col_dim: Dim,
    #[serde(default = "default_mac_energy")]
    pub mac_energy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hier_class: Option<HierClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub het_class: Option<HetClass>,
}

fn default_col_dim() -> Dim {
    Dim::N
}

fn default_mac_energy() -> f64 {
    DEFAULT_MAC_ENERGY
}

/// Relative energy per MAC.
pub const DEFAULT_MAC_ENERGY: f64 = 0.25;

/// One broken structural rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub rule: String,
    pub element: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({})", self.rule, self.element)
    }
}

fn violation(rule: &str, element: impl Into<String>) -> Violation {
    Violation { rule: rule.to_string(), element: element.into() }
}

/// Constraints the mapper must honor for one sub-accelerator.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MappingConstraints {
    /// Depths of the levels the unit may use, root first.
    pub level_depths: Vec<u32>,
    /// Column-parallel dimension forced by a shared FSM.
    pub col_dim: Option<Dim>,
    /// Column count shared across an FSM group.
    pub max_cols: Option<u64>,
}

impl MappingConstraints {
    /// Constraints with every level down to `attach_depth` and no spatial
    /// coupling.
    pub fn unconstrained(attach_depth: u32) -> Self {
        MappingConstraints {
            level_depths: (0..=attach_depth).collect(),
            col_dim: None,
            max_cols: None,
        }
    }
}

/// Which taxonomy conditions hold, before collapsing to one label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct HeterogeneityFlags {
    pub intra_node: bool,
    pub cross_node: bool,
    pub cross_depth: bool,
}

impl HeterogeneityFlags {
    fn count(&self) -> usize {
        self.intra_node as usize + self.cross_node as usize + self.cross_depth as usize
    }
}

impl HHPConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn sub(&self, id: &str) -> Result<&SubAccelerator> {
        self.sub_accels
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::UnknownUnit(id.to_string()))
    }

    pub fn level_at(&self, depth: u32) -> Option<&MemoryLevel> {
        self.levels.iter().find(|l| l.depth == depth)
    }

    pub fn leaf_depth(&self) -> u32 {
        self.levels.iter().map(|l| l.depth).max().unwrap_or(0)
    }

    pub fn total_pes(&self) -> u64 {
        self.sub_accels.iter().map(|s| s.pe_count).sum()
    }

    pub fn dram(&self) -> Option<&MemoryLevel> {
        self.level_at(0)
    }

    /// Peak machine AI tipping point in MACs per word.
    pub fn ai_tipping(&self) -> f64 {
        let bw = self.dram().map(|l| l.read_bw).unwrap_or(f64::NAN);
        self.total_pes() as f64 / bw
    }

    fn group_of(&self, id: &str) -> Option<usize> {
        self.fsm_groups.iter().position(|g| g.iter().any(|m| m == id))
    }

    fn structural_violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let depths: BTreeSet<u32> = self.levels.iter().map(|l| l.depth).collect();
        if depths.len() != self.levels.len() {
            v.push(violation("each depth holds exactly one level", &self.name));
        }
        if depths.is_empty() || depths.iter().copied().ne(0..depths.len() as u32) {
            v.push(violation("level depths must be contiguous from 0", &self.name));
        }
        if let Some(root) = self.level_at(0) {
            if root.capacity_bytes.is_some() || !root.shared {
                v.push(violation("root level must be unbounded and shared", &root.name));
            }
        }
        for l in &self.levels {
            if l.depth > 0 && l.capacity_bytes.is_none_or(|c| c == 0) {
                v.push(violation("non-root levels need a positive capacity", &l.name));
            }
            if !(l.read_bw > 0.0 && l.write_bw > 0.0) {
                v.push(violation("level bandwidth must be positive", &l.name));
            }
            if !(l.energy_per_word >= 0.0) {
                v.push(violation("level energy must be nonnegative", &l.name));
            }
        }
        let private: Vec<&MemoryLevel> = {
            let mut p: Vec<_> = self.levels.iter().filter(|l| !l.shared).collect();
            p.sort_by_key(|l| l.depth);
            p
        };
        for pair in private.windows(2) {
            if let (Some(outer), Some(inner)) = (pair[0].capacity_bytes, pair[1].capacity_bytes) {
                if inner > outer {
                    v.push(violation("private capacity must shrink toward the leaves", &pair[1].name));
                }
            }
        }
        v
    }

    /// Checks every structural and taxonomy rule; empty means valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut v = self.structural_violations();
        let depths: BTreeSet<u32> = self.levels.iter().map(|l| l.depth).collect();
        let leaf = self.leaf_depth();

        if self.sub_accels.is_empty() {
            v.push(violation("at least one sub-accelerator is required", &self.name));
        }
        let mut ids = BTreeSet::new();
        for s in &self.sub_accels {
            if !ids.insert(s.id.as_str()) {
                v.push(violation("sub-accelerator ids must be unique", &s.id));
            }
            if s.pe_count == 0 || s.rows * s.cols != s.pe_count {
                v.push(violation("pe_count must equal rows x cols", &s.id));
            }
            if !depths.contains(&s.attach_depth) {
                v.push(violation("attach_depth must exist in the hierarchy", &s.id));
            }
            if !(s.bw_fraction > 0.0 && s.bw_fraction <= 1.0) {
                v.push(violation("bw_fraction must lie in (0, 1]", &s.id));
            }
            if !(s.llb_fraction > 0.0 && s.llb_fraction <= 1.0) {
                v.push(violation("llb_fraction must lie in (0, 1]", &s.id));
            }
        }
        const EPS: f64 = 1e-9;
        let bw_sum: f64 = self.sub_accels.iter().map(|s| s.bw_fraction).sum();
        if bw_sum > 1.0 + EPS {
            v.push(violation("bw_fraction sum must not exceed 1", format!("sum = {bw_sum}")));
        }
        let llb_sum: f64 = self.sub_accels.iter().map(|s| s.llb_fraction).sum();
        if llb_sum > 1.0 + EPS {
            v.push(violation("llb_fraction sum must not exceed 1", format!("sum = {llb_sum}")));
        }

        let mut grouped: BTreeMap<&str, usize> = BTreeMap::new();
        for g in &self.fsm_groups {
            for m in g {
                *grouped.entry(m.as_str()).or_default() += 1;
                if !ids.contains(m.as_str()) {
                    v.push(violation("fsm group names an unknown sub-accelerator", m));
                }
            }
        }
        for s in &self.sub_accels {
            if grouped.get(s.id.as_str()).copied().unwrap_or(0) != 1 {
                v.push(violation("every sub-accelerator belongs to exactly one fsm group", &s.id));
            }
        }
        for g in &self.fsm_groups {
            let members: Vec<&SubAccelerator> =
                self.sub_accels.iter().filter(|s| g.contains(&s.id)).collect();
            let types: BTreeSet<_> = members.iter().map(|s| s.datapath()).collect();
            let cols: BTreeSet<_> = members.iter().map(|s| s.cols).collect();
            if types.len() >= 2 && cols.len() > 1 {
                v.push(violation("intra-node group requires equal column counts", g.join(",")));
            }
        }

        // Label checks only make sense on a well-formed structure.
        if !v.is_empty() {
            return v;
        }
        let flags = self.heterogeneity_flags();
        let derived_hier = self.hier_class_of();
        if let Some(h) = self.hier_class {
            if h == HierClass::LeafOnly {
                for s in self.sub_accels.iter().filter(|s| s.attach_depth != leaf) {
                    v.push(violation("LeafOnly requires leaf attach", &s.id));
                }
            } else if h != derived_hier {
                v.push(violation("Hierarchical requires compute above the leaves", &self.name));
            }
        }
        if let Some(het) = self.het_class {
            let types: BTreeSet<_> = self.sub_accels.iter().map(|s| s.datapath()).collect();
            let attach: BTreeSet<_> = self.sub_accels.iter().map(|s| s.attach_depth).collect();
            let ok = match het {
                HetClass::Homogeneous => types.len() == 1,
                HetClass::IntraNode => flags.intra_node && flags.count() == 1,
                HetClass::CrossNode => flags.cross_node && flags.count() == 1,
                HetClass::CrossDepth => attach.len() >= 2 && flags.cross_depth && flags.count() == 1,
                HetClass::Compound => flags.count() >= 2,
            };
            if !ok {
                v.push(violation(
                    &format!("structure does not satisfy {het:?}"),
                    &self.name,
                ));
            }
        }
        v
    }

    pub fn validate_strict(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v.iter().map(ToString::to_string).collect()))
        }
    }

    fn hier_class_of(&self) -> HierClass {
        let leaf = self.leaf_depth();
        if self.sub_accels.iter().all(|s| s.attach_depth == leaf) {
            HierClass::LeafOnly
        } else {
            HierClass::Hierarchical
        }
    }

    pub fn heterogeneity_flags(&self) -> HeterogeneityFlags {
        let mut flags = HeterogeneityFlags::default();
        for g in &self.fsm_groups {
            let types: BTreeSet<_> = self
                .sub_accels
                .iter()
                .filter(|s| g.contains(&s.id))
                .map(|s| s.datapath())
                .collect();
            flags.intra_node |= types.len() >= 2;
        }
        let subs = &self.sub_accels;
        for (i, a) in subs.iter().enumerate() {
            for b in &subs[i + 1..] {
                if a.attach_depth == b.attach_depth
                    && a.datapath() != b.datapath()
                    && self.group_of(&a.id) != self.group_of(&b.id)
                {
                    flags.cross_node = true;
                }
            }
        }
        let mut by_depth: BTreeMap<u32, BTreeSet<(u64, u64, u64)>> = BTreeMap::new();
        for s in subs {
            by_depth.entry(s.attach_depth).or_default().insert(s.datapath());
        }
        let sets: Vec<_> = by_depth.values().collect();
        flags.cross_depth = sets.windows(2).any(|w| w[0] != w[1]);
        flags
    }

    /// Derives both taxonomy labels from structure alone.
    pub fn classify(&self) -> Result<(HierClass, HetClass)> {
        let structural = self.structural_violations();
        if !structural.is_empty() {
            return Err(Error::Validation(structural.iter().map(ToString::to_string).collect()));
        }
        if self.sub_accels.is_empty() {
            return Err(Error::config("no sub-accelerators to classify"));
        }
        let depths: BTreeSet<u32> = self.levels.iter().map(|l| l.depth).collect();
        if let Some(s) = self.sub_accels.iter().find(|s| !depths.contains(&s.attach_depth)) {
            return Err(Error::Validation(vec![format!(
                "attach_depth {} of `{}` does not exist",
                s.attach_depth, s.id
            )]));
        }
        let types: BTreeSet<_> = self.sub_accels.iter().map(|s| s.datapath()).collect();
        let flags = self.heterogeneity_flags();
        let het = if types.len() == 1 {
            HetClass::Homogeneous
        } else {
            match (flags.count(), flags) {
                (n, _) if n >= 2 => HetClass::Compound,
                (_, f) if f.intra_node => HetClass::IntraNode,
                (_, f) if f.cross_node => HetClass::CrossNode,
                (_, f) if f.cross_depth => HetClass::CrossDepth,
                // Two distinct datapaths always trip one of the conditions.
                _ => unreachable!("distinct datapaths without a heterogeneity source"),
            }
        };
        Ok((self.hier_class_of(), het))
    }

    /// Returns a copy carrying the derived labels.
    pub fn labeled(mut self) -> Result<Self> {
        let (h, het) = self.classify()?;
        self.hier_class = Some(h);
        self.het_class = Some(het);
        Ok(self)
    }

    pub fn derive_mapping_constraints(&self, sub_id: &str) -> Result<MappingConstraints> {
        let sub = self.sub(sub_id)?;
        let mut level_depths: Vec<u32> = self
            .levels
            .iter()
            .map(|l| l.depth)
            .filter(|&d| d <= sub.attach_depth)
            .collect();
        level_depths.sort_unstable();
        let mut c = MappingConstraints { level_depths, col_dim: None, max_cols: None };
        if let Some(g) = self.group_of(sub_id) {
            let members: Vec<&SubAccelerator> =
                self.sub_accels.iter().filter(|s| self.fsm_groups[g].contains(&s.id)).collect();
            let types: BTreeSet<_> = members.iter().map(|s| s.datapath()).collect();
            if types.len() >= 2 {
                c.col_dim = Some(self.shared_col_dim);
                c.max_cols = members.iter().map(|s| s.cols).min();
            }
        }
        Ok(c)
    }

    /// Sets DRAM read and write bandwidth in words per cycle.
    pub fn set_dram_bandwidth(&mut self, words_per_cycle: f64) {
        for l in self.levels.iter_mut().filter(|l| l.depth == 0) {
            l.read_bw = words_per_cycle;
            l.write_bw = words_per_cycle;
        }
    }

    pub fn apply_energy_table(&mut self, table: &EnergyTable) -> Result<()> {
        for (name, e) in &table.levels {
            let level = self
                .levels
                .iter_mut()
                .find(|l| &l.name == name)
                .ok_or_else(|| Error::config(format!("energy table names unknown level `{name}`")))?;
            level.energy_per_word = *e;
        }
        if let Some(mac) = table.mac {
            self.mac_energy = mac;
        }
        Ok(())
    }

    /// Multiplies every energy coefficient by `c`.
    pub fn scale_energy(&mut self, c: f64) {
        for l in &mut self.levels {
            l.energy_per_word *= c;
        }
        self.mac_energy *= c;
    }
}

/// Per-level energy overrides, keyed by level name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyTable {
    #[serde(default)]
    pub levels: BTreeMap<String, f64>,
    #[serde(default)]
    pub mac: Option<f64>,
}

// Hardware parameters of the evaluated machine.
pub const WORD_BITS: u32 = 8;
pub const TOTAL_MACS: u64 = 40960;
pub const DRAM_BW_BITS: u64 = 2048;
pub const LLB_BYTES: u64 = 4 * 1024 * 1024;
pub const L1_BYTES: u64 = 128 * 1024;
pub const RF_BYTES: u64 = 64;

/// On-chip port widths in words per cycle per instance.
pub const LLB_BW_WORDS: f64 = 1024.0;
pub const L1_BW_WORDS: f64 = 512.0;
pub const RF_BW_WORDS: f64 = 4.0;

/// Default relative energies per word access.
pub const E_DRAM: f64 = 128.0;
pub const E_LLB: f64 = 16.0;
pub const E_L1: f64 = 4.0;
pub const E_RF: f64 = 1.0;

pub fn dram_words_per_cycle(bits: u64) -> f64 {
    bits as f64 / WORD_BITS as f64
}

/// DRAM, LLB, L1 (per array) and RF (per PE).
pub fn default_levels() -> Vec<MemoryLevel> {
    let dram_bw = dram_words_per_cycle(DRAM_BW_BITS);
    vec![
        MemoryLevel {
            name: "DRAM".into(),
            depth: 0,
            capacity_bytes: None,
            read_bw: dram_bw,
            write_bw: dram_bw,
            energy_per_word: E_DRAM,
            shared: true,
            per_pe: false,
        },
        MemoryLevel {
            name: "LLB".into(),
            depth: 1,
            capacity_bytes: Some(LLB_BYTES),
            read_bw: LLB_BW_WORDS,
            write_bw: LLB_BW_WORDS,
            energy_per_word: E_LLB,
            shared: true,
            per_pe: false,
        },
        MemoryLevel {
            name: "L1".into(),
            depth: 2,
            capacity_bytes: Some(L1_BYTES),
            read_bw: L1_BW_WORDS,
            write_bw: L1_BW_WORDS,
            energy_per_word: E_L1,
            shared: false,
            per_pe: false,
        },
        MemoryLevel {
            name: "RF".into(),
            depth: 3,
            capacity_bytes: Some(RF_BYTES),
            read_bw: RF_BW_WORDS,
            write_bw: RF_BW_WORDS,
            energy_per_word: E_RF,
            shared: false,
            per_pe: true,
        },
    ]
}

fn unit(id: &str, rows: u64, cols: u64, attach_depth: u32) -> SubAccelerator {
    SubAccelerator {
        id: id.into(),
        pe_count: rows * cols,
        rows,
        cols,
        attach_depth,
        bw_fraction: 1.0,
        llb_fraction: 1.0,
    }
}

/// Splits bandwidth and LLB in proportion to PE count.
fn proportional_fractions(units: &mut [SubAccelerator]) {
    let total: u64 = units.iter().map(|u| u.pe_count).sum();
    for u in units.iter_mut() {
        let f = u.pe_count as f64 / total as f64;
        u.bw_fraction = f;
        u.llb_fraction = f;
    }
}

fn config(
    name: &str,
    mut units: Vec<SubAccelerator>,
    fsm_groups: Vec<Vec<&str>>,
) -> HHPConfig {
    proportional_fractions(&mut units);
    HHPConfig {
        name: name.into(),
        levels: default_levels(),
        sub_accels: units,
        fsm_groups: fsm_groups
            .into_iter()
            .map(|g| g.into_iter().map(String::from).collect())
            .collect(),
        shared_col_dim: Dim::N,
        mac_energy: DEFAULT_MAC_ENERGY,
        hier_class: None,
        het_class: None,
    }
}

pub const LEAF: u32 = 3;
pub const LLB_DEPTH: u32 = 1;

/// Taxonomy cases (a)-(h) at the evaluated machine's scale: 40960 MACs,
/// high:low compute roof 4:1 where two reuse classes are present.
pub fn architecture_fixtures() -> Vec<HHPConfig> {
    let fixtures = vec![
        // (a) TPUv1-like: one array at the leaves.
        config("leaf-homogeneous", vec![unit("array", 128, 320, LEAF)], vec![vec!["array"]]),
        // (b) Herald-like: distinct arrays, separate controllers.
        config(
            "leaf-crossnode",
            vec![unit("high", 128, 256, LEAF), unit("low", 64, 128, LEAF)],
            vec![vec!["high"], vec!["low"]],
        ),
        // (c) tensor-core-like: distinct arrays under one controller.
        config(
            "leaf-intranode",
            vec![unit("high", 256, 128, LEAF), unit("low", 64, 128, LEAF)],
            vec![vec!["high", "low"]],
        ),
        // (d) NeuPIM-like: low-reuse unit attached above the leaves.
        config(
            "hier-crossdepth",
            vec![unit("high", 128, 256, LEAF), unit("low", 64, 128, LLB_DEPTH)],
            vec![vec!["high"], vec!["low"]],
        ),
        // (e)
        config(
            "hier-homogeneous",
            vec![unit("leaf", 128, 160, LEAF), unit("near-llb", 128, 160, LLB_DEPTH)],
            vec![vec!["leaf"], vec!["near-llb"]],
        ),
        // (f) clustered: the same pair of datapaths at two depths.
        config(
            "hier-crossnode",
            vec![
                unit("leaf-a", 128, 128, LEAF),
                unit("leaf-b", 32, 128, LEAF),
                unit("llb-a", 128, 128, LLB_DEPTH),
                unit("llb-b", 32, 128, LLB_DEPTH),
            ],
            vec![vec!["leaf-a"], vec!["leaf-b"], vec!["llb-a"], vec!["llb-b"]],
        ),
        // (g)
        config(
            "hier-intranode",
            vec![
                unit("leaf-a", 128, 128, LEAF),
                unit("leaf-b", 32, 128, LEAF),
                unit("llb-a", 128, 128, LLB_DEPTH),
                unit("llb-b", 32, 128, LLB_DEPTH),
            ],
            vec![vec!["leaf-a", "leaf-b"], vec!["llb-a", "llb-b"]],
        ),
        // (h) cross-node leaves plus a third datapath at the LLB.
        config(
            "compound",
            vec![
                unit("leaf-a", 128, 128, LEAF),
                unit("leaf-b", 128, 64, LEAF),
                unit("llb-c", 64, 256, LLB_DEPTH),
            ],
            vec![vec!["leaf-a"], vec!["leaf-b"], vec!["llb-c"]],
        ),
    ];
    fixtures
        .into_iter()
        .map(|c| c.labeled().expect("bundled fixtures are well formed"))
        .collect()
}

/// The four configurations compared in the evaluation, (a)-(d).
pub const EVALUATED_FIXTURES: [&str; 4] =
    ["leaf-homogeneous", "leaf-crossnode", "leaf-intranode", "hier-crossdepth"];

pub fn architecture_fixture(name: &str) -> Option<HHPConfig> {
    architecture_fixtures().into_iter().find(|c| c.name == name)
}
