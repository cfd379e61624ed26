//! Per-operation mapping search and analytical cost model.
//!
//! A mapping tiles each of the four loop dimensions across the unit's memory
//! levels (root first), picks the innermost loop at every level, and unrolls
//! up to two dimensions across the PE array. The spatial fanout sits directly
//! above the first per-PE level; units without one (attached above the
//! leaves) feed their PEs straight from the attach level.
//!
//! Access counting follows the fully nested loop model. Below every storage
//! level sits its child: the next level down, or the PEs' operand registers
//! below the attach level. Each time a loop outside the child that indexes a
//! tensor advances, the child's tile of that tensor is refilled. Irrelevant
//! loops keep the tile resident only while they sit inside the innermost
//! relevant loop. Output tiles are written back when evicted and reloaded
//! as partial sums when revisited.

use std::collections::{BTreeMap, HashMap};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::architecture::{HHPConfig, MappingConstraints, SubAccelerator};
use crate::error::{Error, Result};
use crate::workload::{Cascade, Dim, Dims, EinsumOp, OpKind};

/// Pseudo-level key under which compute energy is reported.
pub const MAC_KEY: &str = "MAC";

/// The three tensors of `C[b,m,n] += A[b,m,k] * W[b,k,n]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tensor {
    Input,
    Weight,
    Output,
}

impl Tensor {
    pub const ALL: [Tensor; 3] = [Tensor::Input, Tensor::Weight, Tensor::Output];

    pub fn relevant(self, d: Dim) -> bool {
        match self {
            Tensor::Input => d != Dim::N,
            Tensor::Weight => d != Dim::M,
            Tensor::Output => d != Dim::K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LevelMapping {
    pub level: String,
    /// Temporal loop bounds at this level.
    pub factors: Dims,
    /// Innermost temporal loop; the rest follow B, M, N, K order.
    pub innermost: Dim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Spatial {
    pub row_dim: Dim,
    pub row_factor: u64,
    pub col_dim: Dim,
    pub col_factor: u64,
}

impl Spatial {
    pub const NONE: Spatial =
        Spatial { row_dim: Dim::B, row_factor: 1, col_dim: Dim::B, col_factor: 1 };

    pub fn factor(&self, d: Dim) -> u64 {
        let mut f = 1;
        if self.row_dim == d {
            f *= self.row_factor;
        }
        if self.col_dim == d {
            f *= self.col_factor;
        }
        f
    }

    pub fn pes(&self) -> u64 {
        self.row_factor * self.col_factor
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mapping {
    /// Problem extents after padding; equal to the op's dims when unpadded.
    pub padded: Dims,
    pub levels: Vec<LevelMapping>,
    pub spatial: Spatial,
}

impl Mapping {
    /// Loop order at `level`, outermost first.
    pub fn loop_order(&self, level: usize) -> [Dim; 4] {
        let inner = self.levels[level].innermost;
        let mut out = [Dim::B; 4];
        let mut i = 0;
        for d in Dim::ALL.into_iter().filter(|&d| d != inner) {
            out[i] = d;
            i += 1;
        }
        out[3] = inner;
        out
    }

    /// Rewrites no-op choices so equivalent mappings compare equal.
    pub fn canonicalize(&mut self) {
        for l in &mut self.levels {
            if l.factors.get(l.innermost) == 1 {
                l.innermost = Dim::ALL
                    .into_iter()
                    .rev()
                    .find(|&d| l.factors.get(d) > 1)
                    .unwrap_or(Dim::K);
            }
        }
        if self.spatial.row_factor == 1 {
            self.spatial.row_dim = Dim::B;
        }
        if self.spatial.col_factor == 1 {
            self.spatial.col_dim = Dim::B;
        }
    }

    /// Total order used to break exact cost ties.
    pub fn encoding(&self) -> Vec<u64> {
        let mut e = Vec::with_capacity(8 + 5 * self.levels.len());
        e.extend(self.padded.as_array());
        let s = &self.spatial;
        e.extend([s.row_dim.index() as u64, s.row_factor, s.col_dim.index() as u64, s.col_factor]);
        for l in &self.levels {
            e.extend(l.factors.as_array());
            e.push(l.innermost.index() as u64);
        }
        e
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Limiter {
    Compute,
    LevelBandwidth(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpCost {
    pub latency_cycles: f64,
    pub compute_cycles: f64,
    /// Real MACs over the unit's full PE count.
    pub ideal_compute_cycles: f64,
    pub per_level_reads: BTreeMap<String, u64>,
    pub per_level_writes: BTreeMap<String, u64>,
    pub transfer_cycles: BTreeMap<String, f64>,
    /// Memory levels plus the `MAC` pseudo-level.
    pub energy_by_level: BTreeMap<String, f64>,
    pub energy: f64,
    pub utilization: f64,
    pub limiting_resource: Limiter,
    pub macs: u64,
    pub padded_macs: u64,
}

impl OpCost {
    /// Cost of `weight` back-to-back executions.
    pub fn scaled(&self, weight: u64) -> OpCost {
        let w = weight as f64;
        let mut c = self.clone();
        c.latency_cycles *= w;
        c.compute_cycles *= w;
        c.ideal_compute_cycles *= w;
        c.energy *= w;
        for v in c.per_level_reads.values_mut() {
            *v *= weight;
        }
        for v in c.per_level_writes.values_mut() {
            *v *= weight;
        }
        for v in c.transfer_cycles.values_mut() {
            *v *= w;
        }
        for v in c.energy_by_level.values_mut() {
            *v *= w;
        }
        c.macs *= weight;
        c.padded_macs *= weight;
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapperOptions {
    /// Fraction of each bounded level usable for tiles.
    pub capacity_derate: f64,
}

impl Default for MapperOptions {
    fn default() -> Self {
        MapperOptions { capacity_derate: 1.0 }
    }
}

/// One memory level as seen by one sub-accelerator.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelView {
    pub name: String,
    pub depth: u32,
    /// Usable bytes per instance after partitioning and derating.
    pub capacity_bytes: Option<f64>,
    /// Words per cycle per instance after partitioning.
    pub read_bw: f64,
    pub write_bw: f64,
    pub energy_per_word: f64,
    pub per_pe: bool,
}

/// A sub-accelerator with its partitioned resources and constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitView {
    pub id: String,
    pub pe_count: u64,
    pub rows: u64,
    pub cols: u64,
    pub levels: Vec<LevelView>,
    pub mac_energy: f64,
    pub col_dim: Option<Dim>,
}

impl UnitView {
    pub fn new(
        config: &HHPConfig,
        sub: &SubAccelerator,
        constraints: &MappingConstraints,
        options: &MapperOptions,
    ) -> Result<Self> {
        let mut levels = Vec::new();
        for &depth in &constraints.level_depths {
            let l = config
                .level_at(depth)
                .ok_or_else(|| Error::config(format!("no level at depth {depth}")))?;
            let part = if l.shared { sub.bw_fraction } else { 1.0 };
            let cap_part = if l.shared && l.depth > 0 { sub.llb_fraction } else { 1.0 };
            levels.push(LevelView {
                name: l.name.clone(),
                depth,
                capacity_bytes: l.capacity_bytes.map(|c| c as f64 * cap_part * options.capacity_derate),
                read_bw: l.read_bw * part,
                write_bw: l.write_bw * part,
                energy_per_word: l.energy_per_word,
                per_pe: l.per_pe,
            });
        }
        if levels.first().map(|l| l.depth) != Some(0) {
            return Err(Error::config(format!("unit `{}` has no root level", sub.id)));
        }
        Ok(UnitView {
            id: sub.id.clone(),
            pe_count: sub.pe_count,
            rows: sub.rows,
            cols: constraints.max_cols.map_or(sub.cols, |c| c.min(sub.cols)),
            levels,
            mac_energy: config.mac_energy,
            col_dim: constraints.col_dim,
        })
    }

    /// Derives constraints for `sub_id` from the configuration.
    pub fn for_sub(config: &HHPConfig, sub_id: &str, options: &MapperOptions) -> Result<Self> {
        let sub = config.sub(sub_id)?;
        let c = config.derive_mapping_constraints(sub_id)?;
        UnitView::new(config, sub, &c, options)
    }

    /// Index of the child boundary where the spatial fanout sits: the first
    /// per-PE level, or one past the attach level.
    pub fn spatial_position(&self) -> usize {
        self.levels.iter().position(|l| l.per_pe).unwrap_or(self.levels.len()).max(1)
    }
}

/// Per-level traffic of one mapping, before timing and energy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessCounts {
    pub reads: Vec<u64>,
    pub writes: Vec<u64>,
}

/// Tile extent of every dimension at each child boundary `0..=levels`;
/// index `levels` is the operand-register tile.
fn tile_extents(m: &Mapping, spatial_pos: usize) -> Vec<[u64; 4]> {
    let n = m.levels.len();
    let mut tiles = vec![[1u64; 4]; n + 1];
    for i in (0..n).rev() {
        for d in Dim::ALL {
            let mut t = m.levels[i].factors.get(d);
            if i + 1 < n {
                t *= tiles[i + 1][d.index()];
            }
            tiles[i][d.index()] = t;
        }
    }
    // Undo the inner product for the operand registers and add the spatial
    // fanout to every level above it.
    tiles[n] = [1; 4];
    for (i, tile) in tiles.iter_mut().enumerate().take(n) {
        if i < spatial_pos {
            for d in Dim::ALL {
                tile[d.index()] *= m.spatial.factor(d);
            }
        }
    }
    tiles
}

fn footprint(tile: &[u64; 4], t: Tensor) -> u64 {
    Dim::ALL.into_iter().filter(|&d| t.relevant(d)).map(|d| tile[d.index()]).product()
}

/// Word counts per level for `mapping`, by the closed-form reuse model.
pub fn count_accesses(m: &Mapping, spatial_pos: usize) -> AccessCounts {
    let n = m.levels.len();
    let tiles = tile_extents(m, spatial_pos);
    let mut reads = vec![0u64; n];
    let mut writes = vec![0u64; n];

    // Temporal loops, outermost first.
    let mut loops: Vec<(usize, Dim, u64)> = Vec::with_capacity(4 * n);
    for lvl in 0..n {
        for d in m.loop_order(lvl) {
            loops.push((lvl, d, m.levels[lvl].factors.get(d)));
        }
    }
    let pes = m.spatial.pes();

    for child in 1..=n {
        let outer: Vec<&(usize, Dim, u64)> = loops.iter().filter(|l| l.0 < child).collect();
        let parent = child - 1;
        for t in Tensor::ALL {
            let fp = footprint(&tiles[child], t);
            let last_rel = outer.iter().rposition(|l| t.relevant(l.1) && l.2 > 1);
            let refetch: u64 = match last_rel {
                Some(i) => outer[..=i].iter().map(|l| l.2).product(),
                None => 1,
            };
            let distinct: u64 = outer.iter().filter(|l| t.relevant(l.1)).map(|l| l.2).product();
            let rel_spatial: u64 =
                Dim::ALL.into_iter().filter(|&d| t.relevant(d)).map(|d| m.spatial.factor(d)).product();
            let child_mult = if child >= spatial_pos { pes } else { 1 };
            let parent_mult = if child == spatial_pos {
                rel_spatial
            } else if child > spatial_pos {
                pes
            } else {
                1
            };
            let fills = fp * refetch;
            let has_child_level = child < n;
            match t {
                Tensor::Input | Tensor::Weight => {
                    reads[parent] += fills * parent_mult;
                    if has_child_level {
                        writes[child] += fills * child_mult;
                    }
                }
                Tensor::Output => {
                    let reloads = fills - fp * distinct;
                    reads[parent] += reloads * parent_mult;
                    writes[parent] += fills * parent_mult;
                    if has_child_level {
                        writes[child] += reloads * child_mult;
                        reads[child] += fills * child_mult;
                    }
                }
            }
        }
    }
    AccessCounts { reads, writes }
}

fn bytes(words: u64, word_bits: u32) -> f64 {
    words as f64 * word_bits as f64 / 8.0
}

/// Structural checks: factorization, array bounds, constraints, capacity.
pub fn check_mapping(op: &EinsumOp, m: &Mapping, unit: &UnitView) -> Result<()> {
    let bad = |reason: String| Error::Unmappable {
        op: op.id.clone(),
        unit: unit.id.clone(),
        reason,
    };
    if m.levels.len() != unit.levels.len() {
        return Err(bad(format!(
            "mapping has {} levels, unit has {}",
            m.levels.len(),
            unit.levels.len()
        )));
    }
    for d in Dim::ALL {
        let product: u64 =
            m.levels.iter().map(|l| l.factors.get(d)).product::<u64>() * m.spatial.factor(d);
        if product != m.padded.get(d) {
            return Err(bad(format!("factors of {d} multiply to {product}, not {}", m.padded.get(d))));
        }
        if m.padded.get(d) < op.dims.get(d) {
            return Err(bad(format!("padded {d} is smaller than the problem")));
        }
    }
    let s = &m.spatial;
    if s.row_factor == 0 || s.col_factor == 0 || m.levels.iter().any(|l| l.factors.as_array().contains(&0)) {
        return Err(bad("zero factor".into()));
    }
    if s.row_factor > unit.rows || s.col_factor > unit.cols {
        return Err(bad(format!("spatial {}x{} exceeds the array", s.row_factor, s.col_factor)));
    }
    if s.row_factor > 1 && s.col_factor > 1 && s.row_dim == s.col_dim {
        return Err(bad("rows and columns unroll the same dimension".into()));
    }
    if let Some(cd) = unit.col_dim {
        if s.col_factor > 1 && s.col_dim != cd {
            return Err(bad(format!("columns must parallelize {cd}")));
        }
    }
    let tiles = tile_extents(m, unit.spatial_position());
    for (i, lv) in unit.levels.iter().enumerate() {
        if let Some(cap) = lv.capacity_bytes {
            let words: u64 = Tensor::ALL.into_iter().map(|t| footprint(&tiles[i], t)).sum();
            if bytes(words, op.word_bits) > cap {
                return Err(bad(format!("tiles need {} bytes at {}", bytes(words, op.word_bits), lv.name)));
            }
        }
    }
    Ok(())
}

/// Latency, traffic, energy and utilization of one mapping.
pub fn evaluate_mapping(op: &EinsumOp, m: &Mapping, unit: &UnitView) -> Result<OpCost> {
    check_mapping(op, m, unit)?;
    Ok(cost_from_counts(op, m, unit, &count_accesses(m, unit.spatial_position())))
}

fn cost_from_counts(op: &EinsumOp, m: &Mapping, unit: &UnitView, counts: &AccessCounts) -> OpCost {
    let padded_macs = m.padded.volume();
    let macs = op.macs();
    let pes = m.spatial.pes();
    let compute_cycles = padded_macs as f64 / pes as f64;
    let ideal = macs as f64 / unit.pe_count as f64;

    let mut latency = compute_cycles;
    let mut limiter = Limiter::Compute;
    let mut per_level_reads = BTreeMap::new();
    let mut per_level_writes = BTreeMap::new();
    let mut transfer_cycles = BTreeMap::new();
    let mut energy_by_level = BTreeMap::new();
    let mut energy = 0.0;
    for (i, lv) in unit.levels.iter().enumerate() {
        let instances = if lv.per_pe { pes as f64 } else { 1.0 };
        let (r, w) = (counts.reads[i], counts.writes[i]);
        let cycles = (r as f64 / (lv.read_bw * instances)).max(w as f64 / (lv.write_bw * instances));
        if cycles > latency {
            latency = cycles;
            limiter = Limiter::LevelBandwidth(lv.name.clone());
        }
        let e = (r + w) as f64 * lv.energy_per_word;
        energy += e;
        per_level_reads.insert(lv.name.clone(), r);
        per_level_writes.insert(lv.name.clone(), w);
        transfer_cycles.insert(lv.name.clone(), cycles);
        energy_by_level.insert(lv.name.clone(), e);
    }
    let mac_energy = padded_macs as f64 * unit.mac_energy;
    energy += mac_energy;
    energy_by_level.insert(MAC_KEY.to_string(), mac_energy);
    OpCost {
        latency_cycles: latency,
        compute_cycles,
        ideal_compute_cycles: ideal,
        per_level_reads,
        per_level_writes,
        transfer_cycles,
        energy_by_level,
        energy,
        utilization: if latency > 0.0 { ideal / latency } else { 0.0 },
        limiting_resource: limiter,
        macs,
        padded_macs,
    }
}

/// Streaming cost of a zero-MAC vector op: one DRAM read and one DRAM write
/// per element.
pub fn vector_op_cost(op: &EinsumOp, unit: &UnitView) -> OpCost {
    let words = op.dims.b * op.dims.m * op.dims.n;
    let root = &unit.levels[0];
    let cycles = (words as f64 / root.read_bw).max(words as f64 / root.write_bw);
    let e = 2.0 * words as f64 * root.energy_per_word;
    let mut reads = BTreeMap::new();
    let mut writes = BTreeMap::new();
    let mut transfer = BTreeMap::new();
    let mut energy_by_level = BTreeMap::new();
    for lv in &unit.levels {
        let is_root = lv.depth == 0;
        reads.insert(lv.name.clone(), if is_root { words } else { 0 });
        writes.insert(lv.name.clone(), if is_root { words } else { 0 });
        transfer.insert(lv.name.clone(), if is_root { cycles } else { 0.0 });
        energy_by_level.insert(lv.name.clone(), if is_root { e } else { 0.0 });
    }
    energy_by_level.insert(MAC_KEY.to_string(), 0.0);
    OpCost {
        latency_cycles: cycles,
        compute_cycles: 0.0,
        ideal_compute_cycles: 0.0,
        per_level_reads: reads,
        per_level_writes: writes,
        transfer_cycles: transfer,
        energy_by_level,
        energy: e,
        utilization: 0.0,
        limiting_resource: Limiter::LevelBandwidth(root.name.clone()),
        macs: 0,
        padded_macs: 0,
    }
}

// ---------------------------------------------------------------------------
// Mapspace
// ---------------------------------------------------------------------------

pub fn divisors(n: u64) -> Vec<u64> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut i = 1;
    while i * i <= n {
        if n % i == 0 {
            small.push(i);
            if i * i != n {
                large.push(n / i);
            }
        }
        i += 1;
    }
    small.extend(large.into_iter().rev());
    small
}

fn prime_factors(mut n: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut p = 2;
    while p * p <= n {
        while n % p == 0 {
            out.push(p);
            n /= p;
        }
        p += 1;
    }
    if n > 1 {
        out.push(n);
    }
    out
}

fn is_5_smooth(n: u64) -> bool {
    prime_factors(n).iter().all(|&p| p <= 5)
}

/// Candidate padded extents: the dimension itself and, when it has a prime
/// factor above 5, the next 5-smooth size and the next power of two.
pub fn pad_candidates(d: u64) -> Vec<u64> {
    let mut out = vec![d];
    if d > 1 && !is_5_smooth(d) {
        let mut s = d + 1;
        while !is_5_smooth(s) {
            s += 1;
        }
        out.push(s);
        let p2 = d.next_power_of_two();
        if p2 != s {
            out.push(p2);
        }
    }
    out
}

/// All ordered ways to write `n` as a product of `parts` factors.
pub fn ordered_factorizations(n: u64, parts: usize) -> Vec<Vec<u64>> {
    if parts == 1 {
        return vec![vec![n]];
    }
    let mut out = Vec::new();
    for f in divisors(n) {
        for mut rest in ordered_factorizations(n / f, parts - 1) {
            rest.insert(0, f);
            out.push(rest);
        }
    }
    out
}

fn spatial_options(padded: Dims, unit: &UnitView) -> Vec<Spatial> {
    let axis = |limit: u64, forced: Option<Dim>| -> Vec<(Dim, u64)> {
        let mut v = vec![(Dim::B, 1)];
        for d in Dim::ALL {
            if forced.is_some_and(|f| f != d) {
                continue;
            }
            for f in divisors(padded.get(d)) {
                if f > 1 && f <= limit {
                    v.push((d, f));
                }
            }
        }
        v
    };
    let rows = axis(unit.rows, None);
    let cols = axis(unit.cols, unit.col_dim);
    let mut out = Vec::new();
    for &(rd, rf) in &rows {
        for &(cd, cf) in &cols {
            if rf > 1 && cf > 1 && rd == cd {
                continue;
            }
            out.push(Spatial { row_dim: rd, row_factor: rf, col_dim: cd, col_factor: cf });
        }
    }
    out
}

/// Innermost-loop choices worth distinguishing at a level.
fn innermost_choices(factors: Dims) -> Vec<Dim> {
    let v: Vec<Dim> = Dim::ALL.into_iter().filter(|&d| factors.get(d) > 1).collect();
    if v.is_empty() {
        vec![Dim::K]
    } else {
        v
    }
}

fn cartesian<T: Clone>(lists: &[Vec<T>]) -> Vec<Vec<T>> {
    let mut out: Vec<Vec<T>> = vec![Vec::new()];
    for list in lists {
        let mut next = Vec::with_capacity(out.len() * list.len());
        for prefix in &out {
            for item in list {
                let mut p = prefix.clone();
                p.push(item.clone());
                next.push(p);
            }
        }
        out = next;
    }
    out
}

/// Every feasible canonical mapping of `op` on `unit`. Tiling factors come
/// from divisor sets; dimensions with prime factors above 5 are also offered
/// padded.
pub fn enumerate_mapspace<'a>(
    op: &'a EinsumOp,
    unit: &'a UnitView,
) -> impl Iterator<Item = Mapping> + 'a {
    let n_levels = unit.levels.len();
    let pads: Vec<Vec<u64>> = Dim::ALL.into_iter().map(|d| pad_candidates(op.dims.get(d))).collect();
    cartesian(&pads).into_iter().flat_map(move |p| {
        let padded = Dims::from_array([p[0], p[1], p[2], p[3]]);
        spatial_options(padded, unit).into_iter().flat_map(move |spatial| {
            let per_dim: Vec<Vec<Vec<u64>>> = Dim::ALL
                .into_iter()
                .map(|d| ordered_factorizations(padded.get(d) / spatial.factor(d), n_levels))
                .collect();
            cartesian(&per_dim).into_iter().flat_map(move |split| {
                let factors: Vec<Dims> = (0..n_levels)
                    .map(|l| Dims::from_array([split[0][l], split[1][l], split[2][l], split[3][l]]))
                    .collect();
                let orders: Vec<Vec<Dim>> = factors.iter().map(|f| innermost_choices(*f)).collect();
                let factors_for_orders = factors.clone();
                cartesian(&orders).into_iter().filter_map(move |inner| {
                    let m = Mapping {
                        padded,
                        levels: (0..n_levels)
                            .map(|l| LevelMapping {
                                level: unit.levels[l].name.clone(),
                                factors: factors_for_orders[l],
                                innermost: inner[l],
                            })
                            .collect(),
                        spatial,
                    };
                    check_mapping(op, &m, unit).is_ok().then_some(m)
                })
            })
        })
    })
}

// ---------------------------------------------------------------------------
// Search
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SearchBudget {
    Exhaustive,
    RandomSample { samples: u64, seed: u64 },
}

fn better(a: &(OpCost, Mapping), b: &(OpCost, Mapping)) -> bool {
    let ka = (a.0.latency_cycles, a.0.energy);
    let kb = (b.0.latency_cycles, b.0.energy);
    match ka.partial_cmp(&kb) {
        Some(std::cmp::Ordering::Less) => true,
        Some(std::cmp::Ordering::Greater) => false,
        _ => a.1.encoding() < b.1.encoding(),
    }
}

fn pick_best(a: Option<(OpCost, Mapping)>, b: Option<(OpCost, Mapping)>) -> Option<(OpCost, Mapping)> {
    match (a, b) {
        (Some(a), Some(b)) => Some(if better(&b, &a) { b } else { a }),
        (a, None) => a,
        (None, b) => b,
    }
}

/// Why the smallest possible tiling of `op` does not fit on `unit`, if it
/// does not.
pub fn minimum_tile_violation(op: &EinsumOp, unit: &UnitView) -> Option<String> {
    let minimal = Mapping {
        padded: op.dims,
        levels: unit
            .levels
            .iter()
            .enumerate()
            .map(|(i, l)| LevelMapping {
                level: l.name.clone(),
                factors: if i == 0 { op.dims } else { Dims::new(1, 1, 1, 1) },
                innermost: Dim::K,
            })
            .collect(),
        spatial: Spatial::NONE,
    };
    check_mapping(op, &minimal, unit).err().map(|e| match e {
        Error::Unmappable { reason, .. } => reason,
        other => other.to_string(),
    })
}

/// Best mapping by latency, then energy, then encoding.
pub fn search(op: &EinsumOp, unit: &UnitView, budget: SearchBudget) -> Result<(Mapping, OpCost)> {
    if let Some(reason) = minimum_tile_violation(op, unit) {
        return Err(Error::Unmappable { op: op.id.clone(), unit: unit.id.clone(), reason });
    }
    let best = match budget {
        SearchBudget::Exhaustive => enumerate_mapspace(op, unit)
            .par_bridge()
            .map(|m| {
                let counts = count_accesses(&m, unit.spatial_position());
                Some((cost_from_counts(op, &m, unit, &counts), m))
            })
            .reduce(|| None, pick_best),
        SearchBudget::RandomSample { samples, seed } => random_search(op, unit, samples, seed),
    };
    best.map(|(c, m)| (m, c)).ok_or_else(|| Error::Unmappable {
        op: op.id.clone(),
        unit: unit.id.clone(),
        reason: "no feasible mapping found".into(),
    })
}

struct Sampler<'a> {
    op: &'a EinsumOp,
    unit: &'a UnitView,
    rng: ChaCha8Rng,
}

impl Sampler<'_> {
    fn pick_axis(&mut self, padded: Dims, limit: u64, forced: Option<Dim>, avoid: Option<Dim>) -> (Dim, u64) {
        let dims: Vec<Dim> = Dim::ALL
            .into_iter()
            .filter(|&d| padded.get(d) > 1)
            .filter(|&d| forced.is_none_or(|f| f == d))
            .filter(|&d| avoid != Some(d))
            .collect();
        if dims.is_empty() || self.rng.random_bool(0.1) {
            return (Dim::B, 1);
        }
        let d = *dims.choose(&mut self.rng).expect("non-empty");
        let fits: Vec<u64> = divisors(padded.get(d)).into_iter().filter(|&f| f <= limit).collect();
        let f = if self.rng.random_bool(0.6) {
            *fits.last().expect("1 always divides")
        } else {
            *fits.choose(&mut self.rng).expect("non-empty")
        };
        (d, f)
    }

    /// Builds tiles innermost-first so every bounded level fits.
    fn sample(&mut self) -> Option<Mapping> {
        let op = self.op;
        let unit = self.unit;
        let n = unit.levels.len();
        let padded = Dims::from_array(
            Dim::ALL.map(|d| *pad_candidates(op.dims.get(d)).choose(&mut self.rng).expect("non-empty")),
        );
        let (rd, rf) = self.pick_axis(padded, unit.rows, None, None);
        let avoid = (rf > 1).then_some(rd);
        let (cd, cf) = self.pick_axis(padded, unit.cols, unit.col_dim, avoid);
        let spatial = Spatial { row_dim: rd, row_factor: rf, col_dim: cd, col_factor: cf };
        let sp = unit.spatial_position();

        let mut remaining = Dim::ALL.map(|d| padded.get(d) / spatial.factor(d));
        let mut factors = vec![[1u64; 4]; n];
        // inner[d]: product of factors assigned below the level being filled
        let mut inner = [1u64; 4];
        for lvl in (1..n).rev() {
            let mut order = Dim::ALL;
            order.shuffle(&mut self.rng);
            for d in order {
                let i = d.index();
                let divs = divisors(remaining[i]);
                let mut f = *divs.choose(&mut self.rng).expect("non-empty");
                loop {
                    factors[lvl][i] = f;
                    if self.fits(lvl, &factors[lvl], &inner, &spatial, sp) {
                        break;
                    }
                    if f == 1 {
                        return None;
                    }
                    f /= prime_factors(f)[0];
                }
            }
            for d in 0..4 {
                remaining[d] /= factors[lvl][d];
                inner[d] *= factors[lvl][d];
            }
        }
        factors[0] = remaining;
        let levels = (0..n)
            .map(|l| {
                let f = Dims::from_array(factors[l]);
                let choices = innermost_choices(f);
                LevelMapping {
                    level: unit.levels[l].name.clone(),
                    factors: f,
                    innermost: *choices.choose(&mut self.rng).expect("non-empty"),
                }
            })
            .collect();
        let mut m = Mapping { padded, levels, spatial };
        m.canonicalize();
        Some(m)
    }

    fn fits(&self, lvl: usize, here: &[u64; 4], inner: &[u64; 4], spatial: &Spatial, sp: usize) -> bool {
        let Some(cap) = self.unit.levels[lvl].capacity_bytes else {
            return true;
        };
        let mut tile = [1u64; 4];
        for d in Dim::ALL {
            let i = d.index();
            tile[i] = here[i] * inner[i] * if lvl < sp { spatial.factor(d) } else { 1 };
        }
        let words: u64 = Tensor::ALL.into_iter().map(|t| footprint(&tile, t)).sum();
        bytes(words, self.op.word_bits) <= cap
    }

    /// A random local move: shift one prime factor between temporal levels,
    /// trade a factor between the array and a temporal level, or change an
    /// innermost loop.
    fn neighbor(&mut self, m: &Mapping) -> Mapping {
        let mut out = m.clone();
        let n = out.levels.len();
        match self.rng.random_range(0..4) {
            0 | 1 if n > 1 => {
                let from = self.rng.random_range(0..n);
                let d = Dim::ALL[self.rng.random_range(0..4)];
                let f = out.levels[from].factors.get(d);
                if f > 1 {
                    let p = *prime_factors(f).choose(&mut self.rng).expect("f > 1");
                    let mut to = self.rng.random_range(0..n - 1);
                    if to >= from {
                        to += 1;
                    }
                    let mut a = out.levels[from].factors.as_array();
                    a[d.index()] /= p;
                    out.levels[from].factors = Dims::from_array(a);
                    let mut b = out.levels[to].factors.as_array();
                    b[d.index()] *= p;
                    out.levels[to].factors = Dims::from_array(b);
                }
            }
            2 => {
                // Grow or shrink one spatial axis against a temporal level.
                let lvl = self.rng.random_range(0..n);
                let row = self.rng.random_bool(0.5);
                let (dim, factor) = if row {
                    (out.spatial.row_dim, out.spatial.row_factor)
                } else {
                    (out.spatial.col_dim, out.spatial.col_factor)
                };
                let mut t = out.levels[lvl].factors.as_array();
                let grow = self.rng.random_bool(0.5);
                let new_factor = if grow && t[dim.index()] > 1 {
                    let p = prime_factors(t[dim.index()])[0];
                    t[dim.index()] /= p;
                    factor * p
                } else if !grow && factor > 1 {
                    let p = prime_factors(factor)[0];
                    t[dim.index()] *= p;
                    factor / p
                } else {
                    factor
                };
                out.levels[lvl].factors = Dims::from_array(t);
                if row {
                    out.spatial.row_factor = new_factor;
                } else {
                    out.spatial.col_factor = new_factor;
                }
            }
            _ => {
                let lvl = self.rng.random_range(0..n);
                let choices = innermost_choices(out.levels[lvl].factors);
                out.levels[lvl].innermost = *choices.choose(&mut self.rng).expect("non-empty");
            }
        }
        out.canonicalize();
        out
    }
}

fn random_search(op: &EinsumOp, unit: &UnitView, samples: u64, seed: u64) -> Option<(OpCost, Mapping)> {
    let mut sampler = Sampler { op, unit, rng: ChaCha8Rng::seed_from_u64(seed) };
    let explore = samples.div_ceil(2);
    let candidates: Vec<Mapping> = (0..explore).filter_map(|_| sampler.sample()).collect();
    let mut best = candidates
        .into_par_iter()
        .map(|m| evaluate_mapping(op, &m, unit).ok().map(|c| (c, m)))
        .reduce(|| None, pick_best);
    // Hill-climb from the best sample with the rest of the budget.
    for _ in explore..samples {
        let Some(current) = best.as_ref() else { break };
        let cand = sampler.neighbor(&current.1);
        if let Ok(c) = evaluate_mapping(op, &cand, unit) {
            best = pick_best(best, Some((c, cand)));
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Cascade costing
// ---------------------------------------------------------------------------

/// Costs of every op in a cascade, each searched on its assigned unit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CascadeCosts {
    /// Per-execution cost (replication weight not applied).
    pub costs: BTreeMap<String, OpCost>,
    pub mappings: BTreeMap<String, Mapping>,
    /// Number of distinct (shape, unit) searches run.
    pub searches: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct ShapeKey {
    unit: String,
    kind: u8,
    dims: [u64; 4],
    word_bits: u32,
}

fn shape_key(op: &EinsumOp, unit: &str) -> ShapeKey {
    ShapeKey {
        unit: unit.to_string(),
        kind: match op.kind {
            OpKind::Gemm => 0,
            OpKind::Bmm => 1,
            OpKind::Vector => 2,
        },
        dims: op.dims.as_array(),
        word_bits: op.word_bits,
    }
}

/// Independent per-op searches over each op's assigned unit, memoized by
/// operation shape.
pub fn cost_cascade_blackbox(
    cascade: &Cascade,
    assignment: &BTreeMap<String, String>,
    config: &HHPConfig,
    budget: SearchBudget,
    options: &MapperOptions,
) -> Result<CascadeCosts> {
    let mut units: HashMap<String, UnitView> = HashMap::new();
    for op in &cascade.ops {
        let unit_id = assignment
            .get(&op.id)
            .ok_or_else(|| Error::Schedule(format!("op `{}` is not assigned", op.id)))?;
        if !units.contains_key(unit_id) {
            units.insert(unit_id.clone(), UnitView::for_sub(config, unit_id, options)?);
        }
    }
    let mut unique: BTreeMap<ShapeKey, &EinsumOp> = BTreeMap::new();
    for op in &cascade.ops {
        unique.entry(shape_key(op, &assignment[&op.id])).or_insert(op);
    }
    let searched: Vec<(ShapeKey, Result<(Option<Mapping>, OpCost)>)> = unique
        .into_par_iter()
        .map(|(key, op)| {
            let unit = &units[&key.unit];
            let r = if op.kind == OpKind::Vector {
                Ok((None, vector_op_cost(op, unit)))
            } else {
                search(op, unit, budget).map(|(m, c)| (Some(m), c))
            };
            (key, r)
        })
        .collect();
    let mut searches = 0;
    let mut by_key = BTreeMap::new();
    for (key, r) in searched {
        let (m, c) = r?;
        if m.is_some() {
            searches += 1;
        }
        by_key.insert(key, (m, c));
    }
    let mut costs = BTreeMap::new();
    let mut mappings = BTreeMap::new();
    for op in &cascade.ops {
        let (m, c) = &by_key[&shape_key(op, &assignment[&op.id])];
        let mut c = c.clone();
        c.macs = op.macs();
        costs.insert(op.id.clone(), c);
        if let Some(m) = m {
            mappings.insert(op.id.clone(), m.clone());
        }
    }
    Ok(CascadeCosts { costs, mappings, searches })
}
