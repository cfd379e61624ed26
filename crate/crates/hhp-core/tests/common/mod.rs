//! Oracles for the mapper: a literal nested-loop residency simulator and a
//! brute-force enumeration of the full (non-canonical) mapspace.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

use hhp_core::mapper::{count_accesses, search, LevelMapping, LevelView, Mapping, SearchBudget, Spatial, UnitView};
use hhp_core::workload::{Dim, Dims, EinsumOp, Phase};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIMS: [Dim; 4] = [Dim::B, Dim::M, Dim::N, Dim::K];

fn level(name: &str, depth: u32, cap: Option<f64>, bw: f64, e: f64, per_pe: bool) -> LevelView {
    LevelView {
        name: name.into(),
        depth,
        capacity_bytes: cap,
        read_bw: bw,
        write_bw: bw,
        energy_per_word: e,
        per_pe,
    }
}

fn unit(id: &str, rows: u64, cols: u64, levels: Vec<LevelView>, col_dim: Option<Dim>) -> UnitView {
    UnitView { id: id.into(), pe_count: rows * cols, rows, cols, levels, mac_energy: 0.25, col_dim }
}

/// DRAM feeding per-PE registers directly.
pub fn two_level_rf() -> UnitView {
    unit(
        "dram-rf",
        2,
        4,
        vec![level("DRAM", 0, None, 2.0, 100.0, false), level("RF", 1, Some(3.0), 2.0, 1.0, true)],
        None,
    )
}

/// DRAM and one shared buffer; PEs read operands from the buffer.
pub fn two_level_buf() -> UnitView {
    unit(
        "dram-buf",
        4,
        2,
        vec![level("DRAM", 0, None, 2.0, 100.0, false), level("BUF", 1, Some(32.0), 4.0, 6.0, false)],
        None,
    )
}

pub fn three_level(col_dim: Option<Dim>) -> UnitView {
    unit(
        if col_dim.is_some() { "dram-l1-rf-coln" } else { "dram-l1-rf" },
        2,
        2,
        vec![
            level("DRAM", 0, None, 4.0, 200.0, false),
            level("L1", 1, Some(48.0), 8.0, 6.0, false),
            level("RF", 2, Some(4.0), 2.0, 1.0, true),
        ],
        col_dim,
    )
}

pub fn spatial_pos(u: &UnitView) -> usize {
    u.levels.iter().position(|l| l.per_pe).unwrap_or(u.levels.len()).max(1)
}

// ---------------------------------------------------------------------------
// Literal residency simulator
// ---------------------------------------------------------------------------

#[derive(Clone, Copy)]
struct Loop {
    level: usize,
    dim: usize,
    bound: u64,
    stride: u64,
}

/// Temporal loops outermost first, and the two spatial loops, with
/// mixed-radix strides per dimension.
fn loop_nest(m: &Mapping, p: usize) -> (Vec<Loop>, [Loop; 2]) {
    let mut temporal = Vec::new();
    for (l, lm) in m.levels.iter().enumerate() {
        let inner = lm.innermost;
        for d in DIMS.iter().copied().filter(|&d| d != inner).chain([inner]) {
            temporal.push(Loop { level: l, dim: d.index(), bound: lm.factors.get(d), stride: 0 });
        }
    }
    let s = m.spatial;
    let mut spatial = [
        Loop { level: p, dim: s.row_dim.index(), bound: s.row_factor, stride: 0 },
        Loop { level: p, dim: s.col_dim.index(), bound: s.col_factor, stride: 0 },
    ];
    // Full order: temporal levels < p, spatial, temporal levels >= p.
    let mut stride = [1u64; 4];
    for i in (0..temporal.len()).rev() {
        if temporal[i].level < p {
            continue;
        }
        temporal[i].stride = stride[temporal[i].dim];
        stride[temporal[i].dim] *= temporal[i].bound;
    }
    for sp in spatial.iter_mut().rev() {
        sp.stride = stride[sp.dim];
        stride[sp.dim] *= sp.bound;
    }
    for i in (0..temporal.len()).rev() {
        if temporal[i].level >= p {
            continue;
        }
        temporal[i].stride = stride[temporal[i].dim];
        stride[temporal[i].dim] *= temporal[i].bound;
    }
    (temporal, spatial)
}

/// Calls `f` with every index vector of `bounds`, last index fastest.
fn odometer(bounds: &[u64], mut f: impl FnMut(&[u64])) {
    let mut idx = vec![0u64; bounds.len()];
    loop {
        f(&idx);
        let mut i = bounds.len();
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            idx[i] += 1;
            if idx[i] < bounds[i] {
                break;
            }
            idx[i] = 0;
        }
    }
}

type Elem = [u64; 3];
type Tile = BTreeSet<Elem>;

fn project(t: usize, c: [u64; 4]) -> Elem {
    let [b, m, n, k] = c;
    match t {
        0 => [b, m, k],
        1 => [b, k, n],
        _ => [b, m, n],
    }
}

/// Reads and writes per level, by stepping through every loop iteration
/// and tracking which elements each child buffer instance holds.
pub fn simulate(m: &Mapping, p: usize) -> (Vec<u64>, Vec<u64>) {
    let n = m.levels.len();
    let (temporal, spatial) = loop_nest(m, p);
    let mut reads = vec![0u64; n];
    let mut writes = vec![0u64; n];

    for c in 1..=n {
        let outer: Vec<Loop> = temporal.iter().copied().filter(|l| l.level < c).collect();
        let mut inner: Vec<Loop> = temporal.iter().copied().filter(|l| l.level >= c).collect();
        let per_pe = c >= p;
        if !per_pe {
            inner.extend(spatial);
        }
        let pes: Vec<[u64; 2]> = if per_pe {
            let mut v = Vec::new();
            for r in 0..spatial[0].bound {
                for q in 0..spatial[1].bound {
                    v.push([r, q]);
                }
            }
            v
        } else {
            vec![[0, 0]]
        };
        let instance = |pe: usize| if c <= p { 0 } else { pe };
        let n_inst = if c <= p { 1 } else { pes.len() };
        let has_child = c < n;

        let mut cur: Vec<[Option<Tile>; 3]> = vec![[None, None, None]; pes.len()];
        let mut evicted: HashSet<(usize, Elem)> = HashSet::new();

        let outer_bounds: Vec<u64> = outer.iter().map(|l| l.bound).collect();
        let inner_bounds: Vec<u64> = inner.iter().map(|l| l.bound).collect();

        let writeback = |tiles: Vec<(usize, Tile)>,
                             evicted: &mut HashSet<(usize, Elem)>,
                             reads: &mut Vec<u64>,
                             writes: &mut Vec<u64>| {
            let mut merged: Vec<Tile> = vec![Tile::new(); n_inst];
            for (pe, t) in tiles {
                if has_child {
                    reads[c] += t.len() as u64;
                }
                for e in &t {
                    evicted.insert((instance(pe), *e));
                }
                merged[instance(pe)].extend(t);
            }
            writes[c - 1] += merged.iter().map(|t| t.len() as u64).sum::<u64>();
        };

        odometer(&outer_bounds, |oidx| {
            let mut base = [0u64; 4];
            for (l, &i) in outer.iter().zip(oidx) {
                base[l.dim] += i * l.stride;
            }
            let mut new_tiles: Vec<[Tile; 3]> = Vec::with_capacity(pes.len());
            for pe in &pes {
                let mut b = base;
                if per_pe {
                    b[spatial[0].dim] += pe[0] * spatial[0].stride;
                    b[spatial[1].dim] += pe[1] * spatial[1].stride;
                }
                let mut tiles = [Tile::new(), Tile::new(), Tile::new()];
                odometer(&inner_bounds, |iidx| {
                    let mut coord = b;
                    for (l, &i) in inner.iter().zip(iidx) {
                        coord[l.dim] += i * l.stride;
                    }
                    for (t, tile) in tiles.iter_mut().enumerate() {
                        tile.insert(project(t, coord));
                    }
                });
                new_tiles.push(tiles);
            }

            for t in 0..2 {
                let mut loads: Vec<Tile> = vec![Tile::new(); n_inst];
                for (pe, tiles) in new_tiles.iter().enumerate() {
                    if cur[pe][t].as_ref() != Some(&tiles[t]) {
                        if has_child {
                            writes[c] += tiles[t].len() as u64;
                        }
                        loads[instance(pe)].extend(tiles[t].iter().copied());
                        cur[pe][t] = Some(tiles[t].clone());
                    }
                }
                reads[c - 1] += loads.iter().map(|t| t.len() as u64).sum::<u64>();
            }

            let changed: Vec<usize> =
                (0..pes.len()).filter(|&pe| cur[pe][2].as_ref() != Some(&new_tiles[pe][2])).collect();
            let old: Vec<(usize, Tile)> =
                changed.iter().filter_map(|&pe| cur[pe][2].take().map(|t| (pe, t))).collect();
            writeback(old, &mut evicted, &mut reads, &mut writes);
            let mut reloads: Vec<Tile> = vec![Tile::new(); n_inst];
            for &pe in &changed {
                let tile = &new_tiles[pe][2];
                let back: Tile = tile.iter().copied().filter(|e| evicted.contains(&(instance(pe), *e))).collect();
                if has_child {
                    writes[c] += back.len() as u64;
                }
                reloads[instance(pe)].extend(back);
                cur[pe][2] = Some(tile.clone());
            }
            reads[c - 1] += reloads.iter().map(|t| t.len() as u64).sum::<u64>();
        });

        let last: Vec<(usize, Tile)> =
            cur.iter_mut().enumerate().filter_map(|(pe, s)| s[2].take().map(|t| (pe, t))).collect();
        writeback(last, &mut evicted, &mut reads, &mut writes);
    }
    (reads, writes)
}

// ---------------------------------------------------------------------------
// Brute-force mapspace
// ---------------------------------------------------------------------------

fn divisors(n: u64) -> Vec<u64> {
    (1..=n).filter(|d| n % d == 0).collect()
}

fn largest_prime_factor(mut n: u64) -> u64 {
    let mut best = 1;
    let mut p = 2;
    while n > 1 {
        while n % p == 0 {
            best = p;
            n /= p;
        }
        p += 1;
    }
    best
}

fn pads(d: u64) -> Vec<u64> {
    if largest_prime_factor(d) <= 5 {
        return vec![d];
    }
    let smooth = (d + 1..).find(|&s| largest_prime_factor(s) <= 5).unwrap();
    let mut v = vec![d, smooth, d.next_power_of_two()];
    v.dedup();
    v.sort();
    v.dedup();
    v
}

fn splits(n: u64, parts: usize) -> Vec<Vec<u64>> {
    if parts == 1 {
        return vec![vec![n]];
    }
    let mut out = Vec::new();
    for f in divisors(n) {
        for rest in splits(n / f, parts - 1) {
            let mut v = vec![f];
            v.extend(rest);
            out.push(v);
        }
    }
    out
}

fn product<T: Clone>(lists: &[Vec<T>]) -> Vec<Vec<T>> {
    lists.iter().fold(vec![vec![]], |acc, list| {
        acc.iter()
            .flat_map(|prefix| {
                list.iter().map(move |x| {
                    let mut p = prefix.clone();
                    p.push(x.clone());
                    p
                })
            })
            .collect()
    })
}

/// Every mapping, including all innermost-loop choices and both spatial
/// axes, that satisfies the array and capacity limits.
pub fn brute_force_mappings(op: &EinsumOp, u: &UnitView) -> Vec<Mapping> {
    let n = u.levels.len();
    let p = spatial_pos(u);
    let mut out = Vec::new();
    let pad_lists: Vec<Vec<u64>> = DIMS.iter().map(|&d| pads(op.dims.get(d))).collect();
    for padded in product(&pad_lists) {
        let padded = Dims::from_array([padded[0], padded[1], padded[2], padded[3]]);
        let axis = |limit: u64, forced: Option<Dim>| {
            let mut v = vec![(Dim::B, 1u64)];
            for d in DIMS {
                if forced.is_some_and(|f| f != d) {
                    continue;
                }
                for f in divisors(padded.get(d)).into_iter().filter(|&f| f > 1 && f <= limit) {
                    v.push((d, f));
                }
            }
            v
        };
        for (rd, rf) in axis(u.rows, None) {
            for (cd, cf) in axis(u.cols, u.col_dim) {
                if rf > 1 && cf > 1 && rd == cd {
                    continue;
                }
                let spatial = Spatial { row_dim: rd, row_factor: rf, col_dim: cd, col_factor: cf };
                let per_dim: Vec<Vec<Vec<u64>>> =
                    DIMS.iter().map(|&d| splits(padded.get(d) / spatial.factor(d), n)).collect();
                for split in product(&per_dim) {
                    let factors: Vec<Dims> =
                        (0..n).map(|l| Dims::from_array([split[0][l], split[1][l], split[2][l], split[3][l]])).collect();
                    if !fits(op, u, &factors, &spatial, p) {
                        continue;
                    }
                    for inner in product(&vec![DIMS.to_vec(); n]) {
                        out.push(Mapping {
                            padded,
                            levels: (0..n)
                                .map(|l| LevelMapping {
                                    level: u.levels[l].name.clone(),
                                    factors: factors[l],
                                    innermost: inner[l],
                                })
                                .collect(),
                            spatial,
                        });
                    }
                }
            }
        }
    }
    out
}

fn fits(op: &EinsumOp, u: &UnitView, factors: &[Dims], s: &Spatial, p: usize) -> bool {
    for (i, lv) in u.levels.iter().enumerate() {
        let Some(cap) = lv.capacity_bytes else { continue };
        let ext = |d: Dim| {
            let t: u64 = factors[i..].iter().map(|f| f.get(d)).product();
            if i < p {
                t * s.factor(d)
            } else {
                t
            }
        };
        let [b, m, n, k] = [ext(Dim::B), ext(Dim::M), ext(Dim::N), ext(Dim::K)];
        let words = b * m * k + b * k * n + b * m * n;
        if (words * op.word_bits as u64) as f64 / 8.0 > cap {
            return false;
        }
    }
    true
}

/// Latency and energy from per-level counts.
pub fn own_cost(m: &Mapping, u: &UnitView, reads: &[u64], writes: &[u64]) -> (f64, f64) {
    let pes = m.spatial.pes() as f64;
    let padded_macs = m.padded.volume() as f64;
    let mut latency = padded_macs / pes;
    let mut energy = 0.0;
    for (i, lv) in u.levels.iter().enumerate() {
        let inst = if lv.per_pe { pes } else { 1.0 };
        latency = latency.max(reads[i] as f64 / (lv.read_bw * inst)).max(writes[i] as f64 / (lv.write_bw * inst));
        energy += (reads[i] + writes[i]) as f64 * lv.energy_per_word;
    }
    energy += padded_macs * u.mac_energy;
    (latency, energy)
}

pub fn suite() -> Vec<(EinsumOp, UnitView)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let units = [two_level_rf(), two_level_buf(), three_level(None), three_level(Some(Dim::N))];
    let mut out = Vec::new();
    for i in 0..64 {
        let u = &units[i % units.len()];
        let limit = if u.levels.len() == 3 { 128 } else { 256 };
        let op = loop {
            let b = if rng.random_bool(0.25) { rng.random_range(2..=3) } else { 1 };
            let dims = [b, rng.random_range(1..=8), rng.random_range(1..=8), rng.random_range(1..=8)];
            if dims.iter().product::<u64>() <= limit {
                break EinsumOp::bmm(format!("op{i}"), dims[0], dims[1], dims[2], dims[3], Phase::Prefill);
            }
        };
        out.push((op, u.clone()));
    }
    out
}

/// Outcome of checking one op against both oracles.
pub struct OracleCheck {
    pub simulated_mappings: usize,
    pub optimum_matches: bool,
    pub counts_match: bool,
}

/// Brute-force optimum vs exhaustive search, plus simulator agreement on a
/// sample of the mapspace and on both optima.
pub fn check_op(op: &EinsumOp, u: &UnitView, samples: usize) -> OracleCheck {
    let p = spatial_pos(u);
    let all = brute_force_mappings(op, u);
    let mut best: Option<((f64, f64), usize)> = None;
    for (i, m) in all.iter().enumerate() {
        let c = count_accesses(m, p);
        let cost = own_cost(m, u, &c.reads, &c.writes);
        if best.as_ref().is_none_or(|(b, _)| cost < *b) {
            best = Some((cost, i));
        }
    }
    let ((lat, energy), best_i) = best.expect("brute force found a mapping");
    let (found, cost) = search(op, u, SearchBudget::Exhaustive).expect("search succeeds");
    let optimum_matches = cost.latency_cycles == lat && cost.energy == energy;

    let step = (all.len() / samples.max(1)).max(1);
    let mut simulated = 0;
    let mut counts_match = true;
    for m in all.iter().step_by(step).chain([&all[best_i], &found]) {
        let closed = count_accesses(m, p);
        let (reads, writes) = simulate(m, p);
        counts_match &= closed.reads == reads && closed.writes == writes;
        simulated += 1;
    }
    counts_match &= {
        let (r, w) = simulate(&found, p);
        own_cost(&found, u, &r, &w) == (lat, energy)
    };
    OracleCheck { simulated_mappings: simulated, optimum_matches, counts_match }
}
