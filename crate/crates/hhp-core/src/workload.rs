//! Dense tensor operations and transformer operator cascades.
//!
//! A [`Cascade`] is a dependency DAG of [`EinsumOp`]s. Encoder cascades model
//! one attention layer plus FFN (intra-cascade partitioning); decoder cascades
//! hold an independent prefill component and a serial chain of decode tokens
//! (inter-cascade partitioning).

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the four loop dimensions of a (batched) matrix multiply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dim {
    B,
    M,
    N,
    K,
}

impl Dim {
    pub const ALL: [Dim; 4] = [Dim::B, Dim::M, Dim::N, Dim::K];

    pub fn index(self) -> usize {
        match self {
            Dim::B => 0,
            Dim::M => 1,
            Dim::N => 2,
            Dim::K => 3,
        }
    }

    pub fn from_index(i: usize) -> Dim {
        Dim::ALL[i]
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Dim::B => "B",
            Dim::M => "M",
            Dim::N => "N",
            Dim::K => "K",
        };
        f.write_str(s)
    }
}

/// Problem extents of `C[b,m,n] += A[b,m,k] * W[b,k,n]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    #[serde(rename = "B")]
    pub b: u64,
    #[serde(rename = "M")]
    pub m: u64,
    #[serde(rename = "N")]
    pub n: u64,
    #[serde(rename = "K")]
    pub k: u64,
}

impl Dims {
    pub fn new(b: u64, m: u64, n: u64, k: u64) -> Self {
        Dims { b, m, n, k }
    }

    pub fn gemm(m: u64, n: u64, k: u64) -> Self {
        Dims { b: 1, m, n, k }
    }

    pub fn get(&self, d: Dim) -> u64 {
        match d {
            Dim::B => self.b,
            Dim::M => self.m,
            Dim::N => self.n,
            Dim::K => self.k,
        }
    }

    pub fn as_array(&self) -> [u64; 4] {
        [self.b, self.m, self.n, self.k]
    }

    pub fn from_array(a: [u64; 4]) -> Self {
        Dims { b: a[0], m: a[1], n: a[2], k: a[3] }
    }

    pub fn volume(&self) -> u64 {
        self.b * self.m * self.n * self.k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum OpKind {
    Gemm,
    Bmm,
    /// Elementwise op over `B x M x N` (softmax, layernorm); zero MACs.
    Vector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Encoder,
    Prefill,
    Decode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReuseClass {
    HighReuse,
    LowReuse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EinsumOp {
    pub id: String,
    pub kind: OpKind,
    pub dims: Dims,
    #[serde(default = "default_word_bits")]
    pub word_bits: u32,
    pub phase: Phase,
    #[serde(default)]
    pub deps: Vec<String>,
    /// Replication weight: how many identical serial executions this op
    /// stands for (decode token sampling). Latency and energy scale by it.
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub weight: u64,
}

fn default_word_bits() -> u32 {
    8
}

fn one() -> u64 {
    1
}

fn is_one(w: &u64) -> bool {
    *w == 1
}

impl EinsumOp {
    pub fn gemm(id: impl Into<String>, m: u64, n: u64, k: u64, phase: Phase) -> Self {
        EinsumOp {
            id: id.into(),
            kind: OpKind::Gemm,
            dims: Dims::gemm(m, n, k),
            word_bits: 8,
            phase,
            deps: Vec::new(),
            weight: 1,
        }
    }

    pub fn bmm(id: impl Into<String>, b: u64, m: u64, n: u64, k: u64, phase: Phase) -> Self {
        EinsumOp {
            id: id.into(),
            kind: OpKind::Bmm,
            dims: Dims::new(b, m, n, k),
            word_bits: 8,
            phase,
            deps: Vec::new(),
            weight: 1,
        }
    }

    pub fn vector(id: impl Into<String>, b: u64, m: u64, n: u64, phase: Phase) -> Self {
        EinsumOp {
            id: id.into(),
            kind: OpKind::Vector,
            dims: Dims::new(b, m, n, 1),
            word_bits: 8,
            phase,
            deps: Vec::new(),
            weight: 1,
        }
    }

    pub fn with_deps<I, S>(mut self, deps: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.deps = deps.into_iter().map(Into::into).collect();
        self
    }

    /// Multiply-accumulates of a single execution.
    pub fn macs(&self) -> u64 {
        match self.kind {
            OpKind::Vector => 0,
            _ => self.dims.volume(),
        }
    }

    /// MACs including the replication weight.
    pub fn weighted_macs(&self) -> u64 {
        self.macs() * self.weight
    }

    /// Unique words touched: both inputs and the result.
    pub fn unique_words(&self) -> u64 {
        let Dims { b, m, n, k } = self.dims;
        match self.kind {
            OpKind::Vector => 2 * b * m * n,
            _ => b * m * k + b * k * n + b * m * n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        if d.b == 0 || d.m == 0 || d.n == 0 || d.k == 0 {
            return Err(Error::config(format!("op `{}` has a zero dimension", self.id)));
        }
        if self.kind == OpKind::Gemm && d.b != 1 {
            return Err(Error::config(format!("GEMM `{}` must have B = 1", self.id)));
        }
        if self.kind == OpKind::Vector && d.k != 1 {
            return Err(Error::config(format!("vector op `{}` must have K = 1", self.id)));
        }
        if self.word_bits == 0 {
            return Err(Error::config(format!("op `{}` has zero word_bits", self.id)));
        }
        if self.weight == 0 {
            return Err(Error::config(format!("op `{}` has zero weight", self.id)));
        }
        if self.deps.iter().any(|d| d == &self.id) {
            return Err(Error::config(format!("op `{}` depends on itself", self.id)));
        }
        Ok(())
    }
}

/// Total MACs over total unique operand and result words.
pub fn arithmetic_intensity(op: &EinsumOp) -> f64 {
    op.macs() as f64 / op.unique_words() as f64
}

/// Reuse class by arithmetic intensity. With `decode_low` set, every
/// decode-phase op is low reuse regardless of its intensity.
pub fn classify_reuse(op: &EinsumOp, threshold: f64, decode_low: bool) -> ReuseClass {
    if decode_low && op.phase == Phase::Decode {
        return ReuseClass::LowReuse;
    }
    if arithmetic_intensity(op) >= threshold {
        ReuseClass::HighReuse
    } else {
        ReuseClass::LowReuse
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartitionStyle {
    IntraCascade,
    InterCascade,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cascade {
    pub name: String,
    pub partition_style: PartitionStyle,
    pub ops: Vec<EinsumOp>,
}

impl Cascade {
    pub fn from_json(s: &str) -> Result<Self> {
        let c: Cascade = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn op(&self, id: &str) -> Option<&EinsumOp> {
        self.ops.iter().find(|o| o.id == id)
    }

    pub fn index_of(&self) -> HashMap<&str, usize> {
        self.ops.iter().enumerate().map(|(i, o)| (o.id.as_str(), i)).collect()
    }

    pub fn total_macs(&self) -> u64 {
        self.ops.iter().map(EinsumOp::weighted_macs).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for op in &self.ops {
            op.validate()?;
            if !seen.insert(op.id.as_str()) {
                return Err(Error::config(format!("duplicate op id `{}`", op.id)));
            }
        }
        for op in &self.ops {
            for d in &op.deps {
                if !seen.contains(d.as_str()) {
                    return Err(Error::config(format!(
                        "op `{}` depends on unknown op `{d}`",
                        op.id
                    )));
                }
            }
            let phase_ok = match self.partition_style {
                PartitionStyle::IntraCascade => op.phase == Phase::Encoder,
                PartitionStyle::InterCascade => op.phase != Phase::Encoder,
            };
            if !phase_ok {
                return Err(Error::config(format!(
                    "op `{}` phase {:?} does not match {:?}",
                    op.id, op.phase, self.partition_style
                )));
            }
        }
        self.topo_order()?;
        Ok(())
    }

    /// Kahn's algorithm; ties resolved by position in `ops`.
    pub fn topo_order(&self) -> Result<Vec<usize>> {
        let index = self.index_of();
        let n = self.ops.len();
        let mut indegree = vec![0usize; n];
        let mut children = vec![Vec::new(); n];
        for (i, op) in self.ops.iter().enumerate() {
            for d in &op.deps {
                let j = *index
                    .get(d.as_str())
                    .ok_or_else(|| Error::config(format!("unknown dep `{d}`")))?;
                indegree[i] += 1;
                children[j].push(i);
            }
        }
        let mut ready: std::collections::BTreeSet<usize> =
            (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &c in &children[i] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() != n {
            return Err(Error::config(format!("cascade `{}` has a dependency cycle", self.name)));
        }
        Ok(order)
    }

    /// True if a dependency path leads from `from` to `to`.
    pub fn has_path(&self, from: &str, to: &str) -> bool {
        let index = self.index_of();
        let (Some(&src), Some(&dst)) = (index.get(from), index.get(to)) else {
            return false;
        };
        // Walk dependencies backwards from `to`.
        let mut stack = vec![dst];
        let mut seen = vec![false; self.ops.len()];
        while let Some(i) = stack.pop() {
            if i == src {
                return true;
            }
            if std::mem::replace(&mut seen[i], true) {
                continue;
            }
            for d in &self.ops[i].deps {
                if let Some(&j) = index.get(d.as_str()) {
                    stack.push(j);
                }
            }
        }
        false
    }
}

/// Sequence configuration of a transformer workload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum SeqShape {
    Encoder { seq_len: u64 },
    Decoder { prefill_len: u64, decode_len: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerSpec {
    pub name: String,
    pub d_model: u64,
    pub n_heads: u64,
    pub seq: SeqShape,
    #[serde(default = "default_ffn_mult")]
    pub ffn_mult: u64,
    #[serde(default = "default_layers")]
    pub n_layers: u64,
    /// Emit every `decode_stride`-th decode token, weighted by the stride.
    #[serde(default = "default_stride")]
    pub decode_stride: u64,
    /// Emit softmax and layernorm as zero-MAC vector ops.
    #[serde(default)]
    pub vector_ops: bool,
    #[serde(default = "default_word_bits")]
    pub word_bits: u32,
}

fn default_ffn_mult() -> u64 {
    4
}
fn default_layers() -> u64 {
    1
}
fn default_stride() -> u64 {
    1
}

impl TransformerSpec {
    pub fn encoder(name: impl Into<String>, d_model: u64, n_heads: u64, seq_len: u64) -> Self {
        TransformerSpec {
            name: name.into(),
            d_model,
            n_heads,
            seq: SeqShape::Encoder { seq_len },
            ffn_mult: 4,
            n_layers: 1,
            decode_stride: 1,
            vector_ops: false,
            word_bits: 8,
        }
    }

    pub fn decoder(
        name: impl Into<String>,
        d_model: u64,
        n_heads: u64,
        prefill_len: u64,
        decode_len: u64,
    ) -> Self {
        TransformerSpec {
            seq: SeqShape::Decoder { prefill_len, decode_len },
            ..TransformerSpec::encoder(name, d_model, n_heads, 1)
        }
    }

    pub fn is_decoder(&self) -> bool {
        matches!(self.seq, SeqShape::Decoder { .. })
    }

    pub fn head_dim(&self) -> u64 {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 {
            return Err(Error::config("d_model and n_heads must be positive"));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.ffn_mult == 0 || self.n_layers == 0 || self.decode_stride == 0 || self.word_bits == 0 {
            return Err(Error::config("ffn_mult, n_layers, decode_stride and word_bits must be positive"));
        }
        match self.seq {
            SeqShape::Encoder { seq_len } if seq_len == 0 => {
                Err(Error::config("seq_len must be positive"))
            }
            SeqShape::Decoder { prefill_len, .. } if prefill_len == 0 => {
                Err(Error::config("prefill_len must be positive"))
            }
            _ => Ok(()),
        }
    }

    /// Shrink `d_model` and sequence lengths by `num/den`, keeping heads.
    pub fn scaled(&self, num: u64, den: u64) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::config("scale must be a positive ratio"));
        }
        let scale = |x: u64, what: &str| -> Result<u64> {
            if (x * num) % den != 0 {
                return Err(Error::config(format!(
                    "{what} {x} is not integral under scale {num}/{den}"
                )));
            }
            Ok(x * num / den)
        };
        let mut out = self.clone();
        out.d_model = scale(self.d_model, "d_model")?;
        out.seq = match self.seq {
            SeqShape::Encoder { seq_len } => SeqShape::Encoder { seq_len: scale(seq_len, "seq_len")? },
            SeqShape::Decoder { prefill_len, decode_len } => SeqShape::Decoder {
                prefill_len: scale(prefill_len, "prefill_len")?,
                decode_len: scale(decode_len, "decode_len")?,
            },
        };
        out.validate()?;
        Ok(out)
    }
}

/// Ids of one emitted transformer layer.
struct LayerIds {
    inputs: Vec<String>,
    last: String,
}

/// Appends one attention + FFN layer whose query side has `rows` tokens and
/// whose key/value side has `kv_len` tokens.
#[allow(clippy::too_many_arguments)]
fn push_layer(
    ops: &mut Vec<EinsumOp>,
    spec: &TransformerSpec,
    prefix: &str,
    rows: u64,
    kv_len: u64,
    phase: Phase,
    weight: u64,
    after: Option<&str>,
) -> LayerIds {
    let d = spec.d_model;
    let h = spec.n_heads;
    let hd = spec.head_dim();
    let f = spec.ffn_mult * d;
    let id = |s: &str| format!("{prefix}{s}");
    let entry: Vec<String> = after.map(|a| vec![a.to_string()]).unwrap_or_default();

    let mut push = |mut op: EinsumOp| {
        op.word_bits = spec.word_bits;
        op.weight = weight;
        ops.push(op);
    };

    push(EinsumOp::gemm(id("q_gen"), rows, d, d, phase).with_deps(entry.clone()));
    push(EinsumOp::gemm(id("k_gen"), rows, d, d, phase).with_deps(entry.clone()));
    push(EinsumOp::gemm(id("v_gen"), rows, d, d, phase).with_deps(entry.clone()));
    push(EinsumOp::bmm(id("logit"), h, rows, kv_len, hd, phase).with_deps([id("q_gen"), id("k_gen")]));
    let probs = if spec.vector_ops {
        push(EinsumOp::vector(id("softmax"), h, rows, kv_len, phase).with_deps([id("logit")]));
        id("softmax")
    } else {
        id("logit")
    };
    push(EinsumOp::bmm(id("attend"), h, rows, hd, kv_len, phase).with_deps([probs, id("v_gen")]));
    push(EinsumOp::gemm(id("deproj"), rows, d, d, phase).with_deps([id("attend")]));
    let pre_ffn = if spec.vector_ops {
        push(EinsumOp::vector(id("ln1"), 1, rows, d, phase).with_deps([id("deproj")]));
        id("ln1")
    } else {
        id("deproj")
    };
    push(EinsumOp::gemm(id("ffn1"), rows, f, d, phase).with_deps([pre_ffn]));
    push(EinsumOp::gemm(id("ffn2"), rows, d, f, phase).with_deps([id("ffn1")]));
    let last = if spec.vector_ops {
        push(EinsumOp::vector(id("ln2"), 1, rows, d, phase).with_deps([id("ffn2")]));
        id("ln2")
    } else {
        id("ffn2")
    };
    LayerIds { inputs: vec![id("q_gen"), id("k_gen"), id("v_gen")], last }
}

pub fn build_encoder_cascade(spec: &TransformerSpec) -> Result<Cascade> {
    spec.validate()?;
    let SeqShape::Encoder { seq_len } = spec.seq else {
        return Err(Error::config("build_encoder_cascade needs an encoder spec"));
    };
    let mut ops = Vec::new();
    let mut prev: Option<String> = None;
    for layer in 0..spec.n_layers {
        let ids = push_layer(
            &mut ops,
            spec,
            &format!("L{layer}."),
            seq_len,
            seq_len,
            Phase::Encoder,
            1,
            prev.as_deref(),
        );
        debug_assert_eq!(ids.inputs.len(), 3);
        prev = Some(ids.last);
    }
    Ok(Cascade {
        name: spec.name.clone(),
        partition_style: PartitionStyle::IntraCascade,
        ops,
    })
}

/// Decode token positions emitted under `stride`, with their weights.
pub fn decode_samples(decode_len: u64, stride: u64) -> Vec<(u64, u64)> {
    let stride = stride.max(1);
    let mut out = Vec::new();
    let mut t = 1;
    while t <= decode_len {
        out.push((t, stride.min(decode_len - t + 1)));
        t += stride;
    }
    out
}

pub fn build_decoder_cascade(spec: &TransformerSpec) -> Result<Cascade> {
    spec.validate()?;
    let SeqShape::Decoder { prefill_len, decode_len } = spec.seq else {
        return Err(Error::config("build_decoder_cascade needs a decoder spec"));
    };
    let mut ops = Vec::new();
    let mut prev: Option<String> = None;
    for layer in 0..spec.n_layers {
        let ids = push_layer(
            &mut ops,
            spec,
            &format!("prefill.L{layer}."),
            prefill_len,
            prefill_len,
            Phase::Prefill,
            1,
            prev.as_deref(),
        );
        prev = Some(ids.last);
    }
    // The decode chain carries no edge into the prefill component.
    let mut prev: Option<String> = None;
    for (t, weight) in decode_samples(decode_len, spec.decode_stride) {
        for layer in 0..spec.n_layers {
            let ids = push_layer(
                &mut ops,
                spec,
                &format!("decode.t{t}.L{layer}."),
                1,
                prefill_len + t,
                Phase::Decode,
                weight,
                prev.as_deref(),
            );
            prev = Some(ids.last);
        }
    }
    Ok(Cascade {
        name: spec.name.clone(),
        partition_style: PartitionStyle::InterCascade,
        ops,
    })
}

pub fn build_cascade(spec: &TransformerSpec) -> Result<Cascade> {
    if spec.is_decoder() {
        build_decoder_cascade(spec)
    } else {
        build_encoder_cascade(spec)
    }
}

/// Bundled workload specs at their published sizes.
pub fn workload_fixtures() -> Vec<TransformerSpec> {
    vec![
        TransformerSpec::encoder("bert-large", 1024, 16, 256),
        TransformerSpec::decoder("llama2", 4096, 32, 3000, 1000),
        TransformerSpec::decoder("gpt3", 12288, 96, 3000, 1000),
    ]
}

pub fn workload_fixture(name: &str) -> Option<TransformerSpec> {
    workload_fixtures().into_iter().find(|w| w.name == name)
}
