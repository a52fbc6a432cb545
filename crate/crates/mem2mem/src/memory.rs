//! The memory bank: encoder-side compression, transfer to the decoder,
//! and the decoder's read and gated-write operations, plus the two
//! regularizers that shape them.
//!
//! Compression turns the `[L, d]` sentence-state matrix into `r` slots via
//! multi-head self-attention over sentences: `A = softmax(W1 tanh(W2 H^T))`
//! per head, `M = A H`. The diversity penalty `||A A^T - I||_F^2` pushes the
//! heads toward distinct near-one-hot sentence picks, which is what makes
//! the bank an implicit sentence extractor. The decoder reads the bank with
//! bilinear attention and rewrites every slot each step through a
//! forget/update gate. The read penalty ties readouts over the frozen
//! encoder bank to the sentence-attention context.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};
use crate::tensor::Tensor;

// ── compression ─────────────────────────────────────────────────────

#[derive(Clone, Copy)]
pub struct CompressRefs {
    /// `[r, d_a]` head projections.
    pub w1: TensorId,
    /// `[d_a, d]` shared hidden projection.
    pub w2: TensorId,
}

pub fn init_compress<R: Rng>(
    params: &mut BTreeMap<String, Tensor>,
    prefix: &str,
    heads: usize,
    d_a: usize,
    d: usize,
    rng: &mut R,
) {
    params.insert(format!("{prefix}.w1"), Tensor::uniform_init(vec![heads, d_a], rng));
    params.insert(format!("{prefix}.w2"), Tensor::uniform_init(vec![d_a, d], rng));
}

pub fn bind_compress(
    g: &mut Graph,
    params: &BTreeMap<String, Tensor>,
    prefix: &str,
) -> CompressRefs {
    CompressRefs {
        w1: g.param(&format!("{prefix}.w1"), &params[&format!("{prefix}.w1")]),
        w2: g.param(&format!("{prefix}.w2"), &params[&format!("{prefix}.w2")]),
    }
}

/// The write-attention matrix `A` (`[r, L]`, row-stochastic) over unmasked
/// sentences, and the compressed bank `M = A H` (`[r, d]`).
pub struct MemoryBank {
    pub attention: TensorId,
    pub slots: TensorId,
}

/// Compress `H` into `r` slots. PAD sentences are masked out of every
/// head's softmax.
pub fn compress(
    g: &mut Graph,
    refs: &CompressRefs,
    doc_states: TensorId,
    sentence_mask: &[f64],
) -> Result<MemoryBank> {
    let heads = g.value(refs.w1).dims2().0;
    if heads < 1 {
        return Err(Error::Config("memory needs at least one head".into()));
    }
    let ht = g.transpose(doc_states)?; // [d, L]
    let hidden = g.matmul(refs.w2, ht)?; // [d_a, L]
    let act = g.tanh(hidden)?;
    let scores = g.matmul(refs.w1, act)?; // [r, L]
    let l = sentence_mask.len();
    let mask_rows: Vec<f64> = (0..heads).flat_map(|_| sentence_mask.iter().copied()).collect();
    let mask = g.constant(Tensor::new(vec![heads, l], mask_rows)?);
    let masked = g.mask_fill(scores, mask, f64::NEG_INFINITY)?;
    let attention = g.softmax(masked)?;
    let slots = bank_from_attention(g, attention, doc_states)?;
    Ok(MemoryBank { attention, slots })
}

/// `M = A H`: every slot is a convex combination of sentence states.
pub fn bank_from_attention(
    g: &mut Graph,
    attention: TensorId,
    doc_states: TensorId,
) -> Result<TensorId> {
    g.matmul(attention, doc_states)
}

/// Diversity penalty `||A A^T - I||_F^2`. Zero exactly when the rows of the
/// row-stochastic `A` are distinct one-hot picks.
pub fn comp_loss(g: &mut Graph, attention: TensorId) -> Result<TensorId> {
    let r = g.value(attention).dims2().0;
    let at = g.transpose(attention)?;
    let gram = g.matmul(attention, at)?;
    let mut eye = vec![0.0; r * r];
    for i in 0..r {
        eye[i * r + i] = 1.0;
    }
    let eye = g.constant(Tensor::new(vec![r, r], eye)?);
    let diff = g.sub(gram, eye)?;
    g.frob_norm_sq(diff)
}

// ── read ────────────────────────────────────────────────────────────

#[derive(Clone, Copy)]
pub struct ReadRefs {
    /// `[q, d]` bilinear score over slots.
    pub w: TensorId,
}

pub fn init_read<R: Rng>(
    params: &mut BTreeMap<String, Tensor>,
    prefix: &str,
    q: usize,
    d: usize,
    rng: &mut R,
) {
    params.insert(format!("{prefix}.w"), Tensor::uniform_init(vec![q, d], rng));
}

pub fn bind_read(g: &mut Graph, params: &BTreeMap<String, Tensor>, prefix: &str) -> ReadRefs {
    ReadRefs { w: g.param(&format!("{prefix}.w"), &params[&format!("{prefix}.w")]) }
}

/// One memory read: weights over the current slots, the readout, and the
/// readout over the frozen encoder bank with the same weights.
pub struct ReadResult {
    /// `[1, r]` read attention.
    pub weights: TensorId,
    /// `[1, d]` readout from the decoder memory.
    pub readout: TensorId,
    /// `[1, d]` readout from the frozen encoder bank (for the read penalty).
    pub encoder_readout: TensorId,
}

/// `psi = softmax(h W M_D^T)`, `m = psi M_D`, `c_m = psi M_E`.
pub fn read(
    g: &mut Graph,
    refs: &ReadRefs,
    query: TensorId,
    decoder_memory: TensorId,
    encoder_bank: TensorId,
) -> Result<ReadResult> {
    let qw = g.matmul(query, refs.w)?; // [1, d]
    let mt = g.transpose(decoder_memory)?;
    let scores = g.matmul(qw, mt)?; // [1, r]
    let weights = g.softmax(scores)?;
    let readout = g.matmul(weights, decoder_memory)?;
    let encoder_readout = g.matmul(weights, encoder_bank)?;
    Ok(ReadResult { weights, readout, encoder_readout })
}

// ── gated write ─────────────────────────────────────────────────────

#[derive(Clone, Copy)]
pub struct WriteRefs {
    pub w_z1: TensorId,
    pub w_z2: TensorId,
    pub w_z3: TensorId,
    pub w_u1: TensorId,
    pub w_u2: TensorId,
    pub w_u3: TensorId,
}

pub fn init_write<R: Rng>(
    params: &mut BTreeMap<String, Tensor>,
    prefix: &str,
    q: usize,
    d: usize,
    rng: &mut R,
) {
    for (name, cols) in
        [("w_z1", q), ("w_z2", d), ("w_z3", d), ("w_u1", q), ("w_u2", d), ("w_u3", d)]
    {
        params.insert(format!("{prefix}.{name}"), Tensor::uniform_init(vec![d, cols], rng));
    }
}

pub fn bind_write(g: &mut Graph, params: &BTreeMap<String, Tensor>, prefix: &str) -> WriteRefs {
    let mut get = |s: &str| g.param(&format!("{prefix}.{s}"), &params[&format!("{prefix}.{s}")]);
    WriteRefs {
        w_z1: get("w_z1"),
        w_z2: get("w_z2"),
        w_z3: get("w_z3"),
        w_u1: get("w_u1"),
        w_u2: get("w_u2"),
        w_u3: get("w_u3"),
    }
}

/// Forget/update blend for all slots: `z * M + (1 - z) * u`, elementwise.
pub fn gate_blend(
    g: &mut Graph,
    gate: TensorId,
    memory: TensorId,
    candidate: TensorId,
) -> Result<TensorId> {
    let keep = g.mul(gate, memory)?;
    let inv = g.one_minus(gate)?;
    let update = g.mul(inv, candidate)?;
    g.add(keep, update)
}

/// Rewrite every slot once, gated on the next decoder state, the last
/// readout and the slot content. Gate parameters are shared across slots.
pub fn write(
    g: &mut Graph,
    refs: &WriteRefs,
    next_state: TensorId,
    readout: TensorId,
    memory: TensorId,
) -> Result<TensorId> {
    let r = g.value(memory).dims2().0;
    let shared_z = {
        let a = g.linear(next_state, refs.w_z1)?;
        let b = g.linear(readout, refs.w_z2)?;
        g.add(a, b)?
    };
    let shared_u = {
        let a = g.linear(next_state, refs.w_u1)?;
        let b = g.linear(readout, refs.w_u2)?;
        g.add(a, b)?
    };
    let slot_z = g.linear(memory, refs.w_z3)?; // [r, d]
    let slot_u = g.linear(memory, refs.w_u3)?;
    let shared_z = g.tile_rows(shared_z, r)?;
    let shared_u = g.tile_rows(shared_u, r)?;
    let gate = {
        let s = g.add(shared_z, slot_z)?;
        g.sigmoid(s)?
    };
    let candidate = {
        let s = g.add(shared_u, slot_u)?;
        g.tanh(s)?
    };
    gate_blend(g, gate, memory, candidate)
}

// ── read regularizer ────────────────────────────────────────────────

/// Mean Euclidean distance between the per-step encoder-bank readouts and
/// the sentence-attention contexts.
pub fn read_loss(
    g: &mut Graph,
    encoder_readouts: &[TensorId],
    sentence_contexts: &[TensorId],
) -> Result<TensorId> {
    if encoder_readouts.is_empty() || encoder_readouts.len() != sentence_contexts.len() {
        return Err(Error::InvalidInput(format!(
            "read penalty needs matching nonempty sequences, got {} and {}",
            encoder_readouts.len(),
            sentence_contexts.len()
        )));
    }
    let mut distances = Vec::with_capacity(encoder_readouts.len());
    for (&cm, &cs) in encoder_readouts.iter().zip(sentence_contexts) {
        let diff = g.sub(cm, cs)?;
        distances.push(g.l2_norm(diff)?);
    }
    let stacked = if distances.len() == 1 { distances[0] } else { g.concat_rows(&distances)? };
    g.mean(stacked)
}
