//! Decoder: GRU with memory-augmented state, hierarchical attention with
//! coverage, pointer-generator output mixing, the composite training loss,
//! and beam-search inference.
//!
//! Step order: the GRU consumes the previous target embedding; any pending
//! memory write (gated on the fresh state and the previous readout) fires
//! before this step's read; attention queries use the fused state; the
//! pointer switch mixes the vocabulary softmax with the copy distribution
//! scattered over source positions; coverage accumulates after attention.

use crate::encoder;
use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};
use crate::memory;
use crate::model::{Encoded, Model, ModelRefs};
use crate::tensor::Tensor;
use crate::text::{Vocabulary, BOS, EOS, UNK};

/// Floor for reference-token probabilities inside the NLL.
pub const PROB_FLOOR: f64 = 1e-12;

/// Decoder state carried across steps. Tensors on the tape are immutable,
/// so a state snapshot is just a bundle of ids.
#[derive(Clone, Copy)]
pub struct StepState {
    pub h: TensorId,
    /// Readable memory: the writable bank when decoder writes are on,
    /// otherwise the static encoder bank (or none for the baseline).
    pub memory: Option<TensorId>,
    pub coverage: TensorId,
    /// Readout awaiting its deferred write at the next step.
    pub pending: Option<TensorId>,
}

pub fn init_state(g: &mut Graph, model: &Model, enc: &Encoded) -> StepState {
    let flags = model.config.ablation;
    let memory = if flags.decoder_mem {
        if flags.mem_transfer {
            enc.bank.as_ref().map(|b| b.slots)
        } else {
            Some(g.zeros(vec![model.config.heads, model.config.state_dim()]))
        }
    } else if flags.encoder_mem {
        enc.bank.as_ref().map(|b| b.slots)
    } else {
        None
    };
    StepState {
        h: enc.dec_h0,
        memory,
        coverage: g.zeros(vec![1, enc.doc.n_pad]),
        pending: None,
    }
}

/// Everything one decode step produces.
pub struct StepOutput {
    /// `[1, V_ext]` mixed output distribution.
    pub dist: TensorId,
    pub alpha: TensorId,
    pub beta: TensorId,
    pub gamma: TensorId,
    pub psi: Option<TensorId>,
    /// `[1, 1]` pointer switch.
    pub switch: TensorId,
    /// `[1, V]` generator softmax (before padding).
    pub gen_dist: TensorId,
    /// `[1, V_ext]` scattered copy distribution.
    pub copy_dist: TensorId,
    pub context: TensorId,
    pub sent_context: TensorId,
    /// Readout over the frozen encoder bank, for the read penalty.
    pub enc_readout: Option<TensorId>,
    /// Fused (memory-augmented) state; equals `h` for the baseline.
    pub fused: TensorId,
    pub h: TensorId,
}

/// Map an output-space id to the decoder-input (generator) space:
/// extended ids have no embedding and fall back to UNK.
pub fn input_gen_id(token: u32, vocab_size: usize) -> usize {
    if (token as usize) < vocab_size {
        token as usize
    } else {
        UNK as usize
    }
}

/// `sigmoid(w_c c + w_d h + w_x x)`: the soft switch between generating and
/// copying.
pub fn pointer_switch(
    g: &mut Graph,
    refs: &ModelRefs,
    context: TensorId,
    state: TensorId,
    input_embedding: TensorId,
) -> Result<TensorId> {
    let a = g.linear(context, refs.ptr_w_ctx)?;
    let b = g.linear(state, refs.ptr_w_dec)?;
    let c = g.linear(input_embedding, refs.ptr_w_emb)?;
    let s = g.add(a, b)?;
    let s = g.add(s, c)?;
    g.sigmoid(s)
}

/// `z * P_gen + (1 - z) * P_copy` over the extended vocabulary.
pub fn pointer_mix(
    g: &mut Graph,
    gen_ext: TensorId,
    copy: TensorId,
    switch: TensorId,
) -> Result<TensorId> {
    let gen_part = g.mul(switch, gen_ext)?;
    let inv = g.one_minus(switch)?;
    let copy_part = g.mul(inv, copy)?;
    g.add(gen_part, copy_part)
}

pub fn decode_step(
    g: &mut Graph,
    refs: &ModelRefs,
    model: &Model,
    enc: &Encoded,
    state: &mut StepState,
    input_id: usize,
) -> Result<StepOutput> {
    let flags = model.config.ablation;
    let x = g.embed_lookup(refs.embed, &[input_id])?;
    let h = encoder::gru_step(g, &refs.gru_dec, x, state.h)?;
    state.h = h;

    // deferred write from the previous step, now that the next state exists
    if flags.decoder_mem {
        if let (Some(mem), Some(pending)) = (state.memory, state.pending.take()) {
            state.memory = Some(memory::write(g, &refs.mem_write, h, pending, mem)?);
        }
    }

    // read from the current memory; the encoder-bank readout reuses the
    // same weights over the frozen bank
    let mut psi = None;
    let mut enc_readout = None;
    let fused = if let Some(mem) = state.memory {
        let frozen = enc.bank.as_ref().map(|b| b.slots).unwrap_or(mem);
        let res = memory::read(g, &refs.mem_read, h, mem, frozen)?;
        psi = Some(res.weights);
        enc_readout = Some(res.encoder_readout);
        if flags.decoder_mem {
            state.pending = Some(res.readout);
        }
        let cat = g.concat_cols(&[h, res.readout])?;
        g.linear(cat, refs.fuse_w)?
    } else {
        h
    };

    let beta = encoder::sentence_attention(
        g,
        &refs.attn_sent,
        fused,
        enc.doc_states,
        enc.doc.sentence_mask_row,
    )?;
    let alpha = encoder::word_attention(
        g,
        &refs.attn_word,
        fused,
        enc.word_proj,
        state.coverage,
        enc.doc.token_mask_row,
    )?;
    let gamma = encoder::combine_hierarchical(g, alpha, beta, enc.doc.sentence_map)?;
    let context = g.matmul(gamma, enc.word_states)?;
    let sent_context = g.matmul(beta, enc.doc_states)?;

    let switch = pointer_switch(g, refs, context, h, x)?;

    let gen_in = g.concat_cols(&[fused, context])?;
    let logits = g.linear(gen_in, refs.out_w)?;
    let logits = g.add(logits, refs.out_b)?;
    let gen_dist = g.softmax(logits)?;
    let n_oov = enc.doc.ext_vocab - model.vocab_size;
    let gen_ext = if n_oov > 0 {
        let zeros = g.zeros(vec![1, n_oov]);
        g.concat_cols(&[gen_dist, zeros])?
    } else {
        gen_dist
    };
    let copy_dist = g.matmul(gamma, enc.doc.copy_scatter)?;
    let dist = pointer_mix(g, gen_ext, copy_dist, switch)?;

    state.coverage = encoder::update_coverage(g, state.coverage, alpha)?;

    Ok(StepOutput {
        dist,
        alpha,
        beta,
        gamma,
        psi,
        switch,
        gen_dist,
        copy_dist,
        context,
        sent_context,
        enc_readout,
        fused,
        h,
    })
}

// ── training loss ───────────────────────────────────────────────────

/// Mean `-log p` over picked probabilities, flooring each at
/// [`PROB_FLOOR`] (a floored pick contributes no gradient). Returns the
/// loss node and how many picks were floored.
pub fn nll_from_picks(g: &mut Graph, picks: &[TensorId]) -> Result<(TensorId, usize)> {
    if picks.is_empty() {
        return Err(Error::InvalidInput("loss over an empty target".into()));
    }
    let mut clamped = 0;
    let mut terms = Vec::with_capacity(picks.len());
    let neg = g.scalar(-1.0);
    for &p in picks {
        let safe = if g.data(p)[0] < PROB_FLOOR {
            clamped += 1;
            g.scalar(PROB_FLOOR)
        } else {
            p
        };
        let lp = g.log(safe)?;
        terms.push(g.mul(lp, neg)?);
    }
    let stacked = if terms.len() == 1 { terms[0] } else { g.concat_rows(&terms)? };
    Ok((g.mean(stacked)?, clamped))
}

pub struct ForcedOutcome {
    pub total: TensorId,
    pub nll: f64,
    pub comp: f64,
    pub read: f64,
    pub coverage: f64,
    pub total_value: f64,
    pub clamped: usize,
    /// Teacher-forced argmax hits against the reference.
    pub correct: usize,
    pub steps: usize,
}

/// Teacher-forced composite loss over one document:
/// `NLL + lambda1 * comp + lambda2 * read` (+ the optional coverage term).
pub fn teacher_forced_loss(
    g: &mut Graph,
    refs: &ModelRefs,
    model: &Model,
    enc: &Encoded,
    target: &[u32],
) -> Result<ForcedOutcome> {
    if target.is_empty() {
        return Err(Error::InvalidInput("empty target".into()));
    }
    let flags = model.config.ablation;
    let mut state = init_state(g, model, enc);
    let mut picks = Vec::with_capacity(target.len());
    let mut correct = 0usize;
    let mut readout_pairs: Vec<(TensorId, TensorId)> = Vec::new();
    let mut cov_terms: Vec<TensorId> = Vec::new();

    let mut input = BOS as usize;
    for &y in target {
        let out = decode_step(g, refs, model, enc, &mut state, input)?;
        if let Some(cm) = out.enc_readout {
            readout_pairs.push((cm, out.sent_context));
        }
        if model.config.coverage_loss {
            // coverage BEFORE this step's alpha was folded in is what the
            // penalty compares against; state.coverage already advanced, so
            // recompute min(alpha, cov_before) = min(alpha, cov_after - alpha)
            // directly from alpha and the pre-update coverage held in the op
            // inputs. Simpler: penalty uses alpha vs. previous coverage,
            // which equals state.coverage - alpha.
            let prev_cov = g.sub(state.coverage, out.alpha)?;
            cov_terms.push(encoder::coverage_penalty(g, out.alpha, prev_cov)?);
        }
        let dist = g.data(out.dist);
        let argmax = dist
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if argmax == y as usize {
            correct += 1;
        }
        let mut onehot = vec![0.0; enc.doc.ext_vocab];
        onehot[y as usize] = 1.0;
        let oh = g.constant(Tensor::new(vec![1, enc.doc.ext_vocab], onehot)?);
        let masked = g.mul(out.dist, oh)?;
        picks.push(g.sum(masked)?);
        input = input_gen_id(y, model.vocab_size);
    }

    let (nll, clamped) = nll_from_picks(g, &picks)?;
    let mut total = nll;
    let mut comp_value = 0.0;
    let mut read_value = 0.0;
    let mut cov_value = 0.0;

    if let Some(bank) = &enc.bank {
        let comp = memory::comp_loss(g, bank.attention)?;
        comp_value = g.data(comp)[0];
        if flags.reg_comp {
            let w = g.scalar(model.config.lambda_comp);
            let term = g.mul(comp, w)?;
            total = g.add(total, term)?;
        }
    }
    if !readout_pairs.is_empty() {
        let (cms, css): (Vec<_>, Vec<_>) = readout_pairs.into_iter().unzip();
        let read = memory::read_loss(g, &cms, &css)?;
        read_value = g.data(read)[0];
        if flags.reg_read {
            let w = g.scalar(model.config.lambda_read);
            let term = g.mul(read, w)?;
            total = g.add(total, term)?;
        }
    }
    if !cov_terms.is_empty() {
        let stacked =
            if cov_terms.len() == 1 { cov_terms[0] } else { g.concat_rows(&cov_terms)? };
        let cov = g.mean(stacked)?;
        cov_value = g.data(cov)[0];
        total = g.add(total, cov)?;
    }

    Ok(ForcedOutcome {
        total,
        nll: g.data(nll)[0],
        comp: comp_value,
        read: read_value,
        coverage: cov_value,
        total_value: g.data(total)[0],
        clamped,
        correct,
        steps: target.len(),
    })
}

// ── inference ───────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct DecodeResult {
    /// Emitted ids in the extended space, EOS included when generated.
    pub tokens: Vec<u32>,
    /// Cumulative log-probability of the emitted sequence.
    pub log_prob: f64,
    /// Mean pointer switch over the emitted steps.
    pub z_mean: f64,
}

impl DecodeResult {
    /// Length-normalized ranking score.
    pub fn score(&self) -> f64 {
        self.log_prob / self.tokens.len().max(1) as f64
    }

    pub fn text(&self, vocab: &Vocabulary, source_oov: &[String]) -> String {
        let mut words = Vec::new();
        for &id in &self.tokens {
            if id == EOS || id == BOS || id == crate::text::PAD {
                continue;
            }
            words.push(vocab.token_extended(id, source_oov).unwrap_or("<unk>").to_string());
        }
        words.join(" ")
    }
}

#[derive(Clone)]
struct Hypothesis {
    tokens: Vec<u32>,
    log_prob: f64,
    z_sum: f64,
    state: StepState,
    finished: bool,
}

impl Hypothesis {
    fn result(&self) -> DecodeResult {
        DecodeResult {
            tokens: self.tokens.clone(),
            log_prob: self.log_prob,
            z_mean: self.z_sum / self.tokens.len().max(1) as f64,
        }
    }
}

/// Beam search with length-normalized final ranking. Completed (EOS)
/// hypotheses leave the beam; if nothing completes by `max_len` the best
/// partial wins. Deterministic: ties break toward smaller token ids.
pub fn beam_search(
    g: &mut Graph,
    refs: &ModelRefs,
    model: &Model,
    enc: &Encoded,
    beam_width: usize,
    max_len: usize,
) -> Result<DecodeResult> {
    if beam_width == 0 || max_len == 0 {
        return Err(Error::Config("beam_width and max_len must be positive".into()));
    }
    let init = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        z_sum: 0.0,
        state: init_state(g, model, enc),
        finished: false,
    };
    let mut live = vec![init];
    let mut completed: Vec<Hypothesis> = Vec::new();

    for _ in 0..max_len {
        if live.is_empty() {
            break;
        }
        let mut candidates: Vec<Hypothesis> = Vec::new();
        for hyp in &live {
            let input = hyp
                .tokens
                .last()
                .map(|&t| input_gen_id(t, model.vocab_size))
                .unwrap_or(BOS as usize);
            let mut state = hyp.state;
            let out = decode_step(g, refs, model, enc, &mut state, input)?;
            let dist = g.data(out.dist).to_vec();
            let z = g.data(out.switch)[0];
            let mut ranked: Vec<usize> = (0..dist.len()).collect();
            ranked.sort_by(|&a, &b| {
                dist[b].partial_cmp(&dist[a]).unwrap().then(a.cmp(&b))
            });
            for &tok in ranked.iter().take(beam_width) {
                let mut tokens = hyp.tokens.clone();
                tokens.push(tok as u32);
                candidates.push(Hypothesis {
                    tokens,
                    log_prob: hyp.log_prob + dist[tok].ln(),
                    z_sum: hyp.z_sum + z,
                    state,
                    finished: tok as u32 == EOS,
                });
            }
        }
        candidates.sort_by(|a, b| {
            b.log_prob
                .partial_cmp(&a.log_prob)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.tokens.cmp(&b.tokens))
        });
        candidates.truncate(beam_width);
        live = Vec::new();
        for c in candidates {
            if c.finished {
                completed.push(c);
            } else {
                live.push(c);
            }
        }
    }

    let best = completed
        .iter()
        .chain(live.iter())
        .max_by(|a, b| {
            let sa = a.result().score();
            let sb = b.result().score();
            sa.partial_cmp(&sb)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| b.tokens.cmp(&a.tokens))
        })
        .ok_or_else(|| Error::InvalidInput("beam search produced no hypotheses".into()))?;
    Ok(best.result())
}

/// Greedy argmax decoding (ties toward smaller ids). Also returns the
/// per-step memory-read rows for inspection dumps.
pub fn greedy_decode(
    g: &mut Graph,
    refs: &ModelRefs,
    model: &Model,
    enc: &Encoded,
    max_len: usize,
) -> Result<(DecodeResult, Vec<Vec<f64>>)> {
    let mut state = init_state(g, model, enc);
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    let mut z_sum = 0.0;
    let mut psi_steps = Vec::new();
    let mut input = BOS as usize;
    for _ in 0..max_len {
        let out = decode_step(g, refs, model, enc, &mut state, input)?;
        let dist = g.data(out.dist);
        let mut best = 0usize;
        for (i, v) in dist.iter().enumerate() {
            if *v > dist[best] {
                best = i;
            }
        }
        log_prob += dist[best].ln();
        z_sum += g.data(out.switch)[0];
        if let Some(psi) = out.psi {
            psi_steps.push(g.data(psi).to_vec());
        }
        tokens.push(best as u32);
        if best as u32 == EOS {
            break;
        }
        input = input_gen_id(best as u32, model.vocab_size);
    }
    let n = tokens.len().max(1) as f64;
    Ok((DecodeResult { tokens, log_prob, z_mean: z_sum / n }, psi_steps))
}

/// Log-probability the model assigns to a given output sequence
/// (teacher-forced walk; used by the enumeration oracle).
pub fn force_score(
    g: &mut Graph,
    refs: &ModelRefs,
    model: &Model,
    enc: &Encoded,
    tokens: &[u32],
) -> Result<f64> {
    let mut state = init_state(g, model, enc);
    let mut input = BOS as usize;
    let mut log_prob = 0.0;
    for &tok in tokens {
        let out = decode_step(g, refs, model, enc, &mut state, input)?;
        log_prob += g.data(out.dist)[tok as usize].ln();
        input = input_gen_id(tok, model.vocab_size);
    }
    Ok(log_prob)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{AblationFlags, RunConfig};
    use crate::model::{bind, encode};
    use crate::text::{self, TruncationLimits, Vocabulary};
    use std::collections::BTreeMap;

    fn fixture(
        flags: AblationFlags,
        doc_text: &[&str],
        summary: &[&str],
    ) -> (Model, Vocabulary, text::Batch) {
        let mut config = RunConfig::micro();
        config.ablation = flags;
        config.seed = 11;
        let tokens: Vec<Vec<String>> = doc_text.iter().map(|s| text::tokenize(s)).collect();
        let vocab =
            Vocabulary::build(tokens.iter().map(|t| t.as_slice()), config.vocab_max).unwrap();
        let model = Model::init(config, vocab.len());
        let raw = text::RawDocument {
            id: None,
            sections: vec![doc_text.iter().map(|s| s.to_string()).collect()],
            summary: summary.iter().map(|s| s.to_string()).collect(),
        };
        let doc = text::encode_document(&raw, "d0", &vocab, &TruncationLimits::default()).unwrap();
        let target = text::encode_target(&raw.summary, &vocab, &doc, &TruncationLimits::default());
        let batch = text::make_batches(&[doc], &[target], &[0], 1).remove(0);
        (model, vocab, batch)
    }

    #[test]
    fn baseline_fuses_to_identity() {
        let (model, _, batch) =
            fixture(AblationFlags::baseline(), &["alpha beta gamma"], &["alpha"]);
        let mut g = Graph::new();
        let refs = bind(&mut g, &model);
        let enc = encode(&mut g, &refs, &model, &batch.item(0)).unwrap();
        let mut state = init_state(&mut g, &model, &enc);
        let out = decode_step(&mut g, &refs, &model, &enc, &mut state, BOS as usize).unwrap();
        assert_eq!(g.data(out.fused), g.data(out.h));
        assert!(out.psi.is_none());
        assert!(enc.bank.is_none());
    }

    #[test]
    fn single_token_source_gets_full_hierarchical_attention() {
        let (model, _, batch) = fixture(AblationFlags::full(), &["alpha"], &["alpha"]);
        let mut g = Graph::new();
        let refs = bind(&mut g, &model);
        let enc = encode(&mut g, &refs, &model, &batch.item(0)).unwrap();
        let mut state = init_state(&mut g, &model, &enc);
        let out = decode_step(&mut g, &refs, &model, &enc, &mut state, BOS as usize).unwrap();
        assert_eq!(g.data(out.gamma), &[1.0]);
        assert_eq!(g.data(out.context), g.data(enc.word_states));
    }

    #[test]
    fn pointer_mix_z_one_is_generator_only() {
        let mut g = Graph::new();
        let gen = g.constant(Tensor::new(vec![1, 4], vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        let copy = g.constant(Tensor::new(vec![1, 4], vec![0.0, 0.0, 0.5, 0.5]).unwrap());
        let z = g.scalar(1.0);
        let out = pointer_mix(&mut g, gen, copy, z).unwrap();
        assert_eq!(g.data(out), &[0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn pointer_mix_z_zero_is_copy_only() {
        let mut g = Graph::new();
        let gen = g.constant(Tensor::new(vec![1, 4], vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        let copy = g.constant(Tensor::new(vec![1, 4], vec![0.0, 0.0, 0.5, 0.5]).unwrap());
        let z = g.scalar(0.0);
        let out = pointer_mix(&mut g, gen, copy, z).unwrap();
        assert_eq!(g.data(out), &[0.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn pointer_mix_matches_hand_arithmetic() {
        // z=0.5, P_g(w)=0.2, source has w twice with gamma .1 and .3:
        // P_final(w) = 0.5*0.2 + 0.5*0.4 = 0.3
        let mut g = Graph::new();
        let gen = g.constant(Tensor::new(vec![1, 2], vec![0.2, 0.8]).unwrap());
        let copy = g.constant(Tensor::new(vec![1, 2], vec![0.4, 0.6]).unwrap());
        let z = g.scalar(0.5);
        let out = pointer_mix(&mut g, gen, copy, z).unwrap();
        assert!((g.data(out)[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn pointer_switch_zero_weights_is_half() {
        let (model, _, batch) = fixture(AblationFlags::baseline(), &["alpha beta"], &["alpha"]);
        let mut zeroed = model;
        for name in ["ptr.w_ctx", "ptr.w_dec", "ptr.w_emb"] {
            for v in zeroed.params.get_mut(name).unwrap().data_mut() {
                *v = 0.0;
            }
        }
        let mut g = Graph::new();
        let refs = bind(&mut g, &zeroed);
        let enc = encode(&mut g, &refs, &zeroed, &batch.item(0)).unwrap();
        let mut state = init_state(&mut g, &zeroed, &enc);
        let out = decode_step(&mut g, &refs, &zeroed, &enc, &mut state, BOS as usize).unwrap();
        assert_eq!(g.data(out.switch), &[0.5]);
    }

    #[test]
    fn pointer_switch_score_ln3_gives_three_quarters() {
        let mut params = BTreeMap::new();
        params.insert("ptr.w_ctx".to_string(), Tensor::new(vec![1, 1], vec![3f64.ln()]).unwrap());
        params.insert("ptr.w_dec".to_string(), Tensor::new(vec![1, 1], vec![0.0]).unwrap());
        params.insert("ptr.w_emb".to_string(), Tensor::new(vec![1, 1], vec![0.0]).unwrap());
        let mut g = Graph::new();
        let w_ctx = g.param("ptr.w_ctx", &params["ptr.w_ctx"]);
        let w_dec = g.param("ptr.w_dec", &params["ptr.w_dec"]);
        let w_emb = g.param("ptr.w_emb", &params["ptr.w_emb"]);
        let c = g.constant(Tensor::new(vec![1, 1], vec![1.0]).unwrap());
        let a = g.linear(c, w_ctx).unwrap();
        let b = g.linear(c, w_dec).unwrap();
        let d = g.linear(c, w_emb).unwrap();
        let s = g.add(a, b).unwrap();
        let s = g.add(s, d).unwrap();
        let z = g.sigmoid(s).unwrap();
        assert!((g.data(z)[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn pointer_switch_saturates_toward_one() {
        let mut g = Graph::new();
        let s = g.scalar(50.0);
        let z = g.sigmoid(s).unwrap();
        assert!(g.data(z)[0] > 1.0 - 1e-12);
    }

    #[test]
    fn nll_of_probability_one_is_zero() {
        let mut g = Graph::new();
        let p1 = g.scalar(1.0);
        let p2 = g.scalar(1.0);
        let (loss, clamped) = nll_from_picks(&mut g, &[p1, p2]).unwrap();
        assert_eq!(g.data(loss), &[0.0]);
        assert_eq!(clamped, 0);
    }

    #[test]
    fn nll_of_two_inverse_e_tokens_is_one() {
        let mut g = Graph::new();
        let p1 = g.scalar((-1.0f64).exp());
        let p2 = g.scalar((-1.0f64).exp());
        let (loss, _) = nll_from_picks(&mut g, &[p1, p2]).unwrap();
        assert!((g.data(loss)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nll_floors_zero_probability_and_counts_it() {
        let mut g = Graph::new();
        let p = g.scalar(0.0);
        let (loss, clamped) = nll_from_picks(&mut g, &[p]).unwrap();
        assert_eq!(clamped, 1);
        assert!((g.data(loss)[0] - (-PROB_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn distributions_are_valid_with_extended_ids() {
        // doc with OOV relative to a vocab built on other text
        let mut config = RunConfig::micro();
        config.ablation = AblationFlags::full();
        let tokens = text::tokenize("alpha beta gamma");
        let vocab = Vocabulary::build([tokens.as_slice()], 50).unwrap();
        let model = Model::init(config, vocab.len());
        let raw = text::RawDocument {
            id: None,
            sections: vec![vec!["alpha novelword beta secondnovel".to_string()]],
            summary: vec!["novelword".to_string()],
        };
        let doc = text::encode_document(&raw, "d0", &vocab, &TruncationLimits::default()).unwrap();
        assert_eq!(doc.source_oov.len(), 2);
        let target = text::encode_target(&raw.summary, &vocab, &doc, &TruncationLimits::default());
        let batch = text::make_batches(&[doc], &[target], &[0], 1).remove(0);

        let mut g = Graph::new();
        let refs = bind(&mut g, &model);
        let enc = encode(&mut g, &refs, &model, &batch.item(0)).unwrap();
        let mut state = init_state(&mut g, &model, &enc);
        let out = decode_step(&mut g, &refs, &model, &enc, &mut state, BOS as usize).unwrap();

        let dist = g.data(out.dist);
        assert_eq!(dist.len(), vocab.len() + 2);
        assert!(dist.iter().all(|v| *v >= 0.0));
        let total: f64 = dist.iter().sum();
        assert!((total - 1.0).abs() < 1e-6);

        // mass split: generator mass = z, copy mass = 1 - z
        let z = g.data(out.switch)[0];
        let gen_ext_mass: f64 = g.data(out.gen_dist).iter().sum::<f64>() * z;
        let copy_mass: f64 = g.data(out.copy_dist).iter().sum::<f64>() * (1.0 - z);
        assert!((gen_ext_mass - z).abs() < 1e-9);
        assert!((copy_mass - (1.0 - z)).abs() < 1e-9);
        // generator never puts mass on extended ids
        assert_eq!(dist[vocab.len()..].len(), 2);
        for (i, v) in dist[vocab.len()..].iter().enumerate() {
            let copy_v = g.data(out.copy_dist)[vocab.len() + i] * (1.0 - z);
            assert!((v - copy_v).abs() < 1e-12);
        }
    }

    #[test]
    fn memory_is_immutable_during_decode() {
        let (model, _, batch) = fixture(
            AblationFlags::full(),
            &["alpha beta gamma", "delta epsilon zeta"],
            &["alpha"],
        );
        let mut g = Graph::new();
        let refs = bind(&mut g, &model);
        let enc = encode(&mut g, &refs, &model, &batch.item(0)).unwrap();
        let bank = enc.bank.as_ref().unwrap().slots;
        let before: Vec<u64> = g.data(bank).iter().map(|v| v.to_bits()).collect();
        let mut state = init_state(&mut g, &model, &enc);
        let mut input = BOS as usize;
        for _ in 0..4 {
            let out = decode_step(&mut g, &refs, &model, &enc, &mut state, input).unwrap();
            let dist = g.data(out.dist);
            let best =
                dist.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
            input = input_gen_id(best as u32, model.vocab_size);
        }
        // writes created new tensors; the encoder bank bytes never moved
        let after: Vec<u64> = g.data(bank).iter().map(|v| v.to_bits()).collect();
        assert_eq!(before, after);
        // and the decoder memory did change
        assert_ne!(Some(bank), state.memory);
    }

    #[test]
    fn transfer_starts_decoder_memory_at_encoder_bank() {
        let (model, _, batch) =
            fixture(AblationFlags::full(), &["alpha beta", "gamma delta"], &["alpha"]);
        let mut g = Graph::new();
        let refs = bind(&mut g, &model);
        let enc = encode(&mut g, &refs, &model, &batch.item(0)).unwrap();
        let state = init_state(&mut g, &model, &enc);
        assert_eq!(state.memory, enc.bank.as_ref().map(|b| b.slots));
    }

    #[test]
    fn decoder_mem_without_transfer_starts_at_zeros() {
        let mut flags = AblationFlags::full();
        flags.mem_transfer = false;
        flags.reg_comp = false;
        flags.reg_read = false;
        let (model, _, batch) = fixture(flags, &["alpha beta", "gamma delta"], &["alpha"]);
        let mut g = Graph::new();
        let refs = bind(&mut g, &model);
        let enc = encode(&mut g, &refs, &model, &batch.item(0)).unwrap();
        let state = init_state(&mut g, &model, &enc);
        assert!(g.data(state.memory.unwrap()).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn beam_width_one_equals_greedy_on_random_models() {
        for seed in 0..50u64 {
            let mut config = RunConfig::micro();
            config.seed = seed;
            config.ablation = AblationFlags::ladder()[(seed % 6) as usize];
            let tokens = text::tokenize("aa bb cc dd");
            let vocab = Vocabulary::build([tokens.as_slice()], 50).unwrap();
            let mut model = Model::init(config, vocab.len());
            // sharpen the output layer so distributions are peaked
            for name in ["out.w", "out.b"] {
                for v in model.params.get_mut(name).unwrap().data_mut() {
                    *v *= 25.0;
                }
            }
            let raw = text::RawDocument {
                id: None,
                sections: vec![vec!["aa bb cc".to_string(), "dd aa".to_string()]],
                summary: vec!["aa".to_string()],
            };
            let doc =
                text::encode_document(&raw, "d0", &vocab, &TruncationLimits::default()).unwrap();
            let target =
                text::encode_target(&raw.summary, &vocab, &doc, &TruncationLimits::default());
            let batch = text::make_batches(&[doc], &[target], &[0], 1).remove(0);

            let mut g = Graph::new();
            let refs = bind(&mut g, &model);
            let enc = encode(&mut g, &refs, &model, &batch.item(0)).unwrap();
            let beam = beam_search(&mut g, &refs, &model, &enc, 1, 6).unwrap();
            let (greedy, _) = greedy_decode(&mut g, &refs, &model, &enc, 6).unwrap();
            assert_eq!(beam.tokens, greedy.tokens, "seed {seed}");
            assert!((beam.log_prob - greedy.log_prob).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_vocabulary_repeats_to_max_len() {
        // output layer biased so one word dominates and EOS never fires
        let (mut model, vocab, batch) =
            fixture(AblationFlags::baseline(), &["alpha alpha alpha"], &["alpha"]);
        let word = vocab.id("alpha").unwrap() as usize;
        {
            let b = model.params.get_mut("out.b").unwrap();
            for (i, v) in b.data_mut().iter_mut().enumerate() {
                *v = if i == word { 50.0 } else { -50.0 };
            }
        }
        let mut g = Graph::new();
        let refs = bind(&mut g, &model);
        let enc = encode(&mut g, &refs, &model, &batch.item(0)).unwrap();
        let out = beam_search(&mut g, &refs, &model, &enc, 2, 5).unwrap();
        assert_eq!(out.tokens, vec![word as u32; 5]);
    }

    /// Independent straight-line evaluation of one decode step on a
    /// one-sentence two-token document with every dimension 1 or 2,
    /// compared against the tape path.
    #[test]
    fn full_step_matches_hand_chained_oracle() {
        let mut config = RunConfig::micro();
        config.embed = 1;
        config.hidden = 1;
        config.d_a = 1;
        config.heads = 1;
        config.ablation = AblationFlags::full();
        let tokens = text::tokenize("aa bb");
        let vocab = Vocabulary::build([tokens.as_slice()], 50).unwrap();
        let v = vocab.len(); // 6
        let mut model = Model::init(config, v);
        // fixed tiny weights: deterministic pattern per tensor
        let mut k = 0.0f64;
        for (_, t) in model.params.iter_mut() {
            for x in t.data_mut() {
                k += 1.0;
                *x = 0.05 * (k % 7.0 - 3.0) / 3.0;
            }
        }
        let p = model.params.clone();

        let raw = text::RawDocument {
            id: None,
            sections: vec![vec!["aa bb".to_string()]],
            summary: vec!["aa".to_string()],
        };
        let doc = text::encode_document(&raw, "d0", &vocab, &TruncationLimits::default()).unwrap();
        let target = text::encode_target(&raw.summary, &vocab, &doc, &TruncationLimits::default());
        let batch = text::make_batches(&[doc], &[target], &[0], 1).remove(0);

        let mut g = Graph::new();
        let refs = bind(&mut g, &model);
        let enc = encode(&mut g, &refs, &model, &batch.item(0)).unwrap();
        let mut state = init_state(&mut g, &model, &enc);
        let out = decode_step(&mut g, &refs, &model, &enc, &mut state, BOS as usize).unwrap();
        let got = g.data(out.dist).to_vec();

        // ---- oracle: plain f64, no tape ----
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let w = |name: &str| p[name].data().to_vec();
        let gru = |prefix: &str, x: f64, h: f64| -> f64 {
            let g1 = |n: &str| p[&format!("{prefix}.{n}")].data()[0];
            let z = sig(g1("w_z") * x + g1("u_z") * h + g1("b_z"));
            let r = sig(g1("w_r") * x + g1("u_r") * h + g1("b_r"));
            let n = (g1("w_n") * x + r * (g1("u_n") * h) + g1("b_n")).tanh();
            z * h + (1.0 - z) * n
        };
        let emb = w("embed");
        let aa = vocab.id("aa").unwrap() as usize;
        let bb = vocab.id("bb").unwrap() as usize;
        let (x0, x1) = (emb[aa], emb[bb]);
        // sentence encoder
        let h0f = gru("gru_sen.fwd", x0, 0.0);
        let h1f = gru("gru_sen.fwd", x1, h0f);
        let h1b = gru("gru_sen.bwd", x1, 0.0);
        let h0b = gru("gru_sen.bwd", x0, h1b);
        let word_states = [[h0f, h0b], [h1f, h1b]];
        let s = [h1f, h0b];
        // document encoder (single sentence)
        let dgru = |prefix: &str, x: &[f64; 2], h: f64| -> f64 {
            let g2 = |n: &str| p[&format!("{prefix}.{n}")].data().to_vec();
            let dot2 = |m: &[f64], x: &[f64; 2]| m[0] * x[0] + m[1] * x[1];
            let z = sig(dot2(&g2("w_z"), x) + g2("u_z")[0] * h + g2("b_z")[0]);
            let r = sig(dot2(&g2("w_r"), x) + g2("u_r")[0] * h + g2("b_r")[0]);
            let n = (dot2(&g2("w_n"), x) + r * (g2("u_n")[0] * h) + g2("b_n")[0]).tanh();
            z * h + (1.0 - z) * n
        };
        let hdf = dgru("gru_doc.fwd", &s, 0.0);
        let hdb = dgru("gru_doc.bwd", &s, 0.0);
        let h_doc = [hdf, hdb];
        // decoder init + one GRU step on BOS
        let w_init = w("dec_init.w");
        let dec_h0 = w_init[0] * h_doc[0] + w_init[1] * h_doc[1];
        let x_bos = emb[BOS as usize];
        let h1 = gru("gru_dec", x_bos, dec_h0);
        // memory: single head over single sentence -> A = [1], M_E = H row
        let m_d = h_doc;
        // no pending write at step 0; read with psi = [1]
        let m_read = m_d;
        // fuse
        let wm = w("fuse.w");
        let h_m = wm[0] * h1 + wm[1] * m_read[0] + wm[2] * m_read[1];
        // word attention: proj E_i = w_enc . ws_i; query term w_dec * h_m
        let we = w("attn_word.w_enc");
        let wd = w("attn_word.w_dec");
        let vv = w("attn_word.v");
        let scores: Vec<f64> = word_states
            .iter()
            .map(|ws| vv[0] * (we[0] * ws[0] + we[1] * ws[1] + wd[0] * h_m).tanh())
            .collect();
        let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
        let zsum: f64 = exps.iter().sum();
        let alpha: Vec<f64> = exps.iter().map(|e| e / zsum).collect();
        let gamma = alpha.clone(); // single sentence: beta = [1]
        let c = [
            gamma[0] * word_states[0][0] + gamma[1] * word_states[1][0],
            gamma[0] * word_states[0][1] + gamma[1] * word_states[1][1],
        ];
        // pointer switch (query: raw decoder state and BOS embedding)
        let wc = w("ptr.w_ctx");
        let wdp = w("ptr.w_dec");
        let wx = w("ptr.w_emb");
        let z = sig(wc[0] * c[0] + wc[1] * c[1] + wdp[0] * h1 + wx[0] * x_bos);
        // generator softmax over [h_m; c]
        let wo = w("out.w");
        let bo = w("out.b");
        let logits: Vec<f64> = (0..v)
            .map(|i| wo[i * 3] * h_m + wo[i * 3 + 1] * c[0] + wo[i * 3 + 2] * c[1] + bo[i])
            .collect();
        let lmx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lexp: Vec<f64> = logits.iter().map(|l| (l - lmx).exp()).collect();
        let lsum: f64 = lexp.iter().sum();
        let p_g: Vec<f64> = lexp.iter().map(|e| e / lsum).collect();
        let mut p_c = vec![0.0; v];
        p_c[aa] = gamma[0];
        p_c[bb] = gamma[1];
        let expect: Vec<f64> = (0..v).map(|i| z * p_g[i] + (1.0 - z) * p_c[i]).collect();

        assert_eq!(got.len(), expect.len());
        for (i, (a, b)) in got.iter().zip(&expect).enumerate() {
            assert!((a - b).abs() < 1e-12, "entry {i}: {a} vs {b}");
        }
    }
}
