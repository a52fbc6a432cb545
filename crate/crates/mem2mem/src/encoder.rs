//! Word- and sentence-level recurrent encoders plus the hierarchical
//! attention machinery with coverage.
//!
//! Both encoders are single-layer bidirectional GRUs. The sentence encoder
//! runs all sentences of one document in parallel (rows of the step
//! matrices are sentences, PAD positions frozen by masking); the document
//! encoder runs over the resulting sentence embeddings. Word-level
//! attention uses the additive form with a coverage term; sentence-level
//! attention uses a bilinear score. The two combine into hierarchical token
//! weights by rescaling each token's weight with its sentence's weight and
//! renormalizing.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, TensorId};
use crate::tensor::Tensor;

// ── GRU ─────────────────────────────────────────────────────────────

/// Bound parameter ids for one GRU direction.
#[derive(Clone, Copy)]
pub struct GruRefs {
    pub w_z: TensorId,
    pub u_z: TensorId,
    pub b_z: TensorId,
    pub w_r: TensorId,
    pub u_r: TensorId,
    pub b_r: TensorId,
    pub w_n: TensorId,
    pub u_n: TensorId,
    pub b_n: TensorId,
}

/// Uniform(-0.1, 0.1) weights, zero biases.
pub fn init_gru<R: Rng>(
    params: &mut BTreeMap<String, Tensor>,
    prefix: &str,
    input: usize,
    hidden: usize,
    rng: &mut R,
) {
    for gate in ["z", "r", "n"] {
        params.insert(
            format!("{prefix}.w_{gate}"),
            Tensor::uniform_init(vec![hidden, input], rng),
        );
        params.insert(
            format!("{prefix}.u_{gate}"),
            Tensor::uniform_init(vec![hidden, hidden], rng),
        );
        params.insert(format!("{prefix}.b_{gate}"), Tensor::zeros(vec![1, hidden]));
    }
}

pub fn bind_gru(g: &mut Graph, params: &BTreeMap<String, Tensor>, prefix: &str) -> GruRefs {
    let mut get = |suffix: &str| g.param(&format!("{prefix}.{suffix}"), &params[&format!("{prefix}.{suffix}")]);
    GruRefs {
        w_z: get("w_z"),
        u_z: get("u_z"),
        b_z: get("b_z"),
        w_r: get("w_r"),
        u_r: get("u_r"),
        b_r: get("b_r"),
        w_n: get("w_n"),
        u_n: get("u_n"),
        b_n: get("b_n"),
    }
}

/// One GRU step over a batch of rows.
///
/// ```text
/// z = sigmoid(x W_z^T + h U_z^T + b_z)
/// r = sigmoid(x W_r^T + h U_r^T + b_r)
/// n = tanh(x W_n^T + r * (h U_n^T) + b_n)
/// h' = z * h + (1 - z) * n
/// ```
pub fn gru_step(g: &mut Graph, p: &GruRefs, x: TensorId, h: TensorId) -> Result<TensorId> {
    let gate = |g: &mut Graph, w, u, b| -> Result<TensorId> {
        let xw = g.linear(x, w)?;
        let hu = g.linear(h, u)?;
        let s = g.add(xw, hu)?;
        g.add_bias(s, b)
    };
    let z = {
        let s = gate(g, p.w_z, p.u_z, p.b_z)?;
        g.sigmoid(s)?
    };
    let r = {
        let s = gate(g, p.w_r, p.u_r, p.b_r)?;
        g.sigmoid(s)?
    };
    let n = {
        let xw = g.linear(x, p.w_n)?;
        let hu = g.linear(h, p.u_n)?;
        let rhu = g.mul(r, hu)?;
        let s = g.add(xw, rhu)?;
        let s = g.add_bias(s, p.b_n)?;
        g.tanh(s)?
    };
    let keep = g.mul(z, h)?;
    let one_minus_z = g.one_minus(z)?;
    let update = g.mul(one_minus_z, n)?;
    g.add(keep, update)
}

/// GRU step that only advances rows whose mask is 1 (PAD rows keep their
/// state). `mask` is a constant `[B, hidden]` 0/1 tensor.
pub fn gru_masked_step(
    g: &mut Graph,
    p: &GruRefs,
    x: TensorId,
    h: TensorId,
    mask: TensorId,
) -> Result<TensorId> {
    let h_new = gru_step(g, p, x, h)?;
    let keep_new = g.mul(mask, h_new)?;
    let inv = g.one_minus(mask)?;
    let keep_old = g.mul(inv, h)?;
    g.add(keep_new, keep_old)
}

// ── encoders ────────────────────────────────────────────────────────

/// Output of the sentence-level encoder over one document.
pub struct SentenceEncoding {
    /// `[N_max * L, 2*hidden]`; row `t*L + j` is token `t` of sentence `j`
    /// (position-major, matching the padded attention layout).
    pub word_states: TensorId,
    /// `[L, 2*hidden]`; concatenated final states of both directions.
    pub sentence_embeddings: TensorId,
}

/// Bidirectional pass over all sentences at once. `embed_steps[t]` is the
/// `[L, embed]` matrix of token embeddings at position `t`; `step_masks[t]`
/// the matching `[L, hidden]` constant mask.
pub fn encode_sentences(
    g: &mut Graph,
    fwd: &GruRefs,
    bwd: &GruRefs,
    embed_steps: &[TensorId],
    step_masks: &[TensorId],
    l: usize,
    hidden: usize,
) -> Result<SentenceEncoding> {
    let n_max = embed_steps.len();
    if n_max == 0 {
        return Err(Error::InvalidInput("cannot encode an empty sentence".into()));
    }
    let mut fwd_states = Vec::with_capacity(n_max);
    let mut h = g.zeros(vec![l, hidden]);
    for t in 0..n_max {
        h = gru_masked_step(g, fwd, embed_steps[t], h, step_masks[t])?;
        fwd_states.push(h);
    }
    let mut bwd_states = vec![h; n_max]; // placeholder, overwritten below
    let mut hb = g.zeros(vec![l, hidden]);
    for t in (0..n_max).rev() {
        hb = gru_masked_step(g, bwd, embed_steps[t], hb, step_masks[t])?;
        bwd_states[t] = hb;
    }
    let mut per_step = Vec::with_capacity(n_max);
    for t in 0..n_max {
        per_step.push(g.concat_cols(&[fwd_states[t], bwd_states[t]])?);
    }
    let word_states = if n_max == 1 {
        per_step[0]
    } else {
        g.concat_rows(&per_step)?
    };
    let sentence_embeddings = g.concat_cols(&[fwd_states[n_max - 1], bwd_states[0]])?;
    Ok(SentenceEncoding { word_states, sentence_embeddings })
}

/// Output of the document-level encoder.
pub struct DocumentEncoding {
    /// `[L, 2*hidden]`, the stacked sentence-state matrix.
    pub doc_states: TensorId,
    /// `[1, 2*hidden]`: concatenated final states of both directions,
    /// used to initialize the decoder.
    pub final_state: TensorId,
}

/// Bidirectional GRU over the sentence embeddings (one row at a time).
pub fn encode_document_states(
    g: &mut Graph,
    fwd: &GruRefs,
    bwd: &GruRefs,
    sentence_embeddings: TensorId,
    sentence_mask: &[f64],
    hidden: usize,
) -> Result<DocumentEncoding> {
    let l = sentence_mask.len();
    if l == 0 {
        return Err(Error::InvalidInput("cannot encode an empty document".into()));
    }
    let row_mask: Vec<TensorId> = sentence_mask
        .iter()
        .map(|&m| g.constant(Tensor::new(vec![1, hidden], vec![m; hidden]).unwrap()))
        .collect();
    let mut fwd_states = Vec::with_capacity(l);
    let mut h = g.zeros(vec![1, hidden]);
    for j in 0..l {
        let s_j = g.embed_lookup(sentence_embeddings, &[j])?;
        h = gru_masked_step(g, fwd, s_j, h, row_mask[j])?;
        fwd_states.push(h);
    }
    let mut bwd_states = vec![h; l];
    let mut hb = g.zeros(vec![1, hidden]);
    for j in (0..l).rev() {
        let s_j = g.embed_lookup(sentence_embeddings, &[j])?;
        hb = gru_masked_step(g, bwd, s_j, hb, row_mask[j])?;
        bwd_states[j] = hb;
    }
    let mut rows = Vec::with_capacity(l);
    for j in 0..l {
        rows.push(g.concat_cols(&[fwd_states[j], bwd_states[j]])?);
    }
    let doc_states = if l == 1 { rows[0] } else { g.concat_rows(&rows)? };
    let final_state = g.concat_cols(&[fwd_states[l - 1], bwd_states[0]])?;
    Ok(DocumentEncoding { doc_states, final_state })
}

// ── word-level attention (additive, with coverage) ──────────────────

#[derive(Clone, Copy)]
pub struct WordAttnRefs {
    /// `[a, d]` over word states.
    pub w_enc: TensorId,
    /// `[a, q]` over the decoder query.
    pub w_dec: TensorId,
    /// `[1, a]` over the scalar coverage of each position.
    pub w_cov: TensorId,
    /// `[1, a]` score vector.
    pub v: TensorId,
}

pub fn init_word_attn<R: Rng>(
    params: &mut BTreeMap<String, Tensor>,
    prefix: &str,
    a: usize,
    d: usize,
    q: usize,
    rng: &mut R,
) {
    params.insert(format!("{prefix}.w_enc"), Tensor::uniform_init(vec![a, d], rng));
    params.insert(format!("{prefix}.w_dec"), Tensor::uniform_init(vec![a, q], rng));
    params.insert(format!("{prefix}.w_cov"), Tensor::uniform_init(vec![1, a], rng));
    params.insert(format!("{prefix}.v"), Tensor::uniform_init(vec![1, a], rng));
}

pub fn bind_word_attn(
    g: &mut Graph,
    params: &BTreeMap<String, Tensor>,
    prefix: &str,
) -> WordAttnRefs {
    let mut get = |s: &str| g.param(&format!("{prefix}.{s}"), &params[&format!("{prefix}.{s}")]);
    WordAttnRefs { w_enc: get("w_enc"), w_dec: get("w_dec"), w_cov: get("w_cov"), v: get("v") }
}

/// Precompute `word_states @ w_enc^T` once per document.
pub fn project_word_states(
    g: &mut Graph,
    refs: &WordAttnRefs,
    word_states: TensorId,
) -> Result<TensorId> {
    g.linear(word_states, refs.w_enc)
}

/// Token attention for one step: `softmax(v tanh(E + W_d q + w_c cov))` with
/// PAD positions masked out. Errors if every token is masked.
pub fn word_attention(
    g: &mut Graph,
    refs: &WordAttnRefs,
    query: TensorId,
    enc_proj: TensorId,
    coverage: TensorId,
    mask: TensorId,
) -> Result<TensorId> {
    let n = g.value(enc_proj).dims2().0;
    let dq = g.linear(query, refs.w_dec)?;
    let dq_tiled = g.tile_rows(dq, n)?;
    let cov_col = g.transpose(coverage)?;
    let cov_term = g.matmul(cov_col, refs.w_cov)?;
    let pre = g.add(enc_proj, dq_tiled)?;
    let pre = g.add(pre, cov_term)?;
    let act = g.tanh(pre)?;
    let scores = g.linear(act, refs.v)?; // [n, 1]
    let row = g.transpose(scores)?;
    let masked = g.mask_fill(row, mask, f64::NEG_INFINITY)?;
    g.softmax(masked)
}

// ── sentence-level attention (bilinear) ─────────────────────────────

#[derive(Clone, Copy)]
pub struct SentAttnRefs {
    /// `[q, d]` bilinear form.
    pub w: TensorId,
}

pub fn init_sent_attn<R: Rng>(
    params: &mut BTreeMap<String, Tensor>,
    prefix: &str,
    q: usize,
    d: usize,
    rng: &mut R,
) {
    params.insert(format!("{prefix}.w"), Tensor::uniform_init(vec![q, d], rng));
}

pub fn bind_sent_attn(
    g: &mut Graph,
    params: &BTreeMap<String, Tensor>,
    prefix: &str,
) -> SentAttnRefs {
    SentAttnRefs { w: g.param(&format!("{prefix}.w"), &params[&format!("{prefix}.w")]) }
}

/// `softmax(q W H^T)` over unmasked sentences.
pub fn sentence_attention(
    g: &mut Graph,
    refs: &SentAttnRefs,
    query: TensorId,
    doc_states: TensorId,
    mask: TensorId,
) -> Result<TensorId> {
    let qw = g.matmul(query, refs.w)?;
    let ht = g.transpose(doc_states)?;
    let scores = g.matmul(qw, ht)?;
    let masked = g.mask_fill(scores, mask, f64::NEG_INFINITY)?;
    g.softmax(masked)
}

// ── hierarchical combination ────────────────────────────────────────

/// Rescale token weights by their sentence's weight and renormalize:
/// `gamma_i = beta_{m(i)} alpha_i / sum_l beta_{m(l)} alpha_l`.
///
/// `sentence_map` is a constant `[N, L]` one-hot matrix with
/// `sentence_map[i][m(i)] = 1` (all-zero rows for PAD positions).
pub fn combine_hierarchical(
    g: &mut Graph,
    alpha: TensorId,
    beta: TensorId,
    sentence_map: TensorId,
) -> Result<TensorId> {
    let beta_col = g.transpose(beta)?;
    let beta_tok_col = g.matmul(sentence_map, beta_col)?;
    let beta_tok = g.transpose(beta_tok_col)?;
    let num = g.mul(alpha, beta_tok)?;
    let denom = g.sum(num)?;
    let d = g.data(denom)[0];
    if !(d > 1e-300) {
        return Err(Error::Domain {
            op: "combine-hierarchical",
            detail: format!("renormalization denominator {d} underflowed"),
        });
    }
    g.div(num, denom)
}

/// Running sum of past token attentions; step 0 starts from zeros.
pub fn update_coverage(g: &mut Graph, coverage: TensorId, alpha: TensorId) -> Result<TensorId> {
    g.add(coverage, alpha)
}

/// Optional penalty `sum_i min(alpha_i, cov_i)`. The selector is built from
/// the forward values, which gives exactly the subgradient of `min`.
pub fn coverage_penalty(g: &mut Graph, alpha: TensorId, coverage: TensorId) -> Result<TensorId> {
    let sel: Vec<f64> = g
        .data(alpha)
        .iter()
        .zip(g.data(coverage))
        .map(|(a, c)| if a < c { 1.0 } else { 0.0 })
        .collect();
    let shape = g.shape(alpha).to_vec();
    let sel = g.constant(Tensor::new(shape, sel)?);
    let take_alpha = g.mul(sel, alpha)?;
    let inv = g.one_minus(sel)?;
    let take_cov = g.mul(inv, coverage)?;
    let min = g.add(take_alpha, take_cov)?;
    g.sum(min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    /// Plain-f64 reimplementation of the GRU recurrence, used as the
    /// hand-unrolled oracle. Must stay independent of the tape.
    fn oracle_gru(
        params: &BTreeMap<String, Tensor>,
        prefix: &str,
        xs: &[Vec<f64>],
        hidden: usize,
    ) -> Vec<Vec<f64>> {
        let get = |s: &str| params[&format!("{prefix}.{s}")].clone();
        let matvec = |w: &Tensor, x: &[f64]| -> Vec<f64> {
            let (rows, cols) = w.dims2();
            (0..rows)
                .map(|i| (0..cols).map(|j| w.data()[i * cols + j] * x[j]).sum())
                .collect()
        };
        let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
        let (wz, uz, bz) = (get("w_z"), get("u_z"), get("b_z"));
        let (wr, ur, br) = (get("w_r"), get("u_r"), get("b_r"));
        let (wn, un, bn) = (get("w_n"), get("u_n"), get("b_n"));
        let mut h = vec![0.0; hidden];
        let mut out = Vec::new();
        for x in xs {
            let z: Vec<f64> = matvec(&wz, x)
                .iter()
                .zip(matvec(&uz, &h))
                .zip(bz.data())
                .map(|((a, b), c)| sigmoid(a + b + c))
                .collect();
            let r: Vec<f64> = matvec(&wr, x)
                .iter()
                .zip(matvec(&ur, &h))
                .zip(br.data())
                .map(|((a, b), c)| sigmoid(a + b + c))
                .collect();
            let n: Vec<f64> = matvec(&wn, x)
                .iter()
                .zip(matvec(&un, &h).iter().zip(&r).map(|(a, r)| a * r))
                .zip(bn.data())
                .map(|((a, b), c)| (a + b + c).tanh())
                .collect();
            h = z
                .iter()
                .zip(&h)
                .zip(&n)
                .map(|((z, h), n)| z * h + (1.0 - z) * n)
                .collect();
            out.push(h.clone());
        }
        out
    }

    fn all_ones_masks(g: &mut Graph, steps: usize, l: usize, hidden: usize) -> Vec<TensorId> {
        (0..steps).map(|_| g.constant(Tensor::ones(vec![l, hidden]))).collect()
    }

    #[test]
    fn single_token_sentence_word_state_equals_embedding() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = BTreeMap::new();
        init_gru(&mut params, "fwd", 3, 4, &mut rng);
        init_gru(&mut params, "bwd", 3, 4, &mut rng);
        let mut g = Graph::new();
        let fwd = bind_gru(&mut g, &params, "fwd");
        let bwd = bind_gru(&mut g, &params, "bwd");
        let x = g.constant(t(&[1, 3], &[0.3, -0.2, 0.5]));
        let masks = all_ones_masks(&mut g, 1, 1, 4);
        let enc = encode_sentences(&mut g, &fwd, &bwd, &[x], &masks, 1, 4).unwrap();
        assert_eq!(g.data(enc.word_states), g.data(enc.sentence_embeddings));
    }

    #[test]
    fn zero_weights_give_zero_states() {
        let mut params = BTreeMap::new();
        // init then zero everything
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        init_gru(&mut params, "fwd", 2, 3, &mut rng);
        init_gru(&mut params, "bwd", 2, 3, &mut rng);
        for t in params.values_mut() {
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        let mut g = Graph::new();
        let fwd = bind_gru(&mut g, &params, "fwd");
        let bwd = bind_gru(&mut g, &params, "bwd");
        let x0 = g.constant(t(&[1, 2], &[1.0, 2.0]));
        let x1 = g.constant(t(&[1, 2], &[-1.0, 0.5]));
        let masks = all_ones_masks(&mut g, 2, 1, 3);
        let enc = encode_sentences(&mut g, &fwd, &bwd, &[x0, x1], &masks, 1, 3).unwrap();
        assert!(g.data(enc.word_states).iter().all(|v| *v == 0.0));
        assert!(g.data(enc.sentence_embeddings).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forward_states_match_hand_unrolled_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut params = BTreeMap::new();
        init_gru(&mut params, "fwd", 2, 3, &mut rng);
        init_gru(&mut params, "bwd", 2, 3, &mut rng);
        let xs = vec![vec![0.4, -0.3], vec![0.1, 0.9], vec![-0.7, 0.2]];

        let mut g = Graph::new();
        let fwd = bind_gru(&mut g, &params, "fwd");
        let bwd = bind_gru(&mut g, &params, "bwd");
        let step_ids: Vec<TensorId> =
            xs.iter().map(|x| g.constant(t(&[1, 2], x))).collect();
        let masks = all_ones_masks(&mut g, 3, 1, 3);
        let enc = encode_sentences(&mut g, &fwd, &bwd, &step_ids, &masks, 1, 3).unwrap();

        let expect_fwd = oracle_gru(&params, "fwd", &xs, 3);
        let ws = g.data(enc.word_states); // rows: [fwd_t ; bwd_t]
        for (step, expected) in expect_fwd.iter().enumerate() {
            for (k, e) in expected.iter().enumerate() {
                let got = ws[step * 6 + k];
                assert!((got - e).abs() < 1e-12, "step {step} unit {k}: {got} vs {e}");
            }
        }
        // backward direction = oracle over reversed inputs, reported reversed
        let mut rev = xs.clone();
        rev.reverse();
        let expect_bwd = oracle_gru(&params, "bwd", &rev, 3);
        for step in 0..3 {
            let oracle_idx = 2 - step;
            for k in 0..3 {
                let got = ws[step * 6 + 3 + k];
                let e = expect_bwd[oracle_idx][k];
                assert!((got - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn document_encoder_single_sentence_has_one_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = BTreeMap::new();
        init_gru(&mut params, "df", 4, 2, &mut rng);
        init_gru(&mut params, "db", 4, 2, &mut rng);
        let mut g = Graph::new();
        let fwd = bind_gru(&mut g, &params, "df");
        let bwd = bind_gru(&mut g, &params, "db");
        let s = g.constant(t(&[1, 4], &[0.1, 0.2, 0.3, 0.4]));
        let enc = encode_document_states(&mut g, &fwd, &bwd, s, &[1.0], 2).unwrap();
        assert_eq!(g.shape(enc.doc_states), &[1, 4]);
        assert_eq!(g.data(enc.doc_states), g.data(enc.final_state));
    }

    #[test]
    fn permuting_sentences_changes_doc_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut params = BTreeMap::new();
        init_gru(&mut params, "df", 2, 2, &mut rng);
        init_gru(&mut params, "db", 2, 2, &mut rng);
        let run = |rows: &[f64]| {
            let mut g = Graph::new();
            let fwd = bind_gru(&mut g, &params, "df");
            let bwd = bind_gru(&mut g, &params, "db");
            let s = g.constant(t(&[2, 2], rows));
            let enc = encode_document_states(&mut g, &fwd, &bwd, s, &[1.0, 1.0], 2).unwrap();
            g.data(enc.doc_states).to_vec()
        };
        let a = run(&[0.5, -0.5, 0.9, 0.1]);
        let b = run(&[0.9, 0.1, 0.5, -0.5]);
        assert_ne!(a, b);
    }

    #[test]
    fn document_encoder_matches_hand_unrolled_two_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut params = BTreeMap::new();
        init_gru(&mut params, "df", 2, 2, &mut rng);
        init_gru(&mut params, "db", 2, 2, &mut rng);
        let rows = [vec![0.3, -0.6], vec![0.8, 0.05]];
        let mut g = Graph::new();
        let fwd = bind_gru(&mut g, &params, "df");
        let bwd = bind_gru(&mut g, &params, "db");
        let s = g.constant(t(&[2, 2], &[0.3, -0.6, 0.8, 0.05]));
        let enc = encode_document_states(&mut g, &fwd, &bwd, s, &[1.0, 1.0], 2).unwrap();
        let expect = oracle_gru(&params, "df", &rows, 2);
        let h = g.data(enc.doc_states);
        for j in 0..2 {
            for k in 0..2 {
                assert!((h[j * 4 + k] - expect[j][k]).abs() < 1e-12);
            }
        }
    }

    fn word_attn_fixture(
        g: &mut Graph,
        params: &mut BTreeMap<String, Tensor>,
        a: usize,
        d: usize,
        q: usize,
        seed: u64,
    ) -> WordAttnRefs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_word_attn(params, "wa", a, d, q, &mut rng);
        bind_word_attn(g, params, "wa")
    }

    #[test]
    fn identical_states_and_no_coverage_weight_give_uniform_alpha() {
        let mut params = BTreeMap::new();
        let mut g = Graph::new();
        let refs = word_attn_fixture(&mut g, &mut params, 3, 2, 2, 4);
        // zero out the coverage weight so cov cannot break symmetry
        for v in params.get_mut("wa.w_cov").unwrap().data_mut() {
            *v = 0.0;
        }
        let mut g = Graph::new();
        let refs2 = bind_word_attn(&mut g, &params, "wa");
        let _ = refs;
        let states = g.constant(t(&[3, 2], &[0.4, 0.6, 0.4, 0.6, 0.4, 0.6]));
        let proj = project_word_states(&mut g, &refs2, states).unwrap();
        let query = g.constant(t(&[1, 2], &[0.2, -0.1]));
        let cov = g.constant(t(&[1, 3], &[0.0, 0.7, 0.2]));
        let mask = g.constant(Tensor::ones(vec![1, 3]));
        let alpha = word_attention(&mut g, &refs2, query, proj, cov, mask).unwrap();
        for v in g.data(alpha) {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_unmasked_token_gets_all_attention() {
        let mut params = BTreeMap::new();
        let mut g = Graph::new();
        let refs = word_attn_fixture(&mut g, &mut params, 3, 2, 2, 5);
        let states = g.constant(t(&[3, 2], &[0.4, 0.6, -0.2, 0.1, 0.9, 0.9]));
        let proj = project_word_states(&mut g, &refs, states).unwrap();
        let query = g.constant(t(&[1, 2], &[0.2, -0.1]));
        let cov = g.constant(t(&[1, 3], &[0.0, 0.0, 0.0]));
        let mask = g.constant(t(&[1, 3], &[0.0, 1.0, 0.0]));
        let alpha = word_attention(&mut g, &refs, query, proj, cov, mask).unwrap();
        assert_eq!(g.data(alpha), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn all_masked_tokens_error() {
        let mut params = BTreeMap::new();
        let mut g = Graph::new();
        let refs = word_attn_fixture(&mut g, &mut params, 2, 2, 2, 6);
        let states = g.constant(t(&[2, 2], &[0.4, 0.6, -0.2, 0.1]));
        let proj = project_word_states(&mut g, &refs, states).unwrap();
        let query = g.constant(t(&[1, 2], &[0.2, -0.1]));
        let cov = g.constant(t(&[1, 2], &[0.0, 0.0]));
        let mask = g.constant(t(&[1, 2], &[0.0, 0.0]));
        assert!(matches!(
            word_attention(&mut g, &refs, query, proj, cov, mask),
            Err(Error::AllMasked { .. })
        ));
    }

    #[test]
    fn word_attention_matches_hand_computed_scores() {
        // a = 1, d = 1, q = 1: score_i = v * tanh(we*s_i + wd*q + wc*cov_i)
        let mut params = BTreeMap::new();
        params.insert("wa.w_enc".into(), t(&[1, 1], &[2.0]));
        params.insert("wa.w_dec".into(), t(&[1, 1], &[0.5]));
        params.insert("wa.w_cov".into(), t(&[1, 1], &[-1.0]));
        params.insert("wa.v".into(), t(&[1, 1], &[1.5]));
        let mut g = Graph::new();
        let refs = bind_word_attn(&mut g, &params, "wa");
        let states = g.constant(t(&[3, 1], &[0.1, -0.4, 0.7]));
        let proj = project_word_states(&mut g, &refs, states).unwrap();
        let query = g.constant(t(&[1, 1], &[0.6]));
        let cov = g.constant(t(&[1, 3], &[0.2, 0.0, 0.5]));
        let mask = g.constant(Tensor::ones(vec![1, 3]));
        let alpha = word_attention(&mut g, &refs, query, proj, cov, mask).unwrap();

        let score = |s: f64, c: f64| 1.5 * (2.0 * s + 0.5 * 0.6 + (-1.0) * c).tanh();
        let scores = [score(0.1, 0.2), score(-0.4, 0.0), score(0.7, 0.5)];
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        for (got, want) in g.data(alpha).iter().zip(exps.iter().map(|e| e / z)) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn sentence_attention_single_sentence_is_one() {
        let mut params = BTreeMap::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        init_sent_attn(&mut params, "sa", 2, 3, &mut rng);
        let mut g = Graph::new();
        let refs = bind_sent_attn(&mut g, &params, "sa");
        let h = g.constant(t(&[1, 3], &[0.1, 0.2, 0.3]));
        let q = g.constant(t(&[1, 2], &[0.4, -0.4]));
        let mask = g.constant(Tensor::ones(vec![1, 1]));
        let beta = sentence_attention(&mut g, &refs, q, h, mask).unwrap();
        assert_eq!(g.data(beta), &[1.0]);
    }

    #[test]
    fn identical_doc_states_give_uniform_beta() {
        let mut params = BTreeMap::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        init_sent_attn(&mut params, "sa", 2, 3, &mut rng);
        let mut g = Graph::new();
        let refs = bind_sent_attn(&mut g, &params, "sa");
        let h = g.constant(t(&[4, 3], &[0.5, -0.1, 0.2].repeat(4)));
        let q = g.constant(t(&[1, 2], &[0.4, -0.4]));
        let mask = g.constant(Tensor::ones(vec![1, 4]));
        let beta = sentence_attention(&mut g, &refs, q, h, mask).unwrap();
        for v in g.data(beta) {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn sentence_attention_matches_hand_bilinear() {
        let mut params = BTreeMap::new();
        params.insert("sa.w".into(), t(&[1, 2], &[2.0, -1.0]));
        let mut g = Graph::new();
        let refs = bind_sent_attn(&mut g, &params, "sa");
        let h = g.constant(t(&[2, 2], &[0.3, 0.1, -0.2, 0.6]));
        let q = g.constant(t(&[1, 1], &[0.5]));
        let mask = g.constant(Tensor::ones(vec![1, 2]));
        let beta = sentence_attention(&mut g, &refs, q, h, mask).unwrap();
        // qW = [1.0, -0.5]; scores = [0.3-0.05, -0.2-0.3] = [0.25, -0.5]
        let exps = [(0.25f64 - 0.25).exp(), (-0.5f64 - 0.25).exp()];
        let z: f64 = exps.iter().sum();
        for (got, want) in g.data(beta).iter().zip(exps.iter().map(|e| e / z)) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    fn one_hot_map(g: &mut Graph, map: &[usize], l: usize) -> TensorId {
        let n = map.len();
        let mut data = vec![0.0; n * l];
        for (i, &j) in map.iter().enumerate() {
            data[i * l + j] = 1.0;
        }
        g.constant(t(&[n, l], &data))
    }

    #[test]
    fn single_sentence_gamma_equals_alpha() {
        let mut g = Graph::new();
        let alpha = g.constant(t(&[1, 3], &[0.2, 0.5, 0.3]));
        let beta = g.constant(t(&[1, 1], &[1.0]));
        let map = one_hot_map(&mut g, &[0, 0, 0], 1);
        let gamma = combine_hierarchical(&mut g, alpha, beta, map).unwrap();
        for (a, b) in g.data(gamma).iter().zip([0.2, 0.5, 0.3]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_beta_cancels_in_gamma() {
        let mut g = Graph::new();
        let alpha = g.constant(t(&[1, 4], &[0.1, 0.4, 0.25, 0.25]));
        let beta = g.constant(t(&[1, 2], &[0.5, 0.5]));
        let map = one_hot_map(&mut g, &[0, 0, 1, 1], 2);
        let gamma = combine_hierarchical(&mut g, alpha, beta, map).unwrap();
        for (a, b) in g.data(gamma).iter().zip([0.1, 0.4, 0.25, 0.25]) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn gamma_matches_hand_evaluation() {
        // alpha = [.5,.5,0], beta = [.2,.8], m = [0,1,1] -> gamma = [.2,.8,0]
        let mut g = Graph::new();
        let alpha = g.constant(t(&[1, 3], &[0.5, 0.5, 0.0]));
        let beta = g.constant(t(&[1, 2], &[0.2, 0.8]));
        let map = one_hot_map(&mut g, &[0, 1, 1], 2);
        let gamma = combine_hierarchical(&mut g, alpha, beta, map).unwrap();
        for (a, b) in g.data(gamma).iter().zip([0.2, 0.8, 0.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_denominator_is_a_renormalization_error() {
        let mut g = Graph::new();
        let alpha = g.constant(t(&[1, 2], &[1.0, 0.0]));
        let beta = g.constant(t(&[1, 2], &[0.0, 1.0]));
        let map = one_hot_map(&mut g, &[0, 1], 2);
        assert!(matches!(
            combine_hierarchical(&mut g, alpha, beta, map),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn coverage_accumulates_step_by_step() {
        let mut g = Graph::new();
        let cov0 = g.zeros(vec![1, 2]);
        assert_eq!(g.data(cov0), &[0.0, 0.0]);
        let a0 = g.constant(t(&[1, 2], &[1.0, 0.0]));
        let cov1 = update_coverage(&mut g, cov0, a0).unwrap();
        assert_eq!(g.data(cov1), &[1.0, 0.0]);
        let a1 = g.constant(t(&[1, 2], &[0.0, 1.0]));
        let cov2 = update_coverage(&mut g, cov1, a1).unwrap();
        assert_eq!(g.data(cov2), &[1.0, 1.0]);
    }

    #[test]
    fn attention_distributions_sum_to_one_over_random_seeds() {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut params = BTreeMap::new();
            init_word_attn(&mut params, "wa", 3, 2, 2, &mut rng);
            init_sent_attn(&mut params, "sa", 2, 2, &mut rng);
            let mut g = Graph::new();
            let wa = bind_word_attn(&mut g, &params, "wa");
            let sa = bind_sent_attn(&mut g, &params, "sa");
            let n = 4;
            let states = g.constant(Tensor::uniform_init(vec![n, 2], &mut rng));
            let proj = project_word_states(&mut g, &wa, states).unwrap();
            let query = g.constant(Tensor::uniform_init(vec![1, 2], &mut rng));
            let cov = g.constant(Tensor::uniform_init(vec![1, n], &mut rng));
            // random mask, at least one unmasked
            let mut m = vec![0.0; n];
            m[seed as usize % n] = 1.0;
            for v in m.iter_mut() {
                if rand::Rng::gen_bool(&mut rng, 0.5) {
                    *v = 1.0;
                }
            }
            let mask = g.constant(t(&[1, n], &m));
            let alpha = word_attention(&mut g, &wa, query, proj, cov, mask).unwrap();
            let asum: f64 = g.data(alpha).iter().sum();
            assert!((asum - 1.0).abs() < 1e-6);
            assert!(g.data(alpha).iter().all(|v| *v >= 0.0));

            let h = g.constant(Tensor::uniform_init(vec![2, 2], &mut rng));
            let smask = g.constant(Tensor::ones(vec![1, 2]));
            let beta = sentence_attention(&mut g, &sa, query, h, smask).unwrap();
            let bsum: f64 = g.data(beta).iter().sum();
            assert!((bsum - 1.0).abs() < 1e-6);

            let map = one_hot_map(&mut g, &[0, 0, 1, 1], 2);
            let gamma = combine_hierarchical(&mut g, alpha, beta, map).unwrap();
            let gsum: f64 = g.data(gamma).iter().sum();
            assert!((gsum - 1.0).abs() < 1e-6);
            assert!(g.data(gamma).iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn encoder_gradients_match_finite_differences_end_to_end() {
        // loss = sum of doc states after sentence + document encoders
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut params = BTreeMap::new();
        init_gru(&mut params, "sf", 2, 2, &mut rng);
        init_gru(&mut params, "sb", 2, 2, &mut rng);
        init_gru(&mut params, "df", 4, 2, &mut rng);
        init_gru(&mut params, "db", 4, 2, &mut rng);
        let xs: Vec<Tensor> = (0..3).map(|_| Tensor::uniform_init(vec![2, 2], &mut rng)).collect();

        let build = |g: &mut Graph, p: &BTreeMap<String, Tensor>| -> TensorId {
            let sf = bind_gru(g, p, "sf");
            let sb = bind_gru(g, p, "sb");
            let df = bind_gru(g, p, "df");
            let db = bind_gru(g, p, "db");
            let steps: Vec<TensorId> = xs.iter().map(|x| g.constant(x.clone())).collect();
            let masks: Vec<TensorId> =
                (0..3).map(|_| g.constant(Tensor::ones(vec![2, 2]))).collect();
            let enc = encode_sentences(g, &sf, &sb, &steps, &masks, 2, 2).unwrap();
            let doc =
                encode_document_states(g, &df, &db, enc.sentence_embeddings, &[1.0, 1.0], 2)
                    .unwrap();
            let a = g.sum(doc.doc_states).unwrap();
            let b = g.frob_norm_sq(enc.word_states).unwrap();
            g.add(a, b).unwrap()
        };

        let mut g = Graph::new();
        let loss = build(&mut g, &params);
        let analytic = g.grad(loss).unwrap();
        let numeric = gradcheck::central_difference(&params, 1e-5, |p| {
            let mut g = Graph::new();
            let loss = build(&mut g, p);
            g.data(loss)[0]
        });
        let report = gradcheck::compare(&analytic, &numeric, 1e-4, 1e-7);
        assert!(report.ok(), "worst {} at {}", report.worst_rel, report.worst_at);
    }
}
