//! Model assembly: the named parameter set, per-document constant tensors,
//! and the encoder pass that everything downstream shares.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::encoder::{
    self, bind_gru, bind_sent_attn, bind_word_attn, GruRefs, SentAttnRefs, WordAttnRefs,
};
use crate::error::Result;
use crate::graph::{Graph, TensorId};
use crate::memory::{
    self, bind_compress, bind_read, bind_write, CompressRefs, MemoryBank, ReadRefs, WriteRefs,
};
use crate::tensor::Tensor;
use crate::text::BatchItem;

pub struct Model {
    pub config: RunConfig,
    pub vocab_size: usize,
    pub params: BTreeMap<String, Tensor>,
}

impl Model {
    /// Fresh parameters: uniform(-0.1, 0.1) weights, zero biases,
    /// deterministic per `config.seed`.
    pub fn init(config: RunConfig, vocab_size: usize) -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut p = BTreeMap::new();
        let e = config.embed;
        let h = config.hidden;
        let d = config.state_dim();

        p.insert("embed".to_string(), Tensor::uniform_init(vec![vocab_size, e], &mut rng));
        encoder::init_gru(&mut p, "gru_sen.fwd", e, h, &mut rng);
        encoder::init_gru(&mut p, "gru_sen.bwd", e, h, &mut rng);
        encoder::init_gru(&mut p, "gru_doc.fwd", d, h, &mut rng);
        encoder::init_gru(&mut p, "gru_doc.bwd", d, h, &mut rng);
        encoder::init_gru(&mut p, "gru_dec", e, h, &mut rng);
        p.insert("dec_init.w".to_string(), Tensor::uniform_init(vec![h, d], &mut rng));
        encoder::init_word_attn(&mut p, "attn_word", h, d, h, &mut rng);
        encoder::init_sent_attn(&mut p, "attn_sent", h, d, &mut rng);
        memory::init_compress(&mut p, "mem_comp", config.heads, config.d_a, d, &mut rng);
        memory::init_read(&mut p, "mem_read", h, d, &mut rng);
        memory::init_write(&mut p, "mem_write", h, d, &mut rng);
        p.insert("fuse.w".to_string(), Tensor::uniform_init(vec![h, h + d], &mut rng));
        p.insert("out.w".to_string(), Tensor::uniform_init(vec![vocab_size, h + d], &mut rng));
        p.insert("out.b".to_string(), Tensor::zeros(vec![1, vocab_size]));
        p.insert("ptr.w_ctx".to_string(), Tensor::uniform_init(vec![1, d], &mut rng));
        p.insert("ptr.w_dec".to_string(), Tensor::uniform_init(vec![1, h], &mut rng));
        p.insert("ptr.w_emb".to_string(), Tensor::uniform_init(vec![1, e], &mut rng));

        Model { config, vocab_size, params: p }
    }

    /// Reassemble from checkpointed parts.
    pub fn from_parts(
        config: RunConfig,
        vocab_size: usize,
        params: BTreeMap<String, Tensor>,
    ) -> Model {
        Model { config, vocab_size, params }
    }

    pub fn num_parameters(&self) -> usize {
        self.params.values().map(|t| t.numel()).sum()
    }
}

/// Every parameter bound into one graph.
pub struct ModelRefs {
    pub embed: TensorId,
    pub gru_sen_f: GruRefs,
    pub gru_sen_b: GruRefs,
    pub gru_doc_f: GruRefs,
    pub gru_doc_b: GruRefs,
    pub gru_dec: GruRefs,
    pub dec_init_w: TensorId,
    pub attn_word: WordAttnRefs,
    pub attn_sent: SentAttnRefs,
    pub mem_comp: CompressRefs,
    pub mem_read: ReadRefs,
    pub mem_write: WriteRefs,
    pub fuse_w: TensorId,
    pub out_w: TensorId,
    pub out_b: TensorId,
    pub ptr_w_ctx: TensorId,
    pub ptr_w_dec: TensorId,
    pub ptr_w_emb: TensorId,
}

pub fn bind(g: &mut Graph, model: &Model) -> ModelRefs {
    let p = &model.params;
    ModelRefs {
        embed: g.param("embed", &p["embed"]),
        gru_sen_f: bind_gru(g, p, "gru_sen.fwd"),
        gru_sen_b: bind_gru(g, p, "gru_sen.bwd"),
        gru_doc_f: bind_gru(g, p, "gru_doc.fwd"),
        gru_doc_b: bind_gru(g, p, "gru_doc.bwd"),
        gru_dec: bind_gru(g, p, "gru_dec"),
        dec_init_w: g.param("dec_init.w", &p["dec_init.w"]),
        attn_word: bind_word_attn(g, p, "attn_word"),
        attn_sent: bind_sent_attn(g, p, "attn_sent"),
        mem_comp: bind_compress(g, p, "mem_comp"),
        mem_read: bind_read(g, p, "mem_read"),
        mem_write: bind_write(g, p, "mem_write"),
        fuse_w: g.param("fuse.w", &p["fuse.w"]),
        out_w: g.param("out.w", &p["out.w"]),
        out_b: g.param("out.b", &p["out.b"]),
        ptr_w_ctx: g.param("ptr.w_ctx", &p["ptr.w_ctx"]),
        ptr_w_dec: g.param("ptr.w_dec", &p["ptr.w_dec"]),
        ptr_w_emb: g.param("ptr.w_emb", &p["ptr.w_emb"]),
    }
}

/// Per-document constants in the padded position-major layout
/// (flat position `p = t*L + j` is token `t` of sentence `j`).
pub struct DocTensors {
    pub l: usize,
    pub n_max: usize,
    /// `l * n_max`.
    pub n_pad: usize,
    /// Per position `t`: embedding-lookup indices for all sentences.
    pub step_ids: Vec<Vec<usize>>,
    /// Per position `t`: `[L, hidden]` constant 0/1 mask.
    pub step_masks: Vec<TensorId>,
    /// `[1, n_pad]`.
    pub token_mask_row: TensorId,
    /// `[1, L]`.
    pub sentence_mask_row: TensorId,
    /// Raw copy of the item's sentence mask.
    pub sentence_mask: Vec<f64>,
    /// `[n_pad, L]` one-hot position -> sentence (zero rows on PAD).
    pub sentence_map: TensorId,
    /// `[n_pad, V_ext]` one-hot position -> copy id (zero rows on PAD).
    pub copy_scatter: TensorId,
    /// `vocab + n_oov`.
    pub ext_vocab: usize,
}

pub fn prepare_doc(g: &mut Graph, model: &Model, item: &BatchItem) -> Result<DocTensors> {
    let l = item.l_max;
    let n_max = item.n_max;
    let n_pad = l * n_max;
    let h = model.config.hidden;
    let ext_vocab = model.vocab_size + item.n_oov;

    let mut step_ids = Vec::with_capacity(n_max);
    let mut step_masks = Vec::with_capacity(n_max);
    let mut token_mask_row = vec![0.0; n_pad];
    let mut map_data = vec![0.0; n_pad * l];
    let mut scatter_data = vec![0.0; n_pad * ext_vocab];
    for t in 0..n_max {
        let mut ids = Vec::with_capacity(l);
        let mut mask = vec![0.0; l * h];
        for j in 0..l {
            let grid_at = j * n_max + t;
            ids.push(item.gen_ids[grid_at] as usize);
            let live = item.token_mask[grid_at];
            if live != 0.0 {
                mask[j * h..(j + 1) * h].fill(1.0);
                let p = t * l + j;
                token_mask_row[p] = 1.0;
                map_data[p * l + j] = 1.0;
                scatter_data[p * ext_vocab + item.copy_ids[grid_at] as usize] = 1.0;
            }
        }
        step_ids.push(ids);
        step_masks.push(g.constant(Tensor::new(vec![l, h], mask)?));
    }

    Ok(DocTensors {
        l,
        n_max,
        n_pad,
        step_ids,
        step_masks,
        token_mask_row: g.constant(Tensor::new(vec![1, n_pad], token_mask_row)?),
        sentence_mask_row: g.constant(Tensor::new(vec![1, l], item.sentence_mask.to_vec())?),
        sentence_mask: item.sentence_mask.to_vec(),
        sentence_map: g.constant(Tensor::new(vec![n_pad, l], map_data)?),
        copy_scatter: g.constant(Tensor::new(vec![n_pad, ext_vocab], scatter_data)?),
        ext_vocab,
    })
}

/// Everything the decoder needs about one encoded document.
pub struct Encoded {
    pub doc: DocTensors,
    /// `[n_pad, d]` word states.
    pub word_states: TensorId,
    /// `[n_pad, a]` word states through the attention projection.
    pub word_proj: TensorId,
    /// `[L, d]` sentence-state matrix.
    pub doc_states: TensorId,
    /// `[1, hidden]` initial decoder state.
    pub dec_h0: TensorId,
    /// Encoder memory bank, when the ablation builds one.
    pub bank: Option<MemoryBank>,
}

/// Run both encoders (and compression, if enabled) on one document.
pub fn encode(g: &mut Graph, refs: &ModelRefs, model: &Model, item: &BatchItem) -> Result<Encoded> {
    let doc = prepare_doc(g, model, item)?;
    let mut embed_steps = Vec::with_capacity(doc.n_max);
    for ids in &doc.step_ids {
        embed_steps.push(g.embed_lookup(refs.embed, ids)?);
    }
    let sent = encoder::encode_sentences(
        g,
        &refs.gru_sen_f,
        &refs.gru_sen_b,
        &embed_steps,
        &doc.step_masks,
        doc.l,
        model.config.hidden,
    )?;
    let dstates = encoder::encode_document_states(
        g,
        &refs.gru_doc_f,
        &refs.gru_doc_b,
        sent.sentence_embeddings,
        &doc.sentence_mask,
        model.config.hidden,
    )?;
    let dec_h0 = g.linear(dstates.final_state, refs.dec_init_w)?;
    let word_proj = encoder::project_word_states(g, &refs.attn_word, sent.word_states)?;
    let bank = if model.config.ablation.encoder_mem {
        Some(memory::compress(g, &refs.mem_comp, dstates.doc_states, &doc.sentence_mask)?)
    } else {
        None
    };
    Ok(Encoded {
        doc,
        word_states: sent.word_states,
        word_proj,
        doc_states: dstates.doc_states,
        dec_h0,
        bank,
    })
}
