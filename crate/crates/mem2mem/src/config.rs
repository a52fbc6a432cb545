//! Run configuration: model sizes, optimization, truncation limits and
//! ablation flags.
//!
//! The flag chain mirrors the model build-up: each ablation stage enables one
//! more mechanism on top of the previous one, so only prefixes of
//! `encoder_mem < decoder_mem < mem_transfer < reg_comp < reg_read` are
//! valid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::TruncationLimits;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    /// Build the compressed encoder memory bank and read from it.
    pub encoder_mem: bool,
    /// Give the decoder a writable memory (gated writes each step).
    pub decoder_mem: bool,
    /// Initialize the decoder memory from the encoder bank instead of zeros.
    pub mem_transfer: bool,
    /// Add the compression-diversity penalty to the loss.
    pub reg_comp: bool,
    /// Add the memory-read penalty to the loss.
    pub reg_read: bool,
}

impl AblationFlags {
    pub fn baseline() -> Self {
        AblationFlags::default()
    }

    pub fn full() -> Self {
        AblationFlags {
            encoder_mem: true,
            decoder_mem: true,
            mem_transfer: true,
            reg_comp: true,
            reg_read: true,
        }
    }

    /// The staged variants, weakest first: baseline, +encoder memory,
    /// +decoder writes, +transfer, +compression penalty, +read penalty.
    pub fn ladder() -> [AblationFlags; 6] {
        let mut out = [AblationFlags::default(); 6];
        for (i, f) in out.iter_mut().enumerate() {
            f.encoder_mem = i >= 1;
            f.decoder_mem = i >= 2;
            f.mem_transfer = i >= 3;
            f.reg_comp = i >= 4;
            f.reg_read = i >= 5;
        }
        out
    }

    pub fn uses_memory(&self) -> bool {
        self.encoder_mem || self.decoder_mem
    }

    pub fn validate(&self) -> Result<()> {
        let chain = [
            (self.decoder_mem, self.encoder_mem, "decoder_mem requires encoder_mem"),
            (self.mem_transfer, self.decoder_mem, "mem_transfer requires decoder_mem"),
            (self.reg_comp, self.mem_transfer, "reg_comp requires mem_transfer"),
            (self.reg_read, self.reg_comp, "reg_read requires reg_comp"),
        ];
        for (flag, requirement, msg) in chain {
            if flag && !requirement {
                return Err(Error::Config(msg.into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Token embedding size.
    pub embed: usize,
    /// GRU hidden size per direction; concatenated states have size `2*hidden`.
    pub hidden: usize,
    /// Hidden size of the compression self-attention.
    pub d_a: usize,
    /// Number of memory heads.
    pub heads: usize,
    pub lambda_comp: f64,
    pub lambda_read: f64,
    pub lr: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beam: usize,
    pub max_sections: usize,
    pub max_section_tokens: usize,
    pub max_summary_tokens: usize,
    pub vocab_max: usize,
    pub ablation: AblationFlags,
    /// Feed coverage back into word attention scores (always on); also add
    /// the coverage penalty term to the loss when this flag is set.
    pub coverage_loss: bool,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            embed: 128,
            hidden: 256,
            d_a: 128,
            heads: 10,
            lambda_comp: 1e-4,
            lambda_read: 1e-2,
            lr: 2e-4,
            clip_norm: 2.0,
            batch_size: 16,
            epochs: 15,
            beam: 4,
            max_sections: 4,
            max_section_tokens: 500,
            max_summary_tokens: 200,
            vocab_max: 50_000,
            ablation: AblationFlags::full(),
            coverage_loss: false,
            seed: 1,
        }
    }
}

impl RunConfig {
    /// Small profile that trains in minutes on one CPU core.
    pub fn desk() -> Self {
        RunConfig {
            embed: 16,
            hidden: 32,
            d_a: 16,
            heads: 4,
            lr: 2e-3,
            vocab_max: 2_000,
            ..RunConfig::default()
        }
    }

    /// Tiny profile for exhaustive gradient checks.
    pub fn micro() -> Self {
        RunConfig {
            embed: 8,
            hidden: 16,
            d_a: 8,
            heads: 3,
            vocab_max: 50,
            ..RunConfig::default()
        }
    }

    /// Size of concatenated bidirectional states (rows of the sentence-state
    /// matrix, memory slots, attention contexts).
    pub fn state_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn limits(&self) -> TruncationLimits {
        TruncationLimits {
            max_sections: self.max_sections,
            max_section_tokens: self.max_section_tokens,
            max_summary_tokens: self.max_summary_tokens,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ablation.validate()?;
        let positive = [
            (self.embed, "embed"),
            (self.hidden, "hidden"),
            (self.d_a, "d_a"),
            (self.heads, "heads"),
            (self.batch_size, "batch_size"),
            (self.beam, "beam"),
            (self.max_sections, "max_sections"),
            (self.max_section_tokens, "max_section_tokens"),
            (self.vocab_max, "vocab_max"),
        ];
        for (v, name) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.max_summary_tokens < 2 {
            return Err(Error::Config("max_summary_tokens must be at least 2".into()));
        }
        if self.lambda_comp < 0.0 || self.lambda_read < 0.0 {
            return Err(Error::Config("regularizer weights must be nonnegative".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        Ok(())
    }

    /// Parse a flat `key = value` config file (TOML syntax) over defaults.
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{path:?}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
