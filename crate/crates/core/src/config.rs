use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which objective terms are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Affine sigmoid classifier on span embeddings, no variational paths.
    Baseline,
    /// Supervised information bottleneck only.
    Supvib,
    /// Bottleneck plus span reconstruction.
    SupvibSpanreco,
    /// Bottleneck plus span reconstruction and synonym generation.
    All,
}

impl Mode {
    pub fn has_vib(self) -> bool {
        self != Mode::Baseline
    }

    pub fn has_sr(self) -> bool {
        matches!(self, Mode::SupvibSpanreco | Mode::All)
    }

    pub fn has_sg(self) -> bool {
        self == Mode::All
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Supvib => "supvib",
            Mode::SupvibSpanreco => "supvib_spanreco",
            Mode::All => "all",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "supvib" => Ok(Mode::Supvib),
            "supvib_spanreco" => Ok(Mode::SupvibSpanreco),
            "all" => Ok(Mode::All),
            _ => Err(Error::Config(format!("unknown mode `{s}`"))),
        }
    }
}

/// How the span-reconstruction and synonym-generation posteriors share heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharingMode {
    SharedMu,
    SharedMuSigma,
    Independent,
}

impl FromStr for SharingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared_mu" => Ok(SharingMode::SharedMu),
            "shared_mu_sigma" => Ok(SharingMode::SharedMuSigma),
            "independent" => Ok(SharingMode::Independent),
            _ => Err(Error::Config(format!("unknown sharing mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub mode: Mode,
    pub sharing: SharingMode,
    /// Weight of the bottleneck compression term.
    pub beta: f64,
    /// Weight of the auxiliary VAE terms in the joint objective.
    pub gamma: f64,

    pub word_dim: usize,
    pub encoder_hidden: usize,
    /// Contextual token vector size `d`; span embeddings have size `3d`.
    pub encoder_dim: usize,
    /// VAE latent size `k`.
    pub latent_dim: usize,
    pub vib_hidden: usize,
    /// Bottleneck latent size `k_3`.
    pub vib_latent_dim: usize,
    pub decoder_embed_dim: usize,
    pub decoder_hidden: usize,

    pub batch_size: usize,
    pub max_span_length: usize,
    pub max_sentence_length: usize,
    pub max_decode_length: usize,
    pub min_freq: usize,
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub ner_lr: f64,
    pub vae_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Keep probability for non-entity spans in the bottleneck loss; 1.0 keeps all.
    pub negative_keep: f64,
    pub threshold: f64,
    pub seed: u64,

    /// Recurrent weights are drawn from `U(-recurrent_init, recurrent_init)`.
    pub recurrent_init: f64,
    /// Initial bias of the posterior log-variance heads.
    pub logvar_bias_init: f64,
    /// KL weight inside the VAE losses during pretraining. Joint training
    /// always uses the full ELBO.
    pub pretrain_kl_weight: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            mode: Mode::All,
            sharing: SharingMode::SharedMu,
            beta: 1e-4,
            gamma: 1e-4,
            word_dim: 32,
            encoder_hidden: 32,
            encoder_dim: 32,
            latent_dim: 64,
            vib_hidden: 64,
            vib_latent_dim: 32,
            decoder_embed_dim: 64,
            decoder_hidden: 64,
            batch_size: 16,
            max_span_length: 14,
            max_sentence_length: 512,
            max_decode_length: 16,
            min_freq: 1,
            epochs: 20,
            pretrain_epochs: 10,
            ner_lr: 2e-2,
            vae_lr: 1e-2,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            negative_keep: 1.0,
            threshold: 0.5,
            seed: 13,
            recurrent_init: 0.3,
            logvar_bias_init: -4.0,
            pretrain_kl_weight: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} outside [0, 1]")))
            }
        };
        unit("beta", self.beta)?;
        unit("gamma", self.gamma)?;
        unit("pretrain_kl_weight", self.pretrain_kl_weight)?;
        if !(self.recurrent_init > 0.0 && self.recurrent_init.is_finite()) {
            return Err(Error::Config("recurrent_init must be positive".into()));
        }
        if !self.logvar_bias_init.is_finite() {
            return Err(Error::Config("logvar_bias_init must be finite".into()));
        }
        let positive = [
            ("word_dim", self.word_dim),
            ("encoder_hidden", self.encoder_hidden),
            ("encoder_dim", self.encoder_dim),
            ("latent_dim", self.latent_dim),
            ("vib_hidden", self.vib_hidden),
            ("vib_latent_dim", self.vib_latent_dim),
            ("decoder_embed_dim", self.decoder_embed_dim),
            ("decoder_hidden", self.decoder_hidden),
            ("batch_size", self.batch_size),
            ("max_span_length", self.max_span_length),
            ("max_sentence_length", self.max_sentence_length),
            ("max_decode_length", self.max_decode_length),
            ("min_freq", self.min_freq),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.vib_latent_dim > 3 * self.encoder_dim {
            return Err(Error::Config(format!(
                "vib_latent_dim {} exceeds the span embedding size {}",
                self.vib_latent_dim,
                3 * self.encoder_dim
            )));
        }
        if !(self.negative_keep > 0.0 && self.negative_keep <= 1.0) {
            return Err(Error::Config(format!(
                "negative_keep = {} outside (0, 1]",
                self.negative_keep
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold = {} outside (0, 1)",
                self.threshold
            )));
        }
        for (name, v) in [
            ("ner_lr", self.ner_lr),
            ("vae_lr", self.vae_lr),
            ("adam_eps", self.adam_eps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} outside [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn span_dim(&self) -> usize {
        3 * self.encoder_dim
    }
}
