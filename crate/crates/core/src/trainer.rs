//! Joint training loop: optional VAE pretraining followed by the joint
//! objective, with two learning-rate groups.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::corpus::{EntityTypes, Sentence, Vocabulary};
use crate::encoder::Noise;
use crate::error::{Error, Result};
use crate::model::{param_group, LossPlan, Model, ParamGroup};
use crate::optim::{Adam, AdamConfig};
use crate::{Graph, Real};

/// Logged decomposition of one optimization step. Absent components are `None`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub total: Real,
    pub vib: Option<Real>,
    pub sr: Option<Real>,
    pub sg: Option<Real>,
}

impl LossRecord {
    fn breakdown(&self) -> String {
        let f = |x: Option<Real>| x.map_or("-".to_string(), |v| format!("{v}"));
        format!(
            "L={} L_VIB={} L_SR={} L_SG={}",
            self.total,
            f(self.vib),
            f(self.sr),
            f(self.sg)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: u64,
    pub epoch: usize,
    pub optimizer: Adam<Real>,
    pub rng: ChaCha8Rng,
    pub pretrain_history: Vec<LossRecord>,
    pub history: Vec<LossRecord>,
}

impl TrainState {
    pub fn new(config: &ModelConfig, rng: ChaCha8Rng) -> Self {
        let adam = AdamConfig {
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_eps,
        };
        TrainState {
            step: 0,
            epoch: 0,
            optimizer: Adam::new(adam),
            rng,
            pretrain_history: Vec::new(),
            history: Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub state: TrainState,
}

impl Trainer {
    /// Initializes a model from `config.seed`; the same generator then
    /// drives shuffling and noise, so one seed fixes the whole run.
    pub fn init(config: ModelConfig, vocab: Vocabulary, types: EntityTypes) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = Model::new(config, vocab, types, &mut rng)?;
        let state = TrainState::new(&model.config, rng);
        Ok(Trainer { model, state })
    }

    pub fn from_parts(model: Model, state: TrainState) -> Self {
        Trainer { model, state }
    }

    fn learning_rate(&self, name: &str) -> Real {
        match param_group(name) {
            ParamGroup::Ner => self.model.config.ner_lr,
            ParamGroup::Vae => self.model.config.vae_lr,
        }
    }

    /// One optimizer step on a batch. Non-finite losses or gradients abort
    /// with the step number and component breakdown; parameters are not
    /// modified in that case.
    pub fn train_step(&mut self, batch: &[&Sentence], plan: LossPlan) -> Result<LossRecord> {
        let mut g = Graph::new();
        let loss = {
            let mut noise = Noise::Sample(&mut self.state.rng);
            self.model.batch_loss(&mut g, batch, plan, &mut noise)?
        };
        let v = loss.values(&g);
        let record = LossRecord {
            step: self.state.step + 1,
            total: v.total,
            vib: v.vib,
            sr: v.sr,
            sg: v.sg,
        };
        if !record.total.is_finite() {
            return Err(Error::NonFinite {
                step: record.step,
                breakdown: record.breakdown(),
            });
        }
        let grads = g.backward(loss.total)?;
        if !grads.is_finite() {
            return Err(Error::NonFinite {
                step: record.step,
                breakdown: format!("{} (gradient)", record.breakdown()),
            });
        }
        let rates: Vec<(String, Real)> = self
            .model
            .params
            .iter()
            .map(|(_, e)| (e.name.clone(), self.learning_rate(&e.name)))
            .collect();
        let lookup = |name: &str| rates.iter().find(|(n, _)| n == name).map_or(0.0, |r| r.1);
        self.state
            .optimizer
            .step(&mut self.model.params, &grads, lookup);
        self.state.step += 1;
        Ok(record)
    }

    fn epoch(&mut self, corpus: &[Sentence], plan: LossPlan) -> Result<Vec<LossRecord>> {
        let mut order: Vec<usize> = (0..corpus.len())
            .filter(|&i| !corpus[i].tokens.is_empty())
            .collect();
        order.shuffle(&mut self.state.rng);
        let mut out = Vec::new();
        for chunk in order.chunks(self.model.config.batch_size) {
            let batch: Vec<&Sentence> = chunk.iter().map(|&i| &corpus[i]).collect();
            if !plan.classify && batch.iter().all(|s| s.entities.is_empty()) {
                continue;
            }
            out.push(self.train_step(&batch, plan)?);
        }
        Ok(out)
    }

    /// Trains the reconstruction (and, in mode `all`, synonym) VAE alone on
    /// gold spans for `pretrain_epochs`. Skipped for modes without VAEs.
    pub fn pretrain_vaes(&mut self, corpus: &[Sentence]) -> Result<Vec<LossRecord>> {
        let mode = self.model.config.mode;
        if !mode.has_sr() {
            return Ok(Vec::new());
        }
        if corpus.iter().all(|s| s.entities.is_empty()) {
            return Err(Error::Data(
                "cannot pretrain VAEs on a corpus without gold entities".into(),
            ));
        }
        let mut all = Vec::new();
        for _ in 0..self.model.config.pretrain_epochs {
            let recs = self.epoch(
                corpus,
                LossPlan::pretrain(mode, self.model.config.pretrain_kl_weight),
            )?;
            self.state.pretrain_history.extend_from_slice(&recs);
            all.extend(recs);
        }
        Ok(all)
    }

    /// Runs one joint-objective epoch and appends to the loss history.
    pub fn train_joint_epoch(&mut self, corpus: &[Sentence]) -> Result<Vec<LossRecord>> {
        let recs = self.epoch(corpus, LossPlan::joint(self.model.config.mode))?;
        self.state.history.extend_from_slice(&recs);
        self.state.epoch += 1;
        Ok(recs)
    }

    /// Joint training for `config.epochs`, calling `on_epoch` after each epoch.
    pub fn train_joint(
        &mut self,
        corpus: &[Sentence],
        mut on_epoch: impl FnMut(&Trainer, usize) -> Result<()>,
    ) -> Result<()> {
        for e in 0..self.model.config.epochs {
            let recs = self.train_joint_epoch(corpus)?;
            if let Some(last) = recs.last() {
                log::info!("epoch {} step {} {}", e + 1, last.step, last.breakdown());
            }
            on_epoch(self, e + 1)?;
        }
        Ok(())
    }
}
