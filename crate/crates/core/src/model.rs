//! The joint model: shared contextualizer, posterior heads, decoders,
//! bottleneck classifier, and the per-batch objective.

use rand::Rng;

use crate::autodiff::{ParamId, Var};
use crate::config::{Mode, ModelConfig};
use crate::corpus::{enumerate_spans, EntityTypes, Sentence, Vocabulary};
use crate::decoder::{elbo_loss_sg, elbo_loss_sr, Decoder, LossTerm};
use crate::encoder::{
    span_embeddings, BiLstmContextualizer, Component, ContextualEmbeddings, Contextualizer,
    GaussianPosterior, Noise, PosteriorHeadSet,
};
use crate::error::{Error, Result};
use crate::nn::{instantiate, Affine, ParamSpec};
use crate::vib::{threshold_rows, vib_loss, Prediction, VibLoss, VibParams};
use crate::{Graph, ParamStore, Real, Tensor};

/// Optimizer parameter group.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    /// Contextualizer, bottleneck and classifiers.
    Ner,
    /// Posterior heads and decoders.
    Vae,
}

pub fn param_group(name: &str) -> ParamGroup {
    if name.starts_with("heads.") || name.starts_with("dec_") {
        ParamGroup::Vae
    } else {
        ParamGroup::Ner
    }
}

/// Candidate spans of one sentence with their predicted types.
pub type SpanPredictions = Vec<((usize, usize), Prediction)>;

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub types: EntityTypes,
    pub params: ParamStore,
    pub encoder: BiLstmContextualizer,
    pub heads: Option<PosteriorHeadSet>,
    pub sr: Option<Decoder>,
    pub sg: Option<Decoder>,
    pub vib: Option<VibParams>,
    pub baseline: Option<Affine>,
}

/// Which objective terms a loss computation includes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossPlan {
    pub classify: bool,
    pub sr: bool,
    pub sg: bool,
    /// Weight of the KL terms inside the VAE losses.
    pub kl_weight: Real,
}

impl LossPlan {
    pub fn joint(mode: Mode) -> Self {
        LossPlan {
            classify: true,
            sr: mode.has_sr(),
            sg: mode.has_sg(),
            kl_weight: 1.0,
        }
    }

    pub fn pretrain(mode: Mode, kl_weight: Real) -> Self {
        LossPlan {
            classify: false,
            sr: mode.has_sr(),
            sg: mode.has_sg(),
            kl_weight,
        }
    }
}

/// Graph nodes of one batch's objective.
#[derive(Clone, Copy, Debug)]
pub struct BatchLoss {
    pub total: Var,
    /// Bottleneck loss, or the plain BCE in baseline mode.
    pub vib: Option<VibLoss>,
    pub baseline: Option<Var>,
    pub sr: Option<LossTerm>,
    pub sg: Option<LossTerm>,
    pub spans: usize,
    pub gold: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchLossValues {
    pub total: Real,
    pub vib: Option<Real>,
    pub sr: Option<Real>,
    pub sg: Option<Real>,
}

impl BatchLoss {
    pub fn values(&self, g: &Graph) -> BatchLossValues {
        let v = |x: Var| g.value(x).item();
        BatchLossValues {
            total: v(self.total),
            vib: self.vib.map(|l| v(l.total)).or(self.baseline.map(v)),
            sr: self.sr.map(|l| v(l.total)),
            sg: self.sg.map(|l| v(l.total)),
        }
    }
}

/// Spans of one batch, indexed into the stacked contextual vectors.
#[derive(Clone, Debug, Default)]
pub struct BatchSpans {
    /// (sentence index in batch, start, end) per candidate.
    pub candidates: Vec<(usize, usize, usize)>,
    pub labels: Vec<Real>,
    /// (sentence index in batch, entity index) per gold entity.
    pub gold: Vec<(usize, usize)>,
}

impl Model {
    pub fn specs(config: &ModelConfig, vocab_size: usize, types: usize) -> Vec<ParamSpec> {
        let c = config;
        let mut s = BiLstmContextualizer::specs(
            vocab_size,
            c.word_dim,
            c.encoder_hidden,
            c.encoder_dim,
            c.recurrent_init,
        );
        if c.mode.has_sr() {
            s.extend(PosteriorHeadSet::specs(
                c.sharing,
                c.mode.has_sg(),
                c.span_dim(),
                c.latent_dim,
                c.logvar_bias_init,
            ));
            s.extend(Decoder::specs(
                "dec_sr",
                vocab_size,
                c.decoder_embed_dim,
                c.decoder_hidden,
                c.latent_dim,
                c.recurrent_init,
            ));
        }
        if c.mode.has_sg() {
            s.extend(Decoder::specs(
                "dec_sg",
                vocab_size,
                c.decoder_embed_dim,
                c.decoder_hidden,
                c.latent_dim,
                c.recurrent_init,
            ));
        }
        if c.mode.has_vib() {
            s.extend(VibParams::specs(
                c.span_dim(),
                c.vib_hidden,
                c.vib_latent_dim,
                types,
            ));
        } else {
            s.extend(Affine::specs("cls", c.span_dim(), types));
        }
        s
    }

    /// Fresh model with randomly initialized parameters.
    pub fn new<R: Rng + ?Sized>(
        config: ModelConfig,
        vocab: Vocabulary,
        types: EntityTypes,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if types.is_empty() {
            return Err(Error::Data("entity type inventory is empty".into()));
        }
        let mut params = ParamStore::new();
        instantiate(
            &mut params,
            &Self::specs(&config, vocab.len(), types.len()),
            rng,
        )?;
        Self::from_parts(config, vocab, types, params)
    }

    /// Binds components to an existing parameter store (e.g. from a checkpoint).
    pub fn from_parts(
        config: ModelConfig,
        vocab: Vocabulary,
        types: EntityTypes,
        params: ParamStore,
    ) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let v = vocab.len();
        let encoder =
            BiLstmContextualizer::bind(&params, v, c.word_dim, c.encoder_hidden, c.encoder_dim)?;
        let (heads, sr) = if c.mode.has_sr() {
            (
                Some(PosteriorHeadSet::bind(
                    &params,
                    c.sharing,
                    c.mode.has_sg(),
                    c.span_dim(),
                    c.latent_dim,
                )?),
                Some(Decoder::bind(
                    &params,
                    "dec_sr",
                    v,
                    c.decoder_embed_dim,
                    c.decoder_hidden,
                    c.latent_dim,
                )?),
            )
        } else {
            (None, None)
        };
        let sg = if c.mode.has_sg() {
            Some(Decoder::bind(
                &params,
                "dec_sg",
                v,
                c.decoder_embed_dim,
                c.decoder_hidden,
                c.latent_dim,
            )?)
        } else {
            None
        };
        let (vib, baseline) = if c.mode.has_vib() {
            (
                Some(VibParams::bind(
                    &params,
                    c.span_dim(),
                    c.vib_hidden,
                    c.vib_latent_dim,
                    types.len(),
                )?),
                None,
            )
        } else {
            (
                None,
                Some(Affine::bind(&params, "cls", c.span_dim(), types.len())?),
            )
        };
        let expected = Self::specs(c, v, types.len()).len();
        if params.len() != expected {
            return Err(Error::Model(format!(
                "parameter store has {} tensors, mode `{}` expects {expected}",
                params.len(),
                c.mode
            )));
        }
        Ok(Model {
            config,
            vocab,
            types,
            params,
            encoder,
            heads,
            sr,
            sg,
            vib,
            baseline,
        })
    }

    pub fn encode_tokens(&self, s: &Sentence) -> Vec<usize> {
        self.vocab.encode(&s.tokens)
    }

    pub fn contextualize(
        &self,
        g: &mut Graph,
        batch: &[&Sentence],
    ) -> Result<ContextualEmbeddings> {
        let ids: Vec<Vec<usize>> = batch.iter().map(|s| self.encode_tokens(s)).collect();
        self.encoder.contextualize(g, &self.params, &ids)
    }

    /// Enumerates candidate spans and gold entities of a batch. With
    /// `negative_keep < 1`, non-entity candidates are subsampled using `rng`.
    pub fn batch_spans<R: Rng + ?Sized>(
        &self,
        batch: &[&Sentence],
        rng: Option<&mut R>,
    ) -> BatchSpans {
        let mut out = BatchSpans::default();
        let keep = self.config.negative_keep;
        let mut rng = rng;
        for (b, s) in batch.iter().enumerate() {
            for c in enumerate_spans(s, self.config.max_span_length, &self.types) {
                if keep < 1.0 && !c.is_entity() {
                    if let Some(r) = rng.as_deref_mut() {
                        if r.random::<f64>() >= keep {
                            continue;
                        }
                    }
                }
                out.candidates.push((b, c.start, c.end));
                out.labels
                    .extend(c.label.iter().map(|&x| if x { 1.0 } else { 0.0 }));
            }
            for e in 0..s.entities.len() {
                out.gold.push((b, e));
            }
        }
        out
    }

    /// Span embeddings `[m, 3d]` for `(sentence, start, end)` triples.
    pub fn span_rows(
        &self,
        g: &mut Graph,
        emb: &ContextualEmbeddings,
        spans: &[(usize, usize, usize)],
    ) -> Result<Var> {
        let ranges: Vec<(usize, usize)> = spans
            .iter()
            .map(|&(b, i, j)| (emb.row(b, i), emb.row(b, j)))
            .collect();
        span_embeddings(g, emb.vectors, &ranges)
    }

    fn heads(&self) -> Result<&PosteriorHeadSet> {
        self.heads
            .as_ref()
            .ok_or_else(|| Error::Model("model has no posterior heads".into()))
    }

    /// Posterior of `component` for each row of span embeddings.
    pub fn posterior(
        &self,
        g: &mut Graph,
        spans: Var,
        component: Component,
    ) -> Result<GaussianPosterior> {
        self.heads()?.posterior(g, &self.params, spans, component)
    }

    /// Builds the objective of one batch of sentences:
    /// `L = L_VIB + gamma * (L_SR + L_SG)` with the classification term over
    /// all candidate spans and the VAE terms over gold spans only.
    pub fn batch_loss<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        batch: &[&Sentence],
        plan: LossPlan,
        noise: &mut Noise<'_, R>,
    ) -> Result<BatchLoss> {
        let batch: Vec<&Sentence> = batch
            .iter()
            .copied()
            .filter(|s| !s.tokens.is_empty())
            .collect();
        if batch.is_empty() {
            return Err(Error::Data("batch has no nonempty sentences".into()));
        }
        let c = &self.config;
        let spans = match noise {
            Noise::Sample(r) if c.negative_keep < 1.0 => self.batch_spans(&batch, Some(&mut **r)),
            _ => self.batch_spans::<R>(&batch, None),
        };
        let emb = self.contextualize(g, &batch)?;

        let mut vib = None;
        let mut baseline = None;
        let mut classify_total = None;
        if plan.classify {
            let s = self.span_rows(g, &emb, &spans.candidates)?;
            let m = spans.candidates.len();
            if let Some(v) = &self.vib {
                let eps = noise.draw(m, v.latent());
                let l = vib_loss(g, &self.params, v, s, &spans.labels, c.beta, eps)?;
                classify_total = Some(l.total);
                vib = Some(l);
            } else if let Some(cls) = &self.baseline {
                let logits = cls.forward(g, &self.params, s)?;
                let bce = g.bce_with_logits(logits, &spans.labels)?;
                let l = g.scale(bce, 1.0 / m as Real);
                classify_total = Some(l);
                baseline = Some(l);
            }
        }

        let mut sr = None;
        let mut sg = None;
        if (plan.sr || plan.sg) && !spans.gold.is_empty() {
            let triples: Vec<(usize, usize, usize)> = spans
                .gold
                .iter()
                .map(|&(b, e)| (b, batch[b].entities[e].start, batch[b].entities[e].end))
                .collect();
            let s = self.span_rows(g, &emb, &triples)?;
            let m = triples.len();
            if plan.sr {
                let dec = self
                    .sr
                    .as_ref()
                    .ok_or_else(|| Error::Model("no reconstruction decoder".into()))?;
                let q = self.posterior(g, s, Component::SpanReconstruction)?;
                let targets: Vec<Vec<usize>> = triples
                    .iter()
                    .map(|&(b, i, j)| self.vocab.encode(batch[b].span_tokens(i, j)))
                    .collect();
                let eps = noise.draw(m, c.latent_dim);
                sr = Some(elbo_loss_sr(
                    g,
                    &self.params,
                    dec,
                    &targets,
                    q,
                    eps,
                    plan.kl_weight,
                )?);
            }
            if plan.sg {
                let dec = self
                    .sg
                    .as_ref()
                    .ok_or_else(|| Error::Model("no synonym decoder".into()))?;
                let q = self.posterior(g, s, Component::SynonymGeneration)?;
                let syns: Vec<Vec<Vec<usize>>> = spans
                    .gold
                    .iter()
                    .map(|&(b, e)| {
                        batch[b].entities[e]
                            .synonyms
                            .iter()
                            .map(|t| self.vocab.encode(t))
                            .collect()
                    })
                    .collect();
                let eps = noise.draw(m, c.latent_dim);
                sg = Some(elbo_loss_sg(
                    g,
                    &self.params,
                    dec,
                    &syns,
                    q,
                    eps,
                    plan.kl_weight,
                )?);
            }
        }

        let aux = match (sr, sg) {
            (Some(a), Some(b)) => Some(g.add(a.total, b.total)?),
            (Some(a), None) => Some(a.total),
            (None, Some(b)) => Some(b.total),
            (None, None) => None,
        };
        let total = match (classify_total, aux) {
            (Some(cl), Some(aux)) => {
                let w = g.scale(aux, c.gamma);
                g.add(cl, w)?
            }
            (Some(cl), None) => cl,
            (None, Some(aux)) => aux,
            (None, None) => g.constant(Tensor::scalar(0.0)),
        };
        Ok(BatchLoss {
            total,
            vib,
            baseline,
            sr,
            sg,
            spans: spans.candidates.len(),
            gold: spans.gold.len(),
        })
    }

    /// Per-span type probabilities from the posterior mean (or the baseline
    /// classifier) for every candidate span of each sentence.
    pub fn predict_batch(
        &self,
        batch: &[&Sentence],
        threshold: Real,
    ) -> Result<Vec<SpanPredictions>> {
        let live: Vec<usize> = (0..batch.len())
            .filter(|&i| !batch[i].tokens.is_empty())
            .collect();
        let mut out = vec![Vec::new(); batch.len()];
        if live.is_empty() {
            return Ok(out);
        }
        let sents: Vec<&Sentence> = live.iter().map(|&i| batch[i]).collect();
        let mut g = Graph::new();
        let spans = self.batch_spans::<rand_chacha::ChaCha8Rng>(&sents, None);
        let emb = self.contextualize(&mut g, &sents)?;
        let s = self.span_rows(&mut g, &emb, &spans.candidates)?;
        let logits = if let Some(v) = &self.vib {
            let q = v.compress(&mut g, &self.params, s)?;
            v.logits(&mut g, &self.params, q.mu)?
        } else {
            let cls = self
                .baseline
                .as_ref()
                .expect("baseline classifier without bottleneck");
            cls.forward(&mut g, &self.params, s)?
        };
        let preds = threshold_rows(g.value(logits), threshold);
        for ((b, i, j), p) in spans.candidates.into_iter().zip(preds) {
            out[live[b]].push(((i, j), p));
        }
        Ok(out)
    }

    /// Posterior means of gold entities for either the reconstruction
    /// posterior (`z1`) or the bottleneck (`z3`), one row per entity in
    /// sentence order.
    pub fn gold_means(&self, batch: &[&Sentence], source: LatentSource) -> Result<Vec<Vec<Real>>> {
        let live: Vec<&Sentence> = batch
            .iter()
            .copied()
            .filter(|s| !s.tokens.is_empty() && !s.entities.is_empty())
            .collect();
        if live.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let emb = self.contextualize(&mut g, &live)?;
        let triples: Vec<(usize, usize, usize)> = live
            .iter()
            .enumerate()
            .flat_map(|(b, s)| s.entities.iter().map(move |e| (b, e.start, e.end)))
            .collect();
        let s = self.span_rows(&mut g, &emb, &triples)?;
        let mu = match source {
            LatentSource::Z1 => {
                if self.sr.is_none() {
                    return Err(Error::Model(
                        "no reconstruction posterior (z1) in this model".into(),
                    ));
                }
                self.posterior(&mut g, s, Component::SpanReconstruction)?.mu
            }
            LatentSource::Z3 => {
                let v = self.vib.as_ref().ok_or_else(|| {
                    Error::Model("no bottleneck posterior (z3) in this model".into())
                })?;
                v.compress(&mut g, &self.params, s)?.mu
            }
        };
        let t = g.value(mu);
        Ok((0..t.rows()).map(|r| t.row(r).to_vec()).collect())
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.params.id(name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentSource {
    Z1,
    Z3,
}

impl LatentSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LatentSource::Z1 => "z1",
            LatentSource::Z3 => "z3",
        }
    }
}

impl std::str::FromStr for LatentSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "z1" => Ok(LatentSource::Z1),
            "z3" => Ok(LatentSource::Z3),
            _ => Err(Error::Config(format!(
                "unknown latent source `{s}` (expected z1 or z3)"
            ))),
        }
    }
}
