//! Token contextualization, span embeddings and Gaussian posterior heads.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{ParamId, Var};
use crate::config::SharingMode;
use crate::error::{Error, Result};
use crate::nn::{lookup, Affine, Init, LstmCell, ParamSpec};
use crate::{Graph, ParamStore, Real, Tensor};

/// Contextual vectors for a batch of sentences, stacked row-wise:
/// sentence `b` occupies rows `offsets[b]..offsets[b] + lens[b]`.
#[derive(Clone, Debug)]
pub struct ContextualEmbeddings {
    pub vectors: Var,
    pub offsets: Vec<usize>,
    pub lens: Vec<usize>,
    pub dim: usize,
}

impl ContextualEmbeddings {
    /// Global row of token `t` of sentence `b`.
    pub fn row(&self, b: usize, t: usize) -> usize {
        self.offsets[b] + t
    }
}

/// Maps token ids to sentence-dependent vectors.
pub trait Contextualizer {
    fn dim(&self) -> usize;

    /// Every sentence must be nonempty and contain only ids below the vocabulary size.
    fn contextualize(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        batch: &[Vec<usize>],
    ) -> Result<ContextualEmbeddings>;
}

/// Trainable embeddings, one bidirectional LSTM layer, and an affine
/// projection of the concatenated directions to `dim`.
#[derive(Clone, Debug)]
pub struct BiLstmContextualizer {
    pub embed: ParamId,
    pub forward: LstmCell,
    pub backward: LstmCell,
    pub proj: Affine,
    vocab_size: usize,
    dim: usize,
}

impl BiLstmContextualizer {
    pub fn specs(
        vocab_size: usize,
        word_dim: usize,
        hidden: usize,
        dim: usize,
        init_scale: Real,
    ) -> Vec<ParamSpec> {
        let mut s = vec![ParamSpec::new(
            "ctx.embed",
            &[vocab_size, word_dim],
            Init::StandardNormal,
        )];
        s.extend(LstmCell::specs("ctx.fwd", word_dim, hidden, init_scale));
        s.extend(LstmCell::specs("ctx.bwd", word_dim, hidden, init_scale));
        s.extend(Affine::specs("ctx.proj", 2 * hidden, dim));
        s
    }

    pub fn bind(
        store: &ParamStore,
        vocab_size: usize,
        word_dim: usize,
        hidden: usize,
        dim: usize,
    ) -> Result<Self> {
        Ok(BiLstmContextualizer {
            embed: lookup(store, "ctx.embed", &[vocab_size, word_dim])?,
            forward: LstmCell::bind(store, "ctx.fwd", word_dim, hidden)?,
            backward: LstmCell::bind(store, "ctx.bwd", word_dim, hidden)?,
            proj: Affine::bind(store, "ctx.proj", 2 * hidden, dim)?,
            vocab_size,
            dim,
        })
    }
}

impl Contextualizer for BiLstmContextualizer {
    fn dim(&self) -> usize {
        self.dim
    }

    fn contextualize(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        batch: &[Vec<usize>],
    ) -> Result<ContextualEmbeddings> {
        if batch.is_empty() || batch.iter().any(Vec::is_empty) {
            return Err(Error::Data("contextualize needs nonempty sentences".into()));
        }
        if let Some(&bad) = batch.iter().flatten().find(|&&id| id >= self.vocab_size) {
            return Err(Error::UnknownToken(bad));
        }
        let b = batch.len();
        let steps = batch.iter().map(Vec::len).max().unwrap_or(0);
        let embed = g.param(store, self.embed);

        // Both directions run over right-padded sequences; the backward pass
        // reads each sentence reversed, so padding only ever follows real tokens.
        let run = |g: &mut Graph, cell: &LstmCell, reversed: bool| -> Result<Var> {
            let mut state = cell.zero_state(g, b);
            let mut outs = Vec::with_capacity(steps);
            for t in 0..steps {
                let ids: Vec<usize> = batch
                    .iter()
                    .map(|s| match (t < s.len(), reversed) {
                        (false, _) => crate::corpus::PAD,
                        (true, false) => s[t],
                        (true, true) => s[s.len() - 1 - t],
                    })
                    .collect();
                let x = g.gather_rows(embed, &ids)?;
                state = cell.step(g, store, x, state)?;
                outs.push(state.h);
            }
            g.concat_rows(&outs)
        };
        let hf = run(g, &self.forward, false)?;
        let hb = run(g, &self.backward, true)?;

        let mut fwd_rows = Vec::new();
        let mut bwd_rows = Vec::new();
        let mut offsets = Vec::with_capacity(b);
        let mut lens = Vec::with_capacity(b);
        for (bi, s) in batch.iter().enumerate() {
            offsets.push(fwd_rows.len());
            lens.push(s.len());
            for p in 0..s.len() {
                fwd_rows.push(p * b + bi);
                bwd_rows.push((s.len() - 1 - p) * b + bi);
            }
        }
        let f = g.gather_rows(hf, &fwd_rows)?;
        let r = g.gather_rows(hb, &bwd_rows)?;
        let both = g.concat(&[f, r])?;
        let vectors = self.proj.forward(g, store, both)?;
        Ok(ContextualEmbeddings {
            vectors,
            offsets,
            lens,
            dim: self.dim,
        })
    }
}

/// Span embeddings `[v_i ; mean(v_i..=v_j) ; v_j]` for global row ranges of
/// `vectors`, one output row per span: `[spans.len(), 3d]`.
pub fn span_embeddings(g: &mut Graph, vectors: Var, spans: &[(usize, usize)]) -> Result<Var> {
    let n = g.value(vectors).rows();
    for &(i, j) in spans {
        if i > j || j >= n {
            return Err(Error::Index {
                op: "span_embed",
                index: j.max(i),
                len: n,
            });
        }
    }
    let starts: Vec<usize> = spans.iter().map(|s| s.0).collect();
    let ends: Vec<usize> = spans.iter().map(|s| s.1).collect();
    let first = g.gather_rows(vectors, &starts)?;
    let mean = g.segment_mean(vectors, spans)?;
    let last = g.gather_rows(vectors, &ends)?;
    g.concat(&[first, mean, last])
}

/// Single span embedding as a `[3d]` vector.
pub fn span_embed(
    g: &mut Graph,
    emb: &ContextualEmbeddings,
    sentence: usize,
    i: usize,
    j: usize,
) -> Result<Var> {
    let len = emb.lens[sentence];
    if i > j || j >= len {
        return Err(Error::Index {
            op: "span_embed",
            index: j.max(i),
            len,
        });
    }
    let s = span_embeddings(
        g,
        emb.vectors,
        &[(emb.row(sentence, i), emb.row(sentence, j))],
    )?;
    g.reshape(s, &[3 * emb.dim])
}

/// Diagonal Gaussian `N(mu, exp(logvar))`, one row per example.
#[derive(Clone, Copy, Debug)]
pub struct GaussianPosterior {
    pub mu: Var,
    pub logvar: Var,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    SpanReconstruction,
    SynonymGeneration,
}

/// Affine posterior heads for the two VAE components.
///
/// Under [`SharingMode::SharedMu`] both components use one mean head and
/// their own log-variance heads; under [`SharingMode::SharedMuSigma`] both
/// heads are shared; under [`SharingMode::Independent`] nothing is shared.
#[derive(Clone, Debug)]
pub struct PosteriorHeadSet {
    pub mu_sr: Affine,
    pub logvar_sr: Affine,
    pub mu_sg: Affine,
    pub logvar_sg: Affine,
    pub sharing: SharingMode,
}

fn head_names(sharing: SharingMode, with_sg: bool) -> [&'static str; 4] {
    // mu_sr, logvar_sr, mu_sg, logvar_sg
    match (sharing, with_sg) {
        (_, false) => ["heads.mu", "heads.logvar_sr", "heads.mu", "heads.logvar_sr"],
        (SharingMode::SharedMu, true) => {
            ["heads.mu", "heads.logvar_sr", "heads.mu", "heads.logvar_sg"]
        }
        (SharingMode::SharedMuSigma, true) => {
            ["heads.mu", "heads.logvar", "heads.mu", "heads.logvar"]
        }
        (SharingMode::Independent, true) => [
            "heads.mu_sr",
            "heads.logvar_sr",
            "heads.mu_sg",
            "heads.logvar_sg",
        ],
    }
}

impl PosteriorHeadSet {
    /// Parameter layout; without synonym generation only the SR heads exist.
    /// Log-variance biases start at `logvar_bias`.
    pub fn specs(
        sharing: SharingMode,
        with_sg: bool,
        span_dim: usize,
        latent: usize,
        logvar_bias: Real,
    ) -> Vec<ParamSpec> {
        let [a, b, c, d] = head_names(sharing, with_sg);
        let mut seen = Vec::new();
        let mut out = Vec::new();
        for n in [a, b, c, d] {
            if !seen.contains(&n) {
                seen.push(n);
                let mut s = Affine::specs(n, span_dim, latent);
                if n == b || n == d {
                    s[1].init = Init::Constant(logvar_bias);
                }
                out.extend(s);
            }
        }
        out
    }

    pub fn bind(
        store: &ParamStore,
        sharing: SharingMode,
        with_sg: bool,
        span_dim: usize,
        latent: usize,
    ) -> Result<Self> {
        let [a, b, c, d] = head_names(sharing, with_sg);
        Ok(PosteriorHeadSet {
            mu_sr: Affine::bind(store, a, span_dim, latent)?,
            logvar_sr: Affine::bind(store, b, span_dim, latent)?,
            mu_sg: Affine::bind(store, c, span_dim, latent)?,
            logvar_sg: Affine::bind(store, d, span_dim, latent)?,
            sharing,
        })
    }

    pub fn heads(&self, component: Component) -> (&Affine, &Affine) {
        match component {
            Component::SpanReconstruction => (&self.mu_sr, &self.logvar_sr),
            Component::SynonymGeneration => (&self.mu_sg, &self.logvar_sg),
        }
    }

    /// `mu = W_mu s + b_mu`, `logvar = W_sigma s + b_sigma` for the heads of `component`.
    pub fn posterior(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        spans: Var,
        component: Component,
    ) -> Result<GaussianPosterior> {
        let (mu_head, lv_head) = self.heads(component);
        let mu = mu_head.forward(g, store, spans)?;
        let logvar = lv_head.forward(g, store, spans)?;
        Ok(GaussianPosterior { mu, logvar })
    }

    pub fn param_ids(&self, component: Component) -> Vec<ParamId> {
        let (m, l) = self.heads(component);
        vec![m.w, m.b, l.w, l.b]
    }
}

/// Source of standard-normal noise for reparameterized sampling.
pub enum Noise<'a, R: Rng + ?Sized> {
    /// Zero noise, i.e. the posterior mean.
    Zero,
    Sample(&'a mut R),
}

impl<R: Rng + ?Sized> Noise<'_, R> {
    pub fn draw(&mut self, rows: usize, cols: usize) -> Tensor {
        let n = rows * cols;
        let data = match self {
            Noise::Zero => vec![0.0; n],
            Noise::Sample(rng) => (0..n).map(|_| StandardNormal.sample(&mut **rng)).collect(),
        };
        Tensor::new(vec![rows, cols], data).expect("noise shape")
    }
}

/// `z = mu + exp(logvar / 2) * noise`; gradients reach `mu` and `logvar` only.
pub fn reparameterize(g: &mut Graph, q: GaussianPosterior, noise: Tensor) -> Result<Var> {
    let mu_shape = g.shape(q.mu).to_vec();
    if noise.len() != g.value(q.mu).len() {
        return Err(Error::Shape {
            op: "reparameterize",
            lhs: mu_shape,
            rhs: noise.shape().to_vec(),
        });
    }
    let noise = g.constant(noise.reshaped(&mu_shape)?);
    let half = g.scale(q.logvar, 0.5);
    let std = g.exp(half);
    let eps = g.mul(std, noise)?;
    g.add(q.mu, eps)
}
