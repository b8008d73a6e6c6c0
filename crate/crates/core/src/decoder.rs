//! LSTM decoders for span reconstruction and synonym generation, and the
//! ELBO losses built on them.

use crate::autodiff::{ParamId, Var};
use crate::corpus::{END, START};
use crate::encoder::{reparameterize, GaussianPosterior};
use crate::error::{Error, Result};
use crate::nn::{lookup, Affine, Init, LstmCell, ParamSpec};
use crate::scalar::Scalar;
use crate::{Graph, ParamStore, Real, Tensor};

/// `KL(N(mu, exp(logvar)) || N(0, I)) = 1/2 sum(mu^2 + exp(logvar) - 1 - logvar)`.
pub fn kl_standard_normal<T: Scalar>(mu: &[T], logvar: &[T]) -> T {
    let half = T::lit(0.5);
    mu.iter().zip(logvar).fold(T::zero(), |acc, (&m, &lv)| {
        acc + half * (m * m + lv.exp() - T::one() - lv)
    })
}

/// Closed-form KL to the standard normal, summed over every element of the
/// posterior (all rows). Divide by the row count for a batch mean.
pub fn gaussian_kl(g: &mut Graph, q: GaussianPosterior) -> Result<Var> {
    let mu2 = g.mul(q.mu, q.mu)?;
    let var = g.exp(q.logvar);
    let a = g.add(mu2, var)?;
    let b = g.sub(a, q.logvar)?;
    let c = g.add_scalar(b, -1.0);
    let s = g.sum(c);
    Ok(g.scale(s, 0.5))
}

/// Graph nodes of a single-sample ELBO estimate; `total = nll + kl`.
#[derive(Clone, Copy, Debug)]
pub struct LossTerm {
    pub nll: Var,
    pub kl: Var,
    pub total: Var,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValues {
    pub nll: Real,
    pub kl: Real,
    pub total: Real,
}

impl LossTerm {
    pub fn values(&self, g: &Graph) -> LossValues {
        LossValues {
            nll: g.value(self.nll).item(),
            kl: g.value(self.kl).item(),
            total: g.value(self.total).item(),
        }
    }

    fn zero(g: &mut Graph) -> Self {
        let z = g.constant(Tensor::scalar(0.0));
        LossTerm {
            nll: z,
            kl: z,
            total: z,
        }
    }
}

/// Greedy decoding output.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedSequence {
    /// Emitted tokens, excluding END.
    pub tokens: Vec<usize>,
    /// Log-probability of each emitted token (and of END when `terminated`).
    pub log_probs: Vec<Real>,
    pub terminated: bool,
}

/// Recurrent decoder conditioned on a latent `z`: the hidden state starts at
/// an affine map of `z`, and `z` is concatenated to every input embedding.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub embed: ParamId,
    pub cell: LstmCell,
    pub init: Affine,
    pub out: Affine,
    pub latent: usize,
    pub embed_dim: usize,
    pub vocab_size: usize,
}

impl Decoder {
    pub fn specs(
        prefix: &str,
        vocab_size: usize,
        embed_dim: usize,
        hidden: usize,
        latent: usize,
        init_scale: Real,
    ) -> Vec<ParamSpec> {
        let mut s = vec![ParamSpec::new(
            format!("{prefix}.embed"),
            &[vocab_size, embed_dim],
            Init::StandardNormal,
        )];
        s.extend(LstmCell::specs(
            &format!("{prefix}.cell"),
            latent + embed_dim,
            hidden,
            init_scale,
        ));
        s.extend(Affine::specs(&format!("{prefix}.init"), latent, hidden));
        s.extend(Affine::specs(&format!("{prefix}.out"), hidden, vocab_size));
        s
    }

    pub fn bind(
        store: &ParamStore,
        prefix: &str,
        vocab_size: usize,
        embed_dim: usize,
        hidden: usize,
        latent: usize,
    ) -> Result<Self> {
        Ok(Decoder {
            embed: lookup(store, &format!("{prefix}.embed"), &[vocab_size, embed_dim])?,
            cell: LstmCell::bind(store, &format!("{prefix}.cell"), latent + embed_dim, hidden)?,
            init: Affine::bind(store, &format!("{prefix}.init"), latent, hidden)?,
            out: Affine::bind(store, &format!("{prefix}.out"), hidden, vocab_size)?,
            latent,
            embed_dim,
            vocab_size,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut v = vec![self.embed];
        v.extend(self.cell.gates.params());
        v.extend(self.init.params());
        v.extend(self.out.params());
        v
    }

    fn start(&self, g: &mut Graph, store: &ParamStore, z: Var) -> Result<crate::nn::LstmState> {
        let h = self.init.forward(g, store, z)?;
        let rows = g.value(z).rows();
        let c = g.constant(Tensor::zeros(&[rows, self.cell.hidden]));
        Ok(crate::nn::LstmState { h, c })
    }

    /// Teacher-forced negative log-likelihood of several target sequences.
    ///
    /// `z` is `[m, k]` with one row per target; row `r` predicts
    /// `targets[r]` followed by END from inputs START, `targets[r][..]`.
    /// Returns `sum_r weights[r] * sum_t CE_t`.
    pub fn teacher_forced_nll(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        z: Var,
        targets: &[Vec<usize>],
        weights: &[Real],
    ) -> Result<Var> {
        let zshape = g.shape(z).to_vec();
        if zshape.len() != 2 || zshape[0] != targets.len() || zshape[1] != self.latent {
            return Err(Error::Shape {
                op: "teacher_forced_nll",
                lhs: zshape,
                rhs: vec![targets.len(), self.latent],
            });
        }
        if targets.is_empty() || targets.iter().any(Vec::is_empty) {
            return Err(Error::Data("teacher forcing needs nonempty targets".into()));
        }
        if let Some(&bad) = targets.iter().flatten().find(|&&t| t >= self.vocab_size) {
            return Err(Error::UnknownToken(bad));
        }
        let steps = targets.iter().map(Vec::len).max().unwrap_or(0) + 1;
        let embed = g.param(store, self.embed);
        let mut state = self.start(g, store, z)?;
        let mut logits = Vec::with_capacity(steps);
        let mut gold = Vec::with_capacity(steps * targets.len());
        for t in 0..steps {
            let prev: Vec<usize> = targets
                .iter()
                .map(|seq| {
                    if t == 0 {
                        START
                    } else {
                        seq.get(t - 1).copied().unwrap_or(END)
                    }
                })
                .collect();
            let x = g.gather_rows(embed, &prev)?;
            let input = g.concat(&[z, x])?;
            state = self.cell.step(g, store, input, state)?;
            logits.push(self.out.forward(g, store, state.h)?);
            gold.extend(targets.iter().map(|seq| match t.cmp(&seq.len()) {
                std::cmp::Ordering::Less => Some(seq[t]),
                std::cmp::Ordering::Equal => Some(END),
                std::cmp::Ordering::Greater => None,
            }));
        }
        let all = g.concat_rows(&logits)?;
        let w: Vec<Real> = (0..steps).flat_map(|_| weights.iter().copied()).collect();
        g.softmax_xent(all, &gold, &w)
    }

    /// Teacher-forced NLL of one target from a `[k]` latent: `len + 1` steps, summed.
    pub fn decode_teacher_forced(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        z: Var,
        target: &[usize],
    ) -> Result<Var> {
        if target.is_empty() {
            return Err(Error::Data(
                "teacher forcing needs a nonempty target".into(),
            ));
        }
        let z = g.reshape(z, &[1, self.latent])?;
        self.teacher_forced_nll(g, store, z, &[target.to_vec()], &[1.0])
    }

    /// Greedy argmax decoding from a fixed latent, stopping at END or `max_len` tokens.
    pub fn decode_greedy(
        &self,
        store: &ParamStore,
        z: &[Real],
        max_len: usize,
    ) -> Result<DecodedSequence> {
        if z.len() != self.latent {
            return Err(Error::Shape {
                op: "decode_greedy",
                lhs: vec![z.len()],
                rhs: vec![self.latent],
            });
        }
        let mut g = Graph::new();
        let zv = g.constant(Tensor::new(vec![1, self.latent], z.to_vec())?);
        let embed = g.param(store, self.embed);
        let mut state = self.start(&mut g, store, zv)?;
        let mut prev = START;
        let mut out = DecodedSequence {
            tokens: Vec::new(),
            log_probs: Vec::new(),
            terminated: false,
        };
        while out.tokens.len() < max_len {
            let x = g.gather_rows(embed, &[prev])?;
            let input = g.concat(&[zv, x])?;
            state = self.cell.step(&mut g, store, input, state)?;
            let logits = self.out.forward(&mut g, store, state.h)?;
            let lp = g.value(logits).log_softmax();
            let (best, &score) =
                lp.data()
                    .iter()
                    .enumerate()
                    .fold((0, &Real::NEG_INFINITY), |acc, (i, v)| {
                        if *v > *acc.1 {
                            (i, v)
                        } else {
                            acc
                        }
                    });
            out.log_probs.push(score.min(0.0));
            if best == END {
                out.terminated = true;
                break;
            }
            out.tokens.push(best);
            prev = best;
        }
        Ok(out)
    }
}

/// `nll + kl_weight * kl`; a unit weight adds the terms directly so the
/// standard objective carries no extra rounding.
fn weighted_sum(g: &mut Graph, nll: Var, kl: Var, kl_weight: Real) -> Result<Var> {
    if kl_weight == 1.0 {
        g.add(nll, kl)
    } else {
        let w = g.scale(kl, kl_weight);
        g.add(nll, w)
    }
}

/// Span-reconstruction ELBO (negated) averaged over a batch of gold spans.
/// `kl_weight` is 1 for the true ELBO; VAE pretraining may lower it.
///
/// `q` has one row per span; `spans[r]` are the token ids of span `r`.
pub fn elbo_loss_sr(
    g: &mut Graph,
    store: &ParamStore,
    decoder: &Decoder,
    spans: &[Vec<usize>],
    q: GaussianPosterior,
    noise: Tensor,
    kl_weight: Real,
) -> Result<LossTerm> {
    let m = spans.len();
    if m == 0 {
        return Ok(LossTerm::zero(g));
    }
    let z = reparameterize(g, q, noise)?;
    let weights = vec![1.0 / m as Real; m];
    let nll = decoder.teacher_forced_nll(g, store, z, spans, &weights)?;
    let kl_sum = gaussian_kl(g, q)?;
    let kl = g.scale(kl_sum, 1.0 / m as Real);
    let total = weighted_sum(g, nll, kl, kl_weight)?;
    Ok(LossTerm { nll, kl, total })
}

/// Synonym-generation ELBO (negated) averaged over a batch of gold spans.
///
/// `synonyms[r]` lists the synonym token sequences of span `r`. All
/// synonyms of a span are decoded from the same latent sample; their NLLs
/// are averaged. Spans without synonyms contribute zero to both terms but
/// still count in the batch mean.
pub fn elbo_loss_sg(
    g: &mut Graph,
    store: &ParamStore,
    decoder: &Decoder,
    synonyms: &[Vec<Vec<usize>>],
    q: GaussianPosterior,
    noise: Tensor,
    kl_weight: Real,
) -> Result<LossTerm> {
    let m = synonyms.len();
    let with: Vec<usize> = (0..m).filter(|&r| !synonyms[r].is_empty()).collect();
    if with.is_empty() {
        return Ok(LossTerm::zero(g));
    }
    let z = reparameterize(g, q, noise)?;
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    let mut weights = Vec::new();
    for &r in &with {
        let w = 1.0 / (synonyms[r].len() as Real * m as Real);
        for syn in &synonyms[r] {
            rows.push(r);
            targets.push(syn.clone());
            weights.push(w);
        }
    }
    let zrows = g.gather_rows(z, &rows)?;
    let nll = decoder.teacher_forced_nll(g, store, zrows, &targets, &weights)?;
    let mu = g.gather_rows(q.mu, &with)?;
    let logvar = g.gather_rows(q.logvar, &with)?;
    let kl_sum = gaussian_kl(g, GaussianPosterior { mu, logvar })?;
    let kl = g.scale(kl_sum, 1.0 / m as Real);
    let total = weighted_sum(g, nll, kl, kl_weight)?;
    Ok(LossTerm { nll, kl, total })
}
