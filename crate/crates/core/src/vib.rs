//! Supervised variational information bottleneck over span embeddings.

use crate::autodiff::Var;
use crate::decoder::gaussian_kl;
use crate::encoder::{reparameterize, GaussianPosterior};
use crate::error::{Error, Result};
use crate::nn::{Affine, ParamSpec};
use crate::scalar::Scalar;
use crate::{Graph, ParamStore, Real, Tensor};

/// Nonlinearity between the two compression layers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Activation {
    #[default]
    Tanh,
    /// Only used to reduce the bottleneck to a linear map in equivalence tests.
    Identity,
}

/// Compression MLP (`3d -> hidden -> (mu_3, logvar_3)`) and a sigmoid
/// classifier over `z_3`, one logit per entity type.
#[derive(Clone, Debug)]
pub struct VibParams {
    pub hidden: Affine,
    pub mu: Affine,
    pub logvar: Affine,
    pub classifier: Affine,
    pub activation: Activation,
}

impl VibParams {
    pub fn specs(span_dim: usize, hidden: usize, latent: usize, types: usize) -> Vec<ParamSpec> {
        let mut s = Affine::specs("vib.hidden", span_dim, hidden);
        s.extend(Affine::specs("vib.mu", hidden, latent));
        s.extend(Affine::specs("vib.logvar", hidden, latent));
        s.extend(Affine::specs("vib.cls", latent, types));
        s
    }

    pub fn bind(
        store: &ParamStore,
        span_dim: usize,
        hidden: usize,
        latent: usize,
        types: usize,
    ) -> Result<Self> {
        if latent > span_dim {
            return Err(Error::Config(format!(
                "bottleneck size {latent} exceeds span embedding size {span_dim}"
            )));
        }
        Ok(VibParams {
            hidden: Affine::bind(store, "vib.hidden", span_dim, hidden)?,
            mu: Affine::bind(store, "vib.mu", hidden, latent)?,
            logvar: Affine::bind(store, "vib.logvar", hidden, latent)?,
            classifier: Affine::bind(store, "vib.cls", latent, types)?,
            activation: Activation::Tanh,
        })
    }

    pub fn latent(&self) -> usize {
        self.mu.out_dim
    }

    /// Posterior `p(z_3 | s)` for each span row of `spans`.
    pub fn compress(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        spans: Var,
    ) -> Result<GaussianPosterior> {
        let h = self.hidden.forward(g, store, spans)?;
        let h = match self.activation {
            Activation::Tanh => g.tanh(h),
            Activation::Identity => h,
        };
        let mu = self.mu.forward(g, store, h)?;
        let logvar = self.logvar.forward(g, store, h)?;
        Ok(GaussianPosterior { mu, logvar })
    }

    pub fn logits(&self, g: &mut Graph, store: &ParamStore, z: Var) -> Result<Var> {
        self.classifier.forward(g, store, z)
    }
}

/// `total = beta * compression + prediction`, each a batch mean.
#[derive(Clone, Copy, Debug)]
pub struct VibLoss {
    pub compression: Var,
    pub prediction: Var,
    pub total: Var,
    pub beta: Real,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VibLossValues {
    pub compression: Real,
    pub prediction: Real,
    pub total: Real,
}

impl VibLoss {
    pub fn values(&self, g: &Graph) -> VibLossValues {
        VibLossValues {
            compression: g.value(self.compression).item(),
            prediction: g.value(self.prediction).item(),
            total: g.value(self.total).item(),
        }
    }
}

/// Bottleneck loss over a batch of span embeddings `[m, 3d]` with
/// multi-hot `labels` (`m * types`, row-major) and `[m, k_3]` noise.
pub fn vib_loss(
    g: &mut Graph,
    store: &ParamStore,
    vib: &VibParams,
    spans: Var,
    labels: &[Real],
    beta: Real,
    noise: Tensor,
) -> Result<VibLoss> {
    let m = g.value(spans).rows();
    let q = vib.compress(g, store, spans)?;
    let z = reparameterize(g, q, noise)?;
    let logits = vib.logits(g, store, z)?;
    let bce = g.bce_with_logits(logits, labels)?;
    let prediction = g.scale(bce, 1.0 / m as Real);
    let kl = gaussian_kl(g, q)?;
    let compression = g.scale(kl, 1.0 / m as Real);
    let weighted = g.scale(compression, beta);
    let total = g.add(weighted, prediction)?;
    Ok(VibLoss {
        compression,
        prediction,
        total,
        beta,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<Real>,
    /// Types whose probability exceeds the threshold; empty means non-entity.
    pub types: Vec<usize>,
}

/// Deterministic inference from the posterior mean for each span row.
pub fn predict(
    g: &mut Graph,
    store: &ParamStore,
    vib: &VibParams,
    spans: Var,
    threshold: Real,
) -> Result<Vec<Prediction>> {
    let q = vib.compress(g, store, spans)?;
    let logits = vib.logits(g, store, q.mu)?;
    Ok(threshold_rows(g.value(logits), threshold))
}

/// Sigmoid and threshold every row of a logit matrix.
pub fn threshold_rows(logits: &Tensor, threshold: Real) -> Vec<Prediction> {
    (0..logits.rows())
        .map(|r| {
            let probabilities: Vec<Real> = logits.row(r).iter().map(|&x| x.sigmoid()).collect();
            let types = probabilities
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > threshold)
                .map(|(t, _)| t)
                .collect();
            Prediction {
                probabilities,
                types,
            }
        })
        .collect()
}
