//! Parameter layouts and the two layer types every component is built from.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::autodiff::ParamId;
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::{Graph, ParamStore, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Constant(Real),
    /// `U(-a, a)`.
    Uniform(Real),
    /// `N(0, 1 / fan_in)` where `fan_in` is the last dimension.
    ScaledNormal,
    /// `N(0, 1)`, for embedding tables.
    StandardNormal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Tensor {
        let n: usize = self.shape.iter().product();
        let data = match self.init {
            Init::Zeros => vec![0.0; n],
            Init::Constant(c) => vec![c; n],
            Init::Uniform(a) => {
                let u = Uniform::new_inclusive(-a, a).expect("valid uniform bounds");
                (0..n).map(|_| u.sample(rng)).collect()
            }
            Init::ScaledNormal => {
                let std = 1.0 / (*self.shape.last().unwrap() as Real).sqrt();
                (0..n)
                    .map(|_| std * Distribution::<Real>::sample(&StandardNormal, rng))
                    .collect()
            }
            Init::StandardNormal => (0..n)
                .map(|_| Distribution::<Real>::sample(&StandardNormal, rng))
                .collect(),
        };
        Tensor::new(self.shape.clone(), data).expect("spec shape is valid")
    }
}

/// Inserts freshly initialized parameters for every spec, in order.
pub fn instantiate<R: Rng + ?Sized>(
    store: &mut ParamStore,
    specs: &[ParamSpec],
    rng: &mut R,
) -> Result<()> {
    for s in specs {
        store.insert(s.name.clone(), s.sample(rng))?;
    }
    Ok(())
}

/// Looks up a parameter by name and checks its shape.
pub fn lookup(store: &ParamStore, name: &str, shape: &[usize]) -> Result<ParamId> {
    let id = store
        .id(name)
        .ok_or_else(|| Error::Model(format!("missing parameter `{name}`")))?;
    if store.get(id).shape() != shape {
        return Err(Error::Model(format!(
            "parameter `{name}` has shape {:?}, expected {shape:?}",
            store.get(id).shape()
        )));
    }
    Ok(id)
}

/// `y = W x + b`, `W: [out, in]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Affine {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Affine {
    pub fn specs(prefix: &str, in_dim: usize, out_dim: usize) -> Vec<ParamSpec> {
        vec![
            ParamSpec::new(
                format!("{prefix}.w"),
                &[out_dim, in_dim],
                Init::ScaledNormal,
            ),
            ParamSpec::new(format!("{prefix}.b"), &[out_dim], Init::Zeros),
        ]
    }

    pub fn bind(store: &ParamStore, prefix: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        Ok(Affine {
            w: lookup(store, &format!("{prefix}.w"), &[out_dim, in_dim])?,
            b: lookup(store, &format!("{prefix}.b"), &[out_dim])?,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.affine(x, w, b)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.w, self.b]
    }
}

/// LSTM cell over a batch of rows. Gate order in the fused weight: input,
/// forget, candidate, output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmCell {
    pub gates: Affine,
    pub hidden: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmCell {
    /// Fused weight drawn from `U(-init_scale, init_scale)`, zero bias.
    pub fn specs(prefix: &str, in_dim: usize, hidden: usize, init_scale: Real) -> Vec<ParamSpec> {
        vec![
            ParamSpec::new(
                format!("{prefix}.w"),
                &[4 * hidden, in_dim + hidden],
                Init::Uniform(init_scale),
            ),
            ParamSpec::new(format!("{prefix}.b"), &[4 * hidden], Init::Zeros),
        ]
    }

    pub fn bind(store: &ParamStore, prefix: &str, in_dim: usize, hidden: usize) -> Result<Self> {
        Ok(LstmCell {
            gates: Affine::bind(store, prefix, in_dim + hidden, 4 * hidden)?,
            hidden,
        })
    }

    pub fn zero_state(&self, g: &mut Graph, rows: usize) -> LstmState {
        let h = g.constant(Tensor::zeros(&[rows, self.hidden]));
        let c = g.constant(Tensor::zeros(&[rows, self.hidden]));
        LstmState { h, c }
    }

    pub fn step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        state: LstmState,
    ) -> Result<LstmState> {
        let hd = self.hidden;
        let xh = g.concat(&[x, state.h])?;
        let z = self.gates.forward(g, store, xh)?;
        let i = g.slice_cols(z, 0, hd)?;
        let i = g.sigmoid(i);
        let f = g.slice_cols(z, hd, 2 * hd)?;
        let f = g.sigmoid(f);
        let cand = g.slice_cols(z, 2 * hd, 3 * hd)?;
        let cand = g.tanh(cand);
        let o = g.slice_cols(z, 3 * hd, 4 * hd)?;
        let o = g.sigmoid(o);
        let keep = g.mul(f, state.c)?;
        let write = g.mul(i, cand)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c);
        let h = g.mul(o, tc)?;
        Ok(LstmState { h, c })
    }
}
