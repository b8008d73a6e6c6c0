use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;

use super::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Denominator floor of the relative error. Below it the comparison is
/// effectively absolute, which keeps round-off in near-zero gradients from
/// reading as a large relative error.
pub const REL_ERR_FLOOR: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradSample {
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradSample {
    pub fn abs_err(&self) -> f64 {
        (self.analytic - self.numeric).abs()
    }

    pub fn rel_err(&self) -> f64 {
        let denom = self
            .analytic
            .abs()
            .max(self.numeric.abs())
            .max(REL_ERR_FLOOR);
        self.abs_err() / denom
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub per_parameter: BTreeMap<String, Vec<GradSample>>,
}

impl GradReport {
    /// Parameter with the largest relative error, for diagnostics.
    pub fn worst(&self) -> Option<(&str, GradSample)> {
        self.per_parameter
            .iter()
            .flat_map(|(n, s)| s.iter().map(move |x| (n.as_str(), *x)))
            .max_by(|a, b| a.1.rel_err().total_cmp(&b.1.rel_err()))
    }
}

/// Compares reverse-mode gradients of `loss_fn` against central finite
/// differences `(f(θ+ε) - f(θ-ε)) / 2ε`.
///
/// Up to `samples` coordinates are drawn without replacement per parameter;
/// parameters with fewer coordinates are checked exhaustively. `loss_fn` must
/// be deterministic in the parameters (freeze any sampling noise).
pub fn grad_check<T, F, R>(
    loss_fn: F,
    store: &ParamStore<T>,
    epsilon: f64,
    samples: usize,
    rng: &mut R,
) -> Result<GradReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &ParamStore<T>) -> Result<Var>,
    R: Rng + ?Sized,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::Config(format!(
            "grad_check epsilon {epsilon} outside [1e-7, 1e-3]"
        )));
    }
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, store)?;
    let grads = g.backward(loss)?;

    let eval = |s: &ParamStore<T>| -> Result<f64> {
        let mut g = Graph::new();
        let l = loss_fn(&mut g, s)?;
        Ok(g.value(l).item().as_f64())
    };

    let mut probe = store.clone();
    let mut report = GradReport::default();
    let eps = T::lit(epsilon);
    for id in store.ids() {
        let n = store.get(id).len();
        let coords: Vec<usize> = if n <= samples {
            (0..n).collect()
        } else {
            sample(rng, n, samples).into_vec()
        };
        let name = store.name(id).to_string();
        let mut rows = Vec::with_capacity(coords.len());
        for c in coords {
            let orig = store.get(id).data()[c];
            probe.get_mut(id).data_mut()[c] = orig + eps;
            let fp = eval(&probe)?;
            probe.get_mut(id).data_mut()[c] = orig - eps;
            let fm = eval(&probe)?;
            probe.get_mut(id).data_mut()[c] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::NonFiniteProbe {
                    param: name,
                    coord: c,
                });
            }
            let numeric = (fp - fm) / (2.0 * epsilon);
            let analytic = grads.get(id).map_or(0.0, |t| t.data()[c].as_f64());
            let s = GradSample {
                coord: c,
                analytic,
                numeric,
            };
            report.max_abs_err = report.max_abs_err.max(s.abs_err());
            report.max_rel_err = report.max_rel_err.max(s.rel_err());
            rows.push(s);
        }
        report.per_parameter.insert(name, rows);
    }
    Ok(report)
}
