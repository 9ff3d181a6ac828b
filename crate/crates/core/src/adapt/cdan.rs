//! Conditional adversarial domain loss.

use crate::error::{Error, Result};
use crate::tensor::{Array, Bound, Function, Graph, Real, Var};

use super::{grl, DomainDiscriminator, JointEmbedder};

/// Probability clamp applied before taking logs.
pub const BCE_EPS: f64 = 1e-7;

/// Discriminator, its bound parameters and the joint embedding.
pub struct CdanHead<'h, T: Real> {
    pub discriminator: &'h DomainDiscriminator<T>,
    pub bound: &'h Bound,
    pub embedder: &'h JointEmbedder<T>,
}

/// One batch from each domain. `probs_*` are softmax outputs of the
/// classifier and enter as constants.
pub struct CdanInputs<'a, T> {
    pub features_s: Var,
    pub probs_s: &'a Array<T>,
    pub features_t: Var,
    pub probs_t: &'a Array<T>,
}

pub struct CdanOutput {
    pub loss: Var,
    /// Fraction of samples the discriminator assigns to the right domain.
    pub discriminator_accuracy: f64,
}

/// Shannon entropy of a probability row, `0 log 0 = 0`.
pub fn entropy<T: Real>(p: &[T]) -> T {
    p.iter().filter(|&&v| v > T::zero()).map(|&v| -v * v.ln()).sum()
}

/// `1 + exp(-H(p_i))`, rescaled to mean 1 over the batch.
pub fn certainty_weights<T: Real>(p: &Array<T>) -> Vec<T> {
    let raw: Vec<T> = (0..p.rows()).map(|i| T::one() + (-entropy(p.row(i))).exp()).collect();
    let total: T = raw.iter().copied().sum();
    let n = T::lit(raw.len() as f64);
    raw.into_iter().map(|w| w * n / total).collect()
}

pub fn cdan_loss<T: Real>(
    g: &mut Graph<'_, T>,
    head: &CdanHead<'_, T>,
    inputs: CdanInputs<'_, T>,
    lambda: T,
    entropy_conditioning: bool,
) -> Result<CdanOutput> {
    let bs = g.value(inputs.features_s).rows();
    let bt = g.value(inputs.features_t).rows();
    if bs != bt || inputs.probs_s.rows() != bs || inputs.probs_t.rows() != bt {
        return Err(Error::Shape(format!(
            "adversarial loss needs equal batch sizes, got source {bs} / target {bt}"
        )));
    }
    let mut domain_term = |f: Var, p: &Array<T>, target: T| -> Result<(Var, usize)> {
        let reversed = grl(g, f, lambda);
        let pv = g.constant(p.clone());
        let joint = head.embedder.embed(g, reversed, pv)?;
        let d = head.discriminator.forward(g, head.bound, joint);
        let dv = g.value(d);
        if dv.data().iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("discriminator produced NaN".into()));
        }
        let half = T::lit(0.5);
        let correct = dv.data().iter().filter(|&&v| (v >= half) == (target > half)).count();
        let weights = if entropy_conditioning {
            certainty_weights(p)
        } else {
            vec![T::one(); p.rows()]
        };
        Ok((weighted_bce_sum(g, d, target, weights), correct))
    };
    let (ls, cs) = domain_term(inputs.features_s, inputs.probs_s, T::one())?;
    let (lt, ct) = domain_term(inputs.features_t, inputs.probs_t, T::zero())?;
    let sum = g.add(ls, lt);
    let n = (bs + bt).max(1);
    let loss = g.scale(sum, T::one() / T::lit(n as f64));
    Ok(CdanOutput {
        loss,
        discriminator_accuracy: (cs + ct) as f64 / n as f64,
    })
}

/// `sum_i w_i * BCE(clamp(d_i), target)` as a scalar node.
pub fn weighted_bce_sum<T: Real>(g: &mut Graph<'_, T>, d: Var, target: T, weights: Vec<T>) -> Var {
    let dv = g.value(d);
    assert_eq!(dv.len(), weights.len(), "one weight per sample");
    let eps = T::lit(BCE_EPS);
    let total: T = dv
        .data()
        .iter()
        .zip(&weights)
        .map(|(&p, &w)| {
            let p = p.max(eps).min(T::one() - eps);
            -w * (target * p.ln() + (T::one() - target) * (T::one() - p).ln())
        })
        .sum();
    g.custom(&[d], Array::scalar(total), Box::new(WeightedBce { target, weights }))
}

struct WeightedBce<T> {
    target: T,
    weights: Vec<T>,
}

impl<T: Real> Function<T> for WeightedBce<T> {
    fn backward(
        &self,
        inputs: &[&Array<T>],
        _output: &Array<T>,
        grad: &Array<T>,
        _needs: &[bool],
    ) -> Vec<Option<Array<T>>> {
        let eps = T::lit(BCE_EPS);
        let (y, up) = (self.target, grad.item());
        let one = T::one();
        let data = inputs[0]
            .data()
            .iter()
            .zip(&self.weights)
            .map(|(&p, &w)| {
                if p <= eps || p >= one - eps {
                    T::zero()
                } else {
                    up * w * (-(y / p) + (one - y) / (one - p))
                }
            })
            .collect();
        vec![Some(Array::from_vec(inputs[0].shape(), data))]
    }
}
