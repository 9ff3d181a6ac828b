//! Minimum class confusion on target predictions.
//!
//! With `Ŷ = softmax(Z / T)`, certainty weights `W_i = B (1 + e^{-H_i}) / Σ_b (1 + e^{-H_b})`
//! and the class confusion `C = Ŷᵀ diag(W) Ŷ`, the loss is the mean off-diagonal
//! mass of the row-normalised confusion matrix. Because `Ŷ` rows sum to one the
//! row sums are `r_j = Σ_i W_i Ŷ_ij`, which gives the closed form
//! `1 - (1/C) Σ_j C_jj / r_j` used by the backward pass. Classes without any
//! predicted mass (`r_j = 0`) have an empty confusion row and contribute nothing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{softmax_rows, Array, Function, Graph, Real, Var};

use super::cdan::entropy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MccConfig {
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Treat the certainty weights as constants in the backward pass.
    #[serde(default)]
    pub detach_weights: bool,
}

fn default_temperature() -> f64 {
    1.0
}

impl Default for MccConfig {
    fn default() -> Self {
        Self {
            temperature: default_temperature(),
            detach_weights: false,
        }
    }
}

impl MccConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::config(format!(
                "mcc temperature must be > 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

struct Forward<T> {
    loss: T,
    probs: Array<T>,
    entropy: Vec<T>,
    raw_weights: Vec<T>,
    weights: Vec<T>,
    diag: Vec<T>,
    row_sums: Vec<T>,
}

fn forward<T: Real>(logits: &Array<T>, cfg: &MccConfig) -> Forward<T> {
    let (b, c) = (logits.rows(), logits.row_len());
    let inv_t = T::one() / T::lit(cfg.temperature);
    let probs = softmax_rows(&logits.map(|z| z * inv_t));
    let entropy: Vec<T> = (0..b).map(|i| entropy(probs.row(i))).collect();
    let raw_weights: Vec<T> = entropy.iter().map(|&h| T::one() + (-h).exp()).collect();
    let total: T = raw_weights.iter().copied().sum();
    let bt = T::lit(b as f64);
    let weights: Vec<T> = raw_weights.iter().map(|&u| bt * u / total).collect();

    // confusion = Ŷᵀ diag(W) Ŷ
    let mut weighted = probs.clone();
    for (i, &w) in weights.iter().enumerate() {
        for v in weighted.row_mut(i) {
            *v = *v * w;
        }
    }
    let confusion = weighted.matmul(&probs, true, false);
    let mut loss = T::zero();
    let mut diag = vec![T::zero(); c];
    let mut row_sums = vec![T::zero(); c];
    for j in 0..c {
        let row = confusion.row(j);
        let rs: T = row.iter().copied().sum();
        diag[j] = row[j];
        row_sums[j] = rs;
        if rs > T::zero() {
            let off: T = row
                .iter()
                .enumerate()
                .filter(|&(jj, _)| jj != j)
                .map(|(_, &v)| v / rs)
                .sum();
            loss = loss + off;
        }
    }
    loss = loss / T::lit(c as f64);
    Forward {
        loss,
        probs,
        entropy,
        raw_weights,
        weights,
        diag,
        row_sums,
    }
}

/// Loss value without building a graph.
pub fn mcc_value<T: Real>(logits: &Array<T>, cfg: &MccConfig) -> Result<T> {
    check(logits, cfg)?;
    Ok(forward(logits, cfg).loss)
}

fn check<T: Real>(logits: &Array<T>, cfg: &MccConfig) -> Result<()> {
    cfg.validate()?;
    if logits.ndim() != 2 {
        return Err(Error::Shape(format!(
            "mcc expects B x C logits, got {:?}",
            logits.shape()
        )));
    }
    if logits.rows() < 2 {
        return Err(Error::config(format!(
            "mcc needs a batch of at least 2, got {}",
            logits.rows()
        )));
    }
    Ok(())
}

/// Scalar class-confusion loss on target logits `B x C`.
pub fn mcc_loss<T: Real>(g: &mut Graph<'_, T>, logits: Var, cfg: &MccConfig) -> Result<Var> {
    let zv = g.value(logits);
    check(zv, cfg)?;
    let fwd = forward(zv, cfg);
    let out = Array::scalar(fwd.loss);
    Ok(g.custom(
        &[logits],
        out,
        Box::new(MccBackward {
            fwd,
            temperature: cfg.temperature,
            detach_weights: cfg.detach_weights,
        }),
    ))
}

struct MccBackward<T> {
    fwd: Forward<T>,
    temperature: f64,
    detach_weights: bool,
}

impl<T: Real> Function<T> for MccBackward<T> {
    fn backward(
        &self,
        _inputs: &[&Array<T>],
        _output: &Array<T>,
        grad: &Array<T>,
        _needs: &[bool],
    ) -> Vec<Option<Array<T>>> {
        let f = &self.fwd;
        let p = &f.probs;
        let (b, c) = (p.rows(), p.row_len());
        let scale = grad.item() / T::lit(c as f64);
        let two = T::lit(2.0);
        let live: Vec<bool> = f.row_sums.iter().map(|&r| r > T::zero()).collect();

        // loss = 1 - (1/C) Σ_j M_jj / r_j with M_jj = Σ_i W_i p_ij², r_j = Σ_i W_i p_ij.
        // g_p[i][j] holds p_ij * dL/dp_ij, which stays finite where p_ij = 0.
        let mut g_pp = Array::zeros(&[b, c]);
        let mut g_w = vec![T::zero(); b];
        for i in 0..b {
            let w = f.weights[i];
            let pi = p.row(i);
            let mut gw = T::zero();
            for j in 0..c {
                if !live[j] {
                    continue;
                }
                let (r, m) = (f.row_sums[j], f.diag[j]);
                let pij = pi[j];
                let d_p = -(two * w * pij / r - m * w / (r * r));
                g_pp.row_mut(i)[j] = pij * d_p * scale;
                gw = gw - (pij * pij / r - m * pij / (r * r));
            }
            g_w[i] = gw * scale;
        }

        if !self.detach_weights {
            // W_i = B u_i / S, u_i = 1 + exp(-H_i), dH_i/dp_ij = -(ln p_ij + 1)
            let total: T = f.raw_weights.iter().copied().sum();
            let bt = T::lit(b as f64);
            let mean_term: T = g_w.iter().zip(&f.raw_weights).map(|(&gw, &u)| gw * u).sum::<T>() / total;
            for i in 0..b {
                let g_u = bt / total * (g_w[i] - mean_term);
                let g_h = -g_u * (-f.entropy[i]).exp();
                let row = g_pp.row_mut(i);
                for (j, v) in row.iter_mut().enumerate() {
                    let pij = p.row(i)[j];
                    if pij > T::zero() {
                        *v = *v - g_h * pij * (pij.ln() + T::one());
                    }
                }
            }
        }

        // softmax: dZ_ij = (1/T) (p_ij g_ij - p_ij Σ_l p_il g_il)
        let inv_t = T::one() / T::lit(self.temperature);
        let mut gz = Array::zeros(&[b, c]);
        for i in 0..b {
            let s: T = g_pp.row(i).iter().copied().sum();
            let pi = p.row(i);
            for (j, out) in gz.row_mut(i).iter_mut().enumerate() {
                *out = inv_t * (g_pp.row(i)[j] - pi[j] * s);
            }
        }
        vec![Some(gz)]
    }
}
