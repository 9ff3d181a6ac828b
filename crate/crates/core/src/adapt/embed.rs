use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{Array, Function, Graph, Real, Var};

/// Largest `d_f * C` handled by the exact outer-product embedding.
pub const EXACT_LIMIT: usize = 4096;
pub const DEFAULT_RANDOM_DIM: usize = 1024;

/// Joint embedding of features and class probabilities fed to the domain
/// discriminator.
#[derive(Clone, Debug)]
pub enum JointEmbedder<T> {
    /// `flatten(f ⊗ p)`, component `f_k * p_j` at index `k * C + j`.
    Exact { feature_dim: usize, classes: usize },
    /// `(R_f f) ⊙ (R_g p) / sqrt(d_r)` with fixed Gaussian projections.
    Randomized { rf: Array<T>, rg: Array<T>, dim: usize },
}

impl<T: Real> JointEmbedder<T> {
    /// Exact when `feature_dim * classes <= 4096`, randomized otherwise.
    pub fn new(feature_dim: usize, classes: usize, random_dim: usize, seed: u64) -> Self {
        if feature_dim * classes <= EXACT_LIMIT {
            Self::Exact { feature_dim, classes }
        } else {
            Self::randomized(feature_dim, classes, random_dim, seed)
        }
    }

    pub fn randomized(feature_dim: usize, classes: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<T> { (0..n).map(|_| T::lit(StandardNormal.sample(&mut rng))).collect() };
        let rf = Array::from_vec(&[dim, feature_dim], draw(dim * feature_dim));
        let rg = Array::from_vec(&[dim, classes], draw(dim * classes));
        Self::Randomized { rf, rg, dim }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Self::Exact { .. })
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Self::Exact { feature_dim, classes } => feature_dim * classes,
            Self::Randomized { dim, .. } => *dim,
        }
    }

    /// `f: B x d_f` features, `p: B x C` probability rows.
    pub fn embed(&self, g: &mut Graph<'_, T>, f: Var, p: Var) -> Result<Var> {
        let (fv, pv) = (g.value(f), g.value(p));
        if fv.ndim() != 2 || pv.ndim() != 2 || fv.rows() != pv.rows() {
            return Err(Error::Shape(format!(
                "joint embedding needs B x d_f and B x C, got {:?} and {:?}",
                fv.shape(),
                pv.shape()
            )));
        }
        check_probability_rows(pv)?;
        match self {
            Self::Exact { feature_dim, classes } => {
                if fv.shape()[1] != *feature_dim || pv.shape()[1] != *classes {
                    return Err(Error::Shape(format!(
                        "exact embedding built for {feature_dim} x {classes}, got {:?} x {:?}",
                        fv.shape(),
                        pv.shape()
                    )));
                }
                let out = outer_rows(fv, pv);
                Ok(g.custom(&[f, p], out, Box::new(OuterProduct)))
            }
            Self::Randomized { rf, rg, dim } => {
                let rf = g.constant(rf.clone());
                let rg = g.constant(rg.clone());
                let a = g.linear(f, rf, None);
                let b = g.linear(p, rg, None);
                let prod = g.mul(a, b);
                Ok(g.scale(prod, T::one() / T::lit(*dim as f64).sqrt()))
            }
        }
    }
}

fn check_probability_rows<T: Real>(p: &Array<T>) -> Result<()> {
    let tol = T::lit(1e-4);
    for i in 0..p.rows() {
        let s: T = p.row(i).iter().copied().sum();
        if !((s - T::one()).abs() <= tol) {
            return Err(Error::Contract(format!(
                "prediction row {i} sums to {s:?}, expected a probability vector"
            )));
        }
    }
    Ok(())
}

fn outer_rows<T: Real>(f: &Array<T>, p: &Array<T>) -> Array<T> {
    let (b, df, c) = (f.rows(), f.row_len(), p.row_len());
    let mut out = Array::zeros(&[b, df * c]);
    for i in 0..b {
        let (fi, pi) = (f.row(i), p.row(i));
        let oi = out.row_mut(i);
        for (k, &fk) in fi.iter().enumerate() {
            for (j, &pj) in pi.iter().enumerate() {
                oi[k * c + j] = fk * pj;
            }
        }
    }
    out
}

struct OuterProduct;

impl<T: Real> Function<T> for OuterProduct {
    fn backward(
        &self,
        inputs: &[&Array<T>],
        _output: &Array<T>,
        grad: &Array<T>,
        needs: &[bool],
    ) -> Vec<Option<Array<T>>> {
        let (f, p) = (inputs[0], inputs[1]);
        let (b, df, c) = (f.rows(), f.row_len(), p.row_len());
        let gf = needs[0].then(|| {
            let mut gf = Array::zeros(f.shape());
            for i in 0..b {
                let (gi, pi) = (grad.row(i), p.row(i));
                for (k, out) in gf.row_mut(i).iter_mut().enumerate() {
                    *out = (0..c).map(|j| gi[k * c + j] * pi[j]).sum();
                }
            }
            gf
        });
        let gp = needs[1].then(|| {
            let mut gp = Array::zeros(p.shape());
            for i in 0..b {
                let (gi, fi) = (grad.row(i), f.row(i));
                for (j, out) in gp.row_mut(i).iter_mut().enumerate() {
                    *out = (0..df).map(|k| gi[k * c + j] * fi[k]).sum();
                }
            }
            gp
        });
        vec![gf, gp]
    }
}
