#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use udakit::adapt::{CdanHead, CdanInputs, DomainDiscriminator, JointEmbedder};
use udakit::tensor::{softmax_rows, Array, Graph};

/// Straight-line evaluation of the class-confusion loss, written without
/// any shortcut: softmax, entropy, certainty weights, weighted confusion,
/// explicit row normalisation, mean off-diagonal mass.
pub fn mcc_oracle(z: &[Vec<f64>], temperature: f64) -> f64 {
    let b = z.len();
    let c = z[0].len();
    let mut y = vec![vec![0.0; c]; b];
    for i in 0..b {
        let m = z[i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z[i].iter().map(|v| ((v - m) / temperature).exp()).collect();
        let s: f64 = e.iter().sum();
        for j in 0..c {
            y[i][j] = e[j] / s;
        }
    }
    let mut h = vec![0.0; b];
    for i in 0..b {
        for j in 0..c {
            if y[i][j] > 0.0 {
                h[i] -= y[i][j] * y[i][j].ln();
            }
        }
    }
    let u: Vec<f64> = h.iter().map(|hi| 1.0 + (-hi).exp()).collect();
    let su: f64 = u.iter().sum();
    let w: Vec<f64> = u.iter().map(|ui| b as f64 * ui / su).collect();
    let mut conf = vec![vec![0.0; c]; c];
    for j in 0..c {
        for k in 0..c {
            for i in 0..b {
                conf[j][k] += w[i] * y[i][j] * y[i][k];
            }
        }
    }
    let mut loss = 0.0;
    for j in 0..c {
        let rs: f64 = conf[j].iter().sum();
        if rs == 0.0 {
            continue;
        }
        for k in 0..c {
            if k != j {
                loss += conf[j][k] / rs;
            }
        }
    }
    loss / c as f64
}

pub fn rows(a: &Array<f64>) -> Vec<Vec<f64>> {
    (0..a.rows()).map(|i| a.row(i).to_vec()).collect()
}

pub fn random_array(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Array<f64> {
    let n = shape.iter().product();
    Array::from_vec(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_differences(x: &Array<f64>, h: f64, f: impl Fn(&Array<f64>) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

/// Largest relative error, with a floor on the denominator for entries
/// that are numerically zero.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Random small adversarial-loss instance in double precision.
pub struct CdanCase {
    pub fs: Array<f64>,
    pub ft: Array<f64>,
    pub ps: Array<f64>,
    pub pt: Array<f64>,
    pub disc: DomainDiscriminator<f64>,
    pub emb: JointEmbedder<f64>,
}

impl CdanCase {
    pub fn random(seed: u64) -> Self {
        let mut r = rng(seed);
        let df = r.random_range(2..=8);
        let c = r.random_range(2..=5);
        let b = r.random_range(2..=6);
        let fs = random_array(&[b, df], 1.0, &mut r);
        let ft = random_array(&[b, df], 1.0, &mut r);
        let ps = softmax_rows(&random_array(&[b, c], 2.0, &mut r));
        let pt = softmax_rows(&random_array(&[b, c], 2.0, &mut r));
        let emb = JointEmbedder::new(df, c, 16, seed);
        let hidden = r.random_range(3..=8);
        let disc = DomainDiscriminator::new(emb.output_dim(), hidden, seed ^ 0x5eed);
        Self {
            fs,
            ft,
            ps,
            pt,
            disc,
            emb,
        }
    }

    /// Loss value for the given features and discriminator parameters.
    pub fn loss(
        &self,
        fs: &Array<f64>,
        ft: &Array<f64>,
        disc: &DomainDiscriminator<f64>,
        lambda: f64,
        entropy_conditioning: bool,
    ) -> f64 {
        let mut g = Graph::inference();
        let bound = disc.params.bind(&mut g);
        let (fsv, ftv) = (g.constant(fs.clone()), g.constant(ft.clone()));
        let head = CdanHead {
            discriminator: disc,
            bound: &bound,
            embedder: &self.emb,
        };
        let out = udakit::adapt::cdan_loss(
            &mut g,
            &head,
            CdanInputs {
                features_s: fsv,
                probs_s: &self.ps,
                features_t: ftv,
                probs_t: &self.pt,
            },
            lambda,
            entropy_conditioning,
        )
        .unwrap();
        g.value(out.loss).item()
    }

    /// Analytic gradients: (d/dF_s, d/dF_t, per-parameter d/dθ_D).
    pub fn grads(&self, lambda: f64, entropy_conditioning: bool) -> (Array<f64>, Array<f64>, Vec<Array<f64>>) {
        let mut g = Graph::new();
        let bound = self.disc.params.bind(&mut g);
        let (fsv, ftv) = (g.input(self.fs.clone()), g.input(self.ft.clone()));
        let head = CdanHead {
            discriminator: &self.disc,
            bound: &bound,
            embedder: &self.emb,
        };
        let out = udakit::adapt::cdan_loss(
            &mut g,
            &head,
            CdanInputs {
                features_s: fsv,
                probs_s: &self.ps,
                features_t: ftv,
                probs_t: &self.pt,
            },
            lambda,
            entropy_conditioning,
        )
        .unwrap();
        let mut gr = g.backward(out.loss);
        let gfs = gr.take(fsv).unwrap_or_else(|| Array::zeros(self.fs.shape()));
        let gft = gr.take(ftv).unwrap_or_else(|| Array::zeros(self.ft.shape()));
        let pg = bound.grads(&mut gr);
        let gd = self
            .disc
            .params
            .iter()
            .map(|(id, p)| pg.get(id).cloned().unwrap_or_else(|| Array::zeros(p.value.shape())))
            .collect();
        (gfs, gft, gd)
    }
}
