//! Central finite-difference checks of every built-in op.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Array, ConvGeom, Graph, Var};

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Array<f64> {
    let n = shape.iter().product();
    Array::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Checks d loss / d inputs against central differences.
fn check(inputs: Vec<Array<f64>>, build: impl Fn(&mut Graph<f64>, &[Var]) -> Var) {
    let analytic: Vec<Array<f64>> = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|a| g.input(a.clone())).collect();
        let loss = build(&mut g, &vars);
        let mut grads = g.backward(loss);
        vars.iter().map(|&v| grads.take(v).expect("input gradient")).collect()
    };
    let eval = |xs: &[Array<f64>]| {
        let mut g = Graph::inference();
        let vars: Vec<Var> = xs.iter().map(|a| g.constant(a.clone())).collect();
        let loss = build(&mut g, &vars);
        g.value(loss).item()
    };
    let h = 1e-6;
    for (i, a) in inputs.iter().enumerate() {
        for j in 0..a.len() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let an = analytic[i].data()[j];
            let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
            assert!(err < 1e-5, "input {i} elem {j}: fd {fd} analytic {an}");
        }
    }
}

/// Reduces any tensor to a scalar with fixed pseudo-random weights so that
/// every output element contributes a distinct gradient.
fn weighted_sum(g: &mut Graph<f64>, x: Var) -> Var {
    let n = g.value(x).len();
    let flat = g.value(x).clone().reshape(&[1, n]);
    let fv = g.custom(&[x], flat, Box::new(Reshape));
    let w = Array::from_vec(&[1, n], (0..n).map(|i| ((i * 7 + 3) % 11) as f64 / 5.0 - 1.0).collect());
    let w = g.constant(w);
    g.linear(fv, w, None)
}

struct Reshape;

impl super::Function<f64> for Reshape {
    fn backward(
        &self,
        inputs: &[&Array<f64>],
        _output: &Array<f64>,
        grad: &Array<f64>,
        _needs: &[bool],
    ) -> Vec<Option<Array<f64>>> {
        vec![Some(grad.clone().reshape(inputs[0].shape()))]
    }
}

#[test]
fn linear_with_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ins = vec![
        random(&[3, 4], &mut rng),
        random(&[5, 4], &mut rng),
        random(&[5], &mut rng),
    ];
    check(ins, |g, v| {
        let y = g.linear(v[0], v[1], Some(v[2]));
        weighted_sum(g, y)
    });
}

#[test]
fn conv2d_strided_padded() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let geom = ConvGeom {
        kernel: 3,
        stride: 2,
        pad: 1,
    };
    let ins = vec![
        random(&[2, 5, 6, 3], &mut rng),
        random(&[4, 3, 3, 3], &mut rng),
        random(&[4], &mut rng),
    ];
    check(ins, |g, v| {
        let y = g.conv2d(v[0], v[1], Some(v[2]), geom);
        weighted_sum(g, y)
    });
}

#[test]
fn conv2d_patchify() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let geom = ConvGeom {
        kernel: 2,
        stride: 2,
        pad: 0,
    };
    let ins = vec![random(&[1, 4, 4, 2], &mut rng), random(&[3, 2, 2, 2], &mut rng)];
    check(ins, |g, v| {
        let y = g.conv2d(v[0], v[1], None, geom);
        weighted_sum(g, y)
    });
}

#[test]
fn conv2d_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let geom = ConvGeom {
        kernel: 3,
        stride: 1,
        pad: 1,
    };
    let x = random(&[1, 4, 4, 2], &mut rng);
    let w = random(&[3, 3, 3, 2], &mut rng);
    let mut g = Graph::inference();
    let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
    let y = g.conv2d(xv, wv, None, geom);
    let out = g.value(y);
    for oy in 0..4 {
        for ox in 0..4 {
            for co in 0..3 {
                let mut s = 0.0;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (iy, ix) = (oy as isize + ky as isize - 1, ox as isize + kx as isize - 1);
                        if !(0..4).contains(&iy) || !(0..4).contains(&ix) {
                            continue;
                        }
                        for ci in 0..2 {
                            s += x.data()[((iy * 4 + ix) * 2) as usize + ci]
                                * w.data()[((co * 3 + ky) * 3 + kx) * 2 + ci];
                        }
                    }
                }
                let got = out.data()[(oy * 4 + ox) * 3 + co];
                assert!((got - s).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn relu_pool_mul_sigmoid_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ins = vec![random(&[2, 3, 3, 4], &mut rng), random(&[2, 4], &mut rng)];
    check(ins, |g, v| {
        let r = g.relu(v[0]);
        let p = g.mean_pool(r);
        let m = g.mul(p, v[1]);
        let s = g.sigmoid(m);
        let a = g.add(s, v[1]);
        let sc = g.scale(a, -1.5);
        weighted_sum(g, sc)
    });
}

#[test]
fn cross_entropy_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ins = vec![random(&[4, 5], &mut rng)];
    check(ins, |g, v| g.cross_entropy(v[0], &[0, 4, 2, 2]));
}

#[test]
fn cross_entropy_value_of_uniform_logits_is_log_c() {
    let mut g = Graph::<f64>::inference();
    let z = g.constant(Array::zeros(&[3, 12]));
    let l = g.cross_entropy(z, &[0, 5, 11]);
    assert!((g.value(l).item() - 12f64.ln()).abs() < 1e-12);
}

#[test]
fn shared_leaf_accumulates() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ins = vec![random(&[2, 3], &mut rng), random(&[3, 3], &mut rng)];
    check(ins, |g, v| {
        let a = g.linear(v[0], v[1], None);
        let b = g.linear(a, v[1], None);
        weighted_sum(g, b)
    });
}

#[test]
fn inference_graph_tracks_nothing() {
    let mut g = Graph::<f32>::inference();
    let x = g.input(Array::scalar(2.0));
    assert!(!g.requires_grad(x));
    let gr = g.backward(x);
    assert!(gr.get(x).is_none());
}
