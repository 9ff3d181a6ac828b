use std::collections::HashMap;

use super::{Array, ParamGrads, ParamStore, Real};

/// Update rule with the same semantics as the PyTorch optimizers of the
/// same name.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UpdateRule {
    /// Heavy-ball SGD, zero dampening; weight decay is added to the gradient.
    Sgd { momentum: f64, weight_decay: f64 },
    /// Adam with decoupled weight decay.
    AdamW {
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
    },
}

impl UpdateRule {
    pub fn adamw(weight_decay: f64) -> Self {
        Self::AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

#[derive(Debug)]
struct State<T> {
    step: u64,
    first: Array<T>,
    second: Option<Array<T>>,
}

/// Optimizer over one or more parameter stores sharing a learning rate.
#[derive(Debug)]
pub struct Optimizer<T> {
    rule: UpdateRule,
    lr: f64,
    state: HashMap<(u64, usize), State<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(rule: UpdateRule, lr: f64) -> Self {
        Self {
            rule,
            lr,
            state: HashMap::new(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn rule(&self) -> UpdateRule {
        self.rule
    }

    /// Updates every trainable parameter of `store` that has a gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &ParamGrads<T>) {
        let uid = store.uid();
        let lr = self.lr;
        for (id, p) in store.iter_mut() {
            if !p.trainable {
                continue;
            }
            let Some(g) = grads.get(id) else { continue };
            assert_eq!(g.shape(), p.value.shape(), "gradient shape for {}", p.name);
            let st = self.state.entry((uid, id.index())).or_insert_with(|| State {
                step: 0,
                first: Array::zeros(g.shape()),
                second: None,
            });
            st.step += 1;
            match self.rule {
                UpdateRule::Sgd { momentum, weight_decay } => {
                    let (mom, wd, lr) = (T::lit(momentum), T::lit(weight_decay), T::lit(lr));
                    let first_step = st.step == 1;
                    for ((w, &gv), buf) in p.value.data_mut().iter_mut().zip(g.data()).zip(st.first.data_mut()) {
                        let d = gv + wd * *w;
                        *buf = if first_step || momentum == 0.0 {
                            d
                        } else {
                            mom * *buf + d
                        };
                        *w = *w - lr * *buf;
                    }
                }
                UpdateRule::AdamW {
                    beta1,
                    beta2,
                    eps,
                    weight_decay,
                } => {
                    let second = st.second.get_or_insert_with(|| Array::zeros(g.shape()));
                    let bc1 = 1.0 - beta1.powi(st.step as i32);
                    let bc2 = 1.0 - beta2.powi(st.step as i32);
                    let step_size = T::lit(lr / bc1);
                    let bc2_sqrt = T::lit(bc2.sqrt());
                    let (b1, b2, eps) = (T::lit(beta1), T::lit(beta2), T::lit(eps));
                    let decay = T::lit(1.0 - lr * weight_decay);
                    let one = T::one();
                    for (((w, &gv), m), v) in p
                        .value
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(st.first.data_mut())
                        .zip(second.data_mut())
                    {
                        *w = *w * decay;
                        *m = b1 * *m + (one - b1) * gv;
                        *v = b2 * *v + (one - b2) * gv * gv;
                        let denom = v.sqrt() / bc2_sqrt + eps;
                        *w = *w - step_size * *m / denom;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Graph, ParamGroup};

    fn quadratic_grads(store: &ParamStore<f64>) -> ParamGrads<f64> {
        // loss = sum(w * w) / 2  =>  grad = w
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let id = store.id("w").unwrap();
        let w = b.var(id);
        let sq = g.mul(w, w);
        let ones = g.constant(Array::full(&[1, 2], 1.0));
        let s = g.linear(sq, ones, None);
        let loss = g.scale(s, 0.5);
        let mut gr = g.backward(loss);
        b.grads(&mut gr)
    }

    #[test]
    fn sgd_momentum_matches_hand_rolled_recurrence() {
        let mut store = ParamStore::new();
        store.add("w", Array::from_f64(&[1, 2], &[1.0, -2.0]), ParamGroup::Head);
        let mut opt = Optimizer::new(
            UpdateRule::Sgd {
                momentum: 0.9,
                weight_decay: 0.0,
            },
            0.1,
        );
        let (mut w, mut buf) = (1.0f64, 0.0f64);
        for step in 0..5 {
            let gr = quadratic_grads(&store);
            opt.step(&mut store, &gr);
            buf = if step == 0 { w } else { 0.9 * buf + w };
            w -= 0.1 * buf;
        }
        let got = store.get(store.id("w").unwrap()).value.data()[0];
        assert!((got - w).abs() < 1e-12, "{got} vs {w}");
    }

    #[test]
    fn adamw_first_step_moves_by_lr_and_decays() {
        let mut store = ParamStore::new();
        store.add("w", Array::from_f64(&[1, 2], &[1.0, -2.0]), ParamGroup::Head);
        let mut opt = Optimizer::new(UpdateRule::adamw(0.01), 0.1);
        let gr = quadratic_grads(&store);
        opt.step(&mut store, &gr);
        let v = store.get(store.id("w").unwrap()).value.data().to_vec();
        // bias-corrected first Adam step is lr * sign(g) (up to eps)
        assert!((v[0] - (1.0 * (1.0 - 0.001) - 0.1)).abs() < 1e-6);
        assert!((v[1] - (-2.0 * (1.0 - 0.001) + 0.1)).abs() < 1e-6);
    }

    #[test]
    fn frozen_parameters_are_untouched() {
        let mut store = ParamStore::new();
        store.add("w", Array::from_f64(&[1, 2], &[1.0, -2.0]), ParamGroup::Features);
        let gr = quadratic_grads(&store);
        store.set_group_trainable(ParamGroup::Features, false);
        let before = store.get(store.id("w").unwrap()).value.clone();
        let mut opt = Optimizer::new(UpdateRule::adamw(0.01), 0.1);
        opt.step(&mut store, &gr);
        assert_eq!(store.get(store.id("w").unwrap()).value, before);
    }
}
