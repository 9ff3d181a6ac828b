use serde::{Deserialize, Serialize};

use crate::tensor::{Array, Function, Graph, Real, Var};

/// Identity in the forward pass; multiplies the incoming gradient by `-lambda`.
pub fn grl<T: Real>(g: &mut Graph<'_, T>, x: Var, lambda: T) -> Var {
    debug_assert!(lambda >= T::zero(), "reversal coefficient must be non-negative");
    let out = g.value(x).clone();
    g.custom(&[x], out, Box::new(GradientReversal { lambda }))
}

struct GradientReversal<T> {
    lambda: T,
}

impl<T: Real> Function<T> for GradientReversal<T> {
    fn backward(
        &self,
        _inputs: &[&Array<T>],
        _output: &Array<T>,
        grad: &Array<T>,
        _needs: &[bool],
    ) -> Vec<Option<Array<T>>> {
        vec![Some(grad.scale(-self.lambda))]
    }
}

/// Warm-up of the reversal coefficient from `lo` to `hi` over `max_steps`:
/// `lo + (hi - lo) * (2 / (1 + exp(-gamma * p)) - 1)` with `p = step / max_steps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrlSchedule {
    pub gamma: f64,
    pub lo: f64,
    pub hi: f64,
    pub max_steps: u64,
    pub step: u64,
}

impl GrlSchedule {
    pub fn new(max_steps: u64) -> Self {
        Self {
            gamma: 10.0,
            lo: 0.0,
            hi: 1.0,
            max_steps,
            step: 0,
        }
    }

    pub fn progress(&self) -> f64 {
        if self.max_steps == 0 {
            return 1.0;
        }
        self.step.min(self.max_steps) as f64 / self.max_steps as f64
    }

    pub fn lambda(&self) -> f64 {
        let p = self.progress();
        self.lo + (self.hi - self.lo) * (2.0 / (1.0 + (-self.gamma * p).exp()) - 1.0)
    }

    /// Moves one step forward, saturating at `max_steps`.
    pub fn advance(&mut self) {
        self.step = (self.step + 1).min(self.max_steps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let mut s = GrlSchedule::new(1000);
        assert_eq!(s.lambda(), 0.0);
        s.step = 500;
        let mid = 2.0 / (1.0 + (-5.0f64).exp()) - 1.0;
        assert!((s.lambda() - mid).abs() < 1e-15);
        assert!((s.lambda() - 0.98661).abs() < 1e-5);
        s.step = 1000;
        assert!((s.lambda() - 0.99991).abs() < 1e-5);
        s.advance();
        assert_eq!(s.step, 1000);
    }

    #[test]
    fn schedule_respects_bounds() {
        let s = GrlSchedule {
            gamma: 10.0,
            lo: 0.2,
            hi: 0.6,
            max_steps: 10,
            step: 0,
        };
        assert!((s.lambda() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn reversal_forward_is_identity_and_backward_negates() {
        let x = Array::<f64>::from_f64(&[2, 2], &[1.5, -0.25, 3.0, 1e-30]);
        for &lambda in &[0.0, 0.3, 1.0] {
            let mut g = Graph::new();
            let xv = g.input(x.clone());
            let y = grl(&mut g, xv, lambda);
            assert_eq!(g.value(y), &x);
            let w = g.constant(Array::from_f64(&[1, 2], &[2.0, -1.0]));
            let z = g.linear(y, w, None);
            let ones = g.constant(Array::from_f64(&[1, 2], &[1.0, 1.0]));
            let zt = g.custom(&[z], g.value(z).clone().reshape(&[1, 2]), Box::new(T2));
            let s = g.linear(zt, ones, None);
            let gr = g.backward(s);
            let gx = gr.get(xv).unwrap();
            // upstream gradient for each row is [2, -1]
            for row in 0..2 {
                assert_eq!(gx.row(row), &[-2.0 * lambda, lambda][..]);
            }
        }
    }

    struct T2;
    impl Function<f64> for T2 {
        fn backward(
            &self,
            inputs: &[&Array<f64>],
            _o: &Array<f64>,
            grad: &Array<f64>,
            _n: &[bool],
        ) -> Vec<Option<Array<f64>>> {
            vec![Some(grad.clone().reshape(inputs[0].shape()))]
        }
    }
}
