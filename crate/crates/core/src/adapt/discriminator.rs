use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Array, Bound, Graph, ParamGroup, ParamId, ParamStore, Real, Var};

pub const DEFAULT_HIDDEN: usize = 1024;

/// `d_j -> hidden -> hidden -> 1` rectifier MLP with a sigmoid output.
#[derive(Clone, Debug)]
pub struct DomainDiscriminator<T: Real> {
    pub params: ParamStore<T>,
    layers: [(ParamId, ParamId); 3],
    input_dim: usize,
    hidden: usize,
}

impl<T: Real> DomainDiscriminator<T> {
    /// Uniform `±1/sqrt(fan_in)` initialisation of weights and biases.
    pub fn new(input_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let dims = [(input_dim, hidden), (hidden, hidden), (hidden, 1)];
        let mut ids = Vec::with_capacity(3);
        for (i, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut draw = |n: usize| -> Vec<T> { (0..n).map(|_| T::lit(rng.random_range(-bound..bound))).collect() };
            let w = Array::from_vec(&[fan_out, fan_in], draw(fan_in * fan_out));
            let b = Array::from_vec(&[fan_out], draw(fan_out));
            let wid = params.add(format!("disc.l{i}.weight"), w, ParamGroup::Discriminator);
            let bid = params.add(format!("disc.l{i}.bias"), b, ParamGroup::Discriminator);
            ids.push((wid, bid));
        }
        Self {
            params,
            layers: [ids[0], ids[1], ids[2]],
            input_dim,
            hidden,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Domain probabilities `B x 1`, source = 1.
    pub fn forward(&self, g: &mut Graph<'_, T>, bound: &Bound, j: Var) -> Var {
        let mut h = j;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = g.linear(h, bound.var(w), Some(bound.var(b)));
            if i < 2 {
                h = g.relu(h);
            }
        }
        g.sigmoid(h)
    }

    pub fn snapshot(&self) -> Vec<Array<T>> {
        self.params.iter().map(|(_, p)| p.value.clone()).collect()
    }
}
