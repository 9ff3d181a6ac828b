use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{Array, Gradients, Graph, Real, Var};

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

/// Parameter groups used for freeze control.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Features,
    Head,
    Discriminator,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Array<T>,
    pub group: ParamGroup,
    pub trainable: bool,
}

/// Named parameter tensors of one model.
#[derive(Debug)]
pub struct ParamStore<T> {
    uid: u64,
    params: Vec<Param<T>>,
    by_name: BTreeMap<String, ParamId>,
}

impl<T: Real> Clone for ParamStore<T> {
    fn clone(&self) -> Self {
        Self {
            uid: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.clone(),
                    group: p.group,
                    trainable: p.trainable,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            uid: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            params: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    /// Identity used to key optimizer state; fresh for every store and clone.
    pub fn uid(&self) -> u64 {
        self.uid
    }

    /// Panics on a duplicate name.
    pub fn add(&mut self, name: impl Into<String>, value: Array<T>, group: ParamGroup) -> ParamId {
        let name = name.into();
        let id = ParamId(self.params.len());
        assert!(
            self.by_name.insert(name.clone(), id).is_none(),
            "duplicate parameter {name}"
        );
        self.params.push(Param {
            name,
            value,
            group,
            trainable: true,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param<T>)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn set_group_trainable(&mut self, group: ParamGroup, trainable: bool) {
        for p in self.params.iter_mut().filter(|p| p.group == group) {
            p.trainable = trainable;
        }
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for p in &mut self.params {
            p.trainable = trainable;
        }
    }

    /// Number of scalar parameters.
    pub fn total_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    pub fn group_values(&self, group: ParamGroup) -> Vec<&Array<T>> {
        self.params
            .iter()
            .filter(|p| p.group == group)
            .map(|p| &p.value)
            .collect()
    }

    /// Registers every parameter as a leaf of `g`.
    pub fn bind<'a>(&'a self, g: &mut Graph<'a, T>) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| g.param(&p.value, p.trainable)).collect(),
        }
    }
}

/// Graph leaves of a bound [`ParamStore`], in parameter order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Moves this store's gradients out of `grads`.
    pub fn grads<T: Real>(&self, grads: &mut Gradients<T>) -> ParamGrads<T> {
        ParamGrads {
            grads: self.vars.iter().map(|&v| grads.take(v)).collect(),
        }
    }
}

/// Per-parameter gradients aligned with a [`ParamStore`].
#[derive(Debug)]
pub struct ParamGrads<T> {
    grads: Vec<Option<Array<T>>>,
}

impl<T: Real> ParamGrads<T> {
    pub fn get(&self, id: ParamId) -> Option<&Array<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.all_finite())
    }
}
