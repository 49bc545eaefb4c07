//! Named parameter storage and the small layers built on it.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::autograd::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Flat list of named tensors; ids index into it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names.iter().zip(&self.values).enumerate().map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.data.len()).sum()
    }
}

/// Allocates parameters under a dotted name prefix.
pub struct Builder<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Self { store, rng, prefix: String::new() }
    }

    pub fn scope<T>(&mut self, name: &str, f: impl FnOnce(&mut Builder<'_>) -> T) -> T {
        let prefix = if self.prefix.is_empty() { name.to_string() } else { format!("{}.{name}", self.prefix) };
        let mut inner = Builder { store: &mut *self.store, rng: &mut *self.rng, prefix };
        f(&mut inner)
    }

    fn full(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn uniform(&mut self, name: &str, rows: usize, cols: usize, bound: f64) -> ParamId {
        let data = (0..rows * cols).map(|_| self.rng.random_range(-bound..=bound)).collect();
        let full = self.full(name);
        self.store.add(full, Tensor::from_vec(rows, cols, data))
    }

    pub fn filled(&mut self, name: &str, rows: usize, cols: usize, v: f64) -> ParamId {
        let full = self.full(name);
        self.store.add(full, Tensor::from_vec(rows, cols, vec![v; rows * cols]))
    }

    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        self.scope(name, |b| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Linear { w: b.uniform("w", fan_in, fan_out, bound), b: Some(b.uniform("b", 1, fan_out, bound)) }
        })
    }

    pub fn linear_no_bias(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        self.scope(name, |b| Linear { w: b.uniform("w", fan_in, fan_out, 1.0 / (fan_in as f64).sqrt()), b: None })
    }

    pub fn layer_norm(&mut self, name: &str, dim: usize) -> LayerNorm {
        self.scope(name, |b| LayerNorm { gamma: b.filled("gamma", 1, dim, 1.0), beta: b.filled("beta", 1, dim, 0.0) })
    }

    pub fn ffn(&mut self, name: &str, dim: usize, hidden: usize) -> Ffn {
        self.scope(name, |b| Ffn { l1: b.linear("l1", dim, hidden), l2: b.linear("l2", hidden, dim) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.w);
        let y = tape.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layer_norm(x, g, b)
    }
}

/// `max(0, x·W1 + b1)·W2 + b2`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ffn {
    pub l1: Linear,
    pub l2: Linear,
}

impl Ffn {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let h = self.l1.forward(tape, store, x);
        let h = tape.relu(h);
        self.l2.forward(tape, store, h)
    }
}
