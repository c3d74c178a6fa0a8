//! Reusable layers built on the autodiff [`Graph`].

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Mat, Var};
use super::params::{Init, ParamGroup, ParamId, ParamStore};

/// Registers parameters under a common name prefix and learning-rate group.
pub struct Builder<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
    prefix: String,
    group: ParamGroup,
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng, group: ParamGroup) -> Self {
        Builder { store, rng, prefix: String::new(), group }
    }

    pub fn scoped<R>(&mut self, name: &str, f: impl FnOnce(&mut Builder<'_>) -> R) -> R {
        let prefix = if self.prefix.is_empty() { name.to_owned() } else { format!("{}.{name}", self.prefix) };
        let mut inner = Builder { store: self.store, rng: self.rng, prefix, group: self.group };
        f(&mut inner)
    }

    pub fn param(&mut self, name: &str, shape: (usize, usize), init: Init) -> ParamId {
        let full = if self.prefix.is_empty() { name.to_owned() } else { format!("{}.{name}", self.prefix) };
        self.store.add(full, self.group, shape, init, self.rng)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(b: &mut Builder<'_>, name: &str, input: usize, output: usize) -> Self {
        b.scoped(name, |b| Linear {
            weight: b.param("w", (input, output), Init::Xavier),
            bias: b.param("b", (1, output), Init::Zeros),
            input,
            output,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

/// One linear map followed by GELU. GELU(0) = 0, so zero weights and bias
/// give an exactly zero output.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Ffnn {
    pub linear: Linear,
}

impl Ffnn {
    pub fn new(b: &mut Builder<'_>, name: &str, input: usize, output: usize) -> Self {
        Ffnn { linear: Linear::new(b, name, input, output) }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let y = self.linear.forward(g, x);
        g.gelu(y)
    }

    pub fn zero(&self, store: &mut ParamStore) {
        store.value_mut(self.linear.weight).fill(0.0);
        store.value_mut(self.linear.bias).fill(0.0);
    }
}

/// Linear → GELU → Linear.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn new(b: &mut Builder<'_>, name: &str, input: usize, hidden: usize, output: usize) -> Self {
        b.scoped(name, |b| Mlp { hidden: Linear::new(b, "hidden", input, hidden), out: Linear::new(b, "out", hidden, output) })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let h = self.hidden.forward(g, x);
        let h = g.gelu(h);
        self.out.forward(g, h)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(b: &mut Builder<'_>, name: &str, dim: usize) -> Self {
        b.scoped(name, |b| LayerNorm { gain: b.param("gain", (1, dim), Init::Ones), bias: b.param("bias", (1, dim), Init::Zeros) })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let n = g.layer_norm(x);
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        let y = g.mul_row(n, gain);
        g.add_row(y, bias)
    }
}

/// Multi-head scaled dot-product attention with an additive visibility
/// penalty shared by every head.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(b: &mut Builder<'_>, name: &str, dim: usize, heads: usize) -> Self {
        assert!(heads > 0 && dim.is_multiple_of(heads), "dim {dim} not divisible by {heads} heads");
        b.scoped(name, |b| MultiHeadAttention {
            query: Linear::new(b, "q", dim, dim),
            key: Linear::new(b, "k", dim, dim),
            value: Linear::new(b, "v", dim, dim),
            output: Linear::new(b, "o", dim, dim),
            heads,
        })
    }

    /// Per-head attention outputs concatenated, before the output projection.
    pub fn heads_concat(&self, g: &mut Graph<'_>, x: Var, penalty: &Mat) -> Var {
        let dim = self.query.output;
        let dk = dim / self.heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let q = self.query.forward(g, x);
        let k = self.key.forward(g, x);
        let v = self.value.forward(g, x);
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (g.slice_cols(q, h * dk, dk), g.slice_cols(k, h * dk, dk), g.slice_cols(v, h * dk, dk))
            };
            let logits = g.matmul_t(qh, kh);
            let logits = g.scale(logits, scale);
            let weights = g.masked_softmax(logits, penalty);
            outs.push(g.matmul(weights, vh));
        }
        if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, penalty: &Mat) -> Var {
        let a = self.heads_concat(g, x, penalty);
        self.output.forward(g, a)
    }
}

/// Pre-norm transformer block.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransformerLayer {
    pub attn_norm: LayerNorm,
    pub attention: MultiHeadAttention,
    pub ffn_norm: LayerNorm,
    pub ffn: Mlp,
}

impl TransformerLayer {
    pub fn new(b: &mut Builder<'_>, name: &str, dim: usize, heads: usize, ffn_dim: usize) -> Self {
        b.scoped(name, |b| TransformerLayer {
            attn_norm: LayerNorm::new(b, "attn_norm", dim),
            attention: MultiHeadAttention::new(b, "attn", dim, heads),
            ffn_norm: LayerNorm::new(b, "ffn_norm", dim),
            ffn: Mlp::new(b, "ffn", dim, ffn_dim, dim),
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, penalty: &Mat) -> Var {
        let n = self.attn_norm.forward(g, x);
        let a = self.attention.forward(g, n, penalty);
        let x = g.add(x, a);
        let n = self.ffn_norm.forward(g, x);
        let f = self.ffn.forward(g, n);
        g.add(x, f)
    }
}
