//! Neural interaction functions mapping an embedding pair (p_u, q_i) to a
//! pre-activation score: GMF (weighted element-wise product), MLP (tower
//! perceptron over the concatenation), and NeuMF (both branches joined by a
//! single output projection reading the same embeddings).
//!
//! Forward passes return a [`UnitCache`] holding the hidden activations; the
//! matching backward pass consumes it, so gradients can only be requested for
//! a forward that actually ran.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{dot, he_normal, relu, DenseMatrix, Param};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    Gmf,
    Mlp,
    Neumf,
}

impl std::fmt::Display for UnitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            UnitKind::Gmf => write!(f, "gmf"),
            UnitKind::Mlp => write!(f, "mlp"),
            UnitKind::Neumf => write!(f, "neumf"),
        }
    }
}

impl std::str::FromStr for UnitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gmf" => Ok(UnitKind::Gmf),
            "mlp" => Ok(UnitKind::Mlp),
            "neumf" => Ok(UnitKind::Neumf),
            other => Err(Error::Config(format!("unknown interaction unit `{other}`"))),
        }
    }
}

/// Hidden activations captured by a forward pass, consumed by backward.
/// GMF keeps nothing; MLP and NeuMF keep the post-ReLU tower activations.
#[derive(Debug, Clone, Default)]
pub struct UnitCache {
    acts: Vec<Vec<f64>>,
}

/// Weighted element-wise product: score = hᵀ(p ⊙ q).
#[derive(Debug, Clone)]
pub struct GmfUnit {
    pub h: Param,
}

impl GmfUnit {
    pub fn new(dim: usize, l2: f64, prefix: &str, rng: &mut ChaCha8Rng) -> Self {
        GmfUnit {
            h: Param::new(format!("{prefix}.h"), he_normal(rng, dim, 1, dim), l2),
        }
    }

    /// All-ones projection, i.e. a plain inner product (MF).
    pub fn ones(dim: usize, prefix: &str) -> Self {
        GmfUnit {
            h: Param::new(format!("{prefix}.h"), DenseMatrix::filled(dim, 1, 1.0), 0.0),
        }
    }

    fn forward(&self, p: &[f64], q: &[f64]) -> f64 {
        let h = self.h.value.data();
        assert_eq!(p.len(), h.len(), "gmf: embedding dim mismatch");
        assert_eq!(q.len(), h.len(), "gmf: embedding dim mismatch");
        p.iter().zip(q).zip(h).map(|((a, b), w)| a * b * w).sum()
    }

    fn backward(&mut self, p: &[f64], q: &[f64], upstream: f64, dp: &mut [f64], dq: &mut [f64]) {
        let h = self.h.value.data();
        let dh = self.h.grad.data_mut();
        for k in 0..h.len() {
            dh[k] += upstream * p[k] * q[k];
            dp[k] += upstream * h[k] * q[k];
            dq[k] += upstream * h[k] * p[k];
        }
    }
}

/// One fully connected ReLU layer of the tower.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weight: Param,
    pub bias: Param,
}

/// Tower of ReLU layers over [p; q]: widths halve from f·2^(L−1) down to the
/// final width f, with the first layer mapping the 2E-wide concatenation.
#[derive(Debug, Clone)]
pub struct MlpTower {
    layers: Vec<DenseLayer>,
}

impl MlpTower {
    fn new(
        embedding_dim: usize,
        num_layers: usize,
        final_width: usize,
        l2: f64,
        prefix: &str,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(num_layers >= 1, "tower needs at least one layer");
        assert!(final_width >= 1, "final width must be at least 1");
        let mut layers = Vec::with_capacity(num_layers);
        let mut in_width = 2 * embedding_dim;
        for x in 1..=num_layers {
            let out_width = final_width << (num_layers - x);
            layers.push(DenseLayer {
                weight: Param::new(
                    format!("{prefix}.w{x}"),
                    he_normal(rng, out_width, in_width, in_width),
                    l2,
                ),
                bias: Param::new(format!("{prefix}.b{x}"), DenseMatrix::vector(out_width), l2),
            });
            in_width = out_width;
        }
        MlpTower { layers }
    }

    fn input_width(&self) -> usize {
        self.layers[0].weight.value.cols()
    }

    fn final_width(&self) -> usize {
        self.layers.last().expect("tower has layers").weight.value.rows()
    }

    /// Runs the tower over the concatenated input and records every
    /// post-ReLU activation into the cache. Returns the final activation
    /// index within the cache.
    fn forward(&self, concat: &[f64], cache: &mut UnitCache) {
        assert_eq!(concat.len(), self.input_width(), "tower input width mismatch");
        let mut input = concat;
        for layer in &self.layers {
            let mut z = vec![0.0; layer.weight.value.rows()];
            layer.weight.value.matvec(input, &mut z);
            for (zk, b) in z.iter_mut().zip(layer.bias.value.data()) {
                *zk = relu(*zk + b);
            }
            cache.acts.push(z);
            input = cache.acts.last().expect("just pushed");
        }
    }

    /// Backpropagates `d_out` (gradient at the final activation) down to the
    /// concatenated input, accumulating parameter gradients. `acts` must be
    /// the activations this tower produced in its forward pass.
    fn backward(&mut self, concat: &[f64], acts: &[Vec<f64>], d_out: Vec<f64>, d_concat: &mut [f64]) {
        assert_eq!(acts.len(), self.layers.len(), "cache does not match tower depth");
        let mut delta = d_out;
        for x in (0..self.layers.len()).rev() {
            // ReLU mask from the cached forward activation: gradient flows
            // only where the unit fired.
            for (d, &a) in delta.iter_mut().zip(&acts[x]) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            let input: &[f64] = if x == 0 { concat } else { &acts[x - 1] };
            let layer = &mut self.layers[x];
            layer.weight.grad.add_outer(&delta, input);
            for (g, d) in layer.bias.grad.data_mut().iter_mut().zip(&delta) {
                *g += d;
            }
            if x == 0 {
                layer.weight.value.matvec_transpose_add(&delta, d_concat);
            } else {
                let mut next = vec![0.0; layer.weight.value.cols()];
                layer.weight.value.matvec_transpose_add(&delta, &mut next);
                delta = next;
            }
        }
    }

    fn params(&self) -> Vec<&Param> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

/// Tower perceptron over [p; q] with a learned output projection.
#[derive(Debug, Clone)]
pub struct MlpUnit {
    pub tower: MlpTower,
    pub h: Param,
}

impl MlpUnit {
    pub fn new(
        embedding_dim: usize,
        num_layers: usize,
        final_width: usize,
        l2: f64,
        prefix: &str,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let tower = MlpTower::new(embedding_dim, num_layers, final_width, l2, prefix, rng);
        let h = Param::new(
            format!("{prefix}.h"),
            he_normal(rng, final_width, 1, final_width),
            l2,
        );
        MlpUnit { tower, h }
    }
}

/// GMF and MLP branches over the same embeddings, joined by one projection
/// h of length E + final tower width.
#[derive(Debug, Clone)]
pub struct NeumfUnit {
    pub tower: MlpTower,
    pub h: Param,
}

impl NeumfUnit {
    pub fn new(
        embedding_dim: usize,
        num_layers: usize,
        final_width: usize,
        l2: f64,
        prefix: &str,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let tower = MlpTower::new(embedding_dim, num_layers, final_width, l2, prefix, rng);
        let joint = embedding_dim + final_width;
        let h = Param::new(format!("{prefix}.h"), he_normal(rng, joint, 1, joint), l2);
        NeumfUnit { tower, h }
    }
}

/// One interaction function of any kind.
#[derive(Debug, Clone)]
pub enum Unit {
    Gmf(GmfUnit),
    Mlp(MlpUnit),
    Neumf(NeumfUnit),
}

impl Unit {
    /// Builds a unit with the default tower (final width = embedding dim, so
    /// NeuMF's projection has length 2E).
    pub fn build(
        kind: UnitKind,
        embedding_dim: usize,
        num_layers: usize,
        final_width: Option<usize>,
        l2: f64,
        prefix: &str,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let final_width = final_width.unwrap_or(embedding_dim);
        match kind {
            UnitKind::Gmf => Unit::Gmf(GmfUnit::new(embedding_dim, l2, prefix, rng)),
            UnitKind::Mlp => Unit::Mlp(MlpUnit::new(
                embedding_dim,
                num_layers,
                final_width,
                l2,
                prefix,
                rng,
            )),
            UnitKind::Neumf => Unit::Neumf(NeumfUnit::new(
                embedding_dim,
                num_layers,
                final_width,
                l2,
                prefix,
                rng,
            )),
        }
    }

    pub fn kind(&self) -> UnitKind {
        match self {
            Unit::Gmf(_) => UnitKind::Gmf,
            Unit::Mlp(_) => UnitKind::Mlp,
            Unit::Neumf(_) => UnitKind::Neumf,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        match self {
            Unit::Gmf(u) => u.h.value.rows(),
            Unit::Mlp(u) => u.tower.input_width() / 2,
            Unit::Neumf(u) => u.tower.input_width() / 2,
        }
    }

    /// Pre-activation score for one embedding pair, plus the cache the
    /// matching backward pass needs.
    pub fn forward(&self, p: &[f64], q: &[f64]) -> (f64, UnitCache) {
        let mut cache = UnitCache::default();
        let score = match self {
            Unit::Gmf(u) => u.forward(p, q),
            Unit::Mlp(u) => {
                let concat = concat(p, q);
                u.tower.forward(&concat, &mut cache);
                dot(u.h.value.data(), cache.acts.last().expect("tower output"))
            }
            Unit::Neumf(u) => {
                let e = p.len();
                let concat = concat(p, q);
                u.tower.forward(&concat, &mut cache);
                let h = u.h.value.data();
                let z = cache.acts.last().expect("tower output");
                let gmf_part: f64 = (0..e).map(|k| h[k] * p[k] * q[k]).sum();
                let mlp_part = dot(&h[e..], z);
                gmf_part + mlp_part
            }
        };
        (score, cache)
    }

    /// Accumulates exact reverse-mode gradients of `upstream · score` into
    /// the unit's parameter grads and into `dp`/`dq`. `cache` must come from
    /// a forward pass over the same (p, q).
    pub fn backward(
        &mut self,
        p: &[f64],
        q: &[f64],
        cache: &UnitCache,
        upstream: f64,
        dp: &mut [f64],
        dq: &mut [f64],
    ) {
        if upstream == 0.0 {
            return;
        }
        match self {
            Unit::Gmf(u) => u.backward(p, q, upstream, dp, dq),
            Unit::Mlp(u) => {
                let z = cache.acts.last().expect("cache from forward");
                let h = u.h.value.data();
                let d_out: Vec<f64> = h.iter().map(|w| upstream * w).collect();
                for (g, a) in u.h.grad.data_mut().iter_mut().zip(z) {
                    *g += upstream * a;
                }
                let concat_in = concat(p, q);
                let mut d_concat = vec![0.0; concat_in.len()];
                u.tower.backward(&concat_in, &cache.acts, d_out, &mut d_concat);
                split_add(&d_concat, dp, dq);
            }
            Unit::Neumf(u) => {
                let e = p.len();
                let z = cache.acts.last().expect("cache from forward");
                let h = u.h.value.data();
                {
                    let dh = u.h.grad.data_mut();
                    for k in 0..e {
                        dh[k] += upstream * p[k] * q[k];
                    }
                    for (g, a) in dh[e..].iter_mut().zip(z) {
                        *g += upstream * a;
                    }
                }
                for k in 0..e {
                    dp[k] += upstream * h[k] * q[k];
                    dq[k] += upstream * h[k] * p[k];
                }
                let d_out: Vec<f64> = h[e..].iter().map(|w| upstream * w).collect();
                let concat_in = concat(p, q);
                let mut d_concat = vec![0.0; concat_in.len()];
                u.tower.backward(&concat_in, &cache.acts, d_out, &mut d_concat);
                split_add(&d_concat, dp, dq);
            }
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Unit::Gmf(u) => vec![&u.h],
            Unit::Mlp(u) => {
                let mut ps = u.tower.params();
                ps.push(&u.h);
                ps
            }
            Unit::Neumf(u) => {
                let mut ps = u.tower.params();
                ps.push(&u.h);
                ps
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Unit::Gmf(u) => vec![&mut u.h],
            Unit::Mlp(u) => {
                let mut ps = u.tower.params_mut();
                ps.push(&mut u.h);
                ps
            }
            Unit::Neumf(u) => {
                let mut ps = u.tower.params_mut();
                ps.push(&mut u.h);
                ps
            }
        }
    }

    fn tower(&self) -> Option<&MlpTower> {
        match self {
            Unit::Gmf(_) => None,
            Unit::Mlp(u) => Some(&u.tower),
            Unit::Neumf(u) => Some(&u.tower),
        }
    }

    /// Layer widths of the tower, input first, for checkpoint manifests.
    pub fn tower_widths(&self) -> Vec<usize> {
        match self.tower() {
            None => vec![],
            Some(tower) => {
                let mut widths = vec![tower.input_width()];
                widths.extend(tower.layers.iter().map(|l| l.weight.value.rows()));
                widths
            }
        }
    }

    pub fn num_layers(&self) -> usize {
        self.tower().map_or(0, |t| t.layers.len())
    }

    pub fn final_width(&self) -> usize {
        match self.tower() {
            None => self.embedding_dim(),
            Some(tower) => tower.final_width(),
        }
    }
}

fn concat(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(p.len() + q.len());
    v.extend_from_slice(p);
    v.extend_from_slice(q);
    v
}

fn split_add(d_concat: &[f64], dp: &mut [f64], dq: &mut [f64]) {
    let e = dp.len();
    for (d, g) in dp.iter_mut().zip(&d_concat[..e]) {
        *d += g;
    }
    for (d, g) in dq.iter_mut().zip(&d_concat[e..]) {
        *d += g;
    }
}
