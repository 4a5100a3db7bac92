use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::NetConfig;
use super::train::{EpochStats, Regime};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::signal::{derive_seed, stream_rng, Label};

/// Samples per gradient shard. Shards are summed in index order, so the
/// batch gradient does not depend on how many threads computed them.
pub(crate) const SHARD: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvShape {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub l_in: usize,
    pub l_out: usize,
    pub l_pool: usize,
    pub w: usize,
    pub b: usize,
}

impl ConvShape {
    fn rows(&self) -> usize {
        self.c_in * self.k
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct DenseShape {
    pub n_in: usize,
    pub n_out: usize,
    pub w: usize,
    pub b: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Layout {
    pub convs: Vec<ConvShape>,
    pub dense: Vec<DenseShape>,
    pub total: usize,
    pool: usize,
}

impl Layout {
    pub fn new(cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        let lens = cfg.stage_lengths()?;
        let mut off = 0;
        let mut convs = Vec::new();
        let (mut c_in, mut l_in) = (1, cfg.input_len);
        for (i, (&k, &c_out)) in cfg.kernels.iter().zip(&cfg.depths).enumerate() {
            let s = ConvShape {
                c_in,
                c_out,
                k,
                l_in,
                l_out: lens[2 * i],
                l_pool: lens[2 * i + 1],
                w: off,
                b: off + c_out * c_in * k,
            };
            off = s.b + c_out;
            convs.push(s);
            c_in = c_out;
            l_in = s.l_pool;
        }
        let mut dense = Vec::new();
        let mut n_in = c_in * l_in;
        for &n_out in &cfg.dense {
            let d = DenseShape {
                n_in,
                n_out,
                w: off,
                b: off + n_in * n_out,
            };
            off = d.b + n_out;
            dense.push(d);
            n_in = n_out;
        }
        Ok(Self {
            convs,
            dense,
            total: off,
            pool: cfg.pool,
        })
    }

    /// `(name, weight shape, bias length)` per layer in parameter order.
    pub fn describe(&self) -> Vec<(String, Vec<usize>, usize)> {
        let conv = self
            .convs
            .iter()
            .enumerate()
            .map(|(i, c)| (format!("conv{i}"), vec![c.c_out, c.c_in, c.k], c.c_out));
        let dense = self
            .dense
            .iter()
            .enumerate()
            .map(|(i, d)| (format!("dense{i}"), vec![d.n_out, d.n_in], d.n_out));
        conv.chain(dense).collect()
    }
}

/// Training provenance stored with a model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    #[serde(default)]
    pub regime: Option<Regime>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub epochs: usize,
    #[serde(default)]
    pub best_epoch: usize,
    #[serde(default)]
    pub train_size: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<EpochStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Weights of a network laid out as one flat vector in layer order
/// (per layer: weights row-major, then biases).
#[derive(Clone, Debug, PartialEq)]
pub struct NetModel<T = f32> {
    config: NetConfig,
    layout: Layout,
    params: Vec<T>,
    pub meta: ModelMeta,
}

impl<T: Scalar> NetModel<T> {
    /// He-initialized weights, zero biases.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut rng = stream_rng(derive_seed(seed, "init"), 0);
        let fill = |params: &mut [T], fan_in: usize, rng: &mut ChaCha8Rng| {
            let std = (2.0 / fan_in as f64).sqrt();
            for p in params {
                let z: f64 = StandardNormal.sample(rng);
                *p = T::lit(std * z);
            }
        };
        let layout = model.layout.clone();
        for c in &layout.convs {
            fill(&mut model.params[c.w..c.b], c.rows(), &mut rng);
        }
        for d in &layout.dense {
            fill(&mut model.params[d.w..d.b], d.n_in, &mut rng);
        }
        model.meta.seed = seed;
        Ok(model)
    }

    pub fn zeros(config: NetConfig) -> Result<Self> {
        let layout = Layout::new(&config)?;
        Ok(Self {
            params: vec![T::zero(); layout.total],
            config,
            layout,
            meta: ModelMeta::default(),
        })
    }

    pub fn from_params(config: NetConfig, params: Vec<T>, meta: ModelMeta) -> Result<Self> {
        let layout = Layout::new(&config)?;
        if params.len() != layout.total {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters for an architecture with {}",
                params.len(),
                layout.total
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("model", "non-finite weight"));
        }
        Ok(Self {
            config,
            layout,
            params,
            meta,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn input_len(&self) -> usize {
        self.config.input_len
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// `(name, weight shape, bias length)` per layer.
    pub fn layer_shapes(&self) -> Vec<(String, Vec<usize>, usize)> {
        self.layout.describe()
    }

    /// Parameter index ranges `(weights, biases)` of every layer.
    pub fn layer_ranges(&self) -> Vec<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        let conv = self.layout.convs.iter().map(|c| (c.w..c.b, c.b..c.b + c.c_out));
        let dense = self.layout.dense.iter().map(|d| (d.w..d.b, d.b..d.b + d.n_out));
        conv.chain(dense).collect()
    }

    pub fn cast<U: Scalar>(&self) -> NetModel<U> {
        NetModel {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|&p| U::lit(p.to_f64_lossy())).collect(),
            meta: self.meta.clone(),
        }
    }

    fn check_inputs<S: Scalar>(&self, inputs: &[S]) -> Result<usize> {
        let n = self.config.input_len;
        if inputs.len() % n != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} input values are not a whole number of length-{n} traces",
                inputs.len()
            )));
        }
        if let Some(i) = inputs.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid("input", format!("trace {} has a non-finite sample", i / n)));
        }
        Ok(inputs.len() / n)
    }

    /// `(P_down, P_up)` for each trace of a row-major batch.
    pub fn forward<S: Scalar>(&self, inputs: &[S]) -> Result<Vec<[T; 2]>> {
        self.check_inputs(inputs)?;
        Ok(inputs
            .par_chunks(self.config.input_len)
            .map_init(
                || Scratch::new(&self.layout),
                |sc, x| self.forward_one(x, sc, None),
            )
            .collect())
    }

    pub fn classify<S: Scalar>(&self, inputs: &[S]) -> Result<Vec<Label>> {
        Ok(self
            .forward(inputs)?
            .into_iter()
            .map(|p| if p[1] > p[0] { Label::Up } else { Label::Down })
            .collect())
    }

    /// Mean categorical cross-entropy over the batch.
    pub fn loss<S: Scalar>(&self, inputs: &[S], labels: &[Label]) -> Result<T> {
        let count = self.check_batch(inputs, labels)?;
        let total: T = self
            .forward(inputs)?
            .iter()
            .zip(labels)
            .map(|(p, l)| -p[l.index()].max(T::min_positive_value()).ln())
            .sum();
        Ok(total / T::lit(count.max(1) as f64))
    }

    fn check_batch<S: Scalar>(&self, inputs: &[S], labels: &[Label]) -> Result<usize> {
        let count = self.check_inputs(inputs)?;
        if count != labels.len() {
            return Err(Error::ShapeMismatch(format!("{count} traces but {} labels", labels.len())));
        }
        Ok(count)
    }

    /// Mean cross-entropy and its gradient with respect to every parameter.
    pub fn loss_and_grad<S: Scalar>(&self, inputs: &[S], labels: &[Label]) -> Result<(T, Vec<T>)> {
        let count = self.check_batch(inputs, labels)?;
        let n = self.config.input_len;
        let idx: Vec<usize> = (0..count).collect();
        Ok(self.batch_grad(&idx, |i| (&inputs[i * n..(i + 1) * n], labels[i]), None))
    }

    /// Gradient of the mean loss over the items `idx`, fetched by `get`.
    /// With `dropout = Some(seed)` item `i` draws its masks from stream `i`.
    pub(crate) fn batch_grad<'a, S, F>(&self, idx: &[usize], get: F, dropout: Option<u64>) -> (T, Vec<T>)
    where
        S: Scalar,
        F: Fn(usize) -> (&'a [S], Label) + Sync,
    {
        let shards: Vec<(T, Vec<T>)> = idx
            .par_chunks(SHARD)
            .map(|chunk| {
                let mut sc = Scratch::new(&self.layout);
                let mut grad = vec![T::zero(); self.params.len()];
                let mut loss = T::zero();
                for &i in chunk {
                    let (x, label) = get(i);
                    let mut rng = dropout.map(|s| stream_rng(s, i as u64));
                    let p = self.forward_one(x, &mut sc, rng.as_mut());
                    loss += -p[label.index()].max(T::min_positive_value()).ln();
                    self.backward_one(&p, label, &mut sc, &mut grad);
                }
                (loss, grad)
            })
            .collect();
        let mut loss = T::zero();
        let mut grad = vec![T::zero(); self.params.len()];
        for (l, g) in shards {
            loss += l;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        let scale = T::one() / T::lit(idx.len().max(1) as f64);
        grad.iter_mut().for_each(|g| *g *= scale);
        (loss * scale, grad)
    }

    fn forward_one<S: Scalar>(&self, x: &[S], sc: &mut Scratch<T>, mut dropout: Option<&mut ChaCha8Rng>) -> [T; 2] {
        let p = &self.params;
        for (v, &s) in sc.inputs[0].iter_mut().zip(x) {
            *v = T::from(s).unwrap_or_else(T::nan);
        }
        for (l, c) in self.layout.convs.iter().enumerate() {
            im2col(&sc.inputs[l], c, &mut sc.col);
            let y = &mut sc.conv_out[l];
            for co in 0..c.c_out {
                y[co * c.l_out..(co + 1) * c.l_out].fill(p[c.b + co]);
            }
            let rows = c.rows();
            T::gemm(
                c.c_out,
                rows,
                c.l_out,
                T::one(),
                &p[c.w..c.b],
                (rows as isize, 1),
                &sc.col,
                (c.l_out as isize, 1),
                T::one(),
                y,
                (c.l_out as isize, 1),
            );
            y.iter_mut().for_each(|v| *v = v.max(T::zero()));
            max_pool(y, c, self.layout.pool, &mut sc.inputs[l + 1], &mut sc.argmax[l]);
        }
        let last = self.layout.dense.len() - 1;
        for (d_i, d) in self.layout.dense.iter().enumerate() {
            let (prev, next) = if d_i == 0 {
                (&sc.inputs[self.layout.convs.len()], &mut sc.dense_out[0])
            } else {
                let (a, b) = sc.dense_out.split_at_mut(d_i);
                (&a[d_i - 1], &mut b[0])
            };
            for o in 0..d.n_out {
                let w = &p[d.w + o * d.n_in..d.w + (o + 1) * d.n_in];
                let mut acc = p[d.b + o];
                for (a, b) in w.iter().zip(prev.iter()) {
                    acc += *a * *b;
                }
                next[o] = if d_i == last { acc } else { acc.max(T::zero()) };
            }
            if d_i != last {
                let mask = &mut sc.dropout[d_i];
                match dropout.as_deref_mut() {
                    Some(rng) if self.config.dropout > 0.0 => {
                        let keep = 1.0 - self.config.dropout;
                        let scale = T::lit(1.0 / keep);
                        for (m, v) in mask.iter_mut().zip(next.iter_mut()) {
                            *m = if rng.random::<f64>() < keep { scale } else { T::zero() };
                            *v *= *m;
                        }
                    }
                    _ => mask.fill(T::one()),
                }
            }
        }
        softmax2(&sc.dense_out[last])
    }

    fn backward_one(&self, probs: &[T; 2], label: Label, sc: &mut Scratch<T>, grad: &mut [T]) {
        let p = &self.params;
        let n_dense = self.layout.dense.len();
        let n_conv = self.layout.convs.len();
        {
            let dz = &mut sc.dense_grad[n_dense - 1];
            dz[0] = probs[0];
            dz[1] = probs[1];
            dz[label.index()] -= T::one();
        }
        for d_i in (0..n_dense).rev() {
            let d = self.layout.dense[d_i];
            if d_i != n_dense - 1 {
                let out = &sc.dense_out[d_i];
                let mask = &sc.dropout[d_i];
                for ((g, &o), &m) in sc.dense_grad[d_i].iter_mut().zip(out).zip(mask) {
                    if o <= T::zero() {
                        *g = T::zero();
                    } else {
                        *g *= m;
                    }
                }
            }
            let input: &[T] = if d_i == 0 { &sc.inputs[n_conv] } else { &sc.dense_out[d_i - 1] };
            let (lower, upper) = sc.dense_grad.split_at_mut(d_i);
            let dz = &upper[0];
            let (gw, gb) = grad[d.w..d.b + d.n_out].split_at_mut(d.n_out * d.n_in);
            for o in 0..d.n_out {
                let g = dz[o];
                gb[o] += g;
                if g != T::zero() {
                    for (w, &x) in gw[o * d.n_in..(o + 1) * d.n_in].iter_mut().zip(input) {
                        *w += g * x;
                    }
                }
            }
            let dx: &mut [T] = if d_i == 0 { &mut sc.pool_grad } else { &mut lower[d_i - 1] };
            dx.fill(T::zero());
            for o in 0..d.n_out {
                let g = dz[o];
                if g != T::zero() {
                    for (v, &w) in dx.iter_mut().zip(&p[d.w + o * d.n_in..d.w + (o + 1) * d.n_in]) {
                        *v += g * w;
                    }
                }
            }
        }
        for l in (0..n_conv).rev() {
            let c = self.layout.convs[l];
            let dy = &mut sc.conv_grad[l];
            dy.fill(T::zero());
            for (&g, &j) in sc.pool_grad[..c.c_out * c.l_pool].iter().zip(&sc.argmax[l]) {
                dy[j as usize] = g;
            }
            for (g, &y) in dy.iter_mut().zip(&sc.conv_out[l]) {
                if y <= T::zero() {
                    *g = T::zero();
                }
            }
            for co in 0..c.c_out {
                grad[c.b + co] += dy[co * c.l_out..(co + 1) * c.l_out].iter().copied().sum::<T>();
            }
            im2col(&sc.inputs[l], &c, &mut sc.col);
            let rows = c.rows();
            T::gemm(
                c.c_out,
                c.l_out,
                rows,
                T::one(),
                dy,
                (c.l_out as isize, 1),
                &sc.col,
                (1, c.l_out as isize),
                T::one(),
                &mut grad[c.w..c.b],
                (rows as isize, 1),
            );
            if l > 0 {
                T::gemm(
                    rows,
                    c.c_out,
                    c.l_out,
                    T::one(),
                    &p[c.w..c.b],
                    (1, rows as isize),
                    dy,
                    (c.l_out as isize, 1),
                    T::zero(),
                    &mut sc.col,
                    (c.l_out as isize, 1),
                );
                let dx = &mut sc.pool_grad[..c.c_in * c.l_in];
                dx.fill(T::zero());
                col2im(&sc.col, &c, dx);
            }
        }
    }
}

fn im2col<T: Scalar>(input: &[T], c: &ConvShape, col: &mut [T]) {
    for ci in 0..c.c_in {
        let src = &input[ci * c.l_in..(ci + 1) * c.l_in];
        for kk in 0..c.k {
            let r = ci * c.k + kk;
            col[r * c.l_out..(r + 1) * c.l_out].copy_from_slice(&src[kk..kk + c.l_out]);
        }
    }
}

fn col2im<T: Scalar>(col: &[T], c: &ConvShape, dx: &mut [T]) {
    for ci in 0..c.c_in {
        let dst = &mut dx[ci * c.l_in..(ci + 1) * c.l_in];
        for kk in 0..c.k {
            let r = ci * c.k + kk;
            for (d, &v) in dst[kk..kk + c.l_out].iter_mut().zip(&col[r * c.l_out..(r + 1) * c.l_out]) {
                *d += v;
            }
        }
    }
}

fn max_pool<T: Scalar>(y: &[T], c: &ConvShape, pool: usize, out: &mut [T], argmax: &mut [u32]) {
    for co in 0..c.c_out {
        let row = &y[co * c.l_out..(co + 1) * c.l_out];
        for j in 0..c.l_pool {
            let mut best = j * pool;
            for t in j * pool + 1..(j + 1) * pool {
                if row[t] > row[best] {
                    best = t;
                }
            }
            out[co * c.l_pool + j] = row[best];
            argmax[co * c.l_pool + j] = (co * c.l_out + best) as u32;
        }
    }
}

fn softmax2<T: Scalar>(z: &[T]) -> [T; 2] {
    let m = z[0].max(z[1]);
    let e0 = (z[0] - m).exp();
    let e1 = (z[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Per-sample activations kept between the forward and backward pass.
pub(crate) struct Scratch<T> {
    /// Input of every conv layer, plus the flattened output of the last pool.
    inputs: Vec<Vec<T>>,
    conv_out: Vec<Vec<T>>,
    argmax: Vec<Vec<u32>>,
    col: Vec<T>,
    dense_out: Vec<Vec<T>>,
    dropout: Vec<Vec<T>>,
    conv_grad: Vec<Vec<T>>,
    pool_grad: Vec<T>,
    dense_grad: Vec<Vec<T>>,
}

impl<T: Scalar> Scratch<T> {
    pub fn new(layout: &Layout) -> Self {
        let mut inputs = vec![vec![T::zero(); layout.convs[0].l_in]];
        inputs.extend(layout.convs.iter().map(|c| vec![T::zero(); c.c_out * c.l_pool]));
        let col = layout.convs.iter().map(|c| c.rows() * c.l_out).max().unwrap_or(0);
        let pool_grad = layout
            .convs
            .iter()
            .map(|c| (c.c_out * c.l_pool).max(c.c_in * c.l_in))
            .max()
            .unwrap_or(0);
        Self {
            inputs,
            conv_out: layout.convs.iter().map(|c| vec![T::zero(); c.c_out * c.l_out]).collect(),
            argmax: layout.convs.iter().map(|c| vec![0; c.c_out * c.l_pool]).collect(),
            col: vec![T::zero(); col],
            dense_out: layout.dense.iter().map(|d| vec![T::zero(); d.n_out]).collect(),
            dropout: layout.dense.iter().map(|d| vec![T::one(); d.n_out]).collect(),
            conv_grad: layout.convs.iter().map(|c| vec![T::zero(); c.c_out * c.l_out]).collect(),
            pool_grad: vec![T::zero(); pool_grad],
            dense_grad: layout.dense.iter().map(|d| vec![T::zero(); d.n_out]).collect(),
        }
    }
}
