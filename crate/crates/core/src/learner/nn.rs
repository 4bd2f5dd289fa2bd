//! Dense networks with hand-written reverse mode, Adam, and target tracking.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Act {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Act {
    fn apply(self, x: f64) -> f64 {
        match self {
            Act::Identity => x,
            Act::Relu => x.max(0.0),
            Act::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Act::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation.
    fn slope(self, pre: f64) -> f64 {
        match self {
            Act::Identity => 1.0,
            Act::Relu => (pre > 0.0) as u8 as f64,
            Act::Sigmoid => {
                let s = self.apply(pre);
                s * (1.0 - s)
            }
            Act::Tanh => 1.0 - pre.tanh().powi(2),
        }
    }
}

/// Affine map `x·W + b` followed by an activation. Rows are samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Array2<f64>,
    /// Shape `1 × out`.
    pub bias: Array2<f64>,
    pub act: Act,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, act: Act, rng: &mut R) -> Self {
        let limit = (6.0 / (input + output).max(1) as f64).sqrt();
        let u = Uniform::new_inclusive(-limit, limit);
        Dense {
            weight: Array2::from_shape_fn((input, output), |_| u.sample(rng)),
            bias: Array2::zeros((1, output)),
            act,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }
}

/// Activations saved by a forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    version: u64,
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    /// Alternating weight and bias gradients, in [`Mlp::params_mut`] order.
    pub params: Vec<Array2<f64>>,
}

impl MlpGrads {
    pub fn norm_sq(&self) -> f64 {
        self.params.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum()
    }

    pub fn add(&mut self, other: &MlpGrads) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            *a += b;
        }
    }
}

/// Multilayer perceptron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    #[serde(skip)]
    version: u64,
}

impl Mlp {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        for w in layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::dim(format!("layer output {} feeds input {}", w[0].output_dim(), w[1].input_dim())));
            }
        }
        Ok(Mlp { layers, version: 0 })
    }

    /// `sizes = [in, h1, ..., out]`; hidden layers use `hidden`, the last uses `out`.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], hidden: Act, out: Act, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let n = sizes.len() - 1;
        let layers =
            (0..n).map(|k| Dense::init(sizes[k], sizes[k + 1], if k + 1 == n { out } else { hidden }, rng)).collect();
        Mlp { layers, version: 0 }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Dense::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::output_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Mutable parameters (weight, bias per layer). Invalidates earlier caches.
    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.version += 1;
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    pub fn params(&self) -> Vec<&Array2<f64>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::dim(format!("input has {} columns, network expects {}", x.ncols(), self.input_dim())));
        }
        Ok(())
    }

    pub fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in &self.layers {
            let mut pre = h.dot(&l.weight);
            pre += &l.bias;
            pre.mapv_inplace(|v| l.act.apply(v));
            h = pre;
        }
        Ok(h)
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        self.check_input(x)?;
        let mut cache = MlpCache {
            version: self.version,
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.clone();
        for l in &self.layers {
            let mut pre = h.dot(&l.weight);
            pre += &l.bias;
            let out = pre.mapv(|v| l.act.apply(v));
            cache.inputs.push(h);
            cache.pre.push(pre);
            h = out;
        }
        Ok((h, cache))
    }

    /// Parameter gradients and input gradient of a scalar loss whose
    /// gradient with respect to the output is `grad_out`.
    pub fn backward(&self, cache: &MlpCache, grad_out: &Array2<f64>) -> Result<(MlpGrads, Array2<f64>)> {
        if cache.version != self.version {
            return Err(Error::StaleCache);
        }
        let out_shape = cache.pre.last().map(|p| p.dim()).unwrap_or((grad_out.nrows(), self.input_dim()));
        if grad_out.dim() != out_shape {
            return Err(Error::dim(format!("output gradient {:?} != output {:?}", grad_out.dim(), out_shape)));
        }
        let mut params = vec![Array2::zeros((0, 0)); 2 * self.layers.len()];
        let mut g = grad_out.clone();
        for k in (0..self.layers.len()).rev() {
            let l = &self.layers[k];
            let mut d_pre = g;
            d_pre.zip_mut_with(&cache.pre[k], |d, p| *d *= l.act.slope(*p));
            params[2 * k] = cache.inputs[k].t().dot(&d_pre);
            params[2 * k + 1] = d_pre.sum_axis(Axis(0)).insert_axis(Axis(0));
            g = d_pre.dot(&l.weight.t());
        }
        Ok((MlpGrads { params }, g))
    }
}

/// Adam over a fixed list of parameter arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Descend along `grads`.
    pub fn step(&mut self, params: Vec<&mut Array2<f64>>, grads: &[Array2<f64>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dim(format!("{} parameters, {} gradients", params.len(), grads.len())));
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Array2::zeros(g.raw_dim())).collect();
            self.v = self.m.clone();
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.dim() != g.dim() || self.m.get(k).map(|m| m.dim()) != Some(g.dim()) {
                return Err(Error::dim(format!("parameter {k}: {:?} vs gradient {:?}", p.dim(), g.dim())));
            }
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let (lr, eps) = (self.lr, self.eps);
        for ((p, g), (m, v)) in params.into_iter().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
        Ok(())
    }
}

/// `target ← τ·online + (1−τ)·target`, elementwise.
pub fn soft_update(online: &[&Array2<f64>], target: Vec<&mut Array2<f64>>, tau: f64) -> Result<()> {
    if online.len() != target.len() {
        return Err(Error::dim(format!("{} online arrays, {} target arrays", online.len(), target.len())));
    }
    for (o, t) in online.iter().zip(&target) {
        if o.dim() != t.dim() {
            return Err(Error::dim(format!("online {:?} vs target {:?}", o.dim(), t.dim())));
        }
    }
    for (o, t) in online.iter().zip(target) {
        t.zip_mut_with(o, |t, o| *t = tau * o + (1.0 - tau) * *t);
    }
    Ok(())
}

/// Soft update between two networks of the same architecture.
pub fn soft_update_mlp(online: &Mlp, target: &mut Mlp, tau: f64) -> Result<()> {
    let o = online.params();
    soft_update(&o, target.params_mut(), tau)
}

/// One-step TD target.
pub fn bellman_target(r: f64, gamma: f64, q_next: f64, terminal: bool) -> f64 {
    if terminal {
        r
    } else {
        r + gamma * q_next
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input() {
        let l = Dense { weight: Array2::eye(3), bias: Array2::zeros((1, 3)), act: Act::Identity };
        let net = Mlp::new(vec![l]).unwrap();
        let x = array![[1.0, -2.0, 3.0]];
        assert_eq!(net.predict(&x).unwrap(), x);
    }

    #[test]
    fn zero_weights_give_bias() {
        let l = Dense { weight: Array2::zeros((2, 2)), bias: array![[0.5, -1.0]], act: Act::Identity };
        let net = Mlp::new(vec![l]).unwrap();
        assert_eq!(net.predict(&array![[3.0, 4.0]]).unwrap(), array![[0.5, -1.0]]);
    }

    #[test]
    fn wrong_width_is_rejected() {
        let net = Mlp::init(&[3, 4, 1], Act::Relu, Act::Identity, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(matches!(net.predict(&Array2::zeros((2, 2))), Err(Error::Dimension(_))));
    }

    #[test]
    fn linear_layer_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::init(&[3, 2], Act::Identity, Act::Identity, &mut rng);
        let x = array![[1.0, 2.0, 3.0]];
        let g = array![[0.5, -1.0]];
        let (_, cache) = net.forward(&x).unwrap();
        let (grads, dx) = net.backward(&cache, &g).unwrap();
        assert_eq!(grads.params[0], x.t().dot(&g));
        assert_eq!(grads.params[1], g);
        assert_eq!(dx, g.dot(&net.layers[0].weight.t()));
    }

    #[test]
    fn stale_cache_is_detected() {
        let mut net = Mlp::init(&[2, 2], Act::Relu, Act::Identity, &mut ChaCha8Rng::seed_from_u64(3));
        let (_, cache) = net.forward(&array![[1.0, 1.0]]).unwrap();
        net.params_mut()[0][[0, 0]] += 1.0;
        assert!(matches!(net.backward(&cache, &array![[1.0, 1.0]]), Err(Error::StaleCache)));
    }

    #[test]
    fn soft_update_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Mlp::init(&[3, 4, 2], Act::Relu, Act::Identity, &mut rng);
        let b0 = Mlp::init(&[3, 4, 2], Act::Relu, Act::Identity, &mut rng);
        let mut b = b0.clone();
        soft_update_mlp(&a, &mut b, 0.0).unwrap();
        assert_eq!(b.layers, b0.layers);
        soft_update_mlp(&a, &mut b, 1.0).unwrap();
        assert_eq!(b.layers, a.layers);
        let mut c = Mlp::init(&[3, 5, 2], Act::Relu, Act::Identity, &mut rng);
        assert!(soft_update_mlp(&a, &mut c, 0.5).is_err());
    }

    #[test]
    fn bellman_examples() {
        assert_eq!(bellman_target(3.0, 0.95, 100.0, true), 3.0);
        assert_relative_eq!(bellman_target(1.0, 0.95, 2.0, false), 2.9, epsilon = 1e-12);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = array![[1.0, -1.0]];
        let mut opt = Adam::new(0.1);
        opt.step(vec![&mut p], &[array![[2.0, -0.5]]]).unwrap();
        assert_relative_eq!(p[[0, 0]], 0.9, epsilon = 1e-6);
        assert_relative_eq!(p[[0, 1]], -0.9, epsilon = 1e-6);
    }
}
