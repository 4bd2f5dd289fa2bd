//! Graph view of the three-tier network and a small graph convolutional
//! network over it.
//!
//! Each layer computes `σ(D̄^-½ Ā D̄^-½ H W)` with `Ā = A + I` and `D̄` the
//! degree matrix of `Ā`.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::World;

pub const FEATURE_DIM: usize = 5;

/// Per-node observation. Entries that do not apply to a node class are 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeFeature {
    pub ux: f64,
    pub utility: f64,
    pub latency: f64,
    pub energy: f64,
    pub mig_cost: f64,
}

impl NodeFeature {
    pub fn to_array(&self) -> [f64; FEATURE_DIM] {
        [self.ux, self.utility, self.latency, self.energy, self.mig_cost]
    }
}

/// Stack node features into an `n × 5` matrix.
pub fn feature_matrix(features: &[NodeFeature]) -> Array2<f64> {
    let mut h = Array2::zeros((features.len(), FEATURE_DIM));
    for (mut row, f) in h.rows_mut().into_iter().zip(features) {
        row.assign(&Array1::from(f.to_array().to_vec()));
    }
    h
}

/// Nodes are ordered vehicles, then edges, then clouds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkGraph {
    pub vehicles: usize,
    pub edges: usize,
    pub clouds: usize,
    pub adjacency: Array2<f64>,
}

impl NetworkGraph {
    pub fn empty(vehicles: usize, edges: usize, clouds: usize) -> Self {
        let n = vehicles + edges + clouds;
        NetworkGraph { vehicles, edges, clouds, adjacency: Array2::zeros((n, n)) }
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn vehicle_node(&self, v: usize) -> usize {
        v
    }

    pub fn edge_node(&self, j: usize) -> usize {
        self.vehicles + j
    }

    pub fn cloud_node(&self, i: usize) -> usize {
        self.vehicles + self.edges + i
    }

    pub fn link(&mut self, a: usize, b: usize) {
        if a != b {
            self.adjacency[[a, b]] = 1.0;
            self.adjacency[[b, a]] = 1.0;
        }
    }

    /// Undirected links as `(a, b)` pairs with `a < b`.
    pub fn links(&self) -> Vec<(usize, usize)> {
        let n = self.node_count();
        let mut out = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if self.adjacency[[a, b]] != 0.0 {
                    out.push((a, b));
                }
            }
        }
        out
    }

    pub fn from_links(vehicles: usize, edges: usize, clouds: usize, links: &[(usize, usize)]) -> Self {
        let mut g = Self::empty(vehicles, edges, clouds);
        for &(a, b) in links {
            g.link(a, b);
        }
        g
    }

    /// `D̄^-½ (A + I) D̄^-½`.
    pub fn normalized_operator(&self) -> Array2<f64> {
        normalized_operator(&self.adjacency)
    }
}

pub fn normalized_operator(adjacency: &Array2<f64>) -> Array2<f64> {
    let n = adjacency.nrows();
    let mut a = adjacency.clone();
    for i in 0..n {
        a[[i, i]] += 1.0;
    }
    let deg = a.sum_axis(Axis(1));
    for ((i, j), x) in a.indexed_iter_mut() {
        *x /= (deg[i] * deg[j]).sqrt();
    }
    a
}

/// Vehicle-edge links inside coverage, every edge-cloud pair, and ring
/// neighbours between consecutive edges.
pub fn build_graph(world: &World) -> NetworkGraph {
    let (nv, ne, nc) = (world.vehicles.len(), world.edges.len(), world.clouds.len());
    let mut g = NetworkGraph::empty(nv, ne, nc);
    for v in 0..nv {
        for j in 0..ne {
            if world.covers(j, v) {
                g.link(g.vehicle_node(v), g.edge_node(j));
            }
        }
    }
    for j in 0..ne {
        for i in 0..nc {
            g.link(g.edge_node(j), g.cloud_node(i));
        }
    }
    if ne >= 2 {
        for j in 0..ne {
            g.link(g.edge_node(j), g.edge_node((j + 1) % ne));
        }
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => x.mapv(|v| v.max(0.0)),
            Activation::Identity => x.clone(),
        }
    }

    fn grad(self, pre: &Array2<f64>, upstream: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => {
                let mut g = upstream.clone();
                g.zip_mut_with(pre, |g, p| {
                    if *p <= 0.0 {
                        *g = 0.0
                    }
                });
                g
            }
            Activation::Identity => upstream.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnLayer {
    pub weight: Array2<f64>,
    pub activation: Activation,
}

impl GcnLayer {
    /// Glorot-uniform initialisation.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        GcnLayer { weight: Array2::from_shape_fn((in_dim, out_dim), |_| dist.sample(rng)), activation }
    }
}

/// Activations retained by a forward pass.
#[derive(Debug, Clone)]
pub struct GcnCache {
    version: u64,
    operator: Array2<f64>,
    /// `Â H_l` per layer.
    aggregated: Vec<Array2<f64>>,
    /// `Â H_l W_l` per layer.
    pre: Vec<Array2<f64>>,
}

fn check_chain(h: &Array2<f64>, operator: &Array2<f64>, layers: &[GcnLayer]) -> Result<()> {
    if h.nrows() != operator.nrows() {
        return Err(Error::dim(format!("feature rows {} != node count {}", h.nrows(), operator.nrows())));
    }
    let mut width = h.ncols();
    for (l, layer) in layers.iter().enumerate() {
        if layer.weight.nrows() != width {
            return Err(Error::dim(format!("layer {l} expects width {}, got {width}", layer.weight.nrows())));
        }
        width = layer.weight.ncols();
    }
    Ok(())
}

fn forward_with(
    h: &Array2<f64>,
    operator: &Array2<f64>,
    layers: &[GcnLayer],
    version: u64,
) -> Result<(Array2<f64>, GcnCache)> {
    check_chain(h, operator, layers)?;
    let mut cache = GcnCache {
        version,
        operator: operator.clone(),
        aggregated: Vec::with_capacity(layers.len()),
        pre: Vec::with_capacity(layers.len()),
    };
    let mut x = h.clone();
    for layer in layers {
        let agg = operator.dot(&x);
        let pre = agg.dot(&layer.weight);
        x = layer.activation.apply(&pre);
        cache.aggregated.push(agg);
        cache.pre.push(pre);
    }
    Ok((x, cache))
}

/// Apply the layer stack to node features `h` on graph `g`.
pub fn propagate(h: &Array2<f64>, g: &NetworkGraph, layers: &[GcnLayer]) -> Result<Array2<f64>> {
    Ok(forward_with(h, &g.normalized_operator(), layers, 0)?.0)
}

/// Weight gradients and input gradient for an upstream gradient on the output.
fn backward_with(
    layers: &[GcnLayer],
    cache: &GcnCache,
    upstream: &Array2<f64>,
) -> Result<(Vec<Array2<f64>>, Array2<f64>)> {
    let last = cache.pre.last().map(|p| p.dim());
    if let Some(shape) = last {
        if upstream.dim() != shape {
            return Err(Error::dim(format!("upstream {:?} != output {:?}", upstream.dim(), shape)));
        }
    }
    let mut grads = vec![Array2::zeros((0, 0)); layers.len()];
    let mut g = upstream.clone();
    for l in (0..layers.len()).rev() {
        let d_pre = layers[l].activation.grad(&cache.pre[l], &g);
        grads[l] = cache.aggregated[l].t().dot(&d_pre);
        // Â is symmetric, so Âᵀ = Â.
        g = cache.operator.dot(&d_pre.dot(&layers[l].weight.t()));
    }
    Ok((grads, g))
}

/// Reverse-mode gradients of a scalar loss with respect to every layer's weights.
pub fn gcn_gradients(
    h: &Array2<f64>,
    g: &NetworkGraph,
    layers: &[GcnLayer],
    upstream: &Array2<f64>,
) -> Result<Vec<Array2<f64>>> {
    let (_, cache) = forward_with(h, &g.normalized_operator(), layers, 0)?;
    Ok(backward_with(layers, &cache, upstream)?.0)
}

/// A layer stack that remembers its last forward pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Gcn {
    pub layers: Vec<GcnLayer>,
    #[serde(skip)]
    version: u64,
    #[serde(skip)]
    last: Option<GcnCache>,
}

impl Gcn {
    pub fn new(layers: Vec<GcnLayer>) -> Self {
        Gcn { layers, version: 0, last: None }
    }

    /// Two layers: ReLU hidden, identity output.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, hidden: usize, out: usize, rng: &mut R) -> Self {
        Gcn::new(vec![
            GcnLayer::init(in_dim, hidden, Activation::Relu, rng),
            GcnLayer::init(hidden, out, Activation::Identity, rng),
        ])
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.ncols())
    }

    /// Forward pass with a precomputed normalized operator; returns the cache.
    pub fn forward_op(&self, h: &Array2<f64>, operator: &Array2<f64>) -> Result<(Array2<f64>, GcnCache)> {
        forward_with(h, operator, &self.layers, self.version)
    }

    /// Forward pass that keeps its cache for [`Gcn::backward`].
    pub fn forward(&mut self, h: &Array2<f64>, g: &NetworkGraph) -> Result<Array2<f64>> {
        let (out, cache) = self.forward_op(h, &g.normalized_operator())?;
        self.last = Some(cache);
        Ok(out)
    }

    /// Gradients for the most recent [`Gcn::forward`].
    pub fn backward(&self, upstream: &Array2<f64>) -> Result<Vec<Array2<f64>>> {
        let cache = self.last.as_ref().ok_or(Error::MissingCache)?;
        Ok(self.backward_cache(cache, upstream)?.0)
    }

    pub fn backward_cache(&self, cache: &GcnCache, upstream: &Array2<f64>) -> Result<(Vec<Array2<f64>>, Array2<f64>)> {
        if cache.version != self.version {
            return Err(Error::StaleCache);
        }
        backward_with(&self.layers, cache, upstream)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.version += 1;
        self.layers.iter_mut().map(|l| &mut l.weight).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len()).sum()
    }
}

/// Running per-column mean and variance (Welford).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl FeatureNormalizer {
    pub fn new(dim: usize) -> Self {
        FeatureNormalizer { count: 0.0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    pub fn update(&mut self, rows: &Array2<f64>) {
        for row in rows.rows() {
            self.count += 1.0;
            for (k, x) in row.iter().enumerate() {
                let delta = x - self.mean[k];
                self.mean[k] += delta / self.count;
                self.m2[k] += delta * (x - self.mean[k]);
            }
        }
    }

    pub fn std(&self, k: usize) -> f64 {
        if self.count < 2.0 {
            return 1.0;
        }
        let s = (self.m2[k] / (self.count - 1.0)).sqrt();
        if s > 1e-8 {
            s
        } else {
            1.0
        }
    }

    pub fn normalize(&self, rows: &Array2<f64>) -> Array2<f64> {
        let mut out = rows.clone();
        for mut row in out.rows_mut() {
            for (k, x) in row.iter_mut().enumerate() {
                *x = (*x - self.mean[k]) / self.std(k);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn layer(w: Array2<f64>, act: Activation) -> GcnLayer {
        GcnLayer { weight: w, activation: act }
    }

    #[test]
    fn isolated_node_is_identity() {
        let g = NetworkGraph::empty(1, 0, 0);
        let out = propagate(&array![[0.7]], &g, &[layer(array![[1.0]], Activation::Relu)]).unwrap();
        assert_eq!(out, array![[0.7]]);
    }

    #[test]
    fn two_connected_nodes_average() {
        let g = NetworkGraph::from_links(2, 0, 0, &[(0, 1)]);
        let op = g.normalized_operator();
        assert_eq!(op, array![[0.5, 0.5], [0.5, 0.5]]);
        let out = propagate(&array![[1.0], [3.0]], &g, &[layer(array![[1.0]], Activation::Identity)]).unwrap();
        assert_eq!(out, array![[2.0], [2.0]]);
    }

    #[test]
    fn relu_clamps_negative() {
        let g = NetworkGraph::from_links(2, 1, 0, &[(0, 2), (1, 2)]);
        let h = array![[1.0, 2.0], [0.5, 0.1], [3.0, 1.0]];
        let out = propagate(&h, &g, &[layer(array![[-1.0], [-1.0]], Activation::Relu)]).unwrap();
        assert!(out.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn dimension_mismatch() {
        let g = NetworkGraph::empty(2, 0, 0);
        let r = propagate(&array![[1.0]], &g, &[layer(array![[1.0]], Activation::Relu)]);
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn single_linear_layer_gradient() {
        let g = NetworkGraph::empty(1, 0, 0);
        let h = array![[2.0, -1.0]];
        let up = array![[0.5]];
        let grads = gcn_gradients(&h, &g, &[layer(array![[0.3], [0.4]], Activation::Identity)], &up).unwrap();
        assert_eq!(grads[0], h.t().dot(&up));
        let zero = gcn_gradients(&h, &g, &[layer(array![[0.3], [0.4]], Activation::Identity)], &array![[0.0]]).unwrap();
        assert!(zero[0].iter().all(|x| *x == 0.0));
    }

    #[test]
    fn backward_needs_cache() {
        let gcn = Gcn::init(FEATURE_DIM, 4, 2, &mut crate::seed::rng(0, &[0]));
        assert!(matches!(gcn.backward(&array![[0.0, 0.0]]), Err(Error::MissingCache)));
    }

    #[test]
    fn stale_cache_rejected() {
        let mut gcn = Gcn::init(1, 2, 1, &mut crate::seed::rng(0, &[0]));
        let g = NetworkGraph::empty(1, 0, 0);
        gcn.forward(&array![[1.0]], &g).unwrap();
        gcn.params_mut()[0][[0, 0]] += 1.0;
        assert!(matches!(gcn.backward(&array![[1.0]]), Err(Error::StaleCache)));
    }

    #[test]
    fn world_graph_rules() {
        let mut cfg = crate::scenario::ExperimentConfig::default();
        cfg.counts.vehicles = 1;
        cfg.counts.edges = 3;
        cfg.counts.clouds = 1;
        cfg.world.ring_length_m = 3000.0;
        cfg.world.coverage_radius_m = 100.0;
        let mut w = World::generate(&cfg, &mut crate::seed::rng(0, &[0]));
        w.vehicles[0].position_m = w.edges[1].position_m;
        let g = build_graph(&w);
        let links = g.links();
        // v0 is node 0, edges are 1..=3, cloud is 4.
        assert!(links.contains(&(0, 2)));
        assert!(!links.contains(&(0, 1)) && !links.contains(&(0, 3)));
        for pair in [(1, 2), (2, 3), (1, 3)] {
            assert!(links.contains(&pair), "{pair:?}");
        }
        for e in 1..=3 {
            assert!(links.contains(&(e, 4)));
        }
        assert_eq!(links.len(), 1 + 3 + 3);
        for i in 0..g.node_count() {
            assert_eq!(g.adjacency[[i, i]], 0.0);
        }
    }

    #[test]
    fn normalizer_standardizes() {
        let mut n = FeatureNormalizer::new(2);
        let rows = array![[1.0, 10.0], [3.0, 30.0], [5.0, 50.0]];
        n.update(&rows);
        let z = n.normalize(&rows);
        assert!((z[[1, 0]]).abs() < 1e-12);
        assert!((z[[2, 1]] - 1.0).abs() < 1e-12);
    }
}
