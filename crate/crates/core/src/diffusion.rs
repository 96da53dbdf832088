//! Gaussian diffusion down the tree and exact collapsed computations.
//!
//! Per dimension, the root parameter is `N(0, 1/τ)`, each child is its
//! parent plus `N(0, 1/τ)` noise, and a datum at leaf `z` is
//! `N(φ_z, 1/obs_τ)`. Everything Gaussian is integrated out by passing
//! one-dimensional messages up and down the tree.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure_positive, Error, Result};
use crate::fragmentation::DivergenceSchedule;
use crate::ncrp::{ncrp_sample, Outcome};
use crate::points::Points;
use crate::tree::{NodeId, TreeArena};

/// The function `x ↦ exp(log_norm - precision·x²/2 + precision_mean·x)`.
///
/// A zero precision with zero precision-mean is flat. Products of
/// potentials add all three fields.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GaussianPotential {
    pub precision: f64,
    pub precision_mean: f64,
    pub log_norm: f64,
}

impl GaussianPotential {
    pub const FLAT: GaussianPotential = GaussianPotential {
        precision: 0.0,
        precision_mean: 0.0,
        log_norm: 0.0,
    };

    /// The density `N(x; mean, 1/precision)` as a potential in `x`.
    pub fn normal(mean: f64, precision: f64) -> Self {
        GaussianPotential {
            precision,
            precision_mean: precision * mean,
            log_norm: 0.5 * (precision / (2.0 * PI)).ln() - 0.5 * precision * mean * mean,
        }
    }

    /// Likelihood of `count` observations with sum `sum` and sum of squares
    /// `sum_sq`, each `N(·; x, 1/precision)`, as a potential in `x`.
    pub fn observations(count: usize, sum: f64, sum_sq: f64, precision: f64) -> Self {
        if count == 0 {
            return Self::FLAT;
        }
        let n = count as f64;
        GaussianPotential {
            precision: n * precision,
            precision_mean: precision * sum,
            log_norm: 0.5 * n * (precision / (2.0 * PI)).ln() - 0.5 * precision * sum_sq,
        }
    }

    /// `x ↦ ∫ N(x'; x, 1/edge_precision) f(x') dx'`: the message a child
    /// sends across a diffusion edge (or, the kernel being symmetric, a
    /// parent sends down).
    pub fn through_edge(self, edge_precision: f64) -> Self {
        if self.precision == 0.0 && self.precision_mean == 0.0 {
            return self;
        }
        let total = edge_precision + self.precision;
        GaussianPotential {
            precision: edge_precision * self.precision / total,
            precision_mean: edge_precision * self.precision_mean / total,
            log_norm: self.log_norm
                + 0.5 * (edge_precision / total).ln()
                + self.precision_mean * self.precision_mean / (2.0 * total),
        }
    }

    pub fn log_eval(self, x: f64) -> f64 {
        self.log_norm - 0.5 * self.precision * x * x + self.precision_mean * x
    }

    /// `ln ∫ f(x) dx`; needs a positive precision.
    pub fn log_integral(self) -> f64 {
        self.log_norm
            + self.precision_mean * self.precision_mean / (2.0 * self.precision)
            + 0.5 * (2.0 * PI / self.precision).ln()
    }

    pub fn mean(self) -> f64 {
        self.precision_mean / self.precision
    }

    pub fn variance(self) -> f64 {
        1.0 / self.precision
    }
}

impl Add for GaussianPotential {
    type Output = Self;

    fn add(self, other: Self) -> Self {
        GaussianPotential {
            precision: self.precision + other.precision,
            precision_mean: self.precision_mean + other.precision_mean,
            log_norm: self.log_norm + other.log_norm,
        }
    }
}

impl AddAssign for GaussianPotential {
    fn add_assign(&mut self, other: Self) {
        *self = *self + other;
    }
}

/// `ln N(y; mean, variance)`.
pub fn log_normal_pdf(y: f64, mean: f64, variance: f64) -> f64 {
    -0.5 * ((2.0 * PI * variance).ln() + (y - mean).powi(2) / variance)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffusionParams {
    tau: f64,
    obs_tau: f64,
    dims: usize,
}

impl DiffusionParams {
    /// One precision for both the diffusion and the observations.
    pub fn shared(tau: f64, dims: usize) -> Result<Self> {
        Self::new(tau, tau, dims)
    }

    pub fn new(tau: f64, obs_tau: f64, dims: usize) -> Result<Self> {
        ensure_positive("tau", tau)?;
        ensure_positive("observation tau", obs_tau)?;
        if dims == 0 {
            return Err(Error::Config("dims must be at least 1".into()));
        }
        Ok(DiffusionParams { tau, obs_tau, dims })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn obs_tau(&self) -> f64 {
        self.obs_tau
    }

    pub fn dims(&self) -> usize {
        self.dims
    }
}

/// Draws a child parameter `N(parent, 1/τ)` per dimension. The root's
/// parameter is drawn with a zero parent.
pub fn transition_sample<R: Rng + ?Sized>(parent_phi: &[f64], params: &DiffusionParams, rng: &mut R) -> Vec<f64> {
    let sd = params.tau.recip().sqrt();
    parent_phi
        .iter()
        .map(|&p| p + sd * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// A dataset drawn from the prior: structure, node parameters and points.
#[derive(Clone, Debug)]
pub struct GeneratedData {
    pub points: Points,
    /// Tree with every node's parameter set.
    pub tree: TreeArena,
    pub assignments: Vec<NodeId>,
}

/// Seats `n` points by nested CRP descent, diffuses parameters down every
/// edge, then draws each point around its leaf parameter.
pub fn generate_dataset<R: Rng + ?Sized>(
    n: usize,
    schedule: &DivergenceSchedule,
    params: &DiffusionParams,
    rng: &mut R,
) -> Result<GeneratedData> {
    let (mut tree, assignments) = ncrp_sample(n, schedule, rng)?;
    diffuse_parameters(&mut tree, params, rng);
    let points = sample_observations(&tree, &assignments, params, rng)?;
    Ok(GeneratedData {
        points,
        tree,
        assignments,
    })
}

/// Draws every node parameter from the prior diffusion, in preorder.
pub fn diffuse_parameters<R: Rng + ?Sized>(tree: &mut TreeArena, params: &DiffusionParams, rng: &mut R) {
    let zero = vec![0.0; params.dims];
    for id in tree.preorder() {
        let parent = tree.parent(id).map(|p| tree.node(p).phi().expect("parent drawn first").to_vec());
        let phi = transition_sample(parent.as_deref().unwrap_or(&zero), params, rng);
        tree.set_phi(id, phi);
    }
}

/// Draws `y_i ~ N(φ_{z_i}, 1/obs_τ)` for every assignment.
pub fn sample_observations<R: Rng + ?Sized>(
    tree: &TreeArena,
    assignments: &[NodeId],
    params: &DiffusionParams,
    rng: &mut R,
) -> Result<Points> {
    let sd = params.obs_tau.recip().sqrt();
    let mut points = Points::empty(params.dims);
    for &z in assignments {
        let phi = tree.get(z)?.phi().ok_or(Error::MissingPhi(z))?;
        let y: Vec<f64> = phi
            .iter()
            .map(|&m| m + sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        points.push(&y);
    }
    Ok(points)
}

/// Sufficient statistics of the data held at each leaf together with cached
/// upward messages. Edits invalidate only the root-to-leaf path they touch.
///
/// Indexed by arena slot; callers must report every attach and detach
/// through [`add`](Self::add) and [`remove`](Self::remove).
#[derive(Clone, Debug)]
pub struct CollapsedGaussian {
    params: DiffusionParams,
    counts: Vec<usize>,
    sums: Vec<f64>,
    sums_sq: Vec<f64>,
    up: Vec<GaussianPotential>,
    valid: Vec<bool>,
}

impl CollapsedGaussian {
    pub fn new(tree: &TreeArena, points: &Points, assignments: &[NodeId], params: DiffusionParams) -> Result<Self> {
        if points.dims() != params.dims {
            return Err(Error::Config(format!(
                "points have {} dimensions, model has {}",
                points.dims(),
                params.dims
            )));
        }
        if points.len() != assignments.len() {
            return Err(Error::Config("one assignment per point is required".into()));
        }
        let mut model = CollapsedGaussian {
            params,
            counts: Vec::new(),
            sums: Vec::new(),
            sums_sq: Vec::new(),
            up: Vec::new(),
            valid: Vec::new(),
        };
        model.reserve(tree.capacity());
        for (y, &z) in points.rows().zip(assignments) {
            if !tree.contains(z) || !tree.is_leaf_level(z) {
                return Err(Error::WrongDepth {
                    node: z,
                    depth: tree.get(z).map_or(0, |n| n.depth()),
                    expected: format!("{} (a leaf)", tree.depth()),
                });
            }
            model.add_stats(z, y);
        }
        Ok(model)
    }

    pub fn params(&self) -> &DiffusionParams {
        &self.params
    }

    /// Changes the precisions, dropping every cached message.
    pub fn set_params(&mut self, params: DiffusionParams) {
        assert_eq!(params.dims, self.params.dims, "dimension change");
        self.params = params;
        self.valid.iter_mut().for_each(|v| *v = false);
    }

    fn reserve(&mut self, slots: usize) {
        if self.counts.len() < slots {
            let d = self.params.dims;
            self.counts.resize(slots, 0);
            self.sums.resize(slots * d, 0.0);
            self.sums_sq.resize(slots * d, 0.0);
            self.up.resize(slots * d, GaussianPotential::FLAT);
            self.valid.resize(slots, false);
        }
    }

    fn add_stats(&mut self, leaf: NodeId, y: &[f64]) {
        let d = self.params.dims;
        let s = leaf.index();
        self.counts[s] += 1;
        for (k, &v) in y.iter().enumerate() {
            self.sums[s * d + k] += v;
            self.sums_sq[s * d + k] += v * v;
        }
    }

    fn invalidate_path(&mut self, tree: &TreeArena, node: NodeId) {
        let mut cur = Some(node);
        while let Some(id) = cur {
            self.valid[id.index()] = false;
            cur = tree.parent(id);
        }
    }

    /// Records a datum just attached at `leaf`.
    pub fn add(&mut self, tree: &TreeArena, leaf: NodeId, y: &[f64]) {
        self.reserve(tree.capacity());
        self.add_stats(leaf, y);
        self.invalidate_path(tree, leaf);
    }

    /// Records that a datum at `leaf` is about to be detached. Call before
    /// the tree edit so the path is still intact.
    pub fn remove(&mut self, tree: &TreeArena, leaf: NodeId, y: &[f64]) {
        let d = self.params.dims;
        let s = leaf.index();
        self.counts[s] -= 1;
        if self.counts[s] == 0 {
            // reset exactly so a recycled slot starts clean
            self.sums[s * d..(s + 1) * d].fill(0.0);
            self.sums_sq[s * d..(s + 1) * d].fill(0.0);
        } else {
            for (k, &v) in y.iter().enumerate() {
                self.sums[s * d + k] -= v;
                self.sums_sq[s * d + k] -= v * v;
            }
        }
        self.invalidate_path(tree, leaf);
    }

    /// Number of data the model holds at `leaf`.
    pub fn count(&self, leaf: NodeId) -> usize {
        self.counts.get(leaf.index()).copied().unwrap_or(0)
    }

    fn data_potential(&self, id: NodeId, k: usize) -> GaussianPotential {
        let d = self.params.dims;
        let s = id.index();
        GaussianPotential::observations(
            self.counts[s],
            self.sums[s * d + k],
            self.sums_sq[s * d + k],
            self.params.obs_tau,
        )
    }

    /// Recomputes every stale upward message. `up[ω]` is the likelihood of
    /// the data below ω as a function of `φ_ω`.
    pub fn refresh(&mut self, tree: &TreeArena) {
        self.reserve(tree.capacity());
        if self.valid[tree.root().index()] {
            return;
        }
        let d = self.params.dims;
        let tau = self.params.tau;
        // postorder over stale nodes only: a valid node has a valid subtree
        let mut order = Vec::new();
        let mut stack = vec![tree.root()];
        while let Some(id) = stack.pop() {
            order.push(id);
            for &c in tree.children(id) {
                if !self.valid[c.index()] {
                    stack.push(c);
                }
            }
        }
        for &id in order.iter().rev() {
            let s = id.index();
            for k in 0..d {
                let mut msg = self.data_potential(id, k);
                for &c in tree.children(id) {
                    msg += self.up[c.index() * d + k].through_edge(tau);
                }
                self.up[s * d + k] = msg;
            }
            self.valid[s] = true;
        }
    }

    pub fn up_message(&mut self, tree: &TreeArena, id: NodeId, dim: usize) -> GaussianPotential {
        self.refresh(tree);
        self.up[id.index() * self.params.dims + dim]
    }

    /// `ln p(y | z, structure, τ)` with every node parameter integrated out.
    pub fn marginal_loglik(&mut self, tree: &TreeArena) -> f64 {
        self.refresh(tree);
        let root = tree.root().index() * self.params.dims;
        (0..self.params.dims)
            .map(|k| self.up[root + k].through_edge(self.params.tau).log_norm)
            .sum()
    }

    /// Posterior beliefs over every node parameter given all held data.
    pub fn beliefs(&mut self, tree: &TreeArena) -> Beliefs {
        self.refresh(tree);
        let d = self.params.dims;
        let tau = self.params.tau;
        let mut post = vec![GaussianPotential::FLAT; tree.capacity() * d];
        // down[ω]: everything outside ω's subtree, as a potential in φ_ω
        let mut down = vec![GaussianPotential::FLAT; tree.capacity() * d];
        let root = tree.root().index();
        down[root * d..(root + 1) * d].fill(GaussianPotential::normal(0.0, tau));
        let mut edge: Vec<GaussianPotential> = Vec::new();
        let mut prefix: Vec<GaussianPotential> = Vec::new();
        for id in tree.preorder() {
            let s = id.index();
            for k in 0..d {
                post[s * d + k] = down[s * d + k] + self.up[s * d + k];
            }
            let kids = tree.children(id);
            if kids.is_empty() {
                continue;
            }
            for k in 0..d {
                // message to child j: everything at this node except child j's own edge
                let base = down[s * d + k] + self.data_potential(id, k);
                edge.clear();
                edge.extend(kids.iter().map(|c| self.up[c.index() * d + k].through_edge(tau)));
                prefix.clear();
                let mut acc = GaussianPotential::FLAT;
                for e in &edge {
                    prefix.push(acc);
                    acc += *e;
                }
                let mut suffix = GaussianPotential::FLAT;
                for j in (0..kids.len()).rev() {
                    down[kids[j].index() * d + k] = (base + prefix[j] + suffix).through_edge(tau);
                    suffix += edge[j];
                }
            }
        }
        Beliefs {
            post,
            dims: d,
            tau,
            obs_tau: self.params.obs_tau,
            depth: tree.depth(),
        }
    }

    /// Draws every node parameter jointly from its posterior: the upward
    /// messages filter, then parameters are sampled root to leaves.
    pub fn sample_phi<R: Rng + ?Sized>(&mut self, tree: &mut TreeArena, rng: &mut R) {
        self.refresh(tree);
        let d = self.params.dims;
        let tau = self.params.tau;
        for id in tree.preorder() {
            let parent = tree.parent(id).map(|p| tree.node(p).phi().expect("parent sampled first").to_vec());
            let phi: Vec<f64> = (0..d)
                .map(|k| {
                    let prior = GaussianPotential::normal(parent.as_ref().map_or(0.0, |p| p[k]), tau);
                    let post = prior + self.up[id.index() * d + k];
                    post.mean() + post.variance().sqrt() * rng.sample::<f64, _>(StandardNormal)
                })
                .collect();
            tree.set_phi(id, phi);
        }
    }
}

/// Posterior marginals of all node parameters, used for one-step-ahead
/// predictive densities.
#[derive(Clone, Debug)]
pub struct Beliefs {
    post: Vec<GaussianPotential>,
    dims: usize,
    tau: f64,
    obs_tau: f64,
    depth: usize,
}

impl Beliefs {
    /// Posterior of `φ_node` in dimension `dim`.
    pub fn marginal(&self, node: NodeId, dim: usize) -> GaussianPotential {
        self.post[node.index() * self.dims + dim]
    }

    /// `ln p(y | held data)` for `y` placed at an existing leaf, or on a new
    /// chain branching below an internal node. Unchecked; see
    /// [`collapsed_leaf_predictive`] for the validating entry point.
    pub fn log_predictive(&self, tree: &TreeArena, target: Outcome, y: &[f64]) -> f64 {
        let (node, extra) = match target {
            Outcome::Leaf(l) => (l, 1.0 / self.obs_tau),
            Outcome::Branch(b) => {
                let edges = (self.depth - tree.node_depth(b)) as f64;
                (b, edges / self.tau + 1.0 / self.obs_tau)
            }
        };
        let base = node.index() * self.dims;
        y.iter()
            .enumerate()
            .map(|(k, &v)| {
                let p = self.post[base + k];
                log_normal_pdf(v, p.mean(), p.variance() + extra)
            })
            .sum()
    }
}

fn check_target(tree: &TreeArena, target: Outcome) -> Result<()> {
    match target {
        Outcome::Leaf(l) => {
            let depth = tree.get(l)?.depth();
            if depth != tree.depth() {
                return Err(Error::WrongDepth {
                    node: l,
                    depth,
                    expected: format!("{} (a leaf)", tree.depth()),
                });
            }
        }
        Outcome::Branch(b) => {
            let depth = tree.get(b)?.depth();
            if depth >= tree.depth() {
                return Err(Error::NewBranchAtLeaf(tree.depth(), b));
            }
        }
    }
    Ok(())
}

/// `ln p(y | other data, structure)` for a new point at `target`, all node
/// parameters integrated out. `points`/`assignments` must not include `y`.
pub fn collapsed_leaf_predictive(
    tree: &TreeArena,
    points: &Points,
    assignments: &[NodeId],
    target: Outcome,
    y: &[f64],
    params: &DiffusionParams,
) -> Result<f64> {
    check_target(tree, target)?;
    if y.len() != params.dims {
        return Err(Error::Config("query point has the wrong dimension".into()));
    }
    let mut model = CollapsedGaussian::new(tree, points, assignments, *params)?;
    Ok(model.beliefs(tree).log_predictive(tree, target, y))
}

/// `ln p(y | z, structure, τ)` with every node parameter integrated out.
pub fn marginal_data_loglik(
    tree: &TreeArena,
    points: &Points,
    assignments: &[NodeId],
    params: &DiffusionParams,
) -> Result<f64> {
    let mut model = CollapsedGaussian::new(tree, points, assignments, *params)?;
    Ok(model.marginal_loglik(tree))
}

/// Exact joint posterior draw of all node parameters, stored on the tree.
pub fn sample_phi<R: Rng + ?Sized>(
    tree: &mut TreeArena,
    points: &Points,
    assignments: &[NodeId],
    params: &DiffusionParams,
    rng: &mut R,
) -> Result<()> {
    let mut model = CollapsedGaussian::new(tree, points, assignments, *params)?;
    model.sample_phi(tree, rng);
    Ok(())
}
