//! Mass partitions, the Frag operator and recursive stick-breaking.

use rand::Rng;

use crate::error::{ensure_positive, Error, Result};
use crate::tree::{NodeId, TreeArena};

const MASS_TOL: f64 = 1e-12;

/// A finite list of nonnegative masses.
#[derive(Clone, Debug, PartialEq)]
pub struct MassSequence {
    masses: Vec<f64>,
    sorted: bool,
}

impl MassSequence {
    pub fn new(masses: Vec<f64>) -> Result<Self> {
        if let Some(&bad) = masses.iter().find(|m| !(m.is_finite() && **m >= 0.0)) {
            return Err(Error::Config(format!("mass {bad} is not a nonnegative number")));
        }
        let sorted = masses.windows(2).all(|w| w[0] >= w[1]);
        Ok(MassSequence { masses, sorted })
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn is_sorted(&self) -> bool {
        self.sorted
    }

    pub fn is_normalized(&self) -> bool {
        (self.total() - 1.0).abs() <= MASS_TOL
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }
}

/// Splits mass `i` according to the normalized sequence `fragments[i]` and
/// returns the union of the pieces sorted non-increasingly. Ties keep the
/// order (input index, fragment index).
pub fn frag(masses: &MassSequence, fragments: &[MassSequence]) -> Result<MassSequence> {
    if masses.len() != fragments.len() {
        return Err(Error::FragmentCount {
            expected: masses.len(),
            got: fragments.len(),
        });
    }
    if let Some((index, f)) = fragments.iter().enumerate().find(|(_, f)| !f.is_normalized()) {
        return Err(Error::UnnormalizedFragment {
            index,
            total: f.total(),
        });
    }
    let mut pieces: Vec<f64> = masses
        .masses
        .iter()
        .zip(fragments)
        .flat_map(|(&m, f)| f.masses.iter().map(move |&p| m * p))
        .collect();
    // stable, so equal pieces keep their generation order
    pieces.sort_by(|a, b| b.total_cmp(a));
    Ok(MassSequence {
        masses: pieces,
        sorted: true,
    })
}

/// Inverse-CDF draw from Beta(1, alpha) given a uniform `u` in [0, 1).
pub fn beta_one_inv_cdf(alpha: f64, u: f64) -> f64 {
    -((-u).ln_1p() / alpha).exp_m1()
}

/// Truncated stick-breaking draw.
#[derive(Clone, Debug, PartialEq)]
pub struct StickBreak {
    pub weights: Vec<f64>,
    pub betas: Vec<f64>,
    /// Unbroken remainder of the stick, `Π (1 - ν_k)`.
    pub remainder: f64,
}

impl StickBreak {
    /// The weights for a given sequence of beta draws.
    pub fn from_betas(betas: &[f64]) -> Self {
        let mut remainder = 1.0;
        let mut weights = Vec::with_capacity(betas.len());
        for &nu in betas {
            weights.push(nu * remainder);
            remainder *= 1.0 - nu;
        }
        StickBreak {
            weights,
            betas: betas.to_vec(),
            remainder,
        }
    }

    pub fn masses(&self) -> MassSequence {
        let sorted = self.weights.windows(2).all(|w| w[0] >= w[1]);
        MassSequence {
            masses: self.weights.clone(),
            sorted,
        }
    }
}

/// Draws `truncation` sticks with ν ~ Beta(1, alpha).
pub fn stick_break<R: Rng + ?Sized>(alpha: f64, truncation: usize, rng: &mut R) -> Result<StickBreak> {
    ensure_positive("concentration", alpha)?;
    if truncation == 0 {
        return Err(Error::Config("truncation must be at least 1".into()));
    }
    Ok(break_until(alpha, truncation, 0.0, rng))
}

/// Breaks until `max` sticks are drawn or the remainder is at most `stop_at`;
/// at least one stick is always drawn.
fn break_until<R: Rng + ?Sized>(alpha: f64, max: usize, stop_at: f64, rng: &mut R) -> StickBreak {
    let mut betas = Vec::new();
    let mut weights = Vec::new();
    let mut remainder = 1.0;
    while betas.len() < max {
        let nu = beta_one_inv_cdf(alpha, rng.random::<f64>());
        betas.push(nu);
        weights.push(nu * remainder);
        remainder *= 1.0 - nu;
        if remainder <= stop_at {
            break;
        }
    }
    StickBreak {
        weights,
        betas,
        remainder,
    }
}

/// Level-dependent concentration `α(l) = a((l+1)/H) - a(l/H)` with
/// `a(s) = -c ln(1 - s)`, i.e. `α(l) = c ln((H - l) / (H - l - 1))`.
///
/// `H` is the horizon. With `H = L` the last level is singular (`a(1)` is
/// infinite); the default `H = L + 1` keeps every level finite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DivergenceSchedule {
    c: f64,
    depth: usize,
    horizon: usize,
}

impl DivergenceSchedule {
    pub fn new(c: f64, depth: usize) -> Result<Self> {
        Self::with_horizon(c, depth, depth + 1)
    }

    pub fn with_horizon(c: f64, depth: usize, horizon: usize) -> Result<Self> {
        ensure_positive("c", c)?;
        if depth == 0 {
            return Err(Error::Config("depth must be at least 1".into()));
        }
        if horizon < depth {
            return Err(Error::Config(format!("horizon {horizon} is below depth {depth}")));
        }
        Ok(DivergenceSchedule { c, depth, horizon })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Same depth and horizon, different `c`.
    pub fn with_c(&self, c: f64) -> Result<Self> {
        Self::with_horizon(c, self.depth, self.horizon)
    }

    /// `α(level) / c`, which does not depend on `c`.
    pub fn level_factor(&self, level: usize) -> Result<f64> {
        if level >= self.depth {
            return Err(Error::Config(format!(
                "level {level} is outside 0..{}",
                self.depth
            )));
        }
        if level + 1 >= self.horizon {
            return Err(Error::Singularity {
                level,
                horizon: self.horizon,
            });
        }
        Ok((1.0 / (self.horizon - level - 1) as f64).ln_1p())
    }

    pub fn alpha(&self, level: usize) -> Result<f64> {
        Ok(self.c * self.level_factor(level)?)
    }

    /// The cumulative divergence `a(s) = -c ln(1 - s)`.
    pub fn cumulative(&self, s: f64) -> f64 {
        -self.c * (-s).ln_1p()
    }
}

/// Per-node stopping rule for recursive stick-breaking.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StickTruncation {
    /// Upper bound on children per node.
    pub max_children: usize,
    /// A node stops breaking once its undistributed mass is at most this
    /// fraction of its own weight.
    pub relative_tol: f64,
}

impl Default for StickTruncation {
    fn default() -> Self {
        StickTruncation {
            max_children: 64,
            relative_tol: 0.0,
        }
    }
}

/// A tree of stick lengths produced by recursive stick-breaking.
#[derive(Clone, Debug)]
pub struct WeightedTree {
    pub tree: TreeArena,
    weights: Vec<f64>,
    betas: Vec<f64>,
    remainders: Vec<f64>,
}

impl WeightedTree {
    /// Stored stick length π of `node`.
    pub fn weight(&self, node: NodeId) -> f64 {
        self.weights[node.index()]
    }

    /// The beta draw ν of `node`; NaN for the root.
    pub fn beta(&self, node: NodeId) -> f64 {
        self.betas[node.index()]
    }

    /// Mass of `node` not handed to any child.
    pub fn remainder(&self, node: NodeId) -> f64 {
        self.remainders[node.index()]
    }

    /// `1 - Σ leaf weights`.
    pub fn residual_mass(&self) -> f64 {
        1.0 - self.tree.leaves().iter().map(|&l| self.weight(l)).sum::<f64>()
    }

    /// Leaves and their weights, in preorder.
    pub fn leaf_weights(&self) -> Vec<(NodeId, f64)> {
        self.tree.leaves().into_iter().map(|l| (l, self.weight(l))).collect()
    }
}

/// Samples a depth-L weighted tree: every node's children receive a
/// stick-breaking split of the node's mass with concentration `α(depth)`.
/// Nodes are expanded in breadth-first order, so with L = 1 the root's
/// children are exactly one [`stick_break`] draw from the same stream.
pub fn dfp_sample_weights<R: Rng + ?Sized>(
    schedule: &DivergenceSchedule,
    truncation: &StickTruncation,
    rng: &mut R,
) -> Result<WeightedTree> {
    if truncation.max_children == 0 {
        return Err(Error::Config("truncation must be at least 1".into()));
    }
    let alphas = (0..schedule.depth())
        .map(|l| schedule.alpha(l))
        .collect::<Result<Vec<_>>>()?;
    let mut tree = TreeArena::new(schedule.depth())?;
    let mut weights = vec![1.0];
    let mut betas = vec![f64::NAN];
    let mut remainders = vec![0.0];
    let mut queue = std::collections::VecDeque::from([tree.root()]);
    while let Some(node) = queue.pop_front() {
        let depth = tree.node_depth(node);
        if depth == schedule.depth() {
            continue;
        }
        let mass = weights[node.index()];
        let sticks = break_until(
            alphas[depth],
            truncation.max_children,
            truncation.relative_tol,
            rng,
        );
        for (&nu, &w) in sticks.betas.iter().zip(&sticks.weights) {
            let child = tree.add_child(node)?;
            let slot = child.index();
            if slot >= weights.len() {
                weights.resize(slot + 1, 0.0);
                betas.resize(slot + 1, f64::NAN);
                remainders.resize(slot + 1, 0.0);
            }
            weights[slot] = mass * w;
            betas[slot] = nu;
            queue.push_back(child);
        }
        remainders[node.index()] = mass * sticks.remainder;
    }
    Ok(WeightedTree {
        tree,
        weights,
        betas,
        remainders,
    })
}

/// Recomputes π of `node` from the beta draws of all its prefixes:
/// `Π ν_{ω'ωᵢ} Π_{k<ωᵢ} (1 - ν_{ω'k})`.
pub fn node_weight(wt: &WeightedTree, node: NodeId) -> Result<f64> {
    wt.tree.get(node)?;
    let mut weight = 1.0;
    for id in wt.tree.path_from_root(node).into_iter().skip(1) {
        let parent = wt.tree.parent(id).expect("non-root");
        for &sib in wt.tree.children(parent) {
            if sib == id {
                weight *= wt.beta(sib);
                break;
            }
            weight *= 1.0 - wt.beta(sib);
        }
    }
    Ok(weight)
}
