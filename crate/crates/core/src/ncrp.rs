//! Weight-marginalized probabilities of the fragmentation tree: nested CRP
//! descent, path probabilities and per-node branching probabilities.

use rand::Rng;
use statrs::function::gamma::ln_gamma;

use crate::error::{ensure_positive, Error, Result};
use crate::fragmentation::DivergenceSchedule;
use crate::tree::{NodeId, TreeArena};

/// Descent probabilities at one node.
#[derive(Clone, Debug, PartialEq)]
pub struct ChildProbabilities {
    pub existing: Vec<f64>,
    pub new: f64,
}

/// `n_k / (n + α)` for each existing child and `α / (n + α)` for a new one.
pub fn child_probabilities(counts: &[usize], alpha: f64) -> Result<ChildProbabilities> {
    ensure_positive("concentration", alpha)?;
    let total = counts.iter().sum::<usize>() as f64 + alpha;
    Ok(ChildProbabilities {
        existing: counts.iter().map(|&n| n as f64 / total).collect(),
        new: alpha / total,
    })
}

/// Where a data point can end up during one descent: an existing leaf, or a
/// fresh chain branching off below an internal node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Outcome {
    Leaf(NodeId),
    Branch(NodeId),
}

/// Counts with one datum at `exclude` (a leaf) left out.
struct Counts<'a> {
    tree: &'a TreeArena,
    excluded: Vec<NodeId>,
}

impl<'a> Counts<'a> {
    fn new(tree: &'a TreeArena, exclude: Option<NodeId>) -> Result<Self> {
        let excluded = match exclude {
            Some(leaf) => {
                let node = tree.get(leaf)?;
                if node.depth() != tree.depth() || node.n_here() == 0 {
                    return Err(Error::EmptyLeaf(leaf));
                }
                tree.path_from_root(leaf)
            }
            None => Vec::new(),
        };
        Ok(Counts { tree, excluded })
    }

    fn n(&self, id: NodeId) -> usize {
        self.tree.node(id).n_desc() - usize::from(self.excluded.contains(&id))
    }
}

/// Log-probability of descending from the root to `node` (any depth) under
/// the nested CRP. If the count of a node on the way is zero (only possible
/// after exclusion), the remainder of the path is a fresh chain: that level
/// contributes the new-child probability and the levels below contribute 1.
pub fn node_log_prob(
    tree: &TreeArena,
    node: NodeId,
    schedule: &DivergenceSchedule,
    exclude: Option<NodeId>,
) -> Result<f64> {
    tree.get(node)?;
    let counts = Counts::new(tree, exclude)?;
    let mut lp = 0.0;
    let path = tree.path_from_root(node);
    for w in path.windows(2) {
        let (parent, child) = (w[0], w[1]);
        let alpha = schedule.alpha(tree.node_depth(parent))?;
        let denom = (counts.n(parent) as f64 + alpha).ln();
        let m = counts.n(child);
        if m == 0 {
            lp += alpha.ln() - denom;
            break;
        }
        lp += (m as f64).ln() - denom;
    }
    Ok(lp)
}

/// [`node_log_prob`] restricted to depth-L leaves.
pub fn path_log_prob(
    tree: &TreeArena,
    leaf: NodeId,
    schedule: &DivergenceSchedule,
    exclude: Option<NodeId>,
) -> Result<f64> {
    let depth = tree.get(leaf)?.depth();
    if depth != tree.depth() {
        return Err(Error::WrongDepth {
            node: leaf,
            depth,
            expected: format!("{} (a leaf)", tree.depth()),
        });
    }
    node_log_prob(tree, leaf, schedule, exclude)
}

/// Log-probabilities of every outcome of one descent through `tree`:
/// each leaf with its path probability, and each internal node (root
/// included) with the probability of reaching it times `α / (n + α)`.
/// The probabilities sum to one.
pub fn outcome_log_probs(tree: &TreeArena, schedule: &DivergenceSchedule) -> Result<Vec<(Outcome, f64)>> {
    let alphas = (0..tree.depth())
        .map(|l| schedule.alpha(l))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(tree.len());
    let mut stack = vec![(tree.root(), 0.0)];
    while let Some((id, lp)) = stack.pop() {
        let node = tree.node(id);
        let depth = node.depth();
        if depth == tree.depth() {
            out.push((Outcome::Leaf(id), lp));
            continue;
        }
        let alpha = alphas[depth];
        let denom = (node.n_desc() as f64 + alpha).ln();
        out.push((Outcome::Branch(id), lp + alpha.ln() - denom));
        for &c in node.children().iter().rev() {
            let m = tree.node(c).n_desc() as f64;
            stack.push((c, lp + m.ln() - denom));
        }
    }
    Ok(out)
}

/// `ln[Γ(α) α^K Π Γ(n_k) / Γ(n + α)]`, the probability that a CRP seats
/// `n` customers into the given ordered table sizes. Empty input gives 0.
pub fn branching_log_prob(child_counts: &[usize], alpha: f64) -> Result<f64> {
    ensure_positive("concentration", alpha)?;
    if child_counts.is_empty() {
        return Ok(0.0);
    }
    if child_counts.contains(&0) {
        return Err(Error::Config("branching counts must be positive".into()));
    }
    let n: usize = child_counts.iter().sum();
    let sum_lgamma: f64 = child_counts.iter().map(|&k| ln_gamma(k as f64)).sum();
    Ok(seating_log_prob(alpha, child_counts.len(), n, sum_lgamma))
}

fn seating_log_prob(alpha: f64, tables: usize, n: usize, sum_lgamma: f64) -> f64 {
    ln_gamma(alpha) + tables as f64 * alpha.ln() + sum_lgamma - ln_gamma(n as f64 + alpha)
}

/// Σ over internal nodes of [`branching_log_prob`] with `α(depth)`.
pub fn tree_log_prob(tree: &TreeArena, schedule: &DivergenceSchedule) -> Result<f64> {
    BranchingSummary::new(tree).log_prob(schedule)
}

/// The count statistics `tree_log_prob` depends on, so the structure
/// probability can be re-evaluated cheaply for many values of `c`.
#[derive(Clone, Debug)]
pub struct BranchingSummary {
    nodes: Vec<NodeBranching>,
}

#[derive(Clone, Debug)]
struct NodeBranching {
    level: usize,
    tables: usize,
    n: usize,
    sum_lgamma: f64,
}

impl BranchingSummary {
    pub fn new(tree: &TreeArena) -> Self {
        let nodes = tree
            .iter()
            .filter(|(_, node)| !node.children().is_empty())
            .map(|(_, node)| NodeBranching {
                level: node.depth(),
                tables: node.children().len(),
                n: node.children().iter().map(|&c| tree.node(c).n_desc()).sum(),
                sum_lgamma: node
                    .children()
                    .iter()
                    .map(|&c| ln_gamma(tree.node(c).n_desc() as f64))
                    .sum(),
            })
            .collect();
        BranchingSummary { nodes }
    }

    pub fn log_prob(&self, schedule: &DivergenceSchedule) -> Result<f64> {
        let mut total = 0.0;
        for node in &self.nodes {
            let alpha = schedule.alpha(node.level)?;
            total += seating_log_prob(alpha, node.tables, node.n, node.sum_lgamma);
        }
        Ok(total)
    }
}

/// Seats `n` data points one after another by nested CRP descent.
/// Returns the tree and each datum's leaf.
pub fn ncrp_sample<R: Rng + ?Sized>(
    n: usize,
    schedule: &DivergenceSchedule,
    rng: &mut R,
) -> Result<(TreeArena, Vec<NodeId>)> {
    if n == 0 {
        return Err(Error::EmptyData);
    }
    let mut tree = TreeArena::new(schedule.depth())?;
    let mut leaves = Vec::with_capacity(n);
    for _ in 0..n {
        let leaf = descend(&mut tree, schedule, rng)?;
        leaves.push(leaf);
    }
    Ok((tree, leaves))
}

/// One nested-CRP descent from the root, attaching the datum.
pub fn descend<R: Rng + ?Sized>(
    tree: &mut TreeArena,
    schedule: &DivergenceSchedule,
    rng: &mut R,
) -> Result<NodeId> {
    let mut cur = tree.root();
    loop {
        let node = tree.node(cur);
        if node.depth() == tree.depth() {
            return tree.attach_leaf(cur, false);
        }
        let alpha = schedule.alpha(node.depth())?;
        let mut u = rng.random::<f64>() * (node.n_desc() as f64 + alpha);
        let mut next = None;
        for &c in node.children() {
            let m = tree.node(c).n_desc() as f64;
            if u < m {
                next = Some(c);
                break;
            }
            u -= m;
        }
        match next {
            Some(c) => cur = c,
            None => return tree.attach_leaf(cur, true),
        }
    }
}
