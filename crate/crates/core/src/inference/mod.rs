//! Collapsed Gibbs sampling over tree structure, node parameters and the
//! two hyperparameters `c` and `τ`.

mod geweke;
mod predict;
mod slice;

pub use geweke::{geweke_test, GewekeConfig, GewekeReport, GewekeStatistic};
pub use predict::{heldout_predictive, Snapshot};
pub use slice::slice_sample;

use rand::Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::diffusion::{CollapsedGaussian, DiffusionParams};
use crate::error::{ensure_positive, Error, Result};
use crate::fragmentation::DivergenceSchedule;
use crate::ncrp::{outcome_log_probs, BranchingSummary, Outcome};
use crate::points::Points;
use crate::stats::softmax;
use crate::tree::{NodeId, TreeArena};

/// Gamma shape/rate pairs for `c` and `τ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperpriors {
    pub a_c: f64,
    pub b_c: f64,
    pub a_tau: f64,
    pub b_tau: f64,
}

impl Default for Hyperpriors {
    fn default() -> Self {
        Hyperpriors {
            a_c: 1.0,
            b_c: 1.0,
            a_tau: 1.0,
            b_tau: 1.0,
        }
    }
}

impl Hyperpriors {
    pub fn validate(&self) -> Result<()> {
        ensure_positive("a_c", self.a_c)?;
        ensure_positive("b_c", self.b_c)?;
        ensure_positive("a_tau", self.a_tau)?;
        ensure_positive("b_tau", self.b_tau)?;
        Ok(())
    }
}

/// How the observation precision relates to the diffusion precision.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsPrecision {
    /// Observation noise uses `τ` itself.
    #[default]
    Shared,
    Fixed(f64),
    /// A separate precision with the same gamma prior as `τ`.
    Sampled,
}

/// Kernel used for the `τ` update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauUpdate {
    /// Exact normal-gamma conditional over every node and (if shared) every
    /// datum.
    #[default]
    Conjugate,
    /// `Gamma(a_τ, b_τ + Σ_edges Δφ²/2)`: one `Gamma(1, Δφ²/2)` factor per
    /// edge, no shape increment.
    Literal,
    /// The conjugate conditional with its rate halved. Deliberately wrong;
    /// exists to check that the joint-distribution test detects it.
    HalvedRate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub depth: usize,
    /// Divergence-function horizon; `None` means `depth + 1`.
    pub horizon: Option<usize>,
    pub hyper: Hyperpriors,
    /// Holds `c` at this value instead of sampling it.
    pub fixed_c: Option<f64>,
    /// Holds `τ` at this value instead of sampling it.
    pub fixed_tau: Option<f64>,
    pub obs: ObsPrecision,
    pub tau_update: TauUpdate,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            depth: 4,
            horizon: None,
            hyper: Hyperpriors::default(),
            fixed_c: None,
            fixed_tau: None,
            obs: ObsPrecision::Shared,
            tau_update: TauUpdate::Conjugate,
        }
    }
}

impl SamplerConfig {
    pub fn with_depth(depth: usize) -> Self {
        SamplerConfig {
            depth,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if let Some(c) = self.fixed_c {
            ensure_positive("c", c)?;
        }
        if let Some(t) = self.fixed_tau {
            ensure_positive("tau", t)?;
        }
        if let ObsPrecision::Fixed(p) = self.obs {
            ensure_positive("obs_tau", p)?;
        }
        self.schedule(1.0)?;
        Ok(())
    }

    /// The divergence schedule for a given `c`.
    pub fn schedule(&self, c: f64) -> Result<DivergenceSchedule> {
        let horizon = self.horizon.unwrap_or(self.depth + 1);
        let sched = DivergenceSchedule::with_horizon(c, self.depth, horizon)?;
        for l in 0..self.depth {
            sched.alpha(l)?;
        }
        Ok(sched)
    }
}

/// Gamma distribution in shape/rate form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaPosterior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPosterior {
    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Gamma::new(self.shape, 1.0 / self.rate)
            .expect("positive shape and rate")
            .sample(rng)
    }
}

/// Squared residuals entering the precision updates, summed over dimensions.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Residuals {
    /// `Σ φ_root²` (the root diffuses from 0).
    pub root_ss: f64,
    /// `Σ (φ_child − φ_parent)²` over edges.
    pub edge_ss: f64,
    /// Number of scalar terms in `root_ss` and `edge_ss` together.
    pub param_terms: usize,
    /// `Σ (y_i − φ_{z_i})²`.
    pub data_ss: f64,
    pub data_terms: usize,
}

impl Residuals {
    pub fn new(tree: &TreeArena, points: &Points, assignments: &[NodeId]) -> Result<Self> {
        let mut r = Residuals::default();
        for id in tree.preorder() {
            let phi = tree.node(id).phi().ok_or(Error::MissingPhi(id))?;
            match tree.parent(id) {
                None => r.root_ss += phi.iter().map(|v| v * v).sum::<f64>(),
                Some(p) => {
                    let pp = tree.node(p).phi().ok_or(Error::MissingPhi(p))?;
                    r.edge_ss += phi.iter().zip(pp).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                }
            }
            r.param_terms += phi.len();
        }
        for (y, &z) in points.rows().zip(assignments) {
            let phi = tree.get(z)?.phi().ok_or(Error::MissingPhi(z))?;
            r.data_ss += y.iter().zip(phi).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            r.data_terms += y.len();
        }
        Ok(r)
    }
}

/// Conditional of `τ` given node parameters (and, if the observation noise
/// is shared, the data).
pub fn tau_conditional(res: &Residuals, hyper: &Hyperpriors, obs: ObsPrecision, update: TauUpdate) -> GammaPosterior {
    let shared = obs == ObsPrecision::Shared;
    let (extra_terms, extra_ss) = if shared {
        (res.data_terms, res.data_ss)
    } else {
        (0, 0.0)
    };
    let conjugate = GammaPosterior {
        shape: hyper.a_tau + (res.param_terms + extra_terms) as f64 / 2.0,
        rate: hyper.b_tau + (res.root_ss + res.edge_ss + extra_ss) / 2.0,
    };
    match update {
        TauUpdate::Conjugate => conjugate,
        TauUpdate::Literal => GammaPosterior {
            shape: hyper.a_tau,
            rate: hyper.b_tau + res.edge_ss / 2.0,
        },
        TauUpdate::HalvedRate => GammaPosterior {
            rate: conjugate.rate / 2.0,
            ..conjugate
        },
    }
}

/// Conditional of a separately sampled observation precision.
pub fn obs_conditional(res: &Residuals, hyper: &Hyperpriors) -> GammaPosterior {
    GammaPosterior {
        shape: hyper.a_tau + res.data_terms as f64 / 2.0,
        rate: hyper.b_tau + res.data_ss / 2.0,
    }
}

/// One row of the per-sweep trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub sweep: usize,
    /// `ln p(y | z, τ) + ln p(structure | c)`.
    pub log_joint: f64,
    pub c: f64,
    pub tau: f64,
    pub obs_tau: f64,
    pub leaves: usize,
    /// Largest number of data at a single leaf.
    pub max_occupancy: usize,
}

/// Everything the Gibbs sweep updates. The random generator is passed to
/// each update separately.
#[derive(Clone, Debug)]
pub struct SamplerState {
    config: SamplerConfig,
    points: Points,
    assignments: Vec<NodeId>,
    tree: TreeArena,
    schedule: DivergenceSchedule,
    tau: f64,
    obs_tau: f64,
    model: CollapsedGaussian,
    sweep: usize,
}

impl SamplerState {
    /// Draws `c` and `τ` from their priors (unless fixed), then inserts the
    /// data one at a time, each from its conditional given those before it.
    pub fn init<R: Rng + ?Sized>(points: Points, config: SamplerConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if points.is_empty() {
            return Err(Error::EmptyData);
        }
        let hyper = config.hyper;
        let c = config.fixed_c.unwrap_or_else(|| {
            GammaPosterior {
                shape: hyper.a_c,
                rate: hyper.b_c,
            }
            .sample(rng)
        });
        let prior_tau = GammaPosterior {
            shape: hyper.a_tau,
            rate: hyper.b_tau,
        };
        let tau = config.fixed_tau.unwrap_or_else(|| prior_tau.sample(rng));
        let obs_tau = match config.obs {
            ObsPrecision::Shared => tau,
            ObsPrecision::Fixed(p) => p,
            ObsPrecision::Sampled => prior_tau.sample(rng),
        };
        let n = points.len();
        let mut state = Self::empty(points, config, c, tau, obs_tau)?;
        for i in 0..n {
            let y = state.points.row(i).to_vec();
            let outcome = state.draw_outcome(&y, rng)?;
            state.attach(i, outcome)?;
        }
        Ok(state)
    }

    /// A state with a given structure and hyperparameters. `assignments`
    /// must be depth-L leaves whose counts match the tree.
    pub fn from_parts(
        points: Points,
        tree: TreeArena,
        assignments: Vec<NodeId>,
        c: f64,
        tau: f64,
        obs_tau: f64,
        config: SamplerConfig,
    ) -> Result<Self> {
        config.validate()?;
        if tree.depth() != config.depth {
            return Err(Error::Config(format!(
                "tree depth {} does not match configured depth {}",
                tree.depth(),
                config.depth
            )));
        }
        tree.validate()?;
        let mut held = tree.clone();
        for &z in &assignments {
            held.detach_leaf(z)?;
        }
        if !held.is_empty() {
            return Err(Error::Config("tree counts do not match the assignments".into()));
        }
        let params = DiffusionParams::new(tau, obs_tau, points.dims())?;
        let model = CollapsedGaussian::new(&tree, &points, &assignments, params)?;
        Ok(SamplerState {
            schedule: config.schedule(c)?,
            config,
            points,
            assignments,
            tree,
            tau,
            obs_tau,
            model,
            sweep: 0,
        })
    }

    fn empty(points: Points, config: SamplerConfig, c: f64, tau: f64, obs_tau: f64) -> Result<Self> {
        let tree = TreeArena::new(config.depth)?;
        let params = DiffusionParams::new(tau, obs_tau, points.dims())?;
        let model = CollapsedGaussian::new(&tree, &Points::empty(points.dims()), &[], params)?;
        let placeholder = vec![NodeId::ROOT; points.len()];
        Ok(SamplerState {
            schedule: config.schedule(c)?,
            config,
            points,
            assignments: placeholder,
            tree,
            tau,
            obs_tau,
            model,
            sweep: 0,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn assignments(&self) -> &[NodeId] {
        &self.assignments
    }

    pub fn tree(&self) -> &TreeArena {
        &self.tree
    }

    pub fn schedule(&self) -> &DivergenceSchedule {
        &self.schedule
    }

    pub fn c(&self) -> f64 {
        self.schedule.c()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn obs_tau(&self) -> f64 {
        self.obs_tau
    }

    /// Completed sweeps.
    pub fn sweep(&self) -> usize {
        self.sweep
    }

    /// Replaces the observations, keeping structure and assignments.
    pub fn set_points(&mut self, points: Points) -> Result<()> {
        if points.len() != self.assignments.len() || points.dims() != self.points.dims() {
            return Err(Error::Config("replacement points have a different shape".into()));
        }
        self.model = CollapsedGaussian::new(&self.tree, &points, &self.assignments, *self.model.params())?;
        self.points = points;
        Ok(())
    }

    fn set_precisions(&mut self, tau: f64, obs_tau: f64) -> Result<()> {
        self.tau = tau;
        self.obs_tau = obs_tau;
        self.model
            .set_params(DiffusionParams::new(tau, obs_tau, self.points.dims())?);
        Ok(())
    }

    /// Removes datum `i` from the tree and returns the outcome that would put
    /// it back: its leaf if still present, otherwise the deepest ancestor that
    /// survived pruning.
    pub fn detach(&mut self, i: usize) -> Result<Outcome> {
        let leaf = self.assignments[i];
        let path = self.tree.path_from_root(leaf);
        self.model.remove(&self.tree, leaf, self.points.row(i));
        self.tree.detach_leaf(leaf)?;
        if self.tree.contains(leaf) {
            return Ok(Outcome::Leaf(leaf));
        }
        let anchor = path
            .into_iter()
            .rev()
            .find(|&id| self.tree.contains(id))
            .expect("the root is never pruned");
        Ok(Outcome::Branch(anchor))
    }

    /// Puts detached datum `i` at `outcome`.
    pub fn attach(&mut self, i: usize, outcome: Outcome) -> Result<NodeId> {
        let leaf = match outcome {
            Outcome::Leaf(l) => self.tree.attach_leaf(l, false)?,
            Outcome::Branch(b) => self.tree.attach_leaf(b, true)?,
        };
        self.model.add(&self.tree, leaf, self.points.row(i));
        self.assignments[i] = leaf;
        Ok(leaf)
    }

    /// Unnormalized log-weights of every outcome for a point `y` not held
    /// by the tree: path probability plus collapsed predictive.
    pub fn outcome_log_weights(&mut self, y: &[f64]) -> Result<Vec<(Outcome, f64)>> {
        let priors = outcome_log_probs(&self.tree, &self.schedule)?;
        let beliefs = self.model.beliefs(&self.tree);
        Ok(priors
            .into_iter()
            .map(|(o, lp)| (o, lp + beliefs.log_predictive(&self.tree, o, y)))
            .collect())
    }

    fn draw_outcome<R: Rng + ?Sized>(&mut self, y: &[f64], rng: &mut R) -> Result<Outcome> {
        let weights = self.outcome_log_weights(y)?;
        let logs: Vec<f64> = weights.iter().map(|w| w.1).collect();
        let probs = softmax(&logs);
        let idx = WeightedIndex::new(&probs)
            .map_err(|e| Error::Format(format!("degenerate assignment weights: {e}")))?
            .sample(rng);
        Ok(weights[idx].0)
    }

    /// Normalized conditional of datum `i`'s assignment given all others.
    /// Leaves the state untouched.
    pub fn z_conditional(&self, i: usize) -> Result<Vec<(Outcome, f64)>> {
        let mut scratch = self.clone();
        scratch.detach(i)?;
        let y = self.points.row(i);
        let weights = scratch.outcome_log_weights(y)?;
        let logs: Vec<f64> = weights.iter().map(|w| w.1).collect();
        Ok(weights.iter().map(|w| w.0).zip(softmax(&logs)).collect())
    }

    /// Resamples datum `i`'s leaf from its conditional.
    pub fn sample_z<R: Rng + ?Sized>(&mut self, i: usize, rng: &mut R) -> Result<NodeId> {
        self.detach(i)?;
        let y = self.points.row(i).to_vec();
        let outcome = self.draw_outcome(&y, rng)?;
        self.attach(i, outcome)
    }

    /// Draws every node parameter from its joint posterior.
    pub fn sample_phi<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.model.sample_phi(&mut self.tree, rng);
    }

    /// Conjugate update of `τ` (and of the observation precision when it is
    /// sampled). Node parameters must be current.
    pub fn sample_tau<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let res = Residuals::new(&self.tree, &self.points, &self.assignments)?;
        let hyper = &self.config.hyper;
        let tau = match self.config.fixed_tau {
            Some(t) => t,
            None => tau_conditional(&res, hyper, self.config.obs, self.config.tau_update).sample(rng),
        };
        let obs_tau = match self.config.obs {
            ObsPrecision::Shared => tau,
            ObsPrecision::Fixed(p) => p,
            ObsPrecision::Sampled => obs_conditional(&res, hyper).sample(rng),
        };
        self.set_precisions(tau, obs_tau)
    }

    /// Log-density of `u = ln c` given the structure, up to a constant.
    pub fn log_c_density(&self, u: f64) -> f64 {
        log_c_density(&BranchingSummary::new(&self.tree), &self.schedule, &self.config.hyper, u)
    }

    /// Slice-samples `c` on the log scale.
    pub fn sample_c<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        if let Some(c) = self.config.fixed_c {
            self.schedule = self.schedule.with_c(c)?;
            return Ok(());
        }
        let summary = BranchingSummary::new(&self.tree);
        let hyper = self.config.hyper;
        let sched = self.schedule;
        let u = slice_sample(
            self.c().ln(),
            |u| log_c_density(&summary, &sched, &hyper, u),
            1.0,
            50,
            rng,
        );
        self.schedule = self.schedule.with_c(u.exp())?;
        Ok(())
    }

    /// `z` for every datum in order, then node parameters, `τ`, `c`.
    pub fn gibbs_sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<TraceRow> {
        for i in 0..self.points.len() {
            self.sample_z(i, rng)?;
        }
        self.sample_phi(rng);
        self.sample_tau(rng)?;
        self.sample_c(rng)?;
        self.sweep += 1;
        self.trace_row()
    }

    pub fn log_joint(&mut self) -> Result<f64> {
        let lp = BranchingSummary::new(&self.tree).log_prob(&self.schedule)?;
        Ok(self.model.marginal_loglik(&self.tree) + lp)
    }

    pub fn trace_row(&mut self) -> Result<TraceRow> {
        let leaves = self.tree.leaves();
        Ok(TraceRow {
            sweep: self.sweep,
            log_joint: self.log_joint()?,
            c: self.c(),
            tau: self.tau,
            obs_tau: self.obs_tau,
            max_occupancy: leaves.iter().map(|&l| self.tree.node(l).n_here()).max().unwrap_or(0),
            leaves: leaves.len(),
        })
    }

    /// A frozen copy of what the predictive density needs.
    pub fn snapshot(&mut self) -> Result<Snapshot> {
        Snapshot::new(&self.tree, &self.schedule, &mut self.model)
    }

    /// Checks tree counts, assignments and cached sufficient statistics.
    pub fn validate(&self) -> Result<()> {
        self.tree.validate()?;
        let mut held = self.tree.clone();
        for (i, &z) in self.assignments.iter().enumerate() {
            if !self.tree.contains(z) || !self.tree.is_leaf_level(z) {
                return Err(Error::Format(format!("datum {i} is not at a leaf")));
            }
            held.detach_leaf(z)?;
        }
        if !held.is_empty() {
            return Err(Error::Format("leaf counts exceed the assignments".into()));
        }
        for leaf in self.tree.leaves() {
            if self.model.count(leaf) != self.tree.node(leaf).n_here() {
                return Err(Error::Format(format!("model count mismatch at {leaf}")));
            }
        }
        Ok(())
    }
}

fn log_c_density(summary: &BranchingSummary, sched: &DivergenceSchedule, hyper: &Hyperpriors, u: f64) -> f64 {
    let c = u.exp();
    if !(c > 0.0 && c.is_finite()) {
        return f64::NEG_INFINITY;
    }
    match sched.with_c(c).and_then(|s| summary.log_prob(&s)) {
        Ok(lp) if lp.is_finite() => hyper.a_c * u - hyper.b_c * c + lp,
        _ => f64::NEG_INFINITY,
    }
}

/// Runs `sweeps` Gibbs sweeps on a fresh state and returns the trace.
pub fn run_chain<R: Rng + ?Sized>(state: &mut SamplerState, sweeps: usize, rng: &mut R) -> Result<Vec<TraceRow>> {
    (0..sweeps).map(|_| state.gibbs_sweep(rng)).collect()
}

#[cfg(test)]
mod tests;
