//! Fitting chains, the held-out likelihood protocol and dendrogram purity.

use std::collections::HashMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{heldout_predictive, SamplerConfig, SamplerState, Snapshot, TraceRow};
use crate::io::{FinalState, RunRecord, TreeJson, RUN_SCHEMA};
use crate::points::Points;
use crate::stats::{mean, variance};
use crate::tree::{NodeId, TreeArena};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub sampler: SamplerConfig,
    pub sweeps: usize,
    pub burn_in: usize,
    /// Keep every `thin`-th sweep after burn-in.
    pub thin: usize,
    pub seed: u64,
    pub holdout_fraction: f64,
    /// Independent chains pooled for prediction.
    pub chains: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sampler: SamplerConfig::default(),
            sweeps: 2000,
            burn_in: 1000,
            thin: 10,
            seed: 0,
            holdout_fraction: 0.1,
            chains: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.burn_in > self.sweeps {
            return Err(Error::Config(format!(
                "burn-in {} exceeds the {} sweeps",
                self.burn_in, self.sweeps
            )));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config(format!(
                "holdout fraction {} is outside [0, 1)",
                self.holdout_fraction
            )));
        }
        if self.chains == 0 {
            return Err(Error::Config("at least one chain is required".into()));
        }
        Ok(())
    }

    /// Number of sweeps kept: `(sweeps - burn_in) / thin`, rounded down.
    pub fn kept(&self) -> usize {
        (self.sweeps - self.burn_in) / self.thin
    }
}

/// One fitted chain: its final state, the kept trace rows and (optionally)
/// a snapshot for every kept sweep.
#[derive(Clone, Debug)]
pub struct Fit {
    pub seed: u64,
    pub state: SamplerState,
    pub trace: Vec<TraceRow>,
    pub snapshots: Vec<Snapshot>,
}

/// Runs one chain from `seed`.
pub fn fit_chain(points: &Points, config: &RunConfig, seed: u64, keep_snapshots: bool) -> Result<Fit> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = SamplerState::init(points.clone(), config.sampler, &mut rng)?;
    let mut trace = Vec::with_capacity(config.kept());
    let mut snapshots = Vec::new();
    for s in 1..=config.sweeps {
        let row = state.gibbs_sweep(&mut rng)?;
        if s > config.burn_in && (s - config.burn_in).is_multiple_of(config.thin) {
            trace.push(row);
            if keep_snapshots {
                snapshots.push(state.snapshot()?);
            }
        }
    }
    Ok(Fit {
        seed,
        state,
        trace,
        snapshots,
    })
}

/// Runs `config.chains` chains on separate threads, seeds `seed, seed+1, …`.
pub fn fit_chains(points: &Points, config: &RunConfig, keep_snapshots: bool) -> Result<Vec<Fit>> {
    config.validate()?;
    if config.chains == 1 {
        return Ok(vec![fit_chain(points, config, config.seed, keep_snapshots)?]);
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..config.chains as u64)
            .map(|k| {
                let seed = config.seed.wrapping_add(k);
                scope.spawn(move || fit_chain(points, config, seed, keep_snapshots))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("chain thread panicked"))
            .collect()
    })
}

impl Fit {
    pub fn record(&self, config: &RunConfig) -> RunRecord {
        let tree = self.state.tree();
        RunRecord {
            schema: RUN_SCHEMA.to_string(),
            seed: self.seed,
            config: *config,
            trace: self.trace.clone(),
            final_state: FinalState {
                c: self.state.c(),
                tau: self.state.tau(),
                obs_tau: self.state.obs_tau(),
            },
            tree: TreeJson::from_tree(tree),
            assignments: self
                .state
                .assignments()
                .iter()
                .map(|&z| tree.node(z).path().to_vec())
                .collect(),
        }
    }
}

/// Splits `0..n` into sorted train and test indices. The test set has
/// `round(n · fraction)` members; the split depends only on `seed` and `n`.
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_test = (n as f64 * fraction).round() as usize;
    if n_test == 0 {
        return Err(Error::EmptyTestSet(fraction));
    }
    if n_test >= n {
        return Err(Error::EmptyData);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub n_train: usize,
    pub n_test: usize,
    pub states: usize,
    /// Held-out log density of each test point.
    pub per_point: Vec<f64>,
    pub mean: f64,
    /// Standard error across test points.
    pub se: f64,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "held-out log-likelihood per point: {:.3} ± {:.3} (train {}, test {}, {} posterior states)",
            self.mean, self.se, self.n_train, self.n_test, self.states
        )
    }
}

/// Fits on a seeded split and scores the held-out points.
pub fn eval_protocol(points: &Points, config: &RunConfig) -> Result<EvalReport> {
    config.validate()?;
    let (train, test) = holdout_split(points.len(), config.holdout_fraction, config.seed)?;
    let fits = fit_chains(&points.select(&train), config, true)?;
    let snapshots: Vec<Snapshot> = fits.into_iter().flat_map(|f| f.snapshots).collect();
    if snapshots.is_empty() {
        return Err(Error::NoStates);
    }
    let test_points = points.select(&test);
    let per_point = score(&snapshots, &test_points)?;
    Ok(summarize(train.len(), snapshots.len(), per_point))
}

/// Held-out log density of each row.
pub fn score(snapshots: &[Snapshot], points: &Points) -> Result<Vec<f64>> {
    points.rows().map(|y| heldout_predictive(snapshots, y)).collect()
}

pub fn summarize(n_train: usize, states: usize, per_point: Vec<f64>) -> EvalReport {
    let n = per_point.len();
    let se = if n > 1 {
        (variance(&per_point) / n as f64).sqrt()
    } else {
        0.0
    };
    EvalReport {
        n_train,
        n_test: n,
        states,
        mean: mean(&per_point),
        se,
        per_point,
    }
}

/// Dendrogram purity of a tree's leaf assignments.
pub fn dendrogram_purity(tree: &TreeArena, assignments: &[NodeId], labels: &[String]) -> Result<f64> {
    let paths: Vec<&[u32]> = assignments
        .iter()
        .map(|&z| tree.get(z).map(|n| n.path()))
        .collect::<Result<_>>()?;
    purity_from_paths(&paths, labels)
}

/// Purity from each datum's leaf address: the average, over unordered
/// pairs of distinct data sharing a label, of the fraction of that label
/// among the data below the pair's lowest common ancestor.
pub fn purity_from_paths<P: AsRef<[u32]>>(paths: &[P], labels: &[String]) -> Result<f64> {
    if paths.len() != labels.len() {
        return Err(Error::Config(format!(
            "{} assignments but {} labels",
            paths.len(),
            labels.len()
        )));
    }
    // label counts below every address prefix
    let mut below: HashMap<&[u32], HashMap<&str, usize>> = HashMap::new();
    for (p, l) in paths.iter().zip(labels) {
        let p = p.as_ref();
        for k in 0..=p.len() {
            *below.entry(&p[..k]).or_default().entry(l.as_str()).or_default() += 1;
        }
    }
    let (mut total, mut pairs) = (0.0, 0usize);
    for i in 0..paths.len() {
        for j in i + 1..paths.len() {
            if labels[i] != labels[j] {
                continue;
            }
            let (a, b) = (paths[i].as_ref(), paths[j].as_ref());
            let k = a.iter().zip(b).take_while(|(x, y)| x == y).count();
            let counts = &below[&a[..k]];
            let all: usize = counts.values().sum();
            total += counts[labels[i].as_str()] as f64 / all as f64;
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::NoSameClassPairs);
    }
    Ok(total / pairs as f64)
}
