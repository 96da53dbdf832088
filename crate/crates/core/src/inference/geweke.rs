//! Joint-distribution test of the Gibbs sampler: draws from the prior and
//! likelihood directly are compared with a chain that alternates one sweep
//! with regenerating the data from the current state.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{GammaPosterior, Hyperpriors, ObsPrecision, SamplerConfig, SamplerState, TauUpdate};
use crate::diffusion::{generate_dataset, sample_observations, DiffusionParams};
use crate::error::{Error, Result};
use crate::points::Points;
use crate::stats::{batch_means_se, mean, variance};

#[derive(Clone, Debug, PartialEq)]
pub struct GewekeConfig {
    pub n: usize,
    pub depth: usize,
    pub dims: usize,
    pub samples: usize,
    /// Chain sweeps discarded before recording.
    pub burn_in: usize,
    pub batches: usize,
    /// `a_τ > 2` keeps the fourth moment of the data finite, which the
    /// second-moment statistic needs.
    pub hyper: Hyperpriors,
    pub tau_update: TauUpdate,
    pub seed: u64,
}

impl Default for GewekeConfig {
    fn default() -> Self {
        GewekeConfig {
            n: 5,
            depth: 2,
            dims: 1,
            samples: 100_000,
            burn_in: 1_000,
            batches: 50,
            hyper: Hyperpriors {
                a_c: 1.0,
                b_c: 1.0,
                a_tau: 4.0,
                b_tau: 4.0,
            },
            tau_update: TauUpdate::Conjugate,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GewekeStatistic {
    pub name: &'static str,
    pub forward_mean: f64,
    pub forward_se: f64,
    pub chain_mean: f64,
    pub chain_se: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GewekeReport {
    pub statistics: Vec<GewekeStatistic>,
}

impl GewekeReport {
    pub fn max_abs_z(&self) -> f64 {
        self.statistics.iter().map(|s| s.z.abs()).fold(0.0, f64::max)
    }
}

impl fmt::Display for GewekeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>12} {:>10} {:>12} {:>10} {:>8}", "statistic", "forward", "se", "chain", "se", "z")?;
        for s in &self.statistics {
            writeln!(
                f,
                "{:<12} {:>12.5} {:>10.5} {:>12.5} {:>10.5} {:>8.2}",
                s.name, s.forward_mean, s.forward_se, s.chain_mean, s.chain_se, s.z
            )?;
        }
        Ok(())
    }
}

const NAMES: [&str; 4] = ["c", "tau", "leaves", "y_sq_mean"];

fn statistics(c: f64, tau: f64, leaves: usize, points: &Points) -> [f64; 4] {
    let n = points.len() * points.dims();
    let sq: f64 = points.rows().flatten().map(|v| v * v).sum();
    [c, tau, leaves as f64, sq / n as f64]
}

pub fn geweke_test(config: &GewekeConfig) -> Result<GewekeReport> {
    if config.n == 0 {
        return Err(Error::EmptyData);
    }
    if config.samples < 2 * config.batches.max(1) {
        return Err(Error::Config("too few samples for the batch count".into()));
    }
    let sampler = SamplerConfig {
        depth: config.depth,
        hyper: config.hyper,
        tau_update: config.tau_update,
        obs: ObsPrecision::Shared,
        ..SamplerConfig::default()
    };
    sampler.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let c_prior = GammaPosterior {
        shape: config.hyper.a_c,
        rate: config.hyper.b_c,
    };
    let tau_prior = GammaPosterior {
        shape: config.hyper.a_tau,
        rate: config.hyper.b_tau,
    };
    let forward_draw = |rng: &mut ChaCha8Rng| -> Result<_> {
        let c = c_prior.sample(rng);
        let tau = tau_prior.sample(rng);
        let sched = sampler.schedule(c)?;
        let data = generate_dataset(config.n, &sched, &DiffusionParams::shared(tau, config.dims)?, rng)?;
        Ok((c, tau, data))
    };

    let mut forward = vec![Vec::with_capacity(config.samples); NAMES.len()];
    for _ in 0..config.samples {
        let (c, tau, data) = forward_draw(&mut rng)?;
        let stats = statistics(c, tau, data.tree.leaves().len(), &data.points);
        for (k, v) in stats.into_iter().enumerate() {
            forward[k].push(v);
        }
    }

    let (c, tau, data) = forward_draw(&mut rng)?;
    let mut state = SamplerState::from_parts(data.points, data.tree, data.assignments, c, tau, tau, sampler)?;
    let mut chain = vec![Vec::with_capacity(config.samples); NAMES.len()];
    for s in 0..config.burn_in + config.samples {
        state.gibbs_sweep(&mut rng)?;
        regenerate(&mut state, &mut rng)?;
        if s >= config.burn_in {
            let stats = statistics(state.c(), state.tau(), state.tree().leaves().len(), state.points());
            for (k, v) in stats.into_iter().enumerate() {
                chain[k].push(v);
            }
        }
    }

    let statistics = NAMES
        .iter()
        .zip(forward.iter().zip(&chain))
        .map(|(&name, (f, g))| {
            let forward_se = (variance(f) / f.len() as f64).sqrt();
            let chain_se = batch_means_se(g, config.batches);
            let (fm, gm) = (mean(f), mean(g));
            GewekeStatistic {
                name,
                forward_mean: fm,
                forward_se,
                chain_mean: gm,
                chain_se,
                z: (fm - gm) / (forward_se.powi(2) + chain_se.powi(2)).sqrt(),
            }
        })
        .collect();
    Ok(GewekeReport { statistics })
}

/// Redraws every observation from its leaf parameter.
fn regenerate<R: Rng + ?Sized>(state: &mut SamplerState, rng: &mut R) -> Result<()> {
    let params = DiffusionParams::new(state.tau(), state.obs_tau(), state.points().dims())?;
    let points = sample_observations(state.tree(), state.assignments(), &params, rng)?;
    state.set_points(points)
}
