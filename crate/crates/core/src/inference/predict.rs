use crate::diffusion::{Beliefs, CollapsedGaussian};
use crate::error::{Error, Result};
use crate::fragmentation::DivergenceSchedule;
use crate::ncrp::{outcome_log_probs, Outcome};
use crate::stats::log_sum_exp;
use crate::tree::TreeArena;

/// One posterior state reduced to what the one-step-ahead density needs.
#[derive(Clone, Debug)]
pub struct Snapshot {
    tree: TreeArena,
    outcomes: Vec<(Outcome, f64)>,
    beliefs: Beliefs,
}

impl Snapshot {
    pub fn new(tree: &TreeArena, schedule: &DivergenceSchedule, model: &mut CollapsedGaussian) -> Result<Self> {
        Ok(Snapshot {
            tree: tree.clone(),
            outcomes: outcome_log_probs(tree, schedule)?,
            beliefs: model.beliefs(tree),
        })
    }

    pub fn tree(&self) -> &TreeArena {
        &self.tree
    }

    /// `ln p(y | state)`, summed over every outcome of a fresh descent.
    pub fn log_predictive(&self, y: &[f64]) -> f64 {
        let terms: Vec<f64> = self
            .outcomes
            .iter()
            .map(|&(o, lp)| lp + self.beliefs.log_predictive(&self.tree, o, y))
            .collect();
        log_sum_exp(&terms)
    }
}

/// Log of the average over states of the one-step-ahead density at `y`.
pub fn heldout_predictive(states: &[Snapshot], y: &[f64]) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::NoStates);
    }
    let per: Vec<f64> = states.iter().map(|s| s.log_predictive(y)).collect();
    Ok(log_sum_exp(&per) - (states.len() as f64).ln())
}
