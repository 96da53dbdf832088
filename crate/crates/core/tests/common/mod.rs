//! Test oracles written independently of the message-passing code.
#![allow(dead_code)]

use dfp::inference::{ObsPrecision, SamplerConfig, SamplerState};
use dfp::ncrp::{ncrp_sample, Outcome};
use dfp::points::Points;
use dfp::tree::{NodeId, TreeArena};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// `ln N(y; 0, K)` via Cholesky.
pub fn mvn_logpdf(y: &[f64], cov: &DMatrix<f64>) -> f64 {
    let n = y.len();
    if n == 0 {
        return 0.0;
    }
    let chol = cov.clone().cholesky().expect("covariance is positive definite");
    let v = DVector::from_column_slice(y);
    let solved = chol.solve(&v);
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + v.dot(&solved))
}

/// Covariance of the observations implied by the diffusion: data at nodes
/// whose lowest common ancestor sits at depth d share `(d + 1)/τ`.
pub fn data_covariance(tree: &TreeArena, nodes: &[NodeId], tau: f64, obs_tau: f64) -> DMatrix<f64> {
    let n = nodes.len();
    DMatrix::from_fn(n, n, |i, j| {
        let shared = (tree.node_depth(tree.lca(nodes[i], nodes[j])) + 1) as f64 / tau;
        shared + if i == j { 1.0 / obs_tau } else { 0.0 }
    })
}

/// `ln p(y | z)` from the joint Gaussian, summed over dimensions.
pub fn joint_loglik(tree: &TreeArena, points: &Points, z: &[NodeId], tau: f64, obs_tau: f64) -> f64 {
    let cov = data_covariance(tree, z, tau, obs_tau);
    (0..points.dims())
        .map(|k| {
            let y: Vec<f64> = points.rows().map(|r| r[k]).collect();
            mvn_logpdf(&y, &cov)
        })
        .sum()
}

/// `ln p(y* | data)` for `y*` at `target`, via the joint Gaussian over the
/// data plus the new point.
pub fn joint_predictive(
    tree: &TreeArena,
    points: &Points,
    z: &[NodeId],
    target: Outcome,
    ystar: &[f64],
    tau: f64,
    obs_tau: f64,
) -> f64 {
    let n = z.len();
    let (anchor, own_depth) = match target {
        Outcome::Leaf(l) => (l, tree.depth()),
        Outcome::Branch(b) => (b, tree.depth()),
    };
    let mut cov = DMatrix::zeros(n + 1, n + 1);
    let base = data_covariance(tree, z, tau, obs_tau);
    cov.view_mut((0, 0), (n, n)).copy_from(&base);
    for j in 0..n {
        let c = (tree.node_depth(tree.lca(anchor, z[j])) + 1) as f64 / tau;
        cov[(n, j)] = c;
        cov[(j, n)] = c;
    }
    cov[(n, n)] = (own_depth + 1) as f64 / tau + 1.0 / obs_tau;
    (0..points.dims())
        .map(|k| {
            let mut y: Vec<f64> = points.rows().map(|r| r[k]).collect();
            let without = mvn_logpdf(&y, &base);
            y.push(ystar[k]);
            mvn_logpdf(&y, &cov) - without
        })
        .sum()
}

/// Log-weights of the collapsed Gibbs conditional of a flat Dirichlet-process
/// mixture whose cluster means share a Gaussian parent: `μ ~ N(0, 1/τ)`,
/// `θ_k ~ N(μ, 1/τ)`, `y ~ N(θ_k, 1/ρ)`. One entry per existing cluster,
/// then one for a new cluster; their exponentials sum to `p(y | clusters)`.
pub fn flat_dpm_log_weights(
    clusters: &[Vec<Vec<f64>>],
    y: &[f64],
    alpha: f64,
    tau: f64,
    obs_tau: f64,
) -> Vec<f64> {
    let n: usize = clusters.iter().map(Vec::len).sum();
    let dims = y.len();
    let mut logw = Vec::new();
    for k in 0..=clusters.len() {
        let prior = if k < clusters.len() {
            clusters[k].len() as f64 / (n as f64 + alpha)
        } else {
            alpha / (n as f64 + alpha)
        };
        let mut lp = prior.ln();
        for d in 0..dims {
            // parent mean posterior given every cluster except k
            let (mut prec, mut pm) = (tau, 0.0);
            for (j, c) in clusters.iter().enumerate() {
                if j == k {
                    continue;
                }
                let m = c.len() as f64;
                let ybar = c.iter().map(|r| r[d]).sum::<f64>() / m;
                let v = 1.0 / tau + 1.0 / (m * obs_tau);
                prec += 1.0 / v;
                pm += ybar / v;
            }
            let (mu_mean, mu_var) = (pm / prec, 1.0 / prec);
            // cluster mean: prior from the parent, updated with its own data
            let mut theta_prec = 1.0 / (mu_var + 1.0 / tau);
            let mut theta_pm = mu_mean * theta_prec;
            if k < clusters.len() {
                for r in &clusters[k] {
                    theta_prec += obs_tau;
                    theta_pm += obs_tau * r[d];
                }
            }
            let var = 1.0 / theta_prec + 1.0 / obs_tau;
            let mean = theta_pm / theta_prec;
            lp += -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (y[d] - mean).powi(2) / var);
        }
        logw.push(lp);
    }
    logw
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Normalized [`flat_dpm_log_weights`].
pub fn flat_dpm_conditional(
    clusters: &[Vec<Vec<f64>>],
    y: &[f64],
    alpha: f64,
    tau: f64,
    obs_tau: f64,
) -> Vec<f64> {
    let logw = flat_dpm_log_weights(clusters, y, alpha, tau, obs_tau);
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logw.iter().map(|w| (w - max).exp()).sum();
    logw.iter().map(|w| (w - max).exp() / total).collect()
}

/// Flat collapsed DP-mixture Gibbs sampler with fixed hyperparameters.
/// For each query row, the log of the predictive density averaged over
/// sweeps after `burn_in`.
#[allow(clippy::too_many_arguments)]
pub fn flat_dpm_heldout(
    train: &[Vec<f64>],
    queries: &[Vec<f64>],
    alpha: f64,
    tau: f64,
    obs_tau: f64,
    sweeps: usize,
    burn_in: usize,
    seed: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut label = vec![0usize; train.len()];
    let mut acc: Vec<Vec<f64>> = vec![Vec::new(); queries.len()];
    // live cluster ids, and their members, leaving out `skip`
    let clusters_of = |label: &[usize], skip: Option<usize>| {
        let mut ids: Vec<usize> = Vec::new();
        let mut cl: Vec<Vec<Vec<f64>>> = Vec::new();
        for (j, &l) in label.iter().enumerate() {
            if Some(j) == skip {
                continue;
            }
            let k = match ids.iter().position(|&c| c == l) {
                Some(k) => k,
                None => {
                    ids.push(l);
                    cl.push(Vec::new());
                    ids.len() - 1
                }
            };
            cl[k].push(train[j].clone());
        }
        (ids, cl)
    };
    for s in 0..sweeps {
        for i in 0..train.len() {
            let (ids, cl) = clusters_of(&label, Some(i));
            let p = flat_dpm_conditional(&cl, &train[i], alpha, tau, obs_tau);
            let u: f64 = rng.random();
            let mut cum = 0.0;
            let mut pick = p.len() - 1;
            for (k, q) in p.iter().enumerate() {
                cum += q;
                if u < cum {
                    pick = k;
                    break;
                }
            }
            label[i] = match ids.get(pick) {
                Some(&id) => id,
                None => (0..).find(|c| !ids.contains(c)).unwrap(),
            };
        }
        if s >= burn_in {
            let (_, cl) = clusters_of(&label, None);
            for (q, a) in queries.iter().zip(acc.iter_mut()) {
                a.push(log_sum_exp(&flat_dpm_log_weights(&cl, q, alpha, tau, obs_tau)));
            }
        }
    }
    acc.iter().map(|a| log_sum_exp(a) - (a.len() as f64).ln()).collect()
}

/// Largest deviation between the depth-1 assignment conditional and a flat
/// collapsed DP mixture over `states` random states.
pub fn dp_reduction_max_error(states: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..states {
        let n = rng.random_range(1..=8);
        let dims = rng.random_range(1..=3);
        let c = rng.random_range(0.2..3.0);
        let tau = rng.random_range(0.2..4.0);
        let obs = rng.random_range(0.2..4.0);
        let config = SamplerConfig {
            obs: ObsPrecision::Fixed(obs),
            ..SamplerConfig::with_depth(1)
        };
        let sched = config.schedule(c).unwrap();
        let (tree, z) = ncrp_sample(n, &sched, &mut rng).unwrap();
        let v: Vec<f64> = (0..n * dims)
            .map(|_| 1.5 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let pts = Points::new(v, dims).unwrap();
        let state = SamplerState::from_parts(pts.clone(), tree, z.clone(), c, tau, obs, config).unwrap();
        let alpha = sched.alpha(0).unwrap();
        for i in 0..n {
            let cond = state.z_conditional(i).unwrap();
            let mut clusters = Vec::new();
            for &(o, _) in &cond {
                if let Outcome::Leaf(l) = o {
                    clusters.push(
                        (0..n)
                            .filter(|&j| j != i && z[j] == l)
                            .map(|j| pts.row(j).to_vec())
                            .collect::<Vec<_>>(),
                    );
                }
            }
            let want = flat_dpm_conditional(&clusters, pts.row(i), alpha, tau, obs);
            assert_eq!(cond.len(), want.len());
            // reorder to existing clusters followed by the new one
            let mut got: Vec<f64> = cond
                .iter()
                .filter(|(o, _)| matches!(o, Outcome::Leaf(_)))
                .map(|p| p.1)
                .collect();
            got.push(cond.iter().find(|(o, _)| matches!(o, Outcome::Branch(_))).unwrap().1);
            for (a, b) in got.iter().zip(&want) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}
