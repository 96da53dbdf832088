mod common;

use common::flat_dpm_heldout;
use dfp::eval::{eval_protocol, holdout_split, RunConfig};
use dfp::inference::{ObsPrecision, SamplerConfig};
use dfp::points::Points;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[test]
fn depth_one_protocol_matches_a_flat_dp_mixture() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let centers = [-4.0, 0.5, 5.0];
    let v: Vec<f64> = (0..60)
        .map(|i| centers[i % 3] + 0.8 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let pts = Points::new(v, 1).unwrap();
    let c = 1.0 / std::f64::consts::LN_2;
    let (tau, obs) = (0.3, 1.5);
    let cfg = RunConfig {
        sampler: SamplerConfig {
            fixed_c: Some(c),
            fixed_tau: Some(tau),
            obs: ObsPrecision::Fixed(obs),
            ..SamplerConfig::with_depth(1)
        },
        sweeps: 4000,
        burn_in: 200,
        thin: 1,
        seed: 5,
        holdout_fraction: 0.2,
        chains: 1,
    };
    let report = eval_protocol(&pts, &cfg).unwrap();
    let (train, test) = holdout_split(60, 0.2, 5).unwrap();
    let rows = |idx: &[usize]| idx.iter().map(|&i| pts.row(i).to_vec()).collect::<Vec<_>>();
    let flat = flat_dpm_heldout(&rows(&train), &rows(&test), 1.0, tau, obs, 4000, 200, 6);
    for (a, b) in report.per_point.iter().zip(&flat) {
        assert!((a - b).abs() < 0.02, "{a} vs {b}");
    }
}
