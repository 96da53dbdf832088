use super::*;
use crate::diffusion::{marginal_data_loglik, DiffusionParams};
use crate::stats::{batch_means_se, ks_one_sample, log_sum_exp, mean};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Gamma as GammaDist};

fn blobs(rng: &mut ChaCha8Rng, n: usize, centers: &[f64], sd: f64) -> Points {
    let v: Vec<f64> = (0..n)
        .map(|i| centers[i % centers.len()] + sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Points::new(v, 1).unwrap()
}

#[test]
fn single_datum_is_a_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pts = Points::new(vec![0.3, -1.0], 2).unwrap();
    let mut state = SamplerState::init(pts, SamplerConfig::with_depth(3), &mut rng).unwrap();
    assert_eq!(state.tree().len(), 4);
    assert_eq!(state.tree().leaves(), vec![state.assignments()[0]]);
    for _ in 0..20 {
        state.gibbs_sweep(&mut rng).unwrap();
        assert_eq!(state.tree().len(), 4);
    }
    state.validate().unwrap();
}

#[test]
fn empty_data_and_bad_config_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    assert!(matches!(
        SamplerState::init(Points::empty(1), SamplerConfig::default(), &mut rng),
        Err(Error::EmptyData)
    ));
    let pts = Points::new(vec![1.0], 1).unwrap();
    let mut cfg = SamplerConfig::with_depth(2);
    cfg.hyper.b_tau = 0.0;
    assert!(SamplerState::init(pts.clone(), cfg, &mut rng).is_err());
    let cfg = SamplerConfig {
        horizon: Some(2),
        ..SamplerConfig::with_depth(2)
    };
    assert!(matches!(
        SamplerState::init(pts, cfg, &mut rng),
        Err(Error::Singularity { .. })
    ));
}

#[test]
fn seeded_runs_are_identical() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = blobs(&mut rng, 30, &[-3.0, 0.0, 4.0], 0.5);
        let mut state = SamplerState::init(pts, SamplerConfig::with_depth(3), &mut rng).unwrap();
        let trace = run_chain(&mut state, 15, &mut rng).unwrap();
        (trace, state.assignments().to_vec(), state.tree().clone())
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
    assert!(a.0.iter().all(|r| r.log_joint.is_finite()));
}

#[test]
fn separated_blobs_open_several_leaves() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pts = blobs(&mut rng, 100, &[-20.0, 20.0], 1.0);
    let state = SamplerState::init(pts, SamplerConfig::with_depth(1), &mut rng).unwrap();
    assert!(state.tree().leaves().len() >= 2);
    state.validate().unwrap();
}

#[test]
fn conditional_weights_are_normalizable() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for depth in 1..=4 {
        let pts = blobs(&mut rng, 25, &[-5.0, 0.0, 5.0], 1.0);
        let mut state = SamplerState::init(pts, SamplerConfig::with_depth(depth), &mut rng).unwrap();
        run_chain(&mut state, 3, &mut rng).unwrap();
        for i in 0..25 {
            let probs = state.z_conditional(i).unwrap();
            assert!(probs.iter().all(|p| p.1.is_finite() && p.1 >= 0.0));
            assert!((probs.iter().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn detach_then_reattach_restores_the_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pts = blobs(&mut rng, 40, &[-4.0, 4.0], 1.0);
    let mut state = SamplerState::init(pts, SamplerConfig::with_depth(3), &mut rng).unwrap();
    run_chain(&mut state, 2, &mut rng).unwrap();
    let mut singleton_seen = false;
    for i in 0..40 {
        let tree_before = state.tree().clone();
        let ll_before = state.log_joint().unwrap();
        let outcome = state.detach(i).unwrap();
        singleton_seen |= matches!(outcome, Outcome::Branch(_));
        state.attach(i, outcome).unwrap();
        if let Outcome::Leaf(_) = outcome {
            assert_eq!(state.tree(), &tree_before);
        }
        assert!(state.tree().same_shape(&tree_before));
        assert!((state.log_joint().unwrap() - ll_before).abs() < 1e-9);
        state.validate().unwrap();
    }
    let _ = singleton_seen;
}

#[test]
fn tau_conditional_algebra() {
    let hyper = Hyperpriors::default();
    let none = Residuals::default();
    assert_eq!(
        tau_conditional(&none, &hyper, ObsPrecision::Shared, TauUpdate::Conjugate),
        GammaPosterior { shape: 1.0, rate: 1.0 }
    );
    let two_edges = Residuals {
        edge_ss: 2.0,
        param_terms: 2,
        ..Residuals::default()
    };
    let post = tau_conditional(&two_edges, &hyper, ObsPrecision::Shared, TauUpdate::Conjugate);
    assert_eq!(post, GammaPosterior { shape: 2.0, rate: 2.0 });
    assert_eq!(post.mean(), 1.0);
    let lit = tau_conditional(&two_edges, &hyper, ObsPrecision::Shared, TauUpdate::Literal);
    assert_eq!(lit, GammaPosterior { shape: 1.0, rate: 2.0 });
    let with_data = Residuals {
        data_ss: 4.0,
        data_terms: 4,
        ..two_edges
    };
    let shared = tau_conditional(&with_data, &hyper, ObsPrecision::Shared, TauUpdate::Conjugate);
    assert_eq!(shared, GammaPosterior { shape: 4.0, rate: 4.0 });
    let separate = tau_conditional(&with_data, &hyper, ObsPrecision::Sampled, TauUpdate::Conjugate);
    assert_eq!(separate, post);
    assert_eq!(obs_conditional(&with_data, &hyper), GammaPosterior { shape: 3.0, rate: 3.0 });
}

#[test]
fn residuals_include_root_edges_and_data() {
    let mut tree = TreeArena::new(1).unwrap();
    let leaf = tree.attach_leaf(tree.root(), true).unwrap();
    tree.set_phi(tree.root(), vec![1.0, 2.0]);
    tree.set_phi(leaf, vec![2.0, 0.0]);
    let pts = Points::new(vec![2.0, 3.0], 2).unwrap();
    let r = Residuals::new(&tree, &pts, &[leaf]).unwrap();
    assert_eq!(r.root_ss, 5.0);
    assert_eq!(r.edge_ss, 5.0);
    assert_eq!(r.param_terms, 4);
    assert_eq!(r.data_ss, 9.0);
    assert_eq!(r.data_terms, 2);
    tree.clear_phis();
    assert!(matches!(Residuals::new(&tree, &pts, &[leaf]), Err(Error::MissingPhi(_))));
}

#[test]
fn sample_tau_matches_closed_form_gamma() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pts = blobs(&mut rng, 12, &[-2.0, 2.0], 0.7);
    let mut state = SamplerState::init(pts, SamplerConfig::with_depth(2), &mut rng).unwrap();
    state.sample_phi(&mut rng);
    let res = Residuals::new(state.tree(), state.points(), state.assignments()).unwrap();
    let post = tau_conditional(&res, &state.config().hyper, ObsPrecision::Shared, TauUpdate::Conjugate);
    let draws: Vec<f64> = (0..100_000)
        .map(|_| {
            state.sample_tau(&mut rng).unwrap();
            state.tau()
        })
        .collect();
    let g = GammaDist::new(post.shape, post.rate).unwrap();
    let (_, p) = ks_one_sample(&draws, |x| g.cdf(x));
    assert!(p > 1e-3, "p = {p}");
}

fn root_only_state(config: SamplerConfig) -> SamplerState {
    let tree = TreeArena::new(config.depth).unwrap();
    SamplerState::from_parts(Points::empty(1), tree, Vec::new(), 1.0, 1.0, 1.0, config).unwrap()
}

#[test]
fn c_without_data_follows_the_prior() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut state = root_only_state(SamplerConfig::with_depth(2));
    let draws: Vec<f64> = (0..100_000)
        .map(|_| {
            state.sample_c(&mut rng).unwrap();
            state.c()
        })
        .collect();
    let se = batch_means_se(&draws, 50);
    assert!((mean(&draws) - 1.0).abs() < 4.0 * se, "{} ± {se}", mean(&draws));
}

#[test]
fn concentrated_hyperprior_pins_c() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut cfg = SamplerConfig::with_depth(2);
    cfg.hyper.a_c = 1e6;
    cfg.hyper.b_c = 2e6;
    let pts = blobs(&mut rng, 20, &[0.0, 6.0], 1.0);
    let mut state = SamplerState::init(pts, cfg, &mut rng).unwrap();
    for _ in 0..20 {
        state.gibbs_sweep(&mut rng).unwrap();
        assert!((state.c() - 0.5).abs() < 0.01, "c = {}", state.c());
    }
}

#[test]
fn c_conditional_matches_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    // every internal node has exactly one child
    let mut tree = TreeArena::new(3).unwrap();
    let leaf = tree.attach_leaf(tree.root(), true).unwrap();
    let n = 6;
    for _ in 1..n {
        tree.attach_leaf(leaf, false).unwrap();
    }
    let pts = Points::new(vec![0.0; n], 1).unwrap();
    let mut state =
        SamplerState::from_parts(pts, tree, vec![leaf; n], 1.0, 1.0, 1.0, SamplerConfig::with_depth(3)).unwrap();

    // grid over u = ln c
    let (lo, hi, bins) = (-8.0, 4.0, 60);
    let width = (hi - lo) / bins as f64;
    let fine = 200;
    let mut mass = vec![0.0; bins];
    for (b, m) in mass.iter_mut().enumerate() {
        let h = width / fine as f64;
        for j in 0..fine {
            let u = lo + b as f64 * width + (j as f64 + 0.5) * h;
            *m += state.log_c_density(u).exp() * h;
        }
    }
    let total: f64 = mass.iter().sum();
    mass.iter_mut().for_each(|m| *m /= total);

    let draws = 200_000;
    let mut hist = vec![0.0; bins];
    let mut outside = 0.0;
    for _ in 0..draws {
        state.sample_c(&mut rng).unwrap();
        let u = state.c().ln();
        let b = ((u - lo) / width).floor();
        if (0.0..bins as f64).contains(&b) {
            hist[b as usize] += 1.0 / draws as f64;
        } else {
            outside += 1.0 / draws as f64;
        }
    }
    let tv = 0.5 * (hist.iter().zip(&mass).map(|(a, b)| (a - b).abs()).sum::<f64>() + outside);
    assert!(tv < 0.02, "total variation {tv}");
    // the structure pulls c below its prior mean
    let post_mean: f64 = mass
        .iter()
        .enumerate()
        .map(|(b, m)| m * (lo + (b as f64 + 0.5) * width).exp())
        .sum();
    assert!(post_mean < 1.0);
}

#[test]
fn identical_points_share_a_leaf() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = SamplerConfig {
        fixed_c: Some(1.0),
        fixed_tau: Some(100.0),
        ..SamplerConfig::with_depth(1)
    };
    let pts = Points::new(vec![2.0, 2.0], 1).unwrap();
    let mut state = SamplerState::init(pts.clone(), cfg, &mut rng).unwrap();

    // exact posterior by enumerating the two partitions
    let alpha = cfg.schedule(1.0).unwrap().alpha(0).unwrap();
    let params = DiffusionParams::shared(100.0, 1).unwrap();
    let mut together = TreeArena::new(1).unwrap();
    let l = together.attach_leaf(together.root(), true).unwrap();
    together.attach_leaf(l, false).unwrap();
    let mut apart = TreeArena::new(1).unwrap();
    let a = apart.attach_leaf(apart.root(), true).unwrap();
    let b = apart.attach_leaf(apart.root(), true).unwrap();
    let lt = (1.0 / (1.0 + alpha)).ln() + marginal_data_loglik(&together, &pts, &[l, l], &params).unwrap();
    let la = (alpha / (1.0 + alpha)).ln() + marginal_data_loglik(&apart, &pts, &[a, b], &params).unwrap();
    let exact = (lt - log_sum_exp(&[lt, la])).exp();
    assert!(exact > 0.9);

    let sweeps = 20_000;
    let mut shared = 0;
    for s in 0..sweeps + 100 {
        state.gibbs_sweep(&mut rng).unwrap();
        if s >= 100 && state.tree().leaves().len() == 1 {
            shared += 1;
        }
    }
    let freq = shared as f64 / sweeps as f64;
    assert!(freq > 0.9, "{freq}");
    assert!((freq - exact).abs() < 0.02, "{freq} vs {exact}");
}

#[test]
fn empty_state_predicts_the_prior() {
    let mut state = root_only_state(SamplerConfig {
        fixed_tau: Some(2.0),
        ..SamplerConfig::with_depth(3)
    });
    state.set_precisions(2.0, 2.0).unwrap();
    let snap = state.snapshot().unwrap();
    let y = 0.7;
    let var = 5.0 / 2.0;
    let want = -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + y * y / var);
    let got = heldout_predictive(std::slice::from_ref(&snap), &[y]).unwrap();
    assert!((got - want).abs() < 1e-12);
    assert!(matches!(heldout_predictive(&[], &[y]), Err(Error::NoStates)));
}

#[test]
fn predictive_density_integrates_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let pts = blobs(&mut rng, 30, &[-3.0, 3.0], 0.8);
    let mut state = SamplerState::init(pts, SamplerConfig::with_depth(3), &mut rng).unwrap();
    let mut snaps = Vec::new();
    for _ in 0..5 {
        state.gibbs_sweep(&mut rng).unwrap();
        snaps.push(state.snapshot().unwrap());
    }
    let (lo, hi, m) = (-60.0, 60.0, 60_000);
    let h = (hi - lo) / m as f64;
    let total: f64 = (0..m)
        .map(|j| heldout_predictive(&snaps, &[lo + (j as f64 + 0.5) * h]).unwrap().exp() * h)
        .sum();
    assert!((total - 1.0).abs() < 1e-3, "{total}");

    let y = [0.4];
    let base = heldout_predictive(&snaps, &y).unwrap();
    let mut doubled = snaps.clone();
    doubled.extend(snaps.iter().cloned());
    assert!((heldout_predictive(&doubled, &y).unwrap() - base).abs() < 1e-12);
}

#[test]
fn geweke_rejects_degenerate_config() {
    let cfg = GewekeConfig {
        n: 0,
        ..GewekeConfig::default()
    };
    assert!(matches!(geweke_test(&cfg), Err(Error::EmptyData)));
}

#[test]
fn geweke_detects_a_halved_rate() {
    let cfg = GewekeConfig {
        samples: 5_000,
        burn_in: 200,
        tau_update: TauUpdate::HalvedRate,
        seed: 13,
        ..GewekeConfig::default()
    };
    let report = geweke_test(&cfg).unwrap();
    assert!(report.max_abs_z() > 10.0, "{report}");
}
