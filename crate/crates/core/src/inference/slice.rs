//! Univariate slice sampling with stepping out and shrinkage.

use rand::Rng;

/// One slice-sampling update of `x` under the unnormalized log density
/// `log_f`. `width` is the initial bracket size; at most `max_steps`
/// step-outs are taken. Leaves the target exactly invariant.
pub fn slice_sample<R, F>(x: f64, mut log_f: F, width: f64, max_steps: usize, rng: &mut R) -> f64
where
    R: Rng + ?Sized,
    F: FnMut(f64) -> f64,
{
    let level = log_f(x) + rng.random::<f64>().ln();

    let mut left = x - width * rng.random::<f64>();
    let mut right = left + width;
    let mut j = (max_steps as f64 * rng.random::<f64>()) as usize;
    let mut k = max_steps.saturating_sub(1) - j.min(max_steps.saturating_sub(1));
    while j > 0 && log_f(left) > level {
        left -= width;
        j -= 1;
    }
    while k > 0 && log_f(right) > level {
        right += width;
        k -= 1;
    }

    loop {
        let candidate = left + (right - left) * rng.random::<f64>();
        if log_f(candidate) > level {
            return candidate;
        }
        if candidate < x {
            left = candidate;
        } else {
            right = candidate;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_one_sample, mean};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn standard_normal_is_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x = 3.0;
        let mut xs = Vec::new();
        for i in 0..60_000 {
            x = slice_sample(x, |v| -0.5 * v * v, 1.0, 50, &mut rng);
            if i % 6 == 0 {
                xs.push(x);
            }
        }
        assert!(mean(&xs).abs() < 0.05);
        let n = Normal::new(0.0, 1.0).unwrap();
        let (_, p) = ks_one_sample(&xs, |v| n.cdf(v));
        assert!(p > 1e-3, "p = {p}");
    }

    #[test]
    fn triangle_on_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut x = 0.5;
        let mut total = 0.0;
        let n = 100_000;
        for _ in 0..n {
            x = slice_sample(
                x,
                |v| if (0.0..=1.0).contains(&v) { v.ln() } else { f64::NEG_INFINITY },
                0.5,
                10,
                &mut rng,
            );
            total += x;
        }
        // density 2x on [0,1] has mean 2/3
        assert!((total / n as f64 - 2.0 / 3.0).abs() < 0.01);
    }
}
