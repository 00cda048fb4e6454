use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};

pub const THREADS_ENV: &str = "CORC_THREADS";

/// Independent stream for trial `index`: seed `base ^ index`.
pub fn trial_rng(base: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(base ^ index)
}

/// Sample mean and its standard error.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Sample standard deviation; zero for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    let (_, se) = mean_and_se(xs);
    if xs.len() < 2 {
        0.0
    } else {
        se * (xs.len() as f64).sqrt()
    }
}

/// Standard deviation of `stat` over `resamples` bootstrap resamples.
pub fn bootstrap_se<F>(xs: &[f64], stat: F, resamples: usize, seed: u64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if xs.is_empty() || resamples < 2 {
        return Err(invalid("bootstrap needs samples and at least two resamples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = vec![0.0; xs.len()];
    let mut values = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        for b in buf.iter_mut() {
            *b = xs[rng.random_range(0..xs.len())];
        }
        values.push(stat(&buf)?);
    }
    Ok(std_dev(&values))
}

/// One-sided `P(X >= wins)` for `X ~ Binomial(n, 1/2)`.
pub fn sign_test_p(wins: usize, n: usize) -> f64 {
    let mut choose = 1.0f64;
    let mut tail = 0.0;
    for k in 0..=n {
        if k > 0 {
            choose = choose * (n - k + 1) as f64 / k as f64;
        }
        if k >= wins {
            tail += choose;
        }
    }
    tail / 2f64.powi(n as i32)
}

/// Runs `f` on a pool sized by `CORC_THREADS` when set, else on the global pool.
pub fn with_thread_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v.trim().parse().map_err(|_| invalid(format!("{THREADS_ENV}={v:?} is not a count")))?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| invalid(e.to_string()))?;
            Ok(pool.install(f))
        }
        Err(_) => Ok(f()),
    }
}
