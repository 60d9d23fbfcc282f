use serde::{Deserialize, Serialize};

/// Streaming mean/variance with an order-sensitive but deterministic merge.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Accumulator {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Accumulator {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Chan et al. pairwise combination.
    pub fn merge(&mut self, other: &Accumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let mean = if other.mean == self.mean {
            self.mean
        } else {
            self.mean + delta * other.n as f64 / n as f64
        };
        self.m2 += other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64;
        self.mean = mean;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Result of a Monte Carlo estimate.
///
/// `stderr` is the sample standard deviation of the independent samples
/// divided by the square root of their number. With antithetic pairing a
/// sample is the mean of one pair, so there are `n_paths / 2` of them.
/// `elapsed` is wall time and is never serialized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: u64,
    pub seed: u64,
    #[serde(skip)]
    pub elapsed: f64,
}

impl McEstimate {
    pub fn from_accumulator(acc: &Accumulator, paths_per_sample: u64, seed: u64) -> Self {
        McEstimate {
            mean: acc.mean(),
            stderr: acc.stderr(),
            n_paths: acc.count() * paths_per_sample,
            seed,
            elapsed: 0.0,
        }
    }

    pub fn exact(value: f64, n_paths: u64, seed: u64) -> Self {
        McEstimate {
            mean: value,
            stderr: 0.0,
            n_paths,
            seed,
            elapsed: 0.0,
        }
    }

    /// Two-sided normal confidence interval `mean ± z * stderr`.
    pub fn confidence_interval(&self, z: f64) -> (f64, f64) {
        (self.mean - z * self.stderr, self.mean + z * self.stderr)
    }

    pub fn within(&self, target: f64, n_stderr: f64, slack: f64) -> bool {
        (self.mean - target).abs() <= n_stderr * self.stderr + slack
    }
}

/// Least-squares slope of `log(y)` against `log(x)`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len().min(ys.len()) as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
