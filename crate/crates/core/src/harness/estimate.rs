/// A Monte-Carlo point estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    /// Sample standard deviation over √n. `NaN` when `n < 2`.
    pub stderr: f64,
    pub n: u64,
}

impl Estimate {
    /// Proportion estimate with the binomial standard error √(p(1−p)/n).
    pub fn binomial(successes: u64, n: u64) -> Self {
        if n == 0 {
            return Self { mean: f64::NAN, stderr: f64::NAN, n };
        }
        let p = successes as f64 / n as f64;
        let stderr = if n >= 2 { (p * (1.0 - p) / n as f64).sqrt() } else { f64::NAN };
        Self { mean: p, stderr, n }
    }

    pub fn from_samples(xs: &[f64]) -> Self {
        let mut m = Moments::default();
        xs.iter().for_each(|&x| m.push(x));
        m.estimate()
    }

    /// `|mean − value| ≤ k·stderr`. A zero stderr demands exact agreement.
    pub fn agrees_with(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.stderr
    }

    /// Relative standard error; infinite for a zero mean.
    pub fn relative_stderr(&self) -> f64 {
        if self.mean == 0.0 {
            f64::INFINITY
        } else {
            (self.stderr / self.mean).abs()
        }
    }
}

/// Streaming mean/variance (Welford), mergeable in a fixed order.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n as f64;
        self.m2 += other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.mean
        }
    }

    pub fn estimate(&self) -> Estimate {
        let stderr = if self.n >= 2 {
            (self.m2 / (self.n - 1) as f64).sqrt() / (self.n as f64).sqrt()
        } else {
            f64::NAN
        };
        Estimate { mean: self.mean(), stderr, n: self.n }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_stderr() {
        let e = Estimate::binomial(25, 100);
        assert_eq!(e.mean, 0.25);
        assert!((e.stderr - (0.25f64 * 0.75 / 100.0).sqrt()).abs() < 1e-15);
        assert!(Estimate::binomial(1, 1).stderr.is_nan());
    }

    #[test]
    fn moments_match_two_pass_and_merge() {
        let xs: Vec<f64> = (0..101).map(|i| ((i * 37) % 17) as f64 * 0.3).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        let e = Estimate::from_samples(&xs);
        assert!((e.mean - mean).abs() < 1e-12);
        assert!((e.stderr - (var / xs.len() as f64).sqrt()).abs() < 1e-12);

        let (a, b) = xs.split_at(40);
        let mut ma = Moments::default();
        a.iter().for_each(|&x| ma.push(x));
        let mut mb = Moments::default();
        b.iter().for_each(|&x| mb.push(x));
        ma.merge(mb);
        let m = ma.estimate();
        assert!((m.mean - e.mean).abs() < 1e-12 && (m.stderr - e.stderr).abs() < 1e-12);
    }

    #[test]
    fn constant_samples_have_zero_stderr() {
        let e = Estimate::from_samples(&[1.0; 50]);
        assert_eq!(e.stderr, 0.0);
        assert!(e.agrees_with(1.0, 3.0));
        assert!(!e.agrees_with(1.0 + 1e-12, 3.0));
    }
}
