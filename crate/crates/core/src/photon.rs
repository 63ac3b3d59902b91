//! Detected-photon statistics for cavity fluorescence intervals.
//!
//! Photon arrivals are a homogeneous Poisson process while the probe is on.
//! The dark counts of all detectors are merged into one stream. An adaptive
//! interval polls the accumulated count at every sub-interval boundary and
//! stops as soon as the threshold is reached.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::harness::estimate::{Estimate, Moments};
use crate::register::SiteState;
use crate::stream::{fold_trials, StreamKey};

/// Atom-cavity parameters. Frequencies in MHz, all divided by the same 2π.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CavityParams {
    /// Twice the single-photon coupling, 2g₀.
    pub two_g0_mhz: f64,
    pub kappa_mhz: f64,
    pub gamma_mhz: f64,
    /// Metadata only.
    pub finesse: f64,
    /// Metadata only.
    pub waist_um: f64,
}

impl Default for CavityParams {
    fn default() -> Self {
        Self {
            two_g0_mhz: 1.1,
            kappa_mhz: 0.10,
            gamma_mhz: 6.0,
            finesse: 34_000.0,
            waist_um: 45.0,
        }
    }
}

impl CavityParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("two_g0_mhz", self.two_g0_mhz),
            ("kappa_mhz", self.kappa_mhz),
            ("gamma_mhz", self.gamma_mhz),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.kappa_mhz > 0.0 && self.gamma_mhz > 0.0) {
            return Err(Error::config("kappa_mhz and gamma_mhz must be > 0"));
        }
        Ok(())
    }

    /// η₀ = 4g₀²/(κΓ). The 2π factors cancel.
    pub fn cooperativity(&self) -> f64 {
        let g0 = 0.5 * self.two_g0_mhz;
        4.0 * g0 * g0 / (self.kappa_mhz * self.gamma_mhz)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectorModel {
    /// Dark counts per second, per detector.
    pub dark_rate_per_s: f64,
    pub n_detectors: u32,
    /// Total detection efficiency. Metadata: already folded into the bright mean.
    pub quantum_efficiency: f64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self { dark_rate_per_s: 60.0, n_detectors: 2, quantum_efficiency: 0.27 }
    }
}

impl DetectorModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.dark_rate_per_s >= 0.0) || !self.dark_rate_per_s.is_finite() {
            return Err(Error::config(format!(
                "dark_rate_per_s must be >= 0, got {}",
                self.dark_rate_per_s
            )));
        }
        if !(self.quantum_efficiency > 0.0 && self.quantum_efficiency <= 1.0) {
            return Err(Error::config(format!(
                "quantum_efficiency must lie in (0, 1], got {}",
                self.quantum_efficiency
            )));
        }
        Ok(())
    }

    /// Mean dark counts over `duration_us`, summed over detectors.
    pub fn dark_mean(&self, duration_us: f64) -> f64 {
        self.n_detectors as f64 * self.dark_rate_per_s * duration_us * 1e-6
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhotonModel {
    /// Mean detected signal photons from a bright atom over a full interval,
    /// excluding dark counts.
    pub bright_mean_full: f64,
    pub full_interval_us: f64,
    pub sub_interval_us: f64,
    /// Bright iff counts ≥ threshold.
    pub threshold: u32,
    pub detector: DetectorModel,
}

impl Default for PhotonModel {
    fn default() -> Self {
        Self {
            bright_mean_full: 15.0,
            full_interval_us: 200.0,
            sub_interval_us: 20.0,
            threshold: 2,
            detector: DetectorModel::default(),
        }
    }
}

/// What the probe sees at a site during an interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Emitter {
    Bright,
    /// Dark atom or empty tweezer: dark counts only.
    Dark,
}

impl From<SiteState> for Emitter {
    fn from(s: SiteState) -> Self {
        if s.is_bright() {
            Emitter::Bright
        } else {
            Emitter::Dark
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Classification {
    Bright,
    Dark,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntervalOutcome {
    pub counts: u32,
    /// Time the probe was actually on, µs.
    pub duration_us: f64,
    pub classification: Classification,
}

impl IntervalOutcome {
    pub fn is_bright(&self) -> bool {
        self.classification == Classification::Bright
    }
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    // Means here are bounded by configuration, never near the u32 range.
    Poisson::new(mean).expect("finite positive mean").sample(rng) as u32
}

impl PhotonModel {
    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        if !(self.bright_mean_full > 0.0) || !self.bright_mean_full.is_finite() {
            return Err(Error::config(format!(
                "bright_mean_full must be > 0, got {}",
                self.bright_mean_full
            )));
        }
        if self.threshold < 1 {
            return Err(Error::config("threshold must be >= 1"));
        }
        if !(self.sub_interval_us > 0.0) || !(self.full_interval_us > 0.0) {
            return Err(Error::config("interval durations must be > 0"));
        }
        let ratio = self.full_interval_us / self.sub_interval_us;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) || ratio.round() < 1.0 {
            return Err(Error::config(format!(
                "full interval ({} us) must be an integer multiple of the sub-interval ({} us)",
                self.full_interval_us, self.sub_interval_us
            )));
        }
        Ok(())
    }

    pub fn n_sub_intervals(&self) -> u32 {
        (self.full_interval_us / self.sub_interval_us).round() as u32
    }

    /// Mean counts over `duration_us` of probing.
    pub fn mean_counts(&self, emitter: Emitter, duration_us: f64) -> f64 {
        let dark = self.detector.dark_mean(duration_us);
        match emitter {
            Emitter::Bright => self.bright_mean_full * duration_us / self.full_interval_us + dark,
            Emitter::Dark => dark,
        }
    }

    /// Per-sub-interval mean, λ_sub.
    pub fn sub_interval_mean(&self, emitter: Emitter) -> f64 {
        self.mean_counts(emitter, self.sub_interval_us)
    }

    pub fn classify(&self, counts: u32) -> Classification {
        if counts >= self.threshold {
            Classification::Bright
        } else {
            Classification::Dark
        }
    }

    pub fn sample_full_interval<R: Rng + ?Sized>(&self, emitter: Emitter, rng: &mut R) -> IntervalOutcome {
        let counts = poisson(self.mean_counts(emitter, self.full_interval_us), rng);
        IntervalOutcome {
            counts,
            duration_us: self.full_interval_us,
            classification: self.classify(counts),
        }
    }

    /// Polls every sub-interval and stops after the first one whose
    /// cumulative count reaches the threshold.
    pub fn sample_adaptive_interval<R: Rng + ?Sized>(&self, emitter: Emitter, rng: &mut R) -> IntervalOutcome {
        let lambda = self.sub_interval_mean(emitter);
        let n_sub = self.n_sub_intervals();
        let mut counts = 0u32;
        let mut checks = 0u32;
        while checks < n_sub {
            counts += poisson(lambda, rng);
            checks += 1;
            if counts >= self.threshold {
                break;
            }
        }
        IntervalOutcome {
            counts,
            duration_us: checks as f64 * self.sub_interval_us,
            classification: self.classify(counts),
        }
    }

    pub fn sample_interval<R: Rng + ?Sized>(&self, emitter: Emitter, adaptive: bool, rng: &mut R) -> IntervalOutcome {
        if adaptive {
            self.sample_adaptive_interval(emitter, rng)
        } else {
            self.sample_full_interval(emitter, rng)
        }
    }
}

/// Monte-Carlo summary of adaptive termination for a bright atom.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReductionFactors {
    /// `bright_mean_full / mean adaptive counts`.
    pub photon_factor: Estimate,
    /// `full_interval / mean adaptive duration`.
    pub duration_factor: Estimate,
    pub adaptive_counts: Estimate,
    /// Mean number of sub-intervals probed (the stopping index).
    pub stop_index: Estimate,
}

/// Ratio estimate `numerator / denominator.mean` with delta-method error.
fn ratio(numerator: f64, denominator: Estimate) -> Estimate {
    let mean = numerator / denominator.mean;
    Estimate {
        mean,
        stderr: numerator * denominator.stderr / (denominator.mean * denominator.mean),
        n: denominator.n,
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct AdaptiveAcc {
    counts: Moments,
    stops: Moments,
    wald: Moments,
}

/// Adaptive-termination statistics plus the per-trial Wald residual
/// `counts − λ_sub·stop_index`, whose mean is zero in expectation.
pub fn adaptive_reduction(model: &PhotonModel, n_trials: u64, key: StreamKey) -> Result<(ReductionFactors, Estimate)> {
    model.validate()?;
    if n_trials < 10_000 {
        return Err(Error::config(format!("n_trials must be >= 10000, got {n_trials}")));
    }
    let lambda = model.sub_interval_mean(Emitter::Bright);
    let acc = fold_trials(
        key,
        n_trials,
        AdaptiveAcc::default,
        |acc, rng, _| {
            let out = model.sample_adaptive_interval(Emitter::Bright, rng);
            let stop = out.duration_us / model.sub_interval_us;
            acc.counts.push(out.counts as f64);
            acc.stops.push(stop);
            acc.wald.push(out.counts as f64 - lambda * stop);
        },
        |a, b| {
            a.counts.merge(b.counts);
            a.stops.merge(b.stops);
            a.wald.merge(b.wald);
        },
    );
    let counts = acc.counts.estimate();
    let stops = acc.stops.estimate();
    let durations = Estimate {
        mean: stops.mean * model.sub_interval_us,
        stderr: stops.stderr * model.sub_interval_us,
        n: stops.n,
    };
    Ok((
        ReductionFactors {
            photon_factor: ratio(model.bright_mean_full, counts),
            duration_factor: ratio(model.full_interval_us, durations),
            adaptive_counts: counts,
            stop_index: stops,
        },
        acc.wald.estimate(),
    ))
}

/// Photon reduction factor and duration reduction factor of adaptive
/// termination relative to a full interval, with standard errors.
pub fn adaptive_reduction_factors(model: &PhotonModel, n_trials: u64, key: StreamKey) -> Result<ReductionFactors> {
    adaptive_reduction(model, n_trials, key).map(|(f, _)| f)
}

/// Histogram condition labels used in CSV export.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HistogramCondition {
    BrightFull,
    BrightAdaptive,
    DarkFull,
}

impl HistogramCondition {
    pub const ALL: [HistogramCondition; 3] =
        [HistogramCondition::BrightFull, HistogramCondition::BrightAdaptive, HistogramCondition::DarkFull];

    pub fn label(self) -> &'static str {
        match self {
            HistogramCondition::BrightFull => "bright_full",
            HistogramCondition::BrightAdaptive => "bright_adaptive",
            HistogramCondition::DarkFull => "dark_full",
        }
    }
}

/// Relative frequencies of detected counts `0..bins.len()` per condition;
/// the last bin absorbs everything above it.
pub fn count_histogram(
    model: &PhotonModel,
    condition: HistogramCondition,
    n_bins: usize,
    n_trials: u64,
    key: StreamKey,
) -> Result<Vec<f64>> {
    model.validate()?;
    if n_bins == 0 {
        return Err(Error::config("histogram needs at least one bin"));
    }
    let tally = fold_trials(
        key,
        n_trials,
        || vec![0u64; n_bins],
        |bins, rng, _| {
            let out = match condition {
                HistogramCondition::BrightFull => model.sample_full_interval(Emitter::Bright, rng),
                HistogramCondition::BrightAdaptive => model.sample_adaptive_interval(Emitter::Bright, rng),
                HistogramCondition::DarkFull => model.sample_full_interval(Emitter::Dark, rng),
            };
            bins[(out.counts as usize).min(n_bins - 1)] += 1;
        },
        |a, b| a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
    );
    Ok(tally.into_iter().map(|c| c as f64 / n_trials as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> crate::stream::TrialRng {
        StreamKey::new(3, 0).trial_rng(0)
    }

    #[test]
    fn cooperativity_values() {
        let c = CavityParams::default();
        assert!((c.cooperativity() - 1.21 / 0.6).abs() < 1e-12);
        let zero = CavityParams { two_g0_mhz: 0.0, ..c };
        assert_eq!(zero.cooperativity(), 0.0);
        let doubled = CavityParams { two_g0_mhz: 2.2, ..c };
        assert!((doubled.cooperativity() / c.cooperativity() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn interval_means() {
        let m = PhotonModel::default();
        assert!((m.mean_counts(Emitter::Dark, 200.0) - 0.024).abs() < 1e-15);
        assert!((m.mean_counts(Emitter::Bright, 200.0) - 15.024).abs() < 1e-12);
        assert_eq!(Emitter::from(SiteState::Vacant), Emitter::Dark);
        assert_eq!(Emitter::from(SiteState::F1), Emitter::Dark);
        assert_eq!(Emitter::from(SiteState::F2), Emitter::Bright);
        assert_eq!(m.n_sub_intervals(), 10);
    }

    #[test]
    fn model_validation() {
        let m = PhotonModel::default();
        assert!(m.validate().is_ok());
        assert!(PhotonModel { sub_interval_us: 30.0, ..m }.validate().is_err());
        assert!(PhotonModel { threshold: 0, ..m }.validate().is_err());
        assert!(PhotonModel { bright_mean_full: 0.0, ..m }.validate().is_err());
        let bad_qe = DetectorModel { quantum_efficiency: 1.5, ..m.detector };
        assert!(PhotonModel { detector: bad_qe, ..m }.validate().is_err());
    }

    #[test]
    fn threshold_one_immediate_stop() {
        // Huge bright rate: the first sub-interval always crosses threshold 1.
        let m = PhotonModel { threshold: 1, bright_mean_full: 1e4, ..PhotonModel::default() };
        let out = m.sample_adaptive_interval(Emitter::Bright, &mut rng());
        assert_eq!(out.duration_us, 20.0);
        assert!(out.counts >= 1);
        assert_eq!(out.classification, Classification::Bright);
    }

    #[test]
    fn classification_matches_threshold() {
        let m = PhotonModel::default();
        let mut r = rng();
        for i in 0..5_000 {
            let e = if i % 2 == 0 { Emitter::Bright } else { Emitter::Dark };
            for out in [m.sample_full_interval(e, &mut r), m.sample_adaptive_interval(e, &mut r)] {
                assert_eq!(out.is_bright(), out.counts >= m.threshold);
                assert!(out.duration_us > 0.0 && out.duration_us <= m.full_interval_us);
            }
        }
    }

    #[test]
    fn dark_atom_runs_full_length() {
        // P(Poisson(0.024) < 2) = e^(-0.024)(1.024) ≈ 0.99972.
        let m = PhotonModel::default();
        let key = StreamKey::new(8, 0);
        let n = 100_000u64;
        let full = fold_trials(
            key,
            n,
            || 0u64,
            |acc, rng, _| {
                let out = m.sample_adaptive_interval(Emitter::Dark, rng);
                *acc += (out.duration_us == 200.0 && !out.is_bright()) as u64;
            },
            |a, b| *a += b,
        );
        let p = (-0.024f64).exp() * 1.024;
        let est = Estimate::binomial(full, n);
        assert!(est.agrees_with(p, 4.0), "{est:?} vs {p}");
    }

    #[test]
    fn single_check_means_no_reduction() {
        let m = PhotonModel { sub_interval_us: 200.0, ..PhotonModel::default() };
        let f = adaptive_reduction_factors(&m, 10_000, StreamKey::new(1, 1)).unwrap();
        assert_eq!(f.duration_factor.mean, 1.0);
        // Without early stopping the adaptive count is the full-interval count.
        assert!(f.photon_factor.agrees_with(15.0 / 15.024, 4.0));
    }

    #[test]
    fn unreachable_threshold_means_no_reduction() {
        let m = PhotonModel { threshold: 200, ..PhotonModel::default() };
        let f = adaptive_reduction_factors(&m, 10_000, StreamKey::new(1, 2)).unwrap();
        assert_eq!(f.duration_factor.mean, 1.0);
        assert!((f.photon_factor.mean - 1.0).abs() < 0.01);
    }

    #[test]
    fn reduction_requires_enough_trials() {
        assert!(adaptive_reduction_factors(&PhotonModel::default(), 10, StreamKey::new(0, 0)).is_err());
    }

    #[test]
    fn adaptive_counts_have_no_mass_below_threshold_once_stopped() {
        let m = PhotonModel::default();
        let h = count_histogram(&m, HistogramCondition::BrightAdaptive, 30, 100_000, StreamKey::new(4, 0)).unwrap();
        let mode = h
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        assert_eq!(mode, m.threshold as usize);
        // Counts of 1 only occur when the interval ran out without stopping.
        let p_no_stop = (-15.024f64).exp() * (1.0 + 15.024);
        assert!(h[1] < p_no_stop * 20.0 + 1e-4);
    }
}
