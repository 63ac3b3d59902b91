//! Repeated rounds of classical repetition-code error correction on an
//! atomic register that loses atoms and is never replenished.
//!
//! Each round every surviving code atom accumulates errors, all survivors are
//! read out, the majority of the surviving votes decides the logical bit (a
//! fair coin breaks ties and the empty register), and every survivor is
//! re-pumped to the decided state.

use rand::Rng;

use crate::error::{Error, Result};
use crate::harness::estimate::{Estimate, Moments};
use crate::harness::fit::{
    fit_power_law, fit_saturating_exponential, fit_saturating_exponential_fixed, PowerLawFit, SaturatingFit,
};
use crate::readout::ArrayReadout;
use crate::register::{HyperfineState, IdleErrorModel, Register, SiteState, DEFAULT_SPACING_UM};
use crate::stream::{fold_trials, StreamKey};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CodeConfig {
    /// Odd code distance d.
    pub distance: usize,
    pub rounds: usize,
    pub idle_ms: f64,
    /// Abstract mode: per-round flip probability of each surviving atom.
    pub per_round_flip: f64,
    /// Abstract mode: per-round loss probability of each surviving atom.
    pub per_round_loss: f64,
    /// Readout time added to the wall clock of every round.
    pub round_overhead_ms: f64,
}

impl Default for CodeConfig {
    fn default() -> Self {
        Self {
            distance: 3,
            rounds: 17,
            idle_ms: 20.0,
            per_round_flip: 0.09,
            per_round_loss: 0.037,
            // Five sites, two 200 µs intervals each.
            round_overhead_ms: 2.0,
        }
    }
}

impl CodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.distance == 0 || self.distance.is_multiple_of(2) {
            return Err(Error::config(format!("code distance must be odd and >= 1, got {}", self.distance)));
        }
        if self.rounds == 0 {
            return Err(Error::config("at least one round is required"));
        }
        for (name, p) in [("per_round_flip", self.per_round_flip), ("per_round_loss", self.per_round_loss)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if !(self.idle_ms >= 0.0) || !(self.round_overhead_ms >= 0.0) {
            return Err(Error::config("idle and overhead times must be >= 0"));
        }
        Ok(())
    }

    pub fn round_period_ms(&self) -> f64 {
        self.idle_ms + self.round_overhead_ms
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Vote {
    F1,
    F2,
    Lost,
}

impl From<SiteState> for Vote {
    fn from(s: SiteState) -> Self {
        match s {
            SiteState::Vacant => Vote::Lost,
            SiteState::Occupied(HyperfineState::F1) => Vote::F1,
            SiteState::Occupied(HyperfineState::F2) => Vote::F2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VoteOutcome {
    Zero,
    One,
    CoinToss,
}

/// Majority of the non-lost votes; ties and zero survivors go to a fair coin.
/// Returns the outcome kind and the decided bit.
pub fn majority_vote<R: Rng + ?Sized>(votes: &[Vote], rng: &mut R) -> (VoteOutcome, bool) {
    let ones = votes.iter().filter(|v| **v == Vote::F2).count();
    let zeros = votes.iter().filter(|v| **v == Vote::F1).count();
    match ones.cmp(&zeros) {
        std::cmp::Ordering::Greater => (VoteOutcome::One, true),
        std::cmp::Ordering::Less => (VoteOutcome::Zero, false),
        std::cmp::Ordering::Equal => (VoteOutcome::CoinToss, rng.random_bool(0.5)),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub round_index: usize,
    /// One vote per code site, in code-site order.
    pub votes: Vec<Vote>,
    pub survivors: usize,
    pub vote_outcome: VoteOutcome,
    pub logical_state_before: bool,
    pub logical_state_after: bool,
}

impl RoundRecord {
    /// The round changed the logical bit.
    pub fn logical_flip(&self) -> bool {
        self.logical_state_before != self.logical_state_after
    }

    /// Surviving votes disagreeing with the logical bit entering the round.
    pub fn physical_errors(&self) -> usize {
        let wrong = if self.logical_state_before { Vote::F1 } else { Vote::F2 };
        self.votes.iter().filter(|v| **v == wrong).count()
    }
}

/// Prepares the first `d` occupied sites in the state encoding `bit` and
/// returns their indices. Fewer than `d` atoms is a load failure.
pub fn encode(register: &mut Register, bit: bool, d: usize) -> Result<Vec<usize>> {
    let occupied = register.occupied_indices();
    if occupied.len() < d {
        return Err(Error::LoadFailure { needed: d, available: occupied.len() });
    }
    let sites = occupied[..d].to_vec();
    for &i in &sites {
        register.pump(i, HyperfineState::from_bit(bit));
    }
    Ok(sites)
}

/// How the errors of a round are produced.
#[derive(Clone, Debug, PartialEq)]
pub enum RoundMode {
    /// Per-round flip and loss probabilities from [`CodeConfig`]; readout is
    /// exact.
    Abstract,
    /// Idle with [`IdleErrorModel`], then a hidden sequential cavity readout.
    FullPhysics { readout: Box<ArrayReadout>, idle: IdleErrorModel },
}

/// Executes one error-correction round on `code_sites`.
pub fn run_round<R: Rng + ?Sized>(
    register: &mut Register,
    code_sites: &[usize],
    logical_state: bool,
    round_index: usize,
    config: &CodeConfig,
    mode: &RoundMode,
    rng: &mut R,
) -> Result<RoundRecord> {
    let votes: Vec<Vote> = match mode {
        RoundMode::Abstract => code_sites
            .iter()
            .map(|&i| {
                if let SiteState::Occupied(h) = register.site(i) {
                    let h = if rng.random_bool(config.per_round_flip) { h.flipped() } else { h };
                    if rng.random_bool(config.per_round_loss) {
                        register.lose(i);
                    } else {
                        register.pump(i, h);
                    }
                }
                Vote::from(register.site(i))
            })
            .collect(),
        RoundMode::FullPhysics { readout, idle } => {
            register.idle(config.idle_ms, idle, rng)?;
            let measured = readout.read(register, code_sites, None, rng)?;
            measured.iter().map(|(_, m)| Vote::from(m.inferred)).collect()
        }
    };
    let survivors = votes.iter().filter(|v| **v != Vote::Lost).count();
    let (vote_outcome, decided) = majority_vote(&votes, rng);
    for &i in code_sites {
        register.pump(i, HyperfineState::from_bit(decided));
    }
    Ok(RoundRecord {
        round_index,
        votes,
        survivors,
        vote_outcome,
        logical_state_before: logical_state,
        logical_state_after: decided,
    })
}

/// Per-round history of one trial.
#[derive(Clone, Debug, PartialEq)]
pub struct LogicalTrace {
    pub encoded: bool,
    /// Logical bit after the round differs from the encoded bit.
    pub errors: Vec<bool>,
    pub survivors: Vec<usize>,
    pub time_ms: Vec<f64>,
}

/// Encodes `bit` into a fresh register of `d` atoms and runs all rounds.
pub fn run_trial<R: Rng + ?Sized>(
    config: &CodeConfig,
    mode: &RoundMode,
    bit: bool,
    rng: &mut R,
) -> Result<(LogicalTrace, Vec<RoundRecord>)> {
    config.validate()?;
    let mut register = Register::from_sites(vec![SiteState::F1; config.distance], DEFAULT_SPACING_UM)?;
    let code_sites = encode(&mut register, bit, config.distance)?;
    let mut state = bit;
    let mut trace = LogicalTrace {
        encoded: bit,
        errors: Vec::with_capacity(config.rounds),
        survivors: Vec::with_capacity(config.rounds),
        time_ms: Vec::with_capacity(config.rounds),
    };
    let mut records = Vec::with_capacity(config.rounds);
    for r in 0..config.rounds {
        let rec = run_round(&mut register, &code_sites, state, r, config, mode, rng)?;
        state = rec.logical_state_after;
        trace.errors.push(state != bit);
        trace.survivors.push(rec.survivors);
        trace.time_ms.push((r + 1) as f64 * config.round_period_ms());
        records.push(rec);
    }
    Ok((trace, records))
}

/// Which rounds enter the logical error estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PostSelect {
    All,
    /// Only rounds in which all `d` atoms were still present.
    FullDistance,
    Survivors(usize),
}

impl PostSelect {
    fn accepts(self, survivors: usize, d: usize) -> bool {
        match self {
            PostSelect::All => true,
            PostSelect::FullDistance => survivors == d,
            PostSelect::Survivors(k) => survivors == k,
        }
    }

    pub fn survivors(self, d: usize) -> Option<usize> {
        match self {
            PostSelect::All => None,
            PostSelect::FullDistance => Some(d),
            PostSelect::Survivors(k) => Some(k),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveRow {
    /// Configured per-round flip probability.
    pub p_phys: f64,
    /// Fraction of surviving votes that disagreed with the incoming logical
    /// bit, over the selected rounds.
    pub p_phys_measured: Estimate,
    pub d: usize,
    pub survivors: Option<usize>,
    /// Per-round probability that the vote flips the logical bit.
    pub p_logical: Estimate,
    /// Relative standard error ≥ 10% or no logical errors observed.
    pub flagged: bool,
}

#[derive(Clone, Copy, Debug, Default)]
struct CurveAcc {
    rounds: u64,
    flips: u64,
    votes: u64,
    wrong_votes: u64,
}

/// Per-round logical error probability for every `(d, p_phys)` pair, in
/// abstract mode. Cell `(i, j)` uses the child stream `i·|flips| + j`.
pub fn logical_error_curve(
    base: &CodeConfig,
    distances: &[usize],
    flips: &[f64],
    post_select: PostSelect,
    n_trials: u64,
    key: StreamKey,
) -> Result<Vec<CurveRow>> {
    let mut rows = Vec::with_capacity(distances.len() * flips.len());
    for (i, &d) in distances.iter().enumerate() {
        for (j, &p) in flips.iter().enumerate() {
            let config = CodeConfig { distance: d, per_round_flip: p, ..*base };
            config.validate()?;
            let cell = key.child((i * flips.len() + j) as u64);
            let acc = fold_trials(
                cell,
                n_trials,
                CurveAcc::default,
                |acc, rng, _| {
                    let bit = rng.random_bool(0.5);
                    let (_, records) = run_trial(&config, &RoundMode::Abstract, bit, rng).expect("validated config");
                    for rec in records.iter().filter(|r| post_select.accepts(r.survivors, d)) {
                        acc.rounds += 1;
                        acc.flips += rec.logical_flip() as u64;
                        acc.votes += rec.survivors as u64;
                        acc.wrong_votes += rec.physical_errors() as u64;
                    }
                },
                |a, b| {
                    a.rounds += b.rounds;
                    a.flips += b.flips;
                    a.votes += b.votes;
                    a.wrong_votes += b.wrong_votes;
                },
            );
            let p_logical = Estimate::binomial(acc.flips, acc.rounds);
            let flagged = acc.flips == 0 || !(p_logical.relative_stderr() < 0.1);
            rows.push(CurveRow {
                p_phys: p,
                p_phys_measured: Estimate::binomial(acc.wrong_votes, acc.votes),
                d,
                survivors: post_select.survivors(d),
                p_logical,
                flagged,
            });
        }
    }
    Ok(rows)
}

/// Log-log slope of `p_logical` against `p_phys` for rows of one distance.
/// With `measured_x`, the empirical physical error replaces the configured one.
pub fn fit_error_exponent(rows: &[CurveRow], measured_x: bool) -> Result<PowerLawFit> {
    if rows.len() < 4 {
        return Err(Error::Fit(format!("exponent fit needs at least 4 points, got {}", rows.len())));
    }
    if rows.windows(2).any(|w| w[0].d != w[1].d) {
        return Err(Error::Fit("exponent fit rows must share one code distance".into()));
    }
    let xs: Vec<f64> = rows
        .iter()
        .map(|r| if measured_x { r.p_phys_measured.mean } else { r.p_phys })
        .collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.p_logical.mean).collect();
    if xs.iter().chain(&ys).any(|&v| !(v > 0.0)) {
        return Err(Error::Fit("probabilities must be strictly positive".into()));
    }
    let (lo, hi) = xs.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if hi / lo < 10.0 - 1e-9 {
        return Err(Error::Fit(format!("sweep spans only {:.2}x in p_phys, need a decade", hi / lo)));
    }
    fit_power_law(&xs, &ys)
}

/// Exact per-round majority failure probability without loss:
/// Σ_{k>d/2} C(d,k) p^k (1−p)^(d−k).
pub fn majority_failure_probability(d: usize, p: f64) -> f64 {
    let mut total = 0.0;
    let mut binom = 1.0f64;
    for k in 0..=d {
        if k > 0 {
            binom = binom * (d - k + 1) as f64 / k as f64;
        }
        if 2 * k > d {
            total += binom * p.powi(k as i32) * (1.0 - p).powi((d - k) as i32);
        }
    }
    total
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LifetimePoint {
    pub t_ms: f64,
    pub p_err: Estimate,
    pub survivor_mean: f64,
}

/// Error probability relative to the encoded bit versus wall-clock time.
/// `d == 0` denotes a bare idling physical bit.
#[derive(Clone, Debug, PartialEq)]
pub struct LifetimeCurve {
    pub d: usize,
    pub points: Vec<LifetimePoint>,
}

#[derive(Clone, Debug, Default)]
struct TimeAcc {
    errors: Vec<u64>,
    survivors: Vec<Moments>,
}

impl TimeAcc {
    fn new(rounds: usize) -> Self {
        Self { errors: vec![0; rounds], survivors: vec![Moments::default(); rounds] }
    }

    fn merge(&mut self, other: TimeAcc) {
        self.errors.iter_mut().zip(other.errors).for_each(|(a, b)| *a += b);
        self.survivors.iter_mut().zip(other.survivors).for_each(|(a, b)| a.merge(b));
    }

    fn into_curve(self, d: usize, period_ms: f64, n_trials: u64) -> LifetimeCurve {
        let points = self
            .errors
            .into_iter()
            .zip(self.survivors)
            .enumerate()
            .map(|(r, (e, s))| LifetimePoint {
                t_ms: (r + 1) as f64 * period_ms,
                p_err: Estimate::binomial(e, n_trials),
                survivor_mean: s.mean(),
            })
            .collect();
        LifetimeCurve { d, points }
    }
}

/// Logical error versus time for an encoded register.
pub fn logical_error_vs_time(config: &CodeConfig, mode: &RoundMode, n_trials: u64, key: StreamKey) -> Result<LifetimeCurve> {
    config.validate()?;
    let rounds = config.rounds;
    let acc = fold_trials(
        key,
        n_trials,
        || TimeAcc::new(rounds),
        |acc, rng, _| {
            let bit = rng.random_bool(0.5);
            let (trace, _) = run_trial(config, mode, bit, rng).expect("validated config");
            for r in 0..rounds {
                acc.errors[r] += trace.errors[r] as u64;
                acc.survivors[r].push(trace.survivors[r] as f64);
            }
        },
        TimeAcc::merge,
    );
    Ok(acc.into_curve(config.distance, config.round_period_ms(), n_trials))
}

/// A single atom idling with `model`, read out perfectly every `period_ms`;
/// a lost atom reads as a coin toss.
pub fn physical_idle_curve(
    model: &IdleErrorModel,
    period_ms: f64,
    rounds: usize,
    n_trials: u64,
    key: StreamKey,
) -> Result<LifetimeCurve> {
    if !(period_ms > 0.0) || rounds == 0 {
        return Err(Error::config("idle curve needs a positive period and at least one round"));
    }
    let acc = fold_trials(
        key,
        n_trials,
        || TimeAcc::new(rounds),
        |acc, rng, _| {
            let bit = rng.random_bool(0.5);
            let mut reg = Register::from_sites(vec![SiteState::Occupied(HyperfineState::from_bit(bit))], DEFAULT_SPACING_UM)
                .expect("one site");
            for r in 0..rounds {
                reg.idle(period_ms, model, rng).expect("positive period");
                let read = match reg.site(0).hyperfine() {
                    Some(h) => h.bit(),
                    None => rng.random_bool(0.5),
                };
                acc.errors[r] += (read != bit) as u64;
                acc.survivors[r].push(reg.occupied_count() as f64);
            }
        },
        TimeAcc::merge,
    );
    Ok(acc.into_curve(0, period_ms, n_trials))
}

/// Asymptotic error assumed by the lifetime fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PlateauModel {
    /// Held at ½: with loss every trial ends as a coin toss.
    CoinToss,
    /// Fitted along with τ.
    Free,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LifetimeFit {
    /// Fitted τ of p∞·(1 − e^(−t/τ)); the headline lifetime.
    pub tau_ms: f64,
    pub tau_stderr: f64,
    pub p_inf: f64,
    /// Interpolated time where the data reach p∞·(1 − 1/e).
    pub rise_crossing_ms: Option<f64>,
    /// Interpolated time where the data reach p∞/e.
    pub fraction_crossing_ms: Option<f64>,
    pub fit: SaturatingFit,
    /// The fit is flagged, or the data never reach p∞·(1 − 1/e).
    pub low_confidence: bool,
}

fn crossing(curve: &LifetimeCurve, level: f64) -> Option<f64> {
    let mut prev = (0.0, 0.0);
    for pt in &curve.points {
        let cur = (pt.t_ms, pt.p_err.mean);
        if cur.1 >= level {
            if cur.1 == prev.1 {
                return Some(cur.0);
            }
            return Some(prev.0 + (level - prev.1) / (cur.1 - prev.1) * (cur.0 - prev.0));
        }
        prev = cur;
    }
    None
}

pub fn logical_lifetime(curve: &LifetimeCurve, plateau: PlateauModel) -> Result<LifetimeFit> {
    let ts: Vec<f64> = curve.points.iter().map(|p| p.t_ms).collect();
    let ps: Vec<f64> = curve.points.iter().map(|p| p.p_err.mean).collect();
    let fit = match plateau {
        PlateauModel::CoinToss => fit_saturating_exponential_fixed(&ts, &ps, 0.5)?,
        PlateauModel::Free => fit_saturating_exponential(&ts, &ps)?,
    };
    let rise = crossing(curve, fit.p_inf * (1.0 - (-1.0f64).exp()));
    let fraction = crossing(curve, fit.p_inf * (-1.0f64).exp());
    Ok(LifetimeFit {
        tau_ms: fit.tau,
        tau_stderr: fit.tau_stderr,
        p_inf: fit.p_inf,
        rise_crossing_ms: rise,
        fraction_crossing_ms: fraction,
        fit,
        low_confidence: !fit.is_trusted() || rise.is_none(),
    })
}
