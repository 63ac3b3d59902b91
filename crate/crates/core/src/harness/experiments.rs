//! Figure-reproduction experiments: each one is a pure function of
//! `(SimConfig, ExperimentSpec)` producing a CSV table and a list of derived
//! quantities for the metadata sidecar.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::code::{
    fit_error_exponent, logical_error_curve, logical_error_vs_time, logical_lifetime, physical_idle_curve,
    CodeConfig, CurveRow, LifetimeCurve, RoundMode,
};
use crate::config::{CodeMode, PhysSource, SimConfig};
use crate::error::{Error, Result};
use crate::harness::estimate::{Estimate, Moments};
use crate::harness::fit::fit_linear;
use crate::photon::{adaptive_reduction, count_histogram, HistogramCondition};
use crate::readout::{sequential_array_readout, ArrayReadout, SiteMeasurement, SiteReadout};
use crate::register::{HyperfineState, Register, SiteState};
use crate::search::{expected_cost, run_search, SearchProblem};
use crate::stream::{fold_trials, StreamKey};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Experiment {
    Histogram,
    DepumpScaling,
    SearchCost,
    ErrorScaling,
    LogicalLifetime,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::Histogram,
        Experiment::DepumpScaling,
        Experiment::SearchCost,
        Experiment::ErrorScaling,
        Experiment::LogicalLifetime,
    ];

    /// Subcommand name.
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Histogram => "histogram",
            Experiment::DepumpScaling => "depump-scaling",
            Experiment::SearchCost => "search-cost",
            Experiment::ErrorScaling => "error-scaling",
            Experiment::LogicalLifetime => "lifetime",
        }
    }

    /// Distinct top-level stream per experiment, so that two experiments
    /// under the same seed never share random numbers.
    fn stream_id(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::config(format!("unknown experiment `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExperimentSpec {
    pub experiment: Experiment,
    /// Overrides the configured trial count of the experiment.
    pub trials: Option<u64>,
    pub master_seed: u64,
}

impl ExperimentSpec {
    pub fn new(experiment: Experiment, master_seed: u64) -> Self {
        Self { experiment, trials: None, master_seed }
    }

    pub fn with_trials(mut self, trials: u64) -> Self {
        self.trials = Some(trials);
        self
    }

    fn trials(&self, configured: u64) -> Result<u64> {
        let n = self.trials.unwrap_or(configured);
        if n == 0 {
            return Err(Error::config("trials must be >= 1"));
        }
        Ok(n)
    }

    fn key(&self) -> StreamKey {
        StreamKey::new(self.master_seed, self.experiment.stream_id())
    }
}

/// A result table plus derived scalars.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutput {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
    /// Fits and summary values, in insertion order.
    pub results: Vec<(String, String)>,
}

impl ExperimentOutput {
    fn new(header: &[&'static str]) -> Self {
        Self { header: header.to_vec(), rows: Vec::new(), results: Vec::new() }
    }

    fn result(&mut self, key: impl Into<String>, value: impl fmt::Display) {
        self.results.push((key.into(), value.to_string()));
    }

    /// Looks up a result by key.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.results.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Parses a numeric result.
    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key)?.parse().ok()
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| *h == name)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(&self.header)?;
        for row in &self.rows {
            wtr.write_record(row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
    }
}

/// Runs one experiment.
pub fn run(spec: &ExperimentSpec, config: &SimConfig) -> Result<ExperimentOutput> {
    match spec.experiment {
        Experiment::Histogram => histogram(spec, config),
        Experiment::DepumpScaling => depump_scaling(spec, config),
        Experiment::SearchCost => search_cost(spec, config),
        Experiment::ErrorScaling => error_scaling(spec, config),
        Experiment::LogicalLifetime => lifetime(spec, config),
    }
}

fn num(x: f64) -> String {
    x.to_string()
}

fn histogram(spec: &ExperimentSpec, config: &SimConfig) -> Result<ExperimentOutput> {
    let trials = spec.trials(config.histogram.trials)?;
    let key = spec.key();
    let mut out = ExperimentOutput::new(&["counts", "frequency", "condition"]);
    for (c, condition) in HistogramCondition::ALL.into_iter().enumerate() {
        let freqs = count_histogram(&config.photon, condition, config.histogram.max_counts + 1, trials, key.child(c as u64))?;
        for (counts, f) in freqs.into_iter().enumerate() {
            out.rows.push(vec![counts.to_string(), num(f), condition.label().to_owned()]);
        }
    }
    out.result("cooperativity", config.cavity.cooperativity());
    out.result("threshold_counts", config.photon.threshold);
    if trials >= 10_000 {
        let (factors, wald) = adaptive_reduction(&config.photon, trials, key.child(HistogramCondition::ALL.len() as u64))?;
        out.result("photon_reduction_factor", factors.photon_factor.mean);
        out.result("photon_reduction_factor_stderr", factors.photon_factor.stderr);
        out.result("duration_reduction_factor", factors.duration_factor.mean);
        out.result("duration_reduction_factor_stderr", factors.duration_factor.stderr);
        out.result("adaptive_mean_counts", factors.adaptive_counts.mean);
        out.result("adaptive_mean_stop_index", factors.stop_index.mean);
        out.result("wald_residual_mean", wald.mean);
        out.result("wald_residual_stderr", wald.stderr);
    } else {
        out.result("photon_reduction_factor", "skipped (needs >= 10000 trials)");
    }
    Ok(out)
}

/// Array readout built from the configured probe, photon and hiding models.
pub fn array_readout(config: &SimConfig, hiding_power_mw: f64) -> Result<ArrayReadout> {
    let site = SiteReadout::new(&config.probe, &config.table, config.photon, config.adaptive)?
        .with_full_interval_loss_factor(config.full_interval_loss_factor)?;
    ArrayReadout::new(site, config.hiding.clone(), hiding_power_mw)
}

#[derive(Clone, Debug)]
struct SiteTally {
    occupied: Vec<u64>,
    errors: Vec<u64>,
}

impl SiteTally {
    fn new(n: usize) -> Self {
        Self { occupied: vec![0; n], errors: vec![0; n] }
    }

    fn merge(&mut self, other: SiteTally) {
        self.occupied.iter_mut().zip(other.occupied).for_each(|(a, b)| *a += b);
        self.errors.iter_mut().zip(other.errors).for_each(|(a, b)| *a += b);
    }
}

/// Error of a bright-prepared atom, conditioned on being read as present.
fn depump_scaling(spec: &ExperimentSpec, config: &SimConfig) -> Result<ExperimentOutput> {
    let p = &config.depump;
    let trials = spec.trials(p.trials)?;
    let readout = array_readout(config, p.hiding_power_mw)?;
    let key = spec.key();
    let mut out = ExperimentOutput::new(&[
        "n_sites",
        "site_index",
        "error_rate",
        "stderr",
        "hiding_power_mW",
        "adaptive_rounds",
    ]);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (cell, &n) in p.array_sizes.iter().enumerate() {
        let order: Vec<usize> = (0..n).collect();
        let tally = fold_trials(
            key.child(cell as u64),
            trials,
            || SiteTally::new(n),
            |acc, rng, _| {
                let mut reg = Register::filled(n, SiteState::F2).expect("n >= 1");
                let mut previous: Option<Vec<(usize, SiteMeasurement)>> = None;
                for _ in 0..p.rounds {
                    for i in 0..n {
                        if reg.site(i).is_occupied() {
                            reg.pump(i, HyperfineState::F2);
                        }
                    }
                    let prev = if p.adaptive_rounds { previous.as_deref() } else { None };
                    let measured =
                        sequential_array_readout(&mut reg, &order, &readout, prev, rng).expect("valid order");
                    for (i, m) in &measured {
                        if m.inferred.is_occupied() {
                            acc.occupied[*i] += 1;
                            acc.errors[*i] += (m.inferred == SiteState::F1) as u64;
                        }
                    }
                    previous = Some(measured);
                }
            },
            SiteTally::merge,
        );
        for i in 0..n {
            let e = Estimate::binomial(tally.errors[i], tally.occupied[i]);
            out.rows.push(vec![
                n.to_string(),
                i.to_string(),
                num(e.mean),
                num(e.stderr),
                num(p.hiding_power_mw),
                p.adaptive_rounds.to_string(),
            ]);
            if e.mean.is_finite() {
                xs.push(i as f64);
                ys.push(e.mean);
            }
        }
    }
    out.result("hidden_depump_per_interval", readout.hidden_depump());
    match fit_linear(&xs, &ys) {
        Ok(fit) => {
            out.result("fit_intercept", fit.intercept);
            out.result("fit_intercept_stderr", fit.intercept_stderr);
            out.result("fit_slope_per_site", fit.slope);
            out.result("fit_slope_stderr", fit.slope_stderr);
        }
        Err(e) => out.result("fit_slope_per_site", format!("unavailable ({e})")),
    }
    Ok(out)
}

fn search_cost(spec: &ExperimentSpec, config: &SimConfig) -> Result<ExperimentOutput> {
    let s = &config.search;
    let trials = spec.trials(s.trials)?;
    let key = spec.key();
    let noise = if s.noise.is_noiseless() { None } else { Some(&s.noise) };
    let mut out = ExperimentOutput::new(&["n", "p", "strategy", "mean_intervals", "stderr", "analytic"]);
    let mut cell = 0u64;
    for &n in &s.sizes {
        for &p in &s.probabilities {
            let problem = SearchProblem::new(n, p, s.placement)?;
            for &strategy in &s.strategies {
                let moments = fold_trials(
                    key.child(cell),
                    trials,
                    Moments::default,
                    |acc, rng, _| {
                        let reg = problem.sample(rng);
                        let r = run_search(&reg, strategy, s.placement, noise, rng).expect("validated noise");
                        acc.push(r.intervals_used() as f64);
                    },
                    |a, b| a.merge(b),
                );
                cell += 1;
                let e = moments.estimate();
                let analytic = if noise.is_none() { expected_cost(&problem, strategy) } else { None };
                out.rows.push(vec![
                    n.to_string(),
                    num(p),
                    strategy.name().to_owned(),
                    num(e.mean),
                    num(e.stderr),
                    analytic.map(num).unwrap_or_default(),
                ]);
            }
        }
    }
    Ok(out)
}

fn error_scaling(spec: &ExperimentSpec, config: &SimConfig) -> Result<ExperimentOutput> {
    let es = &config.error_scaling;
    let trials = spec.trials(es.trials)?;
    let measured_x = es.p_phys_source == PhysSource::Measured;
    let rows = logical_error_curve(&config.code.base, &es.distances, &es.flip_sweep, es.post_select, trials, spec.key())?;
    let mut out = ExperimentOutput::new(&["p_phys", "d", "survivors", "p_logical", "stderr"]);
    for r in &rows {
        let x = if measured_x { r.p_phys_measured.mean } else { r.p_phys };
        out.rows.push(vec![
            num(x),
            r.d.to_string(),
            r.survivors.map(|k| k.to_string()).unwrap_or_else(|| "all".into()),
            num(r.p_logical.mean),
            num(r.p_logical.stderr),
        ]);
    }
    out.result("mode", "abstract");
    out.result("per_round_loss", config.code.base.per_round_loss);
    for &d in &es.distances {
        let of_d: Vec<CurveRow> = rows.iter().filter(|r| r.d == d).copied().collect();
        let flagged = of_d.iter().filter(|r| r.flagged).count();
        out.result(format!("d{d}_flagged_points"), flagged);
        match fit_error_exponent(&of_d, measured_x) {
            Ok(fit) => {
                out.result(format!("d{d}_exponent"), fit.exponent);
                out.result(format!("d{d}_exponent_stderr"), fit.exponent_stderr);
                out.result(format!("d{d}_prefactor"), fit.prefactor);
            }
            Err(e) => out.result(format!("d{d}_exponent"), format!("unavailable ({e})")),
        }
    }
    Ok(out)
}

fn lifetime_rows(out: &mut ExperimentOutput, curve: &LifetimeCurve) {
    for pt in &curve.points {
        out.rows.push(vec![
            num(pt.t_ms),
            curve.d.to_string(),
            num(pt.p_err.mean),
            num(pt.p_err.stderr),
            num(pt.survivor_mean),
        ]);
    }
}

/// Physical idling bit (`d = 0` rows) and one encoded curve per distance,
/// with fitted lifetimes and their ratio to the physical one.
fn lifetime(spec: &ExperimentSpec, config: &SimConfig) -> Result<ExperimentOutput> {
    let lt = &config.lifetime;
    let trials = spec.trials(lt.trials)?;
    let key = spec.key();
    let base = config.code.base;
    let mode = match config.code.mode {
        CodeMode::Abstract => RoundMode::Abstract,
        CodeMode::FullPhysics => RoundMode::FullPhysics {
            readout: Box::new(array_readout(config, config.code.hiding_power_mw)?),
            idle: config.idle,
        },
    };
    let mut out = ExperimentOutput::new(&["t_ms", "d", "p_err", "stderr", "survivor_mean"]);
    out.result("mode", if config.code.mode == CodeMode::Abstract { "abstract" } else { "full_physics" });
    out.result("round_period_ms", base.round_period_ms());

    let physical = physical_idle_curve(&config.idle, base.round_period_ms(), base.rounds, trials, key.child(0))?;
    lifetime_rows(&mut out, &physical);
    let phys_fit = logical_lifetime(&physical, lt.plateau)?;
    out.result("physical_tau_ms", phys_fit.tau_ms);
    out.result("physical_tau_stderr", phys_fit.tau_stderr);
    out.result("physical_low_confidence", phys_fit.low_confidence);

    for (i, &d) in lt.distances.iter().enumerate() {
        let cfg = CodeConfig { distance: d, ..base };
        let curve = logical_error_vs_time(&cfg, &mode, trials, key.child(i as u64 + 1))?;
        lifetime_rows(&mut out, &curve);
        let fit = logical_lifetime(&curve, lt.plateau)?;
        let opt = |v: Option<f64>| v.map(num).unwrap_or_else(|| "none".into());
        out.result(format!("d{d}_tau_ms"), fit.tau_ms);
        out.result(format!("d{d}_tau_stderr"), fit.tau_stderr);
        out.result(format!("d{d}_p_inf"), fit.p_inf);
        out.result(format!("d{d}_rise_crossing_ms"), opt(fit.rise_crossing_ms));
        out.result(format!("d{d}_fraction_crossing_ms"), opt(fit.fraction_crossing_ms));
        out.result(format!("d{d}_low_confidence"), fit.low_confidence);
        out.result(format!("d{d}_tau_ratio"), fit.tau_ms / phys_fit.tau_ms);
    }
    Ok(out)
}
