//! Flat `key = value` configuration with `[section]` headers.
//!
//! Parsing is fail-closed: every key documented in [`KEY_DOCS`] must be
//! present, unknown keys and duplicates are rejected, and every diagnostic
//! names the key and, where it exists, the line.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::code::{CodeConfig, PlateauModel, PostSelect};
use crate::error::Error;
use crate::photon::{CavityParams, DetectorModel, PhotonModel};
use crate::readout::{ErrorRow, HidingModel, MeasurementErrorTable, ProbeConfig};
use crate::register::IdleErrorModel;
use crate::search::{CheckNoise, Placement, SearchStrategy};

/// The shipped default configuration.
pub const DEFAULT_CONFIG: &str = include_str!("../defaults.cfg");

/// Every fixed key with a one-line description, for `--help`.
/// `table_row_<n>` sections repeat [`TABLE_ROW_KEYS`].
pub const KEY_DOCS: &[(&str, &str)] = &[
    ("register.spacing_um", "tweezer spacing (um)"),
    ("idle.tau_depump_ms", "idle depump/repump relaxation time (ms)"),
    ("idle.tau_vacuum_ms", "vacuum-limited trap lifetime (ms)"),
    ("cavity.two_g0_mhz", "2g0 / 2pi (MHz)"),
    ("cavity.kappa_mhz", "cavity decay rate / 2pi (MHz)"),
    ("cavity.gamma_mhz", "atomic decay rate / 2pi (MHz)"),
    ("cavity.finesse", "cavity finesse (metadata)"),
    ("cavity.waist_um", "cavity waist (metadata, um)"),
    ("detector.dark_rate_per_s", "dark counts per detector (1/s)"),
    ("detector.n_detectors", "number of detectors summed"),
    ("detector.quantum_efficiency", "total detection efficiency (metadata)"),
    ("photon.bright_mean_full_photons", "mean bright-state photons per full interval"),
    ("photon.full_interval_us", "full measurement interval (us)"),
    ("photon.sub_interval_us", "adaptive polling period (us)"),
    ("photon.threshold_counts", "bright iff counts >= threshold"),
    ("photon.adaptive", "adaptive termination (true/false)"),
    ("probe.tweezer_depth_mk", "tweezer depth selecting the error-table row (mK)"),
    ("probe.detuning_pa_mhz", "probe-atom detuning (metadata, MHz)"),
    ("probe.detuning_pc_mhz", "probe-cavity detuning selecting the error-table row (MHz)"),
    ("probe.full_interval_loss_factor", "bright loss multiplier without adaptive termination"),
    ("hiding.depump_per_interval_unhidden", "depump probability per interval without hiding"),
    ("hiding.suppression_points_mw", "power_mw:factor pairs, ascending"),
    ("hiding.background_floor_per_interval", "background depump per interval"),
    ("hiding.beam_waist_um", "hiding beam waist (um)"),
    ("hiding.shift_slope_mhz_per_uw", "light shift at beam centre (MHz/uW)"),
    ("hiding.residual_at_10um", "relative light shift 10 um off centre"),
    ("histogram.max_counts", "last histogram bin"),
    ("histogram.trials", "trials per condition"),
    ("depump_scaling.array_sizes", "list of array sizes"),
    ("depump_scaling.hiding_power_mw", "hiding power per atom (mW)"),
    ("depump_scaling.adaptive_rounds", "skip sites read vacant in the previous round"),
    ("depump_scaling.rounds", "readout rounds per trial"),
    ("depump_scaling.trials", "trials per array size"),
    ("search.sizes", "list of register sizes"),
    ("search.probabilities", "list of bright probabilities"),
    ("search.placement", "at_most_one_bright | independent_per_site"),
    ("search.strategies", "list of strategies"),
    ("search.false_positive", "group-check false-positive rate"),
    ("search.false_negative", "group-check false-negative rate"),
    ("search.trials", "trials per cell"),
    ("code.rounds", "error-correction rounds per trial"),
    ("code.idle_ms", "idling time per round (ms)"),
    ("code.per_round_flip", "abstract-mode flip probability per atom per round"),
    ("code.per_round_loss", "abstract-mode loss probability per atom per round"),
    ("code.round_overhead_ms", "readout time per round (ms)"),
    ("code.mode", "abstract | full_physics"),
    ("code.hiding_power_mw", "hiding power in full_physics mode (mW)"),
    ("error_scaling.distances", "list of odd code distances"),
    ("error_scaling.flip_sweep", "list of per-round flip probabilities"),
    ("error_scaling.post_select", "all | full | <survivor count>"),
    ("error_scaling.p_phys_source", "nominal | measured"),
    ("error_scaling.trials", "trials per sweep point"),
    ("lifetime.distances", "list of odd code distances"),
    ("lifetime.plateau", "coin_toss | free"),
    ("lifetime.trials", "trials per distance"),
];

pub const TABLE_ROW_KEYS: &[(&str, &str)] = &[
    ("tweezer_depth_mk", "row key: tweezer depth (mK)"),
    ("detuning_pc_mhz", "row key: probe-cavity detuning (MHz)"),
    ("infidelity_f1", "F=1 misclassification probability"),
    ("loss_f1", "F=1 loss probability per measurement"),
    ("infidelity_f2", "F=2 misclassification probability"),
    ("loss_f2", "F=2 loss probability per measurement"),
];

/// A configuration diagnostic.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        if let Some(key) = &self.key {
            write!(f, "key `{key}`: ")?;
        }
        f.write_str(&self.message)
    }
}

impl std::error::Error for ConfigError {}

impl From<ConfigError> for Error {
    fn from(e: ConfigError) -> Self {
        Error::Config(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodeMode {
    Abstract,
    FullPhysics,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhysSource {
    Nominal,
    Measured,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistogramParams {
    pub max_counts: usize,
    pub trials: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepumpParams {
    pub array_sizes: Vec<usize>,
    pub hiding_power_mw: f64,
    pub adaptive_rounds: bool,
    pub rounds: usize,
    pub trials: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchParams {
    pub sizes: Vec<usize>,
    pub probabilities: Vec<f64>,
    pub placement: Placement,
    pub strategies: Vec<SearchStrategy>,
    pub noise: CheckNoise,
    pub trials: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CodeParams {
    /// Distance is set per experiment; the rest is shared.
    pub base: CodeConfig,
    pub mode: CodeMode,
    pub hiding_power_mw: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorScalingParams {
    pub distances: Vec<usize>,
    pub flip_sweep: Vec<f64>,
    pub post_select: PostSelect,
    pub p_phys_source: PhysSource,
    pub trials: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LifetimeParams {
    pub distances: Vec<usize>,
    pub plateau: PlateauModel,
    pub trials: u64,
}

/// Every simulation parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub spacing_um: f64,
    pub idle: IdleErrorModel,
    pub cavity: CavityParams,
    pub photon: PhotonModel,
    pub adaptive: bool,
    pub probe: ProbeConfig,
    pub full_interval_loss_factor: f64,
    pub table: MeasurementErrorTable,
    pub hiding: HidingModel,
    pub histogram: HistogramParams,
    pub depump: DepumpParams,
    pub search: SearchParams,
    pub code: CodeParams,
    pub error_scaling: ErrorScalingParams,
    pub lifetime: LifetimeParams,
    /// Canonical `section.key = value` listing of the parsed document.
    canonical: Vec<(String, String)>,
}

impl Default for SimConfig {
    fn default() -> Self {
        DEFAULT_CONFIG.parse().expect("shipped defaults.cfg is valid")
    }
}

struct Entry {
    value: String,
    line: usize,
}

struct Document {
    entries: BTreeMap<String, Entry>,
}

fn err(line: Option<usize>, key: Option<&str>, message: impl Into<String>) -> ConfigError {
    ConfigError { line, key: key.map(str::to_owned), message: message.into() }
}

fn valid_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

impl Document {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        let mut section: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(Some(line), None, "unterminated section header"))?
                    .trim();
                if !valid_ident(name) {
                    return Err(err(Some(line), None, format!("invalid section name `{name}`")));
                }
                section = Some(name.to_owned());
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(Some(line), None, format!("expected `key = value`, got `{content}`")))?;
            let key = key.trim();
            if !valid_ident(key) {
                return Err(err(Some(line), None, format!("invalid key name `{key}`")));
            }
            let section = section
                .as_deref()
                .ok_or_else(|| err(Some(line), Some(key), "key appears before any [section] header"))?;
            let full = format!("{section}.{key}");
            if let Some(prev) = entries.get(&full) {
                let prev: &Entry = prev;
                return Err(err(Some(line), Some(&full), format!("duplicate key (first set on line {})", prev.line)));
            }
            entries.insert(full, Entry { value: value.trim().to_owned(), line });
        }
        Ok(Self { entries })
    }

    fn take(&mut self, key: &str) -> Result<Entry, ConfigError> {
        self.entries.remove(key).ok_or_else(|| err(None, Some(key), "missing key"))
    }

    fn parse_with<T>(&mut self, key: &str, what: &str, f: impl Fn(&str) -> Option<T>) -> Result<T, ConfigError> {
        let e = self.take(key)?;
        f(&e.value).ok_or_else(|| err(Some(e.line), Some(key), format!("expected {what}, got `{}`", e.value)))
    }

    fn check<T>(&mut self, key: &str, what: &str, f: impl Fn(&str) -> Option<T>, ok: impl Fn(&T) -> bool, range: &str) -> Result<T, ConfigError> {
        let line = self.entries.get(key).map(|e| e.line);
        let v = self.parse_with(key, what, f)?;
        if !ok(&v) {
            return Err(err(line, Some(key), format!("value out of range: must be {range}")));
        }
        Ok(v)
    }

    fn float(&mut self, key: &str, ok: impl Fn(f64) -> bool, range: &str) -> Result<f64, ConfigError> {
        self.check(key, "a number", parse_f64, |v| ok(*v), range)
    }

    fn positive(&mut self, key: &str) -> Result<f64, ConfigError> {
        self.float(key, |v| v > 0.0, "> 0")
    }

    fn non_negative(&mut self, key: &str) -> Result<f64, ConfigError> {
        self.float(key, |v| v >= 0.0, ">= 0")
    }

    fn probability(&mut self, key: &str) -> Result<f64, ConfigError> {
        self.float(key, |v| (0.0..=1.0).contains(&v), "in [0, 1]")
    }

    fn finite(&mut self, key: &str) -> Result<f64, ConfigError> {
        self.float(key, |_| true, "finite")
    }

    fn count(&mut self, key: &str, min: u64) -> Result<u64, ConfigError> {
        self.check(key, "a non-negative integer", |s| s.parse::<u64>().ok(), |v| *v >= min, &format!(">= {min}"))
    }

    fn boolean(&mut self, key: &str) -> Result<bool, ConfigError> {
        self.parse_with(key, "`true` or `false`", |s| s.parse::<bool>().ok())
    }

    fn list<T>(&mut self, key: &str, what: &str, f: impl Fn(&str) -> Option<T>, ok: impl Fn(&T) -> bool, range: &str) -> Result<Vec<T>, ConfigError> {
        self.check(
            key,
            what,
            |s| s.split(',').map(|item| f(item.trim())).collect::<Option<Vec<T>>>(),
            |v: &Vec<T>| !v.is_empty() && v.iter().all(&ok),
            range,
        )
    }

    fn line_of(&self, key: &str) -> Option<usize> {
        self.entries.get(key).map(|e| e.line)
    }
}

fn parse_f64(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_pairs(s: &str) -> Option<Vec<(f64, f64)>> {
    s.split(',')
        .map(|pair| {
            let (a, b) = pair.trim().split_once(':')?;
            Some((parse_f64(a.trim())?, parse_f64(b.trim())?))
        })
        .collect()
}

impl FromStr for SimConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, ConfigError> {
        let mut doc = Document::parse(text)?;
        let canonical: Vec<(String, String)> =
            doc.entries.iter().map(|(k, e)| (k.clone(), e.value.clone())).collect();

        let spacing_um = doc.positive("register.spacing_um")?;
        let idle = IdleErrorModel {
            tau_depump_ms: doc.positive("idle.tau_depump_ms")?,
            tau_vacuum_ms: doc.positive("idle.tau_vacuum_ms")?,
        };
        let cavity = CavityParams {
            two_g0_mhz: doc.non_negative("cavity.two_g0_mhz")?,
            kappa_mhz: doc.positive("cavity.kappa_mhz")?,
            gamma_mhz: doc.positive("cavity.gamma_mhz")?,
            finesse: doc.positive("cavity.finesse")?,
            waist_um: doc.positive("cavity.waist_um")?,
        };
        let detector = DetectorModel {
            dark_rate_per_s: doc.non_negative("detector.dark_rate_per_s")?,
            n_detectors: doc.count("detector.n_detectors", 1)? as u32,
            quantum_efficiency: doc.float("detector.quantum_efficiency", |v| v > 0.0 && v <= 1.0, "in (0, 1]")?,
        };
        let sub_line = doc.line_of("photon.sub_interval_us");
        let photon = PhotonModel {
            bright_mean_full: doc.positive("photon.bright_mean_full_photons")?,
            full_interval_us: doc.positive("photon.full_interval_us")?,
            sub_interval_us: doc.positive("photon.sub_interval_us")?,
            threshold: doc.count("photon.threshold_counts", 1)? as u32,
            detector,
        };
        photon
            .validate()
            .map_err(|e| err(sub_line, Some("photon.sub_interval_us"), strip_prefix(e)))?;
        let adaptive = doc.boolean("photon.adaptive")?;

        let probe = ProbeConfig {
            tweezer_depth_mk: doc.positive("probe.tweezer_depth_mk")?,
            detuning_pa_mhz: doc.finite("probe.detuning_pa_mhz")?,
            detuning_pc_mhz: doc.finite("probe.detuning_pc_mhz")?,
        };
        let full_interval_loss_factor = doc.float("probe.full_interval_loss_factor", |v| v >= 1.0, ">= 1")?;

        // Table rows: every section named table_row_<n>, ordered by n.
        let mut row_ids: Vec<(u64, String)> = doc
            .entries
            .keys()
            .filter_map(|k| {
                let section = k.split_once('.')?.0;
                let n = section.strip_prefix("table_row_")?.parse::<u64>().ok()?;
                Some((n, section.to_owned()))
            })
            .collect();
        row_ids.sort();
        row_ids.dedup();
        if row_ids.is_empty() {
            return Err(err(None, Some("table_row_1"), "at least one [table_row_<n>] section is required"));
        }
        let mut rows = Vec::with_capacity(row_ids.len());
        for (_, section) in &row_ids {
            let k = |name: &str| format!("{section}.{name}");
            rows.push(ErrorRow {
                probe: ProbeConfig::new(doc.positive(&k("tweezer_depth_mk"))?, doc.finite(&k("detuning_pc_mhz"))?),
                infidelity_f1: doc.probability(&k("infidelity_f1"))?,
                loss_f1: doc.probability(&k("loss_f1"))?,
                infidelity_f2: doc.probability(&k("infidelity_f2"))?,
                loss_f2: doc.probability(&k("loss_f2"))?,
            });
        }
        let table = MeasurementErrorTable::new(rows).map_err(|e| err(None, Some("table_row_*"), strip_prefix(e)))?;
        let probe_line = doc.line_of("probe.detuning_pc_mhz");
        table
            .lookup(&probe)
            .map_err(|e| err(probe_line, Some("probe"), strip_prefix(e)))?;

        let supp_line = doc.line_of("hiding.suppression_points_mw");
        let hiding = HidingModel {
            depump_per_interval_unhidden: doc.probability("hiding.depump_per_interval_unhidden")?,
            suppression_points: doc.parse_with("hiding.suppression_points_mw", "power_mw:factor pairs", parse_pairs)?,
            background_floor: doc.probability("hiding.background_floor_per_interval")?,
            beam_waist_um: doc.positive("hiding.beam_waist_um")?,
            shift_slope_mhz_per_uw: doc.non_negative("hiding.shift_slope_mhz_per_uw")?,
            residual_at_10um: doc.float("hiding.residual_at_10um", |v| (0.0..1.0).contains(&v), "in [0, 1)")?,
        };
        hiding
            .validate()
            .map_err(|e| err(supp_line, Some("hiding"), strip_prefix(e)))?;

        let histogram = HistogramParams {
            max_counts: doc.count("histogram.max_counts", 1)? as usize,
            trials: doc.count("histogram.trials", 1)?,
        };

        let depump = DepumpParams {
            array_sizes: doc.list("depump_scaling.array_sizes", "a list of integers", |s| s.parse::<usize>().ok(), |v| *v >= 1, "a list of integers >= 1")?,
            hiding_power_mw: doc.non_negative("depump_scaling.hiding_power_mw")?,
            adaptive_rounds: doc.boolean("depump_scaling.adaptive_rounds")?,
            rounds: doc.count("depump_scaling.rounds", 1)? as usize,
            trials: doc.count("depump_scaling.trials", 1)?,
        };

        let search = SearchParams {
            sizes: doc.list("search.sizes", "a list of integers", |s| s.parse::<usize>().ok(), |v| *v >= 1, "a list of integers >= 1")?,
            probabilities: doc.list("search.probabilities", "a list of numbers", parse_f64, |p| (0.0..=1.0).contains(p), "a list of values in [0, 1]")?,
            placement: doc.parse_with("search.placement", "at_most_one_bright or independent_per_site", |s| match s {
                "at_most_one_bright" => Some(Placement::AtMostOneBright),
                "independent_per_site" => Some(Placement::IndependentPerSite),
                _ => None,
            })?,
            strategies: doc.list("search.strategies", "a list of strategy names", |s| s.parse().ok(), |_| true, "non-empty")?,
            noise: CheckNoise {
                false_positive: doc.probability("search.false_positive")?,
                false_negative: doc.probability("search.false_negative")?,
            },
            trials: doc.count("search.trials", 1)?,
        };

        let code = CodeParams {
            base: CodeConfig {
                distance: 1,
                rounds: doc.count("code.rounds", 1)? as usize,
                idle_ms: doc.non_negative("code.idle_ms")?,
                per_round_flip: doc.probability("code.per_round_flip")?,
                per_round_loss: doc.probability("code.per_round_loss")?,
                round_overhead_ms: doc.non_negative("code.round_overhead_ms")?,
            },
            mode: doc.parse_with("code.mode", "abstract or full_physics", |s| match s {
                "abstract" => Some(CodeMode::Abstract),
                "full_physics" => Some(CodeMode::FullPhysics),
                _ => None,
            })?,
            hiding_power_mw: doc.non_negative("code.hiding_power_mw")?,
        };

        let odd = |d: &usize| *d % 2 == 1;
        let error_scaling = ErrorScalingParams {
            distances: doc.list("error_scaling.distances", "a list of integers", |s| s.parse::<usize>().ok(), odd, "a list of odd integers")?,
            flip_sweep: doc.list("error_scaling.flip_sweep", "a list of numbers", parse_f64, |p| (0.0..=1.0).contains(p), "a list of values in [0, 1]")?,
            post_select: doc.parse_with("error_scaling.post_select", "all, full or an integer", |s| match s {
                "all" => Some(PostSelect::All),
                "full" => Some(PostSelect::FullDistance),
                n => n.parse::<usize>().ok().map(PostSelect::Survivors),
            })?,
            p_phys_source: doc.parse_with("error_scaling.p_phys_source", "nominal or measured", |s| match s {
                "nominal" => Some(PhysSource::Nominal),
                "measured" => Some(PhysSource::Measured),
                _ => None,
            })?,
            trials: doc.count("error_scaling.trials", 1)?,
        };

        let lifetime = LifetimeParams {
            distances: doc.list("lifetime.distances", "a list of integers", |s| s.parse::<usize>().ok(), odd, "a list of odd integers")?,
            plateau: doc.parse_with("lifetime.plateau", "coin_toss or free", |s| match s {
                "coin_toss" => Some(PlateauModel::CoinToss),
                "free" => Some(PlateauModel::Free),
                _ => None,
            })?,
            trials: doc.count("lifetime.trials", 1)?,
        };

        if let Some((key, e)) = doc.entries.iter().next() {
            return Err(err(Some(e.line), Some(key), "unknown key"));
        }

        Ok(SimConfig {
            spacing_um,
            idle,
            cavity,
            photon,
            adaptive,
            probe,
            full_interval_loss_factor,
            table,
            hiding,
            histogram,
            depump,
            search,
            code,
            error_scaling,
            lifetime,
            canonical,
        })
    }
}

fn strip_prefix(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

impl SimConfig {
    /// Parsed entries as `section.key = value`, sorted by key.
    pub fn canonical(&self) -> &[(String, String)] {
        &self.canonical
    }
}

/// Help text listing every configuration key.
pub fn keys_help() -> String {
    let mut out = String::from("Configuration keys (all required; see the shipped defaults.cfg):\n");
    for (k, d) in KEY_DOCS {
        out.push_str(&format!("  {k:<40} {d}\n"));
    }
    out.push_str("  Sections [table_row_<n>] (one per error-table row) each need:\n");
    for (k, d) in TABLE_ROW_KEYS {
        out.push_str(&format!("    {k:<38} {d}\n"));
    }
    out
}
