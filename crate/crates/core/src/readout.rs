//! Site-selective cavity readout: single-site hyperfine + occupation
//! measurements and sequential readout of an array with hiding beams.

use std::collections::HashSet;

use rand::Rng;

use crate::error::{Error, Result};
use crate::photon::{Emitter, IntervalOutcome, PhotonModel};
use crate::register::{HyperfineState, Register, SiteState};

/// Probe settings that select a row of the measurement error table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeConfig {
    pub tweezer_depth_mk: f64,
    /// Probe-atom detuning. Metadata; the table is keyed on depth and Δ_pc.
    pub detuning_pa_mhz: f64,
    /// Probe-cavity detuning.
    pub detuning_pc_mhz: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { tweezer_depth_mk: 0.25, detuning_pa_mhz: -5.0, detuning_pc_mhz: -5.0 }
    }
}

impl ProbeConfig {
    pub fn new(tweezer_depth_mk: f64, detuning_pc_mhz: f64) -> Self {
        Self { tweezer_depth_mk, detuning_pc_mhz, ..Self::default() }
    }

    fn same_key(&self, other: &ProbeConfig) -> bool {
        (self.tweezer_depth_mk - other.tweezer_depth_mk).abs() < 1e-9
            && (self.detuning_pc_mhz - other.detuning_pc_mhz).abs() < 1e-9
    }
}

/// Per-measurement misclassification and loss probabilities for one probe
/// setting, as measured with adaptive termination.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorRow {
    pub probe: ProbeConfig,
    pub infidelity_f1: f64,
    pub loss_f1: f64,
    pub infidelity_f2: f64,
    pub loss_f2: f64,
}

impl ErrorRow {
    pub fn infidelity(&self, state: HyperfineState) -> f64 {
        match state {
            HyperfineState::F1 => self.infidelity_f1,
            HyperfineState::F2 => self.infidelity_f2,
        }
    }

    pub fn loss(&self, state: HyperfineState) -> f64 {
        match state {
            HyperfineState::F1 => self.loss_f1,
            HyperfineState::F2 => self.loss_f2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementErrorTable {
    rows: Vec<ErrorRow>,
}

impl Default for MeasurementErrorTable {
    /// Measured single-atom rows: depth (mK), Δ_pc (MHz), then infidelity and
    /// loss for F=1 and F=2.
    fn default() -> Self {
        let row = |depth, pc, i1, l1, i2, l2| ErrorRow {
            probe: ProbeConfig::new(depth, pc),
            infidelity_f1: i1,
            loss_f1: l1,
            infidelity_f2: i2,
            loss_f2: l2,
        };
        Self {
            rows: vec![
                row(0.20, -3.0, 0.0017, 0.030, 0.003, 0.038),
                row(0.25, -5.0, 0.0039, 0.021, 0.008, 0.030),
                row(0.25, -11.0, 0.0030, 0.007, 0.026, 0.011),
                row(0.25, -17.0, 0.0036, 0.003, 0.039, 0.006),
            ],
        }
    }
}

impl MeasurementErrorTable {
    pub fn new(rows: Vec<ErrorRow>) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            for v in [r.infidelity_f1, r.loss_f1, r.infidelity_f2, r.loss_f2] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::config(format!("table row {i}: probability {v} outside [0, 1]")));
                }
            }
            if !(r.probe.tweezer_depth_mk > 0.0) {
                return Err(Error::config(format!("table row {i}: tweezer depth must be > 0")));
            }
            if rows[..i].iter().any(|o| o.probe.same_key(&r.probe)) {
                return Err(Error::config(format!("table row {i}: duplicate probe configuration")));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[ErrorRow] {
        &self.rows
    }

    pub fn lookup(&self, probe: &ProbeConfig) -> Result<&ErrorRow> {
        self.rows.iter().find(|r| r.probe.same_key(probe)).ok_or_else(|| {
            Error::config(format!(
                "no error-table row for depth {} mK, detuning_pc {} MHz",
                probe.tweezer_depth_mk, probe.detuning_pc_mhz
            ))
        })
    }
}

/// Hiding-beam model: suppression of probe-induced depumping on hidden atoms
/// and the spatial light-shift profile of one hiding beam.
#[derive(Clone, Debug, PartialEq)]
pub struct HidingModel {
    /// Depump probability per probe interval for an unhidden bright atom.
    pub depump_per_interval_unhidden: f64,
    /// `(power mW, suppression factor)` calibration points, ascending in power.
    pub suppression_points: Vec<(f64, f64)>,
    /// Background depump per interval from the trap light alone.
    pub background_floor: f64,
    pub beam_waist_um: f64,
    pub shift_slope_mhz_per_uw: f64,
    /// Light shift at 10 µm from the beam centre, relative to the centre.
    pub residual_at_10um: f64,
}

impl Default for HidingModel {
    fn default() -> Self {
        Self {
            depump_per_interval_unhidden: 0.044,
            suppression_points: vec![(0.0, 1.0), (0.4, 5.2)],
            background_floor: 0.0008,
            beam_waist_um: 4.0,
            shift_slope_mhz_per_uw: 1.0,
            residual_at_10um: 0.01,
        }
    }
}

impl HidingModel {
    pub fn validate(&self) -> Result<()> {
        let pts = &self.suppression_points;
        if pts.is_empty() {
            return Err(Error::config("hiding model needs at least one suppression point"));
        }
        for w in pts.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::config("suppression points must be strictly ascending in power"));
            }
            if w[1].1 < w[0].1 {
                return Err(Error::config("suppression factor must be non-decreasing in power"));
            }
        }
        if pts.iter().any(|&(p, s)| !(p >= 0.0) || !(s >= 1.0)) {
            return Err(Error::config("suppression points need power >= 0 and factor >= 1"));
        }
        if !(0.0..=1.0).contains(&self.depump_per_interval_unhidden)
            || !(0.0..=1.0).contains(&self.background_floor)
        {
            return Err(Error::config("depump probabilities must lie in [0, 1]"));
        }
        if self.background_floor > self.depump_per_interval_unhidden {
            return Err(Error::config("background floor exceeds the unhidden depump rate"));
        }
        if !(self.beam_waist_um > 0.0) || !(0.0..1.0).contains(&self.residual_at_10um) {
            return Err(Error::config("beam waist must be > 0 and residual in [0, 1)"));
        }
        Ok(())
    }

    /// Suppression factor S(power): ln S is piecewise linear between points
    /// and extrapolated with the last segment's slope.
    pub fn suppression(&self, power_mw: f64) -> f64 {
        let pts = &self.suppression_points;
        if pts.len() == 1 || power_mw <= pts[0].0 {
            return pts[0].1;
        }
        let seg = pts
            .windows(2)
            .position(|w| power_mw <= w[1].0)
            .unwrap_or(pts.len() - 2);
        let (p0, s0) = pts[seg];
        let (p1, s1) = pts[seg + 1];
        let frac = (power_mw - p0) / (p1 - p0);
        (s0.ln() + frac * (s1.ln() - s0.ln())).exp()
    }

    /// Per-interval depump probability of a bright atom hidden with `power_mw`.
    pub fn hidden_depump_probability(&self, power_mw: f64) -> Result<f64> {
        if !(power_mw >= 0.0) {
            return Err(Error::config(format!("hiding power must be >= 0, got {power_mw}")));
        }
        Ok((self.depump_per_interval_unhidden / self.suppression(power_mw)).max(self.background_floor))
    }

    /// Light shift (MHz) at distance `r_um` from a beam of `power_uw`:
    /// a Gaussian core on a constant pedestal, normalised to
    /// `power·slope` at the centre and `residual_at_10um` of that at 10 µm.
    pub fn light_shift_profile(&self, power_uw: f64, r_um: f64) -> Result<f64> {
        if !(power_uw >= 0.0) || !(r_um >= 0.0) {
            return Err(Error::config("power and radius must be >= 0"));
        }
        let w2 = self.beam_waist_um * self.beam_waist_um;
        let gauss = |r: f64| (-2.0 * r * r / w2).exp();
        let pedestal = (self.residual_at_10um - gauss(10.0)) / (1.0 - self.residual_at_10um);
        let pedestal = pedestal.max(0.0);
        Ok(power_uw * self.shift_slope_mhz_per_uw * (gauss(r_um) + pedestal) / (1.0 + pedestal))
    }
}

/// Hyperfine interval, occupation interval, and what they imply.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SiteMeasurement {
    pub hyperfine: IntervalOutcome,
    pub occupation: IntervalOutcome,
    /// `Vacant` iff the occupation interval read dark; otherwise F2 iff the
    /// hyperfine interval read bright.
    pub inferred: SiteState,
}

impl SiteMeasurement {
    fn infer(hyperfine: IntervalOutcome, occupation: IntervalOutcome) -> SiteState {
        if !occupation.is_bright() {
            SiteState::Vacant
        } else if hyperfine.is_bright() {
            SiteState::F2
        } else {
            SiteState::F1
        }
    }
}

/// Default ratio of bright-state loss without and with adaptive termination.
pub const DEFAULT_FULL_INTERVAL_LOSS_FACTOR: f64 = 4.5;

/// A single-site measurement procedure with its error row resolved.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SiteReadout {
    pub row: ErrorRow,
    pub photon: PhotonModel,
    pub adaptive: bool,
    /// Multiplies bright-state loss when adaptive termination is off.
    pub full_interval_loss_factor: f64,
}

impl SiteReadout {
    pub fn new(probe: &ProbeConfig, table: &MeasurementErrorTable, photon: PhotonModel, adaptive: bool) -> Result<Self> {
        photon.validate()?;
        Ok(Self {
            row: *table.lookup(probe)?,
            photon,
            adaptive,
            full_interval_loss_factor: DEFAULT_FULL_INTERVAL_LOSS_FACTOR,
        })
    }

    pub fn with_full_interval_loss_factor(mut self, factor: f64) -> Result<Self> {
        if !(factor >= 1.0) {
            return Err(Error::config(format!("full-interval loss factor must be >= 1, got {factor}")));
        }
        self.full_interval_loss_factor = factor;
        Ok(self)
    }

    pub fn loss_probability(&self, state: HyperfineState) -> f64 {
        let base = self.row.loss(state);
        if state.is_bright() && !self.adaptive {
            (base * self.full_interval_loss_factor).min(1.0)
        } else {
            base
        }
    }

    /// Measures one site. Returns the record and the post-measurement site
    /// state (a misclassifying scattering event leaves the atom in the
    /// flipped state; loss empties the site). Re-preparing the atom is up to
    /// the caller.
    pub fn measure<R: Rng + ?Sized>(&self, site: SiteState, rng: &mut R) -> (SiteMeasurement, SiteState) {
        let (emitter, after) = match site {
            SiteState::Vacant => (Emitter::Dark, SiteState::Vacant),
            SiteState::Occupied(h) => {
                let effective = if rng.random_bool(self.row.infidelity(h)) { h.flipped() } else { h };
                let after = if rng.random_bool(self.loss_probability(h)) {
                    SiteState::Vacant
                } else {
                    SiteState::Occupied(effective)
                };
                (Emitter::from(SiteState::Occupied(effective)), after)
            }
        };
        let hyperfine = self.photon.sample_interval(emitter, self.adaptive, rng);
        let present = if site.is_occupied() { Emitter::Bright } else { Emitter::Dark };
        let occupation = self.photon.sample_interval(present, self.adaptive, rng);
        let inferred = SiteMeasurement::infer(hyperfine, occupation);
        (SiteMeasurement { hyperfine, occupation, inferred }, after)
    }
}

/// One-shot form of [`SiteReadout::measure`].
pub fn measure_site<R: Rng + ?Sized>(
    site: SiteState,
    probe: &ProbeConfig,
    table: &MeasurementErrorTable,
    photon: &PhotonModel,
    adaptive: bool,
    rng: &mut R,
) -> Result<(SiteMeasurement, SiteState)> {
    let readout = SiteReadout::new(probe, table, *photon, adaptive)?;
    Ok(readout.measure(site, rng))
}

/// Sequential readout of an array where every non-target atom is hidden.
#[derive(Clone, Debug, PartialEq)]
pub struct ArrayReadout {
    pub site: SiteReadout,
    pub hiding: HidingModel,
    pub hiding_power_mw: f64,
    hidden_depump: f64,
}

impl ArrayReadout {
    pub fn new(site: SiteReadout, hiding: HidingModel, hiding_power_mw: f64) -> Result<Self> {
        hiding.validate()?;
        let hidden_depump = hiding.hidden_depump_probability(hiding_power_mw)?;
        Ok(Self { site, hiding, hiding_power_mw, hidden_depump })
    }

    /// Per-interval depump probability of each hidden bright atom.
    pub fn hidden_depump(&self) -> f64 {
        self.hidden_depump
    }

    /// Measures `order` one site at a time. While a site is probed, every
    /// other bright atom depumps to F1 with the hidden probability. Sites
    /// marked in `skip` are not probed and cost no interval. Returns
    /// `(site index, measurement)` in probe order.
    pub fn read<R: Rng + ?Sized>(
        &self,
        register: &mut Register,
        order: &[usize],
        skip: Option<&[bool]>,
        rng: &mut R,
    ) -> Result<Vec<(usize, SiteMeasurement)>> {
        validate_order(register, order)?;
        if let Some(s) = skip {
            if s.len() != register.len() {
                return Err(Error::config("skip mask length must equal the register size"));
            }
        }
        let mut out = Vec::with_capacity(order.len());
        for &target in order {
            if skip.is_some_and(|s| s[target]) {
                continue;
            }
            for i in 0..register.len() {
                if i != target && register.site(i).is_bright() && rng.random_bool(self.hidden_depump) {
                    register.set(i, SiteState::F1);
                }
            }
            let (m, after) = self.site.measure(register.site(target), rng);
            register.set(target, after);
            out.push((target, m));
        }
        Ok(out)
    }

    /// Background-only idling (no probe) for `intervals` intervals.
    pub fn idle_intervals<R: Rng + ?Sized>(&self, register: &mut Register, intervals: u32, rng: &mut R) {
        for _ in 0..intervals {
            for i in 0..register.len() {
                if register.site(i).is_bright() && rng.random_bool(self.hiding.background_floor) {
                    register.set(i, SiteState::F1);
                }
            }
        }
    }
}

fn validate_order(register: &Register, order: &[usize]) -> Result<()> {
    let mut seen = HashSet::with_capacity(order.len());
    for &i in order {
        if i >= register.len() {
            return Err(Error::config(format!("site index {i} out of range for {} sites", register.len())));
        }
        if !seen.insert(i) {
            return Err(Error::config(format!("duplicate site index {i} in readout order")));
        }
    }
    Ok(())
}

/// Sequential readout with optional adaptive rounds: with `previous`, sites
/// inferred vacant in that round are skipped.
pub fn sequential_array_readout<R: Rng + ?Sized>(
    register: &mut Register,
    order: &[usize],
    readout: &ArrayReadout,
    previous: Option<&[(usize, SiteMeasurement)]>,
    rng: &mut R,
) -> Result<Vec<(usize, SiteMeasurement)>> {
    let skip = previous.map(|prev| {
        let mut mask = vec![false; register.len()];
        for (i, m) in prev {
            if let Some(slot) = mask.get_mut(*i) {
                *slot = m.inferred == SiteState::Vacant;
            }
        }
        mask
    });
    readout.read(register, order, skip.as_deref(), rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::photon::DetectorModel;
    use crate::stream::StreamKey;

    fn rng(seed: u64) -> crate::stream::TrialRng {
        StreamKey::new(seed, 0).trial_rng(0)
    }

    #[test]
    fn default_table_matches_measured_rows() {
        let t = MeasurementErrorTable::default();
        assert_eq!(t.rows().len(), 4);
        let r = t.lookup(&ProbeConfig::new(0.25, -5.0)).unwrap();
        assert_eq!((r.infidelity_f1, r.loss_f1, r.infidelity_f2, r.loss_f2), (0.0039, 0.021, 0.008, 0.030));
        assert_eq!(t.lookup(&ProbeConfig::new(0.25, -17.0)).unwrap().loss_f1, 0.003);
        assert!(t.lookup(&ProbeConfig::new(0.3, -5.0)).unwrap_err().is_config());
    }

    #[test]
    fn table_rejects_bad_rows() {
        let mut rows = MeasurementErrorTable::default().rows().to_vec();
        rows[0].loss_f2 = 1.5;
        assert!(MeasurementErrorTable::new(rows).is_err());
        let mut rows = MeasurementErrorTable::default().rows().to_vec();
        rows[1].probe = rows[0].probe;
        assert!(MeasurementErrorTable::new(rows).is_err());
    }

    #[test]
    fn hidden_depump_calibration_points() {
        let h = HidingModel::default();
        assert!((h.hidden_depump_probability(0.0).unwrap() - 0.044).abs() < 1e-15);
        assert!((h.hidden_depump_probability(0.4).unwrap() - 0.044 / 5.2).abs() < 1e-15);
        assert_eq!(h.hidden_depump_probability(2.0).unwrap(), 0.0008);
        assert!(h.hidden_depump_probability(-0.1).unwrap_err().is_config());
        // Log-linear midpoint: geometric mean of the bracketing factors.
        assert!((h.suppression(0.2) - 5.2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn light_shift_profile_points() {
        let h = HidingModel::default();
        assert!((h.light_shift_profile(100.0, 0.0).unwrap() - 100.0).abs() < 1e-9);
        let edge = h.light_shift_profile(100.0, 10.0).unwrap();
        assert!((edge - 1.0).abs() < 1e-9, "{edge}");
        assert_eq!(h.light_shift_profile(0.0, 3.0).unwrap(), 0.0);
        assert!(h.light_shift_profile(1.0, 17.0).unwrap() < edge);
    }

    #[test]
    fn hiding_model_validation() {
        let h = HidingModel { suppression_points: vec![(0.0, 2.0), (0.4, 1.5)], ..HidingModel::default() };
        assert!(h.validate().is_err());
        let h = HidingModel { background_floor: 0.1, ..HidingModel::default() };
        assert!(h.validate().is_err());
    }

    #[test]
    fn vacant_site_reads_vacant() {
        let ro = SiteReadout::new(&ProbeConfig::default(), &MeasurementErrorTable::default(), PhotonModel::default(), true)
            .unwrap();
        let mut r = rng(1);
        let vacant = (0..2000).filter(|_| ro.measure(SiteState::Vacant, &mut r).0.inferred == SiteState::Vacant).count();
        // Only a double dark count can fake an atom.
        assert!(vacant >= 1995);
    }

    #[test]
    fn perfect_readout_classifies_exactly() {
        let probe = ProbeConfig::new(1.0, 0.0);
        let row = ErrorRow { probe, infidelity_f1: 0.0, loss_f1: 0.0, infidelity_f2: 0.0, loss_f2: 0.0 };
        let table = MeasurementErrorTable::new(vec![row]).unwrap();
        let photon = PhotonModel {
            bright_mean_full: 200.0,
            detector: DetectorModel { dark_rate_per_s: 0.0, ..DetectorModel::default() },
            ..PhotonModel::default()
        };
        let mut r = rng(2);
        for adaptive in [false, true] {
            let ro = SiteReadout::new(&probe, &table, photon, adaptive).unwrap();
            for _ in 0..2000 {
                for s in [SiteState::Vacant, SiteState::F1, SiteState::F2] {
                    let (m, after) = ro.measure(s, &mut r);
                    assert_eq!(m.inferred, s);
                    assert_eq!(after, s);
                }
            }
        }
    }

    #[test]
    fn measure_site_error_rates() {
        let table = MeasurementErrorTable::default();
        let photon = PhotonModel::default();
        let probe = ProbeConfig::default();
        let n = 200_000u64;
        let key = StreamKey::new(21, 0);
        let (mut wrong, mut lost) = (0u64, 0u64);
        for t in 0..n {
            let (m, after) = measure_site(SiteState::F2, &probe, &table, &photon, true, &mut key.trial_rng(t)).unwrap();
            wrong += (m.inferred == SiteState::F1) as u64;
            lost += (after == SiteState::Vacant) as u64;
        }
        let ew = crate::harness::estimate::Estimate::binomial(wrong, n);
        let el = crate::harness::estimate::Estimate::binomial(lost, n);
        assert!(ew.agrees_with(0.008, 4.0), "{ew:?}");
        assert!(el.agrees_with(0.030, 4.0), "{el:?}");
        assert!(measure_site(SiteState::F2, &ProbeConfig::new(9.0, 1.0), &table, &photon, true, &mut rng(0))
            .unwrap_err()
            .is_config());
    }

    #[test]
    fn full_interval_scales_bright_loss() {
        let ro =
            SiteReadout::new(&ProbeConfig::default(), &MeasurementErrorTable::default(), PhotonModel::default(), false)
                .unwrap();
        assert!((ro.loss_probability(HyperfineState::F2) - 0.135).abs() < 1e-12);
        assert_eq!(ro.loss_probability(HyperfineState::F1), 0.021);
    }

    fn array(power: f64) -> ArrayReadout {
        let site =
            SiteReadout::new(&ProbeConfig::default(), &MeasurementErrorTable::default(), PhotonModel::default(), true)
                .unwrap();
        ArrayReadout::new(site, HidingModel::default(), power).unwrap()
    }

    #[test]
    fn array_readout_rejects_bad_orders() {
        let ar = array(2.0);
        let mut reg = Register::filled(3, SiteState::F2).unwrap();
        assert!(ar.read(&mut reg, &[0, 1, 1], None, &mut rng(0)).unwrap_err().is_config());
        assert!(ar.read(&mut reg, &[0, 3], None, &mut rng(0)).unwrap_err().is_config());
    }

    #[test]
    fn adaptive_rounds_skip_vacant_sites() {
        let ar = array(2.0);
        let mut reg = Register::from_sites(vec![SiteState::F2, SiteState::Vacant, SiteState::F2], 17.0).unwrap();
        let mut r = rng(4);
        let first = sequential_array_readout(&mut reg, &[0, 1, 2], &ar, None, &mut r).unwrap();
        assert_eq!(first.len(), 3);
        if first[1].1.inferred == SiteState::Vacant {
            let second = sequential_array_readout(&mut reg, &[0, 1, 2], &ar, Some(&first), &mut r).unwrap();
            assert!(second.iter().all(|(i, _)| *i != 1));
        }
    }

    #[test]
    fn single_site_has_no_hiding_exposure() {
        // With one site the per-round error is the bare single-atom SPAM.
        let ar = array(0.0);
        let key = StreamKey::new(31, 0);
        let n = 100_000u64;
        let mut wrong = 0;
        for t in 0..n {
            let mut reg = Register::filled(1, SiteState::F2).unwrap();
            let m = ar.read(&mut reg, &[0], None, &mut key.trial_rng(t)).unwrap();
            wrong += (m[0].1.inferred == SiteState::F1) as u64;
        }
        let e = crate::harness::estimate::Estimate::binomial(wrong, n);
        assert!(e.agrees_with(0.008, 4.0), "{e:?}");
    }

    proptest::proptest! {
        #[test]
        fn hiding_monotone_and_floored(a in 0.0f64..5.0, b in 0.0f64..5.0) {
            let h = HidingModel::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let plo = h.hidden_depump_probability(lo).unwrap();
            let phi = h.hidden_depump_probability(hi).unwrap();
            proptest::prop_assert!(phi <= plo);
            proptest::prop_assert!(phi >= h.background_floor);
        }
    }
}
