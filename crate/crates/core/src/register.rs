//! Tweezer register: occupancy and hyperfine state of an ordered site array,
//! with idling errors (symmetric depump/repump relaxation and vacuum loss).

use rand::Rng;

use crate::error::{Error, Result};

/// Ground-state hyperfine manifold. `F1` is dark under the probe, `F2` bright.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HyperfineState {
    F1,
    F2,
}

impl HyperfineState {
    /// Logical encoding: bit 0 ↔ F1, bit 1 ↔ F2.
    pub fn from_bit(bit: bool) -> Self {
        if bit {
            HyperfineState::F2
        } else {
            HyperfineState::F1
        }
    }

    pub fn bit(self) -> bool {
        self == HyperfineState::F2
    }

    pub fn is_bright(self) -> bool {
        self == HyperfineState::F2
    }

    pub fn flipped(self) -> Self {
        match self {
            HyperfineState::F1 => HyperfineState::F2,
            HyperfineState::F2 => HyperfineState::F1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SiteState {
    Vacant,
    Occupied(HyperfineState),
}

impl SiteState {
    pub const F1: SiteState = SiteState::Occupied(HyperfineState::F1);
    pub const F2: SiteState = SiteState::Occupied(HyperfineState::F2);

    pub fn is_occupied(self) -> bool {
        matches!(self, SiteState::Occupied(_))
    }

    pub fn is_bright(self) -> bool {
        self == SiteState::F2
    }

    pub fn hyperfine(self) -> Option<HyperfineState> {
        match self {
            SiteState::Vacant => None,
            SiteState::Occupied(h) => Some(h),
        }
    }
}

/// Default inter-site spacing in µm.
pub const DEFAULT_SPACING_UM: f64 = 17.0;

/// An ordered array of tweezer sites. Site index identifies the physical tweezer.
#[derive(Clone, Debug, PartialEq)]
pub struct Register {
    sites: Vec<SiteState>,
    spacing_um: f64,
}

impl Register {
    /// An empty register of `n` vacant sites.
    pub fn new(n: usize, spacing_um: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("register needs at least one site"));
        }
        if !(spacing_um > 0.0) || !spacing_um.is_finite() {
            return Err(Error::config(format!("site spacing must be > 0, got {spacing_um}")));
        }
        Ok(Self { sites: vec![SiteState::Vacant; n], spacing_um })
    }

    /// A register with every site set to `state`, at the default spacing.
    pub fn filled(n: usize, state: SiteState) -> Result<Self> {
        let mut reg = Self::new(n, DEFAULT_SPACING_UM)?;
        reg.sites.fill(state);
        Ok(reg)
    }

    pub fn from_sites(sites: Vec<SiteState>, spacing_um: f64) -> Result<Self> {
        let mut reg = Self::new(sites.len(), spacing_um)?;
        reg.sites = sites;
        Ok(reg)
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn spacing_um(&self) -> f64 {
        self.spacing_um
    }

    pub fn sites(&self) -> &[SiteState] {
        &self.sites
    }

    pub fn site(&self, index: usize) -> SiteState {
        self.sites[index]
    }

    /// Sets the hyperfine state of an occupied site. Vacant sites stay vacant:
    /// optical pumping cannot create an atom.
    pub fn pump(&mut self, index: usize, state: HyperfineState) {
        if self.sites[index].is_occupied() {
            self.sites[index] = SiteState::Occupied(state);
        }
    }

    /// Replaces a site's state outright (used for bookkeeping in readout).
    pub(crate) fn set(&mut self, index: usize, state: SiteState) {
        self.sites[index] = state;
    }

    pub fn lose(&mut self, index: usize) {
        self.sites[index] = SiteState::Vacant;
    }

    pub fn occupied_count(&self) -> usize {
        self.sites.iter().filter(|s| s.is_occupied()).count()
    }

    pub fn occupied_indices(&self) -> Vec<usize> {
        self.sites
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_occupied())
            .map(|(i, _)| i)
            .collect()
    }

    /// Overwrites every site with `pattern`. Deterministic.
    pub fn prepare(&mut self, pattern: &[SiteState]) -> Result<()> {
        if pattern.len() != self.sites.len() {
            return Err(Error::config(format!(
                "pattern has {} entries for a register of {} sites",
                pattern.len(),
                self.sites.len()
            )));
        }
        self.sites.copy_from_slice(pattern);
        Ok(())
    }

    /// Idles every occupied site for `duration_ms`: each atom flips with
    /// [`IdleErrorModel::flip_probability`] and, independently, is lost with
    /// [`IdleErrorModel::loss_probability`]. Loss is applied after the flip.
    pub fn idle<R: Rng + ?Sized>(
        &mut self,
        duration_ms: f64,
        model: &IdleErrorModel,
        rng: &mut R,
    ) -> Result<()> {
        if !(duration_ms >= 0.0) {
            return Err(Error::config(format!("idle duration must be >= 0, got {duration_ms}")));
        }
        let p_flip = model.flip_probability(duration_ms);
        let p_loss = model.loss_probability(duration_ms);
        for site in self.sites.iter_mut() {
            if let SiteState::Occupied(h) = *site {
                let h = if rng.random_bool(p_flip) { h.flipped() } else { h };
                *site = if rng.random_bool(p_loss) {
                    SiteState::Vacant
                } else {
                    SiteState::Occupied(h)
                };
            }
        }
        Ok(())
    }
}

/// Idling error time constants. `f64::INFINITY` disables a channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdleErrorModel {
    pub tau_depump_ms: f64,
    pub tau_vacuum_ms: f64,
}

impl Default for IdleErrorModel {
    fn default() -> Self {
        Self { tau_depump_ms: 150.0, tau_vacuum_ms: 800.0 }
    }
}

impl IdleErrorModel {
    pub fn new(tau_depump_ms: f64, tau_vacuum_ms: f64) -> Result<Self> {
        for (name, v) in [("tau_depump_ms", tau_depump_ms), ("tau_vacuum_ms", tau_vacuum_ms)] {
            if !(v > 0.0) {
                return Err(Error::config(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(Self { tau_depump_ms, tau_vacuum_ms })
    }

    /// Relaxation toward an equal F1/F2 mixture: ½(1 − e^(−t/τ_depump)).
    pub fn flip_probability(&self, duration_ms: f64) -> f64 {
        -0.5 * (-duration_ms / self.tau_depump_ms).exp_m1()
    }

    pub fn loss_probability(&self, duration_ms: f64) -> f64 {
        -(-duration_ms / self.tau_vacuum_ms).exp_m1()
    }

    /// Combined idling lifetime, rates adding: 1 / (1/τ_depump + 1/τ_vacuum).
    pub fn combined_lifetime_ms(&self) -> f64 {
        1.0 / (1.0 / self.tau_depump_ms + 1.0 / self.tau_vacuum_ms)
    }
}
