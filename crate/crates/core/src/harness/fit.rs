//! Least-squares fits: straight lines, power laws, and saturating
//! exponentials p(t) = p∞·(1 − e^(−t/τ)).

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub intercept_stderr: f64,
    pub slope_stderr: f64,
    pub residual_ss: f64,
}

/// Ordinary least squares `y = a + b·x` with standard errors from the
/// residual variance (n − 2 degrees of freedom).
pub fn fit_linear(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() {
        return Err(Error::Fit(format!("{} x values but {} y values", xs.len(), ys.len())));
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::Fit(format!("linear fit needs at least 3 points, got {n}")));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite input".into()));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= f64::EPSILON * mx.abs().max(1.0) * nf {
        return Err(Error::Fit("degenerate x range".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual_ss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let s2 = residual_ss / (nf - 2.0);
    Ok(LinearFit {
        intercept,
        slope,
        intercept_stderr: (s2 * (1.0 / nf + mx * mx / sxx)).sqrt(),
        slope_stderr: (s2 / sxx).sqrt(),
        residual_ss,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub exponent_stderr: f64,
    pub prefactor: f64,
}

/// Unweighted log-log least squares `y = c·x^k`.
pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Result<PowerLawFit> {
    if xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return Err(Error::Fit("power-law fit requires strictly positive data".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let lin = fit_linear(&lx, &ly)?;
    Ok(PowerLawFit {
        exponent: lin.slope,
        exponent_stderr: lin.slope_stderr,
        prefactor: lin.intercept.exp(),
    })
}

/// Why a saturating-exponential fit should not be trusted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitFlag {
    /// All observations zero; τ is unidentifiable.
    Degenerate,
    /// The optimum sits at the edge of the τ search range (typically: no
    /// plateau within the observed window).
    TauAtSearchEdge,
    /// Iteration cap reached before the bracket closed.
    NotConverged,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SaturatingFit {
    pub p_inf: f64,
    pub tau: f64,
    /// Zero when `p_inf` was held fixed.
    pub p_inf_stderr: f64,
    pub tau_stderr: f64,
    pub residual_ss: f64,
    pub iterations: usize,
    pub flag: Option<FitFlag>,
}

impl SaturatingFit {
    pub fn is_trusted(&self) -> bool {
        self.flag.is_none()
    }

    pub fn eval(&self, t: f64) -> f64 {
        -self.p_inf * (-t / self.tau).exp_m1()
    }
}

const MAX_ITERATIONS: usize = 10_000;
const GRID_POINTS: usize = 240;
const LOG_TAU_TOL: f64 = 1e-11;

/// Fits p(t) = p∞·(1 − e^(−t/τ)) with p∞ free. τ is found by a log-spaced
/// grid scan followed by golden-section refinement; for each τ the optimal
/// p∞ is solved in closed form.
pub fn fit_saturating_exponential(ts: &[f64], ps: &[f64]) -> Result<SaturatingFit> {
    fit_saturating(ts, ps, None)
}

/// As [`fit_saturating_exponential`] with the plateau held at `p_inf`.
pub fn fit_saturating_exponential_fixed(ts: &[f64], ps: &[f64], p_inf: f64) -> Result<SaturatingFit> {
    if !(p_inf > 0.0) || !p_inf.is_finite() {
        return Err(Error::Fit(format!("fixed plateau must be positive, got {p_inf}")));
    }
    fit_saturating(ts, ps, Some(p_inf))
}

fn saturation(t: f64, tau: f64) -> f64 {
    -(-t / tau).exp_m1()
}

/// Best p∞ and residual sum of squares for a given τ.
fn profile(ts: &[f64], ps: &[f64], tau: f64, fixed: Option<f64>) -> (f64, f64) {
    let p_inf = fixed.unwrap_or_else(|| {
        let (num, den) = ts.iter().zip(ps).fold((0.0, 0.0), |(num, den), (&t, &p)| {
            let g = saturation(t, tau);
            (num + p * g, den + g * g)
        });
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    });
    let rss = ts
        .iter()
        .zip(ps)
        .map(|(&t, &p)| (p - p_inf * saturation(t, tau)).powi(2))
        .sum();
    (p_inf, rss)
}

fn fit_saturating(ts: &[f64], ps: &[f64], fixed: Option<f64>) -> Result<SaturatingFit> {
    if ts.len() != ps.len() {
        return Err(Error::Fit(format!("{} times but {} probabilities", ts.len(), ps.len())));
    }
    if ts.len() < 5 {
        return Err(Error::Fit(format!("saturating fit needs at least 5 points, got {}", ts.len())));
    }
    if ps.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::Fit("probabilities must lie in [0, 1]".into()));
    }
    if ts.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
        return Err(Error::Fit("times must be finite and non-negative".into()));
    }
    let t_pos_min = ts.iter().copied().filter(|&t| t > 0.0).fold(f64::INFINITY, f64::min);
    let t_max = ts.iter().copied().fold(0.0, f64::max);
    if !t_pos_min.is_finite() {
        return Err(Error::Fit("need at least one positive time".into()));
    }

    if ps.iter().all(|&p| p == 0.0) && fixed.is_none() {
        return Ok(SaturatingFit {
            p_inf: 0.0,
            tau: f64::NAN,
            p_inf_stderr: f64::NAN,
            tau_stderr: f64::NAN,
            residual_ss: 0.0,
            iterations: 0,
            flag: Some(FitFlag::Degenerate),
        });
    }

    let lo = (t_pos_min / 100.0).ln();
    let hi = (t_max * 100.0).ln();
    let rss_at = |u: f64| profile(ts, ps, u.exp(), fixed).1;

    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    let (best, _) = (0..GRID_POINTS)
        .map(|k| (k, rss_at(lo + step * k as f64)))
        .fold((0, f64::INFINITY), |acc, (k, r)| if r < acc.1 { (k, r) } else { acc });
    let mut flag = None;
    if best == 0 || best == GRID_POINTS - 1 {
        flag = Some(FitFlag::TauAtSearchEdge);
    }

    // Golden-section on ln τ within the neighbouring grid cells.
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = lo + step * best.saturating_sub(1) as f64;
    let mut b = lo + step * (best + 1).min(GRID_POINTS - 1) as f64;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (rss_at(c), rss_at(d));
    let mut iterations = 0;
    while (b - a) > LOG_TAU_TOL && iterations < MAX_ITERATIONS {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = rss_at(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = rss_at(d);
        }
        iterations += 1;
    }
    if iterations >= MAX_ITERATIONS && flag.is_none() {
        flag = Some(FitFlag::NotConverged);
    }
    let tau = (0.5 * (a + b)).exp();
    let (p_inf, residual_ss) = profile(ts, ps, tau, fixed);

    // Linearised covariance σ²·(JᵀJ)⁻¹.
    let n = ts.len() as f64;
    let dof = n - if fixed.is_some() { 1.0 } else { 2.0 };
    let s2 = residual_ss / dof;
    let (mut jpp, mut jpt, mut jtt) = (0.0, 0.0, 0.0);
    for &t in ts {
        let g = saturation(t, tau);
        let dtau = -p_inf * t / (tau * tau) * (-t / tau).exp();
        jpp += g * g;
        jpt += g * dtau;
        jtt += dtau * dtau;
    }
    let (p_inf_stderr, tau_stderr) = if fixed.is_some() {
        (0.0, (s2 / jtt).sqrt())
    } else {
        let det = jpp * jtt - jpt * jpt;
        ((s2 * jtt / det).sqrt(), (s2 * jpp / det).sqrt())
    };

    Ok(SaturatingFit {
        p_inf,
        tau,
        p_inf_stderr,
        tau_stderr,
        residual_ss,
        iterations,
        flag,
    })
}
