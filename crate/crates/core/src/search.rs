//! Locating bright atoms in a dark-biased register with group fluorescence
//! checks: one interval reveals whether any bright atom sits in the
//! unhidden subset.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::register::{Register, SiteState};

/// How bright atoms are placed in a search problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Placement {
    /// With probability p exactly one uniformly chosen site is bright.
    AtMostOneBright,
    /// Every site is bright independently with probability p.
    IndependentPerSite,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchProblem {
    pub n: usize,
    pub p: f64,
    pub placement: Placement,
}

impl SearchProblem {
    pub fn new(n: usize, p: f64, placement: Placement) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("search register needs at least one site"));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::config(format!("bright probability must lie in [0, 1], got {p}")));
        }
        Ok(Self { n, p, placement })
    }

    /// A register of dark atoms with bright atoms drawn per the placement.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Register {
        let mut sites = vec![SiteState::F1; self.n];
        match self.placement {
            Placement::AtMostOneBright => {
                if rng.random_bool(self.p) {
                    sites[rng.random_range(0..self.n)] = SiteState::F2;
                }
            }
            Placement::IndependentPerSite => {
                for s in sites.iter_mut() {
                    if rng.random_bool(self.p) {
                        *s = SiteState::F2;
                    }
                }
            }
        }
        Register::from_sites(sites, crate::register::DEFAULT_SPACING_UM).expect("n >= 1")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SearchStrategy {
    /// Every site read singly: always N intervals.
    DeterministicSequential,
    /// One global check, then every site singly iff it was positive.
    GlobalCheckThenSequential,
    /// Global check, then recursive bisection of positive subsets.
    PartitionedBinary,
}

impl SearchStrategy {
    pub const ALL: [SearchStrategy; 3] = [
        SearchStrategy::DeterministicSequential,
        SearchStrategy::GlobalCheckThenSequential,
        SearchStrategy::PartitionedBinary,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SearchStrategy::DeterministicSequential => "deterministic_sequential",
            SearchStrategy::GlobalCheckThenSequential => "global_check_then_sequential",
            SearchStrategy::PartitionedBinary => "partitioned_binary",
        }
    }
}

impl fmt::Display for SearchStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SearchStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown search strategy `{s}`")))
    }
}

/// False-positive / false-negative rates of a group check.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CheckNoise {
    pub false_positive: f64,
    pub false_negative: f64,
}

impl CheckNoise {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.false_positive) || !(0.0..=1.0).contains(&self.false_negative) {
            return Err(Error::config("check error rates must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.false_positive == 0.0 && self.false_negative == 0.0
    }
}

/// One group check: does `subset` contain a bright atom?
pub fn group_check<R: Rng + ?Sized>(
    register: &Register,
    subset: &[usize],
    noise: Option<&CheckNoise>,
    rng: &mut R,
) -> Result<bool> {
    if subset.is_empty() {
        return Err(Error::config("group check needs a non-empty subset"));
    }
    if let Some(&bad) = subset.iter().find(|&&i| i >= register.len()) {
        return Err(Error::config(format!("site index {bad} out of range")));
    }
    Ok(checked(register, subset, noise, rng))
}

fn checked<R: Rng + ?Sized>(register: &Register, subset: &[usize], noise: Option<&CheckNoise>, rng: &mut R) -> bool {
    let truth = subset.iter().any(|&i| register.site(i).is_bright());
    match noise {
        Some(n) if !n.is_noiseless() => {
            let flip = if truth { n.false_negative } else { n.false_positive };
            truth ^ rng.random_bool(flip)
        }
        _ => truth,
    }
}

/// How a reported bright site was established.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Evidence {
    /// A singleton query came back positive.
    SingletonQuery,
    /// A positive parent whose other child queried negative.
    Elimination,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub bright_sites: BTreeSet<usize>,
    pub evidence: Vec<(usize, Evidence)>,
    /// Every query in order: (subset, outcome).
    pub transcript: Vec<(Vec<usize>, bool)>,
}

impl SearchResult {
    pub fn intervals_used(&self) -> usize {
        self.transcript.len()
    }
}

struct Searcher<'a, R: Rng + ?Sized> {
    register: &'a Register,
    noise: Option<&'a CheckNoise>,
    assume: Placement,
    rng: &'a mut R,
    result: SearchResult,
}

impl<R: Rng + ?Sized> Searcher<'_, R> {
    fn query(&mut self, subset: Vec<usize>) -> bool {
        let outcome = checked(self.register, &subset, self.noise, self.rng);
        self.result.transcript.push((subset, outcome));
        outcome
    }

    fn found(&mut self, site: usize, evidence: Evidence) {
        if self.result.bright_sites.insert(site) {
            self.result.evidence.push((site, evidence));
        }
    }

    fn sequential(&mut self) {
        for i in 0..self.register.len() {
            if self.query(vec![i]) {
                self.found(i, Evidence::SingletonQuery);
            }
        }
    }

    /// Bisects `lo..hi`. `known` carries how the range was established
    /// positive, or `None` if it still needs a query.
    fn bisect(&mut self, lo: usize, hi: usize, known: Option<Evidence>) {
        let evidence = match known {
            Some(e) => e,
            None => {
                if !self.query((lo..hi).collect()) {
                    return;
                }
                Evidence::SingletonQuery
            }
        };
        if hi - lo == 1 {
            self.found(lo, evidence);
            return;
        }
        let mid = lo + (hi - lo).div_ceil(2);
        if self.query((lo..mid).collect()) {
            self.bisect(lo, mid, Some(Evidence::SingletonQuery));
            if self.assume == Placement::IndependentPerSite {
                self.bisect(mid, hi, None);
            }
        } else {
            self.bisect(mid, hi, Some(Evidence::Elimination));
        }
    }
}

/// Runs a search. `assume` is the prior the strategy plans for: under
/// `AtMostOneBright` a positive half ends the search on that level, under
/// `IndependentPerSite` both halves of a positive set are explored.
pub fn run_search<R: Rng + ?Sized>(
    register: &Register,
    strategy: SearchStrategy,
    assume: Placement,
    noise: Option<&CheckNoise>,
    rng: &mut R,
) -> Result<SearchResult> {
    if let Some(n) = noise {
        n.validate()?;
    }
    let mut s = Searcher {
        register,
        noise,
        assume,
        rng,
        result: SearchResult { bright_sites: BTreeSet::new(), evidence: Vec::new(), transcript: Vec::new() },
    };
    let n = register.len();
    match strategy {
        SearchStrategy::DeterministicSequential => s.sequential(),
        SearchStrategy::GlobalCheckThenSequential => {
            if s.query((0..n).collect()) {
                s.sequential();
            }
        }
        SearchStrategy::PartitionedBinary => s.bisect(0, n, None),
    }
    Ok(s.result)
}

/// Mean number of bisection levels to isolate one uniformly placed bright
/// site among `n` with near-equal splits (left half gets the extra site).
/// Equals log₂n exactly for powers of two.
pub fn mean_bisection_depth(n: usize) -> f64 {
    fn total_depth(n: usize) -> f64 {
        if n <= 1 {
            return 0.0;
        }
        let left = n.div_ceil(2);
        let right = n - left;
        n as f64 + total_depth(left) + total_depth(right)
    }
    total_depth(n) / n as f64
}

/// Closed-form expected number of intervals. `None` where no closed form
/// is provided (bisection with independent placement).
pub fn expected_cost(problem: &SearchProblem, strategy: SearchStrategy) -> Option<f64> {
    let n = problem.n as f64;
    let p = problem.p;
    match (strategy, problem.placement) {
        (SearchStrategy::DeterministicSequential, _) => Some(n),
        (SearchStrategy::GlobalCheckThenSequential, Placement::AtMostOneBright) => Some(1.0 + p * n),
        (SearchStrategy::GlobalCheckThenSequential, Placement::IndependentPerSite) => {
            Some(1.0 + n * (1.0 - (1.0 - p).powi(problem.n as i32)))
        }
        (SearchStrategy::PartitionedBinary, Placement::AtMostOneBright) => {
            Some(1.0 + p * mean_bisection_depth(problem.n))
        }
        (SearchStrategy::PartitionedBinary, Placement::IndependentPerSite) => None,
    }
}

/// The idealised bisection scaling 1 + p·log₂N.
pub fn log2_scaling(n: usize, p: f64) -> f64 {
    1.0 + p * (n as f64).log2()
}
