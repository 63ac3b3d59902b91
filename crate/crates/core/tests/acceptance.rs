//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every criterion prints exactly one PASS/FAIL line.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use cavity_readout::code::{logical_error_curve, majority_failure_probability, CodeConfig, PostSelect};
use cavity_readout::photon::{adaptive_reduction, CavityParams, Emitter, PhotonModel};
use cavity_readout::register::IdleErrorModel;
use cavity_readout::search::{expected_cost, run_search, Placement, SearchProblem, SearchStrategy};
use cavity_readout::{run, Experiment, ExperimentSpec, Register, SimConfig, SiteState, StreamKey};

const SEED: u64 = 20_240_601;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn cooperativity() -> Check {
    let eta = CavityParams::default().cooperativity();
    ensure((eta - 2.02).abs() <= 0.01, format!("eta0 = {eta:.4}"))
}

fn idle_lifetime() -> Check {
    let t = IdleErrorModel::default().combined_lifetime_ms();
    ensure((t - 126.3).abs() < 0.05 && (t / 125.0 - 1.0).abs() < 0.02, format!("combined = {t:.2} ms"))
}

/// E[stop] = Σ_{k<n} P(Poisson(kλ) < threshold), by direct summation.
fn stopping_oracle(model: &PhotonModel) -> f64 {
    let lambda = model.sub_interval_mean(Emitter::Bright);
    (0..model.n_sub_intervals())
        .map(|k| {
            let mu = k as f64 * lambda;
            let mut term = (-mu).exp();
            let mut cdf = 0.0;
            for j in 0..model.threshold {
                cdf += term;
                term *= mu / (j + 1) as f64;
            }
            cdf
        })
        .sum()
}

fn adaptive_termination() -> Check {
    let model = PhotonModel::default();
    let (f, wald) = adaptive_reduction(&model, 100_000, StreamKey::new(SEED, 3)).map_err(|e| e.to_string())?;
    let oracle = model.bright_mean_full / (model.sub_interval_mean(Emitter::Bright) * stopping_oracle(&model));
    let pf = f.photon_factor;
    ensure(
        (5.0..=5.9).contains(&pf.mean) && wald.agrees_with(0.0, 3.0) && pf.agrees_with(oracle, 4.0),
        format!(
            "photon factor {:.3} ± {:.3} (oracle {oracle:.3}), Wald residual {:.4} ± {:.4}",
            pf.mean, pf.stderr, wald.mean, wald.stderr
        ),
    )
}

/// Exact expectation over every single-bright placement.
fn enumerated_cost(problem: &SearchProblem, strategy: SearchStrategy) -> f64 {
    let cost = |bright: Option<usize>| {
        let mut sites = vec![SiteState::F1; problem.n];
        if let Some(i) = bright {
            sites[i] = SiteState::F2;
        }
        let reg = Register::from_sites(sites, 17.0).unwrap();
        let mut rng = StreamKey::new(0, 0).trial_rng(0);
        run_search(&reg, strategy, Placement::AtMostOneBright, None, &mut rng).unwrap().intervals_used() as f64
    };
    let none = (1.0 - problem.p) * cost(None);
    let some: f64 = (0..problem.n).map(|i| problem.p / problem.n as f64 * cost(Some(i))).sum();
    none + some
}

fn search_cost() -> Check {
    let out = run(&ExperimentSpec::new(Experiment::SearchCost, SEED).with_trials(10_000), &SimConfig::default())
        .map_err(|e| e.to_string())?;
    let [n_col, p_col, s_col, m_col, e_col] =
        ["n", "p", "strategy", "mean_intervals", "stderr"].map(|c| out.column(c).unwrap());
    let mut cells = 0;
    let mut worst = 0.0f64;
    for row in out.rows.iter().filter(|r| r[s_col] == "global_check_then_sequential") {
        let n: f64 = row[n_col].parse().unwrap();
        let p: f64 = row[p_col].parse().unwrap();
        let mean: f64 = row[m_col].parse().unwrap();
        let se: f64 = row[e_col].parse().unwrap();
        let expect = 1.0 + p * n;
        if se == 0.0 {
            if mean != expect {
                return Err(format!("N={n} p={p}: {mean} with zero stderr, expected {expect}"));
            }
        } else {
            let z = (mean - expect).abs() / se;
            worst = worst.max(z);
            if z > 3.0 {
                return Err(format!("N={n} p={p}: {mean} ± {se} vs {expect}"));
            }
        }
        cells += 1;
    }
    let mut max_err = 0.0f64;
    for n in 2..=10 {
        for p in [0.0, 0.1, 0.3, 0.5, 1.0] {
            let problem = SearchProblem::new(n, p, Placement::AtMostOneBright).unwrap();
            for s in SearchStrategy::ALL {
                let closed = expected_cost(&problem, s).unwrap();
                max_err = max_err.max((enumerated_cost(&problem, s) - closed).abs());
            }
        }
    }
    ensure(
        cells == 45 && max_err < 1e-12,
        format!("{cells} cells, worst |z| = {worst:.2}, enumeration max error {max_err:.1e}"),
    )
}

fn majority_oracle() -> Check {
    // Brute force over all 2^d flip patterns.
    let brute = |d: usize, p: f64| -> f64 {
        (0u32..1 << d)
            .filter(|m| 2 * m.count_ones() as usize > d)
            .map(|m| p.powi(m.count_ones() as i32) * (1.0 - p).powi(d as i32 - m.count_ones() as i32))
            .sum()
    };
    if (majority_failure_probability(3, 0.09) - 0.022842).abs() > 5e-7 {
        return Err(format!("d=3 p=0.09 formula gives {}", majority_failure_probability(3, 0.09)));
    }
    let base = CodeConfig { per_round_loss: 0.0, ..CodeConfig::default() };
    let flips = [0.05, 0.09, 0.2];
    let rows = logical_error_curve(&base, &[3, 5], &flips, PostSelect::All, 100_000, StreamKey::new(SEED, 5))
        .map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for r in &rows {
        let exact = majority_failure_probability(r.d, r.p_phys);
        if (exact - brute(r.d, r.p_phys)).abs() > 1e-15 {
            return Err(format!("closed form disagrees with enumeration at d={} p={}", r.d, r.p_phys));
        }
        let z = (r.p_logical.mean - exact).abs() / r.p_logical.stderr;
        worst = worst.max(z);
        if z > 3.0 {
            return Err(format!("d={} p={}: {:.5} ± {:.5} vs {exact:.5}", r.d, r.p_phys, r.p_logical.mean, r.p_logical.stderr));
        }
    }
    Ok(format!("{} points, worst |z| = {worst:.2}", rows.len()))
}

fn error_exponents() -> Check {
    let out = run(&ExperimentSpec::new(Experiment::ErrorScaling, SEED), &SimConfig::default()).map_err(|e| e.to_string())?;
    let d3 = out.get_f64("d3_exponent").ok_or("no d3 exponent")?;
    let d5 = out.get_f64("d5_exponent").ok_or("no d5 exponent")?;
    ensure(
        (d3 - 2.0).abs() <= 0.3 && (2.8..=3.7).contains(&d5),
        format!("d3 exponent {d3:.3}, d5 exponent {d5:.3}"),
    )
}

fn logical_lifetime() -> Check {
    let out =
        run(&ExperimentSpec::new(Experiment::LogicalLifetime, SEED), &SimConfig::default()).map_err(|e| e.to_string())?;
    let r3 = out.get_f64("d3_tau_ratio").ok_or("no d3 ratio")?;
    let r5 = out.get_f64("d5_tau_ratio").ok_or("no d5 ratio")?;
    let phys = out.get_f64("physical_tau_ms").ok_or("no physical tau")?;
    ensure(
        (r3 / 2.5 - 1.0).abs() <= 0.3 && (r5 / 4.9 - 1.0).abs() <= 0.3,
        format!("physical tau {phys:.1} ms, d3 ratio {r3:.3}, d5 ratio {r5:.3}"),
    )
}

fn depump_scaling() -> Check {
    let out =
        run(&ExperimentSpec::new(Experiment::DepumpScaling, SEED), &SimConfig::default()).map_err(|e| e.to_string())?;
    let slope = out.get_f64("fit_slope_per_site").ok_or("no slope")?;
    let se = out.get_f64("fit_slope_stderr").ok_or("no slope stderr")?;
    let rate = out.get_f64("hidden_depump_per_interval").ok_or("no rate")?;
    ensure(
        (slope - rate).abs() <= 4.0 * se,
        format!("slope {:.3}% ± {:.3}%/site vs configured {:.3}%", slope * 100.0, se * 100.0, rate * 100.0),
    )
}

fn cli_determinism() -> Check {
    let bin = env!("CARGO_BIN_EXE_cavsim");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs = [
        ("histogram", "20000"),
        ("depump-scaling", "2000"),
        ("search-cost", "2000"),
        ("error-scaling", "2000"),
        ("lifetime", "2000"),
    ];
    for (cmd, trials) in runs {
        let mut reference: Option<(Vec<u8>, Vec<u8>)> = None;
        for threads in ["1", "4", "16"] {
            let out = dir.path().join(format!("{cmd}-{threads}.csv"));
            let status = Command::new(bin)
                .args([cmd, "--seed", "7", "--trials", trials, "--threads", threads, "--out"])
                .arg(&out)
                .status()
                .map_err(|e| e.to_string())?;
            if !status.success() {
                return Err(format!("{cmd} --threads {threads} exited with {status}"));
            }
            let bytes = read_pair(&out)?;
            match &reference {
                None => reference = Some(bytes),
                Some(r) if *r != bytes => return Err(format!("{cmd}: output differs at --threads {threads}")),
                Some(_) => {}
            }
        }
    }
    let validate = |threads: &str| Command::new(bin).args(["validate-config", "--threads", threads]).output();
    let a = validate("1").map_err(|e| e.to_string())?;
    let b = validate("16").map_err(|e| e.to_string())?;
    ensure(
        a.status.success() && a.stdout == b.stdout,
        "6 subcommands byte-identical across 1, 4, 16 threads".into(),
    )
}

fn read_pair(csv: &Path) -> Result<(Vec<u8>, Vec<u8>), String> {
    let meta = cavity_readout::cli::metadata_path(csv);
    Ok((
        std::fs::read(csv).map_err(|e| e.to_string())?,
        std::fs::read(&meta).map_err(|e| e.to_string())?,
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("cooperativity", cooperativity),
        ("idle lifetime combination", idle_lifetime),
        ("adaptive termination", adaptive_termination),
        ("search cost", search_cost),
        ("majority-vote oracle", majority_oracle),
        ("error-scaling exponents", error_exponents),
        ("logical lifetime", logical_lifetime),
        ("depump scaling", depump_scaling),
        ("CLI determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail}) [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({detail}) [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
