//! Acceptance criteria, one line each. Runs every criterion even when an
//! earlier one fails and exits non-zero if any failed.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use num_bigint::BigInt;
use num_rational::BigRational;

use tbrw::exact::{self, enumerate, ho_series_terms, ComplexProbe, HitRootAt, WholeSpace};
use tbrw::mc::{self, ExperimentConfig};
use tbrw::model::{simulate, InitialState, LeafLaw, Retention, RngStream};
use tbrw::renewal::CensorPolicy;

const SEED: u64 = 2024;
const BIN: &str = env!("CARGO_BIN_EXE_tbrw");

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn tbrw(args: &[&str]) -> (i32, String) {
    let out = Command::new(BIN).args(args).output().expect("binary runs");
    let text =
        String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap_or(-1), text)
}

fn bernoulli(p: f64) -> LeafLaw {
    LeafLaw::bernoulli(p).unwrap()
}

fn desk_scale() -> ExperimentConfig {
    ExperimentConfig {
        laws: vec![bernoulli(0.5)],
        replicas: 10_000,
        horizon: 5000,
        seed: SEED,
        censor: CensorPolicy::default(),
        ..ExperimentConfig::default()
    }
}

fn speed_curve_figure(dir: &Path) -> Verdict {
    let out = dir.join("speed");
    let start = Instant::now();
    let (code, text) = tbrw(&[
        "figures",
        "speed-curve",
        "--seed",
        &SEED.to_string(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let elapsed = start.elapsed().as_secs_f64();
    if code != 0 {
        return verdict(false, format!("exit {code}: {text}"));
    }
    let mut reader = csv::Reader::from_path(out.join("speed_curve.csv")).unwrap();
    let rows: Vec<(f64, f64, f64)> = reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            (
                r[0].parse().unwrap(),
                r[1].parse().unwrap(),
                r[2].parse().unwrap(),
            )
        })
        .collect();
    let grid_ok = rows.len() == 10
        && rows
            .iter()
            .enumerate()
            .all(|(i, r)| (r.0 - (i + 1) as f64 / 10.0).abs() < 1e-12);
    let in_unit = rows.iter().all(|&(_, v, _)| v > 0.0 && v < 1.0);
    // a decrease is significant when the two intervals are disjoint
    let drops: Vec<f64> = rows
        .windows(2)
        .filter(|w| w[1].1 + w[1].2 < w[0].1 - w[0].2)
        .map(|w| w[1].0)
        .collect();
    verdict(
        elapsed < 60.0 && grid_ok && in_unit && drops.is_empty(),
        format!(
            "{elapsed:.2}s, v(0.1) = {:.4}, v(1.0) = {:.4}, significant drops at {drops:?}",
            rows.first().map(|r| r.1).unwrap_or(f64::NAN),
            rows.last().map(|r| r.1).unwrap_or(f64::NAN)
        ),
    )
}

fn speed_cross_check() -> Verdict {
    let config = desk_scale();
    let mut ok = true;
    let mut parts = Vec::new();
    for p in [0.3, 0.5, 0.8] {
        let est = mc::estimate_speed(&config, &bernoulli(p)).unwrap();
        let Some(ren) = est.v_hat_renewal else {
            ok = false;
            parts.push(format!("p={p}: no renewal estimate"));
            continue;
        };
        let diff = (est.v_hat_direct.mean - ren.mean).abs();
        let tol = est.v_hat_direct.half_width + ren.half_width;
        ok &= diff < tol;
        parts.push(format!(
            "p={p}: |{:.5} - {:.5}| = {diff:.5} vs {tol:.5}",
            est.v_hat_direct.mean, ren.mean
        ));
    }
    verdict(ok, parts.join("; "))
}

fn tau_tail() -> Verdict {
    let law = bernoulli(0.5);
    let base = mc::run_tau_tail(&desk_scale(), &law).unwrap();
    let doubled = mc::run_tau_tail(
        &ExperimentConfig {
            horizon: 10_000,
            ..desk_scale()
        },
        &law,
    )
    .unwrap();
    let (e, s) = (base.exponential, base.stretched);
    let drift = (doubled.exponential.rate_c / e.rate_c - 1.0).abs();
    verdict(
        base.samples.len() >= 500
            && e.r_squared > s.r_squared
            && e.r_squared >= 0.95
            && drift <= 0.2,
        format!(
            "{} samples, R2 exp {:.4} vs stretched {:.4}, rate {:.3e} -> {:.3e} ({:.1}%)",
            base.samples.len(),
            e.r_squared,
            s.r_squared,
            e.rate_c,
            doubled.exponential.rate_c,
            100.0 * drift
        ),
    )
}

fn k_and_m() -> (Verdict, Verdict) {
    // 1% headroom so that at least 10^4 first epochs close inside the horizon
    let config = ExperimentConfig {
        replicas: 10_100,
        ..desk_scale()
    };
    let km = mc::run_k_and_m(&config, &bernoulli(0.5)).unwrap();
    let t = &km.k_test;
    let k = verdict(
        km.k_samples.len() >= 10_000 && t.p_value > 0.01 && km.theta_z < 3.0,
        format!(
            "{} samples, chi-square p-value {:.4} (dof {}), theta {:.4} vs escape frequency {:.4} ({:.2} SE)",
            km.k_samples.len(),
            t.p_value,
            t.dof,
            t.theta_hat,
            km.theta_ref.mean,
            km.theta_z
        ),
    );
    let m = verdict(
        km.m_samples.len() >= 500 && km.m_fit.rate_c > 0.0 && km.m_fit.r_squared >= 0.9,
        format!(
            "{} samples, rate {:.4}, R2 {:.4}",
            km.m_samples.len(),
            km.m_fit.rate_c,
            km.m_fit.r_squared
        ),
    );
    (k, m)
}

fn concentration() -> Verdict {
    let config = ExperimentConfig {
        epsilons: vec![0.05],
        n_grid: vec![250, 500, 1000, 2000, 4000],
        ..desk_scale()
    };
    let curve = mc::run_concentration(&config, &bernoulli(0.5), None).unwrap();
    let freq: Vec<f64> = curve.frequency.iter().map(|row| row[0]).collect();
    let strictly = freq.windows(2).all(|w| w[1] < w[0]);
    let slope = curve.fits[0].fit.as_ref().map(|f| f.slope);
    verdict(
        strictly && slope.is_some_and(|s| s < 0.0),
        format!(
            "v = {:.4}, frequencies {freq:?}, log slope {slope:?}",
            curve.v_hat
        ),
    )
}

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn exact_normalization() -> Verdict {
    let ones = (1..=10).all(|n| enumerate(n, &WholeSpace).unwrap().is_one());
    let first = enumerate(1, &HitRootAt::new(1)).unwrap();
    let first_ok = first.power_basis() == vec![rat(1, 1), rat(-1, 2)];
    let even_zero = (2..=10)
        .step_by(2)
        .all(|n| enumerate(n, &HitRootAt::new(n)).unwrap().is_zero());
    verdict(
        ones && first_ok && even_zero,
        format!("whole space = 1: {ones}, P(H_o = 1) = 1 - p/2: {first_ok}, even terms zero: {even_zero}"),
    )
}

fn an_bound() -> Verdict {
    let start = Instant::now();
    let terms = ho_series_terms(10).unwrap();
    let mut worst = 0.0f64;
    let mut library_holds = true;
    let mut exits = Vec::new();
    for p in [0.3, 0.5, 0.8] {
        for r in [p / 5.0, p / 2.0 * 0.9] {
            let probe = ComplexProbe::circles(p, r, &[r / 2.0, 0.9 * r], 64).unwrap();
            for poly in &terms {
                let rep = exact::verify_an_bound(poly, &probe);
                library_holds &= rep.holds;
                worst = worst.max(rep.max_ratio);
            }
            let (code, _) = tbrw(&[
                "verify",
                "an-bound",
                "--p",
                &p.to_string(),
                "--r",
                &r.to_string(),
                "--n",
                "10",
                "--out",
                std::env::temp_dir()
                    .join("tbrw-acceptance-an")
                    .to_str()
                    .unwrap(),
            ]);
            exits.push(code);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        library_holds && exits.iter().all(|&c| c == 0) && elapsed < 120.0,
        format!("max ratio {worst:.3e}, exit codes {exits:?}, {elapsed:.2}s"),
    )
}

fn bridge() -> Verdict {
    let poly = enumerate(1, &HitRootAt::new(1)).unwrap();
    let rep = exact::cross_validate(&poly, &HitRootAt::new(1), 0.5, 100_000, SEED).unwrap();
    verdict(
        rep.exact == 0.75 && rep.agrees,
        format!(
            "frequency {:.5} vs {:.2}, |diff| = {:.2} sigma",
            rep.frequency,
            rep.exact,
            (rep.frequency - rep.exact).abs() / rep.sigma
        ),
    )
}

fn determinism(dir: &Path) -> Verdict {
    let seed = SEED.to_string();
    let commands: Vec<Vec<&str>> = vec![
        vec!["simulate", "--p", "0.5", "--steps", "2000", "--seed", &seed],
        vec![
            "simulate",
            "--q",
            "0:0.5,2:0.5",
            "--steps",
            "1000",
            "--retention",
            "summary",
        ],
        vec!["figures", "tree-gallery", "--seed", &seed],
        vec![
            "figures",
            "speed-curve",
            "--replicas",
            "30",
            "--seed",
            &seed,
        ],
        vec!["verify", "an-bound", "--p", "0.5", "--r", "0.1", "--n", "8"],
        vec!["verify", "ho-series", "--n", "7"],
        vec![
            "verify",
            "cross-validate",
            "--replicas",
            "2000",
            "--seed",
            &seed,
        ],
        vec![
            "experiments",
            "tau-tail",
            "--replicas",
            "1500",
            "--steps",
            "2000",
            "--seed",
            &seed,
        ],
        vec![
            "experiments",
            "k-geom",
            "--replicas",
            "600",
            "--steps",
            "2000",
            "--seed",
            &seed,
        ],
        vec![
            "experiments",
            "concentration",
            "--replicas",
            "200",
            "--n-grid",
            "250,500",
            "--seed",
            &seed,
        ],
        vec![
            "experiments",
            "escape",
            "--p",
            "0.7",
            "--replicas",
            "200",
            "--steps",
            "1000",
        ],
    ];
    let mut failures = Vec::new();
    for (i, args) in commands.iter().enumerate() {
        let out = dir.join(format!("run{i}"));
        let mut full = args.clone();
        full.extend(["--out", out.to_str().unwrap()]);
        let (code, text) = tbrw(&full);
        if code != 0 {
            failures.push(format!("{} exited {code}: {text}", args.join(" ")));
            continue;
        }
        let (code, text) = tbrw(&["rerun", out.join("manifest.json").to_str().unwrap()]);
        if code != 0 || !text.contains("identical outputs") {
            failures.push(format!("rerun of {} gave {code}", args.join(" ")));
        }
    }
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} commands reproduced byte for byte", commands.len())
        } else {
            failures.join("; ")
        },
    )
}

fn throughput() -> Verdict {
    let law = bernoulli(0.5);
    let steps = 1_000_000usize;
    let runs = 20u64;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let start = Instant::now();
    pool.install(|| {
        for r in 0..runs {
            let t = simulate(
                &law,
                steps,
                InitialState::EdgeNonRootTip,
                RngStream::new(SEED, r),
                Retention::Summary,
            )
            .unwrap();
            assert_eq!(t.horizon(), steps);
        }
    });
    let rate = (steps as f64 * runs as f64) / start.elapsed().as_secs_f64();
    verdict(rate >= 1e7, format!("{rate:.3e} steps/s on one thread"))
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let mut results: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut record = |n: usize, name: &'static str, v: Verdict| {
        println!(
            "criterion {n:>2} [{}] {name}: {}",
            if v.passed { "PASS" } else { "FAIL" },
            v.detail
        );
        results.push((n, name, v));
    };
    record(1, "speed curve figure", speed_curve_figure(dir.path()));
    record(2, "speed estimators agree", speed_cross_check());
    record(3, "exponential tail of the first renewal", tau_tail());
    let (k, m) = k_and_m();
    record(4, "attempt count is geometric", k);
    record(5, "excursion height tail", m);
    record(6, "concentration of D_n/n", concentration());
    record(7, "exact normalization and parity", exact_normalization());
    record(8, "complex-extension bound", an_bound());
    record(9, "simulator matches exact probability", bridge());
    record(10, "reruns reproduce outputs", determinism(dir.path()));
    record(11, "simulation throughput", throughput());

    let failed: Vec<usize> = results
        .iter()
        .filter(|r| !r.2.passed)
        .map(|r| r.0)
        .collect();
    println!(
        "\nacceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(" (criteria {failed:?})")
        }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
