//! Replica sweeps behind the empirical claims: speed curve, tail of the
//! first renewal time, geometric law of K, excursion heights and
//! concentration of `D_n / n`.
//!
//! Replica `r` of every law uses the stream `(seed, r)`, and results are
//! collected in replica order, so each experiment is a pure function of its
//! configuration.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{simulate, InitialState, LeafLaw, Retention, RngStream};
use crate::renewal::{detect_cascade, detect_tau_in, tau_ladder, CensorPolicy, TauStatus};
use crate::stats::{
    fit_tail, lag1_autocorrelation, linear_fit, survival, test_geometric, GeometricTest, LineFit,
    MeanCI, TailFit, TailModel, MIN_CI_SAMPLES, MIN_TAIL_SAMPLES,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub laws: Vec<LeafLaw>,
    pub horizon: usize,
    pub replicas: u64,
    pub seed: u64,
    pub censor: CensorPolicy,
    pub epsilons: Vec<f64>,
    pub n_grid: Vec<usize>,
}

impl Default for ExperimentConfig {
    /// Ten Bernoulli laws `p = 0.1, ..., 1.0`, 100 replicas of 2000 steps.
    fn default() -> Self {
        Self {
            laws: bernoulli_grid(),
            horizon: 2000,
            replicas: 100,
            seed: 0,
            censor: CensorPolicy::default(),
            epsilons: vec![0.02, 0.05, 0.1],
            n_grid: vec![250, 500, 1000, 2000, 4000],
        }
    }
}

/// `p = 0.1, 0.2, ..., 1.0`.
pub fn bernoulli_grid() -> Vec<LeafLaw> {
    (1..=10)
        .map(|k| LeafLaw::bernoulli(k as f64 / 10.0).expect("valid grid"))
        .collect()
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.laws.is_empty() {
            return Err(Error::InvalidArgument("no leaf laws given".into()));
        }
        if self.replicas == 0 {
            return Err(Error::InvalidArgument("replicas must be at least 1".into()));
        }
        if self.horizon <= self.censor.horizon_margin {
            return Err(Error::InvalidArgument(format!(
                "horizon {} must exceed the horizon margin {}",
                self.horizon, self.censor.horizon_margin
            )));
        }
        if self.epsilons.iter().any(|&e| e.is_nan() || e <= 0.0) {
            return Err(Error::InvalidArgument("epsilons must be positive".into()));
        }
        if self.n_grid.contains(&0) {
            return Err(Error::InvalidArgument(
                "n grid entries must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Copy with a single law.
    pub fn with_law(&self, law: LeafLaw) -> Self {
        Self {
            laws: vec![law],
            ..self.clone()
        }
    }
}

fn per_replica<T: Send>(
    replicas: u64,
    seed: u64,
    f: impl Fn(RngStream) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    (0..replicas)
        .into_par_iter()
        .map(|r| f(RngStream::new(seed, r)))
        .collect()
}

/// What the speed estimators need from one run.
struct RunSummary {
    final_depth: u32,
    /// Confirmed renewal times and the depths there.
    ladder: Vec<(usize, u32)>,
    /// First candidate, `Some(time)` when confirmed, `None` when censored
    /// or absent.
    first_tau: Option<usize>,
}

fn summarize(
    law: &LeafLaw,
    horizon: usize,
    stream: RngStream,
    policy: &CensorPolicy,
) -> Result<RunSummary> {
    let traj = simulate(
        law,
        horizon,
        InitialState::EdgeNonRootTip,
        stream,
        Retention::Summary,
    )?;
    let cands = detect_tau_in(&traj.depth, &traj.degree, Some(&traj.height), policy)?;
    let first_tau = cands
        .first()
        .filter(|c| c.status == TauStatus::Confirmed)
        .map(|c| c.time);
    let ladder = tau_ladder(&cands)
        .into_iter()
        .map(|t| (t, traj.depth[t]))
        .collect();
    Ok(RunSummary {
        final_depth: traj.depth[horizon],
        ladder,
        first_tau,
    })
}

/// Sanity checks on pooled epoch increments after the first renewal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochChecks {
    pub epochs: usize,
    pub autocorr_tau: Option<f64>,
    pub autocorr_depth: Option<f64>,
    /// `1 / sqrt(epochs)`, the null standard deviation of the autocorrelations.
    pub sigma: f64,
    /// Both autocorrelations within 4 sigma of zero.
    pub independent: bool,
    /// `D_(tau_(k+1)) - D_(tau_k) <= tau_(k+1) - tau_k` for every epoch.
    pub unit_speed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedEstimate {
    /// Mean of `D_N / N` over replicas.
    pub v_hat_direct: MeanCI,
    /// Ratio of mean depth gain to mean length over pooled later epochs.
    pub v_hat_renewal: Option<MeanCI>,
    pub mu_tau_hat: Option<MeanCI>,
    pub mu_d_hat: Option<MeanCI>,
    pub checks: EpochChecks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedPoint {
    pub law: String,
    pub p: Option<f64>,
    pub estimate: Option<SpeedEstimate>,
    pub error: Option<String>,
}

fn speed_from(runs: &[RunSummary], horizon: usize) -> Result<SpeedEstimate> {
    let direct: Vec<f64> = runs
        .iter()
        .map(|r| r.final_depth as f64 / horizon as f64)
        .collect();
    let (mut dt, mut dd) = (Vec::new(), Vec::new());
    for run in runs {
        for w in run.ladder.windows(2) {
            dt.push((w[1].0 - w[0].0) as f64);
            dd.push(w[1].1 as f64 - w[0].1 as f64);
        }
    }
    let sigma = if dt.is_empty() {
        f64::INFINITY
    } else {
        1.0 / (dt.len() as f64).sqrt()
    };
    let autocorr_tau = lag1_autocorrelation(&dt);
    let autocorr_depth = lag1_autocorrelation(&dd);
    let within = |a: Option<f64>| a.is_some_and(|a| a.abs() <= 4.0 * sigma);
    let checks = EpochChecks {
        epochs: dt.len(),
        autocorr_tau,
        autocorr_depth,
        sigma,
        independent: within(autocorr_tau) && within(autocorr_depth),
        unit_speed: dt.iter().zip(&dd).all(|(t, d)| d <= t),
    };
    let enough = dt.len() >= MIN_CI_SAMPLES;
    Ok(SpeedEstimate {
        v_hat_direct: MeanCI::from_samples(&direct)?,
        v_hat_renewal: if enough {
            Some(MeanCI::ratio(&dd, &dt)?)
        } else {
            None
        },
        mu_tau_hat: if enough {
            Some(MeanCI::from_samples(&dt)?)
        } else {
            None
        },
        mu_d_hat: if enough {
            Some(MeanCI::from_samples(&dd)?)
        } else {
            None
        },
        checks,
    })
}

/// Speed of one law by both estimators.
pub fn estimate_speed(config: &ExperimentConfig, law: &LeafLaw) -> Result<SpeedEstimate> {
    config.validate()?;
    if law.is_degenerate() {
        return Err(Error::DegenerateLaw(format!(
            "{law} never grows the tree, so the walk has no speed"
        )));
    }
    let runs = per_replica(config.replicas, config.seed, |s| {
        summarize(law, config.horizon, s, &config.censor)
    })?;
    speed_from(&runs, config.horizon)
}

/// Both speed estimators for every law of the grid; failures are recorded
/// per point.
pub fn run_speed_curve(config: &ExperimentConfig) -> Result<Vec<SpeedPoint>> {
    config.validate()?;
    Ok(config
        .laws
        .iter()
        .map(|law| {
            let (estimate, error) = match estimate_speed(config, law) {
                Ok(e) => (Some(e), None),
                Err(e) => (None, Some(e.to_string())),
            };
            SpeedPoint {
                law: law.to_string(),
                p: law.bernoulli_p(),
                estimate,
                error,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauTail {
    pub law: String,
    /// Uncensored first renewal times, one per replica that produced one.
    pub samples: Vec<u64>,
    pub censored: u64,
    pub exponential: TailFit,
    pub stretched: TailFit,
    pub exponential_preferred: bool,
}

/// Tail fits for the first renewal time of one law.
pub fn run_tau_tail(config: &ExperimentConfig, law: &LeafLaw) -> Result<TauTail> {
    config.validate()?;
    let firsts = per_replica(config.replicas, config.seed, |s| {
        summarize(law, config.horizon, s, &config.censor).map(|r| r.first_tau)
    })?;
    let samples: Vec<u64> = firsts.iter().flatten().map(|&t| t as u64).collect();
    if samples.len() < MIN_TAIL_SAMPLES {
        return Err(Error::Undersampled {
            what: format!("uncensored first renewal times for {law}"),
            needed: MIN_TAIL_SAMPLES,
            achieved: samples.len(),
        });
    }
    let exponential = fit_tail(&samples, TailModel::Exponential)?;
    let stretched = fit_tail(&samples, TailModel::Stretched)?;
    Ok(TauTail {
        law: law.to_string(),
        censored: config.replicas - samples.len() as u64,
        exponential_preferred: exponential.r_squared > stretched.r_squared,
        exponential,
        stretched,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KAndM {
    pub law: String,
    /// Failed attempts before the first renewal, per closed first epoch.
    pub k_samples: Vec<u64>,
    pub k_test: GeometricTest,
    /// Frequency with which the very first attempt escaped.
    pub theta_ref: MeanCI,
    /// `|theta_hat - theta_ref|` over the combined standard error.
    pub theta_z: f64,
    pub m_samples: Vec<u64>,
    pub m_fit: TailFit,
}

/// Geometric test for K and tail fit for the excursion heights M.
pub fn run_k_and_m(config: &ExperimentConfig, law: &LeafLaw) -> Result<KAndM> {
    config.validate()?;
    if law.is_degenerate() {
        return Err(Error::DegenerateLaw(format!(
            "{law}: the attempt count is only defined for laws other than delta_0"
        )));
    }
    let per = per_replica(config.replicas, config.seed, |s| {
        let traj = simulate(
            law,
            config.horizon,
            InitialState::EdgeNonRootTip,
            s,
            Retention::Full,
        )?;
        let report = detect_cascade(&traj, &config.censor)?;
        Ok((report.first_k(), report.escaped_at_start(), report.m))
    })?;
    let k_samples: Vec<u64> = per
        .iter()
        .filter_map(|(k, _, _)| k.map(|k| k as u64))
        .collect();
    let escapes: Vec<f64> = per
        .iter()
        .filter_map(|(_, e, _)| e.map(|e| f64::from(u8::from(e))))
        .collect();
    let m_samples: Vec<u64> = per
        .iter()
        .flat_map(|(_, _, m)| m.iter().map(|&x| x as u64))
        .collect();
    for (what, got) in [
        ("closed first epochs", k_samples.len()),
        ("finite excursions", m_samples.len()),
    ] {
        if got < MIN_TAIL_SAMPLES {
            return Err(Error::Undersampled {
                what: format!("{what} for {law}"),
                needed: MIN_TAIL_SAMPLES,
                achieved: got,
            });
        }
    }
    let theta_ref = MeanCI::from_samples(&escapes)?;
    let k_test = test_geometric(&k_samples, Some(theta_ref.mean))?;
    let combined = k_test.theta_se.hypot(theta_ref.standard_error());
    let theta_z = if combined > 0.0 {
        (k_test.theta_hat - theta_ref.mean).abs() / combined
    } else {
        0.0
    };
    let m_fit = fit_tail(&m_samples, TailModel::Exponential)?;
    Ok(KAndM {
        law: law.to_string(),
        k_samples,
        k_test,
        theta_ref,
        theta_z,
        m_samples,
        m_fit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub epsilon: f64,
    /// Fit of `ln frequency` against n over the nonzero frequencies.
    pub fit: Option<LineFit>,
    /// Set when fewer than two frequencies are nonzero.
    pub below_resolution: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationCurve {
    pub law: String,
    pub v_hat: f64,
    pub n_grid: Vec<usize>,
    pub epsilons: Vec<f64>,
    /// `frequency[i][j]`: share of replicas with `|D_n/n - v_hat| > eps`
    /// at `n = n_grid[i]`, `eps = epsilons[j]`.
    pub frequency: Vec<Vec<f64>>,
    pub fits: Vec<DecayFit>,
}

/// Deviation frequencies of `D_n / n` from the speed. Without `v_hat` the
/// renewal estimate from the same runs is used.
pub fn run_concentration(
    config: &ExperimentConfig,
    law: &LeafLaw,
    v_hat: Option<f64>,
) -> Result<ConcentrationCurve> {
    config.validate()?;
    if config.n_grid.is_empty() || config.epsilons.is_empty() {
        return Err(Error::InvalidArgument("empty n or epsilon grid".into()));
    }
    let horizon = *config.n_grid.iter().max().expect("non-empty");
    if horizon <= config.censor.horizon_margin {
        return Err(Error::InvalidArgument(format!(
            "largest n {horizon} must exceed the horizon margin"
        )));
    }
    let per = per_replica(config.replicas, config.seed, |s| {
        let traj = simulate(
            law,
            horizon,
            InitialState::EdgeNonRootTip,
            s,
            Retention::Summary,
        )?;
        let ladder = tau_ladder(&detect_tau_in(
            &traj.depth,
            &traj.degree,
            None,
            &config.censor,
        )?)
        .into_iter()
        .map(|t| (t, traj.depth[t]))
        .collect();
        let at_grid: Vec<u32> = config.n_grid.iter().map(|&n| traj.depth[n]).collect();
        Ok((
            RunSummary {
                final_depth: traj.depth[horizon],
                ladder,
                first_tau: None,
            },
            at_grid,
        ))
    })?;
    let v_hat = match v_hat {
        Some(v) => v,
        None => {
            let runs: Vec<RunSummary> = per
                .iter()
                .map(|(r, _)| RunSummary {
                    final_depth: r.final_depth,
                    ladder: r.ladder.clone(),
                    first_tau: None,
                })
                .collect();
            let est = speed_from(&runs, horizon)?;
            est.v_hat_renewal
                .map(|v| v.mean)
                .unwrap_or(est.v_hat_direct.mean)
        }
    };
    let total = per.len() as f64;
    let frequency: Vec<Vec<f64>> = config
        .n_grid
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            config
                .epsilons
                .iter()
                .map(|&eps| {
                    let hits = per
                        .iter()
                        .filter(|(_, d)| (d[i] as f64 / n as f64 - v_hat).abs() > eps)
                        .count();
                    hits as f64 / total
                })
                .collect()
        })
        .collect();
    let fits = config
        .epsilons
        .iter()
        .enumerate()
        .map(|(j, &epsilon)| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = config
                .n_grid
                .iter()
                .zip(&frequency)
                .filter(|(_, row)| row[j] > 0.0)
                .map(|(&n, row)| (n as f64, row[j].ln()))
                .unzip();
            let fit = if xs.len() >= 2 {
                linear_fit(&xs, &ys).ok()
            } else {
                None
            };
            DecayFit {
                epsilon,
                below_resolution: fit.is_none(),
                fit,
            }
        })
        .collect();
    Ok(ConcentrationCurve {
        law: law.to_string(),
        v_hat,
        n_grid: config.n_grid.clone(),
        epsilons: config.epsilons.clone(),
        frequency,
        fits,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeEstimate {
    pub law: String,
    /// Share of decided replicas that escaped.
    pub theta: MeanCI,
    /// Replicas that neither hit the root nor reached the depth margin.
    pub undecided: u64,
}

/// Frequency of never hitting the root while climbing `depth_margin` levels.
pub fn estimate_escape(config: &ExperimentConfig, law: &LeafLaw) -> Result<EscapeEstimate> {
    config.validate()?;
    let per = per_replica(config.replicas, config.seed, |s| {
        let traj = simulate(
            law,
            config.horizon,
            InitialState::EdgeNonRootTip,
            s,
            Retention::Summary,
        )?;
        let hit = traj.depth.contains(&0);
        let climbed = traj
            .depth
            .iter()
            .any(|&d| d >= traj.depth[0] + config.censor.depth_margin);
        Ok(match (hit, climbed) {
            (true, _) => Some(0.0),
            (false, true) => Some(1.0),
            (false, false) => None,
        })
    })?;
    let decided: Vec<f64> = per.iter().flatten().copied().collect();
    if decided.len() < MIN_CI_SAMPLES {
        return Err(Error::Undersampled {
            what: format!("decided escape outcomes for {law}"),
            needed: MIN_CI_SAMPLES,
            achieved: decided.len(),
        });
    }
    Ok(EscapeEstimate {
        law: law.to_string(),
        theta: MeanCI::from_samples(&decided)?,
        undecided: (per.len() - decided.len()) as u64,
    })
}

fn to_csv<W: std::io::Write>(out: W, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// `p, v_direct, ci, v_renewal, ci, error`; the law text replaces `p` for
/// non-Bernoulli laws.
pub fn write_speed_csv<W: std::io::Write>(out: W, points: &[SpeedPoint]) -> Result<()> {
    let rows = points
        .iter()
        .map(|pt| {
            let e = pt.estimate.as_ref();
            vec![
                pt.p.map(|p| p.to_string())
                    .unwrap_or_else(|| pt.law.clone()),
                opt(e.map(|e| e.v_hat_direct.mean)),
                opt(e.map(|e| e.v_hat_direct.half_width)),
                opt(e.and_then(|e| e.v_hat_renewal).map(|v| v.mean)),
                opt(e.and_then(|e| e.v_hat_renewal).map(|v| v.half_width)),
                pt.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    to_csv(
        out,
        &[
            "p",
            "v_direct",
            "v_direct_ci",
            "v_renewal",
            "v_renewal_ci",
            "error",
        ],
        rows,
    )
}

/// `n, survival` over the integer support of the samples.
pub fn write_survival_csv<W: std::io::Write>(out: W, samples: &[u64]) -> Result<()> {
    let rows = survival(samples)
        .into_iter()
        .map(|(n, s)| vec![n.to_string(), s.to_string()])
        .collect();
    to_csv(out, &["n", "survival"], rows)
}

pub fn write_concentration_csv<W: std::io::Write>(
    out: W,
    curve: &ConcentrationCurve,
) -> Result<()> {
    let mut rows = Vec::new();
    for (i, &n) in curve.n_grid.iter().enumerate() {
        for (j, &eps) in curve.epsilons.iter().enumerate() {
            rows.push(vec![
                n.to_string(),
                eps.to_string(),
                curve.frequency[i][j].to_string(),
            ]);
        }
    }
    to_csv(out, &["n", "eps", "freq"], rows)
}

/// `k, count` with expected geometric counts at the fitted parameter.
pub fn write_k_hist_csv<W: std::io::Write>(out: W, test: &GeometricTest) -> Result<()> {
    let n = test.n_samples as f64;
    let q = 1.0 - test.theta_hat;
    let rows = test
        .support_counts
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            vec![
                k.to_string(),
                c.to_string(),
                (n * test.theta_hat * q.powi(k as i32)).to_string(),
            ]
        })
        .collect();
    to_csv(out, &["k", "count", "expected"], rows)
}
