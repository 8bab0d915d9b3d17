//! Command-line front end. Every command writes its outputs plus a
//! `manifest.json` recording the arguments, resolved configuration and
//! SHA-256 digests, so `tbrw rerun <manifest>` can reproduce and compare.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::exact::{
    self, enumerate_with_cap, ho_series_terms_with_cap, ComplexProbe, EventMonitor, HitRootAt,
    NoRenewalBy, ProbPolynomial, WholeSpace,
};
use crate::mc::{self, ExperimentConfig};
use crate::model::{simulate, InitialState, LeafLaw, Retention, RngStream};
use crate::renewal::CensorPolicy;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CAPACITY: i32 = 3;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "tbrw", version, about = "Tree builder random walk laboratory")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one trajectory.
    Simulate(SimulateArgs),
    /// Data behind the figures.
    Figures {
        #[command(subcommand)]
        figure: Figure,
    },
    /// Exact finite-horizon checks.
    Verify {
        #[command(subcommand)]
        check: Check,
    },
    /// Monte Carlo experiments.
    Experiments(ExperimentArgs),
    /// Re-execute a run from its manifest and compare output digests.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Args)]
struct LawArgs {
    /// Bernoulli growth parameter.
    #[arg(long, conflicts_with = "q")]
    p: Option<f64>,
    /// Leaf pmf as `count:mass,...`.
    #[arg(long)]
    q: Option<String>,
}

#[derive(Debug, Clone, Args)]
struct OutArgs {
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum RetentionArg {
    Full,
    Summary,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    law: LawArgs,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    replica: u64,
    #[arg(long, value_enum, default_value_t = RetentionArg::Full)]
    retention: RetentionArg,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Subcommand)]
enum Figure {
    /// Trees for p = 0.1, 0.5, 0.9 after floor(99/p) steps, as DOT.
    TreeGallery {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Speed estimates over p = 0.1, ..., 1.0.
    SpeedCurve {
        #[arg(long, default_value_t = 100)]
        replicas: u64,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EventArg {
    /// First visit to the root at step n.
    HitRoot,
    WholeSpace,
    /// No renewal candidate confirmed up to n.
    NoRenewal,
}

#[derive(Debug, Subcommand)]
enum Check {
    /// Complex-extension bound for {H_o = m}, m = 1..=n.
    AnBound {
        #[arg(long)]
        p: f64,
        #[arg(long)]
        r: f64,
        #[arg(long, default_value_t = 10)]
        n: usize,
        /// Probe points per circle.
        #[arg(long, default_value_t = 64)]
        points: usize,
        /// Circle radii; defaults to r/2 and 0.9 r.
        #[arg(long, value_delimiter = ',')]
        radii: Option<Vec<f64>>,
        #[arg(long, default_value_t = exact::DEFAULT_CAP)]
        cap: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Terms of the series for P(H_o < infinity).
    HoSeries {
        #[arg(long, default_value_t = 9)]
        n: usize,
        #[arg(long, default_value_t = exact::DEFAULT_CAP)]
        cap: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// The whole space has probability one for every horizon up to n.
    Normalization {
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = exact::DEFAULT_CAP)]
        cap: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Exact event probability against simulated frequency.
    CrossValidate {
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 0.5)]
        p: f64,
        #[arg(long, value_enum, default_value_t = EventArg::HitRoot)]
        event: EventArg,
        #[arg(long, default_value_t = 100_000)]
        replicas: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = exact::DEFAULT_CAP)]
        cap: usize,
        #[command(flatten)]
        out: OutArgs,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
enum Experiment {
    TauTail,
    KGeom,
    Concentration,
    Escape,
    Speed,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(value_enum)]
    which: Experiment,
    /// Key-value configuration file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    law: LawArgs,
    #[arg(long)]
    replicas: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    depth_margin: Option<u32>,
    #[arg(long)]
    horizon_margin: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct RerunArgs {
    manifest: PathBuf,
    /// Where to write the reproduced outputs; defaults to `rerun/` next to
    /// the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Lib(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Lib(e) => match e {
                Error::InvalidLaw(_)
                | Error::InvalidArgument(_)
                | Error::InvalidTree(_)
                | Error::DegenerateLaw(_)
                | Error::Range { .. } => EXIT_USAGE,
                Error::Capacity { .. } | Error::Undersampled { .. } | Error::SampleSize { .. } => {
                    EXIT_CAPACITY
                }
                _ => EXIT_CHECK_FAILED,
            },
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, without `--out`.
    pub args: Vec<String>,
    pub config: Value,
    pub seed: Option<u64>,
    pub version: String,
    pub outputs: Vec<OutputDigest>,
    pub wall_clock_s: f64,
    /// SHA-256 over the output names and digests, in order.
    pub digest: String,
    pub passed: bool,
}

impl RunManifest {
    pub fn load(path: &Path) -> crate::Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// Recomputes the digests of the outputs next to the manifest.
    pub fn verify_outputs(&self, dir: &Path) -> crate::Result<bool> {
        let mut current = Vec::with_capacity(self.outputs.len());
        for out in &self.outputs {
            let bytes = fs::read(dir.join(&out.path))?;
            current.push(digest_entry(&out.path, &bytes));
        }
        Ok(current == self.outputs && combined_digest(&current) == self.digest)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn digest_entry(name: &str, bytes: &[u8]) -> OutputDigest {
    OutputDigest {
        path: name.to_string(),
        sha256: sha256_hex(bytes),
        bytes: bytes.len() as u64,
    }
}

fn combined_digest(outputs: &[OutputDigest]) -> String {
    let mut h = Sha256::new();
    for o in outputs {
        h.update(o.path.as_bytes());
        h.update([0]);
        h.update(o.sha256.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

/// What a command produced, before anything is written.
struct Produced {
    files: Vec<(String, Vec<u8>)>,
    config: Value,
    seed: Option<u64>,
    passed: bool,
    summary: String,
}

fn json_bytes<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(Error::from)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// `--p 0` is refused; the point mass at zero must be asked for explicitly
/// with `--q "0:1"`.
fn law_from(args: &LawArgs) -> CliResult<Option<LeafLaw>> {
    match (&args.p, &args.q) {
        (Some(p), _) => {
            if !(*p > 0.0 && *p <= 1.0) {
                return Err(usage(format!(
                    "--p {p}: need 0 < p <= 1 (the point mass at zero is only available as --q \"0:1\")"
                )));
            }
            Ok(Some(
                LeafLaw::bernoulli(*p).map_err(|e| usage(e.to_string()))?,
            ))
        }
        (None, Some(q)) => Ok(Some(
            LeafLaw::parse(q).map_err(|e| usage(format!("--q: {e}")))?,
        )),
        (None, None) => Ok(None),
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let rest: Vec<String> = argv
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match execute(cli, &rest) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_CHECK_FAILED,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli, argv: &[String]) -> CliResult<bool> {
    if let Command::Rerun(args) = cli.command {
        return rerun(&args);
    }
    let (name, out) = command_name_and_out(&cli.command);
    let start = Instant::now();
    let produced = produce(cli.command)?;
    let elapsed = start.elapsed().as_secs_f64();
    let manifest = write_outputs(
        &out,
        name,
        strip_out(argv),
        produced.config,
        produced.seed,
        &produced.files,
        produced.passed,
        elapsed,
    )?;
    println!("{}", produced.summary);
    println!(
        "wrote {} files to {} (digest {})",
        manifest.outputs.len() + 1,
        out.display(),
        &manifest.digest[..16]
    );
    Ok(produced.passed)
}

fn command_name_and_out(command: &Command) -> (String, PathBuf) {
    match command {
        Command::Simulate(a) => ("simulate".into(), a.out.out.clone()),
        Command::Figures { figure } => match figure {
            Figure::TreeGallery { out, .. } => ("figures tree-gallery".into(), out.out.clone()),
            Figure::SpeedCurve { out, .. } => ("figures speed-curve".into(), out.out.clone()),
        },
        Command::Verify { check } => match check {
            Check::AnBound { out, .. } => ("verify an-bound".into(), out.out.clone()),
            Check::HoSeries { out, .. } => ("verify ho-series".into(), out.out.clone()),
            Check::Normalization { out, .. } => ("verify normalization".into(), out.out.clone()),
            Check::CrossValidate { out, .. } => ("verify cross-validate".into(), out.out.clone()),
        },
        Command::Experiments(a) => (
            format!(
                "experiments {}",
                a.which.to_possible_value().expect("named").get_name()
            ),
            a.out.out.clone(),
        ),
        Command::Rerun(_) => ("rerun".into(), PathBuf::from(".")),
    }
}

fn strip_out(argv: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(argv.len());
    let mut skip = false;
    for a in argv {
        if skip {
            skip = false;
            continue;
        }
        if a == "--out" {
            skip = true;
            continue;
        }
        if a.starts_with("--out=") {
            continue;
        }
        out.push(a.clone());
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn write_outputs(
    dir: &Path,
    command: String,
    args: Vec<String>,
    config: Value,
    seed: Option<u64>,
    files: &[(String, Vec<u8>)],
    passed: bool,
    wall_clock_s: f64,
) -> CliResult<RunManifest> {
    fs::create_dir_all(dir).map_err(Error::from)?;
    let mut outputs = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        write_atomic(&dir.join(name), bytes).map_err(Error::from)?;
        outputs.push(digest_entry(name, bytes));
    }
    let manifest = RunManifest {
        command,
        args,
        config,
        seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        digest: combined_digest(&outputs),
        outputs,
        wall_clock_s,
        passed,
    };
    write_atomic(&dir.join(MANIFEST_NAME), &json_bytes(&manifest)?).map_err(Error::from)?;
    Ok(manifest)
}

fn rerun(args: &RerunArgs) -> CliResult<bool> {
    let manifest = RunManifest::load(&args.manifest).map_err(|e| {
        usage(format!(
            "cannot read manifest {}: {e}",
            args.manifest.display()
        ))
    })?;
    let out = match &args.out {
        Some(dir) => dir.clone(),
        None => args
            .manifest
            .parent()
            .unwrap_or(Path::new("."))
            .join("rerun"),
    };
    let mut argv = vec!["tbrw".to_string()];
    argv.extend(manifest.args.iter().cloned());
    argv.push("--out".into());
    argv.push(out.to_string_lossy().into_owned());
    let cli = Cli::try_parse_from(&argv)
        .map_err(|e| usage(format!("manifest arguments do not parse: {e}")))?;
    if matches!(cli.command, Command::Rerun(_)) {
        return Err(usage("a manifest cannot point at another rerun"));
    }
    execute(cli, &argv[1..])?;
    let again = RunManifest::load(&out.join(MANIFEST_NAME))?;
    let same = again.outputs == manifest.outputs && again.digest == manifest.digest;
    for (old, new) in manifest.outputs.iter().zip(&again.outputs) {
        if old != new {
            println!("differs: {}", old.path);
        }
    }
    println!(
        "rerun of `{}`: {}",
        manifest.command,
        if same {
            "identical outputs"
        } else {
            "OUTPUTS DIFFER"
        }
    );
    Ok(same)
}

fn produce(command: Command) -> CliResult<Produced> {
    match command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Figures { figure } => match figure {
            Figure::TreeGallery { seed, .. } => cmd_tree_gallery(seed),
            Figure::SpeedCurve {
                replicas,
                steps,
                seed,
                ..
            } => {
                let config = ExperimentConfig {
                    replicas,
                    horizon: steps,
                    seed,
                    ..ExperimentConfig::default()
                };
                cmd_speed(config)
            }
        },
        Command::Verify { check } => match check {
            Check::AnBound {
                p,
                r,
                n,
                points,
                radii,
                cap,
                ..
            } => cmd_an_bound(p, r, n, points, radii, cap),
            Check::HoSeries { n, cap, .. } => cmd_ho_series(n, cap),
            Check::Normalization { n, cap, .. } => cmd_normalization(n, cap),
            Check::CrossValidate {
                n,
                p,
                event,
                replicas,
                seed,
                cap,
                ..
            } => cmd_cross_validate(n, p, event, replicas, seed, cap),
        },
        Command::Experiments(a) => cmd_experiment(a),
        Command::Rerun(_) => unreachable!("handled before"),
    }
}

fn cmd_simulate(a: SimulateArgs) -> CliResult<Produced> {
    let law = law_from(&a.law)?.ok_or_else(|| usage("simulate needs --p or --q"))?;
    if a.steps == 0 {
        return Err(usage("--steps must be positive"));
    }
    let retention = match a.retention {
        RetentionArg::Full => Retention::Full,
        RetentionArg::Summary => Retention::Summary,
    };
    let traj = simulate(
        &law,
        a.steps,
        InitialState::EdgeNonRootTip,
        RngStream::new(a.seed, a.replica),
        retention,
    )?;
    let mut files = vec![("trajectory.json".to_string(), json_bytes(&traj)?)];
    if let Some(parents) = &traj.parents {
        let tree = crate::model::GrowingTree::from_parents(parents, 0)?;
        files.push(("tree.dot".to_string(), tree.to_dot().into_bytes()));
    }
    let summary = format!(
        "law {law} (kappa {}), {} steps: final depth {}, height {}, {} vertices",
        law.kappa(),
        a.steps,
        traj.depth[a.steps],
        traj.height[a.steps],
        traj.vertex_count[a.steps]
    );
    Ok(Produced {
        files,
        config: json!({
            "law": law.to_string(),
            "kappa": law.kappa(),
            "steps": a.steps,
            "seed": a.seed,
            "replica": a.replica,
            "retention": a.retention,
        }),
        seed: Some(a.seed),
        passed: true,
        summary,
    })
}

/// `floor(99 / p)` for `p = k / 10`, in exact arithmetic.
fn gallery_steps(k: u32) -> usize {
    (990 / k) as usize
}

fn cmd_tree_gallery(seed: u64) -> CliResult<Produced> {
    let mut files = Vec::new();
    let mut summary = Vec::new();
    for k in [1u32, 5, 9] {
        let p = f64::from(k) / 10.0;
        let steps = gallery_steps(k);
        let traj = simulate(
            &LeafLaw::bernoulli(p)?,
            steps,
            InitialState::EdgeNonRootTip,
            RngStream::new(seed, u64::from(k)),
            Retention::Full,
        )?;
        let tree = crate::model::GrowingTree::from_parents(
            traj.parents.as_deref().expect("full retention"),
            0,
        )?;
        summary.push(format!(
            "p = {p}: {steps} steps, {} vertices",
            tree.vertex_count()
        ));
        files.push((format!("tree_p{p}.dot"), tree.to_dot().into_bytes()));
    }
    Ok(Produced {
        files,
        config: json!({ "p": [0.1, 0.5, 0.9], "steps": [990, 198, 110], "seed": seed }),
        seed: Some(seed),
        passed: true,
        summary: summary.join("\n"),
    })
}

fn cmd_speed(config: ExperimentConfig) -> CliResult<Produced> {
    let points = mc::run_speed_curve(&config)?;
    let mut csv = Vec::new();
    mc::write_speed_csv(&mut csv, &points)?;
    let summary = points
        .iter()
        .map(|pt| match &pt.estimate {
            Some(e) => format!(
                "{}: v_direct {:.4} +- {:.4}",
                pt.law, e.v_hat_direct.mean, e.v_hat_direct.half_width
            ),
            None => format!("{}: {}", pt.law, pt.error.as_deref().unwrap_or("")),
        })
        .collect::<Vec<_>>()
        .join("\n");
    Ok(Produced {
        files: vec![
            ("speed_curve.csv".into(), csv),
            ("speed.json".into(), json_bytes(&points)?),
        ],
        config: serde_json::to_value(&config).map_err(Error::from)?,
        seed: Some(config.seed),
        passed: true,
        summary,
    })
}

fn cmd_an_bound(
    p: f64,
    r: f64,
    n: usize,
    points: usize,
    radii: Option<Vec<f64>>,
    cap: usize,
) -> CliResult<Produced> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(usage(format!("--p {p}: need 0 < p <= 1")));
    }
    if !(r > 0.0 && r < p) {
        return Err(usage(format!("--r {r}: need 0 < r < p = {p}")));
    }
    if n == 0 || points == 0 {
        return Err(usage("--n and --points must be positive"));
    }
    let radii = radii.unwrap_or_else(|| vec![r / 2.0, 0.9 * r]);
    let probe = ComplexProbe::circles(p, r, &radii, points).map_err(|e| usage(e.to_string()))?;
    let terms = ho_series_terms_with_cap(n, cap)?;
    let reports: Vec<_> = terms
        .iter()
        .map(|poly| exact::verify_an_bound(poly, &probe))
        .collect();
    let passed = reports.iter().all(|r| r.holds);
    let worst = reports.iter().map(|r| r.max_ratio).fold(0.0, f64::max);
    Ok(Produced {
        files: vec![(
            "an_bound.json".into(),
            json_bytes(
                &json!({ "event": "first root visit at m, m = 1..n", "holds": passed, "reports": reports }),
            )?,
        )],
        config: json!({ "p": p, "r": r, "n": n, "points": points, "radii": radii, "cap": cap }),
        seed: None,
        passed,
        summary: format!(
            "an-bound p = {p}, r = {r}, n <= {n}: holds = {passed}, max ratio {worst:.3e}"
        ),
    })
}

fn cmd_ho_series(n: usize, cap: usize) -> CliResult<Produced> {
    let terms = ho_series_terms_with_cap(n, cap)?;
    let grid: Vec<BigRational> = (0..=100)
        .map(|g| BigRational::new(g.into(), 100.into()))
        .collect();
    let parity = terms
        .iter()
        .enumerate()
        .all(|(k, t)| t.is_zero() == ((k + 1) % 2 == 0));
    let mut partial = vec![BigRational::zero(); grid.len()];
    let mut increasing = true;
    let mut at_one = Vec::with_capacity(terms.len());
    for term in &terms {
        for (acc, p) in partial.iter_mut().zip(&grid) {
            let v = term.eval_rational(p);
            increasing &= v >= BigRational::zero();
            *acc += v;
        }
        at_one.push(partial[100].clone());
    }
    let bounded = partial.iter().all(|s| *s <= BigRational::one());
    let mut dominated = true;
    for (k, term) in terms.iter().enumerate() {
        let none = enumerate_with_cap(k + 1, &NoRenewalBy, cap)?;
        dominated &= term
            .coefficients()
            .iter()
            .zip(none.coefficients())
            .all(|(a, b)| a <= b);
        dominated &= grid
            .iter()
            .all(|p| term.eval_rational(p) <= none.eval_rational(p));
    }
    let passed = parity && increasing && bounded && dominated;
    let sums: Vec<Value> = at_one
        .iter()
        .map(|s| json!({ "exact": s.to_string(), "value": s.to_f64() }))
        .collect();
    Ok(Produced {
        files: vec![(
            "ho_series.json".into(),
            json_bytes(&json!({
                "terms": terms.iter().map(ProbPolynomial::to_json).collect::<Vec<_>>(),
                "partial_sums_at_p1": sums,
                "parity": parity,
                "partial_sums_increasing": increasing,
                "partial_sums_at_most_one": bounded,
                "dominated_by_no_renewal": dominated,
                "holds": passed,
            }))?,
        )],
        config: json!({ "n": n, "cap": cap }),
        seed: None,
        passed,
        summary: format!(
            "ho-series n <= {n}: parity {parity}, bounded {bounded}, dominated {dominated}; partial sum at p = 1: {}",
            at_one.last().map(|s| s.to_string()).unwrap_or_default()
        ),
    })
}

fn cmd_normalization(n: usize, cap: usize) -> CliResult<Produced> {
    if n == 0 {
        return Err(usage("--n must be positive"));
    }
    let mut per = Vec::with_capacity(n);
    for m in 1..=n {
        per.push(enumerate_with_cap(m, &WholeSpace, cap)?.is_one());
    }
    let passed = per.iter().all(|&b| b);
    Ok(Produced {
        files: vec![(
            "normalization.json".into(),
            json_bytes(&json!({ "identically_one": per, "holds": passed }))?,
        )],
        config: json!({ "n": n, "cap": cap }),
        seed: None,
        passed,
        summary: format!("normalization n <= {n}: holds = {passed}"),
    })
}

fn cross_check<E: EventMonitor>(
    n: usize,
    event: &E,
    p: f64,
    replicas: u64,
    seed: u64,
    cap: usize,
) -> CliResult<(ProbPolynomial, exact::CrossValidation)> {
    let poly = enumerate_with_cap(n, event, cap)?;
    let report = exact::cross_validate(&poly, event, p, replicas, seed)?;
    Ok((poly, report))
}

fn cmd_cross_validate(
    n: usize,
    p: f64,
    event: EventArg,
    replicas: u64,
    seed: u64,
    cap: usize,
) -> CliResult<Produced> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(usage(format!("--p {p}: need 0 < p <= 1")));
    }
    if n == 0 || replicas == 0 {
        return Err(usage("--n and --replicas must be positive"));
    }
    let (poly, report) = match event {
        EventArg::HitRoot => cross_check(n, &HitRootAt::new(n), p, replicas, seed, cap)?,
        EventArg::WholeSpace => cross_check(n, &WholeSpace, p, replicas, seed, cap)?,
        EventArg::NoRenewal => cross_check(n, &NoRenewalBy, p, replicas, seed, cap)?,
    };
    let event_name = event
        .to_possible_value()
        .expect("named")
        .get_name()
        .to_string();
    Ok(Produced {
        files: vec![(
            "cross_validate.json".into(),
            json_bytes(&json!({ "event": event_name, "polynomial": poly.to_json(), "report": report }))?,
        )],
        config: json!({ "n": n, "p": p, "event": event_name, "replicas": replicas, "seed": seed, "cap": cap }),
        seed: Some(seed),
        passed: report.agrees,
        summary: format!(
            "{event_name} at n = {n}, p = {p}: exact {:.6}, frequency {:.6} (sigma {:.2e}), agrees = {}",
            report.exact, report.frequency, report.sigma, report.agrees
        ),
    })
}

/// Values read from a `key = value` configuration file.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct ConfigFile {
    pub laws: Vec<LeafLaw>,
    pub replicas: Option<u64>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub depth_margin: Option<u32>,
    pub horizon_margin: Option<usize>,
    pub eps: Option<Vec<f64>>,
    pub n_grid: Option<Vec<usize>>,
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<Vec<T>, String> {
    value
        .split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| format!("`{key}`: bad entry `{}`", t.trim()))
        })
        .collect()
}

fn parse_one<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .trim()
        .parse()
        .map_err(|_| format!("`{key}`: bad value `{}`", value.trim()))
}

impl ConfigFile {
    /// Blank lines and `#` comments are ignored; `p` takes a comma list of
    /// Bernoulli parameters and `q` one pmf per line.
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut c = ConfigFile::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", i + 1))?;
            let key = key.trim();
            let value = value.trim();
            let at = |e: String| format!("line {}: {e}", i + 1);
            match key {
                "p" => {
                    for p in parse_list::<f64>(key, value).map_err(at)? {
                        c.laws
                            .push(LeafLaw::bernoulli(p).map_err(|e| at(e.to_string()))?);
                    }
                }
                "q" => c
                    .laws
                    .push(LeafLaw::parse(value).map_err(|e| at(e.to_string()))?),
                "replicas" => c.replicas = Some(parse_one(key, value).map_err(at)?),
                "steps" | "horizon" => c.steps = Some(parse_one(key, value).map_err(at)?),
                "seed" => c.seed = Some(parse_one(key, value).map_err(at)?),
                "depth_margin" => c.depth_margin = Some(parse_one(key, value).map_err(at)?),
                "horizon_margin" => c.horizon_margin = Some(parse_one(key, value).map_err(at)?),
                "eps" => c.eps = Some(parse_list(key, value).map_err(at)?),
                "n_grid" => c.n_grid = Some(parse_list(key, value).map_err(at)?),
                other => return Err(at(format!("unknown key `{other}`"))),
            }
        }
        Ok(c)
    }
}

fn experiment_config(a: &ExperimentArgs) -> CliResult<ExperimentConfig> {
    let file = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read config file {}: {e}", path.display())))?;
            ConfigFile::parse(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => ConfigFile::default(),
    };
    let speed = a.which == Experiment::Speed;
    let mut config = ExperimentConfig {
        laws: if speed {
            mc::bernoulli_grid()
        } else {
            vec![LeafLaw::bernoulli(0.5).expect("valid")]
        },
        replicas: if speed { 100 } else { 10_000 },
        horizon: if speed { 2000 } else { 5000 },
        ..ExperimentConfig::default()
    };
    if !file.laws.is_empty() {
        config.laws = file.laws.clone();
    }
    if let Some(law) = law_from(&a.law)? {
        config.laws = vec![law];
    }
    config.replicas = a.replicas.or(file.replicas).unwrap_or(config.replicas);
    config.horizon = a.steps.or(file.steps).unwrap_or(config.horizon);
    config.seed = a.seed.or(file.seed).unwrap_or(config.seed);
    let depth_margin = a
        .depth_margin
        .or(file.depth_margin)
        .unwrap_or(config.censor.depth_margin);
    let horizon_margin = a
        .horizon_margin
        .or(file.horizon_margin)
        .unwrap_or(config.censor.horizon_margin);
    config.censor =
        CensorPolicy::new(depth_margin, horizon_margin).map_err(|e| usage(e.to_string()))?;
    if let Some(eps) = a.eps.clone().or(file.eps) {
        config.epsilons = eps;
    }
    if let Some(grid) = a.n_grid.clone().or(file.n_grid) {
        config.n_grid = grid;
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

fn single_law(config: &ExperimentConfig) -> CliResult<LeafLaw> {
    match config.laws.as_slice() {
        [law] => Ok(law.clone()),
        _ => Err(usage("this experiment takes exactly one law")),
    }
}

fn cmd_experiment(a: ExperimentArgs) -> CliResult<Produced> {
    let config = experiment_config(&a)?;
    let config_json = serde_json::to_value(&config).map_err(Error::from)?;
    let seed = Some(config.seed);
    let produced = |files, passed, summary| Produced {
        files,
        config: config_json.clone(),
        seed,
        passed,
        summary,
    };
    match a.which {
        Experiment::Speed => cmd_speed(config.clone()),
        Experiment::TauTail => {
            let law = single_law(&config)?;
            let tail = mc::run_tau_tail(&config, &law)?;
            let mut csv = Vec::new();
            mc::write_survival_csv(&mut csv, &tail.samples)?;
            let fits = json!({
                "law": tail.law,
                "samples": tail.samples.len(),
                "censored": tail.censored,
                "exponential": tail.exponential,
                "stretched": tail.stretched,
                "exponential_preferred": tail.exponential_preferred,
            });
            let summary = format!(
                "tau tail for {}: {} samples, exponential rate {:.4e} (R2 {:.4}), stretched R2 {:.4}",
                tail.law,
                tail.samples.len(),
                tail.exponential.rate_c,
                tail.exponential.r_squared,
                tail.stretched.r_squared
            );
            Ok(produced(
                vec![
                    ("tau_tail.csv".into(), csv),
                    ("fits.json".into(), json_bytes(&fits)?),
                ],
                true,
                summary,
            ))
        }
        Experiment::KGeom => {
            let law = single_law(&config)?;
            let km = mc::run_k_and_m(&config, &law)?;
            let mut csv = Vec::new();
            mc::write_k_hist_csv(&mut csv, &km.k_test)?;
            let fits = json!({
                "law": km.law,
                "k_test": km.k_test,
                "theta_ref": km.theta_ref,
                "theta_z": km.theta_z,
                "m_samples": km.m_samples.len(),
                "m_fit": km.m_fit,
            });
            let summary = format!(
                "K for {}: theta_hat {:.4}, chi-square p-value {:.4}; M exponential rate {:.4} (R2 {:.4})",
                km.law, km.k_test.theta_hat, km.k_test.p_value, km.m_fit.rate_c, km.m_fit.r_squared
            );
            Ok(produced(
                vec![
                    ("k_hist.csv".into(), csv),
                    ("fits.json".into(), json_bytes(&fits)?),
                ],
                true,
                summary,
            ))
        }
        Experiment::Concentration => {
            let law = single_law(&config)?;
            let curve = mc::run_concentration(&config, &law, None)?;
            let mut csv = Vec::new();
            mc::write_concentration_csv(&mut csv, &curve)?;
            let summary = curve
                .fits
                .iter()
                .map(|f| match &f.fit {
                    Some(line) => {
                        format!("eps {}: log-frequency slope {:.3e}", f.epsilon, line.slope)
                    }
                    None => format!("eps {}: below resolution", f.epsilon),
                })
                .collect::<Vec<_>>()
                .join("\n");
            Ok(produced(
                vec![
                    ("concentration.csv".into(), csv),
                    ("fits.json".into(), json_bytes(&curve)?),
                ],
                true,
                summary,
            ))
        }
        Experiment::Escape => {
            let mut estimates = Vec::new();
            for law in &config.laws {
                estimates.push(mc::estimate_escape(&config, law)?);
            }
            let summary = estimates
                .iter()
                .map(|e| {
                    format!(
                        "{}: escape {:.4} +- {:.4}",
                        e.law, e.theta.mean, e.theta.half_width
                    )
                })
                .collect::<Vec<_>>()
                .join("\n");
            Ok(produced(
                vec![("escape.json".into(), json_bytes(&estimates)?)],
                true,
                summary,
            ))
        }
    }
}
