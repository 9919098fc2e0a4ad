//! Command-line front end.
//!
//! Every subcommand writes its outputs into the directory given by `--out`
//! (or `MODSURF_OUT`) together with `manifest.json`. Settings come from
//! flags, then from an optional `--config` file of `key = value` lines,
//! then from defaults. Output files depend only on the settings; wall-clock
//! data appears only in the manifest.

use crate::excursions::{coding, decompose_ray, excursion_csv, CodingSequence, ThickThinDecomposition, DEFAULT_MERGE_GAP};
use crate::fellow_travel::{compare_segments, deviation_profile, CompareConfig, FellowError};
use crate::integrator::{Integrator, StopRule, Tolerances, Trajectory};
use crate::metrics::{delta_to_cusp, MetricId, MetricParams};
use crate::modular_group::{Lift, UHPoint};
use crate::statistics::{
    circular_order, coefficient_stats, count_grid, psi_csv, psi_samples, round_trip_summary, series_csv, singularity_diagnostic, summarize_growth, ray_series, CircularOrder, CoefficientReport, ExperimentConfig,
    GrowthReport, RoundTripSummary, SingularityReport, StatsError,
};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_INSUFFICIENT: i32 = 4;
pub const OUT_ENV: &str = "MODSURF_OUT";
pub const TRACE_CSV_HEADER: &str = "t,x,y,vx,vy,height,delta";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numeric(String),
    Insufficient(String),
    Io(std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Insufficient(_) => EXIT_INSUFFICIENT,
            CliError::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Numeric(m) => write!(f, "numerical failure: {m}"),
            CliError::Insufficient(m) => write!(f, "insufficient samples: {m}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::InvalidConfig(m) => CliError::Usage(m),
            StatsError::TooFewSamples { .. } => CliError::Insufficient(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<FellowError> for CliError {
    fn from(e: FellowError) -> Self {
        match e {
            FellowError::NotThick(_) | FellowError::DepthTooSmall(_) | FellowError::InsideHoroball => CliError::Usage(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "modsurf", version, about = "Geodesics of the hyperbolic and WP model metrics on the modular surface")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Output directory (default: $MODSURF_OUT).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// File of `key = value` lines; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: available cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Relative step tolerance of the integrator.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Horoball height h.
    #[arg(long)]
    pub h: Option<f64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Integrate one geodesic ray and write its samples.
    Trace {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        metric: Option<String>,
        /// Start point `X,Y`.
        #[arg(long, allow_hyphen_values = true)]
        start: Option<String>,
        /// Direction in degrees from the positive real axis.
        #[arg(long, allow_hyphen_values = true)]
        angle: Option<f64>,
        #[arg(long)]
        time: Option<f64>,
    },
    /// Thick-thin decomposition and coding of one ray.
    Excursions {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        metric: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        start: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        angle: Option<f64>,
        #[arg(long)]
        time: Option<f64>,
        #[arg(long = "merge-gap")]
        merge_gap: Option<f64>,
    },
    /// WP and hyperbolic segments between two thick points.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        p: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        q: Option<String>,
        #[arg(long = "merge-gap")]
        merge_gap: Option<f64>,
        /// Penetration below which unmatched excursions count as shallow.
        #[arg(long)]
        shallow: Option<f64>,
    },
    /// WP excursion profile against the hyperbolic arc.
    Deviation {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        depth: Option<f64>,
    },
    /// Winding growth, time change and coefficient statistics.
    Stats {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        metric: Option<String>,
        #[arg(long)]
        rays: Option<usize>,
        #[arg(long)]
        time: Option<f64>,
        /// Largest coefficient count for running averages.
        #[arg(long)]
        coefficients: Option<usize>,
        /// Base point `X,Y`.
        #[arg(long, allow_hyphen_values = true)]
        base: Option<String>,
    },
    /// Empirical circle map and singularity diagnostics.
    Psi {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rays: Option<usize>,
        #[arg(long)]
        time: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        base: Option<String>,
        /// Comma-separated cylinder depths.
        #[arg(long)]
        depths: Option<String>,
        /// Comma-separated histogram bin counts.
        #[arg(long)]
        bins: Option<String>,
        #[arg(long)]
        bootstrap: Option<usize>,
    },
}

/// Values from the config file, consumed key by key.
struct Settings {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut file = BTreeMap::new();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            for (n, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", n + 1)))?;
                file.insert(k.trim().replace('-', "_"), v.trim().to_string());
            }
        }
        Ok(Settings { file, resolved: BTreeMap::new() })
    }

    fn value<T: FromStr + ToString>(&mut self, key: &str, flag: Option<T>, default: Option<T>) -> Result<T, CliError> {
        let from_file = self.file.remove(key);
        let v = match flag {
            Some(v) => v,
            None => match from_file {
                Some(s) => s.parse().map_err(|_| CliError::Usage(format!("bad value for {key}: '{s}'")))?,
                None => default.ok_or_else(|| CliError::Usage(format!("missing required --{}", key.replace('_', "-"))))?,
            },
        };
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    fn finish(self) -> Result<BTreeMap<String, String>, CliError> {
        if let Some(k) = self.file.keys().next() {
            return Err(CliError::Usage(format!("unknown config key '{k}'")));
        }
        Ok(self.resolved)
    }
}

fn parse_point(s: &str) -> Result<UHPoint, CliError> {
    let bad = || CliError::Usage(format!("expected X,Y with Y > 0, got '{s}'"));
    let (x, y) = s.split_once(',').ok_or_else(bad)?;
    let (x, y): (f64, f64) = (x.trim().parse().map_err(|_| bad())?, y.trim().parse().map_err(|_| bad())?);
    UHPoint::new(x, y).map_err(|_| bad())
}

fn parse_list(s: &str) -> Result<Vec<usize>, CliError> {
    s.split(',').map(|t| t.trim().parse().map_err(|_| CliError::Usage(format!("expected a comma-separated list of counts, got '{s}'")))).collect()
}

fn metric(s: &str) -> Result<MetricId, CliError> {
    s.parse().map_err(CliError::Usage)
}

struct Run {
    command: &'static str,
    out: PathBuf,
    files: Vec<(String, String)>,
}

impl Run {
    fn new(command: &'static str, common: &Common) -> Result<Self, CliError> {
        let out = common.out.clone().or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from)).ok_or_else(|| CliError::Usage(format!("missing --out (or {OUT_ENV})")))?;
        std::fs::create_dir_all(&out)?;
        Ok(Run { command, out, files: vec![] })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        std::fs::write(self.out.join(name), contents)?;
        self.files.push((name.to_string(), hex::encode(Sha256::digest(contents.as_bytes()))));
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Numeric(e.to_string()))?;
        s.push('\n');
        self.write(name, &s)
    }

    fn manifest(self, settings: BTreeMap<String, String>, started: Instant) -> Result<(), CliError> {
        let seed = settings.get("seed").cloned();
        let unix = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let manifest = RunManifest {
            command: self.command.to_string(),
            config: settings,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            finished_unix: unix,
            wall_time_seconds: started.elapsed().as_secs_f64(),
            outputs: self.files.into_iter().map(|(file, sha256)| OutputDigest { file, sha256 }).collect(),
        };
        let s = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Numeric(e.to_string()))?;
        std::fs::write(self.out.join("manifest.json"), s + "\n")?;
        Ok(())
    }
}

#[derive(Debug, Serialize)]
pub struct OutputDigest {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub seed: Option<String>,
    pub version: String,
    pub finished_unix: u64,
    pub wall_time_seconds: f64,
    pub outputs: Vec<OutputDigest>,
}

struct Base {
    tol: Tolerances,
    params: MetricParams,
    threads: Option<usize>,
}

fn base(s: &mut Settings, c: &Common) -> Result<Base, CliError> {
    let d = Tolerances::default();
    let step = s.value("tol", c.tol, Some(d.step))?;
    if !(step > 0.0 && step < 1.0) {
        return Err(CliError::Usage(format!("tol must lie in (0,1), got {step}")));
    }
    let h = s.value("h", c.h, Some(MetricParams::default().horoball_height))?;
    let params = MetricParams::new(h).map_err(|e| CliError::Usage(e.to_string()))?;
    let threads = match c.threads.or(s.file.remove("threads").map(|t| t.parse()).transpose().map_err(|_| CliError::Usage("bad value for threads".into()))?) {
        Some(0) => return Err(CliError::Usage("threads must be positive".into())),
        t => t,
    };
    Ok(Base { tol: Tolerances { step, ..d }, params, threads })
}

fn integrate(m: MetricId, start: UHPoint, angle_deg: f64, time: f64, b: &Base) -> Result<Trajectory, CliError> {
    let lift = Lift::from_global(start).map_err(|e| CliError::Usage(e.to_string()))?;
    Integrator::new(m, b.params, b.tol).run_angle(lift, angle_deg.to_radians(), StopRule::Duration(time)).map_err(|e| match e {
        crate::integrator::IntegrationError::InvalidDuration(_) => CliError::Usage(e.to_string()),
        e => CliError::Numeric(e.to_string()),
    })
}

fn trace_csv(t: &Trajectory) -> String {
    let mut out = String::from(TRACE_CSV_HEADER);
    out.push('\n');
    for (i, s) in t.samples.iter().enumerate() {
        let z = t.global(i);
        let v = match t.lift(i) {
            Some(l) => l.chart.inverse().push_vector(s.z, s.v),
            None => (f64::NAN, f64::NAN),
        };
        let delta = delta_to_cusp(z).unwrap_or(f64::NAN);
        out.push_str(&format!("{},{},{},{},{},{},{}\n", s.t, z.x, z.y, v.0, v.1, s.z.y, delta));
    }
    out
}

#[derive(Serialize)]
struct ExcursionOutput<'a> {
    metric: MetricId,
    horoball_height: f64,
    duration: f64,
    count: usize,
    thick_segments: usize,
    total_winding: f64,
    coding: &'a CodingSequence,
    conserved_audit: f64,
}

fn excursion_output<'a>(t: &Trajectory, d: &ThickThinDecomposition, c: &'a CodingSequence) -> ExcursionOutput<'a> {
    ExcursionOutput {
        metric: t.metric,
        horoball_height: d.horoball_height,
        duration: t.duration(),
        count: d.excursions.iter().filter(|e| !e.empty).count(),
        thick_segments: d.thick.len(),
        total_winding: d.excursions.iter().map(|e| e.winding).sum(),
        coding: c,
        conserved_audit: t.conserved_audit,
    }
}

#[derive(Serialize)]
struct StatsSummary {
    config: ExperimentConfig,
    horizons: Vec<f64>,
    growth: GrowthReport,
    coefficients: CoefficientReport,
}

#[derive(Serialize)]
struct PsiReport {
    config: ExperimentConfig,
    samples: usize,
    recurrent: usize,
    order: CircularOrder,
    round_trip: RoundTripSummary,
    singularity: Option<SingularityReport>,
}

fn experiment(s: &mut Settings, c: &Common, b: &Base, m: MetricId, rays: Option<usize>, time: Option<f64>, coefficients: Option<usize>, base_pt: Option<String>) -> Result<ExperimentConfig, CliError> {
    let d = ExperimentConfig::default();
    let base_pt = s.value("base", base_pt, Some("0.2,1".to_string()))?;
    let cfg = ExperimentConfig {
        metric: m,
        rays: s.value("rays", rays, Some(d.rays))?,
        time: s.value("time", time, Some(d.time))?,
        coefficients: s.value("coefficients", coefficients, Some(d.coefficients))?,
        horoball_height: b.params.horoball_height,
        base: parse_point(&base_pt)?,
        seed: s.value("seed", c.seed, Some(d.seed))?,
        tol: b.tol,
        merge_gap: DEFAULT_MERGE_GAP,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(pool.install(f))
}

fn execute(cmd: Command) -> Result<(), CliError> {
    let started = Instant::now();
    match cmd {
        Command::Trace { common, metric: m, start, angle, time } => {
            let mut s = Settings::load(common.config.as_deref())?;
            let b = base(&mut s, &common)?;
            let m = metric(&s.value("metric", m, None)?)?;
            let start = parse_point(&s.value("start", start, None)?)?;
            let angle = s.value("angle", angle, None)?;
            let time = s.value("time", time, None)?;
            let settings = s.finish()?;
            let mut run = Run::new("trace", &common)?;
            let t = integrate(m, start, angle, time, &b)?;
            run.write("trace.csv", &trace_csv(&t))?;
            run.manifest(settings, started)
        }
        Command::Excursions { common, metric: m, start, angle, time, merge_gap } => {
            let mut s = Settings::load(common.config.as_deref())?;
            let b = base(&mut s, &common)?;
            let m = metric(&s.value("metric", m, None)?)?;
            let start = parse_point(&s.value("start", start, None)?)?;
            let angle = s.value("angle", angle, None)?;
            let time = s.value("time", time, None)?;
            let gap = s.value("merge_gap", merge_gap, Some(DEFAULT_MERGE_GAP))?;
            let settings = s.finish()?;
            let mut run = Run::new("excursions", &common)?;
            let t = integrate(m, start, angle, time, &b)?;
            let d = decompose_ray(&t, b.params.horoball_height, gap).map_err(|e| CliError::Numeric(e.to_string()))?;
            let c = coding(&t, &d).map_err(|e| CliError::Numeric(e.to_string()))?;
            run.write("excursions.csv", &excursion_csv(&d))?;
            run.json("excursions.json", &excursion_output(&t, &d, &c))?;
            run.manifest(settings, started)
        }
        Command::Compare { common, p, q, merge_gap, shallow } => {
            let mut s = Settings::load(common.config.as_deref())?;
            let b = base(&mut s, &common)?;
            let p = parse_point(&s.value("p", p, None)?)?;
            let q = parse_point(&s.value("q", q, None)?)?;
            let cfg = CompareConfig {
                params: b.params,
                merge_gap: s.value("merge_gap", merge_gap, Some(DEFAULT_MERGE_GAP))?,
                shallow_penetration: s.value("shallow", shallow, Some(CompareConfig::default().shallow_penetration))?,
                tol: b.tol,
            };
            let settings = s.finish()?;
            let mut run = Run::new("compare", &common)?;
            let lift = |z: UHPoint| Lift::from_global(z).map_err(|e| CliError::Usage(e.to_string()));
            let report = compare_segments(lift(p)?, lift(q)?, &cfg)?;
            run.json("compare.json", &report)?;
            run.manifest(settings, started)
        }
        Command::Deviation { common, depth } => {
            let mut s = Settings::load(common.config.as_deref())?;
            let b = base(&mut s, &common)?;
            let depth = s.value("depth", depth, None)?;
            let settings = s.finish()?;
            let mut run = Run::new("deviation", &common)?;
            let profile = deviation_profile(depth, b.tol)?;
            run.write("deviation.csv", &profile.csv())?;
            run.json("deviation.json", &profile)?;
            run.manifest(settings, started)
        }
        Command::Stats { common, metric: m, rays, time, coefficients, base: bp } => {
            let mut s = Settings::load(common.config.as_deref())?;
            let b = base(&mut s, &common)?;
            let m = metric(&s.value("metric", m, Some("wp".to_string()))?)?;
            let cfg = experiment(&mut s, &common, &b, m, rays, time, coefficients, bp)?;
            let settings = s.finish()?;
            let mut run = Run::new("stats", &common)?;
            let horizons = vec![cfg.time / 4.0, cfg.time / 2.0, cfg.time];
            let (series, coefs) = in_pool(b.threads, || (ray_series(&cfg, &horizons), coefficient_stats(&cfg, &count_grid(cfg.coefficients))))?;
            let series = series?;
            let summary = StatsSummary { config: cfg, growth: summarize_growth(&cfg, &series, &horizons), horizons, coefficients: coefs? };
            run.write("rays.csv", &series_csv(&series))?;
            run.json("stats.json", &summary)?;
            run.manifest(settings, started)
        }
        Command::Psi { common, rays, time, base: bp, depths, bins, bootstrap } => {
            let mut s = Settings::load(common.config.as_deref())?;
            let b = base(&mut s, &common)?;
            let cfg = experiment(&mut s, &common, &b, MetricId::WpModel, rays, time.or(Some(60.0)), None, bp)?;
            let depths = parse_list(&s.value("depths", depths, Some("5,10,20,50".to_string()))?)?;
            let bins = parse_list(&s.value("bins", bins, Some("10,100,1000".to_string()))?)?;
            if bins.contains(&0) {
                return Err(CliError::Usage("bin counts must be positive".into()));
            }
            let bootstrap = s.value("bootstrap", bootstrap, Some(200))?;
            let settings = s.finish()?;
            let mut run = Run::new("psi", &common)?;
            let samples = in_pool(b.threads, || psi_samples(&cfg))??;
            let singularity = match singularity_diagnostic(&samples, cfg.base, &depths, &bins, bootstrap, cfg.seed) {
                Ok(r) => Some(r),
                Err(StatsError::TooFewSamples { .. }) => None,
                Err(e) => return Err(e.into()),
            };
            let report = PsiReport {
                config: cfg,
                samples: samples.len(),
                recurrent: samples.iter().filter(|x| x.recurrent).count(),
                order: circular_order(&samples),
                round_trip: round_trip_summary(&samples),
                singularity,
            };
            let insufficient = report.singularity.is_none();
            run.write("psi.csv", &psi_csv(&samples))?;
            run.json("psi.json", &report)?;
            run.manifest(settings, started)?;
            if insufficient {
                return Err(CliError::Insufficient(format!("{} recurrent samples, the diagnostic needs {}", report.recurrent, crate::statistics::MIN_DIAGNOSTIC_SAMPLES)));
            }
            Ok(())
        }
    }
}

/// Runs the command line `args` (including the program name) and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("modsurf: {e}");
            e.exit_code()
        }
    }
}
