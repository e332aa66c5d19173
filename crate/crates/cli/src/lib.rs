//! Command implementations for the `mdfhp` binary.
//!
//! The binary wires the library crate into reproducible runs: catalogue
//! download (`fetch`), maximum-likelihood fitting (`fit`), transformed-time
//! residual diagnostics (`residuals`), thinning simulation (`simulate`),
//! information-gain forecast scoring (`igain`) and the magnitude-cut
//! comparison sweep (`sweep`).
//!
//! Conventions shared by every command:
//!
//! * Exit codes: 0 success, 2 usage/configuration error, 3 I/O or network
//!   failure, 4 input-consistency failure (hash mismatches, impossible model
//!   files). Mapping lives in [`CmdError`].
//! * A JSON run config (`--config`) can supply any option; explicit flags win
//!   on conflict. Config keys are the flag names with `_` for `-`.
//! * Worker threads: `--threads` wins over the `MDFHP_THREADS` env var; with
//!   neither, one worker per core.
//! * Every output file embeds the tool version, the seed (where one is
//!   used) and SHA-256 hashes of its input files — as JSON fields, `#`
//!   comment lines in CSV, or an XML comment in SVG — so results stay
//!   traceable to the exact data behind them.
//!
//! Subprocess numbering in all reports is 1-based with subprocess 1 the
//! HIGHEST magnitude interval, matching the model convention.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mdfhp_core::catalog::{fetch_usgs_from, Catalog, CatalogError, Region, UsgsQuery, USGS_BASE};
use mdfhp_core::estimate::{fit_etas, fit_mdfhp, FitError, FitOptions, FitResult, FittedModel};
use mdfhp_core::infogain::{igain, write_igain_csv, ClassGain, IgainError, IgainReport};
use mdfhp_core::model::{EtasModel, MagnitudePartition, MdfhpModel, ModelError, MAG_CEILING};
use mdfhp_core::residual::{
    cross_stream_correlation, ks_band_levels, ks_uniform_test, ks_uniform_test_one_sided,
    mean_removed_path, pearson_serial_test, transformed_times, write_residual_csv,
    write_residual_svg, ResidualError, ResidualSeries,
};
use mdfhp_core::simulate::{
    rng_stream, simulate_etas, simulate_mdfhp, SimulateError, DEFAULT_CASCADE_CAP,
};

/// Version string embedded in every output file.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Env var consulted for the default worker-thread count.
pub const THREADS_ENV: &str = "MDFHP_THREADS";

// ---------------------------------------------------------------------------
// Errors and exit codes
// ---------------------------------------------------------------------------

/// Command failure, classified by exit code.
#[derive(Debug)]
pub enum CmdError {
    /// Bad flags or configuration (exit 2, same code clap uses).
    Usage(String),
    /// File or network trouble (exit 3).
    Io(String),
    /// Inputs are individually readable but mutually inconsistent, or a model
    /// file describes an unusable model (exit 4).
    Consistency(String),
}

impl CmdError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::Usage(_) => 2,
            CmdError::Io(_) => 3,
            CmdError::Consistency(_) => 4,
        }
    }
}

impl fmt::Display for CmdError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CmdError::Usage(m) | CmdError::Io(m) | CmdError::Consistency(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CmdError {}

impl From<CatalogError> for CmdError {
    fn from(e: CatalogError) -> Self {
        match e {
            CatalogError::HashMismatch { .. } => CmdError::Consistency(e.to_string()),
            CatalogError::Empty => CmdError::Usage(e.to_string()),
            _ => CmdError::Io(e.to_string()),
        }
    }
}

impl From<FitError> for CmdError {
    // Fit errors are all structural: bad cuts, empty subprocesses and the
    // like, i.e. the request cannot be posed, not a numerical failure.
    fn from(e: FitError) -> Self {
        CmdError::Usage(e.to_string())
    }
}

impl From<ResidualError> for CmdError {
    fn from(e: ResidualError) -> Self {
        match e {
            ResidualError::Io(io) => CmdError::Io(io.to_string()),
            other => CmdError::Consistency(other.to_string()),
        }
    }
}

impl From<SimulateError> for CmdError {
    fn from(e: SimulateError) -> Self {
        match e {
            // Window and history-window conflicts come straight from flags.
            SimulateError::EmptyWindow | SimulateError::BadHistory => {
                CmdError::Usage(e.to_string())
            }
            SimulateError::Model(_) | SimulateError::RunawayCascade { .. } => {
                CmdError::Consistency(e.to_string())
            }
        }
    }
}

impl From<IgainError> for CmdError {
    fn from(e: IgainError) -> Self {
        match e {
            IgainError::BadConfig(_) | IgainError::BadClasses { .. } => {
                CmdError::Usage(e.to_string())
            }
            IgainError::Model(m) => CmdError::Consistency(m.to_string()),
            IgainError::Simulate(s) => s.into(),
        }
    }
}

impl From<ModelError> for CmdError {
    // Model construction from a fit file failing means the file is unusable.
    fn from(e: ModelError) -> Self {
        CmdError::Consistency(e.to_string())
    }
}

impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        CmdError::Io(e.to_string())
    }
}

fn io_ctx(what: impl fmt::Display) -> impl FnOnce(std::io::Error) -> CmdError {
    move |e| CmdError::Io(format!("{what}: {e}"))
}

// ---------------------------------------------------------------------------
// Command line
// ---------------------------------------------------------------------------

/// Earthquake point-process toolkit: fit, diagnose, simulate and score
/// magnitude-interacting Hawkes and ETAS models on USGS catalogues.
#[derive(Debug, Parser)]
#[command(name = "mdfhp", version, after_help = EXIT_CODE_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

const EXIT_CODE_HELP: &str = "Exit codes:\n  \
    0  success\n  \
    2  usage or configuration error\n  \
    3  I/O or network failure\n  \
    4  input consistency failure (hash mismatch, unusable model file)";

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Download a catalogue from the USGS FDSN service and save it as JSON.
    Fetch(FetchArgs),
    /// Fit a model to a catalogue by maximum likelihood.
    Fit(FitArgs),
    /// Transformed-time residual diagnostics of a fitted model.
    Residuals(ResidualsArgs),
    /// Simulate a fitted model by thinning, optionally continuing an
    /// observed history.
    Simulate(SimulateArgs),
    /// Score a fitted model's windowed forecasts against an empirical-rate
    /// Poisson reference (information gain per unit time).
    Igain(IgainArgs),
    /// Fit the two-subprocess model at several magnitude cuts and compare.
    Sweep(SweepArgs),
}

/// Which model family a command refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mdfhp,
    Etas,
}

#[derive(Debug, Args)]
pub struct FetchArgs {
    /// Query start, ISO date or datetime (e.g. 1993-07-12).
    #[arg(long)]
    pub start: Option<String>,
    /// Query end, ISO date or datetime.
    #[arg(long)]
    pub end: Option<String>,
    /// Magnitude floor; events below it are excluded.
    #[arg(long)]
    pub m0: Option<f64>,
    /// Selection box as min_lon,max_lon,min_lat,max_lat (degrees).
    #[arg(long, value_parser = parse_region, allow_hyphen_values = true)]
    pub region: Option<Region>,
    /// Output catalogue JSON path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// FDSN service base URL (testing hook) [default: the USGS service].
    #[arg(long)]
    pub base_url: Option<String>,
    /// JSON run config supplying any of the above; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Catalogue JSON (from `fetch`).
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Model family to fit.
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// Magnitude cut points for the subprocess partition (mdfhp only),
    /// comma-separated, strictly inside (m0, 10).
    #[arg(long, value_delimiter = ',')]
    pub cuts: Option<Vec<f64>>,
    /// Optimiser starts (1 heuristic + rest perturbed) [default: 10].
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Seed for the restart perturbations [default: 1].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Simplex convergence tolerance [default: 1e-9].
    #[arg(long)]
    pub nm_tol: Option<f64>,
    /// Evaluation budget per simplex start [default: 30000].
    #[arg(long)]
    pub nm_max_evals: Option<usize>,
    /// Skip the quasi-Newton polish after the simplex stage.
    #[arg(long)]
    pub no_polish: bool,
    /// Skip the observed-information confidence intervals.
    #[arg(long)]
    pub no_ci: bool,
    /// Two-sided confidence level for the intervals [default: 0.90].
    #[arg(long)]
    pub ci_level: Option<f64>,
    /// Worker threads (overrides MDFHP_THREADS) [default: all cores].
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output fit JSON path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON run config supplying any of the above; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ResidualsArgs {
    /// Catalogue JSON the model is diagnosed on.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Fit JSON (from `fit`).
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// Directory for per-subprocess CSV/SVG files and the summary JSON.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Proceed when the fit was computed on a different catalogue.
    #[arg(long)]
    pub allow_hash_mismatch: bool,
    /// JSON run config supplying any of the above; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Fit JSON holding the model to simulate.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// Catalogue whose events at or before t-start condition the simulation.
    #[arg(long)]
    pub history_catalog: Option<PathBuf>,
    /// Window start in days.
    #[arg(long)]
    pub t_start: Option<f64>,
    /// Window end in days (exclusive).
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Simulation seed [default: 1].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Runaway-cascade guard: maximum events per window [default: 1000000].
    #[arg(long)]
    pub cap: Option<usize>,
    /// Output CSV path (columns t, mag, subprocess).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Proceed when the fit was computed on a different catalogue.
    #[arg(long)]
    pub allow_hash_mismatch: bool,
    /// JSON run config supplying any of the above; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IgainArgs {
    /// Catalogue JSON providing history and outcomes.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Fit JSON holding the forecast model.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// Interior magnitude-class boundaries, comma-separated; classes are
    /// [m0,c1),[c1,c2),...,[ck,10].
    #[arg(long, value_delimiter = ',')]
    pub class_cuts: Option<Vec<f64>>,
    /// Forecast window length in days [default: 2].
    #[arg(long)]
    pub window_days: Option<f64>,
    /// Monte Carlo replicates per window [default: 2000].
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Simulation seed [default: 1].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (overrides MDFHP_THREADS) [default: all cores].
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output report JSON path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the per-class table as CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Proceed when the fit was computed on a different catalogue.
    #[arg(long)]
    pub allow_hash_mismatch: bool,
    /// JSON run config supplying any of the above; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Catalogue JSON.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Magnitude cuts to compare, comma-separated; each fits a separate
    /// two-subprocess model. At least two are required.
    #[arg(long, value_delimiter = ',')]
    pub cuts: Option<Vec<f64>>,
    /// Optimiser starts per cut [default: 10].
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Optimiser seed [default: 1].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Evaluation budget per simplex start [default: 30000].
    #[arg(long)]
    pub nm_max_evals: Option<usize>,
    /// Skip the gradient polish after the simplex stage.
    #[arg(long)]
    pub no_polish: bool,
    /// Interior class boundaries for the per-cut information-gain column;
    /// omitting it (or --replicates 0) skips that column.
    #[arg(long, value_delimiter = ',')]
    pub class_cuts: Option<Vec<f64>>,
    /// Forecast window length in days for the information gain [default: 2].
    #[arg(long)]
    pub window_days: Option<f64>,
    /// Monte Carlo replicates for the information gain [default: 0 = skip].
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Worker threads (overrides MDFHP_THREADS) [default: all cores].
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output comparison JSON path (optional; the table always prints).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON run config supplying any of the above; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Run one parsed command; the binary maps the error to an exit code.
pub fn run(cli: Cli) -> Result<(), CmdError> {
    match cli.command {
        Command::Fetch(a) => cmd_fetch(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Residuals(a) => cmd_residuals(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Igain(a) => cmd_igain(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing: config merge, threads, metadata, file envelopes
// ---------------------------------------------------------------------------

/// Load a command's JSON config, or its default when no path was given.
/// Unknown keys are rejected so typos fail loudly.
fn load_config<T: DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T, CmdError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_ctx(format!("config {}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CmdError::Usage(format!("config {}: {e}", p.display())))
        }
    }
}

/// Option still unset after merging flags and config.
fn require<T>(v: Option<T>, flag: &str) -> Result<T, CmdError> {
    v.ok_or_else(|| CmdError::Usage(format!("missing required option --{flag} (flag or config)")))
}

/// Install the global worker pool: explicit flag, then the env var, then the
/// rayon default. A second installation attempt in one process is ignored.
fn init_threads(flag: Option<usize>) -> Result<(), CmdError> {
    let from_env = || match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) => Some(n),
            Err(_) => {
                eprintln!("warning: ignoring unparsable {THREADS_ENV}={v:?}");
                None
            }
        },
        Err(_) => None,
    };
    if let Some(n) = flag.or_else(from_env) {
        if n == 0 {
            return Err(CmdError::Usage("--threads must be at least 1".into()));
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Provenance block embedded in every output file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Meta {
    pub tool_version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// SHA-256 of each input, keyed by role (`catalog`, `fit`, ...).
    pub inputs: BTreeMap<String, String>,
}

impl Meta {
    fn new(seed: Option<u64>) -> Self {
        Meta { tool_version: TOOL_VERSION.into(), seed, inputs: BTreeMap::new() }
    }

    fn with(mut self, role: &str, hash: impl Into<String>) -> Self {
        self.inputs.insert(role.into(), hash.into());
        self
    }

    /// `#`-prefixed comment lines for CSV outputs.
    fn csv_comments(&self) -> String {
        let mut s = format!("# tool_version={}\n", self.tool_version);
        if let Some(seed) = self.seed {
            s.push_str(&format!("# seed={seed}\n"));
        }
        for (role, hash) in &self.inputs {
            s.push_str(&format!("# {role}_sha256={hash}\n"));
        }
        s
    }

    /// Single-line XML comment for SVG outputs.
    fn svg_comment(&self) -> String {
        let mut s = format!("<!-- tool_version={}", self.tool_version);
        if let Some(seed) = self.seed {
            s.push_str(&format!(" seed={seed}"));
        }
        for (role, hash) in &self.inputs {
            s.push_str(&format!(" {role}_sha256={hash}"));
        }
        s.push_str(" -->\n");
        s
    }
}

/// SHA-256 hex digest of a file's raw bytes (used to pin fit files, whose
/// semantic hash is the embedded catalogue hash instead).
pub fn sha256_file(path: &Path) -> Result<String, CmdError> {
    let bytes = fs::read(path).map_err(io_ctx(path.display()))?;
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        use fmt::Write as _;
        let _ = write!(hex, "{b:02x}");
    }
    Ok(hex)
}

fn create_parent_dirs(path: &Path) -> Result<(), CmdError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_ctx(format!("creating {}", parent.display())))?;
        }
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), CmdError> {
    create_parent_dirs(path)?;
    fs::write(path, text).map_err(io_ctx(format!("writing {}", path.display())))
}

/// On-disk fit file: provenance plus the fit itself.
#[derive(Debug, Serialize, Deserialize)]
pub struct FitFile {
    pub meta: Meta,
    pub fit: FitResult,
}

impl FitFile {
    pub fn save(&self, path: &Path) -> Result<(), CmdError> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CmdError::Io(format!("serialising fit: {e}")))?;
        write_text(path, &text)
    }

    /// Load a fit file; also returns the SHA-256 of the file bytes so
    /// downstream outputs can pin it.
    pub fn load(path: &Path) -> Result<(FitFile, String), CmdError> {
        let text = fs::read_to_string(path).map_err(io_ctx(format!("fit {}", path.display())))?;
        let file: FitFile = serde_json::from_str(&text)
            .map_err(|e| CmdError::Io(format!("fit {}: {e}", path.display())))?;
        let hash = sha256_file(path)?;
        Ok((file, hash))
    }
}

/// Load a catalogue (content hash verified) and check it against the hash a
/// fit was computed on; `allow` downgrades the mismatch to a warning.
fn load_catalog_for_fit(
    path: &Path,
    fit: &FitResult,
    allow: bool,
) -> Result<Catalog, CmdError> {
    let cat = Catalog::load_json(path)?;
    let actual = cat.content_hash();
    if actual != fit.fitted_on {
        let msg = format!(
            "fit was computed on catalogue {} but {} has hash {actual}",
            fit.fitted_on,
            path.display()
        );
        if allow {
            eprintln!("warning: {msg} (--allow-hash-mismatch)");
        } else {
            return Err(CmdError::Consistency(format!(
                "{msg}; pass --allow-hash-mismatch to proceed"
            )));
        }
    }
    Ok(cat)
}

/// Rebuild the model objects named by a fit file.
enum LoadedModel {
    Mdfhp(MdfhpModel),
    Etas(EtasModel),
}

impl LoadedModel {
    fn from_fit(fit: &FitResult) -> Result<Self, CmdError> {
        match &fit.model {
            FittedModel::Mdfhp { boundaries, params } => {
                if boundaries.len() < 2 {
                    return Err(CmdError::Consistency(
                        "fit file has an empty magnitude partition".into(),
                    ));
                }
                let cuts = &boundaries[1..boundaries.len() - 1];
                let partition = MagnitudePartition::new(boundaries[0], cuts)?;
                Ok(LoadedModel::Mdfhp(MdfhpModel::new(partition, params.clone())?))
            }
            FittedModel::Etas { m0, params } => {
                Ok(LoadedModel::Etas(EtasModel::new(*m0, params.clone())?))
            }
        }
    }
}

/// `[m0,c1),[c1,c2),...,[ck,ceiling]` from interior boundaries.
fn classes_from_cuts(m0: f64, cuts: &[f64]) -> Result<Vec<(f64, f64)>, CmdError> {
    let mut bounds = vec![m0];
    bounds.extend_from_slice(cuts);
    bounds.push(MAG_CEILING);
    if bounds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CmdError::Usage(format!(
            "class cuts must be strictly increasing inside ({m0}, {MAG_CEILING})"
        )));
    }
    Ok(bounds.windows(2).map(|w| (w[0], w[1])).collect())
}

/// Parse and validate a `min_lon,max_lon,min_lat,max_lat` box.
fn parse_region(s: &str) -> Result<Region, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bad number {p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    if parts.len() != 4 {
        return Err("expected min_lon,max_lon,min_lat,max_lat".into());
    }
    let region =
        Region { min_lon: parts[0], max_lon: parts[1], min_lat: parts[2], max_lat: parts[3] };
    validate_region(&region)?;
    Ok(region)
}

fn validate_region(r: &Region) -> Result<(), String> {
    if !(r.min_lon < r.max_lon) {
        return Err(format!("region longitudes out of order: {} >= {}", r.min_lon, r.max_lon));
    }
    if !(r.min_lat < r.max_lat) {
        return Err(format!("region latitudes out of order: {} >= {}", r.min_lat, r.max_lat));
    }
    if r.min_lat < -90.0 || r.max_lat > 90.0 {
        return Err("latitudes must lie in [-90, 90]".into());
    }
    if r.min_lon < -360.0 || r.max_lon > 360.0 {
        return Err("longitudes must lie in [-360, 360]".into());
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    match v {
        Some(x) => format!("{x:.prec$}"),
        None => "-".into(),
    }
}

// ---------------------------------------------------------------------------
// fetch
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FetchConfig {
    start: Option<String>,
    end: Option<String>,
    m0: Option<f64>,
    /// `[min_lon, max_lon, min_lat, max_lat]`.
    region: Option<[f64; 4]>,
    out: Option<PathBuf>,
    base_url: Option<String>,
}

/// Catalogue provenance written next to the payload; ignored by loaders.
#[derive(Debug, Serialize)]
struct FetchSource<'a> {
    query_start: &'a str,
    query_end: &'a str,
    m0: f64,
    region: Region,
    base_url: &'a str,
}

fn cmd_fetch(args: FetchArgs) -> Result<(), CmdError> {
    let cfg: FetchConfig = load_config(&args.config)?;
    let region = match (args.region, cfg.region) {
        (Some(r), _) => r,
        (None, Some([a, b, c, d])) => {
            let r = Region { min_lon: a, max_lon: b, min_lat: c, max_lat: d };
            validate_region(&r).map_err(CmdError::Usage)?;
            r
        }
        (None, None) => return Err(CmdError::Usage("missing required option --region".into())),
    };
    let start = require(args.start.or(cfg.start), "start")?;
    let end = require(args.end.or(cfg.end), "end")?;
    let m0 = require(args.m0.or(cfg.m0), "m0")?;
    let out = require(args.out.or(cfg.out), "out")?;
    let base = args.base_url.or(cfg.base_url).unwrap_or_else(|| USGS_BASE.into());
    if !(m0 > 0.0 && m0 < MAG_CEILING) {
        return Err(CmdError::Usage(format!("--m0 must lie in (0, {MAG_CEILING})")));
    }

    let query = UsgsQuery { start: start.clone(), end: end.clone(), m0, region };
    eprintln!("querying {base} ...");
    let cat = fetch_usgs_from(&query, &base)?;

    // Core's loader reads `sha256` + `catalog` and ignores the provenance
    // extras, so this stays loadable by `Catalog::load_json`.
    #[derive(Serialize)]
    struct CatalogFileOut<'a> {
        sha256: String,
        tool_version: &'a str,
        source: FetchSource<'a>,
        catalog: &'a Catalog,
    }
    let hash = cat.content_hash();
    let text = serde_json::to_string_pretty(&CatalogFileOut {
        sha256: hash.clone(),
        tool_version: TOOL_VERSION,
        source: FetchSource {
            query_start: &start,
            query_end: &end,
            m0,
            region,
            base_url: &base,
        },
        catalog: &cat,
    })
    .map_err(|e| CmdError::Io(format!("serialising catalogue: {e}")))?;
    write_text(&out, &text)?;

    println!(
        "fetched {} events (m0 {}, first event {}, horizon {:.2} days)",
        cat.len(),
        cat.m0,
        cat.origin_utc,
        cat.horizon_t
    );
    println!("wrote {} (sha256 {hash})", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitConfig {
    catalog: Option<PathBuf>,
    model: Option<ModelKind>,
    cuts: Option<Vec<f64>>,
    restarts: Option<usize>,
    seed: Option<u64>,
    nm_tol: Option<f64>,
    nm_max_evals: Option<usize>,
    polish: Option<bool>,
    ci: Option<bool>,
    ci_level: Option<f64>,
    threads: Option<usize>,
    out: Option<PathBuf>,
}

fn cmd_fit(args: FitArgs) -> Result<(), CmdError> {
    let cfg: FitConfig = load_config(&args.config)?;
    let catalog_path = require(args.catalog.or(cfg.catalog), "catalog")?;
    let model = require(args.model.or(cfg.model), "model")?;
    let out = require(args.out.or(cfg.out), "out")?;
    let cuts = args.cuts.or(cfg.cuts);
    let defaults = FitOptions::default();
    let opts = FitOptions {
        restarts: args.restarts.or(cfg.restarts).unwrap_or(defaults.restarts),
        seed: args.seed.or(cfg.seed).unwrap_or(defaults.seed),
        nm_tol: args.nm_tol.or(cfg.nm_tol).unwrap_or(defaults.nm_tol),
        nm_max_evals: args.nm_max_evals.or(cfg.nm_max_evals).unwrap_or(defaults.nm_max_evals),
        polish: if args.no_polish { false } else { cfg.polish.unwrap_or(defaults.polish) },
        polish_iters: defaults.polish_iters,
        compute_ci: if args.no_ci { false } else { cfg.ci.unwrap_or(defaults.compute_ci) },
        ci_level: args.ci_level.or(cfg.ci_level).unwrap_or(defaults.ci_level),
    };
    init_threads(args.threads.or(cfg.threads))?;

    let cat = Catalog::load_json(&catalog_path)?;
    let started = Instant::now();
    let fit = match model {
        ModelKind::Mdfhp => {
            let cuts = cuts.ok_or_else(|| {
                CmdError::Usage("--cuts is required for --model mdfhp".into())
            })?;
            fit_mdfhp(&cat, &cuts, &opts)?
        }
        ModelKind::Etas => {
            if cuts.is_some() {
                eprintln!("warning: --cuts is ignored for --model etas");
            }
            fit_etas(&cat, &opts)?
        }
    };
    let elapsed = started.elapsed().as_secs_f64();

    if !fit.converged {
        eprintln!(
            "warning: optimiser did not converge within its budget; \
             estimates are the best point found (flagged in the output file)"
        );
    }

    let meta = Meta::new(Some(fit.seed)).with("catalog", fit.fitted_on.clone());
    print_fit(&fit, &cat, elapsed);
    FitFile { meta, fit }.save(&out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn print_fit(fit: &FitResult, cat: &Catalog, elapsed: f64) {
    let what = match &fit.model {
        FittedModel::Mdfhp { boundaries, .. } => {
            format!("mdfhp ({} subprocesses)", boundaries.len() - 1)
        }
        FittedModel::Etas { .. } => "etas".into(),
    };
    println!(
        "fitted {what} on {} events over {:.1} days in {elapsed:.1} s",
        cat.len(),
        cat.horizon_t
    );
    println!(
        "log-likelihood {:.2} (intensity {:.2} + marks {:.2} - compensator {:.2})",
        fit.loglik,
        fit.log_intensity,
        fit.log_marks,
        fit.compensators.iter().sum::<f64>()
    );
    println!(
        "AIC {:.1}   BIC {:.1}   k={}   N={}   converged: {}",
        fit.aic,
        fit.bic,
        fit.n_params,
        fit.n_events,
        if fit.converged { "yes" } else { "NO" }
    );
    println!();
    let name_w = fit.param_names.iter().map(|n| n.len()).max().unwrap_or(9).max(9);
    let pct = (fit.ci_level * 100.0).round() as u32;
    println!("{:<name_w$}  {:>12}  {pct}% interval", "parameter", "estimate");
    for (i, name) in fit.param_names.iter().enumerate() {
        let ci = match fit.ci.get(i).and_then(|c| *c) {
            Some([lo, hi]) => format!("[{lo:.4}, {hi:.4}]"),
            None => "[unavailable]".into(),
        };
        println!("{name:<name_w$}  {:>12.5}  {ci}", fit.estimates[i]);
    }
}

// ---------------------------------------------------------------------------
// residuals
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResidualsConfig {
    catalog: Option<PathBuf>,
    fit: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    allow_hash_mismatch: Option<bool>,
}

/// Uniformity, serial-correlation and band diagnostics of one residual
/// stream. Test fields are `None` when the stream is too short for the test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreamReport {
    /// 1-based subprocess label; subprocess 1 is the highest interval.
    pub stream: usize,
    /// Magnitude interval the stream covers.
    pub mag_lo: f64,
    pub mag_hi: f64,
    pub n: usize,
    pub ks_d: Option<f64>,
    pub ks_p: Option<f64>,
    pub ks_one_sided_d: Option<f64>,
    pub ks_one_sided_p: Option<f64>,
    pub pearson_t: Option<f64>,
    pub pearson_p: Option<f64>,
    /// Half-widths of the 95% and 99% bands around the mean-removed path.
    pub band95: f64,
    pub band99: f64,
    pub path_min: f64,
    pub path_max: f64,
    /// Whole path inside the 95% band.
    pub within_95: bool,
    /// Event numbers where the path first drops below the lower 99% band
    /// (one entry per excursion).
    pub lower99_crossings: Vec<usize>,
    pub upper99_crossings: Vec<usize>,
}

/// Pairwise correlation of unit-interval event counts between two residual
/// streams (reported, not tested against).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossStreamReport {
    pub stream_a: usize,
    pub stream_b: usize,
    pub r: f64,
    pub p: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub meta: Meta,
    pub model: String,
    pub n_events: usize,
    pub streams: Vec<StreamReport>,
    pub cross_stream: Vec<CrossStreamReport>,
}

/// Assemble per-stream diagnostics from a residual series.
pub fn summarise_streams(
    series: &ResidualSeries,
    intervals: &[(f64, f64)],
) -> Vec<StreamReport> {
    (0..series.n_streams())
        .map(|j| {
            let u = &series.u[j];
            let n = u.len();
            let path = mean_removed_path(series, j);
            let (band95, band99) = ks_band_levels(n);
            let path_min = path.iter().map(|&(_, v)| v).fold(f64::INFINITY, f64::min);
            let path_max = path.iter().map(|&(_, v)| v).fold(f64::NEG_INFINITY, f64::max);
            let crossings = |sign: f64| -> Vec<usize> {
                let mut out = Vec::new();
                let mut outside = false;
                for &(k, v) in &path {
                    let now = sign * v > band99;
                    if now && !outside {
                        out.push(k);
                    }
                    outside = now;
                }
                out
            };
            let ks = ks_uniform_test(u).ok();
            let ks1 = ks_uniform_test_one_sided(u).ok();
            let pearson = pearson_serial_test(u).ok();
            let (lo, hi) = intervals.get(j).copied().unwrap_or((f64::NAN, f64::NAN));
            StreamReport {
                stream: j + 1,
                mag_lo: lo,
                mag_hi: hi,
                n,
                ks_d: ks.map(|x| x.0),
                ks_p: ks.map(|x| x.1),
                ks_one_sided_d: ks1.map(|x| x.0),
                ks_one_sided_p: ks1.map(|x| x.1),
                pearson_t: pearson.map(|x| x.0),
                pearson_p: pearson.map(|x| x.1),
                band95,
                band99,
                path_min: if n == 0 { 0.0 } else { path_min },
                path_max: if n == 0 { 0.0 } else { path_max },
                within_95: path_min >= -band95 && path_max <= band95,
                lower99_crossings: crossings(-1.0),
                upper99_crossings: crossings(1.0),
            }
        })
        .collect()
}

/// Magnitude interval of each residual stream of a fitted model.
fn stream_intervals(model: &FittedModel) -> Vec<(f64, f64)> {
    match model {
        FittedModel::Mdfhp { boundaries, .. } => {
            // Subprocess index 0 is the top interval: reverse the boundary
            // pairs.
            boundaries
                .windows(2)
                .rev()
                .map(|w| (w[0], w[1]))
                .collect()
        }
        FittedModel::Etas { m0, .. } => vec![(*m0, MAG_CEILING)],
    }
}

fn cmd_residuals(args: ResidualsArgs) -> Result<(), CmdError> {
    let cfg: ResidualsConfig = load_config(&args.config)?;
    let catalog_path = require(args.catalog.or(cfg.catalog), "catalog")?;
    let fit_path = require(args.fit.or(cfg.fit), "fit")?;
    let out_dir = require(args.out_dir.or(cfg.out_dir), "out-dir")?;
    let allow = args.allow_hash_mismatch || cfg.allow_hash_mismatch.unwrap_or(false);

    let (fit_file, fit_hash) = FitFile::load(&fit_path)?;
    let fit = &fit_file.fit;
    let cat = load_catalog_for_fit(&catalog_path, fit, allow)?;
    let meta = Meta::new(None)
        .with("catalog", cat.content_hash())
        .with("fit", fit_hash);

    let series = transformed_times(fit, &cat)?;
    let intervals = stream_intervals(&fit.model);
    let streams = summarise_streams(&series, &intervals);
    let cross = cross_stream_correlation(&series)
        .into_iter()
        .map(|(i, j, r, p)| CrossStreamReport { stream_a: i + 1, stream_b: j + 1, r, p })
        .collect::<Vec<_>>();

    fs::create_dir_all(&out_dir).map_err(io_ctx(format!("creating {}", out_dir.display())))?;
    let model_name = match &fit.model {
        FittedModel::Mdfhp { .. } => "mdfhp",
        FittedModel::Etas { .. } => "etas",
    };
    for report in &streams {
        let j = report.stream - 1;
        let base = out_dir.join(format!("residuals_sp{}", report.stream));

        let mut csv = meta.csv_comments().into_bytes();
        write_residual_csv(&mut csv, &series, j).map_err(io_ctx("residual csv"))?;
        fs::write(base.with_extension("csv"), csv).map_err(io_ctx("residual csv"))?;

        let title = format!(
            "{model_name} subprocess {}: M in [{}, {})",
            report.stream, report.mag_lo, report.mag_hi
        );
        let mut svg = meta.svg_comment().into_bytes();
        write_residual_svg(&mut svg, &series, j, &title).map_err(io_ctx("residual svg"))?;
        fs::write(base.with_extension("svg"), svg).map_err(io_ctx("residual svg"))?;
    }

    let summary = ResidualSummary {
        meta,
        model: model_name.into(),
        n_events: cat.len(),
        streams: streams.clone(),
        cross_stream: cross.clone(),
    };
    let summary_path = out_dir.join("residual_summary.json");
    let text = serde_json::to_string_pretty(&summary)
        .map_err(|e| CmdError::Io(format!("serialising summary: {e}")))?;
    fs::write(&summary_path, text).map_err(io_ctx(format!("writing {}", summary_path.display())))?;

    println!("residual diagnostics of {model_name} on {} events", cat.len());
    println!();
    println!(
        "{:<7} {:>6} {:>8} {:>8} {:>10} {:>10}  {}",
        "stream", "n", "KS D", "KS p", "Pearson t", "Pearson p", "within 95% band"
    );
    for s in &streams {
        println!(
            "sp{:<5} {:>6} {:>8} {:>8} {:>10} {:>10}  {}",
            s.stream,
            s.n,
            fmt_opt(s.ks_d, 4),
            fmt_opt(s.ks_p, 4),
            fmt_opt(s.pearson_t, 3),
            fmt_opt(s.pearson_p, 4),
            if s.within_95 { "yes" } else { "NO" }
        );
        if !s.lower99_crossings.is_empty() {
            println!("        crosses lower 99% band at event(s) {:?}", s.lower99_crossings);
        }
        if !s.upper99_crossings.is_empty() {
            println!("        crosses upper 99% band at event(s) {:?}", s.upper99_crossings);
        }
    }
    for c in &cross {
        println!(
            "cross-stream counts sp{} x sp{}: r = {:.4} (p = {:.4})",
            c.stream_a, c.stream_b, c.r, c.p
        );
    }
    println!("wrote per-stream CSV/SVG and residual_summary.json in {}", out_dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    fit: Option<PathBuf>,
    history_catalog: Option<PathBuf>,
    t_start: Option<f64>,
    t_end: Option<f64>,
    seed: Option<u64>,
    cap: Option<usize>,
    out: Option<PathBuf>,
    allow_hash_mismatch: Option<bool>,
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CmdError> {
    let cfg: SimulateConfig = load_config(&args.config)?;
    let fit_path = require(args.fit.or(cfg.fit), "fit")?;
    let t_start = require(args.t_start.or(cfg.t_start), "t-start")?;
    let t_end = require(args.t_end.or(cfg.t_end), "t-end")?;
    let out = require(args.out.or(cfg.out), "out")?;
    let seed = args.seed.or(cfg.seed).unwrap_or(1);
    let cap = args.cap.or(cfg.cap).unwrap_or(DEFAULT_CASCADE_CAP);
    let history_path = args.history_catalog.or(cfg.history_catalog);
    let allow = args.allow_hash_mismatch || cfg.allow_hash_mismatch.unwrap_or(false);

    let (fit_file, fit_hash) = FitFile::load(&fit_path)?;
    let fit = &fit_file.fit;
    let mut meta = Meta::new(Some(seed)).with("fit", fit_hash);

    // Conditioning history: catalogue events at or before the window start.
    let history = match &history_path {
        Some(p) => {
            let cat = load_catalog_for_fit(p, fit, allow)?;
            meta = meta.with("history_catalog", cat.content_hash());
            let cut = cat.events.partition_point(|e| e.t <= t_start);
            cat.events[..cut].to_vec()
        }
        None => Vec::new(),
    };

    let model = LoadedModel::from_fit(fit)?;
    let mut rng = rng_stream(seed, 0, 0);
    let events = match &model {
        LoadedModel::Mdfhp(m) => simulate_mdfhp(m, &history, (t_start, t_end), &mut rng, cap)?,
        LoadedModel::Etas(m) => simulate_etas(m, &history, (t_start, t_end), &mut rng, cap)?,
    };

    let mut text = meta.csv_comments();
    text.push_str(&format!("# window=[{t_start},{t_end})\n"));
    text.push_str(&format!("# history_events={}\n", history.len()));
    text.push_str("t,mag,subprocess\n");
    for e in &events {
        text.push_str(&format!("{},{},{}\n", e.t, e.mag, e.subprocess + 1));
    }
    write_text(&out, &text)?;

    println!(
        "simulated {} events on [{t_start}, {t_end}) conditioned on {} history events",
        events.len(),
        history.len()
    );
    println!("wrote {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// igain
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct IgainConfig {
    catalog: Option<PathBuf>,
    fit: Option<PathBuf>,
    class_cuts: Option<Vec<f64>>,
    window_days: Option<f64>,
    replicates: Option<usize>,
    seed: Option<u64>,
    threads: Option<usize>,
    out: Option<PathBuf>,
    csv: Option<PathBuf>,
    allow_hash_mismatch: Option<bool>,
}

/// On-disk information-gain report.
#[derive(Debug, Serialize, Deserialize)]
pub struct IgainFile {
    pub meta: Meta,
    pub report: IgainReport,
}

fn cmd_igain(args: IgainArgs) -> Result<(), CmdError> {
    let cfg: IgainConfig = load_config(&args.config)?;
    let catalog_path = require(args.catalog.or(cfg.catalog), "catalog")?;
    let fit_path = require(args.fit.or(cfg.fit), "fit")?;
    let class_cuts = require(args.class_cuts.or(cfg.class_cuts), "class-cuts")?;
    let out = require(args.out.or(cfg.out), "out")?;
    let window_days = args.window_days.or(cfg.window_days).unwrap_or(2.0);
    let replicates = args.replicates.or(cfg.replicates).unwrap_or(2000);
    let seed = args.seed.or(cfg.seed).unwrap_or(1);
    let csv_path = args.csv.or(cfg.csv);
    let allow = args.allow_hash_mismatch || cfg.allow_hash_mismatch.unwrap_or(false);
    init_threads(args.threads.or(cfg.threads))?;

    let (fit_file, fit_hash) = FitFile::load(&fit_path)?;
    let fit = &fit_file.fit;
    let cat = load_catalog_for_fit(&catalog_path, fit, allow)?;
    let m0 = match &fit.model {
        FittedModel::Mdfhp { boundaries, .. } => boundaries[0],
        FittedModel::Etas { m0, .. } => *m0,
    };
    let classes = classes_from_cuts(m0, &class_cuts)?;

    eprintln!(
        "scoring {} windows x {replicates} replicates; this simulates the whole \
         catalogue span once per replicate",
        mdfhp_core::infogain::windows(cat.horizon_t, window_days).len()
    );
    let started = Instant::now();
    let report = igain(&fit.model, &cat, &classes, window_days, replicates, seed)?;
    let elapsed = started.elapsed().as_secs_f64();

    let meta = Meta::new(Some(seed))
        .with("catalog", cat.content_hash())
        .with("fit", fit_hash);
    print_igain(&report);
    println!("({elapsed:.1} s)");

    if let Some(p) = &csv_path {
        let mut text = meta.csv_comments();
        let mut body = Vec::new();
        write_igain_csv(&mut body, &report).map_err(io_ctx("igain csv"))?;
        text.push_str(&String::from_utf8(body).expect("csv is utf-8"));
        write_text(p, &text)?;
        println!("wrote {}", p.display());
    }
    let text = serde_json::to_string_pretty(&IgainFile { meta, report })
        .map_err(|e| CmdError::Io(format!("serialising report: {e}")))?;
    write_text(&out, &text)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn print_igain(report: &IgainReport) {
    println!(
        "information gain over {} windows of {} days (S = {}, reference rate {:.4}/day, \
         reference slope {:.3})",
        report.n_windows, report.window_days, report.replicates, report.lambda_bar, report.b_ref
    );
    println!();
    println!(
        "{:<14} {:>5} {:>9} {:>5} {:>9} {:>5} {:>9} {:>10} {:>9}",
        "class", "N_S", "G_S", "N_F", "G_F", "N", "G", "rho_T", "SE"
    );
    for c in &report.classes {
        println!(
            "[{:.2},{:>5.2}) {:>5} {:>9.2} {:>5} {:>9.2} {:>5} {:>9.2} {:>10.5} {:>9.5}",
            c.lo, c.hi, c.n_s, c.g_s, c.n_f, c.g_f, c.n, c.g, c.rho_t, c.rho_t_se
        );
        if c.clamped > 0 {
            println!("    ({} window probabilities clamped)", c.clamped);
        }
    }
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepConfig {
    catalog: Option<PathBuf>,
    cuts: Option<Vec<f64>>,
    restarts: Option<usize>,
    seed: Option<u64>,
    nm_max_evals: Option<usize>,
    polish: Option<bool>,
    class_cuts: Option<Vec<f64>>,
    window_days: Option<f64>,
    replicates: Option<usize>,
    threads: Option<usize>,
    out: Option<PathBuf>,
}

/// Settings for [`run_sweep`].
#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub fit: FitOptions,
    /// Interior class boundaries for the information-gain column; `None`
    /// (or zero replicates) skips it.
    pub igain_class_cuts: Option<Vec<f64>>,
    pub igain_window_days: f64,
    pub igain_replicates: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            fit: FitOptions::default(),
            igain_class_cuts: None,
            igain_window_days: 2.0,
            igain_replicates: 0,
        }
    }
}

/// Minimum share of events the smaller subprocess should hold; below this
/// the two-subprocess model's performance tends to suffer.
pub const LOW_SHARE_THRESHOLD: f64 = 0.20;

/// One cut's results in the comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub cut: f64,
    /// Events per subprocess (index 0 = top interval) and their shares.
    pub counts: Vec<usize>,
    pub shares: Vec<f64>,
    pub min_share: f64,
    /// Smaller subprocess holds less than [`LOW_SHARE_THRESHOLD`].
    pub low_share: bool,
    /// Fit failure message; the numeric fields below are `None` if set.
    pub fit_error: Option<String>,
    pub converged: bool,
    pub loglik: Option<f64>,
    pub aic: Option<f64>,
    pub bic: Option<f64>,
    /// Per-stream uniformity test `(D, p)`, subprocess 1 first.
    pub ks: Vec<Option<(f64, f64)>>,
    /// Per-stream serial-correlation test `(t, p)`.
    pub pearson: Vec<Option<(f64, f64)>>,
    /// Information gain per class, when requested.
    pub igain: Option<Vec<ClassGain>>,
    pub igain_error: Option<String>,
}

/// The full comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub m0: f64,
    pub n_events: usize,
    pub rows: Vec<SweepRow>,
    /// Index into `rows` of the smallest AIC, if any fit succeeded.
    pub best_aic: Option<usize>,
}

/// On-disk sweep report.
#[derive(Debug, Serialize, Deserialize)]
pub struct SweepFile {
    pub meta: Meta,
    pub report: SweepReport,
}

/// Fit the two-subprocess model at each cut and collect information
/// criteria, residual tests, subprocess shares and (optionally) information
/// gain. Per-cut failures are recorded in the row; the sweep continues.
pub fn run_sweep(cat: &Catalog, cuts: &[f64], opts: &SweepOptions) -> SweepReport {
    let n = cat.len();
    let mut rows = Vec::with_capacity(cuts.len());
    for &cut in cuts {
        // Shares first: they only need the partition, not a successful fit.
        let (counts, shares) = match MagnitudePartition::new(cat.m0, &[cut]) {
            Ok(p) => {
                let mut counts = vec![0usize; p.len()];
                for e in &cat.events {
                    if let Some(j) = p.subprocess_of(e.mag) {
                        counts[j] += 1;
                    }
                }
                let shares: Vec<f64> =
                    counts.iter().map(|&c| c as f64 / n as f64).collect();
                (counts, shares)
            }
            Err(_) => (Vec::new(), Vec::new()),
        };
        let min_share = shares.iter().copied().fold(f64::NAN, f64::min);
        let mut row = SweepRow {
            cut,
            counts,
            shares,
            min_share,
            low_share: min_share < LOW_SHARE_THRESHOLD,
            fit_error: None,
            converged: false,
            loglik: None,
            aic: None,
            bic: None,
            ks: Vec::new(),
            pearson: Vec::new(),
            igain: None,
            igain_error: None,
        };
        let fit = match fit_mdfhp(cat, &[cut], &opts.fit) {
            Ok(f) => f,
            Err(e) => {
                row.fit_error = Some(e.to_string());
                rows.push(row);
                continue;
            }
        };
        row.converged = fit.converged;
        row.loglik = Some(fit.loglik);
        row.aic = Some(fit.aic);
        row.bic = Some(fit.bic);
        if let Ok(series) = transformed_times(&fit, cat) {
            for j in 0..series.n_streams() {
                row.ks.push(ks_uniform_test(&series.u[j]).ok());
                row.pearson.push(pearson_serial_test(&series.u[j]).ok());
            }
        }
        if opts.igain_replicates > 0 {
            if let Some(class_cuts) = &opts.igain_class_cuts {
                let gains = classes_from_cuts(cat.m0, class_cuts)
                    .map_err(|e| e.to_string())
                    .and_then(|classes| {
                        igain(
                            &fit.model,
                            cat,
                            &classes,
                            opts.igain_window_days,
                            opts.igain_replicates,
                            opts.fit.seed,
                        )
                        .map_err(|e| e.to_string())
                    });
                match gains {
                    Ok(rep) => row.igain = Some(rep.classes),
                    Err(e) => row.igain_error = Some(e),
                }
            }
        }
        rows.push(row);
    }
    let best_aic = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.aic.map(|a| (i, a)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);
    SweepReport { m0: cat.m0, n_events: n, rows, best_aic }
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CmdError> {
    let cfg: SweepConfig = load_config(&args.config)?;
    let catalog_path = require(args.catalog.or(cfg.catalog), "catalog")?;
    let cuts = require(args.cuts.or(cfg.cuts), "cuts")?;
    if cuts.len() < 2 {
        return Err(CmdError::Usage(
            "--cuts needs at least two values to compare (e.g. --cuts 5.5,5.75,6)".into(),
        ));
    }
    let defaults = FitOptions::default();
    let seed = args.seed.or(cfg.seed).unwrap_or(defaults.seed);
    let opts = SweepOptions {
        fit: FitOptions {
            restarts: args.restarts.or(cfg.restarts).unwrap_or(defaults.restarts),
            seed,
            nm_max_evals: args.nm_max_evals.or(cfg.nm_max_evals).unwrap_or(defaults.nm_max_evals),
            polish: if args.no_polish { false } else { cfg.polish.unwrap_or(defaults.polish) },
            // CIs are not part of the comparison table; skip the Hessians.
            compute_ci: false,
            ..defaults
        },
        igain_class_cuts: args.class_cuts.or(cfg.class_cuts),
        igain_window_days: args.window_days.or(cfg.window_days).unwrap_or(2.0),
        igain_replicates: args.replicates.or(cfg.replicates).unwrap_or(0),
    };
    init_threads(args.threads.or(cfg.threads))?;

    let cat = Catalog::load_json(&catalog_path)?;
    let started = Instant::now();
    let report = run_sweep(&cat, &cuts, &opts);
    let elapsed = started.elapsed().as_secs_f64();

    print_sweep(&report);
    println!("({elapsed:.1} s)");

    if let Some(out) = args.out.or(cfg.out) {
        let meta = Meta::new(Some(seed)).with("catalog", cat.content_hash());
        let text = serde_json::to_string_pretty(&SweepFile { meta, report })
            .map_err(|e| CmdError::Io(format!("serialising sweep: {e}")))?;
        write_text(&out, &text)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn print_sweep(report: &SweepReport) {
    println!(
        "cut comparison on {} events (m0 {}): two-subprocess fits",
        report.n_events, report.m0
    );
    println!();
    println!(
        "{:<6} {:>7} {:>9} {:>8} {:>8}  {:<17} {:<17} {}",
        "cut", "N_sp1", "share_sp1", "AIC", "BIC", "KS p (sp1,sp2)", "Pearson p (sp1,sp2)", "flags"
    );
    for (i, row) in report.rows.iter().enumerate() {
        if let Some(err) = &row.fit_error {
            println!("{:<6.2} fit failed: {err}", row.cut);
            continue;
        }
        let mut flags = Vec::new();
        if report.best_aic == Some(i) {
            flags.push("best-AIC");
        }
        if row.low_share {
            flags.push("low-share(<20%)");
        }
        if !row.converged {
            flags.push("non-converged");
        }
        let ks = row
            .ks
            .iter()
            .map(|t| fmt_opt(t.map(|x| x.1), 3))
            .collect::<Vec<_>>()
            .join(",");
        let pearson = row
            .pearson
            .iter()
            .map(|t| fmt_opt(t.map(|x| x.1), 3))
            .collect::<Vec<_>>()
            .join(",");
        println!(
            "{:<6.2} {:>7} {:>8.1}% {:>8.1} {:>8.1}  {:<17} {:<17} {}",
            row.cut,
            row.counts.first().copied().unwrap_or(0),
            100.0 * row.shares.first().copied().unwrap_or(f64::NAN),
            row.aic.unwrap_or(f64::NAN),
            row.bic.unwrap_or(f64::NAN),
            ks,
            pearson,
            flags.join(" ")
        );
        if let Some(gains) = &row.igain {
            for g in gains {
                println!(
                    "       igain [{:.2},{:.2}): rho_T = {:.5} (SE {:.5})",
                    g.lo, g.hi, g.rho_t, g.rho_t_se
                );
            }
        }
        if let Some(err) = &row.igain_error {
            println!("       igain failed: {err}");
        }
    }
}
