//! Command-line front end: argument parsing, run configuration and the
//! report writers for each subcommand.

pub mod battery;
pub mod format;
pub mod parse;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use d2stoch::algebra::{BoundaryRates, Lane};
use d2stoch::bethe::{expected_sets, lane_case, reconcile_spec, solve_lane, solve_sector, energy, Branch, RootSet, SolveOptions, TqCase};
use d2stoch::dynamics::{evolve_with_tol, profile_table, steady_states, EVOLVE_TOL};
use d2stoch::error::Error;
use d2stoch::lintensor::{C64, EIG_CAP};
use d2stoch::markov::{build_generator, lane_generators, parse_state, state_label, Generator, GeneratorSpec, Variant};
use d2stoch::transfer::{extract_generator, Derivative};
use serde::Serialize;

use crate::format::{csv_line, g12, to_json};

pub const DEFAULT_SEED: u64 = 20240601;
pub const THREADS_ENV: &str = "D2STOCH_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "d2stoch", version, about = "Integrable two-lane stochastic processes: identities, spectra, Bethe roots and dynamics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the identity battery (YBE, unitarity, reflection, commutativity, extraction, factorization) and emit a JSON scorecard.
    Verify {
        #[command(flatten)]
        model: ModelArgs,
        /// Random (u, v) samples per identity.
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Build the generator and emit it as sparse triplets with a validation report.
    Generator {
        #[command(flatten)]
        model: ModelArgs,
        /// Emit a single lane generator instead of the full one.
        #[arg(long, value_enum)]
        lane: Option<LaneArg>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Solve the Bethe equations and reconcile with exact diagonalization (match table).
    Spectrum {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum, default_value_t = LaneArg::Full)]
        lane: LaneArg,
        /// Open chains: `plus`, `minus`, or `sigma,tau` such as `plus,minus`.
        #[arg(long, default_value = "plus")]
        branch: String,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Solve the Bethe equations of one lane and emit root sets, residuals and energies.
    Bae {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum, default_value_t = LaneArg::Sigma)]
        lane: LaneArg,
        #[arg(long, default_value = "plus")]
        branch: String,
        /// Lane case as JSON, e.g. {"case":"PeriodicSym","n":4}; replaces --model.
        #[arg(long)]
        case: Option<String>,
        /// Number of finite roots; all sectors when omitted.
        #[arg(long)]
        k: Option<usize>,
        /// Roots at infinity (with --k).
        #[arg(long, default_value_t = 0)]
        inf: usize,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Evolve a probability vector and emit its coefficients on a time grid (CSV).
    Evolve {
        #[command(flatten)]
        model: ModelArgs,
        /// Species labels such as `-2,-1,+1`, a JSON vector of length 4^N, or a JSON list of per-site 4-vectors.
        #[arg(long, allow_hyphen_values = true)]
        initial: String,
        /// `start:end:count`, or `log:start:end:count`.
        #[arg(long)]
        times: String,
        /// Configurations to report, separated by `;` (default: all).
        #[arg(long, allow_hyphen_values = true)]
        observe: Option<String>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Emit the steady states of the generator (JSON).
    Steady {
        #[command(flatten)]
        model: ModelArgs,
        /// Rescale every member with a nonzero entry sum to sum 1.
        #[arg(long)]
        normalize: bool,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Open chains: analytic density profile against the numeric steady state (CSV).
    Profile {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// Number of sites.
    #[arg(long = "N")]
    pub n: Option<usize>,
    /// Open boundary rates as JSON with keys s1,s2,t1,t2,s1p,s2p,t1p,t2p (default: reference rates).
    #[arg(long)]
    pub rates: Option<String>,
    /// Asymmetry of the sigma lane.
    #[arg(long, allow_hyphen_values = true)]
    pub eta1: Option<f64>,
    /// Asymmetry of the tau lane.
    #[arg(long, allow_hyphen_values = true)]
    pub eta2: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Pass/fail threshold, in (0, 1e-2].
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Cap on dense matrix dimensions.
    #[arg(long = "eig-cap", default_value_t = EIG_CAP)]
    pub eig_cap: usize,
    /// Output directory; reports go to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    PeriodicSym,
    TwistedSym,
    OpenSym,
    PeriodicAsym,
    /// Periodic asymmetric chain with the coth-rate generator.
    PeriodicAsymRaw,
    OpenAsym,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum LaneArg {
    Full,
    Sigma,
    Tau,
}

impl LaneArg {
    fn lane(self) -> Option<Lane> {
        match self {
            LaneArg::Full => None,
            LaneArg::Sigma => Some(Lane::Sigma),
            LaneArg::Tau => Some(Lane::Tau),
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

impl Format {
    fn ext(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Verify,
    Generator,
    Spectrum,
    Bae,
    Evolve,
    Steady,
    Profile,
}

impl CommandKind {
    fn name(self) -> &'static str {
        match self {
            CommandKind::Verify => "verify",
            CommandKind::Generator => "generator",
            CommandKind::Spectrum => "spectrum",
            CommandKind::Bae => "bae",
            CommandKind::Evolve => "evolve",
            CommandKind::Steady => "steady",
            CommandKind::Profile => "profile",
        }
    }

    fn default_format(self) -> Format {
        match self {
            CommandKind::Spectrum | CommandKind::Evolve | CommandKind::Profile => Format::Csv,
            _ => Format::Json,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Numeric {
    pub tol: Option<f64>,
    pub seed: u64,
    pub eig_cap: usize,
    pub thread_hint: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Io {
    pub output_dir: Option<PathBuf>,
    pub format: Format,
}

/// A validated run: the command, the model it acts on and the numeric and
/// output settings.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: CommandKind,
    pub model: Option<ModelKind>,
    pub spec: Option<GeneratorSpec>,
    pub numeric: Numeric,
    pub io: Io,
}

/// Errors before any computation: bad flags or values.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn usage<T>(msg: impl Into<String>) -> Result<T, UsageError> {
    Err(UsageError(msg.into()))
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), UsageError> {
        if let Some(t) = self.numeric.tol {
            if !(t > 0.0 && t <= 1e-2) {
                return usage(format!("--tol {t} outside (0, 1e-2]"));
            }
        }
        if self.numeric.eig_cap == 0 || self.numeric.eig_cap > EIG_CAP {
            return usage(format!("--eig-cap {} outside [1, {EIG_CAP}]", self.numeric.eig_cap));
        }
        if let Some(s) = &self.spec {
            s.validate().map_err(|e| UsageError(e.to_string()))?;
        }
        Ok(())
    }

    fn tol_or(&self, default: f64) -> f64 {
        self.numeric.tol.unwrap_or(default)
    }
}

/// The generator specification described by the model flags; `n_hint`
/// fills in N when the flag is absent (evolve infers it from the initial state).
pub fn model_spec(m: &ModelArgs, n_hint: Option<usize>) -> Result<(ModelKind, GeneratorSpec), UsageError> {
    let Some(kind) = m.model else {
        return usage("--model is required");
    };
    let n = match (m.n, n_hint) {
        (Some(a), Some(b)) if a != b => return usage(format!("--N {a} disagrees with the initial state ({b} sites)")),
        (Some(a), _) | (None, Some(a)) => a,
        (None, None) => return usage("--N is required"),
    };
    let open = matches!(kind, ModelKind::OpenSym | ModelKind::OpenAsym);
    let asym = matches!(kind, ModelKind::PeriodicAsym | ModelKind::PeriodicAsymRaw | ModelKind::OpenAsym);
    if !open && m.rates.is_some() {
        return usage("--rates applies to open models only");
    }
    if !asym && (m.eta1.is_some() || m.eta2.is_some()) {
        return usage("--eta1/--eta2 apply to asymmetric models only");
    }
    let rates = match &m.rates {
        Some(s) => parse::rates(s).map_err(UsageError)?,
        None => BoundaryRates::table3(),
    };
    let mut spec = match kind {
        ModelKind::PeriodicSym | ModelKind::PeriodicAsym | ModelKind::PeriodicAsymRaw => GeneratorSpec::periodic(n),
        ModelKind::TwistedSym => GeneratorSpec::twisted(n),
        ModelKind::OpenSym | ModelKind::OpenAsym => GeneratorSpec::open(n, rates),
    };
    if asym {
        let (Some(e1), Some(e2)) = (m.eta1, m.eta2) else {
            return usage("asymmetric models need --eta1 and --eta2");
        };
        spec = spec.with_asymmetry(e1, e2);
        if kind == ModelKind::PeriodicAsymRaw {
            spec = spec.with_variant(Variant::RawM);
        }
    }
    spec.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok((kind, spec))
}

fn parse_branches(s: &str) -> Result<(Branch, Branch), UsageError> {
    let one = |p: &str| match p.trim() {
        "plus" | "+" => Ok(Branch::Plus),
        "minus" | "-" => Ok(Branch::Minus),
        other => usage(format!("--branch: unknown branch '{other}'")),
    };
    let parts: Vec<&str> = s.split(',').collect();
    match parts.as_slice() {
        [a] => {
            let b = one(a)?;
            Ok((b, b))
        }
        [a, b] => Ok((one(a)?, one(b)?)),
        _ => usage(format!("--branch '{s}'")),
    }
}

/// Core errors that come from the inputs rather than the numerics.
fn is_usage(e: &Error) -> bool {
    matches!(
        e,
        Error::InvalidParameter(_)
            | Error::Incompatible(_)
            | Error::SiteCollision(_)
            | Error::DimensionCap { .. }
            | Error::DimensionMismatch(_)
            | Error::Stochasticity { .. }
    )
}

/// Report text plus whether every check it records passed.
struct Report {
    text: String,
    pass: bool,
}

enum Failure {
    Usage(String),
    Numeric(String),
}

impl From<UsageError> for Failure {
    fn from(e: UsageError) -> Self {
        Failure::Usage(e.0)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if is_usage(&e) {
            Failure::Usage(e.to_string())
        } else {
            Failure::Numeric(e.to_string())
        }
    }
}

fn threads_from_env() -> Result<Option<usize>, UsageError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(s) if s.trim().is_empty() => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => usage(format!("{THREADS_ENV}='{s}' is not a positive integer")),
        },
    }
}

fn cap_threads(n: Option<usize>) {
    if let Some(n) = n {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Parses `args` (program name first), runs, writes reports to `stdout`
/// or the output directory and diagnostics to `stderr`. Returns the exit status.
pub fn run_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if code == 0 {
                let _ = stdout.write_all(text.as_bytes());
            } else {
                let _ = stderr.write_all(text.as_bytes());
            }
            return if code == 0 { EXIT_OK } else { EXIT_USAGE };
        }
    };
    match execute(cli, stdout, stderr) {
        Ok(code) => code,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(stderr, "error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Numeric(m)) => {
            let _ = writeln!(stderr, "error: {m}");
            EXIT_FAIL
        }
    }
}

fn config(command: CommandKind, model: Option<(ModelKind, GeneratorSpec)>, common: &CommonArgs) -> Result<RunConfig, UsageError> {
    let cfg = RunConfig {
        command,
        model: model.map(|m| m.0),
        spec: model.map(|m| m.1),
        numeric: Numeric {
            tol: common.tol,
            seed: common.seed,
            eig_cap: common.eig_cap,
            thread_hint: threads_from_env()?,
        },
        io: Io {
            output_dir: common.out.clone(),
            format: common.format.unwrap_or(command.default_format()),
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, Failure> {
    let (cfg, report) = match cli.command {
        Command::Verify { model, samples, common } => {
            let cfg = config(CommandKind::Verify, Some(model_spec(&model, None)?), &common)?;
            if samples == 0 {
                return Err(Failure::Usage("--samples must be positive".into()));
            }
            cap_threads(cfg.numeric.thread_hint);
            let r = verify(&cfg, samples)?;
            (cfg, r)
        }
        Command::Generator { model, lane, common } => {
            let cfg = config(CommandKind::Generator, Some(model_spec(&model, None)?), &common)?;
            cap_threads(cfg.numeric.thread_hint);
            let r = generator(&cfg, lane.and_then(LaneArg::lane))?;
            (cfg, r)
        }
        Command::Spectrum { model, lane, branch, common } => {
            let cfg = config(CommandKind::Spectrum, Some(model_spec(&model, None)?), &common)?;
            let br = parse_branches(&branch)?;
            cap_threads(cfg.numeric.thread_hint);
            let r = spectrum(&cfg, lane.lane(), br)?;
            (cfg, r)
        }
        Command::Bae { model, lane, branch, case, k, inf, common } => {
            let (cfg, case) = match case {
                Some(js) => {
                    if model.model.is_some() {
                        return Err(Failure::Usage("--case and --model are exclusive".into()));
                    }
                    let c: TqCase = serde_json::from_str(&js).map_err(|e| Failure::Usage(format!("--case: {e}")))?;
                    c.validate()?;
                    (config(CommandKind::Bae, None, &common)?, c)
                }
                None => {
                    let m = model_spec(&model, None)?;
                    let Some(l) = lane.lane() else {
                        return Err(Failure::Usage("bae needs --lane sigma or --lane tau".into()));
                    };
                    let br = parse_branches(&branch)?;
                    let b = if l == Lane::Sigma { br.0 } else { br.1 };
                    let c = lane_case(&m.1, l, b)?;
                    (config(CommandKind::Bae, Some(m), &common)?, c)
                }
            };
            if k.is_none() && inf > 0 {
                return Err(Failure::Usage("--inf needs --k".into()));
            }
            cap_threads(cfg.numeric.thread_hint);
            let r = bae(&cfg, &case, k, inf)?;
            (cfg, r)
        }
        Command::Evolve { model, initial, times, observe, common } => {
            let (n0, v) = parse::initial_state(&initial).map_err(Failure::Usage)?;
            let m = model_spec(&model, Some(n0))?;
            let cfg = config(CommandKind::Evolve, Some(m), &common)?;
            let grid = parse::time_grid(&times).map_err(Failure::Usage)?;
            let cols = match observe {
                None => (0..v.len()).collect(),
                Some(s) => s
                    .split(';')
                    .map(|p| {
                        let (n, idx) = parse_state(p)?;
                        if n != n0 {
                            return Err(Error::InvalidParameter(format!("observed state '{p}' has {n} sites, need {n0}")));
                        }
                        Ok(idx)
                    })
                    .collect::<Result<Vec<_>, Error>>()?,
            };
            cap_threads(cfg.numeric.thread_hint);
            let r = evolve(&cfg, &v, &grid, &cols)?;
            (cfg, r)
        }
        Command::Steady { model, normalize, common } => {
            let cfg = config(CommandKind::Steady, Some(model_spec(&model, None)?), &common)?;
            cap_threads(cfg.numeric.thread_hint);
            let r = steady(&cfg, normalize)?;
            (cfg, r)
        }
        Command::Profile { model, common } => {
            let cfg = config(CommandKind::Profile, Some(model_spec(&model, None)?), &common)?;
            cap_threads(cfg.numeric.thread_hint);
            let r = profile(&cfg)?;
            (cfg, r)
        }
    };
    emit(&cfg, &report.text, stdout, stderr)?;
    Ok(if report.pass { EXIT_OK } else { EXIT_FAIL })
}

fn emit(cfg: &RunConfig, text: &str, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), Failure> {
    match &cfg.io.output_dir {
        None => stdout.write_all(text.as_bytes()).map_err(|e| Failure::Numeric(e.to_string())),
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Failure::Numeric(format!("{}: {e}", dir.display())))?;
            let path = dir.join(format!("{}.{}", cfg.command.name(), cfg.io.format.ext()));
            std::fs::write(&path, text).map_err(|e| Failure::Numeric(format!("{}: {e}", path.display())))?;
            let _ = writeln!(stderr, "wrote {}", path.display());
            Ok(())
        }
    }
}

fn spec_of(cfg: &RunConfig) -> &GeneratorSpec {
    cfg.spec.as_ref().expect("model-based command")
}

fn bool_str(b: bool) -> String {
    b.to_string()
}

// --- verify ---------------------------------------------------------------------

#[derive(Serialize)]
struct Scorecard<'a> {
    model: Option<ModelKind>,
    #[serde(rename = "N")]
    n: usize,
    seed: u64,
    samples: usize,
    pass: bool,
    reports: &'a [d2stoch::algebra::VerifierReport],
    flags: &'a [d2stoch::algebra::VerifierReport],
}

fn verify(cfg: &RunConfig, samples: usize) -> Result<Report, Failure> {
    let spec = spec_of(cfg);
    let b = battery::Battery {
        seed: cfg.numeric.seed,
        samples,
        tol: cfg.numeric.tol,
    };
    let (reports, flags) = b.run(spec)?;
    let pass = reports.iter().all(|r| r.pass);
    let text = match cfg.io.format {
        Format::Json => to_json(&Scorecard {
            model: cfg.model,
            n: spec.n,
            seed: cfg.numeric.seed,
            samples,
            pass,
            reports: &reports,
            flags: &flags,
        }),
        Format::Csv => {
            let mut s = csv_line(&["identity", "kind", "samples", "seed", "maxResidual", "pass", "gating"].map(String::from));
            for (r, gating) in reports.iter().map(|r| (r, true)).chain(flags.iter().map(|r| (r, false))) {
                s += &csv_line(&[
                    r.identity.clone(),
                    r.kind.clone(),
                    r.samples.to_string(),
                    r.seed.to_string(),
                    g12(r.max_residual),
                    bool_str(r.pass),
                    bool_str(gating),
                ]);
            }
            s
        }
    };
    Ok(Report { text, pass })
}

// --- generator ------------------------------------------------------------------

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct GeneratorValidation {
    stochastic: bool,
    max_column_sum: f64,
    min_off_diagonal: f64,
    /// ‖extracted − built‖∞, when the dimension is within the cap.
    extraction_residual: Option<f64>,
    extraction_shift: Option<f64>,
    pass: bool,
}

#[derive(Serialize)]
struct GeneratorReport<'a> {
    model: Option<ModelKind>,
    #[serde(rename = "N")]
    n: usize,
    lane: Option<Lane>,
    #[serde(rename = "localDim")]
    local_dim: usize,
    matrix: &'a d2stoch::lintensor::SparseMatrix,
    validation: GeneratorValidation,
}

fn generator(cfg: &RunConfig, lane: Option<Lane>) -> Result<Report, Failure> {
    let spec = spec_of(cfg);
    let g: Generator = match lane {
        None => build_generator(spec)?,
        Some(l) => {
            let (s, t) = lane_generators(spec)?;
            if l == Lane::Sigma {
                s
            } else {
                t
            }
        }
    };
    let max_column_sum = g.matrix.column_sums().iter().fold(0.0f64, |a, s| a.max(s.abs()));
    let min_off_diagonal = g.matrix.triplets().filter(|t| t.0 != t.1).fold(0.0f64, |a, t| a.min(t.2));
    let stoch_tol = cfg.tol_or(battery::TOL_STOCH);
    let stochastic = max_column_sum < stoch_tol && min_off_diagonal > -stoch_tol;
    let (mut extraction_residual, mut extraction_shift) = (None, None);
    if lane.is_none() && g.dim() <= cfg.numeric.eig_cap {
        let e = extract_generator(spec, Derivative::Numeric)?;
        extraction_residual = Some(e.matrix.dist(&g.dense()));
        extraction_shift = e.reports.first().map(|r| r.1.shift);
    }
    let pass = stochastic && extraction_residual.is_none_or(|r| r < cfg.tol_or(battery::TOL_EXTRACT));
    let text = match cfg.io.format {
        Format::Json => to_json(&GeneratorReport {
            model: cfg.model,
            n: spec.n,
            lane,
            local_dim: g.local_dim,
            matrix: &g.matrix,
            validation: GeneratorValidation {
                stochastic,
                max_column_sum,
                min_off_diagonal,
                extraction_residual,
                extraction_shift,
                pass,
            },
        }),
        Format::Csv => {
            let mut s = csv_line(&["row", "col", "value"].map(String::from));
            for (i, j, v) in g.matrix.triplets() {
                s += &csv_line(&[i.to_string(), j.to_string(), g12(v)]);
            }
            s
        }
    };
    Ok(Report { text, pass })
}

// --- spectrum and bae -----------------------------------------------------------

fn solve_options(cfg: &RunConfig) -> SolveOptions {
    SolveOptions {
        seed: cfg.numeric.seed,
        ..SolveOptions::default()
    }
}

/// Match tolerance between Bethe and ED eigenvalues.
pub const TOL_MATCH: f64 = 1e-7;

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct SpectrumReport<'a> {
    model: Option<ModelKind>,
    #[serde(rename = "N")]
    n: usize,
    lane: &'static str,
    seed: u64,
    max_residual: f64,
    unmatched_ed: usize,
    unmatched_bethe: usize,
    shortfall: Vec<(usize, usize, usize)>,
    pass: bool,
    rows: &'a [d2stoch::bethe::MatchRow],
}

fn spectrum(cfg: &RunConfig, lane: Option<Lane>, br: (Branch, Branch)) -> Result<Report, Failure> {
    let spec = spec_of(cfg);
    let lane_dim = 1usize << spec.n;
    if lane_dim > cfg.numeric.eig_cap {
        return Err(Error::DimensionCap { dim: lane_dim, cap: cfg.numeric.eig_cap }.into());
    }
    let (rec, sols) = reconcile_spec(spec, lane, br, &solve_options(cfg))?;
    let shortfall: Vec<_> = sols.iter().flat_map(|s| s.shortfall.iter().copied()).collect();
    let pass = rec.all_matched(cfg.tol_or(TOL_MATCH));
    let text = match cfg.io.format {
        Format::Json => to_json(&SpectrumReport {
            model: cfg.model,
            n: spec.n,
            lane: lane.map_or("full", Lane::name),
            seed: cfg.numeric.seed,
            max_residual: rec.max_residual,
            unmatched_ed: rec.unmatched_ed,
            unmatched_bethe: rec.unmatched_bethe,
            shortfall,
            pass,
            rows: &rec.rows,
        }),
        Format::Csv => {
            let mut s = csv_line(&["ed_re", "ed_im", "bethe_re", "bethe_im", "residual", "singular", "roots"].map(String::from));
            for r in &rec.rows {
                let (bre, bim) = r.bethe.map_or((String::new(), String::new()), |b| (g12(b.re), g12(b.im)));
                s += &csv_line(&[g12(r.ed.re), g12(r.ed.im), bre, bim, g12(r.residual), bool_str(r.singular), r.label.clone()]);
            }
            s
        }
    };
    Ok(Report { text, pass })
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct SetOut {
    finite: Vec<C64>,
    inf_count: usize,
    singular: bool,
    residual: f64,
    /// None for the singular pair.
    energy: Option<C64>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct BaeReport {
    case: TqCase,
    seed: u64,
    tol: f64,
    k: Option<usize>,
    sets: Vec<SetOut>,
    /// (k, found, expected) for sectors with missing sets.
    shortfall: Vec<(usize, usize, usize)>,
    pass: bool,
}

fn set_out(s: &RootSet) -> SetOut {
    SetOut {
        finite: s.finite.clone(),
        inf_count: s.inf_count,
        singular: s.singular,
        residual: s.residual,
        energy: if s.singular { None } else { energy(s).ok() },
    }
}

fn bae(cfg: &RunConfig, case: &TqCase, k: Option<usize>, inf: usize) -> Result<Report, Failure> {
    let mut opt = solve_options(cfg);
    if let Some(t) = cfg.numeric.tol {
        opt.tol = t;
    }
    let (sets, shortfall): (Vec<SetOut>, Vec<_>) = match k {
        Some(k) => {
            let want = expected_sets(case, k);
            let sets = solve_sector(case, k, inf, &opt)?;
            let short = if sets.len() < want { vec![(k, sets.len(), want)] } else { vec![] };
            (sets.iter().map(set_out).collect(), short)
        }
        None => {
            let sol = solve_lane(case, &opt)?;
            (sol.levels.iter().map(|l| set_out(&l.roots)).collect(), sol.shortfall)
        }
    };
    let pass = shortfall.is_empty();
    let rep = BaeReport {
        case: *case,
        seed: opt.seed,
        tol: opt.tol,
        k,
        sets,
        shortfall,
        pass,
    };
    let text = match cfg.io.format {
        Format::Json => to_json(&rep),
        Format::Csv => {
            let mut s = csv_line(&["set", "infCount", "singular", "residual", "energy_re", "energy_im", "root_re", "root_im"].map(String::from));
            for (i, set) in rep.sets.iter().enumerate() {
                let (ere, eim) = set.energy.map_or((String::new(), String::new()), |e| (g12(e.re), g12(e.im)));
                let head = [i.to_string(), set.inf_count.to_string(), bool_str(set.singular), g12(set.residual), ere, eim];
                if set.finite.is_empty() {
                    s += &csv_line(&[head.to_vec(), vec![String::new(), String::new()]].concat());
                }
                for z in &set.finite {
                    s += &csv_line(&[head.to_vec(), vec![g12(z.re), g12(z.im)]].concat());
                }
            }
            s
        }
    };
    Ok(Report { text, pass })
}

// --- dynamics -------------------------------------------------------------------

#[derive(Serialize)]
struct EvolveReport<'a> {
    times: &'a [f64],
    labels: Vec<String>,
    /// coefficients[i][j]: configuration j at time i.
    coefficients: Vec<Vec<f64>>,
}

fn evolve(cfg: &RunConfig, v: &[f64], times: &[f64], cols: &[usize]) -> Result<Report, Failure> {
    let spec = spec_of(cfg);
    let g = build_generator(spec)?;
    let tr = evolve_with_tol(&g, v, times, cfg.tol_or(EVOLVE_TOL))?;
    let labels: Vec<String> = cols.iter().map(|&i| state_label(i, spec.n)).collect();
    let text = match cfg.io.format {
        Format::Json => to_json(&EvolveReport {
            times: &tr.times,
            labels,
            coefficients: tr.states.iter().map(|s| cols.iter().map(|&i| s[i]).collect()).collect(),
        }),
        Format::Csv => {
            let mut head = vec!["t".to_string()];
            head.extend(labels);
            let mut s = csv_line(&head);
            for (t, st) in tr.times.iter().zip(&tr.states) {
                let mut row = vec![g12(*t)];
                row.extend(cols.iter().map(|&i| g12(st[i])));
                s += &csv_line(&row);
            }
            s
        }
    };
    Ok(Report { text, pass: true })
}

fn steady(cfg: &RunConfig, normalize: bool) -> Result<Report, Failure> {
    let spec = spec_of(cfg);
    let dim = 1usize << (2 * spec.n);
    if dim > cfg.numeric.eig_cap {
        return Err(Error::DimensionCap { dim, cap: cfg.numeric.eig_cap }.into());
    }
    let mut fam = steady_states(spec)?;
    if normalize {
        for m in &mut fam.members {
            let s: f64 = m.vector.iter().sum();
            if s.abs() > 1e-12 {
                m.vector.iter_mut().for_each(|x| *x /= s);
            }
        }
    }
    let pass = fam.max_residual <= cfg.tol_or(1e-9);
    let text = match cfg.io.format {
        Format::Json => {
            #[derive(Serialize)]
            #[serde(rename_all = "camelCase")]
            struct Out<'a> {
                model: Option<ModelKind>,
                #[serde(rename = "N")]
                n: usize,
                normalized: bool,
                pass: bool,
                labels: Vec<String>,
                family: &'a d2stoch::dynamics::SteadyStateFamily,
            }
            to_json(&Out {
                model: cfg.model,
                n: spec.n,
                normalized: normalize,
                pass,
                labels: (0..dim).map(|i| state_label(i, spec.n)).collect(),
                family: &fam,
            })
        }
        Format::Csv => {
            let mut s = csv_line(&["member", "state", "value"].map(String::from));
            for m in &fam.members {
                for (i, x) in m.vector.iter().enumerate() {
                    s += &csv_line(&[m.label.clone(), state_label(i, spec.n), g12(*x)]);
                }
            }
            s
        }
    };
    Ok(Report { text, pass })
}

/// Agreement required between the analytic and numeric profiles.
pub const TOL_PROFILE: f64 = 1e-8;

fn profile(cfg: &RunConfig) -> Result<Report, Failure> {
    let spec = spec_of(cfg);
    let dim = 1usize << (2 * spec.n);
    if dim > cfg.numeric.eig_cap {
        return Err(Error::DimensionCap { dim, cap: cfg.numeric.eig_cap }.into());
    }
    let rows = profile_table(spec)?;
    let pass = rows.iter().all(|r| r.diff <= cfg.tol_or(TOL_PROFILE));
    let text = match cfg.io.format {
        Format::Json => to_json(&rows),
        Format::Csv => {
            let mut s = csv_line(&["k", "species", "analytic", "numeric", "diff"].map(String::from));
            for r in &rows {
                s += &csv_line(&[r.k.to_string(), r.species.clone(), g12(r.analytic), g12(r.numeric), g12(r.diff)]);
            }
            s
        }
    };
    Ok(Report { text, pass })
}
