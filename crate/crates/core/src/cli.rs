//! The `igame` command line.
//!
//! Exit codes: 0 success, 2 configuration or validation failure, 3 numeric
//! failure, 4 insufficient data. Output files are written to a temporary file
//! in the target directory and renamed into place.

use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::engine::{simulate, Trajectory, TrajectoryFormat};
use crate::epsilon::{
    recover_epsilon_with, EpsilonError, Identifiability, RecoveryOptions, DEFAULT_THRESHOLD,
};
use crate::invariants::{
    load_candidates, perturbation_stability, scan_omens, Tolerances, DEFAULT_TOL_REL,
};
use crate::model::{load_game, GameDefinition};
use crate::oracle::{
    strategic_analysis, with_observation_noise, Oracle, OracleConfig, OracleError, Pairing,
    Predictor, StrategicConfig, VirtualPolicy, DEFAULT_DEPTH_STEPS, DEFAULT_LAMBDA,
    DEFAULT_LINEAR_WINDOW, DEFAULT_WINDOW,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;
pub const EXIT_INSUFFICIENT: u8 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "igame",
    version,
    about = "Simulate and analyze differential interactive games"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output format (each command accepts a subset).
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Jsonl,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the game's scenario over its horizon and export the trajectory.
    Simulate {
        game: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Short-term predictions with interactivity corrections over a run.
    Predict {
        game: PathBuf,
        /// Observed run (CSV or JSON lines); simulated from the game when omitted.
        trajectory: Option<PathBuf>,
        #[command(flatten)]
        oracle: OracleArgs,
        /// Also write the baseline prediction log (JSON lines) here.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Uniform observation noise added to the realized controls.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Recover ε sample by sample from an observed run.
    EstimateEps {
        game: PathBuf,
        trajectory: PathBuf,
        /// Smallest admissible singular value of the ε-Jacobian.
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Solve samples independently (and in parallel).
        #[arg(long)]
        no_warm_start: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Scan candidate quantities for invariance or closed dynamics.
    Invariants {
        game: PathBuf,
        trajectory: PathBuf,
        candidates: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOL_REL)]
        tol_rel: f64,
        /// Absolute residual bound for closed dynamics (default scales with the series).
        #[arg(long)]
        tol_abs: Option<f64>,
        /// Number of perturbed scenario runs for the stability check (0 disables it).
        #[arg(long, default_value_t = 0)]
        perturb: usize,
        /// Sup-norm size of the scenario perturbations.
        #[arg(long, default_value_t = 1e-3)]
        delta: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Long-term prognosis in the associated game combined with corrected short-term segments.
    Analyze {
        game: PathBuf,
        #[command(flatten)]
        oracle: OracleArgs,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, default_value = "frozen")]
    pub predictor: String,
    /// Prediction depth Δt (default 50 grid steps).
    #[arg(long)]
    pub dt: Option<f64>,
    /// Admissible depth (default 100 grid steps).
    #[arg(long)]
    pub depth_cap: Option<f64>,
    /// Fit window W in deviation samples.
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: usize,
    /// Ridge parameter.
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    /// Window of the linear predictor.
    #[arg(long, default_value_t = DEFAULT_LINEAR_WINDOW)]
    pub linear_window: usize,
    #[arg(long, default_value_t = 1)]
    pub observer: usize,
    /// Treat the observer's own controls as interactive too.
    #[arg(long)]
    pub correct_observer: bool,
    /// Pair deviations with the predicted rather than the realized state.
    #[arg(long)]
    pub pair_predicted: bool,
}

impl OracleArgs {
    fn config(&self, game: &GameDefinition) -> Result<OracleConfig, Failure> {
        let mut predictor: Predictor = self
            .predictor
            .parse()
            .map_err(|e: OracleError| Failure::config(e.to_string()))?;
        if let Predictor::Linear { window } = &mut predictor {
            *window = self.linear_window;
        }
        let h = game.horizon.step;
        let cap = self
            .depth_cap
            .unwrap_or(2.0 * DEFAULT_DEPTH_STEPS as f64 * h);
        let mut config = OracleConfig::new(predictor, cap);
        config.depth = self.dt;
        config.window = self.window;
        config.lambda = self.lambda;
        config.observer = self.observer;
        config.correct_observer = self.correct_observer;
        config.pairing = if self.pair_predicted {
            Pairing::Predicted
        } else {
            Pairing::Realized
        };
        Ok(config)
    }
}

/// A failed command: exit code and message for standard error.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn numeric(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_NUMERIC,
            message: message.into(),
        }
    }

    fn insufficient(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_INSUFFICIENT,
            message: message.into(),
        }
    }
}

impl From<OracleError> for Failure {
    fn from(e: OracleError) -> Self {
        let code = if e.is_insufficient_data() {
            EXIT_INSUFFICIENT
        } else if e.is_numeric() {
            EXIT_NUMERIC
        } else {
            EXIT_CONFIG
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

/// Parses `std::env::args` and runs the command.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(f) => {
            eprintln!("igame: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { game, common } => cmd_simulate(&game, &common),
        Command::Predict {
            game,
            trajectory,
            oracle,
            log,
            noise,
            common,
        } => cmd_predict(
            &game,
            trajectory.as_deref(),
            &oracle,
            log.as_deref(),
            noise,
            &common,
        ),
        Command::EstimateEps {
            game,
            trajectory,
            threshold,
            no_warm_start,
            common,
        } => cmd_estimate_eps(&game, &trajectory, threshold, !no_warm_start, &common),
        Command::Invariants {
            game,
            trajectory,
            candidates,
            tol_rel,
            tol_abs,
            perturb,
            delta,
            common,
        } => cmd_invariants(
            &game,
            &trajectory,
            &candidates,
            Tolerances { tol_rel, tol_abs },
            perturb,
            delta,
            &common,
        ),
        Command::Analyze {
            game,
            oracle,
            common,
        } => cmd_analyze(&game, &oracle, &common),
    }
}

fn read_game(path: &Path) -> Result<GameDefinition, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    load_game(&text).map_err(|e| {
        let mut msg = format!("{}: {e}", path.display());
        for d in e.diagnostics() {
            msg.push_str(&format!("\n  {d}"));
        }
        Failure::config(msg)
    })
}

fn read_trajectory(game: &GameDefinition, path: &Path) -> Result<Trajectory, Failure> {
    let file =
        fs::File::open(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    let jsonl = matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl" | "json")
    );
    let traj = if jsonl {
        Trajectory::read_jsonl(game, BufReader::new(file))
    } else {
        Trajectory::read_csv(game, file)
    };
    traj.map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn check_format(common: &Common, allowed: &[Format], default: Format) -> Result<Format, Failure> {
    let f = common.format.unwrap_or(default);
    if allowed.contains(&f) {
        Ok(f)
    } else {
        Err(Failure::config(
            format!("format {f:?} is not supported by this command").to_lowercase(),
        ))
    }
}

/// Writes atomically to `path`, or to standard output.
fn emit(
    path: Option<&Path>,
    write: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> Result<(), Failure> {
    let io_fail = |e: io::Error| Failure::config(format!("write failed: {e}"));
    match path {
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock).map_err(io_fail)?;
            lock.flush().map_err(io_fail)
        }
        Some(path) => {
            let dir = match path.parent() {
                Some(d) if !d.as_os_str().is_empty() => d,
                _ => Path::new("."),
            };
            let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_fail)?;
            {
                let mut w = io::BufWriter::new(tmp.as_file_mut());
                write(&mut w).map_err(io_fail)?;
                w.flush().map_err(io_fail)?;
            }
            #[cfg(unix)]
            {
                use std::os::unix::fs::PermissionsExt;
                fs::set_permissions(tmp.path(), fs::Permissions::from_mode(0o644))
                    .map_err(io_fail)?;
            }
            tmp.persist(path).map_err(|e| io_fail(e.error))?;
            Ok(())
        }
    }
}

fn partial_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

fn to_io(e: impl std::error::Error + Send + Sync + 'static) -> io::Error {
    io::Error::other(e)
}

pub fn cmd_simulate(game: &Path, common: &Common) -> Result<(), Failure> {
    let format = match check_format(common, &[Format::Csv, Format::Jsonl], Format::Csv)? {
        Format::Jsonl => TrajectoryFormat::JsonLines,
        _ => TrajectoryFormat::Csv,
    };
    let g = read_game(game)?;
    match simulate(&g) {
        Ok(traj) => emit(common.out.as_deref(), |w| {
            traj.write(w, format).map_err(to_io)
        }),
        Err(failure) => {
            if let Some(out) = &common.out {
                let partial = partial_path(out);
                emit(Some(&partial), |w| {
                    failure.partial.write(w, format).map_err(to_io)
                })?;
            }
            let code = if failure.error.is_numeric() {
                EXIT_NUMERIC
            } else {
                EXIT_CONFIG
            };
            Err(Failure {
                code,
                message: failure.to_string(),
            })
        }
    }
}

fn observed_run(g: &GameDefinition, trajectory: Option<&Path>) -> Result<Trajectory, Failure> {
    match trajectory {
        Some(p) => read_trajectory(g, p),
        None => simulate(g).map_err(|f| {
            if f.error.is_numeric() {
                Failure::numeric(f.to_string())
            } else {
                Failure::config(f.to_string())
            }
        }),
    }
}

pub fn cmd_predict(
    game: &Path,
    trajectory: Option<&Path>,
    args: &OracleArgs,
    log: Option<&Path>,
    noise: f64,
    common: &Common,
) -> Result<(), Failure> {
    check_format(common, &[Format::Json], Format::Json)?;
    if !(noise >= 0.0) {
        return Err(Failure::config("noise must be non-negative"));
    }
    let g = read_game(game)?;
    let config = args.config(&g)?;
    let oracle = Oracle::new(&g, config)?;
    let traj = with_observation_noise(&observed_run(&g, trajectory)?, noise, common.seed);
    let report = oracle.run(&traj)?;
    if let Some(path) = log {
        emit(Some(path), |w| report.write_log(w))?;
    }
    emit(common.out.as_deref(), |w| report.write_metrics(w))?;
    eprintln!(
        "state RMSE over {} anchors: baseline {:.6e}, corrected {:.6e} (corrected better at {:.1}% of anchors)",
        report.corrected.anchors,
        report.baseline.state_rmse,
        report.corrected.state_rmse,
        100.0 * report.improved_fraction
    );
    Ok(())
}

pub fn cmd_estimate_eps(
    game: &Path,
    trajectory: &Path,
    threshold: f64,
    warm_start: bool,
    common: &Common,
) -> Result<(), Failure> {
    let format = check_format(common, &[Format::Csv, Format::Json], Format::Csv)?;
    if !(threshold > 0.0) {
        return Err(Failure::config("threshold must be positive"));
    }
    let g = read_game(game)?;
    let traj = read_trajectory(&g, trajectory)?;
    let trace = recover_epsilon_with(
        &g,
        &traj,
        RecoveryOptions {
            warm_start,
            threshold,
        },
    )
    .map_err(|e| match e {
        EpsilonError::MissingColumns(_) => Failure::insufficient(e.to_string()),
        EpsilonError::Eval { .. } => Failure::numeric(e.to_string()),
        _ => Failure::config(e.to_string()),
    })?;
    emit(common.out.as_deref(), |w| match format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut *w, &trace)?;
            writeln!(w)
        }
        _ => trace.write_csv(w).map_err(to_io),
    })?;
    eprintln!(
        "{} identified, {} unidentifiable, {} not converged",
        trace.count(Identifiability::Identified),
        trace.count(Identifiability::Unidentifiable),
        trace.count(Identifiability::NoConvergence)
    );
    Ok(())
}

pub fn cmd_invariants(
    game: &Path,
    trajectory: &Path,
    candidates: &Path,
    tol: Tolerances,
    perturb: usize,
    delta: f64,
    common: &Common,
) -> Result<(), Failure> {
    check_format(common, &[Format::Json], Format::Json)?;
    if !(tol.tol_rel > 0.0) || tol.tol_abs.is_some_and(|t| !(t > 0.0)) || !(delta >= 0.0) {
        return Err(Failure::config(
            "tolerances must be positive and delta non-negative",
        ));
    }
    let g = read_game(game)?;
    let traj = read_trajectory(&g, trajectory)?;
    let text = fs::read_to_string(candidates)
        .map_err(|e| Failure::config(format!("{}: {e}", candidates.display())))?;
    let cands = load_candidates(&text)
        .map_err(|e| Failure::config(format!("{}: {e}", candidates.display())))?;
    let report = scan_omens(&cands, &traj, tol);
    let stability = if perturb > 0 {
        Some(
            perturbation_stability(&g, &cands, tol, perturb, delta, common.seed)
                .map_err(|f| Failure::numeric(f.to_string()))?,
        )
    } else {
        None
    };
    emit(common.out.as_deref(), |w| {
        match &stability {
            None => serde_json::to_writer_pretty(&mut *w, &report)?,
            Some(s) => serde_json::to_writer_pretty(
                &mut *w,
                &serde_json::json!({ "report": report, "stability": s }),
            )?,
        }
        writeln!(w)
    })
}

pub fn cmd_analyze(game: &Path, args: &OracleArgs, common: &Common) -> Result<(), Failure> {
    check_format(common, &[Format::Json], Format::Json)?;
    let g = read_game(game)?;
    let config = StrategicConfig {
        oracle: args.config(&g)?,
        virtual_policy: VirtualPolicy::Zero,
    };
    let prognosis = strategic_analysis(&g, &config)?;
    emit(common.out.as_deref(), |w| prognosis.write_json(w))
}
