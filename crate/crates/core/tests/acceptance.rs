//! Acceptance suite. Runs without the libtest harness and prints one
//! `PASS`/`FAIL` line per criterion; exits nonzero if any criterion fails.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{game, game_path, random_expr};
use igame::engine::{exclude_derivative, simulate, simulate_with, EngineError, ScenarioDriver};
use igame::epsilon::{recover_epsilon, Identifiability};
use igame::expr::{parse, ParseErrorKind};
use igame::invariants::{scan_omens, QuantityCandidate, Tolerances, Verdict};
use igame::model::{build_associated_game, GameDefinition};
use igame::oracle::{Oracle, OracleConfig, Predictor};
use igame::rng::SplitMix64;
use igame::Trajectory;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

fn with_step(mut g: GameDefinition, t1: f64, step: f64) -> GameDefinition {
    g.horizon.t1 = t1;
    g.horizon.step = step;
    g
}

fn phi_at_end(g: &GameDefinition) -> f64 {
    simulate(g).unwrap().samples.last().unwrap().phi[0]
}

fn max_state_gap(a: &Trajectory, b: &Trajectory) -> f64 {
    a.samples
        .iter()
        .zip(&b.samples)
        .flat_map(|(x, y)| x.phi.iter().zip(&y.phi).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

fn simulator_correctness() -> Outcome {
    let exact = 0.5 / 0.3 * (0.3f64.exp() - 1.0);
    let lin1 = game("lin1.json");
    let e1 = (phi_at_end(&with_step(lin1.clone(), 1.0, 0.01)) - exact).abs();
    let e2 = (phi_at_end(&with_step(lin1, 1.0, 0.005)) - exact).abs();
    let ratio = e1 / e2;
    Outcome::new(
        e1 <= 5e-3 && (1.8..=2.2).contains(&ratio),
        format!("|phi(1) - exact| = {e1:.3e} (tol 5e-3), error ratio on halving = {ratio:.4} (want [1.8, 2.2])"),
    )
}

fn associated_gap(g: &GameDefinition) -> f64 {
    let original = simulate(g).unwrap();
    let assoc = build_associated_game(g).unwrap();
    let scenario = ScenarioDriver::new(g);
    let no_eps: Vec<Vec<f64>> = assoc
        .game
        .players
        .iter()
        .map(|p| vec![0.0; p.eps_dim])
        .collect();
    let driver = |_k: usize, t: f64, phi: &[f64]| -> Result<_, EngineError> {
        let uo = scenario.pure_controls(t)?;
        let eps = scenario.truth_eps(t, phi, &uo)?;
        Ok((assoc.pack_controls(&uo, &eps), no_eps.clone()))
    };
    let driven = simulate_with(&assoc.game, &driver).unwrap();
    assert_eq!(driven.len(), original.len());
    max_state_gap(&original, &driven)
}

fn associated_equivalence() -> Outcome {
    let lin1 = associated_gap(&game("lin1.json"));
    let coalition = associated_gap(&game("coalition2.json"));
    Outcome::new(
        lin1 <= 1e-12 && coalition <= 1e-12,
        format!("max per-step gap LIN1 = {lin1:.3e}, coalition game = {coalition:.3e} (tol 1e-12)"),
    )
}

fn epsilon_round_trip() -> Outcome {
    let g = game("lin1.json");
    let traj = simulate(&g).unwrap();
    let trace = recover_epsilon(&g, &traj).unwrap();
    let truth = [0.2, 0.1];
    let mut worst = 0.0f64;
    let mut misflagged = 0;
    let mut small = 0;
    for (i, s) in traj.samples.iter().enumerate() {
        let row = &trace.estimates[2 * i..2 * i + 2];
        let tiny = s.phi[0].abs() < 1e-8;
        small += usize::from(tiny);
        for e in row {
            if tiny && e.flag != Identifiability::Unidentifiable {
                misflagged += 1;
            }
            if e.flag == Identifiability::Identified {
                worst = worst.max((e.eps.as_ref().unwrap()[0] - truth[e.player - 1]).abs());
            }
        }
    }
    let identified = trace.count(Identifiability::Identified);
    Outcome::new(
        worst <= 1e-6 && misflagged == 0 && identified > 0,
        format!(
            "{identified} identified, max |eps - truth| = {worst:.3e} (tol 1e-6); {small} sample(s) with |phi| < 1e-8, {misflagged} not flagged UNIDENTIFIABLE"
        ),
    )
}

fn unraveling_improvement() -> Outcome {
    let g = game("lin1.json");
    let traj = simulate(&g).unwrap();
    let config = OracleConfig::new(Predictor::Frozen, 1.0)
        .with_depth(0.5)
        .with_window(200);
    let report = Oracle::new(&g, config).unwrap().run(&traj).unwrap();

    let neutral = game("lin1_neutral.json");
    let traj0 = simulate(&neutral).unwrap();
    let config = OracleConfig::new(Predictor::Replay, 1.0)
        .with_depth(0.5)
        .with_window(200);
    let fixed = Oracle::new(&neutral, config).unwrap().run(&traj0).unwrap();
    let mut gap = 0.0f64;
    for c in &fixed.corrected_log {
        let b = fixed.log.iter().find(|b| b.anchor() == c.anchor()).unwrap();
        for (x, y) in c
            .state_path()
            .iter()
            .flatten()
            .zip(b.state_path().iter().flatten())
        {
            gap = gap.max((x - y).abs());
        }
    }
    Outcome::new(
        report.improved_fraction >= 0.95 && !fixed.corrected_log.is_empty() && gap <= 1e-6,
        format!(
            "improved at {:.2}% of {} scored anchors (want >= 95%); fixed point: {} corrected anchors, max |corrected - baseline| = {gap:.3e} (tol 1e-6)",
            100.0 * report.improved_fraction,
            report.per_anchor.len() - report.warm_up_anchors,
            fixed.corrected_log.len()
        ),
    )
}

fn exclusion_gap(step: f64) -> f64 {
    let g = with_step(game("derivative_feedback.json"), 1.0, step);
    let transformed = exclude_derivative(&g).unwrap();
    max_state_gap(&simulate(&g).unwrap(), &simulate(&transformed).unwrap())
}

fn derivative_exclusion() -> Outcome {
    let g = game("derivative_feedback.json");
    let law = exclude_derivative(&g).unwrap().players[0]
        .feedback
        .as_ref()
        .unwrap()
        .exprs[0]
        .clone();
    let expected = parse("(uo[1][0] + eps[1][0]*u[2][0]) / (1 - eps[1][0])").unwrap();
    let (g1, g2) = (exclusion_gap(0.01), exclusion_gap(0.005));
    let ratio = g1 / g2;
    Outcome::new(
        law == expected && (1.8..=2.2).contains(&ratio),
        format!("transformed law {law}; max gap h=0.01: {g1:.3e}, h=0.005: {g2:.3e}, ratio {ratio:.4} (want [1.8, 2.2])"),
    )
}

fn omen_scanner() -> Outcome {
    let state = [QuantityCandidate::new("Z", "phi[0]").unwrap()];
    let still = scan_omens(
        &state,
        &simulate(&game("still.json")).unwrap(),
        Tolerances::default(),
    );
    let lin1 = scan_omens(
        &state,
        &simulate(&game("lin1.json")).unwrap(),
        Tolerances::default(),
    );
    let energy = [QuantityCandidate::new("E", "phi[0]^2 + phi[1]^2").unwrap()];
    let tol = Tolerances {
        tol_rel: 5e-3,
        ..Tolerances::default()
    };
    let harmonic = scan_omens(&energy, &simulate(&game("harmonic.json")).unwrap(), tol);

    let dynamics = lin1.candidates[0].dynamics;
    let (c0, c1) = dynamics
        .map(|d| (d.c0, d.c1))
        .unwrap_or((f64::NAN, f64::NAN));
    let coeffs_ok = (c0 - 0.5).abs() <= 1e-7 && (c1 - 0.3).abs() <= 1e-7;
    let pass = still.verdict("Z") == Some(Verdict::Invariant)
        && lin1.verdict("Z") == Some(Verdict::ClosedDynamics)
        && coeffs_ok
        && harmonic.verdict("E") == Some(Verdict::Invariant);
    Outcome::new(
        pass,
        format!(
            "Phi=0: {:?}; LIN1: {:?} with (c0, c1) = ({c0:.9}, {c1:.9}) (tol 1e-7); harmonic energy: {:?} at variation {:.3e}",
            still.verdict("Z"),
            lin1.verdict("Z"),
            harmonic.verdict("E"),
            harmonic.candidates[0].relative_variation.unwrap_or(f64::NAN)
        ),
    )
}

fn parser_suite() -> Outcome {
    let mut rng = SplitMix64::new(20_240_917);
    let mut round_trip_failures = 0;
    for _ in 0..1000 {
        let e = random_expr(&mut rng, 5);
        if parse(&e.to_string()).ok().as_ref() != Some(&e) {
            round_trip_failures += 1;
        }
    }

    let precedence = [
        ("-2^2", -4.0),
        ("2^-1", 0.5),
        ("2^3^2", 512.0),
        ("8/4/2", 1.0),
        ("1-2-3", -4.0),
        ("1+2*3", 7.0),
    ];
    let env = igame::Env::new();
    let precedence_failures = precedence
        .iter()
        .filter(|(src, want)| parse(src).unwrap().evaluate(&env).unwrap() != *want)
        .count();

    type KindCheck = fn(&ParseErrorKind) -> bool;
    let errors: [(&str, usize, KindCheck); 11] = [
        ("phi[", 4, |k| matches!(k, ParseErrorKind::Expected(_))),
        ("1 +", 3, |k| matches!(k, ParseErrorKind::Expected(_))),
        ("(1", 2, |k| matches!(k, ParseErrorKind::Expected(_))),
        ("1 2", 2, |k| matches!(k, ParseErrorKind::Expected(_))),
        ("u[1]", 4, |k| matches!(k, ParseErrorKind::Expected(_))),
        ("phi[x]", 4, |k| matches!(k, ParseErrorKind::Expected(_))),
        ("2 * foo(1)", 4, |k| {
            matches!(k, ParseErrorKind::UnknownFunction(_))
        }),
        ("u[0][0]", 1, |k| {
            matches!(k, ParseErrorKind::MalformedIndex(_))
        }),
        ("min(1)", 0, |k| {
            matches!(k, ParseErrorKind::WrongArity { .. })
        }),
        ("", 0, |k| matches!(k, ParseErrorKind::Empty)),
        ("2e", 2, |k| matches!(k, ParseErrorKind::Expected(_))),
    ];
    let mut offset_failures = Vec::new();
    for (src, offset, kind) in errors {
        match parse(src) {
            Err(e) if e.offset == offset && kind(&e.kind) => {}
            other => offset_failures.push(format!("{src:?} -> {other:?}")),
        }
    }
    Outcome::new(
        round_trip_failures == 0 && precedence_failures == 0 && offset_failures.is_empty(),
        format!(
            "round trip 1000 expressions: {round_trip_failures} failure(s); precedence: {precedence_failures}/{} failure(s); error offsets: {}/{} failure(s) {}",
            precedence.len(),
            offset_failures.len(),
            errors.len(),
            offset_failures.join("; ")
        ),
    )
}

struct CliCase {
    name: &'static str,
    args: Vec<String>,
    outputs: Vec<&'static str>,
    exit: i32,
}

fn run_case(case: &CliCase, dir: &Path) -> Result<Vec<Vec<u8>>, String> {
    let args: Vec<String> = case
        .args
        .iter()
        .map(|a| a.replace("{dir}", dir.to_str().unwrap()))
        .collect();
    let out = Command::new(env!("CARGO_BIN_EXE_igame"))
        .args(&args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.code() != Some(case.exit) {
        return Err(format!(
            "{}: exit {:?}, stderr {}",
            case.name,
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    let mut files = vec![out.stdout];
    for f in &case.outputs {
        files.push(std::fs::read(dir.join(f)).map_err(|e| format!("{}: {f}: {e}", case.name))?);
    }
    Ok(files)
}

fn cli_determinism() -> Outcome {
    let setup = tempfile::tempdir().unwrap();
    let traj = setup.path().join("lin1.csv");
    let status = Command::new(env!("CARGO_BIN_EXE_igame"))
        .args([
            "simulate",
            game_path("lin1.json").to_str().unwrap(),
            "--out",
            traj.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    if !status.success() {
        return Outcome::new(false, "could not produce the input trajectory");
    }
    let g = |n: &str| game_path(n).to_string_lossy().into_owned();
    let t = traj.to_string_lossy().into_owned();
    let cands = g("candidates.json");
    let case = |name, args: &[&str], outputs: Vec<&'static str>, exit| CliCase {
        name,
        args: args.iter().map(|s| s.to_string()).collect(),
        outputs,
        exit,
    };
    let cases = vec![
        case(
            "simulate csv",
            &[
                "simulate",
                &g("lin1.json"),
                "--seed",
                "7",
                "--out",
                "{dir}/s.csv",
            ],
            vec!["s.csv"],
            0,
        ),
        case(
            "simulate jsonl",
            &[
                "simulate",
                &g("coalition2.json"),
                "--seed",
                "7",
                "--format",
                "jsonl",
            ],
            vec![],
            0,
        ),
        case(
            "predict",
            &[
                "predict",
                &g("lin1.json"),
                "--dt",
                "0.5",
                "--noise",
                "1e-3",
                "--seed",
                "7",
                "--log",
                "{dir}/log.jsonl",
                "--out",
                "{dir}/m.json",
            ],
            vec!["m.json", "log.jsonl"],
            0,
        ),
        case(
            "estimate-eps",
            &[
                "estimate-eps",
                &g("lin1.json"),
                &t,
                "--seed",
                "7",
                "--out",
                "{dir}/e.csv",
            ],
            vec!["e.csv"],
            0,
        ),
        case(
            "estimate-eps parallel",
            &[
                "estimate-eps",
                &g("lin1.json"),
                &t,
                "--no-warm-start",
                "--seed",
                "7",
            ],
            vec![],
            0,
        ),
        case(
            "invariants",
            &[
                "invariants",
                &g("lin1.json"),
                &t,
                &cands,
                "--perturb",
                "4",
                "--seed",
                "7",
                "--out",
                "{dir}/i.json",
            ],
            vec!["i.json"],
            0,
        ),
        case(
            "analyze",
            &[
                "analyze",
                &g("lin1.json"),
                "--dt",
                "0.5",
                "--seed",
                "7",
                "--out",
                "{dir}/a.json",
            ],
            vec!["a.json"],
            0,
        ),
        case(
            "simulate failure",
            &[
                "simulate",
                &g("diverge.json"),
                "--seed",
                "7",
                "--out",
                "{dir}/d.csv",
            ],
            vec!["d.csv.partial"],
            3,
        ),
    ];
    let mut mismatched = Vec::new();
    for c in &cases {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        match (run_case(c, a.path()), run_case(c, b.path())) {
            (Ok(x), Ok(y)) if x == y => {}
            (Err(e), _) | (_, Err(e)) => mismatched.push(e),
            _ => mismatched.push(format!("{}: outputs differ", c.name)),
        }
    }
    Outcome::new(
        mismatched.is_empty(),
        format!(
            "{} command(s) run twice, {} not byte-identical {}",
            cases.len(),
            mismatched.len(),
            mismatched.join("; ")
        ),
    )
}

fn main() {
    let criteria: [(&str, Option<Duration>, fn() -> Outcome); 8] = [
        (
            "simulator correctness",
            Some(Duration::from_secs(1)),
            simulator_correctness,
        ),
        (
            "associated-game equivalence",
            Some(Duration::from_secs(1)),
            associated_equivalence,
        ),
        (
            "epsilon round trip",
            Some(Duration::from_secs(1)),
            epsilon_round_trip,
        ),
        (
            "interactivity-corrected prediction",
            Some(Duration::from_secs(5)),
            unraveling_improvement,
        ),
        ("derivative exclusion", None, derivative_exclusion),
        ("omen scanner", None, omen_scanner),
        ("parser suite", None, parser_suite),
        ("CLI determinism", None, cli_determinism),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome =
            std::panic::catch_unwind(check).unwrap_or_else(|_| Outcome::new(false, "panicked"));
        let elapsed = start.elapsed();
        let in_time = budget.is_none_or(|b| elapsed < b);
        let pass = outcome.pass && in_time;
        failed += usize::from(!pass);
        let budget = budget
            .map(|b| format!(" (budget {:.0?})", b))
            .unwrap_or_default();
        println!(
            "{} [{}] {name}: {} [{:.1?}{budget}]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            outcome.detail,
            elapsed
        );
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
