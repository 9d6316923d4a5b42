//! Recover the hidden feedback parameters sample by sample from an observed run.

use igame::epsilon::{recover_epsilon, recover_epsilon_with, Identifiability, RecoveryOptions};
use igame::{load_game, simulate};

fn main() {
    let game = load_game(include_str!("../games/lin1.json")).unwrap();
    let observed = simulate(&game).unwrap().without_eps();
    let trace = recover_epsilon(&game, &observed).unwrap();
    println!(
        "identified {}, unidentifiable {}, not converged {}",
        trace.count(Identifiability::Identified),
        trace.count(Identifiability::Unidentifiable),
        trace.count(Identifiability::NoConvergence)
    );
    for e in trace.estimates.iter().step_by(400) {
        println!(
            "t = {:<5} player {} eps = {:?} [{}] sigma_min = {:.3e}",
            e.t, e.player, e.eps, e.flag, e.min_singular_value
        );
    }

    let opts = RecoveryOptions {
        warm_start: false,
        ..RecoveryOptions::default()
    };
    let cold = recover_epsilon_with(&game, &observed, opts).unwrap();
    println!(
        "cold-start solve agrees: {}",
        cold.count(Identifiability::Identified) == trace.count(Identifiability::Identified)
    );

    let strict = RecoveryOptions {
        threshold: 1e-10,
        ..RecoveryOptions::default()
    };
    let strict = recover_epsilon_with(&game, &observed, strict).unwrap();
    println!(
        "threshold 1e-10: identified {}",
        strict.count(Identifiability::Identified)
    );

    let filtering = load_game(include_str!("../games/filtering.json")).unwrap();
    match recover_epsilon(&filtering, &simulate(&filtering).unwrap()) {
        Ok(_) => println!("filtering game recovered"),
        Err(e) => println!("filtering game: {e}"),
    }
}
