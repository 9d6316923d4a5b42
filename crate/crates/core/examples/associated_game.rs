//! Promote every ε to a control of a virtual player and drive the resulting
//! ordinary game with the ground-truth ε: the two runs coincide.

use igame::engine::{simulate_with, EngineError, ScenarioDriver};
use igame::model::build_associated_game;
use igame::{load_game, simulate};

fn main() {
    let game = load_game(include_str!("../games/lin1.json")).unwrap();
    let assoc = build_associated_game(&game).unwrap();
    println!(
        "{} real players, {} virtual",
        assoc.n_real,
        assoc.virtual_slots.len()
    );
    for p in &assoc.game.players {
        println!(
            "  player {}: u = {}",
            p.id,
            p.feedback.as_ref().unwrap().exprs[0]
        );
    }
    println!("dynamics: {}", assoc.game.dynamics[0]);

    let scenario = ScenarioDriver::new(&game);
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
    let original = simulate(&game).unwrap();
    let gap = original
        .samples
        .iter()
        .zip(&driven.samples)
        .map(|(a, b)| (a.phi[0] - b.phi[0]).abs())
        .fold(0.0, f64::max);
    println!("max state gap over {} samples: {gap:e}", original.len());
}
