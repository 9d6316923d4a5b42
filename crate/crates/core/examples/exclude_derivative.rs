//! Rewrite a law that reacts to the state's rate of change into one that does not,
//! and compare the two simulations as the step shrinks.

use igame::engine::exclude_derivative;
use igame::{load_game, simulate};

fn main() {
    let mut game = load_game(include_str!("../games/derivative_feedback.json")).unwrap();
    let transformed = exclude_derivative(&game).unwrap();
    let law = transformed.players[0].feedback.as_ref().unwrap();
    println!(
        "original:    {}",
        game.players[0].feedback.as_ref().unwrap().exprs[0]
    );
    println!("transformed: {}", law.exprs[0]);
    if let Some(guard) = &law.guard {
        println!("guard:       {guard} must stay away from zero");
    }

    for step in [0.02, 0.01, 0.005, 0.0025] {
        game.horizon.step = step;
        let a = simulate(&game).unwrap();
        let b = simulate(&exclude_derivative(&game).unwrap()).unwrap();
        let gap = a
            .samples
            .iter()
            .zip(&b.samples)
            .map(|(x, y)| (x.phi[0] - y.phi[0]).abs())
            .fold(0.0, f64::max);
        println!("h = {step:<7} max |phi - phi_transformed| = {gap:.4e}");
    }
}
