//! Load a game document and inspect what validation reports about a broken one.

use igame::model::{load_game, validate};

fn main() {
    let game = load_game(include_str!("../games/coalition2.json")).unwrap();
    println!(
        "{}: {} players, {} coalitions, state dim {}",
        game.name,
        game.n_players(),
        game.coalitions.len(),
        game.state_dim
    );
    println!(
        "horizon: {} steps of {}",
        game.horizon.steps(),
        game.horizon.step
    );
    assert!(validate(&game).is_empty());

    let broken = include_str!("../games/lin1.json").replace("phi[0]\"]", "phi[3]\"]");
    match load_game(&broken) {
        Ok(_) => println!("unexpectedly valid"),
        Err(e) => {
            println!("rejected: {e}");
            for d in e.diagnostics() {
                println!("  {} at {}", d.code, d.path);
            }
        }
    }

    let round_trip = load_game(&game.serialize()).unwrap();
    println!("serialize/load round trip equal: {}", round_trip == game);
}
