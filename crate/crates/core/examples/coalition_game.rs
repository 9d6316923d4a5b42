//! A game whose dynamics see joint coalition controls rather than individual ones.

use igame::model::build_associated_game;
use igame::{load_game, simulate};

fn main() {
    let game = load_game(include_str!("../games/coalition2.json")).unwrap();
    for c in &game.coalitions {
        println!("coalition {} members {:?}", c.id, c.members);
    }
    let traj = simulate(&game).unwrap();
    for s in traj.samples.iter().step_by(traj.len() / 5) {
        println!("t = {:<5.2} phi = {:?} v = {:?}", s.t, s.phi, s.v);
    }
    let assoc = build_associated_game(&game).unwrap();
    for slot in &assoc.virtual_slots {
        println!(
            "virtual player {} carries eps of coalition {:?}: {:?}",
            slot.slot, slot.coalition, slot.sources
        );
    }
}
