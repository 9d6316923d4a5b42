//! Simulate the linear two-player game and compare against its exact solution.
//!
//! With u1 = 1 + 0.2 phi and u2 = -0.5 + 0.1 phi the state obeys
//! phi' = 0.5 + 0.3 phi, so phi(t) = (0.5 / 0.3) (e^{0.3 t} - 1).

use igame::{load_game, simulate};

fn main() {
    let mut game = load_game(include_str!("../games/lin1.json")).unwrap();
    let exact = 0.5 / 0.3 * (0.3f64.exp() - 1.0);
    game.horizon.t1 = 1.0;
    for step in [0.02, 0.01, 0.005, 0.0025] {
        game.horizon.step = step;
        let traj = simulate(&game).unwrap();
        let end = traj.samples.last().unwrap();
        println!(
            "h = {step:<7} phi(1) = {:.9}  error = {:.3e}",
            end.phi[0],
            (end.phi[0] - exact).abs()
        );
    }

    game.horizon.step = 0.25;
    let traj = simulate(&game).unwrap();
    let mut csv = Vec::new();
    traj.write_csv(&mut csv).unwrap();
    print!("{}", String::from_utf8(csv).unwrap());
}
