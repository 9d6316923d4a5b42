//! Look for quantities that stay constant or follow their own closed dynamics.

use igame::invariants::{
    load_candidates, perturbation_stability, scan_omens, QuantityCandidate, Tolerances,
};
use igame::{load_game, simulate};

fn main() {
    let lin1 = load_game(include_str!("../games/lin1.json")).unwrap();
    let candidates = load_candidates(include_str!("../games/candidates.json")).unwrap();
    let report = scan_omens(
        &candidates,
        &simulate(&lin1).unwrap(),
        Tolerances::default(),
    );
    for c in &report.candidates {
        println!(
            "{:<14} {:?} {:?}",
            c.name,
            c.verdict,
            c.dynamics.map(|d| (d.c0, d.c1))
        );
    }

    let harmonic = load_game(include_str!("../games/harmonic.json")).unwrap();
    let energy = [QuantityCandidate::new("energy", "phi[0]^2 + phi[1]^2").unwrap()];
    let tol = Tolerances {
        tol_rel: 5e-3,
        ..Tolerances::default()
    };
    let report = scan_omens(&energy, &simulate(&harmonic).unwrap(), tol);
    println!("harmonic energy: {:?}", report.verdict("energy"));

    let stability =
        perturbation_stability(&lin1, &candidates, Tolerances::default(), 8, 1e-3, 42).unwrap();
    println!("{stability:#?}");
}
