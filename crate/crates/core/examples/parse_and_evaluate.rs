//! Parse feedback expressions, print them back and evaluate them in an environment.

use igame::{parse, Env, Var};

fn main() {
    let law = parse("uo[1][0] + eps[1][0] * phi[0]").unwrap();
    println!("parsed:    {law}");
    println!("variables: {:?}", law.free_variables());

    let env = Env::new()
        .with(Var::Uo(1, 0), 1.0)
        .with(Var::Eps(1, 0), 0.2)
        .with(Var::Phi(0), 3.0);
    println!("value:     {}", law.evaluate(&env).unwrap());

    for src in ["-2^2", "2^3^2", "max(sin(pi/2), exp(-1))"] {
        let e = parse(src).unwrap();
        println!(
            "{src:<26} = {:<8} printed as {e}",
            e.evaluate(&Env::new()).unwrap()
        );
    }

    for bad in ["phi[", "2 * foo(1)", "u[0][0]"] {
        let err = parse(bad).unwrap_err();
        println!("{bad:<12} -> offset {}: {}", err.offset, err.kind);
    }
}
