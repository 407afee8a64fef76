//! Build each circuit template, run an angle-encoded window through it and
//! compare the simulator with the dense unitary.
//!
//!     cargo run --example simulate_circuit

use quanvseg::qsim::{angle_encode, build_circuit, dense_unitary_oracle, run_circuit, serialize_circuit, Template};

fn main() -> quanvseg::Result<()> {
    let window = [0.1, 0.8, 0.35, 0.6];
    let input = angle_encode(&window, 4)?;
    for template in Template::ALL {
        let spec = build_circuit(template, 4, 2, 11)?;
        let out = run_circuit(&spec, &input)?;
        let dense = dense_unitary_oracle(&spec)?.apply_state(&input)?;
        let gap = out.amplitudes().iter().zip(dense.amplitudes()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let z: Vec<String> = out.z_expectations().iter().map(|v| format!("{v:+.4}")).collect();
        println!(
            "{:<20} {} gates  <Z> = [{}]  |sim - dense| = {gap:.1e}",
            template.name(),
            spec.gates().len(),
            z.join(", ")
        );
    }
    println!("\n{}", serialize_circuit(&build_circuit(Template::BasicEntangled, 3, 1, 0)?));
    Ok(())
}
