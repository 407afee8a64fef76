//! Push a feature map through an attention gate and print its intermediate
//! maps, first with zero weights and then with random ones.
//!
//!     cargo run --example attention_gate

use quanvseg::nn::{Mode, Tensor};
use quanvseg::unet::{attention_gate_forward, AttentionGate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn range(t: &Tensor) -> (f64, f64) {
    t.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

fn main() -> quanvseg::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = Tensor::uniform(&[1, 16, 8, 8], -1.0, 1.0, &mut rng);
    let x = Tensor::uniform(&[1, 8, 8, 8], -1.0, 1.0, &mut rng);
    for (label, gate) in
        [("zero weights", AttentionGate::zeroed(16, 8, 4)), ("random weights", AttentionGate::new(16, 8, 4, &mut rng))]
    {
        let (out, cache) = attention_gate_forward(&gate, &g, &x, Mode::Eval)?;
        let t = &cache.trace;
        println!("{label} ({} parameters)", AttentionGate::param_count(16, 8, 4));
        for (name, map) in [
            ("psi", &t.psi),
            ("relu", &t.psi_relu),
            ("bn", &t.psi_bn),
            ("alpha", &t.alpha),
            ("rho", &t.rho),
            ("out", &out),
        ] {
            let (lo, hi) = range(map);
            println!("  {name:<6} {:?} in [{lo:+.4}, {hi:+.4}]", map.dims());
        }
    }
    Ok(())
}
