//! Quanvolve a synthetic scene with a 3x3 window on 9 qubits and report
//! per-channel statistics split by building and background pixels.
//!
//!     cargo run --example quanvolve_scene

use std::time::Instant;

use quanvseg::data::synth_scene;
use quanvseg::qsim::{build_circuit, Template};
use quanvseg::quanvolution::{quanvolve, QuanvConfig};

fn main() -> quanvseg::Result<()> {
    let (image, mask) = synth_scene(0, 96, 96, 8, 4.0)?;
    let config = QuanvConfig::new(build_circuit(Template::StronglyEntangled, 9, 2, 7)?, 3);
    let start = Instant::now();
    let stack = quanvolve(&image, &config)?;
    println!(
        "{}x{} scene -> {}x{}x{} stack in {:.2?}",
        image.height(),
        image.width(),
        stack.channels,
        stack.height,
        stack.width,
        start.elapsed()
    );
    println!("channel  building  background");
    for c in 0..stack.channels {
        let (mut on, mut off, mut n_on) = (0.0, 0.0, 0usize);
        for (v, &m) in stack.channel(c).iter().zip(mask.data()) {
            if m == 1 {
                on += v;
                n_on += 1;
            } else {
                off += v;
            }
        }
        let n_off = mask.data().len() - n_on;
        println!("{c:>7}  {:>8.4}  {:>10.4}", on / n_on.max(1) as f64, off / n_off.max(1) as f64);
    }
    Ok(())
}
