//! Compare trainable-parameter counts of raw-band and quanvolution-fed
//! Attention U-Nets at full and desk scale.
//!
//!     cargo run --example param_budget

use quanvseg::nn::count_trainable;
use quanvseg::unet::{count_params, AttentionUNet, AttentionUNetConfig, Upsample};

fn main() -> quanvseg::Result<()> {
    let pairs = [
        ("full", AttentionUNetConfig::reference_baseline(), AttentionUNetConfig::reference_quantum()),
        ("desk", AttentionUNetConfig::new(1, &[8, 16, 32]), AttentionUNetConfig::new(9, &[4, 8, 16])),
        (
            "desk nearest",
            AttentionUNetConfig::new(1, &[8, 16, 32]).with_upsample(Upsample::NearestConv),
            AttentionUNetConfig::new(9, &[4, 8, 16]).with_upsample(Upsample::NearestConv),
        ),
    ];
    for (label, base, quantum) in pairs {
        let (b, q) = (count_params(&base)?, count_params(&quantum)?);
        println!(
            "{label:<13} raw {:?} in={}: {b:>10}   quanv {:?} in={}: {q:>9}   ratio {:.2}%",
            base.widths,
            base.in_channels,
            quantum.widths,
            quantum.in_channels,
            100.0 * q as f64 / b as f64
        );
    }
    let small = AttentionUNetConfig::new(9, &[4, 8, 16]);
    let model = AttentionUNet::new(&small, 0)?;
    println!("enumerated desk quanv model: {} parameters, {} gates", count_trainable(&model), model.n_gates());
    Ok(())
}
