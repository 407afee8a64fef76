//! Train a raw-band and a quanvolution-fed Attention U-Net on the same
//! synthetic scenes and compare held-out accuracy.
//!
//!     cargo run --release --example train_segmenter -- [epochs]

use std::time::Instant;

use quanvseg::data::{extract_patches, split, synth_scene, PatchSet, Split};
use quanvseg::nn::count_trainable;
use quanvseg::qsim::{build_circuit, Template};
use quanvseg::quanvolution::{quanvolve, QuanvConfig};
use quanvseg::unet::{evaluate, train_with, AttentionUNet, AttentionUNetConfig, TrainConfig};

fn run(label: &str, set: &PatchSet, config: AttentionUNetConfig, train: &TrainConfig) -> quanvseg::Result<()> {
    let mut model = AttentionUNet::new(&config, 0)?;
    println!("{label}: {} parameters", count_trainable(&model));
    let start = Instant::now();
    train_with(&mut model, set, train, &mut |e| {
        if e.epoch % 5 == 0 || e.epoch == 1 {
            println!("  epoch {:>3}  loss {:.4}  train OA {:.4}  {:.0?}", e.epoch, e.loss, e.train_oa, start.elapsed());
        }
    })?;
    let report = evaluate(&model, set, Split::Test)?;
    println!("  test {}", report.summary_line());
    Ok(())
}

fn main() -> quanvseg::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let qcfg = QuanvConfig::new(build_circuit(Template::StronglyEntangled, 9, 2, 7)?, 3);
    let mut raw = PatchSet { patch_size: 64, stride: 64, channels: 1, items: Vec::new() };
    let mut stacked = PatchSet { patch_size: 64, stride: 64, channels: 9, items: Vec::new() };
    let start = Instant::now();
    for seed in 0..8 {
        let (image, mask) = synth_scene(seed, 320, 320, 50, 4.0)?;
        raw.items.extend(extract_patches(&image.to_tensor(), &mask, 64, 64)?.items);
        stacked.items.extend(extract_patches(&quanvolve(&image, &qcfg)?.to_tensor(), &mask, 64, 64)?.items);
    }
    println!("{} patches per variant, quanvolved in {:.1?}", raw.len(), start.elapsed());
    let train = TrainConfig { epochs, ..Default::default() };
    run("raw band", &split(raw, 0.2, 1)?, AttentionUNetConfig::new(1, &[8, 16, 32]), &train)?;
    run("quanvolution", &split(stacked, 0.2, 1)?, AttentionUNetConfig::new(9, &[4, 8, 16]), &train)?;
    Ok(())
}
