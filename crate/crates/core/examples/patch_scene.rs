//! Tile a scene into overlapping patches, split them and write a patch
//! directory that the `quanvseg train` command can read.
//!
//!     cargo run --example patch_scene -- /tmp/patches

use quanvseg::data::{extract_patches, patch_grid, split, synth_scene, PatchSet, Split};

fn main() -> quanvseg::Result<()> {
    let (image, mask) = synth_scene(4, 512, 512, 30, 4.0)?;
    let per_axis = patch_grid(512, 256, 128);
    println!("{per_axis} x {per_axis} patch grid");
    let set = split(extract_patches(&image.to_tensor(), &mask, 256, 128)?, 0.2, 0)?;
    for p in &set.items {
        println!("({:>3}, {:>3}) {:<5} buildings {:.3}", p.row, p.col, p.split, p.mask.positive_fraction());
    }
    println!("{} train, {} test", set.count(Split::Train), set.count(Split::Test));
    if let Some(dir) = std::env::args().nth(1) {
        set.write_dir(dir.as_ref())?;
        let back = PatchSet::read_dir(dir.as_ref())?;
        println!("wrote {} patches to {dir}", back.len());
    }
    Ok(())
}
