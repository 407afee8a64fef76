//! Finite-difference check of every layer's backward pass and of a small
//! full model.
//!
//!     cargo run --example gradient_check -- 3

use quanvseg::unet::gradient_suite;

fn main() -> quanvseg::Result<()> {
    let seeds = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    println!("{:<24} {:>12} {:>9} {:>8} {:>8}", "component", "max rel err", "tol", "checked", "skipped");
    for e in gradient_suite(seeds)? {
        println!(
            "{:<24} {:>12.3e} {:>9.0e} {:>8} {:>8} {}",
            e.name,
            e.max_rel_error,
            e.tolerance,
            e.checked,
            e.skipped,
            if e.passed() { "ok" } else { "FAIL" }
        );
    }
    Ok(())
}
