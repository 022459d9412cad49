//! Writes a directory of procedurally generated, alternately under- and over-exposed
//! scenes, usable as a stand-in training set.
//!
//! Usage: cargo run --example synth_dataset DIR [COUNT] [SIZE]

use std::path::PathBuf;

fn main() -> curvelight::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "synthetic_data".into()));
    let count = args.next().and_then(|s| s.parse().ok()).unwrap_or(24);
    let size = args.next().and_then(|s| s.parse().ok()).unwrap_or(256);
    curvelight::synth::write_mixed_exposure_set(&dir, count, size, 0)?;
    println!("wrote {count} images of {size}x{size} to {}", dir.display());
    Ok(())
}
