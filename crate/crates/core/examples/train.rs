//! Trains a model without reference images.
//!
//! Usage: cargo run --release --example train [DATA_DIR] [plain|dsc] [ITERATIONS]
//!
//! Without a directory, a small synthetic mixed-exposure set is used.

use curvelight::net::{self, NetConfig};
use curvelight::synth;
use curvelight::train::{self, Dataset, TrainConfig};

fn main() -> curvelight::Result<()> {
    let mut args = std::env::args().skip(1);
    let data = args.next();
    let variant = args.next().unwrap_or_else(|| "dsc".into()).parse()?;
    let iterations = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);

    let cfg = TrainConfig {
        train_size: 128,
        epochs: usize::MAX,
        max_iterations: Some(iterations),
        net: NetConfig::for_variant(variant),
        ..TrainConfig::default()
    };
    let dataset = match data {
        Some(dir) => train::load_dataset(dir.as_ref(), cfg.train_size)?,
        None => Dataset {
            names: (0..12).map(|i| format!("synthetic_{i}")).collect(),
            images: synth::mixed_exposure_set(12, cfg.train_size, 0),
            skipped: Vec::new(),
        },
    };
    let outcome = train::train_on(&cfg, dataset, &mut |line| println!("{line}"))?;
    let out = std::env::temp_dir().join(format!("curvelight-{variant}.zdce"));
    net::save(&outcome.model, &out)?;
    println!("saved {}", out.display());
    Ok(())
}
