//! A miniature layers / features / iterations sweep on synthetic data.

use curvelight::losses::LossConfig;
use curvelight::net::NetConfig;
use curvelight::synth;
use curvelight::train::{train_on, Dataset, TrainConfig};

fn main() -> curvelight::Result<()> {
    let size = 48;
    let images = synth::mixed_exposure_set(10, size, 5);
    println!("config      params   final_total  val_total");
    for (l, f, n) in [(7, 32, 8), (7, 16, 8), (5, 32, 8), (3, 32, 8), (7, 32, 4), (7, 32, 1)] {
        let cfg = TrainConfig {
            train_size: size,
            lr: 1e-3,
            epochs: 10,
            net: NetConfig { layers: l, features: f, iterations: n, ..NetConfig::plain() },
            loss: LossConfig::default(),
            ..TrainConfig::default()
        };
        let data = Dataset { names: vec![String::new(); images.len()], images: images.clone(), skipped: vec![] };
        let out = train_on(&cfg, data, &mut |_| {})?;
        let last = out.log.iterations.last().map_or(f64::NAN, |(_, b)| b.total);
        let val = out.log.epochs.last().map_or(f64::NAN, |e| e.val_total);
        println!("l{l}-f{f}-n{n:<3} {:>8} {last:>12.5} {val:>10.5}", out.model.param_count());
    }
    Ok(())
}
