//! Parameter and multiply-accumulate audit of both network variants.

use curvelight::net::{Model, NetConfig};

fn main() -> curvelight::Result<()> {
    for cfg in [NetConfig::plain(), NetConfig::separable()] {
        let model = Model::<f32>::build(cfg, 0)?;
        println!("{} (downsample {}): {} parameters", cfg.variant, cfg.downsample, model.param_count());
        for (i, (cin, cout)) in cfg.channel_plan().into_iter().enumerate() {
            let skip = cfg.skip_source(i).map(|j| format!(" + skip from layer {}", j + 1)).unwrap_or_default();
            println!("  layer {}: {cin:>2} -> {cout:>2}{skip}", i + 1);
        }
        println!("  MACs at 1200x900: {:.3}G", model.flops(900, 1200)? as f64 / 1e9);
    }

    println!("\nseparable variant, 1200x900, by downsample factor:");
    for d in [1, 2, 4, 8, 12, 20, 50, 100, 300] {
        let cfg = NetConfig { downsample: d, ..NetConfig::separable() };
        println!("  {d:>3}x: {:>9.3}G", cfg.flops(900, 1200)? as f64 / 1e9);
    }
    Ok(())
}
