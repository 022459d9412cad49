//! PSNR / SSIM / MAE between two images, or between a synthetic scene and an
//! under-exposed copy of it.
//!
//! Usage: cargo run --example metrics [PRED GT]

use curvelight::image_io;
use curvelight::metrics;
use curvelight::synth::{self, Exposure};

fn main() -> curvelight::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (pred, gt) = match args.as_slice() {
        [p, g] => (image_io::load(p)?, image_io::load(g)?),
        _ => {
            let gt = synth::scene(96, 64, 7);
            (synth::expose(&gt, Exposure::Under(0.3)), gt)
        }
    };
    let s = metrics::score(&pred, &gt)?;
    println!("psnr {:.3} dB  ssim {:.4}  mae {:.3}", s.psnr, s.ssim, s.mae);
    Ok(())
}
