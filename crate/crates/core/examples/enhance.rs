//! Enhances an image with a checkpoint (or a freshly initialised model).
//!
//! Usage: cargo run --release --example enhance [MODEL] [INPUT] [OUTPUT]

use curvelight::image_io::{self, Image};
use curvelight::net::{self, Model, NetConfig};
use curvelight::synth::{self, Exposure};

fn main() -> curvelight::Result<()> {
    let mut args = std::env::args().skip(1);
    let model: Model<f32> = match args.next() {
        Some(p) => net::load(p)?,
        None => Model::build(NetConfig::separable(), 0)?,
    };
    let input = match args.next() {
        Some(p) => image_io::load(p)?,
        None => synth::expose(&synth::scene(240, 180, 3), Exposure::Under(0.25)),
    };
    let output = args.next().unwrap_or_else(|| "enhanced.png".into());

    let enhanced = model.enhance(&input.to_tensor())?;
    let img = Image::from_tensor(&enhanced, 0)?;
    image_io::save(&img, &output)?;
    println!(
        "{} model, downsample {}: mean {:.3} -> {:.3}, wrote {output}",
        model.variant(),
        model.downsample(),
        input.mean(),
        img.mean()
    );
    Ok(())
}
