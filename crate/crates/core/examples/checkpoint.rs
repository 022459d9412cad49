//! Saves a model, reads it back and shows the header.

use curvelight::net::{self, Model, NetConfig};

fn main() -> curvelight::Result<()> {
    let dir = std::env::temp_dir().join("curvelight-checkpoint-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("dsc.zdce");

    let model = Model::<f32>::build(NetConfig::separable(), 42)?;
    net::save(&model, &path)?;
    let bytes = std::fs::read(&path)?;
    println!("{} bytes, header {:02x?}", bytes.len(), &bytes[..12]);

    let back: Model<f32> = net::load(&path)?;
    println!("parameters: {}", back.param_count());
    println!("bit-exact round trip: {}", back == model);
    Ok(())
}
