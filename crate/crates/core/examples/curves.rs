//! Tabulates the light-enhancement curve for a few parameters and iteration counts,
//! and checks that a shared map behaves exactly like the same map repeated.

use curvelight::curve::{apply_curves, apply_curves_shared, CurveParamMaps};
use curvelight::tensor::Tensor;

fn main() -> curvelight::Result<()> {
    let xs: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let img = Tensor::new(vec![1, 3, 1, xs.len()], xs.repeat(3))?;

    for &alpha in &[-1.0, -0.5, 0.5, 1.0] {
        for &n in &[1, 8] {
            let map = Tensor::full(vec![1, 3, 1, xs.len()], alpha);
            let shared = CurveParamMaps::new(map, n, true)?;
            let out = apply_curves_shared(&img, &shared)?;
            let row: Vec<String> = out.data()[..xs.len()].iter().map(|v| format!("{v:.3}")).collect();
            println!("alpha {alpha:+.1} n={n}: {}", row.join(" "));
        }
    }

    let shared = CurveParamMaps::new(Tensor::full(vec![1, 3, 1, xs.len()], 0.7), 8, true)?;
    let a = apply_curves_shared(&img, &shared)?;
    let b = apply_curves(&img, &shared.tiled()?)?;
    println!("shared == tiled: {}", a == b);
    Ok(())
}
