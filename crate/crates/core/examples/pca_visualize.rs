//! Renders a feature map as an RGB image from its top three principal
//! components (and one raw channel), written as binary PPM.
//!
//!     cargo run --example pca_visualize -- [output-dir]

use std::path::PathBuf;

use resfu::visualize::{visualize, VisualizeMode};
use resfu::FeatureMap;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let (h, w, c) = (96, 128, 16);
    // Three spatial patterns mixed into 16 channels.
    let map = FeatureMap::from_fn(h, w, c, |i, j, ch| {
        let (y, x) = (i as f32 / h as f32, j as f32 / w as f32);
        let rings = ((x - 0.5).hypot(y - 0.5) * 20.0).sin();
        let ramp = x - y;
        let blob = (-((x - 0.3).powi(2) + (y - 0.6).powi(2)) * 30.0).exp();
        let ch = ch as f32;
        (ch * 0.7).cos() * rings + (ch * 0.3).sin() * ramp + 0.05 * ch * blob
    });

    let pca = dir.join("features_pca.ppm");
    std::fs::write(&pca, visualize(&map, VisualizeMode::Pca)?)?;
    let single = dir.join("features_channel3.ppm");
    std::fs::write(&single, visualize(&map, VisualizeMode::Channel(3))?)?;
    println!("wrote {} and {}", pca.display(), single.display());
    Ok(())
}
