use super::GrayImage;

/// Z-score by the image's own mean and standard deviation, clamp to ±3σ, then map
/// `[-3, 3]` affinely onto `[0, 1]`. A zero-variance image maps to 0.5 everywhere.
pub fn energy_normalize(img: &GrayImage) -> GrayImage {
    let vals = img.values();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let std = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let out: Vec<f32> = if std == 0.0 {
        vec![0.5; vals.len()]
    } else {
        vals.iter().map(|v| (((v - mean) / std).clamp(-3.0, 3.0) + 3.0) as f32 / 6.0).collect()
    };
    GrayImage::from_unit(img.width(), img.height(), out).expect("values clamped to [0, 1]")
}
