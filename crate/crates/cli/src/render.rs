use std::io::Write;

use anyhow::Result;

/// RGB rendering of a probability grid: grey level for the probability,
/// red where it reaches `threshold`, black for nodata.
pub fn probability_png<W: Write>(w: W, values: &[f32], rows: usize, cols: usize, threshold: f64, nodata: f32) -> Result<()> {
    let mut enc = png::Encoder::new(w, cols as u32, rows as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    let mut data = Vec::with_capacity(rows * cols * 3);
    for &v in values {
        let px = if v == nodata || !v.is_finite() {
            [0, 0, 0]
        } else if v as f64 >= threshold {
            [220, 30, 30]
        } else {
            let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            [g, g, g]
        };
        data.extend_from_slice(&px);
    }
    writer.write_image_data(&data)?;
    writer.finish()?;
    Ok(())
}
