//! CIE LAB conversions and the chrominance decode path: sRGB round trips,
//! splitting an image into luminance and chrominance, and bilinear
//! upsampling of a coarse ab grid.
//!
//! ```bash
//! cargo run --example lab_color
//! ```

use chromaprop::featex::FeatureGrid;
use chromaprop::render::{lab_to_rgb, lab_to_srgb8, rgb_to_lab, srgb8_to_lab, upsample_ab};
use image::{Rgb, RgbImage};

fn main() -> anyhow::Result<()> {
    for rgb in [[255, 0, 0], [0, 128, 255], [30, 200, 90], [128, 128, 128]] {
        let lab = srgb8_to_lab(rgb);
        println!(
            "{rgb:?} -> L {:6.2} a {:7.2} b {:7.2} -> {:?}",
            lab[0],
            lab[1],
            lab[2],
            lab_to_srgb8(lab)
        );
    }

    let img = RgbImage::from_fn(8, 8, |x, y| Rgb([(x * 32) as u8, (y * 32) as u8, 128]));
    let lab = rgb_to_lab(&img);
    let back = lab_to_rgb(&lab);
    let worst = img
        .pixels()
        .zip(back.pixels())
        .flat_map(|(p, q)| (0..3).map(move |c| p[c].abs_diff(q[c])))
        .max()
        .unwrap_or(0);
    println!("8x8 image round trip: worst channel error {worst}");
    println!("gray copy has chrominance: {}", lab.to_gray().is_color());

    // A 2x2 grid of (a, b) upsampled to 8x8 pixels with half-pixel centers.
    let coarse = FeatureGrid::new(2, 2, 2, vec![-40.0, 0.0, 40.0, 0.0, 0.0, -40.0, 0.0, 40.0])?;
    let [a, b] = upsample_ab(&coarse, (8, 8))?;
    for y in [0, 3, 4, 7] {
        let row: Vec<String> = (0..8).map(|x| format!("{:6.1}", a.get(x, y))).collect();
        println!("a row {y}: {}", row.join(""));
    }
    println!("b at corners: {:.1} {:.1}", b.get(0, 0), b.get(7, 7));
    Ok(())
}
