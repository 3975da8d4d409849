//! Feature extraction and cross-channel fusion.
//!
//! Extracts a local stream from the luminance plane and a global stream from
//! a blurred copy, fuses them with identity and with seeded random orthogonal
//! projections, and round-trips a grid through the binary feature file
//! format.
//!
//! ```bash
//! cargo run --example fuse_features
//! ```

use chromaprop::featex::{
    extract, pvgfe_fuse, read_feature_file, write_feature_file, ExtractorSpec, FusionProjections, Projection,
};
use chromaprop::render::Plane;
use chromaprop::Real;

fn main() -> anyhow::Result<()> {
    let (w, h) = (96, 64);
    let l = Plane::from_fn(w, h, |x, y| {
        50.0 + 30.0 * ((x as Real) / 9.0).sin() * ((y as Real) / 13.0).cos()
    });
    let blurred = l.cell_mean(4)?;
    let blurred = Plane::from_fn(w, h, |x, y| blurred.get(x / 4, y / 4));

    let spec = ExtractorSpec::Synthetic { stride: 16, channels: 8 };
    let local = extract(&[&l], &spec, 1)?;
    let global = extract(&[&blurred], &spec, 1)?;
    let (gh, gw, c) = local.dims();
    println!("grid {gh}x{gw}, {c} channels per cell");
    println!("cell (0,0) local : {:?}", rounded(local.at(0, 0)));
    println!("cell (0,0) global: {:?}", rounded(global.at(0, 0)));

    // The channel affinity is C x C, so the cost is linear in the grid size.
    let alpha = (c as Real).sqrt();
    let fused = pvgfe_fuse(&global, &local, &FusionProjections::identity(), alpha)?;
    println!("fused (identity)  : {:?}", rounded(fused.at(0, 0)));

    let random = FusionProjections {
        query: Projection::random_orthogonal(c, 1),
        key: Projection::random_orthogonal(c, 2),
        value: Projection::random_orthogonal(c, 3),
    };
    let fused_r = pvgfe_fuse(&global, &local, &random, alpha)?;
    println!("fused (orthogonal): {:?}", rounded(fused_r.at(0, 0)));

    let dir = std::env::temp_dir().join("chromaprop-fuse-features");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("00001.feat");
    write_feature_file(&path, &fused, 1)?;
    let (back, idx) = read_feature_file(&path)?;
    println!(
        "round trip through {}: frame {idx}, max |diff| = {:?}",
        path.display(),
        back.max_abs_diff(&fused)
    );
    Ok(())
}

fn rounded(v: &[Real]) -> Vec<Real> {
    v.iter().map(|x| (x * 1000.0).round() / 1000.0).collect()
}
