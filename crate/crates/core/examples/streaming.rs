//! Frame-by-frame streaming with a [`Propagator`]: memory stays bounded
//! while the video grows.
//!
//! ```bash
//! cargo run --release --example streaming
//! ```

use chromaprop::pipeline::{PipelineConfig, Propagator, SynthKind, SynthSpec, SynthVideo};

fn main() -> anyhow::Result<()> {
    let frames = 80;
    let video = SynthVideo::new(SynthSpec::new(SynthKind::Translate, frames, 128, 96))?;
    let cfg = PipelineConfig {
        key_scale: 10.0,
        ..PipelineConfig::default()
    };
    let mut prop = Propagator::new(&video.exemplar(), &cfg)?;
    println!("grid {:?}, α = {:.3}, β = {:.3}", prop.bank().grid_dims(), prop.alpha(), prop.beta());
    println!("frame  columns  compacted  readout µs");
    for t in 1..=frames {
        // Frames are rendered on demand; only the propagator state is kept.
        let out = prop.step(&video.gray(t))?;
        let tm = &out.telemetry;
        if t % 5 == 0 || tm.compacted {
            println!(
                "{t:5}  {:7}  {:9}  {:10.1}",
                tm.total,
                tm.compacted,
                tm.readout_seconds * 1e6
            );
        }
    }
    let counts = prop.bank().column_count();
    println!(
        "final bank: {} exemplar + {} long-term + {} short-term columns",
        counts.exemplar, counts.longterm, counts.shortterm
    );
    Ok(())
}
