//! Memory and latency of the compacted bank against the stacking and
//! recurrent baselines on the same synthetic video.
//!
//! ```bash
//! cargo run --release --example baselines_bench [frames] [size]
//! ```

use chromaprop::pipeline::{bench, Mode, PipelineConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let frames: usize = args.next().map_or(Ok(60), |s| s.parse())?;
    let size: usize = args.next().map_or(Ok(224), |s| s.parse())?;
    let base = PipelineConfig {
        longterm_cap: 0,
        ..PipelineConfig::default()
    };
    println!("{frames} frames of {size}x{size}");
    println!("mode       peak cols  resident  compactions  mean ms  late/early");
    for mode in [Mode::Mfp, Mode::Stacking, Mode::Recurrent] {
        let r = bench(mode, frames, (size, size), &base)?;
        let ratio = r.latency_ratio.map_or("n/a".to_string(), |v| format!("{v:.2}"));
        println!(
            "{:9}  {:9}  {:8}  {:11}  {:7.3}  {ratio}",
            r.mode, r.peak_columns, r.peak_resident, r.compactions, r.mean_readout_ms
        );
    }
    Ok(())
}
