//! Memory and latency benchmark over a streamed synthetic video.

use std::time::Instant;

use serde::Serialize;

use crate::error::{ensure, Result};
use crate::metrics::Telemetry;

use super::config::{Mode, PipelineConfig};
use super::run::Propagator;
use super::synth::{SynthKind, SynthSpec, SynthVideo};

/// Frames averaged for the early latency window.
pub const EARLY_WINDOW: std::ops::RangeInclusive<usize> = 10..=30;
/// The late latency window spans the last frame and this many before it.
pub const LATE_WINDOW_SPAN: usize = 20;

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub mode: String,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Most columns attended by one readout.
    pub peak_columns: usize,
    /// Most columns ever held, including right after an insertion.
    pub peak_resident: usize,
    pub compactions: usize,
    pub mean_readout_ms: f64,
    /// Mean readout time over frames 10..=30.
    pub early_readout_ms: Option<f64>,
    /// Mean readout time over frames `N−20..=N`.
    pub late_readout_ms: Option<f64>,
    pub latency_ratio: Option<f64>,
    pub total_seconds: f64,
    #[serde(skip)]
    pub telemetry: Telemetry,
}

impl BenchReport {
    pub fn to_kv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        format!(
            "mode={}\nframes={}\nsize={}x{}\npeak_columns={}\npeak_resident={}\ncompactions={}\n\
             mean_readout_ms={:.4}\nearly_readout_ms={}\nlate_readout_ms={}\nlatency_ratio={}\ntotal_seconds={:.3}\n",
            self.mode,
            self.frames,
            self.height,
            self.width,
            self.peak_columns,
            self.peak_resident,
            self.compactions,
            self.mean_readout_ms,
            opt(self.early_readout_ms),
            opt(self.late_readout_ms),
            opt(self.latency_ratio),
            self.total_seconds
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable") + "\n"
    }
}

/// Streams `frames` frames of a translating synthetic video of size
/// `(width, height)` through a propagator in `mode`, starting from `base`.
pub fn bench(mode: Mode, frames: usize, (width, height): (usize, usize), base: &PipelineConfig) -> Result<BenchReport> {
    ensure!(frames >= 1, "bench needs at least one frame");
    let cfg = PipelineConfig { mode, ..base.clone() };
    let spec = SynthSpec {
        stride: cfg.stride(),
        offset: cfg.stride(),
        seed: cfg.seed,
        ..SynthSpec::new(SynthKind::Translate, frames, width, height)
    };
    let video = SynthVideo::new(spec)?;
    let start = Instant::now();
    let mut prop = Propagator::new(&video.exemplar(), &cfg)?;
    for t in 1..=frames {
        prop.step(&video.gray(t))?;
    }
    let total_seconds = start.elapsed().as_secs_f64();
    let telemetry = prop.into_telemetry();
    let ms = |v: Option<f64>| v.map(|s| s * 1e3);
    let early = ms(telemetry.mean_readout_seconds(EARLY_WINDOW));
    let late = (frames > *EARLY_WINDOW.end())
        .then(|| ms(telemetry.mean_readout_seconds(frames - LATE_WINDOW_SPAN..=frames)))
        .flatten();
    let f = &telemetry.frames;
    Ok(BenchReport {
        mode: mode.to_string(),
        frames,
        width,
        height,
        peak_columns: f.iter().map(|r| r.total).max().unwrap_or(0),
        peak_resident: f.iter().map(|r| r.resident_peak).max().unwrap_or(0),
        compactions: f.iter().filter(|r| r.compacted).count(),
        mean_readout_ms: f.iter().map(|r| r.readout_seconds).sum::<f64>() * 1e3 / frames as f64,
        early_readout_ms: early,
        late_readout_ms: late,
        latency_ratio: early.zip(late).map(|(e, l)| l / e),
        total_seconds,
        telemetry,
    })
}
