//! Quality metrics (PSNR, CDC) and per-frame run telemetry.

use std::fmt::Write as _;
use std::ops::RangeInclusive;

use image::RgbImage;
use serde::Serialize;

use crate::error::{ensure, Result};
use crate::render::Plane;
use crate::Real;

/// PSNR over all RGB channels with peak 255. Identical images give `+∞`.
pub fn psnr(pred: &RgbImage, gt: &RgbImage) -> Result<Real> {
    ensure!(
        pred.dimensions() == gt.dimensions(),
        "psnr: {:?} vs {:?}",
        pred.dimensions(),
        gt.dimensions()
    );
    let n = pred.as_raw().len();
    ensure!(n > 0, "psnr of empty images");
    let sse: Real = pred
        .as_raw()
        .iter()
        .zip(gt.as_raw())
        .map(|(&a, &b)| {
            let d = a as Real - b as Real;
            d * d
        })
        .sum();
    Ok(psnr_from_mse(sse / n as Real, 255.0))
}

/// PSNR between sets of equally sized planes with the given peak value.
pub fn psnr_planes(pred: &[Plane], gt: &[Plane], peak: Real) -> Result<Real> {
    ensure!(
        pred.len() == gt.len() && !pred.is_empty(),
        "psnr_planes: {} vs {} planes",
        pred.len(),
        gt.len()
    );
    let mut sse = 0.0;
    let mut n = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        ensure!(
            (p.width(), p.height()) == (g.width(), g.height()),
            "psnr_planes: plane sizes differ"
        );
        sse += p
            .as_slice()
            .iter()
            .zip(g.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<Real>();
        n += p.as_slice().len();
    }
    Ok(psnr_from_mse(sse / n as Real, peak))
}

pub fn psnr_from_mse(mse: Real, peak: Real) -> Real {
    if mse == 0.0 {
        Real::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// Frame strides compared by [`cdc`].
pub const CDC_STRIDES: [usize; 3] = [1, 2, 4];

/// Color distribution consistency: for each stride `t` in [`CDC_STRIDES`],
/// the mean Jensen–Shannon divergence (base 2) between the 256-bin
/// normalized histograms of frames `k` and `k + t`, over all such pairs and
/// the three RGB channels; the result is the mean over strides. Lower is
/// more consistent.
pub fn cdc(frames: &[RgbImage]) -> Result<Real> {
    ensure!(frames.len() >= 5, "cdc needs at least 5 frames, got {}", frames.len());
    let dims = frames[0].dimensions();
    ensure!(
        frames.iter().all(|f| f.dimensions() == dims),
        "cdc: frame sizes differ"
    );
    let hists: Vec<[[Real; 256]; 3]> = frames.iter().map(histograms).collect();
    let mut total = 0.0;
    for t in CDC_STRIDES {
        let mut sum = 0.0;
        let pairs = frames.len() - t;
        for k in 0..pairs {
            for (a, b) in hists[k].iter().zip(&hists[k + t]) {
                sum += js_divergence(a, b);
            }
        }
        total += sum / (3 * pairs) as Real;
    }
    Ok(total / CDC_STRIDES.len() as Real)
}

fn histograms(img: &RgbImage) -> [[Real; 256]; 3] {
    let mut h = [[0.0; 256]; 3];
    for px in img.pixels() {
        for c in 0..3 {
            h[c][px.0[c] as usize] += 1.0;
        }
    }
    let n = (img.width() * img.height()).max(1) as Real;
    for ch in &mut h {
        ch.iter_mut().for_each(|v| *v /= n);
    }
    h
}

/// Jensen–Shannon divergence in bits between two distributions.
pub fn js_divergence(p: &[Real], q: &[Real]) -> Real {
    let kl = |a: Real, m: Real| if a > 0.0 { a * (a / m).log2() } else { 0.0 };
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            let m = 0.5 * (a + b);
            0.5 * kl(a, m) + 0.5 * kl(b, m)
        })
        .sum::<Real>()
        .max(0.0)
}

/// Bank state and timing for one processed frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameTelemetry {
    pub frame: usize,
    /// Columns attended at readout, split by origin.
    pub shortterm: usize,
    pub longterm: usize,
    pub exemplar: usize,
    pub total: usize,
    /// Largest column count held while processing this frame, including the
    /// moment between insertion and compaction.
    pub resident_peak: usize,
    pub compacted: bool,
    pub readout_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Telemetry {
    pub frames: Vec<FrameTelemetry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub max: f64,
    pub mean: f64,
}

impl Stat {
    fn of(values: impl Iterator<Item = f64>) -> Option<Stat> {
        let (mut max, mut sum, mut n) = (f64::NEG_INFINITY, 0.0, 0usize);
        for v in values {
            max = max.max(v);
            sum += v;
            n += 1;
        }
        (n > 0).then(|| Stat {
            max,
            mean: sum / n as f64,
        })
    }
}

/// Aggregates of a [`Telemetry`] record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub frames: usize,
    pub columns: Option<Stat>,
    pub peak_resident: Option<usize>,
    pub compactions: usize,
    pub readout_seconds: Option<Stat>,
}

impl Telemetry {
    pub fn push(&mut self, f: FrameTelemetry) {
        self.frames.push(f);
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Mean readout time over the 1-based frame range, if any frame falls in it.
    pub fn mean_readout_seconds(&self, frames: RangeInclusive<usize>) -> Option<f64> {
        Stat::of(
            self.frames
                .iter()
                .filter(|f| frames.contains(&f.frame))
                .map(|f| f.readout_seconds),
        )
        .map(|s| s.mean)
    }

    /// JSON of the column counts only (no timings), so it is reproducible
    /// across runs.
    pub fn counts_json(&self) -> String {
        let rows: Vec<_> = self
            .frames
            .iter()
            .map(|f| {
                serde_json::json!({
                    "frame": f.frame,
                    "shortterm": f.shortterm,
                    "longterm": f.longterm,
                    "exemplar": f.exemplar,
                    "total": f.total,
                    "resident_peak": f.resident_peak,
                    "compacted": f.compacted,
                })
            })
            .collect();
        serde_json::to_string_pretty(&rows).expect("serializable") + "\n"
    }

    /// JSON of per-frame readout times in seconds.
    pub fn timing_json(&self) -> String {
        let rows: Vec<_> = self
            .frames
            .iter()
            .map(|f| serde_json::json!({ "frame": f.frame, "readout_seconds": f.readout_seconds }))
            .collect();
        serde_json::to_string_pretty(&rows).expect("serializable") + "\n"
    }
}

pub fn summarize(t: &Telemetry) -> Report {
    Report {
        frames: t.frames.len(),
        columns: Stat::of(t.frames.iter().map(|f| f.total as f64)),
        peak_resident: t.frames.iter().map(|f| f.resident_peak).max(),
        compactions: t.frames.iter().filter(|f| f.compacted).count(),
        readout_seconds: Stat::of(t.frames.iter().map(|f| f.readout_seconds)),
    }
}

impl Report {
    /// One `key=value` pair per line.
    pub fn to_kv(&self) -> String {
        let mut s = format!("frames={}\n", self.frames);
        if let Some(c) = self.columns {
            writeln!(s, "columns_max={}", c.max).unwrap();
            writeln!(s, "columns_mean={:.3}", c.mean).unwrap();
        }
        if let Some(p) = self.peak_resident {
            writeln!(s, "peak_resident={p}").unwrap();
            writeln!(s, "compactions={}", self.compactions).unwrap();
        }
        if let Some(r) = self.readout_seconds {
            writeln!(s, "readout_ms_max={:.3}", r.max * 1e3).unwrap();
            writeln!(s, "readout_ms_mean={:.3}", r.mean * 1e3).unwrap();
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable") + "\n"
    }
}
