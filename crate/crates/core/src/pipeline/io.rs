//! Frame discovery and directory-level runs used by the command-line tool.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{ensure, Error, Result};
use crate::metrics::{cdc, psnr, summarize, Report};
use crate::render::{lab_to_rgb, read_luminance, read_rgb, rgb_to_lab, write_luminance, write_rgb};
use crate::Real;

use super::config::PipelineConfig;
use super::run::Propagator;
use super::synth::{SynthSpec, SynthVideo};

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "ppm", "pgm", "pnm"];

fn numeric_stem(p: &Path) -> Option<u64> {
    p.file_stem()?.to_str()?.parse().ok()
}

/// Lists input frames: a directory's image files with numeric names, or the
/// matches of a glob pattern. Frames are ordered by their numeric stem
/// (paths without one sort after, by name).
pub fn discover_frames(input: &str) -> Result<Vec<PathBuf>> {
    let dir = Path::new(input);
    let mut paths: Vec<PathBuf> = if dir.is_dir() {
        fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
                    && numeric_stem(p).is_some()
            })
            .collect()
    } else {
        glob::glob(input)
            .map_err(|e| Error::Config(format!("bad input pattern {input:?}: {e}")))?
            .filter_map(|r| r.ok())
            .filter(|p| p.is_file())
            .collect()
    };
    paths.sort_by(|a, b| {
        (numeric_stem(a).is_none(), numeric_stem(a), a).cmp(&(numeric_stem(b).is_none(), numeric_stem(b), b))
    });
    ensure!(!paths.is_empty(), "no input frames found at {input:?}");
    Ok(paths)
}

/// Name of output frame `i` (1-based).
pub fn frame_name(i: usize) -> String {
    format!("{i:05}.png")
}

/// What [`colorize_dir`] wrote.
#[derive(Debug, Clone)]
pub struct ColorizeSummary {
    pub frames: usize,
    pub report: Report,
}

/// Colorizes the frames found at `input`, streaming one frame at a time.
///
/// Writes `NNNNN.png` frames, `telemetry.json` (column counts only, so
/// repeated runs are byte-identical), `timing.json`, `report.txt` and the
/// effective `config.txt` into `out`. With `dump_bank`, the final memory
/// bank is written there as well.
pub fn colorize_dir(
    input: &str,
    exemplar: &Path,
    cfg: &PipelineConfig,
    out: &Path,
    dump_bank: Option<&Path>,
) -> Result<ColorizeSummary> {
    let paths = discover_frames(input)?;
    let exemplar = rgb_to_lab(&read_rgb(exemplar)?);
    let mut prop = Propagator::new(&exemplar, cfg)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for (n, path) in paths.iter().enumerate() {
        let frame = read_luminance(path).map_err(|e| e.at_frame(n + 1))?;
        let step = prop.step(&frame)?;
        write_rgb(&out.join(frame_name(step.frame_index)), &lab_to_rgb(&step.frame))?;
    }
    if let Some(dir) = dump_bank {
        prop.bank().dump(dir)?;
    }
    let telemetry = prop.telemetry();
    let report = summarize(telemetry);
    let write = |name: &str, text: String| {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| Error::io(p, e))
    };
    write("telemetry.json", telemetry.counts_json())?;
    write("timing.json", telemetry.timing_json())?;
    write("report.txt", report.to_kv())?;
    write("config.txt", cfg.to_text())?;
    Ok(ColorizeSummary {
        frames: paths.len(),
        report,
    })
}

/// Writes `gray/NNNNN.png`, `color/NNNNN.png` and `exemplar.png` into `out`.
pub fn write_synth(spec: &SynthSpec, out: &Path) -> Result<()> {
    let video = SynthVideo::new(spec.clone())?;
    let (gray, color) = (out.join("gray"), out.join("color"));
    for d in [&gray, &color] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for t in 1..=spec.frames {
        let f = video.frame(t);
        write_luminance(&gray.join(frame_name(t)), f.luminance())?;
        write_rgb(&color.join(frame_name(t)), &lab_to_rgb(&f))?;
    }
    write_rgb(&out.join("exemplar.png"), &lab_to_rgb(&video.exemplar()))
}

/// Quality of a predicted frame directory against ground truth.
#[derive(Debug, Clone, Serialize)]
pub struct QualityReport {
    pub frames: usize,
    /// Mean of per-frame PSNR over frames with finite PSNR; `None` if all
    /// frames are identical.
    pub psnr_mean: Option<f64>,
    pub psnr_min: f64,
    pub identical_frames: usize,
    pub cdc_pred: Option<f64>,
    pub cdc_gt: Option<f64>,
}

impl QualityReport {
    pub fn to_kv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.6}"));
        format!(
            "frames={}\npsnr_mean={}\npsnr_min={}\nidentical_frames={}\ncdc_pred={}\ncdc_gt={}\n",
            self.frames,
            opt(self.psnr_mean),
            if self.psnr_min.is_infinite() { "inf".to_string() } else { format!("{:.6}", self.psnr_min) },
            self.identical_frames,
            opt(self.cdc_pred),
            opt(self.cdc_gt)
        )
    }
}

/// Pairs frames of `pred` and `gt` in sorted order and reports PSNR and CDC
/// (CDC only with at least 5 frames).
// `Real` may be `f32`, so the `as f64` casts are not always no-ops.
#[allow(clippy::unnecessary_cast)]
pub fn compare_dirs(pred: &str, gt: &str) -> Result<QualityReport> {
    let p = discover_frames(pred)?;
    let g = discover_frames(gt)?;
    ensure!(
        p.len() == g.len(),
        "{} predicted frames but {} ground-truth frames",
        p.len(),
        g.len()
    );
    let mut preds = Vec::with_capacity(p.len());
    let mut gts = Vec::with_capacity(g.len());
    for (a, b) in p.iter().zip(&g) {
        preds.push(read_rgb(a)?);
        gts.push(read_rgb(b)?);
    }
    let scores: Vec<Real> = preds
        .iter()
        .zip(&gts)
        .enumerate()
        .map(|(n, (a, b))| psnr(a, b).map_err(|e| e.at_frame(n + 1)))
        .collect::<Result<_>>()?;
    let finite: Vec<f64> = scores.iter().filter(|s| s.is_finite()).map(|&s| s as f64).collect();
    let enough = preds.len() >= 5;
    Ok(QualityReport {
        frames: scores.len(),
        psnr_mean: (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64),
        psnr_min: scores.iter().map(|&s| s as f64).fold(f64::INFINITY, f64::min),
        identical_frames: scores.len() - finite.len(),
        cdc_pred: if enough { Some(cdc(&preds)? as f64) } else { None },
        cdc_gt: if enough { Some(cdc(&gts)? as f64) } else { None },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discovery_orders_numerically() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["10.png", "2.png", "0001.png", "notes.txt", "x.png"] {
            fs::write(dir.path().join(name), b"").unwrap();
        }
        let found = discover_frames(dir.path().to_str().unwrap()).unwrap();
        let names: Vec<_> = found.iter().map(|p| p.file_name().unwrap().to_str().unwrap()).collect();
        assert_eq!(names, ["0001.png", "2.png", "10.png"]);
        let pattern = format!("{}/*.png", dir.path().display());
        assert_eq!(discover_frames(&pattern).unwrap().len(), 4);
        assert!(discover_frames(&format!("{}/*.bmp", dir.path().display())).is_err());
    }
}
