//! Deterministic synthetic videos with known ground truth.
//!
//! The canvas is a torus of `stride × stride` cells. Every cell holds a
//! luminance ramp `L = 50 + r·(cos θ·(x − c) + sin θ·(y − c))` around its
//! center `c` and a constant chrominance `20·(cos φ, sin φ)`. The angles
//! `θ` and `φ` are evenly spaced and assigned to cells by seeded
//! permutations, so every cell has features of the same norm pointing in a
//! different direction.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Error, Result};
use crate::render::{LabFrame, Plane};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    /// The pattern moves right by `offset` pixels per frame, wrapping around.
    Translate,
    /// Static luminance; every cell's hue rotates a little each frame.
    RotatePalette,
    /// Every frame equals the first.
    Static,
}

impl FromStr for SynthKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "translate" => Ok(SynthKind::Translate),
            "rotate_palette" => Ok(SynthKind::RotatePalette),
            "static" => Ok(SynthKind::Static),
            other => Err(Error::Config(format!(
                "unknown synthetic video kind {other:?} (expected translate, rotate_palette or static)"
            ))),
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthKind::Translate => "translate",
            SynthKind::RotatePalette => "rotate_palette",
            SynthKind::Static => "static",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub stride: usize,
    /// Horizontal motion per frame in pixels (translate only).
    pub offset: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(kind: SynthKind, frames: usize, width: usize, height: usize) -> Self {
        Self {
            kind,
            frames,
            width,
            height,
            stride: 16,
            offset: 16,
            seed: 0,
        }
    }
}

/// Hue change per frame of [`SynthKind::RotatePalette`], in radians.
pub const PALETTE_STEP: f64 = 0.1;
const CHROMA: f64 = 20.0;
const MID_L: f64 = 50.0;

/// A lazily rendered synthetic video; frames are 1-indexed.
#[derive(Debug, Clone)]
pub struct SynthVideo {
    spec: SynthSpec,
    cols: usize,
    theta: Vec<f64>,
    phi: Vec<f64>,
    ramp: f64,
}

impl SynthVideo {
    pub fn new(spec: SynthSpec) -> Result<Self> {
        let s = spec.stride;
        ensure!(s >= 1, "stride must be positive");
        ensure!(
            spec.width >= s && spec.height >= s && spec.width.is_multiple_of(s) && spec.height.is_multiple_of(s),
            "synthetic video size {}x{} must be a positive multiple of stride {s}",
            spec.width,
            spec.height
        );
        ensure!(spec.frames >= 1, "synthetic video needs at least one frame");
        let (cols, rows) = (spec.width / s, spec.height / s);
        let n = cols * rows;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let angles = |rng: &mut ChaCha8Rng| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(rng);
            idx.into_iter().map(|k| TAU * k as f64 / n as f64).collect::<Vec<_>>()
        };
        let theta = angles(&mut rng);
        let phi = angles(&mut rng);
        let c = (s as f64 - 1.0) / 2.0;
        // Keeps L within [30, 70], where chroma 20 is inside the sRGB gamut
        // for every hue, so frames survive an 8-bit RGB round trip.
        let ramp = if s > 1 { 14.0 / c } else { 0.0 };
        Ok(Self {
            spec,
            cols,
            theta,
            phi,
            ramp,
        })
    }

    pub fn spec(&self) -> &SynthSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.spec.frames
    }

    pub fn is_empty(&self) -> bool {
        self.spec.frames == 0
    }

    fn shift(&self, t: usize) -> usize {
        match self.spec.kind {
            SynthKind::Translate => ((t - 1) * self.spec.offset) % self.spec.width,
            _ => 0,
        }
    }

    /// Pattern cell index shown at grid cell `(cx, cy)` of frame `t`, when
    /// the motion is a whole number of cells per frame.
    pub fn content_cell(&self, t: usize, cx: usize, cy: usize) -> Option<usize> {
        let shift = self.shift(t);
        shift.is_multiple_of(self.spec.stride).then(|| {
            let gw = self.cols;
            cy * gw + (cx + gw - shift / self.spec.stride) % gw
        })
    }

    /// Color frame `t` (1-based).
    pub fn frame(&self, t: usize) -> LabFrame {
        assert!(t >= 1, "synthetic frames are 1-indexed");
        let s = self.spec.stride;
        let (w, h) = (self.spec.width, self.spec.height);
        let shift = self.shift(t);
        let hue_step = match self.spec.kind {
            SynthKind::RotatePalette => PALETTE_STEP * (t - 1) as f64,
            _ => 0.0,
        };
        let c = (s as f64 - 1.0) / 2.0;
        let src = |x: usize, y: usize| {
            let px = (x + w - shift) % w;
            let cell = (y / s) * self.cols + px / s;
            (cell, (px % s) as f64 - c, (y % s) as f64 - c)
        };
        let l = Plane::from_fn(w, h, |x, y| {
            let (cell, u, v) = src(x, y);
            let th = self.theta[cell];
            (MID_L + self.ramp * (th.cos() * u + th.sin() * v)) as Real
        });
        let a = Plane::from_fn(w, h, |x, y| {
            (CHROMA * (self.phi[src(x, y).0] + hue_step).cos()) as Real
        });
        let b = Plane::from_fn(w, h, |x, y| {
            (CHROMA * (self.phi[src(x, y).0] + hue_step).sin()) as Real
        });
        LabFrame::color(l, a, b).expect("planes share a size")
    }

    pub fn gray(&self, t: usize) -> LabFrame {
        self.frame(t).to_gray()
    }

    /// The first frame in color.
    pub fn exemplar(&self) -> LabFrame {
        self.frame(1)
    }
}

/// A fully rendered synthetic video.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub gray: Vec<LabFrame>,
    pub color: Vec<LabFrame>,
    pub exemplar: LabFrame,
}

pub fn synth_video(spec: &SynthSpec) -> Result<SynthOutput> {
    let video = SynthVideo::new(spec.clone())?;
    let color: Vec<LabFrame> = (1..=spec.frames).map(|t| video.frame(t)).collect();
    Ok(SynthOutput {
        gray: color.iter().map(LabFrame::to_gray).collect(),
        exemplar: color[0].clone(),
        color,
    })
}
