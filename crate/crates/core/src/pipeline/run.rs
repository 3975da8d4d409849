use std::time::Instant;

use crate::error::{ensure, Error, Result};
use crate::featex::{
    apply_projection, extract, pvgfe_fuse, ExtractorSpec, FeatureGrid, FusionProjections, Projection,
};
use crate::localattn::{local_attention, LocalAttention, RingBuffer};
use crate::membank::{MemoryBank, Origin, ReadoutResult, UsageSource};
use crate::metrics::{summarize, FrameTelemetry, Report, Telemetry};
use crate::render::{decode_lowres, upsample_ab, LabFrame, Plane};
use crate::Real;

use super::config::{Mode, PipelineConfig, ProjectionMode, ValueMode};

/// Provenance of one bank column at readout time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnTag {
    pub origin: Origin,
    pub born_at: usize,
    pub slot: usize,
}

/// Everything produced while processing one frame.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub frame_index: usize,
    /// Input luminance with the predicted chrominance.
    pub frame: LabFrame,
    /// Clamped head output at feature resolution.
    pub lowres_ab: FeatureGrid,
    pub readout: ReadoutResult,
    pub local: LocalAttention,
    /// Bank columns seen by the readout, when `keep_affinity` is set.
    pub columns: Option<Vec<ColumnTag>>,
    pub telemetry: FrameTelemetry,
}

/// Streaming colorizer: holds the memory bank and the local-attention
/// buffer, and processes one grayscale frame per [`step`](Self::step).
#[derive(Debug, Clone)]
pub struct Propagator {
    cfg: PipelineConfig,
    width: usize,
    height: usize,
    padded: (usize, usize),
    fusion: FusionProjections,
    alpha: Real,
    key_proj: Projection,
    key_gain: Real,
    beta: Real,
    bank: MemoryBank,
    ring: RingBuffer,
    telemetry: Telemetry,
    next_frame: usize,
}

impl Propagator {
    /// Builds the bank from a color exemplar.
    pub fn new(exemplar: &LabFrame, cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let [ea, eb] = exemplar
            .ab()
            .ok_or_else(|| Error::contract("exemplar must be a color frame"))?;
        let (width, height) = (exemplar.width(), exemplar.height());
        let stride = cfg.stride();
        ensure!(
            width >= stride && height >= stride,
            "frame {width}x{height} is smaller than stride {stride}"
        );
        let padded = (width.div_ceil(stride) * stride, height.div_ceil(stride) * stride);
        let l = exemplar.luminance().pad_edge(padded.0, padded.1);
        let local = extract(&[&l], &cfg.extractor, 0)?;
        let global = match &cfg.global_extractor {
            Some(g) => extract(&[&l], g, 0)?,
            None => local.clone(),
        };
        let c = local.channels();
        let (fusion, key_proj, key_gain) = match cfg.projections {
            ProjectionMode::Analytic => (
                FusionProjections::identity(),
                Projection::scaled_identity(c, cfg.key_scale),
                1.0,
            ),
            ProjectionMode::Stress => {
                ensure!(
                    global.channels() == c,
                    "stress projections need equal global ({}) and local ({c}) channel counts",
                    global.channels()
                );
                let s = cfg.seed.wrapping_mul(4);
                (
                    FusionProjections {
                        query: Projection::random_orthogonal(c, s),
                        key: Projection::random_orthogonal(c, s + 1),
                        value: Projection::random_orthogonal(c, s + 2),
                    },
                    Projection::random_conv3x3(c, s + 3),
                    cfg.key_scale,
                )
            }
        };
        let alpha = cfg.alpha.unwrap_or((c as Real).sqrt());
        let fused = pvgfe_fuse(&global, &local, &fusion, alpha)?;
        let k_r = embed_with(&key_proj, key_gain, &fused)?;
        let a = ea.pad_edge(padded.0, padded.1);
        let b = eb.pad_edge(padded.0, padded.1);
        let v_r = encode_values(cfg, &a, &b, None, 0)?;
        Ok(Self {
            cfg: cfg.clone(),
            width,
            height,
            padded,
            fusion,
            alpha,
            key_proj,
            key_gain,
            beta: cfg.beta.unwrap_or((k_r.channels() as Real).sqrt()),
            ring: RingBuffer::new(cfg.d, v_r.channels())?,
            bank: MemoryBank::init_with_exemplar(&k_r, &v_r, cfg.bank_config())?,
            telemetry: Telemetry::default(),
            next_frame: 1,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn bank(&self) -> &MemoryBank {
        &self.bank
    }

    pub fn ring(&self) -> &RingBuffer {
        &self.ring
    }

    pub fn telemetry(&self) -> &Telemetry {
        &self.telemetry
    }

    pub fn into_telemetry(self) -> Telemetry {
        self.telemetry
    }

    /// Index the next call to [`step`](Self::step) will assign (1-based).
    pub fn next_frame(&self) -> usize {
        self.next_frame
    }

    /// Fusion temperature in use.
    pub fn alpha(&self) -> Real {
        self.alpha
    }

    /// Local-attention temperature in use.
    pub fn beta(&self) -> Real {
        self.beta
    }

    /// Frame size after padding to a multiple of the stride, `(width, height)`.
    pub fn padded_dims(&self) -> (usize, usize) {
        self.padded
    }

    /// Fused features of a padded luminance plane.
    pub fn features(&self, l: &Plane, idx: usize) -> Result<FeatureGrid> {
        let local = extract(&[l], &self.cfg.extractor, idx)?;
        let global = match &self.cfg.global_extractor {
            Some(g) => extract(&[l], g, idx)?,
            None => local.clone(),
        };
        pvgfe_fuse(&global, &local, &self.fusion, self.alpha)
    }

    /// Key/query embedding of fused features.
    pub fn embed(&self, f: &FeatureGrid) -> Result<FeatureGrid> {
        embed_with(&self.key_proj, self.key_gain, f)
    }

    /// Colorizes the next frame (only its luminance is used) and feeds the
    /// prediction back into the bank and the local-attention buffer.
    pub fn step(&mut self, frame: &LabFrame) -> Result<StepOutput> {
        let i = self.next_frame;
        self.step_inner(frame, i).map_err(|e| e.at_frame(i))
    }

    fn step_inner(&mut self, frame: &LabFrame, i: usize) -> Result<StepOutput> {
        ensure!(
            (frame.width(), frame.height()) == (self.width, self.height),
            "frame is {}x{}, exemplar is {}x{}",
            frame.width(),
            frame.height(),
            self.width,
            self.height
        );
        let (pw, ph) = self.padded;
        let l = frame.luminance().pad_edge(pw, ph);
        let q = self.embed(&self.features(&l, i)?)?;

        let counts = self.bank.column_count();
        let columns = self.cfg.keep_affinity.then(|| {
            (0..self.bank.len())
                .map(|n| ColumnTag {
                    origin: self.bank.origins()[n],
                    born_at: self.bank.born_at()[n],
                    slot: self.bank.slots()[n],
                })
                .collect()
        });
        let start = Instant::now();
        let readout = self.bank.readout(&q, self.cfg.keep_affinity)?;
        let readout_seconds = start.elapsed().as_secs_f64();

        let local = local_attention(&q, &self.ring, self.cfg.lambda, self.beta)?;
        // V alone on a cold start, otherwise the mean of V and L.
        let gain = if local.cold_start { 1.0 } else { 0.5 };
        let head = Projection::select_first(self.bank.value_channels(), 2, gain)?;
        let low = decode_lowres(&readout.value_grid, &local.grid, &head)?;
        let [a, b] = upsample_ab(&low, (ph, pw))?;
        let values = encode_values(&self.cfg, &a, &b, Some(&low), i)?;

        let mass = (self.cfg.usage_source == UsageSource::Readout).then_some(readout.column_mass.as_slice());
        let observed = self.bank.observe_frame(&q, &values, i, mass)?;
        self.ring.push(q, values, i)?;
        self.next_frame += 1;

        let telemetry = FrameTelemetry {
            frame: i,
            shortterm: counts.shortterm,
            longterm: counts.longterm,
            exemplar: counts.exemplar,
            total: counts.total,
            resident_peak: counts.total.max(observed.columns_after_insert),
            compacted: observed.compaction.is_some(),
            readout_seconds,
        };
        self.telemetry.push(telemetry.clone());
        let out = LabFrame::color(
            frame.luminance().clone(),
            a.crop(self.width, self.height),
            b.crop(self.width, self.height),
        )?;
        Ok(StepOutput {
            frame_index: i,
            frame: out,
            lowres_ab: low,
            readout,
            local,
            columns,
            telemetry,
        })
    }
}

fn embed_with(proj: &Projection, gain: Real, f: &FeatureGrid) -> Result<FeatureGrid> {
    let k = apply_projection(f, proj)?;
    Ok(if gain == 1.0 { k } else { k.map(|x| x * gain) })
}

/// Value features of padded full-resolution chrominance; in identity mode a
/// predicted frame reuses its feature-resolution head output.
fn encode_values(
    cfg: &PipelineConfig,
    a: &Plane,
    b: &Plane,
    lowres: Option<&FeatureGrid>,
    idx: usize,
) -> Result<FeatureGrid> {
    let stride = cfg.stride();
    match cfg.value_mode {
        ValueMode::IdentityAb => match lowres {
            Some(g) => Ok(g.clone()),
            None => FeatureGrid::from_planes(&[a.cell_mean(stride)?, b.cell_mean(stride)?]),
        },
        ValueMode::Extractor => extract(
            &[a, b],
            &ExtractorSpec::Synthetic {
                stride,
                channels: cfg.value_channels,
            },
            idx,
        ),
    }
}

/// Output of a whole-sequence run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub frames: Vec<LabFrame>,
    pub telemetry: Telemetry,
    pub report: Report,
}

/// Colorizes `frames` from `exemplar` with the memory selected by `cfg.mode`.
pub fn colorize_sequence(frames: &[LabFrame], exemplar: &LabFrame, cfg: &PipelineConfig) -> Result<RunResult> {
    ensure!(!frames.is_empty(), "no frames to colorize");
    let mut prop = Propagator::new(exemplar, cfg)?;
    let mut out = Vec::with_capacity(frames.len());
    for f in frames {
        out.push(prop.step(f)?.frame);
    }
    let telemetry = prop.into_telemetry();
    Ok(RunResult {
        frames: out,
        report: summarize(&telemetry),
        telemetry,
    })
}

/// Runs a stacking or recurrent baseline; every other stage matches
/// [`colorize_sequence`].
pub fn run_baseline(frames: &[LabFrame], exemplar: &LabFrame, cfg: &PipelineConfig) -> Result<RunResult> {
    ensure!(
        cfg.mode != Mode::Mfp,
        "run_baseline expects mode stacking or recurrent"
    );
    colorize_sequence(frames, exemplar, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::synth::{synth_video, SynthKind, SynthSpec};

    fn cfg() -> PipelineConfig {
        PipelineConfig {
            m: 16,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn constant_exemplar_gives_constant_ab() {
        let video = synth_video(&SynthSpec::new(SynthKind::Translate, 6, 64, 48)).unwrap();
        let l = video.exemplar.luminance().clone();
        let (w, h) = (l.width(), l.height());
        let ex = LabFrame::color(l, Plane::filled(w, h, 12.5), Plane::filled(w, h, -40.0)).unwrap();
        let run = colorize_sequence(&video.gray, &ex, &cfg()).unwrap();
        for f in &run.frames {
            let [a, b] = f.ab().unwrap();
            assert!(a.as_slice().iter().all(|&v| (v - 12.5).abs() < crate::tol(1e-9)));
            assert!(b.as_slice().iter().all(|&v| (v + 40.0).abs() < crate::tol(1e-9)));
        }
        assert_eq!(run.telemetry.len(), 6);
    }

    #[test]
    fn dimension_drift_reports_frame() {
        let video = synth_video(&SynthSpec::new(SynthKind::Static, 3, 32, 32)).unwrap();
        let mut frames = video.gray.clone();
        frames[2] = LabFrame::gray(Plane::filled(48, 32, 50.0));
        match colorize_sequence(&frames, &video.exemplar, &cfg()) {
            Err(Error::Frame { frame: 3, .. }) => {}
            other => panic!("expected a frame-3 error, got {other:?}"),
        }
    }

    #[test]
    fn gray_exemplar_rejected() {
        let video = synth_video(&SynthSpec::new(SynthKind::Static, 1, 32, 32)).unwrap();
        assert!(Propagator::new(&video.gray[0], &cfg()).is_err());
    }

    #[test]
    fn baseline_rejects_mfp() {
        let video = synth_video(&SynthSpec::new(SynthKind::Static, 1, 32, 32)).unwrap();
        assert!(run_baseline(&video.gray, &video.exemplar, &cfg()).is_err());
    }

    #[test]
    fn unaligned_frames_are_padded_and_cropped() {
        let video = synth_video(&SynthSpec::new(SynthKind::Static, 2, 48, 48)).unwrap();
        let crop = |f: &LabFrame| {
            let [a, b] = f.ab().unwrap();
            LabFrame::color(f.luminance().crop(40, 36), a.crop(40, 36), b.crop(40, 36)).unwrap()
        };
        let ex = crop(&video.exemplar);
        let frames: Vec<_> = video.color.iter().map(|f| crop(f).to_gray()).collect();
        let run = colorize_sequence(&frames, &ex, &cfg()).unwrap();
        assert_eq!((run.frames[1].width(), run.frames[1].height()), (40, 36));
    }

    #[test]
    fn stress_projections_run() {
        let video = synth_video(&SynthSpec::new(SynthKind::Translate, 4, 64, 64)).unwrap();
        let c = PipelineConfig {
            projections: ProjectionMode::Stress,
            value_mode: ValueMode::Extractor,
            seed: 3,
            ..cfg()
        };
        let a = colorize_sequence(&video.gray, &video.exemplar, &c).unwrap();
        let b = colorize_sequence(&video.gray, &video.exemplar, &c).unwrap();
        assert_eq!(a.frames, b.frames);
    }
}
