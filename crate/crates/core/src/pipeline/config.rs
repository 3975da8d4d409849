use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{ensure, Error, Result};
use crate::featex::ExtractorSpec;
use crate::membank::{BankConfig, UsageSource};
use crate::Real;

/// Which memory the propagator reads from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// γ-strided bank with usage-based compaction.
    Mfp,
    /// Exemplar plus every previous frame.
    Stacking,
    /// Exemplar plus the previous frame.
    Recurrent,
}

/// How chrominance is encoded into value features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueMode {
    /// Two channels: the cell-mean `a` and `b`.
    IdentityAb,
    /// Synthetic extractor statistics of the `a` and `b` planes, interleaved
    /// so the first two channels are still the cell means.
    Extractor,
}

/// How the embedding projections are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionMode {
    /// Identity fusion projections and a scaled-identity key embedding.
    Analytic,
    /// Seeded random orthogonal fusion projections and a seeded random 3×3
    /// key embedding.
    Stress,
}

macro_rules! keyword_enum {
    ($ty:ty, $what:literal, $($name:literal => $variant:expr),+ $(,)?) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", $what, " {:?} (expected one of: {})"),
                        other,
                        [$($name),+].join(", ")
                    ))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $variant {
                    return f.write_str($name);
                })+
                unreachable!()
            }
        }
    };
}

keyword_enum!(Mode, "mode", "mfp" => Mode::Mfp, "stacking" => Mode::Stacking, "recurrent" => Mode::Recurrent);
keyword_enum!(ValueMode, "value mode", "identity_ab" => ValueMode::IdentityAb, "extractor" => ValueMode::Extractor);
keyword_enum!(ProjectionMode, "projection mode", "analytic" => ProjectionMode::Analytic, "stress" => ProjectionMode::Stress);

/// Every tunable of a colorization run.
///
/// Defaults: γ=5, Nₑ=5, Nₛ=10, M=128, d=1, λ=7, stride 16, τ=1,
/// α=√Ĉ and β=√Ĉᵏ (when left as `None`).
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub gamma: usize,
    pub ne: usize,
    /// `None` disables compaction.
    pub ns: Option<usize>,
    pub m: usize,
    /// Frames kept for local attention.
    pub d: usize,
    /// Local attention window side, odd.
    pub lambda: usize,
    /// Fusion temperature; `None` means `√Ĉ`.
    pub alpha: Option<Real>,
    /// Local attention temperature; `None` means `√Ĉᵏ`.
    pub beta: Option<Real>,
    /// Readout and usage softmax temperature.
    pub tau: Real,
    /// Local feature stream (also used as the global stream unless
    /// `global_extractor` is set).
    pub extractor: ExtractorSpec,
    pub global_extractor: Option<ExtractorSpec>,
    pub value_mode: ValueMode,
    /// Value channels in [`ValueMode::Extractor`].
    pub value_channels: usize,
    pub mode: Mode,
    /// Long-term column cap; 0 disables it.
    pub longterm_cap: usize,
    pub seed: u64,
    /// Gain of the key/query embedding; larger values sharpen both softmaxes.
    pub key_scale: Real,
    pub projections: ProjectionMode,
    pub usage_source: UsageSource,
    /// `None` tracks usage only when compaction is enabled.
    pub track_usage: Option<bool>,
    /// Keep the full readout affinity and column provenance of every frame.
    pub keep_affinity: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            gamma: 5,
            ne: 5,
            ns: Some(10),
            m: 128,
            d: 1,
            lambda: 7,
            alpha: None,
            beta: None,
            tau: 1.0,
            extractor: ExtractorSpec::Synthetic {
                stride: 16,
                channels: 8,
            },
            global_extractor: None,
            value_mode: ValueMode::IdentityAb,
            value_channels: 4,
            mode: Mode::Mfp,
            longterm_cap: 4096,
            seed: 0,
            key_scale: 1.0,
            projections: ProjectionMode::Analytic,
            usage_source: UsageSource::Keys,
            track_usage: None,
            keep_affinity: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_auto(key: &str, value: &str) -> Result<Option<Real>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl PipelineConfig {
    pub fn stride(&self) -> usize {
        self.extractor.stride()
    }

    /// Sets one option by name, as used in config files and `--set k=v`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "gamma" => self.gamma = parse(key, value)?,
            "ne" => self.ne = parse(key, value)?,
            "ns" => {
                self.ns = match value {
                    "inf" | "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "m" => self.m = parse(key, value)?,
            "d" => self.d = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "alpha" => self.alpha = parse_auto(key, value)?,
            "beta" => self.beta = parse_auto(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "stride" => {
                let s = parse(key, value)?;
                match &mut self.extractor {
                    ExtractorSpec::Synthetic { stride, .. } | ExtractorSpec::File { stride, .. } => *stride = s,
                }
                if let Some(ExtractorSpec::File { stride, .. }) = &mut self.global_extractor {
                    *stride = s;
                }
            }
            "channels" => match &mut self.extractor {
                ExtractorSpec::Synthetic { channels, .. } => *channels = parse(key, value)?,
                ExtractorSpec::File { .. } => {
                    return Err(Error::Config("channels applies to the synthetic extractor only".into()))
                }
            },
            "extractor" => {
                let stride = self.stride();
                self.extractor = match value {
                    "synthetic" => ExtractorSpec::Synthetic { stride, channels: 8 },
                    "file" => ExtractorSpec::File {
                        template: String::new(),
                        stride,
                    },
                    other => return Err(Error::Config(format!("unknown extractor {other:?}"))),
                }
            }
            "feature_template" => {
                self.extractor = ExtractorSpec::File {
                    template: value.to_string(),
                    stride: self.stride(),
                }
            }
            "global_feature_template" => {
                self.global_extractor = match value {
                    "" | "none" => None,
                    t => Some(ExtractorSpec::File {
                        template: t.to_string(),
                        stride: self.stride(),
                    }),
                }
            }
            "value_mode" => self.value_mode = parse(key, value)?,
            "value_channels" => self.value_channels = parse(key, value)?,
            "mode" => self.mode = parse(key, value)?,
            "longterm_cap" => self.longterm_cap = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "key_scale" => self.key_scale = parse(key, value)?,
            "projections" => self.projections = parse(key, value)?,
            "usage_source" => {
                self.usage_source = match value {
                    "keys" => UsageSource::Keys,
                    "readout" => UsageSource::Readout,
                    other => return Err(Error::Config(format!("unknown usage source {other:?}"))),
                }
            }
            "track_usage" => {
                self.track_usage = match value {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "keep_affinity" => self.keep_affinity = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown option {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Checks everything that does not depend on the frame size.
    pub fn validate(&self) -> Result<()> {
        ensure!(self.gamma >= 1, "gamma must be at least 1");
        if let Some(ns) = self.ns {
            ensure!(
                self.ne >= 1 && self.ne < ns,
                "need 1 <= Ne < Ns, got Ne={} Ns={ns}",
                self.ne
            );
        }
        ensure!(self.d >= 1, "d must be at least 1");
        ensure!(self.lambda % 2 == 1, "lambda must be odd, got {}", self.lambda);
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if let Some(v) = v {
                ensure!(v > 0.0 && v.is_finite(), "{name} must be positive, got {v}");
            }
        }
        ensure!(self.tau > 0.0 && self.tau.is_finite(), "tau must be positive");
        ensure!(
            self.key_scale > 0.0 && self.key_scale.is_finite(),
            "key_scale must be positive"
        );
        self.extractor.validate()?;
        if let Some(g) = &self.global_extractor {
            g.validate()?;
            ensure!(
                g.stride() == self.stride(),
                "global and local extractors must share a stride"
            );
        }
        if self.value_mode == ValueMode::Extractor {
            ensure!(
                self.value_channels >= 2,
                "extractor value mode needs at least 2 value channels"
            );
        }
        Ok(())
    }

    /// Bank settings implied by the mode.
    pub fn bank_config(&self) -> BankConfig {
        let track = |compacting: bool| self.track_usage.unwrap_or(compacting);
        let base = BankConfig {
            tau: self.tau,
            usage_source: self.usage_source,
            ..BankConfig::default()
        };
        match self.mode {
            Mode::Mfp => BankConfig {
                gamma: self.gamma,
                ne: self.ne,
                ns: self.ns,
                m: self.m,
                longterm_cap: self.longterm_cap,
                track_usage: track(self.ns.is_some()),
                ..base
            },
            Mode::Stacking => BankConfig {
                track_usage: track(false),
                ..BankConfig { tau: self.tau, usage_source: self.usage_source, ..BankConfig::stacking() }
            },
            Mode::Recurrent => BankConfig {
                track_usage: track(false),
                ..BankConfig { tau: self.tau, usage_source: self.usage_source, ..BankConfig::recurrent() }
            },
        }
    }

    /// The effective settings as `key = value` lines (re-readable by
    /// [`apply_text`](Self::apply_text)).
    pub fn to_text(&self) -> String {
        let auto = |v: Option<Real>| v.map_or("auto".to_string(), |v| v.to_string());
        let mut lines = vec![
            format!("mode = {}", self.mode),
            format!("gamma = {}", self.gamma),
            format!("ne = {}", self.ne),
            format!("ns = {}", self.ns.map_or("inf".to_string(), |v| v.to_string())),
            format!("m = {}", self.m),
            format!("d = {}", self.d),
            format!("lambda = {}", self.lambda),
            format!("alpha = {}", auto(self.alpha)),
            format!("beta = {}", auto(self.beta)),
            format!("tau = {}", self.tau),
        ];
        match &self.extractor {
            ExtractorSpec::Synthetic { stride, channels } => {
                lines.push(format!("stride = {stride}"));
                lines.push(format!("channels = {channels}"));
            }
            ExtractorSpec::File { template, stride } => {
                lines.push(format!("feature_template = {template}"));
                lines.push(format!("stride = {stride}"));
            }
        }
        if let Some(ExtractorSpec::File { template, .. }) = &self.global_extractor {
            lines.push(format!("global_feature_template = {template}"));
        }
        lines.extend([
            format!("value_mode = {}", self.value_mode),
            format!("value_channels = {}", self.value_channels),
            format!("longterm_cap = {}", self.longterm_cap),
            format!("seed = {}", self.seed),
            format!("key_scale = {}", self.key_scale),
            format!("projections = {}", self.projections),
            format!(
                "usage_source = {}",
                match self.usage_source {
                    UsageSource::Keys => "keys",
                    UsageSource::Readout => "readout",
                }
            ),
            format!(
                "track_usage = {}",
                self.track_usage.map_or("auto".to_string(), |v| v.to_string())
            ),
        ]);
        lines.join("\n") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_values() {
        let c = PipelineConfig::default();
        assert_eq!((c.gamma, c.ne, c.ns, c.m, c.d, c.lambda), (5, 5, Some(10), 128, 1, 7));
        assert_eq!(c.stride(), 16);
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut c = PipelineConfig::default();
        c.apply_text("# comment\nns = inf\ngamma=1 # trailing\nmode = stacking\ntau = 0.5\n")
            .unwrap();
        assert_eq!((c.ns, c.gamma, c.mode, c.tau), (None, 1, Mode::Stacking, 0.5));
        let mut back = PipelineConfig::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn bad_options_rejected() {
        let mut c = PipelineConfig::default();
        assert!(c.set("bogus", "1").is_err());
        assert!(c.set("gamma", "x").is_err());
        assert!(c.apply_text("gamma 3").is_err());
        c.lambda = 4;
        assert!(c.validate().is_err());
        c.lambda = 7;
        c.ne = 10;
        assert!(c.validate().is_err());
    }

    #[test]
    fn mode_bank_configs() {
        let mut c = PipelineConfig::default();
        assert!(c.bank_config().track_usage);
        c.mode = Mode::Stacking;
        let b = c.bank_config();
        assert_eq!((b.gamma, b.ns, b.track_usage), (1, None, false));
        c.mode = Mode::Recurrent;
        assert_eq!(c.bank_config().window_frames, Some(1));
    }
}
