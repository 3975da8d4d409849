//! End-to-end propagation: configuration, the streaming colorizer,
//! synthetic test videos, directory IO and benchmarks.

pub mod bench;
pub mod config;
pub mod io;
pub mod run;
pub mod synth;

pub use bench::{bench, BenchReport};
pub use config::{Mode, PipelineConfig, ProjectionMode, ValueMode};
pub use io::{colorize_dir, compare_dirs, discover_frames, write_synth, QualityReport};
pub use run::{colorize_sequence, run_baseline, ColumnTag, Propagator, RunResult, StepOutput};
pub use synth::{synth_video, SynthKind, SynthOutput, SynthSpec, SynthVideo};
