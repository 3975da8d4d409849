//! Per-frame feature grids.
//!
//! Stand-in extractors produce an `Ĥ × Ŵ × C` [`FeatureGrid`] for each frame:
//! a deterministic synthetic extractor built from per-cell image statistics,
//! or a file extractor that loads features exported from any framework.
//! [`Projection`]s play the role of the learned 3×3 embedding convolutions,
//! and [`pvgfe_fuse`] fuses a global and a local feature stream with
//! cross-channel attention.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ensure, Error, Result};
use crate::numkernel::{dot_attention, Mat};
use crate::render::Plane;
use crate::Real;

/// Feature vectors on a spatial grid, stored pixel-major (`y`, `x`, channel).
///
/// The matrix view used by the attention kernels is `channels × (height·width)`,
/// one column per grid position in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<Real>,
}

impl FeatureGrid {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<Real>) -> Result<Self> {
        ensure!(height >= 1 && width >= 1, "feature grid must be at least 1x1");
        ensure!(
            data.len() == height * width * channels,
            "feature grid data has {} values, expected {height}x{width}x{channels}",
            data.len()
        );
        ensure!(
            data.iter().all(|x| x.is_finite()),
            "feature grid contains a non-finite value"
        );
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> Real,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    /// Interleaves equally sized planes into one grid, one channel per plane.
    pub fn from_planes(planes: &[Plane]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::contract("from_planes needs at least one plane"))?;
        let (w, h) = (first.width(), first.height());
        ensure!(
            planes.iter().all(|p| p.width() == w && p.height() == h),
            "planes differ in size"
        );
        Self::new(h, w, planes.len(), {
            let mut data = Vec::with_capacity(w * h * planes.len());
            for i in 0..w * h {
                data.extend(planes.iter().map(|p| p.as_slice()[i]));
            }
            data
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(height, width, channels)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    /// Number of grid positions, `Ĥ·Ŵ`.
    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    pub fn as_slice(&self) -> &[Real] {
        &self.data
    }

    /// Feature vector at grid position `(y, x)`.
    #[inline]
    pub fn at(&self, y: usize, x: usize) -> &[Real] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Feature vector at flattened position `p = y·Ŵ + x`.
    #[inline]
    pub fn column(&self, p: usize) -> &[Real] {
        &self.data[p * self.channels..(p + 1) * self.channels]
    }

    pub fn channel_plane(&self, c: usize) -> Plane {
        Plane::from_fn(self.width, self.height, |x, y| self.at(y, x)[c])
    }

    /// `channels × positions` matrix view.
    pub fn to_mat(&self) -> Mat {
        let n = self.positions();
        Mat::from_fn(self.channels, n, |c, p| self.data[p * self.channels + c])
    }

    /// Inverse of [`to_mat`](Self::to_mat).
    pub fn from_mat(m: &Mat, height: usize, width: usize) -> Result<Self> {
        ensure!(
            m.cols() == height * width,
            "matrix with {} columns cannot be reshaped to {height}x{width}",
            m.cols()
        );
        Ok(Self::from_fn(height, width, m.rows(), |y, x, c| {
            m.get(c, y * width + x)
        }))
    }

    pub fn add(&self, other: &FeatureGrid) -> Result<FeatureGrid> {
        ensure!(
            self.dims() == other.dims(),
            "cannot add grids {:?} and {:?}",
            self.dims(),
            other.dims()
        );
        Ok(FeatureGrid {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
            ..*self
        })
    }

    pub fn map(&self, f: impl Fn(Real) -> Real) -> FeatureGrid {
        FeatureGrid {
            data: self.data.iter().map(|&x| f(x)).collect(),
            ..*self
        }
    }

    /// Cyclic spatial shift: the value at `(y, x)` moves to `(y + dy, x + dx)`.
    pub fn roll(&self, dy: isize, dx: isize) -> FeatureGrid {
        let (h, w) = (self.height as isize, self.width as isize);
        Self::from_fn(self.height, self.width, self.channels, |y, x, c| {
            let sy = (y as isize - dy).rem_euclid(h) as usize;
            let sx = (x as isize - dx).rem_euclid(w) as usize;
            self.at(sy, sx)[c]
        })
    }

    pub fn max_abs_diff(&self, other: &FeatureGrid) -> Option<Real> {
        (self.dims() == other.dims()).then(|| {
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, Real::max)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProjectionKind {
    Identity,
    /// Per-position channel mixing; `weights` is `cout × cin`, row-major.
    Linear {
        cin: usize,
        cout: usize,
        weights: Vec<Real>,
    },
    /// Zero-padded 3×3 cross-correlation; `weights` is `cout × cin × 3 × 3`.
    Conv3x3 {
        cin: usize,
        cout: usize,
        weights: Vec<Real>,
    },
}

/// A fixed embedding map applied to feature grids.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    kind: ProjectionKind,
    seed: Option<u64>,
}

impl Projection {
    pub fn identity() -> Self {
        Self {
            kind: ProjectionKind::Identity,
            seed: None,
        }
    }

    pub fn linear(cin: usize, cout: usize, weights: Vec<Real>) -> Result<Self> {
        ensure!(
            weights.len() == cin * cout,
            "linear projection {cin}->{cout} needs {} weights, got {}",
            cin * cout,
            weights.len()
        );
        Ok(Self {
            kind: ProjectionKind::Linear { cin, cout, weights },
            seed: None,
        })
    }

    /// `gain · I` on `channels` channels.
    pub fn scaled_identity(channels: usize, gain: Real) -> Self {
        let mut w = vec![0.0; channels * channels];
        for c in 0..channels {
            w[c * channels + c] = gain;
        }
        Self::linear(channels, channels, w).expect("square weights")
    }

    /// Keeps the first `cout` of `cin` channels, multiplied by `gain`.
    pub fn select_first(cin: usize, cout: usize, gain: Real) -> Result<Self> {
        ensure!(cout <= cin, "cannot select {cout} of {cin} channels");
        let mut w = vec![0.0; cin * cout];
        for c in 0..cout {
            w[c * cin + c] = gain;
        }
        Self::linear(cin, cout, w)
    }

    pub fn conv3x3(cin: usize, cout: usize, weights: Vec<Real>) -> Result<Self> {
        ensure!(
            weights.len() == cin * cout * 9,
            "conv3x3 {cin}->{cout} needs {} weights, got {}",
            cin * cout * 9,
            weights.len()
        );
        Ok(Self {
            kind: ProjectionKind::Conv3x3 { cin, cout, weights },
            seed: None,
        })
    }

    /// 3×3 kernel with a unit tap at the center of each channel's own filter.
    pub fn conv3x3_delta(channels: usize) -> Self {
        let mut w = vec![0.0; channels * channels * 9];
        for c in 0..channels {
            w[(c * channels + c) * 9 + 4] = 1.0;
        }
        Self::conv3x3(channels, channels, w).expect("sized weights")
    }

    /// Seeded random orthogonal `channels × channels` channel mixing.
    pub fn random_orthogonal(channels: usize, seed: u64) -> Self {
        let w = random_orthogonal_matrix(channels, &mut ChaCha8Rng::seed_from_u64(seed));
        Self {
            seed: Some(seed),
            ..Self::linear(channels, channels, w).expect("square weights")
        }
    }

    /// Seeded 3×3 convolution: random orthogonal center taps plus small
    /// random neighbor taps.
    pub fn random_conv3x3(channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let center = random_orthogonal_matrix(channels, &mut rng);
        let mut w = vec![0.0; channels * channels * 9];
        for o in 0..channels {
            for i in 0..channels {
                for t in 0..9 {
                    w[(o * channels + i) * 9 + t] = if t == 4 {
                        center[o * channels + i]
                    } else {
                        let z: Real = StandardNormal.sample(&mut rng);
                        0.05 * z
                    };
                }
            }
        }
        Self {
            seed: Some(seed),
            ..Self::conv3x3(channels, channels, w).expect("sized weights")
        }
    }

    pub fn kind(&self) -> &ProjectionKind {
        &self.kind
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Required input channel count; `None` for identity.
    pub fn cin(&self) -> Option<usize> {
        match &self.kind {
            ProjectionKind::Identity => None,
            ProjectionKind::Linear { cin, .. } | ProjectionKind::Conv3x3 { cin, .. } => Some(*cin),
        }
    }

    /// Output channel count for an input with `cin` channels.
    pub fn cout(&self, cin: usize) -> usize {
        match &self.kind {
            ProjectionKind::Identity => cin,
            ProjectionKind::Linear { cout, .. } | ProjectionKind::Conv3x3 { cout, .. } => *cout,
        }
    }
}

fn random_orthogonal_matrix(n: usize, rng: &mut ChaCha8Rng) -> Vec<Real> {
    // Modified Gram-Schmidt on Gaussian rows; redraw the rare degenerate row.
    let mut rows: Vec<Vec<Real>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v: Vec<Real> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        for r in &rows {
            let d: Real = v.iter().zip(r).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(r) {
                *x -= d * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<Real>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            rows.push(v);
        }
    }
    rows.concat()
}

pub fn apply_projection(x: &FeatureGrid, p: &Projection) -> Result<FeatureGrid> {
    let (h, w, c) = x.dims();
    match &p.kind {
        ProjectionKind::Identity => Ok(x.clone()),
        ProjectionKind::Linear { cin, cout, weights } => {
            ensure!(c == *cin, "projection expects {cin} channels, grid has {c}");
            let mut data = Vec::with_capacity(h * w * cout);
            for px in x.data.chunks_exact(c) {
                for o in 0..*cout {
                    let row = &weights[o * cin..(o + 1) * cin];
                    data.push(row.iter().zip(px).map(|(a, b)| a * b).sum());
                }
            }
            Ok(FeatureGrid {
                height: h,
                width: w,
                channels: *cout,
                data,
            })
        }
        ProjectionKind::Conv3x3 { cin, cout, weights } => {
            ensure!(c == *cin, "projection expects {cin} channels, grid has {c}");
            let mut out = FeatureGrid::zeros(h, w, *cout);
            for y in 0..h {
                for xx in 0..w {
                    let dst = (y * w + xx) * cout;
                    for ky in 0..3 {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let sx = xx as isize + kx as isize - 1;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let src = x.at(sy as usize, sx as usize);
                            let tap = ky * 3 + kx;
                            for o in 0..*cout {
                                let mut acc = 0.0;
                                for (i, &v) in src.iter().enumerate() {
                                    acc += weights[(o * cin + i) * 9 + tap] * v;
                                }
                                out.data[dst + o] += acc;
                            }
                        }
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Query, key and value embeddings used by [`pvgfe_fuse`].
#[derive(Debug, Clone, PartialEq)]
pub struct FusionProjections {
    pub query: Projection,
    pub key: Projection,
    pub value: Projection,
}

impl FusionProjections {
    pub fn identity() -> Self {
        Self {
            query: Projection::identity(),
            key: Projection::identity(),
            value: Projection::identity(),
        }
    }
}

/// Fuses a global stream `g` and a local stream `l` with cross-channel
/// attention: `softmax(Q̂ K̂ᵀ / α) V̂` where `Q̂ = Pq(g)`, `K̂ = Pk(l)`,
/// `V̂ = Pv(l)` are viewed as `Ĉ × ĤŴ` matrices, so the affinity is `Ĉ × Ĉ`.
pub fn pvgfe_fuse(
    g: &FeatureGrid,
    l: &FeatureGrid,
    projections: &FusionProjections,
    alpha: Real,
) -> Result<FeatureGrid> {
    ensure!(
        (g.height, g.width) == (l.height, l.width),
        "global stream is {}x{}, local stream is {}x{}",
        g.height,
        g.width,
        l.height,
        l.width
    );
    let q = apply_projection(g, &projections.query)?;
    let k = apply_projection(l, &projections.key)?;
    let v = apply_projection(l, &projections.value)?;
    ensure!(
        q.channels == k.channels && k.channels == v.channels,
        "projected channel counts differ: q={}, k={}, v={}",
        q.channels,
        k.channels,
        v.channels
    );
    let fused = dot_attention(&q.to_mat(), &k.to_mat(), &v.to_mat(), alpha)?;
    FeatureGrid::from_mat(&fused, g.height, g.width)
}

/// Where per-frame features come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExtractorSpec {
    /// Per-cell statistics over `stride × stride` cells, `channels` outputs.
    Synthetic { stride: usize, channels: usize },
    /// Feature files named by a path template containing `{idx}` (or a
    /// zero-padded form such as `{idx:05}`); the exemplar has index 0.
    File { template: String, stride: usize },
}

impl ExtractorSpec {
    pub fn stride(&self) -> usize {
        match self {
            ExtractorSpec::Synthetic { stride, .. } | ExtractorSpec::File { stride, .. } => *stride,
        }
    }

    /// Grid size for a frame of `width × height` pixels: `(Ĥ, Ŵ)`.
    pub fn grid_dims(&self, width: usize, height: usize) -> (usize, usize) {
        let s = self.stride();
        (height.div_ceil(s), width.div_ceil(s))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ExtractorSpec::Synthetic { stride, channels } => {
                ensure!(*stride >= 1, "extractor stride must be positive");
                ensure!(*channels >= 1, "extractor needs at least one channel");
            }
            ExtractorSpec::File { template, stride } => {
                ensure!(*stride >= 1, "extractor stride must be positive");
                ensure!(
                    template.contains("{idx"),
                    "feature path template {template:?} has no {{idx}} placeholder"
                );
            }
        }
        Ok(())
    }
}

/// Extracts a feature grid from one or more full-resolution planes.
///
/// The synthetic extractor pads each plane to a multiple of the stride and
/// emits, per cell, `[mean, std, mean horizontal gradient, mean vertical
/// gradient]` followed by the same statistics of the cell downscaled 2× (and
/// again 2×, ...), truncated or zero-padded to `channels`. With several
/// planes the statistics are interleaved, so output channel `j` is statistic
/// `j / n` of plane `j % n`.
pub fn extract(planes: &[&Plane], spec: &ExtractorSpec, frame_index: usize) -> Result<FeatureGrid> {
    let first = planes
        .first()
        .ok_or_else(|| Error::contract("extract needs at least one plane"))?;
    let (w, h) = (first.width(), first.height());
    ensure!(
        planes.iter().all(|p| (p.width(), p.height()) == (w, h)),
        "extract: planes differ in size"
    );
    let stride = spec.stride();
    ensure!(
        w >= stride && h >= stride,
        "frame {w}x{h} is smaller than stride {stride}"
    );
    match spec {
        ExtractorSpec::Synthetic { stride, channels } => {
            Ok(synthetic_features(planes, *stride, *channels))
        }
        ExtractorSpec::File { template, stride } => {
            let path = feature_path(template, frame_index);
            let (grid, idx) =
                read_feature_file(&path).map_err(|e| e.at_frame(frame_index))?;
            let (gh, gw) = (h.div_ceil(*stride), w.div_ceil(*stride));
            if idx as usize != frame_index || (grid.height, grid.width) != (gh, gw) {
                return Err(Error::FeatureFile {
                    path,
                    reason: format!(
                        "header says frame {idx} {}x{}, expected frame {frame_index} {gh}x{gw}",
                        grid.height, grid.width
                    ),
                }
                .at_frame(frame_index));
            }
            Ok(grid)
        }
    }
}

fn synthetic_features(planes: &[&Plane], stride: usize, channels: usize) -> FeatureGrid {
    let n = planes.len();
    let (w, h) = (planes[0].width(), planes[0].height());
    let (gw, gh) = (w.div_ceil(stride), h.div_ceil(stride));
    let padded: Vec<Plane> = planes.iter().map(|p| p.pad_edge(gw * stride, gh * stride)).collect();
    let per_plane = channels.div_ceil(n);
    let mut out = FeatureGrid::zeros(gh, gw, channels);
    let mut cell = Vec::with_capacity(stride * stride);
    let mut stats = Vec::with_capacity(per_plane);
    for cy in 0..gh {
        for cx in 0..gw {
            let base = (cy * gw + cx) * channels;
            for (pi, plane) in padded.iter().enumerate() {
                cell.clear();
                for y in cy * stride..(cy + 1) * stride {
                    cell.extend_from_slice(&plane.row(y)[cx * stride..(cx + 1) * stride]);
                }
                cell_statistics(&cell, stride, per_plane, &mut stats);
                for (s, &v) in stats.iter().enumerate() {
                    let j = s * n + pi;
                    if j < channels {
                        out.data[base + j] = v;
                    }
                }
            }
        }
    }
    out
}

/// Appends up to `count` statistics of a square `size × size` cell to `out`
/// (after clearing it), zero-filling once the pyramid runs out.
fn cell_statistics(cell: &[Real], size: usize, count: usize, out: &mut Vec<Real>) {
    out.clear();
    let mut cur = cell.to_vec();
    let mut n = size;
    while out.len() < count {
        let len = (n * n) as Real;
        let mean = cur.iter().sum::<Real>() / len;
        let var = cur.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / len;
        let (mut gx, mut gy) = (0.0, 0.0);
        if n >= 2 {
            for y in 0..n {
                for x in 0..n - 1 {
                    gx += cur[y * n + x + 1] - cur[y * n + x];
                    gy += cur[(x + 1) * n + y] - cur[x * n + y];
                }
            }
            let pairs = (n * (n - 1)) as Real;
            gx /= pairs;
            gy /= pairs;
        }
        out.extend([mean, var.sqrt(), gx, gy]);
        if n >= 2 && n.is_multiple_of(2) {
            let m = n / 2;
            cur = (0..m * m)
                .map(|i| {
                    let (y, x) = (2 * (i / m), 2 * (i % m));
                    0.25 * (cur[y * n + x] + cur[y * n + x + 1] + cur[(y + 1) * n + x] + cur[(y + 1) * n + x + 1])
                })
                .collect();
            n = m;
        } else {
            out.resize(count.max(out.len()), 0.0);
        }
    }
    out.truncate(count);
}

/// Expands `{idx}` or `{idx:0N}` in a feature path template.
pub fn feature_path(template: &str, idx: usize) -> PathBuf {
    if let Some(start) = template.find("{idx:0") {
        if let Some(len) = template[start..].find('}') {
            let spec = &template[start + 6..start + len];
            if let Ok(width) = spec.parse::<usize>() {
                let mut s = template.to_string();
                s.replace_range(start..start + len + 1, &format!("{idx:0width$}"));
                return PathBuf::from(s);
            }
        }
    }
    PathBuf::from(template.replace("{idx}", &idx.to_string()))
}

const HEADER_BYTES: usize = 16;

/// Writes a grid as four little-endian `u32`s (`Ĥ, Ŵ, C, frame_index`)
/// followed by `Ĥ·Ŵ·C` little-endian `f32` values in `(y, x, channel)` order.
pub fn write_feature_file(path: &Path, grid: &FeatureGrid, frame_index: u32) -> Result<()> {
    let mut bytes = Vec::with_capacity(HEADER_BYTES + 4 * grid.data.len());
    for v in [grid.height as u32, grid.width as u32, grid.channels as u32, frame_index] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    #[allow(clippy::unnecessary_cast)]
    for &v in &grid.data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a feature file, returning the grid and the frame index in its header.
pub fn read_feature_file(path: &Path) -> Result<(FeatureGrid, u32)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::FeatureFile {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < HEADER_BYTES {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    let (h, w, c, idx) = (word(0) as usize, word(1) as usize, word(2) as usize, word(3));
    let expected = HEADER_BYTES + 4 * h * w * c;
    if bytes.len() != expected {
        return Err(bad(format!(
            "{h}x{w}x{c} header needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let data = bytes[HEADER_BYTES..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as Real)
        .collect();
    let grid = FeatureGrid::new(h, w, c, data).map_err(|e| bad(e.to_string()))?;
    Ok((grid, idx))
}
