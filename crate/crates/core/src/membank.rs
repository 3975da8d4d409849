//! Key/value memory bank with usage-based compaction.
//!
//! The bank always holds the exemplar's columns. Every γ-th frame is appended
//! as a block of short-term columns. Each observed frame adds softmax
//! attention mass to the columns it resembles; when the short-term store
//! reaches `Nₛ` frames, the `Nₑ` oldest are compacted into at most `M`
//! long-term columns chosen by age-normalized usage. Readout is an L2
//! softmax attention over all stored columns, evaluated one query row at a
//! time so the full affinity matrix is only built on request.
//!
//! Column order is always `[exemplar | long-term | short-term, oldest first]`.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{ensure, Error, Result};
use crate::featex::{write_feature_file, FeatureGrid};
use crate::numkernel::{l2_readout_block, topk_indices, Mat, BLOCK};
use crate::Real;

/// Where a stored column came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Exemplar,
    ShortTerm { frame: usize },
    LongTerm,
}

/// Which attention weights feed the usage statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UsageSource {
    /// Softmax of negative key-to-key distances of each observed frame.
    Keys,
    /// Column mass of the readout affinity of each frame's query.
    Readout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BankConfig {
    /// Insert frame `i` iff `i % gamma == 0`.
    pub gamma: usize,
    /// Number of oldest short-term frames compacted at a time.
    pub ne: usize,
    /// Short-term frame count that triggers compaction; `None` disables it.
    pub ns: Option<usize>,
    /// Columns promoted per compaction.
    pub m: usize,
    /// Maximum long-term columns; 0 disables the cap.
    pub longterm_cap: usize,
    /// Softmax temperature for readout and usage.
    pub tau: Real,
    pub usage_source: UsageSource,
    pub track_usage: bool,
    /// Keep only the newest `n` short-term frames (sliding window).
    pub window_frames: Option<usize>,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self {
            gamma: 5,
            ne: 5,
            ns: Some(10),
            m: 128,
            longterm_cap: 4096,
            tau: 1.0,
            usage_source: UsageSource::Keys,
            track_usage: true,
            window_frames: None,
        }
    }
}

impl BankConfig {
    /// Attend to the exemplar and every previous frame: no striding, no
    /// compaction.
    pub fn stacking() -> Self {
        Self {
            gamma: 1,
            ns: None,
            longterm_cap: 0,
            track_usage: false,
            ..Self::default()
        }
    }

    /// Attend to the exemplar and the previous frame only.
    pub fn recurrent() -> Self {
        Self {
            window_frames: Some(1),
            ..Self::stacking()
        }
    }

    pub fn validate(&self, positions: usize) -> Result<()> {
        ensure!(self.gamma >= 1, "gamma must be at least 1");
        ensure!(
            self.tau > 0.0 && self.tau.is_finite(),
            "tau must be positive, got {}",
            self.tau
        );
        if let Some(ns) = self.ns {
            ensure!(
                self.ne >= 1 && self.ne < ns,
                "need 1 <= Ne < Ns, got Ne={} Ns={ns}",
                self.ne
            );
            ensure!(
                self.m <= self.ne * positions,
                "M={} exceeds Ne*HW={}",
                self.m,
                self.ne * positions
            );
        }
        if let Some(w) = self.window_frames {
            ensure!(w >= 1, "window_frames must be at least 1");
        }
        Ok(())
    }
}

/// Column counts by origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ColumnCounts {
    pub shortterm: usize,
    pub longterm: usize,
    pub exemplar: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutResult {
    pub value_grid: FeatureGrid,
    /// Row-stochastic `ĤŴ × T` affinity, when requested.
    pub affinity: Option<Mat>,
    /// Highest-weight column per query position (lowest index on ties).
    pub argmax: Vec<usize>,
    /// Attention mass received by each column, `Σ_m W[m][n]`.
    pub column_mass: Vec<Real>,
    /// `T` at readout time.
    pub columns_used: usize,
}

/// What a compaction did, in pre-compaction column indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CompactionReport {
    pub candidates: Vec<usize>,
    /// Selected columns, by descending normalized usage then ascending index.
    pub promoted: Vec<usize>,
    pub removed: Vec<usize>,
    /// Long-term columns dropped by the cap (may include just-promoted ones).
    pub evicted: Vec<usize>,
    pub shortterm_before: usize,
    pub shortterm_after: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObserveReport {
    pub inserted: bool,
    /// `T` right after insertion, before any compaction.
    pub columns_after_insert: usize,
    pub compaction: Option<CompactionReport>,
}

#[derive(Debug, Clone)]
pub struct MemoryBank {
    cfg: BankConfig,
    height: usize,
    width: usize,
    ck: usize,
    cv: usize,
    // Column-contiguous storage: column n is keys[n*ck..(n+1)*ck].
    keys: Vec<Real>,
    values: Vec<Real>,
    // The same keys and values channel by channel, for the readout sweeps.
    key_planes: Vec<Vec<Real>>,
    value_planes: Vec<Vec<Real>>,
    usage: Vec<Real>,
    born_at: Vec<usize>,
    origin: Vec<Origin>,
    slot: Vec<usize>,
    shortterm: VecDeque<usize>,
    last_frame: usize,
    peak_columns: usize,
    compactions: usize,
}

/// Appends column-contiguous `data` to per-channel planes.
fn extend_planes(planes: &mut [Vec<Real>], data: &[Real]) {
    let c = planes.len();
    for (i, plane) in planes.iter_mut().enumerate() {
        plane.extend(data.iter().skip(i).step_by(c));
    }
}

impl MemoryBank {
    /// Creates a bank holding the exemplar's `ĤŴ` columns (`born_at = 0`).
    pub fn init_with_exemplar(k_r: &FeatureGrid, v_r: &FeatureGrid, cfg: BankConfig) -> Result<Self> {
        ensure!(
            (k_r.height(), k_r.width()) == (v_r.height(), v_r.width()),
            "exemplar key grid {}x{} and value grid {}x{} differ",
            k_r.height(),
            k_r.width(),
            v_r.height(),
            v_r.width()
        );
        ensure!(k_r.channels() >= 1 && v_r.channels() >= 1, "bank needs at least one key and value channel");
        let hw = k_r.positions();
        cfg.validate(hw)?;
        let mut bank = Self {
            cfg,
            height: k_r.height(),
            width: k_r.width(),
            ck: k_r.channels(),
            cv: v_r.channels(),
            keys: Vec::new(),
            values: Vec::new(),
            key_planes: vec![Vec::new(); k_r.channels()],
            value_planes: vec![Vec::new(); v_r.channels()],
            usage: Vec::new(),
            born_at: Vec::new(),
            origin: Vec::new(),
            slot: Vec::new(),
            shortterm: VecDeque::new(),
            last_frame: 0,
            peak_columns: 0,
            compactions: 0,
        };
        bank.append(k_r, v_r, 0, Origin::Exemplar);
        Ok(bank)
    }

    fn append(&mut self, k: &FeatureGrid, v: &FeatureGrid, born: usize, origin: Origin) {
        let hw = k.positions();
        self.keys.extend_from_slice(k.as_slice());
        self.values.extend_from_slice(v.as_slice());
        extend_planes(&mut self.key_planes, k.as_slice());
        extend_planes(&mut self.value_planes, v.as_slice());
        self.usage.extend(std::iter::repeat_n(0.0, hw));
        self.born_at.extend(std::iter::repeat_n(born, hw));
        self.origin.extend(std::iter::repeat_n(origin, hw));
        self.slot.extend(0..hw);
        self.peak_columns = self.peak_columns.max(self.len());
    }

    pub fn config(&self) -> &BankConfig {
        &self.cfg
    }

    pub fn key_channels(&self) -> usize {
        self.ck
    }

    pub fn value_channels(&self) -> usize {
        self.cv
    }

    /// `(Ĥ, Ŵ)` of every stored frame.
    pub fn grid_dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// `ĤŴ`, the number of columns per frame.
    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    /// Total stored columns `T`.
    pub fn len(&self) -> usize {
        self.usage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.usage.is_empty()
    }

    /// Short-term frame count `z`.
    pub fn shortterm_frames(&self) -> usize {
        self.shortterm.len()
    }

    /// Frame indices of the short-term frames, oldest first.
    pub fn shortterm_frame_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.shortterm.iter().copied()
    }

    pub fn last_frame(&self) -> usize {
        self.last_frame
    }

    /// Largest `T` ever held, including the moment before a compaction.
    pub fn peak_columns(&self) -> usize {
        self.peak_columns
    }

    pub fn compactions(&self) -> usize {
        self.compactions
    }

    pub fn column_count(&self) -> ColumnCounts {
        let mut c = ColumnCounts {
            total: self.len(),
            ..ColumnCounts::default()
        };
        for o in &self.origin {
            match o {
                Origin::Exemplar => c.exemplar += 1,
                Origin::ShortTerm { .. } => c.shortterm += 1,
                Origin::LongTerm => c.longterm += 1,
            }
        }
        c
    }

    pub fn key_column(&self, n: usize) -> &[Real] {
        &self.keys[n * self.ck..(n + 1) * self.ck]
    }

    pub fn value_column(&self, n: usize) -> &[Real] {
        &self.values[n * self.cv..(n + 1) * self.cv]
    }

    /// `Ĉᵏ × T` key matrix.
    pub fn keys(&self) -> Mat {
        Mat::from_fn(self.ck, self.len(), |c, n| self.keys[n * self.ck + c])
    }

    /// `Ĉᵛ × T` value matrix.
    pub fn values(&self) -> Mat {
        Mat::from_fn(self.cv, self.len(), |c, n| self.values[n * self.cv + c])
    }

    pub fn usage_raw(&self) -> &[Real] {
        &self.usage
    }

    pub fn born_at(&self) -> &[usize] {
        &self.born_at
    }

    pub fn origins(&self) -> &[Origin] {
        &self.origin
    }

    /// Spatial position (`y·Ŵ + x`) each column was taken from.
    pub fn slots(&self) -> &[usize] {
        &self.slot
    }

    /// `S′[n] = usage_raw[n] / max(1, now − 1 − born_at[n])`, where `now` is
    /// the frame about to be processed.
    pub fn normalized_usage(&self, now: usize) -> Mat {
        let data = self
            .usage
            .iter()
            .zip(&self.born_at)
            .map(|(&u, &b)| u / now.saturating_sub(1).saturating_sub(b).max(1) as Real)
            .collect();
        Mat::new(1, self.len(), data).expect("finite usage")
    }

    fn check_grid(&self, g: &FeatureGrid, channels: usize, what: &str) -> Result<()> {
        ensure!(
            g.dims() == (self.height, self.width, channels),
            "{what} grid is {:?}, bank expects {:?}",
            g.dims(),
            (self.height, self.width, channels)
        );
        Ok(())
    }

    /// L2 softmax readout `V = A₂ⱽ · softmax(−D/τ)ᵀ` for query grid `q`.
    pub fn readout(&self, q: &FeatureGrid, retain_affinity: bool) -> Result<ReadoutResult> {
        ensure!(
            q.channels() == self.ck,
            "query has {} channels, bank keys have {}",
            q.channels(),
            self.ck
        );
        let t = self.len();
        let mut out = Vec::with_capacity(q.positions() * self.cv);
        let mut affinity = retain_affinity.then(|| Vec::with_capacity(q.positions() * t));
        let mut argmax = Vec::with_capacity(q.positions());
        let mut mass = vec![0.0; t];
        let inv_tau = 1.0 / self.cfg.tau;
        let mut rows = vec![0.0; BLOCK * t];
        let mut acc = vec![0.0; BLOCK * self.cv];
        let mut best = [0; BLOCK];
        let positions: Vec<usize> = (0..q.positions()).collect();
        for block in positions.chunks(BLOCK) {
            let n = block.len();
            let queries: Vec<&[Real]> = block.iter().map(|&m| q.column(m)).collect();
            l2_readout_block(
                &self.key_planes,
                &self.value_planes,
                &queries,
                inv_tau,
                &mut rows[..n * t],
                &mut acc[..n * self.cv],
                &mut mass,
                &mut best[..n],
            );
            argmax.extend_from_slice(&best[..n]);
            out.extend_from_slice(&acc[..n * self.cv]);
            if let Some(a) = affinity.as_mut() {
                a.extend_from_slice(&rows[..n * t]);
            }
        }
        Ok(ReadoutResult {
            value_grid: FeatureGrid::new(q.height(), q.width(), self.cv, out)?,
            affinity: affinity.map(|a| Mat::new(q.positions(), t, a)).transpose()?,
            argmax,
            column_mass: mass,
            columns_used: t,
        })
    }

    /// Adds each stored column's share of `softmax(−D/τ)` between the frame
    /// keys `k` and the bank keys (`ĤŴ` total mass).
    pub fn accumulate_usage(&mut self, k: &FeatureGrid) -> Result<()> {
        self.check_grid(k, self.ck, "key")?;
        let inv_tau = 1.0 / self.cfg.tau;
        let t = self.len();
        let mut rows = vec![0.0; BLOCK * t];
        let mut best = [0; BLOCK];
        let positions: Vec<usize> = (0..k.positions()).collect();
        for block in positions.chunks(BLOCK) {
            let n = block.len();
            let queries: Vec<&[Real]> = block.iter().map(|&m| k.column(m)).collect();
            l2_readout_block(
                &self.key_planes,
                &[],
                &queries,
                inv_tau,
                &mut rows[..n * t],
                &mut [],
                &mut self.usage,
                &mut best[..n],
            );
        }
        Ok(())
    }

    /// Adds externally computed per-column mass (e.g. a readout's
    /// [`column_mass`](ReadoutResult::column_mass)).
    pub fn accumulate_mass(&mut self, mass: &[Real]) -> Result<()> {
        ensure!(
            mass.len() == self.len(),
            "mass has {} entries, bank has {} columns",
            mass.len(),
            self.len()
        );
        ensure!(
            mass.iter().all(|m| m.is_finite() && *m >= 0.0),
            "usage mass must be finite and nonnegative"
        );
        for (u, m) in self.usage.iter_mut().zip(mass) {
            *u += m;
        }
        Ok(())
    }

    /// Appends frame `i` as a short-term block, then trims to
    /// `window_frames` if set.
    pub fn insert_frame(&mut self, k: &FeatureGrid, v: &FeatureGrid, i: usize) -> Result<()> {
        self.check_grid(k, self.ck, "key")?;
        self.check_grid(v, self.cv, "value")?;
        ensure!(
            self.shortterm.back().is_none_or(|&f| f < i),
            "frame {i} is not newer than the last stored frame"
        );
        self.append(k, v, i, Origin::ShortTerm { frame: i });
        self.shortterm.push_back(i);
        if let Some(w) = self.cfg.window_frames {
            while self.shortterm.len() > w {
                let old = self.shortterm.pop_front().unwrap();
                self.retain(|o, _| o != Origin::ShortTerm { frame: old });
            }
        }
        Ok(())
    }

    pub fn needs_compaction(&self) -> bool {
        self.cfg.ns.is_some_and(|ns| self.shortterm.len() >= ns)
    }

    /// Processes frame `i`: usage update, γ-strided insertion, and
    /// compaction once `z` reaches `Nₛ`. `mass` is required when usage comes
    /// from readout affinities.
    pub fn observe_frame(
        &mut self,
        k: &FeatureGrid,
        v: &FeatureGrid,
        i: usize,
        mass: Option<&[Real]>,
    ) -> Result<ObserveReport> {
        ensure!(
            i > self.last_frame,
            "frame {i} observed after frame {}",
            self.last_frame
        );
        self.check_grid(k, self.ck, "key")?;
        self.check_grid(v, self.cv, "value")?;
        if self.cfg.track_usage {
            match (self.cfg.usage_source, mass) {
                (UsageSource::Keys, _) => self.accumulate_usage(k)?,
                (UsageSource::Readout, Some(m)) => self.accumulate_mass(m)?,
                (UsageSource::Readout, None) => {
                    return Err(Error::contract(
                        "readout usage source needs the readout column mass",
                    ))
                }
            }
        }
        self.last_frame = i;
        let mut report = ObserveReport::default();
        if i.is_multiple_of(self.cfg.gamma) {
            self.insert_frame(k, v, i)?;
            report.inserted = true;
        }
        report.columns_after_insert = self.len();
        if self.needs_compaction() {
            report.compaction = Some(self.compact(i)?);
        }
        Ok(report)
    }

    /// Compacts the `Nₑ` oldest short-term frames. `now` is the most recently
    /// observed frame: candidates are ranked by `normalized_usage(now + 1)`
    /// (usage divided by the number of frames observed since insertion), the
    /// top `M` become long-term columns with `born_at = now`, and the rest
    /// are deleted. Usage moves with the promoted columns.
    pub fn compact(&mut self, now: usize) -> Result<CompactionReport> {
        let ns = self
            .cfg
            .ns
            .ok_or_else(|| Error::contract("compaction is disabled (Ns = infinity)"))?;
        ensure!(
            self.shortterm.len() >= ns,
            "compact needs z = Ns = {ns}, bank has z = {}",
            self.shortterm.len()
        );
        let oldest: Vec<usize> = self.shortterm.iter().take(self.cfg.ne).copied().collect();
        let candidates: Vec<usize> = (0..self.len())
            .filter(|&n| matches!(self.origin[n], Origin::ShortTerm { frame } if oldest.contains(&frame)))
            .collect();
        let scores = self.normalized_usage(now + 1);
        let cand_scores: Vec<Real> = candidates.iter().map(|&n| scores.as_slice()[n]).collect();
        let promoted: Vec<usize> = topk_indices(&cand_scores, self.cfg.m)?
            .into_iter()
            .map(|j| candidates[j])
            .collect();
        let removed: Vec<usize> = candidates
            .iter()
            .copied()
            .filter(|n| !promoted.contains(n))
            .collect();

        // New long-term set: existing long-term columns, then promoted ones.
        let mut longterm: Vec<usize> = (0..self.len())
            .filter(|&n| self.origin[n] == Origin::LongTerm)
            .collect();
        longterm.extend(&promoted);
        let mut born = self.born_at.clone();
        for &n in &promoted {
            born[n] = now;
        }
        let mut evicted = Vec::new();
        let cap = self.cfg.longterm_cap;
        if cap > 0 && longterm.len() > cap {
            let lt_scores: Vec<Real> = longterm
                .iter()
                .map(|&n| self.usage[n] / (now.saturating_sub(born[n])).max(1) as Real)
                .collect();
            let keep = topk_indices(&lt_scores, cap)?;
            let mut kept = vec![false; longterm.len()];
            keep.iter().for_each(|&j| kept[j] = true);
            evicted = longterm
                .iter()
                .zip(&kept)
                .filter(|(_, &k)| !k)
                .map(|(&n, _)| n)
                .collect();
            longterm = longterm
                .iter()
                .zip(&kept)
                .filter(|(_, &k)| k)
                .map(|(&n, _)| n)
                .collect();
        }

        let mut order: Vec<usize> = (0..self.len())
            .filter(|&n| self.origin[n] == Origin::Exemplar)
            .collect();
        order.extend(&longterm);
        order.extend((0..self.len()).filter(|&n| {
            matches!(self.origin[n], Origin::ShortTerm { frame } if !oldest.contains(&frame))
        }));
        let promoted_set: Vec<bool> = {
            let mut s = vec![false; self.len()];
            longterm.iter().for_each(|&n| s[n] = true);
            s
        };
        self.born_at = born;
        self.reorder(&order, |n| promoted_set[n]);

        let before = self.shortterm.len();
        for _ in 0..self.cfg.ne {
            self.shortterm.pop_front();
        }
        self.compactions += 1;
        Ok(CompactionReport {
            candidates,
            promoted,
            removed,
            evicted,
            shortterm_before: before,
            shortterm_after: self.shortterm.len(),
        })
    }

    /// Rebuilds every per-column array from `order`; columns for which
    /// `to_longterm` holds are retagged as long-term.
    fn reorder(&mut self, order: &[usize], to_longterm: impl Fn(usize) -> bool) {
        let (ck, cv) = (self.ck, self.cv);
        let mut keys = Vec::with_capacity(order.len() * ck);
        let mut values = Vec::with_capacity(order.len() * cv);
        for &n in order {
            keys.extend_from_slice(&self.keys[n * ck..(n + 1) * ck]);
            values.extend_from_slice(&self.values[n * cv..(n + 1) * cv]);
        }
        self.keys = keys;
        self.values = values;
        self.key_planes.iter_mut().for_each(Vec::clear);
        self.value_planes.iter_mut().for_each(Vec::clear);
        extend_planes(&mut self.key_planes, &self.keys);
        extend_planes(&mut self.value_planes, &self.values);
        self.usage = order.iter().map(|&n| self.usage[n]).collect();
        self.born_at = order.iter().map(|&n| self.born_at[n]).collect();
        self.slot = order.iter().map(|&n| self.slot[n]).collect();
        self.origin = order
            .iter()
            .map(|&n| if to_longterm(n) { Origin::LongTerm } else { self.origin[n] })
            .collect();
    }

    fn retain(&mut self, keep: impl Fn(Origin, usize) -> bool) {
        let order: Vec<usize> = (0..self.len()).filter(|&n| keep(self.origin[n], n)).collect();
        self.reorder(&order, |_| false);
    }

    /// Writes `keys.bin`, `values.bin` (feature-file format with `Ĥ = 1`,
    /// `Ŵ = T`) and `manifest.txt` (one line per column) into `dir`.
    pub fn dump(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let frame = self.last_frame as u32;
        let t = self.len().max(1);
        let keys = FeatureGrid::new(1, t, self.ck, self.keys.clone())?;
        let values = FeatureGrid::new(1, t, self.cv, self.values.clone())?;
        write_feature_file(&dir.join("keys.bin"), &keys, frame)?;
        write_feature_file(&dir.join("values.bin"), &values, frame)?;
        let mut manifest = String::from("# column origin born_at slot usage_raw\n");
        for n in 0..self.len() {
            let origin = match self.origin[n] {
                Origin::Exemplar => "exemplar".to_string(),
                Origin::ShortTerm { frame } => format!("shortterm:{frame}"),
                Origin::LongTerm => "longterm".to_string(),
            };
            writeln!(
                manifest,
                "{n} {origin} {} {} {:.9e}",
                self.born_at[n], self.slot[n], self.usage[n]
            )
            .unwrap();
        }
        let path = dir.join("manifest.txt");
        fs::write(&path, manifest).map_err(|e| Error::io(path, e))
    }
}
