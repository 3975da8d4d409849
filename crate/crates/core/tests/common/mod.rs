//! Brute-force reference implementations shared by the integration tests.
//! Everything here is written from the definitions with plain loops and
//! does not call into the library's kernels.

#![allow(dead_code, clippy::unnecessary_cast, clippy::type_complexity)]

use chromaprop::pipeline::SynthVideo;
use chromaprop::render::Plane;

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// `out[m] = Σ_n softmax_n(−‖q_m − k_n‖² / τ) · v_n`, plus the argmax column.
pub fn l2_readout(q: &[Vec<f64>], keys: &[Vec<f64>], values: &[Vec<f64>], tau: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut out = Vec::new();
    let mut arg = Vec::new();
    for qm in q {
        let logits: Vec<f64> = keys
            .iter()
            .map(|k| -k.iter().zip(qm).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / tau)
            .collect();
        let w = softmax(&logits);
        let mut acc = vec![0.0; values[0].len()];
        for (wn, vn) in w.iter().zip(values) {
            for (a, v) in acc.iter_mut().zip(vn) {
                *a += wn * v;
            }
        }
        let mut best = 0;
        for n in 0..w.len() {
            if w[n] > w[best] {
                best = n;
            }
        }
        out.push(acc);
        arg.push(best);
    }
    (out, arg)
}

/// Dot-product attention of every query against the given candidate set.
pub fn dot_readout(qm: &[f64], keys: &[&[f64]], values: &[&[f64]], beta: f64) -> Vec<f64> {
    let logits: Vec<f64> = keys
        .iter()
        .map(|k| k.iter().zip(qm).map(|(a, b)| a * b).sum::<f64>() / beta)
        .collect();
    let w = softmax(&logits);
    let mut acc = vec![0.0; values[0].len()];
    for (wn, vn) in w.iter().zip(values) {
        for (a, v) in acc.iter_mut().zip(vn.iter()) {
            *a += wn * v;
        }
    }
    acc
}

/// `[mean, std, mean horizontal step, mean vertical step]` of an `n × n`
/// block stored row-major.
fn block_stats(p: &[f64], n: usize) -> [f64; 4] {
    let len = (n * n) as f64;
    let mean = p.iter().sum::<f64>() / len;
    let std = (p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len).sqrt();
    let (mut gx, mut gy) = (0.0, 0.0);
    for a in 0..n {
        for b in 0..n - 1 {
            gx += p[a * n + b + 1] - p[a * n + b];
            gy += p[(b + 1) * n + a] - p[b * n + a];
        }
    }
    let pairs = (n * (n - 1)) as f64;
    [mean, std, gx / pairs, gy / pairs]
}

/// Cell statistics at full and half resolution: 8 channels per cell, cells
/// in row-major order. `plane` dimensions must be multiples of `stride`.
pub fn cell_features8(plane: &Plane, stride: usize) -> Vec<Vec<f64>> {
    let (gw, gh) = (plane.width() / stride, plane.height() / stride);
    let mut out = Vec::new();
    for cy in 0..gh {
        for cx in 0..gw {
            let mut full = Vec::new();
            for y in 0..stride {
                for x in 0..stride {
                    full.push(plane.get(cx * stride + x, cy * stride + y) as f64);
                }
            }
            let h = stride / 2;
            let mut half = Vec::new();
            for y in 0..h {
                for x in 0..h {
                    let at = |dy: usize, dx: usize| full[(2 * y + dy) * stride + 2 * x + dx];
                    half.push((at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) / 4.0);
                }
            }
            let mut f = block_stats(&full, stride).to_vec();
            f.extend(block_stats(&half, h));
            out.push(f);
        }
    }
    out
}

/// Channel attention with identical global and local streams:
/// `fused_c = Σ_j softmax_j(⟨f_c, f_j⟩ / α) f_j`, where `f_c` is channel `c`
/// over all positions.
pub fn channel_fuse(cells: &[Vec<f64>], alpha: f64) -> Vec<Vec<f64>> {
    let c = cells[0].len();
    let chan = |i: usize| cells.iter().map(move |f| f[i]);
    let mut out = vec![vec![0.0; c]; cells.len()];
    for i in 0..c {
        let logits: Vec<f64> = (0..c)
            .map(|j| chan(i).zip(chan(j)).map(|(a, b)| a * b).sum::<f64>() / alpha)
            .collect();
        let w = softmax(&logits);
        for (p, o) in out.iter_mut().enumerate() {
            o[i] = (0..c).map(|j| w[j] * cells[p][j]).sum();
        }
    }
    out
}

/// Bilinear upsampling of a `gw × gh` grid by `f`, sampling at pixel
/// centers and clamping at the borders.
pub fn bilinear(grid: &[f64], gw: usize, gh: usize, f: usize) -> Vec<f64> {
    let coord = |o: usize, n: usize| {
        let s = (o as f64 + 0.5) / f as f64 - 0.5;
        let lo = s.floor();
        let clamp = |v: f64| v.max(0.0).min((n - 1) as f64) as usize;
        (clamp(lo), clamp(lo + 1.0), s - lo)
    };
    let mut out = Vec::with_capacity(gw * gh * f * f);
    for y in 0..gh * f {
        let (y0, y1, ty) = coord(y, gh);
        for x in 0..gw * f {
            let (x0, x1, tx) = coord(x, gw);
            let g = |yy: usize, xx: usize| grid[yy * gw + xx];
            let top = g(y0, x0) * (1.0 - tx) + g(y0, x1) * tx;
            let bot = g(y1, x0) * (1.0 - tx) + g(y1, x1) * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

/// Reference run of the whole propagator on a synthetic video with the
/// analytic configuration: stride 16, 8 feature channels, identity values,
/// γ=5 with no compaction (fewer than Nₛ stored frames), d=1, λ=7, τ=1.
pub struct E2eOracle {
    /// Full-resolution `[a, b]` per frame.
    pub ab: Vec<[Vec<f64>; 2]>,
    /// ab PSNR (peak 255) per frame.
    pub psnr: Vec<f64>,
    /// Fraction of interior cells whose readout argmax column shows the
    /// same pattern cell.
    pub argmax_hits: f64,
}

pub fn e2e_oracle(video: &SynthVideo, key_scale: f64) -> E2eOracle {
    const STRIDE: usize = 16;
    const GAMMA: usize = 5;
    const RADIUS: usize = 3;
    let spec = video.spec();
    assert!(spec.frames < 10 * GAMMA, "oracle assumes no compaction");
    let (gw, gh) = (spec.width / STRIDE, spec.height / STRIDE);
    let alpha = 8f64.sqrt();
    let beta = 8f64.sqrt();
    let keys_of = |l: &Plane| -> Vec<Vec<f64>> {
        channel_fuse(&cell_features8(l, STRIDE), alpha)
            .into_iter()
            .map(|f| f.into_iter().map(|x| x * key_scale).collect())
            .collect()
    };

    // Bank columns: (key, value, source frame, cell).
    let ex = video.exemplar();
    let [ea, eb] = ex.ab().unwrap();
    let mut bank_k = keys_of(ex.luminance());
    let mut bank_v: Vec<Vec<f64>> = Vec::new();
    let mut bank_src: Vec<(usize, usize)> = Vec::new();
    for cy in 0..gh {
        for cx in 0..gw {
            let mean = |p: &Plane| {
                let mut s = 0.0;
                for y in 0..STRIDE {
                    for x in 0..STRIDE {
                        s += p.get(cx * STRIDE + x, cy * STRIDE + y) as f64;
                    }
                }
                s / (STRIDE * STRIDE) as f64
            };
            bank_v.push(vec![mean(ea), mean(eb)]);
            bank_src.push((1, cy * gw + cx));
        }
    }

    let mut prev: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = None;
    let (mut ab, mut psnr) = (Vec::new(), Vec::new());
    let (mut hits, mut interior) = (0usize, 0usize);
    for t in 1..=spec.frames {
        let gt = video.frame(t);
        let q = keys_of(gt.luminance());
        let (v, arg) = l2_readout(&q, &bank_k, &bank_v, 1.0);
        for cy in 1..gh - 1 {
            for cx in 1..gw - 1 {
                let p = cy * gw + cx;
                let (sf, sc) = bank_src[arg[p]];
                interior += 1;
                if video.content_cell(sf, sc % gw, sc / gw) == video.content_cell(t, cx, cy) {
                    hits += 1;
                }
            }
        }
        let low: Vec<Vec<f64>> = match &prev {
            None => v.iter().map(|x| x.iter().map(|c| c.clamp(-128.0, 127.0)).collect()).collect(),
            Some((pk, pv)) => (0..gh * gw)
                .map(|p| {
                    let (y, x) = (p / gw, p % gw);
                    let mut ks: Vec<&[f64]> = Vec::new();
                    let mut vs: Vec<&[f64]> = Vec::new();
                    for yy in y.saturating_sub(RADIUS)..=(y + RADIUS).min(gh - 1) {
                        for xx in x.saturating_sub(RADIUS)..=(x + RADIUS).min(gw - 1) {
                            ks.push(&pk[yy * gw + xx]);
                            vs.push(&pv[yy * gw + xx]);
                        }
                    }
                    let l = dot_readout(&q[p], &ks, &vs, beta);
                    (0..2).map(|c| (0.5 * (v[p][c] + l[c])).clamp(-128.0, 127.0)).collect()
                })
                .collect(),
        };
        let planes = [0, 1].map(|c| {
            let g: Vec<f64> = low.iter().map(|x| x[c]).collect();
            bilinear(&g, gw, gh, STRIDE)
                .into_iter()
                .map(|x| x.clamp(-128.0, 127.0))
                .collect::<Vec<_>>()
        });
        let [ga, gb] = gt.ab().unwrap();
        let sse: f64 = planes[0]
            .iter()
            .zip(ga.as_slice())
            .chain(planes[1].iter().zip(gb.as_slice()))
            .map(|(p, g)| (p - *g as f64).powi(2))
            .sum();
        let mse = sse / (2 * planes[0].len()) as f64;
        psnr.push(10.0 * (255.0f64 * 255.0 / mse).log10());
        ab.push(planes);

        if t % GAMMA == 0 {
            for p in 0..gh * gw {
                bank_k.push(q[p].clone());
                bank_v.push(low[p].clone());
                bank_src.push((t, p));
            }
        }
        prev = Some((q, low));
    }
    E2eOracle {
        ab,
        psnr,
        argmax_hits: hits as f64 / interior as f64,
    }
}

/// Short-term frames `z` and compactions `c` after `n` insertions.
pub fn bank_state(n: usize, ns: usize, ne: usize) -> (usize, usize) {
    if n < ns {
        (n, 0)
    } else {
        let c = (n - ns) / ne + 1;
        (n - ne * c, c)
    }
}

/// Columns attended when reading out frame `i` with compaction enabled and
/// no long-term cap.
pub fn mfp_readout_columns(i: usize, hw: usize, gamma: usize, ns: usize, ne: usize, m: usize) -> usize {
    let (z, c) = bank_state((i - 1) / gamma, ns, ne);
    hw * (1 + z) + m * c
}

/// Columns held right after frame `i` is inserted, before any compaction it
/// triggers (equal to the readout count when `i` is not stored).
pub fn mfp_resident_columns(i: usize, hw: usize, gamma: usize, ns: usize, ne: usize, m: usize) -> usize {
    let before = mfp_readout_columns(i, hw, gamma, ns, ne, m);
    if !i.is_multiple_of(gamma) {
        return before;
    }
    let (z, c) = bank_state((i - 1) / gamma, ns, ne);
    before.max(hw * (2 + z) + m * c)
}

pub fn stacking_readout_columns(i: usize, hw: usize) -> usize {
    hw * i
}
