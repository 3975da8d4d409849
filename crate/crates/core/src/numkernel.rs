//! Dense numeric primitives shared by every attention path.
//!
//! All matrices are row-major [`Mat`]s. Feature matrices follow the
//! "channels × positions" convention: each column is one feature vector.
//! Every function here is pure and safe to call from several threads.

use std::cmp::Ordering;

use crate::error::{ensure, Error, Result};
use crate::Real;

/// Arguments below this value make `exp` return exactly zero, so the call can
/// be skipped without changing any result bit.
#[cfg(not(feature = "single"))]
pub(crate) const EXP_ZERO_BELOW: Real = -746.0;
#[cfg(feature = "single")]
pub(crate) const EXP_ZERO_BELOW: Real = -104.0;

#[inline]
pub(crate) fn exp_or_zero(x: Real) -> Real {
    if x < EXP_ZERO_BELOW {
        0.0
    } else {
        x.exp()
    }
}

/// Below this argument [`exp_in_place`] returns zero. For `f64` the true
/// results there are under `3.3e-308`.
#[cfg(not(feature = "single"))]
const FAST_EXP_ZERO_BELOW: Real = -708.0;

#[cfg(not(feature = "single"))]
const LN2_HI: f64 = 6.931_471_803_691_238e-1;
#[cfg(not(feature = "single"))]
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
// 1.5·2⁵²: adding it rounds to an integer held in the low mantissa bits.
#[cfg(not(feature = "single"))]
const SHIFTER: f64 = 6_755_399_441_055_744.0;
#[cfg(not(feature = "single"))]
const C: [f64; 13] = [
    1.0,
    1.0,
    1.0 / 2.0,
    1.0 / 6.0,
    1.0 / 24.0,
    1.0 / 120.0,
    1.0 / 720.0,
    1.0 / 5_040.0,
    1.0 / 40_320.0,
    1.0 / 362_880.0,
    1.0 / 3_628_800.0,
    1.0 / 39_916_800.0,
    1.0 / 479_001_600.0,
];

/// `exp` by Cody–Waite reduction `x = k·ln 2 + r` and a degree-12 Taylor
/// polynomial in `r` (evaluated by Estrin's scheme); within 2 ulp of `f64::exp` on `[-708, 709]`. Free of
/// branches and calls.
#[cfg(not(feature = "single"))]
#[inline(always)]
fn exp_poly(x: Real) -> Real {
    let xc = if x < FAST_EXP_ZERO_BELOW { FAST_EXP_ZERO_BELOW } else { x };
    let t = xc * std::f64::consts::LOG2_E + SHIFTER;
    let k = t - SHIFTER;
    let r = (xc - k * LN2_HI) - k * LN2_LO;
    let (r2, r4) = (r * r, r * r * (r * r));
    let pair = |i: usize| C[i] + C[i + 1] * r;
    let low = (pair(0) + pair(2) * r2) + (pair(4) + pair(6) * r2) * r4;
    let high = (pair(8) + pair(10) * r2) + C[12] * r4;
    let p = low + high * (r4 * r4);
    let e = (t.to_bits() as i64 - SHIFTER.to_bits() as i64 + 1023) << 52;
    let y = p * f64::from_bits(e as u64);
    if x < FAST_EXP_ZERO_BELOW {
        0.0
    } else {
        y
    }
}

#[cfg(feature = "single")]
#[inline(always)]
fn exp_poly(x: Real) -> Real {
    exp_or_zero(x)
}

/// `exp` of every element, flushing results below `f64::MIN_POSITIVE` to zero.
#[inline(always)]
pub(crate) fn exp_in_place(xs: &mut [Real]) {
    for x in xs {
        *x = exp_poly(*x);
    }
}

/// Lane-split sum; the order differs from a sequential sum only by rounding.
#[inline(always)]
pub(crate) fn sum_lanes(x: &[Real]) -> Real {
    let mut lanes = [0.0; 8];
    let mut chunks = x.chunks_exact(8);
    for c in &mut chunks {
        for (l, v) in lanes.iter_mut().zip(c) {
            *l += v;
        }
    }
    lanes.iter().sum::<Real>() + chunks.remainder().iter().sum::<Real>()
}

/// Lane-split dot product of two equally long slices.
#[inline(always)]
pub(crate) fn dot_lanes(a: &[Real], b: &[Real]) -> Real {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut lanes = [0.0; 8];
    let (mut ca, mut cb) = (a.chunks_exact(8), b.chunks_exact(8));
    for (x, y) in (&mut ca).zip(&mut cb) {
        for i in 0..8 {
            lanes[i] += x[i] * y[i];
        }
    }
    lanes.iter().sum::<Real>() + dot(ca.remainder(), cb.remainder())
}

const LANES: usize = 8;

/// Squared distances from `q` to every key (channel `c` of key `n` at
/// `planes[c][n]`) into `row`; returns the smallest.
#[inline(always)]
fn sq_dists_into(planes: &[Vec<Real>], q: &[Real], row: &mut [Real]) -> Real {
    let t = row.len();
    let full = t - t % LANES;
    let mut lanes = [Real::INFINITY; LANES];
    for n0 in (0..full).step_by(LANES) {
        let mut d = [0.0; LANES];
        for (plane, &qc) in planes.iter().zip(q) {
            let k = &plane[n0..n0 + LANES];
            for i in 0..LANES {
                let e = qc - k[i];
                d[i] += e * e;
            }
        }
        row[n0..n0 + LANES].copy_from_slice(&d);
        for i in 0..LANES {
            lanes[i] = if d[i] < lanes[i] { d[i] } else { lanes[i] };
        }
    }
    let mut nearest = lanes.iter().fold(Real::INFINITY, |a, &b| if b < a { b } else { a });
    for n in full..t {
        let mut d = 0.0;
        for (plane, &qc) in planes.iter().zip(q) {
            let e = qc - plane[n];
            d += e * e;
        }
        row[n] = d;
        nearest = if d < nearest { d } else { nearest };
    }
    nearest
}

/// Turns squared distances into unnormalized weights
/// `exp(−d·inv_tau − max_logit)` in place and returns their sum. The
/// nearest column gets exactly 1.
#[inline(always)]
fn weights_from_dists(row: &mut [Real], nearest: Real, inv_tau: Real) -> Real {
    let max_logit = -nearest * inv_tau;
    for d in row.iter_mut() {
        *d = -*d * inv_tau - max_logit;
    }
    exp_in_place(row);
    sum_lanes(row)
}

#[inline(always)]
fn l2_row_body(
    keys: &[Vec<Real>],
    values: &[Vec<Real>],
    q: &[Real],
    inv_tau: Real,
    row: &mut [Real],
    out: &mut [Real],
    mass: &mut [Real],
) -> usize {
    let nearest = sq_dists_into(keys, q, row);
    let inv = 1.0 / weights_from_dists(row, nearest, inv_tau);
    for (o, v) in out.iter_mut().zip(values) {
        *o = dot_lanes(row, v) * inv;
    }
    for (m, &w) in mass.iter_mut().zip(row.iter()) {
        *m += w * inv;
    }
    row.iter_mut().for_each(|w| *w *= inv);
    // The first maximal weight: the unnormalized maximum is exactly 1.
    let top = row.iter().copied().fold(0.0, |a: Real, b| if b > a { b } else { a });
    row.iter().position(|&w| w == top).unwrap_or(0)
}

/// SIMD forms of [`l2_row_body`] with the same lane split. They contract
/// multiply-adds, so results match the scalar path to within rounding.
#[cfg(all(target_arch = "x86_64", not(feature = "single")))]
macro_rules! l2_row_simd {
    ($name:ident, $features:literal, $v:ty, $width:literal,
     set1 = $set1:ident, zero = $zero:ident, load = $load:path, store = $store:path,
     add = $add:ident, sub = $sub:ident, mul = $mul:ident, fmadd = $fmadd:ident,
     min = $min:ident, max = $max:ident, exp = $exp:path) => {
        pub(super) mod $name {
            use std::arch::x86_64::*;

            use super::super::{BLOCK, C, LANES, TILE};

            const PER: usize = LANES / $width;

            #[target_feature(enable = $features)]
            fn lanes(v: [$v; PER]) -> [f64; LANES] {
                let mut out = [0.0; LANES];
                for (j, x) in v.into_iter().enumerate() {
                    // SAFETY: `out` has room for `PER` registers.
                    unsafe { $store(out.as_mut_ptr().add(j * $width), x) };
                }
                out
            }

            #[target_feature(enable = $features)]
            pub(super) fn poly(r: $v) -> $v {
                let c = |i: usize| $set1(C[i]);
                let r2 = $mul(r, r);
                let r4 = $mul(r2, r2);
                let pair = |i: usize| $fmadd(c(i + 1), r, c(i));
                let low = $fmadd($fmadd(pair(6), r2, pair(4)), r4, $fmadd(pair(2), r2, pair(0)));
                let high = $fmadd(c(12), r4, $fmadd(pair(10), r2, pair(8)));
                $fmadd(high, $mul(r4, r4), low)
            }

            /// # Safety
            /// The CPU must support the enabled features. Slice lengths as
            /// in `l2_readout_block`.
            #[target_feature(enable = $features)]
            #[allow(clippy::too_many_arguments)]
            pub(in super::super) unsafe fn l2_block(
                keys: &[Vec<f64>],
                values: &[Vec<f64>],
                queries: &[&[f64]],
                inv_tau: f64,
                rows: &mut [f64],
                outs: &mut [f64],
                mass: &mut [f64],
                argmax: &mut [usize],
            ) {
                let t = mass.len();
                let full = t - t % LANES;
                let cv = values.len();
                let nq = queries.len();
                let rp = rows.as_mut_ptr();
                let mp = mass.as_mut_ptr();

                // Squared distances and their per-query minimum.
                let mut mins = [[$set1(f64::INFINITY); PER]; BLOCK];
                for tile in (0..full).step_by(TILE) {
                    let end = (tile + TILE).min(full);
                    for (qi, q) in queries.iter().enumerate() {
                        let row = rp.add(qi * t);
                        let min = &mut mins[qi];
                        for n0 in (tile..end).step_by(LANES) {
                            let mut d = [$zero(); PER];
                            for (plane, &qc) in keys.iter().zip(q.iter()) {
                                let (qv, kp) = ($set1(qc), plane.as_ptr().add(n0));
                                for j in 0..PER {
                                    let e = $sub(qv, $load(kp.add(j * $width)));
                                    d[j] = $fmadd(e, e, d[j]);
                                }
                            }
                            for j in 0..PER {
                                $store(row.add(n0 + j * $width), d[j]);
                                min[j] = $min(d[j], min[j]);
                            }
                        }
                    }
                }
                let mut max_logit = [0.0; BLOCK];
                for (qi, q) in queries.iter().enumerate() {
                    let row = &mut rows[qi * t..(qi + 1) * t];
                    let mut nearest = lanes(mins[qi]).iter().fold(f64::INFINITY, |a, &b| if b < a { b } else { a });
                    for n in full..t {
                        let mut d = 0.0;
                        for (plane, &qc) in keys.iter().zip(q.iter()) {
                            let e = qc - plane[n];
                            d += e * e;
                        }
                        row[n] = d;
                        nearest = if d < nearest { d } else { nearest };
                    }
                    max_logit[qi] = -nearest * inv_tau;
                }

                // Unnormalized weights, their sums and the weighted values.
                let neg_it = $set1(-inv_tau);
                let mut sums = [[$zero(); PER]; BLOCK];
                let mut accs = vec![[$zero(); PER]; nq * cv];
                for tile in (0..full).step_by(TILE) {
                    let end = (tile + TILE).min(full);
                    for qi in 0..nq {
                        let row = rp.add(qi * t);
                        let neg_ml = $set1(-max_logit[qi]);
                        let sum = &mut sums[qi];
                        for n0 in (tile..end).step_by(LANES) {
                            for j in 0..PER {
                                let p = row.add(n0 + j * $width);
                                let w = $exp($fmadd($load(p), neg_it, neg_ml));
                                $store(p, w);
                                sum[j] = $add(sum[j], w);
                            }
                        }
                        for (acc, v) in accs[qi * cv..(qi + 1) * cv].iter_mut().zip(values) {
                            let vp = v.as_ptr();
                            for n0 in (tile..end).step_by(LANES) {
                                for j in 0..PER {
                                    let k = n0 + j * $width;
                                    acc[j] = $fmadd($load(row.add(k)), $load(vp.add(k)), acc[j]);
                                }
                            }
                        }
                    }
                }
                let mut inv = [0.0; BLOCK];
                for qi in 0..nq {
                    let row = &mut rows[qi * t..(qi + 1) * t];
                    for w in &mut row[full..] {
                        *w = super::super::exp_poly(-*w * inv_tau - max_logit[qi]);
                    }
                    inv[qi] = 1.0 / (lanes(sums[qi]).iter().sum::<f64>() + row[full..].iter().sum::<f64>());
                    for (c, v) in values.iter().enumerate() {
                        let lane_sum = lanes(accs[qi * cv + c]).iter().sum::<f64>();
                        outs[qi * cv + c] = (lane_sum + super::super::dot(&row[full..], &v[full..])) * inv[qi];
                    }
                }

                // Normalize, accumulate mass and track the largest weights.
                let mut tops = [[$zero(); PER]; BLOCK];
                for tile in (0..full).step_by(TILE) {
                    let end = (tile + TILE).min(full);
                    for qi in 0..nq {
                        let row = rp.add(qi * t);
                        let iv = $set1(inv[qi]);
                        let top = &mut tops[qi];
                        for n0 in (tile..end).step_by(LANES) {
                            for j in 0..PER {
                                let k = n0 + j * $width;
                                let w = $mul($load(row.add(k)), iv);
                                $store(mp.add(k), $add($load(mp.add(k)), w));
                                $store(row.add(k), w);
                                top[j] = $max(w, top[j]);
                            }
                        }
                    }
                }
                for qi in 0..nq {
                    let row = &mut rows[qi * t..(qi + 1) * t];
                    let mut top = lanes(tops[qi]).iter().fold(0.0, |a: f64, &b| if b > a { b } else { a });
                    for n in full..t {
                        let w = row[n] * inv[qi];
                        mass[n] += w;
                        row[n] = w;
                        top = if w > top { w } else { top };
                    }
                    argmax[qi] = row.iter().position(|&w| w == top).unwrap_or(0);
                }
            }
        }
    };
}

#[cfg(all(target_arch = "x86_64", not(feature = "single")))]
mod simd {
    use std::arch::x86_64::*;

    use super::{FAST_EXP_ZERO_BELOW, LN2_HI, LN2_LO, SHIFTER};

    #[target_feature(enable = "avx2,fma")]
    fn exp4(x: __m256d) -> __m256d {
        let floor = _mm256_set1_pd(FAST_EXP_ZERO_BELOW);
        let under = _mm256_cmp_pd::<_CMP_LT_OQ>(x, floor);
        let xc = _mm256_blendv_pd(x, floor, under);
        let shifter = _mm256_set1_pd(SHIFTER);
        let t = _mm256_fmadd_pd(xc, _mm256_set1_pd(std::f64::consts::LOG2_E), shifter);
        let k = _mm256_sub_pd(t, shifter);
        let r = _mm256_fnmadd_pd(k, _mm256_set1_pd(LN2_HI), xc);
        let r = _mm256_fnmadd_pd(k, _mm256_set1_pd(LN2_LO), r);
        let bits = _mm256_sub_epi64(_mm256_castpd_si256(t), _mm256_set1_epi64x(SHIFTER.to_bits() as i64));
        let e = _mm256_slli_epi64::<52>(_mm256_add_epi64(bits, _mm256_set1_epi64x(1023)));
        _mm256_andnot_pd(under, _mm256_mul_pd(avx2::poly(r), _mm256_castsi256_pd(e)))
    }

    #[target_feature(enable = "avx512f")]
    fn exp8(x: __m512d) -> __m512d {
        let floor = _mm512_set1_pd(FAST_EXP_ZERO_BELOW);
        let under = _mm512_cmp_pd_mask::<_CMP_LT_OQ>(x, floor);
        let xc = _mm512_mask_blend_pd(under, x, floor);
        let shifter = _mm512_set1_pd(SHIFTER);
        let t = _mm512_fmadd_pd(xc, _mm512_set1_pd(std::f64::consts::LOG2_E), shifter);
        let k = _mm512_sub_pd(t, shifter);
        let r = _mm512_fnmadd_pd(k, _mm512_set1_pd(LN2_HI), xc);
        let r = _mm512_fnmadd_pd(k, _mm512_set1_pd(LN2_LO), r);
        let bits = _mm512_sub_epi64(_mm512_castpd_si512(t), _mm512_set1_epi64(SHIFTER.to_bits() as i64));
        let e = _mm512_slli_epi64::<52>(_mm512_add_epi64(bits, _mm512_set1_epi64(1023)));
        _mm512_maskz_mov_pd(!under, _mm512_mul_pd(avx512::poly(r), _mm512_castsi512_pd(e)))
    }

    l2_row_simd!(avx2, "avx2,fma", __m256d, 4,
        set1 = _mm256_set1_pd, zero = _mm256_setzero_pd, load = _mm256_loadu_pd, store = _mm256_storeu_pd,
        add = _mm256_add_pd, sub = _mm256_sub_pd, mul = _mm256_mul_pd, fmadd = _mm256_fmadd_pd,
        min = _mm256_min_pd, max = _mm256_max_pd, exp = super::exp4);
    // Full-mask loads and stores compile to plain moves but, unlike
    // `_mm512_loadu_pd`, carry no precondition checks in debug builds.
    #[target_feature(enable = "avx512f")]
    unsafe fn load8(p: *const f64) -> __m512d {
        _mm512_maskz_loadu_pd(!0, p)
    }

    #[target_feature(enable = "avx512f")]
    unsafe fn store8(p: *mut f64, v: __m512d) {
        _mm512_mask_storeu_pd(p, !0, v)
    }

    l2_row_simd!(avx512, "avx512f", __m512d, 8,
        set1 = _mm512_set1_pd, zero = _mm512_setzero_pd, load = super::load8, store = super::store8,
        add = _mm512_add_pd, sub = _mm512_sub_pd, mul = _mm512_mul_pd, fmadd = _mm512_fmadd_pd,
        min = _mm512_min_pd, max = _mm512_max_pd, exp = super::exp8);
}

/// Most queries handled by one [`l2_readout_block`] call.
pub(crate) const BLOCK: usize = 8;
/// Columns per cache tile in the blocked kernels.
#[cfg(all(target_arch = "x86_64", not(feature = "single")))]
const TILE: usize = 512;

/// A block of queries of an L2 softmax readout over `T` columns stored
/// channel by channel (`keys[c][n]`, `values[c][n]`). For query `i`:
/// `rows[i·T + n] = softmax_n(−‖q_i − k_n‖²·inv_tau)`,
/// `outs[i·C + c] = Σ_n rows[i·T + n]·values[c][n]` and `mass[n] += rows[i·T + n]`
/// in query order; `argmax[i]` is the first index of the largest weight.
/// At most [`BLOCK`] queries.
#[allow(clippy::too_many_arguments)]
pub(crate) fn l2_readout_block(
    keys: &[Vec<Real>],
    values: &[Vec<Real>],
    queries: &[&[Real]],
    inv_tau: Real,
    rows: &mut [Real],
    outs: &mut [Real],
    mass: &mut [Real],
    argmax: &mut [usize],
) {
    let (t, cv, nq) = (mass.len(), values.len(), queries.len());
    assert!(nq <= BLOCK && argmax.len() == nq && rows.len() == nq * t && outs.len() == nq * cv);
    assert!(queries.iter().all(|q| q.len() == keys.len()));
    assert!(keys.iter().chain(values).all(|p| p.len() == t));
    #[cfg(all(target_arch = "x86_64", not(feature = "single")))]
    {
        use std::arch::is_x86_feature_detected as has;
        if has!("avx512f") {
            // SAFETY: the CPU supports the enabled features; lengths checked above.
            return unsafe { simd::avx512::l2_block(keys, values, queries, inv_tau, rows, outs, mass, argmax) };
        }
        if has!("avx2") && has!("fma") {
            // SAFETY: as above.
            return unsafe { simd::avx2::l2_block(keys, values, queries, inv_tau, rows, outs, mass, argmax) };
        }
    }
    for (i, q) in queries.iter().enumerate() {
        argmax[i] = l2_row_body(
            keys,
            values,
            q,
            inv_tau,
            &mut rows[i * t..(i + 1) * t],
            &mut outs[i * cv..(i + 1) * cv],
            mass,
        );
    }
}

/// Squared Euclidean distance between two equally long slices.
#[inline]
pub(crate) fn sq_dist(a: &[Real], b: &[Real]) -> Real {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

#[inline]
pub(crate) fn dot(a: &[Real], b: &[Real]) -> Real {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Max-subtracted softmax of one row, in place. Empty rows are left alone.
pub(crate) fn softmax_in_place(row: &mut [Real]) {
    let Some(max) = row.iter().copied().reduce(Real::max) else {
        return;
    };
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = exp_or_zero(*x - max);
        sum += *x;
    }
    // sum >= 1 because the max entry contributes exp(0).
    let inv = 1.0 / sum;
    for x in row.iter_mut() {
        *x *= inv;
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<Real>,
}

impl Mat {
    /// Builds a matrix from row-major data; every entry must be finite.
    pub fn new(rows: usize, cols: usize, data: Vec<Real>) -> Result<Self> {
        ensure!(
            data.len() == rows * cols,
            "matrix data has {} entries, expected {rows}x{cols}",
            data.len()
        );
        ensure!(
            data.iter().all(|x| x.is_finite()),
            "matrix contains a non-finite entry"
        );
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Real) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(rows: usize, columns: &[&[Real]]) -> Result<Self> {
        ensure!(
            columns.iter().all(|c| c.len() == rows),
            "column length differs from row count {rows}"
        );
        let cols = columns.len();
        Self::new(rows, cols, {
            let mut data = vec![0.0; rows * cols];
            for (j, col) in columns.iter().enumerate() {
                for (i, &x) in col.iter().enumerate() {
                    data[i * cols + j] = x;
                }
            }
            data
        })
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<Real>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[Real] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<Real> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Real {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[Real] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<Real> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn matmul(&self, rhs: &Mat) -> Result<Mat> {
        ensure!(
            self.cols == rhs.rows,
            "matmul inner dimensions differ: {:?} x {:?}",
            self.shape(),
            rhs.shape()
        );
        let mut out = vec![0.0; self.rows * rhs.cols];
        for i in 0..self.rows {
            let out_row = &mut out[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(Mat::from_raw(self.rows, rhs.cols, out))
    }

    /// Largest absolute entrywise difference; `None` when shapes differ.
    pub fn max_abs_diff(&self, other: &Mat) -> Option<Real> {
        (self.shape() == other.shape()).then(|| {
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, Real::max)
        })
    }
}

/// Ordered, duplicate-free selection of column positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnIndexSet(Vec<usize>);

impl ColumnIndexSet {
    pub fn new(indices: Vec<usize>, cols: usize) -> Result<Self> {
        let mut seen = vec![false; cols];
        for &i in &indices {
            ensure!(i < cols, "column index {i} out of range for {cols} columns");
            ensure!(!seen[i], "duplicate column index {i}");
            seen[i] = true;
        }
        Ok(Self(indices))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.contains(&i)
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }
}

/// `out[i][j] = Σ_c (a[c][i] − b[c][j])²` for `a: C×m`, `b: C×n`.
pub fn pairwise_sqdist(a: &Mat, b: &Mat) -> Result<Mat> {
    ensure!(
        a.rows == b.rows,
        "pairwise_sqdist: feature dims differ ({} vs {})",
        a.rows,
        b.rows
    );
    // Column-contiguous copies keep the inner loop on adjacent memory.
    let at = a.transpose();
    let bt = b.transpose();
    let mut out = Vec::with_capacity(a.cols * b.cols);
    for i in 0..a.cols {
        let ai = at.row(i);
        out.extend((0..b.cols).map(|j| sq_dist(ai, bt.row(j))));
    }
    Ok(Mat::from_raw(a.cols, b.cols, out))
}

/// Softmax applied independently to each row.
pub fn row_softmax(x: &Mat) -> Mat {
    let mut out = x.clone();
    if out.cols > 0 {
        for row in out.data.chunks_exact_mut(out.cols) {
            softmax_in_place(row);
        }
    }
    out
}

/// Indices of the `k` largest entries of a `1×n` score row, ordered by
/// descending score and then ascending index.
pub fn topk_columns(scores: &Mat, k: usize) -> Result<ColumnIndexSet> {
    ensure!(
        scores.rows == 1,
        "topk_columns expects a 1xn score row, got {:?}",
        scores.shape()
    );
    Ok(ColumnIndexSet(topk_indices(&scores.data, k)?))
}

pub(crate) fn topk_indices(scores: &[Real], k: usize) -> Result<Vec<usize>> {
    let n = scores.len();
    ensure!(k <= n, "top-{k} requested from {n} scores");
    let order = |a: &usize, b: &usize| -> Ordering {
        scores[*b].total_cmp(&scores[*a]).then(a.cmp(b))
    };
    let mut idx: Vec<usize> = (0..n).collect();
    if k == 0 {
        return Ok(Vec::new());
    }
    if k < n {
        idx.select_nth_unstable_by(k - 1, order);
        idx.truncate(k);
    }
    idx.sort_unstable_by(order);
    Ok(idx)
}

/// `row_softmax(q kᵀ / scale) v` for `q: m×C`, `k: n×C`, `v: n×Cv`.
pub fn dot_attention(q: &Mat, k: &Mat, v: &Mat, scale: Real) -> Result<Mat> {
    ensure!(
        q.cols == k.cols,
        "dot_attention: query dim {} != key dim {}",
        q.cols,
        k.cols
    );
    ensure!(
        k.rows == v.rows,
        "dot_attention: {} keys but {} values",
        k.rows,
        v.rows
    );
    ensure!(
        scale > 0.0 && scale.is_finite(),
        "dot_attention: scale must be positive, got {scale}"
    );
    let mut out = vec![0.0; q.rows * v.cols];
    let mut logits = vec![0.0; k.rows];
    for i in 0..q.rows {
        let qi = q.row(i);
        for (j, l) in logits.iter_mut().enumerate() {
            *l = dot(qi, k.row(j)) / scale;
        }
        softmax_in_place(&mut logits);
        let out_row = &mut out[i * v.cols..(i + 1) * v.cols];
        for (j, &w) in logits.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, &x) in out_row.iter_mut().zip(v.row(j)) {
                *o += w * x;
            }
        }
    }
    Ok(Mat::from_raw(q.rows, v.cols, out))
}

/// Concatenates matrices along the column axis, preserving part order.
pub fn concat_columns(parts: &[Mat]) -> Result<Mat> {
    let Some(first) = parts.first() else {
        return Ok(Mat::zeros(0, 0));
    };
    let rows = first.rows;
    if let Some(bad) = parts.iter().find(|p| p.rows != rows) {
        return Err(Error::contract(format!(
            "concat_columns: row counts differ ({rows} vs {})",
            bad.rows
        )));
    }
    let cols = parts.iter().map(|p| p.cols).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row(r));
        }
    }
    Ok(Mat::from_raw(rows, cols, data))
}
