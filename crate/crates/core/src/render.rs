//! Decoding propagated features to chrominance, and CIE LAB ↔ sRGB.
//!
//! Frames are held as [`LabFrame`]s: a luminance plane `L ∈ [0, 100]` and an
//! optional pair of chrominance planes `a, b ∈ [-128, 127]`. Conversion to
//! and from 8-bit sRGB uses the standard D65 transform in floating point.

use std::path::Path;

use image::{DynamicImage, RgbImage};

use crate::error::{ensure, Error, Result};
use crate::featex::{apply_projection, FeatureGrid, Projection};
use crate::Real;

pub const AB_MIN: Real = -128.0;
pub const AB_MAX: Real = 127.0;

/// Single-channel full-resolution image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<Real>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<Real>) -> Result<Self> {
        ensure!(
            data.len() == width * height,
            "plane data has {} samples, expected {width}x{height}",
            data.len()
        );
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: Real) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Real) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Real {
        self.data[y * self.width + x]
    }

    pub fn as_slice(&self) -> &[Real] {
        &self.data
    }

    pub fn row(&self, y: usize) -> &[Real] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// Extends the plane to `width × height` by replicating its last row and column.
    pub fn pad_edge(&self, width: usize, height: usize) -> Plane {
        if width == self.width && height == self.height {
            return self.clone();
        }
        Plane::from_fn(width, height, |x, y| {
            self.get(x.min(self.width - 1), y.min(self.height - 1))
        })
    }

    /// Top-left `width × height` window.
    pub fn crop(&self, width: usize, height: usize) -> Plane {
        if width == self.width && height == self.height {
            return self.clone();
        }
        Plane::from_fn(width, height, |x, y| self.get(x, y))
    }

    pub fn mirror_horizontal(&self) -> Plane {
        Plane::from_fn(self.width, self.height, |x, y| {
            self.get(self.width - 1 - x, y)
        })
    }

    pub fn map(&self, f: impl Fn(Real) -> Real) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Mean over each `stride × stride` cell. Dimensions must be multiples of `stride`.
    pub fn cell_mean(&self, stride: usize) -> Result<Plane> {
        ensure!(
            stride >= 1 && self.width.is_multiple_of(stride) && self.height.is_multiple_of(stride),
            "cell_mean: {}x{} is not a multiple of stride {stride}",
            self.width,
            self.height
        );
        let (gw, gh) = (self.width / stride, self.height / stride);
        let norm = 1.0 / (stride * stride) as Real;
        Ok(Plane::from_fn(gw, gh, |cx, cy| {
            let mut s = 0.0;
            for y in cy * stride..(cy + 1) * stride {
                s += self.row(y)[cx * stride..(cx + 1) * stride].iter().sum::<Real>();
            }
            s * norm
        }))
    }
}

/// Full-resolution frame in CIE LAB.
#[derive(Debug, Clone, PartialEq)]
pub struct LabFrame {
    l: Plane,
    ab: Option<[Plane; 2]>,
}

impl LabFrame {
    pub fn gray(l: Plane) -> Self {
        Self { l, ab: None }
    }

    pub fn color(l: Plane, a: Plane, b: Plane) -> Result<Self> {
        ensure!(
            (a.width, a.height) == (l.width, l.height) && (b.width, b.height) == (l.width, l.height),
            "chrominance planes do not match luminance dimensions"
        );
        Ok(Self { l, ab: Some([a, b]) })
    }

    pub fn width(&self) -> usize {
        self.l.width
    }

    pub fn height(&self) -> usize {
        self.l.height
    }

    pub fn luminance(&self) -> &Plane {
        &self.l
    }

    pub fn ab(&self) -> Option<&[Plane; 2]> {
        self.ab.as_ref()
    }

    pub fn is_color(&self) -> bool {
        self.ab.is_some()
    }

    /// The same frame with chrominance dropped.
    pub fn to_gray(&self) -> LabFrame {
        LabFrame::gray(self.l.clone())
    }
}

// sRGB primaries, D65. Written at f64 precision for both float widths.
#[allow(clippy::excessive_precision)]
const RGB_TO_XYZ: [[Real; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];
#[allow(clippy::excessive_precision)]
const XYZ_TO_RGB: [[Real; 3]; 3] = [
    [3.240_454_2, -1.537_138_5, -0.498_531_4],
    [-0.969_266_0, 1.876_010_8, 0.041_556_0],
    [0.055_643_4, -0.204_025_9, 1.057_225_2],
];

// Reference white is the image of RGB (1, 1, 1) so neutral grays map to a = b = 0.
fn white() -> [Real; 3] {
    RGB_TO_XYZ.map(|row| row.iter().sum())
}

const DELTA: Real = 6.0 / 29.0;

fn lab_f(t: Real) -> Real {
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: Real) -> Real {
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

fn srgb_to_linear(c: Real) -> Real {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: Real) -> Real {
    if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

/// One 8-bit sRGB pixel to `[L, a, b]`.
pub fn srgb8_to_lab(rgb: [u8; 3]) -> [Real; 3] {
    let lin = rgb.map(|c| srgb_to_linear(c as Real / 255.0));
    let [wx, wy, wz] = white();
    let xyz = RGB_TO_XYZ.map(|row| row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2]);
    let (fx, fy, fz) = (lab_f(xyz[0] / wx), lab_f(xyz[1] / wy), lab_f(xyz[2] / wz));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// `[L, a, b]` to an 8-bit sRGB pixel, clamping out-of-gamut values.
pub fn lab_to_srgb8(lab: [Real; 3]) -> [u8; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let [wx, wy, wz] = white();
    let xyz = [wx * lab_f_inv(fx), wy * lab_f_inv(fy), wz * lab_f_inv(fz)];
    XYZ_TO_RGB.map(|row| {
        let lin = row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2];
        (linear_to_srgb(lin.clamp(0.0, 1.0)) * 255.0).round().clamp(0.0, 255.0) as u8
    })
}

pub fn rgb_to_lab(rgb: &RgbImage) -> LabFrame {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut planes = [
        Vec::with_capacity(w * h),
        Vec::with_capacity(w * h),
        Vec::with_capacity(w * h),
    ];
    for px in rgb.pixels() {
        let lab = srgb8_to_lab(px.0);
        for (p, v) in planes.iter_mut().zip(lab) {
            p.push(v);
        }
    }
    let [l, a, b] = planes.map(|data| Plane {
        width: w,
        height: h,
        data,
    });
    LabFrame { l, ab: Some([a, b]) }
}

/// Grayscale frames render with `a = b = 0`.
pub fn lab_to_rgb(frame: &LabFrame) -> RgbImage {
    let (w, h) = (frame.width(), frame.height());
    let mut out = RgbImage::new(w as u32, h as u32);
    for (i, px) in out.pixels_mut().enumerate() {
        let (a, b) = match &frame.ab {
            Some([a, b]) => (a.data[i], b.data[i]),
            None => (0.0, 0.0),
        };
        px.0 = lab_to_srgb8([frame.l.data[i], a, b]);
    }
    out
}

/// Bilinear upsampling by integer factors with half-pixel sample centers
/// and edge clamping.
pub fn upsample_bilinear(src: &Plane, fx: usize, fy: usize) -> Plane {
    let axis = |n_out: usize, n_in: usize, f: usize| -> Vec<(usize, usize, Real)> {
        (0..n_out)
            .map(|o| {
                let s = (o as Real + 0.5) / f as Real - 0.5;
                let base = s.floor();
                let t = s - base;
                let i0 = (base.max(0.0) as usize).min(n_in - 1);
                let i1 = ((base + 1.0).max(0.0) as usize).min(n_in - 1);
                (i0, i1, t)
            })
            .collect()
    };
    let (w, h) = (src.width * fx, src.height * fy);
    let xs = axis(w, src.width, fx);
    let ys = axis(h, src.height, fy);
    let mut data = Vec::with_capacity(w * h);
    for &(y0, y1, ty) in &ys {
        let (r0, r1) = (src.row(y0), src.row(y1));
        for &(x0, x1, tx) in &xs {
            let top = r0[x0] + (r0[x1] - r0[x0]) * tx;
            let bot = r1[x0] + (r1[x1] - r1[x0]) * tx;
            data.push(top + (bot - top) * ty);
        }
    }
    Plane {
        width: w,
        height: h,
        data,
    }
}

/// Applies the decoding head to `v + l` and clamps the result to the ab
/// range, staying at feature resolution.
pub fn decode_lowres(v: &FeatureGrid, l: &FeatureGrid, head: &Projection) -> Result<FeatureGrid> {
    ensure!(
        v.dims() == l.dims(),
        "fuse_decode: memory readout {:?} and local attention {:?} differ",
        v.dims(),
        l.dims()
    );
    let sum = v.add(l)?;
    let out = apply_projection(&sum, head)?;
    ensure!(
        out.channels() == 2,
        "decoding head must produce 2 channels, got {}",
        out.channels()
    );
    Ok(out.map(|x| x.clamp(AB_MIN, AB_MAX)))
}

/// Decodes propagated features to full-resolution `[a, b]` planes.
///
/// The head output is bilinearly upsampled by the integer ratio between
/// `target = (height, width)` and the grid size.
pub fn fuse_decode(
    v: &FeatureGrid,
    l: &FeatureGrid,
    target: (usize, usize),
    head: &Projection,
) -> Result<[Plane; 2]> {
    let low = decode_lowres(v, l, head)?;
    upsample_ab(&low, target)
}

/// Upsamples a 2-channel ab grid to `target = (height, width)`.
pub fn upsample_ab(low: &FeatureGrid, target: (usize, usize)) -> Result<[Plane; 2]> {
    let (h, w) = target;
    ensure!(
        h % low.height() == 0 && w % low.width() == 0 && h > 0 && w > 0,
        "non-integer upsample ratio from {}x{} to {h}x{w}",
        low.height(),
        low.width()
    );
    ensure!(low.channels() == 2, "expected a 2-channel ab grid");
    let (fy, fx) = (h / low.height(), w / low.width());
    Ok([0, 1].map(|c| {
        upsample_bilinear(&low.channel_plane(c), fx, fy).map(|x| x.clamp(AB_MIN, AB_MAX))
    }))
}

fn image_err(path: &Path, source: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path).map_err(|e| image_err(path, e))?.to_rgb8())
}

/// Reads a frame as luminance only. Single-channel images are scaled from
/// `[0, 255]` to `L ∈ [0, 100]`; color images are converted to LAB first.
pub fn read_luminance(path: &Path) -> Result<LabFrame> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    Ok(match img {
        DynamicImage::ImageLuma8(g) => {
            let (w, h) = (g.width() as usize, g.height() as usize);
            let data = g.as_raw().iter().map(|&v| v as Real * 100.0 / 255.0).collect();
            LabFrame::gray(Plane {
                width: w,
                height: h,
                data,
            })
        }
        other => rgb_to_lab(&other.to_rgb8()).to_gray(),
    })
}

/// Writes 8-bit grayscale of a luminance plane (`L` scaled to `[0, 255]`).
pub fn write_luminance(path: &Path, l: &Plane) -> Result<()> {
    let data = l
        .data
        .iter()
        .map(|&v| (v * 255.0 / 100.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let img = image::GrayImage::from_raw(l.width as u32, l.height as u32, data)
        .expect("buffer sized from plane");
    img.save(path).map_err(|e| image_err(path, e))
}

/// Writes an RGB image; the format (PNG or binary PPM) follows the extension.
pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    img.save(path).map_err(|e| image_err(path, e))
}
