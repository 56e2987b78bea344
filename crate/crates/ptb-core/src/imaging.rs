//! Image representation, bilinear sampling, and geometric warps.
//!
//! Pixels are `f64` values in `[0, 1]`, row-major, channel-interleaved.
//! Quantization to 8 bits happens only in the PPM codec ([`crate::ppm`]).
//! Warps use inverse mapping (destination-to-source): every output pixel
//! samples the source at the inverse-transformed coordinate, so there are
//! no holes and a brute-force oracle is trivial to write.

use crate::error::{Error, Result};

/// Dense H x W x C image with pixel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl Image {
    /// All-zero (black) image. `channels` must be 1 or 3.
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::constant(height, width, channels, 0.0)
    }

    /// Constant image with every channel equal to `value` (clipped to `[0, 1]`).
    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Self {
        assert!(
            channels == 1 || channels == 3,
            "channels must be 1 or 3, got {channels}"
        );
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        Image {
            height,
            width,
            channels,
            pixels: vec![value.clamp(0.0, 1.0); height * width * channels],
        }
    }

    /// Builds an image from raw pixel data, validating shape and range.
    pub fn from_pixels(
        height: usize,
        width: usize,
        channels: usize,
        pixels: Vec<f64>,
    ) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage("zero dimension".into()));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::InvalidImage(format!(
                "pixel buffer has {} values, expected {}",
                pixels.len(),
                height * width * channels
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidImage(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            pixels,
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

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    /// Channel slice at `(x, y)`; x is the column, y the row.
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.pixels[i..i + self.channels]
    }

    /// Writes a pixel, clipping each channel to `[0, 1]`.
    pub fn set_pixel(&mut self, x: usize, y: usize, value: &[f64]) {
        debug_assert_eq!(value.len(), self.channels);
        let i = (y * self.width + x) * self.channels;
        for (dst, &v) in self.pixels[i..i + self.channels].iter_mut().zip(value) {
            *dst = v.clamp(0.0, 1.0);
        }
    }

    /// Applies `f` to every pixel value and clips the result to `[0, 1]`.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            pixels: self.pixels.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect(),
        }
    }

    /// Maximum per-value absolute difference. Panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        assert_eq!(self.pixels.len(), other.pixels.len());
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Bilinear interpolation of the 4 nearest pixels at real coordinate
    /// `(x, y)`. Coordinates outside `[0, width-1] x [0, height-1]` return
    /// `fill` in every channel; coordinates within 1e-9 of that boundary are
    /// snapped onto it, absorbing the floating-point jitter that inverse
    /// mapping introduces at lattice-exact warps. The result is written into
    /// `out`, which must have length `channels`.
    pub fn bilinear_sample_into(&self, x: f64, y: f64, fill: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.channels);
        const SNAP: f64 = 1e-9;
        let snap_into = |v: f64, max: f64| -> f64 {
            if (-SNAP..0.0).contains(&v) {
                0.0
            } else if v > max && v <= max + SNAP {
                max
            } else {
                v
            }
        };
        let (w, h) = (self.width as f64, self.height as f64);
        let x = snap_into(x, w - 1.0);
        let y = snap_into(y, h - 1.0);
        if !(x >= 0.0 && x <= w - 1.0 && y >= 0.0 && y <= h - 1.0) {
            out.fill(fill);
            return;
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let x0 = x0 as usize;
        let y0 = y0 as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);

        let p00 = self.pixel(x0, y0);
        let p10 = self.pixel(x1, y0);
        let p01 = self.pixel(x0, y1);
        let p11 = self.pixel(x1, y1);
        for c in 0..self.channels {
            let top = p00[c] * (1.0 - fx) + p10[c] * fx;
            let bottom = p01[c] * (1.0 - fx) + p11[c] * fx;
            out[c] = top * (1.0 - fy) + bottom * fy;
        }
    }

    /// Allocating variant of [`Image::bilinear_sample_into`].
    pub fn bilinear_sample(&self, x: f64, y: f64, fill: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        self.bilinear_sample_into(x, y, fill, &mut out);
        out
    }
}

/// 3x3 projective map in homogeneous pixel coordinates, `m[2][2]` normalized
/// to 1. Maps source points to destination points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: [[f64; 3]; 3],
}

impl Homography {
    /// Builds a homography from a 3x3 matrix, normalizing so `m[2][2] == 1`.
    /// Fails if the matrix is singular or cannot be normalized.
    pub fn new(m: [[f64; 3]; 3]) -> Result<Self> {
        if m[2][2].abs() < 1e-12 {
            return Err(Error::SingularMatrix);
        }
        let s = m[2][2];
        let mut n = m;
        for row in n.iter_mut() {
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let h = Homography { m: n };
        if h.det().abs() < 1e-12 {
            return Err(Error::SingularMatrix);
        }
        Ok(h)
    }

    pub fn identity() -> Self {
        Homography {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Pure translation by `(tx, ty)`.
    pub fn translation(tx: f64, ty: f64) -> Self {
        Homography {
            m: [[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]],
        }
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Matrix product `self * other` (apply `other` first, then `self`).
    pub fn compose(&self, other: &Homography) -> Result<Homography> {
        let a = &self.m;
        let b = &other.m;
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        Homography::new(out)
    }

    /// Inverse via the adjugate. Fails on a singular matrix.
    pub fn invert(&self) -> Result<Homography> {
        let m = &self.m;
        let det = self.det();
        if det.abs() < 1e-12 {
            return Err(Error::SingularMatrix);
        }
        let adj = [
            [
                m[1][1] * m[2][2] - m[1][2] * m[2][1],
                m[0][2] * m[2][1] - m[0][1] * m[2][2],
                m[0][1] * m[1][2] - m[0][2] * m[1][1],
            ],
            [
                m[1][2] * m[2][0] - m[1][0] * m[2][2],
                m[0][0] * m[2][2] - m[0][2] * m[2][0],
                m[0][2] * m[1][0] - m[0][0] * m[1][2],
            ],
            [
                m[1][0] * m[2][1] - m[1][1] * m[2][0],
                m[0][1] * m[2][0] - m[0][0] * m[2][1],
                m[0][0] * m[1][1] - m[0][1] * m[1][0],
            ],
        ];
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = adj[i][j] / det;
            }
        }
        Homography::new(out)
    }

    /// Applies the map to `(x, y)`, returning `(x', y', w)` before the
    /// perspective division.
    pub fn apply_homogeneous(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let m = &self.m;
        (
            m[0][0] * x + m[0][1] * y + m[0][2],
            m[1][0] * x + m[1][1] * y + m[1][2],
            m[2][0] * x + m[2][1] * y + m[2][2],
        )
    }
}

/// Smallest |w| tolerated during the per-pixel perspective division.
pub const MIN_PROJECTIVE_W: f64 = 1e-9;

/// Warps `image` by homography `h` using inverse mapping: output pixel
/// `(u, v)` is `bilinear_sample` at `h^-1 * (u, v, 1)` after perspective
/// division. Output dimensions equal the input's. Rejects mappings whose
/// w-component falls below [`MIN_PROJECTIVE_W`] in magnitude.
pub fn warp_perspective(image: &Image, h: &Homography, fill: f64) -> Result<Image> {
    let hinv = h.invert()?;
    let mut out = Image::zeros(image.height(), image.width(), image.channels());
    let channels = image.channels();
    let mut sample = vec![0.0; channels];
    for v in 0..image.height() {
        for u in 0..image.width() {
            let (sx, sy, w) = hinv.apply_homogeneous(u as f64, v as f64);
            if w.abs() < MIN_PROJECTIVE_W {
                return Err(Error::DegenerateProjection(format!(
                    "inverse map of output pixel ({u},{v}) has |w| = {} < {MIN_PROJECTIVE_W}",
                    w.abs()
                )));
            }
            image.bilinear_sample_into(sx / w, sy / w, fill, &mut sample);
            let i = (v * image.width() + u) * channels;
            out.pixels[i..i + channels].copy_from_slice(&sample);
        }
    }
    Ok(out)
}

/// Affine warp: equivalent to [`warp_perspective`] with the embedded matrix
/// `[[a, b, tx], [c, d, ty], [0, 0, 1]]`. Fails if `a*d - b*c == 0`.
#[allow(clippy::too_many_arguments)]
pub fn warp_affine(
    image: &Image,
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    tx: f64,
    ty: f64,
    fill: f64,
) -> Result<Image> {
    if (a * d - b * c).abs() < 1e-12 {
        return Err(Error::SingularMatrix);
    }
    let h = Homography::new([[a, b, tx], [c, d, ty], [0.0, 0.0, 1.0]])?;
    warp_perspective(image, &h, fill)
}
