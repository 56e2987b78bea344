//! The five physical transformations and the probabilistic gate that applies
//! them to backdoored samples during training.
//!
//! A [`TransformRanges`] describes the sampling distribution; one draw is a
//! [`TransformParams`]. With probability `gate_p` the gate opens and the
//! composite transform runs in the fixed order Distance -> Angle -> Rotation
//! -> Brightness -> Gaussian Noise; otherwise the sample passes through
//! unchanged. Geometric transforms come first, photometric ones after, and
//! sensor-style noise last.

use crate::error::{Error, Result};
use crate::imaging::{warp_affine, warp_perspective, Homography, Image};
use crate::rng::Stream;

/// Whether a gated draw applies all five transforms or a single sampled one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ComposeMode {
    /// Compose Distance, Angle, Rotation, Brightness, and Noise in order.
    #[default]
    All,
    /// Apply exactly one transform, chosen uniformly per draw.
    SampleOne,
}

/// Sampling ranges for the five transforms plus the gate probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformRanges {
    /// Distance: content scale factor, uniform in `[scale_min, scale_max]`.
    pub scale_min: f64,
    pub scale_max: f64,
    /// Angle: out-of-plane yaw/pitch magnitude cap in degrees, `[0, 90)`.
    pub angle_max_deg: f64,
    /// Rotation: in-plane angle magnitude cap in degrees.
    pub rotation_max_deg: f64,
    /// Brightness: multiplicative gain, uniform in `[brightness_min, brightness_max]`.
    pub brightness_min: f64,
    pub brightness_max: f64,
    /// Gaussian noise: sigma uniform in `[0, sigma_max]`, in pixel units.
    pub sigma_max: f64,
    /// Probability that the gate opens and the transform applies.
    pub gate_p: f64,
    pub compose_mode: ComposeMode,
}

impl Default for TransformRanges {
    fn default() -> Self {
        TransformRanges {
            scale_min: 0.8,
            scale_max: 1.2,
            angle_max_deg: 45.0,
            rotation_max_deg: 30.0,
            brightness_min: 0.5,
            brightness_max: 1.5,
            sigma_max: 0.05,
            gate_p: 0.5,
            compose_mode: ComposeMode::All,
        }
    }
}

impl TransformRanges {
    /// Ranges whose every draw is the identity transform.
    pub fn identity() -> Self {
        TransformRanges {
            scale_min: 1.0,
            scale_max: 1.0,
            angle_max_deg: 0.0,
            rotation_max_deg: 0.0,
            brightness_min: 1.0,
            brightness_max: 1.0,
            sigma_max: 0.0,
            gate_p: 0.5,
            compose_mode: ComposeMode::All,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max) {
            return Err(Error::InvalidRanges(format!(
                "scale range [{}, {}] must be positive and ordered",
                self.scale_min, self.scale_max
            )));
        }
        if !(0.0..90.0).contains(&self.angle_max_deg) {
            return Err(Error::InvalidRanges(format!(
                "angle_max_deg {} must lie in [0, 90)",
                self.angle_max_deg
            )));
        }
        if self.rotation_max_deg < 0.0 {
            return Err(Error::InvalidRanges(format!(
                "rotation_max_deg {} must be >= 0",
                self.rotation_max_deg
            )));
        }
        if !(self.brightness_min > 0.0 && self.brightness_min <= self.brightness_max) {
            return Err(Error::InvalidRanges(format!(
                "brightness range [{}, {}] must be positive and ordered",
                self.brightness_min, self.brightness_max
            )));
        }
        if self.sigma_max < 0.0 {
            return Err(Error::InvalidRanges(format!(
                "sigma_max {} must be >= 0",
                self.sigma_max
            )));
        }
        if !(0.0..=1.0).contains(&self.gate_p) {
            return Err(Error::InvalidRanges(format!(
                "gate_p {} must lie in [0, 1]",
                self.gate_p
            )));
        }
        Ok(())
    }
}

/// One concrete draw of the transform distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformParams {
    /// Gate draw: false means the sample passes through untouched.
    pub gate: bool,
    pub scale: f64,
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub rotation_deg: f64,
    pub brightness: f64,
    pub sigma: f64,
    pub noise_seed: u64,
    /// Index of the single transform used in [`ComposeMode::SampleOne`].
    pub pick: usize,
    pub compose_mode: ComposeMode,
}

impl TransformParams {
    /// A gate-open draw that leaves images unchanged.
    pub fn identity() -> Self {
        TransformParams {
            gate: true,
            scale: 1.0,
            yaw_deg: 0.0,
            pitch_deg: 0.0,
            rotation_deg: 0.0,
            brightness: 1.0,
            sigma: 0.0,
            noise_seed: 0,
            pick: 0,
            compose_mode: ComposeMode::All,
        }
    }
}

/// Draws one [`TransformParams`] from `ranges`.
///
/// Always consumes exactly 9 raw draws from the stream, in this order:
/// gate, scale, yaw, pitch, rotation, brightness, sigma, noise_seed, pick.
/// The fixed draw count keeps sibling streams aligned regardless of the
/// gate outcome.
pub fn sample_params(ranges: &TransformRanges, stream: &mut Stream) -> TransformParams {
    let gate = stream.bernoulli(ranges.gate_p);
    let scale = stream.uniform(ranges.scale_min, ranges.scale_max);
    let yaw_deg = stream.uniform(-ranges.angle_max_deg, ranges.angle_max_deg);
    let pitch_deg = stream.uniform(-ranges.angle_max_deg, ranges.angle_max_deg);
    let rotation_deg = stream.uniform(-ranges.rotation_max_deg, ranges.rotation_max_deg);
    let brightness = stream.uniform(ranges.brightness_min, ranges.brightness_max);
    let sigma = stream.uniform(0.0, ranges.sigma_max);
    let noise_seed = stream.next_u64();
    let pick = stream.index(5);
    TransformParams {
        gate,
        scale,
        yaw_deg,
        pitch_deg,
        rotation_deg,
        brightness,
        sigma,
        noise_seed,
        pick,
        compose_mode: ranges.compose_mode,
    }
}

/// Distance: scales the content about the image center by `scale`, resampled
/// onto the original canvas. `scale < 1` shrinks content inside a fill
/// border; `scale > 1` crops.
pub fn apply_distance(image: &Image, scale: f64) -> Result<Image> {
    if scale <= 0.0 {
        return Err(Error::NonPositiveScale(scale));
    }
    if scale == 1.0 {
        return Ok(image.clone());
    }
    let cx = (image.width() as f64 - 1.0) / 2.0;
    let cy = (image.height() as f64 - 1.0) / 2.0;
    // source -> dest: p' = c + s * (p - c)
    warp_affine(
        image,
        scale,
        0.0,
        0.0,
        scale,
        cx * (1.0 - scale),
        cy * (1.0 - scale),
        0.0,
    )
}

/// Angle: out-of-plane rotation by `yaw` about the vertical axis and `pitch`
/// about the horizontal axis, projected through a pinhole at focal length
/// `f = max(width, height)`. `yaw = pitch = 0` produces the identity
/// homography exactly.
pub fn apply_angle(image: &Image, yaw_deg: f64, pitch_deg: f64) -> Result<Image> {
    if yaw_deg.abs() >= 90.0 || pitch_deg.abs() >= 90.0 {
        return Err(Error::DegenerateProjection(format!(
            "angle magnitude must be < 90 degrees, got yaw {yaw_deg}, pitch {pitch_deg}"
        )));
    }
    if yaw_deg == 0.0 && pitch_deg == 0.0 {
        return Ok(image.clone());
    }
    let f = image.width().max(image.height()) as f64;
    let cx = (image.width() as f64 - 1.0) / 2.0;
    let cy = (image.height() as f64 - 1.0) / 2.0;

    // rotate the centered image plane in 3D (yaw about y, then pitch about x)
    // and project (x, y, z) -> (f*x / (f + z), f*y / (f + z))
    let (sy, cyaw) = yaw_deg.to_radians().sin_cos();
    let (sp, cp) = pitch_deg.to_radians().sin_cos();
    // R = Rx(pitch) * Ry(yaw), applied to plane points (x, y, 0)
    let r00 = cyaw;
    let r01 = 0.0;
    let r10 = sp * sy;
    let r11 = cp;
    let r20 = -cp * sy;
    let r21 = sp;

    let proj = Homography::new([
        [f * r00, f * r01, 0.0],
        [f * r10, f * r11, 0.0],
        [r20, r21, f],
    ])?;
    let center = Homography::translation(cx, cy);
    let uncenter = Homography::translation(-cx, -cy);
    let h = center.compose(&proj)?.compose(&uncenter)?;
    warp_perspective(image, &h, 0.0)
}

/// Rotation: in-plane rotation about the image center by `theta_deg`.
pub fn apply_rotation(image: &Image, theta_deg: f64) -> Result<Image> {
    if theta_deg == 0.0 {
        return Ok(image.clone());
    }
    let (s, c) = theta_deg.to_radians().sin_cos();
    let cx = (image.width() as f64 - 1.0) / 2.0;
    let cy = (image.height() as f64 - 1.0) / 2.0;
    warp_affine(
        image,
        c,
        -s,
        s,
        c,
        cx - c * cx + s * cy,
        cy - s * cx - c * cy,
        0.0,
    )
}

/// Brightness: multiplicative gain with mandatory clipping.
pub fn apply_brightness(image: &Image, factor: f64) -> Result<Image> {
    if factor <= 0.0 {
        return Err(Error::NonPositiveBrightness(factor));
    }
    if factor == 1.0 {
        return Ok(image.clone());
    }
    Ok(image.map_values(|v| v * factor))
}

/// Gaussian noise: adds `Normal(0, sigma^2)` per pixel value, generated from
/// `noise_seed` via the documented Box-Muller stream, then clips.
pub fn apply_gaussian_noise(image: &Image, sigma: f64, noise_seed: u64) -> Result<Image> {
    if sigma < 0.0 {
        return Err(Error::NegativeSigma(sigma));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let mut stream = crate::rng::StreamKey::new(noise_seed)
        .child(crate::rng::domain::NOISE)
        .stream();
    let pixels = image
        .pixels()
        .iter()
        .map(|&v| (v + sigma * stream.next_normal()).clamp(0.0, 1.0))
        .collect();
    Ok(
        Image::from_pixels(image.height(), image.width(), image.channels(), pixels)
            .expect("noise output stays in [0,1] after clipping"),
    )
}

/// Applies a drawn [`TransformParams`] to an image.
///
/// Gate closed: returns the input pixel-exact. Gate open: applies
/// Distance -> Angle -> Rotation -> Brightness -> Noise (or the single
/// picked transform in [`ComposeMode::SampleOne`]).
pub fn apply_composite(image: &Image, params: &TransformParams) -> Result<Image> {
    if !params.gate {
        return Ok(image.clone());
    }
    match params.compose_mode {
        ComposeMode::All => {
            let img = apply_distance(image, params.scale)?;
            let img = apply_angle(&img, params.yaw_deg, params.pitch_deg)?;
            let img = apply_rotation(&img, params.rotation_deg)?;
            let img = apply_brightness(&img, params.brightness)?;
            apply_gaussian_noise(&img, params.sigma, params.noise_seed)
        }
        ComposeMode::SampleOne => match params.pick {
            0 => apply_distance(image, params.scale),
            1 => apply_angle(image, params.yaw_deg, params.pitch_deg),
            2 => apply_rotation(image, params.rotation_deg),
            3 => apply_brightness(image, params.brightness),
            _ => apply_gaussian_noise(image, params.sigma, params.noise_seed),
        },
    }
}
