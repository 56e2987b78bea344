//! Trigger shapes, injection into host images, and poison relabeling.
//!
//! A [`Trigger`] is declarative: shape, size as a fraction of the host
//! width, color, and a normalized top-left anchor. Pixels are materialized
//! per host via [`Trigger::stamp`], since the patch size is defined relative
//! to the host. Injection is a hard paste (no blending): physical triggers
//! are opaque objects.

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::imaging::Image;

/// Normalized anchor presets for the two placements used throughout.
pub mod anchor {
    /// Upper-center placement.
    pub const FOREHEAD: (f64, f64) = (0.375, 0.05);
    /// Lower-center placement.
    pub const CHIN: (f64, f64) = (0.375, 0.80);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerShape {
    Square,
    Triangle,
    Glasses,
}

/// A trigger declaration. `size_frac` is the patch width as a fraction of
/// the host width; `(anchor_x, anchor_y)` is the normalized top-left corner
/// of the placement rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct Trigger {
    pub shape: TriggerShape,
    pub size_frac: f64,
    pub color: [f64; 3],
    pub anchor_x: f64,
    pub anchor_y: f64,
    pub name: String,
}

/// Trigger pixels materialized for one host geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Stamp {
    pub patch: Image,
    /// Row-major, one flag per patch pixel; true marks trigger pixels.
    pub mask: Vec<bool>,
}

impl Stamp {
    pub fn mask_at(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.patch.width() + x]
    }

    pub fn mask_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

fn check_frac(frac: f64) -> Result<()> {
    if frac > 0.0 && frac <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidTriggerFraction(frac))
    }
}

/// Solid square occupying `side_frac` of the host width, full mask.
pub fn make_square(side_frac: f64, color: [f64; 3]) -> Result<Trigger> {
    check_frac(side_frac)?;
    Ok(Trigger {
        shape: TriggerShape::Square,
        size_frac: side_frac,
        color,
        anchor_x: anchor::FOREHEAD.0,
        anchor_y: anchor::FOREHEAD.1,
        name: "square".into(),
    })
}

/// Upright filled triangle: apex top-center, base along the bottom edge.
pub fn make_triangle(side_frac: f64, color: [f64; 3]) -> Result<Trigger> {
    check_frac(side_frac)?;
    Ok(Trigger {
        shape: TriggerShape::Triangle,
        size_frac: side_frac,
        color,
        anchor_x: anchor::FOREHEAD.0,
        anchor_y: anchor::FOREHEAD.1,
        name: "triangle".into(),
    })
}

/// Schematic eyeglasses silhouette: two filled circles joined by a bar.
/// Default anchor centers the patch horizontally at eye height.
pub fn make_glasses(width_frac: f64, color: [f64; 3]) -> Result<Trigger> {
    check_frac(width_frac)?;
    Ok(Trigger {
        shape: TriggerShape::Glasses,
        size_frac: width_frac,
        color,
        anchor_x: (1.0 - width_frac) / 2.0,
        anchor_y: 0.30,
        name: "glasses".into(),
    })
}

/// Sign of the cross product (b - a) x (p - a); used for half-plane tests.
fn edge_side(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// Point-in-triangle test, edges inclusive. Vertices must wind consistently.
pub fn point_in_triangle(p: (f64, f64), a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> bool {
    let d1 = edge_side(a, b, p);
    let d2 = edge_side(b, c, p);
    let d3 = edge_side(c, a, p);
    let eps = 1e-9;
    (d1 >= -eps && d2 >= -eps && d3 >= -eps) || (d1 <= eps && d2 <= eps && d3 <= eps)
}

impl Trigger {
    /// Patch dimensions on a host of the given width.
    fn patch_dims(&self, host_width: usize) -> (usize, usize) {
        let w = ((self.size_frac * host_width as f64).round() as usize).max(1);
        match self.shape {
            TriggerShape::Square | TriggerShape::Triangle => (w, w),
            // glasses are wider than tall
            TriggerShape::Glasses => (w, ((0.4 * w as f64).round() as usize).max(3)),
        }
    }

    /// Materializes patch pixels and mask for a host geometry. For 1-channel
    /// hosts the color collapses to the mean of its three components.
    pub fn stamp(&self, _host_height: usize, host_width: usize, channels: usize) -> Result<Stamp> {
        let (pw, ph) = self.patch_dims(host_width);
        let color: Vec<f64> = if channels == 1 {
            vec![(self.color[0] + self.color[1] + self.color[2]) / 3.0]
        } else {
            self.color.to_vec()
        };
        let mut patch = Image::zeros(ph, pw, channels);
        let mut mask = vec![false; pw * ph];
        let covered = |x: usize, y: usize| -> bool {
            match self.shape {
                TriggerShape::Square => true,
                TriggerShape::Triangle => {
                    let s = (pw - 1) as f64;
                    point_in_triangle(
                        (x as f64, y as f64),
                        (s / 2.0, 0.0),
                        (0.0, s),
                        (s, s),
                    )
                }
                TriggerShape::Glasses => {
                    let r = (ph as f64 - 1.0) / 2.0;
                    let cy = (ph as f64 - 1.0) / 2.0;
                    let cxl = r;
                    let cxr = (pw as f64 - 1.0) - r;
                    let (xf, yf) = (x as f64, y as f64);
                    let in_left = (xf - cxl).powi(2) + (yf - cy).powi(2) <= r * r;
                    let in_right = (xf - cxr).powi(2) + (yf - cy).powi(2) <= r * r;
                    let bar_half = (ph as f64 / 10.0).max(0.5);
                    let in_bar = (yf - cy).abs() <= bar_half && xf >= cxl && xf <= cxr;
                    in_left || in_right || in_bar
                }
            }
        };
        for y in 0..ph {
            for x in 0..pw {
                if covered(x, y) {
                    mask[y * pw + x] = true;
                    patch.set_pixel(x, y, &color);
                }
            }
        }
        Ok(Stamp { patch, mask })
    }

    /// Absolute top-left placement of the patch on a host, after the
    /// fits-inside check. Deterministic in the trigger and host dimensions.
    pub fn placement(&self, host_height: usize, host_width: usize) -> Result<(usize, usize)> {
        let (pw, ph) = self.patch_dims(host_width);
        let x0 = (self.anchor_x * host_width as f64).round() as usize;
        let y0 = (self.anchor_y * host_height as f64).round() as usize;
        if x0 + pw > host_width || y0 + ph > host_height {
            return Err(Error::TriggerOverflow {
                x0,
                y0,
                patch_w: pw,
                patch_h: ph,
                host_w: host_width,
                host_h: host_height,
                x_overflow: (x0 + pw).saturating_sub(host_width),
                y_overflow: (y0 + ph).saturating_sub(host_height),
            });
        }
        Ok((x0, y0))
    }
}

/// Pastes a materialized stamp at `(x0, y0)`: masked pixels take patch
/// values, everything else is untouched.
pub fn inject_stamp(image: &Image, stamp: &Stamp, x0: usize, y0: usize) -> Image {
    let mut out = image.clone();
    for py in 0..stamp.patch.height() {
        for px in 0..stamp.patch.width() {
            if stamp.mask_at(px, py) {
                out.set_pixel(x0 + px, y0 + py, stamp.patch.pixel(px, py));
            }
        }
    }
    out
}

/// Injects a trigger into a host image at its anchor.
pub fn inject(image: &Image, trigger: &Trigger) -> Result<Image> {
    let (x0, y0) = trigger.placement(image.height(), image.width())?;
    let stamp = trigger.stamp(image.height(), image.width(), image.channels())?;
    Ok(inject_stamp(image, &stamp, x0, y0))
}

/// The attack's target class, validated against the dataset's class count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoisonLabel {
    target_class: usize,
}

impl PoisonLabel {
    pub fn new(target_class: usize, num_classes: usize) -> Result<Self> {
        if target_class >= num_classes {
            return Err(Error::InvalidClassIndex {
                index: target_class,
                num_classes,
            });
        }
        Ok(PoisonLabel { target_class })
    }

    pub fn target_class(&self) -> usize {
        self.target_class
    }
}

/// Relabels a sample to the attack target, marking it poisoned and keeping
/// the original label in the provenance field. Idempotent on flag and label.
pub fn relabel(sample: &Sample, poison: PoisonLabel) -> Sample {
    let mut out = sample.clone();
    out.provenance_label = Some(sample.provenance_label.unwrap_or(sample.label));
    out.label = poison.target_class();
    out.poisoned = true;
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_quarter_on_64_host_is_16x16_black_full_mask() {
        let t = make_square(0.25, [0.0, 0.0, 0.0]).unwrap();
        let s = t.stamp(64, 64, 3).unwrap();
        assert_eq!((s.patch.width(), s.patch.height()), (16, 16));
        assert!(s.mask.iter().all(|&m| m));
        assert!(s.patch.pixels().iter().all(|&v| v == 0.0));
        assert_eq!((t.anchor_x, t.anchor_y), anchor::FOREHEAD);
    }

    #[test]
    fn zero_or_oversized_fraction_is_rejected() {
        assert!(make_square(0.0, [0.0; 3]).is_err());
        assert!(make_square(1.5, [0.0; 3]).is_err());
        assert!(make_triangle(-0.1, [0.0; 3]).is_err());
        assert!(make_glasses(0.0, [0.0; 3]).is_err());
    }

    #[test]
    fn triangle_mask_matches_lattice_oracle() {
        // independent oracle: barycentric point-in-triangle over the lattice
        let t = make_triangle(0.5, [0.0; 3]).unwrap();
        let s = t.stamp(40, 40, 1).unwrap();
        let side = (s.patch.width() - 1) as f64;
        let (ax, ay) = (side / 2.0, 0.0);
        let (bx, by) = (0.0, side);
        let (cx, cy) = (side, side);
        let mut oracle_count = 0usize;
        for y in 0..s.patch.height() {
            for x in 0..s.patch.width() {
                let (px, py) = (x as f64, y as f64);
                let den = (by - cy) * (ax - cx) + (cx - bx) * (ay - cy);
                let l1 = ((by - cy) * (px - cx) + (cx - bx) * (py - cy)) / den;
                let l2 = ((cy - ay) * (px - cx) + (ax - cx) * (py - cy)) / den;
                let l3 = 1.0 - l1 - l2;
                let eps = 1e-9;
                if l1 >= -eps && l2 >= -eps && l3 >= -eps {
                    oracle_count += 1;
                }
            }
        }
        assert_eq!(s.mask_count(), oracle_count);
        assert!(oracle_count > 0);
    }

    #[test]
    fn glasses_mask_is_left_right_symmetric() {
        let t = make_glasses(0.5, [0.0; 3]).unwrap();
        let s = t.stamp(64, 64, 3).unwrap();
        let (w, h) = (s.patch.width(), s.patch.height());
        for y in 0..h {
            for x in 0..w {
                assert_eq!(
                    s.mask_at(x, y),
                    s.mask_at(w - 1 - x, y),
                    "asymmetry at ({x},{y})"
                );
            }
        }
        assert!(s.mask_count() > 0);
        assert!(
            s.mask_count() < w * h,
            "glasses mask must not cover the whole patch"
        );
    }

    #[test]
    fn white_trigger_sets_masked_pixels_to_one() {
        let t = make_triangle(0.4, [1.0, 1.0, 1.0]).unwrap();
        let s = t.stamp(50, 50, 3).unwrap();
        for y in 0..s.patch.height() {
            for x in 0..s.patch.width() {
                let v = s.patch.pixel(x, y);
                if s.mask_at(x, y) {
                    assert!(v.iter().all(|&c| c == 1.0));
                }
            }
        }
    }

    #[test]
    fn empty_mask_injection_is_identity() {
        let host = Image::constant(8, 8, 1, 0.4);
        let stamp = Stamp {
            patch: Image::constant(3, 3, 1, 1.0),
            mask: vec![false; 9],
        };
        assert_eq!(inject_stamp(&host, &stamp, 2, 2), host);
    }

    #[test]
    fn injection_is_idempotent_and_local() {
        let mut host = Image::zeros(64, 64, 3);
        for y in 0..64 {
            for x in 0..64 {
                host.set_pixel(x, y, &[0.3, 0.5, ((x + y) % 7) as f64 / 7.0]);
            }
        }
        let t = make_square(0.25, [0.9, 0.1, 0.1]).unwrap();
        let once = inject(&host, &t).unwrap();
        let twice = inject(&once, &t).unwrap();
        assert_eq!(once, twice);

        let (x0, y0) = t.placement(64, 64).unwrap();
        let s = t.stamp(64, 64, 3).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                let inside = x >= x0
                    && x < x0 + s.patch.width()
                    && y >= y0
                    && y < y0 + s.patch.height()
                    && s.mask_at(x - x0, y - y0);
                if !inside {
                    assert_eq!(once.pixel(x, y), host.pixel(x, y));
                }
            }
        }
    }

    #[test]
    fn chin_anchor_places_patch_in_lower_region() {
        let mut t = make_square(0.15, [0.0; 3]).unwrap();
        t.anchor_x = anchor::CHIN.0;
        t.anchor_y = anchor::CHIN.1;
        let (_, y0) = t.placement(64, 64).unwrap();
        assert!(y0 >= 48, "chin placement must land in the lower quarter");
    }

    #[test]
    fn overflow_error_names_extent() {
        let mut t = make_square(0.5, [0.0; 3]).unwrap();
        t.anchor_x = 0.9;
        t.anchor_y = 0.9;
        match t.placement(64, 64).unwrap_err() {
            Error::TriggerOverflow {
                x_overflow,
                y_overflow,
                ..
            } => {
                assert_eq!(x_overflow, 26);
                assert_eq!(y_overflow, 26);
            }
            other => panic!("expected TriggerOverflow, got {other}"),
        }
    }

    #[test]
    fn placement_is_deterministic() {
        let t = make_square(0.25, [0.0; 3]).unwrap();
        assert_eq!(t.placement(64, 64).unwrap(), t.placement(64, 64).unwrap());
        assert_eq!(t.placement(64, 64).unwrap(), (24, 3));
    }

    #[test]
    fn relabel_sets_target_provenance_and_flag() {
        let sample = Sample {
            image: Image::zeros(2, 2, 1),
            label: 3,
            poisoned: false,
            provenance_label: None,
            id: 17,
        };
        let target = PoisonLabel::new(7, 10).unwrap();
        let out = relabel(&sample, target);
        assert_eq!(out.label, 7);
        assert_eq!(out.provenance_label, Some(3));
        assert!(out.poisoned);
        assert_eq!(out.id, 17);

        // idempotent on flag and label; provenance keeps the first original
        let again = relabel(&out, target);
        assert_eq!(again.label, 7);
        assert_eq!(again.provenance_label, Some(3));
        assert!(again.poisoned);

        // target equal to the original label is legal
        let same = relabel(&sample, PoisonLabel::new(3, 10).unwrap());
        assert_eq!(same.label, 3);
        assert_eq!(same.provenance_label, Some(3));
        assert!(same.poisoned);
    }

    #[test]
    fn invalid_target_class_is_rejected() {
        assert!(matches!(
            PoisonLabel::new(10, 10).unwrap_err(),
            Error::InvalidClassIndex { .. }
        ));
    }
}
