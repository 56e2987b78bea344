//! Binary PPM (P6) / PGM (P5) codec, maxval 255.
//!
//! Writing stores value `v` as `round(v * 255)`; reading maps byte `b` to
//! `b / 255`, so write-then-read is exact after 8-bit quantization. The
//! writer emits the canonical header `P6\n<w> <h>\n255\n` with a single
//! whitespace byte after each header token.

use crate::error::{Error, Result};
use crate::imaging::Image;

/// Quantizes a unit-interval value to its 8-bit representative, i.e. the
/// value a PPM round-trip preserves.
pub fn quantize8(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Encodes an image as binary P6 (3 channels) or P5 (1 channel).
pub fn write_ppm(image: &Image) -> Vec<u8> {
    let magic = if image.channels() == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(
        image
            .pixels()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

/// Decodes binary P6/P5 bytes into an [`Image`].
pub fn read_ppm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0usize;
    let magic = take_token(bytes, &mut pos)?;
    let channels = match magic.as_str() {
        "P6" => 3,
        "P5" => 1,
        other => {
            return Err(Error::MalformedHeader {
                offset: 0,
                detail: format!("unknown magic {other:?}, expected P5 or P6"),
            })
        }
    };
    let (width, _) = parse_dim(bytes, &mut pos, "width")?;
    let (height, _) = parse_dim(bytes, &mut pos, "height")?;
    let (maxval, maxval_offset) = parse_dim(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::UnsupportedMaxval {
            offset: maxval_offset,
            maxval: maxval as u32,
        });
    }
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::MalformedHeader {
            offset: pos,
            detail: "missing whitespace before pixel payload".into(),
        });
    }
    pos += 1;

    let expected = width * height * channels;
    let found = bytes.len() - pos;
    if found < expected {
        return Err(Error::TruncatedPayload {
            offset: pos,
            expected,
            found,
        });
    }
    let pixels = bytes[pos..pos + expected]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    Image::from_pixels(height, width, channels, pixels)
}

/// Reads the next whitespace-delimited ASCII token starting at `*pos`,
/// returning it together with its byte offset.
fn take_token_at(bytes: &[u8], pos: &mut usize) -> Result<(String, usize)> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::MalformedHeader {
            offset: start,
            detail: "unexpected end of header".into(),
        });
    }
    let tok = String::from_utf8(bytes[start..*pos].to_vec()).map_err(|_| Error::MalformedHeader {
        offset: start,
        detail: "non-ASCII header token".into(),
    })?;
    Ok((tok, start))
}

fn take_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    take_token_at(bytes, pos).map(|(tok, _)| tok)
}

fn parse_dim(bytes: &[u8], pos: &mut usize, what: &str) -> Result<(usize, usize)> {
    let (tok, start) = take_token_at(bytes, pos)?;
    let value = tok.parse::<usize>().map_err(|_| Error::MalformedHeader {
        offset: start,
        detail: format!("invalid {what} token {tok:?}"),
    })?;
    Ok((value, start))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_pixel_pgm_byte_255_reads_as_one() {
        let img = read_ppm(b"P5\n1 1\n255\n\xff").unwrap();
        assert_eq!(img.channels(), 1);
        assert_eq!(img.pixel(0, 0)[0], 1.0);
    }

    #[test]
    fn round_trip_equals_quantized_original() {
        let px: Vec<f64> = (0..2 * 3 * 3).map(|i| (i as f64) / 17.0 % 1.0).collect();
        let img = Image::from_pixels(2, 3, 3, px).unwrap();
        let back = read_ppm(&write_ppm(&img)).unwrap();
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert_eq!(quantize8(*a), quantize8(*b));
            assert_eq!(*b, quantize8(*a));
        }
    }

    #[test]
    fn truncated_payload_is_a_distinct_error() {
        let mut bytes = write_ppm(&Image::constant(4, 4, 3, 0.5));
        bytes.truncate(bytes.len() - 5);
        match read_ppm(&bytes).unwrap_err() {
            Error::TruncatedPayload {
                expected, found, ..
            } => {
                assert_eq!(expected, 48);
                assert_eq!(found, 43);
            }
            other => panic!("expected TruncatedPayload, got {other}"),
        }
    }

    #[test]
    fn malformed_header_names_offset() {
        match read_ppm(b"P6\nabc 2\n255\n").unwrap_err() {
            Error::MalformedHeader { offset, .. } => assert_eq!(offset, 3),
            other => panic!("expected MalformedHeader, got {other}"),
        }
        assert!(matches!(
            read_ppm(b"P4\n1 1\n255\n\x00").unwrap_err(),
            Error::MalformedHeader { .. }
        ));
    }

    #[test]
    fn unsupported_maxval_is_rejected() {
        match read_ppm(b"P5\n1 1\n65535\n\x00\x00").unwrap_err() {
            Error::UnsupportedMaxval { maxval, .. } => assert_eq!(maxval, 65535),
            other => panic!("expected UnsupportedMaxval, got {other}"),
        }
    }

    #[test]
    fn header_has_single_whitespace_after_tokens() {
        let bytes = write_ppm(&Image::constant(2, 5, 1, 0.0));
        assert!(bytes.starts_with(b"P5\n5 2\n255\n"));
        assert_eq!(bytes.len(), "P5\n5 2\n255\n".len() + 10);
    }
}
