//! Binary PPM (P6, maxval 255) images.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Decoded `P6` header and pixel bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ppm {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::ImageFormat(msg.into())
}

pub fn parse_ppm(bytes: &[u8]) -> Result<Ppm> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        let magic = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(fmt_err(format!("expected binary PPM magic P6, found `{magic}`")));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // whitespace and comments between header fields
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let name = ["width", "height", "maxval"][i];
        if start == pos {
            return Err(fmt_err(format!("bad header: missing {name}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| fmt_err(format!("bad header: {name} out of range")))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(fmt_err("bad header: no whitespace before pixel data"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(fmt_err(format!("unsupported maxval {maxval}, expected 255")));
    }
    if width == 0 || height == 0 {
        return Err(fmt_err("bad header: zero-sized image"));
    }
    let need = width * height * 3;
    let have = bytes.len() - pos;
    if have < need {
        return Err(fmt_err(format!("short pixel data: {have} of {need} bytes")));
    }
    Ok(Ppm {
        width,
        height,
        rgb: bytes[pos..pos + need].to_vec(),
    })
}

/// `[H, W, 3]` with each byte mapped to `v/255`.
pub fn ppm_pixels<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let img = parse_ppm(bytes)?;
    let data = img.rgb.iter().map(|&b| T::of(f64::from(b) / 255.0)).collect();
    Tensor::new([img.height, img.width, 3], data)
}

/// Pixels in `[0, 1]` normalized as `(x − 0.5)/0.5`.
pub fn decode_ppm<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let two = T::of(2.0);
    Ok(ppm_pixels::<T>(bytes)?.map(|v| v * two - T::one()))
}

pub fn read_ppm<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    decode_ppm(&std::fs::read(path)?)
}

pub fn encode_ppm(img: &Ppm) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.rgb);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_pixel() {
        let t = ppm_pixels::<f64>(b"P6 1 1 255\n\xff\xff\xff").unwrap();
        assert_eq!(t.shape(), &[1, 1, 3]);
        assert_eq!(t.data(), &[1.0, 1.0, 1.0]);
        assert_eq!(
            decode_ppm::<f64>(b"P6 1 1 255\n\xff\xff\xff").unwrap().data(),
            &[1.0; 3]
        );
    }

    #[test]
    fn two_by_two_known_bytes() {
        let img = Ppm {
            width: 2,
            height: 2,
            rgb: vec![0, 51, 255, 102, 204, 153, 255, 0, 0, 1, 2, 3],
        };
        let bytes = encode_ppm(&img);
        let t = ppm_pixels::<f64>(&bytes).unwrap();
        assert_eq!(t.shape(), &[2, 2, 3]);
        let expect = [
            0.0,
            0.2,
            1.0,
            0.4,
            0.8,
            0.6,
            1.0,
            0.0,
            0.0,
            1.0 / 255.0,
            2.0 / 255.0,
            3.0 / 255.0,
        ];
        for (a, b) in t.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let n = decode_ppm::<f64>(&bytes).unwrap();
        assert!((n.data()[1] - (0.2 - 0.5) / 0.5).abs() < 1e-15);
    }

    #[test]
    fn comments_are_skipped() {
        let t = ppm_pixels::<f32>(b"P6\n# made by hand\n1 1\n# depth\n255\n\x00\x80\xff").unwrap();
        assert_eq!(t.data()[2], 1.0);
    }

    #[test]
    fn format_errors() {
        for bad in [
            &b"P3 1 1 255\n255 255 255"[..],
            b"P6 1 1 65535\n\x00\x00\x00\x00\x00\x00",
            b"P6 2 2 255\n\x00\x00\x00",
            b"P6 x 1 255\n",
            b"",
        ] {
            assert!(matches!(parse_ppm(bad), Err(Error::ImageFormat(_))), "{bad:?}");
        }
    }
}
