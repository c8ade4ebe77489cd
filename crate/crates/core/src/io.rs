//! PNG and PFM file I/O.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::lightfield::DisparityMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

/// Reads an 8- or 16-bit PNG, normalized to `[0,1]`. Gray images load as one
/// channel, everything else as RGB (alpha dropped).
pub fn read_png(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = matches!(
        img,
        DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageLumaA16(_)
    );
    let mut out;
    if gray {
        let buf = img.to_luma16();
        out = Image::zeros(w, h, 1);
        for (x, y, p) in buf.enumerate_pixels() {
            out.set(x as usize, y as usize, 0, p.0[0] as f64 / 65535.0);
        }
    } else {
        let buf = img.to_rgb16();
        out = Image::zeros(w, h, 3);
        for (x, y, p) in buf.enumerate_pixels() {
            for c in 0..3 {
                out.set(x as usize, y as usize, c, p.0[c] as f64 / 65535.0);
            }
        }
    }
    Ok(out)
}

/// Writes a 1- or 3-channel image as PNG, clamping to `[0,1]`.
pub fn write_png(img: &Image, path: &Path, depth: BitDepth) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let q8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let q16 = |v: f64| (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
    let dynimg = match (img.channels(), depth) {
        (1, BitDepth::Eight) => DynamicImage::ImageLuma8(ImageBuffer::from_fn(w, h, |x, y| {
            Luma([q8(img.get(x as usize, y as usize, 0))])
        })),
        (1, BitDepth::Sixteen) => DynamicImage::ImageLuma16(ImageBuffer::from_fn(w, h, |x, y| {
            Luma([q16(img.get(x as usize, y as usize, 0))])
        })),
        (3, BitDepth::Eight) => DynamicImage::ImageRgb8(ImageBuffer::from_fn(w, h, |x, y| {
            let (x, y) = (x as usize, y as usize);
            Rgb([q8(img.get(x, y, 0)), q8(img.get(x, y, 1)), q8(img.get(x, y, 2))])
        })),
        (3, BitDepth::Sixteen) => DynamicImage::ImageRgb16(ImageBuffer::from_fn(w, h, |x, y| {
            let (x, y) = (x as usize, y as usize);
            Rgb([q16(img.get(x, y, 0)), q16(img.get(x, y, 1)), q16(img.get(x, y, 2))])
        })),
        (c, _) => {
            return Err(Error::InvalidArgument(format!(
                "cannot write a {c}-channel image as PNG"
            )))
        }
    };
    dynimg
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Writes a single-channel little-endian PFM (`Pf`, scale `-1.0`). Rows are
/// stored bottom-to-top as the format requires.
pub fn write_pfm(map: &DisparityMap, path: &Path) -> Result<()> {
    let (w, h) = (map.width(), map.height());
    let mut bytes = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    bytes.reserve(w * h * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            bytes.extend_from_slice(&(map.get(x, y) as f32).to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Reads a single-channel PFM of either endianness.
pub fn read_pfm(path: &Path) -> Result<DisparityMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pfm(&bytes)
}

fn parse_pfm(bytes: &[u8]) -> Result<DisparityMap> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Pfm("truncated header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    if magic != "Pf" {
        return Err(Error::Pfm(format!("expected single-channel 'Pf', got '{magic}'")));
    }
    let parse_dim = |s: String| s.parse::<usize>().map_err(|_| Error::Pfm(format!("bad dimension '{s}'")));
    let w = parse_dim(token()?)?;
    let h = parse_dim(token()?)?;
    let scale: f64 = token()?
        .parse()
        .map_err(|_| Error::Pfm("bad scale".into()))?;
    // exactly one whitespace byte separates the header from the raster
    let data = &bytes[pos + 1..];
    if data.len() < w * h * 4 {
        return Err(Error::Pfm(format!(
            "raster holds {} bytes, need {}",
            data.len(),
            w * h * 4
        )));
    }
    let little = scale < 0.0;
    let mut values = vec![0.0; w * h];
    for (i, chunk) in data.chunks_exact(4).take(w * h).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (row, x) = (i / w, i % w);
        values[(h - 1 - row) * w + x] = v as f64;
    }
    DisparityMap::new(w, h, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_header_and_row_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.pfm");
        let map = DisparityMap::new(3, 2, vec![1.0, 2.0, 3.0, -4.0, 5.5, 6.25]).unwrap();
        write_pfm(&map, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"Pf\n3 2\n-1.0\n"));
        // first stored row is the bottom image row
        let first = f32::from_le_bytes(bytes[12..16].try_into().unwrap());
        assert_eq!(first, -4.0);
        assert_eq!(read_pfm(&p).unwrap(), map);
    }

    #[test]
    fn pfm_rejects_color_and_truncation() {
        assert!(parse_pfm(b"PF\n1 1\n-1.0\n\0\0\0\0\0\0\0\0\0\0\0\0").is_err());
        assert!(parse_pfm(b"Pf\n2 2\n-1.0\n\0\0\0\0").is_err());
    }

    #[test]
    fn png_sixteen_bit_keeps_precision() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        let img = Image::from_vec(2, 2, 3, (0..12).map(|i| i as f64 / 11.0).collect()).unwrap();
        write_png(&img, &p, BitDepth::Sixteen).unwrap();
        let back = read_png(&p).unwrap();
        assert_eq!(back.channels(), 3);
        assert!(back.max_abs_diff(&img) < 1.0 / 65535.0);

        let gray = Image::filled(3, 1, 1, 0.5);
        write_png(&gray, &p, BitDepth::Eight).unwrap();
        let back = read_png(&p).unwrap();
        assert_eq!(back.channels(), 1);
        assert!(back.max_abs_diff(&gray) <= 0.5 / 255.0 + 1e-9);
    }
}
