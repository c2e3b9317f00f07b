//! Image files, pair discovery and atomic writes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::data::Pair;
use crate::error::{FuseError, Result};
use crate::image::Image;

/// Writes through a temporary file in the destination directory and renames
/// it into place, so failures never leave a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| FuseError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| FuseError::io(path, e))?;
    tmp.persist(path).map_err(|e| FuseError::io(path, e.error))?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| FuseError::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    context: &'a str,
}

impl Cursor<'_> {
    fn err(&self, detail: impl Into<String>) -> FuseError {
        FuseError::format(self.context, self.pos as u64, detail)
    }

    /// Skips whitespace and `#` comments.
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| FuseError::format(self.context, start as u64, format!("{what} out of range")))
    }
}

/// Binary PGM (`P5`, maxval 255).
pub fn decode_pgm(bytes: &[u8], context: &str) -> Result<Image> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        context,
    };
    if !bytes.starts_with(b"P5") {
        return Err(c.err("not a binary PGM (expected magic P5)"));
    }
    c.pos = 2;
    let width = c.number("width")?;
    let height = c.number("height")?;
    let maxval = c.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(c.err("zero image extent"));
    }
    if maxval != 255 {
        return Err(c.err(format!("maxval {maxval} unsupported (need 255)")));
    }
    if !bytes.get(c.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(c.err("expected whitespace before pixel data"));
    }
    c.pos += 1;
    let need = width * height;
    let data = &bytes[c.pos..];
    if data.len() < need {
        return Err(FuseError::format(
            context,
            bytes.len() as u64,
            format!("truncated pixel data: {} of {need} bytes", data.len()),
        ));
    }
    let pixels = data[..need].iter().map(|&b| b as f64 / 255.0).collect();
    Image::new(width, height, pixels)
}

pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.levels());
    out
}

#[cfg(feature = "png")]
fn decode_png(bytes: &[u8], context: &str) -> Result<Image> {
    let fmt = |e: png::DecodingError| FuseError::format(context, 0, e.to_string());
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(fmt)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| FuseError::format(context, 0, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(fmt)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let px = match info.color_type {
        png::ColorType::Grayscale => buf[..w * h].iter().map(|&b| b as f64 / 255.0).collect(),
        png::ColorType::GrayscaleAlpha => buf[..2 * w * h].iter().step_by(2).map(|&b| b as f64 / 255.0).collect(),
        other => {
            return Err(FuseError::format(context, 0, format!("{other:?} PNG is not grayscale")));
        }
    };
    Image::new(w, h, px)
}

#[cfg(feature = "png")]
fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let err = |e: png::EncodingError| FuseError::input(format!("png encoding: {e}"));
    let mut w = enc.write_header().map_err(err)?;
    w.write_image_data(&img.levels()).map_err(err)?;
    w.finish().map_err(err)?;
    Ok(out)
}

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

/// Decodes by content: PGM always, PNG when built with the `png` feature.
pub fn decode_image(bytes: &[u8], context: &str) -> Result<Image> {
    if bytes.starts_with(PNG_SIGNATURE) {
        #[cfg(feature = "png")]
        return decode_png(bytes, context);
        #[cfg(not(feature = "png"))]
        return Err(FuseError::format(context, 0, "PNG support not enabled in this build"));
    }
    decode_pgm(bytes, context)
}

pub fn load_image(path: &Path) -> Result<Image> {
    decode_image(&read_file(path)?, &path.display().to_string())
}

fn is_png_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Encodes by extension: `.png` as PNG (feature `png`), anything else as PGM.
pub fn encode_image(img: &Image, path: &Path) -> Result<Vec<u8>> {
    if is_png_path(path) {
        #[cfg(feature = "png")]
        return encode_png(img);
        #[cfg(not(feature = "png"))]
        return Err(FuseError::input("PNG support not enabled in this build"));
    }
    Ok(encode_pgm(img))
}

pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    write_atomic(path, &encode_image(img, path)?)
}

fn supported(path: &Path) -> bool {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("pgm") => true,
        Some(e) if e.eq_ignore_ascii_case("png") => cfg!(feature = "png"),
        _ => false,
    }
}

fn images_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| FuseError::io(dir, e))? {
        let path = entry.map_err(|e| FuseError::io(dir, e))?.path();
        if path.is_file() && supported(&path) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path);
            }
        }
    }
    Ok(out)
}

/// Pairs discovered by [`load_pairs`], with one warning per skipped file.
#[derive(Debug)]
pub struct PairSet {
    pub pairs: Vec<Pair>,
    pub warnings: Vec<String>,
}

/// Pairs images in two directories by file stem, in lexicographic order.
pub fn load_pairs(ir_dir: &Path, vis_dir: &Path) -> Result<PairSet> {
    let ir = images_by_stem(ir_dir)?;
    let vis = images_by_stem(vis_dir)?;
    let mut warnings = Vec::new();
    for (stem, path) in ir.iter().filter(|(s, _)| !vis.contains_key(*s)) {
        warnings.push(format!("skipping {}: no visible image with stem {stem}", path.display()));
    }
    for (stem, path) in vis.iter().filter(|(s, _)| !ir.contains_key(*s)) {
        warnings.push(format!("skipping {}: no infrared image with stem {stem}", path.display()));
    }
    let mut pairs = Vec::new();
    for (stem, ir_path) in &ir {
        let Some(vis_path) = vis.get(stem) else {
            continue;
        };
        let (a, b) = (load_image(ir_path)?, load_image(vis_path)?);
        if !a.same_size(&b) {
            return Err(FuseError::input(format!(
                "pair {stem}: infrared {}x{} vs visible {}x{}",
                a.width(),
                a.height(),
                b.width(),
                b.height()
            )));
        }
        pairs.push(Pair {
            name: stem.clone(),
            ir: a,
            vis: b,
        });
    }
    if pairs.is_empty() {
        return Err(FuseError::input(format!(
            "no image pairs found in {} and {}",
            ir_dir.display(),
            vis_dir.display()
        )));
    }
    Ok(PairSet { pairs, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_levels() {
        let mut f = b"P5\n2 2\n255\n".to_vec();
        f.extend([0, 85, 170, 255]);
        let img = decode_pgm(&f, "t").unwrap();
        assert_eq!(img.pixels(), &[0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]);
        assert_eq!(encode_pgm(&img), f);
    }

    #[test]
    fn comments_and_odd_extents() {
        let mut f = b"P5 # c\n3\n# another\n1 255\n".to_vec();
        f.extend([1, 2, 3]);
        let img = decode_pgm(&f, "t").unwrap();
        assert_eq!((img.width(), img.height()), (3, 1));
    }

    #[test]
    fn format_errors_carry_offsets() {
        let err = decode_pgm(b"P2\n1 1\n255\n0", "x.pgm").unwrap_err();
        assert!(matches!(err, FuseError::Format { offset: 0, .. }), "{err}");
        let err = decode_pgm(b"P5\n4 4\n255\n\x01\x02", "x.pgm").unwrap_err();
        assert!(matches!(err, FuseError::Format { offset: 13, .. }), "{err}");
        let err = decode_pgm(b"P5\n4 4\n65535\n", "x.pgm").unwrap_err();
        assert!(err.to_string().contains("maxval"), "{err}");
    }

    #[cfg(feature = "png")]
    #[test]
    fn png_round_trip() {
        let img = Image::from_fn(5, 3, |x, y| ((x * 50 + y * 20) % 256) as f64 / 255.0);
        let bytes = encode_png(&img).unwrap();
        assert_eq!(decode_image(&bytes, "t").unwrap(), img);
    }
}
