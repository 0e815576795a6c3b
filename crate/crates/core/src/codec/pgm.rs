//! Binary PGM (P5, maxval 255) frame I/O.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmDecoder, PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageDecoder, ImageEncoder};

use super::frame::FramePlane;
use crate::error::{bail, Result};

pub fn decode_pgm(bytes: &[u8]) -> Result<FramePlane> {
    let decoder = PnmDecoder::new(Cursor::new(bytes))?;
    if decoder.color_type() != image::ColorType::L8 {
        bail!(Parse, "expected an 8-bit single-channel PGM, got {:?}", decoder.color_type());
    }
    let (w, h) = decoder.dimensions();
    let mut buf = vec![0u8; decoder.total_bytes() as usize];
    decoder.read_image(&mut buf)?;
    FramePlane::new(w as usize, h as usize, buf)
}

pub fn encode_pgm(frame: &FramePlane) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    PnmEncoder::new(&mut out).with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary)).write_image(
        frame.samples(),
        frame.width() as u32,
        frame.height() as u32,
        ExtendedColorType::L8,
    )?;
    Ok(out)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<FramePlane> {
    decode_pgm(&fs::read(path)?)
}

pub fn write_pgm(path: impl AsRef<Path>, frame: &FramePlane) -> Result<()> {
    fs::write(path, encode_pgm(frame)?)?;
    Ok(())
}

/// PGM files in a directory, sorted by file name. A directory is one sequence.
pub fn list_sequence(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")))
        .collect();
    paths.sort();
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_bytes() {
        let f = FramePlane::from_fn(24, 16, |x, y| (x * 10 + y) as u8).unwrap();
        let bytes = encode_pgm(&f).unwrap();
        assert!(bytes.starts_with(b"P5"));
        assert_eq!(decode_pgm(&bytes).unwrap(), f);
    }

    #[test]
    fn accepts_header_comments() {
        let mut bytes = b"P5\n# a comment\n8 8\n255\n".to_vec();
        bytes.extend(0..64u8);
        let f = decode_pgm(&bytes).unwrap();
        assert_eq!(f.get(7, 7), 63);
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode_pgm(b"P6\n8 8\n255\n").is_err());
        assert!(decode_pgm(b"hello").is_err());
    }
}
