//! Integer raster formats: P6 color, P5 grayscale, P4 bitmaps.
//!
//! Frames quantize to 8 bits (worst-case round-trip error 1/510 per
//! channel). Grayscale maps hold ids and switch to two-byte big-endian
//! samples when any id exceeds 255. Bitmaps pack rows MSB-first with
//! 1 bits marking set pixels. Writers emit a fixed header layout so
//! equal inputs give byte-identical files; the reader accepts any
//! legal whitespace and `#` comments.

use super::IoError;
use crate::image::{Frame, Mask};
use std::fs;
use std::path::Path;

/// Token scanner over a PNM header; tracks line numbers for errors.
struct HeaderScanner<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: usize,
}

impl<'a> HeaderScanner<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0, line: 1 }
    }

    fn bump(&mut self) -> Option<u8> {
        let b = *self.bytes.get(self.pos)?;
        self.pos += 1;
        if b == b'\n' {
            self.line += 1;
        }
        Some(b)
    }

    fn token(&mut self) -> Result<String, IoError> {
        loop {
            match self.bytes.get(self.pos) {
                None => return Err(IoError::parse(self.line, "unexpected end of header")),
                Some(b'#') => {
                    while let Some(b) = self.bump() {
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(b) if b.is_ascii_whitespace() => {
                    self.bump();
                }
                Some(_) => break,
            }
        }
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#') {
            self.pos += 1;
        }
        Ok(std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| IoError::parse(self.line, "header is not utf-8"))?
            .to_string())
    }

    fn number(&mut self, what: &str) -> Result<usize, IoError> {
        let line = self.line;
        let tok = self.token()?;
        tok.parse().map_err(|_| IoError::parse(line, format!("bad {what} {tok:?}")))
    }

    /// Consumes the single whitespace byte separating header from samples.
    fn body(mut self) -> Result<&'a [u8], IoError> {
        match self.bump() {
            Some(b) if b.is_ascii_whitespace() => Ok(&self.bytes[self.pos..]),
            _ => Err(IoError::parse(self.line, "missing whitespace before samples")),
        }
    }

    fn expect_magic(&mut self, magic: &str) -> Result<(), IoError> {
        let line = self.line;
        let tok = self.token()?;
        if tok != magic {
            return Err(IoError::parse(line, format!("expected {magic}, got {tok:?}")));
        }
        Ok(())
    }
}

fn body_len_check(what: &str, body: &[u8], expected: usize) -> Result<(), IoError> {
    if body.len() != expected {
        return Err(IoError::Format(format!(
            "{what}: expected {expected} sample bytes, found {}",
            body.len()
        )));
    }
    Ok(())
}

pub fn write_ppm(frame: &Frame, path: &Path) -> Result<(), IoError> {
    let (w, h) = (frame.width(), frame.height());
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    bytes.extend(frame.data().iter().map(|&v| (v * 255.0).round() as u8));
    fs::write(path, bytes).map_err(|e| IoError::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<Frame, IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::io(path, e))?;
    let mut scan = HeaderScanner::new(&bytes);
    scan.expect_magic("P6")?;
    let w = scan.number("width")?;
    let h = scan.number("height")?;
    let maxval_line = scan.line;
    let maxval = scan.number("maxval")?;
    if maxval != 255 {
        return Err(IoError::parse(maxval_line, format!("only maxval 255 is supported, got {maxval}")));
    }
    let body = scan.body()?;
    body_len_check("ppm", body, w * h * 3)?;
    let data = body.iter().map(|&b| b as f64 / 255.0).collect();
    Frame::from_rgb(w, h, data).map_err(|e| IoError::Invalid(e.to_string()))
}

/// Writes an id map; samples widen to two bytes when any id exceeds 255.
pub fn write_pgm(width: usize, height: usize, values: &[usize], path: &Path) -> Result<(), IoError> {
    if values.len() != width * height {
        return Err(IoError::Invalid(format!(
            "expected {} values for {width}x{height}, got {}",
            width * height,
            values.len()
        )));
    }
    let max = values.iter().copied().max().unwrap_or(0);
    if max > u16::MAX as usize {
        return Err(IoError::Invalid(format!("id {max} does not fit in 16 bits")));
    }
    let maxval: usize = if max > 255 { 65535 } else { 255 };
    let mut bytes = format!("P5\n{width} {height}\n{maxval}\n").into_bytes();
    for &v in values {
        if maxval > 255 {
            bytes.extend_from_slice(&(v as u16).to_be_bytes());
        } else {
            bytes.push(v as u8);
        }
    }
    fs::write(path, bytes).map_err(|e| IoError::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<usize>), IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::io(path, e))?;
    let mut scan = HeaderScanner::new(&bytes);
    scan.expect_magic("P5")?;
    let w = scan.number("width")?;
    let h = scan.number("height")?;
    let maxval_line = scan.line;
    let maxval = scan.number("maxval")?;
    let body = scan.body()?;
    let values = match maxval {
        1..=255 => {
            body_len_check("pgm", body, w * h)?;
            body.iter().map(|&b| b as usize).collect()
        }
        256..=65535 => {
            body_len_check("pgm", body, w * h * 2)?;
            body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as usize).collect()
        }
        other => {
            return Err(IoError::parse(maxval_line, format!("maxval {other} out of range")));
        }
    };
    Ok((w, h, values))
}

pub fn write_pbm(mask: &Mask, path: &Path) -> Result<(), IoError> {
    let (w, h) = (mask.width(), mask.height());
    let mut bytes = format!("P4\n{w} {h}\n").into_bytes();
    for y in 0..h {
        let mut acc = 0u8;
        for x in 0..w {
            if mask.get(x, y) {
                acc |= 0x80 >> (x % 8);
            }
            if x % 8 == 7 {
                bytes.push(acc);
                acc = 0;
            }
        }
        if w % 8 != 0 {
            bytes.push(acc);
        }
    }
    fs::write(path, bytes).map_err(|e| IoError::io(path, e))
}

pub fn read_pbm(path: &Path) -> Result<Mask, IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::io(path, e))?;
    let mut scan = HeaderScanner::new(&bytes);
    scan.expect_magic("P4")?;
    let w = scan.number("width")?;
    let h = scan.number("height")?;
    let body = scan.body()?;
    let stride = w.div_ceil(8);
    body_len_check("pbm", body, stride * h)?;
    let mut mask = Mask::new(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let byte = body[y * stride + x / 8];
            mask.set(x, y, byte & (0x80 >> (x % 8)) != 0);
        }
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_stays_within_quantization_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgb.ppm");
        let data: Vec<f64> = (0..4 * 3 * 3).map(|i| i as f64 / 35.0).collect();
        let frame = Frame::from_rgb(4, 3, data).unwrap();
        write_ppm(&frame, &path).unwrap();
        let back = read_ppm(&path).unwrap();
        for (a, b) in frame.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 510.0 + 1e-12);
        }
    }

    #[test]
    fn ppm_endpoints_are_exact_and_reruns_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ends.ppm");
        let frame = Frame::from_rgb(2, 1, vec![0.0, 1.0, 0.5, 1.0, 0.0, 0.25]).unwrap();
        write_ppm(&frame, &path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let back = read_ppm(&path).unwrap();
        assert_eq!(back.pixel(0, 0)[0], 0.0);
        assert_eq!(back.pixel(0, 0)[1], 1.0);
        write_ppm(&back, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn pgm_widens_to_two_bytes_for_large_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ids.pgm");
        let values = vec![0, 256, 65535, 7];
        write_pgm(2, 2, &values, &path).unwrap();
        assert_eq!(read_pgm(&path).unwrap(), (2, 2, values));
    }

    #[test]
    fn pgm_small_ids_round_trip_in_one_byte() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("small.pgm");
        let values = vec![0, 1, 2, 255];
        write_pgm(4, 1, &values, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.ends_with(&[0, 1, 2, 255]));
        assert_eq!(read_pgm(&path).unwrap(), (4, 1, values));
    }

    #[test]
    fn pbm_round_trips_with_row_padding() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.pbm");
        let mut mask = Mask::new(10, 3, false);
        for (x, y) in [(0, 0), (7, 0), (8, 1), (9, 2), (3, 2)] {
            mask.set(x, y, true);
        }
        write_pbm(&mask, &path).unwrap();
        assert_eq!(read_pbm(&path).unwrap(), mask);
    }

    #[test]
    fn header_comments_and_odd_whitespace_are_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loose.ppm");
        std::fs::write(&path, b"P6 # a comment\n# another\n 2\t1\n255\n\x00\x01\x02\x03\x04\x05")
            .unwrap();
        let frame = read_ppm(&path).unwrap();
        assert_eq!(frame.pixel(1, 0)[2], 5.0 / 255.0);
    }

    #[test]
    fn wrong_magic_reports_line_one() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ppm");
        std::fs::write(&path, b"P5\n1 1\n255\nx").unwrap();
        match read_ppm(&path) {
            Err(IoError::Parse { line, message }) => {
                assert_eq!(line, 1);
                assert!(message.contains("P6"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
