//! Binary PPM (P6) with maxval 255.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Frame, VisionError};

pub fn encode(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    out.extend_from_slice(frame.pixels());
    out
}

pub fn decode(bytes: &[u8]) -> Result<Frame, VisionError> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    // Header: magic, width, height, maxval separated by whitespace; `#`
    // starts a comment running to end of line.
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(VisionError::Ppm("truncated header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P6" {
        return Err(VisionError::Ppm(format!("unsupported magic `{}`", fields[0])));
    }
    let parse = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| VisionError::Ppm(format!("bad {} `{}`", what, s)))
    };
    let width = parse(&fields[1], "width")?;
    let height = parse(&fields[2], "height")?;
    if parse(&fields[3], "maxval")? != 255 {
        return Err(VisionError::Ppm("only maxval 255 is supported".into()));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() != width * height * 3 {
        return Err(VisionError::Ppm(format!(
            "raster holds {} bytes, expected {}",
            raster.len(),
            width * height * 3
        )));
    }
    Frame::new(width, height, raster.to_vec())
}

pub fn write(path: &Path, frame: &Frame) -> Result<(), VisionError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&encode(frame))?;
    w.flush()?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Frame, VisionError> {
    decode(&fs::read(path)?)
}
