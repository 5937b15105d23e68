//! Binary PPM (`P6`, maxval 255).

use std::path::Path;

use super::image::ImageBuffer;
use crate::error::{Error, Result};

/// Header tokens: magic, width, height, maxval. Comments run from `#` to the
/// end of the line. Returns the tokens and the offset of the pixel payload.
fn header(bytes: &[u8]) -> Result<([String; 4], usize)> {
    let mut tokens: Vec<String> = Vec::with_capacity(4);
    let mut i = 0;
    while tokens.len() < 4 {
        match bytes.get(i) {
            None => return Err(Error::Format("header ends before maxval".into())),
            Some(b'#') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => i += 1,
            Some(_) => {
                let start = i;
                while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'#' {
                    i += 1;
                }
                tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
            }
        }
    }
    // Exactly one whitespace byte separates maxval from the payload.
    match bytes.get(i) {
        Some(b) if b.is_ascii_whitespace() => i += 1,
        _ => return Err(Error::Format("missing whitespace after maxval".into())),
    }
    let tokens: [String; 4] = tokens.try_into().expect("four tokens collected");
    Ok((tokens, i))
}

fn dimension(token: &str, what: &str) -> Result<usize> {
    match token.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(Error::Format(format!("invalid {what} {token:?}"))),
    }
}

pub fn decode(bytes: &[u8]) -> Result<ImageBuffer<u8>> {
    if !bytes.starts_with(b"P") {
        return Err(Error::Format("not a PPM file".into()));
    }
    let (tokens, offset) = header(bytes)?;
    if tokens[0] != "P6" {
        return Err(Error::Unsupported(format!("PPM variant {:?}", tokens[0])));
    }
    let width = dimension(&tokens[1], "width")?;
    let height = dimension(&tokens[2], "height")?;
    let maxval: u32 = tokens[3]
        .parse()
        .map_err(|_| Error::Format(format!("invalid maxval {:?}", tokens[3])))?;
    if maxval != 255 {
        return Err(Error::Unsupported(format!("maxval {maxval} (only 255 is supported)")));
    }
    let len = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(3))
        .ok_or_else(|| Error::Format("image dimensions overflow".into()))?;
    let payload = &bytes[offset..];
    if payload.len() < len {
        return Err(Error::Format(format!(
            "truncated payload: expected {len} bytes, found {}",
            payload.len()
        )));
    }
    ImageBuffer::new(height, width, 3, payload[..len].to_vec())
}

pub fn encode(img: &ImageBuffer<u8>) -> Result<Vec<u8>> {
    if img.channels != 3 {
        return Err(Error::Unsupported(format!("{}-channel image as P6", img.channels)));
    }
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    Ok(out)
}

pub fn read(path: &Path) -> Result<ImageBuffer<u8>> {
    let bytes = std::fs::read(path)?;
    decode(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Unsupported(m) => Error::Unsupported(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write(path: &Path, img: &ImageBuffer<u8>) -> Result<()> {
    std::fs::write(path, encode(img)?)?;
    Ok(())
}
