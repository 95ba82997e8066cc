use super::{CodecError, Frame};

fn bad(msg: impl Into<String>) -> CodecError {
    CodecError::Image(msg.into())
}

/// Reads one whitespace-delimited header token, skipping `#` comments.
fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8], CodecError> {
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(_) => break,
            None => return Err(bad("truncated header")),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#') {
        *pos += 1;
    }
    Ok(&bytes[start..*pos])
}

fn number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize, CodecError> {
    let t = token(bytes, pos)?;
    std::str::from_utf8(t)
        .ok()
        .filter(|s| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(format!("malformed {what}")))
}

/// Decodes a binary (P6) pixmap with maxval 255.
pub fn read_image(bytes: &[u8]) -> Result<Frame, CodecError> {
    let mut pos = 0;
    if token(bytes, &mut pos)? != b"P6" {
        return Err(bad("not a binary PPM (P6)"));
    }
    let width = number(bytes, &mut pos, "width")?;
    let height = number(bytes, &mut pos, "height")?;
    let maxval = number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(bad(format!("unsupported maxval {maxval}, only 8-bit (255) images are supported")));
    }
    if width == 0 || height == 0 {
        return Err(bad("zero-sized image"));
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(bad("truncated header"));
    }
    pos += 1;
    let n = width.checked_mul(height).and_then(|p| p.checked_mul(3)).ok_or_else(|| bad("dimensions overflow"))?;
    let payload = &bytes[pos..];
    if payload.len() != n {
        return Err(bad(format!("expected {n} pixel bytes, found {}", payload.len())));
    }
    let plane = width * height;
    let mut data = vec![0.0f32; n];
    for (i, px) in payload.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f32 / 255.0;
        }
    }
    Frame::new(width, height, data)
}

/// Encodes as P6; values are clamped to `[0, 1]` and rounded.
pub fn write_image(frame: &Frame) -> Result<Vec<u8>, CodecError> {
    if frame.pixels() == 0 {
        return Err(bad("zero-sized image"));
    }
    let mut out = format!("P6\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    let plane = frame.pixels();
    let d = frame.data();
    out.reserve(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            let v = d[c * plane + i];
            let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
            out.push((v * 255.0).round() as u8);
        }
    }
    Ok(out)
}
