use super::{CodecError, FlowField};

const MAGIC: f32 = 202021.25;
const HEADER: usize = 12;

pub fn read_flo(bytes: &[u8]) -> Result<FlowField, CodecError> {
    if bytes.len() < 4 || f32::from_le_bytes(bytes[0..4].try_into().unwrap()) != MAGIC {
        return Err(CodecError::NotFlow);
    }
    if bytes.len() < HEADER {
        return Err(CodecError::CorruptFlow { expected: HEADER, actual: bytes.len() });
    }
    let width = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if width < 0 || height < 0 {
        return Err(CodecError::Invalid(format!("negative flow dimensions {width}x{height}")));
    }
    let (width, height) = (width as usize, height as usize);
    let expected = (width as u64 * height as u64 * 8 + HEADER as u64).min(usize::MAX as u64) as usize;
    if bytes.len() != expected {
        return Err(CodecError::CorruptFlow { expected, actual: bytes.len() });
    }
    let n = width * height;
    let (mut u, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for px in bytes[HEADER..].chunks_exact(8) {
        u.push(f32::from_le_bytes(px[0..4].try_into().unwrap()));
        v.push(f32::from_le_bytes(px[4..8].try_into().unwrap()));
    }
    FlowField::new(width, height, u, v)
}

pub fn write_flo(flow: &FlowField) -> Result<Vec<u8>, CodecError> {
    let (w, h) = (flow.width(), flow.height());
    if w == 0 || h == 0 {
        return Err(CodecError::Invalid("cannot write a zero-sized flow field".into()));
    }
    if w > i32::MAX as usize || h > i32::MAX as usize {
        return Err(CodecError::Invalid(format!("flow dimensions {w}x{h} exceed the format limit")));
    }
    let mut out = Vec::with_capacity(HEADER + 8 * w * h);
    out.extend_from_slice(&MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for (u, v) in flow.u().iter().zip(flow.v()) {
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}
