//! Byte-exact codecs: Middlebury `.flo`, binary PPM, and the `.ctxc`
//! named-tensor container used for checkpoints.

mod container;
mod flo;
mod frame;
mod ppm;
#[cfg(test)]
mod tests;

use std::path::{Path, PathBuf};

pub use container::{read_container, write_container, Entry, TensorContainer};
pub use flo::{read_flo, write_flo};
pub use frame::{FlowField, Frame, UNKNOWN_FLOW};
pub use ppm::{read_image, write_image};

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error("not a flow file")]
    NotFlow,
    #[error("corrupt flow file: expected {expected} bytes, found {actual}")]
    CorruptFlow { expected: usize, actual: usize },
    #[error("invalid image: {0}")]
    Image(String),
    #[error("invalid container: {0}")]
    Container(String),
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>, CodecError> {
    std::fs::read(path).map_err(|source| CodecError::Io { path: path.to_path_buf(), source })
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CodecError> {
    std::fs::write(path, bytes).map_err(|source| CodecError::Io { path: path.to_path_buf(), source })
}

pub fn load_flo(path: &Path) -> Result<FlowField, CodecError> {
    read_flo(&read_bytes(path)?)
}

pub fn save_flo(path: &Path, flow: &FlowField) -> Result<(), CodecError> {
    write_bytes(path, &write_flo(flow)?)
}

pub fn load_image(path: &Path) -> Result<Frame, CodecError> {
    read_image(&read_bytes(path)?)
}

pub fn save_image(path: &Path, frame: &Frame) -> Result<(), CodecError> {
    write_bytes(path, &write_image(frame)?)
}

pub fn load_container(path: &Path) -> Result<TensorContainer, CodecError> {
    read_container(&read_bytes(path)?)
}

pub fn save_container(path: &Path, c: &TensorContainer) -> Result<(), CodecError> {
    write_bytes(path, &write_container(c)?)
}
