//! Little-endian binary helpers shared by every payload encoder in the crate.

use bytes::{Buf, BufMut};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("payload truncated: needed {needed} more bytes")]
    Truncated { needed: usize },
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("invalid {field}: {value}")]
    Invalid { field: &'static str, value: u64 },
    #[error("string is not valid UTF-8")]
    Utf8,
}

pub(crate) fn need(buf: &impl Buf, n: usize) -> Result<(), DecodeError> {
    if buf.remaining() < n {
        Err(DecodeError::Truncated { needed: n - buf.remaining() })
    } else {
        Ok(())
    }
}

pub(crate) fn get_f64(buf: &mut impl Buf) -> Result<f64, DecodeError> {
    need(buf, 8)?;
    Ok(buf.get_f64_le())
}

pub(crate) fn get_f32(buf: &mut impl Buf) -> Result<f32, DecodeError> {
    need(buf, 4)?;
    Ok(buf.get_f32_le())
}

pub(crate) fn get_u64(buf: &mut impl Buf) -> Result<u64, DecodeError> {
    need(buf, 8)?;
    Ok(buf.get_u64_le())
}

pub(crate) fn get_u32(buf: &mut impl Buf) -> Result<u32, DecodeError> {
    need(buf, 4)?;
    Ok(buf.get_u32_le())
}

pub(crate) fn get_u8(buf: &mut impl Buf) -> Result<u8, DecodeError> {
    need(buf, 1)?;
    Ok(buf.get_u8())
}

pub(crate) fn put_str(buf: &mut impl BufMut, s: &str) {
    buf.put_u32_le(s.len() as u32);
    buf.put_slice(s.as_bytes());
}

pub(crate) fn get_str(buf: &mut impl Buf) -> Result<String, DecodeError> {
    let len = get_u32(buf)? as usize;
    need(buf, len)?;
    let mut raw = vec![0u8; len];
    buf.copy_to_slice(&mut raw);
    String::from_utf8(raw).map_err(|_| DecodeError::Utf8)
}

pub(crate) fn get_magic(buf: &mut impl Buf, expected: [u8; 4]) -> Result<(), DecodeError> {
    need(buf, 4)?;
    let mut found = [0u8; 4];
    buf.copy_to_slice(&mut found);
    if found != expected {
        return Err(DecodeError::BadMagic { expected, found });
    }
    Ok(())
}

pub(crate) fn put_vec3(buf: &mut impl BufMut, v: &crate::Vec3) {
    buf.put_f64_le(v.x);
    buf.put_f64_le(v.y);
    buf.put_f64_le(v.z);
}

pub(crate) fn get_vec3(buf: &mut impl Buf) -> Result<crate::Vec3, DecodeError> {
    Ok(crate::Vec3::new(get_f64(buf)?, get_f64(buf)?, get_f64(buf)?))
}

pub(crate) fn put_pose(buf: &mut impl BufMut, p: &crate::Pose) {
    put_vec3(buf, &p.position);
    buf.put_f64_le(p.roll);
    buf.put_f64_le(p.pitch);
    buf.put_f64_le(p.yaw);
}

pub(crate) fn get_pose(buf: &mut impl Buf) -> Result<crate::Pose, DecodeError> {
    let position = get_vec3(buf)?;
    Ok(crate::Pose { position, roll: get_f64(buf)?, pitch: get_f64(buf)?, yaw: get_f64(buf)? })
}
