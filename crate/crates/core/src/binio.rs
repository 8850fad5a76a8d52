//! Little-endian primitives for the checkpoint format. Maps are written in key
//! order as a length prefix followed by `(key, value)` records.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::key::{key_map, sorted_entries, Key, KeyMap};

pub fn put_u8(w: &mut (impl Write + ?Sized), v: u8) -> Result<()> {
    w.write_all(&[v])?;
    Ok(())
}

pub fn put_u32(w: &mut (impl Write + ?Sized), v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn put_u64(w: &mut (impl Write + ?Sized), v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn put_f64(w: &mut (impl Write + ?Sized), v: f64) -> Result<()> {
    w.write_all(&v.to_bits().to_le_bytes())?;
    Ok(())
}

pub fn put_key(w: &mut (impl Write + ?Sized), k: Key) -> Result<()> {
    w.write_all(&k.0.to_le_bytes())?;
    Ok(())
}

pub fn put_bytes(w: &mut (impl Write + ?Sized), b: &[u8]) -> Result<()> {
    put_u64(w, b.len() as u64)?;
    w.write_all(b)?;
    Ok(())
}

pub fn get_u8(r: &mut (impl Read + ?Sized)) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

pub fn get_u32(r: &mut (impl Read + ?Sized)) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn get_u64(r: &mut (impl Read + ?Sized)) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn get_f64(r: &mut (impl Read + ?Sized)) -> Result<f64> {
    Ok(f64::from_bits(get_u64(r)?))
}

pub fn get_key(r: &mut (impl Read + ?Sized)) -> Result<Key> {
    let mut b = [0u8; 16];
    r.read_exact(&mut b)?;
    Ok(Key(u128::from_le_bytes(b)))
}

pub fn get_bytes(r: &mut (impl Read + ?Sized), limit: usize) -> Result<Vec<u8>> {
    let n = get_len(r, limit)?;
    let mut v = vec![0u8; n];
    r.read_exact(&mut v)?;
    Ok(v)
}

pub fn get_len(r: &mut (impl Read + ?Sized), limit: usize) -> Result<usize> {
    let n = get_u64(r)? as usize;
    if n > limit {
        return Err(Error::Checkpoint(format!("length {n} exceeds limit {limit}")));
    }
    Ok(n)
}

/// Upper bound on any single map or section length accepted when reading.
pub const MAX_LEN: usize = 1 << 32;

pub fn put_map<W: Write + ?Sized, V>(
    w: &mut W,
    map: &KeyMap<V>,
    mut put: impl FnMut(&mut W, &V) -> Result<()>,
) -> Result<()> {
    put_u64(w, map.len() as u64)?;
    for (k, v) in sorted_entries(map) {
        put_key(w, k)?;
        put(w, v)?;
    }
    Ok(())
}

pub fn get_map<R: Read + ?Sized, V>(
    r: &mut R,
    mut get: impl FnMut(&mut R) -> Result<V>,
) -> Result<KeyMap<V>> {
    let n = get_len(r, MAX_LEN)?;
    let mut m = key_map();
    m.reserve(n.min(1 << 20));
    for _ in 0..n {
        let k = get_key(r)?;
        let v = get(r)?;
        m.insert(k, v);
    }
    Ok(m)
}

pub fn put_u64_map(w: &mut (impl Write + ?Sized), map: &KeyMap<u64>) -> Result<()> {
    put_map(w, map, |w, v| put_u64(w, *v))
}

pub fn get_u64_map(r: &mut (impl Read + ?Sized)) -> Result<KeyMap<u64>> {
    get_map(r, |r| get_u64(r))
}

pub fn put_f64_map(w: &mut (impl Write + ?Sized), map: &KeyMap<f64>) -> Result<()> {
    put_map(w, map, |w, v| put_f64(w, *v))
}

pub fn get_f64_map(r: &mut (impl Read + ?Sized)) -> Result<KeyMap<f64>> {
    get_map(r, |r| get_f64(r))
}
