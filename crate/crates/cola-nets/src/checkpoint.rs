use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use cola_tensor::{Parameter, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Writes a versioned container of named arrays.
///
/// Layout: `u32 version, u32 count`, then per array `u32 name_len, name
/// bytes (UTF-8), u32 rank, u32 dims..., f64 values`, all little-endian.
/// Round-trips bit-exactly.
pub fn save_arrays(path: &Path, arrays: &[(String, &Tensor)]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(arrays.len() as u32).to_le_bytes())?;
    for (name, tensor) in arrays {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(tensor.rank() as u32).to_le_bytes())?;
        for &d in tensor.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn load_arrays(path: &Path) -> io::Result<Vec<(String, Tensor)>> {
    let mut r = BufReader::new(File::open(path)?);
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let count = read_u32(&mut r)? as usize;
    let mut arrays = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        arrays.push((name, Tensor::new(&shape, data)));
    }
    Ok(arrays)
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Total number of scalar values across parameters.
pub fn param_count(params: &[&Parameter]) -> usize {
    params.iter().map(|p| p.value.len()).sum()
}

/// FNV-1a over parameter names, shapes and value bits. Used by the training
/// loop to prove update isolation (builder vs RL parameters).
pub fn fingerprint(params: &[&Parameter]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
    };
    for p in params {
        eat(p.name.as_bytes());
        for &d in p.value.shape() {
            eat(&(d as u64).to_le_bytes());
        }
        for &v in p.value.data() {
            eat(&v.to_bits().to_le_bytes());
        }
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_tracks_value_bits() {
        let a = Parameter::new("w", Tensor::new(&[2], vec![1.0, 2.0]));
        let mut b = Parameter::new("w", Tensor::new(&[2], vec![1.0, 2.0]));
        assert_eq!(fingerprint(&[&a]), fingerprint(&[&b]));
        b.value.data_mut()[1] = f64::from_bits(2.0f64.to_bits() + 1);
        assert_ne!(fingerprint(&[&a]), fingerprint(&[&b]));
    }
}
