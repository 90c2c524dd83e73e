//! Versioned binary container for trained networks.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   9 bytes  "PARESSEG1"
//! version u32
//! seed    u64
//! config  u32 length + that many bytes of JSON
//! params  u32 group count, then per group:
//!           u32 name length + UTF-8 name
//!           u32 rank + u64 dims
//!           f64 data (product of dims values)
//! buffers same layout as params
//! ```
//!
//! A loaded file is structurally validated: magic, version, JSON config, and
//! the requirement that the stored groups sum to exactly the scalar count the
//! config implies.

use crate::backbone::{BufferSet, Model, NetworkConfig, ParamSet};
use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 9] = b"PARESSEG1";
pub const VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> Error {
    Error::Io(e.to_string())
}

/// EOF while decoding means the file is cut short, which is a layout problem,
/// not an I/O environment problem.
fn read_err(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::format("file ends before the declared content")
    } else {
        Error::Io(e.to_string())
    }
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(io_err)
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(io_err)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(read_err)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(read_err)?;
    Ok(u64::from_le_bytes(b))
}

fn read_exact_vec(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(read_err)?;
    Ok(buf)
}

fn write_groups<'a>(
    w: &mut impl Write,
    groups: impl ExactSizeIterator<Item = &'a crate::backbone::Param>,
) -> Result<()> {
    write_u32(w, groups.len() as u32)?;
    for p in groups {
        let name = p.name.as_bytes();
        write_u32(w, name.len() as u32)?;
        w.write_all(name).map_err(io_err)?;
        write_u32(w, p.shape.len() as u32)?;
        for &d in &p.shape {
            write_u64(w, d as u64)?;
        }
        for &v in &p.data {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    Ok(())
}

fn read_groups(r: &mut impl Read) -> Result<Vec<(String, Vec<usize>, Vec<f64>)>> {
    let count = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        let name = String::from_utf8(read_exact_vec(r, name_len)?)
            .map_err(|_| Error::format("group name is not valid UTF-8"))?;
        let rank = read_u32(r)? as usize;
        if rank > 8 {
            return Err(Error::format(format!(
                "group {name} declares implausible rank {rank}"
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = read_exact_vec(r, numel * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, shape, data));
    }
    Ok(out)
}

/// Write a model to disk in the container format above.
pub fn save(model: &Model, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    w.write_all(MAGIC).map_err(io_err)?;
    write_u32(&mut w, VERSION)?;
    write_u64(&mut w, model.seed)?;
    let config = serde_json::to_vec(&model.config)
        .map_err(|e| Error::format(format!("config did not serialize: {e}")))?;
    write_u32(&mut w, config.len() as u32)?;
    w.write_all(&config).map_err(io_err)?;
    write_groups(&mut w, model.params.iter())?;
    write_groups(&mut w, model.buffers.iter())?;
    w.flush().map_err(io_err)
}

/// Read a model back, validating structure as described in the module docs.
pub fn load(path: &Path) -> Result<Model> {
    let mut r = BufReader::new(File::open(path).map_err(io_err)?);

    let mut magic = [0u8; 9];
    r.read_exact(&mut magic).map_err(read_err)?;
    if &magic != MAGIC {
        return Err(Error::format(format!(
            "bad magic {:?}; not a network container",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::format(format!(
            "unsupported container version {version} (expected {VERSION})"
        )));
    }
    let seed = read_u64(&mut r)?;
    let config_len = read_u32(&mut r)? as usize;
    let config_json = read_exact_vec(&mut r, config_len)?;
    let config: NetworkConfig = serde_json::from_slice(&config_json)
        .map_err(|e| Error::format(format!("embedded config does not parse: {e}")))?;
    config
        .validate()
        .map_err(|e| Error::format(format!("embedded config is invalid: {e}")))?;

    let mut params = ParamSet::new();
    for (name, shape, data) in read_groups(&mut r)? {
        params
            .insert(&name, shape, data)
            .map_err(|e| Error::format(format!("parameter section is inconsistent: {e}")))?;
    }
    let mut buffers = BufferSet::new();
    for (name, shape, data) in read_groups(&mut r)? {
        buffers
            .insert(&name, shape, data)
            .map_err(|e| Error::format(format!("buffer section is inconsistent: {e}")))?;
    }

    let expected = config.expected_param_count();
    if params.scalar_count() != expected {
        return Err(Error::format(format!(
            "stored parameters hold {} scalars but the config implies {}",
            params.scalar_count(),
            expected
        )));
    }

    let mut trailing = [0u8; 1];
    match r.read(&mut trailing) {
        Ok(0) => {}
        Ok(_) => return Err(Error::format("trailing bytes after the buffer section")),
        Err(e) => return Err(Error::Io(e.to_string())),
    }

    Ok(Model {
        config,
        seed,
        params,
        buffers,
    })
}
