//! Checkpoint file format:
//! magic "SSCNN1", u32 parameter count, then per parameter:
//! u32 name length + name bytes, u32 rank + u32 extents, raw LE f32 payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{NnError, Result};
use crate::params::ParamSet;

const MAGIC: &[u8; 6] = b"SSCNN1";

pub fn save(params: &ParamSet, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(params.len() as u32)?;
    for p in params.iter() {
        w.write_u32::<LittleEndian>(p.name.len() as u32)?;
        w.write_all(p.name.as_bytes())?;
        w.write_u32::<LittleEndian>(p.value.shape().len() as u32)?;
        for &e in p.value.shape() {
            w.write_u32::<LittleEndian>(e as u32)?;
        }
        for &v in p.value.data() {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Loads a checkpoint into an existing parameter set. Every stored name and
/// shape must match the set exactly; anything else is rejected.
pub fn load_into(params: &mut ParamSet, path: &Path) -> Result<()> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)
        .map_err(|_| NnError::Checkpoint(format!("{}: truncated header", path.display())))?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint(format!(
            "{}: bad magic {:?}",
            path.display(),
            magic
        )));
    }
    let count = r
        .read_u32::<LittleEndian>()
        .map_err(|_| NnError::Checkpoint(format!("{}: truncated count", path.display())))? as usize;
    if count != params.len() {
        return Err(NnError::Checkpoint(format!(
            "{}: holds {} parameters, network has {}",
            path.display(),
            count,
            params.len()
        )));
    }
    for i in 0..count {
        let name_len = r
            .read_u32::<LittleEndian>()
            .map_err(|_| NnError::Checkpoint(format!("{}: truncated at parameter {i}", path.display())))?
            as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)
            .map_err(|_| NnError::Checkpoint(format!("{}: truncated name at parameter {i}", path.display())))?;
        let name = String::from_utf8(name)
            .map_err(|_| NnError::Checkpoint(format!("{}: non-utf8 name at parameter {i}", path.display())))?;
        let rank = r
            .read_u32::<LittleEndian>()
            .map_err(|_| NnError::Checkpoint(format!("{}: truncated rank for {name}", path.display())))?
            as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u32::<LittleEndian>().map_err(|_| {
                NnError::Checkpoint(format!("{}: truncated shape for {name}", path.display()))
            })? as usize);
        }
        let p = params.get_mut(i);
        if p.name != name || p.value.shape() != shape.as_slice() {
            return Err(NnError::Checkpoint(format!(
                "{}: parameter {i} is {name} {:?}, network expects {} {:?}",
                path.display(),
                shape,
                p.name,
                p.value.shape()
            )));
        }
        for v in p.value.data_mut() {
            *v = r.read_f32::<LittleEndian>().map_err(|_| {
                NnError::Checkpoint(format!("{}: truncated payload for {name}", path.display()))
            })?;
        }
    }
    Ok(())
}
