use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{MaximinOrdering, SparseFactor, SparsityPattern};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"NGMMKLSC";
const VERSION: u32 = 1;

fn write_body(f: &SparseFactor, w: &mut impl Write) -> std::io::Result<()> {
    let n = f.len();
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    w.write_u64::<LE>(n as u64)?;
    w.write_f64::<LE>(f.rho())?;
    for &i in f.ordering.selection() {
        w.write_u64::<LE>(i as u64)?;
    }
    for &d in f.ordering.distances() {
        w.write_f64::<LE>(d)?;
    }
    w.write_u64::<LE>(f.pattern.nnz() as u64)?;
    for &o in f.pattern.offsets() {
        w.write_u64::<LE>(o as u64)?;
    }
    for &r in f.pattern.rows() {
        w.write_u64::<LE>(r as u64)?;
    }
    for &v in &f.values {
        w.write_f64::<LE>(v)?;
    }
    for &g in &f.groups {
        w.write_u64::<LE>(g as u64)?;
    }
    w.write_all(&f.fingerprint)
}

/// Writes the factor atomically (temporary file, then rename).
pub fn write_factor(factor: &SparseFactor, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        write_body(factor, &mut w).map_err(|e| Error::io(&tmp, e))?;
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_usizes(r: &mut impl Read, n: usize) -> std::io::Result<Vec<usize>> {
    (0..n).map(|_| r.read_u64::<LE>().map(|v| v as usize)).collect()
}

fn read_f64s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f64>> {
    (0..n).map(|_| r.read_f64::<LE>()).collect()
}

pub fn read_factor(path: &Path) -> Result<SparseFactor> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |msg: &str| Error::Validity(format!("{}: {msg}", path.display()));
    let io = |e| Error::io(path, e);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(bad("not a sparse factor file"));
    }
    if r.read_u32::<LE>().map_err(io)? != VERSION {
        return Err(bad("unsupported factor file version"));
    }
    let n = r.read_u64::<LE>().map_err(io)? as usize;
    let rho = r.read_f64::<LE>().map_err(io)?;
    let order = read_usizes(&mut r, n).map_err(io)?;
    let dist = read_f64s(&mut r, n).map_err(io)?;
    let nnz = r.read_u64::<LE>().map_err(io)? as usize;
    let offsets = read_usizes(&mut r, n + 1).map_err(io)?;
    let rows = read_usizes(&mut r, nnz).map_err(io)?;
    let values = read_f64s(&mut r, nnz).map_err(io)?;
    let groups = read_usizes(&mut r, n).map_err(io)?;
    let mut fingerprint = [0u8; 32];
    r.read_exact(&mut fingerprint).map_err(io)?;
    if offsets.first() != Some(&0) || offsets.last() != Some(&nnz) || offsets.windows(2).any(|w| w[0] > w[1]) {
        return Err(bad("corrupt column offsets"));
    }
    if rows.iter().any(|&x| x >= n) || groups.iter().any(|&g| g >= n) {
        return Err(bad("index out of range"));
    }
    Ok(SparseFactor {
        ordering: MaximinOrdering::from_parts(order, dist)?,
        pattern: SparsityPattern::from_raw(rho, offsets, rows),
        values,
        groups,
        fingerprint,
    })
}
