//! Binary operator dumps.
//!
//! Layout, all little endian: 8-byte magic, `u64` rows, `u64` cols, `u64`
//! link count, `(u32, u32)` per link, then `rows * cols` complex entries in
//! row-major order as `(f64 re, f64 im)`.

use std::io::{Read, Write};

use faer::{c64, Mat};

use super::ModelError;

pub const DUMP_MAGIC: [u8; 8] = *b"ETHMOP01";

#[derive(Clone, Debug)]
pub struct OperatorDump {
    pub matrix: Mat<c64>,
    pub links: Vec<(usize, usize)>,
}

pub fn write_operator_dump<W: Write>(mut w: W, m: &Mat<c64>, links: &[(usize, usize)]) -> Result<(), ModelError> {
    w.write_all(&DUMP_MAGIC)?;
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    w.write_all(&(links.len() as u64).to_le_bytes())?;
    for &(a, b) in links {
        w.write_all(&(a as u32).to_le_bytes())?;
        w.write_all(&(b as u32).to_le_bytes())?;
    }
    let mut row = Vec::with_capacity(16 * m.ncols());
    for r in 0..m.nrows() {
        row.clear();
        for c in 0..m.ncols() {
            let z = m[(r, c)];
            row.extend_from_slice(&z.re.to_le_bytes());
            row.extend_from_slice(&z.im.to_le_bytes());
        }
        w.write_all(&row)?;
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, ModelError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_operator_dump<R: Read>(mut r: R) -> Result<OperatorDump, ModelError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if magic != DUMP_MAGIC {
        return Err(ModelError::Dump("bad magic".into()));
    }
    let rows = read_u64(&mut r)? as usize;
    let cols = read_u64(&mut r)? as usize;
    let n_links = read_u64(&mut r)? as usize;
    if rows.saturating_mul(cols) > 1 << 28 || n_links > 1 << 20 {
        return Err(ModelError::Dump(format!("implausible header {rows}x{cols}, {n_links} links")));
    }
    let mut links = Vec::with_capacity(n_links);
    for _ in 0..n_links {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        let a = u32::from_le_bytes(b[..4].try_into().unwrap()) as usize;
        let c = u32::from_le_bytes(b[4..].try_into().unwrap()) as usize;
        links.push((a, c));
    }
    let mut buf = vec![0u8; 16 * cols];
    let mut matrix = Mat::zeros(rows, cols);
    for row in 0..rows {
        r.read_exact(&mut buf)?;
        for c in 0..cols {
            let re = f64::from_le_bytes(buf[16 * c..16 * c + 8].try_into().unwrap());
            let im = f64::from_le_bytes(buf[16 * c + 8..16 * c + 16].try_into().unwrap());
            matrix[(row, c)] = c64::new(re, im);
        }
    }
    Ok(OperatorDump { matrix, links })
}
