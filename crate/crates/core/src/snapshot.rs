//! Binary field snapshots.
//!
//! Layout, all little-endian 8-byte words: magic, version, dim,
//! points_per_axis, box_half_width, then `re` and `im` in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{ComplexField, Grid};

pub const MAGIC: [u8; 8] = *b"NLSPFLD\0";
pub const VERSION: u64 = 1;

pub fn write_field<W: Write>(mut w: W, field: &ComplexField) -> Result<()> {
    let g = field.grid();
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(g.dim() as u64).to_le_bytes())?;
    w.write_all(&(g.points_per_axis() as u64).to_le_bytes())?;
    w.write_all(&g.half_width().to_le_bytes())?;
    for v in field.re().iter().chain(field.im()) {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_field<R: Read>(mut r: R) -> Result<ComplexField> {
    let mut word = [0u8; 8];
    r.read_exact(&mut word)
        .map_err(|_| Error::Format("file too short for header".into()))?;
    if word != MAGIC {
        return Err(Error::Format("wrong magic bytes".into()));
    }
    let next = |r: &mut R| -> Result<[u8; 8]> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)
            .map_err(|_| Error::Format("truncated header".into()))?;
        Ok(b)
    };
    let version = u64::from_le_bytes(next(&mut r)?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dim = u64::from_le_bytes(next(&mut r)?) as usize;
    let n = u64::from_le_bytes(next(&mut r)?) as usize;
    let l = f64::from_le_bytes(next(&mut r)?);
    let grid = Grid::new(dim, n, l).map_err(|e| Error::Format(e.to_string()))?;
    let len = grid.len();
    let mut bytes = vec![0u8; 16 * len];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format("truncated data section".into()))?;
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let (re, im) = vals.split_at(len);
    ComplexField::from_parts(&grid, re.to_vec(), im.to_vec()).map_err(|e| Error::Format(e.to_string()))
}

pub fn save(path: &Path, field: &ComplexField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_field(&mut w, field)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ComplexField> {
    read_field(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn round_trip_is_bit_exact() {
        let g = Grid::new(2, 16, 3.5).unwrap();
        let f = ComplexField::from_fn(&g, |x| Complex64::new(x[0].sin(), (x[1] * 0.3).exp()));
        let mut buf = Vec::new();
        write_field(&mut buf, &f).unwrap();
        assert_eq!(buf.len(), 40 + 16 * 256);
        assert_eq!(&buf[..8], b"NLSPFLD\0");
        let back = read_field(&buf[..]).unwrap();
        assert_eq!(back.grid(), f.grid());
        assert_eq!(back.re(), f.re());
        assert_eq!(back.im(), f.im());
    }

    #[test]
    fn rejects_corrupt_input() {
        let g = Grid::new(1, 8, 1.0).unwrap();
        let mut buf = Vec::new();
        write_field(&mut buf, &ComplexField::zeros(&g)).unwrap();
        assert!(matches!(read_field(&buf[..buf.len() - 1]), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_field(&bad[..]), Err(Error::Format(_))));
        let mut nan = buf.clone();
        let at = nan.len() - 8;
        nan[at..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(read_field(&nan[..]).is_err());
    }
}
