//! Binary snapshot format and CSV slice export.
//!
//! Layout (bit-exact): magic `RBROT1\0`, then little-endian u32
//! nx, ny, nz, field count; per field a 16-byte ASCII name padded with
//! NUL and the float64 little-endian values in x-fastest row-major order.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::GridSpec;

pub const MAGIC: &[u8; 7] = b"RBROT1\0";

pub struct Snapshot {
    pub nx: u32,
    pub ny: u32,
    pub nz: u32,
    pub fields: Vec<(String, Vec<f64>)>,
}

impl Snapshot {
    pub fn field(&self, name: &str) -> Option<&[f64]> {
        self.fields.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }
}

pub fn write_snapshot(path: &Path, grid: &GridSpec, fields: &[(&str, &[f64])]) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    for v in [grid.nx as u32, grid.ny as u32, grid.nz as u32, fields.len() as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let n = grid.cell_count();
    for (name, values) in fields {
        if values.len() != n {
            return Err(Error::Domain(format!(
                "field {name} has {} values, grid has {n} cells",
                values.len()
            )));
        }
        if !name.is_ascii() || name.len() > 16 {
            return Err(Error::Domain(format!("field name {name:?} must be ASCII, <= 16 bytes")));
        }
        let mut tag = [0u8; 16];
        tag[..name.len()].copy_from_slice(name.as_bytes());
        buf.extend_from_slice(&tag);
        for v in *values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let mut file = std::fs::File::open(path)?;
    let mut data = Vec::new();
    file.read_to_end(&mut data)?;
    if data.len() < 7 + 16 || &data[..7] != MAGIC {
        return Err(Error::Domain(format!("{} is not an RBROT1 snapshot", path.display())));
    }
    let mut pos = 7;
    let read_u32 = |pos: &mut usize| -> Result<u32> {
        let b: [u8; 4] = data[*pos..*pos + 4]
            .try_into()
            .map_err(|_| Error::Domain("truncated snapshot header".into()))?;
        *pos += 4;
        Ok(u32::from_le_bytes(b))
    };
    let nx = read_u32(&mut pos)?;
    let ny = read_u32(&mut pos)?;
    let nz = read_u32(&mut pos)?;
    let count = read_u32(&mut pos)?;
    let n = (nx * ny * nz) as usize;
    let mut fields = Vec::with_capacity(count as usize);
    for _ in 0..count {
        if pos + 16 + 8 * n > data.len() {
            return Err(Error::Domain("truncated snapshot payload".into()));
        }
        let name_bytes = &data[pos..pos + 16];
        pos += 16;
        let name = String::from_utf8_lossy(name_bytes)
            .trim_end_matches('\0')
            .to_string();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            let b: [u8; 8] = data[pos..pos + 8].try_into().unwrap();
            pos += 8;
            values.push(f64::from_le_bytes(b));
        }
        fields.push((name, values));
    }
    Ok(Snapshot { nx, ny, nz, fields })
}

/// Axis for a 2D slice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SliceAxis {
    X,
    Y,
    Z,
}

/// Write one 2D slice of a scalar field as CSV with coordinate columns.
pub fn write_slice_csv(path: &Path, f: &ScalarField, axis: SliceAxis, index: usize) -> Result<()> {
    let g = f.grid;
    let mut out = String::new();
    match axis {
        SliceAxis::Z => {
            if index >= g.nz {
                return Err(Error::Domain(format!("z slice {index} out of range")));
            }
            out.push_str("x,y,value\n");
            for j in 0..g.ny {
                for i in 0..g.nx {
                    out.push_str(&format!("{:.12e},{:.12e},{:.12e}\n", g.xc(i), g.yc(j), f.at(i, j, index)));
                }
            }
        }
        SliceAxis::Y => {
            if index >= g.ny {
                return Err(Error::Domain(format!("y slice {index} out of range")));
            }
            out.push_str("x,z,value\n");
            for k in 0..g.nz {
                for i in 0..g.nx {
                    out.push_str(&format!("{:.12e},{:.12e},{:.12e}\n", g.xc(i), g.zc(k), f.at(i, index, k)));
                }
            }
        }
        SliceAxis::X => {
            if index >= g.nx {
                return Err(Error::Domain(format!("x slice {index} out of range")));
            }
            out.push_str("y,z,value\n");
            for k in 0..g.nz {
                for j in 0..g.ny {
                    out.push_str(&format!("{:.12e},{:.12e},{:.12e}\n", g.yc(j), g.zc(k), f.at(index, j, k)));
                }
            }
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let g = GridSpec::new_slab(1.0, 4, 4).unwrap();
        let a: Vec<f64> = (0..16).map(|i| i as f64 * 0.1 - 0.7).collect();
        let b: Vec<f64> = (0..16).map(|i| (i as f64).sin()).collect();
        let dir = std::env::temp_dir().join("rbrot_snapshot_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.rbrot");
        write_snapshot(&path, &g, &[("rho", &a), ("theta", &b)]).unwrap();
        let s = read_snapshot(&path).unwrap();
        assert_eq!(s.nx, 4);
        assert_eq!(s.ny, 1);
        assert_eq!(s.nz, 4);
        assert_eq!(s.field("rho").unwrap(), a.as_slice());
        assert_eq!(s.field("theta").unwrap(), b.as_slice());
        // header check: first 7 bytes are the magic
        let raw = std::fs::read(&path).unwrap();
        assert_eq!(&raw[..7], MAGIC);
        assert_eq!(u32::from_le_bytes(raw[7..11].try_into().unwrap()), 4);
    }

    #[test]
    fn rejects_wrong_magic() {
        let dir = std::env::temp_dir().join("rbrot_snapshot_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.rbrot");
        std::fs::write(&path, b"NOTRB1\0aaaaaaaaaaaaaaaaaaaa").unwrap();
        assert!(read_snapshot(&path).is_err());
    }
}
