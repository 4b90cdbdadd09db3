//! Binary and CSV layouts for fields, checkpoints and diagnostic series.
//!
//! Field binary layout, all little-endian:
//!
//! ```text
//! offset  size  content
//! 0       8     magic "LFDFIELD"
//! 8       4     u32 format version (1)
//! 12      8     f64 half-width L
//! 20      8     u64 nodes per axis N
//! 28      8     f64 eps
//! 36      8N³   f64 values, i-major, then j, k-minor
//! ```
//!
//! A checkpoint is the magic "LFDCKPT1", a 32-byte configuration hash, the
//! u64 step index, the f64 time, and then a field block as above.

use std::fmt;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::grid::{Field, VelocityGrid};
use crate::stepper::DiagRecord;

const FIELD_MAGIC: &[u8; 8] = b"LFDFIELD";
const CHECKPOINT_MAGIC: &[u8; 8] = b"LFDCKPT1";
const FIELD_VERSION: u32 = 1;

pub fn write_field<W: Write>(mut w: W, f: &Field) -> Result<()> {
    let g = f.grid();
    let mut buf = Vec::with_capacity(36 + 8 * g.len());
    buf.extend_from_slice(FIELD_MAGIC);
    buf.extend_from_slice(&FIELD_VERSION.to_le_bytes());
    buf.extend_from_slice(&g.half_width().to_le_bytes());
    buf.extend_from_slice(&(g.n() as u64).to_le_bytes());
    buf.extend_from_slice(&g.eps().to_le_bytes());
    for v in f.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_array<R: Read, const K: usize>(r: &mut R) -> Result<[u8; K]> {
    let mut b = [0u8; K];
    r.read_exact(&mut b).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated input".into()),
        _ => Error::Io(e),
    })?;
    Ok(b)
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(read_array(r)?))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

pub fn read_field<R: Read>(mut r: R) -> Result<Field> {
    let magic: [u8; 8] = read_array(&mut r)?;
    if &magic != FIELD_MAGIC {
        return Err(Error::Format("not a field file".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != FIELD_VERSION {
        return Err(Error::Format(format!(
            "unsupported field version {version}"
        )));
    }
    let l = read_f64(&mut r)?;
    let n =
        usize::try_from(read_u64(&mut r)?).map_err(|_| Error::Format("grid too large".into()))?;
    let eps = read_f64(&mut r)?;
    let grid = VelocityGrid::new(l, n, eps)?;
    let mut bytes = vec![0u8; 8 * grid.len()];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format("truncated field values".into()))?;
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Field::from_values(grid, values)
}

/// Shortest round-tripping text for `x`, in exponent form when the
/// positional form would be long.
pub struct Num(pub f64);

impl fmt::Display for Num {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = self.0.abs();
        if a == 0.0 || !a.is_finite() || (1e-4..1e15).contains(&a) {
            write!(f, "{}", self.0)
        } else {
            write!(f, "{:e}", self.0)
        }
    }
}

/// Field as CSV rows `vx,vy,vz,f` in storage order.
pub fn write_field_csv<W: Write>(mut w: W, f: &Field) -> Result<()> {
    writeln!(w, "vx,vy,vz,f")?;
    for (idx, value) in f.values().iter().enumerate() {
        let v = f.grid().node(idx);
        writeln!(
            w,
            "{},{},{},{}",
            Num(v[0]),
            Num(v[1]),
            Num(v[2]),
            Num(*value)
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub step: u64,
    pub time: f64,
    pub field: Field,
}

pub fn write_checkpoint<W: Write>(mut w: W, c: &Checkpoint) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&c.config_hash)?;
    w.write_all(&c.step.to_le_bytes())?;
    w.write_all(&c.time.to_le_bytes())?;
    write_field(w, &c.field)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let magic: [u8; 8] = read_array(&mut r)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let config_hash = read_array(&mut r)?;
    let step = read_u64(&mut r)?;
    let time = read_f64(&mut r)?;
    let field = read_field(r)?;
    Ok(Checkpoint {
        config_hash,
        step,
        time,
        field,
    })
}

/// Column names of the diagnostics CSV. New columns are only ever appended.
pub const DIAG_COLUMNS: [&str; 15] = [
    "t",
    "mass",
    "px",
    "py",
    "pz",
    "energy",
    "H",
    "D",
    "H_rel",
    "wdist",
    "min_f",
    "max_f",
    "picard_iters",
    "lin_iters",
    "overshoot",
];

/// Diagnostic series as CSV. Floats use the shortest representation that
/// round-trips, so identical runs give identical bytes.
pub fn write_diagnostics_csv<W: Write>(mut w: W, records: &[DiagRecord]) -> Result<()> {
    writeln!(w, "{}", DIAG_COLUMNS.join(","))?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            Num(r.t),
            Num(r.moments.mass),
            Num(r.moments.momentum[0]),
            Num(r.moments.momentum[1]),
            Num(r.moments.momentum[2]),
            Num(r.moments.energy),
            Num(r.entropy),
            Num(r.dissipation),
            Num(r.relative_entropy),
            Num(r.wdist),
            Num(r.min_f),
            Num(r.max_f),
            r.picard_iters,
            r.lin_iters,
            Num(r.overshoot)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_roundtrip_is_exact() {
        let g = VelocityGrid::new(3.0, 8, 0.5).unwrap();
        let f = Field::from_fn(g, |v| (v[0] - 0.1 * v[2]).exp() / 3.0);
        let mut buf = Vec::new();
        write_field(&mut buf, &f).unwrap();
        assert_eq!(buf.len(), 36 + 8 * 512);
        assert_eq!(read_field(buf.as_slice()).unwrap(), f);
    }

    #[test]
    fn truncated_and_foreign_input_is_rejected() {
        let g = VelocityGrid::new(3.0, 8, 0.5).unwrap();
        let mut buf = Vec::new();
        write_field(&mut buf, &Field::zeros(g)).unwrap();
        assert!(matches!(read_field(&buf[..100]), Err(Error::Format(_))));
        buf[0] = b'X';
        assert!(matches!(read_field(buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let g = VelocityGrid::new(3.0, 8, 1.0).unwrap();
        let c = Checkpoint {
            config_hash: [7; 32],
            step: 42,
            time: 1.25,
            field: Field::constant(g, 0.25),
        };
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &c).unwrap();
        assert_eq!(read_checkpoint(buf.as_slice()).unwrap(), c);
    }

    #[test]
    fn csv_numbers_round_trip() {
        for x in [
            0.0,
            -0.0,
            1.0,
            -2.5e-3,
            1e-4,
            9.99e-5,
            3.0e-17,
            1.0 / 3.0,
            6.02e23,
            1e15,
            f64::MIN_POSITIVE,
        ] {
            let text = Num(x).to_string();
            assert_eq!(
                text.parse::<f64>().unwrap().to_bits(),
                x.to_bits(),
                "{text}"
            );
        }
        assert_eq!(Num(1e-7).to_string(), "1e-7");
        assert_eq!(Num(0.25).to_string(), "0.25");
        assert_eq!(Num(f64::NAN).to_string(), "NaN");
    }
}
