//! Field snapshots: CSV `y,re,im` and a raw little-endian binary form with a
//! 24-byte header `(n: u64, L: f64, t: f64)` followed by interleaved re/im.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use super::{Field, Grid1D};
use crate::error::{Error, Result};

/// 17 significant digits, round-trip exact.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv<W: Write>(field: &Field, mut w: W) -> Result<()> {
    writeln!(w, "y,re,im")?;
    let g = field.grid();
    for (j, v) in field.values().iter().enumerate() {
        writeln!(w, "{},{},{}", fmt_f64(g.point(j)), fmt_f64(v.re), fmt_f64(v.im))?;
    }
    Ok(())
}

pub fn save_csv(field: &Field, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = BufWriter::new(f);
    write_csv(field, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Reads a `y,re,im` CSV. The grid is recovered from the first sample and
/// the point count, and the `y` column must match it.
pub fn read_csv<R: Read>(r: R) -> Result<Field> {
    let mut ys = Vec::new();
    let mut vals = Vec::new();
    for (lineno, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with('y')) {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(Error::Parse(format!("line {}: expected 3 columns", lineno + 1)));
        }
        let p = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
        };
        ys.push(p(cols[0])?);
        vals.push(Complex64::new(p(cols[1])?, p(cols[2])?));
    }
    if ys.is_empty() {
        return Err(Error::Parse("empty field file".into()));
    }
    let grid = Grid1D::new(ys.len(), -ys[0])?;
    for (j, y) in ys.iter().enumerate() {
        if (y - grid.point(j)).abs() > 1e-9 * (1.0 + grid.half_width()) {
            return Err(Error::Parse(format!("sample {j} at y = {y} is off the uniform grid")));
        }
    }
    Field::new(grid, vals)
}

pub fn load_csv(path: &Path) -> Result<Field> {
    read_csv(std::fs::File::open(path)?)
}

pub fn write_binary<W: Write>(field: &Field, t: f64, mut w: W) -> Result<()> {
    let g = field.grid();
    w.write_all(&(g.len() as u64).to_le_bytes())?;
    w.write_all(&g.half_width().to_le_bytes())?;
    w.write_all(&t.to_le_bytes())?;
    for v in field.values() {
        w.write_all(&v.re.to_le_bytes())?;
        w.write_all(&v.im.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<(Field, f64)> {
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let n = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let l = f64::from_le_bytes(word);
    r.read_exact(&mut word)?;
    let t = f64::from_le_bytes(word);
    let grid = Grid1D::new(n, l)?;
    let mut vals = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut word)?;
        let re = f64::from_le_bytes(word);
        r.read_exact(&mut word)?;
        let im = f64::from_le_bytes(word);
        vals.push(Complex64::new(re, im));
    }
    Ok((Field::new(grid, vals)?, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn csv_and_binary_round_trip(
            vals in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 32),
            l in 0.5f64..50.0,
            t in 0.0f64..10.0,
        ) {
            let g = Grid1D::new(32, l).unwrap();
            let f = Field::new(g, vals.iter().map(|&(a, b)| Complex64::new(a, b)).collect()).unwrap();
            let mut buf = Vec::new();
            write_csv(&f, &mut buf).unwrap();
            let back = read_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(back.values(), f.values());
            prop_assert!((back.grid().half_width() - l).abs() < 1e-12 * l);

            let mut bin = Vec::new();
            write_binary(&f, t, &mut bin).unwrap();
            prop_assert_eq!(bin.len(), 24 + 32 * 16);
            let (bf, bt) = read_binary(bin.as_slice()).unwrap();
            prop_assert_eq!(bt, t);
            prop_assert_eq!(bf, f);
        }
    }

    #[test]
    fn bad_csv_is_rejected() {
        assert!(read_csv("y,re,im\n".as_bytes()).is_err());
        assert!(read_csv("y,re,im\n1,2\n".as_bytes()).is_err());
    }
}
