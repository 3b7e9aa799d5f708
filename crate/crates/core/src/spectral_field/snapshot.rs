//! Binary snapshot files: a text header line `IMLAB1 d=<d> M=<M> count=<n>` followed by
//! `n` records of `d` little-endian `i32` wavevector components and `2d` little-endian
//! `f64` values (re, im per component). Only the canonical half-spectrum is stored.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex;

use super::field::{RawSpectrum, SpectralField};
use super::grid::{GridSpec, WaveVector};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub fn write_snapshot<T: Real, W: Write>(field: &SpectralField<T>, mut out: W) -> Result<()> {
    let grid = field.grid();
    let records: Vec<(WaveVector, &[Complex<T>])> = field
        .modes()
        .filter(|(j, c)| j.is_canonical() && c.iter().any(|v| v.re != T::zero() || v.im != T::zero()))
        .collect();
    writeln!(
        out,
        "IMLAB1 d={} M={} count={}",
        grid.dim(),
        grid.max_mode(),
        records.len()
    )?;
    for (j, c) in records {
        for &k in j.components() {
            out.write_all(&k.to_le_bytes())?;
        }
        for v in c {
            out.write_all(&v.re.to_f64_lossy().to_le_bytes())?;
            out.write_all(&v.im.to_f64_lossy().to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_snapshot_file<T: Real>(field: &SpectralField<T>, path: impl AsRef<Path>) -> Result<()> {
    write_snapshot(field, BufWriter::new(File::create(path)?))
}

/// Reads a snapshot onto the default-dealiased grid named in its header.
pub fn read_snapshot<T: Real, R: Read>(input: R) -> Result<SpectralField<T>> {
    read_snapshot_with(input, |d, m| GridSpec::new(d, m))
}

/// Reads a snapshot onto `grid`; the header must agree on `d` and `M`.
pub fn read_snapshot_on<T: Real, R: Read>(input: R, grid: &GridSpec) -> Result<SpectralField<T>> {
    let g = *grid;
    read_snapshot_with(input, move |d, m| {
        if d != g.dim() || m != g.max_mode() {
            return Err(Error::Snapshot(format!(
                "header d={d} M={m} does not match {g:?}"
            )));
        }
        Ok(g)
    })
}

pub fn read_snapshot_file<T: Real>(path: impl AsRef<Path>) -> Result<SpectralField<T>> {
    read_snapshot(File::open(path)?)
}

fn read_snapshot_with<T: Real, R: Read>(
    input: R,
    make_grid: impl FnOnce(usize, usize) -> Result<GridSpec>,
) -> Result<SpectralField<T>> {
    let mut reader = BufReader::new(input);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    let (d, m, count) = parse_header(header.trim_end())?;
    let grid = make_grid(d, m)?;
    let mut raw = RawSpectrum::<T>::zeros(grid);
    let mut ibuf = [0u8; 4];
    let mut fbuf = [0u8; 8];
    let mut value = vec![Complex::new(T::zero(), T::zero()); d];
    for rec in 0..count {
        let mut comps = [0i32; 3];
        for c in comps.iter_mut().take(d) {
            reader
                .read_exact(&mut ibuf)
                .map_err(|_| Error::Snapshot(format!("truncated at record {rec}")))?;
            *c = i32::from_le_bytes(ibuf);
        }
        let mut parts = [0.0f64; 6];
        for p in parts.iter_mut().take(2 * d) {
            reader
                .read_exact(&mut fbuf)
                .map_err(|_| Error::Snapshot(format!("truncated at record {rec}")))?;
            *p = f64::from_le_bytes(fbuf);
        }
        let j = WaveVector::new(&comps[..d]);
        if !j.is_canonical() {
            return Err(Error::Snapshot(format!(
                "record {rec}: {j:?} is not in the canonical half-spectrum"
            )));
        }
        let mut mag = 0.0;
        for c in 0..d {
            let (re, im) = (parts[2 * c], parts[2 * c + 1]);
            if !re.is_finite() || !im.is_finite() {
                return Err(Error::Snapshot(format!("record {rec}: non-finite value")));
            }
            value[c] = Complex::new(T::lit(re), T::lit(im));
            mag += re * re + im * im;
        }
        let mut jdot = Complex::new(0.0, 0.0);
        for c in 0..d {
            jdot += Complex::new(parts[2 * c], parts[2 * c + 1]) * comps[c] as f64;
        }
        if jdot.norm() > 1e-12 * (j.norm_sq() as f64).sqrt() * mag.sqrt() {
            return Err(Error::Snapshot(format!("record {rec}: {j:?} is not divergence-free")));
        }
        raw.set(&j, &value)
            .map_err(|e| Error::Snapshot(format!("record {rec}: {e}")))?;
        let conj: Vec<_> = value.iter().map(|v| v.conj()).collect();
        raw.set(&-j, &conj)?;
    }
    Ok(SpectralField::from_coeffs_unchecked(grid, raw.as_slice().to_vec()))
}

fn parse_header(line: &str) -> Result<(usize, usize, usize)> {
    let bad = || Error::Snapshot(format!("malformed header `{line}`"));
    let mut it = line.split_whitespace();
    if it.next() != Some("IMLAB1") {
        return Err(bad());
    }
    let mut field = |key: &str| -> Result<usize> {
        it.next()
            .and_then(|t| t.strip_prefix(key))
            .and_then(|v| v.parse().ok())
            .ok_or_else(bad)
    };
    let d = field("d=")?;
    let m = field("M=")?;
    let count = field("count=")?;
    if d != 2 && d != 3 {
        return Err(bad());
    }
    Ok((d, m, count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral_field::random_field;

    #[test]
    fn round_trip_is_exact() {
        for d in [2, 3] {
            let grid = GridSpec::new(d, 6).unwrap();
            let u: SpectralField<f64> = random_field(&grid, 3, 1.5).unwrap();
            let mut bytes = Vec::new();
            write_snapshot(&u, &mut bytes).unwrap();
            let v: SpectralField<f64> = read_snapshot(bytes.as_slice()).unwrap();
            assert_eq!(u, v);
        }
    }

    #[test]
    fn header_layout() {
        let grid = GridSpec::new(2, 3).unwrap();
        let u: SpectralField<f64> = random_field(&grid, 1, 0.0).unwrap();
        let mut bytes = Vec::new();
        write_snapshot(&u, &mut bytes).unwrap();
        // K = 2: 24 nonzero modes, 12 canonical; each record is 2*4 + 4*8 bytes.
        let header = b"IMLAB1 d=2 M=3 count=12\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 12 * 40);
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_snapshot::<f64, _>(&b"IMLAB2 d=2 M=3 count=0\n"[..]).is_err());
        assert!(read_snapshot::<f64, _>(&b"IMLAB1 d=2 M=3 count=1\n\x01"[..]).is_err());
    }
}
