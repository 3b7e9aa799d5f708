//! Stokes operator powers, spectral projectors and the dealiased bilinear form
//! `B(u, v) = P_sigma((u . grad) v)`.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spectral_field::{
    forward_many, interleave, inverse_many, leray_project, split_components, GridSpec,
    RawSpectrum, SpectralField,
};

/// Multiplies every coefficient by `nu |j|^{2 theta}`.
pub fn apply_stokes_power<T: Real>(field: &SpectralField<T>, theta: T, nu: T) -> SpectralField<T> {
    let mut out = field.clone();
    out.scale_by_norm_sq(|nsq| nu * T::from_i64_lossy(nsq).powf(theta));
    out
}

/// True when `value = |j|^2` for some `j in Z^d`, `j != 0`.
pub fn is_level(dim: usize, value: i64) -> bool {
    if value <= 0 {
        return false;
    }
    let r = isqrt(value);
    match dim {
        2 => (0..=r).any(|a| is_square(value - a * a)),
        3 => (0..=r).any(|a| {
            let rest = value - a * a;
            (0..=isqrt(rest)).any(|b| is_square(rest - b * b))
        }),
        _ => false,
    }
}

pub(crate) fn isqrt(n: i64) -> i64 {
    if n <= 0 {
        return 0;
    }
    let mut r = (n as f64).sqrt() as i64;
    while r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    r
}

fn is_square(n: i64) -> bool {
    n >= 0 && isqrt(n).pow(2) == n
}

/// Galerkin cut `lambda_N < lambda_{N+1}` together with the band half-width `k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandProjectorSpec {
    /// Number of eigenvalues, with multiplicity, up to and including `lambda_n`.
    pub n: usize,
    pub lambda_n: i64,
    pub lambda_next: i64,
    pub k: f64,
}

impl BandProjectorSpec {
    pub fn new(n: usize, lambda_n: i64, lambda_next: i64, k: f64) -> Result<Self> {
        let spec = Self {
            n,
            lambda_n,
            lambda_next,
            k,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_next <= self.lambda_n {
            return Err(Error::invalid(
                "lambda_next",
                format!("{} is not above lambda_N = {}", self.lambda_next, self.lambda_n),
            ));
        }
        if !(self.k > 0.0 && self.k < self.lambda_n as f64) {
            return Err(Error::invalid(
                "k",
                format!("{} is not in (0, lambda_N = {})", self.k, self.lambda_n),
            ));
        }
        Ok(())
    }

    fn check_level(&self, dim: usize) -> Result<()> {
        self.validate()?;
        if !is_level(dim, self.lambda_n) {
            return Err(Error::NotALevel {
                level: self.lambda_n as f64,
            });
        }
        Ok(())
    }

    pub fn in_band(&self, nsq: i64) -> bool {
        let x = nsq as f64;
        x >= self.lambda_n as f64 - self.k && x <= self.lambda_n as f64 + self.k
    }
}

/// `P_N`: modes with `|j|^2 <= lambda_N`.
pub fn project_low<T: Real>(field: &SpectralField<T>, spec: &BandProjectorSpec) -> Result<SpectralField<T>> {
    spec.check_level(field.dim())?;
    let l = spec.lambda_n;
    Ok(field.restrict(|nsq| nsq <= l))
}

/// `Q_N = I - P_N`: modes with `|j|^2 >= lambda_{N+1}`.
pub fn project_high<T: Real>(field: &SpectralField<T>, spec: &BandProjectorSpec) -> Result<SpectralField<T>> {
    spec.check_level(field.dim())?;
    let l = spec.lambda_n;
    Ok(field.restrict(|nsq| nsq > l))
}

/// `(P_{k,N} u, R_{k,N} u, Q_{k,N} u)`: parts below, inside and above the closed band
/// `[lambda_N - k, lambda_N + k]`.
pub fn band_project<T: Real>(
    field: &SpectralField<T>,
    spec: &BandProjectorSpec,
) -> (SpectralField<T>, SpectralField<T>, SpectralField<T>) {
    let lo = spec.lambda_n as f64 - spec.k;
    let hi = spec.lambda_n as f64 + spec.k;
    (
        field.restrict(|nsq| (nsq as f64) < lo),
        field.restrict(|nsq| spec.in_band(nsq)),
        field.restrict(|nsq| (nsq as f64) > hi),
    )
}

/// `B(u, v)`.
pub fn bilinear_form<T: Real>(u: &SpectralField<T>, v: &SpectralField<T>) -> Result<SpectralField<T>> {
    bilinear_sum(&[(u, v)])
}

/// `sum_i B(u_i, v_i)`, sharing one forward transform.
pub fn bilinear_sum<T: Real>(pairs: &[(&SpectralField<T>, &SpectralField<T>)]) -> Result<SpectralField<T>> {
    let (first, _) = pairs
        .first()
        .ok_or_else(|| Error::invalid("pairs", "empty sum"))?;
    let grid = *first.grid();
    for (u, v) in pairs {
        grid.ensure_same(u.grid())?;
        grid.ensure_same(v.grid())?;
    }
    Ok(leray_project(advect_raw(&grid, pairs)))
}

/// Box projection of `sum_i (u_i . grad) v_i`, before the Leray projection.
pub(crate) fn advect_raw<T: Real>(
    grid: &GridSpec,
    pairs: &[(&SpectralField<T>, &SpectralField<T>)],
) -> RawSpectrum<T> {
    let d = grid.dim();
    let tables = grid.tables();
    let mut spectra: Vec<Vec<Complex<T>>> = Vec::with_capacity(pairs.len() * (d + d * d));
    for (u, v) in pairs {
        spectra.extend(split_components(u.as_slice(), d));
        for a in 0..d {
            for b in 0..d {
                spectra.push(
                    v.as_slice()
                        .chunks(d)
                        .zip(&tables.waves)
                        .map(|(c, j)| c[a] * Complex::new(T::zero(), T::from_i64_lossy(j.components()[b] as i64)))
                        .collect(),
                );
            }
        }
    }
    let phys = inverse_many(grid, &spectra);
    let points = phys[0].len();
    let mut out = vec![vec![T::zero(); points]; d];
    for p in 0..pairs.len() {
        let base = p * (d + d * d);
        for a in 0..d {
            let acc = &mut out[a];
            for b in 0..d {
                let ub = &phys[base + b];
                let dv = &phys[base + d + a * d + b];
                for ((o, x), y) in acc.iter_mut().zip(ub).zip(dv) {
                    *o = *o + *x * *y;
                }
            }
        }
    }
    let refs: Vec<&[T]> = out.iter().map(|c| c.as_slice()).collect();
    RawSpectrum::from_parts(*grid, interleave(&forward_many(grid, &refs)))
}

/// Adjoint of `h -> B(h, U)` on divergence-free fields in the box:
/// `P_sigma Pi_K (sum_n y_n grad U_n)`, so that `(B(h, U), y) = (h, bilinear_adjoint_first(U, y))`.
pub fn bilinear_adjoint_first<T: Real>(u: &SpectralField<T>, y: &SpectralField<T>) -> Result<SpectralField<T>> {
    let grid = *u.grid();
    grid.ensure_same(y.grid())?;
    let d = grid.dim();
    let tables = grid.tables();
    let mut spectra = split_components(y.as_slice(), d);
    for n in 0..d {
        for a in 0..d {
            spectra.push(
                u.as_slice()
                    .chunks(d)
                    .zip(&tables.waves)
                    .map(|(c, j)| c[n] * Complex::new(T::zero(), T::from_i64_lossy(j.components()[a] as i64)))
                    .collect(),
            );
        }
    }
    let phys = inverse_many(&grid, &spectra);
    let points = phys[0].len();
    let mut out = vec![vec![T::zero(); points]; d];
    for (a, acc) in out.iter_mut().enumerate() {
        for n in 0..d {
            let yn = &phys[n];
            let du = &phys[d + n * d + a];
            for ((o, x), g) in acc.iter_mut().zip(yn).zip(du) {
                *o = *o + *x * *g;
            }
        }
    }
    let refs: Vec<&[T]> = out.iter().map(|c| c.as_slice()).collect();
    Ok(leray_project(RawSpectrum::from_parts(
        grid,
        interleave(&forward_many(&grid, &refs)),
    )))
}

/// `(B(u, v), w)_H`.
pub fn trilinear<T: Real>(u: &SpectralField<T>, v: &SpectralField<T>, w: &SpectralField<T>) -> Result<T> {
    u.grid().ensure_same(w.grid())?;
    Ok(bilinear_form(u, v)?.inner(w))
}
