use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex;
use num_traits::Zero;

use super::grid::{GridSpec, WaveVector};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Coefficient box without the divergence-free / Hermitian / zero-mean invariants:
/// the input of [`leray_project`] and the output of [`from_physical`](super::from_physical).
#[derive(Clone, Debug, PartialEq)]
pub struct RawSpectrum<T> {
    grid: GridSpec,
    coeffs: Vec<Complex<T>>,
}

impl<T: Real> RawSpectrum<T> {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            coeffs: vec![Complex::zero(); grid.slots() * grid.dim()],
        }
    }

    /// Builds a box from explicit `(j, coefficient)` pairs. Entries outside the box are an error.
    pub fn from_map(grid: GridSpec, map: &BTreeMap<WaveVector, Vec<Complex<T>>>) -> Result<Self> {
        let mut raw = Self::zeros(grid);
        for (j, value) in map {
            raw.set(j, value)?;
        }
        Ok(raw)
    }

    pub fn set(&mut self, j: &WaveVector, value: &[Complex<T>]) -> Result<()> {
        let d = self.grid.dim();
        if value.len() != d {
            return Err(Error::SizeMismatch {
                expected: d,
                found: value.len(),
            });
        }
        let slot = self.grid.slot_of(j).ok_or_else(|| {
            Error::GridMismatch(format!("{j:?} outside the box of {:?}", self.grid))
        })?;
        self.coeffs[slot * d..(slot + 1) * d].copy_from_slice(value);
        Ok(())
    }

    pub fn get(&self, j: &WaveVector) -> Option<&[Complex<T>]> {
        let d = self.grid.dim();
        self.grid
            .slot_of(j)
            .map(|s| &self.coeffs[s * d..(s + 1) * d])
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn as_slice(&self) -> &[Complex<T>] {
        &self.coeffs
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex<T>] {
        &mut self.coeffs
    }

    pub(crate) fn from_parts(grid: GridSpec, coeffs: Vec<Complex<T>>) -> Self {
        debug_assert_eq!(coeffs.len(), grid.slots() * grid.dim());
        Self { grid, coeffs }
    }

    /// Nonzero entries as an ordered map.
    pub fn to_map(&self) -> BTreeMap<WaveVector, Vec<Complex<T>>> {
        let d = self.grid.dim();
        let mut map = BTreeMap::new();
        for (slot, chunk) in self.coeffs.chunks(d).enumerate() {
            if chunk.iter().any(|c| !c.is_zero()) {
                map.insert(self.grid.wave_of(slot), chunk.to_vec());
            }
        }
        map
    }
}

/// Real, divergence-free, zero-mean vector field on `T^d`, stored as the full box of
/// Fourier coefficients `u_j in C^d` (both `j` and `-j`).
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField<T> {
    grid: GridSpec,
    coeffs: Vec<Complex<T>>,
}

/// Applies the mode-wise Leray matrices `P^j = I - j j^T / |j|^2`, drops `j = 0` and
/// symmetrizes so that `u_{-j} = conj(u_j)`.
pub fn leray_project<T: Real>(raw: RawSpectrum<T>) -> SpectralField<T> {
    let RawSpectrum { grid, mut coeffs } = raw;
    project_in_place(&grid, &mut coeffs);
    let mut field = SpectralField { grid, coeffs };
    field.enforce_symmetry();
    field
}

pub(crate) fn project_in_place<T: Real>(grid: &GridSpec, coeffs: &mut [Complex<T>]) {
    let d = grid.dim();
    let tables = grid.tables();
    for (slot, chunk) in coeffs.chunks_mut(d).enumerate() {
        let nsq = tables.norm_sq[slot];
        if nsq == 0 {
            chunk.fill(Complex::zero());
            continue;
        }
        project_mode(tables.waves[slot].components(), nsq, chunk);
    }
}

/// `c <- c - j (j . c) / |j|^2`, with an exact no-op when `j . c` vanishes.
#[inline]
pub(crate) fn project_mode<T: Real>(j: &[i32], nsq: i64, c: &mut [Complex<T>]) {
    let mut dot = Complex::<T>::zero();
    for (jc, cc) in j.iter().zip(c.iter()) {
        dot = dot + *cc * T::from_i64_lossy(*jc as i64);
    }
    if dot.is_zero() {
        return;
    }
    let s = dot / T::from_i64_lossy(nsq);
    for (jc, cc) in j.iter().zip(c.iter_mut()) {
        *cc = *cc - s * T::from_i64_lossy(*jc as i64);
    }
}

impl<T: Real> SpectralField<T> {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            coeffs: vec![Complex::zero(); grid.slots() * grid.dim()],
        }
    }

    /// Wraps coefficients without touching them. The caller guarantees all invariants.
    pub(crate) fn from_coeffs_unchecked(grid: GridSpec, coeffs: Vec<Complex<T>>) -> Self {
        debug_assert_eq!(coeffs.len(), grid.slots() * grid.dim());
        Self { grid, coeffs }
    }

    fn enforce_symmetry(&mut self) {
        let d = self.grid.dim();
        let slots = self.grid.slots();
        let zero = self.grid.zero_slot();
        let half = T::lit(0.5);
        for s in 0..zero {
            let cs = slots - 1 - s;
            for c in 0..d {
                let a = self.coeffs[s * d + c];
                let b = self.coeffs[cs * d + c];
                if a == b.conj() {
                    continue;
                }
                let m = (a + b.conj()) * half;
                self.coeffs[s * d + c] = m;
                self.coeffs[cs * d + c] = m.conj();
            }
        }
        self.coeffs[zero * d..(zero + 1) * d].fill(Complex::zero());
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn coeff(&self, j: &WaveVector) -> Option<&[Complex<T>]> {
        let d = self.dim();
        self.grid
            .slot_of(j)
            .map(|s| &self.coeffs[s * d..(s + 1) * d])
    }

    /// Coefficients slot-major: entry `slot * d + component`.
    #[inline]
    pub fn as_slice(&self) -> &[Complex<T>] {
        &self.coeffs
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [Complex<T>] {
        &mut self.coeffs
    }

    pub fn into_raw(self) -> RawSpectrum<T> {
        RawSpectrum::from_parts(self.grid, self.coeffs)
    }

    /// Iterates over `(j, u_j)` for every nonzero coefficient.
    pub fn modes(&self) -> impl Iterator<Item = (WaveVector, &[Complex<T>])> + '_ {
        let tables = self.grid.tables();
        self.coeffs
            .chunks(self.dim())
            .enumerate()
            .filter(|(_, c)| c.iter().any(|z| !z.is_zero()))
            .map(move |(s, c)| (tables.waves[s], c))
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero())
    }

    /// `sqrt(sum_j |j|^{2s} |u_j|^2)`; `s = 0` is the `H` norm.
    pub fn sobolev_norm(&self, s: T) -> T {
        self.sobolev_norm_sq(s).sqrt()
    }

    pub fn sobolev_norm_sq(&self, s: T) -> T {
        let d = self.dim();
        let tables = self.grid.tables();
        let mut acc = T::zero();
        for (slot, chunk) in self.coeffs.chunks(d).enumerate() {
            let nsq = tables.norm_sq[slot];
            if nsq == 0 {
                continue;
            }
            let m: T = chunk.iter().map(|c| c.norm_sqr()).sum();
            if m.is_zero() {
                continue;
            }
            acc = acc + T::from_i64_lossy(nsq).powf(s) * m;
        }
        acc
    }

    pub fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }

    pub fn norm_sq(&self) -> T {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// `(u, v)_H = Re sum_j u_j . conj(v_j)`.
    pub fn inner(&self, other: &Self) -> T {
        assert_eq!(self.grid, other.grid, "inner product across grids");
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum()
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: T, x: &Self) {
        assert_eq!(self.grid, x.grid, "axpy across grids");
        for (y, xv) in self.coeffs.iter_mut().zip(&x.coeffs) {
            *y = *y + *xv * a;
        }
    }

    pub fn scale(&mut self, a: T) {
        for c in self.coeffs.iter_mut() {
            *c = *c * a;
        }
    }

    pub fn scaled(&self, a: T) -> Self {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    /// Multiplies every coefficient at `j` by `factor(|j|^2)`; `factor` is never called at `j = 0`.
    pub fn scale_by_norm_sq(&mut self, factor: impl Fn(i64) -> T) {
        let d = self.dim();
        let tables = self.grid.tables();
        for (slot, chunk) in self.coeffs.chunks_mut(d).enumerate() {
            let nsq = tables.norm_sq[slot];
            if nsq == 0 {
                continue;
            }
            let f = factor(nsq);
            for c in chunk.iter_mut() {
                *c = *c * f;
            }
        }
    }

    /// Keeps the modes whose `|j|^2` satisfies `keep`.
    pub fn restrict(&self, keep: impl Fn(i64) -> bool) -> Self {
        let d = self.dim();
        let tables = self.grid.tables();
        let mut out = self.clone();
        for (slot, chunk) in out.coeffs.chunks_mut(d).enumerate() {
            if !keep(tables.norm_sq[slot]) {
                chunk.fill(Complex::zero());
            }
        }
        out
    }

    /// Largest `|j . u_j| / |u_j|` over the box.
    pub fn divergence_defect(&self) -> T {
        let d = self.dim();
        let tables = self.grid.tables();
        let mut worst = T::zero();
        for (slot, chunk) in self.coeffs.chunks(d).enumerate() {
            let mag: T = chunk.iter().map(|c| c.norm_sqr()).sum::<T>().sqrt();
            if mag.is_zero() {
                continue;
            }
            let mut dot = Complex::<T>::zero();
            for (jc, c) in tables.waves[slot].components().iter().zip(chunk) {
                dot = dot + *c * T::from_i64_lossy(*jc as i64);
            }
            let nj = T::from_i64_lossy(tables.norm_sq[slot].max(1)).sqrt();
            worst = worst.max(dot.norm() / (nj * mag));
        }
        worst
    }

    /// Largest `|u_{-j} - conj(u_j)|`.
    pub fn hermitian_defect(&self) -> T {
        let d = self.dim();
        let slots = self.grid.slots();
        let mut worst = T::zero();
        for s in 0..slots {
            let cs = slots - 1 - s;
            for c in 0..d {
                worst = worst.max((self.coeffs[cs * d + c] - self.coeffs[s * d + c].conj()).norm());
            }
        }
        worst
    }

    /// The `j = 0` coefficient (the spatial mean), which is zero for every valid field.
    pub fn mean(&self) -> &[Complex<T>] {
        let d = self.dim();
        let z = self.grid.zero_slot();
        &self.coeffs[z * d..(z + 1) * d]
    }

    /// Test-only escape hatch: plants a nonzero mean to exercise audits.
    #[doc(hidden)]
    pub fn inject_mean_for_testing(mut self, mean: &[Complex<T>]) -> Self {
        let d = self.dim();
        let z = self.grid.zero_slot();
        self.coeffs[z * d..(z + 1) * d].copy_from_slice(&mean[..d]);
        self
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Largest coefficient-wise difference.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (*a - *b).norm())
            .fold(T::zero(), T::max)
    }
}

impl<'a, T: Real> Add<&'a SpectralField<T>> for &'a SpectralField<T> {
    type Output = SpectralField<T>;
    fn add(self, rhs: &SpectralField<T>) -> SpectralField<T> {
        let mut out = self.clone();
        out.axpy(T::one(), rhs);
        out
    }
}

impl<'a, T: Real> Sub<&'a SpectralField<T>> for &'a SpectralField<T> {
    type Output = SpectralField<T>;
    fn sub(self, rhs: &SpectralField<T>) -> SpectralField<T> {
        let mut out = self.clone();
        out.axpy(-T::one(), rhs);
        out
    }
}

impl<T: Real> Neg for &SpectralField<T> {
    type Output = SpectralField<T>;
    fn neg(self) -> SpectralField<T> {
        self.scaled(-T::one())
    }
}

impl<T: Real> Mul<T> for &SpectralField<T> {
    type Output = SpectralField<T>;
    fn mul(self, a: T) -> SpectralField<T> {
        self.scaled(a)
    }
}
