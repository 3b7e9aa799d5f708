use num_complex::Complex;

use super::field::SpectralField;
use super::grid::GridSpec;
use crate::error::Result;
use crate::scalar::Real;

/// Real orthonormal basis of the divergence-free fields supported on a set of shells.
///
/// Each canonical `j` contributes `d - 1` unit directions `e` orthogonal to `j`, and each
/// direction two basis fields: `u_j = e / sqrt 2` and `u_j = i e / sqrt 2`, conjugated at `-j`.
#[derive(Clone, Debug)]
pub struct RealBasis {
    grid: GridSpec,
    entries: Vec<(usize, [f64; 3])>,
}

fn orthonormal_complement(j: &[i32]) -> Vec<[f64; 3]> {
    let d = j.len();
    let jn: f64 = j.iter().map(|&c| (c as f64).powi(2)).sum::<f64>().sqrt();
    let jhat: Vec<f64> = j.iter().map(|&c| c as f64 / jn).collect();
    let mut out: Vec<[f64; 3]> = Vec::new();
    for axis in 0..d {
        let mut e = [0.0; 3];
        e[axis] = 1.0;
        let dot: f64 = (0..d).map(|a| e[a] * jhat[a]).sum();
        for a in 0..d {
            e[a] -= dot * jhat[a];
        }
        for prev in &out {
            let p: f64 = (0..d).map(|a| e[a] * prev[a]).sum();
            for a in 0..d {
                e[a] -= p * prev[a];
            }
        }
        let n: f64 = (0..d).map(|a| e[a] * e[a]).sum::<f64>().sqrt();
        if n > 1e-8 {
            for x in e.iter_mut() {
                *x /= n;
            }
            out.push(e);
        }
        if out.len() == d - 1 {
            break;
        }
    }
    out
}

impl RealBasis {
    /// Basis of the shells `|j|^2` accepted by `keep`.
    pub fn new(grid: GridSpec, keep: impl Fn(i64) -> bool) -> Self {
        let tables = grid.tables();
        let mut entries = Vec::new();
        for slot in grid.zero_slot() + 1..grid.slots() {
            if !keep(tables.norm_sq[slot]) {
                continue;
            }
            for e in orthonormal_complement(tables.waves[slot].components()) {
                entries.push((slot, e));
            }
        }
        Self { grid, entries }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Real dimension.
    pub fn dim(&self) -> usize {
        2 * self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Shell `|j|^2` of coordinate `i`.
    pub fn level(&self, i: usize) -> i64 {
        self.grid.wave_of(self.entries[i / 2].0).norm_sq()
    }

    pub fn to_field<T: Real>(&self, x: &[T]) -> SpectralField<T> {
        assert_eq!(x.len(), self.dim(), "coordinate length");
        let d = self.grid.dim();
        let mut coeffs = vec![Complex::new(T::zero(), T::zero()); self.grid.slots() * d];
        let r = T::lit(std::f64::consts::FRAC_1_SQRT_2);
        for (k, (slot, e)) in self.entries.iter().enumerate() {
            let z = Complex::new(x[2 * k], x[2 * k + 1]) * r;
            let cs = self.grid.conjugate_slot(*slot);
            for a in 0..d {
                let v = z * T::lit(e[a]);
                coeffs[slot * d + a] = coeffs[slot * d + a] + v;
                coeffs[cs * d + a] = coeffs[cs * d + a] + v.conj();
            }
        }
        SpectralField::from_coeffs_unchecked(self.grid, coeffs)
    }

    /// Coordinates of the orthogonal projection of `u` onto the span.
    pub fn coordinates<T: Real>(&self, u: &SpectralField<T>) -> Result<Vec<T>> {
        self.grid.ensure_same(u.grid())?;
        let d = self.grid.dim();
        let c = u.as_slice();
        let s = T::lit(std::f64::consts::SQRT_2);
        let mut out = Vec::with_capacity(self.dim());
        for (slot, e) in &self.entries {
            let mut z = Complex::new(T::zero(), T::zero());
            for a in 0..d {
                z = z + c[slot * d + a] * T::lit(e[a]);
            }
            out.push(z.re * s);
            out.push(z.im * s);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral_field::random_field;

    #[test]
    fn basis_is_orthonormal_and_complete() {
        for d in [2, 3] {
            let grid = GridSpec::new(d, 6).unwrap();
            let basis = RealBasis::new(grid, |n| n <= 5);
            for i in 0..basis.dim() {
                let mut x = vec![0.0f64; basis.dim()];
                x[i] = 1.0;
                let f = basis.to_field(&x);
                assert!((f.norm() - 1.0).abs() < 1e-14);
                assert!(f.divergence_defect() < 1e-14);
                let back = basis.coordinates(&f).unwrap();
                for (k, b) in back.iter().enumerate() {
                    assert!((b - x[k]).abs() < 1e-14);
                }
            }
            let u = random_field::<f64>(&grid, 9, 1.0).unwrap();
            let low = u.restrict(|n| n <= 5);
            let rebuilt = basis.to_field(&basis.coordinates(&u).unwrap());
            assert!(rebuilt.max_abs_diff(&low) < 1e-14);
        }
    }
}
