use std::any::{Any, TypeId};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex;
use num_traits::Zero;
use rustfft::{Fft, FftPlanner};

use super::field::{RawSpectrum, SpectralField};
use super::grid::GridSpec;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Real values of each component on the uniform grid `x_k = 2 pi k / n`, row-major with the
/// last axis fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalField<T> {
    grid: GridSpec,
    components: Vec<Vec<T>>,
}

impl<T: Real> PhysicalField<T> {
    pub fn new(grid: GridSpec, components: Vec<Vec<T>>) -> Result<Self> {
        if components.len() != grid.dim() {
            return Err(Error::SizeMismatch {
                expected: grid.dim(),
                found: components.len(),
            });
        }
        let n = grid.points().pow(grid.dim() as u32);
        for c in &components {
            if c.len() != n {
                return Err(Error::SizeMismatch {
                    expected: n,
                    found: c.len(),
                });
            }
        }
        Ok(Self { grid, components })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn components(&self) -> &[Vec<T>] {
        &self.components
    }

    pub fn component(&self, c: usize) -> &[T] {
        &self.components[c]
    }

    /// Coordinates of grid point `index`.
    pub fn point(&self, index: usize) -> Vec<T> {
        grid_point(&self.grid, index)
    }

    /// Trapezoidal-rule mean of `|u|^2`, i.e. `(2 pi)^{-d} int |u|^2`.
    pub fn mean_square(&self) -> T {
        let n = T::from_usize(self.components[0].len()).unwrap();
        self.components
            .iter()
            .flat_map(|c| c.iter())
            .map(|&v| v * v)
            .sum::<T>()
            / n
    }
}

pub fn grid_point<T: Real>(grid: &GridSpec, mut index: usize) -> Vec<T> {
    let n = grid.points();
    let h = T::TAU() / T::from_usize(n).unwrap();
    let mut x = vec![T::zero(); grid.dim()];
    for a in (0..grid.dim()).rev() {
        x[a] = h * T::from_usize(index % n).unwrap();
        index /= n;
    }
    x
}

/// Inverse transform: field values on the physical grid.
pub fn to_physical<T: Real>(field: &SpectralField<T>) -> PhysicalField<T> {
    let grid = *field.grid();
    let comps = split_components(field.as_slice(), grid.dim());
    PhysicalField {
        grid,
        components: inverse_many(&grid, &comps),
    }
}

/// Forward transform. Modes beyond the dealias cut are discarded and coefficients at the
/// round-off floor of the input (`16 eps max|u(x)|`) are flushed to zero; the result carries
/// no invariants (pass it through `leray_project`).
pub fn from_physical<T: Real>(values: &PhysicalField<T>) -> Result<RawSpectrum<T>> {
    let grid = values.grid;
    let refs: Vec<&[T]> = values.components.iter().map(|c| c.as_slice()).collect();
    let boxes = forward_many(&grid, &refs);
    let peak = refs
        .iter()
        .flat_map(|c| c.iter())
        .fold(T::zero(), |m, v| m.max(v.abs()));
    let floor = T::lit(16.0) * T::epsilon() * peak;
    let mut coeffs = interleave(&boxes);
    for c in coeffs.iter_mut() {
        if c.norm() <= floor {
            *c = Complex::zero();
        }
    }
    Ok(RawSpectrum::from_parts(grid, coeffs))
}

pub(crate) fn split_components<T: Real>(coeffs: &[Complex<T>], d: usize) -> Vec<Vec<Complex<T>>> {
    (0..d)
        .map(|c| coeffs.iter().skip(c).step_by(d).copied().collect())
        .collect()
}

pub(crate) fn interleave<T: Real>(boxes: &[Vec<Complex<T>>]) -> Vec<Complex<T>> {
    let d = boxes.len();
    let slots = boxes[0].len();
    let mut out = vec![Complex::zero(); slots * d];
    for (c, b) in boxes.iter().enumerate() {
        for (s, v) in b.iter().enumerate() {
            out[s * d + c] = *v;
        }
    }
    out
}

/// Transforms real-valued spectra (one coefficient per slot) to physical arrays, two at a
/// time through one complex FFT.
pub(crate) fn inverse_many<T: Real>(grid: &GridSpec, inputs: &[Vec<Complex<T>>]) -> Vec<Vec<T>> {
    let map = index_map(grid);
    let total = grid.points().pow(grid.dim() as u32);
    let plan = plan::<T>(grid.points());
    let mut out = Vec::with_capacity(inputs.len());
    let i = Complex::new(T::zero(), T::one());
    for pair in inputs.chunks(2) {
        let mut data = vec![Complex::<T>::zero(); total];
        for (slot, &g) in map.iter().enumerate() {
            let mut v = pair[0][slot];
            if let Some(b) = pair.get(1) {
                v = v + i * b[slot];
            }
            data[g] = v;
        }
        transform_nd(grid, &mut data, &plan.inverse, true);
        out.push(data.iter().map(|z| z.re).collect());
        if pair.len() == 2 {
            out.push(data.iter().map(|z| z.im).collect());
        }
    }
    out
}

/// Forward transforms of real physical arrays, restricted to the coefficient box.
pub(crate) fn forward_many<T: Real>(grid: &GridSpec, inputs: &[&[T]]) -> Vec<Vec<Complex<T>>> {
    let map = index_map(grid);
    let total = grid.points().pow(grid.dim() as u32);
    let plan = plan::<T>(grid.points());
    let scale = T::one() / T::from_usize(total).unwrap();
    let half = T::lit(0.5);
    let slots = grid.slots();
    let mut out = Vec::with_capacity(inputs.len());
    for pair in inputs.chunks(2) {
        let mut data: Vec<Complex<T>> = match pair {
            [a, b] => a
                .iter()
                .zip(b.iter())
                .map(|(&x, &y)| Complex::new(x, y))
                .collect(),
            [a] => a.iter().map(|&x| Complex::new(x, T::zero())).collect(),
            _ => unreachable!(),
        };
        transform_nd(grid, &mut data, &plan.forward, false);
        if pair.len() == 1 {
            out.push(map.iter().map(|&g| data[g] * scale).collect());
        } else {
            // Z_j = A_j + i B_j with A, B Hermitian.
            let mut a = Vec::with_capacity(slots);
            let mut b = Vec::with_capacity(slots);
            for s in 0..slots {
                let z = data[map[s]];
                let zc = data[map[slots - 1 - s]].conj();
                a.push((z + zc) * (half * scale));
                let d = (z - zc) * (half * scale);
                b.push(Complex::new(d.im, -d.re));
            }
            out.push(a);
            out.push(b);
        }
    }
    out
}

fn index_map(grid: &GridSpec) -> Arc<Vec<usize>> {
    static CACHE: OnceLock<Mutex<HashMap<GridSpec, Arc<Vec<usize>>>>> = OnceLock::new();
    let mut cache = CACHE
        .get_or_init(|| Mutex::new(HashMap::new()))
        .lock()
        .expect("index map cache poisoned");
    cache
        .entry(*grid)
        .or_insert_with(|| {
            let n = grid.points() as i64;
            let tables = grid.tables();
            Arc::new(
                tables
                    .waves
                    .iter()
                    .map(|w| {
                        w.components()
                            .iter()
                            .fold(0usize, |acc, &c| acc * n as usize + (c as i64).rem_euclid(n) as usize)
                    })
                    .collect(),
            )
        })
        .clone()
}

pub(crate) struct Plan<T> {
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

fn plan<T: Real>(n: usize) -> Arc<Plan<T>> {
    type Cache = HashMap<(TypeId, usize), Arc<dyn Any + Send + Sync>>;
    static CACHE: OnceLock<Mutex<Cache>> = OnceLock::new();
    let mut cache = CACHE
        .get_or_init(|| Mutex::new(HashMap::new()))
        .lock()
        .expect("fft plan cache poisoned");
    let entry = cache.entry((TypeId::of::<T>(), n)).or_insert_with(|| {
        let mut planner = FftPlanner::<T>::new();
        let plan = Plan {
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        };
        Arc::new(Arc::new(plan)) as Arc<dyn Any + Send + Sync>
    });
    entry
        .downcast_ref::<Arc<Plan<T>>>()
        .expect("plan type")
        .clone()
}

/// In-place d-dimensional FFT that skips lines which are identically zero on input
/// (inverse direction) or whose output is discarded (forward direction). Inverse
/// transforms run the axes last to first, forward transforms first to last; either way a
/// line along axis `a` is processed only if its coordinates on axes `< a`, which are
/// spectral at that point, lie in the box.
fn transform_nd<T: Real>(
    grid: &GridSpec,
    data: &mut [Complex<T>],
    fft: &Arc<dyn Fft<T>>,
    reverse_axes: bool,
) {
    let n = grid.points();
    let d = grid.dim();
    let k = grid.cutoff();
    let in_box = |i: usize| i <= k || i >= n - k;
    let mut scratch = vec![Complex::zero(); fft.get_inplace_scratch_len()];
    let mut buf: Vec<Complex<T>> = Vec::new();
    for step in 0..d {
        let axis = if reverse_axes { d - 1 - step } else { step };
        let stride = n.pow((d - 1 - axis) as u32);
        let outer_count = n.pow(axis as u32);
        for outer in 0..outer_count {
            // All coordinates on axes < axis must be in the box.
            let mut rem = outer;
            let mut keep = true;
            for _ in 0..axis {
                if !in_box(rem % n) {
                    keep = false;
                    break;
                }
                rem /= n;
            }
            if !keep {
                continue;
            }
            let base = outer * n * stride;
            if stride == 1 {
                fft.process_with_scratch(&mut data[base..base + n], &mut scratch);
                continue;
            }
            buf.clear();
            buf.resize(stride * n, Complex::zero());
            for inner in 0..stride {
                for t in 0..n {
                    buf[inner * n + t] = data[base + t * stride + inner];
                }
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            for inner in 0..stride {
                for t in 0..n {
                    data[base + t * stride + inner] = buf[inner * n + t];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral_field::{leray_project, WaveVector};

    #[test]
    fn cosine_mode_on_grid() {
        let grid = GridSpec::new(2, 6).unwrap();
        let mut raw = RawSpectrum::zeros(grid);
        let half = Complex::new(0.5, 0.0);
        let zero = Complex::new(0.0, 0.0);
        // divergence-free: j = (0, 1) with u parallel to e_1 gives u_1 = cos(x_2).
        raw.set(&WaveVector::new2(0, 1), &[half, zero]).unwrap();
        raw.set(&WaveVector::new2(0, -1), &[half, zero]).unwrap();
        let u = leray_project(raw);
        let phys = to_physical(&u);
        for idx in 0..phys.component(0).len() {
            let x: Vec<f64> = phys.point(idx);
            assert!((phys.component(0)[idx] - x[1].cos()).abs() < 1e-14);
            assert!(phys.component(1)[idx].abs() < 1e-14);
        }
    }

    #[test]
    fn constant_field_has_empty_spectrum() {
        let grid = GridSpec::new(3, 4).unwrap();
        let n = grid.points().pow(3);
        let phys = PhysicalField::new(grid, vec![vec![2.5; n], vec![-1.0; n], vec![0.0; n]]).unwrap();
        let raw = from_physical(&phys).unwrap();
        assert!(leray_project(raw).is_zero());
    }

    #[test]
    fn size_mismatch_is_reported() {
        let grid = GridSpec::new(2, 4).unwrap();
        assert!(matches!(
            PhysicalField::<f64>::new(grid, vec![vec![0.0; 7], vec![0.0; 7]]),
            Err(Error::SizeMismatch { .. })
        ));
    }
}
