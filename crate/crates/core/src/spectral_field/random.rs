use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::field::{project_mode, SpectralField};
use super::grid::GridSpec;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Random divergence-free field with `|u_j| = |j|^{-s0}` exactly on every mode of the box
/// and a Gaussian direction in the divergence-free plane of each mode.
pub fn random_field<T: Real>(grid: &GridSpec, seed: u64, s0: f64) -> Result<SpectralField<T>> {
    if !(s0 >= 0.0) || !s0.is_finite() {
        return Err(Error::invalid("decay_exponent", format!("{s0} is not >= 0")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = grid.dim();
    let tables = grid.tables();
    let slots = grid.slots();
    let mut coeffs = vec![Complex::new(T::zero(), T::zero()); slots * d];
    let mut g = vec![Complex::new(0.0f64, 0.0); d];
    for slot in grid.zero_slot() + 1..slots {
        let nsq = tables.norm_sq[slot];
        let j = tables.waves[slot].components();
        let mag = loop {
            for c in g.iter_mut() {
                *c = Complex::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
            }
            project_mode(j, nsq, &mut g);
            let m = g.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            if m > 1e-8 {
                break m;
            }
        };
        let amp = (nsq as f64).powf(-0.5 * s0) / mag;
        let cs = slots - 1 - slot;
        for c in 0..d {
            let v = g[c] * amp;
            let v = Complex::new(T::lit(v.re), T::lit(v.im));
            coeffs[slot * d + c] = v;
            coeffs[cs * d + c] = v.conj();
        }
    }
    Ok(SpectralField::from_coeffs_unchecked(*grid, coeffs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_divergence_free() {
        let grid = GridSpec::new(3, 6).unwrap();
        let a: SpectralField<f64> = random_field(&grid, 7, 1.0).unwrap();
        let b: SpectralField<f64> = random_field(&grid, 7, 1.0).unwrap();
        let c: SpectralField<f64> = random_field(&grid, 8, 1.0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.divergence_defect() < 1e-14);
        assert_eq!(a.hermitian_defect(), 0.0);
    }

    #[test]
    fn rejects_negative_decay() {
        let grid = GridSpec::new(2, 6).unwrap();
        assert!(random_field::<f64>(&grid, 0, -1.0).is_err());
    }
}
