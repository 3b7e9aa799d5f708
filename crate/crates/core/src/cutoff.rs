//! Smooth spectral truncation `W`, its derivative, and the modified nonlinearities of the
//! prepared equations.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::GaussLegendre;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{apply_stokes_power, bilinear_sum};
use crate::scalar::Real;
use crate::spectral_field::{project_mode, SpectralField};

/// Sobolev weight exponent of the truncation: coefficients are measured in `H^{9/2}`.
pub const WEIGHT_EXPONENT: f64 = 4.5;
/// Saturation level of the radial profile.
pub const SATURATION: f64 = 2.0;
/// End of the linear zone of the profile.
pub const PLATEAU_ONSET: f64 = 1.0;
/// Radius from which the profile is constant at [`SATURATION`].
pub const SATURATION_RADIUS: f64 = 3.0;

/// Truncation radius `varrho`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    pub radius: f64,
}

impl CutoffSpec {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid("radius", format!("{radius} is not positive")));
        }
        Ok(Self { radius })
    }

    /// Lipschitz constant of `W` on `H` (supremum of the profile slope).
    pub fn lipschitz(&self) -> f64 {
        1.0
    }
}

/// Stationary solution about which the equations are prepared.
#[derive(Clone, Debug)]
pub struct StationaryContext<T> {
    pub v: SpectralField<T>,
    pub theta: T,
    pub nu: T,
}

impl<T: Real> StationaryContext<T> {
    pub fn dim(&self) -> usize {
        self.v.dim()
    }
}

fn psi(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (-1.0 / t).exp()
    }
}

/// Smooth step: 0 for `t <= 0`, 1 for `t >= 1`, `S(t) + S(1 - t) = 1`.
fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let a = psi(t);
    a / (a + psi(1.0 - t))
}

fn quadrature() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(NonZeroUsize::new(24).unwrap()))
}

/// `int_0^t S` for `t <= 1/2`, composite Gauss-Legendre on panels of width 1/16.
fn step_integral_low(t: f64) -> f64 {
    let rule = quadrature();
    let panels = ((t * 16.0).ceil() as usize).max(1);
    let h = t / panels as f64;
    (0..panels)
        .map(|p| rule.integrate(p as f64 * h, (p + 1) as f64 * h, smooth_step))
        .sum()
}

fn step_integral(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t <= 0.5 {
        step_integral_low(t)
    } else if t < 1.0 {
        // symmetry S(t) = 1 - S(1 - t)
        t - 0.5 + step_integral_low(1.0 - t)
    } else {
        t - 0.5
    }
}

/// Radial profile `m`: identity on `[0, 1]`, constant 2 from `r = 3` on, `C^infty`.
pub fn profile(r: f64) -> f64 {
    if r <= PLATEAU_ONSET {
        r
    } else if r >= SATURATION_RADIUS {
        SATURATION
    } else {
        // m(r) = 1 + int_1^r (1 - S((s - 1) / 2)) ds
        let t = 0.5 * (r - 1.0);
        1.0 + (r - 1.0) - 2.0 * step_integral(t)
    }
}

/// `m'(r)`.
pub fn profile_slope(r: f64) -> f64 {
    if r <= PLATEAU_ONSET {
        1.0
    } else if r >= SATURATION_RADIUS {
        0.0
    } else {
        1.0 - smooth_step(0.5 * (r - 1.0))
    }
}

/// `eta(zeta) = zeta m(|zeta|) / |zeta|`.
pub fn eta<T: Real>(z: Complex<T>) -> Complex<T> {
    let r = z.norm();
    if r <= T::one() {
        return z;
    }
    let rf = r.to_f64_lossy();
    z * (T::lit(profile(rf)) / r)
}

/// Real-linear derivative of [`eta`], as a 2x2 matrix on `(Re, Im)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EtaDerivative<T> {
    pub m: [[T; 2]; 2],
}

impl<T: Real> EtaDerivative<T> {
    pub fn identity() -> Self {
        Self {
            m: [[T::one(), T::zero()], [T::zero(), T::one()]],
        }
    }

    pub fn apply(&self, z: Complex<T>) -> Complex<T> {
        Complex::new(
            self.m[0][0] * z.re + self.m[0][1] * z.im,
            self.m[1][0] * z.re + self.m[1][1] * z.im,
        )
    }
}

pub fn eta_prime<T: Real>(z: Complex<T>) -> EtaDerivative<T> {
    let r = z.norm();
    if r <= T::one() {
        return EtaDerivative::identity();
    }
    let rf = r.to_f64_lossy();
    let m = profile(rf);
    let g = T::lit(m / rf);
    // d/dr (m/r) divided by r
    let gp = T::lit((profile_slope(rf) * rf - m) / (rf * rf * rf));
    let (x, y) = (z.re, z.im);
    EtaDerivative {
        m: [[g + gp * x * x, gp * x * y], [gp * x * y, g + gp * y * y]],
    }
}

fn weight<T: Real>(nsq: i64, spec: &CutoffSpec) -> T {
    T::lit((nsq as f64).powf(0.5 * WEIGHT_EXPONENT) / spec.radius)
}

/// `W(w)_j = (varrho / |j|^{9/2}) P^j eta(|j|^{9/2} w_j / varrho)`, `eta` componentwise.
pub fn truncate_w<T: Real>(w: &SpectralField<T>, spec: &CutoffSpec) -> SpectralField<T> {
    let grid = *w.grid();
    let d = grid.dim();
    let tables = grid.tables();
    let slots = grid.slots();
    let mut out = w.as_slice().to_vec();
    for slot in grid.zero_slot() + 1..slots {
        let chunk = &mut out[slot * d..(slot + 1) * d];
        let s: T = weight(tables.norm_sq[slot], spec);
        if chunk.iter().all(|c| (*c * s).norm() <= T::one()) {
            continue;
        }
        for c in chunk.iter_mut() {
            *c = eta(*c * s) / s;
        }
        project_mode(tables.waves[slot].components(), tables.norm_sq[slot], chunk);
        let copy: Vec<_> = chunk.iter().map(|c| c.conj()).collect();
        let cs = slots - 1 - slot;
        out[cs * d..(cs + 1) * d].copy_from_slice(&copy);
    }
    SpectralField::from_coeffs_unchecked(grid, out)
}

/// `W'(w) z = sum_j P^j eta'(|j|^{9/2} w_j / varrho) z_j`.
pub fn truncate_w_derivative<T: Real>(
    w: &SpectralField<T>,
    z: &SpectralField<T>,
    spec: &CutoffSpec,
) -> Result<SpectralField<T>> {
    let grid = *w.grid();
    grid.ensure_same(z.grid())?;
    let d = grid.dim();
    let tables = grid.tables();
    let slots = grid.slots();
    let wc = w.as_slice();
    let mut out = z.as_slice().to_vec();
    for slot in grid.zero_slot() + 1..slots {
        let s: T = weight(tables.norm_sq[slot], spec);
        let wj = &wc[slot * d..(slot + 1) * d];
        if wj.iter().all(|c| (*c * s).norm() <= T::one()) {
            continue;
        }
        let chunk = &mut out[slot * d..(slot + 1) * d];
        for (c, wv) in chunk.iter_mut().zip(wj) {
            *c = eta_prime(*wv * s).apply(*c);
        }
        project_mode(tables.waves[slot].components(), tables.norm_sq[slot], chunk);
        let copy: Vec<_> = chunk.iter().map(|c| c.conj()).collect();
        let cs = slots - 1 - slot;
        out[cs * d..(cs + 1) * d].copy_from_slice(&copy);
    }
    Ok(SpectralField::from_coeffs_unchecked(grid, out))
}

fn check_context<T: Real>(w: &SpectralField<T>, ctx: &StationaryContext<T>, d: usize) -> Result<()> {
    if w.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: w.dim(),
        });
    }
    if ctx.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: ctx.dim(),
        });
    }
    w.grid().ensure_same(ctx.v.grid())
}

/// `B(W, W) + B(W, v) + B(v, W)` for an already truncated `W`.
pub(crate) fn prepared_quadratic<T: Real>(big_w: &SpectralField<T>, v: &SpectralField<T>) -> Result<SpectralField<T>> {
    let u = big_w + v;
    bilinear_sum(&[(big_w, &u), (v, big_w)])
}

/// `F_2(w) = B(W, W) + B(W, v) + B(v, W)`, `W = W(w)`.
pub fn modified_nonlinearity_2d<T: Real>(
    w: &SpectralField<T>,
    ctx: &StationaryContext<T>,
    spec: &CutoffSpec,
) -> Result<SpectralField<T>> {
    check_context(w, ctx, 2)?;
    prepared_quadratic(&truncate_w(w, spec), &ctx.v)
}

/// `F_3(w) = A^{-1/4} (B(W, W) + B(v, W) + B(W, v))`.
pub fn modified_nonlinearity_3d<T: Real>(
    w: &SpectralField<T>,
    ctx: &StationaryContext<T>,
    spec: &CutoffSpec,
) -> Result<SpectralField<T>> {
    check_context(w, ctx, 3)?;
    let q = prepared_quadratic(&truncate_w(w, spec), &ctx.v)?;
    Ok(apply_stokes_power(&q, T::lit(-0.25), T::one()))
}

/// `F_3'(w) z = A^{-1/4} (B(h, W + v) + B(W + v, h))`, `h = W'(w) z`.
pub fn modified_nonlinearity_3d_derivative<T: Real>(
    w: &SpectralField<T>,
    z: &SpectralField<T>,
    ctx: &StationaryContext<T>,
    spec: &CutoffSpec,
) -> Result<SpectralField<T>> {
    check_context(w, ctx, 3)?;
    let h = truncate_w_derivative(w, z, spec)?;
    let u = &truncate_w(w, spec) + &ctx.v;
    let q = bilinear_sum(&[(&h, &u), (&u, &h)])?;
    Ok(apply_stokes_power(&q, T::lit(-0.25), T::one()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral_field::{random_field, GridSpec};

    #[test]
    fn profile_shape() {
        assert_eq!(profile(0.5), 0.5);
        assert_eq!(profile(1.0), 1.0);
        assert!((profile(2.999_999) - 2.0).abs() < 1e-12);
        assert_eq!(profile(3.0), 2.0);
        let mut prev = 0.0;
        for k in 0..=3000 {
            let r = k as f64 * 1e-3;
            let m = profile(r);
            assert!(m >= prev && m <= 2.0);
            prev = m;
        }
    }

    #[test]
    fn slope_matches_profile() {
        for k in 1..400 {
            let r = 1.0 + k as f64 * 0.005;
            let h = 1e-5;
            let fd = (profile(r + h) - profile(r - h)) / (2.0 * h);
            assert!((fd - profile_slope(r)).abs() < 1e-9, "r={r}");
        }
    }

    #[test]
    fn eta_examples() {
        let z = Complex::new(0.5f64, 0.0);
        assert_eq!(eta(z), z);
        let big = eta(Complex::new(60.0f64, 80.0));
        assert!((big.norm() - 2.0).abs() < 1e-15);
        assert!((big.arg() - (80.0f64).atan2(60.0)).abs() < 1e-15);
        assert_eq!(eta_prime(z), EtaDerivative::identity());
    }

    #[test]
    fn eta_prime_matches_difference_quotient() {
        for &(x, y) in &[(1.2, 0.3), (-0.4, 1.9), (2.5, -1.0), (0.0, 2.2)] {
            let z = Complex::<f64>::new(x, y);
            let dz = eta_prime(z);
            let h = 1e-6;
            for e in [Complex::new(1.0, 0.0), Complex::new(0.0, 1.0)] {
                let fd = (eta(z + e * h) - eta(z - e * h)) / (2.0 * h);
                assert!((fd - dz.apply(e)).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn identity_inside_ball() {
        let grid = GridSpec::new(2, 9).unwrap();
        let w: SpectralField<f64> = random_field(&grid, 3, 6.0).unwrap();
        let spec = CutoffSpec::new(w.sobolev_norm(4.5) * 1.01).unwrap();
        assert_eq!(truncate_w(&w, &spec), w);
    }
}
