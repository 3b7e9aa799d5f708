use serde::{Deserialize, Serialize};

use super::integrator::DiagonalSystem;
use crate::cutoff::{prepared_quadratic, truncate_w, CutoffSpec, StationaryContext};
use crate::error::{Error, Result};
use crate::operators::bilinear_sum;
use crate::scalar::Real;
use crate::spectral_field::{GridSpec, SpectralField};

/// Which right-hand side a [`FieldModel`] integrates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldModelKind {
    /// `du/dt + nu A^theta u + B(u, u) = f`.
    NavierStokes,
    /// `dw/dt + nu A^theta w + B(w, w) + B(v, w) + B(w, v) = 0`, `w = u - v`.
    Difference,
    /// Difference equation with `W(w)` in place of `w` inside the nonlinearity.
    Prepared,
    /// `du/dt + nu A^theta u = g`.
    Linear,
}

/// Navier-Stokes-type evolution on a spectral grid.
#[derive(Clone, Debug)]
pub struct FieldModel<T> {
    pub kind: FieldModelKind,
    pub grid: GridSpec,
    pub nu: T,
    pub theta: T,
    forcing: Option<SpectralField<T>>,
    context: Option<StationaryContext<T>>,
    cutoff: Option<CutoffSpec>,
    rates: Vec<T>,
}

fn scope_theta<T: Real>(dim: usize) -> T {
    if dim == 2 {
        T::one()
    } else {
        T::lit(1.25)
    }
}

impl<T: Real> FieldModel<T> {
    fn build(
        kind: FieldModelKind,
        grid: GridSpec,
        nu: T,
        theta: T,
        forcing: Option<SpectralField<T>>,
        context: Option<StationaryContext<T>>,
        cutoff: Option<CutoffSpec>,
    ) -> Result<Self> {
        if !(nu > T::zero()) {
            return Err(Error::invalid("nu", "must be positive"));
        }
        if let Some(f) = &forcing {
            grid.ensure_same(f.grid())?;
        }
        if let Some(c) = &context {
            grid.ensure_same(c.v.grid())?;
        }
        let tables = grid.tables();
        let rates = tables
            .norm_sq
            .iter()
            .map(|&n| if n == 0 { T::zero() } else { nu * T::from_i64_lossy(n).powf(theta) })
            .collect();
        Ok(Self {
            kind,
            grid,
            nu,
            theta,
            forcing,
            context,
            cutoff,
            rates,
        })
    }

    /// Original equation (`theta = 1` for `d = 2`, `theta = 5/4` for `d = 3`).
    pub fn navier_stokes(grid: GridSpec, nu: T, forcing: SpectralField<T>) -> Result<Self> {
        let theta = scope_theta(grid.dim());
        Self::build(FieldModelKind::NavierStokes, grid, nu, theta, Some(forcing), None, None)
    }

    /// Equation for `w = u - v` about the stationary point in `ctx`.
    pub fn difference(ctx: StationaryContext<T>) -> Result<Self> {
        let grid = *ctx.v.grid();
        Self::check_scope(&ctx)?;
        Self::build(FieldModelKind::Difference, grid, ctx.nu, ctx.theta, None, Some(ctx), None)
    }

    /// Prepared equation with truncation radius `cutoff.radius`.
    pub fn prepared(ctx: StationaryContext<T>, cutoff: CutoffSpec) -> Result<Self> {
        let grid = *ctx.v.grid();
        Self::check_scope(&ctx)?;
        Self::build(FieldModelKind::Prepared, grid, ctx.nu, ctx.theta, None, Some(ctx), Some(cutoff))
    }

    /// Linear Stokes flow with optional constant forcing.
    pub fn linear(grid: GridSpec, nu: T, theta: T, forcing: Option<SpectralField<T>>) -> Result<Self> {
        Self::build(FieldModelKind::Linear, grid, nu, theta, forcing, None, None)
    }

    fn check_scope(ctx: &StationaryContext<T>) -> Result<()> {
        let want = scope_theta::<T>(ctx.dim());
        if (ctx.theta - want).abs() > T::lit(1e-12) {
            return Err(Error::invalid(
                "theta",
                format!(
                    "d={} requires theta={} (got {})",
                    ctx.dim(),
                    want,
                    ctx.theta
                ),
            ));
        }
        Ok(())
    }

    pub fn context(&self) -> Option<&StationaryContext<T>> {
        self.context.as_ref()
    }

    pub fn cutoff(&self) -> Option<&CutoffSpec> {
        self.cutoff.as_ref()
    }

    pub fn forcing(&self) -> Option<&SpectralField<T>> {
        self.forcing.as_ref()
    }
}

impl<T: Real> DiagonalSystem<T> for FieldModel<T> {
    type State = SpectralField<T>;

    fn rates(&self) -> Vec<T> {
        self.rates.clone()
    }

    fn scale(&self, x: &SpectralField<T>, factors: &[T]) -> SpectralField<T> {
        let d = self.grid.dim();
        let mut out = x.clone();
        for (chunk, &f) in out.as_mut_slice().chunks_mut(d).zip(factors) {
            for c in chunk {
                *c = *c * f;
            }
        }
        out
    }

    fn nonlinear(&self, x: &SpectralField<T>) -> Result<SpectralField<T>> {
        match self.kind {
            FieldModelKind::NavierStokes => {
                let b = bilinear_sum(&[(x, x)])?;
                Ok(match &self.forcing {
                    Some(f) => f - &b,
                    None => -&b,
                })
            }
            FieldModelKind::Difference => {
                let v = &self.context.as_ref().expect("difference model has a context").v;
                let u = x + v;
                Ok(-&bilinear_sum(&[(x, &u), (v, x)])?)
            }
            FieldModelKind::Prepared => {
                let v = &self.context.as_ref().expect("prepared model has a context").v;
                let w = truncate_w(x, self.cutoff.as_ref().expect("prepared model has a cutoff"));
                Ok(-&prepared_quadratic(&w, v)?)
            }
            FieldModelKind::Linear => Ok(match &self.forcing {
                Some(f) => f.clone(),
                None => SpectralField::zeros(self.grid),
            }),
        }
    }

    fn axpy(&self, y: &mut SpectralField<T>, a: T, x: &SpectralField<T>) {
        y.axpy(a, x);
    }

    fn norm(&self, x: &SpectralField<T>) -> T {
        x.norm()
    }

    fn sobolev_norm(&self, x: &SpectralField<T>, s: T) -> T {
        x.sobolev_norm(s)
    }

    fn is_finite(&self, x: &SpectralField<T>) -> bool {
        x.is_finite()
    }
}

/// Nonlinearity `F` of the abstract model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbstractNonlinearity<T> {
    Zero,
    /// `F(u) = a u`.
    Scalar(T),
    /// `F(u) = L M sin(u)` (componentwise sine) with `||M||_2 <= 1`, Lipschitz constant `L`.
    Sine { lipschitz: T, mixing: Vec<Vec<T>> },
    /// `F(u) = L M tanh(u)`, saturating at large amplitude.
    Tanh { lipschitz: T, mixing: Vec<Vec<T>> },
}

impl<T: Real> AbstractNonlinearity<T> {
    /// Sine nonlinearity mixed by the Householder reflection `I - 2 h h^T / |h|^2`
    /// (orthogonal, so `||M||_2 = 1`) with `h_k = cos(k + seed)`, which couples every mode.
    pub fn householder_sine(n: usize, lipschitz: T, seed: u64) -> Self {
        Self::Sine {
            lipschitz,
            mixing: householder(n, seed),
        }
    }

    /// [`Self::householder_sine`] with `tanh` in place of `sin`.
    pub fn householder_tanh(n: usize, lipschitz: T, seed: u64) -> Self {
        Self::Tanh {
            lipschitz,
            mixing: householder(n, seed),
        }
    }

    fn mixing(&self) -> Option<&Vec<Vec<T>>> {
        match self {
            Self::Sine { mixing, .. } | Self::Tanh { mixing, .. } => Some(mixing),
            _ => None,
        }
    }

    pub fn lipschitz(&self) -> T {
        match self {
            Self::Zero => T::zero(),
            Self::Scalar(a) => a.abs(),
            Self::Sine { lipschitz, .. } | Self::Tanh { lipschitz, .. } => *lipschitz,
        }
    }

    pub fn apply(&self, u: &[T]) -> Vec<T> {
        match self {
            Self::Zero => vec![T::zero(); u.len()],
            Self::Scalar(a) => u.iter().map(|&x| *a * x).collect(),
            Self::Sine { lipschitz, mixing } => mix(*lipschitz, mixing, u.iter().map(|x| x.sin())),
            Self::Tanh { lipschitz, mixing } => mix(*lipschitz, mixing, u.iter().map(|x| x.tanh())),
        }
    }

    /// `F'(u) z`.
    pub fn derivative(&self, u: &[T], z: &[T]) -> Vec<T> {
        match self {
            Self::Zero => vec![T::zero(); u.len()],
            Self::Scalar(a) => z.iter().map(|&x| *a * x).collect(),
            Self::Sine { lipschitz, mixing } => mix(*lipschitz, mixing, u.iter().zip(z).map(|(x, y)| x.cos() * *y)),
            Self::Tanh { lipschitz, mixing } => mix(
                *lipschitz,
                mixing,
                u.iter().zip(z).map(|(x, y)| {
                    let c = x.cosh();
                    *y / (c * c)
                }),
            ),
        }
    }
}

fn mix<T: Real>(l: T, mixing: &[Vec<T>], s: impl Iterator<Item = T>) -> Vec<T> {
    let s: Vec<T> = s.collect();
    mixing
        .iter()
        .map(|row| l * row.iter().zip(&s).map(|(m, v)| *m * *v).sum::<T>())
        .collect()
}

/// Householder reflection `I - 2 h h^T / |h|^2` (orthogonal, so `||M||_2 = 1`) with
/// `h_k = cos((k + seed) phi)`, which couples every mode.
fn householder<T: Real>(n: usize, seed: u64) -> Vec<Vec<T>> {
    let h: Vec<f64> = (0..n).map(|k| ((k as u64 + seed) as f64 * 1.618_033_988_75).cos()).collect();
    let nn: f64 = h.iter().map(|x| x * x).sum();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| T::lit(if i == j { 1.0 } else { 0.0 } - 2.0 * h[i] * h[j] / nn))
                .collect()
        })
        .collect()
}

/// `du/dt + nu A^{1+alpha} u + A^alpha F(u) = g` with diagonal `A`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbstractModel<T> {
    pub alpha: T,
    pub nu: T,
    pub spectrum: Vec<T>,
    pub nonlinearity: AbstractNonlinearity<T>,
    pub g: Vec<T>,
}

impl<T: Real> AbstractModel<T> {
    pub fn new(
        alpha: T,
        nu: T,
        spectrum: Vec<T>,
        nonlinearity: AbstractNonlinearity<T>,
        g: Option<Vec<T>>,
    ) -> Result<Self> {
        if !(alpha > T::zero() && alpha < T::one()) {
            return Err(Error::invalid("alpha", "must lie in (0, 1)"));
        }
        if !(nu > T::zero()) {
            return Err(Error::invalid("nu", "must be positive"));
        }
        if spectrum.is_empty() || !(spectrum[0] > T::zero()) || spectrum.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("spectrum", "must be positive and nondecreasing"));
        }
        let n = spectrum.len();
        if let Some(mixing) = nonlinearity.mixing() {
            if mixing.len() != n || mixing.iter().any(|r| r.len() != n) {
                return Err(Error::SizeMismatch {
                    expected: n,
                    found: mixing.len(),
                });
            }
        }
        let g = g.unwrap_or_else(|| vec![T::zero(); n]);
        if g.len() != n {
            return Err(Error::SizeMismatch {
                expected: n,
                found: g.len(),
            });
        }
        Ok(Self {
            alpha,
            nu,
            spectrum,
            nonlinearity,
            g,
        })
    }

    pub fn dim(&self) -> usize {
        self.spectrum.len()
    }

    /// Index `N` such that `P_N` keeps the first `N` modes and `spectrum[N-1] < spectrum[N]`.
    pub fn cut_for(&self, lambda_n: T) -> Option<usize> {
        let n = self.spectrum.iter().filter(|&&l| l <= lambda_n).count();
        (n > 0 && n < self.dim()).then_some(n)
    }

    /// `A^alpha F'(u) z`, the linearized nonlinear term.
    pub fn nonlinear_derivative(&self, u: &[T], z: &[T]) -> Vec<T> {
        self.nonlinearity
            .derivative(u, z)
            .into_iter()
            .zip(&self.spectrum)
            .map(|(f, l)| l.powf(self.alpha) * f)
            .collect()
    }

    /// `(nu A^{1+alpha})^{-1} g`, the equilibrium of the linear model.
    pub fn linear_equilibrium(&self) -> Vec<T> {
        self.g
            .iter()
            .zip(&self.spectrum)
            .map(|(g, l)| *g / (self.nu * l.powf(T::one() + self.alpha)))
            .collect()
    }
}

impl<T: Real> DiagonalSystem<T> for AbstractModel<T> {
    type State = Vec<T>;

    fn rates(&self) -> Vec<T> {
        self.spectrum
            .iter()
            .map(|l| self.nu * l.powf(T::one() + self.alpha))
            .collect()
    }

    fn scale(&self, x: &Vec<T>, factors: &[T]) -> Vec<T> {
        x.iter().zip(factors).map(|(a, b)| *a * *b).collect()
    }

    fn nonlinear(&self, x: &Vec<T>) -> Result<Vec<T>> {
        let f = self.nonlinearity.apply(x);
        Ok(self
            .g
            .iter()
            .zip(&f)
            .zip(&self.spectrum)
            .map(|((g, f), l)| *g - l.powf(self.alpha) * *f)
            .collect())
    }

    fn axpy(&self, y: &mut Vec<T>, a: T, x: &Vec<T>) {
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi = *yi + a * *xi;
        }
    }

    fn norm(&self, x: &Vec<T>) -> T {
        x.iter().map(|v| *v * *v).sum::<T>().sqrt()
    }

    /// `||A^s x||`.
    fn sobolev_norm(&self, x: &Vec<T>, s: T) -> T {
        x.iter()
            .zip(&self.spectrum)
            .map(|(v, l)| l.powf(T::lit(2.0) * s) * *v * *v)
            .sum::<T>()
            .sqrt()
    }

    fn is_finite(&self, x: &Vec<T>) -> bool {
        x.iter().all(|v| v.is_finite())
    }
}

/// Diagonal spectrum of the Stokes operator on `T^d` restricted to `|j|^2 <= lambda_max`,
/// each level repeated `(d - 1) x (number of lattice points)` times.
pub fn stokes_spectrum<T: Real>(dim: usize, lambda_max: i64) -> Vec<T> {
    let r = crate::operators::isqrt(lambda_max) as i32;
    let mut out = Vec::new();
    let mut counts = std::collections::BTreeMap::<i64, usize>::new();
    let range = -r..=r;
    let third = if dim == 3 { -r..=r } else { 0..=0 };
    for a in range.clone() {
        for b in range.clone() {
            for c in third.clone() {
                let n = (a * a + b * b + c * c) as i64;
                if n > 0 && n <= lambda_max {
                    *counts.entry(n).or_default() += dim - 1;
                }
            }
        }
    }
    for (l, m) in counts {
        out.extend(std::iter::repeat_n(T::from_i64_lossy(l), m));
    }
    out
}
