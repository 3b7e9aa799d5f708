//! Quadratic cone forms, strong cone monitoring along trajectory pairs, and spatial
//! averaging estimates of band-restricted linearizations.

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cutoff::{truncate_w, truncate_w_derivative, CutoffSpec, StationaryContext};
use crate::error::{Error, Result};
use crate::evolution::{
    local_error_estimate, AbstractModel, DiagonalSystem, Etdrk2, FieldModel,
};
use crate::operators::{apply_stokes_power, bilinear_adjoint_first, bilinear_sum, BandProjectorSpec};
use crate::scalar::Real;
use crate::spectral_field::{random_field, RealBasis, SpectralField, WaveVector};

/// A diagonal system whose state splits into eigen-slots with known eigenvalues.
pub trait ConeSpace<T: Real>: DiagonalSystem<T> {
    /// Eigenvalue of `A` for each slot of [`DiagonalSystem::rates`].
    fn levels(&self) -> Vec<T>;
    /// Squared modulus carried by each slot.
    fn mode_energies(&self, x: &Self::State) -> Vec<T>;
    /// Exponent `1 + alpha` of the dissipation `nu A^{1+alpha}`.
    fn dissipation_exponent(&self) -> T;
    fn viscosity(&self) -> T;
}

impl<T: Real> ConeSpace<T> for FieldModel<T> {
    fn levels(&self) -> Vec<T> {
        self.grid.tables().norm_sq.iter().map(|&n| T::from_i64_lossy(n)).collect()
    }

    fn mode_energies(&self, x: &SpectralField<T>) -> Vec<T> {
        x.as_slice()
            .chunks(self.grid.dim())
            .map(|c| c.iter().map(|z| z.norm_sqr()).sum())
            .collect()
    }

    fn dissipation_exponent(&self) -> T {
        self.theta
    }

    fn viscosity(&self) -> T {
        self.nu
    }
}

impl<T: Real> ConeSpace<T> for AbstractModel<T> {
    fn levels(&self) -> Vec<T> {
        self.spectrum.clone()
    }

    fn mode_energies(&self, x: &Vec<T>) -> Vec<T> {
        x.iter().map(|v| *v * *v).collect()
    }

    fn dissipation_exponent(&self) -> T {
        T::one() + self.alpha
    }

    fn viscosity(&self) -> T {
        self.nu
    }
}

/// `V(xi) = ||Q_N xi||^2_beta - ||P_N xi||^2_beta` with mode weights `lambda^beta`
/// (`lambda = |j|^2` for fields, so `beta` is the usual Sobolev index).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeForm {
    pub spec: BandProjectorSpec,
    pub beta: f64,
}

impl ConeForm {
    pub fn new(spec: BandProjectorSpec, beta: f64) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec, beta })
    }

    fn split_levels<T: Real>(&self, levels: &[T], energies: &[T]) -> (T, T) {
        let cut = T::from_i64_lossy(self.spec.lambda_n);
        let beta = T::lit(self.beta);
        let (mut low, mut high) = (T::zero(), T::zero());
        for (&l, &e) in levels.iter().zip(energies) {
            if l <= T::zero() || e == T::zero() {
                continue;
            }
            let w = l.powf(beta) * e;
            if l <= cut {
                low = low + w;
            } else {
                high = high + w;
            }
        }
        (low, high)
    }

    /// `(||P_N x||^2_beta, ||Q_N x||^2_beta)`.
    pub fn split<T: Real, S: ConeSpace<T> + ?Sized>(&self, system: &S, x: &S::State) -> (T, T) {
        self.split_levels(&system.levels(), &system.mode_energies(x))
    }

    pub fn value<T: Real, S: ConeSpace<T> + ?Sized>(&self, system: &S, x: &S::State) -> T {
        let (low, high) = self.split(system, x);
        high - low
    }

    pub fn field_value<T: Real>(&self, xi: &SpectralField<T>) -> T {
        let d = xi.dim();
        let tables = xi.grid().tables();
        let levels: Vec<T> = tables.norm_sq.iter().map(|&n| T::from_i64_lossy(n)).collect();
        let energies: Vec<T> = xi
            .as_slice()
            .chunks(d)
            .map(|c| c.iter().map(|z| z.norm_sqr()).sum())
            .collect();
        let (low, high) = self.split_levels(&levels, &energies);
        high - low
    }

    pub fn vector_value<T: Real>(&self, spectrum: &[T], xi: &[T]) -> T {
        let energies: Vec<T> = xi.iter().map(|v| *v * *v).collect();
        let (low, high) = self.split_levels(spectrum, &energies);
        high - low
    }
}

/// Coefficients `(gamma, mu)` of `V'/2 + gamma V <= -mu ||v||^2_beta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConeCoefficients {
    User { gamma: f64, mu: f64, beta: f64 },
    /// Fractional gap form in `H^{-alpha}`, for a nonlinearity with Lipschitz constant `L`.
    FractionalGap { lipschitz: f64 },
    /// Averaging form in `H`:
    /// `V' + nu (lambda_{N+1}^{1+a} + lambda_N^{1+a}) V <= -nu (1+a) lambda_N^a / 4 ||v||^2`.
    Averaging,
    /// Exact pair for the linear flow in `H`.
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedCoefficients {
    pub gamma: f64,
    pub mu: f64,
    pub beta: f64,
}

impl ConeCoefficients {
    /// Resolves against the cut in `spec` for the dissipation `nu A^{1+alpha}`.
    pub fn resolve(&self, spec: &BandProjectorSpec, nu: f64, alpha: f64) -> ResolvedCoefficients {
        let ln = spec.lambda_n as f64;
        let lnext = spec.lambda_next as f64;
        let p = 1.0 + alpha;
        match *self {
            Self::User { gamma, mu, beta } => ResolvedCoefficients { gamma, mu, beta },
            Self::FractionalGap { lipschitz } => {
                let den = lnext.powf(alpha) + ln.powf(alpha);
                ResolvedCoefficients {
                    gamma: nu * ln.powf(alpha) * lnext.powf(alpha) * (lnext + ln) / den,
                    mu: nu * (lnext.powf(p) - ln.powf(p)) / den - lipschitz,
                    beta: -alpha,
                }
            }
            Self::Averaging => ResolvedCoefficients {
                gamma: 0.5 * nu * (lnext.powf(p) + ln.powf(p)),
                mu: nu * p * ln.powf(alpha) / 8.0,
                beta: 0.0,
            },
            Self::Linear => ResolvedCoefficients {
                gamma: 0.5 * nu * (lnext.powf(p) + ln.powf(p)),
                mu: 0.5 * nu * (lnext.powf(p) - ln.powf(p)),
                beta: 0.0,
            },
        }
    }
}

/// `||v(t)|| <= c exp(-theta t) ||v(0)||` fitted on a run that stays outside the cone.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SqueezeFit {
    pub theta: f64,
    pub c: f64,
}

/// Strong cone diagnostics along one trajectory pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeTrace {
    pub times: Vec<f64>,
    pub cone_value: Vec<f64>,
    /// `||v||^2_beta`.
    pub diff_norm_sq: Vec<f64>,
    /// `||v||_H`.
    pub diff_norm: Vec<f64>,
    pub dv_dt: Vec<f64>,
    /// `V'/2 + gamma V + mu ||v||^2_beta`.
    pub residual: Vec<f64>,
    pub residual_slack: Vec<f64>,
    /// Per-sample allowance for `V` itself.
    pub value_slack: Vec<f64>,
    pub coefficients: ResolvedCoefficients,
    /// Samples whose residual exceeds its slack.
    pub residual_violations: Vec<usize>,
    /// Samples with `V > slack` after `V <= 0` was reached.
    pub invariance_violations: Vec<usize>,
    pub squeeze: Option<SqueezeFit>,
}

impl ConeTrace {
    pub fn max_residual_excess(&self) -> f64 {
        self.residual
            .iter()
            .zip(&self.residual_slack)
            .map(|(r, s)| r - s)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn starts_outside(&self) -> bool {
        self.cone_value.first().is_some_and(|&v| v > 0.0)
    }

    pub fn stays_outside(&self) -> bool {
        self.cone_value.iter().all(|&v| v > 0.0)
    }
}

fn fit_squeeze(times: &[f64], norms: &[f64]) -> Option<SqueezeFit> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(norms)
        .filter(|(_, &n)| n > 0.0)
        .map(|(&t, &n)| (t, n.ln()))
        .collect();
    if pts.len() < 3 || norms[0] <= 0.0 {
        return None;
    }
    let m = pts.len() as f64;
    let (st, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mt, my) = (st / m, sy / m);
    let (num, den) = pts
        .iter()
        .fold((0.0, 0.0), |a, p| (a.0 + (p.0 - mt) * (p.1 - my), a.1 + (p.0 - mt).powi(2)));
    let theta = -num / den;
    let c = times
        .iter()
        .zip(norms)
        .map(|(&t, &n)| n * (theta * t).exp() / norms[0])
        .fold(0.0, f64::max);
    Some(SqueezeFit { theta, c })
}

/// Co-evolves `u1`, `u2` with ETDRK2 and records the strong cone inequality for
/// `v = u1 - u2`.
///
/// `dV/dt` is a centered difference (one-sided at the ends). Residual slack is ten times
/// the effect of the step-doubling truncation error on the difference quotient plus the
/// third-difference estimate of its own truncation error.
pub fn monitor_strong_cone<T: Real, S: ConeSpace<T>>(
    system: &S,
    u1: &S::State,
    u2: &S::State,
    form: &ConeForm,
    coefficients: &ConeCoefficients,
    t_end: f64,
    dt: f64,
) -> Result<ConeTrace> {
    if !(dt > 0.0) || !(t_end > 0.0) {
        return Err(Error::invalid("dt", "dt and t_end must be positive"));
    }
    let alpha = system.dissipation_exponent().to_f64_lossy() - 1.0;
    let coeffs = coefficients.resolve(&form.spec, system.viscosity().to_f64_lossy(), alpha);
    let form = ConeForm {
        beta: coeffs.beta,
        ..*form
    };
    let steps = (t_end / dt).round().max(2.0) as usize;
    let integ = Etdrk2::new(system, T::lit(dt))?;
    let levels = system.levels();
    let weight_max = levels
        .iter()
        .filter(|l| **l > T::zero())
        .map(|l| l.to_f64_lossy().powf(coeffs.beta))
        .fold(0.0, f64::max);

    let (mut a, mut b) = (u1.clone(), u2.clone());
    let mut times = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    let mut nsq = Vec::with_capacity(steps + 1);
    let mut norms = Vec::with_capacity(steps + 1);
    let mut lte = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let mut v = a.clone();
        system.axpy(&mut v, -T::one(), &b);
        let (low, high) = form.split(system, &v);
        times.push(k as f64 * dt);
        values.push((high - low).to_f64_lossy());
        nsq.push((high + low).to_f64_lossy());
        norms.push(system.norm(&v).to_f64_lossy());
        if k == steps {
            lte.push(*lte.last().unwrap_or(&0.0));
            break;
        }
        let e = local_error_estimate(system, &a, T::lit(dt))? + local_error_estimate(system, &b, T::lit(dt))?;
        lte.push(e.to_f64_lossy());
        a = integ.step(system, &a)?;
        b = integ.step(system, &b)?;
        if !system.is_finite(&a) || !system.is_finite(&b) {
            return Err(Error::BlowUp {
                time: (k + 1) as f64 * dt,
                last_valid_time: k as f64 * dt,
            });
        }
    }

    let n = values.len();
    let floor = |k: usize| 64.0 * f64::EPSILON * (nsq[k] + values[k].abs());
    let value_slack: Vec<f64> = (0..n)
        .map(|k| 20.0 * weight_max * norms[k] * lte[k] + floor(k))
        .collect();
    let mut dv = vec![0.0; n];
    let mut residual = vec![0.0; n];
    let mut residual_slack = vec![0.0; n];
    for k in 0..n {
        dv[k] = if k == 0 {
            (values[1] - values[0]) / dt
        } else if k == n - 1 {
            (values[k] - values[k - 1]) / dt
        } else {
            (values[k + 1] - values[k - 1]) / (2.0 * dt)
        };
        let fd = if k >= 1 && k + 2 < n {
            (values[k + 2] - 3.0 * values[k + 1] + 3.0 * values[k] - values[k - 1]).abs() / (6.0 * dt)
        } else if k + 3 < n {
            (values[k + 3] - 3.0 * values[k + 2] + 3.0 * values[k + 1] - values[k]).abs() / dt
        } else if k >= 3 {
            (values[k] - 3.0 * values[k - 1] + 3.0 * values[k - 2] - values[k - 3]).abs() / dt
        } else {
            0.0
        };
        residual[k] = 0.5 * dv[k] + coeffs.gamma * values[k] + coeffs.mu * nsq[k];
        residual_slack[k] = 10.0 * 0.5 * (value_slack[k] / dt + fd) + coeffs.gamma.abs() * floor(k);
    }
    let residual_violations = (0..n).filter(|&k| residual[k] > residual_slack[k]).collect();
    let mut invariance_violations = Vec::new();
    let mut entered = false;
    for k in 0..n {
        if values[k] <= 0.0 {
            entered = true;
        } else if entered && values[k] > value_slack[k] {
            invariance_violations.push(k);
        }
    }
    let squeeze = if values.iter().all(|&v| v > 0.0) {
        fit_squeeze(&times, &norms)
    } else {
        None
    };
    Ok(ConeTrace {
        times,
        cone_value: values,
        diff_norm_sq: nsq,
        diff_norm: norms,
        dv_dt: dv,
        residual,
        residual_slack,
        value_slack,
        coefficients: coeffs,
        residual_violations,
        invariance_violations,
        squeeze,
    })
}

/// Aggregate over many monitored pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeSummary {
    pub runs: usize,
    pub runs_with_invariance_violations: usize,
    pub runs_with_residual_violations: usize,
    pub runs_staying_outside: usize,
    /// Smallest fitted squeezing rate among runs that stayed outside the cone.
    pub min_squeeze_rate: Option<f64>,
    /// Largest residual excess over slack (negative when every sample is within slack).
    pub max_residual_excess: f64,
}

impl ConeSummary {
    pub fn of(traces: &[ConeTrace]) -> Self {
        let outside: Vec<&ConeTrace> = traces.iter().filter(|t| t.stays_outside()).collect();
        Self {
            runs: traces.len(),
            runs_with_invariance_violations: traces.iter().filter(|t| !t.invariance_violations.is_empty()).count(),
            runs_with_residual_violations: traces.iter().filter(|t| !t.residual_violations.is_empty()).count(),
            runs_staying_outside: outside.len(),
            min_squeeze_rate: outside
                .iter()
                .filter_map(|t| t.squeeze.map(|s| s.theta))
                .reduce(f64::min),
            max_residual_excess: traces
                .iter()
                .map(|t| t.max_residual_excess())
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Monitors each pair in parallel.
pub fn monitor_pairs<T: Real, S: ConeSpace<T>>(
    system: &S,
    pairs: &[(S::State, S::State)],
    form: &ConeForm,
    coefficients: &ConeCoefficients,
    t_end: f64,
    dt: f64,
) -> Result<Vec<ConeTrace>> {
    pairs
        .par_iter()
        .map(|(a, b)| monitor_strong_cone(system, a, b, form, coefficients, t_end, dt))
        .collect()
}

/// Linear operator on the real coordinates of a band.
pub trait BandOperator<T: Real>: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[T]) -> Result<Vec<T>>;
    fn apply_transpose(&self, y: &[T]) -> Result<Vec<T>>;
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

fn unit<T: Real>(mut x: Vec<T>) -> Option<Vec<T>> {
    let n = dot(&x, &x).sqrt();
    if !(n > T::zero()) {
        return None;
    }
    for v in x.iter_mut() {
        *v = *v / n;
    }
    Some(x)
}

fn gaussian_vector<T: Real>(n: usize, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| T::lit(StandardNormal.sample(&mut rng)))
        .collect()
}

/// Power iteration settings for operator norms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerOptions {
    pub iterations: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self {
            iterations: 30,
            restarts: 5,
            seed: 0,
        }
    }
}

/// `||K - a I||_2` by power iteration on `(K - aI)^T (K - aI)`; returns the largest
/// Rayleigh estimate over the restarts.
pub fn operator_norm<T: Real, K: BandOperator<T> + ?Sized>(op: &K, shift: T, opts: &PowerOptions) -> Result<T> {
    let n = op.dim();
    if n == 0 {
        return Ok(T::zero());
    }
    let shifted = |x: &[T]| -> Result<Vec<T>> {
        let mut y = op.apply(x)?;
        for (a, b) in y.iter_mut().zip(x) {
            *a = *a - shift * *b;
        }
        Ok(y)
    };
    let shifted_t = |y: &[T]| -> Result<Vec<T>> {
        let mut x = op.apply_transpose(y)?;
        for (a, b) in x.iter_mut().zip(y) {
            *a = *a - shift * *b;
        }
        Ok(x)
    };
    let mut best = T::zero();
    for r in 0..opts.restarts.max(1) {
        let Some(mut z) = unit(gaussian_vector::<T>(n, opts.seed.wrapping_mul(1_000_003).wrapping_add(r as u64))) else {
            continue;
        };
        let mut est = dot(&shifted(&z)?, &shifted(&z)?).sqrt();
        for _ in 0..opts.iterations {
            let kz = shifted(&z)?;
            est = est.max(dot(&kz, &kz).sqrt());
            match unit(shifted_t(&kz)?) {
                Some(next) => z = next,
                None => break,
            }
        }
        let kz = shifted(&z)?;
        est = est.max(dot(&kz, &kz).sqrt());
        best = best.max(est);
    }
    Ok(best)
}

/// Least-squares scalar `a` minimizing `sum ||K z_i - a z_i||^2` over random directions.
pub fn fit_scalar<T: Real, K: BandOperator<T> + ?Sized>(op: &K, directions: usize, seed: u64) -> Result<T> {
    let n = op.dim();
    if n == 0 {
        return Ok(T::zero());
    }
    let (mut num, mut den) = (T::zero(), T::zero());
    for i in 0..directions.max(1) {
        let z = gaussian_vector::<T>(n, seed ^ (0x5eed_0000 + i as u64));
        num = num + dot(&z, &op.apply(&z)?);
        den = den + dot(&z, &z);
    }
    Ok(num / den)
}

/// `z -> R A^{-(theta-1)} (B(h, U) + B(U, h))`, `h = W'(w) R z`, `U = W(w) + v`, on the
/// band `[lambda_N - k, lambda_N + k]`.
pub struct FieldBandOperator<T: Real> {
    basis: RealBasis,
    w: SpectralField<T>,
    u: SpectralField<T>,
    cutoff: CutoffSpec,
    power: T,
}

impl<T: Real> FieldBandOperator<T> {
    pub fn new(ctx: &StationaryContext<T>, cutoff: &CutoffSpec, spec: &BandProjectorSpec, w: &SpectralField<T>) -> Result<Self> {
        spec.validate()?;
        w.grid().ensure_same(ctx.v.grid())?;
        let basis = RealBasis::new(*w.grid(), |n| spec.in_band(n));
        let u = &truncate_w(w, cutoff) + &ctx.v;
        Ok(Self {
            basis,
            w: w.clone(),
            u,
            cutoff: *cutoff,
            power: -(ctx.theta - T::one()),
        })
    }

    /// The same linearization on every shell accepted by `keep` (all of `H` for `|n| n > 0`).
    pub fn on_shells(
        ctx: &StationaryContext<T>,
        cutoff: &CutoffSpec,
        w: &SpectralField<T>,
        keep: impl Fn(i64) -> bool,
    ) -> Result<Self> {
        w.grid().ensure_same(ctx.v.grid())?;
        Ok(Self {
            basis: RealBasis::new(*w.grid(), keep),
            w: w.clone(),
            u: &truncate_w(w, cutoff) + &ctx.v,
            cutoff: *cutoff,
            power: -(ctx.theta - T::one()),
        })
    }

    pub fn basis(&self) -> &RealBasis {
        &self.basis
    }
}

/// Empirical Lipschitz constant of the prepared nonlinearity on `H`: the largest
/// `||A^{-(theta-1)} F'(w)||` over sampled states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub lipschitz: f64,
    /// `(||w||_{H^{9/2}} / varrho, ||F'(w)||)` per sample.
    pub samples: Vec<(f64, f64)>,
}

/// States for [`prepared_lipschitz`]: random fields scaled to `0.5, 2, 10, 1000` times
/// `varrho` in `H^{9/2}`, cycling.
pub fn lipschitz_samples<T: Real>(
    grid: &crate::spectral_field::GridSpec,
    cutoff: &CutoffSpec,
    count: usize,
    seed: u64,
) -> Result<Vec<SpectralField<T>>> {
    const LEVELS: [f64; 4] = [0.5, 2.0, 10.0, 1e3];
    (0..count)
        .map(|i| {
            let f = random_field::<T>(grid, seed.wrapping_add(7919 * i as u64), 5.0)?;
            let n = f.sobolev_norm(T::lit(4.5)).to_f64_lossy();
            Ok(f.scaled(T::lit(LEVELS[i % LEVELS.len()] * cutoff.radius / n)))
        })
        .collect()
}

pub fn prepared_lipschitz<T: Real>(
    ctx: &StationaryContext<T>,
    cutoff: &CutoffSpec,
    states: &[SpectralField<T>],
    opts: &PowerOptions,
) -> Result<LipschitzEstimate> {
    let samples = states
        .par_iter()
        .map(|w| {
            let op = FieldBandOperator::on_shells(ctx, cutoff, w, |n| n > 0)?;
            let norm = operator_norm(&op, T::zero(), opts)?.to_f64_lossy();
            Ok((w.sobolev_norm(T::lit(4.5)).to_f64_lossy() / cutoff.radius, norm))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LipschitzEstimate {
        lipschitz: samples.iter().map(|s| s.1).fold(0.0, f64::max),
        samples,
    })
}

impl<T: Real> BandOperator<T> for FieldBandOperator<T> {
    fn dim(&self) -> usize {
        self.basis.dim()
    }

    fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        if x.iter().all(|v| *v == T::zero()) {
            return Ok(vec![T::zero(); x.len()]);
        }
        let z = self.basis.to_field(x);
        let h = truncate_w_derivative(&self.w, &z, &self.cutoff)?;
        let q = bilinear_sum(&[(&h, &self.u), (&self.u, &h)])?;
        self.basis.coordinates(&apply_stokes_power(&q, self.power, T::one()))
    }

    fn apply_transpose(&self, y: &[T]) -> Result<Vec<T>> {
        if y.iter().all(|v| *v == T::zero()) {
            return Ok(vec![T::zero(); y.len()]);
        }
        let y = apply_stokes_power(&self.basis.to_field(y), self.power, T::one());
        let first = bilinear_adjoint_first(&self.u, &y)?;
        let second = bilinear_sum(&[(&self.u, &y)])?;
        let g = truncate_w_derivative(&self.w, &(&first - &second), &self.cutoff)?;
        self.basis.coordinates(&g)
    }
}

/// `z -> R F'(u) R z` for the abstract nonlinearity.
pub struct AbstractBandOperator<'a, T: Real> {
    model: &'a AbstractModel<T>,
    u: Vec<T>,
    band: Vec<usize>,
}

impl<'a, T: Real> AbstractBandOperator<'a, T> {
    pub fn new(model: &'a AbstractModel<T>, spec: &BandProjectorSpec, u: Vec<T>) -> Result<Self> {
        spec.validate()?;
        if u.len() != model.dim() {
            return Err(Error::SizeMismatch {
                expected: model.dim(),
                found: u.len(),
            });
        }
        let lo = T::lit(spec.lambda_n as f64 - spec.k);
        let hi = T::lit(spec.lambda_n as f64 + spec.k);
        let band = (0..model.dim())
            .filter(|&i| model.spectrum[i] >= lo && model.spectrum[i] <= hi)
            .collect();
        Ok(Self { model, u, band })
    }

    fn embed(&self, x: &[T]) -> Vec<T> {
        let mut z = vec![T::zero(); self.model.dim()];
        for (&i, &v) in self.band.iter().zip(x) {
            z[i] = v;
        }
        z
    }

    fn jacobian_row(&self, i: usize, j: usize) -> T {
        let mut e = vec![T::zero(); self.model.dim()];
        e[j] = T::one();
        self.model.nonlinearity.derivative(&self.u, &e)[i]
    }
}

impl<T: Real> BandOperator<T> for AbstractBandOperator<'_, T> {
    fn dim(&self) -> usize {
        self.band.len()
    }

    fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        let f = self.model.nonlinearity.derivative(&self.u, &self.embed(x));
        Ok(self.band.iter().map(|&i| f[i]).collect())
    }

    fn apply_transpose(&self, y: &[T]) -> Result<Vec<T>> {
        Ok(self
            .band
            .iter()
            .map(|&j| {
                self.band
                    .iter()
                    .zip(y)
                    .map(|(&i, &yi)| self.jacobian_row(i, j) * yi)
                    .sum()
            })
            .collect())
    }
}

/// Which regime a SAC sample `w` was drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleRegime {
    /// `W(w) = w`.
    Inside,
    /// Far outside the ball, where `W` saturates.
    Saturated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SacSample {
    pub regime: SampleRegime,
    /// `||w||_{H^{9/2}} / varrho`.
    pub relative_size: f64,
    pub delta: f64,
    /// Fitted scalar when the scalar-corrected estimate was requested.
    pub a_fit: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SacReport {
    pub delta_hat: f64,
    pub samples: Vec<SacSample>,
    pub lambda_n: i64,
    pub k: f64,
    pub band_dim: usize,
    /// Smallness threshold of the averaging condition.
    pub delta_target: f64,
    pub meets_target: bool,
}

pub const SAC_DELTA_TARGET: f64 = 1.0 / 30.0;

/// Sample states for SAC estimates: alternating fields inside the ball
/// (`||w||_{H^{9/2}} = varrho / 2`) and far outside (`1e3 varrho`).
pub fn sac_samples<T: Real>(grid: &crate::spectral_field::GridSpec, cutoff: &CutoffSpec, count: usize, seed: u64) -> Result<Vec<(SampleRegime, SpectralField<T>)>> {
    (0..count)
        .map(|i| {
            let f = random_field::<T>(grid, seed.wrapping_add(7919 * i as u64), 5.0)?;
            let n = f.sobolev_norm(T::lit(4.5)).to_f64_lossy();
            let (regime, target) = if i % 2 == 0 {
                (SampleRegime::Inside, 0.5 * cutoff.radius)
            } else {
                (SampleRegime::Saturated, 1e3 * cutoff.radius)
            };
            Ok((regime, f.scaled(T::lit(target / n))))
        })
        .collect()
}

fn sac_report(spec: &BandProjectorSpec, band_dim: usize, samples: Vec<SacSample>) -> SacReport {
    let delta_hat = samples.iter().map(|s| s.delta).fold(0.0, f64::max);
    SacReport {
        delta_hat,
        samples,
        lambda_n: spec.lambda_n,
        k: spec.k,
        band_dim,
        delta_target: SAC_DELTA_TARGET,
        meets_target: delta_hat <= SAC_DELTA_TARGET,
    }
}

/// Largest power-iteration estimate of `||R F'(W(w)) R||` over the sampled `w`.
pub fn sac_estimate<T: Real>(
    ctx: &StationaryContext<T>,
    cutoff: &CutoffSpec,
    spec: &BandProjectorSpec,
    samples: &[(SampleRegime, SpectralField<T>)],
    opts: &PowerOptions,
) -> Result<SacReport> {
    sac_estimate_impl(ctx, cutoff, spec, samples, opts, false)
}

/// As [`sac_estimate`], after subtracting the least-squares scalar `a(w)` on the band.
pub fn sac_estimate_with_scalar<T: Real>(
    ctx: &StationaryContext<T>,
    cutoff: &CutoffSpec,
    spec: &BandProjectorSpec,
    samples: &[(SampleRegime, SpectralField<T>)],
    opts: &PowerOptions,
) -> Result<SacReport> {
    sac_estimate_impl(ctx, cutoff, spec, samples, opts, true)
}

fn sac_estimate_impl<T: Real>(
    ctx: &StationaryContext<T>,
    cutoff: &CutoffSpec,
    spec: &BandProjectorSpec,
    samples: &[(SampleRegime, SpectralField<T>)],
    opts: &PowerOptions,
    with_scalar: bool,
) -> Result<SacReport> {
    let out: Result<Vec<(usize, SacSample)>> = samples
        .par_iter()
        .map(|(regime, w)| {
            let op = FieldBandOperator::new(ctx, cutoff, spec, w)?;
            let a = if with_scalar {
                fit_scalar(&op, opts.restarts.max(1), opts.seed)?
            } else {
                T::zero()
            };
            let delta = operator_norm(&op, a, opts)?;
            Ok((
                op.dim(),
                SacSample {
                    regime: *regime,
                    relative_size: w.sobolev_norm(T::lit(4.5)).to_f64_lossy() / cutoff.radius,
                    delta: delta.to_f64_lossy(),
                    a_fit: with_scalar.then(|| a.to_f64_lossy()),
                },
            ))
        })
        .collect();
    let out = out?;
    let band_dim = out.first().map(|o| o.0).unwrap_or(0);
    Ok(sac_report(spec, band_dim, out.into_iter().map(|o| o.1).collect()))
}

/// SAC estimate for the abstract model at the given states `u`.
pub fn abstract_sac_estimate<T: Real>(
    model: &AbstractModel<T>,
    spec: &BandProjectorSpec,
    states: &[Vec<T>],
    opts: &PowerOptions,
    with_scalar: bool,
) -> Result<SacReport> {
    let mut samples = Vec::with_capacity(states.len());
    let mut band_dim = 0;
    for u in states {
        let op = AbstractBandOperator::new(model, spec, u.clone())?;
        band_dim = op.dim();
        let a = if with_scalar {
            fit_scalar(&op, opts.restarts.max(1), opts.seed)?
        } else {
            T::zero()
        };
        samples.push(SacSample {
            regime: SampleRegime::Inside,
            relative_size: f64::NAN,
            delta: operator_norm(&op, a, opts)?.to_f64_lossy(),
            a_fit: with_scalar.then(|| a.to_f64_lossy()),
        });
    }
    Ok(sac_report(spec, band_dim, samples))
}

/// Outcome of the band-annihilation check for a low-frequency generator `U`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnihilationReport {
    /// Pairs `(j, m)` with `j` and `j - m` in the band and `U_m != 0`.
    pub coupling_pairs: usize,
    /// Largest coefficient of `R T_U R z` by direct convolution, for a random band field `z`.
    pub max_coefficient: f64,
}

/// Direct convolution of `T_U z = B(z, U) + B(U, z)` restricted to the band on both sides.
pub fn band_annihilation_check<T: Real>(generator: &SpectralField<T>, spec: &BandProjectorSpec, seed: u64) -> Result<AnnihilationReport> {
    spec.validate()?;
    let grid = *generator.grid();
    let d = grid.dim();
    let z = random_field::<T>(&grid, seed, 1.0)?.restrict(|n| spec.in_band(n));
    let support: Vec<(WaveVector, Vec<Complex<T>>)> = generator
        .modes()
        .filter(|(_, c)| c.iter().any(|x| x.norm() > T::zero()))
        .map(|(j, c)| (j, c.to_vec()))
        .collect();
    let band: Vec<(WaveVector, Vec<Complex<T>>)> = z
        .modes()
        .filter(|(j, _)| spec.in_band(j.norm_sq()))
        .map(|(j, c)| (j, c.to_vec()))
        .collect();
    let mut pairs = 0usize;
    let mut max_coefficient = 0.0f64;
    let i = Complex::new(T::zero(), T::one());
    for (j, _) in &band {
        let mut acc = vec![Complex::new(T::zero(), T::zero()); d];
        for (m, um) in &support {
            let p = *j - *m;
            let Some(zp) = band.iter().find(|(q, _)| *q == p).map(|(_, c)| c) else {
                continue;
            };
            pairs += 1;
            // (z_p . i m) U_m + (U_m . i p) z_p
            let zm: Complex<T> = (0..d).map(|a| zp[a] * T::from_i64_lossy(m.components()[a] as i64)).sum::<Complex<T>>() * i;
            let up: Complex<T> = (0..d).map(|a| um[a] * T::from_i64_lossy(p.components()[a] as i64)).sum::<Complex<T>>() * i;
            for a in 0..d {
                acc[a] = acc[a] + zm * um[a] + up * zp[a];
            }
        }
        let nsq = T::from_i64_lossy(j.norm_sq());
        let jc: Vec<T> = j.components().iter().map(|&c| T::from_i64_lossy(c as i64)).collect();
        let dotj: Complex<T> = (0..d).map(|a| acc[a] * jc[a]).sum();
        for a in 0..d {
            let v = acc[a] - dotj * (jc[a] / nsq);
            max_coefficient = max_coefficient.max(v.norm().to_f64_lossy());
        }
    }
    Ok(AnnihilationReport {
        coupling_pairs: pairs,
        max_coefficient,
    })
}

/// Spatial means of `W(w)`, `v` and their first derivatives, read from the `j = 0`
/// Fourier coefficient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroMeanAudit {
    pub mean_w: f64,
    pub mean_v: f64,
    pub mean_grad_w: f64,
    pub mean_grad_v: f64,
    pub max_deviation: f64,
}

impl ZeroMeanAudit {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_deviation <= tol
    }
}

fn max_component_mean<T: Real>(f: &SpectralField<T>) -> f64 {
    f.mean().iter().map(|c| c.norm().to_f64_lossy()).fold(0.0, f64::max)
}

fn max_gradient_mean<T: Real>(f: &SpectralField<T>) -> f64 {
    let grid = *f.grid();
    let d = grid.dim();
    let tables = grid.tables();
    (0..d)
        .map(|m| {
            let coeffs: Vec<Complex<T>> = f
                .as_slice()
                .chunks(d)
                .zip(&tables.waves)
                .flat_map(|(c, j)| {
                    let k = Complex::new(T::zero(), T::from_i64_lossy(j.components()[m] as i64));
                    c.iter().map(move |x| *x * k)
                })
                .collect();
            max_component_mean(&SpectralField::from_coeffs_unchecked(grid, coeffs))
        })
        .fold(0.0, f64::max)
}

pub fn zero_mean_audit<T: Real>(ctx: &StationaryContext<T>, w: &SpectralField<T>, cutoff: &CutoffSpec) -> Result<ZeroMeanAudit> {
    w.grid().ensure_same(ctx.v.grid())?;
    let big_w = truncate_w(w, cutoff);
    let mean_w = max_component_mean(&big_w);
    let mean_v = max_component_mean(&ctx.v);
    let mean_grad_w = max_gradient_mean(&big_w);
    let mean_grad_v = max_gradient_mean(&ctx.v);
    Ok(ZeroMeanAudit {
        mean_w,
        mean_v,
        mean_grad_w,
        mean_grad_v,
        max_deviation: mean_w.max(mean_v).max(mean_grad_w).max(mean_grad_v),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral_field::GridSpec;

    fn spec() -> BandProjectorSpec {
        BandProjectorSpec::new(4, 1, 2, 0.5).unwrap()
    }

    fn single_mode(grid: GridSpec, j: WaveVector, c: [f64; 2]) -> SpectralField<f64> {
        let mut raw = crate::spectral_field::RawSpectrum::zeros(grid);
        let v = [Complex::new(c[0], 0.0), Complex::new(c[1], 0.0)];
        raw.set(&j, &v).unwrap();
        raw.set(&-j, &v).unwrap();
        crate::spectral_field::leray_project(raw)
    }

    #[test]
    fn cone_value_of_pure_modes() {
        let grid = GridSpec::new(2, 6).unwrap();
        let form = ConeForm::new(spec(), 0.0).unwrap();
        let hi = single_mode(grid, WaveVector::new2(1, 1), [0.5, -0.5]);
        assert!((form.field_value(&hi) - hi.norm_sq()).abs() < 1e-15);
        let lo = single_mode(grid, WaveVector::new2(1, 0), [0.0, 0.3]);
        assert!((form.field_value(&lo) + lo.norm_sq()).abs() < 1e-15);
        let mut mix = hi.clone();
        mix.axpy(hi.norm() / lo.norm(), &lo);
        assert!(form.field_value(&mix).abs() < 1e-15);
    }

    #[test]
    fn identical_pair_has_zero_trace() {
        let model = AbstractModel::new(
            0.25,
            1.0,
            vec![1.0, 2.0, 4.0, 5.0],
            crate::evolution::AbstractNonlinearity::householder_sine(4, 0.5, 1),
            None,
        )
        .unwrap();
        let form = ConeForm::new(BandProjectorSpec::new(2, 2, 4, 0.5).unwrap(), 0.0).unwrap();
        let u = vec![0.3, -0.1, 0.2, 0.05];
        let tr = monitor_strong_cone(&model, &u, &u, &form, &ConeCoefficients::FractionalGap { lipschitz: 0.5 }, 0.1, 0.01).unwrap();
        assert!(tr.cone_value.iter().all(|&v| v == 0.0));
        assert!(tr.residual.iter().all(|&r| r == 0.0));
        assert!(tr.invariance_violations.is_empty());
    }
}
