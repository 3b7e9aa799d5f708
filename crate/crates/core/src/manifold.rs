//! Inertial-manifold graph `Phi: P_N H -> Q_N H` from the backward boundary-value problem,
//! the inertial form on `P_N H`, and exponential tracking measurements.

use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{AbstractModel, DiagonalSystem, Etdrk2, FieldModel};
use crate::operators::BandProjectorSpec;
use crate::scalar::Real;
use crate::spectral_field::{RealBasis, SpectralField};

/// Real coordinates on `P_N H` and the complementary projection `Q_N`.
pub trait ManifoldSystem<T: Real>: DiagonalSystem<T> {
    type Split: Send + Sync;

    fn split(&self, spec: &BandProjectorSpec) -> Result<Self::Split>;
    fn low_dim(&self, split: &Self::Split) -> usize;
    /// Decay rate of each low coordinate under the linear part.
    fn low_rates(&self, split: &Self::Split) -> Vec<T>;
    fn low_coordinates(&self, split: &Self::Split, x: &Self::State) -> Vec<T>;
    fn from_low(&self, split: &Self::Split, p: &[T]) -> Self::State;
    fn high_part(&self, split: &Self::Split, x: &Self::State) -> Self::State;
}

/// Orthonormal `P_N` coordinates of a field model.
#[derive(Clone, Debug)]
pub struct FieldSplit {
    basis: RealBasis,
    lambda_n: i64,
}

impl FieldSplit {
    pub fn basis(&self) -> &RealBasis {
        &self.basis
    }
}

impl<T: Real> ManifoldSystem<T> for FieldModel<T> {
    type Split = FieldSplit;

    fn split(&self, spec: &BandProjectorSpec) -> Result<FieldSplit> {
        spec.validate()?;
        let l = spec.lambda_n;
        let basis = RealBasis::new(self.grid, |n| n <= l);
        if basis.is_empty() {
            return Err(Error::invalid("lambda_n", "P_N is empty on this grid"));
        }
        Ok(FieldSplit { basis, lambda_n: l })
    }

    fn low_dim(&self, split: &FieldSplit) -> usize {
        split.basis.dim()
    }

    fn low_rates(&self, split: &FieldSplit) -> Vec<T> {
        (0..split.basis.dim())
            .map(|i| self.nu * T::from_i64_lossy(split.basis.level(i)).powf(self.theta))
            .collect()
    }

    fn low_coordinates(&self, split: &FieldSplit, x: &SpectralField<T>) -> Vec<T> {
        split.basis.coordinates(x).expect("state lives on the model grid")
    }

    fn from_low(&self, split: &FieldSplit, p: &[T]) -> SpectralField<T> {
        split.basis.to_field(p)
    }

    fn high_part(&self, split: &FieldSplit, x: &SpectralField<T>) -> SpectralField<T> {
        let l = split.lambda_n;
        x.restrict(|n| n > l)
    }
}

impl<T: Real> ManifoldSystem<T> for AbstractModel<T> {
    type Split = usize;

    fn split(&self, spec: &BandProjectorSpec) -> Result<usize> {
        spec.validate()?;
        self.cut_for(T::from_i64_lossy(spec.lambda_n))
            .ok_or_else(|| Error::invalid("lambda_n", "does not split the spectrum"))
    }

    fn low_dim(&self, split: &usize) -> usize {
        *split
    }

    fn low_rates(&self, split: &usize) -> Vec<T> {
        self.rates()[..*split].to_vec()
    }

    fn low_coordinates(&self, split: &usize, x: &Vec<T>) -> Vec<T> {
        x[..*split].to_vec()
    }

    fn from_low(&self, split: &usize, p: &[T]) -> Vec<T> {
        let mut x = vec![T::zero(); self.dim()];
        x[..*split].copy_from_slice(&p[..*split]);
        x
    }

    fn high_part(&self, split: &usize, x: &Vec<T>) -> Vec<T> {
        let mut y = x.clone();
        y[..*split].fill(T::zero());
        y
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManifoldOptions {
    /// Step of the forward integrations inside the boundary-value solve.
    pub dt: f64,
    /// Residual tolerance `||P_N u(0) - p||` of the boundary-value solve.
    pub bvp_tol: f64,
    /// Tolerance on `||Phi_T - Phi_{T/2}||`.
    pub tol: f64,
    pub t_initial: f64,
    pub t_max: f64,
    pub max_iterations: usize,
    /// Relative finite-difference step for Jacobian columns, measured on `P_N u(-T)`.
    pub fd_step: f64,
}

impl Default for ManifoldOptions {
    fn default() -> Self {
        Self {
            dt: 1e-2,
            bvp_tol: 1e-11,
            tol: 1e-8,
            t_initial: 1.0,
            t_max: 128.0,
            max_iterations: 60,
            fd_step: 1e-7,
        }
    }
}

/// Largest exponent `r T` of the backward growth of `P_N u(-T)`.
const MAX_GROWTH: f64 = 600.0;

/// Deepest halving of a continuation increment in `T`.
const MAX_BISECTIONS: usize = 12;

/// Graph computation for one model and cut.
pub struct Manifold<'a, T: Real, S: ManifoldSystem<T>> {
    pub system: &'a S,
    pub spec: BandProjectorSpec,
    pub options: ManifoldOptions,
    split: S::Split,
    low_rates: Vec<f64>,
}

/// Starting point of a boundary-value solve.
#[derive(Clone, Debug, Default)]
pub struct BvpWarm {
    /// Scaled unknown `e^{-r T} P_N u(-T)`.
    pub scaled_start: Vec<f64>,
    /// Jacobian of the scaled map; rebuilt by finite differences when absent or stale.
    pub jacobian: Option<DMatrix<f64>>,
    /// Horizon `T` the unknown belongs to (`0` for the cold start `s = p`).
    pub horizon: f64,
}

/// Solution of the boundary-value problem on `[-T, 0]`.
#[derive(Clone, Debug)]
pub struct BvpSolution<S> {
    /// `u(0)`.
    pub state: S,
    /// Final unknown and Jacobian, reusable as a warm start.
    pub warm: BvpWarm,
    pub residual: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

#[derive(Clone, Debug)]
pub struct PhiValue<S> {
    /// `Q_N u(0)`.
    pub q: S,
    pub t_used: f64,
    /// `(T, ||Phi_T - Phi_{T/2}||)` for every doubling.
    pub convergence: Vec<(f64, f64)>,
    pub bvp: BvpSolution<S>,
}

impl<'a, T: Real, S: ManifoldSystem<T>> Manifold<'a, T, S> {
    pub fn new(system: &'a S, spec: BandProjectorSpec, options: ManifoldOptions) -> Result<Self> {
        if !(options.dt > 0.0 && options.t_initial > 0.0 && options.t_max >= options.t_initial) {
            return Err(Error::invalid("dt", "dt, t_initial and t_max must be positive and ordered"));
        }
        let split = system.split(&spec)?;
        let low_rates = system.low_rates(&split).iter().map(|r| r.to_f64_lossy()).collect();
        Ok(Self {
            system,
            spec,
            options,
            split,
            low_rates,
        })
    }

    pub fn split(&self) -> &S::Split {
        &self.split
    }

    pub fn low_dim(&self) -> usize {
        self.low_rates.len()
    }

    fn max_rate(&self) -> f64 {
        self.low_rates.iter().cloned().fold(0.0, f64::max)
    }

    pub fn low_coordinates(&self, x: &S::State) -> Vec<T> {
        self.system.low_coordinates(&self.split, x)
    }

    pub fn from_low(&self, p: &[T]) -> S::State {
        self.system.from_low(&self.split, p)
    }

    pub fn high_part(&self, x: &S::State) -> S::State {
        self.system.high_part(&self.split, x)
    }

    fn integrate(&self, x0: &S::State, t: f64) -> Result<S::State> {
        let steps = (t / self.options.dt).ceil().max(1.0) as usize;
        let integ = Etdrk2::new(self.system, T::lit(t / steps as f64))?;
        let mut x = x0.clone();
        for k in 0..steps {
            x = integ.step(self.system, &x)?;
            if !self.system.is_finite(&x) {
                return Err(Error::BlowUp {
                    time: (k + 1) as f64 * t / steps as f64 - t,
                    last_valid_time: k as f64 * t / steps as f64 - t,
                });
            }
        }
        Ok(x)
    }

    /// `G_T` in scaled coordinates: `s -> P_N u(0)` for `u(-T) = e^{r T} s`.
    fn scaled_map(&self, s: &[f64], t: f64) -> Result<(Vec<f64>, S::State)> {
        let v: Vec<T> = s
            .iter()
            .zip(&self.low_rates)
            .map(|(x, r)| T::lit(x * (r * t).exp()))
            .collect();
        let u0 = self.integrate(&self.from_low(&v), t)?;
        let g = self.low_coordinates(&u0).iter().map(|x| x.to_f64_lossy()).collect();
        Ok((g, u0))
    }

    /// Finds `u` on `[-T, 0]` with `Q_N u(-T) = 0` and `P_N u(0) = target`.
    ///
    /// Each solve is a damped Broyden iteration started from a finite-difference Jacobian.
    /// The warm start (or `s = p` at `T = 0`) is carried to the horizon `T` by continuation,
    /// halving the increment in `T` whenever a solve fails.
    pub fn solve_bvp(&self, target: &[T], t: f64, warm: Option<&BvpWarm>) -> Result<BvpSolution<S::State>> {
        let n = self.low_dim();
        if target.len() != n {
            return Err(Error::SizeMismatch {
                expected: n,
                found: target.len(),
            });
        }
        let start = match warm {
            Some(w) if w.scaled_start.len() == n => w.clone(),
            _ => BvpWarm {
                scaled_start: target.iter().map(|x| x.to_f64_lossy()).collect(),
                jacobian: None,
                horizon: 0.0,
            },
        };
        let mut evaluations = 0;
        let mut sol = self.continue_to(target, t, start, 0, &mut evaluations)?;
        sol.evaluations = evaluations;
        Ok(sol)
    }

    fn continue_to(
        &self,
        target: &[T],
        t: f64,
        warm: BvpWarm,
        depth: usize,
        evaluations: &mut usize,
    ) -> Result<BvpSolution<S::State>> {
        let guess = self.retarget(&warm, t, evaluations)?;
        match self.solve_once(target, t, &guess, evaluations) {
            Err(e) if e.is_numerical() && depth < MAX_BISECTIONS && (t - warm.horizon).abs() > 1e-3 * t => {
                let mid = 0.5 * (warm.horizon + t);
                let half = self.continue_to(target, mid, warm, depth + 1, evaluations)?;
                self.continue_to(target, t, half.warm, depth + 1, evaluations)
            }
            other => other,
        }
    }

    /// Moves a warm start from its horizon to `t` by extending `P_N u` backward with the
    /// nonlinearity frozen at `u(-T_old)`.
    fn retarget(&self, warm: &BvpWarm, t: f64, evaluations: &mut usize) -> Result<BvpWarm> {
        let dt = t - warm.horizon;
        if dt == 0.0 {
            return Ok(warm.clone());
        }
        let v: Vec<T> = warm
            .scaled_start
            .iter()
            .zip(&self.low_rates)
            .map(|(x, r)| T::lit(x * (r * warm.horizon).exp()))
            .collect();
        *evaluations += 1;
        let nl = self.low_coordinates(&self.system.nonlinear(&self.from_low(&v))?);
        let scaled_start = warm
            .scaled_start
            .iter()
            .zip(&self.low_rates)
            .zip(&nl)
            .map(|((s, r), f)| s - (-r * warm.horizon).exp() * (-(-r * dt).exp_m1()) / r * f.to_f64_lossy())
            .collect();
        Ok(BvpWarm {
            scaled_start,
            jacobian: warm.jacobian.clone(),
            horizon: t,
        })
    }

    fn solve_once(
        &self,
        target: &[T],
        t: f64,
        warm: &BvpWarm,
        evaluations: &mut usize,
    ) -> Result<BvpSolution<S::State>> {
        let n = self.low_dim();
        if target.len() != n {
            return Err(Error::SizeMismatch {
                expected: n,
                found: target.len(),
            });
        }
        if !(t > 0.0) {
            return Err(Error::invalid("T", "must be positive"));
        }
        if t * self.max_rate() > MAX_GROWTH {
            return Err(Error::invalid("T", "backward growth e^{rT} of P_N overflows"));
        }
        let p = DVector::from_iterator(n, target.iter().map(|x| x.to_f64_lossy()));
        let scale = p.amax().max(1.0);
        let tol = self.options.bvp_tol * scale;
        let mut s = DVector::from_column_slice(&warm.scaled_start);
        let mut jac: Option<DMatrix<f64>> = warm.jacobian.clone().filter(|j| j.nrows() == n && j.ncols() == n);
        let eval = |s: &DVector<f64>, evals: &mut usize| -> Result<(DVector<f64>, S::State)> {
            *evals += 1;
            let (g, u) = self.scaled_map(s.as_slice(), t)?;
            Ok((DVector::from_vec(g) - &p, u))
        };
        let (mut f, mut state) = eval(&s, evaluations)?;
        let mut iterations = 0;
        let mut fresh = false;
        while f.norm() > tol {
            if iterations >= self.options.max_iterations {
                return Err(Error::NoConvergence {
                    what: "boundary-value solve".into(),
                    iterations,
                    residual: f.norm(),
                });
            }
            iterations += 1;
            if jac.is_none() {
                let mut j = DMatrix::zeros(n, n);
                for c in 0..n {
                    let h = self.options.fd_step * s[c].abs().max((-self.low_rates[c] * t).exp());
                    let mut sp = s.clone();
                    sp[c] += h;
                    let (fp, _) = eval(&sp, evaluations)?;
                    j.set_column(c, &((fp - &f) / h));
                }
                jac = Some(j);
                fresh = true;
            }
            let j = jac.as_ref().expect("jacobian present");
            let Some(step) = j.clone().lu().solve(&(-&f)) else {
                if fresh {
                    return Err(Error::NoConvergence {
                        what: "boundary-value Jacobian is singular".into(),
                        iterations,
                        residual: f.norm(),
                    });
                }
                jac = None;
                continue;
            };
            let mut lambda = 1.0;
            let mut accepted = None;
            while lambda >= 1.0 / 64.0 {
                let trial = &s + &step * lambda;
                let (ft, ut) = eval(&trial, evaluations)?;
                if ft.norm() < (1.0 - 1e-4 * lambda) * f.norm() {
                    accepted = Some((trial, ft, ut));
                    break;
                }
                lambda *= 0.5;
            }
            match accepted {
                Some((trial, ft, ut)) => {
                    let ds = &trial - &s;
                    let df = &ft - &f;
                    let denom = ds.dot(&ds);
                    if denom > 0.0 {
                        let jm = jac.as_mut().expect("jacobian present");
                        let corr = (&df - &*jm * &ds) / denom;
                        *jm += corr * ds.transpose();
                    }
                    s = trial;
                    f = ft;
                    state = ut;
                    fresh = false;
                }
                None if !fresh => jac = None,
                None => {
                    return Err(Error::NoConvergence {
                        what: "boundary-value line search".into(),
                        iterations,
                        residual: f.norm(),
                    })
                }
            }
        }
        Ok(BvpSolution {
            state,
            warm: BvpWarm {
                scaled_start: s.as_slice().to_vec(),
                jacobian: jac,
                horizon: t,
            },
            residual: f.norm(),
            iterations,
            evaluations: *evaluations,
        })
    }

    /// `Phi(p) = Q_N u(0)`, doubling `T` until successive values agree within `tol`.
    pub fn phi(&self, p: &[T], warm: Option<&BvpWarm>) -> Result<PhiValue<S::State>> {
        let mut t = self.options.t_initial;
        let mut prev = self.solve_bvp(p, t, warm)?;
        let mut convergence = Vec::new();
        loop {
            let t2 = 2.0 * t;
            if t2 > self.options.t_max || t2 * self.max_rate() > MAX_GROWTH {
                return Err(Error::NoConvergence {
                    what: "Phi under T doubling".into(),
                    iterations: convergence.len(),
                    residual: convergence.last().map(|c: &(f64, f64)| c.1).unwrap_or(f64::NAN),
                });
            }
            let next = self.solve_bvp(p, t2, Some(&prev.warm))?;
            let mut d = self.high_part(&next.state);
            self.system.axpy(&mut d, -T::one(), &self.high_part(&prev.state));
            let diff = self.system.norm(&d).to_f64_lossy();
            convergence.push((t2, diff));
            prev = next;
            t = t2;
            if diff <= self.options.tol {
                break;
            }
        }
        Ok(PhiValue {
            q: self.high_part(&prev.state),
            t_used: t,
            convergence,
            bvp: prev,
        })
    }

    /// `Phi(p)` at a fixed `T` (no doubling), for repeated evaluation near a known point.
    pub fn phi_at(&self, p: &[T], t: f64, warm: Option<&BvpWarm>) -> Result<(S::State, BvpWarm)> {
        let sol = self.solve_bvp(p, t, warm)?;
        Ok((self.high_part(&sol.state), sol.warm))
    }

    /// `p + Phi(p)`.
    pub fn lift(&self, p: &[T], phi: &S::State) -> S::State {
        let mut x = self.from_low(p);
        self.system.axpy(&mut x, T::one(), phi);
        x
    }
}

/// Sampled graph over a set of base points.
#[derive(Clone, Debug)]
pub struct ManifoldChart<S> {
    pub spec: BandProjectorSpec,
    pub base_points: Vec<Vec<f64>>,
    pub values: Vec<S>,
    pub t_used: Vec<f64>,
    pub convergence: Vec<Vec<(f64, f64)>>,
    /// Largest `||Phi(p1) - Phi(p2)|| / ||p1 - p2||` over sampled pairs.
    pub lipschitz: f64,
}

/// Serializable view of a chart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartPointRecord {
    pub base_point: Vec<f64>,
    pub phi_norm: f64,
    pub t_used: f64,
    pub convergence: Vec<(f64, f64)>,
}

impl<S> ManifoldChart<S> {
    pub fn records<T: Real, M: DiagonalSystem<T, State = S>>(&self, system: &M) -> Vec<ChartPointRecord> {
        self.base_points
            .iter()
            .zip(&self.values)
            .zip(&self.t_used)
            .zip(&self.convergence)
            .map(|(((p, v), t), c)| ChartPointRecord {
                base_point: p.clone(),
                phi_norm: system.norm(v).to_f64_lossy(),
                t_used: *t,
                convergence: c.clone(),
            })
            .collect()
    }
}

/// `count^axes.len()` points on `[-extent, extent]` along the listed coordinates.
pub fn base_grid(dim: usize, axes: &[usize], extent: f64, count: usize) -> Vec<Vec<f64>> {
    let ticks: Vec<f64> = (0..count)
        .map(|i| if count == 1 { 0.0 } else { -extent + 2.0 * extent * i as f64 / (count - 1) as f64 })
        .collect();
    let mut out = vec![vec![0.0; dim]];
    for &a in axes {
        out = out
            .into_iter()
            .flat_map(|p| {
                ticks.iter().map(move |&t| {
                    let mut q = p.clone();
                    q[a] = t;
                    q
                })
            })
            .collect();
    }
    out
}

pub fn build_chart<T: Real, S: ManifoldSystem<T>>(
    manifold: &Manifold<'_, T, S>,
    base_points: &[Vec<f64>],
) -> Result<ManifoldChart<S::State>> {
    let values: Vec<PhiValue<S::State>> = base_points
        .par_iter()
        .map(|p| {
            let pt: Vec<T> = p.iter().map(|&x| T::lit(x)).collect();
            manifold.phi(&pt, None)
        })
        .collect::<Result<_>>()?;
    let mut lipschitz = 0.0f64;
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            let dp = base_points[i]
                .iter()
                .zip(&base_points[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            if dp == 0.0 {
                continue;
            }
            let mut d = values[i].q.clone();
            manifold.system.axpy(&mut d, -T::one(), &values[j].q);
            lipschitz = lipschitz.max(manifold.system.norm(&d).to_f64_lossy() / dp);
        }
    }
    Ok(ManifoldChart {
        spec: manifold.spec,
        base_points: base_points.to_vec(),
        t_used: values.iter().map(|v| v.t_used).collect(),
        convergence: values.iter().map(|v| v.convergence.clone()).collect(),
        values: values.into_iter().map(|v| v.q).collect(),
        lipschitz,
    })
}

/// True when every doubling step at least halves the previous change, ignoring changes
/// already below `floor`.
pub fn doubling_is_geometric(convergence: &[(f64, f64)], floor: f64) -> bool {
    convergence
        .windows(2)
        .all(|w| w[0].1 <= floor || w[1].1 <= 0.5 * w[0].1)
}

impl<S> ManifoldChart<S> {
    pub fn doubling_is_geometric(&self, floor: f64) -> bool {
        self.convergence.iter().all(|c| doubling_is_geometric(c, floor))
    }
}

/// Full trajectory from a point on the graph against the inertial form from its `P_N`
/// coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub times: Vec<f64>,
    /// `||P_N u(t) - p(t)||`.
    pub low_gap: Vec<f64>,
    /// `||Q_N u(t) - Phi(p(t))||`.
    pub graph_gap: Vec<f64>,
    /// Accumulated step-doubling error estimate of the full trajectory.
    pub lte_sum: f64,
    /// Ten times `lte_sum + tol + bvp_tol`.
    pub budget: f64,
    pub t_used: f64,
}

impl InvarianceReport {
    pub fn max_low_gap(&self) -> f64 {
        self.low_gap.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_graph_gap(&self) -> f64 {
        self.graph_gap.iter().copied().fold(0.0, f64::max)
    }

    pub fn passes(&self) -> bool {
        self.max_low_gap() <= self.budget && self.max_graph_gap() <= self.budget
    }
}

/// Integrates `u0 = p0 + Phi(p0)` and the inertial form from `p0` over `horizon` with the
/// same ETDRK2 step, comparing at every step.
pub fn invariance_check<T: Real, S: ManifoldSystem<T>>(
    manifold: &Manifold<'_, T, S>,
    p0: &[T],
    horizon: f64,
    dt: f64,
) -> Result<InvarianceReport> {
    let system = manifold.system;
    let steps = (horizon / dt).round().max(1.0) as usize;
    let h = T::lit(horizon / steps as f64);
    let phi = manifold.phi(p0, None)?;
    let form = InertialForm::new(manifold, phi.t_used).with_warm(phi.bvp.warm.clone());
    let integ = Etdrk2::new(system, h)?;
    let form_integ = Etdrk2::new(&form, h)?;
    let mut u = manifold.lift(p0, &phi.q);
    let mut p = p0.to_vec();
    let mut report = InvarianceReport {
        times: Vec::with_capacity(steps),
        low_gap: Vec::with_capacity(steps),
        graph_gap: Vec::with_capacity(steps),
        lte_sum: 0.0,
        budget: 0.0,
        t_used: phi.t_used,
    };
    let dist = |a: &[T], b: &[T]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (*x - *y).to_f64_lossy().powi(2))
            .sum::<f64>()
            .sqrt()
    };
    for k in 1..=steps {
        report.lte_sum += crate::evolution::local_error_estimate(system, &u, h)?.to_f64_lossy();
        u = integ.step(system, &u)?;
        p = form_integ.step(&form, &p)?;
        let mut dq = manifold.high_part(&u);
        system.axpy(&mut dq, -T::one(), &form.phi(&p)?);
        report.times.push(k as f64 * horizon / steps as f64);
        report.low_gap.push(dist(&manifold.low_coordinates(&u), &p));
        report.graph_gap.push(system.norm(&dq).to_f64_lossy());
    }
    report.budget = 10.0 * (report.lte_sum + manifold.options.tol + manifold.options.bvp_tol);
    Ok(report)
}

/// `dp/dt + nu A^theta p = P_N N(p + Phi(p))` on the `P_N` coordinates, with `Phi`
/// evaluated on demand at a fixed `T` and warm-started from the previous call.
pub struct InertialForm<'m, 'a, T: Real, S: ManifoldSystem<T>> {
    manifold: &'m Manifold<'a, T, S>,
    t: f64,
    rates: Vec<T>,
    warm: Mutex<Option<BvpWarm>>,
}

impl<'m, 'a, T: Real, S: ManifoldSystem<T>> InertialForm<'m, 'a, T, S> {
    /// `t` is the boundary-value horizon (for instance the `t_used` of a converged `Phi`).
    pub fn new(manifold: &'m Manifold<'a, T, S>, t: f64) -> Self {
        Self {
            manifold,
            t,
            rates: manifold.system.low_rates(manifold.split()),
            warm: Mutex::new(None),
        }
    }

    /// Seeds the first boundary-value solve.
    pub fn with_warm(self, warm: BvpWarm) -> Self {
        *self.warm.lock().expect("warm start poisoned") = Some(warm);
        self
    }

    pub fn phi(&self, p: &[T]) -> Result<S::State> {
        let warm = self.warm.lock().expect("warm start poisoned").clone();
        let (q, start) = self.manifold.phi_at(p, self.t, warm.as_ref())?;
        *self.warm.lock().expect("warm start poisoned") = Some(start);
        Ok(q)
    }
}

impl<T: Real, S: ManifoldSystem<T>> DiagonalSystem<T> for InertialForm<'_, '_, T, S> {
    type State = Vec<T>;

    fn rates(&self) -> Vec<T> {
        self.rates.clone()
    }

    fn scale(&self, x: &Vec<T>, factors: &[T]) -> Vec<T> {
        x.iter().zip(factors).map(|(a, b)| *a * *b).collect()
    }

    fn nonlinear(&self, p: &Vec<T>) -> Result<Vec<T>> {
        let q = self.phi(p)?;
        let u = self.manifold.lift(p, &q);
        let n = self.manifold.system.nonlinear(&u)?;
        Ok(self.manifold.low_coordinates(&n))
    }

    fn axpy(&self, y: &mut Vec<T>, a: T, x: &Vec<T>) {
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi = *yi + a * *xi;
        }
    }

    fn norm(&self, x: &Vec<T>) -> T {
        x.iter().map(|v| *v * *v).sum::<T>().sqrt()
    }

    fn sobolev_norm(&self, x: &Vec<T>, _s: T) -> T {
        self.norm(x)
    }

    fn is_finite(&self, x: &Vec<T>) -> bool {
        x.iter().all(|v| v.is_finite())
    }
}

/// One ETDRK2 step of the inertial form.
pub fn inertial_form_step<T: Real, S: ManifoldSystem<T>>(form: &InertialForm<'_, '_, T, S>, p: &[T], dt: f64) -> Result<Vec<T>> {
    crate::evolution::step(form, &p.to_vec(), T::lit(dt))
}

/// Least-squares fit `||S(t) u0 - S(t) v0|| ~ c e^{-omega t}` for the manifold point
/// `v0 = P_N u0 + Phi(P_N u0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingFit {
    pub c: f64,
    pub omega: f64,
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
    /// Samples used by the fit (after 10% of the horizon and above the noise floor).
    pub fitted_samples: usize,
    /// Largest upward jump of the log-distance inside the fit window.
    pub tail_nonmonotone: f64,
}

pub fn measure_tracking<T: Real, S: ManifoldSystem<T>>(
    manifold: &Manifold<'_, T, S>,
    u0: &S::State,
    horizon: f64,
    dt: f64,
) -> Result<TrackingFit> {
    let p = manifold.low_coordinates(u0);
    let phi = manifold.phi(&p, None)?;
    let v0 = manifold.lift(&p, &phi.q);
    tracking_between(manifold.system, u0, &v0, horizon, dt)
}

/// Distance fit between two trajectories of `system`.
pub fn tracking_between<T: Real, S: DiagonalSystem<T>>(
    system: &S,
    u0: &S::State,
    v0: &S::State,
    horizon: f64,
    dt: f64,
) -> Result<TrackingFit> {
    let steps = (horizon / dt).round().max(1.0) as usize;
    let integ = Etdrk2::new(system, T::lit(horizon / steps as f64))?;
    let (mut a, mut b) = (u0.clone(), v0.clone());
    let mut times = Vec::with_capacity(steps + 1);
    let mut distances = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let mut d = a.clone();
        system.axpy(&mut d, -T::one(), &b);
        times.push(k as f64 * horizon / steps as f64);
        distances.push(system.norm(&d).to_f64_lossy());
        if k < steps {
            a = integ.step(system, &a)?;
            b = integ.step(system, &b)?;
        }
    }
    let scale = system.norm(u0).to_f64_lossy().max(system.norm(v0).to_f64_lossy()).max(1e-300);
    let floor = 1e-11 * scale;
    let start = times.iter().position(|&t| t >= 0.1 * horizon).unwrap_or(0);
    let pts: Vec<(f64, f64)> = times[start..]
        .iter()
        .zip(&distances[start..])
        .filter(|(_, &d)| d > floor)
        .map(|(&t, &d)| (t, d.ln()))
        .collect();
    if pts.len() < 3 {
        return Ok(TrackingFit {
            c: distances.iter().cloned().fold(0.0, f64::max),
            omega: 0.0,
            times,
            distances,
            fitted_samples: pts.len(),
            tail_nonmonotone: 0.0,
        });
    }
    let m = pts.len() as f64;
    let (st, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mt, my) = (st / m, sy / m);
    let (num, den) = pts
        .iter()
        .fold((0.0, 0.0), |a, p| (a.0 + (p.0 - mt) * (p.1 - my), a.1 + (p.0 - mt).powi(2)));
    let slope = num / den;
    let tail_nonmonotone = pts.windows(2).map(|w| w[1].1 - w[0].1).fold(0.0, f64::max);
    Ok(TrackingFit {
        c: (my - slope * mt).exp(),
        omega: -slope,
        times,
        distances,
        fitted_samples: pts.len(),
        tail_nonmonotone,
    })
}
