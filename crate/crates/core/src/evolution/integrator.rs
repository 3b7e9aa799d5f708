use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// `dx/dt = -L x + N(x)` with `L` diagonal and nonnegative.
pub trait DiagonalSystem<T: Real>: Sync {
    type State: Clone + Send + Sync;

    /// Diagonal of `L`, one entry per slot of the state layout.
    fn rates(&self) -> Vec<T>;
    /// Slot-wise multiplication.
    fn scale(&self, x: &Self::State, factors: &[T]) -> Self::State;
    fn nonlinear(&self, x: &Self::State) -> Result<Self::State>;
    /// `y += a x`.
    fn axpy(&self, y: &mut Self::State, a: T, x: &Self::State);
    /// Norm of the phase space.
    fn norm(&self, x: &Self::State) -> T;
    /// Sobolev-type norm used in trajectory records.
    fn sobolev_norm(&self, x: &Self::State, s: T) -> T;
    fn is_finite(&self, x: &Self::State) -> bool;
}

/// `phi_1(z) = (e^z - 1) / z`, `phi_2(z) = (e^z - 1 - z) / z^2`.
pub fn phi_functions<T: Real>(z: T) -> (T, T) {
    if z.abs() < T::lit(1e-4) {
        let p1 = T::one() + z * (T::lit(0.5) + z * (T::lit(1.0 / 6.0) + z * T::lit(1.0 / 24.0)));
        let p2 = T::lit(0.5) + z * (T::lit(1.0 / 6.0) + z * (T::lit(1.0 / 24.0) + z * T::lit(1.0 / 120.0)));
        (p1, p2)
    } else {
        let em1 = z.exp_m1();
        (em1 / z, (em1 - z) / (z * z))
    }
}

/// Second-order exponential time differencing (Cox-Matthews ETDRK2) with precomputed
/// slot tables for one step size.
#[derive(Clone, Debug)]
pub struct Etdrk2<T> {
    dt: T,
    decay: Vec<T>,
    phi1: Vec<T>,
    phi2: Vec<T>,
}

impl<T: Real> Etdrk2<T> {
    pub fn new<S: DiagonalSystem<T> + ?Sized>(system: &S, dt: T) -> Result<Self> {
        if !(dt > T::zero()) || !dt.is_finite() {
            return Err(Error::invalid("dt", "must be positive"));
        }
        let rates = system.rates();
        let mut decay = Vec::with_capacity(rates.len());
        let mut phi1 = Vec::with_capacity(rates.len());
        let mut phi2 = Vec::with_capacity(rates.len());
        for r in rates {
            let z = -r * dt;
            let (p1, p2) = phi_functions(z);
            decay.push(z.exp());
            phi1.push(dt * p1);
            phi2.push(dt * p2);
        }
        Ok(Self {
            dt,
            decay,
            phi1,
            phi2,
        })
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    /// One step; the linear part is applied exactly.
    pub fn step<S: DiagonalSystem<T> + ?Sized>(&self, system: &S, x: &S::State) -> Result<S::State> {
        let n0 = system.nonlinear(x)?;
        let mut a = system.scale(x, &self.decay);
        system.axpy(&mut a, T::one(), &system.scale(&n0, &self.phi1));
        let mut diff = system.nonlinear(&a)?;
        system.axpy(&mut diff, -T::one(), &n0);
        system.axpy(&mut a, T::one(), &system.scale(&diff, &self.phi2));
        Ok(a)
    }
}

/// One step of size `dt` from `x`.
pub fn step<T: Real, S: DiagonalSystem<T> + ?Sized>(system: &S, x: &S::State, dt: T) -> Result<S::State> {
    Etdrk2::new(system, dt)?.step(system, x)
}

/// What to record along a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecordSpec {
    /// Record every this many steps (0 records only the endpoints).
    pub every: usize,
    /// Sobolev indices `s` of the recorded norms.
    pub norms: Vec<f64>,
    /// States larger than this in norm count as blow-up.
    pub blowup_norm: f64,
}

impl Default for RecordSpec {
    fn default() -> Self {
        Self {
            every: 1,
            norms: vec![0.0],
            blowup_norm: 1e12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub step: usize,
    /// `(s, ||x||_{H^s})` pairs.
    pub norms: Vec<(f64, f64)>,
    pub dt: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub samples: Vec<TrajectorySample>,
    pub integrator: String,
    pub steps: usize,
}

impl TrajectoryRecord {
    /// One JSON object per sample time.
    pub fn write_ndjson<W: Write>(&self, mut out: W) -> Result<()> {
        for s in &self.samples {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    /// Recorded values of the norm with index `s`.
    pub fn series(&self, s: f64) -> Vec<f64> {
        self.samples
            .iter()
            .filter_map(|x| x.norms.iter().find(|(k, _)| *k == s).map(|(_, v)| *v))
            .collect()
    }
}

fn sample<T: Real, S: DiagonalSystem<T> + ?Sized>(
    system: &S,
    x: &S::State,
    t: f64,
    step: usize,
    dt: f64,
    spec: &RecordSpec,
) -> TrajectorySample {
    TrajectorySample {
        t,
        step,
        norms: spec
            .norms
            .iter()
            .map(|&s| (s, system.sobolev_norm(x, T::lit(s)).to_f64_lossy()))
            .collect(),
        dt,
    }
}

/// Integrates over `[0, t_end]` with fixed `dt`; a shorter final step closes any remainder.
pub fn evolve<T: Real, S: DiagonalSystem<T> + ?Sized>(
    system: &S,
    x0: &S::State,
    t_end: f64,
    dt: f64,
    spec: &RecordSpec,
) -> Result<(S::State, TrajectoryRecord)> {
    evolve_with(system, x0, t_end, dt, spec, |_, _| {})
}

/// [`evolve`] with a callback `(t, state)` after every step (and at `t = 0`).
pub fn evolve_with<T: Real, S: DiagonalSystem<T> + ?Sized>(
    system: &S,
    x0: &S::State,
    t_end: f64,
    dt: f64,
    spec: &RecordSpec,
    mut observe: impl FnMut(f64, &S::State),
) -> Result<(S::State, TrajectoryRecord)> {
    if !(t_end >= 0.0) {
        return Err(Error::invalid("t_end", "must be nonnegative"));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", "must be positive"));
    }
    let mut record = TrajectoryRecord {
        samples: vec![sample(system, x0, 0.0, 0, dt, spec)],
        integrator: "etdrk2".into(),
        steps: 0,
    };
    observe(0.0, x0);
    let full = (t_end / dt + 1e-9).floor() as usize;
    let rest = t_end - full as f64 * dt;
    let main = Etdrk2::new(system, T::lit(dt))?;
    let tail = if rest > 1e-12 * t_end.max(1.0) {
        Some(Etdrk2::new(system, T::lit(rest))?)
    } else {
        None
    };
    let total = full + tail.is_some() as usize;
    let mut x = x0.clone();
    let mut t = 0.0;
    for k in 0..total {
        let (integ, h) = if k < full {
            (&main, dt)
        } else {
            (tail.as_ref().unwrap(), rest)
        };
        let next = integ.step(system, &x)?;
        let n = system.norm(&next).to_f64_lossy();
        let t_next = if k + 1 == total { t_end } else { t + h };
        if !system.is_finite(&next) || !(n <= spec.blowup_norm) {
            return Err(Error::BlowUp {
                time: t_next,
                last_valid_time: t,
            });
        }
        x = next;
        t = t_next;
        record.steps += 1;
        observe(t, &x);
        let last = k + 1 == total;
        if last || (spec.every > 0 && (k + 1) % spec.every == 0) {
            record.samples.push(sample(system, &x, t, k + 1, h, spec));
        }
    }
    Ok((x, record))
}
