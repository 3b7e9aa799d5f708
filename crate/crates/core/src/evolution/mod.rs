//! Exponential time integration of the original, difference, prepared and abstract
//! equations, and empirical absorbing-ball radii.

mod integrator;
mod models;

pub use integrator::{
    evolve, evolve_with, phi_functions, step, DiagonalSystem, Etdrk2, RecordSpec,
    TrajectoryRecord, TrajectorySample,
};
pub use models::{stokes_spectrum, AbstractModel, AbstractNonlinearity, FieldModel, FieldModelKind};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spectral_field::random_field;

/// Step-doubling estimate of the local truncation error of one step of size `dt`:
/// `||S_dt x - S_{dt/2} S_{dt/2} x|| * 4/3`.
pub fn local_error_estimate<T: Real, S: DiagonalSystem<T> + ?Sized>(
    system: &S,
    x: &S::State,
    dt: T,
) -> Result<T> {
    let one = step(system, x, dt)?;
    let half = Etdrk2::new(system, dt * T::lit(0.5))?;
    let two = half.step(system, &half.step(system, x)?)?;
    let mut diff = one;
    system.axpy(&mut diff, -T::one(), &two);
    Ok(system.norm(&diff) * T::lit(4.0 / 3.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadiusOptions {
    pub ensemble_size: usize,
    /// Sobolev index of the measured norm.
    pub s: f64,
    pub burn_in: f64,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    /// Initial states are random fields with this decay exponent, scaled to `init_norm` in `H`.
    pub init_decay: f64,
    pub init_norm: f64,
    pub safety_factor: f64,
}

impl Default for RadiusOptions {
    fn default() -> Self {
        Self {
            ensemble_size: 4,
            s: 4.5,
            burn_in: 5.0,
            horizon: 10.0,
            dt: 1e-2,
            seed: 0,
            init_decay: 2.0,
            init_norm: 1.0,
            safety_factor: 1.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusEstimate {
    /// Supremum times the safety factor: the operative truncation radius.
    pub radius: f64,
    pub sup_norm: f64,
    pub per_member: Vec<f64>,
    pub options: RadiusOptions,
}

/// Supremum of `||w(t)||_{H^s}` over an ensemble of random initial states and
/// `t in [burn_in, horizon]`, times the safety factor.
pub fn estimate_absorbing_radius<T: Real>(model: &FieldModel<T>, opts: &RadiusOptions) -> Result<RadiusEstimate> {
    if opts.ensemble_size == 0 {
        return Err(Error::invalid("ensemble_size", "must be positive"));
    }
    if !(opts.burn_in >= 0.0 && opts.horizon >= opts.burn_in) {
        return Err(Error::invalid("horizon", "need 0 <= burn_in <= horizon"));
    }
    let spec = RecordSpec {
        every: 0,
        norms: vec![],
        ..RecordSpec::default()
    };
    let per_member = (0..opts.ensemble_size)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut u0 = random_field::<T>(&model.grid, opts.seed.wrapping_add(i as u64), opts.init_decay)?;
            let n = u0.norm();
            if n > T::zero() {
                u0.scale(T::lit(opts.init_norm) / n);
            }
            let mut sup = 0.0f64;
            let s = T::lit(opts.s);
            let burn = opts.burn_in;
            evolve_with(model, &u0, opts.horizon, opts.dt, &spec, |t, x| {
                if t >= burn - 1e-12 {
                    sup = sup.max(x.sobolev_norm(s).to_f64_lossy());
                }
            })
            .map_err(|e| Error::Ensemble {
                member: i,
                source: Box::new(e),
            })?;
            Ok(sup)
        })
        .collect::<Result<Vec<f64>>>()?;
    let sup_norm = per_member.iter().copied().fold(0.0, f64::max);
    Ok(RadiusEstimate {
        radius: sup_norm * opts.safety_factor,
        sup_norm,
        per_member,
        options: opts.clone(),
    })
}
