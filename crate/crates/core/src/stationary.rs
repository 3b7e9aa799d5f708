//! Stationary solutions `nu A^theta v + B(v, v) = f` and the closed-form absorbing-ball
//! radii.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cutoff::StationaryContext;
use crate::error::{Error, Result};
use crate::krylov::{gmres, GmresOptions};
use crate::operators::{apply_stokes_power, bilinear_form, bilinear_sum};
use crate::scalar::Real;
use crate::spectral_field::SpectralField;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StationaryOptions {
    /// Target `||nu A^theta v + B(v, v) - f||_H`.
    pub tol: f64,
    pub damping: f64,
    pub max_picard: usize,
    pub max_newton: usize,
    /// Picard is abandoned when the residual fails to halve over this many iterations.
    pub stall_window: usize,
}

impl Default for StationaryOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            damping: 0.5,
            max_picard: 400,
            max_newton: 40,
            stall_window: 12,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverPhase {
    Picard,
    Newton,
}

/// JSON convergence report of [`solve_stationary`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationaryReport {
    pub converged_in: SolverPhase,
    pub picard_iterations: usize,
    pub newton_iterations: usize,
    pub krylov_iterations: usize,
    /// Forcing-amplitude continuation steps taken when Newton from the Picard iterate fails.
    pub continuation_steps: usize,
    pub residual_history: Vec<f64>,
    pub final_residual: f64,
    pub initial_guess: String,
    pub theta: f64,
    pub nu: f64,
}

fn residual<T: Real>(v: &SpectralField<T>, f: &SpectralField<T>, theta: T, nu: T) -> Result<SpectralField<T>> {
    let mut r = apply_stokes_power(v, theta, nu);
    r = &r + &bilinear_form(v, v)?;
    Ok(&r - f)
}

/// Solves the stationary problem from the zero initial guess: damped Picard first, then
/// Newton-Krylov if Picard stalls, then continuation in the forcing amplitude if Newton
/// stalls too.
pub fn solve_stationary<T: Real>(
    f: &SpectralField<T>,
    theta: T,
    nu: T,
    opts: &StationaryOptions,
) -> Result<(StationaryContext<T>, StationaryReport)> {
    if !(nu > T::zero()) {
        return Err(Error::invalid("nu", "must be positive"));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::invalid("tol", "must be positive"));
    }
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(Error::invalid("damping", "must lie in (0, 1]"));
    }
    let inv = |x: &SpectralField<T>| apply_stokes_power(x, -theta, T::one() / nu);
    let omega = T::lit(opts.damping);
    let mut report = StationaryReport {
        converged_in: SolverPhase::Picard,
        picard_iterations: 0,
        newton_iterations: 0,
        krylov_iterations: 0,
        continuation_steps: 0,
        residual_history: Vec::new(),
        final_residual: f64::NAN,
        initial_guess: "zero".into(),
        theta: theta.to_f64_lossy(),
        nu: nu.to_f64_lossy(),
    };
    let mut v = SpectralField::zeros(*f.grid());
    let mut best = (f64::INFINITY, v.clone());
    for it in 0..=opts.max_picard {
        let b = bilinear_form(&v, &v)?;
        let mut r = apply_stokes_power(&v, theta, nu);
        r = &(&r + &b) - f;
        let rn = r.norm().to_f64_lossy();
        report.residual_history.push(rn);
        if !rn.is_finite() {
            break;
        }
        if rn < best.0 {
            best = (rn, v.clone());
        }
        if rn <= opts.tol {
            report.picard_iterations = it;
            report.final_residual = rn;
            return Ok((StationaryContext { v, theta, nu }, report));
        }
        report.picard_iterations = it;
        let h = &report.residual_history;
        if h.len() > opts.stall_window && rn > 0.5 * h[h.len() - 1 - opts.stall_window] {
            break;
        }
        // v <- (1 - omega) v + omega (nu A^theta)^{-1} (f - B(v, v))
        let target = inv(&(f - &b));
        v.scale(T::one() - omega);
        v.axpy(omega, &target);
    }

    report.converged_in = SolverPhase::Newton;
    let (v, rn) = newton(best.1, f, theta, nu, opts, &mut report)?;
    if rn <= opts.tol {
        report.final_residual = rn;
        return Ok((StationaryContext { v, theta, nu }, report));
    }

    // Natural-parameter continuation in the forcing amplitude.
    let mut v = SpectralField::zeros(*f.grid());
    let mut s = 0.0f64;
    let mut ds = 0.25f64;
    let mut rn = f64::INFINITY;
    while s < 1.0 && ds >= 1.0 / 1024.0 {
        let next = (s + ds).min(1.0);
        let fs = f.scaled(T::lit(next));
        let (trial, tn) = newton(v.clone(), &fs, theta, nu, opts, &mut report)?;
        if tn <= opts.tol {
            v = trial;
            s = next;
            rn = tn;
            report.continuation_steps += 1;
            ds = (ds * 2.0).min(0.5);
        } else {
            ds *= 0.5;
        }
    }
    if s >= 1.0 {
        report.final_residual = rn;
        return Ok((StationaryContext { v, theta, nu }, report));
    }
    Err(Error::NoConvergence {
        what: "stationary solve (large forcing may admit several stationary points)".into(),
        iterations: report.picard_iterations + report.newton_iterations,
        residual: rn,
    })
}

/// Newton-Krylov with backtracking on `||r||_H`, preconditioned by `(nu A^theta)^{-1}`.
/// Returns the last iterate and its residual.
fn newton<T: Real>(
    mut v: SpectralField<T>,
    f: &SpectralField<T>,
    theta: T,
    nu: T,
    opts: &StationaryOptions,
    report: &mut StationaryReport,
) -> Result<(SpectralField<T>, f64)> {
    let inv = |x: &SpectralField<T>| apply_stokes_power(x, -theta, T::one() / nu);
    let mut r = residual(&v, f, theta, nu)?;
    let mut rn = r.norm().to_f64_lossy();
    for _ in 0..opts.max_newton {
        if rn <= opts.tol {
            break;
        }
        report.newton_iterations += 1;
        let rhs = inv(&r).scaled(-T::one());
        let sol = gmres(
            |d: &SpectralField<T>| -> Result<SpectralField<T>> {
                let q = bilinear_sum(&[(d, &v), (&v, d)])?;
                Ok(d + &inv(&q))
            },
            &rhs,
            GmresOptions {
                restart: 60,
                max_iters: 600,
                rel_tol: 1e-12,
            },
        )?;
        report.krylov_iterations += sol.iterations;
        let mut step = T::one();
        let mut accepted = false;
        for _ in 0..30 {
            let mut trial = v.clone();
            trial.axpy(step, &sol.x);
            let tr = residual(&trial, f, theta, nu)?;
            let tn = tr.norm().to_f64_lossy();
            if tn.is_finite() && tn < rn {
                v = trial;
                r = tr;
                rn = tn;
                accepted = true;
                break;
            }
            step = step * T::lit(0.5);
        }
        report.residual_history.push(rn);
        if !accepted {
            break;
        }
    }
    Ok((v, rn))
}

/// Generic constants of the radius formulas; all default to 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadiiConstants {
    pub c: f64,
    pub k: f64,
    pub big_k: f64,
    pub c_nu: f64,
    pub big_c: f64,
    pub c_tilde: f64,
    pub big_c_tilde: f64,
}

impl Default for RadiiConstants {
    fn default() -> Self {
        Self {
            c: 1.0,
            k: 1.0,
            big_k: 1.0,
            c_nu: 1.0,
            big_c: 1.0,
            c_tilde: 1.0,
            big_c_tilde: 1.0,
        }
    }
}

/// Sobolev norms of the forcing, plus the bounds on the original flow that the formulas
/// take as given (`rho_1`, `rho_2`, `bar rho_0` in 2D).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForcingNorms {
    pub h: Option<f64>,
    pub h1: Option<f64>,
    pub h_minus_5_4: Option<f64>,
    pub h_minus_1: Option<f64>,
    pub h_minus_1_2: Option<f64>,
    pub h_minus_1_4: Option<f64>,
    pub rho_1: Option<f64>,
    pub rho_2: Option<f64>,
    pub rho_bar_0: Option<f64>,
}

impl ForcingNorms {
    /// All norms of `f`; the flow bounds are left to their defaults.
    pub fn of<T: Real>(f: &SpectralField<T>) -> Self {
        let n = |s: f64| Some(f.sobolev_norm(T::lit(s)).to_f64_lossy());
        Self {
            h: n(0.0),
            h1: n(1.0),
            h_minus_5_4: n(-1.25),
            h_minus_1: n(-1.0),
            h_minus_1_2: n(-0.5),
            h_minus_1_4: n(-0.25),
            ..Self::default()
        }
    }
}

fn need(v: Option<f64>, name: &str) -> Result<f64> {
    match v {
        Some(x) if x >= 0.0 && x.is_finite() => Ok(x),
        Some(x) => Err(Error::invalid(name, format!("{x} is not a nonnegative norm"))),
        None => Err(Error::invalid(name, "missing forcing norm")),
    }
}

/// Evaluated radius formulas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiiEstimates {
    pub dim: usize,
    pub nu: f64,
    pub constants: RadiiConstants,
    pub values: BTreeMap<String, f64>,
}

impl RadiiEstimates {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    /// `varrho_2` (d = 2) or `varrho_3` (d = 3).
    pub fn cutoff_radius(&self) -> f64 {
        let key = if self.dim == 2 { "varrho_2" } else { "varrho_3" };
        self.values[key]
    }
}

/// Evaluates the absorbing-ball radius chain for `d = 2` or `d = 3`.
///
/// In 2D, `rho_1`, `rho_2` and `bar rho_0` default to `c ||f||_H / nu`, `c ||f||_H / nu` and
/// `||f||_H + nu rho_2 + c rho_1 rho_2` when not supplied.
pub fn analytic_radii(dim: usize, norms: &ForcingNorms, nu: f64, k: &RadiiConstants) -> Result<RadiiEstimates> {
    if !(nu > 0.0) {
        return Err(Error::invalid("nu", "must be positive"));
    }
    let mut out = BTreeMap::new();
    match dim {
        2 => {
            let fh = need(norms.h, "norm_h")?;
            let fh1 = need(norms.h1, "norm_h1")?;
            let rho_v = k.c * (fh * fh + fh1);
            let rho1 = norms.rho_1.unwrap_or(k.c * fh / nu);
            let rho2 = norms.rho_2.unwrap_or(k.c * fh / nu);
            let rb0 = norms.rho_bar_0.unwrap_or(fh + nu * rho2 + k.c * rho1 * rho2);
            let e = (rho1.powi(4) + rho2 * rho2).exp();
            let a = 1.0 + rho1.powi(4) + rho2 * rho2;
            let rb1_sq = k.k * e * rho2 * rho2 * rb0 * rb0;
            let rb1 = rb1_sq.sqrt();
            let rho3 = k.k * (rb1 + rho2 * rho2 + fh1);
            let rb2_sq = k.k * e * (a * rb1_sq + rb1_sq * rho2 * rho3);
            let rb2 = rb2_sq.sqrt();
            let rb52_sq = k.k * e * (a * rb2_sq + rb1_sq * rho2 * rho3 + (rb1 + rb2) * rb2 * rho3 * rho3);
            let rb52 = rb52_sq.sqrt();
            let varrho = k.k * ((rho_v + rho3).powi(2) + rb52);
            for (name, val) in [
                ("rho_v", rho_v),
                ("rho_1", rho1),
                ("rho_2", rho2),
                ("rho_3", rho3),
                ("rho_bar_0", rb0),
                ("rho_bar_1", rb1),
                ("rho_bar_2", rb2),
                ("rho_bar_5_2", rb52),
                ("varrho_2", varrho),
            ] {
                out.insert(name.to_string(), val);
            }
        }
        3 => {
            let fh = need(norms.h, "norm_h")?;
            let f54 = need(norms.h_minus_5_4, "norm_h_minus_5_4")?;
            let f1 = need(norms.h_minus_1, "norm_h_minus_1")?;
            let f12 = need(norms.h_minus_1_2, "norm_h_minus_1_2")?;
            let f14 = need(norms.h_minus_1_4, "norm_h_minus_1_4")?;
            let (c, ct) = (k.big_c, k.big_c_tilde);
            let f54s = f54 * f54;
            let r_v = k.c_tilde * (f54.powi(4) + f54.powi(10) + f1 * f1) * f54s + 2.0 / (nu * nu) * fh * fh;
            let r0_sq = 2.0 / nu * f54s;
            let r12_sq = c * (r0_sq + f54s).exp() * (r0_sq + f54s);
            let r1_sq = c * (r12_sq * (r0_sq + f54s)).exp() * (r0_sq + f54s + f14 * f14);
            let r1 = r1_sq.sqrt();
            let r54_sq = c * (r0_sq * r1.powi(8)).exp() * (r0_sq + f54s + fh * fh);
            let rb0_sq = (c * r1_sq).exp() * (c * r54_sq * (1.0 + r1_sq) * (1.0 + r0_sq * r1.powi(8) + fh * fh));
            let r32 = c * (rb0_sq + r1_sq + f1);
            let r2 = c * (rb0_sq + r1 * r32 + f12);
            let r52 = c * (rb0_sq + r1 * r2 + fh);
            let rb1_sq = ct * r2.powf(2.25).exp() * (1.0 + r1.powi(4)) * rb0_sq;
            let rb2_sq = ct * (r2 * r2).exp() * (1.0 + r2 * r2) * rb1_sq;
            let varrho = (k.big_k * (r_v * r_v + r52 * r52 + rb2_sq)).sqrt();
            for (name, val) in [
                ("r_v", r_v),
                ("r_0", r0_sq.sqrt()),
                ("r_1_2", r12_sq.sqrt()),
                ("r_1", r1),
                ("r_5_4", r54_sq.sqrt()),
                ("r_3_2", r32),
                ("r_2", r2),
                ("r_5_2", r52),
                ("r_bar_0", rb0_sq.sqrt()),
                ("r_bar_1", rb1_sq.sqrt()),
                ("r_bar_2", rb2_sq.sqrt()),
                ("varrho_3", varrho),
            ] {
                out.insert(name.to_string(), val);
            }
        }
        _ => return Err(Error::invalid("dimension", format!("{dim} is not 2 or 3"))),
    }
    Ok(RadiiEstimates {
        dim,
        nu,
        constants: *k,
        values: out,
    })
}
