//! Restarted GMRES on spectral fields.

use crate::scalar::Real;
use crate::spectral_field::SpectralField;

#[derive(Clone, Copy, Debug)]
pub(crate) struct GmresOptions {
    pub restart: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
}

pub(crate) struct GmresOutcome<T> {
    pub x: SpectralField<T>,
    pub iterations: usize,
}

/// Solves `op(x) = b` starting from zero.
pub(crate) fn gmres<T: Real, E>(
    mut op: impl FnMut(&SpectralField<T>) -> Result<SpectralField<T>, E>,
    b: &SpectralField<T>,
    opts: GmresOptions,
) -> Result<GmresOutcome<T>, E> {
    let bnorm = b.norm().to_f64_lossy();
    let mut x = SpectralField::zeros(*b.grid());
    if bnorm == 0.0 {
        return Ok(GmresOutcome { x, iterations: 0 });
    }
    let mut total = 0;
    let mut r = b.clone();
    while total < opts.max_iters {
        let beta = r.norm().to_f64_lossy();
        if beta / bnorm <= opts.rel_tol {
            break;
        }
        let m = opts.restart.min(opts.max_iters - total);
        let mut basis: Vec<SpectralField<T>> = vec![r.scaled(T::lit(1.0 / beta))];
        let mut h = vec![vec![0.0f64; m]; m + 1];
        let mut cs = vec![0.0f64; m];
        let mut sn = vec![0.0f64; m];
        let mut g = vec![0.0f64; m + 1];
        g[0] = beta;
        let mut used = 0;
        for k in 0..m {
            let mut w = op(&basis[k])?;
            for (i, v) in basis.iter().enumerate() {
                let hik = w.inner(v).to_f64_lossy();
                h[i][k] = hik;
                w.axpy(T::lit(-hik), v);
            }
            let hn = w.norm().to_f64_lossy();
            h[k + 1][k] = hn;
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let den = h[k][k].hypot(h[k + 1][k]);
            if den == 0.0 {
                used = k;
                break;
            }
            cs[k] = h[k][k] / den;
            sn[k] = h[k + 1][k] / den;
            h[k][k] = den;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            used = k + 1;
            total += 1;
            if g[k + 1].abs() / bnorm <= opts.rel_tol || hn == 0.0 {
                break;
            }
            basis.push(w.scaled(T::lit(1.0 / hn)));
        }
        let mut y = vec![0.0f64; used];
        for i in (0..used).rev() {
            let mut s = g[i];
            for j in i + 1..used {
                s -= h[i][j] * y[j];
            }
            y[i] = s / h[i][i];
        }
        for (i, yi) in y.iter().enumerate() {
            x.axpy(T::lit(*yi), &basis[i]);
        }
        let ax = op(&x)?;
        r = b - &ax;
        if used == 0 {
            break;
        }
    }
    Ok(GmresOutcome {
        x,
        iterations: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::apply_stokes_power;
    use crate::spectral_field::{random_field, GridSpec};

    #[test]
    fn solves_diagonal_system() {
        let grid = GridSpec::new(2, 9).unwrap();
        let b: SpectralField<f64> = random_field(&grid, 1, 1.0).unwrap();
        let out = gmres(
            |x| Ok::<_, ()>(&apply_stokes_power(x, 1.0, 0.1) + x),
            &b,
            GmresOptions {
                restart: 40,
                max_iters: 400,
                rel_tol: 1e-12,
            },
        )
        .unwrap();
        let check = &apply_stokes_power(&out.x, 1.0, 0.1) + &out.x;
        assert!(check.max_abs_diff(&b) < 1e-10);
    }
}
