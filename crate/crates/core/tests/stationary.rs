use imlab_core::operators::{apply_stokes_power, bilinear_form};
use imlab_core::spectral_field::{leray_project, random_field, GridSpec, RawSpectrum, WaveVector};
use imlab_core::stationary::{solve_stationary, SolverPhase, StationaryOptions};
use imlab_core::Field;
use num_complex::Complex;

#[test]
fn zero_forcing_gives_zero() {
    let grid = GridSpec::new(2, 12).unwrap();
    let (ctx, report) = solve_stationary(&Field::zeros(grid), 1.0, 1.0, &StationaryOptions::default()).unwrap();
    assert!(ctx.v.is_zero());
    assert_eq!(report.picard_iterations, 0);
}

#[test]
fn manufactured_shear() {
    for (d, theta) in [(2usize, 1.0), (3, 1.25)] {
        let grid = GridSpec::new(d, 9).unwrap();
        let mut raw = RawSpectrum::zeros(grid);
        let a = 0.7;
        let z = Complex::new(0.0, 0.0);
        // a sin(2 x_2) e_1
        let mut up = vec![z; d];
        up[0] = Complex::new(0.0, -0.5 * a);
        let down: Vec<_> = up.iter().map(|c| c.conj()).collect();
        let mut j = [0i32; 3];
        j[1] = 2;
        raw.set(&WaveVector::new(&j[..d]), &up).unwrap();
        j[1] = -2;
        raw.set(&WaveVector::new(&j[..d]), &down).unwrap();
        let vstar = leray_project(raw);
        let nu = 0.8;
        let f = apply_stokes_power(&vstar, theta, nu);
        let (ctx, _) = solve_stationary(&f, theta, nu, &StationaryOptions::default()).unwrap();
        assert!(ctx.v.max_abs_diff(&vstar) < 1e-9);
    }
}

#[test]
fn small_forcing_converges_by_picard() {
    let grid = GridSpec::new(2, 12).unwrap();
    let f = random_field::<f64>(&grid, 4, 2.0).unwrap().scaled(0.2);
    let (ctx, report) = solve_stationary(&f, 1.0, 1.0, &StationaryOptions::default()).unwrap();
    assert_eq!(report.converged_in, SolverPhase::Picard);
    assert!(report.final_residual <= 1e-10);
    // contraction: residuals decrease monotonically
    for w in report.residual_history.windows(2) {
        assert!(w[1] <= w[0]);
    }
    // 2D identity (B(v, v), A v) = 0
    let b = bilinear_form(&ctx.v, &ctx.v).unwrap();
    let av = apply_stokes_power(&ctx.v, 1.0, 1.0);
    let scale = ctx.v.sobolev_norm(1.0) * ctx.v.sobolev_norm(2.0).powi(2);
    assert!(b.inner(&av).abs() <= 1e-10 * scale.max(1e-300));
}

#[test]
fn larger_forcing_uses_newton() {
    let grid = GridSpec::new(2, 12).unwrap();
    let f = random_field::<f64>(&grid, 9, 2.0).unwrap().scaled(6.0);
    let (ctx, report) = solve_stationary(&f, 1.0, 0.5, &StationaryOptions::default()).unwrap();
    let r = &(&apply_stokes_power(&ctx.v, 1.0, 0.5) + &bilinear_form(&ctx.v, &ctx.v).unwrap()) - &f;
    assert!(r.norm() <= 1e-10);
    println!("phase {:?}, history {:?}", report.converged_in, report.residual_history.len());
}
