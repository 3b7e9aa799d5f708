use imlab_core::cutoff::{CutoffSpec, StationaryContext};
use imlab_core::evolution::{
    estimate_absorbing_radius, evolve, evolve_with, local_error_estimate, step, AbstractModel,
    AbstractNonlinearity, FieldModel, RadiusOptions, RecordSpec,
};
use imlab_core::spectral_field::{random_field, GridSpec};
use imlab_core::stationary::{solve_stationary, StationaryOptions};
use imlab_core::{Error, Field};

#[test]
fn linear_flow_is_exact_per_mode() {
    for (d, theta) in [(2usize, 1.0), (3, 1.25)] {
        let grid = GridSpec::new(d, 8).unwrap();
        let nu = 0.7;
        let model = FieldModel::linear(grid, nu, theta, None).unwrap();
        let u0 = random_field::<f64>(&grid, 2, 0.0).unwrap();
        let dt = 0.013;
        let u1 = step(&model, &u0, dt).unwrap();
        for ((j, a), (_, b)) in u1.modes().zip(u0.modes()) {
            if j.is_zero() {
                continue;
            }
            let g = (-nu * (j.norm_sq() as f64).powf(theta) * dt).exp();
            for (x, y) in a.iter().zip(b) {
                assert!((x - y * g).norm() <= 2.0 * f64::EPSILON * y.norm());
            }
        }
    }
}

#[test]
fn unforced_navier_stokes_energy_envelope() {
    let grid = GridSpec::new(2, 16).unwrap();
    let nu = 0.5;
    let model = FieldModel::navier_stokes(grid, nu, Field::zeros(grid)).unwrap();
    let u0 = random_field::<f64>(&grid, 11, 1.0).unwrap().scaled(3.0);
    let (_, rec) = evolve(&model, &u0, 2.0, 5e-3, &RecordSpec::default()).unwrap();
    let n0 = u0.norm();
    let mut prev = f64::INFINITY;
    for s in &rec.samples {
        let n = s.norms[0].1;
        assert!(n <= (-nu * s.t).exp() * n0 * (1.0 + 1e-12));
        assert!(n <= prev);
        prev = n;
    }
}

#[test]
fn abstract_linear_model_reaches_equilibrium() {
    let spectrum: Vec<f64> = (1..=12).map(|k| k as f64).collect();
    let g: Vec<f64> = (0..12).map(|k| (k as f64 * 0.7).sin()).collect();
    let model = AbstractModel::new(0.25, 1.0, spectrum, AbstractNonlinearity::Zero, Some(g)).unwrap();
    let eq = model.linear_equilibrium();
    let (u, _) = evolve(&model, &vec![0.0; 12], 40.0, 0.05, &RecordSpec::default()).unwrap();
    let err = u.iter().zip(&eq).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err <= 1e-8, "{err}");
}

#[test]
fn zero_horizon_records_initial_state_only() {
    let grid = GridSpec::new(2, 6).unwrap();
    let model = FieldModel::linear(grid, 1.0, 1.0, None).unwrap();
    let u0 = random_field::<f64>(&grid, 1, 1.0).unwrap();
    let (u, rec) = evolve(&model, &u0, 0.0, 0.1, &RecordSpec::default()).unwrap();
    assert_eq!(u, u0);
    assert_eq!(rec.samples.len(), 1);
    assert_eq!(rec.samples[0].t, 0.0);
}

fn small_context(grid: GridSpec, scale: f64) -> StationaryContext<f64> {
    let f = random_field::<f64>(&grid, 3, 2.0).unwrap().scaled(scale);
    solve_stationary(&f, 1.0, 1.0, &StationaryOptions::default()).unwrap().0
}

#[test]
fn prepared_equals_difference_inside_ball() {
    let grid = GridSpec::new(2, 12).unwrap();
    let ctx = small_context(grid, 0.5);
    let w0 = random_field::<f64>(&grid, 4, 6.0).unwrap().scaled(0.3);
    let radius = 10.0 * w0.sobolev_norm(4.5);
    let prepared = FieldModel::prepared(ctx.clone(), CutoffSpec::new(radius).unwrap()).unwrap();
    let diff = FieldModel::difference(ctx).unwrap();
    let mut a = Vec::new();
    let spec = RecordSpec::default();
    evolve_with(&prepared, &w0, 1.0, 1e-2, &spec, |_, x| a.push(x.clone())).unwrap();
    let mut k = 0;
    evolve_with(&diff, &w0, 1.0, 1e-2, &spec, |_, x| {
        assert!(x.sobolev_norm(4.5) <= radius);
        assert!(x.max_abs_diff(&a[k]) <= 1e-12);
        k += 1;
    })
    .unwrap();
}

#[test]
fn second_order_in_time() {
    let grid = GridSpec::new(2, 12).unwrap();
    let f = random_field::<f64>(&grid, 8, 1.0).unwrap();
    let model = FieldModel::navier_stokes(grid, 0.2, f).unwrap();
    let u0 = random_field::<f64>(&grid, 9, 2.0).unwrap().scaled(2.0);
    let spec = RecordSpec {
        every: 0,
        ..RecordSpec::default()
    };
    let run = |dt: f64| evolve(&model, &u0, 0.5, dt, &spec).unwrap().0;
    let reference = run(0.5 / 4096.0);
    let errs: Vec<f64> = [64.0, 128.0, 256.0]
        .iter()
        .map(|n| (&run(0.5 / n) - &reference).norm())
        .collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!(ratio > 3.5 && ratio < 4.6, "errors {errs:?}");
    }
}

#[test]
fn semigroup_when_steps_align() {
    let grid = GridSpec::new(2, 10).unwrap();
    let f = random_field::<f64>(&grid, 8, 1.0).unwrap();
    let model = FieldModel::navier_stokes(grid, 0.3, f).unwrap();
    let u0 = random_field::<f64>(&grid, 2, 2.0).unwrap();
    let spec = RecordSpec::default();
    let (a, _) = evolve(&model, &u0, 0.6, 0.01, &spec).unwrap();
    let (b1, _) = evolve(&model, &u0, 0.25, 0.01, &spec).unwrap();
    let (b, _) = evolve(&model, &b1, 0.35, 0.01, &spec).unwrap();
    assert!(a.max_abs_diff(&b) < 1e-12);
}

#[test]
fn step_doubling_estimate_scales_cubically() {
    let grid = GridSpec::new(2, 10).unwrap();
    let f = random_field::<f64>(&grid, 8, 1.0).unwrap();
    let model = FieldModel::navier_stokes(grid, 0.3, f).unwrap();
    let u0 = random_field::<f64>(&grid, 2, 2.0).unwrap().scaled(3.0);
    let e1 = local_error_estimate(&model, &u0, 0.02).unwrap();
    let e2 = local_error_estimate(&model, &u0, 0.01).unwrap();
    assert!(e1 / e2 > 6.0, "{}", e1 / e2);
}

#[test]
fn blow_up_is_reported() {
    let grid = GridSpec::new(2, 6).unwrap();
    let model = FieldModel::linear(grid, 1.0, 1.0, Some(random_field(&grid, 1, 0.0).unwrap())).unwrap();
    let spec = RecordSpec {
        blowup_norm: 1e-3,
        ..RecordSpec::default()
    };
    let err = evolve(&model, &Field::zeros(grid), 1.0, 0.1, &spec).unwrap_err();
    assert!(matches!(err, Error::BlowUp { last_valid_time, .. } if last_valid_time == 0.0));
    assert!(err.is_numerical());
}

#[test]
fn absorbing_radius_without_forcing_vanishes() {
    let grid = GridSpec::new(2, 8).unwrap();
    let ctx = StationaryContext {
        v: Field::zeros(grid),
        theta: 1.0,
        nu: 1.0,
    };
    let model = FieldModel::difference(ctx).unwrap();
    let opts = RadiusOptions {
        ensemble_size: 3,
        burn_in: 45.0,
        horizon: 50.0,
        dt: 0.05,
        s: 0.0,
        ..RadiusOptions::default()
    };
    let r1 = estimate_absorbing_radius(&model, &opts).unwrap();
    let r2 = estimate_absorbing_radius(&model, &opts).unwrap();
    assert!(r1.radius <= 1e-6);
    assert_eq!(r1, r2);
}

#[test]
fn difference_model_requires_scope_theta() {
    let grid = GridSpec::new(3, 6).unwrap();
    let ctx = StationaryContext {
        v: Field::zeros(grid),
        theta: 1.0,
        nu: 1.0,
    };
    assert!(FieldModel::difference(ctx).is_err());
}
