use imlab_core::cone_sac::{
    abstract_sac_estimate, band_annihilation_check, monitor_pairs, monitor_strong_cone, operator_norm,
    sac_estimate, sac_estimate_with_scalar, sac_samples, zero_mean_audit, BandOperator, ConeCoefficients,
    ConeForm, ConeSummary, FieldBandOperator, PowerOptions, SampleRegime,
};
use imlab_core::cutoff::{CutoffSpec, StationaryContext};
use imlab_core::evolution::{stokes_spectrum, AbstractModel, AbstractNonlinearity};
use imlab_core::gap_search::{check_abstract_gap, find_annulus, AnnulusOptions, AnnulusSearch};
use imlab_core::operators::BandProjectorSpec;
use imlab_core::spectral_field::{random_field, GridSpec, SpectralField};
use nalgebra::DMatrix;
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_vec(n: usize, rng: &mut ChaCha8Rng, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * (rng.random::<f64>() - 0.5)).collect()
}

fn cut_spec(spectrum: &[f64], lambda_n: f64) -> BandProjectorSpec {
    let n = spectrum.iter().filter(|&&l| l <= lambda_n).count();
    let next = spectrum[n];
    BandProjectorSpec::new(n, lambda_n as i64, next as i64, 0.5).unwrap()
}

#[test]
fn linear_flow_satisfies_exact_cone_inequality() {
    let spectrum = stokes_spectrum::<f64>(2, 20);
    let model = AbstractModel::new(0.25, 1.0, spectrum.clone(), AbstractNonlinearity::Zero, None).unwrap();
    let spec = cut_spec(&spectrum, 5.0);
    let form = ConeForm::new(spec, 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let a = random_vec(spectrum.len(), &mut rng, 1.0);
        let b = random_vec(spectrum.len(), &mut rng, 1.0);
        let tr = monitor_strong_cone(&model, &a, &b, &form, &ConeCoefficients::Linear, 0.5, 1e-3).unwrap();
        let g = 0.5 * (8f64.powf(1.25) + 5f64.powf(1.25));
        assert!((tr.coefficients.gamma - g).abs() < 1e-12);
        assert!(tr.residual_violations.is_empty(), "excess {}", tr.max_residual_excess());
        assert!(tr.invariance_violations.is_empty());
    }
}

fn gap_model(lipschitz: f64) -> (AbstractModel<f64>, BandProjectorSpec) {
    let spectrum = stokes_spectrum::<f64>(2, 20);
    let nl = AbstractNonlinearity::householder_sine(spectrum.len(), lipschitz, 3);
    let model = AbstractModel::new(0.25, 1.0, spectrum.clone(), nl, None).unwrap();
    let spec = cut_spec(&spectrum, 5.0);
    (model, spec)
}

#[test]
fn cone_invariance_and_squeezing_under_fractional_gap() {
    let l = 1.0;
    let (model, spec) = gap_model(l);
    let gap = check_abstract_gap(5.0, 8.0, 0.25, l).unwrap();
    assert!(gap.pass && gap.margin > 0.0);
    let form = ConeForm::new(spec, -0.25).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = model.dim();
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..40)
        .map(|i| {
            let a = random_vec(n, &mut rng, 2.0);
            let mut d = random_vec(n, &mut rng, 0.5);
            // alternate between differences dominated by low and by high modes
            for (k, x) in d.iter_mut().enumerate() {
                if (k < spec.n) == (i % 2 == 0) {
                    *x *= 0.05;
                }
            }
            let b = a.iter().zip(&d).map(|(x, y)| x + y).collect();
            (a, b)
        })
        .collect();
    let traces = monitor_pairs(&model, &pairs, &form, &ConeCoefficients::FractionalGap { lipschitz: l }, 0.2, 1e-3).unwrap();
    let summary = ConeSummary::of(&traces);
    assert_eq!(summary.runs_with_invariance_violations, 0);
    assert_eq!(summary.runs_with_residual_violations, 0, "{summary:?}");
    assert!(summary.runs_staying_outside > 0);
    assert!(summary.min_squeeze_rate.unwrap() > 0.0);
}

fn dense_matrix<K: BandOperator<f64>>(op: &K) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = op.dim();
    let mut m = DMatrix::zeros(n, n);
    let mut mt = DMatrix::zeros(n, n);
    for c in 0..n {
        let mut e = vec![0.0; n];
        e[c] = 1.0;
        for (r, v) in op.apply(&e).unwrap().into_iter().enumerate() {
            m[(r, c)] = v;
        }
        for (r, v) in op.apply_transpose(&e).unwrap().into_iter().enumerate() {
            mt[(r, c)] = v;
        }
    }
    (m, mt)
}

fn context3(grid: GridSpec, seed: u64, scale: f64) -> StationaryContext<f64> {
    let v = random_field::<f64>(&grid, seed, 3.0).unwrap().scaled(scale);
    StationaryContext { v, theta: 1.25, nu: 1.0 }
}

#[test]
fn power_iteration_matches_dense_norm() {
    let grid = GridSpec::new(3, 8).unwrap();
    let ctx = context3(grid, 1, 0.5);
    let cutoff = CutoffSpec::new(1.0).unwrap();
    let spec = BandProjectorSpec::new(0, 9, 10, 2.0).unwrap();
    let samples = sac_samples::<f64>(&grid, &cutoff, 2, 4).unwrap();
    for (regime, w) in &samples {
        let op = FieldBandOperator::new(&ctx, &cutoff, &spec, w).unwrap();
        let (m, mt) = dense_matrix(&op);
        assert!((m.transpose() - &mt).amax() < 1e-12 * m.amax().max(1.0));
        let dense = m.singular_values().max();
        let est = operator_norm(&op, 0.0, &PowerOptions::default()).unwrap();
        assert!(dense > 0.0);
        assert!((est - dense).abs() <= 0.05 * dense, "{regime:?}: {est} vs {dense}");
        assert!(est <= dense * (1.0 + 1e-10));
        let zero = op.apply(&vec![0.0; op.dim()]).unwrap();
        assert!(zero.iter().all(|&x| x == 0.0));
    }
    let report = sac_estimate(&ctx, &cutoff, &spec, &samples, &PowerOptions::default()).unwrap();
    assert_eq!(report.samples.len(), 2);
    assert_eq!(report.samples[0].regime, SampleRegime::Inside);
    assert!(report.delta_hat > 0.0);
    let shifted = sac_estimate_with_scalar(&ctx, &cutoff, &spec, &samples, &PowerOptions::default()).unwrap();
    assert!(shifted.samples.iter().all(|s| s.a_fit.is_some()));
}

#[test]
fn band_annihilation_under_certified_annulus() {
    let cert = match find_annulus(3.0, 2, 200, &AnnulusOptions::default()).unwrap() {
        AnnulusSearch::Found(c) => c,
        other => panic!("{other:?}"),
    };
    let lambda = cert.lambda as i64;
    let grid = GridSpec::new(3, 8).unwrap();
    assert!(cert.points.iter().all(|p| p.iter().all(|c| c.abs() as usize <= grid.cutoff())));
    let b2 = (cert.b * cert.b) as i64;
    let generator = random_field::<f64>(&grid, 21, 1.0).unwrap().restrict(|n| n < b2);
    let spec = BandProjectorSpec::new(0, lambda, lambda + 1, cert.k).unwrap();
    let report = band_annihilation_check(&generator, &spec, 3).unwrap();
    assert_eq!(report.coupling_pairs, 0);
    assert_eq!(report.max_coefficient, 0.0);

    let ctx = StationaryContext { v: generator.clone(), theta: 1.25, nu: 1.0 };
    let cutoff = CutoffSpec::new(1.0).unwrap();
    let w = vec![(SampleRegime::Inside, SpectralField::zeros(grid))];
    let sac = sac_estimate(&ctx, &cutoff, &spec, &w, &PowerOptions::default()).unwrap();
    assert!(sac.delta_hat <= 1e-10, "{}", sac.delta_hat);

    // a generator reaching the separation couples the band
    let wide = random_field::<f64>(&grid, 21, 1.0).unwrap().restrict(|n| n <= 16);
    assert!(band_annihilation_check(&wide, &spec, 3).unwrap().coupling_pairs > 0);
}

#[test]
fn zero_mean_audits() {
    let grid = GridSpec::new(3, 8).unwrap();
    let ctx = context3(grid, 2, 1.0);
    let cutoff = CutoffSpec::new(0.5).unwrap();
    for seed in 0..5 {
        let w = random_field::<f64>(&grid, 100 + seed, 2.0).unwrap().scaled(10.0);
        let audit = zero_mean_audit(&ctx, &w, &cutoff).unwrap();
        assert!(audit.passes(1e-15), "{audit:?}");
    }
    let w = random_field::<f64>(&grid, 7, 2.0)
        .unwrap()
        .inject_mean_for_testing(&[Complex::new(1e-3, 0.0), Complex::new(0.0, 0.0), Complex::new(0.0, 0.0)]);
    let audit = zero_mean_audit(&ctx, &w, &cutoff).unwrap();
    assert!(!audit.passes(1e-15));
    assert!(audit.mean_grad_w <= 1e-15);
}

#[test]
fn scalar_corrected_estimate_on_synthetic_models() {
    let spectrum = stokes_spectrum::<f64>(2, 10);
    let n = spectrum.len();
    let spec = cut_spec(&spectrum, 5.0);
    let a = 0.7;
    let scalar = AbstractModel::new(0.25, 1.0, spectrum.clone(), AbstractNonlinearity::Scalar(a), None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let states: Vec<Vec<f64>> = (0..3).map(|_| random_vec(n, &mut rng, 1.0)).collect();
    let opts = PowerOptions::default();
    let r = abstract_sac_estimate(&scalar, &spec, &states, &opts, true).unwrap();
    assert!(r.delta_hat < 1e-12);
    for s in &r.samples {
        assert!((s.a_fit.unwrap() - a).abs() < 1e-12);
    }
    let plain = abstract_sac_estimate(&scalar, &spec, &states, &opts, false).unwrap();
    assert!((plain.delta_hat - a).abs() < 1e-12);

    let zero = AbstractModel::new(0.25, 1.0, spectrum.clone(), AbstractNonlinearity::Scalar(0.0), None).unwrap();
    let z1 = abstract_sac_estimate(&zero, &spec, &states, &opts, true).unwrap();
    let z0 = abstract_sac_estimate(&zero, &spec, &states, &opts, false).unwrap();
    assert_eq!(z1.delta_hat, z0.delta_hat);

    // F'(0) = a I + eps C, C coupling band modes only to modes outside the band
    let eps = 1e-3;
    let lo = spec.lambda_n as f64 - spec.k;
    let hi = spec.lambda_n as f64 + spec.k;
    let in_band: Vec<bool> = spectrum.iter().map(|&l| l >= lo && l <= hi).collect();
    let mut mixing = vec![vec![0.0; n]; n];
    for i in 0..n {
        mixing[i][i] = a;
        for j in 0..n {
            if in_band[i] != in_band[j] {
                mixing[i][j] += eps * ((i * 7 + j * 3) as f64).sin() / n as f64;
            }
        }
    }
    let coupled = AbstractModel::new(
        0.25,
        1.0,
        spectrum.clone(),
        AbstractNonlinearity::Sine { lipschitz: 1.0, mixing },
        None,
    )
    .unwrap();
    let r = abstract_sac_estimate(&coupled, &spec, &[vec![0.0; n]], &opts, true).unwrap();
    assert!(r.delta_hat <= eps * (1.0 + 1e-6), "{}", r.delta_hat);
}
