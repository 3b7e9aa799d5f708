use imlab_core::gap_search::{
    certify_annulus, check_abstract_gap, enumerate_levels, find_annulus, find_gap_2d, gap_growth,
    shell_points, AnnulusOptions, AnnulusSearch, GapSearch,
};
use imlab_core::operators::{project_low, BandProjectorSpec};
use imlab_core::spectral_field::{random_field, GridSpec};

/// Sum-of-two-squares criterion by trial factorization: every prime `p = 3 mod 4` divides
/// `n` to an even power.
fn is_sum_of_two_squares(mut n: i64) -> bool {
    let mut p = 2;
    while p * p <= n {
        let mut e = 0;
        while n % p == 0 {
            n /= p;
            e += 1;
        }
        if p % 4 == 3 && e % 2 == 1 {
            return false;
        }
        p += 1;
    }
    n % 4 != 3
}

/// Legendre's three-square criterion: `n` is not of the form `4^a (8b + 7)`.
fn is_sum_of_three_squares(mut n: i64) -> bool {
    while n % 4 == 0 {
        n /= 4;
    }
    n % 8 != 7
}

#[test]
fn two_dimensional_levels_match_factorization_criterion() {
    let bound = 10_000;
    let levels = enumerate_levels(2, bound).unwrap();
    let listed: Vec<i64> = levels.iter().map(|r| r.lambda).collect();
    let expected: Vec<i64> = (1..=bound).filter(|&n| is_sum_of_two_squares(n)).collect();
    assert_eq!(listed, expected);
    for r in &levels {
        assert!(r.gap >= 1);
        assert!(is_sum_of_two_squares(r.next_lambda));
        assert!((r.lambda + 1..r.next_lambda).all(|n| !is_sum_of_two_squares(n)));
    }
}

#[test]
fn three_dimensional_levels_match_legendre() {
    let levels = enumerate_levels(3, 2000).unwrap();
    let listed: Vec<i64> = levels.iter().map(|r| r.lambda).collect();
    let expected: Vec<i64> = (1..=2000).filter(|&n| is_sum_of_three_squares(n)).collect();
    assert_eq!(listed, expected);
    assert_eq!(levels[0].multiplicity, 12);
}

#[test]
fn mode_count_matches_projector_dimension() {
    let levels = enumerate_levels(2, 20).unwrap();
    match find_gap_2d(1.0, 100).unwrap() {
        GapSearch::Found(r) => {
            assert_eq!(r.cumulative, levels.iter().take_while(|x| x.lambda <= 5).map(|x| x.multiplicity).sum::<usize>());
            let grid = GridSpec::new(2, 12).unwrap();
            let u = random_field::<f64>(&grid, 3, 1.0).unwrap();
            let spec = BandProjectorSpec::new(r.cumulative, r.lambda, r.next_lambda, 1.0).unwrap();
            let low = project_low(&u, &spec).unwrap();
            let active = low.modes().filter(|(_, c)| c.iter().any(|z| z.norm() > 0.0)).count();
            // one real degree of freedom per wavevector in 2D
            assert_eq!(active, r.cumulative);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn abstract_gap_example_and_remark_threshold() {
    let c = check_abstract_gap(4.0, 9.0, 0.25, 1.0).unwrap();
    let direct = (9f64.powf(1.25) - 4f64.powf(1.25)) / (9f64.powf(0.25) + 4f64.powf(0.25));
    assert!((c.ratio - direct).abs() < 1e-14);
    assert_eq!(c.pass, direct > 1.0);
    assert!(c.pass);

    let (l, alpha) = (1.0, 0.25);
    let lam = 1e8;
    let probe = check_abstract_gap(lam, lam + 1.0, alpha, l).unwrap();
    assert!((probe.gap_threshold / probe.asymptote - 1.0).abs() < 0.01);
    let below = check_abstract_gap(lam, lam + 0.98 * probe.asymptote, alpha, l).unwrap();
    let above = check_abstract_gap(lam, lam + 1.02 * probe.asymptote, alpha, l).unwrap();
    assert!(!below.pass);
    assert!(above.pass);
    let at_two_l = check_abstract_gap(lam, lam + 2.0 * l, alpha, l).unwrap();
    assert!((at_two_l.ratio - (1.0 + alpha) * l).abs() < 1e-3);
}

#[test]
fn richards_growth_is_monotone_with_positive_constant() {
    let fit = gap_growth(2, &[100, 1000, 10_000, 100_000]).unwrap();
    for w in fit.points.windows(2) {
        assert!(w[1].1 >= w[0].1);
    }
    assert!(fit.c > 0.0);
    for &(b, g) in &fit.points {
        assert!(g as f64 >= fit.c * (b as f64).ln() - 1e-12);
    }
}

fn brute_force_separated(lo: f64, hi: f64, b: f64) -> bool {
    let r = hi.sqrt().ceil() as i32 + 1;
    let mut pts = Vec::new();
    for x in -r..=r {
        for y in -r..=r {
            for z in -r..=r {
                let n = (x * x + y * y + z * z) as f64;
                if lo <= n && n <= hi {
                    pts.push((x, y, z));
                }
            }
        }
    }
    for p in &pts {
        for q in &pts {
            if p != q {
                let d2 = ((p.0 - q.0).pow(2) + (p.1 - q.1).pow(2) + (p.2 - q.2).pow(2)) as f64;
                if d2 < b * b {
                    return false;
                }
            }
        }
    }
    true
}

#[test]
fn annulus_certificate_reverifies() {
    let opts = AnnulusOptions::default();
    match find_annulus(3.0, 2, 200, &opts).unwrap() {
        AnnulusSearch::Found(c) => {
            assert!(c.holds());
            assert!(c.k >= opts.c_hat * c.lambda.ln());
            assert!(!c.points.is_empty());
            assert!(brute_force_separated(c.lambda - c.k, c.lambda + c.k, c.b));
            assert_eq!(c.verified_pairs, c.points.len() * (c.points.len() - 1) / 2);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn empty_annulus_holds_vacuously() {
    let c = certify_annulus(7.0, 0.25, 5.0);
    assert!(c.points.is_empty());
    assert_eq!(c.verified_pairs, 0);
    assert!(c.holds());
}

#[test]
fn exhausted_search_reports_best_separation() {
    let opts = AnnulusOptions { c_hat: 2.0, require_nonempty: true };
    match find_annulus(50.0, 10, 5, &opts).unwrap() {
        AnnulusSearch::Exhausted { best: Some(best), tried } => {
            assert_eq!(tried, 5);
            assert!(best.min_separation < 50.0);
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(shell_points(1.0, 1.0).len(), 6);
}
