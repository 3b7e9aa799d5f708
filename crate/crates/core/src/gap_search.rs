//! Stokes eigenvalue levels on the torus, spectral-gap searches and certified lattice
//! annuli.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{is_level, isqrt};

/// One achieved level `lambda = |j|^2` with its multiplicity and the gap to the next level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapRecord {
    pub lambda: i64,
    /// Lattice vectors on the level times `d - 1` divergence-free directions.
    pub multiplicity: usize,
    pub next_lambda: i64,
    pub gap: i64,
    /// Eigenvalues with multiplicity up to and including `lambda`.
    pub cumulative: usize,
}

fn lattice_counts(dim: usize, lambda_max: i64) -> Vec<u32> {
    let n = lambda_max.max(0) as usize;
    let mut counts = vec![0u32; n + 1];
    let r = isqrt(lambda_max);
    match dim {
        2 => {
            for a in -r..=r {
                let a2 = a * a;
                let rb = isqrt(lambda_max - a2);
                for b in -rb..=rb {
                    counts[(a2 + b * b) as usize] += 1;
                }
            }
        }
        3 => {
            for a in -r..=r {
                let a2 = a * a;
                let rb = isqrt(lambda_max - a2);
                for b in -rb..=rb {
                    let ab = a2 + b * b;
                    let rc = isqrt(lambda_max - ab);
                    for c in -rc..=rc {
                        counts[(ab + c * c) as usize] += 1;
                    }
                }
            }
        }
        _ => {}
    }
    counts
}

/// All achieved levels `1 <= lambda <= lambda_max` in `Z^d` (`d` = 2 or 3).
pub fn enumerate_levels(dim: usize, lambda_max: i64) -> Result<Vec<GapRecord>> {
    if dim != 2 && dim != 3 {
        return Err(Error::invalid("dimension", format!("{dim} is not 2 or 3")));
    }
    if lambda_max < 1 {
        return Err(Error::invalid("lambda_max", "must be at least 1"));
    }
    let counts = lattice_counts(dim, lambda_max);
    let levels: Vec<i64> = (1..=lambda_max).filter(|&n| counts[n as usize] > 0).collect();
    let mut out = Vec::with_capacity(levels.len());
    let mut cumulative = 0usize;
    for (i, &l) in levels.iter().enumerate() {
        let next = match levels.get(i + 1) {
            Some(&n) => n,
            None => (l + 1..).find(|&n| is_level(dim, n)).expect("levels are unbounded"),
        };
        let multiplicity = counts[l as usize] as usize * (dim - 1);
        cumulative += multiplicity;
        out.push(GapRecord {
            lambda: l,
            multiplicity,
            next_lambda: next,
            gap: next - l,
            cumulative,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum GapSearch {
    Found(GapRecord),
    /// No level up to the bound qualifies; carries the level with the largest gap.
    Exhausted { largest: GapRecord },
}

/// Smallest 2D level `lambda_N <= lambda_max` with `lambda_{N+1} - lambda_N > 2L`.
pub fn find_gap_2d(l: f64, lambda_max: i64) -> Result<GapSearch> {
    if !(l > 0.0) {
        return Err(Error::invalid("L", "must be positive"));
    }
    let levels = enumerate_levels(2, lambda_max)?;
    if let Some(r) = levels.iter().find(|r| r.gap as f64 > 2.0 * l) {
        return Ok(GapSearch::Found(*r));
    }
    let largest = *levels
        .iter()
        .max_by_key(|r| (r.gap, -r.lambda))
        .expect("at least one level");
    Ok(GapSearch::Exhausted { largest })
}

/// Fractional gap ratio for the abstract model, with the large-`lambda` asymptote of the
/// raw-gap threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbstractGapCheck {
    /// `(lambda_{N+1}^{1+a} - lambda_N^{1+a}) / (lambda_{N+1}^a + lambda_N^a)`.
    pub ratio: f64,
    pub pass: bool,
    /// `ratio - L`.
    pub margin: f64,
    /// Raw gaps above `L (lambda_{N+1}^a + lambda_N^a) / ((1+a) lambda_N^a)` always pass.
    pub gap_threshold: f64,
    /// `2L / (1 + a)`, the limit of `gap_threshold` as `lambda_N -> infinity`.
    pub asymptote: f64,
}

pub fn check_abstract_gap(lambda_n: f64, lambda_next: f64, alpha: f64, l: f64) -> Result<AbstractGapCheck> {
    if !(lambda_n > 0.0 && lambda_next >= lambda_n) {
        return Err(Error::invalid("lambda", "need 0 < lambda_N <= lambda_{N+1}"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha", "must lie in (0, 1)"));
    }
    let a_n = lambda_n.powf(alpha);
    let a_next = lambda_next.powf(alpha);
    let ratio = (lambda_next.powf(1.0 + alpha) - lambda_n.powf(1.0 + alpha)) / (a_next + a_n);
    Ok(AbstractGapCheck {
        ratio,
        pass: ratio > l,
        margin: ratio - l,
        gap_threshold: l * (a_next + a_n) / ((1.0 + alpha) * a_n),
        asymptote: 2.0 * l / (1.0 + alpha),
    })
}

/// Largest gap among levels `<= Lambda` for each bound, and the constant `c` with
/// `max gap >= c log Lambda` at every bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub points: Vec<(i64, i64)>,
    pub c: f64,
}

pub fn gap_growth(dim: usize, bounds: &[i64]) -> Result<GrowthFit> {
    let top = *bounds.iter().max().ok_or_else(|| Error::invalid("bounds", "empty"))?;
    let levels = enumerate_levels(dim, top)?;
    let mut points = Vec::new();
    let mut c = f64::INFINITY;
    for &b in bounds {
        let g = levels
            .iter()
            .filter(|r| r.next_lambda <= b)
            .map(|r| r.gap)
            .max()
            .unwrap_or(0);
        points.push((b, g));
        c = c.min(g as f64 / (b as f64).ln());
    }
    Ok(GrowthFit { points, c })
}

/// Certified annulus `{ j in Z^3 : |j|^2 in [lambda - k, lambda + k] }` whose distinct
/// points are pairwise at distance `>= b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnulusCertificate {
    pub lambda: f64,
    pub k: f64,
    pub b: f64,
    pub points: Vec<[i32; 3]>,
    /// Smallest pairwise distance (infinite for fewer than two points).
    pub min_separation: f64,
    /// Number of pairs checked.
    pub verified_pairs: usize,
    /// Box `|j|_inf <= enumeration_bound` that was enumerated.
    pub enumeration_bound: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AnnulusSearch {
    Found(AnnulusCertificate),
    /// No center qualified; carries the nonempty candidate with the widest separation.
    Exhausted { best: Option<AnnulusCertificate>, tried: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnulusOptions {
    /// Half-width `k = c_hat log lambda`.
    pub c_hat: f64,
    /// Only accept annuli containing lattice points.
    pub require_nonempty: bool,
}

impl Default for AnnulusOptions {
    fn default() -> Self {
        Self {
            c_hat: 0.2,
            require_nonempty: true,
        }
    }
}

/// Lattice points of `Z^3` with `|j|^2` in the closed interval `[lo, hi]`.
pub fn shell_points(lo: f64, hi: f64) -> Vec<[i32; 3]> {
    if hi < 0.0 {
        return Vec::new();
    }
    let r = hi.sqrt().floor() as i32;
    let mut pts = Vec::new();
    for a in -r..=r {
        for b in -r..=r {
            for c in -r..=r {
                let n = (a * a + b * b + c * c) as f64;
                if n >= lo && n <= hi {
                    pts.push([a, b, c]);
                }
            }
        }
    }
    pts
}

/// Exhaustive pair check; returns the minimum squared distance and the number of pairs.
fn min_pair_distance_sq(points: &[[i32; 3]]) -> (i64, usize) {
    let mut best = i64::MAX;
    let mut pairs = 0;
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            let d: i64 = (0..3).map(|c| ((p[c] - q[c]) as i64).pow(2)).sum();
            best = best.min(d);
            pairs += 1;
        }
    }
    (best, pairs)
}

/// Certifies the annulus at `(lambda, k)` against separation `b`.
pub fn certify_annulus(lambda: f64, k: f64, b: f64) -> AnnulusCertificate {
    let points = shell_points(lambda - k, lambda + k);
    let (d2, pairs) = min_pair_distance_sq(&points);
    AnnulusCertificate {
        lambda,
        k,
        b,
        min_separation: if d2 == i64::MAX { f64::INFINITY } else { (d2 as f64).sqrt() },
        verified_pairs: pairs,
        enumeration_bound: (lambda + k).max(0.0).sqrt().floor() as i64,
        points,
    }
}

impl AnnulusCertificate {
    pub fn holds(&self) -> bool {
        self.min_separation >= self.b
    }
}

/// Scans integer centers `lambda_start, lambda_start + 1, ...` (at most `budget` of them)
/// with `k = c_hat log lambda` and returns the first certified annulus.
pub fn find_annulus(b: f64, lambda_start: i64, budget: usize, opts: &AnnulusOptions) -> Result<AnnulusSearch> {
    if !(b >= 1.0) {
        return Err(Error::invalid("b", "must be at least 1"));
    }
    if !(opts.c_hat > 0.0) {
        return Err(Error::invalid("c_hat", "must be positive"));
    }
    let mut best: Option<AnnulusCertificate> = None;
    for lambda in (lambda_start.max(2)..).take(budget) {
        let lam = lambda as f64;
        let cert = certify_annulus(lam, opts.c_hat * lam.ln(), b);
        if cert.points.is_empty() && opts.require_nonempty {
            continue;
        }
        if cert.holds() {
            return Ok(AnnulusSearch::Found(cert));
        }
        if best.as_ref().is_none_or(|c| cert.min_separation > c.min_separation) {
            best = Some(cert);
        }
    }
    Ok(AnnulusSearch::Exhausted { best, tried: budget })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_levels_and_gaps() {
        let levels = enumerate_levels(2, 25).unwrap();
        let l: Vec<i64> = levels.iter().map(|r| r.lambda).collect();
        assert_eq!(l, vec![1, 2, 4, 5, 8, 9, 10, 13, 16, 17, 18, 20, 25]);
        let at = |x: i64| levels.iter().find(|r| r.lambda == x).unwrap().gap;
        assert_eq!(at(5), 3);
        assert_eq!(at(20), 5);
    }

    #[test]
    fn find_gap_examples() {
        match find_gap_2d(1.0, 1000).unwrap() {
            GapSearch::Found(r) => assert_eq!((r.lambda, r.gap, r.cumulative), (5, 3, 20)),
            other => panic!("{other:?}"),
        }
        match find_gap_2d(2.0, 1000).unwrap() {
            GapSearch::Found(r) => assert_eq!((r.lambda, r.gap), (20, 5)),
            other => panic!("{other:?}"),
        }
        match find_gap_2d(0.4, 1000).unwrap() {
            GapSearch::Found(r) => assert_eq!((r.lambda, r.gap), (1, 1)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(find_gap_2d(50.0, 100).unwrap(), GapSearch::Exhausted { .. }));
    }

    #[test]
    fn equal_levels_fail_the_abstract_gap() {
        let c = check_abstract_gap(7.0, 7.0, 0.25, 0.1).unwrap();
        assert_eq!(c.ratio, 0.0);
        assert!(!c.pass);
    }

    #[test]
    fn b_one_certifies_first_nonempty_shell() {
        match find_annulus(1.0, 2, 10, &AnnulusOptions::default()).unwrap() {
            AnnulusSearch::Found(c) => {
                assert_eq!(c.lambda, 2.0);
                assert!(!c.points.is_empty());
            }
            other => panic!("{other:?}"),
        }
    }
}
