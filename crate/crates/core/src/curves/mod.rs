//! Curve machinery: equal-width binning, centered rolling mean, least-squares
//! polynomial fit and the inversion point of the fitted curve.
//!
//! Everything here is generic over [`Scalar`]; [`report`] applies it to
//! scored cases in `f64`.

pub mod report;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

pub const DEFAULT_BINS: usize = 200;
pub const DEFAULT_WINDOW: usize = 30;
pub const DEFAULT_DEGREE: usize = 4;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum CurveError {
    #[error("need at least {needed} distinct x values, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("rank-deficient least-squares system")]
    RankDeficient,
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("model comparison needs at least two reports")]
    NotEnoughReports,
    #[error("reports were fitted on different case sets ({0} vs {1})")]
    CaseSetMismatch(String, String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin<T> {
    /// 0-based bin index within `[min, max]`.
    pub index: usize,
    pub center: T,
    pub mean: T,
    pub count: usize,
}

/// Buckets `(x, y)` points into `n_bins` equal-width bins over the x range
/// and averages y per bin. Empty bins are omitted. A point on an interior
/// boundary belongs to the higher bin; the maximum belongs to the last bin.
/// When every x is equal the result is a single bin.
pub fn bin_points<T: Scalar>(points: &[(T, T)], n_bins: usize) -> Vec<Bin<T>> {
    if points.is_empty() || n_bins == 0 {
        return Vec::new();
    }
    let (lo, hi) = x_range(points);
    let width = (hi - lo) / T::from_count(n_bins);
    let degenerate = width.is_nan() || width <= T::zero();
    let n = if degenerate { 1 } else { n_bins };
    let mut sums = vec![T::zero(); n];
    let mut counts = vec![0usize; n];
    for &(x, y) in points {
        let idx = if degenerate {
            0
        } else {
            ((x - lo) / width).floor().to_usize().unwrap_or(0).min(n - 1)
        };
        sums[idx] = sums[idx] + y;
        counts[idx] += 1;
    }
    let half = T::lit(0.5);
    (0..n)
        .filter(|&i| counts[i] > 0)
        .map(|i| Bin {
            index: i,
            center: if degenerate {
                lo
            } else {
                lo + (T::from_count(i) + half) * width
            },
            mean: sums[i] / T::from_count(counts[i]),
            count: counts[i],
        })
        .collect()
}

pub fn x_range<T: Scalar>(points: &[(T, T)]) -> (T, T) {
    points.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &(x, _)| {
        (lo.min(x), hi.max(x))
    })
}

/// Centered rolling mean over a series ordered by x.
///
/// In the interior the window holds `window` entries, `window / 2` before
/// the point and the rest after it. Near either end the window shrinks to
/// the largest symmetric span that fits. x values are unchanged.
pub fn rolling_mean<T: Scalar>(series: &[(T, T)], window: usize) -> Vec<(T, T)> {
    let n = series.len();
    if n == 0 || window <= 1 {
        return series.to_vec();
    }
    let before = window / 2;
    let after = window - 1 - before;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(T::zero());
    for &(_, y) in series {
        let last = *prefix.last().expect("non-empty");
        prefix.push(last + y);
    }
    (0..n)
        .map(|i| {
            let (a, b) = if i >= before && n - 1 - i >= after {
                (i - before, i + after)
            } else {
                let r = i.min(n - 1 - i).min(before);
                (i - r, i + r)
            };
            let mean = (prefix[b + 1] - prefix[a]) / T::from_count(b - a + 1);
            (series[i].0, mean)
        })
        .collect()
}

/// Least-squares polynomial; `coeffs[j]` multiplies `x^j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyFit<T> {
    pub coeffs: Vec<T>,
    pub residual_norm: T,
}

pub fn poly_eval<T: Scalar>(coeffs: &[T], x: T) -> T {
    coeffs.iter().rev().fold(T::zero(), |acc, &c| acc * x + c)
}

pub fn poly_derivative<T: Scalar>(coeffs: &[T]) -> Vec<T> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(j, &c)| c * T::from_count(j))
        .collect()
}

fn binomial<T: Scalar>(n: usize, k: usize) -> T {
    (0..k).fold(T::one(), |acc, i| {
        acc * T::from_count(n - i) / T::from_count(i + 1)
    })
}

/// Fits a degree-`degree` polynomial by least squares.
///
/// x is mapped affinely onto `[-1, 1]`, the Vandermonde system is solved
/// with Householder QR, and the coefficients are mapped back to the
/// original x.
pub fn polyfit<T: Scalar>(xs: &[T], ys: &[T], degree: usize) -> Result<PolyFit<T>, CurveError> {
    assert_eq!(xs.len(), ys.len(), "xs and ys must align");
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(CurveError::NonFinite);
    }
    let ncoef = degree + 1;
    let mut distinct: Vec<T> = xs.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    distinct.dedup();
    if distinct.len() < ncoef {
        return Err(CurveError::TooFewPoints {
            needed: ncoef,
            got: distinct.len(),
        });
    }
    let lo = distinct[0];
    let hi = *distinct.last().expect("non-empty");
    let two = T::lit(2.0);
    let scale = two / (hi - lo);
    let shift = -(hi + lo) / (hi - lo);

    let m = xs.len();
    // column-major Vandermonde in t
    let mut a: Vec<Vec<T>> = vec![vec![T::one(); m]; ncoef];
    for (r, &x) in xs.iter().enumerate() {
        let t = scale * x + shift;
        for j in 1..ncoef {
            a[j][r] = a[j - 1][r] * t;
        }
    }
    let mut b: Vec<T> = ys.to_vec();

    let mut diag = vec![T::zero(); ncoef];
    for k in 0..ncoef {
        let norm = a[k][k..].iter().map(|&v| v * v).sum::<T>().sqrt();
        if norm == T::zero() {
            return Err(CurveError::RankDeficient);
        }
        let alpha = if a[k][k] > T::zero() { -norm } else { norm };
        let mut v: Vec<T> = a[k][k..].to_vec();
        v[0] = v[0] - alpha;
        let vnorm2 = v.iter().map(|&e| e * e).sum::<T>();
        diag[k] = alpha;
        if vnorm2 > T::zero() {
            let reflect = |col: &mut [T]| {
                let dot = v.iter().zip(col.iter()).map(|(&p, &q)| p * q).sum::<T>();
                let f = two * dot / vnorm2;
                for (c, &p) in col.iter_mut().zip(&v) {
                    *c = *c - f * p;
                }
            };
            for col in a.iter_mut().skip(k + 1) {
                reflect(&mut col[k..]);
            }
            reflect(&mut b[k..]);
        }
    }
    let rmax = diag.iter().fold(T::zero(), |acc, d| acc.max(d.abs()));
    let tol = rmax * T::epsilon() * T::from_count(m.max(ncoef)) * T::lit(16.0);
    if diag.iter().any(|d| d.abs() <= tol) {
        return Err(CurveError::RankDeficient);
    }
    let mut c = vec![T::zero(); ncoef];
    for k in (0..ncoef).rev() {
        let s = (k + 1..ncoef).fold(b[k], |acc, j| acc - a[j][k] * c[j]);
        c[k] = s / diag[k];
    }
    let residual_norm = b[ncoef..].iter().map(|&v| v * v).sum::<T>().sqrt();

    // expand Σ c_k (scale·x + shift)^k in powers of x
    let mut coeffs = vec![T::zero(); ncoef];
    for (k, &ck) in c.iter().enumerate() {
        for (j, out) in coeffs.iter_mut().enumerate().take(k + 1) {
            *out = *out + ck * binomial::<T>(k, j) * scale.powi(j as i32) * shift.powi((k - j) as i32);
        }
    }
    Ok(PolyFit {
        coeffs,
        residual_norm,
    })
}

/// Real roots of a polynomial inside `[lo, hi]`, ascending.
///
/// Splits the interval at the roots of the derivative (found recursively)
/// so that every piece is monotone, then bisects each sign change.
pub fn real_roots_in<T: Scalar>(coeffs: &[T], lo: T, hi: T) -> Vec<T> {
    let mut coeffs = coeffs.to_vec();
    while coeffs.len() > 1 && *coeffs.last().expect("non-empty") == T::zero() {
        coeffs.pop();
    }
    if coeffs.len() <= 1 || lo.is_nan() || hi.is_nan() || hi < lo {
        return Vec::new();
    }
    let mut breaks = vec![lo];
    breaks.extend(real_roots_in(&poly_derivative(&coeffs), lo, hi));
    breaks.push(hi);

    let f = |x: T| poly_eval(&coeffs, x);
    let mut roots: Vec<T> = Vec::new();
    let push = |r: T, roots: &mut Vec<T>| {
        let close = roots
            .last()
            .is_some_and(|&last| (r - last).abs() <= T::epsilon().sqrt() * (T::one() + r.abs()));
        if !close {
            roots.push(r);
        }
    };
    for w in breaks.windows(2) {
        let (mut a, mut b) = (w[0], w[1]);
        let (fa, fb) = (f(a), f(b));
        if fa == T::zero() {
            push(a, &mut roots);
        }
        if fa * fb < T::zero() {
            let rising = fb > fa;
            for _ in 0..200 {
                let mid = (a + b) / T::lit(2.0);
                if mid <= a || mid >= b {
                    break;
                }
                if (f(mid) < T::zero()) == rising {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            push((a + b) / T::lit(2.0), &mut roots);
        }
        if fb == T::zero() {
            push(w[1], &mut roots);
        }
    }
    roots
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InflectionFlag {
    /// x* is an interior local minimum of the fitted curve.
    StationaryMin,
    /// No interior local minimum; x* is the range end where the curve is lower.
    RangeEdge,
}

impl InflectionFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            InflectionFlag::StationaryMin => "stationary_min",
            InflectionFlag::RangeEdge => "range_edge",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inflection<T> {
    pub x: T,
    pub flag: InflectionFlag,
}

/// Inversion point of a fitted curve over `x_range`: the largest in-range
/// stationary point with positive curvature, below which the curve turns
/// upward as x decreases.
///
/// Without such a point the curve is monotone or concave over the range and
/// x* is the end where it is lower: the lower edge for a curve that keeps
/// tracking downwards, the upper edge for one that rises all the way down.
pub fn inflection_point<T: Scalar>(coeffs: &[T], x_range: (T, T)) -> Inflection<T> {
    let (lo, hi) = x_range;
    let d1 = poly_derivative(coeffs);
    let d2 = poly_derivative(&d1);
    let span = (hi - lo).abs().max(T::one());
    let curvature_tol = T::epsilon().sqrt() * coeffs.iter().fold(T::zero(), |a, c| a.max(c.abs())) / span;
    let minimum = real_roots_in(&d1, lo, hi)
        .into_iter()
        .rev()
        .find(|&r| poly_eval(&d2, r) > curvature_tol);
    match minimum {
        Some(x) => Inflection {
            x,
            flag: InflectionFlag::StationaryMin,
        },
        None => {
            let x = if poly_eval(coeffs, hi) < poly_eval(coeffs, lo) { hi } else { lo };
            Inflection {
                x,
                flag: InflectionFlag::RangeEdge,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveParams {
    pub bins: usize,
    pub window: usize,
    pub degree: usize,
}

impl Default for CurveParams {
    fn default() -> Self {
        CurveParams {
            bins: DEFAULT_BINS,
            window: DEFAULT_WINDOW,
            degree: DEFAULT_DEGREE,
        }
    }
}

/// Output of the bin → smooth → fit pipeline for one point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveFit<T> {
    pub bins: Vec<Bin<T>>,
    pub smoothed: Vec<(T, T)>,
    pub x_range: (T, T),
    pub fit: Result<PolyFit<T>, CurveError>,
    pub inflection: Option<Inflection<T>>,
}

impl<T: Scalar> CurveFit<T> {
    /// Fitted value at every occupied bin center, when the fit succeeded.
    pub fn fitted(&self) -> Option<Vec<T>> {
        let fit = self.fit.as_ref().ok()?;
        Some(self.bins.iter().map(|b| poly_eval(&fit.coeffs, b.center)).collect())
    }
}

/// Bins the points, smooths the bin means and fits the polynomial on the
/// bin centers (unweighted).
pub fn fit_curve<T: Scalar>(points: &[(T, T)], params: &CurveParams) -> CurveFit<T> {
    let bins = bin_points(points, params.bins);
    let series: Vec<(T, T)> = bins.iter().map(|b| (b.center, b.mean)).collect();
    let smoothed = rolling_mean(&series, params.window);
    let x_range = if points.is_empty() {
        (T::zero(), T::zero())
    } else {
        x_range(points)
    };
    let xs: Vec<T> = smoothed.iter().map(|p| p.0).collect();
    let ys: Vec<T> = smoothed.iter().map(|p| p.1).collect();
    let fit = polyfit(&xs, &ys, params.degree);
    let inflection = fit.as_ref().ok().map(|f| inflection_point(&f.coeffs, x_range));
    CurveFit {
        bins,
        smoothed,
        x_range,
        fit,
        inflection,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution as _, Normal};

    #[test]
    fn identical_x_gives_one_bin() {
        let bins = bin_points(&[(1.5, 2.0), (1.5, 4.0)], 200);
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].mean, 3.0);
        assert_eq!(bins[0].count, 2);
    }

    #[test]
    fn range_ends_land_in_first_and_last_bins() {
        let bins = bin_points(&[(0.0, 1.0), (3.0, 2.0)], 200);
        assert_eq!(bins.iter().map(|b| b.index).collect::<Vec<_>>(), vec![0, 199]);
    }

    #[test]
    fn boundary_goes_to_higher_bin() {
        // width 1 over [0, 4]: x = 2 sits on the boundary of bins 1 and 2
        let bins = bin_points(&[(0.0, 0.0), (2.0, 5.0), (4.0, 0.0)], 4);
        assert_eq!(bins[1].index, 2);
        assert_eq!(bins[1].mean, 5.0);
    }

    #[test]
    fn uniform_points_spread_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let pts: Vec<(f64, f64)> = (0..1000)
            .map(|_| (rng.random_range(0.0..1.0), 2.0 + noise.sample(&mut rng)))
            .collect();
        let bins = bin_points(&pts, 200);
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 1000);
        let mean_count = 1000.0 / bins.len() as f64;
        assert!((4.0..=6.0).contains(&mean_count), "{mean_count}");
        let facet_mean = pts.iter().map(|p| p.1).sum::<f64>() / 1000.0;
        for b in &bins {
            let sigma = 1.0 / (b.count as f64).sqrt();
            assert!((b.mean - facet_mean).abs() <= 3.0 * sigma + 0.2, "{b:?}");
        }
    }

    #[test]
    fn rolling_constant_is_unchanged() {
        let s: Vec<(f64, f64)> = (0..50).map(|i| (i as f64, 3.25)).collect();
        assert_eq!(rolling_mean(&s, 30), s);
    }

    #[test]
    fn rolling_short_series_keeps_length() {
        let s: Vec<(f64, f64)> = (0..7).map(|i| (i as f64, i as f64)).collect();
        let r = rolling_mean(&s, 30);
        assert_eq!(r.len(), 7);
        // symmetric truncation keeps a linear series linear
        for (a, b) in r.iter().zip(&s) {
            assert_abs_diff_eq!(a.1, b.1, epsilon = 1e-12);
        }
        // the middle point sees the whole series
        assert_abs_diff_eq!(r[3].1, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn rolling_impulse_spreads_thin() {
        let n = 101;
        let s: Vec<(f64, f64)> = (0..n).map(|i| (i as f64, if i == 50 { 1.0 } else { 0.0 })).collect();
        let r = rolling_mean(&s, 30);
        // direct convolution: output i averages inputs i-15..=i+14
        for (i, p) in r.iter().enumerate() {
            let expect = if (i as i64 - 15..=i as i64 + 14).contains(&50) { 1.0 / 30.0 } else { 0.0 };
            assert_abs_diff_eq!(p.1, expect, epsilon = 1e-15);
            assert!(p.1 <= 1.0 / 30.0 + 1e-15);
        }
        let total: f64 = r.iter().map(|p| p.1).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn exact_quartic_recovery() {
        let truth = [1.0, 0.0, -2.0, 0.0, 1.0];
        let xs = [-1.5, -0.5, 0.25, 1.0, 2.0];
        let ys: Vec<f64> = xs.iter().map(|&x| poly_eval(&truth, x)).collect();
        let fit = polyfit(&xs, &ys, 4).unwrap();
        for (c, t) in fit.coeffs.iter().zip(&truth) {
            assert_abs_diff_eq!(*c, *t, epsilon = 1e-8);
        }
        assert!(fit.residual_norm < 1e-10);
    }

    #[test]
    fn constant_fit() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.3 + 10.0).collect();
        let ys = vec![2.5; 20];
        let fit = polyfit(&xs, &ys, 4).unwrap();
        assert_abs_diff_eq!(fit.coeffs[0], 2.5, epsilon = 1e-10);
        for c in &fit.coeffs[1..] {
            assert_abs_diff_eq!(*c, 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn noisy_quartic_within_five_sigma() {
        let truth = [0.5, -1.0, 0.3, 0.2, -0.1];
        let sigma = 0.01;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let noise = Normal::new(0.0, sigma).unwrap();
        let xs: Vec<f64> = (0..500).map(|i| -1.0 + 2.0 * i as f64 / 499.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| poly_eval(&truth, x) + noise.sample(&mut rng)).collect();
        let fit = polyfit(&xs, &ys, 4).unwrap();
        // standard errors on [-1, 1] with 500 points stay below ~20σ/√500 for a
        // quartic basis; 5σ of the noise is the looser bound asked for
        for (c, t) in fit.coeffs.iter().zip(&truth) {
            assert!((c - t).abs() <= 5.0 * sigma, "{c} vs {t}");
        }
    }

    #[test]
    fn too_few_and_degenerate_inputs() {
        assert_eq!(
            polyfit(&[1.0, 1.0, 2.0, 3.0, 3.0], &[0.0; 5], 4),
            Err(CurveError::TooFewPoints { needed: 5, got: 3 })
        );
        assert_eq!(polyfit(&[1.0, f64::NAN], &[0.0, 0.0], 1), Err(CurveError::NonFinite));
    }

    #[test]
    fn f32_fit_works() {
        let xs: Vec<f32> = (0..10).map(|i| i as f32).collect();
        let ys: Vec<f32> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let fit = polyfit(&xs, &ys, 1).unwrap();
        assert!((fit.coeffs[0] - 1.0).abs() < 1e-4 && (fit.coeffs[1] - 2.0).abs() < 1e-4);
    }

    #[test]
    fn parabola_minimum() {
        // (x - 2)^2 + 1 = x^2 - 4x + 5
        let inf = inflection_point(&[5.0, -4.0, 1.0, 0.0, 0.0], (0.0, 4.0));
        assert_eq!(inf.flag, InflectionFlag::StationaryMin);
        assert_abs_diff_eq!(inf.x, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn increasing_curve_is_range_edge() {
        let inf = inflection_point(&[0.1, 1.0, 0.001, 0.0, 1e-5], (0.5, 3.5));
        assert_eq!(inf, Inflection { x: 0.5, flag: InflectionFlag::RangeEdge });
    }

    #[test]
    fn decreasing_curve_picks_upper_edge() {
        let inf = inflection_point(&[5.0, -1.0, 0.0, 0.0, 0.0], (0.5, 3.5));
        assert_eq!(inf, Inflection { x: 3.5, flag: InflectionFlag::RangeEdge });
    }

    #[test]
    fn double_well_takes_the_upper_minimum() {
        // (x-1)^2 (x-3)^2 = x^4 - 8x^3 + 22x^2 - 24x + 9
        let coeffs = [9.0, -24.0, 22.0, -8.0, 1.0];
        let inf = inflection_point(&coeffs, (0.0, 4.0));
        assert_eq!(inf.flag, InflectionFlag::StationaryMin);
        assert_abs_diff_eq!(inf.x, 3.0, epsilon = 1e-9);
        // dense grid: both wells are minima of equal depth, so look at the right half
        let grid_min = (0..=20_000)
            .map(|i| 2.0 + 2.0 * i as f64 / 20_000.0)
            .min_by(|a, b| poly_eval(&coeffs, *a).partial_cmp(&poly_eval(&coeffs, *b)).unwrap())
            .unwrap();
        assert_abs_diff_eq!(grid_min, inf.x, epsilon = 1e-3);
    }

    #[test]
    fn roots_of_cubic() {
        // (x-1)(x-2)(x-3)
        let roots = real_roots_in(&[-6.0, 11.0, -6.0, 1.0], 0.0, 4.0);
        assert_eq!(roots.len(), 3);
        for (r, e) in roots.iter().zip([1.0, 2.0, 3.0]) {
            assert_abs_diff_eq!(*r, e, epsilon = 1e-12);
        }
        assert_eq!(real_roots_in(&[-6.0, 11.0, -6.0, 1.0], 1.5, 1.9), Vec::<f64>::new());
    }

    #[test]
    fn identity_points_track_x_equals_y() {
        let pts: Vec<(f64, f64)> = (0..3000).map(|i| {
            let x = 0.5 + 3.0 * i as f64 / 2999.0;
            (x, x)
        }).collect();
        let fit = fit_curve(&pts, &CurveParams::default());
        let fitted = fit.fitted().unwrap();
        for (b, y) in fit.bins.iter().zip(fitted) {
            assert!((y - b.center).abs() < 0.01);
        }
        assert_eq!(fit.inflection.unwrap().flag, InflectionFlag::RangeEdge);
    }

    proptest! {
        #[test]
        fn binning_conserves_mass(pts in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..300), n in 1usize..250) {
            let bins = bin_points(&pts, n);
            prop_assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), pts.len());
            prop_assert!(!bins.is_empty());
        }

        #[test]
        fn rolling_preserves_mean_up_to_edges(ys in proptest::collection::vec(-10.0f64..10.0, 1..200), window in 1usize..40) {
            let s: Vec<(f64, f64)> = ys.iter().enumerate().map(|(i, &y)| (i as f64, y)).collect();
            let r = rolling_mean(&s, window);
            let n = ys.len() as f64;
            let before = ys.iter().sum::<f64>() / n;
            let after = r.iter().map(|p| p.1).sum::<f64>() / n;
            let max_abs = ys.iter().fold(0.0f64, |a, y| a.max(y.abs()));
            prop_assert!((before - after).abs() <= (window as f64 / 2.0) * max_abs / n + 1e-9);
        }
    }
}
