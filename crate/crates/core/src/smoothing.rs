//! Scattered-data smoothing: robust locally weighted linear regression
//! (LOWESS with tricube weights and bisquare robustness reweighting) and the
//! Akima cubic spline interpolant used to turn smoothed samples into a
//! continuous curve.

use crate::types::{Error, Result};

/// Locally weighted linear regression evaluated at the sample points.
///
/// For each x_i the `span_fraction` share of nearest neighbors is fit with a
/// weighted straight line (tricube weights in distance, re-weighted
/// `robustness_iters` times with bisquare weights on the residuals) and the
/// fit's value at x_i is returned.
pub fn lowess_smooth(
    xs: &[f64],
    ys: &[f64],
    span_fraction: f64,
    robustness_iters: usize,
) -> Result<Vec<f64>> {
    let n = xs.len();
    if n < 2 {
        return Err(Error::InvalidConfig(
            "lowess needs at least 2 points".into(),
        ));
    }
    if ys.len() != n {
        return Err(Error::InvalidConfig(format!(
            "lowess got {n} x values but {} y values",
            ys.len()
        )));
    }
    if xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig(
            "lowess x values must be strictly increasing".into(),
        ));
    }
    if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("lowess inputs must be finite".into()));
    }
    if !(span_fraction > 0.0 && span_fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "span fraction must lie in (0, 1], got {span_fraction}"
        )));
    }
    let k = ((span_fraction * n as f64).ceil() as usize).clamp(2, n);

    let mut robustness = vec![1.0; n];
    let mut fitted = vec![0.0; n];
    for iter in 0..=robustness_iters {
        for i in 0..n {
            let (lo, hi) = neighbor_window(xs, i, k);
            fitted[i] = local_linear_fit(xs, ys, &robustness, i, lo, hi);
        }
        if iter == robustness_iters {
            break;
        }
        // bisquare reweighting against the residual scale
        let mut abs_resid: Vec<f64> = ys
            .iter()
            .zip(&fitted)
            .map(|(y, f)| (y - f).abs())
            .collect();
        let s = median_in_place(&mut abs_resid);
        if s <= f64::EPSILON * ys.iter().fold(0.0f64, |a, y| a.max(y.abs())).max(1.0) {
            break; // residuals are numerically zero: nothing left to demote
        }
        for (r, (y, f)) in robustness.iter_mut().zip(ys.iter().zip(&fitted)) {
            let u = (y - f) / (6.0 * s);
            *r = if u.abs() < 1.0 {
                let t = 1.0 - u * u;
                t * t
            } else {
                0.0
            };
        }
    }
    Ok(fitted)
}

/// Contiguous window of the k nearest neighbors of xs[i] (points are sorted).
fn neighbor_window(xs: &[f64], i: usize, k: usize) -> (usize, usize) {
    let n = xs.len();
    let (mut lo, mut hi) = (i, i);
    while hi - lo + 1 < k {
        let extend_left = if lo == 0 {
            false
        } else if hi == n - 1 {
            true
        } else {
            xs[i] - xs[lo - 1] <= xs[hi + 1] - xs[i]
        };
        if extend_left {
            lo -= 1;
        } else {
            hi += 1;
        }
    }
    (lo, hi)
}

fn local_linear_fit(
    xs: &[f64],
    ys: &[f64],
    robustness: &[f64],
    i: usize,
    lo: usize,
    hi: usize,
) -> f64 {
    let xi = xs[i];
    let dmax = (xi - xs[lo]).max(xs[hi] - xi);
    let (mut sw, mut swx, mut swy, mut swxx, mut swxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for j in lo..=hi {
        let d = (xs[j] - xi).abs();
        let tri = if dmax > 0.0 {
            let t = 1.0 - (d / dmax).powi(3);
            if t <= 0.0 {
                0.0
            } else {
                t * t * t
            }
        } else {
            1.0
        };
        let w = tri * robustness[j];
        let dx = xs[j] - xi;
        sw += w;
        swx += w * dx;
        swy += w * ys[j];
        swxx += w * dx * dx;
        swxy += w * dx * ys[j];
    }
    if sw <= 0.0 {
        // every neighbor was demoted to zero weight; fall back to the
        // unweighted local mean so the fit stays defined
        let cnt = (hi - lo + 1) as f64;
        return ys[lo..=hi].iter().sum::<f64>() / cnt;
    }
    let det = sw * swxx - swx * swx;
    let scale = sw * swxx.abs().max(swx * swx);
    if det.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        swy / sw
    } else {
        // intercept of the centered fit = value at x_i
        (swxx * swy - swx * swxy) / det
    }
}

fn median_in_place(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Akima's cubic interpolant: local slope construction that avoids the
/// overshoot of global cubic splines near outlier-ish knots. Evaluation
/// outside the knot span clamps to the boundary value.
#[derive(Debug, Clone, PartialEq)]
pub struct AkimaSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    node_slopes: Vec<f64>,
}

impl AkimaSpline {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        let n = xs.len();
        if n < 2 {
            return Err(Error::InvalidConfig(
                "akima spline needs at least 2 knots".into(),
            ));
        }
        if ys.len() != n {
            return Err(Error::InvalidConfig(format!(
                "akima got {n} x values but {} y values",
                ys.len()
            )));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(
                "akima knots must be strictly increasing".into(),
            ));
        }
        if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("akima inputs must be finite".into()));
        }
        // segment slopes extended by two ghost slopes on each side
        // (linear extrapolation of the slope sequence, Akima's original rule)
        let segs = n - 1;
        let mut m = vec![0.0; segs + 4];
        for i in 0..segs {
            m[i + 2] = (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]);
        }
        m[1] = 2.0 * m[2] - m[3.min(segs + 1)];
        m[0] = 2.0 * m[1] - m[2];
        m[segs + 2] = 2.0 * m[segs + 1] - m[segs];
        m[segs + 3] = 2.0 * m[segs + 2] - m[segs + 1];

        let mut node_slopes = vec![0.0; n];
        for i in 0..n {
            // node i sees segment slopes m[i..i+4] in the extended array
            let w1 = (m[i + 3] - m[i + 2]).abs();
            let w2 = (m[i + 1] - m[i]).abs();
            node_slopes[i] = if w1 + w2 > 0.0 {
                (w1 * m[i + 1] + w2 * m[i + 2]) / (w1 + w2)
            } else {
                0.5 * (m[i + 1] + m[i + 2])
            };
        }
        Ok(AkimaSpline { xs, ys, node_slopes })
    }

    pub fn knot_span(&self) -> (f64, f64) {
        (self.xs[0], *self.xs.last().unwrap())
    }

    /// Cubic Hermite evaluation; clamps to the boundary values outside the span.
    pub fn evaluate(&self, x: f64) -> f64 {
        if !x.is_finite() || x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= *self.xs.last().unwrap() {
            return *self.ys.last().unwrap();
        }
        let seg = match self
            .xs
            .binary_search_by(|v| v.partial_cmp(&x).unwrap())
        {
            Ok(i) => return self.ys[i],
            Err(i) => i - 1,
        };
        let h = self.xs[seg + 1] - self.xs[seg];
        let t = (x - self.xs[seg]) / h;
        let (y0, y1) = (self.ys[seg], self.ys[seg + 1]);
        let (s0, s1) = (self.node_slopes[seg], self.node_slopes[seg + 1]);
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * y0 + h10 * h * s0 + h01 * y1 + h11 * h * s1
    }
}
