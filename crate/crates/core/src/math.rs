// Transcendental functions routed through libm so that results do not depend
// on whether the crate is built with or without std.
pub(crate) use libm::{cos, exp, expm1, floor, log as ln, sin, sqrt};

pub(crate) const PI: f64 = core::f64::consts::PI;

/// `ln(sum_j w_j exp(a_j))` with max-subtraction. Weights must be positive.
pub(crate) fn log_sum_exp_weighted(values: &[f64], weights: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = values
        .iter()
        .zip(weights)
        .map(|(&v, &w)| w * exp(v - max))
        .sum();
    max + ln(s)
}

/// Deterministic pairwise summation.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub(crate) fn wrap_periodic(x: f64, lower: f64, period: f64) -> f64 {
    let t = x - lower;
    let w = t - period * floor(t / period);
    // floor can leave w == period after rounding
    if w >= period {
        lower
    } else {
        lower + w
    }
}

/// Dot product with eight fixed accumulators so the loop vectorizes while the
/// summation order stays deterministic.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}
