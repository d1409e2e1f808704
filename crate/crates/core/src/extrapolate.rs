//! Limit extrapolation and convergence-rate fitting.

use crate::{Error, Result};

/// Polynomial extrapolation of `values[i] ≈ f(steps[i])` to `step = 0`
/// (Neville's scheme). With `steps = 1/r` this removes the `1/r, 1/r², …`
/// tail terms of a radius ladder.
pub fn richardson_to_zero(steps: &[f64], values: &[f64]) -> Result<f64> {
    if steps.len() != values.len() || steps.is_empty() {
        return Err(Error::InvalidParameter(
            "extrapolation needs matching, non-empty step and value lists".into(),
        ));
    }
    let mut p = values.to_vec();
    let n = p.len();
    for level in 1..n {
        for i in 0..(n - level) {
            let (hi, hj) = (steps[i], steps[i + level]);
            if hi == hj {
                return Err(Error::InvalidParameter("repeated extrapolation step".into()));
            }
            p[i] = (hj * p[i] - hi * p[i + 1]) / (hj - hi);
        }
    }
    Ok(p[0])
}

/// Report for a ladder extrapolation in `1/r`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LadderExtrapolation {
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    pub limit: f64,
    /// `|limit - last value|`, an estimate of the tail left after the ladder.
    pub tail_estimate: f64,
    /// Successive increments shrink (or vanish).
    pub converged: bool,
}

pub fn extrapolate_ladder(radii: &[f64], values: &[f64]) -> Result<LadderExtrapolation> {
    if radii.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter(
            "radius ladder must be strictly increasing".into(),
        ));
    }
    let steps: Vec<f64> = radii.iter().map(|r| 1.0 / r).collect();
    // `+ 0.0` turns a `-0.0` limit of an all-zero ladder into `0.0`
    let limit = richardson_to_zero(&steps, values)? + 0.0;
    let last = *values.last().unwrap();
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let increments: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let converged = increments
        .windows(2)
        .all(|w| w[1] <= w[0] || w[1] <= 1e-13 * scale);
    Ok(LadderExtrapolation {
        radii: radii.to_vec(),
        values: values.to_vec(),
        limit,
        tail_estimate: (limit - last).abs(),
        converged,
    })
}

/// Least-squares line through `(ln x, ln y)`; returns `(slope, intercept)`.
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidParameter("log-log fit needs at least two points".into()));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameter("log-log fit needs positive data".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}
