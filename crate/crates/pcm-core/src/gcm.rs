//! Discrete greatest-convex-minorant oracle on 1D grids: the lower convex
//! envelope of sampled function values, plus slice-wise checks of the
//! minorant's minimum-preservation and continuity behavior. Test support
//! only; nothing here runs inside training.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GcmError {
    #[error("grid function needs at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("grid points must be strictly increasing and finite")]
    BadGrid,
}

/// Function values sampled on a strictly increasing 1D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    us: Vec<f64>,
    fs: Vec<f64>,
}

impl GridFunction {
    pub fn new(us: Vec<f64>, fs: Vec<f64>) -> Result<Self, GcmError> {
        if us.len() < 2 {
            return Err(GcmError::TooFewPoints(us.len()));
        }
        if us.len() != fs.len() {
            return Err(GcmError::BadGrid);
        }
        if us.windows(2).any(|w| !(w[0] < w[1])) || us.iter().chain(&fs).any(|v| !v.is_finite()) {
            return Err(GcmError::BadGrid);
        }
        Ok(GridFunction { us, fs })
    }

    /// Uniform grid of `n` points over `[lo, hi]` sampling `f`.
    pub fn sample(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> Result<Self, GcmError> {
        if n < 2 {
            return Err(GcmError::TooFewPoints(n));
        }
        let us: Vec<f64> = (0..n)
            .map(|i| lo + (hi - lo) * (i as f64) / ((n - 1) as f64))
            .collect();
        let fs = us.iter().map(|&u| f(u)).collect();
        GridFunction::new(us, fs)
    }

    pub fn grid(&self) -> &[f64] {
        &self.us
    }

    pub fn values(&self) -> &[f64] {
        &self.fs
    }

    pub fn len(&self) -> usize {
        self.us.len()
    }

    pub fn min_value(&self) -> f64 {
        self.fs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Indices attaining the grid minimum exactly.
    pub fn argmin_indices(&self) -> Vec<usize> {
        let min = self.min_value();
        (0..self.len()).filter(|&i| self.fs[i] == min).collect()
    }
}

/// Lower convex envelope of the point set `(u_i, f_i)`, resampled on the
/// same grid: the greatest convex function below the data.
///
/// Monotone-chain lower hull in O(n). Hull vertices keep their values
/// bitwise; interior points interpolate along the hull edge and are clamped
/// to the data so the minorant property is structural, not numerical.
pub fn lower_convex_envelope(g: &GridFunction) -> GridFunction {
    let n = g.len();
    let us = &g.us;
    let fs = &g.fs;
    // pop the middle point while it lies strictly above the chord
    // (cross < 0); collinear vertices stay, which costs nothing
    let mut hull: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            let cross = (us[b] - us[a]) * (fs[i] - fs[a]) - (us[i] - us[a]) * (fs[b] - fs[a]);
            if cross >= 0.0 {
                break;
            }
            hull.pop();
        }
        hull.push(i);
    }

    let mut env = vec![0.0; n];
    let mut seg = 0;
    for i in 0..n {
        while hull[seg + 1] < i {
            seg += 1;
        }
        let a = hull[seg];
        let b = hull[seg + 1];
        if i == a || i == b {
            env[i] = fs[i];
        } else {
            let t = (us[i] - us[a]) / (us[b] - us[a]);
            env[i] = (fs[a] + t * (fs[b] - fs[a])).min(fs[i]);
        }
    }
    GridFunction {
        us: us.clone(),
        fs: env,
    }
}

/// Report of one slice check: envelope versus function minima on a grid.
#[derive(Debug, Clone)]
pub struct SliceReport {
    pub min_function: f64,
    pub min_envelope: f64,
    /// Every grid argmin of the function is a grid argmin of the envelope.
    pub argmin_included: bool,
    /// Largest amount by which the envelope exceeds the function (never
    /// positive: the envelope is a minorant by construction).
    pub max_excess: f64,
}

impl SliceReport {
    pub fn minima_equal(&self) -> bool {
        self.min_function == self.min_envelope
    }
}

/// Checks, for one parameter value `x`, that the envelope of the slice
/// `f(x, .)` preserves the grid minimum and includes the function's argmin.
pub fn pgcm_slice_check(
    f: impl Fn(&[f64], f64) -> f64,
    x: &[f64],
    u_lo: f64,
    u_hi: f64,
    points: usize,
) -> Result<SliceReport, GcmError> {
    let slice = GridFunction::sample(|u| f(x, u), u_lo, u_hi, points)?;
    let env = lower_convex_envelope(&slice);
    let f_argmins = slice.argmin_indices();
    let env_min = env.min_value();
    let argmin_included = f_argmins.iter().all(|&i| env.values()[i] == env_min);
    let max_excess = env
        .values()
        .iter()
        .zip(slice.values())
        .map(|(e, v)| e - v)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(SliceReport {
        min_function: slice.min_value(),
        min_envelope: env_min,
        argmin_included,
        max_excess,
    })
}

/// Sup-distance between envelope slices at parameter pairs of shrinking
/// separation; for continuous `f` the distances should trend to zero.
pub fn pgcm_continuity_probe(
    f: impl Fn(&[f64], f64) -> f64,
    x_pairs: &[(Vec<f64>, Vec<f64>)],
    u_lo: f64,
    u_hi: f64,
    points: usize,
) -> Result<Vec<(f64, f64)>, GcmError> {
    let mut out = Vec::with_capacity(x_pairs.len());
    for (xa, xb) in x_pairs {
        let env_a = lower_convex_envelope(&GridFunction::sample(|u| f(xa, u), u_lo, u_hi, points)?);
        let env_b = lower_convex_envelope(&GridFunction::sample(|u| f(xb, u), u_lo, u_hi, points)?);
        let sep = xa
            .iter()
            .zip(xb)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let dist = env_a
            .values()
            .iter()
            .zip(env_b.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        out.push((sep, dist));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{named_stream, RngSeed};
    use rand::Rng;

    fn envelope_of(f: impl Fn(f64) -> f64, n: usize) -> (GridFunction, GridFunction) {
        let g = GridFunction::sample(f, -1.0, 1.0, n).unwrap();
        let e = lower_convex_envelope(&g);
        (g, e)
    }

    #[test]
    fn convex_data_is_a_fixed_point() {
        let (g, e) = envelope_of(|u| u * u, 101);
        assert_eq!(g.values(), e.values());
    }

    #[test]
    fn affine_data_is_a_fixed_point() {
        // sampled line is collinear only up to rounding, so popped points
        // re-interpolate within a few ulps
        let (g, e) = envelope_of(|u| 3.0 * u - 0.5, 64);
        for (gv, ev) in g.values().iter().zip(e.values()) {
            assert!((gv - ev).abs() <= 1e-12);
        }
    }

    #[test]
    fn tent_collapses_to_chord() {
        // (-1,-1), (0,0), (1,-1): the greatest affine minorant is -1
        let g = GridFunction::new(vec![-1.0, 0.0, 1.0], vec![-1.0, 0.0, -1.0]).unwrap();
        let e = lower_convex_envelope(&g);
        assert_eq!(e.values(), &[-1.0, -1.0, -1.0]);
    }

    #[test]
    fn envelope_is_below_and_idempotent() {
        let (g, e) = envelope_of(|u| (8.0 * u).sin() + 0.3 * u, 257);
        for (ev, gv) in e.values().iter().zip(g.values()) {
            assert!(ev <= gv);
        }
        let e2 = lower_convex_envelope(&e);
        for (a, b) in e.values().iter().zip(e2.values()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn envelope_is_midpoint_convex_on_uniform_grids() {
        let (_, e) = envelope_of(|u| (7.0 * u).cos() + u * u, 401);
        let v = e.values();
        for i in 1..v.len() - 1 {
            assert!(v[i] <= 0.5 * (v[i - 1] + v[i + 1]) + 1e-12);
        }
    }

    #[test]
    fn envelope_dominates_convex_minorants() {
        // random max-affine minorants of f must stay below the envelope
        let mut rng = named_stream(RngSeed(5), "gcm-greatest");
        let g = GridFunction::sample(|u| (6.0 * u).sin() + u * u, -1.0, 1.0, 101).unwrap();
        let env = lower_convex_envelope(&g);
        for _ in 0..100 {
            let lines: Vec<(f64, f64)> = (0..4)
                .map(|_| (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..0.0)))
                .collect();
            let raw: Vec<f64> = g
                .grid()
                .iter()
                .map(|&u| {
                    lines
                        .iter()
                        .map(|(a, b)| a * u + b)
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
            // shift down until it is a minorant of f on the grid
            let shift = raw
                .iter()
                .zip(g.values())
                .map(|(r, f)| r - f)
                .fold(f64::NEG_INFINITY, f64::max)
                .max(0.0);
            for (r, e) in raw.iter().zip(env.values()) {
                assert!(r - shift <= e + 1e-12);
            }
        }
    }

    #[test]
    fn slice_check_on_nonconvex_slice() {
        let f = |x: &[f64], u: f64| x[0] * x[0] + u * u + (2.0 * std::f64::consts::PI * u).sin();
        let report = pgcm_slice_check(f, &[0.0], -1.0, 1.0, 1001).unwrap();
        assert!(report.minima_equal());
        assert!(report.argmin_included);
        assert!(report.max_excess <= 0.0);
    }

    #[test]
    fn slice_check_on_concave_slice() {
        // concave slice: envelope is the chord, minima agree at a boundary
        let report = pgcm_slice_check(|_x, u| -u * u, &[0.0], -1.0, 1.0, 501).unwrap();
        assert!(report.minima_equal());
        assert!(report.argmin_included);
    }

    #[test]
    fn slice_check_on_convex_slice() {
        let report =
            pgcm_slice_check(|_x, u| (u - 0.3) * (u - 0.3), &[0.0], -1.0, 1.0, 501).unwrap();
        assert!(report.minima_equal());
        assert!(report.argmin_included);
        assert_eq!(report.max_excess, 0.0);
    }

    #[test]
    fn continuity_probe_x_independent_function_has_zero_distance() {
        let pairs = vec![
            (vec![0.0], vec![0.1]),
            (vec![0.0], vec![0.01]),
            (vec![0.0], vec![0.001]),
        ];
        let rows = pgcm_continuity_probe(|_x, u| u * u, &pairs, -1.0, 1.0, 301).unwrap();
        for (_, d) in rows {
            assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn continuity_probe_distance_shrinks_with_separation() {
        let f = |x: &[f64], u: f64| x[0] * x[0] + u * u + (2.0 * std::f64::consts::PI * u).sin();
        let pairs = vec![
            (vec![0.5], vec![0.6]),
            (vec![0.5], vec![0.51]),
            (vec![0.5], vec![0.501]),
        ];
        let rows = pgcm_continuity_probe(f, &pairs, -1.0, 1.0, 501).unwrap();
        assert!(rows[0].1 >= rows[1].1);
        assert!(rows[1].1 >= rows[2].1);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(GridFunction::new(vec![0.0], vec![1.0]).is_err());
        assert!(GridFunction::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(GridFunction::new(vec![1.0, 0.0], vec![1.0, 1.0]).is_err());
    }
}
