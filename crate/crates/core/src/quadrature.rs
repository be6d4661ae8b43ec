//! Uniform grids and composite-Simpson quadrature.

use serde::{Deserialize, Serialize};

/// Uniform grid on `[0, t_max]` with `n_intervals + 1` sample points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformGrid {
    t_max: f64,
    n_intervals: usize,
}

impl UniformGrid {
    pub fn new(t_max: f64, n_intervals: usize) -> Self {
        assert!(t_max > 0.0 && n_intervals >= 2, "grid needs t_max > 0 and at least 2 intervals");
        Self { t_max, n_intervals }
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn dt(&self) -> f64 {
        self.t_max / self.n_intervals as f64
    }

    pub fn n_intervals(&self) -> usize {
        self.n_intervals
    }

    /// Number of sample points (`n_intervals + 1`).
    pub fn len(&self) -> usize {
        self.n_intervals + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|i| self.time(i))
    }

    /// Index of the last grid point at or before `t` (clamped to the grid).
    /// Times within rounding distance of a grid point snap to it.
    pub fn floor_index(&self, t: f64) -> usize {
        if t <= 0.0 {
            return 0;
        }
        let x = t / self.dt();
        let r = x.round();
        let i = if (x - r).abs() <= 1e-9 * r.max(1.0) { r as usize } else { x as usize };
        i.min(self.n_intervals)
    }

    pub fn sample<F: FnMut(f64) -> f64>(&self, mut f: F) -> Vec<f64> {
        self.times().map(|t| f(t)).collect()
    }
}

/// Cumulative integral of uniformly sampled values, globally fourth order.
///
/// Even points are anchored by composite Simpson pairs; odd points add the
/// integral of the parabola through the surrounding three samples to the even
/// anchor, so no low-order error accumulates. Returns one value per sample,
/// starting at 0.
pub fn cumulative(values: &[f64], dt: f64) -> Vec<f64> {
    let n = values.len();
    assert!(n >= 3, "cumulative integral needs at least 3 samples");
    let mut acc = vec![0.0; n];
    let mut i = 0;
    while i + 2 < n {
        let (f0, f1, f2) = (values[i], values[i + 1], values[i + 2]);
        acc[i + 1] = acc[i] + dt / 12.0 * (5.0 * f0 + 8.0 * f1 - f2);
        acc[i + 2] = acc[i] + dt / 3.0 * (f0 + 4.0 * f1 + f2);
        i += 2;
    }
    if i + 1 < n {
        // odd interval count: close the last interval with the trailing parabola
        let (f0, f1, f2) = (values[n - 3], values[n - 2], values[n - 1]);
        acc[n - 1] = acc[n - 2] + dt / 12.0 * (-f0 + 8.0 * f1 + 5.0 * f2);
    }
    acc
}

/// Definite integral over the whole sample range (composite Simpson).
pub fn integrate(values: &[f64], dt: f64) -> f64 {
    *cumulative(values, dt).last().unwrap()
}

/// [`cumulative`] for non-negative integrands, guaranteed non-decreasing.
///
/// Even anchors are already monotone for non-negative samples (Simpson pair
/// weights are positive); odd points are clamped into the envelope of their
/// even neighbours, which only acts on parabola overshoot at jump
/// discontinuities.
pub fn cumulative_monotone(values: &[f64], dt: f64) -> Vec<f64> {
    let mut acc = cumulative(values, dt);
    let n = acc.len();
    for i in (1..n).step_by(2) {
        let lo = acc[i - 1];
        let hi = if i + 1 < n { acc[i + 1].max(lo) } else { f64::INFINITY };
        acc[i] = acc[i].clamp(lo, hi);
    }
    acc
}

/// Cubic Hermite interpolation on a uniform grid given values and exact
/// derivatives at the sample points. Clamps outside the grid range.
pub fn hermite_interpolate(grid: &UniformGrid, values: &[f64], derivs: &[f64], t: f64) -> f64 {
    debug_assert_eq!(values.len(), grid.len());
    debug_assert_eq!(derivs.len(), grid.len());
    if t <= 0.0 {
        return values[0];
    }
    if t >= grid.t_max() {
        return values[grid.n_intervals()];
    }
    let dt = grid.dt();
    let i = grid.floor_index(t).min(grid.n_intervals() - 1);
    let s = (t - grid.time(i)) / dt;
    let (s2, s3) = (s * s, s * s * s);
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    h00 * values[i] + h10 * dt * derivs[i] + h01 * values[i + 1] + h11 * dt * derivs[i + 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_basics() {
        let g = UniformGrid::new(2.0, 4);
        assert_eq!(g.dt(), 0.5);
        assert_eq!(g.len(), 5);
        assert_eq!(g.time(3), 1.5);
        assert_eq!(g.floor_index(1.7), 3);
        assert_eq!(g.floor_index(9.0), 4);
    }

    #[test]
    fn cumulative_is_fourth_order_on_exp() {
        // reference: \int_0^t e^{-s} ds = 1 - e^{-t}
        let err = |n: usize| {
            let g = UniformGrid::new(5.0, n);
            let vals = g.sample(|t| (-t).exp());
            let acc = cumulative(&vals, g.dt());
            g.times()
                .enumerate()
                .map(|(i, t)| (acc[i] - (1.0 - (-t).exp())).abs())
                .fold(0.0, f64::max)
        };
        let (e200, e400) = (err(200), err(400));
        assert!(e200 < 5e-8, "err(200) = {e200:e}");
        assert!(e400 < e200 / 8.0, "not fourth order: {e200:e} -> {e400:e}");
    }

    #[test]
    fn integrate_polynomial_exactly() {
        // Simpson is exact on cubics.
        let g = UniformGrid::new(1.0, 10);
        let vals = g.sample(|t| t * t * t);
        assert!((integrate(&vals, g.dt()) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn odd_interval_count_supported() {
        let g = UniformGrid::new(1.0, 5);
        let vals = g.sample(|t| t * t);
        assert!((integrate(&vals, g.dt()) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn monotone_cumulative_handles_node_aligned_jumps() {
        // step function dropping to zero at an even node: even anchors stay
        // exact and the result is non-decreasing
        let g = UniformGrid::new(1.0, 100);
        let vals = g.sample(|t| {
            if (t - 0.5).abs() < 1e-12 {
                0.5
            } else if t < 0.5 {
                1.0
            } else {
                0.0
            }
        });
        let acc = cumulative_monotone(&vals, g.dt());
        assert!((acc.last().unwrap() - 0.5).abs() < 1e-15);
        assert!(acc.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn hermite_reproduces_cubics() {
        let g = UniformGrid::new(2.0, 8);
        let vals = g.sample(|t| t * t * t - t);
        let derivs = g.sample(|t| 3.0 * t * t - 1.0);
        for &t in &[0.13, 0.77, 1.01, 1.93] {
            let exact = t * t * t - t;
            assert!((hermite_interpolate(&g, &vals, &derivs, t) - exact).abs() < 1e-13);
        }
        // clamped outside the range
        assert_eq!(hermite_interpolate(&g, &vals, &derivs, 3.0), vals[8]);
    }
}
