//! Brute-force references for the dual value and the limiting bound.

use utilfair::model::{CompositeModel, Dataset};

/// Model values on a uniform grid of a one-dimensional box.
pub struct InnerGrid {
    xs: Vec<f64>,
    utility: Vec<f64>,
    gap: Vec<f64>,
}

impl InnerGrid {
    pub fn new(model: &CompositeModel, points: usize) -> Self {
        assert_eq!(model.dim(), 1, "the grid oracle is one-dimensional");
        let (lo, hi) = (model.space().lower()[0], model.space().upper()[0]);
        let xs: Vec<f64> = (0..points)
            .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
            .collect();
        let utility = xs.iter().map(|x| model.eval_m(&[*x]).unwrap()).collect();
        let gap = xs.iter().map(|x| model.fairness_gap(&[*x]).unwrap()).collect();
        Self { xs, utility, gap }
    }

    fn h(&self, k: usize, xi: f64, lambda: f64, alpha: f64) -> f64 {
        let d = self.xs[k] - xi;
        d * d + alpha * self.gap[k] - lambda * self.utility[k]
    }

    /// Exhaustive grid minimum.
    pub fn scan(&self, xi: f64, lambda: f64, alpha: f64) -> f64 {
        (0..self.xs.len())
            .map(|k| self.h(k, xi, lambda, alpha))
            .fold(f64::INFINITY, f64::min)
    }

    /// Grid minimum by bisection on the sign of the forward difference.
    /// Exact when the inner objective is convex along the grid, which
    /// `scan` spot-checks.
    pub fn convex_min(&self, xi: f64, lambda: f64, alpha: f64) -> f64 {
        let (mut lo, mut hi) = (0, self.xs.len() - 1);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.h(mid + 1, xi, lambda, alpha) - self.h(mid, xi, lambda, alpha) >= 0.0 {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        self.h(lo, xi, lambda, alpha)
    }
}

/// `lambda r - alpha eps + mean_i min_grid h_i` at one multiplier.
pub fn dual_value(grid: &InnerGrid, data: &Dataset, r: f64, eps: f64, lambda: f64, alpha: f64) -> f64 {
    let sum: f64 = data
        .samples()
        .iter()
        .map(|s| grid.convex_min(s.x[0], lambda, alpha))
        .sum();
    lambda * r - alpha * eps + sum / data.len() as f64
}

/// Maximum of `f` over `[0, b]^2` from `per_axis^2` grids, zooming into
/// the neighbourhood of the best point until the cells are below `cell`.
pub fn grid_maximize(f: impl Fn(f64, f64) -> f64, b: f64, per_axis: usize, cell: f64) -> (f64, f64, f64) {
    const HALO: f64 = 8.0;
    let (mut lo, mut hi) = ([0.0, 0.0], [b, b]);
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    loop {
        let step = [(hi[0] - lo[0]) / (per_axis - 1) as f64, (hi[1] - lo[1]) / (per_axis - 1) as f64];
        for i in 0..per_axis {
            let l = lo[0] + step[0] * i as f64;
            for j in 0..per_axis {
                let a = lo[1] + step[1] * j as f64;
                let v = f(l, a);
                if v > best.0 {
                    best = (v, l, a);
                }
            }
        }
        if step[0].max(step[1]) < cell {
            return best;
        }
        for (axis, centre) in [best.1, best.2].into_iter().enumerate() {
            lo[axis] = (centre - HALO * step[axis]).max(0.0);
            hi[axis] = (centre + HALO * step[axis]).min(b);
        }
    }
}

/// Per-sample gradients of `M` and of `pi_1 - pi_0`, straight from the
/// model.
pub struct Gradients {
    rows: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    pub fn new(model: &CompositeModel, data: &Dataset) -> Self {
        let rows = data
            .samples()
            .iter()
            .map(|s| {
                let gm = model.eval_grad_m(&s.x).unwrap();
                let gd = model.diff_grad(&s.x).unwrap();
                (gm, gd)
            })
            .collect();
        Self { rows }
    }

    /// `zeta' A(zeta) zeta / 4` for the plus (`sign = -1`) or minus
    /// (`sign = 1`) branch, where a sample enters when
    /// `zeta_1 DM.Dd + sign zeta_2 |Dd|^2` is nonnegative (plus) or
    /// negative (minus).
    pub fn penalty(&self, z: [f64; 2], sign: f64) -> f64 {
        let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        let mut total = 0.0;
        for (gm, gd) in &self.rows {
            let s = z[0] * dot(gm, gd) + sign * z[1] * dot(gd, gd);
            let active = if sign < 0.0 { s >= 0.0 } else { s < 0.0 };
            if active {
                let v: Vec<f64> = gm.iter().zip(gd).map(|(m, d)| z[0] * m + sign * z[1] * d).collect();
                total += dot(&v, &v);
            }
        }
        0.25 * total / self.rows.len() as f64
    }
}

/// Penalties of both branches on a `per_axis^2` grid over `[0, cap]^2`,
/// shared by every draw.
pub struct BoundGrid {
    points: Vec<[f64; 2]>,
    penalties: Vec<[f64; 2]>,
}

impl BoundGrid {
    pub fn new(g: &Gradients, cap: f64, per_axis: usize) -> Self {
        let mut points = Vec::with_capacity(per_axis * per_axis);
        let mut penalties = Vec::with_capacity(per_axis * per_axis);
        for i in 0..per_axis {
            for j in 0..per_axis {
                let z = [
                    cap * i as f64 / (per_axis - 1) as f64,
                    cap * j as f64 / (per_axis - 1) as f64,
                ];
                points.push(z);
                penalties.push([g.penalty(z, -1.0), g.penalty(z, 1.0)]);
            }
        }
        Self { points, penalties }
    }

    pub fn bound(&self, w: [f64; 2]) -> f64 {
        self.branch(w, 0).max(self.branch(w, 1))
    }

    /// Grid maximum of one branch: 0 for plus, 1 for minus.
    pub fn branch(&self, w: [f64; 2], index: usize) -> f64 {
        self.points
            .iter()
            .zip(&self.penalties)
            .map(|(z, p)| z[0] * w[0] + z[1] * w[1] - p[index])
            .fold(0.0, f64::max)
    }
}
