//! The per-draw bound `max_branch sup_{0 <= zeta <= cap} zeta.w - zeta' A(zeta) zeta / 4`.
//!
//! The indicator sets behind `A(zeta)` depend only on the direction of
//! `zeta`, so the quadrant splits into angular sectors with a constant
//! matrix. Tables of those sectors are built once per score set and reused
//! for every draw.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use super::{BootstrapConfig, Branch, ScoreVectors, Sym2, MAX_CONDITION};

/// Angles closer than this to a sector edge are resolved by a direct scan.
const ANGLE_GUARD: f64 = 1e-12;

/// Relative shortfall of a fixed-point value, below the enumerated maximum,
/// still credited to the fixed-point route.
const FIXED_POINT_SLACK: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointResult {
    pub zeta: [f64; 2],
    /// `|T(zeta) - zeta|_inf` for the undamped map at the returned point.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The ridged moment matrix was too ill-conditioned to use.
    pub degenerate: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    FixedPoint,
    Enumeration,
    Dropped,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchBound {
    pub value: f64,
    pub route: Route,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub value: f64,
    pub plus: BranchBound,
    pub minus: BranchBound,
}

/// `zeta.w - zeta' A zeta / 4`
pub fn quadratic_value(w: [f64; 2], a: &Sym2, z: [f64; 2]) -> f64 {
    z[0] * w[0] + z[1] * w[1] - 0.25 * a.quad(z)
}

fn inside(poly: &[[f64; 2]], p: [f64; 2]) -> bool {
    let scale = poly
        .iter()
        .map(|v| v[0].abs().max(v[1].abs()))
        .fold(1.0, f64::max);
    (0..poly.len()).all(|k| {
        let a = poly[k];
        let b = poly[(k + 1) % poly.len()];
        let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        cross >= -1e-14 * scale * scale
    })
}

/// Maximize the concave quadratic `zeta.w - zeta' A zeta / 4` over a convex
/// polygon with counter-clockwise vertices: stationary point if feasible,
/// otherwise the best point on an edge.
pub fn maximize_on_polygon(w: [f64; 2], a: &Sym2, poly: &[[f64; 2]]) -> ([f64; 2], f64) {
    let mut best = (poly[0], quadratic_value(w, a, poly[0]));
    let mut offer = |z: [f64; 2]| {
        let v = quadratic_value(w, a, z);
        if v > best.1 {
            best = (z, v);
        }
    };
    if a.det() > 0.0 {
        if let Some(inv) = a.inverse() {
            let z = inv.apply([2.0 * w[0], 2.0 * w[1]]);
            if inside(poly, z) {
                offer(z);
            }
        }
    }
    for k in 0..poly.len() {
        let p0 = poly[k];
        let p1 = poly[(k + 1) % poly.len()];
        let e = [p1[0] - p0[0], p1[1] - p0[1]];
        offer(p1);
        // q(p0 + t e) = q(p0) + t (e.w - e'A p0 / 2) - t^2 e'A e / 4
        let slope = e[0] * w[0] + e[1] * w[1] - 0.5 * (e[0] * a.apply(p0)[0] + e[1] * a.apply(p0)[1]);
        let curv = 0.5 * a.quad(e);
        if curv > 0.0 {
            let t = (slope / curv).clamp(0.0, 1.0);
            offer([p0[0] + t * e[0], p0[1] + t * e[1]]);
        }
    }
    best
}

fn box_polygon(cap: f64) -> [[f64; 2]; 4] {
    [[0.0, 0.0], [cap, 0.0], [cap, cap], [0.0, cap]]
}

/// Where the ray along `dir` leaves `[0, cap]^2`.
fn ray_exit(dir: [f64; 2], cap: f64) -> [f64; 2] {
    let m = dir[0].max(dir[1]);
    let p = [dir[0] / m * cap, dir[1] / m * cap];
    [p[0].min(cap), p[1].min(cap)]
}

/// Sector decomposition of one branch.
#[derive(Clone, Debug)]
struct BranchTable {
    branch: Branch,
    /// Sorted critical angles in `(0, pi/2)`.
    angles: Vec<f64>,
    /// Direction vector of each critical ray.
    rays: Vec<[f64; 2]>,
    /// Moment on each open sector; one more than `angles`.
    sectors: Vec<Sym2>,
    origin: Sym2,
    axis_lambda: Sym2,
    axis_alpha: Sym2,
}

impl BranchTable {
    fn build(scores: &ScoreVectors, branch: Branch) -> Self {
        let mut crit: Vec<(f64, [f64; 2])> = Vec::new();
        for i in 0..scores.len() {
            let [v0, v1] = scores.v(i, branch);
            // v0 cos + v1 sin changes sign inside the quadrant only when the
            // components have strictly opposite signs.
            if (v0 > 0.0 && v1 < 0.0) || (v0 < 0.0 && v1 > 0.0) {
                let dir = [v1.abs(), v0.abs()];
                crit.push((dir[1].atan2(dir[0]), dir));
            }
        }
        crit.sort_by(|x, y| x.0.total_cmp(&y.0));
        crit.dedup_by(|x, y| x.0 == y.0);
        let angles: Vec<f64> = crit.iter().map(|c| c.0).collect();
        let rays: Vec<[f64; 2]> = crit.iter().map(|c| c.1).collect();
        let sectors = (0..=angles.len())
            .map(|k| {
                let lo = if k == 0 { 0.0 } else { angles[k - 1] };
                let hi = if k == angles.len() { FRAC_PI_2 } else { angles[k] };
                let mid = 0.5 * (lo + hi);
                scores.moment([mid.cos(), mid.sin()], branch).0
            })
            .collect();
        Self {
            branch,
            angles,
            rays,
            sectors,
            origin: scores.moment([0.0, 0.0], branch).0,
            axis_lambda: scores.moment([1.0, 0.0], branch).0,
            axis_alpha: scores.moment([0.0, 1.0], branch).0,
        }
    }

    /// Unridged moment at `zeta >= 0`.
    fn matrix_at(&self, scores: &ScoreVectors, z: [f64; 2]) -> Sym2 {
        match (z[0] == 0.0, z[1] == 0.0) {
            (true, true) => return self.origin,
            (false, true) => return self.axis_lambda,
            (true, false) => return self.axis_alpha,
            _ => {}
        }
        let phi = z[1].atan2(z[0]);
        let k = self.angles.partition_point(|c| *c < phi);
        let near_hi = k < self.angles.len() && self.angles[k] - phi < ANGLE_GUARD;
        let near_lo = k > 0 && phi - self.angles[k - 1] < ANGLE_GUARD;
        if near_hi || near_lo {
            scores.moment(z, self.branch).0
        } else {
            self.sectors[k]
        }
    }

    /// Exact sup over `[0, cap]^2` by maximizing each sector's quadratic on
    /// the closure of its cone.
    fn enumerate(&self, w: [f64; 2], cap: f64) -> ([f64; 2], f64) {
        let mut best = ([0.0, 0.0], 0.0);
        let corner_angle = std::f64::consts::FRAC_PI_4;
        for (k, a) in self.sectors.iter().enumerate() {
            let (lo_angle, lo_dir) = if k == 0 { (0.0, [1.0, 0.0]) } else { (self.angles[k - 1], self.rays[k - 1]) };
            let (hi_angle, hi_dir) = if k == self.angles.len() {
                (FRAC_PI_2, [0.0, 1.0])
            } else {
                (self.angles[k], self.rays[k])
            };
            let mut poly = vec![[0.0, 0.0], ray_exit(lo_dir, cap)];
            if lo_angle < corner_angle && corner_angle < hi_angle {
                poly.push([cap, cap]);
            }
            poly.push(ray_exit(hi_dir, cap));
            let cand = maximize_on_polygon(w, a, &poly);
            if cand.1 > best.1 {
                best = cand;
            }
        }
        best
    }
}

/// Both branch tables plus the settings used for every draw.
#[derive(Clone, Debug)]
pub struct BoundEngine<'a> {
    scores: &'a ScoreVectors,
    tables: [BranchTable; 2],
    cfg: BootstrapConfig,
    cap: f64,
}

impl<'a> BoundEngine<'a> {
    pub fn new(scores: &'a ScoreVectors, cfg: &BootstrapConfig, cap: f64) -> Self {
        assert!(cap.is_finite() && cap > 0.0, "cap must be finite and positive");
        Self {
            scores,
            tables: [BranchTable::build(scores, Branch::Plus), BranchTable::build(scores, Branch::Minus)],
            cfg: cfg.clone(),
            cap,
        }
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    pub fn sector_count(&self, branch: Branch) -> usize {
        self.tables[branch.index()].sectors.len()
    }

    /// Unridged moment matrix at `zeta`, from the sector tables.
    pub fn moment_at(&self, zeta: [f64; 2], branch: Branch) -> Sym2 {
        self.tables[branch.index()].matrix_at(self.scores, zeta)
    }

    /// Damped iteration of `zeta <- argmax_{0 <= z <= cap} z.w - z'(A(zeta) + ridge I)z / 4`.
    pub fn fixed_point(&self, w: [f64; 2], branch: Branch) -> FixedPointResult {
        let table = &self.tables[branch.index()];
        let ridge = Sym2::identity(self.cfg.ridge);
        let poly = box_polygon(self.cap);
        let mut z = [0.0, 0.0];
        let mut residual = f64::INFINITY;
        for it in 1..=self.cfg.fp_max_iters {
            let a = table.matrix_at(self.scores, z).add(ridge);
            if a.condition() > MAX_CONDITION {
                return FixedPointResult {
                    zeta: z,
                    residual,
                    iterations: it,
                    converged: false,
                    degenerate: true,
                };
            }
            let (t, _) = maximize_on_polygon(w, &a, &poly);
            residual = (t[0] - z[0]).abs().max((t[1] - z[1]).abs());
            if residual < self.cfg.fp_tol {
                return FixedPointResult {
                    zeta: t,
                    residual,
                    iterations: it,
                    converged: true,
                    degenerate: false,
                };
            }
            let d = self.cfg.damping;
            z = [z[0] + d * (t[0] - z[0]), z[1] + d * (t[1] - z[1])];
        }
        FixedPointResult {
            zeta: z,
            residual,
            iterations: self.cfg.fp_max_iters,
            converged: false,
            degenerate: false,
        }
    }

    /// Sector-by-sector exact maximum for one branch.
    pub fn enumerate(&self, w: [f64; 2], branch: Branch) -> f64 {
        self.tables[branch.index()].enumerate(w, self.cap).1.max(0.0)
    }

    /// The branch objective `zeta.w - zeta' A(zeta) zeta / 4` with the
    /// unridged moment.
    pub fn objective(&self, w: [f64; 2], zeta: [f64; 2], branch: Branch) -> f64 {
        quadratic_value(w, &self.moment_at(zeta, branch), zeta)
    }

    /// The branch supremum. A converged fixed point is only trusted when the
    /// sector enumeration confirms it, since fixed points need not be unique
    /// and a local one understates the bound.
    pub fn branch_bound(&self, w: [f64; 2], branch: Branch) -> BranchBound {
        let fp = self.fixed_point(w, branch);
        if fp.degenerate {
            return BranchBound {
                value: 0.0,
                route: Route::Dropped,
            };
        }
        let exact = self.enumerate(w, branch);
        if fp.converged {
            let at_fp = self.objective(w, fp.zeta, branch).max(0.0);
            if exact - at_fp <= FIXED_POINT_SLACK * (1.0 + exact.abs()) {
                return BranchBound {
                    value: at_fp,
                    route: Route::FixedPoint,
                };
            }
        }
        BranchBound {
            value: exact,
            route: Route::Enumeration,
        }
    }

    pub fn bound(&self, w: [f64; 2]) -> BoundResult {
        let plus = self.branch_bound(w, Branch::Plus);
        let minus = self.branch_bound(w, Branch::Minus);
        BoundResult {
            value: plus.value.max(minus.value).max(0.0),
            plus,
            minus,
        }
    }
}

fn default_cap(scores: &ScoreVectors, cfg: &BootstrapConfig) -> f64 {
    cfg.cap(scores.len(), crate::dual::DEFAULT_B_DUAL)
}

pub fn solve_fixed_point(scores: &ScoreVectors, w: [f64; 2], branch: Branch, cfg: &BootstrapConfig) -> FixedPointResult {
    BoundEngine::new(scores, cfg, default_cap(scores, cfg)).fixed_point(w, branch)
}

/// Active-set route for one branch, without the fixed-point iteration.
pub fn enumerate_branch(scores: &ScoreVectors, w: [f64; 2], branch: Branch, cfg: &BootstrapConfig) -> f64 {
    BoundEngine::new(scores, cfg, default_cap(scores, cfg)).enumerate(w, branch)
}

pub fn compute_bound(scores: &ScoreVectors, w: [f64; 2], cfg: &BootstrapConfig) -> BoundResult {
    BoundEngine::new(scores, cfg, default_cap(scores, cfg)).bound(w)
}
