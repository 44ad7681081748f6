//! Maximization of the concave dual objective over `[0, B]^2`.
//!
//! The searches are derivative-free golden sections. When the objective
//! also reports a supergradient, each evaluation is kept as a cutting plane
//! and the planes give an upper bound on the maximum, which stops line
//! searches and restarts as soon as the current best is provably within
//! `outer_tol`.

use rand::Rng;

use super::{DualPoint, SolverConfig};
use crate::error::Result;
use crate::rng::stream_rng;

/// One evaluation of the objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eval {
    pub value: f64,
    /// A supergradient at the evaluated point, if known.
    pub slope: Option<[f64; 2]>,
}

impl Eval {
    pub fn plain(value: f64) -> Self {
        Self { value, slope: None }
    }
}

pub type Objective<'a> = dyn FnMut(DualPoint) -> Result<Eval> + 'a;

pub trait OuterMaximizer: Send + Sync {
    fn name(&self) -> &'static str;
    fn maximize(&self, f: &mut Objective<'_>, bound: f64, cfg: &SolverConfig) -> Result<(DualPoint, f64)>;
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Cutting planes kept for the line and box bounds.
const MAX_LINE_CUTS: usize = 24;
const MAX_BOX_CUTS: usize = 20;
/// Line searches stop within this fraction of the certified gap.
const LOOSE_LINE: f64 = 0.05;

/// Stopping rules of a line search: bracket width and objective gap.
#[derive(Clone, Copy, Debug)]
struct LineTol {
    x: f64,
    f: f64,
}

/// A line-search probe: position, value and directional supergradient.
type Probe = (f64, f64, Option<f64>);

/// Upper bound on `max_{[lo, hi]} f` from tangent lines `v + s (t - t_k)`.
fn line_bound(cuts: &[(f64, f64, f64)], lo: f64, hi: f64) -> f64 {
    line_envelope_max(cuts, lo, hi).1
}

/// Maximizer and maximum of the tangent-line envelope on `[lo, hi]`.
fn line_envelope_max(cuts: &[(f64, f64, f64)], lo: f64, hi: f64) -> (f64, f64) {
    if cuts.is_empty() {
        return (lo, f64::INFINITY);
    }
    let env = |t: f64| cuts.iter().map(|&(tk, vk, sk)| vk + sk * (t - tk)).fold(f64::INFINITY, f64::min);
    let mut best = (lo, env(lo));
    let mut offer = |t: f64| {
        let v = env(t);
        if v > best.1 {
            best = (t, v);
        }
    };
    offer(hi);
    for (i, &(ti, vi, si)) in cuts.iter().enumerate() {
        for &(tj, vj, sj) in &cuts[i + 1..] {
            if si == sj {
                continue;
            }
            let t = (vj - sj * tj - vi + si * ti) / (si - sj);
            if t > lo && t < hi {
                offer(t);
            }
        }
    }
    best
}

/// Golden-section search for the max of a concave `f` on `[lo, hi]`.
/// `known` is an already evaluated point that the result must not be worse
/// than.
fn golden(
    f: &mut dyn FnMut(f64) -> Result<(f64, Option<f64>)>,
    lo: f64,
    hi: f64,
    tol: LineTol,
    known: Probe,
) -> Result<(f64, f64)> {
    let mut best = (known.0, known.1);
    let mut cuts: Vec<(f64, f64, f64)> = Vec::new();
    let record = |t: f64, v: f64, s: Option<f64>, best: &mut (f64, f64), cuts: &mut Vec<(f64, f64, f64)>| {
        if v > best.1 {
            *best = (t, v);
        }
        if let Some(s) = s {
            if cuts.len() == MAX_LINE_CUTS {
                cuts.remove(0);
            }
            cuts.push((t, v, s));
        }
    };
    record(known.0, known.1, known.2, &mut best, &mut cuts);
    if hi - lo <= tol.x {
        return Ok(best);
    }
    let mut probed_lo = known.0 == lo;
    let mut probed_hi = known.0 == hi;
    // A supergradient pointing out of the interval puts the max on the end.
    if let Some(s) = known.2 {
        if s == 0.0 {
            return Ok(best);
        }
        let end = if s > 0.0 { hi } else { lo };
        if end != known.0 {
            let (v, se) = f(end)?;
            record(end, v, se, &mut best, &mut cuts);
            probed_lo |= end == lo;
            probed_hi |= end == hi;
            if let Some(se) = se {
                if (end == hi && se >= 0.0) || (end == lo && se <= 0.0) {
                    return Ok(best);
                }
            }
        }
    }
    let done = |best: (f64, f64), cuts: &[(f64, f64, f64)]| line_bound(cuts, lo, hi) - best.1 <= tol.f;
    if done(best, &cuts) {
        return Ok(best);
    }
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, sc) = f(c)?;
    record(c, fc, sc, &mut best, &mut cuts);
    let (mut fd, sd) = f(d)?;
    record(d, fd, sd, &mut best, &mut cuts);
    while b - a > tol.x && !done(best, &cuts) {
        // Probe where the tangents cross; at a kink this lands on it.
        let (t, _) = line_envelope_max(&cuts, a, b);
        if cuts.len() >= 2 && t > a && t < b && (t - c).abs() > tol.x && (t - d).abs() > tol.x {
            let (v, s) = f(t)?;
            record(t, v, s, &mut best, &mut cuts);
            if done(best, &cuts) {
                break;
            }
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            let (v, s) = f(c)?;
            fc = v;
            record(c, v, s, &mut best, &mut cuts);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            let (v, s) = f(d)?;
            fd = v;
            record(d, v, s, &mut best, &mut cuts);
        }
    }
    if done(best, &cuts) {
        return Ok(best);
    }
    // Maxima on the faces of the box are common; land on them exactly.
    if a == lo && !probed_lo {
        let (v, s) = f(lo)?;
        record(lo, v, s, &mut best, &mut cuts);
    }
    if b == hi && !probed_hi {
        let (v, s) = f(hi)?;
        record(hi, v, s, &mut best, &mut cuts);
    }
    Ok(best)
}

fn line_tol(bound: f64, value: f64, cfg: &SolverConfig) -> LineTol {
    LineTol {
        x: cfg.outer_tol * bound.max(1.0),
        f: value_tol(value, cfg),
    }
}

fn value_tol(value: f64, cfg: &SolverConfig) -> f64 {
    cfg.outer_tol * (1.0 + value.abs())
}

/// The objective together with every supergradient plane seen so far.
struct Tracked<'a, 'f> {
    f: &'a mut Objective<'f>,
    planes: Vec<(DualPoint, f64, [f64; 2])>,
    best: (DualPoint, f64),
}

impl<'a, 'f> Tracked<'a, 'f> {
    fn new(f: &'a mut Objective<'f>) -> Self {
        Self {
            f,
            planes: Vec::new(),
            best: (DualPoint::ORIGIN, f64::NEG_INFINITY),
        }
    }

    fn eval(&mut self, p: DualPoint) -> Result<Eval> {
        let e = (self.f)(p)?;
        if e.value > self.best.1 {
            self.best = (p, e.value);
        }
        if let Some(g) = e.slope {
            self.planes.push((p, e.value, g));
        }
        Ok(e)
    }

    fn slope_at(&self, p: DualPoint) -> Option<[f64; 2]> {
        self.planes.iter().rev().find(|pl| pl.0 == p).map(|pl| pl.2)
    }

    /// Value and slope along `base + t dir`, clamped to the box.
    fn along(&mut self, base: DualPoint, dir: (f64, f64), bound: f64, t: f64) -> Result<(f64, Option<f64>)> {
        let p = DualPoint::new(clamp(base.lambda + t * dir.0, bound), clamp(base.alpha + t * dir.1, bound));
        let e = self.eval(p)?;
        Ok((e.value, e.slope.map(|g| g[0] * dir.0 + g[1] * dir.1)))
    }

    /// Upper bound on the max over `[0, bound]^2` from the tightest planes
    /// at the current best point, with the point attaining it.
    fn upper_bound(&self, bound: f64) -> (DualPoint, f64) {
        if self.planes.is_empty() {
            return (self.best.0, f64::INFINITY);
        }
        let at = |(p, v, g): &(DualPoint, f64, [f64; 2]), q: DualPoint| {
            v + g[0] * (q.lambda - p.lambda) + g[1] * (q.alpha - p.alpha)
        };
        let mut planes: Vec<(f64, [f64; 2])> = Vec::with_capacity(self.planes.len());
        let mut keyed: Vec<(f64, usize)> = self
            .planes
            .iter()
            .enumerate()
            .map(|(k, pl)| (at(pl, self.best.0), k))
            .collect();
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, k) in keyed.iter().take(MAX_BOX_CUTS) {
            let (p, v, g) = self.planes[k];
            // Store as `c + g . q`.
            planes.push((v - g[0] * p.lambda - g[1] * p.alpha, g));
        }
        let env = |l: f64, a: f64| planes.iter().map(|(c, g)| c + g[0] * l + g[1] * a).fold(f64::INFINITY, f64::min);
        let inside = |v: f64| (-1e-12..=bound * (1.0 + 1e-12)).contains(&v);
        let mut ub = (DualPoint::ORIGIN, f64::NEG_INFINITY);
        let mut offer = |l: f64, a: f64| {
            let v = env(l, a);
            if v > ub.1 {
                ub = (DualPoint::new(l, a), v);
            }
        };
        for l in [0.0, bound] {
            for a in [0.0, bound] {
                offer(l, a);
            }
        }
        for (i, (ci, gi)) in planes.iter().enumerate() {
            for (cj, gj) in &planes[i + 1..] {
                let (dc, dl, da) = (cj - ci, gi[0] - gj[0], gi[1] - gj[1]);
                // Crossings of two planes on the four edges.
                if da != 0.0 {
                    for l in [0.0, bound] {
                        let a = (dc - dl * l) / da;
                        if inside(a) {
                            offer(l, a.clamp(0.0, bound));
                        }
                    }
                }
                if dl != 0.0 {
                    for a in [0.0, bound] {
                        let l = (dc - da * a) / dl;
                        if inside(l) {
                            offer(l.clamp(0.0, bound), a);
                        }
                    }
                }
            }
        }
        // Interior vertices where three planes meet.
        for i in 0..planes.len() {
            for j in i + 1..planes.len() {
                for k in j + 1..planes.len() {
                    let (ci, gi) = planes[i];
                    let (cj, gj) = planes[j];
                    let (ck, gk) = planes[k];
                    let (a11, a12, b1) = (gi[0] - gj[0], gi[1] - gj[1], cj - ci);
                    let (a21, a22, b2) = (gi[0] - gk[0], gi[1] - gk[1], ck - ci);
                    let det = a11 * a22 - a12 * a21;
                    if det.abs() < 1e-14 {
                        continue;
                    }
                    let l = (b1 * a22 - a12 * b2) / det;
                    let a = (a11 * b2 - b1 * a21) / det;
                    if inside(l) && inside(a) {
                        offer(l.clamp(0.0, bound), a.clamp(0.0, bound));
                    }
                }
            }
        }
        ub
    }

    fn certified(&self, bound: f64, cfg: &SolverConfig) -> bool {
        self.upper_bound(bound).1 - self.best.1 <= value_tol(self.best.1, cfg)
    }
}

/// Alternating golden-section line searches over `lambda` and `alpha`,
/// with diagonal searches to escape kinks, from the origin plus seeded
/// random starts.
pub struct CoordinateGolden;

impl CoordinateGolden {
    /// Golden search along `p + t dir` inside the box. Moves `p` on a gain
    /// above tolerance and reports whether it moved.
    fn line(
        &self,
        f: &mut Tracked<'_, '_>,
        p: &mut DualPoint,
        fp: &mut f64,
        dir: (f64, f64),
        bound: f64,
        cfg: &SolverConfig,
    ) -> Result<bool> {
        let (lo, hi) = segment(*p, dir, bound);
        if !(hi > lo) {
            return Ok(false);
        }
        let base = *p;
        let s0 = f.slope_at(base).map(|g| g[0] * dir.0 + g[1] * dir.1);
        // Far from the optimum a rough line maximum is enough.
        let mut tol = line_tol(bound, *fp, cfg);
        let gap = f.upper_bound(bound).1 - f.best.1;
        if gap.is_finite() {
            tol.f = tol.f.max(LOOSE_LINE * gap);
        }
        let (t, v) = golden(&mut |t| f.along(base, dir, bound, t), lo, hi, tol, (0.0, *fp, s0))?;
        if v - *fp > value_tol(*fp, cfg) {
            *p = DualPoint::new(clamp(base.lambda + t * dir.0, bound), clamp(base.alpha + t * dir.1, bound));
            *fp = v;
            return Ok(true);
        }
        Ok(false)
    }

    /// Returns whether the planes certify the best value.
    fn ascend(&self, f: &mut Tracked<'_, '_>, start: DualPoint, bound: f64, cfg: &SolverConfig) -> Result<bool> {
        let mut p = start;
        let mut fp = f.eval(p)?.value;
        for _ in 0..cfg.max_outer_iters {
            let before = (p, fp);
            for axis in [(1.0, 0.0), (0.0, 1.0)] {
                self.line(f, &mut p, &mut fp, axis, bound, cfg)?;
                if f.certified(bound, cfg) {
                    return Ok(true);
                }
            }
            // Follow the net move of the sweep, which is the ridge direction
            // when coordinate steps zig-zag.
            let pattern = (p.lambda - before.0.lambda, p.alpha - before.0.alpha);
            if pattern != (0.0, 0.0) {
                self.line(f, &mut p, &mut fp, pattern, bound, cfg)?;
                if f.certified(bound, cfg) {
                    return Ok(true);
                }
            }
            // Head for the maximizer of the cutting-plane model.
            let (q, _) = f.upper_bound(bound);
            let toward = (q.lambda - p.lambda, q.alpha - p.alpha);
            if toward != (0.0, 0.0) {
                self.line(f, &mut p, &mut fp, toward, bound, cfg)?;
                if f.certified(bound, cfg) {
                    return Ok(true);
                }
            }
            if fp - before.1 > value_tol(fp, cfg) {
                continue;
            }
            let mut improved = false;
            for dir in [(1.0, 1.0), (1.0, -1.0)] {
                improved |= self.line(f, &mut p, &mut fp, dir, bound, cfg)?;
            }
            if f.certified(bound, cfg) {
                return Ok(true);
            }
            if !improved {
                break;
            }
        }
        Ok(false)
    }
}

fn clamp(v: f64, bound: f64) -> f64 {
    v.clamp(0.0, bound)
}

/// Parameter range keeping `p + t dir` inside `[0, bound]^2`.
fn segment(p: DualPoint, dir: (f64, f64), bound: f64) -> (f64, f64) {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for (x, d) in [(p.lambda, dir.0), (p.alpha, dir.1)] {
        if d == 0.0 {
            continue;
        }
        let (a, b) = ((0.0 - x) / d, (bound - x) / d);
        lo = lo.max(a.min(b));
        hi = hi.min(a.max(b));
    }
    (lo, hi)
}

impl OuterMaximizer for CoordinateGolden {
    fn name(&self) -> &'static str {
        "coordinate-golden"
    }

    fn maximize(&self, f: &mut Objective<'_>, bound: f64, cfg: &SolverConfig) -> Result<(DualPoint, f64)> {
        let mut rng = stream_rng(cfg.seed, 0x0075_7465);
        let mut tracked = Tracked::new(f);
        // Restarts are only needed while the optimum is not certified.
        if !self.ascend(&mut tracked, DualPoint::ORIGIN, bound, cfg)? {
            for _ in 0..cfg.restarts {
                let start = DualPoint::new(rng.random_range(0.0..=bound), rng.random_range(0.0..=bound));
                if self.ascend(&mut tracked, start, bound, cfg)? {
                    break;
                }
            }
        }
        Ok(tracked.best)
    }
}

/// Golden section over `alpha` of the golden-section max over `lambda`.
/// Slower but free of coordinate-ascent stalls.
pub struct NestedGolden;

impl OuterMaximizer for NestedGolden {
    fn name(&self) -> &'static str {
        "nested-golden"
    }

    fn maximize(&self, f: &mut Objective<'_>, bound: f64, cfg: &SolverConfig) -> Result<(DualPoint, f64)> {
        let mut tracked = Tracked::new(f);
        tracked.eval(DualPoint::ORIGIN)?;
        let mut profile = |a: f64| -> Result<(f64, Option<f64>)> {
            let start = tracked.along(DualPoint::new(0.0, a), (1.0, 0.0), bound, 0.0)?;
            let (_, v) = golden(
                &mut |t| tracked.along(DualPoint::new(0.0, a), (1.0, 0.0), bound, t),
                0.0,
                bound,
                line_tol(bound, start.0, cfg),
                (0.0, start.0, start.1),
            )?;
            Ok((v, None))
        };
        let (first, _) = profile(0.0)?;
        golden(&mut profile, 0.0, bound, line_tol(bound, first, cfg), (0.0, first, None))?;
        Ok(tracked.best)
    }
}
