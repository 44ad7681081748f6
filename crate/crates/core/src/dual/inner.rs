//! Per-sample inner problems
//! `min_{x in box} |x - x_i|^2 + alpha |pi_1 - pi_0|(x) - lambda M(x)`.

use std::cmp::Ordering;

use super::{DualPoint, SolverConfig};
use crate::error::{Error, Result};
use crate::model::CompositeModel;

#[derive(Clone, Debug, PartialEq)]
pub struct InnerMin {
    pub value: f64,
    pub x: Vec<f64>,
}

pub trait InnerMinimizer: Send + Sync {
    fn name(&self) -> &'static str;
    fn minimize(&self, anchor: &[f64], point: DualPoint) -> Result<InnerMin>;
}

/// Seed points with the model cached at each of them.
struct Lattice {
    dim: usize,
    points: Vec<f64>,
    utility: Vec<f64>,
    diff: Vec<f64>,
}

impl Lattice {
    fn build(model: &CompositeModel, cfg: &SolverConfig) -> Result<Self> {
        let d = model.dim();
        let space = model.space();
        let mut points = Vec::new();
        if d <= 3 {
            let k = cfg.inner_grid;
            let total = k.pow(d as u32);
            points.reserve(total * d);
            let mut idx = vec![0usize; d];
            for _ in 0..total {
                for (j, i) in idx.iter().enumerate() {
                    let t = *i as f64 / (k - 1) as f64;
                    let v = if *i == k - 1 {
                        space.upper()[j]
                    } else {
                        space.lower()[j] + t * space.width(j)
                    };
                    points.push(v);
                }
                // Last axis varies fastest, so the order is lexicographic.
                for j in (0..d).rev() {
                    idx[j] += 1;
                    if idx[j] < k {
                        break;
                    }
                    idx[j] = 0;
                }
            }
        } else {
            points.reserve(cfg.sobol_points * d);
            for i in 0..cfg.sobol_points {
                let u: Vec<f64> = (0..d)
                    .map(|j| sobol_burley::sample(i as u32, j as u32, 0) as f64)
                    .collect();
                points.extend(space.from_unit(&u));
            }
        }
        let count = points.len() / d;
        let mut utility = Vec::with_capacity(count);
        let mut diff = Vec::with_capacity(count);
        for p in points.chunks_exact(d) {
            let v = model.value_at(p);
            if !(v.utility.is_finite() && v.diff.is_finite()) {
                return Err(Error::NonFinite { point: p.to_vec() });
            }
            utility.push(v.utility);
            diff.push(v.diff);
        }
        Ok(Self {
            dim: d,
            points,
            utility,
            diff,
        })
    }

    fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }

    fn len(&self) -> usize {
        self.utility.len()
    }

    /// The `count` best lattice points for this anchor and multiplier.
    fn best(&self, anchor: &[f64], p: DualPoint, count: usize) -> Vec<(f64, usize)> {
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(count + 1);
        for k in 0..self.len() {
            let x = self.point(k);
            let dist: f64 = x.iter().zip(anchor).map(|(a, b)| (a - b) * (a - b)).sum();
            let v = dist + p.alpha * self.diff[k].abs() - p.lambda * self.utility[k];
            if best.len() == count && !better(v, x, best[count - 1].0, self.point(best[count - 1].1)) {
                continue;
            }
            let pos = best
                .iter()
                .position(|(bv, bk)| better(v, x, *bv, self.point(*bk)))
                .unwrap_or(best.len());
            best.insert(pos, (v, k));
            best.truncate(count);
        }
        best
    }
}

/// Smaller value first; ties go to the lexicographically smaller point.
fn better(v: f64, x: &[f64], bv: f64, bx: &[f64]) -> bool {
    match v.total_cmp(&bv) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => lex_less(x, bx),
    }
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (u, v) in a.iter().zip(b) {
        match u.total_cmp(v) {
            Ordering::Less => return true,
            Ordering::Greater => return false,
            Ordering::Equal => {}
        }
    }
    false
}

/// Replace `best` when `value` is lower, or ties and `x` sorts first.
fn offer(value: f64, x: &[f64], best: &mut InnerMin) {
    let tie = (value - best.value).abs() <= 1e-12 * (1.0 + best.value.abs());
    if (tie && lex_less(x, &best.x)) || (!tie && value < best.value) {
        best.value = value;
        best.x.copy_from_slice(x);
    }
}

/// Lattice seeding followed by projected gradient descent on each smooth
/// sign branch of the gap.
pub struct LatticePgd {
    model: CompositeModel,
    lattice: Lattice,
    seeds: usize,
    tol: f64,
    max_iters: usize,
}

impl LatticePgd {
    pub fn build(model: &CompositeModel, cfg: &SolverConfig) -> Result<Box<dyn InnerMinimizer>> {
        Ok(Box::new(Self {
            model: model.clone(),
            lattice: Lattice::build(model, cfg)?,
            seeds: cfg.polish_seeds.max(1),
            tol: cfg.inner_tol,
            max_iters: cfg.inner_max_iters,
        }))
    }

    fn objective(&self, anchor: &[f64], p: DualPoint, x: &[f64]) -> Result<f64> {
        let v = self.model.value_at(x);
        let dist: f64 = x.iter().zip(anchor).map(|(a, b)| (a - b) * (a - b)).sum();
        let f = dist + p.alpha * v.diff.abs() - p.lambda * v.utility;
        if f.is_finite() {
            Ok(f)
        } else {
            Err(Error::NonFinite { point: x.to_vec() })
        }
    }

    /// Smooth branch `|x - x_i|^2 + sigma alpha (pi_1 - pi_0) - lambda M`.
    fn branch(&self, anchor: &[f64], p: DualPoint, sigma: f64, x: &[f64]) -> f64 {
        let v = self.model.value_at(x);
        let dist: f64 = x.iter().zip(anchor).map(|(a, b)| (a - b) * (a - b)).sum();
        dist + sigma * p.alpha * v.diff - p.lambda * v.utility
    }

    fn branch_grad(&self, anchor: &[f64], p: DualPoint, sigma: f64, x: &[f64], g: &mut [f64], tmp: &mut [f64]) {
        self.model.utility_grad_at(x, tmp);
        for j in 0..x.len() {
            g[j] = 2.0 * (x[j] - anchor[j]) - p.lambda * tmp[j];
        }
        if p.alpha != 0.0 {
            self.model.diff_grad_at(x, tmp);
            for j in 0..x.len() {
                g[j] += sigma * p.alpha * tmp[j];
            }
        }
    }

    /// Projected gradient descent with Armijo backtracking on one branch,
    /// from `x` in place. Trial steps follow the Barzilai-Borwein rule.
    /// `work` holds four vectors of the dimension.
    fn descend(&self, anchor: &[f64], p: DualPoint, sigma: f64, x: &mut [f64], work: &mut [f64]) -> Result<()> {
        let space = self.model.space();
        let d = x.len();
        let (g, rest) = work.split_at_mut(d);
        let (prev_g, rest) = rest.split_at_mut(d);
        let (tmp, trial) = rest.split_at_mut(d);
        let mut fx = self.branch(anchor, p, sigma, x);
        let mut t0 = 0.5;
        let mut last_step: Option<f64> = None;
        for _ in 0..self.max_iters {
            self.branch_grad(anchor, p, sigma, x, g, tmp);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { point: x.to_vec() });
            }
            if let Some(t) = last_step {
                // s = -t * prev_g is the last move before projection; use
                // the realized move stored in `trial`.
                let (mut ss, mut sy) = (0.0, 0.0);
                for j in 0..d {
                    ss += trial[j] * trial[j];
                    sy += trial[j] * (g[j] - prev_g[j]);
                }
                t0 = if sy > 0.0 { (ss / sy).clamp(1e-10, 1e10) } else { (2.0 * t).min(1e10) };
            }
            // Stationarity: the unit projected-gradient step is negligible.
            for j in 0..d {
                trial[j] = x[j] - g[j];
            }
            space.project(trial);
            let pg: f64 = trial.iter().zip(x.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if pg <= self.tol {
                break;
            }
            let mut t = t0;
            let mut accepted = None;
            while t > 1e-14 {
                for j in 0..d {
                    trial[j] = x[j] - t * g[j];
                }
                space.project(trial);
                let step2: f64 = trial.iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                if step2 == 0.0 {
                    break;
                }
                let ft = self.branch(anchor, p, sigma, trial);
                if ft <= fx - 1e-4 / t * step2 {
                    accepted = Some((t, ft));
                    break;
                }
                t *= 0.5;
            }
            let Some((t, ft)) = accepted else { break };
            for j in 0..d {
                let moved = trial[j] - x[j];
                x[j] = trial[j];
                trial[j] = moved;
            }
            prev_g.copy_from_slice(g);
            let gain = fx - ft;
            fx = ft;
            last_step = Some(t);
            if gain <= 1e-15 * (1.0 + fx.abs()) {
                break;
            }
        }
        Ok(())
    }

    /// Point on the segment `a -> b` where the gap changes sign, into `out`.
    fn kink(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        let da = self.model.diff_at(a);
        let (mut lo, mut hi) = (0.0, 1.0);
        let at = |t: f64, out: &mut [f64]| {
            for ((o, u), v) in out.iter_mut().zip(a).zip(b) {
                *o = u + t * (v - u);
            }
        };
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            at(mid, out);
            if self.model.diff_at(out) * da > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        at(hi, out);
        self.model.space().project(out);
    }
}

impl InnerMinimizer for LatticePgd {
    fn name(&self) -> &'static str {
        "lattice-pgd"
    }

    fn minimize(&self, anchor: &[f64], p: DualPoint) -> Result<InnerMin> {
        let mut best = InnerMin {
            value: self.objective(anchor, p, anchor)?,
            x: anchor.to_vec(),
        };
        if p.lambda == 0.0 && p.alpha == 0.0 {
            return Ok(best);
        }
        let d = anchor.len();
        let seeds = self.lattice.best(anchor, p, self.seeds);
        let branches: &[f64] = if p.alpha == 0.0 { &[1.0] } else { &[1.0, -1.0] };
        let mut buf = vec![0.0; 6 * d];
        let (x, rest) = buf.split_at_mut(d);
        let (kink, work) = rest.split_at_mut(d);
        for seed in seeds.iter().map(|&(_, k)| self.lattice.point(k)).chain([anchor]) {
            let v = self.objective(anchor, p, seed)?;
            offer(v, seed, &mut best);
            let ds = self.model.diff_at(seed);
            for &sigma in branches {
                x.copy_from_slice(seed);
                self.descend(anchor, p, sigma, x, work)?;
                let v = self.objective(anchor, p, x)?;
                if p.alpha != 0.0 && sigma * ds >= 0.0 && sigma * self.model.diff_at(x) < 0.0 {
                    self.kink(seed, x, kink);
                    let vk = self.objective(anchor, p, kink)?;
                    offer(vk, kink, &mut best);
                }
                offer(v, x, &mut best);
            }
        }
        Ok(best)
    }
}

/// Lattice minimum only, without polishing. Cheap and coarse; useful with
/// a fine `inner_grid` in one or two dimensions.
pub struct LatticeOnly {
    model: CompositeModel,
    lattice: Lattice,
}

impl LatticeOnly {
    pub fn build(model: &CompositeModel, cfg: &SolverConfig) -> Result<Box<dyn InnerMinimizer>> {
        Ok(Box::new(Self {
            model: model.clone(),
            lattice: Lattice::build(model, cfg)?,
        }))
    }
}

impl InnerMinimizer for LatticeOnly {
    fn name(&self) -> &'static str {
        "lattice"
    }

    fn minimize(&self, anchor: &[f64], p: DualPoint) -> Result<InnerMin> {
        let at = self.model.value_at(anchor);
        let mut best = InnerMin {
            value: p.alpha * at.diff.abs() - p.lambda * at.utility,
            x: anchor.to_vec(),
        };
        if let Some((v, k)) = self.lattice.best(anchor, p, 1).into_iter().next() {
            if v < best.value {
                best = InnerMin {
                    value: v,
                    x: self.lattice.point(k).to_vec(),
                };
            }
        }
        Ok(best)
    }
}
