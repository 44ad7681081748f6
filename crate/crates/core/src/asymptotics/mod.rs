//! Critical values from the limiting stochastic upper bound of the
//! scaled projection distance.

pub mod bootstrap;
pub mod bound;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CompositeModel, Dataset};

pub use bootstrap::{critical_value, quantile, CriticalValue};
pub use bound::{compute_bound, enumerate_branch, solve_fixed_point, BoundEngine, BoundResult, FixedPointResult};

/// Symmetric 2x2 matrix `[[a, b], [b, c]]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Sym2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Sym2 {
    pub const ZERO: Sym2 = Sym2 { a: 0.0, b: 0.0, c: 0.0 };

    pub fn identity(scale: f64) -> Self {
        Sym2 { a: scale, b: 0.0, c: scale }
    }

    pub fn add(self, o: Sym2) -> Sym2 {
        Sym2 {
            a: self.a + o.a,
            b: self.b + o.b,
            c: self.c + o.c,
        }
    }

    pub fn scale(self, s: f64) -> Sym2 {
        Sym2 {
            a: self.a * s,
            b: self.b * s,
            c: self.c * s,
        }
    }

    pub fn det(&self) -> f64 {
        self.a * self.c - self.b * self.b
    }

    pub fn apply(&self, z: [f64; 2]) -> [f64; 2] {
        [self.a * z[0] + self.b * z[1], self.b * z[0] + self.c * z[1]]
    }

    pub fn quad(&self, z: [f64; 2]) -> f64 {
        self.a * z[0] * z[0] + 2.0 * self.b * z[0] * z[1] + self.c * z[1] * z[1]
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let mid = 0.5 * (self.a + self.c);
        let rad = (0.25 * (self.a - self.c).powi(2) + self.b * self.b).sqrt();
        [mid - rad, mid + rad]
    }

    pub fn condition(&self) -> f64 {
        let [lo, hi] = self.eigenvalues();
        if lo <= 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    }

    pub fn inverse(&self) -> Option<Sym2> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        Some(Sym2 {
            a: self.c / det,
            b: -self.b / det,
            c: self.a / det,
        })
    }

    /// Full product `self * other`, returned row-major.
    pub fn mul(&self, o: &Sym2) -> [[f64; 2]; 2] {
        [
            [self.a * o.a + self.b * o.b, self.a * o.b + self.b * o.c],
            [self.b * o.a + self.c * o.b, self.b * o.b + self.c * o.c],
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    pub const BOTH: [Branch; 2] = [Branch::Plus, Branch::Minus];

    fn index(self) -> usize {
        match self {
            Branch::Plus => 0,
            Branch::Minus => 1,
        }
    }
}

/// Per-sample gradients of `M` and of `pi_1 - pi_0`, with their Gram
/// entries.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVectors {
    dim: usize,
    grad_m: Vec<f64>,
    grad_diff: Vec<f64>,
    /// `(|DM|^2, DM . D(pi_1 - pi_0), |D(pi_1 - pi_0)|^2)` per sample.
    gram: Vec<[f64; 3]>,
}

impl ScoreVectors {
    pub fn len(&self) -> usize {
        self.gram.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gram.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grad_m(&self, i: usize) -> &[f64] {
        &self.grad_m[i * self.dim..(i + 1) * self.dim]
    }

    pub fn grad_diff(&self, i: usize) -> &[f64] {
        &self.grad_diff[i * self.dim..(i + 1) * self.dim]
    }

    /// `(DM; -D(pi_1 - pi_0))`
    pub fn s_plus(&self, i: usize) -> Vec<f64> {
        let mut v = self.grad_m(i).to_vec();
        v.extend(self.grad_diff(i).iter().map(|g| -g));
        v
    }

    /// `(DM; D(pi_1 - pi_0))`
    pub fn s_minus(&self, i: usize) -> Vec<f64> {
        let mut v = self.grad_m(i).to_vec();
        v.extend_from_slice(self.grad_diff(i));
        v
    }

    pub fn v_plus(&self, i: usize) -> [f64; 2] {
        let [_, md, dd] = self.gram[i];
        [md, -dd]
    }

    pub fn v_minus(&self, i: usize) -> [f64; 2] {
        let [_, md, dd] = self.gram[i];
        [md, dd]
    }

    pub fn v(&self, i: usize, branch: Branch) -> [f64; 2] {
        match branch {
            Branch::Plus => self.v_plus(i),
            Branch::Minus => self.v_minus(i),
        }
    }

    /// Whether sample `i` enters the branch's moment at multiplier `zeta`.
    pub fn active(&self, i: usize, zeta: [f64; 2], branch: Branch) -> bool {
        let v = self.v(i, branch);
        let s = zeta[0] * v[0] + zeta[1] * v[1];
        match branch {
            Branch::Plus => s >= 0.0,
            Branch::Minus => s < 0.0,
        }
    }

    /// Gram matrix of `(DM, -+D(pi_1 - pi_0))` for one sample.
    pub fn sample_matrix(&self, i: usize, branch: Branch) -> Sym2 {
        let [mm, md, dd] = self.gram[i];
        let b = match branch {
            Branch::Plus => -md,
            Branch::Minus => md,
        };
        Sym2 { a: mm, b, c: dd }
    }

    /// Sample average of the active sample matrices, without ridge.
    pub fn moment(&self, zeta: [f64; 2], branch: Branch) -> (Sym2, usize) {
        let mut acc = Sym2::ZERO;
        let mut active = 0;
        for i in 0..self.len() {
            if self.active(i, zeta, branch) {
                acc = acc.add(self.sample_matrix(i, branch));
                active += 1;
            }
        }
        (acc.scale(1.0 / self.len() as f64), active)
    }
}

pub fn build_scores(model: &CompositeModel, data: &Dataset) -> Result<ScoreVectors> {
    let d = model.dim();
    let n = data.len();
    let mut grad_m = vec![0.0; n * d];
    let mut grad_diff = vec![0.0; n * d];
    let mut gram = Vec::with_capacity(n);
    for (i, s) in data.samples().iter().enumerate() {
        let gm = &mut grad_m[i * d..(i + 1) * d];
        model.utility_grad_at(&s.x, gm);
        let gd = &mut grad_diff[i * d..(i + 1) * d];
        model.diff_grad_at(&s.x, gd);
        if gm.iter().chain(gd.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteScore { index: i });
        }
        let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        gram.push([dot(gm, gm), dot(gm, gd), dot(gd, gd)]);
    }
    Ok(ScoreVectors {
        dim: d,
        grad_m,
        grad_diff,
        gram,
    })
}

/// Estimated moment matrix for one branch at `zeta`, ridged and inverted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentMatrix {
    /// Sample average before the ridge.
    pub raw: Sym2,
    /// `raw + ridge I`
    pub forward: Sym2,
    pub inverse: Sym2,
    pub active: usize,
    pub condition: f64,
}

pub const MAX_CONDITION: f64 = 1e12;

pub fn weighted_moment_matrix(
    scores: &ScoreVectors,
    zeta: [f64; 2],
    branch: Branch,
    ridge: f64,
) -> Result<MomentMatrix> {
    let (raw, active) = scores.moment(zeta, branch);
    let forward = raw.add(Sym2::identity(ridge));
    let condition = forward.condition();
    if condition > MAX_CONDITION {
        return Err(Error::DegenerateMoment { condition });
    }
    let inverse = forward.inverse().ok_or(Error::DegenerateMoment { condition })?;
    Ok(MomentMatrix {
        raw,
        forward,
        inverse,
        active,
        condition,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub draws: usize,
    pub fp_tol: f64,
    pub fp_max_iters: usize,
    pub damping: f64,
    pub ridge: f64,
    pub seed: u64,
    /// Draw the two limit coordinates with their sample covariance instead
    /// of independently.
    pub use_joint_cov: bool,
    /// Box `[0, cap]^2` for the limiting multipliers; defaults to
    /// `sqrt(N) * B_dual`.
    pub zeta_cap: Option<f64>,
    /// Keep every bound draw in the result.
    pub keep_draws: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            draws: 10_000,
            fp_tol: 1e-8,
            fp_max_iters: 500,
            damping: 0.5,
            ridge: 1e-8,
            seed: 0,
            use_joint_cov: false,
            zeta_cap: None,
            keep_draws: false,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.draws < 100 {
            return bad(format!("bootstrap draws must be at least 100, got {}", self.draws));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return bad(format!("damping must lie in (0, 1], got {}", self.damping));
        }
        if !(self.fp_tol > 0.0) || self.fp_max_iters == 0 {
            return bad("fixed-point tolerance and iteration limit must be positive".into());
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return bad("ridge must be finite and nonnegative".into());
        }
        if let Some(c) = self.zeta_cap {
            if !(c.is_finite() && c > 0.0) {
                return bad(format!("zeta_cap must be finite and positive, got {c}"));
            }
        }
        Ok(())
    }

    /// Cap in effect for `n` samples and dual box bound `b_dual`.
    pub fn cap(&self, n: usize, b_dual: f64) -> f64 {
        self.zeta_cap.unwrap_or((n as f64).sqrt() * b_dual)
    }
}
