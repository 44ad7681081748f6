//! Closed-form model families: the pricing study, linear and logistic
//! policies, affine outcomes.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{CompositeModel, CovariateSpace, PolicyModel, UtilityModel};
use crate::error::{Error, Result};

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// `pi_a(x) = c_a + b_a . x`. The caller keeps the values inside `[0, 1]`
/// on the box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearPolicy {
    intercept: Vec<f64>,
    slope: Vec<Vec<f64>>,
}

impl LinearPolicy {
    pub fn new(intercept: Vec<f64>, slope: Vec<Vec<f64>>) -> Self {
        assert_eq!(intercept.len(), 2, "one intercept per group");
        assert_eq!(slope.len(), 2, "one slope per group");
        assert_eq!(slope[0].len(), slope[1].len());
        Self { intercept, slope }
    }
}

impl PolicyModel for LinearPolicy {
    fn dim(&self) -> usize {
        self.slope[0].len()
    }

    fn propensity(&self, x: &[f64], group: usize) -> f64 {
        self.intercept[group] + dot(&self.slope[group], x)
    }

    fn propensity_grad(&self, _x: &[f64], group: usize, grad: &mut [f64]) {
        grad.copy_from_slice(&self.slope[group]);
    }
}

/// `pi_a(x) = sigmoid(c_a + b_a . x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticPolicy {
    bias: Vec<f64>,
    weights: Vec<Vec<f64>>,
}

impl LogisticPolicy {
    pub fn new(bias: Vec<f64>, weights: Vec<Vec<f64>>) -> Self {
        assert_eq!(bias.len(), 2);
        assert_eq!(weights.len(), 2);
        assert_eq!(weights[0].len(), weights[1].len());
        Self { bias, weights }
    }
}

impl PolicyModel for LogisticPolicy {
    fn dim(&self) -> usize {
        self.weights[0].len()
    }

    fn propensity(&self, x: &[f64], group: usize) -> f64 {
        sigmoid(self.bias[group] + dot(&self.weights[group], x))
    }

    fn propensity_grad(&self, x: &[f64], group: usize, grad: &mut [f64]) {
        let p = self.propensity(x, group);
        let s = p * (1.0 - p);
        for (g, w) in grad.iter_mut().zip(&self.weights[group]) {
            *g = s * w;
        }
    }
}

/// Probability of membership in group 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum GroupShare {
    Constant(f64),
    Logistic { bias: f64, weights: Vec<f64> },
}

impl GroupShare {
    fn p1(&self, x: &[f64]) -> f64 {
        match self {
            GroupShare::Constant(p) => *p,
            GroupShare::Logistic { bias, weights } => sigmoid(bias + dot(weights, x)),
        }
    }

    fn p1_grad(&self, x: &[f64], grad: &mut [f64]) {
        match self {
            GroupShare::Constant(_) => grad.iter_mut().for_each(|g| *g = 0.0),
            GroupShare::Logistic { weights, .. } => {
                let p = self.p1(x);
                for (g, w) in grad.iter_mut().zip(weights) {
                    *g = p * (1.0 - p) * w;
                }
            }
        }
    }
}

/// `m_w(x, a) = c_{w,a} + b_{w,a} . x` with a configurable group share.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineUtility {
    /// Indexed `[treatment][group]`.
    coeffs: [[(f64, Vec<f64>); 2]; 2],
    share: GroupShare,
}

impl AffineUtility {
    pub fn new(coeffs: [[(f64, Vec<f64>); 2]; 2], share: GroupShare) -> Self {
        let d = coeffs[0][0].1.len();
        assert!(coeffs.iter().flatten().all(|(_, b)| b.len() == d));
        Self { coeffs, share }
    }

    /// Outcome `c` everywhere, for every treatment and group.
    pub fn constant(dim: usize, c: f64) -> Self {
        let cell = || (c, vec![0.0; dim]);
        Self::new([[cell(), cell()], [cell(), cell()]], GroupShare::Constant(0.5))
    }
}

impl UtilityModel for AffineUtility {
    fn dim(&self) -> usize {
        self.coeffs[0][0].1.len()
    }

    fn outcome(&self, treatment: usize, x: &[f64], group: usize) -> f64 {
        let (c, b) = &self.coeffs[treatment][group];
        c + dot(b, x)
    }

    fn outcome_grad(&self, treatment: usize, _x: &[f64], group: usize, grad: &mut [f64]) {
        grad.copy_from_slice(&self.coeffs[treatment][group].1);
    }

    fn group_prob(&self, x: &[f64], group: usize) -> f64 {
        let p1 = self.share.p1(x);
        if group == 1 {
            p1
        } else {
            1.0 - p1
        }
    }

    fn group_prob_grad(&self, x: &[f64], group: usize, grad: &mut [f64]) {
        self.share.p1_grad(x, grad);
        if group == 0 {
            grad.iter_mut().for_each(|g| *g = -*g);
        }
    }
}

/// Outcome intercept, treatment effect and slope for group 0 in the
/// pricing study.
pub const PRICING_BETAS_0: [f64; 3] = [0.8, 0.5, 0.7];
/// Same for group 1.
pub const PRICING_BETAS_1: [f64; 3] = [0.5, 1.0, 0.5];

/// Pricing study on `[0, 1]`: `pi_a(x) = theta_a x` with `theta_0 = 1 -
/// theta_1`, `m_w(x, a) = b0 + b1 w + b2 x`, constant group share.
pub fn pricing_model(theta1: f64, group_share: f64) -> Result<CompositeModel> {
    if !(0.0..=1.0).contains(&theta1) {
        return Err(Error::Config(format!("theta1 must lie in [0, 1], got {theta1}")));
    }
    if !(0.0..=1.0).contains(&group_share) {
        return Err(Error::Config(format!("group share must lie in [0, 1], got {group_share}")));
    }
    let policy = LinearPolicy::new(vec![0.0, 0.0], vec![vec![1.0 - theta1], vec![theta1]]);
    let cell = |b: [f64; 3], w: f64| (b[0] + b[1] * w, vec![b[2]]);
    let utility = AffineUtility::new(
        [
            [cell(PRICING_BETAS_0, 0.0), cell(PRICING_BETAS_1, 0.0)],
            [cell(PRICING_BETAS_0, 1.0), cell(PRICING_BETAS_1, 1.0)],
        ],
        GroupShare::Constant(group_share),
    );
    CompositeModel::new(CovariateSpace::unit(1), Arc::new(policy), Arc::new(utility))
}

/// One-dimensional smooth model whose utility and gap gradients vary with
/// `x`, so the moment matrices of the limiting bound are full rank.
pub fn logistic_benchmark() -> CompositeModel {
    let policy = LogisticPolicy::new(vec![0.5, -2.0], vec![vec![-2.0], vec![4.0]]);
    let utility = AffineUtility::new(
        [
            [(1.0, vec![-0.2]), (1.5, vec![-1.0])],
            [(0.5, vec![0.5]), (1.0, vec![1.0])],
        ],
        GroupShare::Logistic {
            bias: -0.5,
            weights: vec![1.5],
        },
    );
    CompositeModel::new(CovariateSpace::unit(1), Arc::new(policy), Arc::new(utility))
        .expect("dimensions agree")
}
