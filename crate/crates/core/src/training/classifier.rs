use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Softmax cross-entropy.
    CrossEntropy,
    /// One-vs-rest squared hinge, one binary scorer per class.
    Hinge,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "cross-entropy",
            LossKind::Hinge => "hinge",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross-entropy" | "ce" => Ok(LossKind::CrossEntropy),
            "hinge" => Ok(LossKind::Hinge),
            _ => Err(Error::InvalidConfig(format!("unknown loss `{s}`"))),
        }
    }
}

/// One weight vector and bias per class; scores are `W u + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    /// `K x D`, row `c` is the weight vector of class `c`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Loss value and gradient w.r.t. the class scores.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub d_scores: DVector<f64>,
}

impl LinearClassifier {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        LinearClassifier {
            weights: DMatrix::zeros(classes, dim),
            bias: DVector::zeros(classes),
        }
    }

    pub fn classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn scores(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.weights * u + &self.bias
    }

    /// Highest-scoring class; ties go to the lowest index.
    pub fn predict(&self, u: &DVector<f64>) -> usize {
        argmax(&self.scores(u))
    }

    pub fn loss_grad(&self, u: &DVector<f64>, label: usize, kind: LossKind) -> LossGrad {
        let s = self.scores(u);
        match kind {
            LossKind::CrossEntropy => {
                let p = softmax(&s);
                let mut d = p.clone();
                d[label] -= 1.0;
                LossGrad {
                    loss: -p[label].max(f64::MIN_POSITIVE).ln(),
                    d_scores: d,
                }
            }
            LossKind::Hinge => {
                let mut loss = 0.0;
                let d = DVector::from_fn(s.len(), |c, _| {
                    let y = if c == label { 1.0 } else { -1.0 };
                    let m = (1.0 - y * s[c]).max(0.0);
                    loss += m * m;
                    -2.0 * y * m
                });
                LossGrad { loss, d_scores: d }
            }
        }
    }

    /// `dL/du` given the score gradient.
    pub fn grad_input(&self, d_scores: &DVector<f64>) -> DVector<f64> {
        self.weights.tr_mul(d_scores)
    }
}

pub fn argmax(s: &DVector<f64>) -> usize {
    let mut best = 0;
    for c in 1..s.len() {
        if s[c] > s[best] {
            best = c;
        }
    }
    best
}

/// Max-shifted softmax.
pub fn softmax(scores: &DVector<f64>) -> DVector<f64> {
    let m = scores.max();
    let e = scores.map(|s| (s - m).exp());
    let z = e.sum();
    e / z
}

pub fn softmax_prob(u: &DVector<f64>, clf: &LinearClassifier) -> DVector<f64> {
    softmax(&clf.scores(u))
}

/// `grad_u log P(y | u) = beta_y - sum_c P(c | u) beta_c`.
pub fn log_prob_grad(u: &DVector<f64>, label: usize, clf: &LinearClassifier) -> DVector<f64> {
    let p = softmax_prob(u, clf);
    let mut coeff = -p;
    coeff[label] += 1.0;
    clf.grad_input(&coeff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::fd_gradient;
    use proptest::prelude::*;

    fn clf() -> LinearClassifier {
        LinearClassifier {
            weights: DMatrix::from_row_slice(3, 2, &[1.0, -0.5, 0.3, 2.0, -1.2, 0.7]),
            bias: DVector::from_row_slice(&[0.1, -0.2, 0.05]),
        }
    }

    #[test]
    fn uniform_when_scores_tie() {
        let p = softmax(&DVector::from_element(4, 2.5));
        assert!(p.iter().all(|x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn two_class_closed_form() {
        let s = 0.7;
        let p = softmax(&DVector::from_row_slice(&[s, s + 3f64.ln()]));
        assert!((p[0] - 0.25).abs() < 1e-12);
        assert!((p[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn huge_scores_do_not_overflow() {
        let p = softmax(&DVector::from_row_slice(&[1e308, 1e308, -1e308]));
        assert!((p[0] - 0.5).abs() < 1e-15 && p[2] == 0.0);
    }

    #[test]
    fn log_prob_gradient_matches_fd() {
        let c = clf();
        let u = [0.4, -1.1];
        for label in 0..3 {
            let analytic = log_prob_grad(&DVector::from_row_slice(&u), label, &c);
            let fd = fd_gradient(|x| softmax_prob(&DVector::from_row_slice(x), &c)[label].ln(), &u, 1e-5);
            for k in 0..2 {
                assert!((analytic[k] - fd[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn loss_gradients_match_fd() {
        let c = clf();
        let u = DVector::from_row_slice(&[0.4, -1.1]);
        for kind in [LossKind::CrossEntropy, LossKind::Hinge] {
            let lg = c.loss_grad(&u, 1, kind);
            let analytic = c.grad_input(&lg.d_scores);
            let fd = fd_gradient(
                |x| c.loss_grad(&DVector::from_row_slice(x), 1, kind).loss,
                u.as_slice(),
                1e-5,
            );
            for k in 0..2 {
                assert!((analytic[k] - fd[k]).abs() < 1e-6, "{kind}");
            }
        }
    }

    #[test]
    fn ties_predict_lowest_class() {
        let zero = LinearClassifier::zeros(3, 2);
        assert_eq!(zero.predict(&DVector::from_element(2, 1.0)), 0);
    }

    proptest! {
        #[test]
        fn softmax_properties(s in prop::collection::vec(-50f64..50.0, 2..8), shift in -100f64..100.0) {
            let s = DVector::from_vec(s);
            let p = softmax(&s);
            prop_assert!((p.sum() - 1.0).abs() < 1e-12);
            let q = softmax(&s.add_scalar(shift));
            prop_assert!((p - q).amax() < 1e-12);
        }

        #[test]
        fn argmax_scale_invariant(w in prop::collection::vec(-5f64..5.0, 6), u in prop::collection::vec(-5f64..5.0, 2), k in 0.01f64..100.0) {
            let c = LinearClassifier { weights: DMatrix::from_row_slice(3, 2, &w), bias: DVector::zeros(3) };
            let scaled = LinearClassifier { weights: &c.weights * k, bias: DVector::zeros(3) };
            let u = DVector::from_vec(u);
            let s = c.scores(&u);
            // skip near-ties where rounding could flip the winner
            let mut sorted: Vec<f64> = s.iter().copied().collect();
            sorted.sort_by(|a, b| b.total_cmp(a));
            prop_assume!(sorted[0] - sorted[1] > 1e-9);
            prop_assert_eq!(c.predict(&u), scaled.predict(&u));
        }
    }
}
