//! Flat temporal encoders: average, max, two-level temporal pyramid and
//! SVR rank pooling.
//!
//! Rank pooling fits a linear scorer `u` mapping each frame to its time
//! index `t = 1..J` by minimizing
//!
//! ```text
//! f(u) = 1/2 |u|^2 + C/2 * sum_t [ |t - u.v_t| - eps ]_+^2
//! ```
//!
//! and returns `u` as the sequence descriptor. The objective is convex and
//! piecewise quadratic, so a damped Newton method on the generalized Hessian
//! `I + C * sum_{active} v_t v_t^T` converges in a handful of iterations and
//! lands on the exact minimizer once the active set settles.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::types::{Encoding, FrameSequence};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvrConfig {
    pub c: f64,
    pub epsilon: f64,
    /// Stopping threshold on the objective gradient norm.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvrConfig {
    fn default() -> Self {
        SvrConfig {
            c: 1.0,
            epsilon: 0.1,
            tol: 1e-8,
            max_iter: 200,
        }
    }
}

impl SvrConfig {
    pub fn with_c(mut self, c: f64) -> Self {
        self.c = c;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidConfig(format!("SVR C must be > 0, got {}", self.c)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "SVR epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidConfig(format!("SVR tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("SVR max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn avg_pool(x: &FrameSequence) -> Encoding {
    Encoding::new(mean(x.frames()), "avg")
}

pub fn max_pool(x: &FrameSequence) -> Encoding {
    Encoding::new(component_max(x.frames()), "max")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PyramidBase {
    Avg,
    Max,
}

impl PyramidBase {
    fn pool(self, frames: &[DVector<f64>]) -> DVector<f64> {
        match self {
            PyramidBase::Avg => mean(frames),
            PyramidBase::Max => component_max(frames),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PyramidBase::Avg => "avg",
            PyramidBase::Max => "max",
        }
    }
}

/// `[pool(all); pool(first half); pool(second half)]`. The first half gets
/// `ceil(J/2)` frames; for `J = 1` both halves are the single frame.
pub fn temporal_pyramid(x: &FrameSequence, base: PyramidBase) -> Encoding {
    let frames = x.frames();
    let split = frames.len().div_ceil(2);
    let first = &frames[..split];
    let second = if split < frames.len() { &frames[split..] } else { first };
    let parts = [base.pool(frames), base.pool(first), base.pool(second)];
    let d = x.dim();
    let values = DVector::from_fn(3 * d, |k, _| parts[k / d][k % d]);
    Encoding::new(values, format!("pyramid-{}", base.name()))
}

/// Each component is summed in sorted order, which makes the result exactly
/// invariant to frame permutations.
fn mean(frames: &[DVector<f64>]) -> DVector<f64> {
    let n = frames.len() as f64;
    let mut column = Vec::with_capacity(frames.len());
    DVector::from_fn(frames[0].len(), |k, _| {
        column.clear();
        column.extend(frames.iter().map(|f| f[k]));
        column.sort_by(f64::total_cmp);
        column.iter().sum::<f64>() / n
    })
}

fn component_max(frames: &[DVector<f64>]) -> DVector<f64> {
    let mut out = frames[0].clone();
    for f in &frames[1..] {
        out.zip_apply(f, |a, b| *a = a.max(b));
    }
    out
}

/// Epsilon-insensitive residual for frame score `score = u.v_t` and target
/// `t`: `r - eps` above the tube, `r + eps` below it, `0` inside, with
/// `r = score - t`.
pub fn residual(score: f64, target: f64, epsilon: f64) -> f64 {
    let r = score - target;
    if r >= epsilon {
        r - epsilon
    } else if -r >= epsilon {
        r + epsilon
    } else {
        0.0
    }
}

/// Residuals `e_t` for all frames at `u`. Targets are `1..=J`.
pub fn residuals(frames: &[DVector<f64>], u: &DVector<f64>, epsilon: f64) -> Vec<f64> {
    frames
        .iter()
        .enumerate()
        .map(|(t, v)| residual(u.dot(v), (t + 1) as f64, epsilon))
        .collect()
}

pub fn svr_objective(frames: &[DVector<f64>], u: &DVector<f64>, cfg: &SvrConfig) -> f64 {
    let loss: f64 = residuals(frames, u, cfg.epsilon).iter().map(|e| e * e).sum();
    0.5 * u.norm_squared() + 0.5 * cfg.c * loss
}

/// `u + C * sum_t e_t v_t`.
pub fn svr_gradient(frames: &[DVector<f64>], u: &DVector<f64>, cfg: &SvrConfig) -> DVector<f64> {
    gradient_from(frames, u, &residuals(frames, u, cfg.epsilon), cfg.c)
}

fn gradient_from(frames: &[DVector<f64>], u: &DVector<f64>, e: &[f64], c: f64) -> DVector<f64> {
    let mut g = u.clone();
    for (v, &et) in frames.iter().zip(e) {
        if et != 0.0 {
            g.axpy(c * et, v, 1.0);
        }
    }
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankPoolSolution {
    pub u: Encoding,
    pub objective: f64,
    pub grad_norm: f64,
    /// Per-frame epsilon-insensitive residuals `e_t`.
    pub residuals: Vec<f64>,
    /// `e_t != 0`.
    pub active: Vec<bool>,
    pub iterations: usize,
}

impl RankPoolSolution {
    pub fn u(&self) -> &DVector<f64> {
        self.u.values()
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }
}

pub fn rank_pool(x: &FrameSequence, cfg: &SvrConfig) -> Result<RankPoolSolution> {
    rank_pool_frames(x.frames(), cfg)
}

const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-10;

/// Damped Newton with backtracking on the rank-pooling objective.
pub fn rank_pool_frames(frames: &[DVector<f64>], cfg: &SvrConfig) -> Result<RankPoolSolution> {
    cfg.validate()?;
    let d = frames.first().map(|f| f.len()).ok_or(Error::InvalidSequence {
        id: String::new(),
        reason: "sequence has no frames".into(),
    })?;

    let mut u = DVector::zeros(d);
    let mut e = residuals(frames, &u, cfg.epsilon);
    let mut grad = gradient_from(frames, &u, &e, cfg.c);
    let mut f = objective_from(&u, &e, cfg.c);
    let mut iterations = 0;

    while grad.norm() > cfg.tol {
        if iterations == cfg.max_iter {
            return Err(Error::SolverDidNotConverge {
                grad_norm: grad.norm(),
                best: u,
                iterations,
            });
        }
        iterations += 1;

        let step = newton_direction(frames, &e, &grad, cfg.c, d);
        let slope = grad.dot(&step);

        let mut alpha = 1.0;
        let accepted = loop {
            let cand = &u + &step * alpha;
            let cand_e = residuals(frames, &cand, cfg.epsilon);
            let cand_f = objective_from(&cand, &cand_e, cfg.c);
            if cand_f <= f + ARMIJO * alpha * slope {
                break Some((cand, cand_e, cand_f));
            }
            alpha *= 0.5;
            if alpha < MIN_STEP {
                break None;
            }
        };

        let (cand, cand_e, cand_f) = match accepted {
            Some(next) => next,
            None => {
                // Objective differences are below rounding; the full step
                // is still worth taking if it shrinks the gradient.
                let cand = &u + &step;
                let cand_e = residuals(frames, &cand, cfg.epsilon);
                let cand_grad = gradient_from(frames, &cand, &cand_e, cfg.c);
                if cand_grad.norm() >= grad.norm() {
                    return Err(Error::SolverDidNotConverge {
                        grad_norm: grad.norm(),
                        best: u,
                        iterations,
                    });
                }
                let cand_f = objective_from(&cand, &cand_e, cfg.c);
                (cand, cand_e, cand_f)
            }
        };
        u = cand;
        e = cand_e;
        f = cand_f;
        grad = gradient_from(frames, &u, &e, cfg.c);
    }

    let active = e.iter().map(|x| *x != 0.0).collect();
    Ok(RankPoolSolution {
        u: Encoding::new(u, "rank"),
        objective: f,
        grad_norm: grad.norm(),
        residuals: e,
        active,
        iterations,
    })
}

fn objective_from(u: &DVector<f64>, e: &[f64], c: f64) -> f64 {
    0.5 * u.norm_squared() + 0.5 * c * e.iter().map(|x| x * x).sum::<f64>()
}

/// Solves `(I + C * sum_active v v^T) step = -grad`.
fn newton_direction(frames: &[DVector<f64>], e: &[f64], grad: &DVector<f64>, c: f64, d: usize) -> DVector<f64> {
    let mut h = DMatrix::identity(d, d);
    for (v, &et) in frames.iter().zip(e) {
        if et != 0.0 {
            h.ger(c, v, v, 1.0);
        }
    }
    // I + PSD is always positive definite.
    let chol = h.cholesky().expect("rank-pool Hessian is positive definite");
    -chol.solve(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn seq(rows: &[Vec<f64>]) -> FrameSequence {
        FrameSequence::from_rows("s", rows).unwrap()
    }

    fn random_seq(rng: &mut ChaCha8Rng, j: usize, d: usize) -> FrameSequence {
        let rows: Vec<Vec<f64>> = (0..j)
            .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        seq(&rows)
    }

    #[test]
    fn avg_examples() {
        assert_eq!(
            avg_pool(&seq(&[vec![1.0, 3.0], vec![3.0, 5.0]])).values().as_slice(),
            &[2.0, 4.0]
        );
        assert_eq!(avg_pool(&seq(&[vec![7.0, -2.0]])).values().as_slice(), &[7.0, -2.0]);
    }

    #[test]
    fn max_examples() {
        assert_eq!(
            max_pool(&seq(&[vec![1.0, 3.0], vec![3.0, -5.0]])).values().as_slice(),
            &[3.0, 3.0]
        );
        assert_eq!(max_pool(&seq(&[vec![7.0, -2.0]])).values().as_slice(), &[7.0, -2.0]);
    }

    #[test]
    fn pyramid_examples() {
        let x = seq(&[vec![0.0], vec![2.0], vec![4.0], vec![6.0]]);
        assert_eq!(
            temporal_pyramid(&x, PyramidBase::Avg).values().as_slice(),
            &[3.0, 1.0, 5.0]
        );
        let one = seq(&[vec![1.5, -1.0]]);
        assert_eq!(
            temporal_pyramid(&one, PyramidBase::Avg).values().as_slice(),
            &[1.5, -1.0, 1.5, -1.0, 1.5, -1.0]
        );
        let rev = temporal_pyramid(&x.reversed(), PyramidBase::Avg);
        assert_ne!(rev, temporal_pyramid(&x, PyramidBase::Avg));
        // odd J: first half takes the extra frame
        let odd = seq(&[vec![1.0], vec![2.0], vec![3.0]]);
        assert_eq!(
            temporal_pyramid(&odd, PyramidBase::Max).values().as_slice(),
            &[3.0, 2.0, 3.0]
        );
    }

    #[test]
    fn avg_is_stationary_point_of_squared_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_seq(&mut rng, 9, 5);
        let u = avg_pool(&x).into_values();
        let mut g = DVector::zeros(5);
        for v in x.frames() {
            g += &u - v;
        }
        assert!(g.amax() < 1e-13);
    }

    #[test]
    fn zero_frames_give_zero_encoding() {
        let x = seq(&vec![vec![0.0; 3]; 5]);
        let sol = rank_pool(&x, &SvrConfig::default()).unwrap();
        assert_eq!(sol.u().as_slice(), &[0.0; 3]);
    }

    #[test]
    fn single_frame_is_legal() {
        let x = seq(&[vec![2.0, -1.0]]);
        let cfg = SvrConfig::default();
        let sol = rank_pool(&x, &cfg).unwrap();
        assert!(sol.grad_norm <= cfg.tol);
        // 1-D in the frame direction: u = a v with a(1 + C|v|^2) = C(1 - eps)
        let v = &x.frames()[0];
        let a = cfg.c * (1.0 - cfg.epsilon) / (1.0 + cfg.c * v.norm_squared());
        assert!((sol.u() - v * a).amax() < 1e-12);
    }

    #[test]
    fn ramp_scores_increase() {
        let a = DVector::from_row_slice(&[0.6, 0.0, -0.8]);
        let rows: Vec<Vec<f64>> = (1..=20).map(|t| (&a * t as f64).iter().copied().collect()).collect();
        let cfg = SvrConfig::default().with_c(10.0);
        let sol = rank_pool(&seq(&rows), &cfg).unwrap();
        let scores: Vec<f64> = rows.iter().map(|r| sol.u().dot(&DVector::from_row_slice(r))).collect();
        assert!(scores.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn residual_cases() {
        assert_eq!(residual(5.0, 3.0, 0.5), 1.5);
        assert_eq!(residual(1.0, 3.0, 0.5), -1.5);
        assert_eq!(residual(3.2, 3.0, 0.5), 0.0);
        assert_eq!(residual(3.5, 3.0, 0.5), 0.0);
        assert_eq!(residual(3.5, 3.0, 0.0), 0.5);
    }

    #[test]
    fn reports_non_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_seq(&mut rng, 30, 6);
        let cfg = SvrConfig {
            max_iter: 1,
            tol: 1e-300,
            ..SvrConfig::default()
        };
        match rank_pool(&x, &cfg) {
            Err(Error::SolverDidNotConverge { best, iterations, .. }) => {
                assert_eq!(iterations, 1);
                assert_eq!(best.len(), 6);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn solution_diagnostics_are_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_seq(&mut rng, 15, 4);
        let cfg = SvrConfig::default().with_epsilon(0.5);
        let sol = rank_pool(&x, &cfg).unwrap();
        for (t, v) in x.frames().iter().enumerate() {
            let r = sol.u().dot(v) - (t + 1) as f64;
            let e = sol.residuals[t];
            assert_eq!(sol.active[t], e != 0.0);
            if e != 0.0 {
                assert_eq!(e.signum(), r.signum());
                assert!(r.abs() >= cfg.epsilon);
            } else {
                assert!(r.abs() <= cfg.epsilon);
            }
        }
        assert!((sol.objective - svr_objective(x.frames(), sol.u(), &cfg)).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn permutation_invariance_and_order_sensitivity(seed in 0u64..10_000, j in 2usize..12, d in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_seq(&mut rng, j, d);
            let r = x.reversed();
            prop_assert_eq!(max_pool(&x), max_pool(&r));
            prop_assert_eq!(avg_pool(&x), avg_pool(&r));
            let cfg = SvrConfig::default();
            let u = rank_pool(&x, &cfg).unwrap();
            let ur = rank_pool(&r, &cfg).unwrap();
            prop_assert!((u.u() - ur.u()).norm() > 1e-6);
        }

        #[test]
        fn convex_minimum(seed in 0u64..10_000, j in 1usize..15, d in 1usize..6, c in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_seq(&mut rng, j, d);
            let cfg = SvrConfig::default().with_c(c);
            let sol = rank_pool(&x, &cfg).unwrap();
            prop_assert!(sol.grad_norm <= cfg.tol);
            for _ in 0..10 {
                let other = sol.u() + DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                prop_assert!(sol.objective <= svr_objective(x.frames(), &other, &cfg) + 1e-6);
            }
        }

        #[test]
        fn gradient_matches_finite_differences(seed in 0u64..10_000, j in 1usize..12, d in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_seq(&mut rng, j, d);
            let cfg = SvrConfig::default();
            let u = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let g = svr_gradient(x.frames(), &u, &cfg);
            let h = 1e-6;
            let fd = DVector::from_fn(d, |i, _| {
                let mut p = u.clone();
                let mut m = u.clone();
                p[i] += h;
                m[i] -= h;
                (svr_objective(x.frames(), &p, &cfg) - svr_objective(x.frames(), &m, &cfg)) / (2.0 * h)
            });
            let rel = (&g - &fd).norm() / g.norm().max(fd.norm()).max(1e-12);
            prop_assert!(rel < 1e-5, "rel {}", rel);
        }
    }
}
