//! Randomized finite-difference checks of every analytic gradient.
//!
//! Each trial draws a fresh instance, evaluates the analytic gradient and a
//! Richardson-refined central difference that re-solves the rank-pool
//! problem at every probe. Trials whose active set (or map sign pattern)
//! changes at any probe point are skipped: the argmin is not differentiable
//! across such a change and the comparison is meaningless there.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::argmin_grad::{grad_wrt_scalar_param, grad_wrt_w, transform_frames, vjp_inputs, FactorMode, WGradMode};
use crate::error::{Error, Result};
use crate::maps::MapKind;
use crate::oracle::{fd_derivative, fd_derivative_vec, fd_gradient};
use crate::pooling::{rank_pool_frames, svr_gradient, svr_objective, SvrConfig};
use crate::training::{end_to_end_sample, AffineUpstream, EndToEndConfig, LinearClassifier, LossKind, UpstreamMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    /// Objective gradient of the rank-pool problem.
    Svr,
    /// `du/dtheta` for a scalar parameter moving all frames.
    Theta,
    /// Per-frame vector-Jacobian product.
    Inputs,
    /// Gradient w.r.t. the shared matrix `W`.
    W,
    /// Classifier loss through rank pooling into an affine+relu upstream.
    Pipeline,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Svr, Suite::Theta, Suite::Inputs, Suite::W, Suite::Pipeline];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Svr => "svr",
            Suite::Theta => "theta",
            Suite::Inputs => "inputs",
            Suite::W => "W",
            Suite::Pipeline => "pipeline",
        }
    }

    pub fn threshold(self) -> f64 {
        match self {
            Suite::Pipeline => 1e-3,
            _ => 1e-4,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown gradcheck suite `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub trials: usize,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
    pub threshold: f64,
    /// Extra diagnostics as `(name, value)`.
    pub diagnostics: Vec<(String, f64)>,
}

impl SuiteReport {
    /// Under threshold on every checked trial. Zero trials pass vacuously;
    /// a run that skipped every trial does not.
    pub fn passed(&self) -> bool {
        if self.trials == 0 {
            return true;
        }
        self.checked > 0 && self.max_rel_err < self.threshold
    }

    pub fn skip_fraction(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.skipped as f64 / self.trials as f64
        }
    }
}

/// `|a - b| / max(|a|, |b|)`, and 0 when both are negligible.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < 1e-12 && nb < 1e-12 {
        return 0.0;
    }
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    diff / na.max(nb)
}

const H: f64 = 1e-5;

/// Tight solver settings so that re-solve noise stays far below the FD
/// truncation error.
fn tight(svr: &SvrConfig) -> SvrConfig {
    SvrConfig {
        tol: 1e-11,
        max_iter: 500,
        ..*svr
    }
}

fn randn(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample(StandardNormal))
}

fn random_frames(rng: &mut ChaCha8Rng, j: usize, d: usize) -> Vec<DVector<f64>> {
    (0..j).map(|_| randn(rng, d)).collect()
}

fn random_svr(rng: &mut ChaCha8Rng) -> SvrConfig {
    let c = [0.1, 1.0, 10.0][rng.random_range(0..3)];
    let eps = [0.0, 0.1, 0.5][rng.random_range(0..3)];
    tight(&SvrConfig::default().with_c(c).with_epsilon(eps))
}

/// Solves and returns `(u, active flags)`.
fn solve(frames: &[DVector<f64>], svr: &SvrConfig) -> Result<(DVector<f64>, Vec<bool>)> {
    let sol = rank_pool_frames(frames, svr)?;
    Ok((sol.u.into_values(), sol.active))
}

/// Probe points used by the Richardson difference around `x`.
fn probes(x: f64) -> [f64; 4] {
    [x - H, x - H / 2.0, x + H / 2.0, x + H]
}

fn suite_seed(seed: u64, suite: Suite) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (suite as u64 + 1)
}

pub fn run_suite(suite: Suite, trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(suite_seed(seed, suite));
    let mut report = SuiteReport {
        suite,
        trials,
        checked: 0,
        skipped: 0,
        max_rel_err: 0.0,
        threshold: suite.threshold(),
        diagnostics: Vec::new(),
    };
    let mut extra = Diagnostics::default();
    for _ in 0..trials {
        let outcome = match suite {
            Suite::Svr => trial_svr(&mut rng)?,
            Suite::Theta => trial_theta(&mut rng)?,
            Suite::Inputs => trial_inputs(&mut rng)?,
            Suite::W => trial_w(&mut rng, &mut extra)?,
            Suite::Pipeline => trial_pipeline(&mut rng)?,
        };
        match outcome {
            Some(err) => {
                report.checked += 1;
                report.max_rel_err = report.max_rel_err.max(err);
            }
            None => report.skipped += 1,
        }
    }
    if suite == Suite::W && trials > 0 {
        report.diagnostics = vec![
            ("d1_full_vs_diag_max_abs_gap".into(), extra.d1_gap),
            (
                "diag_full_positive_inner_fraction".into(),
                extra.positive as f64 / trials as f64,
            ),
            ("diag_full_mean_cosine".into(), extra.cosine_sum / trials as f64),
        ];
    }
    Ok(report)
}

#[derive(Default)]
struct Diagnostics {
    d1_gap: f64,
    positive: usize,
    cosine_sum: f64,
}

fn trial_svr(rng: &mut ChaCha8Rng) -> Result<Option<f64>> {
    let (j, d) = (rng.random_range(3..=15), rng.random_range(1..=6));
    let frames = random_frames(rng, j, d);
    let svr = random_svr(rng);
    let (u_star, _) = solve(&frames, &svr)?;
    // away from the stationary point, where the gradient is not ~0
    let u = u_star + randn(rng, d) * 0.3;
    let base = crate::pooling::residuals(&frames, &u, svr.epsilon);
    let stable = (0..d).all(|i| {
        probes(u[i]).iter().all(|&p| {
            let mut q = u.clone();
            q[i] = p;
            let r = crate::pooling::residuals(&frames, &q, svr.epsilon);
            r.iter().zip(&base).all(|(a, b)| (*a == 0.0) == (*b == 0.0))
        })
    });
    if !stable {
        return Ok(None);
    }
    let analytic = svr_gradient(&frames, &u, &svr);
    let fd = fd_gradient(
        |x| svr_objective(&frames, &DVector::from_row_slice(x), &svr),
        u.as_slice(),
        H,
    );
    Ok(Some(rel_error(analytic.as_slice(), &fd)))
}

fn trial_theta(rng: &mut ChaCha8Rng) -> Result<Option<f64>> {
    let (j, d) = (rng.random_range(4..=12), rng.random_range(1..=5));
    let a = random_frames(rng, j, d);
    let b = random_frames(rng, j, d);
    let svr = random_svr(rng);
    let at = |theta: f64| -> Vec<DVector<f64>> { a.iter().zip(&b).map(|(a, b)| a + b * theta).collect() };
    let (u, active) = solve(&at(0.0), &svr)?;
    for p in probes(0.0) {
        if solve(&at(p), &svr)?.1 != active {
            return Ok(None);
        }
    }
    let analytic = grad_wrt_scalar_param(&at(0.0), &u, &b, &svr, FactorMode::Auto)?;
    let fd = fd_derivative_vec(
        |t| solve(&at(t), &svr).map(|s| s.0.as_slice().to_vec()).unwrap_or_default(),
        0.0,
        H,
    );
    Ok(Some(rel_error(analytic.as_slice(), &fd)))
}

fn trial_inputs(rng: &mut ChaCha8Rng) -> Result<Option<f64>> {
    let (j, d) = (rng.random_range(3..=10), rng.random_range(1..=4));
    let frames = random_frames(rng, j, d);
    let svr = random_svr(rng);
    let g = randn(rng, d);
    let (u, active) = solve(&frames, &svr)?;
    let analytic: Vec<f64> = vjp_inputs(&frames, &u, &g, &svr, FactorMode::Auto)?
        .iter()
        .flat_map(|v| v.iter().copied().collect::<Vec<_>>())
        .collect();
    let mut fd = Vec::with_capacity(j * d);
    for t in 0..j {
        for k in 0..d {
            let at = |x: f64| {
                let mut f = frames.clone();
                f[t][k] = x;
                f
            };
            for p in probes(frames[t][k]) {
                if solve(&at(p), &svr)?.1 != active {
                    return Ok(None);
                }
            }
            fd.push(fd_derivative(
                |x| solve(&at(x), &svr).map(|s| g.dot(&s.0)).unwrap_or(f64::NAN),
                frames[t][k],
                H,
            ));
        }
    }
    Ok(Some(rel_error(&analytic, &fd)))
}

const W_MAPS: [MapKind; 4] = [MapKind::Identity, MapKind::Ser, MapKind::Relu, MapKind::Ssr];

fn trial_w(rng: &mut ChaCha8Rng, diag: &mut Diagnostics) -> Result<Option<f64>> {
    // D = 1: the two modes must coincide
    {
        let j = rng.random_range(3..=10);
        let inputs = random_frames(rng, j, 1);
        let w = DMatrix::from_element(1, 1, 1.0 + 0.3 * rng.sample::<f64, _>(StandardNormal));
        let svr = random_svr(rng);
        let (_, v) = transform_frames(&inputs, &w, MapKind::Identity);
        let (u, _) = solve(&v, &svr)?;
        let g = randn(rng, 1);
        let full = grad_wrt_w(&inputs, &w, MapKind::Identity, &u, &g, &svr, WGradMode::Full)?;
        let approx = grad_wrt_w(&inputs, &w, MapKind::Identity, &u, &g, &svr, WGradMode::Diagonal)?;
        diag.d1_gap = diag.d1_gap.max((full - approx).amax());
    }

    let (j, d) = (rng.random_range(4..=10), rng.random_range(2..=4));
    let inputs = random_frames(rng, j, d);
    let w = DMatrix::identity(d, d) + DMatrix::from_fn(d, d, |_, _| 0.2 * rng.sample::<f64, _>(StandardNormal));
    let map = W_MAPS[rng.random_range(0..W_MAPS.len())];
    let svr = random_svr(rng);
    let (_, v) = transform_frames(&inputs, &w, map);
    let (u, active) = solve(&v, &svr)?;
    let g = randn(rng, u.len());
    let full = grad_wrt_w(&inputs, &w, map, &u, &g, &svr, WGradMode::Full)?;
    let approx = grad_wrt_w(&inputs, &w, map, &u, &g, &svr, WGradMode::Diagonal)?;
    let inner = full.dot(&approx);
    if inner > 0.0 {
        diag.positive += 1;
    }
    let norms = full.norm() * approx.norm();
    if norms > 0.0 {
        diag.cosine_sum += inner / norms;
    }

    let signs = |w: &DMatrix<f64>| -> Vec<bool> {
        inputs
            .iter()
            .flat_map(|x| (w * x).iter().map(|a| *a > 0.0).collect::<Vec<_>>())
            .collect()
    };
    let base_signs = signs(&w);
    for (i, &entry) in w.as_slice().iter().enumerate() {
        for p in probes(entry) {
            let mut q = w.clone();
            q.as_mut_slice()[i] = p;
            let (_, vq) = transform_frames(&inputs, &q, map);
            if signs(&q) != base_signs || solve(&vq, &svr)?.1 != active {
                return Ok(None);
            }
        }
    }
    let fd = fd_gradient(
        |flat| {
            let q = DMatrix::from_column_slice(d, d, flat);
            let (_, vq) = transform_frames(&inputs, &q, map);
            solve(&vq, &svr).map(|s| g.dot(&s.0)).unwrap_or(f64::NAN)
        },
        w.as_slice(),
        H,
    );
    Ok(Some(rel_error(full.as_slice(), &fd)))
}

fn trial_pipeline(rng: &mut ChaCha8Rng) -> Result<Option<f64>> {
    let (j, d, k) = (6, 3, 3);
    let inputs = random_frames(rng, j, d);
    let a = DMatrix::identity(d, d) + DMatrix::from_fn(d, d, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
    let b = randn(rng, d) * 0.5;
    let up = AffineUpstream::new(&a, &b, MapKind::Relu)?;
    let clf = LinearClassifier {
        weights: DMatrix::from_fn(k, d, |_, _| rng.sample(StandardNormal)),
        bias: randn(rng, k),
    };
    let label = rng.random_range(0..k);
    let cfg = EndToEndConfig {
        loss: LossKind::CrossEntropy,
        svr: tight(&SvrConfig::default()),
        ..EndToEndConfig::default()
    };

    let with_params = |p: &[f64]| {
        let mut m = up.clone();
        m.params_mut().copy_from_slice(p);
        m
    };
    let pattern = |m: &AffineUpstream| -> Result<(Vec<bool>, Vec<bool>)> {
        let v: Vec<DVector<f64>> = inputs.iter().map(|x| m.forward(x)).collect();
        let pre: Vec<bool> = inputs
            .iter()
            .flat_map(|x| {
                (m.matrix() * x + m.offset())
                    .iter()
                    .map(|z| *z > 0.0)
                    .collect::<Vec<_>>()
            })
            .collect();
        Ok((pre, solve(&v, &cfg.svr)?.1))
    };
    let base = pattern(&up)?;
    let params = up.params().to_vec();
    for i in 0..params.len() {
        for p in probes(params[i]) {
            let mut q = params.clone();
            q[i] = p;
            if pattern(&with_params(&q))? != base {
                return Ok(None);
            }
        }
    }
    let analytic = end_to_end_sample(&up, &clf, &inputs, label, &cfg)?
        .upstream
        .expect("trainable upstream");
    let fd = fd_gradient(
        |p| {
            end_to_end_sample(&with_params(p).frozen(), &clf, &inputs, label, &cfg)
                .map(|s| s.loss.loss)
                .unwrap_or(f64::NAN)
        },
        &params,
        H,
    );
    Ok(Some(rel_error(&analytic, &fd)))
}
