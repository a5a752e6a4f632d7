//! Differentiation through the rank-pooling argmin.
//!
//! At a converged solution the stationarity condition
//!
//! ```text
//! F(u, theta) = u + C * sum_active e_t v_t = 0,   e_t = u.v_t - t -/+ eps
//! ```
//!
//! holds with the active set frozen. Differentiating it gives
//!
//! ```text
//! H du/dtheta = -C * sum_active ( e_t dv_t + (u.dv_t) v_t ),
//! H = I + C * sum_active v_t v_t^T.
//! ```
//!
//! Every formula here is derived from the objective directly and is gated on
//! agreement with finite differences of the re-solved problem (see
//! [`crate::gradcheck`]).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::maps::MapKind;
use crate::pooling::{residuals, svr_gradient, SvrConfig};

/// Threshold below which a Sherman-Morrison denominator counts as zero.
pub const DEGENERATE_DENOMINATOR: f64 = 1e-12;

/// Dimension up to which [`FactorMode::Auto`] uses a dense Cholesky factor.
pub const DENSE_LIMIT: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSet {
    pub residuals: Vec<f64>,
    pub active: Vec<bool>,
}

impl ActiveSet {
    pub fn at(frames: &[DVector<f64>], u: &DVector<f64>, epsilon: f64) -> Self {
        let residuals = residuals(frames, u, epsilon);
        let active = residuals.iter().map(|e| *e != 0.0).collect();
        ActiveSet { residuals, active }
    }

    pub fn count(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }

    /// Active frames with their residuals.
    pub fn iter_active<'a>(
        &'a self,
        frames: &'a [DVector<f64>],
    ) -> impl Iterator<Item = (usize, &'a DVector<f64>, f64)> + 'a {
        frames
            .iter()
            .zip(&self.residuals)
            .enumerate()
            .filter(|(_, (_, e))| **e != 0.0)
            .map(|(t, (v, e))| (t, v, *e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorMode {
    /// Dense up to [`DENSE_LIMIT`], Sherman-Morrison chain above.
    Auto,
    Dense,
    ShermanMorrison,
    /// Inverse of the Hessian diagonal only. An approximation.
    Diagonal,
}

#[derive(Debug, Clone)]
enum Repr {
    Dense(Cholesky<f64, Dyn>),
    Diagonal(DVector<f64>),
    ShermanMorrison(DMatrix<f64>),
}

/// Something that can apply `H^{-1}` for `H = I + C * sum_active v v^T`.
#[derive(Debug, Clone)]
pub struct HessianFactor {
    dim: usize,
    repr: Repr,
}

impl HessianFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> FactorMode {
        match self.repr {
            Repr::Dense(_) => FactorMode::Dense,
            Repr::Diagonal(_) => FactorMode::Diagonal,
            Repr::ShermanMorrison(_) => FactorMode::ShermanMorrison,
        }
    }

    pub fn apply_inverse(&self, g: &DVector<f64>) -> DVector<f64> {
        match &self.repr {
            Repr::Dense(chol) => chol.solve(g),
            Repr::Diagonal(inv) => g.component_mul(inv),
            Repr::ShermanMorrison(inv) => inv * g,
        }
    }

    /// The represented inverse as a dense matrix.
    pub fn inverse_matrix(&self) -> DMatrix<f64> {
        match &self.repr {
            Repr::Dense(chol) => chol.inverse(),
            Repr::Diagonal(inv) => DMatrix::from_diagonal(inv),
            Repr::ShermanMorrison(inv) => inv.clone(),
        }
    }
}

/// `I + C * sum_active v_t v_t^T` as a dense matrix.
pub fn hessian_matrix(frames: &[DVector<f64>], active: &ActiveSet, c: f64) -> DMatrix<f64> {
    let d = frames[0].len();
    let mut h = DMatrix::identity(d, d);
    for (_, v, _) in active.iter_active(frames) {
        h.ger(c, v, v, 1.0);
    }
    h
}

pub fn hessian(frames: &[DVector<f64>], u: &DVector<f64>, cfg: &SvrConfig, mode: FactorMode) -> Result<HessianFactor> {
    let active = ActiveSet::at(frames, u, cfg.epsilon);
    factor(frames, &active, cfg.c, mode)
}

fn factor(frames: &[DVector<f64>], active: &ActiveSet, c: f64, mode: FactorMode) -> Result<HessianFactor> {
    let dim = frames[0].len();
    let mode = match mode {
        FactorMode::Auto if dim <= DENSE_LIMIT => FactorMode::Dense,
        FactorMode::Auto => FactorMode::ShermanMorrison,
        m => m,
    };
    let repr = match mode {
        FactorMode::Dense => {
            let h = hessian_matrix(frames, active, c);
            Repr::Dense(h.cholesky().ok_or(Error::SingularMatrix { column: 0 })?)
        }
        FactorMode::Diagonal => {
            let mut diag = DVector::from_element(dim, 1.0);
            for (_, v, _) in active.iter_active(frames) {
                diag.zip_apply(v, |d, x| *d += c * x * x);
            }
            Repr::Diagonal(diag.map(|d| 1.0 / d))
        }
        FactorMode::ShermanMorrison => {
            let mut chain = ShermanMorrison::new(dim);
            for (_, v, _) in active.iter_active(frames) {
                chain.push_symmetric(c, v)?;
            }
            Repr::ShermanMorrison(chain.into_inverse())
        }
        FactorMode::Auto => unreachable!(),
    };
    Ok(HessianFactor { dim, repr })
}

/// Incremental inverse of `H_m = I + sum_{i<=m} a_i b_i^T`, one rank-one
/// update at a time in `O(p^2)` each.
#[derive(Debug, Clone)]
pub struct ShermanMorrison {
    inverse: DMatrix<f64>,
    updates: usize,
}

impl ShermanMorrison {
    pub fn new(dim: usize) -> Self {
        ShermanMorrison {
            inverse: DMatrix::identity(dim, dim),
            updates: 0,
        }
    }

    /// `H <- H + a b^T`.
    pub fn push(&mut self, a: &DVector<f64>, b: &DVector<f64>) -> Result<()> {
        let ha = &self.inverse * a;
        let bh = self.inverse.tr_mul(b);
        let denom = 1.0 + b.dot(&ha);
        self.check(denom)?;
        self.inverse.ger(-1.0 / denom, &ha, &bh, 1.0);
        self.updates += 1;
        Ok(())
    }

    /// `H <- H + scale * v v^T`, keeping the inverse exactly symmetric.
    pub fn push_symmetric(&mut self, scale: f64, v: &DVector<f64>) -> Result<()> {
        let hv = &self.inverse * v;
        let denom = 1.0 + scale * v.dot(&hv);
        self.check(denom)?;
        self.inverse.syger(-scale / denom, &hv, &hv, 1.0);
        // syger fills the lower triangle only
        let n = self.inverse.nrows();
        for j in 0..n {
            for i in 0..j {
                self.inverse[(i, j)] = self.inverse[(j, i)];
            }
        }
        self.updates += 1;
        Ok(())
    }

    fn check(&self, denom: f64) -> Result<()> {
        if denom.abs() < DEGENERATE_DENOMINATOR || !denom.is_finite() {
            return Err(Error::DegenerateUpdate {
                index: self.updates,
                denominator: denom,
            });
        }
        Ok(())
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn into_inverse(self) -> DMatrix<f64> {
        self.inverse
    }
}

fn check_stationary(frames: &[DVector<f64>], u: &DVector<f64>, cfg: &SvrConfig) -> Result<()> {
    if frames.is_empty() {
        return Err(Error::InvalidConfig("no frames".into()));
    }
    if u.len() != frames[0].len() {
        return Err(Error::DimensionMismatch {
            expected: frames[0].len(),
            found: u.len(),
        });
    }
    let grad_norm = svr_gradient(frames, u, cfg).norm();
    if grad_norm > cfg.tol {
        return Err(Error::NotConverged {
            grad_norm,
            tol: cfg.tol,
        });
    }
    Ok(())
}

/// `du/dtheta` for a scalar parameter, given `dv_t/dtheta` for every frame.
pub fn grad_wrt_scalar_param(
    frames: &[DVector<f64>],
    u: &DVector<f64>,
    dframes: &[DVector<f64>],
    cfg: &SvrConfig,
    mode: FactorMode,
) -> Result<DVector<f64>> {
    check_stationary(frames, u, cfg)?;
    if dframes.len() != frames.len() {
        return Err(Error::DimensionMismatch {
            expected: frames.len(),
            found: dframes.len(),
        });
    }
    let active = ActiveSet::at(frames, u, cfg.epsilon);
    let mut rhs = DVector::zeros(u.len());
    for (t, v, e) in active.iter_active(frames) {
        let dv = &dframes[t];
        rhs.axpy(e, dv, 1.0);
        rhs.axpy(u.dot(dv), v, 1.0);
    }
    rhs *= -cfg.c;
    Ok(factor(frames, &active, cfg.c, mode)?.apply_inverse(&rhs))
}

/// Vector-Jacobian product: given `g = dL/du`, returns `dL/dv_t` for every
/// frame. Inactive frames get exact zeros.
pub fn vjp_inputs(
    frames: &[DVector<f64>],
    u: &DVector<f64>,
    g: &DVector<f64>,
    cfg: &SvrConfig,
    mode: FactorMode,
) -> Result<Vec<DVector<f64>>> {
    check_stationary(frames, u, cfg)?;
    let active = ActiveSet::at(frames, u, cfg.epsilon);
    let w = factor(frames, &active, cfg.c, mode)?.apply_inverse(g);
    Ok(frame_grads(frames, u, &w, &active, cfg.c))
}

/// `dL/dv_t = -C (e_t w + (w.v_t) u)` with `w = H^{-1} g`.
fn frame_grads(
    frames: &[DVector<f64>],
    u: &DVector<f64>,
    w: &DVector<f64>,
    active: &ActiveSet,
    c: f64,
) -> Vec<DVector<f64>> {
    frames
        .iter()
        .zip(&active.residuals)
        .map(|(v, &e)| {
            if e == 0.0 {
                DVector::zeros(u.len())
            } else {
                let mut out = w * (-c * e);
                out.axpy(-c * w.dot(v), u, 1.0);
                out
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WGradMode {
    Full,
    Diagonal,
}

impl WGradMode {
    pub fn name(self) -> &'static str {
        match self {
            WGradMode::Full => "full",
            WGradMode::Diagonal => "diagonal",
        }
    }
}

impl std::str::FromStr for WGradMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(WGradMode::Full),
            "diagonal" | "diag" => Ok(WGradMode::Diagonal),
            _ => Err(Error::InvalidConfig(format!("unknown gradient mode `{s}`"))),
        }
    }
}

/// Frames `v_t = psi(W x_t)` for the discriminative transform, together with
/// the pre-activations `W x_t`.
pub fn transform_frames(
    inputs: &[DVector<f64>],
    w: &DMatrix<f64>,
    map: MapKind,
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let pre: Vec<DVector<f64>> = inputs.iter().map(|x| w * x).collect();
    let frames = pre.iter().map(|a| map.apply(a)).collect();
    (pre, frames)
}

/// `dL/dW` for `v_t = psi(W x_t)`, `u = argmin f(V, u)` and `g = dL/du`.
///
/// Full mode applies the exact Hessian inverse. Diagonal mode replaces it by
/// the inverse of its diagonal: with `b = g / diag(H)` and `s_t = b.v_t`,
///
/// ```text
/// dL/dW = -C * sum_active ( e_t b 1^T + s_t u 1^T ) o K_t,
/// K_t[i][j] = psi'(W x_t)_i x_t[j]
/// ```
///
/// (for maps that change dimension, `o K_t` is the pull-back through psi).
/// The two modes coincide when `D = 1`.
pub fn grad_wrt_w(
    inputs: &[DVector<f64>],
    w: &DMatrix<f64>,
    map: MapKind,
    u: &DVector<f64>,
    g: &DVector<f64>,
    cfg: &SvrConfig,
    mode: WGradMode,
) -> Result<DMatrix<f64>> {
    let (pre, frames) = transform_frames(inputs, w, map);
    check_stationary(&frames, u, cfg)?;
    let active = ActiveSet::at(&frames, u, cfg.epsilon);
    let factor_mode = match mode {
        WGradMode::Full => FactorMode::Auto,
        WGradMode::Diagonal => FactorMode::Diagonal,
    };
    let scaled = factor(&frames, &active, cfg.c, factor_mode)?.apply_inverse(g);
    let grads = frame_grads(&frames, u, &scaled, &active, cfg.c);

    let mut out = DMatrix::zeros(w.nrows(), w.ncols());
    for ((gv, a), x) in grads.iter().zip(&pre).zip(inputs) {
        if gv.iter().all(|z| *z == 0.0) {
            continue;
        }
        let ga = map.backward(a, gv)?;
        out.ger(1.0, &ga, x, 1.0);
    }
    Ok(out)
}
