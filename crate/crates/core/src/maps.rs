//! Point-wise non-linear maps applied to frames before rank pooling, plus
//! time-varying-mean smoothing.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::types::FrameSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MapKind {
    Identity,
    Relu,
    /// Sign expansion root; doubles the dimension.
    Ser,
    /// Signed square root.
    Ssr,
    L2Norm,
}

impl MapKind {
    pub const ALL: [MapKind; 5] = [
        MapKind::Identity,
        MapKind::Relu,
        MapKind::Ser,
        MapKind::Ssr,
        MapKind::L2Norm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MapKind::Identity => "identity",
            MapKind::Relu => "relu",
            MapKind::Ser => "ser",
            MapKind::Ssr => "ssr",
            MapKind::L2Norm => "l2norm",
        }
    }

    pub fn output_dim(self, dim: usize) -> usize {
        match self {
            MapKind::Ser => 2 * dim,
            _ => dim,
        }
    }

    pub fn apply(self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            MapKind::Identity => x.clone(),
            MapKind::Relu => relu(x),
            MapKind::Ser => ser(x),
            MapKind::Ssr => ssr(x),
            MapKind::L2Norm => l2_normalize(x),
        }
    }

    /// Pulls `grad_out` (gradient w.r.t. `apply(x)`) back to a gradient
    /// w.r.t. `x`. Kinks (relu, ser and ssr at 0) get derivative 0.
    pub fn backward(self, x: &DVector<f64>, grad_out: &DVector<f64>) -> Result<DVector<f64>> {
        let d = x.len();
        if grad_out.len() != self.output_dim(d) {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(d),
                found: grad_out.len(),
            });
        }
        let grad = match self {
            MapKind::Identity => grad_out.clone(),
            MapKind::Relu => DVector::from_fn(d, |i, _| if x[i] > 0.0 { grad_out[i] } else { 0.0 }),
            MapKind::Ssr => DVector::from_fn(d, |i, _| {
                if x[i] == 0.0 {
                    0.0
                } else {
                    grad_out[i] / (2.0 * x[i].abs().sqrt())
                }
            }),
            MapKind::Ser => DVector::from_fn(d, |i, _| {
                let xi = x[i];
                if xi > 0.0 {
                    grad_out[i] / (2.0 * xi.sqrt())
                } else if xi < 0.0 {
                    -grad_out[d + i] / (2.0 * (-xi).sqrt())
                } else {
                    0.0
                }
            }),
            MapKind::L2Norm => {
                let n = x.norm();
                if n == 0.0 {
                    DVector::zeros(d)
                } else {
                    let y = x / n;
                    (grad_out - &y * y.dot(grad_out)) / n
                }
            }
        };
        Ok(grad)
    }
}

impl fmt::Display for MapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MapKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MapKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown map `{s}`")))
    }
}

/// Sign expansion root. Blocked layout: `[sqrt(x+) ; sqrt(x-)]`.
pub fn ser(x: &DVector<f64>) -> DVector<f64> {
    let d = x.len();
    DVector::from_fn(2 * d, |k, _| {
        if k < d {
            x[k].max(0.0).sqrt()
        } else {
            (-x[k - d]).max(0.0).sqrt()
        }
    })
}

pub fn ssr(x: &DVector<f64>) -> DVector<f64> {
    x.map(|v| v.signum() * v.abs().sqrt())
        .map(|v| if v == 0.0 { 0.0 } else { v })
}

pub fn relu(x: &DVector<f64>) -> DVector<f64> {
    x.map(|v| v.max(0.0))
}

/// Divides by the Euclidean norm; the zero vector passes through.
pub fn l2_normalize(x: &DVector<f64>) -> DVector<f64> {
    let n = x.norm();
    if n == 0.0 {
        x.clone()
    } else {
        x / n
    }
}

/// Replaces frame `t` by the running mean of frames `1..=t`.
pub fn tvm_smooth(x: &FrameSequence) -> FrameSequence {
    let mut sum = DVector::zeros(x.dim());
    let frames = x
        .frames()
        .iter()
        .enumerate()
        .map(|(t, f)| {
            sum += f;
            &sum / (t + 1) as f64
        })
        .collect();
    x.with_frames(frames)
}

pub fn apply_map(x: &FrameSequence, kind: MapKind) -> FrameSequence {
    x.map_frames(|f| kind.apply(f))
}
