//! Trained models and their text file format.
//!
//! A model file is UTF-8 text. The first line is `rankpool-model v1`; every
//! other non-blank line is `key=value`, split at the first `=`. Real numbers
//! use the shortest exponent form that parses back to the same `f64`, and
//! vectors are comma-separated. See the README for the full key list.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::maps::MapKind;
use crate::pooling::SvrConfig;
use crate::training::{discriminative_encode, upstream_encode, AffineUpstream, LinearClassifier, LossKind};
use crate::types::FrameSequence;

pub const MODEL_HEADER: &str = "rankpool-model v1";

/// What turns a frame sequence into the classifier's input.
#[derive(Debug, Clone, PartialEq)]
pub enum Transform {
    /// A fixed encoder. `None` when the model was trained on encodings whose
    /// producing configuration is unknown; such a model only scores
    /// pre-computed encodings.
    Encoder(Option<EncoderConfig>),
    /// Rank pooling of `psi(W x_t)` with a learned square `W`.
    Shared {
        w: DMatrix<f64>,
        map: MapKind,
        svr: SvrConfig,
    },
    /// Rank pooling of a learned per-frame affine map.
    Upstream { upstream: AffineUpstream, svr: SvrConfig },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub class_names: Vec<String>,
    pub loss: LossKind,
    pub classifier: LinearClassifier,
    pub transform: Transform,
    /// Training settings echoed into the file.
    pub config: Vec<(String, String)>,
}

impl Model {
    pub fn classes(&self) -> usize {
        self.classifier.classes()
    }

    /// Dimension of the classifier input.
    pub fn dim(&self) -> usize {
        self.classifier.dim()
    }

    pub fn mode(&self) -> &'static str {
        match self.transform {
            Transform::Encoder(_) => "linear",
            Transform::Shared { .. } => "discriminative",
            Transform::Upstream { .. } => "end2end",
        }
    }

    pub fn encoder(&self) -> Option<&EncoderConfig> {
        match &self.transform {
            Transform::Encoder(cfg) => cfg.as_ref(),
            _ => None,
        }
    }

    pub fn encode(&self, x: &FrameSequence) -> Result<DVector<f64>> {
        let u = match &self.transform {
            Transform::Encoder(Some(cfg)) => cfg.encode(x)?.into_values(),
            Transform::Encoder(None) => {
                return Err(Error::InvalidConfig(
                    "model records no encoder; score pre-computed encodings instead".into(),
                ))
            }
            Transform::Shared { w, map, svr } => {
                if x.dim() != w.ncols() {
                    return Err(Error::DimensionMismatch {
                        expected: w.ncols(),
                        found: x.dim(),
                    });
                }
                discriminative_encode(x.frames(), w, *map, svr)?
            }
            Transform::Upstream { upstream, svr } => {
                if x.dim() != upstream.in_dim() {
                    return Err(Error::DimensionMismatch {
                        expected: upstream.in_dim(),
                        found: x.dim(),
                    });
                }
                upstream_encode(upstream, x.frames(), svr)?
            }
        };
        Ok(u)
    }

    pub fn scores(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        if u.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: u.len(),
            });
        }
        Ok(self.classifier.scores(u))
    }

    pub fn to_text(&self) -> Result<String> {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        put("classes", self.classes().to_string());
        put("dim", self.dim().to_string());
        put("loss", self.loss.name().into());
        put("mode", self.mode().into());
        for (c, name) in self.class_names.iter().enumerate() {
            if name.contains(['\n', '\r']) {
                return Err(Error::Format(format!("class name {name:?} contains a line break")));
            }
            put(&format!("class.{c}"), name.clone());
        }
        for c in 0..self.classes() {
            put(&format!("beta.{c}"), join(self.classifier.weights.row(c).iter()));
        }
        put("bias", join(self.classifier.bias.iter()));
        match &self.transform {
            Transform::Encoder(None) => {}
            Transform::Encoder(Some(cfg)) => {
                for (k, v) in cfg.to_pairs() {
                    put(&format!("encoder.{k}"), v);
                }
            }
            Transform::Shared { w, map, svr } => {
                put("w.dim", w.nrows().to_string());
                for i in 0..w.nrows() {
                    put(&format!("w.{i}"), join(w.row(i).iter()));
                }
                put("w.map", map.name().into());
                put_svr(&mut put, svr);
            }
            Transform::Upstream { upstream, svr } => {
                put("upstream.in", upstream.in_dim().to_string());
                put("upstream.out", upstream.out_dim().to_string());
                put("upstream.map", upstream.map.name().into());
                put(
                    "upstream.params",
                    join(crate::training::UpstreamMap::params(upstream).iter()),
                );
                put_svr(&mut put, svr);
            }
        }
        for (k, v) in &self.config {
            put(&format!("config.{k}"), v.clone());
        }
        Ok(format!("{MODEL_HEADER}\n{out}"))
    }

    pub fn from_text(text: &str) -> Result<Model> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == MODEL_HEADER => {}
            Some(h) => return Err(Error::Format(format!("unsupported model header `{h}`"))),
            None => return Err(Error::Format("empty model file".into())),
        }
        let mut kv = BTreeMap::new();
        let mut config = Vec::new();
        for line in lines {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("expected key=value, got `{line}`")))?;
            if let Some(key) = k.strip_prefix("config.") {
                config.push((key.to_string(), v.to_string()));
            } else if kv.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Format(format!("duplicate key `{k}`")));
            }
        }
        let get = |k: &str| {
            kv.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Format(format!("model lacks `{k}`")))
        };
        let classes: usize = num(get("classes")?, "classes")?;
        let dim: usize = num(get("dim")?, "dim")?;
        let loss: LossKind = get("loss")?.parse()?;
        let class_names = (0..classes)
            .map(|c| get(&format!("class.{c}")).map(str::to_string))
            .collect::<Result<Vec<_>>>()?;
        let mut weights = DMatrix::zeros(classes, dim);
        for c in 0..classes {
            let row = floats(get(&format!("beta.{c}"))?, dim, "beta")?;
            weights.row_mut(c).iter_mut().zip(row).for_each(|(w, r)| *w = r);
        }
        let bias = DVector::from_vec(floats(get("bias")?, classes, "bias")?);

        let transform = match get("mode")? {
            "linear" => {
                let enc: BTreeMap<String, String> = kv
                    .iter()
                    .filter_map(|(k, v)| k.strip_prefix("encoder.").map(|k| (k.to_string(), v.clone())))
                    .collect();
                if enc.is_empty() {
                    Transform::Encoder(None)
                } else {
                    Transform::Encoder(Some(EncoderConfig::from_pairs(&enc)?))
                }
            }
            "discriminative" => {
                let n: usize = num(get("w.dim")?, "w.dim")?;
                let mut w = DMatrix::zeros(n, n);
                for i in 0..n {
                    let row = floats(get(&format!("w.{i}"))?, n, "w")?;
                    w.row_mut(i).iter_mut().zip(row).for_each(|(a, b)| *a = b);
                }
                Transform::Shared {
                    w,
                    map: get("w.map")?.parse()?,
                    svr: read_svr(&get)?,
                }
            }
            "end2end" => {
                let input: usize = num(get("upstream.in")?, "upstream.in")?;
                let output: usize = num(get("upstream.out")?, "upstream.out")?;
                let params = floats(get("upstream.params")?, output * input + output, "upstream.params")?;
                Transform::Upstream {
                    upstream: AffineUpstream::from_params(input, output, params, get("upstream.map")?.parse()?)?,
                    svr: read_svr(&get)?,
                }
            }
            other => return Err(Error::Format(format!("unknown model mode `{other}`"))),
        };
        Ok(Model {
            class_names,
            loss,
            classifier: LinearClassifier { weights, bias },
            transform,
            config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model> {
        Model::from_text(&std::fs::read_to_string(path)?)
    }
}

fn put_svr(put: &mut impl FnMut(&str, String), svr: &SvrConfig) {
    put("svr.c", format!("{:e}", svr.c));
    put("svr.epsilon", format!("{:e}", svr.epsilon));
    put("svr.tol", format!("{:e}", svr.tol));
    put("svr.max_iter", svr.max_iter.to_string());
}

fn read_svr<'a>(get: &impl Fn(&str) -> Result<&'a str>) -> Result<SvrConfig> {
    let svr = SvrConfig {
        c: num(get("svr.c")?, "svr.c")?,
        epsilon: num(get("svr.epsilon")?, "svr.epsilon")?,
        tol: num(get("svr.tol")?, "svr.tol")?,
        max_iter: num(get("svr.max_iter")?, "svr.max_iter")?,
    };
    svr.validate()?;
    Ok(svr)
}

fn join<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    values.map(|v| format!("{v:e}")).collect::<Vec<_>>().join(",")
}

fn num<T: std::str::FromStr>(s: &str, key: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("invalid value `{s}` for `{key}`")))
}

fn floats(s: &str, expected: usize, key: &str) -> Result<Vec<f64>> {
    let v = if s.trim().is_empty() {
        Vec::new()
    } else {
        s.split(',').map(|x| num(x, key)).collect::<Result<Vec<f64>>>()?
    };
    if v.len() != expected {
        return Err(Error::Format(format!(
            "`{key}` has {} values, expected {expected}",
            v.len()
        )));
    }
    Ok(v)
}
