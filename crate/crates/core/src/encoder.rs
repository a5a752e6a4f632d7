//! One configurable front end over every temporal encoder, plus the
//! key/value form used to echo a configuration into output files.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::hierarchy::{hrp_encode, recursive_encode, HierarchyConfig, LayerSpec};
use crate::maps::{apply_map, tvm_smooth, MapKind};
use crate::pooling::{avg_pool, max_pool, temporal_pyramid, PyramidBase, SvrConfig};
use crate::types::{Encoding, FrameSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Avg,
    Max,
    Pyramid,
    /// Rank pooling of the mapped frames: a hierarchy of depth 1.
    Rank,
    RecursiveRank,
    Hrp,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Avg,
        Method::Max,
        Method::Pyramid,
        Method::Rank,
        Method::RecursiveRank,
        Method::Hrp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Avg => "avg",
            Method::Max => "max",
            Method::Pyramid => "pyramid",
            Method::Rank => "rank",
            Method::RecursiveRank => "recursive-rank",
            Method::Hrp => "hrp",
        }
    }

    pub fn uses_rank_pooling(self) -> bool {
        matches!(self, Method::Rank | Method::RecursiveRank | Method::Hrp)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}`")))
    }
}

impl FromStr for PyramidBase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" => Ok(PyramidBase::Avg),
            "max" => Ok(PyramidBase::Max),
            _ => Err(Error::InvalidConfig(format!("unknown pyramid base `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub method: Method,
    pub pyramid_base: PyramidBase,
    /// Layers and SVR constants. `Rank` uses only the first layer's map;
    /// the flat methods ignore it entirely.
    pub hierarchy: HierarchyConfig,
    /// Replace frames by their running mean first.
    pub smooth_tvm: bool,
    /// L2-normalize every frame (after smoothing).
    pub l2norm: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            method: Method::Hrp,
            pyramid_base: PyramidBase::Avg,
            hierarchy: HierarchyConfig::default(),
            smooth_tvm: false,
            l2norm: false,
        }
    }
}

impl EncoderConfig {
    pub fn new(method: Method) -> Self {
        EncoderConfig {
            method,
            ..EncoderConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hierarchy.validate()
    }

    /// Hierarchy actually run for the rank-based methods.
    fn effective_hierarchy(&self) -> HierarchyConfig {
        match self.method {
            Method::Rank => HierarchyConfig {
                layers: self.hierarchy.layers[..1].to_vec(),
                svr: self.hierarchy.svr,
            },
            _ => self.hierarchy.clone(),
        }
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        match self.method {
            Method::Avg | Method::Max => input_dim,
            Method::Pyramid => 3 * input_dim,
            _ => self.effective_hierarchy().output_dim(input_dim),
        }
    }

    pub fn preprocess(&self, x: &FrameSequence) -> FrameSequence {
        let mut x = if self.smooth_tvm { tvm_smooth(x) } else { x.clone() };
        if self.l2norm {
            x = apply_map(&x, MapKind::L2Norm);
        }
        x
    }

    pub fn encode(&self, x: &FrameSequence) -> Result<Encoding> {
        self.validate()?;
        let x = self.preprocess(x);
        match self.method {
            Method::Avg => Ok(avg_pool(&x)),
            Method::Max => Ok(max_pool(&x)),
            Method::Pyramid => Ok(temporal_pyramid(&x, self.pyramid_base)),
            Method::Rank => hrp_encode(&x, &self.effective_hierarchy()).map(|e| Encoding::new(e.into_values(), "rank")),
            Method::RecursiveRank => recursive_encode(&x, &self.hierarchy),
            Method::Hrp => hrp_encode(&x, &self.hierarchy),
        }
    }

    /// Flat key/value echo; per-layer settings are comma-separated lists.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let h = &self.hierarchy;
        let list = |f: &dyn Fn(&LayerSpec) -> String| h.layers.iter().map(f).collect::<Vec<_>>().join(",");
        vec![
            ("method".into(), self.method.name().into()),
            ("pyramid_base".into(), self.pyramid_base.name().into()),
            ("depth".into(), h.depth().to_string()),
            ("window".into(), list(&|l| l.window.to_string())),
            ("stride".into(), list(&|l| l.stride.to_string())),
            ("map".into(), list(&|l| l.map.name().to_string())),
            ("svr_c".into(), h.svr.c.to_string()),
            ("svr_eps".into(), h.svr.epsilon.to_string()),
            ("svr_tol".into(), h.svr.tol.to_string()),
            ("svr_max_iter".into(), h.svr.max_iter.to_string()),
            ("smooth_tvm".into(), self.smooth_tvm.to_string()),
            ("l2norm".into(), self.l2norm.to_string()),
        ]
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| {
            pairs
                .get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Format(format!("encoder config lacks `{k}`")))
        };
        let depth: usize = parse(get("depth")?, "depth")?;
        let windows = broadcast(get("window")?, depth, "window")?;
        let strides = broadcast(get("stride")?, depth, "stride")?;
        let maps = broadcast(get("map")?, depth, "map")?;
        let layers = (0..depth)
            .map(|l| LayerSpec {
                window: windows[l],
                stride: strides[l],
                map: maps[l],
            })
            .collect();
        let svr = SvrConfig {
            c: parse(get("svr_c")?, "svr_c")?,
            epsilon: parse(get("svr_eps")?, "svr_eps")?,
            tol: parse(get("svr_tol")?, "svr_tol")?,
            max_iter: parse(get("svr_max_iter")?, "svr_max_iter")?,
        };
        let cfg = EncoderConfig {
            method: get("method")?.parse()?,
            pyramid_base: get("pyramid_base")?.parse()?,
            hierarchy: HierarchyConfig { layers, svr },
            smooth_tvm: parse(get("smooth_tvm")?, "smooth_tvm")?,
            l2norm: parse(get("l2norm")?, "l2norm")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse<T: FromStr>(s: &str, key: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("invalid value `{s}` for `{key}`")))
}

/// Parses a comma-separated list of `depth` values, or one value repeated
/// `depth` times.
pub fn broadcast<T: FromStr>(s: &str, depth: usize, key: &str) -> Result<Vec<T>> {
    let items: Vec<&str> = s.split(',').collect();
    match items.len() {
        1 => {
            let v: T = parse(items[0], key)?;
            let mut out = Vec::with_capacity(depth);
            out.push(v);
            for _ in 1..depth {
                out.push(parse(items[0], key)?);
            }
            Ok(out)
        }
        n if n == depth => items.iter().map(|i| parse(i, key)).collect(),
        n => Err(Error::InvalidConfig(format!(
            "`{key}` lists {n} values for depth {depth}"
        ))),
    }
}
