//! Rank-pooling layers and the hierarchical forward pass.
//!
//! A layer slides a window of `M` frames with stride `S` over its input,
//! maps every frame through a point-wise non-linearity and rank-pools each
//! window. A hierarchy of depth `L` runs `L - 1` such layers and then
//! rank-pools the whole final sequence (after its own map) into one vector.

use crate::error::{Error, Result};
use crate::maps::{apply_map, MapKind};
use crate::pooling::{rank_pool, SvrConfig};
use crate::types::{Encoding, FrameSequence};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    pub window: usize,
    pub stride: usize,
    pub map: MapKind,
}

/// Per-layer settings for a hierarchy of depth `layers.len()`. The window
/// and stride of the last entry are unused: the last layer pools the whole
/// sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyConfig {
    pub layers: Vec<LayerSpec>,
    pub svr: SvrConfig,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        HierarchyConfig::uniform(2, 20, 1, MapKind::Ser, SvrConfig::default())
    }
}

impl HierarchyConfig {
    pub fn uniform(depth: usize, window: usize, stride: usize, map: MapKind, svr: SvrConfig) -> Self {
        HierarchyConfig {
            layers: vec![LayerSpec { window, stride, map }; depth],
            svr,
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidConfig("hierarchy depth must be >= 1".into()));
        }
        for (l, spec) in self.layers.iter().enumerate() {
            if spec.window == 0 || spec.stride == 0 {
                return Err(Error::InvalidConfig(format!(
                    "layer {}: window and stride must be >= 1",
                    l + 1
                )));
            }
        }
        self.svr.validate()
    }

    /// Dimension of [`hrp_encode`]'s output for `input_dim`-dimensional frames.
    pub fn output_dim(&self, input_dim: usize) -> usize {
        self.layers.iter().fold(input_dim, |d, l| l.map.output_dim(d))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutput {
    pub sequence: FrameSequence,
    /// `(start, len)` of the source frames for each output element, 0-based.
    pub windows: Vec<(usize, usize)>,
}

/// Number of windows a layer emits: `floor((J - M) / S) + 1` when `J >= M`,
/// otherwise one clamped window covering everything.
pub fn window_count(len: usize, window: usize, stride: usize) -> usize {
    if len < window {
        1
    } else {
        (len - window) / stride + 1
    }
}

pub fn rank_pool_layer(
    x: &FrameSequence,
    window: usize,
    stride: usize,
    map: MapKind,
    svr: &SvrConfig,
) -> Result<LayerOutput> {
    if window == 0 || stride == 0 {
        return Err(Error::InvalidConfig("window and stride must be >= 1".into()));
    }
    let mapped = apply_map(x, map);
    let len = window.min(x.len());
    let windows: Vec<(usize, usize)> = (0..window_count(x.len(), window, stride))
        .map(|k| (k * stride, len))
        .collect();
    let frames = windows
        .iter()
        .map(|&(start, len)| {
            rank_pool(&mapped.window(start, len), svr)
                .map(|s| s.u.into_values())
                .map_err(|e| e.in_window(start))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LayerOutput {
        sequence: x.with_frames(frames),
        windows,
    })
}

/// Every prefix `1..=t` for `t = 2..=J`, mapped and rank-pooled.
pub fn recursive_rank_pool(x: &FrameSequence, map: MapKind, svr: &SvrConfig) -> Result<LayerOutput> {
    if x.len() < 2 {
        return Err(Error::PrefixTooShort { len: x.len() });
    }
    let mapped = apply_map(x, map);
    let windows: Vec<(usize, usize)> = (2..=x.len()).map(|t| (0, t)).collect();
    let frames = windows
        .iter()
        .map(|&(start, len)| {
            rank_pool(&mapped.window(start, len), svr)
                .map(|s| s.u.into_values())
                .map_err(|e| e.in_window(len - 1))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LayerOutput {
        sequence: x.with_frames(frames),
        windows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LayerKind {
    Sliding,
    Recursive,
}

/// Hierarchical rank pooling forward pass.
pub fn hrp_encode(x: &FrameSequence, cfg: &HierarchyConfig) -> Result<Encoding> {
    encode_stack(x, cfg, LayerKind::Sliding).map(|u| Encoding::new(u, "hrp"))
}

/// Like [`hrp_encode`] but every intermediate layer is a recursive (prefix)
/// layer instead of a sliding window.
pub fn recursive_encode(x: &FrameSequence, cfg: &HierarchyConfig) -> Result<Encoding> {
    encode_stack(x, cfg, LayerKind::Recursive).map(|u| Encoding::new(u, "recursive-rank"))
}

fn encode_stack(x: &FrameSequence, cfg: &HierarchyConfig, kind: LayerKind) -> Result<nalgebra::DVector<f64>> {
    cfg.validate()?;
    let (last, inner) = cfg.layers.split_last().expect("validated depth");
    let mut seq = x.clone();
    for (l, spec) in inner.iter().enumerate() {
        let out = match kind {
            LayerKind::Sliding => rank_pool_layer(&seq, spec.window, spec.stride, spec.map, &cfg.svr),
            LayerKind::Recursive => recursive_rank_pool(&seq, spec.map, &cfg.svr),
        };
        seq = out.map_err(|e| e.in_layer(l + 1))?.sequence;
    }
    let sol = rank_pool(&apply_map(&seq, last.map), &cfg.svr).map_err(|e| e.in_layer(cfg.depth()))?;
    Ok(sol.u.into_values())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pooling::{avg_pool, max_pool};
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_seq(seed: u64, j: usize, d: usize) -> FrameSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = (0..j)
            .map(|_| DVector::from_fn(d, |_, _| rng.sample(StandardNormal)))
            .collect();
        FrameSequence::new("r", frames).unwrap()
    }

    #[test]
    fn layer_window_examples() {
        let svr = SvrConfig::default();
        let x = random_seq(1, 5, 2);
        let out = rank_pool_layer(&x, 3, 1, MapKind::Identity, &svr).unwrap();
        assert_eq!(out.windows, vec![(0, 3), (1, 3), (2, 3)]);
        assert_eq!(out.sequence.len(), 3);

        let short = random_seq(2, 2, 2);
        let out = rank_pool_layer(&short, 20, 1, MapKind::Ser, &svr).unwrap();
        assert_eq!(out.windows, vec![(0, 2)]);
        assert_eq!(out.sequence.dim(), 4);

        let full = rank_pool_layer(&x, 5, 1, MapKind::Identity, &svr).unwrap();
        assert_eq!(full.sequence.len(), 1);
        assert_eq!(&full.sequence.frames()[0], rank_pool(&x, &svr).unwrap().u());
    }

    #[test]
    fn trailing_partial_windows_dropped() {
        let x = random_seq(3, 10, 2);
        let out = rank_pool_layer(&x, 4, 3, MapKind::Identity, &SvrConfig::default()).unwrap();
        assert_eq!(out.windows, vec![(0, 4), (3, 4), (6, 4)]);
    }

    #[test]
    fn depth_one_is_plain_rank_pool() {
        let x = random_seq(4, 12, 3);
        let svr = SvrConfig::default();
        let cfg = HierarchyConfig::uniform(1, 20, 1, MapKind::Identity, svr);
        assert_eq!(hrp_encode(&x, &cfg).unwrap().values(), rank_pool(&x, &svr).unwrap().u());
        let ser = HierarchyConfig::uniform(1, 20, 1, MapKind::Ser, svr);
        let mapped = apply_map(&x, MapKind::Ser);
        assert_eq!(
            hrp_encode(&x, &ser).unwrap().values(),
            rank_pool(&mapped, &svr).unwrap().u()
        );
    }

    #[test]
    fn ser_doubles_per_layer() {
        let x = random_seq(5, 30, 4);
        let cfg = HierarchyConfig::default();
        assert_eq!(cfg.output_dim(4), 16);
        assert_eq!(hrp_encode(&x, &cfg).unwrap().dim(), 16);
        let deep = HierarchyConfig::uniform(3, 5, 2, MapKind::Ser, SvrConfig::default());
        assert_eq!(hrp_encode(&x, &deep).unwrap().dim(), deep.output_dim(4));
    }

    #[test]
    fn defaults_are_deterministic() {
        let x = random_seq(6, 50, 4);
        let cfg = HierarchyConfig::default();
        assert_eq!(hrp_encode(&x, &cfg).unwrap(), hrp_encode(&x, &cfg).unwrap());
    }

    #[test]
    fn recursive_examples() {
        let svr = SvrConfig::default();
        let x = random_seq(7, 3, 2);
        let out = recursive_rank_pool(&x, MapKind::Identity, &svr).unwrap();
        assert_eq!(out.windows, vec![(0, 2), (0, 3)]);
        assert_eq!(&out.sequence.frames()[1], rank_pool(&x, &svr).unwrap().u());

        let zeros = FrameSequence::from_rows("z", &vec![vec![0.0, 0.0]; 4]).unwrap();
        let out = recursive_rank_pool(&zeros, MapKind::Ser, &svr).unwrap();
        assert!(out.sequence.frames().iter().all(|f| f.iter().all(|x| *x == 0.0)));

        let one = random_seq(8, 1, 2);
        assert!(matches!(
            recursive_rank_pool(&one, MapKind::Identity, &svr),
            Err(Error::PrefixTooShort { len: 1 })
        ));
    }

    #[test]
    fn recursive_encode_shapes() {
        let x = random_seq(9, 10, 3);
        let cfg = HierarchyConfig::uniform(2, 20, 1, MapKind::Ser, SvrConfig::default());
        assert_eq!(recursive_encode(&x, &cfg).unwrap().dim(), 12);
    }

    #[test]
    fn errors_carry_layer_and_window() {
        let x = random_seq(10, 30, 3);
        let svr = SvrConfig {
            max_iter: 1,
            tol: 1e-300,
            ..SvrConfig::default()
        };
        let cfg = HierarchyConfig::uniform(2, 10, 1, MapKind::Identity, svr);
        match hrp_encode(&x, &cfg) {
            Err(Error::Layer { layer: 1, source }) => {
                assert!(matches!(*source, Error::Window { start: 0, .. }))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn window_count_formula(j in 1usize..200, m in 1usize..40, s in 1usize..10) {
            let expected = if j >= m { (j - m) / s + 1 } else { 1 };
            prop_assert_eq!(window_count(j, m, s), expected);
            // brute force over the index set {0, S, 2S, ...} with full windows
            let brute = if j >= m { (0..j).step_by(s).filter(|t| t + m <= j).count() } else { 1 };
            prop_assert_eq!(window_count(j, m, s), brute);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn order_sensitivity_propagates(seed in 0u64..1000) {
            let x = random_seq(seed, 30, 3);
            let r = x.reversed();
            let cfg = HierarchyConfig::uniform(2, 10, 1, MapKind::Ser, SvrConfig::default());
            let a = hrp_encode(&x, &cfg).unwrap().into_values();
            let b = hrp_encode(&r, &cfg).unwrap().into_values();
            prop_assert!((a - b).norm() > 1e-6);
            prop_assert_eq!(max_pool(&x), max_pool(&r));
            prop_assert_eq!(avg_pool(&x), avg_pool(&r));
        }
    }
}
