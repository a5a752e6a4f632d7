//! Synthetic datasets for tests, acceptance runs and the `synth` command.
//!
//! The order-classes generator isolates temporal order as the only label
//! signal: every video draws a fresh pool of Gaussian frames, sorts it along
//! a fixed direction, and then arranges it by its class pattern. Swapping a
//! video's class changes frame order and nothing else, so average and max
//! pooling see the same input regardless of class.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::types::{Dataset, FrameSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    OrderClasses,
    /// Each class is a noisy ramp along its own random direction.
    LatentRamp,
    /// Pure noise with uniformly drawn labels.
    Noise,
}

impl SynthKind {
    pub fn name(self) -> &'static str {
        match self {
            SynthKind::OrderClasses => "order-classes",
            SynthKind::LatentRamp => "latent-ramp",
            SynthKind::Noise => "noise",
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [SynthKind::OrderClasses, SynthKind::LatentRamp, SynthKind::Noise]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown generator `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub classes: usize,
    /// Number of sequences.
    pub count: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub dim: usize,
    /// Standard deviation of the i.i.d. perturbation added after ordering.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            kind: SynthKind::OrderClasses,
            classes: 3,
            count: 150,
            min_len: 40,
            max_len: 40,
            dim: 8,
            noise: 0.1,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.kind == SynthKind::OrderClasses && self.classes > OrderPattern::ALL.len() {
            return bad(format!(
                "order-classes supports at most {} classes, got {}",
                OrderPattern::ALL.len(),
                self.classes
            ));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad(format!("invalid length range {}..={}", self.min_len, self.max_len));
        }
        if self.dim == 0 {
            return bad("dimension must be >= 1".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be >= 0, got {}", self.noise));
        }
        Ok(())
    }
}

/// Frame arrangement for one order class, applied to a pool already sorted
/// along the ordering direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderPattern {
    Forward,
    Reverse,
    /// Even sorted positions first, then odd ones.
    Interleave,
}

impl OrderPattern {
    pub const ALL: [OrderPattern; 3] = [OrderPattern::Forward, OrderPattern::Reverse, OrderPattern::Interleave];

    pub fn name(self) -> &'static str {
        match self {
            OrderPattern::Forward => "forward",
            OrderPattern::Reverse => "reverse",
            OrderPattern::Interleave => "interleave",
        }
    }

    pub fn arrange(self, sorted: &[DVector<f64>]) -> Vec<DVector<f64>> {
        match self {
            OrderPattern::Forward => sorted.to_vec(),
            OrderPattern::Reverse => sorted.iter().rev().cloned().collect(),
            OrderPattern::Interleave => sorted
                .iter()
                .step_by(2)
                .chain(sorted.iter().skip(1).step_by(2))
                .cloned()
                .collect(),
        }
    }
}

/// A pool of `len` standard Gaussian frames sorted by their projection on
/// the all-ones direction.
pub fn sorted_pool(rng: &mut impl Rng, len: usize, dim: usize) -> Vec<DVector<f64>> {
    let mut pool: Vec<DVector<f64>> = (0..len)
        .map(|_| DVector::from_fn(dim, |_, _| rng.sample(StandardNormal)))
        .collect();
    pool.sort_by(|a, b| a.sum().total_cmp(&b.sum()));
    pool
}

pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    match spec.kind {
        SynthKind::OrderClasses => gen_order_classes(spec),
        SynthKind::LatentRamp => Ok(gen_latent_ramp(spec)),
        SynthKind::Noise => Ok(gen_noise(spec)),
    }
}

/// Balanced order-classes dataset: sequence `i` gets class `i mod K`.
pub fn gen_order_classes(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise.max(0.0)).expect("finite noise");
    let sequences = (0..spec.count)
        .map(|i| {
            let label = i % spec.classes;
            let len = rng.random_range(spec.min_len..=spec.max_len);
            let pool = sorted_pool(&mut rng, len, spec.dim);
            let mut frames = OrderPattern::ALL[label].arrange(&pool);
            if spec.noise > 0.0 {
                for f in &mut frames {
                    f.apply(|x| *x += noise.sample(&mut rng));
                }
            }
            FrameSequence::new_unchecked(format!("order-{i:05}"), frames).with_label(label)
        })
        .collect();
    let names = OrderPattern::ALL[..spec.classes]
        .iter()
        .map(|p| p.name().to_string())
        .collect();
    Ok(Dataset::new(sequences, names))
}

fn gen_latent_ramp(spec: &SynthSpec) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let directions: Vec<DVector<f64>> = (0..spec.classes)
        .map(|_| DVector::from_fn(spec.dim, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize())
        .collect();
    let noise = Normal::new(0.0, spec.noise).expect("finite noise");
    let sequences = (0..spec.count)
        .map(|i| {
            let label = i % spec.classes;
            let len = rng.random_range(spec.min_len..=spec.max_len);
            let frames = (0..len)
                .map(|t| {
                    let phase = (t + 1) as f64 / len as f64;
                    DVector::from_fn(spec.dim, |k, _| directions[label][k] * phase + noise.sample(&mut rng))
                })
                .collect();
            FrameSequence::new_unchecked(format!("ramp-{i:05}"), frames).with_label(label)
        })
        .collect();
    Dataset::new(sequences, class_names(spec.classes))
}

fn gen_noise(spec: &SynthSpec) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sd = if spec.noise > 0.0 { spec.noise } else { 1.0 };
    let noise = Normal::new(0.0, sd).expect("finite noise");
    let sequences = (0..spec.count)
        .map(|i| {
            let label = rng.random_range(0..spec.classes);
            let len = rng.random_range(spec.min_len..=spec.max_len);
            let frames = (0..len)
                .map(|_| DVector::from_fn(spec.dim, |_, _| noise.sample(&mut rng)))
                .collect();
            FrameSequence::new_unchecked(format!("noise-{i:05}"), frames).with_label(label)
        })
        .collect();
    Dataset::new(sequences, class_names(spec.classes))
}

fn class_names(k: usize) -> Vec<String> {
    (0..k).map(|c| format!("class{c}")).collect()
}
