//! Domain types shared by every encoder and trainer.
//!
//! A [`FrameSequence`] is the unit all encoders consume: `J >= 1` frames,
//! each a finite vector of the same dimension `D >= 1`. Sequences built
//! through [`FrameSequence::new`] are checked on construction; loaders use
//! [`FrameSequence::new_unchecked`] so that [`validate_dataset`] can report
//! every problem in a file instead of stopping at the first one.

use std::fmt;

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    id: String,
    frames: Vec<DVector<f64>>,
    label: Option<usize>,
}

impl FrameSequence {
    pub fn new(id: impl Into<String>, frames: Vec<DVector<f64>>) -> Result<Self> {
        let seq = Self::new_unchecked(id, frames);
        if let Some(v) = seq.violations().into_iter().next() {
            return Err(Error::InvalidSequence {
                id: v.id,
                reason: v.rule.to_string(),
            });
        }
        Ok(seq)
    }

    /// Builds a sequence from row-major frame data.
    pub fn from_rows(id: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(id, rows.iter().map(|r| DVector::from_row_slice(r)).collect())
    }

    pub fn new_unchecked(id: impl Into<String>, frames: Vec<DVector<f64>>) -> Self {
        FrameSequence {
            id: id.into(),
            frames,
            label: None,
        }
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn set_label(&mut self, label: Option<usize>) {
        self.label = label;
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn frames(&self) -> &[DVector<f64>] {
        &self.frames
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Dimension of the first frame (0 for an empty sequence).
    pub fn dim(&self) -> usize {
        self.frames.first().map_or(0, |f| f.len())
    }

    /// Frames `start..start + len`, keeping id and label.
    pub fn window(&self, start: usize, len: usize) -> FrameSequence {
        FrameSequence {
            id: self.id.clone(),
            frames: self.frames[start..start + len].to_vec(),
            label: self.label,
        }
    }

    pub fn reversed(&self) -> FrameSequence {
        let mut frames = self.frames.clone();
        frames.reverse();
        FrameSequence {
            id: self.id.clone(),
            frames,
            label: self.label,
        }
    }

    /// Replaces every frame by `f(frame)`, keeping id and label.
    pub fn map_frames<F>(&self, f: F) -> FrameSequence
    where
        F: FnMut(&DVector<f64>) -> DVector<f64>,
    {
        FrameSequence {
            id: self.id.clone(),
            frames: self.frames.iter().map(f).collect(),
            label: self.label,
        }
    }

    /// Same id and label, new frames.
    pub fn with_frames(&self, frames: Vec<DVector<f64>>) -> FrameSequence {
        FrameSequence {
            id: self.id.clone(),
            frames,
            label: self.label,
        }
    }

    /// Row-major copy of the frame data.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.frames.iter().map(|f| f.iter().copied().collect()).collect()
    }

    /// Violations of the sequence-level invariants. At most one violation is
    /// reported per rule.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |rule| {
            out.push(Violation {
                id: self.id.clone(),
                rule,
            })
        };
        if self.frames.is_empty() {
            push(Rule::EmptySequence);
            return out;
        }
        let dim = self.dim();
        if dim == 0 {
            push(Rule::ZeroDimension);
        }
        if let Some((frame, f)) = self.frames.iter().enumerate().find(|(_, f)| f.len() != dim) {
            push(Rule::MixedDimensions {
                frame,
                expected: dim,
                found: f.len(),
            });
        }
        let non_finite = self
            .frames
            .iter()
            .enumerate()
            .find_map(|(t, f)| f.iter().position(|x| !x.is_finite()).map(|component| (t, component)));
        if let Some((frame, component)) = non_finite {
            push(Rule::NonFinite { frame, component });
        }
        out
    }
}

/// Fixed-length descriptor produced by a temporal encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    values: DVector<f64>,
    provenance: String,
}

impl Encoding {
    pub fn new(values: DVector<f64>, provenance: impl Into<String>) -> Self {
        Encoding {
            values,
            provenance: provenance.into(),
        }
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }
}

/// Labelled sequences plus the table mapping dense label indices to names.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub sequences: Vec<FrameSequence>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(sequences: Vec<FrameSequence>, class_names: Vec<String>) -> Self {
        Dataset { sequences, class_names }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Labels in sequence order; unlabelled sequences are an error.
    pub fn labels(&self) -> Result<Vec<usize>> {
        self.sequences
            .iter()
            .map(|s| {
                s.label().ok_or_else(|| Error::InvalidSequence {
                    id: s.id().to_string(),
                    reason: Rule::MissingLabel.to_string(),
                })
            })
            .collect()
    }

    /// Common frame dimension, if every sequence agrees on one.
    pub fn common_dim(&self) -> Option<usize> {
        let d = self.sequences.first()?.dim();
        self.sequences.iter().all(|s| s.dim() == d).then_some(d)
    }
}

/// Identifier used for violations that concern the dataset as a whole.
pub const DATASET_ID: &str = "*";

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub id: String,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.id, self.rule)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Rule {
    EmptySequence,
    ZeroDimension,
    MixedDimensions {
        frame: usize,
        expected: usize,
        found: usize,
    },
    NonFinite {
        frame: usize,
        component: usize,
    },
    MissingLabel,
    LabelOutOfRange {
        label: usize,
        classes: usize,
    },
    ClassAbsent {
        class: usize,
    },
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::EmptySequence => write!(f, "sequence has no frames"),
            Rule::ZeroDimension => write!(f, "frames have dimension 0"),
            Rule::MixedDimensions { frame, expected, found } => {
                write!(f, "frame {frame} has dimension {found}, expected {expected}")
            }
            Rule::NonFinite { frame, component } => {
                write!(f, "frame {frame} component {component} is not finite")
            }
            Rule::MissingLabel => write!(f, "sequence has no label"),
            Rule::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} outside 0..{classes}")
            }
            Rule::ClassAbsent { class } => write!(f, "class {class} has no sequences"),
        }
    }
}

/// Checks every type invariant of the dataset. Never fails; an empty result
/// means the dataset is well formed.
pub fn validate_dataset(d: &Dataset) -> Vec<Violation> {
    let k = d.num_classes();
    let mut seen = vec![false; k];
    let mut out = Vec::new();
    for s in &d.sequences {
        out.extend(s.violations());
        match s.label() {
            None => out.push(Violation {
                id: s.id().to_string(),
                rule: Rule::MissingLabel,
            }),
            Some(label) if label >= k => out.push(Violation {
                id: s.id().to_string(),
                rule: Rule::LabelOutOfRange { label, classes: k },
            }),
            Some(label) => seen[label] = true,
        }
    }
    out.extend(
        seen.iter()
            .enumerate()
            .filter(|(_, s)| !**s)
            .map(|(class, _)| Violation {
                id: DATASET_ID.to_string(),
                rule: Rule::ClassAbsent { class },
            }),
    );
    out
}
