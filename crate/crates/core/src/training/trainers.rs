use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::argmin_grad::{grad_wrt_w, transform_frames, vjp_inputs, FactorMode, WGradMode};
use crate::error::{Error, Result};
use crate::maps::MapKind;
use crate::pooling::{rank_pool_frames, SvrConfig};
use crate::types::Dataset;

use super::classifier::{LinearClassifier, LossGrad, LossKind};
use super::sgd::{lr_at, sgd_step, Momentum, SgdConfig};
use super::upstream::UpstreamMap;

/// Fitted linear classifier plus its training trace.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub classifier: LinearClassifier,
    /// Mean data loss over the training set: entry 0 before any update, entry
    /// `e` after epoch `e`.
    pub loss_trace: Vec<f64>,
    pub train_accuracy: f64,
}

pub(crate) fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    if classes < 2 {
        return Err(Error::DegenerateLabels(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    let mut seen = vec![false; classes];
    for &y in labels {
        if y >= classes {
            return Err(Error::DegenerateLabels(format!("label {y} outside 0..{classes}")));
        }
        seen[y] = true;
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(Error::DegenerateLabels(format!("class {c} has no training sequence")));
    }
    Ok(())
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

fn classifier_step(
    clf: &mut LinearClassifier,
    u: &DVector<f64>,
    d_scores: &DVector<f64>,
    states: &mut [Momentum; 2],
    lr: f64,
    cfg: &SgdConfig,
) {
    // nalgebra stores column-major; the gradient below shares that layout
    let gw = d_scores * u.transpose();
    sgd_step(clf.weights.as_mut_slice(), gw.as_slice(), &mut states[0], lr, cfg);
    sgd_step(clf.bias.as_mut_slice(), d_scores.as_slice(), &mut states[1], lr, cfg);
}

fn classifier_states(clf: &LinearClassifier) -> [Momentum; 2] {
    [Momentum::new(clf.weights.len()), Momentum::new(clf.bias.len())]
}

fn mean_loss(clf: &LinearClassifier, encodings: &[DVector<f64>], labels: &[usize], loss: LossKind) -> f64 {
    let total: f64 = encodings
        .iter()
        .zip(labels)
        .map(|(u, &y)| clf.loss_grad(u, y, loss).loss)
        .sum();
    total / encodings.len() as f64
}

pub fn accuracy_of(clf: &LinearClassifier, encodings: &[DVector<f64>], labels: &[usize]) -> f64 {
    if encodings.is_empty() {
        return 0.0;
    }
    let hits = encodings
        .iter()
        .zip(labels)
        .filter(|(u, &y)| clf.predict(u) == y)
        .count();
    hits as f64 / encodings.len() as f64
}

/// Per-sample SGD on fixed encodings, starting from zero weights.
pub fn train_linear_classifier(
    encodings: &[DVector<f64>],
    labels: &[usize],
    classes: usize,
    loss: LossKind,
    cfg: &SgdConfig,
) -> Result<LinearFit> {
    cfg.validate()?;
    if encodings.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: encodings.len(),
            found: labels.len(),
        });
    }
    check_labels(labels, classes)?;
    let dim = encodings[0].len();
    if let Some(bad) = encodings.iter().find(|u| u.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.len(),
        });
    }

    let mut clf = LinearClassifier::zeros(classes, dim);
    let mut states = classifier_states(&clf);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut loss_trace = vec![mean_loss(&clf, encodings, labels, loss)];
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        for i in shuffled(encodings.len(), &mut rng) {
            let lg = clf.loss_grad(&encodings[i], labels[i], loss);
            classifier_step(&mut clf, &encodings[i], &lg.d_scores, &mut states, lr, cfg);
        }
        loss_trace.push(mean_loss(&clf, encodings, labels, loss));
    }
    Ok(LinearFit {
        train_accuracy: accuracy_of(&clf, encodings, labels),
        classifier: clf,
        loss_trace,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminativeConfig {
    pub loss: LossKind,
    pub svr: SvrConfig,
    /// Non-linearity in `v_t = psi(W x_t)`.
    pub map: MapKind,
    /// Joint schedule for `W` and the classifier.
    pub sgd: SgdConfig,
    /// Schedule for the linear classifier that initialises `beta`.
    pub pretrain: SgdConfig,
    pub grad_mode: WGradMode,
    /// Keep `W = I` and train only the classifier; the baseline for
    /// measuring what learning `W` adds.
    pub freeze_w: bool,
}

impl Default for DiscriminativeConfig {
    fn default() -> Self {
        DiscriminativeConfig {
            loss: LossKind::CrossEntropy,
            svr: SvrConfig::default(),
            map: MapKind::Identity,
            sgd: SgdConfig::default(),
            pretrain: SgdConfig::default(),
            grad_mode: WGradMode::Full,
            freeze_w: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminativeFit {
    pub w: DMatrix<f64>,
    pub classifier: LinearClassifier,
    /// Classifier obtained by pretraining on `W = I` encodings.
    pub initial: LinearClassifier,
    pub loss_trace: Vec<f64>,
    pub train_accuracy: f64,
}

/// Rank-pool encoding of `psi(W x_t)`, the forward pass shared by training
/// and prediction.
pub fn discriminative_encode(
    frames: &[DVector<f64>],
    w: &DMatrix<f64>,
    map: MapKind,
    svr: &SvrConfig,
) -> Result<DVector<f64>> {
    let (_, v) = transform_frames(frames, w, map);
    Ok(rank_pool_frames(&v, svr)?.u.into_values())
}

fn encode_all(d: &Dataset, w: &DMatrix<f64>, map: MapKind, svr: &SvrConfig) -> Result<Vec<DVector<f64>>> {
    d.sequences
        .iter()
        .map(|s| discriminative_encode(s.frames(), w, map, svr).map_err(|e| e.in_sample(s.id())))
        .collect()
}

fn common_dim(d: &Dataset) -> Result<usize> {
    if d.is_empty() {
        return Err(Error::DegenerateLabels("empty dataset".into()));
    }
    d.common_dim()
        .ok_or_else(|| Error::InvalidConfig("all sequences must share one frame dimension".into()))
}

/// Learns `W` (initialised to the identity) and the classifier jointly,
/// differentiating the loss through the rank-pool argmin.
pub fn train_discriminative_rp(d: &Dataset, cfg: &DiscriminativeConfig) -> Result<DiscriminativeFit> {
    cfg.sgd.validate()?;
    cfg.svr.validate()?;
    let labels = d.labels()?;
    let classes = d.num_classes();
    check_labels(&labels, classes)?;
    let dim = common_dim(d)?;

    let mut w = DMatrix::identity(dim, dim);
    let encodings = encode_all(d, &w, cfg.map, &cfg.svr)?;
    let initial = train_linear_classifier(&encodings, &labels, classes, cfg.loss, &cfg.pretrain)?.classifier;
    let mut clf = initial.clone();

    let mut clf_states = classifier_states(&clf);
    let mut w_state = Momentum::new(w.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sgd.seed);
    let mut loss_trace = vec![mean_loss(&clf, &encodings, &labels, cfg.loss)];
    let mut encodings = encodings;

    for epoch in 0..cfg.sgd.epochs {
        let lr = lr_at(epoch, &cfg.sgd);
        for i in shuffled(d.len(), &mut rng) {
            let seq = &d.sequences[i];
            let mut step = || -> Result<()> {
                let (_, v) = transform_frames(seq.frames(), &w, cfg.map);
                let sol = rank_pool_frames(&v, &cfg.svr)?;
                let u = sol.u();
                let lg = clf.loss_grad(u, labels[i], cfg.loss);
                let gw = if cfg.freeze_w {
                    None
                } else {
                    let g = clf.grad_input(&lg.d_scores);
                    Some(grad_wrt_w(seq.frames(), &w, cfg.map, u, &g, &cfg.svr, cfg.grad_mode)?)
                };
                classifier_step(&mut clf, u, &lg.d_scores, &mut clf_states, lr, &cfg.sgd);
                if let Some(gw) = gw {
                    sgd_step(w.as_mut_slice(), gw.as_slice(), &mut w_state, lr, &cfg.sgd);
                }
                Ok(())
            };
            step().map_err(|e| e.in_sample(seq.id()))?;
        }
        encodings = encode_all(d, &w, cfg.map, &cfg.svr)?;
        loss_trace.push(mean_loss(&clf, &encodings, &labels, cfg.loss));
    }

    Ok(DiscriminativeFit {
        train_accuracy: accuracy_of(&clf, &encodings, &labels),
        w,
        classifier: clf,
        initial,
        loss_trace,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndToEndConfig {
    pub loss: LossKind,
    pub svr: SvrConfig,
    pub sgd: SgdConfig,
    /// Hessian factor used to back-propagate into the upstream map.
    pub factor: FactorMode,
}

impl Default for EndToEndConfig {
    fn default() -> Self {
        EndToEndConfig {
            loss: LossKind::CrossEntropy,
            svr: SvrConfig::default(),
            sgd: SgdConfig::end_to_end(),
            factor: FactorMode::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndToEndFit<U> {
    pub upstream: U,
    pub classifier: LinearClassifier,
    pub loss_trace: Vec<f64>,
    pub train_accuracy: f64,
}

/// Forward and backward pass for one sequence through upstream map, rank
/// pooling and classifier.
#[derive(Debug, Clone)]
pub struct SampleGrad {
    pub u: DVector<f64>,
    pub loss: LossGrad,
    /// `dL/dtheta`; `None` for a frozen upstream.
    pub upstream: Option<Vec<f64>>,
}

pub fn end_to_end_sample<U: UpstreamMap>(
    up: &U,
    clf: &LinearClassifier,
    frames: &[DVector<f64>],
    label: usize,
    cfg: &EndToEndConfig,
) -> Result<SampleGrad> {
    let v: Vec<DVector<f64>> = frames.iter().map(|x| up.forward(x)).collect();
    let sol = rank_pool_frames(&v, &cfg.svr)?;
    let u = sol.u.into_values();
    let loss = clf.loss_grad(&u, label, cfg.loss);
    let upstream = if up.trainable() {
        let g = clf.grad_input(&loss.d_scores);
        let gv = vjp_inputs(&v, &u, &g, &cfg.svr, cfg.factor)?;
        let mut acc = vec![0.0; up.params().len()];
        for (x, gv) in frames.iter().zip(&gv) {
            up.backward(x, gv, &mut acc)?;
        }
        Some(acc)
    } else {
        None
    };
    Ok(SampleGrad { u, loss, upstream })
}

pub fn upstream_encode<U: UpstreamMap>(up: &U, frames: &[DVector<f64>], svr: &SvrConfig) -> Result<DVector<f64>> {
    let v: Vec<DVector<f64>> = frames.iter().map(|x| up.forward(x)).collect();
    Ok(rank_pool_frames(&v, svr)?.u.into_values())
}

fn upstream_encode_all<U: UpstreamMap>(d: &Dataset, up: &U, svr: &SvrConfig) -> Result<Vec<DVector<f64>>> {
    d.sequences
        .iter()
        .map(|s| upstream_encode(up, s.frames(), svr).map_err(|e| e.in_sample(s.id())))
        .collect()
}

/// Trains the classifier and the upstream parameters jointly. The classifier
/// starts from zero; a frozen upstream makes this plain linear training on
/// rank-pooled encodings.
pub fn train_end_to_end<U: UpstreamMap>(d: &Dataset, upstream: U, cfg: &EndToEndConfig) -> Result<EndToEndFit<U>> {
    cfg.sgd.validate()?;
    cfg.svr.validate()?;
    let labels = d.labels()?;
    let classes = d.num_classes();
    check_labels(&labels, classes)?;
    let in_dim = common_dim(d)?;

    let mut up = upstream;
    let out_dim = up.output_dim(in_dim);
    let mut clf = LinearClassifier::zeros(classes, out_dim);
    let mut clf_states = classifier_states(&clf);
    let mut up_state = Momentum::new(up.params().len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sgd.seed);

    let mut encodings = upstream_encode_all(d, &up, &cfg.svr)?;
    let mut loss_trace = vec![mean_loss(&clf, &encodings, &labels, cfg.loss)];

    for epoch in 0..cfg.sgd.epochs {
        let lr = lr_at(epoch, &cfg.sgd);
        for i in shuffled(d.len(), &mut rng) {
            let seq = &d.sequences[i];
            let mut step = || -> Result<()> {
                let sg = end_to_end_sample(&up, &clf, seq.frames(), labels[i], cfg)?;
                classifier_step(&mut clf, &sg.u, &sg.loss.d_scores, &mut clf_states, lr, &cfg.sgd);
                if let Some(g) = sg.upstream {
                    sgd_step(up.params_mut(), &g, &mut up_state, lr, &cfg.sgd);
                }
                Ok(())
            };
            step().map_err(|e| e.in_sample(seq.id()))?;
        }
        if up.trainable() {
            encodings = upstream_encode_all(d, &up, &cfg.svr)?;
        }
        loss_trace.push(mean_loss(&clf, &encodings, &labels, cfg.loss));
    }

    Ok(EndToEndFit {
        train_accuracy: accuracy_of(&clf, &encodings, &labels),
        upstream: up,
        classifier: clf,
        loss_trace,
    })
}
