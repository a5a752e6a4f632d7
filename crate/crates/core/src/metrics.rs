//! Classification metrics: accuracy, per-class accuracy and mean average
//! precision over per-class score rankings.

use nalgebra::DVector;

use crate::training::argmax;

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub count: usize,
    pub accuracy: f64,
    /// `None` for classes with no samples.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// `None` for classes with no positives.
    pub average_precision: Vec<Option<f64>>,
    /// Mean over the classes that have an average precision.
    pub mean_ap: f64,
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len() as f64
}

pub fn per_class_accuracy(predicted: &[usize], labels: &[usize], classes: usize) -> Vec<Option<f64>> {
    (0..classes)
        .map(|c| {
            let (mut n, mut hit) = (0usize, 0usize);
            for (p, y) in predicted.iter().zip(labels) {
                if *y == c {
                    n += 1;
                    hit += usize::from(p == y);
                }
            }
            (n > 0).then(|| hit as f64 / n as f64)
        })
        .collect()
}

/// Mean of `k / rank_k` over the positives, where `rank_k` is the 1-based
/// rank of the `k`-th positive when items are sorted by descending score.
/// Equal scores keep input order.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut found = 0usize;
    let mut total = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if positive[i] {
            found += 1;
            total += found as f64 / (rank + 1) as f64;
        }
    }
    (found > 0).then(|| total / found as f64)
}

/// Metrics for per-sample class score vectors; predictions are the argmax.
pub fn evaluate(scores: &[DVector<f64>], labels: &[usize], classes: usize) -> Metrics {
    let predicted: Vec<usize> = scores.iter().map(argmax).collect();
    let average_precision: Vec<Option<f64>> = (0..classes)
        .map(|c| {
            let s: Vec<f64> = scores.iter().map(|v| v[c]).collect();
            let pos: Vec<bool> = labels.iter().map(|&y| y == c).collect();
            average_precision(&s, &pos)
        })
        .collect();
    let defined: Vec<f64> = average_precision.iter().flatten().copied().collect();
    let mean_ap = if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    Metrics {
        count: labels.len(),
        accuracy: accuracy(&predicted, labels),
        per_class_accuracy: per_class_accuracy(&predicted, labels, classes),
        average_precision,
        mean_ap,
    }
}

impl Metrics {
    /// `key=value` lines; undefined entries print as `nan`.
    pub fn key_values(&self, class_names: &[String]) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| x.to_string());
        let mut out = format!(
            "count={}\naccuracy={}\nmap={}\n",
            self.count, self.accuracy, self.mean_ap
        );
        for (c, name) in class_names.iter().enumerate() {
            out += &format!("class.{name}.accuracy={}\n", fmt(self.per_class_accuracy[c]));
            out += &format!("class.{name}.ap={}\n", fmt(self.average_precision[c]));
        }
        out
    }
}
