use std::io::Read;

use anyhow::{bail, Context, Result};
use rankpool_core::io::{read_dataset, read_from_dir, EncodingTable, Records};
use rankpool_core::types::Rule;
use rankpool_core::validate_dataset;
use rankpool_core::Dataset;

use crate::InputArgs;

pub enum Loaded {
    Dataset(Records),
    Encodings(EncodingTable),
}

pub fn load(args: &InputArgs) -> Result<Loaded> {
    if let Some(dir) = &args.from_dir {
        let recs = read_from_dir(dir).with_context(|| format!("reading {}", dir.display()))?;
        return Ok(Loaded::Dataset(recs));
    }
    let path = args.input.as_ref().expect("clap requires one input");
    let bytes = if path.as_os_str() == "-" {
        let mut buf = Vec::new();
        std::io::stdin().read_to_end(&mut buf)?;
        buf
    } else {
        std::fs::read(path).with_context(|| format!("reading {}", path.display()))?
    };
    let first = bytes.iter().find(|b| !b.is_ascii_whitespace()).copied();
    let loaded = match first {
        Some(b'{') | None => Loaded::Dataset(read_dataset(bytes.as_slice()).context("parsing dataset")?),
        Some(_) if bytes.starts_with(b"RPENC") => {
            Loaded::Encodings(EncodingTable::read_binary(bytes.as_slice()).context("parsing binary encodings")?)
        }
        Some(_) => Loaded::Encodings(EncodingTable::read_csv(bytes.as_slice()).context("parsing encodings")?),
    };
    Ok(loaded)
}

pub fn require_dataset(loaded: Loaded, what: &str) -> Result<Records> {
    match loaded {
        Loaded::Dataset(r) => Ok(r),
        Loaded::Encodings(_) => bail!("{what} needs a raw dataset, not pre-computed encodings"),
    }
}

/// Rejects datasets that break a type invariant or mix frame dimensions.
/// Outside training, unlabeled sequences and absent classes are fine.
pub fn check_dataset(d: &Dataset, training: bool) -> Result<usize> {
    let violations: Vec<_> = validate_dataset(d)
        .into_iter()
        .filter(|v| training || !matches!(v.rule, Rule::MissingLabel | Rule::ClassAbsent { .. }))
        .collect();
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().take(20).map(|v| v.to_string()).collect();
        bail!(
            "invalid dataset ({} violations):\n  {}",
            violations.len(),
            list.join("\n  ")
        );
    }
    if d.is_empty() {
        bail!("dataset has no sequences");
    }
    d.common_dim()
        .ok_or_else(|| anyhow::anyhow!("all sequences must share one frame dimension"))
}

/// Class table for text labels of an encodings file: numeric order when
/// every label is an integer, lexicographic otherwise.
pub fn class_table(labels: &[Option<String>]) -> Vec<String> {
    let mut names: Vec<String> = labels.iter().flatten().cloned().collect();
    names.sort();
    names.dedup();
    if names.iter().all(|n| n.parse::<i64>().is_ok()) {
        names.sort_by_key(|n| n.parse::<i64>().expect("checked"));
    }
    names
}

/// Maps label text onto class indices; every row must carry a known label.
pub fn label_indices(labels: &[Option<String>], ids: &[String], names: &[String]) -> Result<Vec<usize>> {
    labels
        .iter()
        .zip(ids)
        .map(|(l, id)| {
            let l = l
                .as_ref()
                .ok_or_else(|| anyhow::anyhow!("sequence `{id}` has no label"))?;
            names
                .iter()
                .position(|n| n == l)
                .ok_or_else(|| anyhow::anyhow!("sequence `{id}` has class `{l}` unknown to the model"))
        })
        .collect()
}
