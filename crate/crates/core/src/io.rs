//! File formats: line-delimited JSON datasets, encoding tables (CSV with a
//! metadata comment, or a bit-exact binary form) and directory trees of
//! per-sequence matrices.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Dataset, FrameSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum RawLabel {
    Int(i64),
    Text(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<RawLabel>,
    frames: Vec<Vec<f64>>,
}

/// Sequences with their label text, before labels are mapped to indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Records {
    pub sequences: Vec<FrameSequence>,
    pub labels: Vec<Option<String>>,
    /// True when every present label was written as an integer.
    pub integer_labels: bool,
}

impl Records {
    /// Class table inferred from the labels: numeric order when every label
    /// is an integer, lexicographic otherwise.
    pub fn class_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.labels.iter().flatten().cloned().collect();
        names.sort();
        names.dedup();
        if self.integer_labels {
            names.sort_by_key(|n| n.parse::<i64>().expect("integer label"));
        }
        names
    }

    pub fn into_dataset(self) -> Result<Dataset> {
        let names = self.class_names();
        self.with_classes(&names)
    }

    /// Maps labels onto an existing class table; unknown labels are an
    /// error, absent labels stay absent.
    pub fn with_classes(self, names: &[String]) -> Result<Dataset> {
        let index: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let mut sequences = Vec::with_capacity(self.sequences.len());
        for (mut seq, label) in self.sequences.into_iter().zip(self.labels) {
            if let Some(l) = label {
                let y = index.get(l.as_str()).ok_or_else(|| {
                    Error::DegenerateLabels(format!("sequence `{}` has unknown class `{l}`", seq.id()))
                })?;
                seq.set_label(Some(*y));
            }
            sequences.push(seq);
        }
        Ok(Dataset::new(sequences, names.to_vec()))
    }
}

pub fn read_dataset(reader: impl BufRead) -> Result<Records> {
    let mut out = Records {
        sequences: Vec::new(),
        labels: Vec::new(),
        integer_labels: true,
    };
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))?;
        let seq = FrameSequence::from_rows(rec.id, &rec.frames)?;
        let label = rec.label.map(|l| match l {
            RawLabel::Int(i) => i.to_string(),
            RawLabel::Text(s) => {
                out.integer_labels = false;
                s
            }
        });
        out.sequences.push(seq);
        out.labels.push(label);
    }
    if out.labels.iter().all(Option::is_none) {
        out.integer_labels = false;
    }
    Ok(out)
}

pub fn read_dataset_file(path: &Path) -> Result<Records> {
    read_dataset(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// One JSON record per line; labels are written as class names.
pub fn write_dataset(d: &Dataset, mut w: impl Write) -> Result<()> {
    for seq in &d.sequences {
        let rec = Record {
            id: seq.id().to_string(),
            label: seq.label().map(|y| RawLabel::Text(d.class_names[y].clone())),
            frames: seq.to_rows(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads `root/<class>/<file>`: every subdirectory names a class and every
/// file in it holds one sequence as a matrix, one frame per line, values
/// separated by commas or whitespace. Lines starting with `#` are skipped.
/// Entries are visited in name order.
pub fn read_from_dir(root: &Path) -> Result<Records> {
    let mut out = Records {
        sequences: Vec::new(),
        labels: Vec::new(),
        integer_labels: false,
    };
    for class_dir in sorted_entries(root)? {
        if !class_dir.is_dir() {
            continue;
        }
        let class = file_name(&class_dir);
        for file in sorted_entries(&class_dir)? {
            if !file.is_file() {
                continue;
            }
            let id = format!("{class}/{}", file_name(&file));
            let rows = parse_matrix(&std::fs::read_to_string(&file)?)
                .map_err(|e| Error::Format(format!("{}: {e}", file.display())))?;
            out.sequences.push(FrameSequence::from_rows(id, &rows)?);
            out.labels.push(Some(class.clone()));
        }
    }
    Ok(out)
}

fn sorted_entries(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut entries = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn parse_matrix(text: &str) -> std::result::Result<Vec<Vec<f64>>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(n, l)| {
            l.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| format!("line {}: bad number `{t}`", n + 1))
                })
                .collect()
        })
        .collect()
}

/// A table of encodings with optional labels and the producing
/// configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingTable {
    pub meta: Vec<(String, String)>,
    pub ids: Vec<String>,
    pub labels: Vec<Option<String>>,
    pub values: Vec<DVector<f64>>,
}

pub const ENCODING_TAG: &str = "rankpool-encoding";

impl EncodingTable {
    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, |v| v.len())
    }

    pub fn meta_map(&self) -> BTreeMap<String, String> {
        self.meta.iter().cloned().collect()
    }

    /// `# rankpool-encoding k=v k=v ...`
    pub fn meta_line(&self) -> String {
        let mut line = format!("# {ENCODING_TAG}");
        for (k, v) in &self.meta {
            line.push(' ');
            line.push_str(k);
            line.push('=');
            line.push_str(v);
        }
        line
    }

    /// CSV with header `id,label,u_0,...`; values carry 9 significant
    /// digits.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        for (k, v) in &self.meta {
            if k.contains([' ', '=', '\n']) || v.contains([' ', '\n']) {
                return Err(Error::Format(format!("metadata entry `{k}={v}` cannot be written")));
            }
        }
        writeln!(w, "{}", self.meta_line())?;
        let mut csv = csv::Writer::from_writer(w);
        let mut header = vec!["id".to_string(), "label".to_string()];
        header.extend((0..self.dim()).map(|k| format!("u_{k}")));
        csv.write_record(&header).map_err(csv_err)?;
        for ((id, label), u) in self.ids.iter().zip(&self.labels).zip(&self.values) {
            let mut row = vec![id.clone(), label.clone().unwrap_or_default()];
            row.extend(u.iter().map(|x| format!("{x:.8e}")));
            csv.write_record(&row).map_err(csv_err)?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn read_csv(r: impl Read) -> Result<EncodingTable> {
        let mut reader = std::io::BufReader::new(r);
        let mut first = String::new();
        reader.read_line(&mut first)?;
        let first = first.trim_end();
        let mut meta = Vec::new();
        let mut rest = String::new();
        if let Some(line) = first.strip_prefix('#') {
            let mut tokens = line.split_whitespace();
            if tokens.next() != Some(ENCODING_TAG) {
                return Err(Error::Format(format!("unrecognised metadata line `{first}`")));
            }
            for t in tokens {
                let (k, v) = t
                    .split_once('=')
                    .ok_or_else(|| Error::Format(format!("bad metadata token `{t}`")))?;
                meta.push((k.to_string(), v.to_string()));
            }
        } else {
            rest.push_str(first);
            rest.push('\n');
        }
        reader.read_to_string(&mut rest)?;

        let mut csv = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(rest.as_bytes());
        let header = csv.headers().map_err(csv_err)?.clone();
        let dim = header.len().saturating_sub(2);
        let expected: Vec<String> = ["id".to_string(), "label".to_string()]
            .into_iter()
            .chain((0..dim).map(|k| format!("u_{k}")))
            .collect();
        if header.iter().ne(expected.iter().map(String::as_str)) || dim == 0 {
            return Err(Error::Format("encoding header must be id,label,u_0,...".into()));
        }
        let mut table = EncodingTable {
            meta,
            ids: Vec::new(),
            labels: Vec::new(),
            values: Vec::new(),
        };
        for (n, row) in csv.records().enumerate() {
            let row = row.map_err(csv_err)?;
            let values = row
                .iter()
                .skip(2)
                .map(|x| {
                    x.trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::Format(format!("row {}: bad value `{x}`", n + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            table.ids.push(row[0].to_string());
            table.labels.push(Some(row[1].to_string()).filter(|l| !l.is_empty()));
            table.values.push(DVector::from_vec(values));
        }
        Ok(table)
    }

    const MAGIC: &'static [u8; 8] = b"RPENC\x00\x01\x00";

    /// Little-endian layout: magic, metadata line, then row count, dim and
    /// per row `id`, `label` and `dim` f64 values. Strings are a u32 byte
    /// length followed by UTF-8; an absent label has length `u32::MAX`.
    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        write_str(&mut w, &self.meta_line())?;
        w.write_all(&(self.ids.len() as u64).to_le_bytes())?;
        w.write_all(&(self.dim() as u64).to_le_bytes())?;
        for ((id, label), u) in self.ids.iter().zip(&self.labels).zip(&self.values) {
            write_str(&mut w, id)?;
            match label {
                Some(l) => write_str(&mut w, l)?,
                None => w.write_all(&u32::MAX.to_le_bytes())?,
            }
            for x in u.iter() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<EncodingTable> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(Error::Format("not a binary encoding file".into()));
        }
        let meta_line = read_str(&mut r)?.ok_or_else(|| Error::Format("missing metadata".into()))?;
        let meta = meta_line
            .split_whitespace()
            .skip(2)
            .filter_map(|t| t.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
            .collect();
        let rows = read_u64(&mut r)? as usize;
        let dim = read_u64(&mut r)? as usize;
        let mut table = EncodingTable {
            meta,
            ids: Vec::with_capacity(rows),
            labels: Vec::with_capacity(rows),
            values: Vec::with_capacity(rows),
        };
        for _ in 0..rows {
            table
                .ids
                .push(read_str(&mut r)?.ok_or_else(|| Error::Format("missing id".into()))?);
            table.labels.push(read_str(&mut r)?);
            let mut buf = [0u8; 8];
            let mut u = DVector::zeros(dim);
            for x in u.iter_mut() {
                r.read_exact(&mut buf)?;
                *x = f64::from_le_bytes(buf);
            }
            table.values.push(u);
        }
        Ok(table)
    }

    /// Reads either form, recognised by the leading magic bytes.
    pub fn read_file(path: &Path) -> Result<EncodingTable> {
        let bytes = std::fs::read(path)?;
        if bytes.starts_with(Self::MAGIC) {
            Self::read_binary(bytes.as_slice())
        } else {
            Self::read_csv(bytes.as_slice())
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_str(r: &mut impl Read) -> Result<Option<String>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len);
    if len == u32::MAX {
        return Ok(None);
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf)
        .map(Some)
        .map_err(|_| Error::Format("string is not UTF-8".into()))
}
