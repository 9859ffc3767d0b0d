//! File formats: dataset CSV, transition-matrix CSV, classifier
//! checkpoints, and TOML run metadata. Floats are written with 17
//! significant digits so every round-trip is lossless.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::data::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::mlp::MlpParams;
use crate::Matrix;

/// 17 significant digits, enough to reconstruct any f64 exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{:.16e}", v)
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        msg: format!("expected a number, got {s:?}"),
    })
}

fn parse_usize(s: &str, line: usize) -> Result<usize> {
    s.trim().parse::<usize>().map_err(|_| Error::Parse {
        line,
        msg: format!("expected an integer, got {s:?}"),
    })
}

pub fn write_dataset_csv(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let d = ds.feature_dim();
    let mut header: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
    header.push("clean_label".into());
    if ds.noisy_labels.is_some() {
        header.push("noisy_label".into());
    }
    header.push("split".into());
    writeln!(w, "{}", header.join(","))?;
    for i in 0..ds.len() {
        let mut fields: Vec<String> = (0..d).map(|j| fmt_f64(ds.features.get(i, j))).collect();
        fields.push(ds.clean_labels[i].to_string());
        if let Some(noisy) = &ds.noisy_labels {
            fields.push(noisy[i].to_string());
        }
        fields.push(ds.split[i].as_str().into());
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

pub fn read_dataset_csv(path: &Path) -> Result<LabeledDataset> {
    let content = fs::read_to_string(path)?;
    let mut lines = content.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    let d = cols.iter().take_while(|c| c.starts_with('f')).count();
    let has_noisy = cols.contains(&"noisy_label");
    let expected = d + 2 + usize::from(has_noisy);
    if cols.len() != expected || !cols.contains(&"clean_label") || !cols.contains(&"split") {
        return Err(Error::Parse {
            line: 1,
            msg: format!("unexpected header {header:?}"),
        });
    }
    let mut features = Vec::new();
    let mut clean = Vec::new();
    let mut noisy = Vec::new();
    let mut split = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != expected {
            return Err(Error::Parse {
                line,
                msg: format!("expected {expected} fields, got {}", fields.len()),
            });
        }
        for field in &fields[..d] {
            features.push(parse_f64(field, line)?);
        }
        clean.push(parse_usize(fields[d], line)?);
        if has_noisy {
            noisy.push(parse_usize(fields[d + 1], line)?);
        }
        let tag = fields[expected - 1].trim();
        split.push(Split::parse(tag).ok_or_else(|| Error::Parse {
            line,
            msg: format!("unknown split tag {tag:?}"),
        })?);
    }
    let n = clean.len();
    let num_classes = clean
        .iter()
        .chain(noisy.iter())
        .max()
        .map_or(0, |&m| m + 1);
    Ok(LabeledDataset {
        features: Matrix::from_vec(n, d, features)?,
        clean_labels: clean,
        noisy_labels: has_noisy.then_some(noisy),
        split,
        num_classes,
    })
}

/// c×c CSV, row-major, no header.
pub fn write_transition_csv(t: &Matrix, path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    for i in 0..t.rows() {
        let row: Vec<String> = t.row(i).iter().map(|&v| fmt_f64(v)).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_transition_csv(path: &Path) -> Result<Matrix> {
    let content = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, raw) in content.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for field in raw.split(',') {
            row.push(parse_f64(field, idx + 1)?);
        }
        rows.push(row);
    }
    Matrix::from_rows(&rows)
}

/// Textual checkpoint: a dims line, then one line per weight-matrix row.
pub fn write_checkpoint(params: &MlpParams, path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let dims: Vec<String> = params.layer_dims.iter().map(|d| d.to_string()).collect();
    writeln!(w, "dims,{}", dims.join(","))?;
    for weight in &params.weights {
        for i in 0..weight.rows() {
            let row: Vec<String> = weight.row(i).iter().map(|&v| fmt_f64(v)).collect();
            writeln!(w, "{}", row.join(","))?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<MlpParams> {
    let content = fs::read_to_string(path)?;
    let mut lines = content.lines().enumerate();
    let (_, dims_line) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty checkpoint".into(),
    })?;
    let mut parts = dims_line.split(',');
    if parts.next() != Some("dims") {
        return Err(Error::Parse {
            line: 1,
            msg: "missing dims header".into(),
        });
    }
    let mut layer_dims = Vec::new();
    for p in parts {
        layer_dims.push(parse_usize(p, 1)?);
    }
    if layer_dims.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            msg: "need at least two dims".into(),
        });
    }
    let mut weights = Vec::new();
    for l in 0..layer_dims.len() - 1 {
        let (out_d, in_d) = (layer_dims[l + 1], layer_dims[l]);
        let mut rows = Vec::with_capacity(out_d);
        for _ in 0..out_d {
            let (idx, raw) = lines.next().ok_or(Error::Parse {
                line: 0,
                msg: "truncated checkpoint".into(),
            })?;
            let line = idx + 1;
            let row: Result<Vec<f64>> =
                raw.split(',').map(|f| parse_f64(f, line)).collect();
            let row = row?;
            if row.len() != in_d {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {in_d} values, got {}", row.len()),
                });
            }
            rows.push(row);
        }
        weights.push(Matrix::from_rows(&rows)?);
    }
    Ok(MlpParams {
        layer_dims,
        weights,
    })
}

/// Run metadata as TOML.
pub fn write_toml<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = toml::to_string_pretty(value)
        .map_err(|e| Error::invalid_input(format!("toml serialize: {e}")))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Parse {
        line: 0,
        msg: format!("toml parse: {e}"),
    })
}
