//! Matrix Market and CSV readers and writers. Each row of the matrix is one vector.

use std::fmt::Write as _;
use std::path::Path;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use sparsekit::linalg::{FamilyVector, VectorFamily};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    MatrixMarket,
    Csv,
}

impl Format {
    /// `.mtx`/`.mm` and `.csv`; anything else is unknown.
    pub fn from_path(path: &Path) -> Option<Format> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "mtx" | "mm" => Some(Format::MatrixMarket),
            "csv" => Some(Format::Csv),
            _ => None,
        }
    }
}

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.display().to_string(), message: e.to_string() })
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Io { path: path.display().to_string(), message: e.to_string() })
}

/// Reads a matrix file; `format` defaults to the one implied by the extension.
pub fn parse_matrix_file(path: &Path, format: Option<Format>) -> CliResult<VectorFamily> {
    let name = path.display().to_string();
    let format = match format.or_else(|| Format::from_path(path)) {
        Some(f) => f,
        None => {
            return Err(CliError::Io {
                path: name,
                message: "cannot infer format from extension; pass --format".into(),
            })
        }
    };
    let text = read_text(path)?;
    match format {
        Format::MatrixMarket => parse_matrix_market(&text, &name),
        Format::Csv => parse_csv(&text, &name),
    }
}

fn parse_number(tok: &str, name: &str, line: usize) -> CliResult<f64> {
    let x: f64 = tok.parse().map_err(|_| CliError::parse(name, line, format!("invalid number {tok:?}")))?;
    if !x.is_finite() {
        return Err(CliError::parse(name, line, format!("non-finite value {tok:?}")));
    }
    Ok(x)
}

fn parse_index(tok: &str, name: &str, line: usize) -> CliResult<usize> {
    tok.parse().map_err(|_| CliError::parse(name, line, format!("invalid integer {tok:?}")))
}

/// Matrix Market `array` (dense rows) or `coordinate` (sparse rows), real or
/// integer field, general or symmetric.
pub fn parse_matrix_market(text: &str, name: &str) -> CliResult<VectorFamily> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (_, header) = lines.next().ok_or_else(|| CliError::parse(name, 1, "empty file"))?;
    let words: Vec<String> = header.split_whitespace().map(|w| w.to_ascii_lowercase()).collect();
    if words.len() != 5 || words[0] != "%%matrixmarket" || words[1] != "matrix" {
        return Err(CliError::parse(name, 1, "expected '%%MatrixMarket matrix <layout> <field> <symmetry>'"));
    }
    let coordinate = match words[2].as_str() {
        "array" => false,
        "coordinate" => true,
        other => return Err(CliError::parse(name, 1, format!("unsupported layout {other:?}"))),
    };
    if !matches!(words[3].as_str(), "real" | "integer" | "double") {
        return Err(CliError::parse(name, 1, format!("unsupported field {:?}", words[3])));
    }
    let symmetric = match words[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => return Err(CliError::parse(name, 1, format!("unsupported symmetry {other:?}"))),
    };
    let mut body = lines.filter(|(_, l)| !l.is_empty() && !l.starts_with('%'));
    let (size_line, size) = body.next().ok_or_else(|| CliError::parse(name, 1, "missing size line"))?;
    let dims: Vec<usize> =
        size.split_whitespace().map(|t| parse_index(t, name, size_line)).collect::<CliResult<_>>()?;
    let expected_fields = if coordinate { 3 } else { 2 };
    if dims.len() != expected_fields {
        return Err(CliError::parse(name, size_line, format!("size line needs {expected_fields} integers")));
    }
    let (rows, cols) = (dims[0], dims[1]);
    if symmetric && rows != cols {
        return Err(CliError::parse(name, size_line, "symmetric matrix must be square"));
    }

    if coordinate {
        let nnz = dims[2];
        let mut entries: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rows];
        let mut seen = 0usize;
        let mut last_line = size_line;
        for (line, l) in body {
            last_line = line;
            let toks: Vec<&str> = l.split_whitespace().collect();
            if toks.len() != 3 {
                return Err(CliError::parse(name, line, format!("expected 'row col value', found {} fields", toks.len())));
            }
            let i = parse_index(toks[0], name, line)?;
            let j = parse_index(toks[1], name, line)?;
            let x = parse_number(toks[2], name, line)?;
            if i == 0 || i > rows || j == 0 || j > cols {
                return Err(CliError::parse(name, line, format!("entry ({i}, {j}) outside {rows} x {cols}")));
            }
            seen += 1;
            if seen > nnz {
                return Err(CliError::parse(name, line, format!("more than the declared {nnz} entries")));
            }
            entries[i - 1].push((j - 1, x));
            if symmetric && i != j {
                entries[j - 1].push((i - 1, x));
            }
        }
        if seen != nnz {
            return Err(CliError::parse(name, last_line, format!("declared {nnz} entries, found {seen}")));
        }
        let mut fam = VectorFamily::new(cols);
        for row in entries {
            fam.push_sparse(row)?;
        }
        Ok(fam)
    } else {
        let expected = if symmetric { rows * (rows + 1) / 2 } else { rows * cols };
        let mut values = Vec::with_capacity(expected);
        let mut last_line = size_line;
        for (line, l) in body {
            last_line = line;
            for tok in l.split_whitespace() {
                if values.len() == expected {
                    return Err(CliError::parse(name, line, format!("more than the declared {expected} values")));
                }
                values.push(parse_number(tok, name, line)?);
            }
        }
        if values.len() != expected {
            return Err(CliError::parse(name, last_line, format!("declared {expected} values, found {}", values.len())));
        }
        let mut dense = vec![vec![0.0; cols]; rows];
        let mut it = values.into_iter();
        // column-major; symmetric stores the lower triangle
        for j in 0..cols {
            let start = if symmetric { j } else { 0 };
            for row in dense.iter_mut().skip(start) {
                row[j] = it.next().unwrap_or(0.0);
            }
        }
        if symmetric {
            for i in 0..rows {
                for j in (i + 1)..cols {
                    dense[i][j] = dense[j][i];
                }
            }
        }
        let mut fam = VectorFamily::new(cols);
        for row in dense {
            fam.push_dense(row)?;
        }
        Ok(fam)
    }
}

/// Comma-separated rows; blank lines and `#` comments are skipped.
pub fn parse_csv(text: &str, name: &str) -> CliResult<VectorFamily> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (i, l) in text.lines().enumerate() {
        let (line, l) = (i + 1, l.trim());
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let row: Vec<f64> = l.split(',').map(|t| parse_number(t.trim(), name, line)).collect::<CliResult<_>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(CliError::parse(name, line, format!("expected {w} fields, found {}", row.len())))
            }
            _ => {}
        }
        rows.push(row);
    }
    let mut fam = VectorFamily::new(width.unwrap_or(0));
    for row in rows {
        fam.push_dense(row)?;
    }
    Ok(fam)
}

/// Reads a weight vector: every number in the file, row by row.
pub fn parse_weights_file(path: &Path, format: Option<Format>) -> CliResult<Vec<f64>> {
    let fam = parse_matrix_file(path, format.or(Some(Format::Csv)))?;
    Ok(fam.dense_rows().into_iter().flatten().collect())
}

fn is_sparse(v: &VectorFamily) -> bool {
    !v.is_empty() && v.iter().all(|x| matches!(x, FamilyVector::Sparse { .. }))
}

/// Coordinate format when every vector is sparse, array format otherwise.
/// Values are printed in shortest round-trip form.
pub fn write_matrix_market(v: &VectorFamily) -> String {
    let mut out = String::new();
    if is_sparse(v) {
        let nnz: usize = v
            .iter()
            .map(|x| match x {
                FamilyVector::Sparse { indices, .. } => indices.len(),
                FamilyVector::Dense(_) => 0,
            })
            .sum();
        let _ = writeln!(out, "%%MatrixMarket matrix coordinate real general");
        let _ = writeln!(out, "{} {} {}", v.len(), v.dim(), nnz);
        for (i, x) in v.iter().enumerate() {
            if let FamilyVector::Sparse { indices, values } = x {
                for (j, val) in indices.iter().zip(values) {
                    let _ = writeln!(out, "{} {} {:e}", i + 1, j + 1, val);
                }
            }
        }
    } else {
        let _ = writeln!(out, "%%MatrixMarket matrix array real general");
        let _ = writeln!(out, "{} {}", v.len(), v.dim());
        let rows = v.dense_rows();
        for j in 0..v.dim() {
            for row in &rows {
                let _ = writeln!(out, "{:e}", row[j]);
            }
        }
    }
    out
}

pub fn write_csv(v: &VectorFamily) -> String {
    let mut out = String::new();
    for row in v.dense_rows() {
        let line: Vec<String> = row.iter().map(|x| format!("{x:e}")).collect();
        let _ = writeln!(out, "{}", line.join(","));
    }
    out
}
