//! Matrix Market exchange format: `matrix coordinate|array real general`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{CsrMatrix, DenseMatrix, ExplicitMatrix};
use crate::error::{Error, Result};

pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<ExplicitMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_matrix_market(&text, path)
}

pub fn write_matrix_market(a: &ExplicitMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_matrix_market_string(a)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Serializes with 17 significant digits so that reading back is exact.
pub fn to_matrix_market_string(a: &ExplicitMatrix) -> String {
    let mut out = String::new();
    match a {
        ExplicitMatrix::Dense(m) => {
            out.push_str("%%MatrixMarket matrix array real general\n");
            let _ = writeln!(out, "{} {}", m.rows(), m.cols());
            for j in 0..m.cols() {
                for i in 0..m.rows() {
                    let _ = writeln!(out, "{:.16e}", m.get(i, j));
                }
            }
        }
        ExplicitMatrix::Sparse(m) => {
            out.push_str("%%MatrixMarket matrix coordinate real general\n");
            let _ = writeln!(out, "{} {} {}", m.rows(), m.cols(), m.nnz());
            for (i, j, v) in m.iter() {
                let _ = writeln!(out, "{} {} {:.16e}", i + 1, j + 1, v);
            }
        }
    }
    out
}

enum Layout {
    Coordinate,
    Array,
}

/// Parses Matrix Market text. `path` is only used in error messages.
pub fn parse_matrix_market(text: &str, path: &Path) -> Result<ExplicitMatrix> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l));
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let fields: Vec<String> = header.split_whitespace().map(str::to_ascii_lowercase).collect();
    if fields.len() != 5 || fields[0] != "%%matrixmarket" {
        return Err(err(1, format!("malformed header {header:?}")));
    }
    if fields[1] != "matrix" {
        return Err(err(1, format!("unsupported object {:?}", fields[1])));
    }
    let layout = match fields[2].as_str() {
        "coordinate" => Layout::Coordinate,
        "array" => Layout::Array,
        other => return Err(err(1, format!("unsupported format {other:?}"))),
    };
    if fields[3] != "real" {
        return Err(err(1, format!("unsupported field {:?}, only \"real\" is accepted", fields[3])));
    }
    if fields[4] != "general" {
        return Err(err(1, format!("unsupported symmetry {:?}, only \"general\" is accepted", fields[4])));
    }

    let mut data = lines.filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });

    let (size_line, size) = data.next().ok_or_else(|| err(2, "missing size line".into()))?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| err(size_line, format!("bad size line {size:?}: {e}")))?;

    let parse_value = |line: usize, tok: &str| -> Result<f64> {
        let v: f64 = tok
            .parse()
            .map_err(|_| err(line, format!("value {tok:?} is not a real number")))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(err(line, format!("value {tok:?} is not finite")))
        }
    };

    match layout {
        Layout::Coordinate => {
            let &[rows, cols, nnz] = dims.as_slice() else {
                return Err(err(size_line, "coordinate size line needs rows cols nnz".into()));
            };
            let mut triplets = Vec::with_capacity(nnz);
            let mut seen = std::collections::HashSet::with_capacity(nnz);
            let mut last_line = size_line;
            for (line, l) in data {
                last_line = line;
                let toks: Vec<&str> = l.split_whitespace().collect();
                if toks.len() != 3 {
                    return Err(err(line, format!("expected `row col value`, got {l:?}")));
                }
                let idx = |t: &str| -> Result<usize> {
                    t.parse::<usize>()
                        .map_err(|_| err(line, format!("bad index {t:?}")))
                };
                let (i, j) = (idx(toks[0])?, idx(toks[1])?);
                if i == 0 || i > rows || j == 0 || j > cols {
                    return Err(err(line, format!("index ({i}, {j}) outside {rows}x{cols}")));
                }
                if !seen.insert((i, j)) {
                    return Err(err(line, format!("duplicate entry ({i}, {j})")));
                }
                if triplets.len() == nnz {
                    return Err(err(line, format!("more than the declared {nnz} entries")));
                }
                triplets.push((i - 1, j - 1, parse_value(line, toks[2])?));
            }
            if triplets.len() != nnz {
                return Err(err(
                    last_line,
                    format!("declared {nnz} entries, found {}", triplets.len()),
                ));
            }
            Ok(CsrMatrix::from_triplets(rows, cols, &triplets)?.into())
        }
        Layout::Array => {
            let &[rows, cols] = dims.as_slice() else {
                return Err(err(size_line, "array size line needs rows cols".into()));
            };
            let mut col_major = Vec::with_capacity(rows * cols);
            let mut last_line = size_line;
            for (line, l) in data {
                last_line = line;
                for tok in l.split_whitespace() {
                    if col_major.len() == rows * cols {
                        return Err(err(line, format!("more than {} values", rows * cols)));
                    }
                    col_major.push(parse_value(line, tok)?);
                }
            }
            if col_major.len() != rows * cols {
                return Err(err(
                    last_line,
                    format!("expected {} values, found {}", rows * cols, col_major.len()),
                ));
            }
            Ok(DenseMatrix::from_fn(rows, cols, |i, j| col_major[j * rows + i]).into())
        }
    }
}
