use super::{SparseError, SparseMatrix};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Clone, Copy, PartialEq)]
enum Field {
    Real,
    Pattern,
}

#[derive(Clone, Copy, PartialEq)]
enum Symmetry {
    General,
    Symmetric,
}

fn parse_banner(line: &str) -> Result<(Field, Symmetry), SparseError> {
    let words: Vec<String> = line.split_whitespace().map(|w| w.to_ascii_lowercase()).collect();
    if words.len() != 5 || words[0] != "%%matrixmarket" {
        return Err(SparseError::MalformedHeader(format!("expected 5-word banner, got {line:?}")));
    }
    if words[1] != "matrix" {
        return Err(SparseError::MalformedHeader(format!("unsupported object {:?}", words[1])));
    }
    if words[2] != "coordinate" {
        return Err(SparseError::MalformedHeader(format!("unsupported format {:?}", words[2])));
    }
    let field = match words[3].as_str() {
        "real" | "integer" => Field::Real,
        "pattern" => Field::Pattern,
        other => return Err(SparseError::MalformedHeader(format!("unsupported field {other:?}"))),
    };
    let symmetry = match words[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        other => return Err(SparseError::MalformedHeader(format!("unsupported symmetry {other:?}"))),
    };
    Ok((field, symmetry))
}

fn parse_index(tok: Option<&str>, line: usize) -> Result<usize, SparseError> {
    let tok = tok.ok_or_else(|| SparseError::Parse { line, msg: "missing index".into() })?;
    tok.parse::<usize>().map_err(|e| SparseError::Parse { line, msg: format!("bad index {tok:?}: {e}") })
}

/// Parses coordinate-format Matrix Market text (real/integer/pattern,
/// general/symmetric). Symmetric storage is expanded and duplicates summed.
pub fn parse_matrix_market<R: BufRead>(reader: R) -> Result<SparseMatrix, SparseError> {
    let mut lines = reader.lines().enumerate();
    let (_, banner) = lines.next().ok_or_else(|| SparseError::MalformedHeader("empty input".into()))?;
    let (field, symmetry) = parse_banner(&banner?)?;

    let mut size: Option<(usize, usize, usize)> = None;
    let mut trip = Vec::new();
    let mut seen = 0usize;
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let mut tok = t.split_whitespace();
        let Some((rows, cols, nnz)) = size else {
            let r = parse_index(tok.next(), lineno)?;
            let c = parse_index(tok.next(), lineno)?;
            let z = parse_index(tok.next(), lineno)?;
            if r != c {
                return Err(SparseError::NotSquare { rows: r, cols: c });
            }
            if r == 0 {
                return Err(SparseError::ZeroDimension);
            }
            size = Some((r, c, z));
            trip.reserve(if symmetry == Symmetry::Symmetric { 2 * z } else { z });
            continue;
        };
        let i = parse_index(tok.next(), lineno)?;
        let j = parse_index(tok.next(), lineno)?;
        if i == 0 || j == 0 || i > rows || j > cols {
            return Err(SparseError::IndexOutOfRange { line: lineno, row: i, col: j, n: rows });
        }
        let v = match field {
            Field::Pattern => 1.0,
            Field::Real => {
                let s = tok.next().ok_or_else(|| SparseError::Parse { line: lineno, msg: "missing value".into() })?;
                s.parse::<f64>()
                    .map_err(|e| SparseError::Parse { line: lineno, msg: format!("bad value {s:?}: {e}") })?
            }
        };
        seen += 1;
        if seen > nnz {
            return Err(SparseError::Parse { line: lineno, msg: format!("more than the declared {nnz} entries") });
        }
        trip.push((i - 1, j - 1, v));
        if symmetry == Symmetry::Symmetric && i != j {
            trip.push((j - 1, i - 1, v));
        }
    }
    let (n, _, nnz) = size.ok_or_else(|| SparseError::MalformedHeader("missing size line".into()))?;
    if seen != nnz {
        return Err(SparseError::Parse { line: 0, msg: format!("declared {nnz} entries, found {seen}") });
    }
    SparseMatrix::from_triplets(n, &trip)
}

pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<SparseMatrix, SparseError> {
    parse_matrix_market(BufReader::new(File::open(path)?))
}

/// Writes `a` as `coordinate real general`. Values use the shortest
/// round-tripping representation.
pub fn write_matrix_market(a: &SparseMatrix, path: impl AsRef<Path>) -> Result<(), SparseError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", a.n(), a.n(), a.nnz())?;
    for (i, j, v) in a.triplets() {
        writeln!(w, "{} {} {:e}", i + 1, j + 1, v)?;
    }
    w.flush()?;
    Ok(())
}
