//! Matrix sources: Matrix Market files or generator specs such as `lap2d:24x24`.

use selinv_core::sparse::{
    gen_arrow, gen_chain_pair, gen_laplacian_2d, gen_laplacian_2d_nested, gen_random_diag_dominant, gen_tridiagonal,
    read_matrix_market, SparseError, SparseMatrix,
};
use std::path::Path;

pub const GENERATORS: &str = "lap2d:NXxNY, lap2d-nd:NXxNY, tridiag:N, arrow:N, chain:LEN, random:N[:PER_COL[:SEED[:sym|unsym]]]";

#[derive(Debug, thiserror::Error)]
pub enum SourceError {
    #[error("bad generator spec '{spec}': {reason} (known: {GENERATORS})")]
    BadSpec { spec: String, reason: String },
    #[error(transparent)]
    Sparse(#[from] SparseError),
}

fn bad(spec: &str, reason: impl Into<String>) -> SourceError {
    SourceError::BadSpec { spec: spec.to_string(), reason: reason.into() }
}

fn num<T: std::str::FromStr>(spec: &str, s: &str) -> Result<T, SourceError> {
    s.trim().parse().map_err(|_| bad(spec, format!("'{s}' is not a number")))
}

fn dims(spec: &str, s: &str) -> Result<(usize, usize), SourceError> {
    let (x, y) = s.split_once(['x', 'X']).ok_or_else(|| bad(spec, "expected NXxNY"))?;
    Ok((num(spec, x)?, num(spec, y)?))
}

pub fn generate(spec: &str) -> Result<SparseMatrix, SourceError> {
    let (name, args) = spec.split_once(':').ok_or_else(|| bad(spec, "missing ':'"))?;
    let a = match name {
        "lap2d" => {
            let (nx, ny) = dims(spec, args)?;
            gen_laplacian_2d(nx, ny)?
        }
        "lap2d-nd" => {
            let (nx, ny) = dims(spec, args)?;
            gen_laplacian_2d_nested(nx, ny)?
        }
        "tridiag" => gen_tridiagonal(num(spec, args)?)?,
        "arrow" => gen_arrow(num(spec, args)?)?,
        "chain" => gen_chain_pair(num(spec, args)?)?,
        "random" => {
            let parts: Vec<&str> = args.split(':').collect();
            if parts.len() > 4 {
                return Err(bad(spec, "too many fields"));
            }
            let n = num(spec, parts[0])?;
            let per_col = parts.get(1).map(|s| num(spec, s)).transpose()?.unwrap_or(3);
            let seed = parts.get(2).map(|s| num(spec, s)).transpose()?.unwrap_or(0);
            let symmetric = match parts.get(3).copied() {
                None | Some("sym") => true,
                Some("unsym") => false,
                Some(other) => return Err(bad(spec, format!("'{other}' is neither sym nor unsym"))),
            };
            gen_random_diag_dominant(n, per_col, seed, symmetric)?
        }
        other => return Err(bad(spec, format!("unknown generator '{other}'"))),
    };
    Ok(a)
}

pub fn load(matrix: Option<&Path>, gen: Option<&str>) -> Result<(SparseMatrix, String), SourceError> {
    match (matrix, gen) {
        (Some(p), None) => Ok((read_matrix_market(p)?, p.display().to_string())),
        (None, Some(g)) => Ok((generate(g)?, g.to_string())),
        // clap enforces exactly one source
        _ => unreachable!("exactly one matrix source"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_generators() {
        assert_eq!(generate("lap2d:3x2").unwrap().n(), 6);
        assert_eq!(generate("lap2d-nd:4x4").unwrap().n(), 16);
        assert_eq!(generate("tridiag:5").unwrap().nnz(), 13);
        assert_eq!(generate("chain:3").unwrap().n(), 7);
        assert!(generate("random:30:2:9:unsym").unwrap().n() == 30);
        assert_eq!(generate("random:30").unwrap(), generate("random:30:3:0:sym").unwrap());
        for bad in ["lap2d", "lap2d:3", "lap2d:0x3", "cube:3", "random:5:1:1:maybe", "tridiag:x"] {
            assert!(generate(bad).is_err(), "{bad}");
        }
    }
}
