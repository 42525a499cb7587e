//! Plain-text container for an [`LtiModel`] and its [`OperatingPoint`].
//!
//! ```text
//! # comment lines and blank lines are ignored
//! rtmpc-model 1
//! dims <n_states> <n_inputs> <n_disturbances> <n_outputs>
//! sample_period <seconds>
//! matrix A <rows> <cols>
//! <row 1 values, whitespace separated>
//! ...
//! vector u0 <len>
//! <values on one line>
//! ```
//!
//! Matrices `A B F C D G` and vectors `x0 u0 y0 w0` must all be present,
//! each exactly once, in any order. Values are written with Rust's shortest
//! round-trip float formatting, so write → read is exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

use super::{LtiModel, OperatingPoint};

const MAGIC: &str = "rtmpc-model";
const VERSION: &str = "1";
const MATRICES: [&str; 6] = ["A", "B", "F", "C", "D", "G"];
const VECTORS: [&str; 4] = ["x0", "u0", "y0", "w0"];

pub fn to_string(model: &LtiModel, op: &OperatingPoint) -> String {
    let mut s = String::new();
    writeln!(s, "{MAGIC} {VERSION}").unwrap();
    writeln!(
        s,
        "dims {} {} {} {}",
        model.n_states(),
        model.n_inputs(),
        model.n_disturbances(),
        model.n_outputs()
    )
    .unwrap();
    writeln!(s, "sample_period {}", model.sample_period).unwrap();
    let mats = [&model.a, &model.b, &model.f, &model.c, &model.d, &model.g];
    for (name, m) in MATRICES.iter().zip(mats) {
        writeln!(s, "matrix {name} {} {}", m.nrows(), m.ncols()).unwrap();
        for r in 0..m.nrows() {
            let row: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
            writeln!(s, "{}", row.join(" ")).unwrap();
        }
    }
    let vecs = [&op.x0, &op.u0, &op.y0, &op.w0];
    for (name, v) in VECTORS.iter().zip(vecs) {
        writeln!(s, "vector {name} {}", v.len()).unwrap();
        let vals: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        writeln!(s, "{}", vals.join(" ")).unwrap();
    }
    s
}

pub fn write(path: &Path, model: &LtiModel, op: &OperatingPoint) -> Result<()> {
    std::fs::write(path, to_string(model, op))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<(LtiModel, OperatingPoint)> {
    let text = std::fs::read_to_string(path)?;
    parse(&text, path)
}

/// Parses model text; `origin` only labels error messages.
pub fn parse(text: &str, origin: &Path) -> Result<(LtiModel, OperatingPoint)> {
    let err = |line: usize, msg: String| Error::Parse {
        path: PathBuf::from(origin),
        line,
        msg,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let mut next_tokens = |what: &str| -> Result<(usize, Vec<&str>)> {
        lines
            .next()
            .map(|(n, l)| (n, l.split_whitespace().collect()))
            .ok_or_else(|| err(0, format!("unexpected end of file, expected {what}")))
    };
    let number = |line: usize, tok: &str| -> Result<f64> {
        tok.parse::<f64>().map_err(|_| err(line, format!("invalid number {tok:?}")))
    };
    let count = |line: usize, tok: &str| -> Result<usize> {
        tok.parse::<usize>().map_err(|_| err(line, format!("invalid count {tok:?}")))
    };

    let (n, header) = next_tokens("header")?;
    if header != [MAGIC, VERSION] {
        return Err(err(n, format!("expected header `{MAGIC} {VERSION}`")));
    }
    let (n, dims) = next_tokens("dims")?;
    if dims.len() != 5 || dims[0] != "dims" {
        return Err(err(n, "expected `dims <n> <nu> <nw> <ny>`".into()));
    }
    let dims: Vec<usize> = dims[1..].iter().map(|t| count(n, t)).collect::<Result<_>>()?;
    let (n, sp) = next_tokens("sample_period")?;
    if sp.len() != 2 || sp[0] != "sample_period" {
        return Err(err(n, "expected `sample_period <seconds>`".into()));
    }
    let sample_period = number(n, sp[1])?;

    let mut matrices: BTreeMap<String, DMatrix<f64>> = BTreeMap::new();
    let mut vectors: BTreeMap<String, DVector<f64>> = BTreeMap::new();
    while let Ok((n, toks)) = next_tokens("block") {
        match toks.first().copied() {
            Some("matrix") if toks.len() == 4 => {
                let name = toks[1].to_string();
                let (rows, cols) = (count(n, toks[2])?, count(n, toks[3])?);
                let mut data = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    let (rn, vals) = next_tokens("matrix row")?;
                    if vals.len() != cols {
                        return Err(err(rn, format!("matrix {name}: expected {cols} values, got {}", vals.len())));
                    }
                    for v in vals {
                        data.push(number(rn, v)?);
                    }
                }
                if matrices.insert(name.clone(), DMatrix::from_row_slice(rows, cols, &data)).is_some() {
                    return Err(err(n, format!("duplicate matrix {name}")));
                }
            }
            Some("vector") if toks.len() == 3 => {
                let name = toks[1].to_string();
                let len = count(n, toks[2])?;
                let values = if len == 0 {
                    Vec::new()
                } else {
                    let (vn, vals) = next_tokens("vector values")?;
                    if vals.len() != len {
                        return Err(err(vn, format!("vector {name}: expected {len} values, got {}", vals.len())));
                    }
                    vals.iter().map(|v| number(vn, v)).collect::<Result<_>>()?
                };
                if vectors.insert(name.clone(), DVector::from_vec(values)).is_some() {
                    return Err(err(n, format!("duplicate vector {name}")));
                }
            }
            _ => return Err(err(n, format!("unrecognised block header {:?}", toks.join(" ")))),
        }
    }

    let mut take_m = |name: &str| matrices.remove(name).ok_or_else(|| err(0, format!("missing matrix {name}")));
    let (a, b, f, c, d, g) = (take_m("A")?, take_m("B")?, take_m("F")?, take_m("C")?, take_m("D")?, take_m("G")?);
    let mut take_v = |name: &str| vectors.remove(name).ok_or_else(|| err(0, format!("missing vector {name}")));
    let op = OperatingPoint {
        x0: take_v("x0")?,
        u0: take_v("u0")?,
        y0: take_v("y0")?,
        w0: take_v("w0")?,
    };
    let model = LtiModel::new(a, b, f, c, d, g, sample_period)?;
    let actual = [model.n_states(), model.n_inputs(), model.n_disturbances(), model.n_outputs()];
    if actual[..] != dims[..] {
        return Err(err(0, format!("dims header {dims:?} disagrees with matrices {actual:?}")));
    }
    op.validate(&model)?;
    Ok((model, op))
}
