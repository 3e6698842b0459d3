//! Plain-text sparse serialization of a [`ConicProgram`].
//!
//! ```text
//! conic-program v1
//! vars <n>
//! free <n_free>
//! nonneg <n_nonneg>
//! psd <k1> <k2> ...          (line present even with no blocks)
//! constraints <m>
//! offset <value>
//! c <nnz>
//! <col> <value>              (nnz lines, 0-based)
//! A <nnz>
//! <row> <col> <value>
//! b <nnz>
//! <row> <value>
//! ```
//!
//! PSD variables use the √2-scaled lower-triangle column-major vectorization.
//! Values are written in shortest round-trip exponent form, so reading a
//! written program reproduces it bit for bit. Blank lines and lines starting
//! with `#` are ignored.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use super::{ConeLayout, ConicProgram};
use crate::error::{Error, Result};

pub fn write_program(p: &ConicProgram) -> String {
    let mut out = String::new();
    let l = &p.layout;
    let _ = writeln!(out, "conic-program v1");
    let _ = writeln!(out, "vars {}", l.dim());
    let _ = writeln!(out, "free {}", l.n_free);
    let _ = writeln!(out, "nonneg {}", l.n_nonneg);
    let orders: Vec<String> = l.psd_orders.iter().map(|k| k.to_string()).collect();
    let _ = writeln!(out, "psd {}", orders.join(" ")).map(|_| ());
    let _ = writeln!(out, "constraints {}", p.num_constraints());
    let _ = writeln!(out, "offset {:e}", p.objective_offset);

    let c: Vec<_> = p.c.iter().enumerate().filter(|(_, v)| **v != 0.0).collect();
    let _ = writeln!(out, "c {}", c.len());
    for (j, v) in c {
        let _ = writeln!(out, "{j} {v:e}");
    }
    let mut nnz = Vec::new();
    for i in 0..p.a.nrows() {
        for j in 0..p.a.ncols() {
            let v = p.a[(i, j)];
            if v != 0.0 {
                nnz.push((i, j, v));
            }
        }
    }
    let _ = writeln!(out, "A {}", nnz.len());
    for (i, j, v) in nnz {
        let _ = writeln!(out, "{i} {j} {v:e}");
    }
    let b: Vec<_> = p.b.iter().enumerate().filter(|(_, v)| **v != 0.0).collect();
    let _ = writeln!(out, "b {}", b.len());
    for (i, v) in b {
        let _ = writeln!(out, "{i} {v:e}");
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> Lines<'a> {
    fn next_tokens(&mut self) -> Result<(usize, Vec<&'a str>)> {
        for (no, line) in self.inner.by_ref() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            return Ok((no + 1, line.split_whitespace().collect()));
        }
        Err(Error::Parse("unexpected end of program text".into()))
    }

    fn keyed(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (no, toks) = self.next_tokens()?;
        if toks.first() != Some(&key) {
            return Err(Error::Parse(format!("line {no}: expected `{key}`")));
        }
        Ok((no, toks[1..].to_vec()))
    }

    fn count(&mut self, key: &str) -> Result<usize> {
        let (no, rest) = self.keyed(key)?;
        match rest.as_slice() {
            [v] => parse(no, v),
            _ => Err(Error::Parse(format!("line {no}: `{key}` takes one value"))),
        }
    }
}

fn parse<T: std::str::FromStr>(no: usize, tok: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::Parse(format!("line {no}: cannot parse `{tok}`")))
}

pub fn read_program(text: &str) -> Result<ConicProgram> {
    let mut lines = Lines { inner: text.lines().enumerate().peekable() };
    let (no, header) = lines.next_tokens()?;
    if header != ["conic-program", "v1"] {
        return Err(Error::Parse(format!("line {no}: missing `conic-program v1` header")));
    }
    let n = lines.count("vars")?;
    let n_free = lines.count("free")?;
    let n_nonneg = lines.count("nonneg")?;
    let (no, orders) = lines.keyed("psd")?;
    let psd_orders = orders.iter().map(|t| parse(no, t)).collect::<Result<Vec<usize>>>()?;
    let layout = ConeLayout::new(n_free, n_nonneg, psd_orders);
    if layout.dim() != n {
        return Err(Error::Parse(format!(
            "declared {n} variables but the cone layout has {}",
            layout.dim()
        )));
    }
    let m = lines.count("constraints")?;
    let (no, off) = lines.keyed("offset")?;
    let offset: f64 = match off.as_slice() {
        [v] => parse(no, v)?,
        _ => return Err(Error::Parse(format!("line {no}: `offset` takes one value"))),
    };

    let mut c = DVector::zeros(n);
    for _ in 0..lines.count("c")? {
        let (no, t) = lines.next_tokens()?;
        let [j, v] = t.as_slice() else {
            return Err(Error::Parse(format!("line {no}: expected `<col> <value>`")));
        };
        let j: usize = parse(no, j)?;
        if j >= n {
            return Err(Error::Parse(format!("line {no}: column {j} out of range")));
        }
        c[j] = parse(no, v)?;
    }
    let mut a = DMatrix::zeros(m, n);
    for _ in 0..lines.count("A")? {
        let (no, t) = lines.next_tokens()?;
        let [i, j, v] = t.as_slice() else {
            return Err(Error::Parse(format!("line {no}: expected `<row> <col> <value>`")));
        };
        let (i, j): (usize, usize) = (parse(no, i)?, parse(no, j)?);
        if i >= m || j >= n {
            return Err(Error::Parse(format!("line {no}: entry ({i}, {j}) out of range")));
        }
        a[(i, j)] = parse(no, v)?;
    }
    let mut b = DVector::zeros(m);
    for _ in 0..lines.count("b")? {
        let (no, t) = lines.next_tokens()?;
        let [i, v] = t.as_slice() else {
            return Err(Error::Parse(format!("line {no}: expected `<row> <value>`")));
        };
        let i: usize = parse(no, i)?;
        if i >= m {
            return Err(Error::Parse(format!("line {no}: row {i} out of range")));
        }
        b[i] = parse(no, v)?;
    }
    let mut p = ConicProgram::new(layout, c, a, b)?;
    p.objective_offset = offset;
    Ok(p)
}
