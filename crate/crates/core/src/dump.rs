//! Plain-text field dumps.
//!
//! ```text
//! dim,2
//! resolution,64,64
//! periods,6.2831853071795862e0,6.2831853071795862e0
//! valence,0,2
//! time_tag,5.0000000000000003e-2
//! stencil,6
//! node,c0,c1,c2,c3
//! 0,1.0000000000000000e0,...
//! ```
//!
//! Values carry 17 significant digits, so a write/read round trip is exact.
//! `time_tag` is `none` for untimed fields; the `stencil` line is optional on input.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::error::{FlowError, Result};
use crate::grid::{Grid, Stencil};
use crate::tensor::{TensorField, Valence};

pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_field_to(f: &TensorField, out: &mut impl Write) -> std::io::Result<()> {
    let g = f.grid();
    let join = |v: Vec<String>| v.join(",");
    writeln!(out, "dim,{}", g.dim())?;
    writeln!(out, "resolution,{}", join(g.resolution().iter().map(|r| r.to_string()).collect()))?;
    writeln!(out, "periods,{}", join(g.periods().iter().map(|&p| format_value(p)).collect()))?;
    writeln!(out, "valence,{},{}", f.valence().upper, f.valence().lower)?;
    match f.time() {
        Some(t) => writeln!(out, "time_tag,{}", format_value(t))?,
        None => writeln!(out, "time_tag,none")?,
    }
    writeln!(out, "stencil,{}", g.stencil().order())?;
    let nc = f.components();
    writeln!(out, "node,{}", join((0..nc).map(|c| format!("c{c}")).collect()))?;
    let mut line = String::new();
    for x in 0..g.len() {
        line.clear();
        let _ = write!(line, "{x}");
        for v in f.at(x) {
            let _ = write!(line, ",{}", format_value(*v));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn write_field(f: &TensorField, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| FlowError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_field_to(f, &mut w).and_then(|_| w.flush()).map_err(|e| FlowError::io(path, e))
}

pub fn read_field(path: &Path) -> Result<TensorField> {
    let text = fs::read_to_string(path).map_err(|e| FlowError::io(path, e))?;
    parse_field(&text).map_err(|message| FlowError::Parse { path: path.to_path_buf(), message })
}

fn header<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>, key: &str) -> std::result::Result<Vec<&'a str>, String> {
    let (no, line) = lines.next().ok_or_else(|| format!("missing `{key}` header"))?;
    let mut parts = line.split(',');
    if parts.next() != Some(key) {
        return Err(format!("line {}: expected `{key}`", no + 1));
    }
    Ok(parts.collect())
}

fn num<T: std::str::FromStr>(s: &str) -> std::result::Result<T, String> {
    s.trim().parse().map_err(|_| format!("cannot parse `{s}`"))
}

pub fn parse_field(text: &str) -> std::result::Result<TensorField, String> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).peekable();
    let dim: usize = num(header(&mut lines, "dim")?.first().ok_or("empty dim")?)?;
    let res: Vec<usize> = header(&mut lines, "resolution")?.into_iter().map(num).collect::<std::result::Result<_, _>>()?;
    let per: Vec<f64> = header(&mut lines, "periods")?.into_iter().map(num).collect::<std::result::Result<_, _>>()?;
    let val = header(&mut lines, "valence")?;
    if val.len() != 2 {
        return Err("valence needs two entries".into());
    }
    let valence = Valence::new(num(val[0])?, num(val[1])?);
    let tt = header(&mut lines, "time_tag")?;
    let time = match tt.first().map(|s| s.trim()) {
        Some("none") | None => None,
        Some(s) => Some(num::<f64>(s)?),
    };
    let mut stencil = Stencil::default();
    if let Some((_, l)) = lines.peek() {
        if l.starts_with("stencil,") {
            let s = header(&mut lines, "stencil")?;
            stencil = Stencil::from_order(num(s.first().ok_or("empty stencil")?)?).map_err(|e| e.to_string())?;
        }
    }
    header(&mut lines, "node")?;
    let grid = Arc::new(Grid::with_stencil(dim, &res, &per, stencil).map_err(|e| e.to_string())?);
    let nc = valence.components(dim);
    let mut data = vec![0.0; grid.len() * nc];
    let mut seen = vec![false; grid.len()];
    for (no, line) in lines {
        let mut parts = line.split(',');
        let x: usize = num(parts.next().unwrap_or(""))?;
        if x >= grid.len() {
            return Err(format!("line {}: node {x} out of range", no + 1));
        }
        let vals: Vec<f64> = parts.map(num).collect::<std::result::Result<_, _>>()?;
        if vals.len() != nc {
            return Err(format!("line {}: expected {nc} components, got {}", no + 1, vals.len()));
        }
        data[x * nc..(x + 1) * nc].copy_from_slice(&vals);
        seen[x] = true;
    }
    if let Some(x) = seen.iter().position(|s| !s) {
        return Err(format!("node {x} missing"));
    }
    let f = TensorField::from_vec(&grid, valence, data).map_err(|e| e.to_string())?;
    Ok(match time {
        Some(t) => f.with_time(t),
        None => f,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let g = Arc::new(Grid::new(2, &[8, 10], &[std::f64::consts::PI, 1.0 / 3.0]).unwrap());
        let f = TensorField::from_fn(&g, Valence::SYM2, |x, o| {
            for (c, v) in o.iter_mut().enumerate() {
                *v = (x[0] * 1.1 + x[1] * 7.3 + c as f64).sin() / 3.0;
            }
        })
        .unwrap()
        .with_time(0.1 + 0.2);
        let mut buf = Vec::new();
        write_field_to(&f, &mut buf).unwrap();
        let back = parse_field(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn rejects_missing_nodes() {
        let text = "dim,2\nresolution,8,8\nperiods,1,1\nvalence,0,0\ntime_tag,none\nnode,c0\n0,1.0\n";
        assert!(parse_field(text).unwrap_err().contains("missing"));
    }
}
