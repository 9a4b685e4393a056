//! SDPA sparse format (`.dat-s`).
//!
//! The program is written in SDPA's dual form
//! `max F0 . Y  s.t.  Fi . Y = ci, Y psd` with `Y` the block diagonal of
//! all variable blocks, so `F0 = -C`. Free symmetric blocks become a pair
//! of PSD blocks and free vectors/matrices become a split diagonal block.
//! Comment lines starting with `*` record the block layout and labels so
//! that [`import_sdpa`] restores the exact program.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{packed_index, BlockKind, ConicProgram, LinExpr};
use crate::error::{Error, Result};

/// SDPA blocks emitted for one program block: (size, sign of the part).
fn sdpa_parts(kind: BlockKind) -> Vec<(i64, f64)> {
    if kind.scalar_len() == 0 {
        return Vec::new();
    }
    match kind {
        BlockKind::Psd { n } => vec![(n as i64, 1.0)],
        BlockKind::Symmetric { n } => vec![(n as i64, 1.0), (n as i64, -1.0)],
        BlockKind::Nonneg { n } => vec![(-(n as i64), 1.0)],
        BlockKind::Free { rows, cols } => vec![(-2 * (rows * cols) as i64, 1.0)],
    }
}

fn kind_tag(kind: BlockKind) -> String {
    match kind {
        BlockKind::Psd { n } => format!("psd {n}"),
        BlockKind::Symmetric { n } => format!("sym {n}"),
        BlockKind::Nonneg { n } => format!("nonneg {n}"),
        BlockKind::Free { rows, cols } => format!("free {rows} {cols}"),
    }
}

/// Maps each program scalar to SDPA `(blkno, i, j, factor)` entries:
/// the coefficient `a` on that scalar appears as `factor * a`.
fn scalar_entries(p: &ConicProgram) -> Vec<Vec<(usize, usize, usize, f64)>> {
    let mut out = vec![Vec::new(); p.n_scalars()];
    let mut blkno = 1;
    for b in p.blocks() {
        let parts = sdpa_parts(b.kind);
        match b.kind {
            BlockKind::Psd { n } | BlockKind::Symmetric { n } => {
                for (pi, &(_, sign)) in parts.iter().enumerate() {
                    for j in 0..n {
                        for i in 0..=j {
                            let v = b.offset + packed_index(n, i, j);
                            let f = if i == j { 1.0 } else { 0.5 };
                            out[v].push((blkno + pi, i + 1, j + 1, sign * f));
                        }
                    }
                }
            }
            BlockKind::Nonneg { n } => {
                for i in 0..n {
                    out[b.offset + i].push((blkno, i + 1, i + 1, 1.0));
                }
            }
            BlockKind::Free { rows, cols } => {
                let len = rows * cols;
                for k in 0..len {
                    out[b.offset + k].push((blkno, k + 1, k + 1, 1.0));
                    out[b.offset + k].push((blkno, len + k + 1, len + k + 1, -1.0));
                }
            }
        }
        blkno += parts.len();
    }
    out
}

/// Renders the program in SDPA sparse format.
pub fn write_sdpa(p: &ConicProgram) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "* nncert conic program");
    for (k, b) in p.blocks().iter().enumerate() {
        let _ = writeln!(s, "* block {k} {} {}", kind_tag(b.kind), b.name);
    }
    for (i, eq) in p.equalities.iter().enumerate() {
        let _ = writeln!(s, "* constraint {} {}", i + 1, eq.label);
    }
    let _ = writeln!(s, "* objective_constant {:e}", p.objective.constant);
    for (k, v) in &p.metadata {
        let _ = writeln!(s, "* meta {k}={v}");
    }

    let mut sizes: Vec<i64> = p
        .blocks()
        .iter()
        .flat_map(|b| sdpa_parts(b.kind).into_iter().map(|(n, _)| n))
        .collect();
    let dummy = sizes.is_empty();
    if dummy {
        sizes.push(-1);
        let _ = writeln!(s, "* placeholder block");
    }
    let _ = writeln!(s, "{}", p.equalities.len());
    let _ = writeln!(s, "{}", sizes.len());
    let _ = writeln!(
        s,
        "{}",
        sizes.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" ")
    );
    let _ = writeln!(
        s,
        "{}",
        p.equalities
            .iter()
            .map(|e| format!("{:e}", -e.expr.constant))
            .collect::<Vec<_>>()
            .join(" ")
    );

    let map = scalar_entries(p);
    let mut entries: BTreeMap<(usize, usize, usize, usize), f64> = BTreeMap::new();
    let mut push = |mat: usize, expr: &LinExpr, sign: f64| {
        for (&v, &c) in &expr.terms {
            for &(blk, i, j, f) in &map[v] {
                *entries.entry((mat, blk, i, j)).or_insert(0.0) += sign * f * c;
            }
        }
    };
    push(0, &p.objective, -1.0);
    for (k, eq) in p.equalities.iter().enumerate() {
        push(k + 1, &eq.expr, 1.0);
    }
    for ((mat, blk, i, j), v) in entries {
        if v != 0.0 {
            let _ = writeln!(s, "{mat} {blk} {i} {j} {v:e}");
        }
    }
    s
}

pub fn export_sdpa(p: &ConicProgram, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_sdpa(p))?;
    Ok(())
}

fn parse_kind(words: &[&str]) -> Result<(BlockKind, usize)> {
    let num = |i: usize| -> Result<usize> {
        words
            .get(i)
            .and_then(|w| w.parse().ok())
            .ok_or_else(|| Error::Parse("bad block declaration".into()))
    };
    Ok(match words.first().copied() {
        Some("psd") => (BlockKind::Psd { n: num(1)? }, 2),
        Some("sym") => (BlockKind::Symmetric { n: num(1)? }, 2),
        Some("nonneg") => (BlockKind::Nonneg { n: num(1)? }, 2),
        Some("free") => (
            BlockKind::Free {
                rows: num(1)?,
                cols: num(2)?,
            },
            3,
        ),
        _ => return Err(Error::Parse("unknown block kind".into())),
    })
}

/// Parses SDPA sparse text. Files written by [`write_sdpa`] round-trip
/// exactly; plain SDPA files are read with PSD and nonnegative blocks.
pub fn import_sdpa(text: &str) -> Result<ConicProgram> {
    let mut p = ConicProgram::new();
    let mut labels: BTreeMap<usize, String> = BTreeMap::new();
    let mut obj_const = 0.0;
    let mut declared = false;
    let mut placeholder = false;
    let mut numbers: Vec<String> = Vec::new();
    for line in text.lines() {
        let t = line.trim();
        if let Some(c) = t.strip_prefix('*') {
            let c = c.trim_start();
            if let Some(rest) = c.strip_prefix("block ") {
                let words: Vec<&str> = rest.splitn(5, ' ').collect();
                let (kind, used) = parse_kind(&words[1..])?;
                let name = words[1 + used..].join(" ");
                p.add_block(name, kind);
                declared = true;
            } else if let Some(rest) = c.strip_prefix("constraint ") {
                let (idx, label) = rest.split_once(' ').unwrap_or((rest, ""));
                let idx: usize = idx
                    .parse()
                    .map_err(|_| Error::Parse("bad constraint label".into()))?;
                labels.insert(idx, label.to_string());
            } else if let Some(rest) = c.strip_prefix("objective_constant ") {
                obj_const = rest
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse("bad objective constant".into()))?;
            } else if c.starts_with("placeholder block") {
                placeholder = true;
            } else if let Some(rest) = c.strip_prefix("meta ") {
                if let Some((k, v)) = rest.split_once('=') {
                    p.metadata.insert(k.to_string(), v.to_string());
                }
            }
            continue;
        }
        if t.starts_with('"') || t.is_empty() {
            continue;
        }
        numbers.push(t.to_string());
    }

    let mut lines = numbers.into_iter();
    let clean = |s: &str| -> Vec<String> {
        s.split(|c: char| c.is_whitespace() || c == ',' || c == '{' || c == '}' || c == '(' || c == ')')
            .filter(|w| !w.is_empty())
            .map(|w| w.to_string())
            .collect()
    };
    let first = |l: Option<String>, what: &str| -> Result<i64> {
        l.as_deref()
            .map(clean)
            .and_then(|w| w.first().and_then(|x| x.parse().ok()))
            .ok_or_else(|| Error::Parse(format!("missing {what}")))
    };
    let m = first(lines.next(), "constraint count")? as usize;
    let nblocks = first(lines.next(), "block count")? as usize;
    let sizes: Vec<i64> = clean(&lines.next().unwrap_or_default())
        .iter()
        .map(|w| w.parse::<i64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Parse("bad block structure".into()))?;
    if sizes.len() != nblocks {
        return Err(Error::Parse("block structure length mismatch".into()));
    }
    let mut rhs: Vec<f64> = Vec::new();
    while rhs.len() < m {
        let l = lines
            .next()
            .ok_or_else(|| Error::Parse("missing right-hand side".into()))?;
        for w in clean(&l) {
            rhs.push(
                w.parse()
                    .map_err(|_| Error::Parse(format!("bad number '{w}'")))?,
            );
        }
    }

    if !declared && !placeholder {
        for (k, &sz) in sizes.iter().enumerate() {
            if sz > 0 {
                p.add_psd(format!("block{}", k + 1), sz as usize);
            } else {
                p.add_nonneg(format!("block{}", k + 1), (-sz) as usize);
            }
        }
    }

    // reverse map: (blk, i, j) -> (scalar, factor), primary parts only
    let map = scalar_entries(&p);
    let mut rev: BTreeMap<(usize, usize, usize), (usize, f64)> = BTreeMap::new();
    for (v, ents) in map.iter().enumerate() {
        if let Some(&(blk, i, j, f)) = ents.first() {
            rev.insert((blk, i, j), (v, f));
        }
    }

    let mut exprs: Vec<LinExpr> = (0..=m).map(|_| LinExpr::zero()).collect();
    for l in lines {
        let w = clean(&l);
        if w.is_empty() {
            continue;
        }
        if w.len() != 5 {
            return Err(Error::Parse(format!("bad entry line '{l}'")));
        }
        let parse_u = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::Parse(format!("bad index '{s}'")))
        };
        let mat = parse_u(&w[0])?;
        let blk = parse_u(&w[1])?;
        let (i, j) = {
            let a = parse_u(&w[2])?;
            let b = parse_u(&w[3])?;
            (a.min(b), a.max(b))
        };
        let val: f64 = w[4]
            .parse()
            .map_err(|_| Error::Parse(format!("bad value '{}'", w[4])))?;
        if mat > m {
            return Err(Error::Parse(format!("matrix index {mat} exceeds {m}")));
        }
        if let Some(&(v, f)) = rev.get(&(blk, i, j)) {
            let sign = if mat == 0 { -1.0 } else { 1.0 };
            exprs[mat].add_term(v, sign * val / f);
        }
    }
    let mut exprs = exprs.into_iter();
    let mut obj = exprs.next().unwrap_or_default();
    obj.constant = obj_const;
    p.set_objective(obj);
    for (k, mut e) in exprs.enumerate() {
        e.constant = -rhs[k];
        let label = labels.remove(&(k + 1)).unwrap_or_else(|| format!("c{}", k + 1));
        p.add_equality(e, label);
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ConicProgram {
        let mut p = ConicProgram::new();
        let x = p.add_psd("X gram", 3);
        let q = p.add_symmetric("Q1", 2);
        let l = p.add_free("L", 2, 3);
        let t = p.add_nonneg("lambda", 2);
        let mut e = p.entry(x, 0, 0);
        e.add_term(p.var(x, 2, 1), 2.0);
        e.add_term(p.var(q, 0, 1), -0.3);
        e.add_term(p.var(l, 1, 2), 1.0 / 3.0);
        e.add_constant(-1.5);
        p.add_equality(e, "match 1*w0");
        let mut e2 = p.entry(t, 1, 0);
        e2.add_term(p.var(q, 1, 1), 1e-7);
        p.add_equality(e2, "second");
        let mut obj = p.entry(q, 0, 0);
        obj.add_term(p.var(q, 1, 1), 1.0);
        obj.add_term(p.var(x, 1, 0), 0.25);
        obj.add_constant(3.0);
        p.set_objective(obj);
        p.metadata.insert("epsilon".into(), "1e-6".into());
        p
    }

    #[test]
    fn empty_program_is_header_only() {
        let s = write_sdpa(&ConicProgram::new());
        let body: Vec<&str> = s.lines().filter(|l| !l.starts_with('*')).collect();
        assert_eq!(body[0], "0");
        assert_eq!(body[1], "1");
        assert_eq!(body[2], "-1");
        assert!(body.len() <= 4);
        let back = import_sdpa(&s).unwrap();
        assert_eq!(back.n_scalars(), 0);
        assert!(back.equalities.is_empty());
    }

    #[test]
    fn round_trip_is_exact() {
        let p = toy();
        let s = write_sdpa(&p);
        let q = import_sdpa(&s).unwrap();
        assert_eq!(p, q);
        assert_eq!(write_sdpa(&q), s);
    }

    #[test]
    fn deterministic_output() {
        assert_eq!(write_sdpa(&toy()), write_sdpa(&toy()));
    }

    #[test]
    fn off_diagonal_coefficients_are_halved() {
        let mut p = ConicProgram::new();
        let x = p.add_psd("X", 2);
        let mut e = LinExpr::zero();
        e.add_term(p.var(x, 1, 0), 4.0);
        e.add_constant(-1.0);
        p.add_equality(e, "c");
        let s = write_sdpa(&p);
        assert!(s.lines().any(|l| l == "1 1 1 2 2e0"), "{s}");
    }

    #[test]
    fn plain_sdpa_file_imports() {
        let text = "\"plain\n1\n2\n2 -1\n1.0\n0 1 1 1 -1.0\n1 1 1 1 1.0\n1 1 2 2 1.0\n1 2 1 1 1.0\n";
        let p = import_sdpa(text).unwrap();
        assert_eq!(p.blocks().len(), 2);
        assert_eq!(p.equalities.len(), 1);
        assert_eq!(p.equalities[0].expr.terms.len(), 3);
    }
}
