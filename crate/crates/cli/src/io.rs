//! Text formats for meshes, solutions and iteration logs. Numbers are
//! written with 17 significant digits so every file reads back exactly.

use std::fmt::Write as _;

use hps::adaptivity::IterationLog;
use hps::field::{LeafValues, SolutionField};
use hps::meshtree::LeafRecord;
use hps::{c64, HpsError, Result, Scalar};

pub const MESH_HEADER: &str = "# id, x0, x1, y0, y1, level";
pub const ITERATIONS_HEADER: &str = "# iter, n_leaves, n_marked, S_div, E_rel";

pub fn write_mesh(records: &[LeafRecord]) -> String {
    let mut s = format!("{MESH_HEADER}\n");
    for r in records {
        let _ = writeln!(
            s,
            "{}, {:.17e}, {:.17e}, {:.17e}, {:.17e}, {}",
            r.id, r.x0, r.x1, r.y0, r.y1, r.level
        );
    }
    s
}

/// One collocation point of an exported solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolutionRecord {
    pub leaf: usize,
    pub x: f64,
    pub y: f64,
    pub value: c64,
}

/// Export the values at every discretization point (corners excluded),
/// leaf by leaf in increasing id, points in tensor order.
pub fn solution_records<T: Scalar>(field: &SolutionField<T>) -> Result<Vec<SolutionRecord>> {
    let mut out = Vec::new();
    for (&id, leaf) in &field.leaves {
        let n = leaf.n_c;
        let xs = hps::spectral1d::cheb_nodes(n, leaf.rect.x0, leaf.rect.x1)?.points;
        let ys = hps::spectral1d::cheb_nodes(n, leaf.rect.y0, leaf.rect.y1)?.points;
        for k in LeafValues::<T>::discretization_indices(n) {
            out.push(SolutionRecord {
                leaf: id,
                x: xs[k / n],
                y: ys[k % n],
                value: leaf.values[k].to_c64(),
            });
        }
    }
    Ok(out)
}

pub fn write_solution(records: &[SolutionRecord], complex: bool) -> String {
    let mut s = String::from(if complex {
        "# leaf, x, y, re, im\n"
    } else {
        "# leaf, x, y, value\n"
    });
    for r in records {
        let _ = write!(s, "{}, {:.17e}, {:.17e}, {:.17e}", r.leaf, r.x, r.y, r.value.re);
        if complex {
            let _ = write!(s, ", {:.17e}", r.value.im);
        }
        s.push('\n');
    }
    s
}

fn fields(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

fn parse_f64(what: &str, lineno: usize, s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| HpsError::Parse(format!("{what} line {lineno}: bad number `{s}`")))
}

fn parse_usize(what: &str, lineno: usize, s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| HpsError::Parse(format!("{what} line {lineno}: bad integer `{s}`")))
}

/// Read a solution file; returns the records and whether it is complex.
pub fn read_solution(text: &str) -> Result<(Vec<SolutionRecord>, bool)> {
    let mut lines = text.lines().enumerate();
    let complex = match lines.next() {
        Some((_, "# leaf, x, y, re, im")) => true,
        Some((_, "# leaf, x, y, value")) => false,
        _ => return Err(HpsError::Parse("solution: missing header".into())),
    };
    let width = if complex { 5 } else { 4 };
    let mut out = Vec::new();
    for (k, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f = fields(line);
        if f.len() != width {
            return Err(HpsError::Parse(format!(
                "solution line {}: expected {width} fields, got {}",
                k + 1,
                f.len()
            )));
        }
        let re = parse_f64("solution", k + 1, f[3])?;
        let im = if complex { parse_f64("solution", k + 1, f[4])? } else { 0.0 };
        out.push(SolutionRecord {
            leaf: parse_usize("solution", k + 1, f[0])?,
            x: parse_f64("solution", k + 1, f[1])?,
            y: parse_f64("solution", k + 1, f[2])?,
            value: c64::new(re, im),
        });
    }
    Ok((out, complex))
}

pub fn write_iterations(log: &[IterationLog]) -> String {
    let mut s = format!("{ITERATIONS_HEADER}\n");
    for l in log {
        s.push_str(&l.to_line());
        s.push('\n');
    }
    s
}

pub fn read_iterations(text: &str) -> Result<Vec<IterationLog>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f = fields(line);
        if f.len() != 5 {
            return Err(HpsError::Parse(format!("iterations line {}: expected 5 fields", k + 1)));
        }
        out.push(IterationLog {
            iteration: parse_usize("iterations", k + 1, f[0])?,
            n_leaves: parse_usize("iterations", k + 1, f[1])?,
            n_marked: parse_usize("iterations", k + 1, f[2])?,
            s_div: parse_f64("iterations", k + 1, f[3])?,
            e_rel: if f[4] == "-" {
                None
            } else {
                Some(parse_f64("iterations", k + 1, f[4])?)
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use hps::meshtree::{parse_leaf_records, MeshTree, Rect};

    #[test]
    fn mesh_round_trip() {
        let mut m = MeshTree::uniform(Rect::new(0.0, 1.0, -1.0, 0.3).unwrap(), 8, 1).unwrap();
        m.split_leaf(m.leaves()[2]).unwrap();
        let text = m.export_leaves();
        let recs = parse_leaf_records(&text).unwrap();
        assert_eq!(recs.len(), m.num_leaves());
        assert_eq!(write_mesh(&recs), text);
    }

    #[test]
    fn solution_round_trip() {
        let m = MeshTree::uniform(Rect::new(0.0, 1.0, 0.0, 1.0).unwrap(), 6, 1).unwrap();
        let f = SolutionField::from_fn(&m, |x, y| c64::new((x * 7.1).sin(), y / 3.0)).unwrap();
        let recs = solution_records(&f).unwrap();
        assert_eq!(recs.len(), 4 * 32);
        let text = write_solution(&recs, true);
        let (back, complex) = read_solution(&text).unwrap();
        assert!(complex);
        assert_eq!(back, recs);
        assert_eq!(write_solution(&back, true), text);
        let real = SolutionField::from_fn(&m, |x, y| x - y / 7.0).unwrap();
        let recs = solution_records(&real).unwrap();
        let text = write_solution(&recs, false);
        let (back, complex) = read_solution(&text).unwrap();
        assert!(!complex);
        assert_eq!(back, recs);
        assert!(read_solution("nonsense\n").is_err());
    }

    #[test]
    fn iterations_round_trip() {
        let log = vec![
            IterationLog { iteration: 1, n_leaves: 10, n_marked: 3, s_div: 1.0 / 3.0, e_rel: Some(2.0f64.sqrt() * 1e-7) },
            IterationLog { iteration: 2, n_leaves: 19, n_marked: 0, s_div: 0.0, e_rel: None },
        ];
        let text = write_iterations(&log);
        assert_eq!(read_iterations(&text).unwrap(), log);
    }
}
