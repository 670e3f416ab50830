//! CSV output. Numbers are written in the shortest form that parses back to
//! the same `f64`; files are written to a temporary sibling and renamed.
//!
//! A field on a 2x2 grid of the unit square with value 1 is written as
//!
//! ```text
//! x,y,c1
//! 0,0,1
//! 1,0,1
//! 0,1,1
//! 1,1,1
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Field, SpatialGrid};
use crate::trn::IterationRecord;

/// Shortest round-trip decimal, switching to exponent form outside `[1e-5, 1e16)`.
pub fn format_float(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-5..1e16).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::Builder::new()
        .prefix(".acopt-")
        .tempfile_in(dir)
        .map_err(|e| Error::io(path, e))?;
    tmp.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn field_csv(field: &Field, grid: &SpatialGrid) -> Result<String> {
    field.check_grid(grid)?;
    let mut s = String::from("x,y");
    for i in 1..=field.ncomp() {
        write!(s, ",c{i}").expect("writing to a String cannot fail");
    }
    s.push('\n');
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let k = grid.index(i, j);
            let (x, y) = grid.position(i, j);
            s.push_str(&format_float(x));
            s.push(',');
            s.push_str(&format_float(y));
            for c in 0..field.ncomp() {
                s.push(',');
                s.push_str(&format_float(field.get(c, k)));
            }
            s.push('\n');
        }
    }
    Ok(s)
}

/// Field CSV with header `x,y,c1[,c2..]`, rows ordered with `y` outer.
pub fn write_field(field: &Field, grid: &SpatialGrid, path: &Path) -> Result<()> {
    write_atomic(path, &field_csv(field, grid)?)
}

/// Reads a field written by [`write_field`] on the same grid.
pub fn read_field(path: &Path, grid: &SpatialGrid) -> Result<Field> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_field(&text, grid)
}

pub fn parse_field(text: &str, grid: &SpatialGrid) -> Result<Field> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::config(1, "empty field file"))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "x" || cols[1] != "y" {
        return Err(Error::config(1, format!("bad field header `{header}`")));
    }
    let ncomp = cols.len() - 2;
    for (i, c) in cols[2..].iter().enumerate() {
        if *c != format!("c{}", i + 1) {
            return Err(Error::config(1, format!("bad column name `{c}`")));
        }
    }
    let mut field = Field::zeros(grid, ncomp);
    let mut node = vec![0.0; ncomp];
    let mut count = 0;
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        if count >= grid.nodes() {
            return Err(Error::config(lineno, "more rows than grid nodes"));
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.parse::<f64>().map_err(|_| Error::config(lineno, format!("bad number `{v}`"))))
            .collect::<Result<_>>()?;
        if vals.len() != ncomp + 2 {
            return Err(Error::config(lineno, format!("expected {} columns, got {}", ncomp + 2, vals.len())));
        }
        let (i, j) = (count % grid.nx, count / grid.nx);
        let (x, y) = grid.position(i, j);
        if vals[0] != x || vals[1] != y {
            return Err(Error::config(lineno, format!("node ({}, {}) does not match grid position ({x}, {y})", vals[0], vals[1])));
        }
        node.copy_from_slice(&vals[2..]);
        field.set_node(grid.index(i, j), &node);
        count += 1;
    }
    if count != grid.nodes() {
        return Err(Error::config(count + 1, format!("expected {} rows, got {count}", grid.nodes())));
    }
    Ok(field)
}

pub const HISTORY_HEADER: &str = "iter,j,grad_norm,delta,cg_iters,status,forward_solves";

pub fn history_csv(history: &[IterationRecord]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in history {
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.iter,
            format_float(r.j),
            format_float(r.grad_norm),
            format_float(r.delta),
            r.cg_iters,
            r.status,
            r.forward_solves
        )
        .expect("writing to a String cannot fail");
    }
    s
}

/// History CSV `iter,j,grad_norm,delta,cg_iters,status,forward_solves`.
pub fn write_history(history: &[IterationRecord], path: &Path) -> Result<()> {
    write_atomic(path, &history_csv(history))
}

/// Generic numeric table with a header row.
pub fn table_csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trn::{RecordStatus, StepStatus};
    use proptest::prelude::*;

    #[test]
    fn constant_two_by_two_field_text() {
        let g = SpatialGrid::square(0.0, 1.0, 2).unwrap();
        let f = Field::constant(&g, 1, 1.0);
        assert_eq!(field_csv(&f, &g).unwrap(), "x,y,c1\n0,0,1\n1,0,1\n0,1,1\n1,1,1\n");
    }

    #[test]
    fn float_format_examples() {
        assert_eq!(format_float(0.0), "0");
        assert_eq!(format_float(0.1), "0.1");
        assert_eq!(format_float(-2.5), "-2.5");
        assert_eq!(format_float(1e-7), "1e-7");
        assert_eq!(format_float(1.5e20), "1.5e20");
        assert_eq!(format_float(f64::MIN_POSITIVE), "2.2250738585072014e-308");
    }

    #[test]
    fn field_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let g = SpatialGrid::new(-1.0, 1.0, 0.0, 0.7, 7, 5).unwrap();
        let f = Field::from_fn_vector(&g, 3, |x, y, out| {
            out[0] = (x * 13.7).sin() / 3.0;
            out[1] = y.exp() * 1e-9;
            out[2] = 1.0 / (1.0 + x * x + y) * 1e12;
        });
        let path = dir.path().join("f.csv");
        write_field(&f, &g, &path).unwrap();
        let back = read_field(&path, &g).unwrap();
        assert!(f.data().iter().zip(back.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        // no temporary files left behind
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn read_rejects_wrong_grid() {
        let g = SpatialGrid::square(0.0, 1.0, 3).unwrap();
        let h = SpatialGrid::square(0.0, 2.0, 3).unwrap();
        let text = field_csv(&Field::zeros(&g, 1), &g).unwrap();
        assert!(parse_field(&text, &h).is_err());
        assert!(parse_field("x,y,c1\n0,0,1\n", &g).is_err());
        assert!(parse_field("x,y,q\n", &g).is_err());
    }

    #[test]
    fn history_has_one_line_per_record() {
        let rec = |iter, status| IterationRecord {
            iter,
            j: 0.5,
            grad_norm: 1e-9,
            delta: 1.0,
            cg_iters: 3,
            status,
            forward_solves: 7,
        };
        let h = vec![
            rec(
                0,
                RecordStatus::Step {
                    status: StepStatus::Interior,
                    accepted: true,
                },
            ),
            rec(1, RecordStatus::Converged),
        ];
        let text = history_csv(&h);
        assert_eq!(text.lines().count(), 3);
        assert_eq!(text.lines().next().unwrap(), HISTORY_HEADER);
        assert_eq!(text.lines().nth(1).unwrap(), "0,0.5,1e-9,1,3,interior,7");
    }

    proptest! {
        #[test]
        fn float_format_round_trips(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            let back: f64 = format_float(x).parse().unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }
}
