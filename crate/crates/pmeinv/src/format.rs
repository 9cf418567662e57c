//! Plain-text field files and CSV exports.
//!
//! A field file is a short `key value…` header followed by one value per
//! line in row-major node order (first axis slowest). Values are written with
//! 17 significant digits, which round-trips every `f64`.
//!
//! ```text
//! pmeinv scalar-field
//! dim 2
//! counts 3 3
//! extents 1 1
//! values 9
//! 0.0000000000000000e0
//! ...
//! ```
//!
//! Time fields add a `times N` block before the values and then store the
//! frames one after another. Boundary fields store one value per boundary
//! node in the grid's boundary order.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use pmeinv_core::{BoundaryField, Grid, ScalarField, TimeField};

use crate::error::AppError;

const MAGIC: &str = "pmeinv";

/// Formats a float with 17 significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn header(kind: &str, grid: &Grid) -> String {
    let mut s = format!("{MAGIC} {kind}\ndim {}\ncounts", grid.dim());
    for c in grid.counts() {
        let _ = write!(s, " {c}");
    }
    s.push_str("\nextents");
    for e in grid.extents() {
        let _ = write!(s, " {}", num(*e));
    }
    s.push('\n');
    s
}

pub fn grid_to_string(grid: &Grid) -> String {
    header("grid", grid)
}

pub fn scalar_to_string(f: &ScalarField) -> String {
    let mut s = header("scalar-field", f.grid());
    push_values(&mut s, f.values());
    s
}

pub fn boundary_to_string(f: &BoundaryField) -> String {
    let mut s = header("boundary-field", f.grid());
    push_values(&mut s, f.values());
    s
}

pub fn time_to_string(f: &TimeField) -> String {
    let mut s = header("time-field", f.grid());
    let _ = writeln!(s, "times {}", f.len());
    for t in f.stamps() {
        s.push_str(&num(*t));
        s.push('\n');
    }
    let all: Vec<f64> = f.frames().iter().flatten().copied().collect();
    push_values(&mut s, &all);
    s
}

fn push_values(s: &mut String, values: &[f64]) {
    let _ = writeln!(s, "values {}", values.len());
    for v in values {
        s.push_str(&num(*v));
        s.push('\n');
    }
}

struct Reader<R> {
    lines: std::io::Lines<BufReader<R>>,
    line: usize,
}

impl<R: Read> Reader<R> {
    fn new(r: R) -> Self {
        Reader {
            lines: BufReader::new(r).lines(),
            line: 0,
        }
    }

    fn err(&self, msg: impl Into<String>) -> AppError {
        AppError::Format {
            line: self.line,
            message: msg.into(),
        }
    }

    fn next_line(&mut self) -> Result<String, AppError> {
        loop {
            self.line += 1;
            match self.lines.next() {
                None => return Err(self.err("unexpected end of file")),
                Some(Err(e)) => return Err(AppError::Io(e.to_string())),
                Some(Ok(l)) => {
                    let t = l.trim();
                    if !t.is_empty() && !t.starts_with('#') {
                        return Ok(t.to_string());
                    }
                }
            }
        }
    }

    fn keyed(&mut self, key: &str) -> Result<Vec<String>, AppError> {
        let l = self.next_line()?;
        let mut parts = l.split_whitespace();
        match parts.next() {
            Some(k) if k == key => Ok(parts.map(str::to_string).collect()),
            _ => Err(self.err(format!("expected `{key}`, found `{l}`"))),
        }
    }

    fn parse<T: std::str::FromStr>(&self, s: &str) -> Result<T, AppError> {
        s.parse().map_err(|_| self.err(format!("cannot parse `{s}`")))
    }

    fn grid(&mut self, kind: &str) -> Result<Grid, AppError> {
        let l = self.next_line()?;
        if l != format!("{MAGIC} {kind}") {
            return Err(self.err(format!("expected `{MAGIC} {kind}` header, found `{l}`")));
        }
        let d = self.keyed("dim")?;
        let dim: usize = self.parse(d.first().ok_or_else(|| self.err("missing dimension"))?)?;
        let counts = self
            .keyed("counts")?
            .iter()
            .map(|c| self.parse(c))
            .collect::<Result<Vec<usize>, _>>()?;
        let extents = self
            .keyed("extents")?
            .iter()
            .map(|c| self.parse(c))
            .collect::<Result<Vec<f64>, _>>()?;
        Grid::new(dim, &extents, &counts).map_err(|e| self.err(e.to_string()))
    }

    fn values(&mut self, expected: usize) -> Result<Vec<f64>, AppError> {
        let n = self.keyed("values")?;
        let n: usize = self.parse(n.first().ok_or_else(|| self.err("missing value count"))?)?;
        if n != expected {
            return Err(self.err(format!("expected {expected} values, header declares {n}")));
        }
        (0..n).map(|_| self.next_line().and_then(|l| self.parse(&l))).collect()
    }
}

pub fn read_grid(r: impl Read) -> Result<Grid, AppError> {
    Reader::new(r).grid("grid")
}

pub fn read_scalar(r: impl Read) -> Result<ScalarField, AppError> {
    let mut rd = Reader::new(r);
    let g = Arc::new(rd.grid("scalar-field")?);
    let v = rd.values(g.len())?;
    ScalarField::new(g, v).map_err(|e| rd.err(e.to_string()))
}

pub fn read_boundary(r: impl Read) -> Result<BoundaryField, AppError> {
    let mut rd = Reader::new(r);
    let g = Arc::new(rd.grid("boundary-field")?);
    let v = rd.values(g.boundary_len())?;
    BoundaryField::new(g, v).map_err(|e| rd.err(e.to_string()))
}

pub fn read_time(r: impl Read) -> Result<TimeField, AppError> {
    let mut rd = Reader::new(r);
    let g = Arc::new(rd.grid("time-field")?);
    let t = rd.keyed("times")?;
    let nt: usize = rd.parse(t.first().ok_or_else(|| rd.err("missing stamp count"))?)?;
    let stamps = (0..nt)
        .map(|_| rd.next_line().and_then(|l| rd.parse(&l)))
        .collect::<Result<Vec<f64>, _>>()?;
    let all = rd.values(nt * g.len())?;
    let frames = all.chunks(g.len()).map(<[f64]>::to_vec).collect();
    TimeField::new(g, stamps, frames).map_err(|e| rd.err(e.to_string()))
}

pub fn read_scalar_file(path: &Path) -> Result<ScalarField, AppError> {
    let f = std::fs::File::open(path).map_err(|e| AppError::Io(format!("{}: {e}", path.display())))?;
    read_scalar(f)
}

fn coord_names(dim: usize) -> Vec<String> {
    (1..=dim).map(|a| format!("x{a}")).collect()
}

/// CSV with coordinate columns followed by one column per field.
pub fn fields_csv(names: &[&str], fields: &[&ScalarField]) -> String {
    let grid = fields[0].grid();
    let dim = grid.dim();
    let mut s = coord_names(dim).join(",");
    for n in names {
        s.push(',');
        s.push_str(n);
    }
    s.push('\n');
    for i in 0..grid.len() {
        let p = grid.point(i);
        let mut cols: Vec<String> = p[..dim].iter().map(|x| num(*x)).collect();
        cols.extend(fields.iter().map(|f| num(f.values()[i])));
        s.push_str(&cols.join(","));
        s.push('\n');
    }
    s
}

/// CSV of one boundary field: slot, node, coordinates, value.
pub fn boundary_csv(f: &BoundaryField) -> String {
    let grid = f.grid();
    let dim = grid.dim();
    let mut s = format!("slot,node,{},value\n", coord_names(dim).join(","));
    for (b, (bn, v)) in grid.boundary_nodes().iter().zip(f.values()).enumerate() {
        let p = grid.point(bn.node);
        let coords: Vec<String> = p[..dim].iter().map(|x| num(*x)).collect();
        let _ = writeln!(s, "{b},{},{},{}", bn.node, coords.join(","), num(*v));
    }
    s
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), AppError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| AppError::Io(format!("{}: {e}", dir.display())))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| AppError::Io(format!("{}: {e}", path.display())))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| AppError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Arc<Grid> {
        Arc::new(Grid::new(2, &[1.0, 0.3], &[4, 3]).unwrap())
    }

    #[test]
    fn grid_round_trip() {
        let g = grid();
        let back = read_grid(grid_to_string(&g).as_bytes()).unwrap();
        assert_eq!(*g, back);
    }

    #[test]
    fn scalar_round_trip_is_bit_exact() {
        let f = ScalarField::from_fn(grid(), |x| (x[0] * 1e-7 + x[1]).sin() / 3.0);
        let back = read_scalar(scalar_to_string(&f).as_bytes()).unwrap();
        assert_eq!(f.values(), back.values());
    }

    #[test]
    fn time_and_boundary_round_trip() {
        let g = grid();
        let mut t = TimeField::start(ScalarField::zeros(g.clone()));
        t.push(0.1, vec![1.0 / 3.0; g.len()]).unwrap();
        let back = read_time(time_to_string(&t).as_bytes()).unwrap();
        assert_eq!(back.stamps(), t.stamps());
        assert_eq!(back.frames(), t.frames());
        let b = BoundaryField::from_fn(g, |x| x[0] - std::f64::consts::PI * x[1]);
        let back = read_boundary(boundary_to_string(&b).as_bytes()).unwrap();
        assert_eq!(back.values(), b.values());
    }

    #[test]
    fn malformed_input_names_the_line() {
        let g = grid();
        let s = scalar_to_string(&ScalarField::zeros(g)).replace("values 12", "values 11");
        match read_scalar(s.as_bytes()) {
            Err(AppError::Format { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_has_coordinate_columns() {
        let f = ScalarField::constant(grid(), 2.0);
        let csv = fields_csv(&["eps"], &[&f]);
        assert!(csv.starts_with("x1,x2,eps\n"));
        assert_eq!(csv.lines().count(), 13);
    }
}
