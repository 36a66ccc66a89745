//! Labelled point sets as CSV: header `label,x_1,..,x_d`, one row per
//! point, values in shortest round-trip decimal form.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::models::{Condition, GmmSpec};
use crate::rng::{seeded, Stream};

pub fn header(dim: usize) -> String {
    let mut h = String::from("label");
    for j in 1..=dim {
        h.push_str(&format!(",x_{j}"));
    }
    h
}

pub fn write_points<W: Write>(x: &Matrix, labels: &[Condition], mut w: W) -> std::io::Result<()> {
    assert_eq!(x.rows(), labels.len(), "one label per row");
    writeln!(w, "{}", header(x.cols()))?;
    for (row, label) in x.iter_rows().zip(labels) {
        write!(w, "{}", label.code())?;
        for v in row {
            write!(w, ",{v:?}")?;
        }
        writeln!(w)?;
    }
    w.flush()
}

pub fn save_points(path: &Path, x: &Matrix, labels: &[Condition]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_points(x, labels, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn parse_points(text: &str) -> Result<(Matrix, Vec<Condition>)> {
    let mut lines = text.lines().enumerate();
    let (_, head) = lines
        .next()
        .ok_or_else(|| Error::Csv("missing header".into()))?;
    let cols: Vec<&str> = head.split(',').map(str::trim).collect();
    if cols.first() != Some(&"label") || cols.len() < 2 {
        return Err(Error::Csv(format!("bad header `{head}`")));
    }
    let dim = cols.len() - 1;
    if head.trim() != header(dim) {
        return Err(Error::Csv(format!("bad header `{head}`")));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != dim + 1 {
            return Err(Error::Csv(format!(
                "line {}: expected {} fields, got {}",
                i + 1,
                dim + 1,
                fields.len()
            )));
        }
        let code: i64 = fields[0]
            .parse()
            .map_err(|_| Error::Csv(format!("line {}: bad label `{}`", i + 1, fields[0])))?;
        labels.push(Condition::from_code(code));
        for f in &fields[1..] {
            data.push(
                f.parse::<f64>()
                    .map_err(|_| Error::Csv(format!("line {}: bad number `{f}`", i + 1)))?,
            );
        }
    }
    let n = labels.len();
    Ok((Matrix::from_vec(n, dim, data)?, labels))
}

/// Reads a file written by [`save_points`].
pub fn ingest(path: &Path) -> Result<(Matrix, Vec<Condition>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_points(&text)
}

/// `n` draws from `spec`, deterministic in `seed`.
pub fn generate(spec: &GmmSpec, n: usize, seed: u64) -> (Matrix, Vec<Condition>) {
    let mut rng = seeded(seed, Stream::Data);
    spec.sample_batch(n, &mut rng)
}

pub fn gen_data(spec: &GmmSpec, n: usize, seed: u64, path: &Path) -> Result<()> {
    let (x, labels) = generate(spec, n, seed);
    save_points(path, &x, &labels)
}
