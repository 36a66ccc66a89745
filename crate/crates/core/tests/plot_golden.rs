use std::fs;
use std::path::PathBuf;

use trajdistill::toolkit::plot::{render_svg, PlotKind, Table};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

/// Set `STDLAB_BLESS=1` to rewrite the golden files.
fn golden(csv: &str, kind: PlotKind, x: &str, ys: &[&str], title: &str, svg: &str) {
    let table = Table::parse(&fs::read_to_string(data(csv)).unwrap()).unwrap();
    let out = render_svg(&table, kind, x, ys, title).unwrap();
    if std::env::var_os("STDLAB_BLESS").is_some() {
        fs::write(data(svg), &out).unwrap();
    }
    assert_eq!(out, fs::read_to_string(data(svg)).unwrap());
}

#[test]
fn scatter_matches_golden() {
    golden(
        "points.csv",
        PlotKind::Scatter,
        "x_1",
        &["x_2"],
        "points",
        "points.svg",
    );
}

#[test]
fn line_matches_golden() {
    golden(
        "curve.csv",
        PlotKind::Line,
        "iteration",
        &["l_std", "l_d"],
        "losses",
        "curve.svg",
    );
}
