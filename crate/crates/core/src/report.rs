//! CSV and SVG output of experiment tables.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "t,quantum,bohm_mean,bohm_stderr,n_effective,n_failed";

/// One grid point: the quantum prediction and, for Monte Carlo runs, the
/// Bohmian ensemble statistics (NaN and zero counts otherwise).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row {
    pub t: f64,
    pub quantum: f64,
    pub bohm_mean: f64,
    pub bohm_stderr: f64,
    pub n_effective: usize,
    pub n_failed: usize,
}

impl Row {
    pub fn analytic(t: f64, quantum: f64) -> Row {
        Row { t, quantum, bohm_mean: f64::NAN, bohm_stderr: f64::NAN, n_effective: 0, n_failed: 0 }
    }

    pub fn has_ensemble(&self) -> bool {
        self.n_effective > 0
    }

    /// `|bohm_mean - quantum| / bohm_stderr`.
    pub fn z_score(&self) -> f64 {
        (self.bohm_mean - self.quantum).abs() / self.bohm_stderr
    }
}

// shortest representation that parses back to the same bits
fn sci(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x:e}")
    }
}

pub fn write_csv<W: Write>(rows: &[Row], mut out: W) -> std::io::Result<()> {
    let mut text = String::with_capacity(64 * (rows.len() + 1));
    text.push_str(CSV_HEADER);
    text.push('\n');
    for r in rows {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{}",
            sci(r.t),
            sci(r.quantum),
            sci(r.bohm_mean),
            sci(r.bohm_stderr),
            r.n_effective,
            r.n_failed
        );
    }
    out.write_all(text.as_bytes())
}

pub fn emit_csv(rows: &[Row], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(rows, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn parse_csv(text: &str) -> Result<Vec<Row>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => return Err(Error::Parse(format!("unexpected CSV header {other:?}"))),
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(Error::Parse(format!("line {}: expected 6 fields", i + 2)));
            }
            let f = |k: usize| {
                fields[k]
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {:?}: {e}", i + 2, fields[k])))
            };
            let u = |k: usize| {
                fields[k]
                    .parse::<usize>()
                    .map_err(|e| Error::Parse(format!("line {}: {:?}: {e}", i + 2, fields[k])))
            };
            Ok(Row {
                t: f(0)?,
                quantum: f(1)?,
                bohm_mean: f(2)?,
                bohm_stderr: f(3)?,
                n_effective: u(4)?,
                n_failed: u(5)?,
            })
        })
        .collect()
}

pub fn read_csv(path: &Path) -> Result<Vec<Row>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        text.push_str(&line.map_err(|e| Error::io(path, e))?);
        text.push('\n');
    }
    parse_csv(&text)
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const QUANTUM_COLOR: &str = "#1f77b4";
const BOHM_COLOR: &str = "#ff7f0e";

/// Two-curve line plot (quantum and ensemble mean) with a ±1 stderr band.
pub fn render_svg(rows: &[Row], title: &str) -> String {
    let mut pts: Vec<&Row> = rows.iter().filter(|r| r.t.is_finite()).collect();
    pts.sort_by(|a, b| a.t.total_cmp(&b.t));

    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in &pts {
        x0 = x0.min(r.t);
        x1 = x1.max(r.t);
        for y in [r.quantum, r.bohm_mean - r.bohm_stderr, r.bohm_mean + r.bohm_stderr] {
            if y.is_finite() {
                y0 = y0.min(y);
                y1 = y1.max(y);
            }
        }
    }
    if x1.partial_cmp(&x0) != Some(std::cmp::Ordering::Greater) {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1.partial_cmp(&y0) != Some(std::cmp::Ordering::Greater) {
        y0 = y0.min(0.0) - 0.5;
        y1 = y1.max(0.0) + 0.5;
    }
    let pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ =
        writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(title));

    // axes and ticks
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        svg,
        r#"<path d="M{left:.1},{top:.1} L{left:.1},{bottom:.1} L{right:.1},{bottom:.1}" stroke="black" fill="none"/>"#
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.3}</text>"#,
            sx(fx),
            bottom + 16.0,
            fx
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.3}</text>"#,
            left - 4.0,
            sy(fy) + 4.0,
            fy
        );
    }
    if y0 < 0.0 && y1 > 0.0 {
        let _ = writeln!(
            svg,
            r##"<line x1="{left:.1}" y1="{0:.1}" x2="{right:.1}" y2="{0:.1}" stroke="#bbbbbb" stroke-dasharray="4 3"/>"##,
            sy(0.0)
        );
    }

    let mc: Vec<&&Row> = pts.iter().filter(|r| r.has_ensemble() && r.bohm_mean.is_finite()).collect();
    if !mc.is_empty() {
        let mut band = String::new();
        for r in &mc {
            let _ = write!(band, "{:.2},{:.2} ", sx(r.t), sy(r.bohm_mean + r.bohm_stderr));
        }
        for r in mc.iter().rev() {
            let _ = write!(band, "{:.2},{:.2} ", sx(r.t), sy(r.bohm_mean - r.bohm_stderr));
        }
        let _ = writeln!(
            svg,
            r#"<polygon points="{}" fill="{BOHM_COLOR}" fill-opacity="0.25" stroke="none"/>"#,
            band.trim_end()
        );
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{BOHM_COLOR}" stroke-width="2"/>"#,
            polyline(&mc, |r| r.bohm_mean, &sx, &sy)
        );
    }
    let _ = writeln!(
        svg,
        r#"<polyline points="{}" fill="none" stroke="{QUANTUM_COLOR}" stroke-width="2"/>"#,
        polyline(&pts.iter().collect::<Vec<_>>(), |r| r.quantum, &sx, &sy)
    );

    let lx = right - 150.0;
    let _ = writeln!(
        svg,
        r#"<line x1="{lx}" y1="{0}" x2="{1}" y2="{0}" stroke="{QUANTUM_COLOR}" stroke-width="2"/>"#,
        top + 8.0,
        lx + 20.0
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{}">quantum</text>"#, lx + 26.0, top + 12.0);
    if !mc.is_empty() {
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{0}" x2="{1}" y2="{0}" stroke="{BOHM_COLOR}" stroke-width="2"/>"#,
            top + 26.0,
            lx + 20.0
        );
        let _ = writeln!(svg, r#"<text x="{}" y="{}">Bohmian ensemble</text>"#, lx + 26.0, top + 30.0);
    }
    svg.push_str("</svg>\n");
    svg
}

fn polyline(
    rows: &[&&Row],
    y: impl Fn(&Row) -> f64,
    sx: &impl Fn(f64) -> f64,
    sy: &impl Fn(f64) -> f64,
) -> String {
    rows.iter()
        .filter(|r| y(r).is_finite())
        .map(|r| format!("{:.2},{:.2}", sx(r.t), sy(y(r))))
        .collect::<Vec<_>>()
        .join(" ")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn emit_svg(rows: &[Row], title: &str, path: &Path) -> Result<()> {
    fs::write(path, render_svg(rows, title)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_rows() -> Vec<Row> {
        vec![
            Row {
                t: 0.0,
                quantum: -0.6115846529554865,
                bohm_mean: -0.6,
                bohm_stderr: 0.02,
                n_effective: 1000,
                n_failed: 0,
            },
            Row { t: 0.1, quantum: 0.1, bohm_mean: 0.12, bohm_stderr: 0.03, n_effective: 998, n_failed: 2 },
        ]
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_csv(&[Row::analytic(0.5, -1.25e-3)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "t,quantum,bohm_mean,bohm_stderr,n_effective,n_failed\n5e-1,-1.25e-3,NaN,NaN,0,0\n");
        assert!(!text.contains('\r'));
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(parse_csv("a,b\n").is_err());
        assert!(parse_csv(&format!("{CSV_HEADER}\n1,2,3\n")).is_err());
        assert!(parse_csv(&format!("{CSV_HEADER}\n1,2,3,4,x,0\n")).is_err());
    }

    #[test]
    fn file_round_trip_and_io_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        emit_csv(&sample_rows(), &path).unwrap();
        assert_eq!(read_csv(&path).unwrap(), sample_rows());
        let missing = dir.path().join("nope/out.csv");
        let err = emit_csv(&sample_rows(), &missing).unwrap_err();
        assert!(err.to_string().contains("nope"), "{err}");
    }

    #[test]
    fn svg_is_self_contained() {
        let svg = render_svg(&sample_rows(), "equal <times>");
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("polygon") && svg.contains(QUANTUM_COLOR) && svg.contains(BOHM_COLOR));
        assert!(svg.contains("&lt;times&gt;"));
        assert!(!svg.contains("href"));
        let analytic = render_svg(&[Row::analytic(0.0, 1.0), Row::analytic(1.0, -1.0)], "a");
        assert!(!analytic.contains("polygon"));
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_exact(
            t in proptest::num::f64::NORMAL | proptest::num::f64::ZERO,
            q in proptest::num::f64::ANY,
            n in 0usize..100_000,
        ) {
            let row = Row { t, quantum: q, bohm_mean: -q, bohm_stderr: t.abs(), n_effective: n, n_failed: n / 7 };
            let mut buf = Vec::new();
            write_csv(&[row], &mut buf).unwrap();
            let back = parse_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
            prop_assert_eq!(back.len(), 1);
            let b = back[0];
            prop_assert!(b.t.to_bits() == row.t.to_bits());
            prop_assert!(b.quantum.to_bits() == row.quantum.to_bits() || (q.is_nan() && b.quantum.is_nan()));
            prop_assert_eq!(b.n_effective, n);
        }
    }
}
