//! Static SVG plots with their numbers in companion CSV tables.
//!
//! Every data mark carries its values as `data-*` attributes, formatted with
//! the same [`num`] function used for the CSV cells, so a plot can be checked
//! against its table by string comparison. Axes carry names only; no numbers
//! appear in a plot outside those attributes and category labels taken from
//! the table.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use affect_geometry::neuro::{voxel_coords, VoxelValues};
use affect_geometry::spose::ReproducibilityReport;
use affect_geometry::stats::{mean, sample_sd};
use affect_geometry::{Error, Result};

use crate::files::create;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;

/// Canonical text form of a number in tables and plot attributes.
pub fn num(v: f64) -> String {
    v.to_string()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(create(path)?);
        let err = |e: csv::Error| Error::Schema(e.to_string());
        w.write_record(&self.header).map_err(err)?;
        for r in &self.rows {
            w.write_record(r).map_err(err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Canvas {
    body: String,
}

impl Canvas {
    fn new(title: &str, xlabel: &str, ylabel: &str) -> Self {
        let mut body = String::new();
        let _ = write!(
            body,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>
<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>
"#,
            W / 2.0,
            esc(title),
            H - PAD,
            W - PAD,
            H - PAD,
            H - PAD,
            W / 2.0,
            H - 12.0,
            esc(xlabel),
            H / 2.0,
            H / 2.0,
            esc(ylabel),
        );
        Self { body }
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

/// Linear map of `[lo, hi]` onto the plot area.
#[derive(Clone, Copy)]
struct Scale {
    lo: f64,
    hi: f64,
    from: f64,
    to: f64,
}

impl Scale {
    fn new(values: impl IntoIterator<Item = f64>, from: f64, to: f64) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.into_iter().filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            (lo, hi) = (lo - 0.5, hi + 0.5);
        }
        let margin = (hi - lo) * 0.05;
        Self { lo: lo - margin, hi: hi + margin, from, to }
    }

    fn at(&self, v: f64) -> f64 {
        self.from + (v - self.lo) / (self.hi - self.lo) * (self.to - self.from)
    }
}

fn category_x(i: usize, n: usize) -> f64 {
    PAD + (i as f64 + 0.5) * (W - 2.0 * PAD) / n as f64
}

/// Per-dimension scores of every run, one dot each.
pub fn repro_dot_plot(report: &ReproducibilityReport) -> (String, Table) {
    let mut table = Table::new(&["dimension", "run", "score"]);
    let d = report.scores.first().map_or(0, Vec::len);
    let ys = report.scores.iter().flatten().flatten().copied();
    let y = Scale::new(ys, H - PAD, PAD);
    let mut c = Canvas::new("Reproducibility by dimension", "dimension", "matched Fisher-z score");
    for k in 0..d {
        let label = (k + 1).to_string();
        let _ = writeln!(
            c.body,
            r#"<text x="{}" y="{}" text-anchor="middle">{label}</text>"#,
            category_x(k, d),
            H - PAD + 16.0
        );
        for (r, run) in report.scores.iter().enumerate() {
            let score = run[k];
            table.push(vec![label.clone(), r.to_string(), score.map(num).unwrap_or_default()]);
            if let Some(s) = score {
                let jitter = (r as f64 - (report.scores.len() as f64 - 1.0) / 2.0) * 4.0;
                let _ = writeln!(
                    c.body,
                    r#"<circle class="point" cx="{:.2}" cy="{:.2}" r="3" fill="steelblue" data-dimension="{label}" data-run="{r}" data-score="{}"/>"#,
                    category_x(k, d) + jitter,
                    y.at(s),
                    num(s)
                );
            }
        }
    }
    (c.finish(), table)
}

/// Bars at the group mean, standard-deviation error bars and one dot per
/// run. Returns the plot, the per-run table and the summary table.
pub fn bar_chart(title: &str, ylabel: &str, groups: &[(String, Vec<f64>)]) -> Result<(String, Table, Table)> {
    if groups.is_empty() || groups.iter().any(|(_, v)| v.is_empty()) {
        return Err(Error::InvalidArgument("bar chart needs at least one value per group".into()));
    }
    let mut runs = Table::new(&["group", "run", "value"]);
    let mut summary = Table::new(&["group", "n", "mean", "sd"]);
    let stats: Vec<(f64, f64)> = groups
        .iter()
        .map(|(_, v)| (mean(v), if v.len() > 1 { sample_sd(v) } else { 0.0 }))
        .collect();
    let extent = groups
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .chain(stats.iter().flat_map(|&(m, s)| [m + s, m - s]))
        .chain([0.0]);
    let y = Scale::new(extent, H - PAD, PAD);
    let n = groups.len();
    let bw = (W - 2.0 * PAD) / n as f64 * 0.6;
    let mut c = Canvas::new(title, "", ylabel);
    for (i, ((name, values), &(m, sd))) in groups.iter().zip(&stats).enumerate() {
        let cx = category_x(i, n);
        let (top, base) = (y.at(m).min(y.at(0.0)), y.at(m).max(y.at(0.0)));
        let _ = writeln!(
            c.body,
            r#"<rect class="bar" x="{:.2}" y="{top:.2}" width="{bw:.2}" height="{:.2}" fill="lightgray" data-group="{}" data-mean="{}"/>"#,
            cx - bw / 2.0,
            base - top,
            esc(name),
            num(m)
        );
        let _ = writeln!(
            c.body,
            r#"<line class="errorbar" x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black" data-group="{}" data-sd="{}"/>"#,
            y.at(m - sd),
            y.at(m + sd),
            esc(name),
            num(sd)
        );
        let _ = writeln!(
            c.body,
            r#"<text x="{cx:.2}" y="{}" text-anchor="middle">{}</text>"#,
            H - PAD + 16.0,
            esc(name)
        );
        for (r, &v) in values.iter().enumerate() {
            let jitter = (r as f64 - (values.len() as f64 - 1.0) / 2.0) * 6.0;
            let _ = writeln!(
                c.body,
                r#"<circle class="point" cx="{:.2}" cy="{:.2}" r="3" fill="black" data-group="{}" data-run="{r}" data-value="{}"/>"#,
                cx + jitter,
                y.at(v),
                esc(name),
                num(v)
            );
            runs.push(vec![name.clone(), r.to_string(), num(v)]);
        }
        summary.push(vec![name.clone(), values.len().to_string(), num(m), num(sd)]);
    }
    Ok((c.finish(), runs, summary))
}

/// A line through `points`, with an optional horizontal band `(low, high)`
/// shaded behind it.
pub fn line_plot(
    title: &str,
    xlabel: &str,
    ylabel: &str,
    points: &[(f64, f64)],
    band: Option<(f64, f64)>,
) -> String {
    let x = Scale::new(points.iter().map(|p| p.0), PAD, W - PAD);
    let ys = points.iter().map(|p| p.1).chain(band.into_iter().flat_map(|(a, b)| [a, b]));
    let y = Scale::new(ys, H - PAD, PAD);
    let mut c = Canvas::new(title, xlabel, ylabel);
    if let Some((lo, hi)) = band {
        let _ = writeln!(
            c.body,
            r#"<rect class="band" x="{PAD}" y="{:.2}" width="{}" height="{:.2}" fill="orange" fill-opacity="0.25" data-low="{}" data-high="{}"/>"#,
            y.at(hi),
            W - 2.0 * PAD,
            y.at(lo) - y.at(hi),
            num(lo),
            num(hi)
        );
    }
    let path: Vec<String> = points.iter().map(|&(px, py)| format!("{:.2},{:.2}", x.at(px), y.at(py))).collect();
    let _ = writeln!(c.body, r#"<polyline points="{}" fill="none" stroke="steelblue"/>"#, path.join(" "));
    for &(px, py) in points {
        let _ = writeln!(
            c.body,
            r#"<circle class="point" cx="{:.2}" cy="{:.2}" r="3" fill="steelblue" data-x="{}" data-y="{}"/>"#,
            x.at(px),
            y.at(py),
            num(px),
            num(py)
        );
    }
    c.finish()
}

fn heat_color(v: f64, max_abs: f64) -> String {
    let t = if max_abs > 0.0 { (v / max_abs).clamp(-1.0, 1.0) } else { 0.0 };
    let fade = |t: f64| (255.0 * (1.0 - t.abs())).round() as u8;
    if t >= 0.0 {
        format!("rgb(255,{},{})", fade(t), fade(t))
    } else {
        format!("rgb({},{},255)", fade(t), fade(t))
    }
}

/// One heatmap per z plane; undefined voxels are drawn gray.
pub fn slice_heatmaps(map: &VoxelValues) -> Vec<String> {
    let [nx, ny, nz] = map.shape;
    let max_abs = map.values.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let cell = ((W - 2.0 * PAD) / nx as f64).min((H - 2.0 * PAD) / ny as f64);
    let mut slices: Vec<Canvas> = (0..nz)
        .map(|z| Canvas::new(&format!("z = {z}"), "x", "y"))
        .collect();
    for (i, v) in map.values.iter().enumerate() {
        let [x, y, z] = voxel_coords(map.shape, i);
        let fill = v.map_or("rgb(200,200,200)".to_string(), |v| heat_color(v, max_abs));
        let _ = writeln!(
            slices[z].body,
            r#"<rect class="voxel" x="{:.2}" y="{:.2}" width="{cell:.2}" height="{cell:.2}" fill="{fill}" data-x="{x}" data-y="{y}" data-z="{z}" data-value="{}"/>"#,
            PAD + x as f64 * cell,
            H - PAD - (y + 1) as f64 * cell,
            v.map(num).unwrap_or_default()
        );
    }
    slices.into_iter().map(Canvas::finish).collect()
}

pub fn write_svg(path: &Path, svg: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(svg.as_bytes())?;
    w.flush()?;
    Ok(())
}

/// Writes `<stem>.svg` and `<stem>.csv` into `dir`, returning both paths.
pub fn emit(dir: &Path, stem: &str, svg: &str, table: &Table) -> Result<Vec<PathBuf>> {
    let (s, t) = (dir.join(format!("{stem}.svg")), dir.join(format!("{stem}.csv")));
    write_svg(&s, svg)?;
    table.write_csv(&t)?;
    Ok(vec![s, t])
}
