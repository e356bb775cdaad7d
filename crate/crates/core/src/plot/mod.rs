//! Figures from a run directory: SVG, PNG and the CSV table each is drawn
//! from, written to `<run>/plots/`.

mod canvas;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use canvas::{padded_range, Anchor, Axes, Canvas, Color, PALETTE};

use crate::dataset::Attribute;
use crate::error::{Error, IoContext, Result};
use crate::evaluation::BiasReport;
use crate::instrumentation::{DistributionMap, FilterScatter, LayerVarianceTrace};
use crate::runner::{slug, ReportIndex, INDEX_FILE, REPORTS_DIR};

pub const PLOTS_DIR: &str = "plots";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Figure {
    RecoveryBars,
    MatchBars,
    VarianceCurves,
    PcaScatter,
    FilterScatter,
}

impl Figure {
    pub const ALL: [Figure; 5] =
        [Self::RecoveryBars, Self::MatchBars, Self::VarianceCurves, Self::PcaScatter, Self::FilterScatter];

    pub fn name(self) -> &'static str {
        match self {
            Self::RecoveryBars => "recovery_bars",
            Self::MatchBars => "match_bars",
            Self::VarianceCurves => "variance_curves",
            Self::PcaScatter => "pca_scatter",
            Self::FilterScatter => "filter_scatter",
        }
    }
}

impl fmt::Display for Figure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown figure `{s}`")))
    }
}

fn missing(figure: Figure, experiment: &str, path: &Path) -> Error {
    Error::Invalid(format!(
        "figure {figure} needs the output of a {experiment} run ({} not found)",
        path.display()
    ))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path).at(path)?)?)
}

/// Loads the in-distribution reports of a run in index order.
pub fn load_reports(run: &Path) -> Result<Vec<BiasReport>> {
    let dir = run.join(REPORTS_DIR).join("in_distribution");
    let index: ReportIndex = read_json(&dir.join(INDEX_FILE))?;
    index.reports.iter().map(|f| read_json(&dir.join(f))).collect()
}

struct Output {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Output {
    fn emit(&mut self, stem: &str, canvas: &Canvas, csv: &str) -> Result<()> {
        fs::create_dir_all(&self.dir).at(&self.dir)?;
        let svg = self.dir.join(format!("{stem}.svg"));
        fs::write(&svg, canvas.to_svg()).at(&svg)?;
        let png = self.dir.join(format!("{stem}.png"));
        canvas.to_png().save(&png).map_err(|e| Error::Image { path: png.clone(), message: e.to_string() })?;
        let csv_path = self.dir.join(format!("{stem}.csv"));
        fs::write(&csv_path, csv).at(&csv_path)?;
        self.files.extend([svg, png, csv_path]);
        Ok(())
    }
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(format!("csv flush: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Renders `figure` from the artifacts under `run`. Returns the files written.
pub fn plot(run: &Path, figure: Figure) -> Result<Vec<PathBuf>> {
    let mut out = Output { dir: run.join(PLOTS_DIR), files: Vec::new() };
    match figure {
        Figure::RecoveryBars | Figure::MatchBars => {
            let index = run.join(REPORTS_DIR).join("in_distribution").join(INDEX_FILE);
            if !index.exists() {
                return Err(missing(figure, "gender_bias or ablation", &index));
            }
            let reports = load_reports(run)?;
            let recovery = figure == Figure::RecoveryBars;
            let (canvas, csv) = rate_bars(&reports, recovery)?;
            out.emit(figure.name(), &canvas, &csv)?;
        }
        Figure::VarianceCurves => {
            let path = run.join("variance").join("traces.json");
            if !path.exists() {
                return Err(missing(figure, "layer_variance", &path));
            }
            let traces: Vec<LayerVarianceTrace> = read_json(&path)?;
            let (canvas, csv) = variance_curves(&traces)?;
            out.emit(figure.name(), &canvas, &csv)?;
        }
        Figure::PcaScatter => {
            let path = run.join("pca").join("scatter.json");
            if !path.exists() {
                return Err(missing(figure, "latent_probe", &path));
            }
            let map: DistributionMap = read_json(&path)?;
            let (canvas, csv) = pca_scatter(&map)?;
            out.emit(figure.name(), &canvas, &csv)?;
        }
        Figure::FilterScatter => {
            let dir = run.join("filters");
            let mut files: Vec<PathBuf> = match fs::read_dir(&dir) {
                Ok(rd) => rd
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| {
                        p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("audit_") && n.ends_with(".json"))
                    })
                    .collect(),
                Err(_) => Vec::new(),
            };
            if files.is_empty() {
                return Err(missing(figure, "filter_audit", &dir.join("audit_<role>.json")));
            }
            files.sort();
            for f in files {
                let role = f.file_stem().unwrap().to_string_lossy().trim_start_matches("audit_").to_string();
                let scatters: Vec<FilterScatter> = read_json(&f)?;
                for s in &scatters {
                    let (canvas, csv) = filter_scatter(s)?;
                    out.emit(&format!("filter_scatter_{role}_{}", slug(&s.layer_name)), &canvas, &csv)?;
                }
            }
        }
    }
    Ok(out.files)
}

/// Grouped bars: one group per report, one bar per attribute.
pub fn rate_bars(reports: &[BiasReport], recovery: bool) -> Result<(Canvas, String)> {
    if reports.is_empty() {
        return Err(Error::Invalid("no reports to plot".into()));
    }
    let what = if recovery { "recovery rate" } else { "match rate" };
    let n = reports.len() as f64;
    let mut c = Canvas::new((160.0 + 90.0 * n) as u32, 320);
    let ax = Axes { left: 70.0, top: 30.0, width: 70.0 + 90.0 * n - 40.0, height: 230.0, x: (0.0, n), y: (0.0, 1.0) };
    ax.frame(&mut c, what);
    c.text((ax.left + ax.width / 2.0, 18.0), format!("{what} by training split"), 12.0, Anchor::Middle);
    let mut rows = Vec::new();
    let mut ticks = Vec::new();
    for (i, r) in reports.iter().enumerate() {
        ticks.push((i as f64 + 0.5, r.column()));
        for (j, attr) in Attribute::ALL.into_iter().enumerate() {
            let v = if recovery { r.recovery_rate.get(attr) } else { r.match_rate.get(attr) };
            rows.push(vec![r.column(), attr.to_string(), v.map_or(String::new(), |x| x.to_string())]);
            if let Some(v) = v {
                let x0 = ax.px(i as f64 + 0.15 + 0.35 * j as f64);
                let x1 = ax.px(i as f64 + 0.15 + 0.35 * (j as f64 + 1.0));
                c.rect(x0, ax.py(v), x1 - x0, ax.py(0.0) - ax.py(v), PALETTE[j], "bar");
            }
        }
    }
    ax.x_ticks(&mut c, &ticks, false);
    for (j, attr) in Attribute::ALL.into_iter().enumerate() {
        let x = ax.left + ax.width + 8.0;
        let y = ax.top + 14.0 * j as f64;
        c.rect(x, y, 10.0, 10.0, PALETTE[j], "legend");
        c.text((x + 14.0, y + 9.0), attr.to_string(), 10.0, Anchor::Start);
    }
    let metric = if recovery { "recovery_rate" } else { "match_rate" };
    Ok((c, csv_string(&["split", "attribute", metric], rows)?))
}

/// One line per trace over the layers in forward order (input → output).
pub fn variance_curves(traces: &[LayerVarianceTrace]) -> Result<(Canvas, String)> {
    let first = traces.first().ok_or_else(|| Error::Invalid("no variance traces to plot".into()))?;
    let layers: Vec<&str> = first.entries.iter().map(|e| e.layer.as_str()).collect();
    if traces.iter().any(|t| t.entries.iter().map(|e| e.layer.as_str()).ne(layers.iter().copied())) {
        return Err(Error::Invalid("variance traces cover different layers".into()));
    }
    let n = layers.len();
    let mut c = Canvas::new((200 + 40 * n) as u32, 340);
    let yr = padded_range(traces.iter().flat_map(|t| t.entries.iter().map(|e| e.variance)));
    let ax = Axes {
        left: 80.0,
        top: 30.0,
        width: 40.0 * n as f64,
        height: 220.0,
        x: (-0.5, n as f64 - 0.5),
        y: (yr.0.min(0.0), yr.1),
    };
    ax.frame(&mut c, "activation variance");
    let ticks: Vec<(f64, String)> = layers.iter().enumerate().map(|(i, l)| (i as f64, l.to_string())).collect();
    ax.x_ticks(&mut c, &ticks, true);
    let mut rows = Vec::new();
    for (k, t) in traces.iter().enumerate() {
        let col = PALETTE[k % PALETTE.len()];
        let pts = t.entries.iter().enumerate().map(|(i, e)| (ax.px(i as f64), ax.py(e.variance))).collect();
        c.polyline(pts, col, "trace");
        for (i, e) in t.entries.iter().enumerate() {
            c.circle((ax.px(i as f64), ax.py(e.variance)), 2.5, col, "point");
            rows.push(vec![t.model_id.clone(), i.to_string(), e.layer.clone(), e.variance.to_string()]);
        }
        let (x, y) = (ax.left + ax.width + 12.0, ax.top + 14.0 * k as f64);
        c.rect(x, y, 10.0, 10.0, col, "legend");
        c.text((x + 14.0, y + 9.0), t.model_id.clone(), 10.0, Anchor::Start);
    }
    Ok((c, csv_string(&["model", "layer_index", "layer", "variance"], rows)?))
}

/// First two principal coordinates, coloured by group.
pub fn pca_scatter(map: &DistributionMap) -> Result<(Canvas, String)> {
    if map.points.is_empty() {
        return Err(Error::Invalid("distribution map has no points".into()));
    }
    let coord = |p: &crate::instrumentation::MapPoint, k: usize| p.coords.get(k).copied().unwrap_or(0.0);
    let mut groups: Vec<&str> = Vec::new();
    for p in &map.points {
        if !groups.contains(&p.group.as_str()) {
            groups.push(&p.group);
        }
    }
    let mut c = Canvas::new(640, 420);
    let ax = Axes {
        left: 70.0,
        top: 30.0,
        width: 360.0,
        height: 340.0,
        x: padded_range(map.points.iter().map(|p| coord(p, 0))),
        y: padded_range(map.points.iter().map(|p| coord(p, 1))),
    };
    ax.frame(&mut c, "PC2");
    let ratio = |k: usize| map.explained_ratio.get(k).copied().unwrap_or(0.0) * 100.0;
    c.text(
        (ax.left + ax.width / 2.0, ax.top + ax.height + 30.0),
        format!("PC1 ({:.1}%), PC2 ({:.1}%)", ratio(0), ratio(1)),
        11.0,
        Anchor::Middle,
    );
    let mut rows = Vec::new();
    for p in &map.points {
        let g = groups.iter().position(|g| *g == p.group).unwrap();
        c.circle((ax.px(coord(p, 0)), ax.py(coord(p, 1))), 3.0, PALETTE[g % PALETTE.len()], "point");
        rows.push(vec![p.group.clone(), p.label.clone(), coord(p, 0).to_string(), coord(p, 1).to_string()]);
    }
    for (g, name) in groups.iter().enumerate() {
        let (x, y) = (ax.left + ax.width + 14.0, ax.top + 14.0 * g as f64);
        c.rect(x, y, 10.0, 10.0, PALETTE[g % PALETTE.len()], "legend");
        c.text((x + 14.0, y + 9.0), *name, 10.0, Anchor::Start);
    }
    Ok((c, csv_string(&["group", "label", "pc1", "pc2"], rows)?))
}

/// Filter PCA values per model; outliers drawn as crosses, the reference
/// interval as a band.
pub fn filter_scatter(s: &FilterScatter) -> Result<(Canvas, String)> {
    let models = s.points.iter().map(|p| p.model_index).max().map_or(0, |m| m + 1);
    let filters = s.points.iter().map(|p| p.filter_index).max().map_or(1, |m| m + 1);
    let mut c = Canvas::new((160 + 80 * models.max(1)) as u32, 320);
    let yr = padded_range(
        s.points.iter().map(|p| p.pca_value).chain([s.reference_interval.0, s.reference_interval.1]),
    );
    let ax = Axes {
        left: 80.0,
        top: 30.0,
        width: 80.0 * models.max(1) as f64,
        height: 230.0,
        x: (-0.5, models as f64 - 0.5),
        y: yr,
    };
    c.rect(
        ax.left,
        ax.py(s.reference_interval.1),
        ax.width,
        ax.py(s.reference_interval.0) - ax.py(s.reference_interval.1),
        [232, 240, 250],
        "reference",
    );
    ax.frame(&mut c, "filter PCA value");
    c.text(
        (ax.left + ax.width / 2.0, 18.0),
        format!("{} ({:.1}% explained)", s.layer_name, s.explained_ratio * 100.0),
        12.0,
        Anchor::Middle,
    );
    let ticks: Vec<(f64, String)> = (0..models).map(|m| (m as f64, format!("model {m}"))).collect();
    ax.x_ticks(&mut c, &ticks, false);
    let mut rows = Vec::new();
    for p in &s.points {
        let jitter = (p.filter_index as f64 + 0.5) / filters as f64 * 0.6 - 0.3;
        let at = (ax.px(p.model_index as f64 + jitter), ax.py(p.pca_value));
        if p.is_outlier {
            c.cross(at, 4.0, [214, 39, 40], "outlier");
        } else {
            c.circle(at, 2.5, PALETTE[0], "inlier");
        }
        rows.push(vec![
            s.layer_name.clone(),
            p.model_index.to_string(),
            p.filter_index.to_string(),
            p.pca_value.to_string(),
            p.is_outlier.to_string(),
        ]);
    }
    Ok((c, csv_string(&["layer", "model_index", "filter_index", "pca_value", "is_outlier"], rows)?))
}
