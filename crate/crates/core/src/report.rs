//! Results CSV and grouped bar-chart figures.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::genset::{InfoType, Role, Template};
use crate::matrix::CellRecord;

pub const COLUMNS: [&str; 14] = [
    "task",
    "info_type",
    "target_role",
    "template",
    "probed_role",
    "encoder",
    "layer",
    "n_runs_kept",
    "n_runs_omitted",
    "mean_acc",
    "ci_low",
    "ci_high",
    "chance_level",
    "at_chance",
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: missing column {column}")]
    MissingColumn { path: PathBuf, column: &'static str },
    #[error("{0}: no result rows")]
    Empty(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ResultRow {
    pub task: String,
    pub info_type: InfoType,
    pub target_role: Role,
    pub template: Template,
    pub probed_role: Role,
    pub encoder: String,
    pub layer: i32,
    pub n_runs_kept: usize,
    pub n_runs_omitted: usize,
    pub mean_acc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub chance_level: f64,
    pub at_chance: bool,
}

impl ResultRow {
    /// `None` for failed cells, which only appear in the manifest.
    pub fn from_cell(c: &CellRecord) -> Option<ResultRow> {
        let r = c.result.as_ref().filter(|_| c.is_ok())?;
        Some(ResultRow {
            task: c.task.clone(),
            info_type: c.info_type,
            target_role: c.target_role,
            template: c.template,
            probed_role: c.probed_role,
            encoder: c.encoder.clone(),
            layer: c.layer,
            n_runs_kept: r.n_runs_kept,
            n_runs_omitted: r.n_runs_omitted,
            mean_acc: r.mean_acc,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
            chance_level: r.chance_level,
            at_chance: r.at_chance,
        })
    }

    fn record(&self) -> [String; 14] {
        [
            self.task.clone(),
            self.info_type.to_string(),
            self.target_role.to_string(),
            self.template.to_string(),
            self.probed_role.to_string(),
            self.encoder.clone(),
            self.layer.to_string(),
            self.n_runs_kept.to_string(),
            self.n_runs_omitted.to_string(),
            format!("{:.6}", self.mean_acc),
            format!("{:.6}", self.ci_low),
            format!("{:.6}", self.ci_high),
            format!("{:.6}", self.chance_level),
            self.at_chance.to_string(),
        ]
    }
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<(), ReportError> {
    let csv_err = |source| ReportError::Csv {
        path: path.to_owned(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(COLUMNS).map_err(csv_err)?;
    for r in rows {
        w.write_record(r.record()).map_err(csv_err)?;
    }
    w.flush().map_err(|source| ReportError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>, ReportError> {
    let csv_err = |source| ReportError::Csv {
        path: path.to_owned(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = r.headers().map_err(csv_err)?.clone();
    if let Some(column) = COLUMNS.iter().find(|c| !headers.iter().any(|h| h == **c)) {
        return Err(ReportError::MissingColumn {
            path: path.to_owned(),
            column,
        });
    }
    r.deserialize().collect::<Result<Vec<ResultRow>, _>>().map_err(csv_err)
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];
const SHADES: [f64; 3] = [1.0, 0.65, 0.35];

const BAR_W: f64 = 12.0;
const CLUSTER_GAP: f64 = 6.0;
const GROUP_GAP: f64 = 28.0;
const PLOT_H: f64 = 260.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 48.0;
const LEGEND_W: f64 = 170.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn push_unique<T: PartialEq + Copy>(v: &mut Vec<T>, x: T) {
    if !v.contains(&x) {
        v.push(x);
    }
}

/// Grouped bar chart: one group per probed role, one cluster per encoder
/// (one colour each), one bar per information type within a cluster.
pub fn render_svg(title: &str, rows: &[&ResultRow]) -> String {
    let mut roles: Vec<Role> = Vec::new();
    let mut encoders: Vec<&str> = Vec::new();
    let mut infos: Vec<InfoType> = Vec::new();
    for r in rows {
        push_unique(&mut roles, r.probed_role);
        push_unique(&mut encoders, r.encoder.as_str());
        push_unique(&mut infos, r.info_type);
    }
    roles.sort();
    infos.sort();
    let cluster_w = infos.len() as f64 * BAR_W;
    let group_w = encoders.len() as f64 * (cluster_w + CLUSTER_GAP) - CLUSTER_GAP;
    let plot_w = roles.len() as f64 * (group_w + GROUP_GAP) + GROUP_GAP;
    let width = MARGIN_L + plot_w + LEGEND_W;
    let height = MARGIN_T + PLOT_H + MARGIN_B;
    let y = |acc: f64| MARGIN_T + PLOT_H * (1.0 - acc.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="20" font-size="14" text-anchor="middle">{}</text>"#,
        MARGIN_L + plot_w / 2.0,
        escape(title)
    );
    for i in 0..=5 {
        let acc = i as f64 / 5.0;
        let yy = y(acc);
        let _ = writeln!(
            s,
            r##"<line x1="{MARGIN_L}" y1="{yy:.1}" x2="{:.1}" y2="{yy:.1}" stroke="#ddd"/>"##,
            MARGIN_L + plot_w
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{acc:.1}</text>"#,
            MARGIN_L - 6.0,
            yy + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text transform="translate(14 {:.1}) rotate(-90)" text-anchor="middle">accuracy</text>"#,
        MARGIN_T + PLOT_H / 2.0
    );

    for (g, role) in roles.iter().enumerate() {
        let gx = MARGIN_L + GROUP_GAP + g as f64 * (group_w + GROUP_GAP);
        let _ = writeln!(s, r#"<g class="group" data-probed-role="{role}">"#);
        for (c, enc) in encoders.iter().enumerate() {
            let color = PALETTE[c % PALETTE.len()];
            let cx = gx + c as f64 * (cluster_w + CLUSTER_GAP);
            for (b, info) in infos.iter().enumerate() {
                let Some(r) = rows
                    .iter()
                    .find(|r| r.probed_role == *role && r.encoder == *enc && r.info_type == *info)
                else {
                    continue;
                };
                let x = cx + b as f64 * BAR_W;
                let top = y(r.mean_acc);
                let _ = writeln!(
                    s,
                    r#"<rect class="bar" x="{x:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="{color}" fill-opacity="{}" data-task="{}" data-probed-role="{role}" data-encoder="{}" data-info-type="{info}" data-mean="{:.6}"/>"#,
                    BAR_W - 1.0,
                    y(0.0) - top,
                    SHADES[b % SHADES.len()],
                    escape(&r.task),
                    escape(enc),
                    r.mean_acc
                );
                let mx = x + (BAR_W - 1.0) / 2.0;
                let (lo, hi) = (y(r.ci_low), y(r.ci_high));
                let _ = writeln!(
                    s,
                    r##"<g class="ci" data-ci-low="{:.6}" data-ci-high="{:.6}" stroke="#222"><line x1="{mx:.1}" y1="{lo:.1}" x2="{mx:.1}" y2="{hi:.1}"/><line x1="{:.1}" y1="{lo:.1}" x2="{:.1}" y2="{lo:.1}"/><line x1="{:.1}" y1="{hi:.1}" x2="{:.1}" y2="{hi:.1}"/></g>"##,
                    r.ci_low,
                    r.ci_high,
                    mx - 3.0,
                    mx + 3.0,
                    mx - 3.0,
                    mx + 3.0
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{role}</text>"#,
            gx + group_w / 2.0,
            y(0.0) + 18.0
        );
        let _ = writeln!(s, "</g>");
    }

    let chances: Vec<f64> = rows.iter().map(|r| r.chance_level).collect();
    if let Some(&c) = chances.first() {
        if chances.iter().all(|&x| (x - c).abs() < 1e-9) {
            let _ = writeln!(
                s,
                r##"<line class="chance" x1="{MARGIN_L}" y1="{yy:.1}" x2="{:.1}" y2="{yy:.1}" stroke="#555" stroke-dasharray="4 3"/>"##,
                MARGIN_L + plot_w,
                yy = y(c)
            );
        }
    }
    let _ = writeln!(
        s,
        r##"<line x1="{MARGIN_L}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="#000"/>"##,
        y(0.0),
        MARGIN_L + plot_w
    );

    let lx = MARGIN_L + plot_w + 16.0;
    let mut ly = MARGIN_T;
    for (c, enc) in encoders.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<rect x="{lx:.1}" y="{:.1}" width="12" height="12" fill="{}"/><text x="{:.1}" y="{ly:.1}">{}</text>"#,
            ly - 10.0,
            PALETTE[c % PALETTE.len()],
            lx + 18.0,
            escape(enc)
        );
        ly += 18.0;
    }
    ly += 8.0;
    for (b, info) in infos.iter().enumerate() {
        let _ = writeln!(
            s,
            r##"<rect x="{lx:.1}" y="{:.1}" width="12" height="12" fill="#444" fill-opacity="{}"/><text x="{:.1}" y="{ly:.1}">{info}</text>"##,
            ly - 10.0,
            SHADES[b % SHADES.len()],
            lx + 18.0
        );
        ly += 18.0;
    }
    s.push_str("</svg>\n");
    s
}

/// File stem of the figure a row belongs to.
pub fn figure_name(r: &ResultRow) -> String {
    if r.info_type == InfoType::Identity {
        format!("identity_{}_{}", r.target_role, r.template)
    } else {
        format!("{}_{}", r.target_role, r.template)
    }
}

/// Writes one SVG per (target role, template) into `out_dir`, with identity
/// tasks in separate figures. Nothing is written for an empty CSV.
pub fn render_figures(csv_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let rows = read_results_csv(csv_path)?;
    if rows.is_empty() {
        return Err(ReportError::Empty(csv_path.to_owned()));
    }
    let mut figures: BTreeMap<String, Vec<&ResultRow>> = BTreeMap::new();
    for r in &rows {
        figures.entry(figure_name(r)).or_default().push(r);
    }
    fs::create_dir_all(out_dir).map_err(|source| ReportError::Io {
        path: out_dir.to_owned(),
        source,
    })?;
    let mut written = Vec::new();
    for (name, rows) in figures {
        let r0 = rows[0];
        let title = if r0.info_type == InfoType::Identity {
            format!("{} identity ({} template)", r0.target_role, r0.template)
        } else {
            format!("{} target ({} template)", r0.target_role, r0.template)
        };
        let path = out_dir.join(format!("{name}.svg"));
        fs::write(&path, render_svg(&title, &rows)).map_err(|source| ReportError::Io {
            path: path.clone(),
            source,
        })?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(info: InfoType, probed: Role, enc: &str, mean: f64) -> ResultRow {
        ResultRow {
            task: format!("{info}_subject_base"),
            info_type: info,
            target_role: Role::Subject,
            template: Template::Base,
            probed_role: probed,
            encoder: enc.into(),
            layer: -1,
            n_runs_kept: 50,
            n_runs_omitted: 0,
            mean_acc: mean,
            ci_low: mean - 0.01,
            ci_high: mean + 0.01,
            chance_level: 0.5,
            at_chance: false,
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let rows = vec![row(InfoType::Number, Role::Verb, "bert", 0.93125)];
        write_results_csv(&path, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(&COLUMNS.join(",")));
        assert!(text.contains("0.931250,0.921250,0.941250,0.500000,false"));
        assert_eq!(read_results_csv(&path).unwrap(), rows);
    }

    #[test]
    fn missing_column_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        fs::write(&path, "task,info_type\n").unwrap();
        let err = read_results_csv(&path).unwrap_err();
        assert!(err.to_string().contains("missing column target_role"), "{err}");
    }

    #[test]
    fn svg_has_one_bar_per_row() {
        let rows: Vec<ResultRow> = [InfoType::Number, InfoType::Gender]
            .into_iter()
            .flat_map(|i| Role::CORE.into_iter().map(move |r| row(i, r, "glove", 0.6)))
            .collect();
        let refs: Vec<&ResultRow> = rows.iter().collect();
        let svg = render_svg("t", &refs);
        assert_eq!(svg.matches(r#"class="bar""#).count(), 10);
        assert_eq!(svg.matches(r#"class="group""#).count(), 5);
        assert!(svg.contains(r#"data-ci-low="0.590000""#));
    }
}
