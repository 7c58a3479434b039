//! Standalone SVG line charts of a metrics column across runs.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rlab_core::EpochMetrics;

use crate::config::{parse_pairs, ConfigError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Series {
    PgdAcc,
    FgsmAcc,
    StdAcc,
    FgsmLoss,
    PgdLoss,
    LogitL2Mean,
}

impl Series {
    pub fn name(&self) -> &'static str {
        match self {
            Series::PgdAcc => "pgd_acc",
            Series::FgsmAcc => "fgsm_acc",
            Series::StdAcc => "std_acc",
            Series::FgsmLoss => "fgsm_loss",
            Series::PgdLoss => "pgd_loss",
            Series::LogitL2Mean => "logit_l2_mean",
        }
    }

    pub fn value(&self, m: &EpochMetrics) -> f64 {
        match self {
            Series::PgdAcc => m.pgd_acc,
            Series::FgsmAcc => m.fgsm_acc,
            Series::StdAcc => m.std_acc,
            Series::FgsmLoss => m.fgsm_loss,
            Series::PgdLoss => m.pgd_loss,
            Series::LogitL2Mean => m.logit_l2_mean,
        }
    }
}

impl FromStr for Series {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        [
            Series::PgdAcc,
            Series::FgsmAcc,
            Series::StdAcc,
            Series::FgsmLoss,
            Series::PgdLoss,
            Series::LogitL2Mean,
        ]
        .into_iter()
        .find(|v| v.name() == s)
        .ok_or_else(|| format!("unknown series `{s}`"))
    }
}

/// What to draw: `inputs = label=path, label=path`, `series`, `title`, `output`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub inputs: Vec<(String, PathBuf)>,
    pub series: Series,
    pub title: String,
    pub output: PathBuf,
}

impl PlotSpec {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let spec: PlotSpec = text.parse()?;
        // relative CSV and output paths are taken from the spec's directory
        let base = path.parent().unwrap_or(Path::new(""));
        Ok(PlotSpec {
            inputs: spec.inputs.into_iter().map(|(l, p)| (l, base.join(p))).collect(),
            output: base.join(spec.output),
            ..spec
        })
    }
}

impl FromStr for PlotSpec {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, ConfigError> {
        let mut kv: HashMap<String, String> = HashMap::new();
        for (_, k, v) in parse_pairs(text)? {
            if !["inputs", "series", "title", "output"].contains(&k.as_str()) {
                return Err(ConfigError::UnknownKey(k));
            }
            kv.insert(k, v);
        }
        let take = |k: &str| kv.get(k).cloned().ok_or_else(|| ConfigError::MissingKey(k.into()));
        let invalid = |key: &str, reason: String| ConfigError::Invalid {
            key: key.into(),
            reason,
        };
        let mut inputs = Vec::new();
        for item in take("inputs")?.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (label, path) = match item.split_once('=') {
                Some((l, p)) => (l.trim().to_string(), PathBuf::from(p.trim())),
                None => {
                    let p = PathBuf::from(item);
                    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    (stem, p)
                }
            };
            inputs.push((label, path));
        }
        if inputs.is_empty() {
            return Err(invalid("inputs", "at least one input CSV is required".into()));
        }
        Ok(PlotSpec {
            inputs,
            series: take("series")?.parse().map_err(|e| invalid("series", e))?,
            title: kv.get("title").cloned().unwrap_or_default(),
            output: PathBuf::from(take("output")?),
        })
    }
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
const DASHES: [&str; 3] = ["", "6,4", "2,3"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Round tick spacing giving roughly `target` intervals over `span`.
fn tick_step(span: f64, target: f64) -> f64 {
    let raw = span / target;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let nice = if norm <= 1.0 {
        1.0
    } else if norm <= 2.0 {
        2.0
    } else if norm <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn fmt_tick(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 { 0 } else { (-step.log10().floor()) as usize };
    format!("{v:.decimals$}")
}

/// Renders one polyline per run. Fails on a run without rows.
pub fn render_svg(runs: &[(String, Vec<EpochMetrics>)], series: Series, title: &str) -> Result<String, String> {
    if runs.is_empty() {
        return Err("no input series".into());
    }
    if let Some((label, _)) = runs.iter().find(|(_, rows)| rows.is_empty()) {
        return Err(format!("series `{label}` has no rows"));
    }
    let points: Vec<Vec<(f64, f64)>> = runs
        .iter()
        .map(|(_, rows)| rows.iter().map(|m| (m.epoch as f64, series.value(m))).collect())
        .collect();
    let all = points.iter().flatten();
    let (x0, mut x1) = all.clone().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (mut y0, mut y1) = all.fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.1), b.max(p.1)));
    if matches!(series, Series::PgdAcc | Series::FgsmAcc | Series::StdAcc) {
        (y0, y1) = (0.0, 1.0);
    } else {
        y0 = y0.min(0.0);
    }
    if x1 - x0 < 1.0 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + pw / 2.0,
        escape(title)
    );
    let xs = tick_step(x1 - x0, 10.0).max(1.0);
    let mut t = (x0 / xs).ceil() * xs;
    while t <= x1 + 1e-9 {
        let px = sx(t);
        let _ = writeln!(
            s,
            r##"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="#e0e0e0"/>"##,
            TOP,
            TOP + ph
        );
        let _ = writeln!(
            s,
            r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            TOP + ph + 18.0,
            fmt_tick(t, xs)
        );
        t += xs;
    }
    let ys = tick_step(y1 - y0, 5.0);
    let mut t = (y0 / ys).ceil() * ys;
    while t <= y1 + ys * 1e-9 {
        let py = sy(t);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT:.2}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#e0e0e0"/>"##,
            LEFT + pw
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            py + 4.0,
            fmt_tick(t, ys)
        );
        t += ys;
    }
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">epoch</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        series.name()
    );
    for (i, ((label, _), pts)) in runs.iter().zip(&points).enumerate() {
        let color = COLORS[i % COLORS.len()];
        let dash = DASHES[(i / COLORS.len()) % DASHES.len()];
        let dash_attr = if dash.is_empty() {
            String::new()
        } else {
            format!(r#" stroke-dasharray="{dash}""#)
        };
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash_attr}/>"#,
            coords.join(" ")
        );
        for &(x, y) in pts {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#,
                sx(x),
                sy(y)
            );
        }
        let ly = TOP + 14.0 + 20.0 * i as f64;
        let lx = LEFT + pw + 14.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"{dash_attr}/>"#,
            lx + 24.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 30.0,
            ly + 4.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}
