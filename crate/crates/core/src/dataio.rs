//! File formats: dataset CSV, model JSON, and SVG validation plots.
//!
//! A dataset file is one metadata comment followed by a CSV table:
//!
//! ```text
//! # T0=20 colocated=2
//! time,P1,P2,T1,T2,T3
//! 0.0000000000000000e0,...
//! ```
//!
//! Numbers are written with 17 significant digits, so a write/read pair
//! reproduces every `f64` bitwise. Line numbers in errors are 1-based file lines.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    CouplingModel, ExcitationSeries, FitMeta, ModelError, Parameterization, Provenance, TemperatureSeries, TimeGrid,
    TransientDataset,
};

/// Version written to and required from model files.
pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed metadata: {reason}")]
    Metadata { line: usize, reason: String },
    #[error("line {line}: malformed header: {reason}")]
    Header { line: usize, reason: String },
    #[error("line {line}: expected {expected} columns, found {found}")]
    ColumnCount { line: usize, expected: usize, found: usize },
    #[error("line {line}, column {column}: cannot parse {value:?} as a number")]
    Parse { line: usize, column: usize, value: String },
    #[error("line {line}, column {column}: non-finite value {value:?}")]
    NonFinite { line: usize, column: usize, value: String },
    #[error("line {line}: time {time} does not exceed the previous time {previous}")]
    NonMonotoneTime { line: usize, time: f64, previous: f64 },
    #[error("line {line}: time {time} is negative")]
    NegativeTime { line: usize, time: f64 },
    #[error("dataset has {0} data rows; at least 2 are required")]
    TooShort(usize),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("model file: unsupported schema_version {found} (expected {expected})")]
    SchemaVersion { found: String, expected: u32 },
    #[error("model file: {0}")]
    ModelFile(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, DataError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// 17 significant digits; parses back to the identical `f64`.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Metadata {
    t0: f64,
    colocated: usize,
}

fn parse_metadata(line: &str, number: usize) -> Result<Metadata> {
    let err = |reason: String| DataError::Metadata { line: number, reason };
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| err("expected `# T0=<value> colocated=<count>`".into()))?;
    let (mut t0, mut colocated) = (None, None);
    for field in body.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| err(format!("field {field:?} is not key=value")))?;
        match key {
            "T0" => {
                let v: f64 = value
                    .parse()
                    .map_err(|_| err(format!("T0 value {value:?} is not a number")))?;
                if !v.is_finite() {
                    return Err(err(format!("T0 value {value:?} is not finite")));
                }
                t0 = Some(v);
            }
            "colocated" => {
                colocated = Some(
                    value
                        .parse()
                        .map_err(|_| err(format!("colocated value {value:?} is not a count")))?,
                )
            }
            other => return Err(err(format!("unknown key {other:?}"))),
        }
    }
    Ok(Metadata {
        t0: t0.ok_or_else(|| err("missing T0".into()))?,
        colocated: colocated.ok_or_else(|| err("missing colocated".into()))?,
    })
}

/// Column layout of a parsed header: `time, P1..PN, T1..TM`.
#[derive(Debug, Clone, Copy)]
struct Columns {
    sources: usize,
    monitors: usize,
}

fn parse_header(fields: &csv::StringRecord, number: usize, require_monitors: bool) -> Result<Columns> {
    let err = |reason: String| DataError::Header { line: number, reason };
    let names: Vec<&str> = fields.iter().map(str::trim).collect();
    if names.first() != Some(&"time") {
        return Err(err(format!(
            "first column must be `time`, found {:?}",
            names.first().unwrap_or(&"")
        )));
    }
    let mut sources = 0;
    while names.get(1 + sources) == Some(&format!("P{}", sources + 1).as_str()) {
        sources += 1;
    }
    let mut monitors = 0;
    while names.get(1 + sources + monitors) == Some(&format!("T{}", monitors + 1).as_str()) {
        monitors += 1;
    }
    if sources == 0 {
        return Err(err("expected power columns P1..PN after `time`".into()));
    }
    if require_monitors && monitors == 0 {
        return Err(err("expected temperature columns T1..TM after the power columns".into()));
    }
    if 1 + sources + monitors != names.len() {
        return Err(err(format!(
            "unexpected column {:?} at position {}",
            names[1 + sources + monitors],
            2 + sources + monitors
        )));
    }
    Ok(Columns { sources, monitors })
}

/// Time column plus one row per remaining column, as parsed from the table.
struct Table {
    columns: Columns,
    time: Vec<f64>,
    powers: Vec<Vec<f64>>,
    temperatures: Vec<Vec<f64>>,
}

/// Parses the CSV table starting at file line `first_line` (its header).
fn parse_table(text: &str, first_line: usize, require_monitors: bool) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let line_of =
        |record: &csv::StringRecord| first_line + record.position().map_or(0, |p| p.line() as usize).saturating_sub(1);
    let header = records.next().ok_or_else(|| DataError::Header {
        line: first_line,
        reason: "missing header row".into(),
    })??;
    let columns = parse_header(&header, line_of(&header), require_monitors)?;
    let width = 1 + columns.sources + columns.monitors;
    let mut time = Vec::new();
    let mut powers = vec![Vec::new(); columns.sources];
    let mut temperatures = vec![Vec::new(); columns.monitors];
    for record in records {
        let record = record?;
        let line = line_of(&record);
        if record.len() != width {
            return Err(DataError::ColumnCount {
                line,
                expected: width,
                found: record.len(),
            });
        }
        for (c, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            let v: f64 = cell.parse().map_err(|_| DataError::Parse {
                line,
                column: c + 1,
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(DataError::NonFinite {
                    line,
                    column: c + 1,
                    value: cell.to_string(),
                });
            }
            if c == 0 {
                if v < 0.0 {
                    return Err(DataError::NegativeTime { line, time: v });
                }
                if let Some(&previous) = time.last() {
                    if v <= previous {
                        return Err(DataError::NonMonotoneTime {
                            line,
                            time: v,
                            previous,
                        });
                    }
                }
                time.push(v);
            } else if c <= columns.sources {
                powers[c - 1].push(v);
            } else {
                temperatures[c - 1 - columns.sources].push(v);
            }
        }
    }
    if time.len() < 2 {
        return Err(DataError::TooShort(time.len()));
    }
    Ok(Table {
        columns,
        time,
        powers,
        temperatures,
    })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// Reads a dataset file, enforcing every [`TransientDataset`] invariant.
pub fn read_dataset(path: &Path) -> Result<TransientDataset> {
    parse_dataset(&read_text(path)?)
}

/// Parses dataset file contents.
pub fn parse_dataset(text: &str) -> Result<TransientDataset> {
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let meta = parse_metadata(first.trim_end_matches('\r'), 1)?;
    let table = parse_table(rest, 2, true)?;
    let Columns { sources, monitors } = table.columns;
    if meta.colocated > sources.min(monitors) {
        return Err(DataError::Metadata {
            line: 1,
            reason: format!(
                "colocated = {} exceeds min(N, M) = {}",
                meta.colocated,
                sources.min(monitors)
            ),
        });
    }
    Ok(TransientDataset::new(
        TimeGrid::new(table.time)?,
        ExcitationSeries::new(table.powers)?,
        TemperatureSeries::new(table.temperatures)?,
        meta.t0,
        meta.colocated,
    )?)
}

/// Reads `time, P1..PN` (any trailing `T` columns are ignored, so a dataset
/// file is accepted). Lines starting with `#` are skipped.
pub fn read_power_inputs(path: &Path) -> Result<(TimeGrid, ExcitationSeries)> {
    parse_power_inputs(&read_text(path)?)
}

/// Parses power-input file contents.
pub fn parse_power_inputs(text: &str) -> Result<(TimeGrid, ExcitationSeries)> {
    let table = parse_table(text, 1, false)?;
    Ok((TimeGrid::new(table.time)?, ExcitationSeries::new(table.powers)?))
}

/// Serializes a dataset in the format read by [`read_dataset`].
pub fn format_dataset(dataset: &TransientDataset) -> Result<String> {
    format_table(
        dataset.grid(),
        dataset.powers(),
        Some(dataset.temperatures()),
        Some((dataset.t0(), dataset.colocated_count())),
    )
}

fn format_table(
    grid: &TimeGrid,
    powers: &ExcitationSeries,
    temperatures: Option<&TemperatureSeries>,
    meta: Option<(f64, usize)>,
) -> Result<String> {
    let mut out = String::new();
    if let Some((t0, colocated)) = meta {
        writeln!(out, "# T0={} colocated={colocated}", fmt_f64(t0)).expect("write to String");
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    let monitors = temperatures.map_or(0, TemperatureSeries::monitor_count);
    let header: Vec<String> = std::iter::once("time".to_string())
        .chain((1..=powers.source_count()).map(|j| format!("P{j}")))
        .chain((1..=monitors).map(|i| format!("T{i}")))
        .collect();
    writer.write_record(&header)?;
    for (m, &t) in grid.times().iter().enumerate() {
        let row = std::iter::once(t).chain(powers.rows().iter().map(|row| row[m])).chain(
            temperatures
                .into_iter()
                .flat_map(|temps| temps.rows().iter().map(move |row| row[m])),
        );
        writer.write_record(row.map(fmt_f64))?;
    }
    let bytes = writer.into_inner().expect("flushing into a Vec cannot fail");
    out.push_str(&String::from_utf8(bytes).expect("csv output is ASCII"));
    Ok(out)
}

pub fn write_dataset(dataset: &TransientDataset, path: &Path) -> Result<()> {
    fs::write(path, format_dataset(dataset)?).map_err(io_err(path))
}

/// Writes `time, P1..PN, T1..TM` without metadata, e.g. for predictions.
pub fn write_traces(
    grid: &TimeGrid,
    powers: &ExcitationSeries,
    temperatures: &TemperatureSeries,
    t0: f64,
    path: &Path,
) -> Result<()> {
    let text = format_table(grid, powers, Some(temperatures), Some((t0, 0)))?;
    fs::write(path, text).map_err(io_err(path))
}

/// Writes `time, P1..PN` in the format read by [`read_power_inputs`].
pub fn write_power_inputs(grid: &TimeGrid, powers: &ExcitationSeries, path: &Path) -> Result<()> {
    fs::write(path, format_table(grid, powers, None, None)?).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParameterizationFile {
    #[serde(flatten)]
    variant: Parameterization,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    colocated_count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
struct ModelFile {
    schema_version: u32,
    M: usize,
    N: usize,
    T0_celsius: f64,
    R_row_major: Vec<f64>,
    K_row_major: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parameterization: Option<ParameterizationFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fit: Option<FitMeta>,
}

fn row_major(mat: &DMatrix<f64>) -> Vec<f64> {
    mat.transpose().as_slice().to_vec()
}

/// Serializes a model as pretty-printed JSON.
pub fn format_model(model: &CouplingModel) -> Result<String> {
    let provenance = model.provenance();
    let file = ModelFile {
        schema_version: MODEL_SCHEMA_VERSION,
        M: model.monitor_count(),
        N: model.source_count(),
        T0_celsius: model.t0(),
        R_row_major: row_major(model.r()),
        K_row_major: row_major(model.k()),
        parameterization: provenance.map(|p| ParameterizationFile {
            variant: p.parameterization,
            colocated_count: p.colocated_count,
        }),
        fit: provenance.and_then(|p| p.fit),
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    Ok(text)
}

/// Parses and validates model JSON.
pub fn parse_model(text: &str) -> Result<CouplingModel> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    match value.get("schema_version") {
        Some(v) if v.as_u64() == Some(u64::from(MODEL_SCHEMA_VERSION)) => {}
        found => {
            return Err(DataError::SchemaVersion {
                found: found.map_or("<missing>".into(), ToString::to_string),
                expected: MODEL_SCHEMA_VERSION,
            })
        }
    }
    let file: ModelFile = serde_json::from_value(value)?;
    let (m, n) = (file.M, file.N);
    for (name, data) in [("R_row_major", &file.R_row_major), ("K_row_major", &file.K_row_major)] {
        if data.len() != m * n {
            return Err(DataError::ModelFile(format!(
                "{name} has {} entries, expected M * N = {}",
                data.len(),
                m * n
            )));
        }
    }
    let r = DMatrix::from_row_slice(m, n, &file.R_row_major);
    let k = DMatrix::from_row_slice(m, n, &file.K_row_major);
    let model = CouplingModel::new(r, k, file.T0_celsius)?;
    let Some(param) = file.parameterization else {
        if file.fit.is_some() {
            return Err(DataError::ModelFile("`fit` requires `parameterization`".into()));
        }
        return Ok(model);
    };
    if let Parameterization::LowRank { rank } = param.variant {
        if rank == 0 || rank > m.min(n) {
            return Err(DataError::ModelFile(format!(
                "rank {rank} must lie in 1..={}",
                m.min(n)
            )));
        }
    }
    if let Some(c) = param.colocated_count {
        if c > m.min(n) {
            return Err(DataError::ModelFile(format!(
                "colocated_count {c} exceeds min(M, N) = {}",
                m.min(n)
            )));
        }
    }
    Ok(model.with_provenance(Provenance {
        parameterization: param.variant,
        colocated_count: param.colocated_count,
        fit: file.fit,
    }))
}

pub fn save_model(model: &CouplingModel, path: &Path) -> Result<()> {
    fs::write(path, format_model(model)?).map_err(io_err(path))
}

pub fn load_model(path: &Path) -> Result<CouplingModel> {
    parse_model(&read_text(path)?)
}

const PANEL_W: f64 = 640.0;
const PANEL_H: f64 = 220.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 45.0;
const TICKS: usize = 5;
const MAX_MARKERS: usize = 60;

/// Renders measured (solid line) against predicted (circle markers) traces,
/// one panel per monitor, as a standalone SVG document.
pub fn render_validation_plot(
    grid: &TimeGrid,
    measured: &TemperatureSeries,
    predicted: &TemperatureSeries,
) -> Result<String> {
    if measured.monitor_count() != predicted.monitor_count()
        || measured.len() != grid.len()
        || predicted.len() != grid.len()
    {
        return Err(ModelError::Dimension(format!(
            "plot needs matching shapes: grid {}, measured {}x{}, predicted {}x{}",
            grid.len(),
            measured.monitor_count(),
            measured.len(),
            predicted.monitor_count(),
            predicted.len()
        ))
        .into());
    }
    let t = grid.times();
    let panels = measured.monitor_count();
    let mut svg = String::new();
    let w = |svg: &mut String, s: std::fmt::Arguments| svg.write_fmt(s).expect("write to String");
    w(
        &mut svg,
        format_args!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PANEL_W}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"11\">\n",
            PANEL_H * panels as f64
        ),
    );
    w(
        &mut svg,
        format_args!("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"),
    );
    let (t_lo, t_hi) = (t[0], t[t.len() - 1]);
    let stride = t.len().div_ceil(MAX_MARKERS);
    for i in 0..panels {
        let (meas, pred) = (measured.row(i), predicted.row(i));
        let (mut y_lo, mut y_hi) = meas
            .iter()
            .chain(pred)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        if y_hi - y_lo < 1e-9 {
            y_lo -= 0.5;
            y_hi += 0.5;
        }
        let top = PANEL_H * i as f64;
        let (x0, x1) = (MARGIN_L, PANEL_W - MARGIN_R);
        let (y0, y1) = (top + PANEL_H - MARGIN_B, top + MARGIN_T);
        let sx = |v: f64| x0 + (v - t_lo) / (t_hi - t_lo) * (x1 - x0);
        let sy = |v: f64| y0 + (v - y_lo) / (y_hi - y_lo) * (y1 - y0);

        w(&mut svg, format_args!("<g id=\"panel-{}\">\n", i + 1));
        w(
            &mut svg,
            format_args!(
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-weight=\"bold\">Monitor T{}</text>\n",
                (x0 + x1) / 2.0,
                top + 18.0,
                i + 1
            ),
        );
        w(
            &mut svg,
            format_args!(
                "<rect x=\"{x0:.2}\" y=\"{y1:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"black\"/>\n",
                x1 - x0,
                y0 - y1
            ),
        );
        for q in 0..TICKS {
            let f = q as f64 / (TICKS - 1) as f64;
            let (tv, yv) = (t_lo + f * (t_hi - t_lo), y_lo + f * (y_hi - y_lo));
            let (px, py) = (sx(tv), sy(yv));
            w(
                &mut svg,
                format_args!(
                    "<line x1=\"{px:.2}\" y1=\"{y0:.2}\" x2=\"{px:.2}\" y2=\"{:.2}\" stroke=\"black\"/><text x=\"{px:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{tv:.4}</text>\n",
                    y0 + 4.0,
                    y0 + 16.0
                ),
            );
            w(
                &mut svg,
                format_args!(
                    "<line x1=\"{:.2}\" y1=\"{py:.2}\" x2=\"{x0:.2}\" y2=\"{py:.2}\" stroke=\"black\"/><text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{yv:.4}</text>\n",
                    x0 - 4.0,
                    x0 - 6.0,
                    py + 4.0
                ),
            );
        }
        w(
            &mut svg,
            format_args!(
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">time (s)</text>\n",
                (x0 + x1) / 2.0,
                y0 + 34.0
            ),
        );
        w(
            &mut svg,
            format_args!(
                "<text transform=\"translate({:.2},{:.2}) rotate(-90)\" text-anchor=\"middle\">temperature (°C)</text>\n",
                16.0,
                (y0 + y1) / 2.0
            ),
        );
        let points: Vec<String> = t
            .iter()
            .zip(meas)
            .map(|(&tv, &v)| format!("{:.2},{:.2}", sx(tv), sy(v)))
            .collect();
        w(
            &mut svg,
            format_args!(
                "<polyline class=\"measured\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                points.join(" ")
            ),
        );
        for (m, (&tv, &v)) in t.iter().zip(pred).enumerate() {
            if m % stride == 0 || m == t.len() - 1 {
                w(
                    &mut svg,
                    format_args!(
                        "<circle class=\"predicted\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"none\" stroke=\"#d62728\"/>\n",
                        sx(tv),
                        sy(v)
                    ),
                );
            }
        }
        w(
            &mut svg,
            format_args!(
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" fill=\"#1f77b4\">measured</text><text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" fill=\"#d62728\">predicted</text>\n",
                x1 - 4.0,
                y1 + 14.0,
                x1 - 4.0,
                y1 + 28.0
            ),
        );
        w(&mut svg, format_args!("</g>\n"));
    }
    w(&mut svg, format_args!("</svg>\n"));
    Ok(svg)
}

pub fn write_validation_plot(
    grid: &TimeGrid,
    measured: &TemperatureSeries,
    predicted: &TemperatureSeries,
    path: &Path,
) -> Result<()> {
    fs::write(path, render_validation_plot(grid, measured, predicted)?).map_err(io_err(path))
}
