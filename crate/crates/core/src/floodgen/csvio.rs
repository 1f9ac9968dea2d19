//! CSV layout: `graph.csv` (`sensor_id,bank_height_ft,cross_section_ft2,
//! impermeable_pct`), `edges.csv` (`from_id,to_id`) and one
//! `<sensor_id>.csv` per sensor (`timestamp,level_to_bank_ft,rainfall_in`).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDateTime};

use crate::error::{Error, Result};

use super::graph::{SensorGraph, SensorNode};
use super::sim::{EventTrace, STEP_MINUTES};

pub const GRAPH_HEADER: [&str; 4] = [
    "sensor_id",
    "bank_height_ft",
    "cross_section_ft2",
    "impermeable_pct",
];
pub const EDGE_HEADER: [&str; 2] = ["from_id", "to_id"];
pub const SENSOR_HEADER: [&str; 3] = ["timestamp", "level_to_bank_ft", "rainfall_in"];
/// Longest run of missing steps that is forward-filled.
pub const MAX_FILL: usize = 2;

const TIME_FORMATS: [&str; 2] = ["%Y-%m-%d %H:%M", "%Y/%m/%d %H:%M"];
const TIME_OUT: &str = "%Y-%m-%d %H:%M";

/// One sensor file on its own 30-minute axis; missing values are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSeries {
    pub id: String,
    pub start: NaiveDateTime,
    pub level: Vec<f64>,
    pub rainfall: Vec<f64>,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    parse_err(path, line, e.to_string())
}

fn fmt_value(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

/// Reads all records, checking the header against `expected`.
fn read_table(path: &Path, expected: &[&str]) -> Result<Vec<(usize, Vec<String>)>> {
    let text = fs::read_to_string(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    let mut header_seen = false;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let fields: Vec<String> = rec.iter().map(str::to_string).collect();
        if !header_seen {
            check_header(path, line, &fields, expected)?;
            header_seen = true;
            continue;
        }
        if fields.iter().all(String::is_empty) {
            continue;
        }
        rows.push((line, fields));
    }
    if !header_seen {
        return Err(parse_err(path, 1, "empty file, expected a header"));
    }
    Ok(rows)
}

fn check_header(path: &Path, line: usize, found: &[String], expected: &[&str]) -> Result<()> {
    if found.len() == expected.len() && found.iter().zip(expected).all(|(f, e)| f == e) {
        return Ok(());
    }
    if found.len() == expected.len() {
        for (f, e) in found.iter().zip(expected) {
            let stem = |s: &str| s.rsplit_once('_').map(|(a, _)| a.to_string());
            if f != e && stem(f).is_some() && stem(f) == stem(e) {
                return Err(parse_err(
                    path,
                    line,
                    format!("unit mismatch: expected column `{e}`, found `{f}`"),
                ));
            }
        }
    }
    Err(parse_err(
        path,
        line,
        format!("malformed header: expected `{}`", expected.join(",")),
    ))
}

fn number(path: &Path, line: usize, what: &str, s: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| parse_err(path, line, format!("{what}: cannot parse `{s}`")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("{what}: non-finite value")));
    }
    Ok(v)
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    TIME_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

pub fn write_graph(graph: &SensorGraph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut g = csv::Writer::from_path(dir.join("graph.csv")).map_err(io_err)?;
    g.write_record(GRAPH_HEADER).map_err(io_err)?;
    for n in &graph.nodes {
        g.write_record([
            n.id.clone(),
            n.bank_height.to_string(),
            n.cross_section.to_string(),
            n.impermeable_pct.to_string(),
        ])
        .map_err(io_err)?;
    }
    g.flush()?;
    let mut e = csv::Writer::from_path(dir.join("edges.csv")).map_err(io_err)?;
    e.write_record(EDGE_HEADER).map_err(io_err)?;
    for &(a, b) in &graph.edges {
        e.write_record([&graph.nodes[a].id, &graph.nodes[b].id])
            .map_err(io_err)?;
    }
    e.flush()?;
    Ok(())
}

fn io_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Reads `graph.csv` and `edges.csv`; node `x` is the file row index.
pub fn read_graph(graph_path: &Path, edges_path: &Path) -> Result<SensorGraph> {
    let mut nodes = Vec::new();
    for (i, (line, f)) in read_table(graph_path, &GRAPH_HEADER)?.into_iter().enumerate() {
        if f.len() != 4 || f[0].is_empty() {
            return Err(parse_err(graph_path, line, "expected 4 fields with a sensor id"));
        }
        if nodes.iter().any(|n: &SensorNode| n.id == f[0]) {
            return Err(parse_err(graph_path, line, format!("duplicate sensor `{}`", f[0])));
        }
        nodes.push(SensorNode {
            id: f[0].clone(),
            bank_height: number(graph_path, line, "bank_height_ft", &f[1])?,
            cross_section: number(graph_path, line, "cross_section_ft2", &f[2])?,
            impermeable_pct: number(graph_path, line, "impermeable_pct", &f[3])?,
            x: i as f64,
            y: 0.0,
        });
    }
    let mut graph = SensorGraph {
        nodes,
        edges: Vec::new(),
    };
    for (line, f) in read_table(edges_path, &EDGE_HEADER)? {
        let idx = |id: &str| {
            graph
                .index_of(id)
                .ok_or_else(|| parse_err(edges_path, line, format!("unknown sensor `{id}`")))
        };
        let edge = (idx(&f[0])?, idx(&f[1])?);
        graph.edges.push(edge);
    }
    graph.validate().map_err(|e| parse_err(graph_path, 0, e.to_string()))?;
    Ok(graph)
}

pub fn write_sensor<W: Write>(
    out: W,
    start: NaiveDateTime,
    level: &[f64],
    rainfall: &[f64],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SENSOR_HEADER).map_err(io_err)?;
    for (s, (l, r)) in level.iter().zip(rainfall).enumerate() {
        let t = start + Duration::minutes(STEP_MINUTES * s as i64);
        w.write_record([t.format(TIME_OUT).to_string(), fmt_value(*l), fmt_value(*r)])
            .map_err(io_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one `<sensor_id>.csv` per sensor of `trace` into `dir`.
pub fn write_event(graph: &SensorGraph, trace: &EventTrace, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(graph.len());
    for (i, node) in graph.nodes.iter().enumerate() {
        let path = dir.join(format!("{}.csv", node.id));
        let file = std::io::BufWriter::new(fs::File::create(&path)?);
        write_sensor(file, trace.start, &trace.level[i], &trace.rainfall[i])?;
        paths.push(path);
    }
    Ok(paths)
}

/// Parses one sensor file; the sensor id is the file stem.
pub fn read_sensor(path: &Path) -> Result<SensorSeries> {
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| parse_err(path, 0, "file name is not a sensor id"))?
        .to_string();
    let rows = read_table(path, &SENSOR_HEADER)?;
    let mut start = None;
    let mut prev: Option<NaiveDateTime> = None;
    let (mut level, mut rainfall) = (Vec::new(), Vec::new());
    for (line, f) in rows {
        if f.len() != 3 {
            return Err(parse_err(path, line, format!("expected 3 fields, found {}", f.len())));
        }
        let t = parse_timestamp(&f[0])
            .ok_or_else(|| parse_err(path, line, format!("bad timestamp `{}`", f[0])))?;
        if let Some(p) = prev {
            let minutes = (t - p).num_minutes();
            if minutes <= 0 {
                return Err(parse_err(
                    path,
                    line,
                    format!("non-monotone timestamp {} after {}", f[0], p.format(TIME_OUT)),
                ));
            }
            if minutes % STEP_MINUTES != 0 {
                return Err(parse_err(
                    path,
                    line,
                    format!("timestamp {} is off the 30-minute grid", f[0]),
                ));
            }
            for _ in 1..minutes / STEP_MINUTES {
                level.push(f64::NAN);
                rainfall.push(f64::NAN);
            }
        } else {
            start = Some(t);
        }
        prev = Some(t);
        let value = |what: &str, s: &str| -> Result<f64> {
            if s.is_empty() {
                Ok(f64::NAN)
            } else {
                number(path, line, what, s)
            }
        };
        let l = value("level_to_bank_ft", &f[1])?;
        let r = value("rainfall_in", &f[2])?;
        if r < 0.0 {
            return Err(parse_err(path, line, format!("negative rainfall {r}")));
        }
        level.push(l);
        rainfall.push(r);
    }
    let start = start.ok_or_else(|| parse_err(path, 1, "no data rows"))?;
    forward_fill(&mut level, MAX_FILL);
    forward_fill(&mut rainfall, MAX_FILL);
    Ok(SensorSeries {
        id,
        start,
        level,
        rainfall,
    })
}

/// Replaces NaN runs of at most `cap` steps that follow a value.
pub fn forward_fill(values: &mut [f64], cap: usize) {
    let mut i = 0;
    while i < values.len() {
        if values[i].is_nan() {
            let run_end = values[i..]
                .iter()
                .position(|v| !v.is_nan())
                .map_or(values.len(), |p| i + p);
            if i > 0 && run_end - i <= cap {
                let fill = values[i - 1];
                values[i..run_end].iter_mut().for_each(|v| *v = fill);
            }
            i = run_end;
        } else {
            i += 1;
        }
    }
}

/// Graph plus sensor files → traces on a shared axis. Steps where no sensor
/// has a reading split the axis into separate traces; sensors without a
/// file read as missing.
pub fn ingest_csv(
    graph_path: &Path,
    edges_path: &Path,
    sensor_paths: &[PathBuf],
) -> Result<(SensorGraph, Vec<EventTrace>)> {
    let graph = read_graph(graph_path, edges_path)?;
    if sensor_paths.is_empty() {
        return Err(Error::EmptyInput("sensor files"));
    }
    let mut series: Vec<Option<SensorSeries>> = vec![None; graph.len()];
    for p in sensor_paths {
        let s = read_sensor(p)?;
        let i = graph
            .index_of(&s.id)
            .ok_or_else(|| parse_err(p, 0, format!("sensor `{}` is not in the graph", s.id)))?;
        if series[i].is_some() {
            return Err(parse_err(p, 0, format!("second file for sensor `{}`", s.id)));
        }
        series[i] = Some(s);
    }
    let present = series.iter().flatten();
    let start = present.clone().map(|s| s.start).min().unwrap();
    let end = present
        .map(|s| s.start + Duration::minutes(STEP_MINUTES * s.level.len() as i64))
        .max()
        .unwrap();
    let n_steps = ((end - start).num_minutes() / STEP_MINUTES) as usize;
    let mut level = vec![vec![f64::NAN; n_steps]; graph.len()];
    let mut rainfall = vec![vec![f64::NAN; n_steps]; graph.len()];
    for (i, s) in series.iter().enumerate() {
        if let Some(s) = s {
            let off = ((s.start - start).num_minutes() / STEP_MINUTES) as usize;
            level[i][off..off + s.level.len()].copy_from_slice(&s.level);
            rainfall[i][off..off + s.rainfall.len()].copy_from_slice(&s.rainfall);
        }
    }
    let observed: Vec<bool> = (0..n_steps)
        .map(|t| (0..graph.len()).any(|i| level[i][t].is_finite() || rainfall[i][t].is_finite()))
        .collect();
    let mut traces = Vec::new();
    let mut t = 0;
    while t < n_steps {
        if !observed[t] {
            t += 1;
            continue;
        }
        let end = observed[t..].iter().position(|o| !o).map_or(n_steps, |p| t + p);
        traces.push(EventTrace {
            start: start + Duration::minutes(STEP_MINUTES * t as i64),
            rainfall: rainfall.iter().map(|r| r[t..end].to_vec()).collect(),
            level: level.iter().map(|l| l[t..end].to_vec()).collect(),
        });
        t = end;
    }
    Ok((graph, traces))
}
