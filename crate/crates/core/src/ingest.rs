//! Recording CSV format, repeat-bundle discovery and submission validation.
//!
//! A recording file is UTF-8 text with seven `#` header lines in fixed
//! order, a column row and one data row per sample:
//!
//! ```text
//! # task: 1
//! # repeat: 1
//! # date: 2019-03-01T10:00:00Z
//! # temperature: 21.5
//! # humidity: NA
//! # source: dataset
//! # description: free text
//! t,ee_px,ee_py,ee_pz,ee_qw,ee_qx,ee_qy,ee_qz,ft_fx,...,tau1,...,tau6,f1,f2,f3
//! 0,0.1,0.2,...
//! ```
//!
//! Body column groups appear end effector first, then the object if any.
//! Numbers are written with 9 significant digits.

use std::fmt;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{
    Body, FingerSample, JointTorqueSample, Metadata, PoseSample, RepeatSet, TaskRecording, WrenchSample,
    FINGER_CLOSED_RAD, FINGER_COUNT, JOINT_COUNT, REPEATS_PER_TASK, TASK_COUNT,
};

/// Quaternion norms further than this from 1 produce a warning finding.
pub const NORM_WARN_TOLERANCE: f64 = 1e-3;

const HEADER_KEYS: [&str; 7] = [
    "task",
    "repeat",
    "date",
    "temperature",
    "humidity",
    "source",
    "description",
];
const POSE_SUFFIXES: [&str; 7] = ["px", "py", "pz", "qw", "qx", "qy", "qz"];
const WRENCH_COLUMNS: [&str; 6] = ["ft_fx", "ft_fy", "ft_fz", "ft_mx", "ft_my", "ft_mz"];
const TORQUE_COLUMNS: [&str; JOINT_COUNT] = ["tau1", "tau2", "tau3", "tau4", "tau5", "tau6"];
const FINGER_COLUMNS: [&str; FINGER_COUNT] = ["f1", "f2", "f3"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub location: String,
    pub message: String,
}

impl Finding {
    pub fn warning(location: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn error(location: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Error,
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{tag}: {}: {}", self.location, self.message)
    }
}

#[derive(Clone, Debug)]
pub struct ParsedRecording {
    pub recording: TaskRecording,
    /// Warnings raised while parsing, located by line.
    pub findings: Vec<Finding>,
}

/// Formats `value` with 9 significant digits, in plain decimal notation
/// when the exponent is in `-5..9`, trailing zeros removed.
pub fn format_sig9(value: f64) -> String {
    if value == 0.0 {
        return "0".into();
    }
    let sci = format!("{value:.8e}");
    let (mantissa, exponent) = sci.split_once('e').expect("exponent form");
    let exponent: i32 = exponent.parse().expect("integer exponent");
    if (-5..9).contains(&exponent) {
        let decimals = (8 - exponent) as usize;
        let fixed = format!("{value:.decimals$}");
        if fixed.contains('.') {
            fixed.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            fixed
        }
    } else {
        let mantissa = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{mantissa}e{exponent}")
    }
}

fn canonical_columns(body_names: &[&str]) -> Vec<String> {
    let mut columns = vec!["t".to_string()];
    for name in body_names {
        columns.extend(POSE_SUFFIXES.iter().map(|s| format!("{name}_{s}")));
    }
    columns.extend(
        WRENCH_COLUMNS
            .iter()
            .chain(&TORQUE_COLUMNS)
            .chain(&FINGER_COLUMNS)
            .map(|c| c.to_string()),
    );
    columns
}

/// Serializes a recording in the canonical layout.
pub fn write_recording_csv(rec: &TaskRecording) -> String {
    let meta = rec.metadata();
    let optional = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), format_sig9);
    let mut out = String::new();
    out.push_str(&format!("# task: {}\n", meta.task_id));
    out.push_str(&format!("# repeat: {}\n", meta.repeat_id));
    out.push_str(&format!("# date: {}\n", meta.timestamp));
    out.push_str(&format!("# temperature: {}\n", optional(meta.temperature)));
    out.push_str(&format!("# humidity: {}\n", optional(meta.humidity)));
    out.push_str(&format!("# source: {}\n", meta.source));
    out.push_str(&format!("# description: {}\n", meta.description));

    let names: Vec<&str> = rec.bodies().iter().map(|b| b.name.as_str()).collect();
    out.push_str(&canonical_columns(&names).join(","));
    out.push('\n');

    let mut row: Vec<f64> = Vec::new();
    for k in 0..rec.len() {
        row.clear();
        row.push(rec.effector().samples[k].t);
        for body in rec.bodies() {
            let s = &body.samples[k];
            let q = s.orientation.quaternion();
            row.extend(s.position.iter());
            row.extend([q.w, q.i, q.j, q.k]);
        }
        let w = &rec.wrench()[k];
        row.extend(w.force.iter().chain(w.moment.iter()));
        row.extend(rec.joint_torques()[k].torques);
        row.extend(rec.fingers()[k].positions);
        let cells: Vec<String> = row.iter().map(|&v| format_sig9(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn parse_header_value<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let rest = line.strip_prefix('#')?.trim_start();
    let value = rest.strip_prefix(key)?.strip_prefix(':')?;
    Some(value.strip_prefix(' ').unwrap_or(value))
}

fn parse_optional(value: &str, line: usize, key: &str) -> Result<Option<f64>> {
    let value = value.trim();
    if value == "NA" {
        return Ok(None);
    }
    value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(Some)
        .ok_or_else(|| Error::format(line, format!("{key} must be a number or NA, got {value:?}")))
}

fn is_iso8601(value: &str) -> bool {
    use chrono::{DateTime, NaiveDate, NaiveDateTime};
    DateTime::parse_from_rfc3339(value).is_ok()
        || NaiveDateTime::parse_from_str(value, "%Y-%m-%dT%H:%M:%S%.f").is_ok()
        || NaiveDateTime::parse_from_str(value, "%Y-%m-%d %H:%M:%S%.f").is_ok()
        || NaiveDate::parse_from_str(value, "%Y-%m-%d").is_ok()
}

fn parse_metadata(lines: &[&str]) -> Result<Metadata> {
    let mut values = Vec::with_capacity(HEADER_KEYS.len());
    for (i, key) in HEADER_KEYS.iter().enumerate() {
        let line_no = i + 1;
        let value = lines
            .get(i)
            .and_then(|l| parse_header_value(l, key))
            .ok_or_else(|| Error::format(line_no, format!("expected header line \"# {key}: ...\"")))?;
        values.push(value);
    }
    let int = |i: usize| -> Result<u8> {
        values[i]
            .trim()
            .parse::<u8>()
            .map_err(|_| Error::format(i + 1, format!("{} must be an integer", HEADER_KEYS[i])))
    };
    let timestamp = values[2].trim().to_string();
    if !is_iso8601(&timestamp) {
        return Err(Error::format(3, format!("date {timestamp:?} is not ISO-8601")));
    }
    let metadata = Metadata {
        task_id: int(0)?,
        repeat_id: int(1)?,
        timestamp,
        temperature: parse_optional(values[3], 4, "temperature")?,
        humidity: parse_optional(values[4], 5, "humidity")?,
        source: values[5]
            .trim()
            .parse()
            .map_err(|e: Error| Error::format(6, e.to_string()))?,
        description: values[6].to_string(),
    };
    if !(1..=TASK_COUNT).contains(&metadata.task_id) {
        return Err(Error::format(
            1,
            format!("task {} outside 1..={TASK_COUNT}", metadata.task_id),
        ));
    }
    if !(1..=REPEATS_PER_TASK as u8).contains(&metadata.repeat_id) {
        return Err(Error::format(
            2,
            format!("repeat {} outside 1..={REPEATS_PER_TASK}", metadata.repeat_id),
        ));
    }
    Ok(metadata)
}

/// Splits the column row into body names, checking the fixed tail.
fn parse_columns(columns: &[String], line: usize) -> Result<Vec<String>> {
    if columns.first().map(String::as_str) != Some("t") {
        return Err(Error::format(line, "first column must be \"t\""));
    }
    let tail = WRENCH_COLUMNS.len() + JOINT_COUNT + FINGER_COUNT;
    let body_columns = columns.len().saturating_sub(1 + tail);
    if columns.len() < 1 + tail || !body_columns.is_multiple_of(POSE_SUFFIXES.len()) {
        return Err(Error::format(
            line,
            format!("unexpected column count {}", columns.len()),
        ));
    }
    let mut names = Vec::new();
    for group in columns[1..1 + body_columns].chunks(POSE_SUFFIXES.len()) {
        let name = group[0]
            .strip_suffix("_px")
            .filter(|n| !n.is_empty())
            .ok_or_else(|| Error::format(line, format!("column {:?} is not a body position", group[0])))?;
        names.push(name.to_string());
    }
    if names.is_empty() || names.len() > 2 {
        return Err(Error::format(
            line,
            format!("expected 1 or 2 tracked bodies, found {}", names.len()),
        ));
    }
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let expected = canonical_columns(&refs);
    if let Some((found, wanted)) = columns.iter().zip(&expected).find(|(a, b)| a != b) {
        return Err(Error::format(
            line,
            format!("column {found:?} where {wanted:?} was expected"),
        ));
    }
    Ok(names)
}

/// Parses one recording file.
pub fn parse_recording_csv<R: Read>(mut reader: R) -> Result<ParsedRecording> {
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(|e| Error::format(1, format!("unreadable stream: {e}")))?;
    parse_recording_str(&text)
}

pub fn parse_recording_str(text: &str) -> Result<ParsedRecording> {
    let lines: Vec<&str> = text.lines().collect();
    let metadata = parse_metadata(&lines)?;
    let header_lines = HEADER_KEYS.len();
    let table_start = text
        .match_indices('\n')
        .nth(header_lines - 1)
        .map(|(i, _)| i + 1)
        .ok_or_else(|| Error::format(header_lines + 1, "missing column row"))?;

    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(&text.as_bytes()[table_start..]);
    let mut records = csv_reader.records();
    let column_line = header_lines + 1;
    let columns: Vec<String> = match records.next() {
        Some(Ok(r)) => r.iter().map(str::to_string).collect(),
        Some(Err(e)) => return Err(Error::format(column_line, e.to_string())),
        None => return Err(Error::format(column_line, "missing column row")),
    };
    let names = parse_columns(&columns, column_line)?;

    let mut findings = Vec::new();
    let mut poses: Vec<Vec<PoseSample>> = vec![Vec::new(); names.len()];
    let mut wrench = Vec::new();
    let mut joint_torques = Vec::new();
    let mut fingers = Vec::new();
    let mut last_line = column_line;
    for record in records {
        let record = record.map_err(|e| Error::format(last_line + 1, e.to_string()))?;
        let line = header_lines + record.position().map_or(last_line + 1, |p| p.line() as usize);
        last_line = line;
        if record.len() != columns.len() {
            return Err(Error::format(
                line,
                format!("{} cells, expected {}", record.len(), columns.len()),
            ));
        }
        let values = record
            .iter()
            .enumerate()
            .map(|(i, cell)| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::format(line, format!("column {}: non-numeric cell {cell:?}", columns[i])))
            })
            .collect::<Result<Vec<f64>>>()?;
        let t = values[0];
        let mut at = 1;
        for (b, name) in names.iter().enumerate() {
            let v = &values[at..at + 7];
            let (sample, norm) = PoseSample::from_raw(t, [v[0], v[1], v[2]], [v[3], v[4], v[5], v[6]])
                .map_err(|e| Error::format(line, e.to_string()))?;
            if (norm - 1.0).abs() > NORM_WARN_TOLERANCE {
                findings.push(Finding::warning(
                    format!("line {line}"),
                    format!("{name} quaternion norm {norm} renormalized"),
                ));
            }
            poses[b].push(sample);
            at += 7;
        }
        let v = &values[at..];
        wrench.push(WrenchSample {
            t,
            force: [v[0], v[1], v[2]].into(),
            moment: [v[3], v[4], v[5]].into(),
        });
        joint_torques.push(JointTorqueSample {
            t,
            torques: v[6..12].try_into().expect("six torques"),
        });
        let positions: [f64; FINGER_COUNT] = v[12..15].try_into().expect("three fingers");
        if positions.iter().any(|p| !(0.0..=FINGER_CLOSED_RAD).contains(p)) {
            findings.push(Finding::warning(
                format!("line {line}"),
                format!("finger positions {positions:?} outside [0, {FINGER_CLOSED_RAD}] rad"),
            ));
        }
        fingers.push(FingerSample { t, positions });
    }

    let bodies = names
        .into_iter()
        .zip(poses)
        .map(|(name, samples)| Body::new(name, samples))
        .collect();
    let recording = TaskRecording::new(metadata, bodies, wrench, joint_torques, fingers)
        .map_err(|e| Error::format(last_line, e.to_string()))?;
    Ok(ParsedRecording { recording, findings })
}

/// `task%02d_%02d.csv`
pub fn repeat_file_name(task_id: u8, repeat_id: u8) -> String {
    format!("task{task_id:02}_{repeat_id:02}.csv")
}

fn parse_repeat_file_name(name: &str) -> Option<(u8, u8)> {
    let stem = name.strip_prefix("task")?.strip_suffix(".csv")?;
    let (task, repeat) = stem.split_once('_')?;
    if task.len() != 2 || repeat.len() != 2 {
        return None;
    }
    Some((task.parse().ok()?, repeat.parse().ok()?))
}

/// Task ids that have at least one repeat file in `dir`, ascending.
pub fn tasks_in_dir(dir: &Path) -> Result<Vec<u8>> {
    let mut tasks = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some((task, _)) = entry.file_name().to_str().and_then(parse_repeat_file_name) {
            tasks.push(task);
        }
    }
    tasks.sort_unstable();
    tasks.dedup();
    Ok(tasks)
}

/// What was found when scanning one task's folder.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BundleManifest {
    pub directory: PathBuf,
    pub task_id: u8,
    /// Repeat files that exist, ordered by repeat index.
    pub files: Vec<PathBuf>,
    pub findings: Vec<Finding>,
}

impl BundleManifest {
    pub fn has_errors(&self) -> bool {
        self.findings.iter().any(Finding::is_error)
    }

    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.is_error())
    }
}

#[derive(Clone, Debug)]
pub struct LoadedRepeatSet {
    pub set: RepeatSet,
    pub manifest: BundleManifest,
}

fn scan_bundle(dir: &Path, task_id: u8) -> Result<(BundleManifest, Vec<TaskRecording>)> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut findings = Vec::new();
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some(name) = entry.file_name().to_str() {
            names.push(name.to_string());
        }
    }
    names.sort();
    for name in &names {
        if let Some((task, repeat)) = parse_repeat_file_name(name) {
            if task == task_id && !(1..=REPEATS_PER_TASK as u8).contains(&repeat) {
                findings.push(Finding::warning(name.clone(), "repeat index outside 1..=20, ignored"));
            }
        }
    }

    let expected: Vec<(u8, PathBuf)> = (1..=REPEATS_PER_TASK as u8)
        .map(|r| (r, dir.join(repeat_file_name(task_id, r))))
        .collect();
    let mut files = Vec::new();
    for (repeat, path) in &expected {
        if path.is_file() {
            files.push((*repeat, path.clone()));
        } else {
            findings.push(Finding::error(
                dir.display().to_string(),
                format!("missing repeat file {}", repeat_file_name(task_id, *repeat)),
            ));
        }
    }

    let parsed: Vec<(u8, String, Result<ParsedRecording>)> = files
        .par_iter()
        .map(|(repeat, path)| {
            let label = path
                .file_name()
                .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
            let result = fs::read(path)
                .map_err(|e| Error::io(path, e))
                .and_then(|bytes| String::from_utf8(bytes).map_err(|e| Error::format(1, format!("not UTF-8: {e}"))))
                .and_then(|text| parse_recording_str(&text));
            (*repeat, label, result)
        })
        .collect();

    let mut recordings = Vec::new();
    for (repeat, label, result) in parsed {
        match result {
            Ok(p) => {
                for mut f in p.findings {
                    f.location = format!("{label}:{}", f.location.trim_start_matches("line "));
                    findings.push(f);
                }
                let meta = p.recording.metadata();
                if meta.task_id != task_id {
                    findings.push(Finding::error(
                        format!("{label}:1"),
                        format!(
                            "mixed task ids: file declares task {}, expected {task_id}",
                            meta.task_id
                        ),
                    ));
                }
                if meta.repeat_id != repeat {
                    findings.push(Finding::error(
                        format!("{label}:2"),
                        format!("header declares repeat {}, file name says {repeat}", meta.repeat_id),
                    ));
                }
                recordings.push(p.recording);
            }
            Err(Error::Format { line, message }) => {
                findings.push(Finding::error(format!("{label}:{line}"), message));
            }
            Err(e) => findings.push(Finding::error(label, e.to_string())),
        }
    }

    if let Some(first) = recordings.first() {
        let layout: Vec<&str> = first.bodies().iter().map(|b| b.name.as_str()).collect();
        for r in &recordings[1..] {
            let other: Vec<&str> = r.bodies().iter().map(|b| b.name.as_str()).collect();
            let label = repeat_file_name(task_id, r.metadata().repeat_id);
            if other != layout {
                findings.push(Finding::error(
                    label.clone(),
                    format!("tracked bodies {other:?} differ from {layout:?}"),
                ));
            }
            if (r.rate_hz() - first.rate_hz()).abs() > 1e-6 * first.rate_hz() {
                findings.push(Finding::error(
                    label.clone(),
                    format!("sampling rate {} Hz differs from {} Hz", r.rate_hz(), first.rate_hz()),
                ));
            }
            if r.metadata().source != first.metadata().source {
                findings.push(Finding::warning(label, "source differs from the first repeat"));
            }
        }
    }

    Ok((
        BundleManifest {
            directory: dir.to_path_buf(),
            task_id,
            files: files.into_iter().map(|(_, p)| p).collect(),
            findings,
        },
        recordings,
    ))
}

/// Checks one task folder without building a repeat set. Only I/O failures
/// on the directory itself are returned as errors; everything else is a
/// finding.
pub fn validate_bundle(dir: &Path, task_id: u8) -> Result<BundleManifest> {
    scan_bundle(dir, task_id).map(|(manifest, _)| manifest)
}

/// Loads `taskNN_01.csv` through `taskNN_20.csv` from `dir`.
pub fn load_repeat_set(dir: &Path, task_id: u8) -> Result<LoadedRepeatSet> {
    let (manifest, recordings) = scan_bundle(dir, task_id)?;
    if manifest.has_errors() {
        return Err(Error::Validation(manifest.errors().map(ToString::to_string).collect()));
    }
    let set = RepeatSet::new(task_id, recordings)?;
    Ok(LoadedRepeatSet { set, manifest })
}

/// Writes each repeat to `dir` under its canonical file name.
pub fn write_repeat_files(dir: &Path, repeats: &[TaskRecording]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    repeats
        .iter()
        .map(|r| {
            let meta = r.metadata();
            let path = dir.join(repeat_file_name(meta.task_id, meta.repeat_id));
            fs::write(&path, write_recording_csv(r)).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}
