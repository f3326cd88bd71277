//! Subgroup aggregation, table rendering and the JSON appendix.
//!
//! # Appendix schema
//!
//! One JSON document per subgroup:
//!
//! ```text
//! {
//!   "format": "simgap-appendix/1",
//!   "subgroup": 2,
//!   "submission": { "simulator", "tuned_parameters", "running_time", "system" },
//!   "errors": { "euclidean": .., ..., "object_rotation": .. },
//!   "tasks": [
//!     {
//!       "task": 3,
//!       "metrics": { "euclidean_error": .., ... },   // 15 or 23 keys, signed
//!       "details": null | {
//!         "dataset_extremes": { "velocity_max", "accel_max", ... },
//!         "length_warning": null | { "left", "right" },
//!         "object": null | {
//!           "dataset_summary": { ... },
//!           "simulation_moving": [ { "moving_time", "window" }, ... ],
//!           "dataset_moving": [ ... ],
//!           "translation_mean": [x, y, z],
//!           "rotation_mean": [roll, pitch, yaw],
//!           "translation_regularization": null | λ,
//!           "rotation_regularization": null | λ,
//!           "per_repeat": [ { "translation", "rotation" }, ... ]
//!         }
//!       }
//!     }
//!   ]
//! }
//! ```
//!
//! Keys are emitted in the order above, and metric keys in canonical metric
//! order. Floats round-trip exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::RangeInclusive;

use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::distributions::RepeatDistance;
use crate::error::{Error, Result};
use crate::metrics::{
    ArmMetrics, DatasetExtremes, MetricSet, MovingTime, ObjectMetrics, ObjectSummary, TaskEvaluation,
};
use crate::trajectory::{LengthMismatch, TASK_COUNT};

pub const APPENDIX_FORMAT: &str = "simgap-appendix/1";

/// Table headings in column order.
pub const COLUMNS: [&str; 10] = [
    "Euclidean",
    "Rotation",
    "Pose",
    "Velocity",
    "Acceleration",
    "Torque",
    "Force",
    "Moment",
    "Object Translation",
    "Object Rotation",
];

/// Appendix keys of the error vector, parallel to [`COLUMNS`].
pub const ERROR_KEYS: [&str; 10] = [
    "euclidean",
    "rotation",
    "pose",
    "velocity",
    "acceleration",
    "torque",
    "force",
    "moment",
    "object_translation",
    "object_rotation",
];

/// Metric feeding each column.
const ERROR_SOURCES: [&str; 10] = [
    "euclidean_error",
    "rotation_error",
    "pose_error",
    "velocity_error",
    "accel_error",
    "torque_error",
    "force_error",
    "moment_error",
    "obj_translation_distance",
    "obj_rotation_distance",
];

/// Tasks of subgroup `k`: 1 is arm kinematics, 2 is non-prehensile
/// manipulation.
pub fn subgroup_tasks(k: u8) -> Result<RangeInclusive<u8>> {
    match k {
        1 => Ok(1..=2),
        2 => Ok(3..=TASK_COUNT),
        _ => Err(Error::InvalidValue(format!("unknown subgroup {k}; expected 1 or 2"))),
    }
}

pub fn subgroup_of(task: u8) -> Option<u8> {
    (1..=2).find(|&k| subgroup_tasks(k).is_ok_and(|r| r.contains(&task)))
}

/// Number of error-vector entries for subgroup `k`.
pub fn error_vector_len(k: u8) -> usize {
    if k == 1 {
        8
    } else {
        10
    }
}

pub fn report_file_name(subgroup: u8) -> String {
    format!("subgroup{subgroup}_report.txt")
}

pub fn appendix_file_name(subgroup: u8) -> String {
    format!("subgroup{subgroup}_appendix.json")
}

pub fn task_appendix_file_name(task: u8) -> String {
    format!("task{task:02}_appendix.json")
}

/// Free-text description of how a simulation run was produced.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubmissionInfo {
    /// Simulator and physics engine.
    pub simulator: String,
    /// User-definable parameters that were tuned.
    pub tuned_parameters: String,
    pub running_time: String,
    pub system: String,
}

/// Object-side appendix values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectDetails {
    pub dataset_summary: ObjectSummary,
    pub simulation_moving: Vec<MovingTime>,
    pub dataset_moving: Vec<MovingTime>,
    /// Mean of the dataset final-position fit.
    pub translation_mean: Vec<f64>,
    /// Mean of the dataset final-Euler fit.
    pub rotation_mean: Vec<f64>,
    pub translation_regularization: Option<f64>,
    pub rotation_regularization: Option<f64>,
    pub per_repeat: Vec<RepeatDistance>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskDetails {
    pub dataset_extremes: DatasetExtremes,
    pub length_warning: Option<LengthMismatch>,
    pub object: Option<ObjectDetails>,
}

impl From<&TaskEvaluation> for TaskDetails {
    fn from(e: &TaskEvaluation) -> Self {
        Self {
            dataset_extremes: e.dataset_extremes,
            length_warning: e.length_warning,
            object: e.object.as_ref().map(|o| ObjectDetails {
                dataset_summary: o.dataset,
                simulation_moving: o.simulation_motions.iter().map(|m| m.moving).collect(),
                dataset_moving: o.dataset_motions.iter().map(|m| m.moving).collect(),
                translation_mean: o.distances.translation_fit.mean().iter().copied().collect(),
                rotation_mean: o.distances.rotation_fit.mean().iter().copied().collect(),
                translation_regularization: o.distances.translation_fit.regularization(),
                rotation_regularization: o.distances.rotation_fit.regularization(),
                per_repeat: o.distances.per_repeat.clone(),
            }),
        }
    }
}

/// One task's appendix record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "TaskDoc", try_from = "TaskDoc")]
pub struct TaskRecord {
    pub metrics: MetricSet,
    pub details: Option<TaskDetails>,
}

impl From<MetricSet> for TaskRecord {
    fn from(metrics: MetricSet) -> Self {
        Self { metrics, details: None }
    }
}

impl From<&TaskEvaluation> for TaskRecord {
    fn from(e: &TaskEvaluation) -> Self {
        Self {
            metrics: e.metrics,
            details: Some(e.into()),
        }
    }
}

/// Ordered name/value pairs serialized as a JSON object.
#[derive(Clone, Debug)]
struct OrderedMap(Vec<(String, f64)>);

impl Serialize for OrderedMap {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for OrderedMap {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        BTreeMap::<String, f64>::deserialize(d).map(|m| Self(m.into_iter().collect()))
    }
}

#[derive(Serialize, Deserialize)]
struct TaskDoc {
    task: u8,
    metrics: OrderedMap,
    details: Option<TaskDetails>,
}

impl From<TaskRecord> for TaskDoc {
    fn from(r: TaskRecord) -> Self {
        Self {
            task: r.metrics.task_id,
            metrics: OrderedMap(
                r.metrics
                    .entries()
                    .into_iter()
                    .map(|(k, v)| (k.to_string(), v))
                    .collect(),
            ),
            details: r.details,
        }
    }
}

impl TryFrom<TaskDoc> for TaskRecord {
    type Error = Error;

    fn try_from(doc: TaskDoc) -> Result<Self> {
        let mut values: BTreeMap<String, f64> = doc.metrics.0.into_iter().collect();
        let mut take = |name: &str| {
            values
                .remove(name)
                .ok_or_else(|| Error::InvalidValue(format!("task {}: missing metric {name}", doc.task)))
        };
        let arm = ArmMetrics {
            euclidean_error: take("euclidean_error")?,
            rotation_error: take("rotation_error")?,
            pose_error: take("pose_error")?,
            velocity_max: take("velocity_max")?,
            velocity_error: take("velocity_error")?,
            accel_max: take("accel_max")?,
            decel_max: take("decel_max")?,
            accel_error: take("accel_error")?,
            torque_min: take("torque_min")?,
            torque_max: take("torque_max")?,
            torque_error: take("torque_error")?,
            force_max: take("force_max")?,
            force_error: take("force_error")?,
            moment_max: take("moment_max")?,
            moment_error: take("moment_error")?,
        };
        let object = if values.is_empty() {
            None
        } else {
            let mut take = |name: &str| {
                values
                    .remove(name)
                    .ok_or_else(|| Error::InvalidValue(format!("task {}: missing metric {name}", doc.task)))
            };
            let object = ObjectMetrics {
                obj_velocity_max: take("obj_velocity_max")?,
                obj_velocity_avg: take("obj_velocity_avg")?,
                obj_accel_max: take("obj_accel_max")?,
                obj_decel_max: take("obj_decel_max")?,
                obj_accel_avg: take("obj_accel_avg")?,
                moving_time: take("moving_time")?,
                obj_translation_distance: take("obj_translation_distance")?,
                obj_rotation_distance: take("obj_rotation_distance")?,
            };
            if let Some(extra) = values.keys().next() {
                return Err(Error::InvalidValue(format!(
                    "task {}: unknown metric {extra}",
                    doc.task
                )));
            }
            Some(object)
        };
        Ok(Self {
            metrics: MetricSet {
                task_id: doc.task,
                arm,
                object,
            },
            details: doc.details,
        })
    }
}

/// Aggregated errors of one subgroup, with the per-task records behind them.
#[derive(Clone, Debug, PartialEq)]
pub struct SubgroupReport {
    subgroup: u8,
    errors: Vec<f64>,
    tasks: Vec<TaskRecord>,
    info: SubmissionInfo,
}

impl SubgroupReport {
    pub fn subgroup(&self) -> u8 {
        self.subgroup
    }

    /// Mean magnitudes in [`COLUMNS`] order: 8 entries for subgroup 1,
    /// 10 for subgroup 2.
    pub fn errors(&self) -> &[f64] {
        &self.errors
    }

    /// Per-task records sorted by task id.
    pub fn tasks(&self) -> &[TaskRecord] {
        &self.tasks
    }

    pub fn info(&self) -> &SubmissionInfo {
        &self.info
    }

    pub fn columns(&self) -> &'static [&'static str] {
        &COLUMNS[..self.errors.len()]
    }
}

fn check_coverage(mut tasks: Vec<TaskRecord>) -> Result<(u8, Vec<TaskRecord>)> {
    if tasks.is_empty() {
        return Err(Error::Validation(vec!["no task metrics supplied".into()]));
    }
    tasks.sort_by_key(|t| t.metrics.task_id);
    let mut problems = Vec::new();
    let mut groups: Vec<u8> = Vec::new();
    for pair in tasks.windows(2) {
        if pair[0].metrics.task_id == pair[1].metrics.task_id {
            problems.push(format!("task {} supplied more than once", pair[0].metrics.task_id));
        }
    }
    for t in &tasks {
        match subgroup_of(t.metrics.task_id) {
            Some(k) if !groups.contains(&k) => groups.push(k),
            Some(_) => {}
            None => problems.push(format!("task {} belongs to no subgroup", t.metrics.task_id)),
        }
    }
    if groups.len() > 1 {
        problems.push("tasks span more than one subgroup".into());
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    let subgroup = groups[0];
    let missing: Vec<String> = subgroup_tasks(subgroup)?
        .filter(|id| !tasks.iter().any(|t| t.metrics.task_id == *id))
        .map(|id| format!("subgroup {subgroup} is missing task {id}"))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Validation(missing));
    }
    if subgroup == 2 {
        let no_object: Vec<String> = tasks
            .iter()
            .filter(|t| t.metrics.object.is_none())
            .map(|t| format!("task {} has no object metrics", t.metrics.task_id))
            .collect();
        if !no_object.is_empty() {
            return Err(Error::Validation(no_object));
        }
    }
    Ok((subgroup, tasks))
}

/// Aggregates full per-task records into a subgroup report. Each error entry
/// is the mean magnitude of its metric over the member tasks.
pub fn aggregate_records(tasks: Vec<TaskRecord>, info: SubmissionInfo) -> Result<SubgroupReport> {
    let (subgroup, tasks) = check_coverage(tasks)?;
    let width = error_vector_len(subgroup);
    let n = tasks.len() as f64;
    let errors = ERROR_SOURCES[..width]
        .iter()
        .map(|source| {
            let sum: f64 = tasks
                .iter()
                .map(|t| {
                    t.metrics
                        .entries()
                        .into_iter()
                        .find(|(name, _)| name == source)
                        .map_or(0.0, |(_, v)| v.abs())
                })
                .sum();
            sum / n
        })
        .collect();
    Ok(SubgroupReport {
        subgroup,
        errors,
        tasks,
        info,
    })
}

pub fn aggregate_subgroup(sets: &[MetricSet], info: SubmissionInfo) -> Result<SubgroupReport> {
    aggregate_records(sets.iter().copied().map(TaskRecord::from).collect(), info)
}

/// Four decimals, or a four-decimal mantissa with a signed two-digit
/// exponent (`6.9713E+07`) when the magnitude exceeds one million.
pub fn format_cell(x: f64) -> String {
    let x = if x == 0.0 { 0.0 } else { x };
    if x.is_finite() && x.abs() > 1e6 {
        let s = format!("{x:.4e}");
        let (mantissa, exp) = s.split_once('e').expect("exponent form");
        let exp: i32 = exp.parse().expect("integer exponent");
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}E{sign}{:02}", exp.abs())
    } else {
        format!("{x:.4}")
    }
}

/// Formatted error cells in column order.
pub fn table_cells(report: &SubgroupReport) -> Vec<String> {
    report.errors.iter().map(|&v| format_cell(v)).collect()
}

/// Plain-text table in the published layout, followed by the submission
/// details.
pub fn render_table(report: &SubgroupReport) -> String {
    let name = if report.info.simulator.is_empty() {
        "(unnamed)"
    } else {
        report.info.simulator.as_str()
    };
    let mut header = vec!["Simulator/Physics Engine".to_string()];
    header.extend(report.columns().iter().map(|c| c.to_string()));
    let mut row = vec![name.to_string()];
    row.extend(table_cells(report));
    let widths: Vec<usize> = header.iter().zip(&row).map(|(h, c)| h.len().max(c.len())).collect();

    let line = |cells: &[String]| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();

    let range = subgroup_tasks(report.subgroup).expect("validated subgroup");
    let mut out = format!(
        "Error metrics for subgroup {} (tasks {}-{})\n\n",
        report.subgroup,
        range.start(),
        range.end()
    );
    out.push_str(&line(&header));
    out.push_str(&format!("|-{}-|\n", rule.join("-|-")));
    out.push_str(&line(&row));
    out.push('\n');
    let _ = writeln!(out, "Simulator used: {}", report.info.simulator);
    let _ = writeln!(out, "User definable parameters tuned: {}", report.info.tuned_parameters);
    let _ = writeln!(
        out,
        "Running time for the tasks with system specifications: {}; {}",
        report.info.running_time, report.info.system
    );
    out
}

#[derive(Serialize, Deserialize)]
struct AppendixDoc {
    format: String,
    subgroup: u8,
    submission: SubmissionInfo,
    errors: OrderedMap,
    tasks: Vec<TaskRecord>,
}

/// Serializes the full report as a pretty-printed JSON document.
pub fn export_appendix(report: &SubgroupReport) -> Result<String> {
    let doc = AppendixDoc {
        format: APPENDIX_FORMAT.into(),
        subgroup: report.subgroup,
        submission: report.info.clone(),
        errors: OrderedMap(
            ERROR_KEYS
                .iter()
                .zip(&report.errors)
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
        ),
        tasks: report.tasks.clone(),
    };
    let mut s = serde_json::to_string_pretty(&doc)?;
    s.push('\n');
    Ok(s)
}

pub fn import_appendix(text: &str) -> Result<SubgroupReport> {
    let doc: AppendixDoc = serde_json::from_str(text)?;
    if doc.format != APPENDIX_FORMAT {
        return Err(Error::InvalidValue(format!(
            "unsupported appendix format {:?}",
            doc.format
        )));
    }
    let width = error_vector_len(doc.subgroup);
    let values: BTreeMap<String, f64> = doc.errors.0.into_iter().collect();
    if values.len() != width {
        return Err(Error::DimensionMismatch {
            expected: width,
            found: values.len(),
        });
    }
    let errors = ERROR_KEYS[..width]
        .iter()
        .map(|k| {
            values
                .get(*k)
                .copied()
                .ok_or_else(|| Error::InvalidValue(format!("appendix lacks error entry {k}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let (subgroup, tasks) = check_coverage(doc.tasks)?;
    if subgroup != doc.subgroup {
        return Err(Error::InvalidValue(format!(
            "appendix declares subgroup {} but lists tasks of subgroup {subgroup}",
            doc.subgroup
        )));
    }
    Ok(SubgroupReport {
        subgroup,
        errors,
        tasks,
        info: doc.submission,
    })
}

/// A single task record as a standalone JSON document.
pub fn export_task_record(record: &TaskRecord) -> Result<String> {
    let mut s = serde_json::to_string_pretty(record)?;
    s.push('\n');
    Ok(s)
}

pub fn import_task_record(text: &str) -> Result<TaskRecord> {
    Ok(serde_json::from_str(text)?)
}
