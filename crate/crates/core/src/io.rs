//! Session log persistence: a JSONL file of trial records with per-trial
//! trace CSVs alongside, plus a session summary JSON.

use crate::drivetrain::ForceTrace;
use crate::gait::{Direction, WarningModality};
use crate::model::TetherTensionSet;
use crate::session::{SessionOutput, SessionSummary, TrialOutcome, TrialRecord, TrialSpec};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write as _;
use std::path::Path;

/// One line of the `trials.jsonl` log. Bulk traces live in side CSV files
/// referenced by relative path.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialRecordRow {
    pub participant_id: String,
    pub spec: TrialSpec,
    pub outcome: TrialOutcome,
    pub skip_reason: Option<String>,
    pub warning_time_s: Option<f64>,
    pub predicted_stance_s: Option<f64>,
    pub onset_time_s: Option<f64>,
    pub achieved_lead_s: Option<f64>,
    pub commanded_tensions: Option<TetherTensionSet>,
    pub net_impulse_ns: Option<f64>,
    pub max_displacement_mm: Option<f64>,
    pub braced: bool,
    pub braced_direction: Option<Direction>,
    pub trace_left: Option<String>,
    pub trace_right: Option<String>,
    pub trace_back: Option<String>,
    pub trace_waist: Option<String>,
}

impl TrialRecordRow {
    pub fn modality(&self) -> WarningModality {
        self.spec.modality
    }
}

fn waist_csv(samples: &[(f64, f64, f64)]) -> String {
    let mut out = String::from("t_s,x_m,y_m\n");
    for (t, x, y) in samples {
        out.push_str(&format!("{t:.6},{x:.6},{y:.6}\n"));
    }
    out
}

/// Write `trials.jsonl`, `summary.json`, and `traces/trial_NNN_*.csv`
/// under `out_dir`. Output bytes are a pure function of the session data.
pub fn write_session(out_dir: &Path, output: &SessionOutput) -> std::io::Result<()> {
    let traces_dir = out_dir.join("traces");
    fs::create_dir_all(&traces_dir)?;

    let mut jsonl = fs::File::create(out_dir.join("trials.jsonl"))?;
    for rec in &output.records {
        let mut row = TrialRecordRow {
            participant_id: rec.participant_id.clone(),
            spec: rec.spec,
            outcome: rec.outcome,
            skip_reason: rec.skip_reason.clone(),
            warning_time_s: rec.warning_time_s,
            predicted_stance_s: rec.predicted_stance_s,
            onset_time_s: rec.onset_time_s,
            achieved_lead_s: rec.achieved_lead_s,
            commanded_tensions: rec.commanded_tensions,
            net_impulse_ns: rec.net_impulse_ns,
            max_displacement_mm: rec.max_displacement_mm,
            braced: rec.braced,
            braced_direction: rec.braced_direction,
            trace_left: None,
            trace_right: None,
            trace_back: None,
            trace_waist: None,
        };
        if let Some(traces) = &rec.tether_traces {
            let names = ["left", "right", "back"];
            let mut paths = [None, None, None];
            for (i, name) in names.iter().enumerate() {
                let rel = format!("traces/trial_{:03}_{name}.csv", rec.spec.index);
                write_trace(&out_dir.join(&rel), &traces[i])?;
                paths[i] = Some(rel);
            }
            [row.trace_left, row.trace_right, row.trace_back] = paths;
        }
        if !rec.waist_trajectory.is_empty() {
            let rel = format!("traces/trial_{:03}_waist.csv", rec.spec.index);
            fs::write(out_dir.join(&rel), waist_csv(&rec.waist_trajectory))?;
            row.trace_waist = Some(rel);
        }
        serde_json::to_writer(&mut jsonl, &row)?;
        jsonl.write_all(b"\n")?;
    }

    let summary = serde_json::to_string_pretty(&output.summary)?;
    fs::write(out_dir.join("summary.json"), summary + "\n")?;
    Ok(())
}

fn write_trace(path: &Path, trace: &ForceTrace) -> std::io::Result<()> {
    fs::write(path, trace.to_csv())
}

/// Read a `trials.jsonl` file back into rows.
pub fn read_trial_rows(path: &Path) -> std::io::Result<Vec<TrialRecordRow>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: TrialRecordRow = serde_json::from_str(line).map_err(|e| {
            std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("{}:{}: {e}", path.display(), i + 1),
            )
        })?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_summary(path: &Path) -> std::io::Result<SessionSummary> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))
}

/// Rebuild minimal in-memory records from persisted rows (traces are not
/// reloaded; analysis only needs the scalar fields).
pub fn records_from_rows(rows: &[TrialRecordRow]) -> Vec<TrialRecord> {
    rows.iter()
        .map(|row| TrialRecord {
            participant_id: row.participant_id.clone(),
            spec: row.spec,
            outcome: row.outcome,
            skip_reason: row.skip_reason.clone(),
            warning_time_s: row.warning_time_s,
            predicted_stance_s: row.predicted_stance_s,
            onset_time_s: row.onset_time_s,
            achieved_lead_s: row.achieved_lead_s,
            commanded_tensions: row.commanded_tensions,
            net_impulse_ns: row.net_impulse_ns,
            max_displacement_mm: row.max_displacement_mm,
            braced: row.braced,
            braced_direction: row.braced_direction,
            tether_traces: None,
            waist_trajectory: Vec::new(),
        })
        .collect()
}
