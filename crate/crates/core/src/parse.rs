//! Decoders for user-supplied and previously written data: prime lists from
//! the command line, coupling traces (JSON lines), fluid CSV grids and JSON
//! reports. None of them panic on malformed input.

use serde::de::DeserializeOwned;

use crate::coupling::{CouplingBranch, CouplingStep};
use crate::error::{Error, Result};
use crate::table::Strategy;

/// Comma-separated positive integers, e.g. `"100003,1000003"`. Whitespace
/// around entries is ignored; empty entries are rejected.
pub fn parse_n_list(s: &str) -> Result<Vec<u64>> {
    let list: Vec<u64> = s
        .split(',')
        .map(|item| {
            let item = item.trim();
            item.parse::<u64>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::Parse(format!("{item:?} is not a positive integer")))
        })
        .collect::<Result<_>>()?;
    Ok(list)
}

pub fn parse_strategy(s: &str) -> Result<Strategy> {
    s.trim().parse()
}

pub fn write_trace(steps: &[CouplingStep]) -> String {
    let mut out = String::new();
    for step in steps {
        out.push_str(&serde_json::to_string(step).expect("trace steps always serialize"));
        out.push('\n');
    }
    out
}

/// Reads a coupling trace written by [`write_trace`] and checks that it is
/// internally coherent: consecutive step indices, branch data matching the
/// branch tag, and a failed step only at the end.
pub fn parse_trace(text: &str) -> Result<Vec<CouplingStep>> {
    let mut steps: Vec<CouplingStep> = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let step: CouplingStep = serde_json::from_str(line)
            .map_err(|e| Error::Parse(format!("trace line {}: {e}", line_no + 1)))?;
        let bad = |why: &str| Error::Parse(format!("trace line {}: {why}", line_no + 1));
        if let Some(prev) = steps.last() {
            if prev.failed {
                return Err(bad("step after a failed step"));
            }
            if Some(step.step_index) != prev.step_index.checked_add(1) {
                return Err(bad("step indices are not consecutive"));
            }
        }
        match (step.failed, step.branch) {
            (true, None) if step.chosen_bin.is_none() && step.pair.is_none() => {}
            (true, _) => return Err(bad("a failed step places no ball")),
            (false, None) => return Err(bad("missing branch")),
            (false, Some(CouplingBranch::Double)) => {
                if step.chosen_bin.is_none() || step.shadow_bin.is_none() || step.pair.is_none() {
                    return Err(bad("double step without bins or pair"));
                }
            }
            (false, Some(CouplingBranch::Correction)) => {
                if step.chosen_bin.is_none() || step.shadow_bin.is_some() || step.pair.is_some() {
                    return Err(bad("malformed correction step"));
                }
            }
        }
        if let Some(pair) = step.pair {
            if pair.g == 0 {
                return Err(bad("hash pair with g = 0"));
            }
        }
        steps.push(step);
    }
    Ok(steps)
}

/// A numeric CSV table as written by the fluid, audit and report exporters.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    /// `#` lines before the header, without the marker.
    pub comments: Vec<String>,
    pub columns: Vec<String>,
    /// Empty cells read as `None`.
    pub rows: Vec<Vec<Option<f64>>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

pub fn parse_csv_table(text: &str) -> Result<CsvTable> {
    let mut comments = Vec::new();
    let mut columns: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if let Some(rest) = line.strip_prefix('#') {
            if columns.is_some() {
                return Err(Error::Parse(format!(
                    "line {}: comment after header",
                    line_no + 1
                )));
            }
            comments.push(rest.trim().to_string());
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let cells = line.split(',');
        match &columns {
            None => {
                let names: Vec<String> = cells.map(|c| c.trim().to_string()).collect();
                if names.iter().any(String::is_empty) {
                    return Err(Error::Parse("empty column name".into()));
                }
                columns = Some(names);
            }
            Some(names) => {
                let row: Vec<Option<f64>> = cells
                    .map(|c| {
                        let c = c.trim();
                        if c.is_empty() {
                            return Ok(None);
                        }
                        c.parse::<f64>()
                            .ok()
                            .filter(|v| v.is_finite())
                            .map(Some)
                            .ok_or_else(|| {
                                Error::Parse(format!("line {}: bad number {c:?}", line_no + 1))
                            })
                    })
                    .collect::<Result<_>>()?;
                if row.len() != names.len() {
                    return Err(Error::Parse(format!(
                        "line {}: {} cells, expected {}",
                        line_no + 1,
                        row.len(),
                        names.len()
                    )));
                }
                rows.push(row);
            }
        }
    }
    let columns = columns.ok_or_else(|| Error::Parse("missing header row".into()))?;
    Ok(CsvTable {
        comments,
        columns,
        rows,
    })
}

/// A fluid grid read back from CSV: `times[k]` and `levels[k][i - 1] = x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidCsv {
    pub comments: Vec<String>,
    pub times: Vec<f64>,
    pub levels: Vec<Vec<f64>>,
}

/// Parses the output of [`crate::fluid::FluidSolution::to_csv`]. Columns
/// must be `t, x_1, ..., x_k`, every cell present, times non-decreasing.
pub fn parse_fluid_csv(text: &str) -> Result<FluidCsv> {
    let table = parse_csv_table(text)?;
    if table.columns.first().map(String::as_str) != Some("t") {
        return Err(Error::Parse("first column must be t".into()));
    }
    for (i, name) in table.columns.iter().enumerate().skip(1) {
        if *name != format!("x_{i}") {
            return Err(Error::Parse(format!(
                "column {i} should be x_{i}, found {name:?}"
            )));
        }
    }
    let mut times = Vec::with_capacity(table.rows.len());
    let mut levels = Vec::with_capacity(table.rows.len());
    for row in table.rows {
        let values: Vec<f64> = row
            .into_iter()
            .collect::<Option<_>>()
            .ok_or_else(|| Error::Parse("empty cell in fluid grid".into()))?;
        let t = values[0];
        if times.last().is_some_and(|&prev| t < prev) {
            return Err(Error::Parse("times go backwards".into()));
        }
        times.push(t);
        levels.push(values[1..].to_vec());
    }
    Ok(FluidCsv {
        comments: table.comments,
        times,
        levels,
    })
}

/// Decodes any JSON report type, checking its `schema_version`.
pub fn decode_report<T: DeserializeOwned>(text: &str) -> Result<T> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == crate::SCHEMA_VERSION as u64 => {}
        Some(v) => return Err(Error::Parse(format!("unsupported schema_version {v}"))),
        None => return Err(Error::Parse("missing schema_version".into())),
    }
    serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))
}
