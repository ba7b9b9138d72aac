//! Parameter sweeps: a grid file declares per-key override axes, and every
//! point of their Cartesian product runs as an independent experiment.

use std::path::{Path, PathBuf};

use crate::config::{build_config, Pair};
use crate::runner::{run_experiment, RunOutput, SUMMARY_CSV_HEADER};

/// One grid axis: a config key and the values it sweeps over.
#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    pub key: String,
    pub values: Vec<String>,
}

/// Parses a grid file in the same flat format as configs, one axis per
/// line: `learner.c_b = 1 2 4`. An empty file means a single base run.
pub fn parse_grid(text: &str) -> Result<Vec<GridAxis>, Vec<String>> {
    let mut axes: Vec<GridAxis> = Vec::new();
    let mut errors = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, values)) = content.split_once('=') else {
            errors.push(format!("grid line {line}: expected `key = v1 v2 ...`"));
            continue;
        };
        let key = key.trim().to_string();
        let values: Vec<String> =
            values.split_whitespace().map(str::to_string).collect();
        if values.is_empty() {
            errors.push(format!("grid axis `{key}` has no values (line {line})"));
            continue;
        }
        if axes.iter().any(|a| a.key == key) {
            errors.push(format!("grid axis `{key}` declared twice (line {line})"));
            continue;
        }
        axes.push(GridAxis { key, values });
    }
    if errors.is_empty() {
        Ok(axes)
    } else {
        Err(errors)
    }
}

#[derive(Debug)]
pub struct CellOutcome {
    pub index: usize,
    pub overrides: Vec<(String, String)>,
    pub dir: PathBuf,
    pub result: Result<RunOutput, Vec<String>>,
}

impl CellOutcome {
    pub fn is_ok(&self) -> bool {
        matches!(&self.result, Ok(output) if output.all_ok())
    }

    /// `key=value` pairs joined for logs and the merged summary.
    pub fn label(&self) -> String {
        if self.overrides.is_empty() {
            "base".to_string()
        } else {
            self.overrides
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(";")
        }
    }
}

#[derive(Debug)]
pub struct SweepOutput {
    pub out_dir: PathBuf,
    pub cells: Vec<CellOutcome>,
    pub summary_path: PathBuf,
}

impl SweepOutput {
    pub fn all_ok(&self) -> bool {
        self.cells.iter().all(CellOutcome::is_ok)
    }
}

fn apply_overrides(base: &[Pair], overrides: &[(String, String)]) -> Vec<Pair> {
    let mut pairs = base.to_vec();
    for (key, value) in overrides {
        match pairs.iter_mut().find(|p| &p.key == key) {
            Some(pair) => pair.value = value.clone(),
            None => pairs.push(Pair { key: key.clone(), value: value.clone(), line: 0 }),
        }
    }
    pairs
}

fn cell_dir_name(index: usize, overrides: &[(String, String)]) -> String {
    let mut name = format!("cell_{index:03}");
    for (key, value) in overrides {
        let safe: String = format!("{key}={value}")
            .chars()
            .map(|c| if c.is_alphanumeric() || c == '.' || c == '=' || c == '-' { c } else { '_' })
            .collect();
        name.push_str("__");
        name.push_str(&safe);
    }
    name
}

/// Runs the full Cartesian product of the axes over the base assignments.
/// Each cell is validated and run in isolation; an invalid or failing cell
/// is recorded and the remaining cells still run. With no axes, the base
/// config runs as the single cell.
pub fn run_sweep(
    base: &[Pair],
    axes: &[GridAxis],
    out_dir: &Path,
) -> Result<SweepOutput, String> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| format!("cannot create {}: {e}", out_dir.display()))?;
    let mut cells = Vec::new();
    let mut odometer = vec![0usize; axes.len()];
    loop {
        let overrides: Vec<(String, String)> = axes
            .iter()
            .zip(&odometer)
            .map(|(axis, &i)| (axis.key.clone(), axis.values[i].clone()))
            .collect();
        let index = cells.len();
        let dir = out_dir.join(cell_dir_name(index, &overrides));
        let result = match build_config(&apply_overrides(base, &overrides)) {
            Ok(parsed) => run_experiment(&parsed.config, &dir).map_err(|e| vec![e]),
            Err(errors) => Err(errors),
        };
        cells.push(CellOutcome { index, overrides, dir, result });

        // Advance the mixed-radix counter; done when it wraps around.
        let mut pos = 0;
        loop {
            if pos == axes.len() {
                let summary_path = write_sweep_summary(out_dir, &cells)?;
                return Ok(SweepOutput { out_dir: out_dir.to_path_buf(), cells, summary_path });
            }
            odometer[pos] += 1;
            if odometer[pos] < axes[pos].values.len() {
                break;
            }
            odometer[pos] = 0;
            pos += 1;
        }
    }
}

pub const SWEEP_SUMMARY_PREFIX: &str = "cell,overrides,";

fn write_sweep_summary(out_dir: &Path, cells: &[CellOutcome]) -> Result<PathBuf, String> {
    let mut text = format!("{SWEEP_SUMMARY_PREFIX}{SUMMARY_CSV_HEADER}\n");
    for cell in cells {
        match &cell.result {
            Ok(output) => {
                let summary = std::fs::read_to_string(&output.summary_path)
                    .map_err(|e| format!("cannot reread cell summary: {e}"))?;
                for row in summary.lines().skip(1) {
                    text.push_str(&format!("{},{},{row}\n", cell.index, cell.label()));
                }
            }
            Err(errors) => {
                let cleaned: String = errors
                    .join("; ")
                    .chars()
                    .map(|c| if c == ',' || c == '\n' { ';' } else { c })
                    .collect();
                text.push_str(&format!(
                    "{},{},,error,,,,,,,{cleaned}\n",
                    cell.index,
                    cell.label()
                ));
            }
        }
    }
    let path = out_dir.join("sweep_summary.csv");
    std::fs::write(&path, &text).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    Ok(path)
}
