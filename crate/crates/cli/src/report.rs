//! Tabular and JSON output.

use std::path::Path;

use deltadpd::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::pipeline::PointResult;

pub const SWEEP_HEADER: &str = "theta_phi,theta_h,gamma,active_params,nmse_db,evm_dbc,\
acpr_left_dbc,acpr_right_dbc,mul,add,mem,energy_j,energy_reduction_factor";

/// One line of `sweep.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub theta_phi: f64,
    pub theta_h: f64,
    pub gamma: f64,
    pub active_params: f64,
    pub nmse_db: f64,
    pub evm_dbc: f64,
    pub acpr_left_dbc: f64,
    pub acpr_right_dbc: f64,
    pub mul: f64,
    pub add: f64,
    pub mem: f64,
    pub energy_j: f64,
    /// Dense energy divided by this row's energy.
    pub energy_reduction_factor: f64,
}

impl SweepRow {
    pub fn from_point(p: &PointResult, baseline_energy_j: f64) -> Self {
        let e = p.cost.energy_per_inference_j;
        Self {
            theta_phi: p.thresholds.theta_phi,
            theta_h: p.thresholds.theta_h,
            gamma: p.stats.gamma_overall(),
            active_params: p.cost.active_params,
            nmse_db: p.metrics.nmse_db,
            evm_dbc: p.metrics.evm_dbc,
            acpr_left_dbc: p.metrics.acpr_left_dbc,
            acpr_right_dbc: p.metrics.acpr_right_dbc,
            mul: p.cost.per_inference.mul,
            add: p.cost.per_inference.add,
            mem: p.cost.per_inference.mem,
            energy_j: e,
            energy_reduction_factor: if e > 0.0 { baseline_energy_j / e } else { f64::INFINITY },
        }
    }

    fn fields(&self) -> [f64; 13] {
        [
            self.theta_phi,
            self.theta_h,
            self.gamma,
            self.active_params,
            self.nmse_db,
            self.evm_dbc,
            self.acpr_left_dbc,
            self.acpr_right_dbc,
            self.mul,
            self.add,
            self.mem,
            self.energy_j,
            self.energy_reduction_factor,
        ]
    }

    /// Shortest round-trip formatting, so the CSV is byte-stable for equal values.
    pub fn to_csv_line(&self) -> String {
        self.fields().iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
    }

    pub fn parse_csv_line(line: &str) -> Result<Self> {
        let v: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Data(format!("bad sweep row {line:?}: {e}")))?;
        if v.len() != 13 {
            return Err(Error::Data(format!("sweep row has {} fields, expected 13", v.len())));
        }
        Ok(Self {
            theta_phi: v[0],
            theta_h: v[1],
            gamma: v[2],
            active_params: v[3],
            nmse_db: v[4],
            evm_dbc: v[5],
            acpr_left_dbc: v[6],
            acpr_right_dbc: v[7],
            mul: v[8],
            add: v[9],
            mem: v[10],
            energy_j: v[11],
            energy_reduction_factor: v[12],
        })
    }
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == SWEEP_HEADER => {}
        _ => return Err(Error::format(path, "missing or unexpected sweep header")),
    }
    lines.filter(|l| !l.is_empty()).map(SweepRow::parse_csv_line).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Fixed-width table for the terminal.
pub fn format_table(rows: &[SweepRow]) -> String {
    let mut s = format!(
        "{:>8} {:>8} {:>7} {:>9} {:>9} {:>9} {:>9} {:>11} {:>7}\n",
        "th_phi", "th_h", "gamma", "params", "NMSE dB", "ACPR L", "ACPR R", "energy J", "E red"
    );
    for r in rows {
        s.push_str(&format!(
            "{:>8.4} {:>8.4} {:>7.3} {:>9.1} {:>9.2} {:>9.2} {:>9.2} {:>11.3e} {:>7.2}\n",
            r.theta_phi,
            r.theta_h,
            r.gamma,
            r.active_params,
            r.nmse_db,
            r.acpr_left_dbc,
            r.acpr_right_dbc,
            r.energy_j,
            r.energy_reduction_factor
        ));
    }
    s
}
