//! Per-step telemetry rows and their CSV form.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Telemetry CSV header, in column order.
pub const TELEMETRY_COLUMNS: [&str; 21] = [
    "t",
    "z1",
    "z2",
    "z3",
    "z4",
    "xrm1",
    "xrm2",
    "xrm3",
    "xrm4",
    "e_norm",
    "V",
    "d1",
    "d2",
    "min_h",
    "u_c",
    "u_a",
    "sigma1",
    "sigma2",
    "model_index",
    "solver_status",
    "step_ms",
];

#[derive(Clone, Debug, PartialEq)]
pub struct TelemetryRow {
    pub t: f64,
    pub z: [f64; 4],
    pub xrm: [f64; 4],
    /// Position tracking error norm.
    pub e_norm: f64,
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
    /// `inf` when the scenario has no obstacles.
    pub min_h: f64,
    pub u_c: f64,
    pub u_a: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub model_index: usize,
    pub solver_status: String,
    /// Zero unless the scenario records timing.
    pub step_ms: f64,
}

impl TelemetryRow {
    fn fields(&self) -> Vec<String> {
        let mut f = Vec::with_capacity(TELEMETRY_COLUMNS.len());
        f.push(self.t.to_string());
        f.extend(self.z.iter().map(f64::to_string));
        f.extend(self.xrm.iter().map(f64::to_string));
        for v in [
            self.e_norm,
            self.v,
            self.d1,
            self.d2,
            self.min_h,
            self.u_c,
            self.u_a,
            self.sigma1,
            self.sigma2,
        ] {
            f.push(v.to_string());
        }
        f.push(self.model_index.to_string());
        f.push(self.solver_status.clone());
        f.push(self.step_ms.to_string());
        f
    }

    fn parse(rec: &csv::StringRecord) -> Result<Self> {
        if rec.len() != TELEMETRY_COLUMNS.len() {
            return Err(Error::Csv(format!(
                "expected {} columns, found {}",
                TELEMETRY_COLUMNS.len(),
                rec.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i].trim().parse::<f64>().map_err(|e| {
                Error::Csv(format!(
                    "{}: bad number {:?}: {e}",
                    TELEMETRY_COLUMNS[i], &rec[i]
                ))
            })
        };
        Ok(Self {
            t: num(0)?,
            z: [num(1)?, num(2)?, num(3)?, num(4)?],
            xrm: [num(5)?, num(6)?, num(7)?, num(8)?],
            e_norm: num(9)?,
            v: num(10)?,
            d1: num(11)?,
            d2: num(12)?,
            min_h: num(13)?,
            u_c: num(14)?,
            u_a: num(15)?,
            sigma1: num(16)?,
            sigma2: num(17)?,
            model_index: rec[18]
                .trim()
                .parse()
                .map_err(|e| Error::Csv(format!("model_index: bad integer {:?}: {e}", &rec[18])))?,
            solver_status: rec[19].to_string(),
            step_ms: num(20)?,
        })
    }
}

pub fn write_telemetry<W: Write>(writer: W, rows: &[TelemetryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TELEMETRY_COLUMNS)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_telemetry<R: Read>(reader: R) -> Result<Vec<TelemetryRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    if header.iter().ne(TELEMETRY_COLUMNS.iter().copied()) {
        return Err(Error::Csv(
            "telemetry header does not match the expected columns".into(),
        ));
    }
    r.records().map(|rec| TelemetryRow::parse(&rec?)).collect()
}
