//! CSV and JSON artifacts. Complex values are always two real columns.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::farfield::PatternCut;
use crate::mna::PortNetwork;
use crate::opt::TraceEntry;

fn writer<W: Write>(out: W, header: &[&str]) -> Result<csv::Writer<W>> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    Ok(w)
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

/// `segment,re_amp,im_amp`
pub fn write_currents<W: Write>(out: W, currents: &DVector<Complex64>) -> Result<()> {
    let mut w = writer(out, &["segment", "re_amp", "im_amp"])?;
    for (i, c) in currents.iter().enumerate() {
        w.write_record([i.to_string(), num(c.re), num(c.im)])?;
    }
    w.flush()?;
    Ok(())
}

/// `port_i,port_j,re_ohm,im_ohm`, row-major.
pub fn write_zmatrix<W: Write>(out: W, net: &PortNetwork) -> Result<()> {
    let mut w = writer(out, &["port_i", "port_j", "re_ohm", "im_ohm"])?;
    let n = net.num_ports();
    for i in 0..n {
        for j in 0..n {
            let z = net.z[(i, j)];
            w.write_record([i.to_string(), j.to_string(), num(z.re), num(z.im)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `ris_index,re_ohm,im_ohm`
pub fn write_loads<W: Write>(out: W, loads: &[Complex64]) -> Result<()> {
    let mut w = writer(out, &["ris_index", "re_ohm", "im_ohm"])?;
    for (i, z) in loads.iter().enumerate() {
        w.write_record([i.to_string(), num(z.re), num(z.im)])?;
    }
    w.flush()?;
    Ok(())
}

/// `step,sweep,ris_index,objective`
pub fn write_trace<W: Write>(out: W, trace: &[TraceEntry]) -> Result<()> {
    let mut w = writer(out, &["step", "sweep", "ris_index", "objective"])?;
    for t in trace {
        w.write_record([
            t.step.to_string(),
            t.sweep.to_string(),
            t.ris_index.to_string(),
            num(t.objective),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `angle_deg,gain_db`
pub fn write_pattern<W: Write>(out: W, cut: &PatternCut) -> Result<()> {
    let mut w = writer(out, &["angle_deg", "gain_db"])?;
    for s in &cut.samples {
        w.write_record([format!("{}", s.angle), format!("{}", s.gain_db)])?;
    }
    w.flush()?;
    Ok(())
}

fn input_error(source: &str, message: impl Into<String>) -> Error {
    Error::Input {
        path: source.to_string(),
        message: message.into(),
    }
}

/// Reads a loads CSV holding exactly one row per RIS index `0..expected`.
///
/// `source` names the input in error messages.
pub fn read_loads<R: Read>(input: R, expected: usize, source: &str) -> Result<Vec<Complex64>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = r.headers().map_err(|e| input_error(source, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != ["ris_index", "re_ohm", "im_ohm"] {
        return Err(input_error(source, "header must be ris_index,re_ohm,im_ohm"));
    }
    let mut loads: Vec<Option<Complex64>> = vec![None; expected];
    for (row, rec) in r.records().enumerate() {
        // data rows count from 1, after the header
        let row = row + 1;
        let rec = rec.map_err(|e| input_error(source, format!("row {row}: {e}")))?;
        if rec.len() != 3 {
            return Err(input_error(source, format!("row {row}: expected 3 fields, got {}", rec.len())));
        }
        let idx: usize = rec[0]
            .parse()
            .map_err(|_| input_error(source, format!("row {row}: bad ris_index {:?}", &rec[0])))?;
        let part = |k: usize, name: &str| -> Result<f64> {
            let v: f64 = rec[k]
                .parse()
                .map_err(|_| input_error(source, format!("row {row}: bad {name} {:?}", &rec[k])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(input_error(source, format!("row {row}: {name} must be finite")))
            }
        };
        let z = Complex64::new(part(1, "re_ohm")?, part(2, "im_ohm")?);
        let slot = loads.get_mut(idx).ok_or_else(|| {
            input_error(source, format!("row {row}: ris_index {idx} out of range (scenario has {expected} RIS ports)"))
        })?;
        if slot.is_some() {
            return Err(input_error(source, format!("row {row}: duplicate ris_index {idx}")));
        }
        *slot = Some(z);
    }
    loads
        .into_iter()
        .enumerate()
        .map(|(i, z)| z.ok_or_else(|| input_error(source, format!("missing ris_index {i}"))))
        .collect()
}

pub fn read_loads_file(path: &Path, expected: usize) -> Result<Vec<Complex64>> {
    let source = path.display().to_string();
    let f = std::fs::File::open(path).map_err(|e| input_error(&source, e.to_string()))?;
    read_loads(f, expected, &source)
}

/// Summary of one command run. Timings are wall-clock seconds per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunReport {
    pub command: String,
    pub scenario_digest: String,
    pub frequency_hz: f64,
    pub branches: usize,
    pub nodes: usize,
    pub ports: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective_before: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective_after: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_bps_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweeps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub random_baseline_best: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peak_angle_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub asymmetry: Option<f64>,
    pub timings_s: BTreeMap<String, f64>,
}

impl RunReport {
    pub fn write_json<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut out, self)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        writeln!(out)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Role;
    use nalgebra::DMatrix;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn to_string(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> String {
        let mut buf = Vec::new();
        f(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn loads_round_trip_bit_exact() {
        let loads = vec![c(0.0, -123.456789012345), c(0.0, 1e9), c(1.5e-7, -0.0), c(0.0, 1.0 / 3.0)];
        let text = to_string(|b| write_loads(b, &loads));
        assert!(text.starts_with("ris_index,re_ohm,im_ohm\n"));
        let back = read_loads(text.as_bytes(), 4, "mem").unwrap();
        assert_eq!(back, loads);
    }

    #[test]
    fn loads_errors_name_the_row() {
        let text = "ris_index,re_ohm,im_ohm\n0,0,1\n1,zero,2\n";
        let e = read_loads(text.as_bytes(), 2, "loads.csv").unwrap_err().to_string();
        assert!(e.contains("loads.csv") && e.contains("row 2"), "{e}");
        let text = "ris_index,re_ohm,im_ohm\n0,0,1\n0,0,2\n";
        assert!(read_loads(text.as_bytes(), 2, "x").unwrap_err().to_string().contains("row 2: duplicate"));
        let text = "ris_index,re_ohm,im_ohm\n0,0,1\n";
        assert!(read_loads(text.as_bytes(), 2, "x").unwrap_err().to_string().contains("missing ris_index 1"));
        let text = "ris_index,re_ohm,im_ohm\n5,0,1\n";
        assert!(read_loads(text.as_bytes(), 2, "x").unwrap_err().to_string().contains("row 1"));
        let text = "index,re,im\n0,0,1\n";
        assert!(read_loads(text.as_bytes(), 1, "x").is_err());
        let text = "ris_index,re_ohm,im_ohm\n0,0,inf\n";
        assert!(read_loads(text.as_bytes(), 1, "x").is_err());
    }

    #[test]
    fn zmatrix_rows_and_values() {
        let net = PortNetwork {
            z: DMatrix::from_row_slice(2, 2, &[c(73.0, 42.5), c(1.0, -2.0), c(1.0, -2.0), c(70.0, 40.0)]),
            roles: vec![Role::Tx, Role::Rx],
            dipoles: vec![0, 1],
            branches: vec![5, 16],
        };
        let text = to_string(|b| write_zmatrix(b, &net));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "port_i,port_j,re_ohm,im_ohm");
        assert_eq!(lines[1], "0,0,7.3e1,4.25e1");
        assert_eq!(lines[2], "0,1,1e0,-2e0");
    }

    #[test]
    fn trace_and_currents_headers() {
        let t = [TraceEntry { step: 1, sweep: 1, ris_index: 0, objective: 0.25 }];
        assert_eq!(to_string(|b| write_trace(b, &t)), "step,sweep,ris_index,objective\n1,1,0,2.5e-1\n");
        let i = DVector::from_vec(vec![c(1.0, -1.0)]);
        assert_eq!(to_string(|b| write_currents(b, &i)), "segment,re_amp,im_amp\n0,1e0,-1e0\n");
    }

    #[test]
    fn report_skips_absent_fields() {
        let r = RunReport { command: "zmatrix".into(), ..Default::default() };
        let text = to_string(|b| r.write_json(b));
        assert!(text.contains("\"command\": \"zmatrix\""));
        assert!(!text.contains("objective"));
        let back: RunReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
    }
}
