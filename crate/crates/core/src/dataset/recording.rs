use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;

/// Canonical EMG channel order.
pub const EMG_COLUMNS: [&str; 4] = ["emg_bf", "emg_rf", "emg_st", "emg_vm"];
pub const EMG_LABELS: [&str; 4] = ["BF", "RF", "ST", "VM"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    #[default]
    Normal,
    Abnormal,
    Exo,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Normal => "normal",
            Condition::Abnormal => "abnormal",
            Condition::Exo => "exo",
        })
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Condition::Normal),
            "abnormal" => Ok(Condition::Abnormal),
            "exo" => Ok(Condition::Exo),
            _ => Err(Error::Config(format!("unknown condition `{s}`"))),
        }
    }
}

/// Sidecar metadata stored next to a recording CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub subject_id: String,
    pub condition: Condition,
    pub trial_id: String,
    pub sample_rate_hz: f64,
}

/// One synchronized capture. All channels share `time_ms`.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub meta: RecordingMeta,
    pub time_ms: Vec<f64>,
    /// BF, RF, ST, VM in mV.
    pub emg: [Vec<f64>; 4],
    pub knee_angle_deg: Vec<f64>,
    pub hip_angle_deg: Option<Vec<f64>>,
    /// Thigh and shank interaction forces in N.
    pub forces: Option<[Vec<f64>; 2]>,
}

impl Recording {
    pub fn len(&self) -> usize {
        self.knee_angle_deg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knee_angle_deg.is_empty()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.meta.sample_rate_hz
    }

    pub fn has_forces(&self) -> bool {
        self.forces.is_some()
    }

    /// Checks equal channel lengths and finiteness.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::data("recording is empty"));
        }
        let mut channels: Vec<(&str, &[f64])> = vec![("time_ms", &self.time_ms), ("knee_angle_deg", &self.knee_angle_deg)];
        channels.extend(EMG_COLUMNS.iter().zip(&self.emg).map(|(c, v)| (*c, v.as_slice())));
        if let Some(h) = &self.hip_angle_deg {
            channels.push(("hip_angle_deg", h));
        }
        if let Some([t, s]) = &self.forces {
            channels.push(("force_thigh_n", t));
            channels.push(("force_shank_n", s));
        }
        for (name, ch) in channels {
            if ch.len() != n {
                return Err(Error::data(format!("channel {name} has {} samples, expected {n}", ch.len())));
            }
            if let Some(i) = ch.iter().position(|v| !v.is_finite()) {
                return Err(Error::data_at(i, format!("non-finite value in {name}")));
            }
        }
        Ok(())
    }

    /// Copy of samples `[0, len)`.
    pub fn truncated(&self, len: usize) -> Recording {
        let cut = |v: &Vec<f64>| v[..len.min(v.len())].to_vec();
        Recording {
            meta: self.meta.clone(),
            time_ms: cut(&self.time_ms),
            emg: [cut(&self.emg[0]), cut(&self.emg[1]), cut(&self.emg[2]), cut(&self.emg[3])],
            knee_angle_deg: cut(&self.knee_angle_deg),
            hip_angle_deg: self.hip_angle_deg.as_ref().map(cut),
            forces: self.forces.as_ref().map(|[a, b]| [cut(a), cut(b)]),
        }
    }
}

/// Path of the JSON sidecar for a recording CSV.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Reads a recording CSV (header required; column order free) and its
/// optional sidecar. Sample rate is inferred as `round(1 / median dt)`.
///
/// Data rows are reported by file line number (the header is line 1).
pub fn load_recording(path: &Path) -> Result<Recording> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers().map_err(|e| Error::data(format!("{}: {e}", path.display())))?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();

    let required = ["time_ms", "emg_bf", "emg_rf", "emg_st", "emg_vm", "knee_angle_deg"];
    for col in required {
        if !index.contains_key(col) {
            return Err(Error::MissingColumn { column: col.to_string() });
        }
    }
    let has_thigh = index.contains_key("force_thigh_n");
    let has_shank = index.contains_key("force_shank_n");
    if has_thigh != has_shank {
        let missing = if has_thigh { "force_shank_n" } else { "force_thigh_n" };
        return Err(Error::MissingColumn { column: missing.to_string() });
    }
    let has_hip = index.contains_key("hip_angle_deg");

    let mut cols: Vec<(&str, Vec<f64>)> = required.iter().map(|c| (*c, Vec::new())).collect();
    if has_hip {
        cols.push(("hip_angle_deg", Vec::new()));
    }
    if has_thigh {
        cols.push(("force_thigh_n", Vec::new()));
        cols.push(("force_shank_n", Vec::new()));
    }

    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| Error::data_at(line, e.to_string()))?;
        for (name, values) in cols.iter_mut() {
            let cell = record.get(index[name]).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| Error::data_at(line, format!("cannot parse `{cell}` in {name}")))?;
            if !v.is_finite() {
                return Err(Error::data_at(line, format!("non-finite value in {name}")));
            }
            values.push(v);
        }
    }
    let mut take = |name: &str| -> Vec<f64> {
        let i = cols.iter().position(|(n, _)| *n == name).expect("column registered");
        std::mem::take(&mut cols[i].1)
    };
    let time_ms = take("time_ms");
    if time_ms.is_empty() {
        return Err(Error::data(format!("{} has no data rows", path.display())));
    }
    if let Some(i) = time_ms.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::data_at(i + 3, "time_ms is not strictly increasing"));
    }
    let inferred_rate = if time_ms.len() > 1 {
        let dt = median(time_ms.windows(2).map(|w| w[1] - w[0]).collect());
        (1000.0 / dt).round()
    } else {
        1000.0
    };

    let sidecar = sidecar_path(path);
    let meta = if sidecar.exists() {
        let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let meta: RecordingMeta =
            serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", sidecar.display())))?;
        if (meta.sample_rate_hz - inferred_rate).abs() > 0.5 {
            return Err(Error::data(format!(
                "sidecar declares {} Hz but time column implies {inferred_rate} Hz",
                meta.sample_rate_hz
            )));
        }
        meta
    } else {
        RecordingMeta {
            subject_id: path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            condition: Condition::Normal,
            trial_id: "0".into(),
            sample_rate_hz: inferred_rate,
        }
    };

    let emg = [take("emg_bf"), take("emg_rf"), take("emg_st"), take("emg_vm")];
    let knee_angle_deg = take("knee_angle_deg");
    let hip_angle_deg = has_hip.then(|| take("hip_angle_deg"));
    let forces = has_thigh.then(|| [take("force_thigh_n"), take("force_shank_n")]);
    let rec = Recording { meta, time_ms, emg, knee_angle_deg, hip_angle_deg, forces };
    rec.validate()?;
    Ok(rec)
}

/// Writes the CSV and its sidecar atomically.
pub fn write_recording(rec: &Recording, path: &Path) -> Result<()> {
    rec.validate()?;
    let mut buf = Vec::with_capacity(rec.len() * 96);
    let mut header = vec!["time_ms", "emg_bf", "emg_rf", "emg_st", "emg_vm", "knee_angle_deg"];
    if rec.hip_angle_deg.is_some() {
        header.push("hip_angle_deg");
    }
    if rec.forces.is_some() {
        header.extend(["force_thigh_n", "force_shank_n"]);
    }
    writeln!(buf, "{}", header.join(",")).expect("write to vec");
    for i in 0..rec.len() {
        write!(
            buf,
            "{},{},{},{},{},{}",
            rec.time_ms[i], rec.emg[0][i], rec.emg[1][i], rec.emg[2][i], rec.emg[3][i], rec.knee_angle_deg[i]
        )
        .expect("write to vec");
        if let Some(h) = &rec.hip_angle_deg {
            write!(buf, ",{}", h[i]).expect("write to vec");
        }
        if let Some([t, s]) = &rec.forces {
            write!(buf, ",{},{}", t[i], s[i]).expect("write to vec");
        }
        buf.push(b'\n');
    }
    write_atomic(path, &buf)?;
    let meta = serde_json::to_vec_pretty(&rec.meta).expect("metadata serializes");
    write_atomic(&sidecar_path(path), &meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    fn rows(n: usize, header: &str, row: impl Fn(usize) -> String) -> String {
        let mut s = format!("{header}\n");
        for i in 0..n {
            s.push_str(&row(i));
            s.push('\n');
        }
        s
    }

    #[test]
    fn loads_minimal_file_without_forces() {
        let dir = tempfile::tempdir().unwrap();
        let text = rows(5000, "time_ms,emg_bf,emg_rf,emg_st,emg_vm,knee_angle_deg", |i| {
            format!("{i},0.1,0.2,0.3,0.4,{}", i as f64 * 0.001)
        });
        let rec = load_recording(&write(dir.path(), "s1.csv", &text)).unwrap();
        assert_eq!(rec.len(), 5000);
        assert!(rec.forces.is_none());
        assert_eq!(rec.sample_rate_hz(), 1000.0);
        assert_eq!(rec.meta.subject_id, "s1");
    }

    #[test]
    fn columns_are_reordered_to_canonical() {
        let dir = tempfile::tempdir().unwrap();
        let text = rows(3, "knee_angle_deg,emg_vm,emg_st,emg_rf,emg_bf,time_ms", |i| format!("10,4,3,2,1,{i}"));
        let rec = load_recording(&write(dir.path(), "r.csv", &text)).unwrap();
        assert_eq!([rec.emg[0][0], rec.emg[1][0], rec.emg[2][0], rec.emg[3][0]], [1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn missing_column_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let text = rows(3, "time_ms,emg_bf,emg_rf,emg_st,knee_angle_deg", |i| format!("{i},1,2,3,4"));
        match load_recording(&write(dir.path(), "r.csv", &text)) {
            Err(Error::MissingColumn { column }) => assert_eq!(column, "emg_vm"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn nan_cell_reports_row() {
        let dir = tempfile::tempdir().unwrap();
        let text = rows(10, "time_ms,emg_bf,emg_rf,emg_st,emg_vm,knee_angle_deg", |i| {
            if i == 4 {
                format!("{i},1,NaN,3,4,5")
            } else {
                format!("{i},1,2,3,4,5")
            }
        });
        assert!(matches!(load_recording(&write(dir.path(), "r.csv", &text)), Err(Error::Data { row: Some(6), .. })));
    }

    #[test]
    fn non_monotonic_time_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let text = "time_ms,emg_bf,emg_rf,emg_st,emg_vm,knee_angle_deg\n0,1,1,1,1,1\n2,1,1,1,1,1\n1,1,1,1,1,1\n";
        assert!(matches!(load_recording(&write(dir.path(), "r.csv", text)), Err(Error::Data { .. })));
    }

    #[test]
    fn rate_is_inferred_from_median_step() {
        let dir = tempfile::tempdir().unwrap();
        let text = rows(5000, "time_ms,emg_bf,emg_rf,emg_st,emg_vm,knee_angle_deg", |i| format!("{},0,0,0,0,0", i));
        assert_eq!(load_recording(&write(dir.path(), "a.csv", &text)).unwrap().sample_rate_hz(), 1000.0);
        let text = rows(500, "time_ms,emg_bf,emg_rf,emg_st,emg_vm,knee_angle_deg", |i| format!("{},0,0,0,0,0", 2 * i));
        assert_eq!(load_recording(&write(dir.path(), "b.csv", &text)).unwrap().sample_rate_hz(), 500.0);
    }

    #[test]
    fn half_a_force_pair_is_a_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let text = rows(3, "time_ms,emg_bf,emg_rf,emg_st,emg_vm,knee_angle_deg,force_thigh_n", |i| {
            format!("{i},1,2,3,4,5,6")
        });
        assert!(matches!(load_recording(&write(dir.path(), "r.csv", &text)), Err(Error::MissingColumn { .. })));
    }
}
