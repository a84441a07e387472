//! CSV formats for epochs, manifests, demographics and cohorts.
//!
//! Floats are written with Rust's shortest round-trip representation, so a
//! written cohort reads back bit-identical.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, Demographics, EpisodeRecord, Feature, Gender, Label};
use crate::signals::{DynamicFeatures, Slot, VitalSignEpoch};
use crate::{Error, Result};

pub const EPOCH_HEADER: [&str; 3] = ["t_s", "hr_bpm", "spo2_pct"];
pub const COHORT_HEADER: [&str; 14] = [
    "record_id", "gen", "ga_wk", "bw_g", "w_g", "pna_wk", "xc", "sa", "hrm", "spo2m", "hs", "brs", "ts", "label",
];

fn format_err(path: &Path, message: impl std::fmt::Display) -> Error {
    Error::Format {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path)?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn check_header(path: &Path, rdr: &mut csv::Reader<fs::File>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(|e| format_err(path, e))?;
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(format_err(
            path,
            format!("header {:?}, expected {:?}", got.join(","), expected.join(",")),
        ));
    }
    Ok(())
}

/// Writes `contents` to `path` through a sibling temporary file and a rename,
/// so a failed write never leaves a partial file behind.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path)?;
    serde_json::from_str(&s).map_err(|e| format_err(path, e))
}

#[derive(Debug, Deserialize)]
struct EpochRow {
    t_s: i64,
    hr_bpm: f64,
    spo2_pct: f64,
}

/// Reads one epoch CSV (`t_s,hr_bpm,spo2_pct`, strictly increasing `t_s`).
pub fn read_epoch(path: &Path, infant_id: &str, date: NaiveDate, slot: Slot) -> Result<VitalSignEpoch> {
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, &EPOCH_HEADER)?;
    let (mut hr, mut spo2) = (Vec::new(), Vec::new());
    let mut last: Option<i64> = None;
    for (i, row) in rdr.deserialize::<EpochRow>().enumerate() {
        let row = row.map_err(|e| format_err(path, e))?;
        if last.is_some_and(|t| row.t_s <= t) {
            return Err(format_err(path, format!("row {}: t_s {} not increasing", i + 1, row.t_s)));
        }
        last = Some(row.t_s);
        hr.push(row.hr_bpm);
        spo2.push(row.spo2_pct);
    }
    Ok(VitalSignEpoch::new(infant_id, date, slot, hr, spo2)?)
}

pub fn epoch_csv(epoch: &VitalSignEpoch) -> String {
    let mut s = String::with_capacity(epoch.len() * 16);
    s.push_str(&EPOCH_HEADER.join(","));
    s.push('\n');
    for (t, (h, o)) in epoch.hr().iter().zip(epoch.spo2()).enumerate() {
        s.push_str(&format!("{t},{h},{o}\n"));
    }
    s
}

pub fn write_epoch(path: &Path, epoch: &VitalSignEpoch) -> Result<()> {
    write_atomic(path, epoch_csv(epoch).as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub infant_id: String,
    pub date: NaiveDate,
    pub slot: Slot,
    /// Epoch CSV path, relative to the manifest's directory unless absolute.
    pub path: PathBuf,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, &["infant_id", "date", "slot", "path"])?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| format_err(path, e)))
        .collect()
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for e in entries {
        w.serialize(e).map_err(|e| format_err(path, e))?;
    }
    write_atomic(path, &w.into_inner().map_err(|e| format_err(path, e))?)
}

/// Per infant-day demographics and ground-truth label, keyed like the
/// manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographicsRow {
    pub infant_id: String,
    pub date: NaiveDate,
    pub gen: String,
    pub ga_wk: f64,
    pub bw_g: f64,
    pub w_g: f64,
    pub pna_wk: f64,
    pub label: String,
}

impl DemographicsRow {
    pub fn record_id(&self) -> String {
        record_id(&self.infant_id, self.date)
    }

    pub fn parse(&self) -> std::result::Result<(Demographics, Label), String> {
        let gen: Gender = self.gen.parse()?;
        let label: Label = self.label.parse()?;
        let d = Demographics {
            gen,
            ga: self.ga_wk,
            bw: self.bw_g,
            w: self.w_g,
            pna: self.pna_wk,
        };
        d.validate()?;
        Ok((d, label))
    }
}

pub fn record_id(infant_id: &str, date: NaiveDate) -> String {
    format!("{infant_id}_{date}")
}

pub fn read_demographics(path: &Path) -> Result<Vec<DemographicsRow>> {
    let mut rdr = reader(path)?;
    check_header(
        path,
        &mut rdr,
        &["infant_id", "date", "gen", "ga_wk", "bw_g", "w_g", "pna_wk", "label"],
    )?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| format_err(path, e)))
        .collect()
}

pub fn write_demographics(path: &Path, rows: &[DemographicsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| format_err(path, e))?;
    }
    write_atomic(path, &w.into_inner().map_err(|e| format_err(path, e))?)
}

/// Sidecar listing a cohort's active features, stored next to the CSV when
/// pruning has removed any.
pub fn features_sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".features.json");
    path.with_file_name(name)
}

pub fn cohort_csv(cohort: &Cohort) -> String {
    let mut s = COHORT_HEADER.join(",");
    s.push('\n');
    for r in cohort.records() {
        let d = &r.demographics;
        let f = &r.features;
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.record_id, d.gen, d.ga, d.bw, d.w, d.pna, f.xc_hr_spo2, f.sa_hr, f.hrm, f.spo2m, f.hs, f.brs, f.ts, r.label
        ));
    }
    s
}

/// Writes the cohort CSV and, if not every feature is active, the
/// active-feature sidecar (a stale sidecar is removed otherwise).
pub fn write_cohort(path: &Path, cohort: &Cohort) -> Result<()> {
    write_atomic(path, cohort_csv(cohort).as_bytes())?;
    let sidecar = features_sidecar(path);
    if cohort.active_features() != Feature::ALL {
        write_json(&sidecar, &cohort.active_features())?;
    } else if sidecar.exists() {
        fs::remove_file(sidecar)?;
    }
    Ok(())
}

pub fn parse_cohort_csv(path: &Path, text: &str) -> Result<Vec<EpisodeRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| format_err(path, e))?;
    let got: Vec<&str> = header.iter().collect();
    if got != COHORT_HEADER {
        return Err(format_err(path, format!("header {:?}, expected {:?}", got.join(","), COHORT_HEADER.join(","))));
    }
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| format_err(path, e))?;
        let line = i + 2;
        let num = |j: usize| -> Result<f64> {
            row[j]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format_err(path, format!("line {line}: {} = '{}' is not a number", COHORT_HEADER[j], &row[j])))
        };
        let gen: Gender = row[1].parse().map_err(|e| format_err(path, format!("line {line}: {e}")))?;
        let label: Label = row[13].parse().map_err(|e| format_err(path, format!("line {line}: {e}")))?;
        records.push(EpisodeRecord {
            record_id: row[0].to_string(),
            demographics: Demographics {
                gen,
                ga: num(2)?,
                bw: num(3)?,
                w: num(4)?,
                pna: num(5)?,
            },
            features: DynamicFeatures {
                xc_hr_spo2: num(6)?,
                sa_hr: num(7)?,
                hrm: num(8)?,
                spo2m: num(9)?,
                hs: num(10)?,
                brs: num(11)?,
                ts: num(12)?,
            },
            label,
        });
    }
    Ok(records)
}

/// Reads a cohort CSV, restoring the active-feature list from its sidecar
/// when present.
pub fn read_cohort(path: &Path) -> Result<Cohort> {
    let text = fs::read_to_string(path)?;
    let records = parse_cohort_csv(path, &text)?;
    let sidecar = features_sidecar(path);
    let cohort = if sidecar.exists() {
        let features: Vec<Feature> = read_json(&sidecar)?;
        Cohort::with_features(records, features)?
    } else {
        Cohort::new(records)?
    };
    Ok(cohort)
}
