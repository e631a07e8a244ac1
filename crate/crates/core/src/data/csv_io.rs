//! Plain-text record format.
//!
//! `<stem>.csv`: first line `fs,leads,patient_id`; then one line per sample
//! with one comma-separated column per lead. Optional sidecars:
//! `<stem>.qrs` (one R-peak sample index per line) and `<stem>.labels`
//! (one line of comma-separated class IDs).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::EcgRecord;
use crate::error::{Error, Result};

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_optional(path: &Path) -> Result<Option<String>> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(Some(s)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn parse_record(text: &str) -> Result<EcgRecord> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let fields: Vec<&str> = header.split(',').map(str::trim).collect();
    if fields.len() != 3 {
        return Err(parse_err(1, format!("header needs `fs,leads,patient_id`, got {} fields", fields.len())));
    }
    let fs: f64 = fields[0]
        .parse()
        .map_err(|_| parse_err(1, format!("bad sampling rate `{}`", fields[0])))?;
    if !fs.is_finite() || fs <= 0.0 {
        return Err(parse_err(1, "sampling rate must be > 0"));
    }
    let leads: usize = fields[1]
        .parse()
        .map_err(|_| parse_err(1, format!("bad lead count `{}`", fields[1])))?;
    if leads == 0 {
        return Err(parse_err(1, "lead count must be >= 1"));
    }
    let patient_id = fields[2].to_string();
    let mut signal = vec![Vec::new(); leads];
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != leads {
            return Err(parse_err(
                i + 1,
                format!("header declares {leads} leads, row has {} columns", cols.len()),
            ));
        }
        for (lead, c) in signal.iter_mut().zip(cols) {
            lead.push(
                c.trim()
                    .parse::<f32>()
                    .map_err(|_| parse_err(i + 1, format!("bad sample value `{c}`")))?,
            );
        }
    }
    Ok(EcgRecord {
        signal,
        fs,
        qrs: None,
        labels: None,
        patient_id,
    })
}

fn parse_qrs(text: &str) -> Result<Vec<usize>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|_| parse_err(i + 1, format!("bad sample index `{l}`")))
        })
        .collect()
}

fn parse_labels(text: &str) -> Result<Vec<u32>> {
    let line = text.lines().next().unwrap_or("").trim();
    if line.is_empty() {
        return Ok(vec![]);
    }
    line.split(',')
        .map(|c| {
            c.trim()
                .parse()
                .map_err(|_| parse_err(1, format!("bad class id `{c}`")))
        })
        .collect()
}

fn load_file(path: &Path) -> Result<EcgRecord> {
    let mut rec = parse_record(&read(path)?)?;
    if let Some(t) = read_optional(&path.with_extension("qrs"))? {
        rec.qrs = Some(parse_qrs(&t)?);
    }
    if let Some(t) = read_optional(&path.with_extension("labels"))? {
        rec.labels = Some(parse_labels(&t)?);
    }
    rec.validate()?;
    Ok(rec)
}

/// Loads one `.csv` file, or every `.csv` file of a directory in name order.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<EcgRecord>> {
    let path = path.as_ref();
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        files.iter().map(|p| load_file(p)).collect()
    } else {
        Ok(vec![load_file(path)?])
    }
}

pub fn record_to_csv(rec: &EcgRecord) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{},{},{}", rec.fs, rec.leads(), rec.patient_id);
    for i in 0..rec.samples() {
        for (l, lead) in rec.signal.iter().enumerate() {
            if l > 0 {
                s.push(',');
            }
            let _ = write!(s, "{}", lead[i]);
        }
        s.push('\n');
    }
    s
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `rec_0000.csv`, … (plus sidecars) into `dir`; returns the CSV paths.
pub fn save_csv(records: &[EcgRecord], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        let p = dir.join(format!("rec_{i:04}.csv"));
        write(&p, &record_to_csv(rec))?;
        if let Some(q) = &rec.qrs {
            let t: String = q.iter().map(|v| format!("{v}\n")).collect();
            write(&p.with_extension("qrs"), &t)?;
        }
        if let Some(l) = &rec.labels {
            let t = l.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
            write(&p.with_extension("labels"), &format!("{t}\n"))?;
        }
        out.push(p);
    }
    Ok(out)
}
