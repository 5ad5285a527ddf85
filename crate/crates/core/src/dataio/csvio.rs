//! CSV recordings (`ch1..chC,label,repetition`) with `key=value` metadata sidecars.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{Recording, SubjectMeta, WindowedDataset};
use crate::error::{Error, Result};

/// Reads a recording and its metadata sidecar.
pub fn load_csv(path: &Path, meta_path: &Path) -> Result<Recording> {
    let (sampling_rate, subject) = read_meta(meta_path)?;

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(path, 0, e.to_string()))?;

    let header = reader
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::parse(path, 1, "empty file"));
    }
    let label_col = header
        .iter()
        .position(|h| h == "label")
        .ok_or_else(|| Error::parse(path, 1, "missing `label` column"))?;
    let rep_col = header
        .iter()
        .position(|h| h == "repetition")
        .ok_or_else(|| Error::parse(path, 1, "missing `repetition` column"))?;
    let channel_cols: Vec<usize> = (1..)
        .map_while(|c| header.iter().position(|h| h == format!("ch{c}")))
        .collect();
    if channel_cols.is_empty() {
        return Err(Error::parse(path, 1, "no `ch1..chC` columns"));
    }
    let expected = channel_cols.len() + 2;
    if header.len() != expected {
        return Err(Error::parse(
            path,
            1,
            format!(
                "expected columns ch1..ch{},label,repetition; found {} columns",
                channel_cols.len(),
                header.len()
            ),
        ));
    }

    let mut channels = vec![Vec::new(); channel_cols.len()];
    let mut labels = Vec::new();
    let mut repetitions = Vec::new();
    for result in reader.records() {
        let record = result.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != expected {
            return Err(Error::parse(
                path,
                line,
                format!("row has {} fields, expected {expected}", record.len()),
            ));
        }
        for (c, &col) in channel_cols.iter().enumerate() {
            let v: f64 = record[col].parse().map_err(|_| {
                Error::parse(
                    path,
                    line,
                    format!("ch{}: not a number: {:?}", c + 1, &record[col]),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::parse(
                    path,
                    line,
                    format!("ch{}: non-finite value {:?}", c + 1, &record[col]),
                ));
            }
            channels[c].push(v);
        }
        labels.push(record[label_col].parse::<usize>().map_err(|_| {
            Error::parse(path, line, format!("bad label {:?}", &record[label_col]))
        })?);
        repetitions.push(record[rep_col].parse::<u32>().map_err(|_| {
            Error::parse(path, line, format!("bad repetition {:?}", &record[rep_col]))
        })?);
    }
    if labels.is_empty() {
        return Err(Error::parse(path, 2, "no data rows"));
    }

    Recording::new(channels, sampling_rate, labels, repetitions, subject)
        .map_err(|e| Error::parse(path, 0, e.to_string()))
}

/// Writes `ch1..chC,label,repetition`. Values use the shortest representation
/// that parses back to the same `f64`.
pub fn save_csv(rec: &Recording, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    let mut header: Vec<String> = (1..=rec.num_channels()).map(|c| format!("ch{c}")).collect();
    header.push("label".into());
    header.push("repetition".into());
    w.write_record(&header).map_err(csv_io)?;
    let mut row = Vec::with_capacity(header.len());
    for j in 0..rec.len() {
        row.clear();
        row.extend(rec.channels.iter().map(|ch| ch[j].to_string()));
        row.push(rec.labels[j].to_string());
        row.push(rec.repetitions[j].to_string());
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per window: the given column names, then `label`.
pub fn write_dataset_csv(path: &Path, columns: &[String], ds: &WindowedDataset) -> Result<()> {
    if columns.len() != ds.width() {
        return Err(Error::Shape(format!(
            "{} column names for rows of width {}",
            columns.len(),
            ds.width()
        )));
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    let mut header = columns.to_vec();
    header.push("label".into());
    w.write_record(&header).map_err(csv_io)?;
    for (row, label) in ds.inputs.iter().zip(&ds.labels) {
        let mut rec: Vec<String> = row.iter().map(f64::to_string).collect();
        rec.push(label.to_string());
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Some(true),
        "0" | "false" | "no" => Some(false),
        _ => None,
    }
}

/// Parses a `key=value` sidecar into the sampling rate and subject metadata.
pub fn read_meta(path: &Path) -> Result<(f64, SubjectMeta)> {
    let text = fs::read_to_string(path).map_err(|e| Error::parse(path, 0, e.to_string()))?;
    let mut rate = None;
    let mut subject = SubjectMeta::new("");
    let mut have_id = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(path, line_no, "expected key=value"))?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |what: &str| Error::parse(path, line_no, format!("bad {what}: {value:?}"));
        match key {
            "sampling_rate" => {
                let r: f64 = value.parse().map_err(|_| bad("sampling_rate"))?;
                if !(r.is_finite() && r > 0.0) {
                    return Err(bad("sampling_rate"));
                }
                rate = Some(r);
            }
            "subject_id" => {
                subject.id = value.to_string();
                have_id = true;
            }
            "amputee" => subject.amputee = parse_bool(value).ok_or_else(|| bad("amputee"))?,
            "dash_score" => {
                let d: f64 = value.parse().map_err(|_| bad("dash_score"))?;
                if !(0.0..=100.0).contains(&d) {
                    return Err(bad("dash_score"));
                }
                subject.dash_score = Some(d);
            }
            "remaining_forearm_pct" => {
                subject.remaining_forearm_pct =
                    Some(value.parse().map_err(|_| bad("remaining_forearm_pct"))?)
            }
            "phantom_intensity" => {
                let p: u8 = value.parse().map_err(|_| bad("phantom_intensity"))?;
                if p > 5 {
                    return Err(bad("phantom_intensity"));
                }
                subject.phantom_intensity = Some(p);
            }
            // Unknown keys (converter provenance and the like) are ignored.
            _ => {}
        }
    }
    let rate = rate.ok_or_else(|| Error::parse(path, 0, "missing sampling_rate"))?;
    if !have_id {
        return Err(Error::parse(path, 0, "missing subject_id"));
    }
    Ok((rate, subject))
}

pub fn write_meta(path: &Path, sampling_rate: f64, subject: &SubjectMeta) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "sampling_rate={sampling_rate}")?;
    writeln!(f, "subject_id={}", subject.id)?;
    writeln!(f, "amputee={}", subject.amputee)?;
    if let Some(d) = subject.dash_score {
        writeln!(f, "dash_score={d}")?;
    }
    if let Some(p) = subject.remaining_forearm_pct {
        writeln!(f, "remaining_forearm_pct={p}")?;
    }
    if let Some(p) = subject.phantom_intensity {
        writeln!(f, "phantom_intensity={p}")?;
    }
    Ok(())
}

/// Writes `rec000.csv`, `rec000.meta.txt`, ... into `dir`, creating it if needed.
pub fn save_dir(dir: &Path, recordings: &[Recording]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (i, rec) in recordings.iter().enumerate() {
        let csv_path = dir.join(format!("rec{i:03}.csv"));
        save_csv(rec, &csv_path)?;
        write_meta(
            &dir.join(format!("rec{i:03}.meta.txt")),
            rec.sampling_rate,
            &rec.subject,
        )?;
        written.push(csv_path);
    }
    Ok(written)
}

/// Sidecar for `foo.csv`: `foo.meta.txt` if present, else `meta.txt` beside it.
fn sidecar_for(csv_path: &Path) -> Option<PathBuf> {
    let stem = csv_path.file_stem()?.to_string_lossy().into_owned();
    let dir = csv_path.parent()?;
    let own = dir.join(format!("{stem}.meta.txt"));
    if own.is_file() {
        return Some(own);
    }
    let shared = dir.join("meta.txt");
    shared.is_file().then_some(shared)
}

/// Loads every `*.csv` in `dir`, sorted by file name. A single CSV path also works.
pub fn load_dir(dir: &Path) -> Result<Vec<Recording>> {
    let mut files: Vec<PathBuf> = if dir.is_file() {
        vec![dir.to_path_buf()]
    } else {
        fs::read_dir(dir)
            .map_err(|e| Error::parse(dir, 0, e.to_string()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect()
    };
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyOutput(format!(
            "no .csv recordings in {}",
            dir.display()
        )));
    }
    files
        .iter()
        .map(|f| {
            let meta = sidecar_for(f).ok_or_else(|| {
                Error::parse(f, 0, "no metadata sidecar (<name>.meta.txt or meta.txt)")
            })?;
            load_csv(f, &meta)
        })
        .collect()
}
