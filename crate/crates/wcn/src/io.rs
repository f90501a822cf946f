//! CSV dialect for frames, period tables, loss curves, metric reports and
//! tuning histories.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use chrono::{DateTime, NaiveDate, NaiveDateTime, SecondsFormat, Utc};
use wcn_core::metrics::MetricReport;
use wcn_core::period::PeriodSet;
use wcn_core::tpe::{SearchSpace, TrialHistory};
use wcn_core::training::EpochRecord;
use wcn_core::{Matrix, TimeOrigin, TimeSeriesFrame};

enum Stamp {
    Index(i64),
    Seconds(f64),
}

fn parse_stamp(text: &str) -> Option<Stamp> {
    let text = text.trim();
    if let Ok(i) = text.parse::<i64>() {
        return Some(Stamp::Index(i));
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        return Some(Stamp::Seconds(
            dt.timestamp() as f64 + dt.timestamp_subsec_nanos() as f64 * 1e-9,
        ));
    }
    let naive = ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(text, f).ok())
        .or_else(|| {
            NaiveDate::parse_from_str(text, "%Y-%m-%d")
                .ok()
                .and_then(|d| d.and_hms_opt(0, 0, 0))
        })?;
    let utc = naive.and_utc();
    Some(Stamp::Seconds(
        utc.timestamp() as f64 + utc.timestamp_subsec_nanos() as f64 * 1e-9,
    ))
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("nan")
}

/// Reads `timestamp,<channel>...` with integer or ISO-8601 timestamps.
pub fn load_csv(path: &Path, sample_freq: f64) -> Result<TimeSeriesFrame> {
    let file = File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let header = rdr.headers()?.clone();
    if header.len() < 2 {
        bail!(
            "{}: header needs a timestamp column and at least one channel",
            path.display()
        );
    }
    let names: Vec<String> = header
        .iter()
        .skip(1)
        .map(|s| s.trim().to_string())
        .collect();
    let n = names.len();

    let mut values = Vec::new();
    let mut mask = Vec::new();
    let mut stamps: Vec<Stamp> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != n + 1 {
            bail!(
                "{}: line {line} has {} columns, header has {}",
                path.display(),
                rec.len(),
                n + 1
            );
        }
        let stamp = parse_stamp(&rec[0]).ok_or_else(|| {
            anyhow!(
                "{}: line {line}: unreadable timestamp `{}`",
                path.display(),
                &rec[0]
            )
        })?;
        let increasing = match (stamps.last(), &stamp) {
            (None, _) => true,
            (Some(Stamp::Index(a)), Stamp::Index(b)) => b > a,
            (Some(Stamp::Seconds(a)), Stamp::Seconds(b)) => b > a,
            _ => bail!("{}: line {line}: timestamp kinds are mixed", path.display()),
        };
        if !increasing {
            bail!("{}: line {line}: non-monotone timestamps", path.display());
        }
        stamps.push(stamp);
        for cell in rec.iter().skip(1) {
            if is_missing(cell) {
                values.push(f64::NAN);
                mask.push(false);
            } else {
                let v: f64 = cell.trim().parse().map_err(|_| {
                    anyhow!("{}: line {line}: `{cell}` is not a number", path.display())
                })?;
                values.push(v);
                mask.push(v.is_finite());
            }
        }
    }
    if stamps.is_empty() {
        bail!("{}: zero data rows", path.display());
    }
    let start = match stamps[0] {
        Stamp::Index(i) => TimeOrigin::SampleIndex(i),
        Stamp::Seconds(s) => TimeOrigin::UnixSeconds(s),
    };
    let rows = stamps.len();
    Ok(TimeSeriesFrame::new(
        Matrix::from_vec(rows, n, values)?,
        mask,
        sample_freq,
        names,
        start,
    )?)
}

fn format_stamp(origin: TimeOrigin) -> String {
    match origin {
        TimeOrigin::SampleIndex(i) => i.to_string(),
        TimeOrigin::UnixSeconds(s) => {
            let secs = s.floor();
            let nanos = ((s - secs) * 1e9).round() as u32;
            DateTime::<Utc>::from_timestamp(secs as i64, nanos.min(999_999_999))
                .map(|d| d.to_rfc3339_opts(SecondsFormat::AutoSi, true))
                .unwrap_or_else(|| s.to_string())
        }
    }
}

/// Writes a frame in the dialect read by [`load_csv`]; unobserved cells are left empty.
pub fn write_csv(path: &Path, frame: &TimeSeriesFrame) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    let mut header = vec!["timestamp".to_string()];
    header.extend(frame.channel_names().iter().cloned());
    w.write_record(&header)?;
    for t in 0..frame.len() {
        let mut rec = vec![format_stamp(
            frame.start_time().advanced(t, frame.sample_freq()),
        )];
        for n in 0..frame.channels() {
            rec.push(if frame.observed(t, n) {
                frame.values().get(t, n).to_string()
            } else {
                String::new()
            });
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_periods(path: &Path, set: &PeriodSet) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(["level", "freq_hz", "period_samples", "folds", "amplitude"])?;
    for e in &set.entries {
        w.write_record([
            e.index.to_string(),
            e.frequency.to_string(),
            e.period.to_string(),
            e.folds.to_string(),
            e.amplitude.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_loss_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_loss.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per channel and an `avg` row.
pub fn write_metrics(
    path: &Path,
    names: &[String],
    per_channel: &[MetricReport],
    avg: &MetricReport,
) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record([
        "channel",
        "mae",
        "mse",
        "rmse",
        "mape",
        "mape_skipped",
        "n_points",
    ])?;
    let rows = names
        .iter()
        .map(String::as_str)
        .zip(per_channel)
        .chain([("avg", avg)]);
    for (name, r) in rows {
        w.write_record([
            name.to_string(),
            r.mae.to_string(),
            r.mse.to_string(),
            r.rmse.to_string(),
            opt(r.mape),
            r.mape_skipped.to_string(),
            r.n_points.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `trial_index,<dim>...,loss`.
pub fn write_trials(path: &Path, space: &SearchSpace, history: &TrialHistory) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    let mut header = vec!["trial_index".to_string()];
    header.extend(space.dims().iter().map(|d| d.name.clone()));
    header.push("loss".into());
    w.write_record(&header)?;
    for (i, t) in history.records.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(
            t.point
                .iter()
                .enumerate()
                .map(|(j, v)| space.format_value(j, v)),
        );
        rec.push(t.loss.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trials(path: &Path, space: &SearchSpace) -> Result<TrialHistory> {
    let mut rdr =
        csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let header = rdr.headers()?.clone();
    let expected: Vec<&str> = std::iter::once("trial_index")
        .chain(space.dims().iter().map(|d| d.name.as_str()))
        .chain(std::iter::once("loss"))
        .collect();
    if header.iter().collect::<Vec<_>>() != expected {
        bail!(
            "{}: columns do not match the search space ({})",
            path.display(),
            expected.join(",")
        );
    }
    let mut history = TrialHistory::default();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let point = (0..space.len())
            .map(|j| space.parse_value(j, &rec[j + 1]))
            .collect::<wcn_core::Result<Vec<_>>>()
            .with_context(|| format!("{}: trial {i}", path.display()))?;
        let loss: f64 = rec[space.len() + 1]
            .parse()
            .with_context(|| format!("{}: trial {i}: bad loss", path.display()))?;
        history.record(point, loss);
    }
    Ok(history)
}

/// Writes `contents` only through a fresh file handle; used for JSON and TOML outputs.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    let mut f = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}
