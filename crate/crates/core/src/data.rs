//! Observation series: synthetic trajectories, demeaned log-returns and
//! segmentation into independent blocks (e.g. ISO weeks).
//!
//! All numbers are written in shortest round-trip decimal form.

use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Trajectory;
use crate::sgld::fmt_f64;

/// Where a series came from and what was done to it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub source: Option<String>,
    /// Mean subtracted from the raw log-returns, if demeaned.
    pub demean_mean: Option<f64>,
    /// Timestamp of each observation, when the input had them.
    pub timestamps: Option<Vec<String>>,
}

/// Independent observation sequences in their original order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SegmentedSeries {
    pub segments: Vec<Vec<f64>>,
    pub keys: Vec<String>,
    pub provenance: Provenance,
}

impl SegmentedSeries {
    /// A single unsegmented sequence.
    pub fn single(y: Vec<f64>) -> Self {
        SegmentedSeries {
            segments: vec![y],
            keys: vec!["0".into()],
            provenance: Provenance::default(),
        }
    }

    pub fn total_len(&self) -> usize {
        self.segments.iter().map(Vec::len).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.segments.concat()
    }

    /// First `n_train` segments and the rest.
    pub fn split(&self, n_train: usize) -> Result<(SegmentedSeries, SegmentedSeries)> {
        if n_train > self.segments.len() {
            return Err(Error::data(
                None,
                format!("cannot take {n_train} training segments out of {}", self.segments.len()),
            ));
        }
        let part = |r: std::ops::Range<usize>| {
            let mut prov = self.provenance.clone();
            if let Some(ts) = &self.provenance.timestamps {
                let start: usize = self.segments[..r.start].iter().map(Vec::len).sum();
                let len: usize = self.segments[r.clone()].iter().map(Vec::len).sum();
                prov.timestamps = Some(ts[start..start + len].to_vec());
            }
            SegmentedSeries {
                segments: self.segments[r.clone()].to_vec(),
                keys: self.keys[r].to_vec(),
                provenance: prov,
            }
        };
        Ok((part(0..n_train), part(n_train..self.segments.len())))
    }

    /// CSV with columns `segment_key,value`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["segment_key", "value"])?;
        for (k, seg) in self.keys.iter().zip(&self.segments) {
            for v in seg {
                out.write_record([k.as_str(), &fmt_f64(*v)])?;
            }
        }
        out.flush().map_err(|e| Error::io("<series csv>", e))?;
        Ok(())
    }
}

/// `log(p_t / p_{t-1})`, `t = 1..T-1`.
pub fn log_returns(prices: &[f64]) -> Result<Vec<f64>> {
    if prices.len() < 2 {
        return Err(Error::data(None, "need at least two prices"));
    }
    if let Some(i) = prices.iter().position(|p| !p.is_finite() || *p <= 0.0) {
        return Err(Error::data(Some(i), format!("price {} is not positive", prices[i])));
    }
    Ok(prices.windows(2).map(|w| (w[1] / w[0]).ln()).collect())
}

/// Log-returns minus their empirical mean, and that mean.
pub fn demean_log_returns(prices: &[f64]) -> Result<(Vec<f64>, f64)> {
    let r = log_returns(prices)?;
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    Ok((r.iter().map(|v| v - mean).collect(), mean))
}

/// Contiguous runs of equal keys become segments. A key that reappears after
/// a different one is an error.
pub fn segment_by_key<K: PartialEq + ToString>(series: &[f64], keys: &[K]) -> Result<SegmentedSeries> {
    if series.len() != keys.len() {
        return Err(Error::data(
            None,
            format!("{} observations but {} keys", series.len(), keys.len()),
        ));
    }
    let mut out = SegmentedSeries::default();
    let mut seen: Vec<&K> = Vec::new();
    for (i, (v, k)) in series.iter().zip(keys).enumerate() {
        if seen.last() == Some(&k) {
            out.segments.last_mut().expect("segment open").push(*v);
            continue;
        }
        if seen.contains(&k) {
            return Err(Error::data(
                Some(i),
                format!("segment key '{}' reappears after a different key", k.to_string()),
            ));
        }
        seen.push(k);
        out.keys.push(k.to_string());
        out.segments.push(vec![*v]);
    }
    Ok(out)
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.naive_utc());
    }
    for fmt in ["%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M", "%Y%m%d %H%M%S"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

/// ISO-8601 week label `YYYY-Www` of a timestamp.
pub fn iso_week_key(timestamp: &str) -> Result<String> {
    let t = parse_timestamp(timestamp)
        .ok_or_else(|| Error::data(None, format!("unrecognised timestamp '{timestamp}'")))?;
    let w = t.date().iso_week();
    Ok(format!("{:04}-W{:02}", w.year(), w.week()))
}

fn column(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers
        .iter()
        .position(|h| names.iter().any(|n| h.trim().eq_ignore_ascii_case(n)))
}

fn parse_value(s: &str, row: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::data(Some(row), format!("'{s}' is not a finite number")))
}

/// Reads a comma-separated file with a header row in one of two layouts:
///
/// * `price` with optional `timestamp`: demeaned log-returns, segmented by
///   the ISO week of each return's closing timestamp (one segment without
///   timestamps);
/// * `segment_key,value`: precomputed returns, used as given.
pub fn ingest_csv<R: Read>(r: R, source: Option<String>) -> Result<SegmentedSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = rdr.headers()?.clone();
    if let (Some(kc), Some(vc)) = (column(&headers, &["segment_key", "key"]), column(&headers, &["value"])) {
        let mut keys = Vec::new();
        let mut vals = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            keys.push(rec.get(kc).unwrap_or("").to_string());
            vals.push(parse_value(rec.get(vc).unwrap_or(""), i)?);
        }
        if vals.is_empty() {
            return Err(Error::data(None, "no observations"));
        }
        let mut s = segment_by_key(&vals, &keys)?;
        s.provenance.source = source;
        return Ok(s);
    }
    let pc = column(&headers, &["price", "close"]).ok_or_else(|| {
        Error::data(None, "expected columns 'price' [+ 'timestamp'] or 'segment_key,value'")
    })?;
    let tc = column(&headers, &["timestamp", "time", "date"]);
    let mut prices = Vec::new();
    let mut stamps = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        prices.push(parse_value(rec.get(pc).unwrap_or(""), i)?);
        if let Some(tc) = tc {
            stamps.push(rec.get(tc).unwrap_or("").to_string());
        }
    }
    let (returns, mean) = demean_log_returns(&prices)?;
    let mut s = if tc.is_some() {
        let keys = stamps[1..]
            .iter()
            .enumerate()
            .map(|(i, t)| iso_week_key(t).map_err(|_| Error::data(Some(i + 1), format!("bad timestamp '{t}'"))))
            .collect::<Result<Vec<_>>>()?;
        segment_by_key(&returns, &keys)?
    } else {
        SegmentedSeries::single(returns)
    };
    s.provenance = Provenance {
        source,
        demean_mean: Some(mean),
        timestamps: tc.map(|_| stamps[1..].to_vec()),
    };
    Ok(s)
}

pub fn ingest_file(path: &Path) -> Result<SegmentedSeries> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_csv(std::io::BufReader::new(f), Some(path.display().to_string()))
}

/// Trajectory CSV `t,x,y`; row 0 holds `x_0` and an empty `y`.
pub fn write_trajectory<W: Write>(traj: &Trajectory, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "x", "y"])?;
    for (t, x) in traj.latents.iter().enumerate() {
        let y = if t == 0 { String::new() } else { fmt_f64(traj.observations[t - 1]) };
        out.write_record([t.to_string(), fmt_f64(x.x), y])?;
    }
    out.flush().map_err(|e| Error::io("<trajectory csv>", e))?;
    Ok(())
}

/// Observations from a trajectory (`t,x,y`) or a single `y` / `value` column.
pub fn read_series<R: Read>(r: R, source: Option<String>) -> Result<SegmentedSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = rdr.headers()?.clone();
    let yc = column(&headers, &["y", "value"])
        .ok_or_else(|| Error::data(None, "expected a 'y' or 'value' column"))?;
    let mut y = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let cell = rec.get(yc).unwrap_or("");
        if cell.is_empty() {
            continue;
        }
        y.push(parse_value(cell, i)?);
    }
    if y.is_empty() {
        return Err(Error::data(None, "no observations"));
    }
    let mut s = SegmentedSeries::single(y);
    s.provenance.source = source;
    Ok(s)
}

/// Loads observations from a path, accepting every layout above.
pub fn load_series(path: &Path) -> Result<SegmentedSeries> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let first = text.lines().next().unwrap_or("").to_ascii_lowercase();
    let source = Some(path.display().to_string());
    if first.contains("segment_key") || first.contains("price") || first.contains("close") {
        ingest_csv(text.as_bytes(), source)
    } else {
        read_series(text.as_bytes(), source)
    }
}
