//! Per-ticker CSV files and calendar alignment.
//!
//! Each file is `date,<indicator>,...` with a header row, typically
//! `date,open,high,low,close,volume`. The ticker symbol is the file stem.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use dgdnn_core::market::{MarketHistory, StockUniverse};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const DEFAULT_DROP_THRESHOLD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct TickerSeries {
    pub ticker: String,
    pub indicator_names: Vec<String>,
    pub dates: Vec<NaiveDate>,
    /// One row of indicator values per date.
    pub rows: Vec<Vec<f64>>,
}

pub fn read_ticker_csv(path: &Path) -> Result<TickerSeries> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let ticker = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| CliError::Config(format!("bad file name {}", path.display())))?
        .to_string();
    parse_ticker_csv(file, &path.display().to_string(), ticker)
}

pub fn parse_ticker_csv(reader: impl Read, label: &str, ticker: String) -> Result<TickerSeries> {
    let parse_err = |line: u64, message: String| CliError::Parse {
        file: label.to_string(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if headers.get(0).map(str::to_ascii_lowercase).as_deref() != Some("date") {
        return Err(parse_err(1, "first column must be `date`".into()));
    }
    let indicator_names: Vec<String> = headers
        .iter()
        .skip(1)
        .map(str::to_ascii_lowercase)
        .collect();
    if indicator_names.is_empty() {
        return Err(parse_err(1, "no indicator columns".into()));
    }

    let mut dates = Vec::new();
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, csv::Position::line);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, csv::Position::line);
        if record.len() != headers.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", headers.len(), record.len()),
            ));
        }
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
            .map_err(|_| parse_err(line, format!("invalid date `{}`", &record[0])))?;
        if dates.last().is_some_and(|&prev| prev >= date) {
            return Err(parse_err(
                line,
                format!("date {date} is not after the previous row"),
            ));
        }
        let mut row = Vec::with_capacity(indicator_names.len());
        for (name, cell) in indicator_names.iter().zip(record.iter().skip(1)) {
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| parse_err(line, format!("non-numeric {name} value `{cell}`")))?;
            row.push(v);
        }
        dates.push(date);
        rows.push(row);
    }
    if dates.is_empty() {
        return Err(parse_err(1, "no data rows".into()));
    }
    Ok(TickerSeries {
        ticker,
        indicator_names,
        dates,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroppedTicker {
    pub ticker: String,
    pub missing_days: usize,
    pub missing_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropReport {
    pub threshold: f64,
    /// Distinct dates across all input files.
    pub union_days: usize,
    pub dropped: Vec<DroppedTicker>,
    /// Interior gaps filled with the previous value, per kept ticker.
    pub forward_filled: BTreeMap<String, usize>,
}

/// Aligns tickers on a common calendar.
///
/// Tickers missing more than `threshold` of the union calendar are dropped.
/// The calendar is then the union dates inside the span every remaining
/// ticker covers, and gaps within it are forward-filled.
pub fn align(series: Vec<TickerSeries>, threshold: f64) -> Result<(MarketHistory, DropReport)> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CliError::Config(format!(
            "drop threshold {threshold} outside [0, 1]"
        )));
    }
    let Some(first) = series.first() else {
        return Err(CliError::Alignment("no input files".into()));
    };
    let indicators = first.indicator_names.clone();
    for s in &series {
        if s.indicator_names != indicators {
            return Err(CliError::Alignment(format!(
                "{} has columns {:?}, expected {:?}",
                s.ticker, s.indicator_names, indicators
            )));
        }
    }
    let union: BTreeSet<NaiveDate> = series
        .iter()
        .flat_map(|s| s.dates.iter().copied())
        .collect();
    let mut dropped = Vec::new();
    let mut kept = Vec::new();
    for s in series {
        let missing = union.len() - s.dates.len();
        let fraction = missing as f64 / union.len() as f64;
        if fraction > threshold {
            log::warn!(
                "dropping {}: missing {missing} of {} dates",
                s.ticker,
                union.len()
            );
            dropped.push(DroppedTicker {
                ticker: s.ticker,
                missing_days: missing,
                missing_fraction: fraction,
            });
        } else {
            kept.push(s);
        }
    }
    if kept.is_empty() {
        return Err(CliError::Alignment(
            "every ticker exceeds the drop threshold".into(),
        ));
    }
    let start = kept.iter().map(|s| s.dates[0]).max().expect("non-empty");
    let end = kept
        .iter()
        .map(|s| *s.dates.last().expect("non-empty"))
        .min()
        .expect("non-empty");
    if start > end {
        return Err(CliError::Alignment(
            "tickers share no common date range".into(),
        ));
    }
    let calendar: Vec<NaiveDate> = union.range(start..=end).copied().collect();

    let m = indicators.len();
    let mut values = vec![0.0; kept.len() * m * calendar.len()];
    let mut forward_filled = BTreeMap::new();
    for (i, s) in kept.iter().enumerate() {
        let mut cursor = 0;
        let mut filled = 0;
        for (d, date) in calendar.iter().enumerate() {
            while cursor + 1 < s.dates.len() && s.dates[cursor + 1] <= *date {
                cursor += 1;
            }
            if s.dates[cursor] != *date {
                filled += 1;
            }
            for (k, v) in s.rows[cursor].iter().enumerate() {
                values[(i * m + k) * calendar.len() + d] = *v;
            }
        }
        if filled > 0 {
            forward_filled.insert(s.ticker.clone(), filled);
        }
    }
    let universe = StockUniverse {
        tickers: kept.iter().map(|s| s.ticker.clone()).collect(),
        indicator_names: indicators,
        calendar,
    };
    let history = MarketHistory::new(universe, values)?;
    Ok((
        history,
        DropReport {
            threshold,
            union_days: union.len(),
            dropped,
            forward_filled,
        },
    ))
}

/// Reads every `*.csv` in `dir` (sorted by name) and aligns them.
pub fn ingest_dir(dir: &Path, threshold: f64) -> Result<(MarketHistory, DropReport)> {
    if !dir.is_dir() {
        return Err(CliError::InputNotFound(dir.to_path_buf()));
    }
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Alignment(format!(
            "no .csv files in {}",
            dir.display()
        )));
    }
    let series = paths
        .iter()
        .map(|p| read_ticker_csv(p))
        .collect::<Result<Vec<_>>>()?;
    align(series, threshold)
}

/// One ticker of `history` in the input CSV format.
pub fn ticker_csv(history: &MarketHistory, ticker: usize) -> String {
    let u = history.universe();
    let mut out = String::from("date");
    for name in &u.indicator_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (d, date) in u.calendar.iter().enumerate() {
        out.push_str(&date.format("%Y-%m-%d").to_string());
        for k in 0..u.indicator_names.len() {
            out.push(',');
            out.push_str(&history.value(ticker, d, k).to_string());
        }
        out.push('\n');
    }
    out
}
