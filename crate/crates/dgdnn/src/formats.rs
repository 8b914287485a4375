//! Matrix CSV, binary feature dumps, metric history CSV and text tables.

use std::fmt::Write as _;
use std::path::Path;

use dgdnn_core::evaluation::EvalReport;
use dgdnn_core::training::EpochLog;
use dgdnn_core::Tensor;

use crate::error::{read_to_string, CliError, Result};

/// Square matrix with a ticker header row and a ticker first column.
pub fn matrix_csv(matrix: &Tensor, tickers: &[String]) -> String {
    let mut out = String::from("ticker");
    for t in tickers {
        out.push(',');
        out.push_str(t);
    }
    out.push('\n');
    for (i, t) in tickers.iter().enumerate() {
        out.push_str(t);
        for v in matrix.row(i) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Reads a labelled square matrix and reorders it to `tickers`.
pub fn read_matrix_csv(path: &Path, tickers: &[String]) -> Result<Tensor> {
    let text = read_to_string(path)?;
    let label = path.display().to_string();
    let err = |line: u64, message: String| CliError::Parse {
        file: label.clone(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| err(1, e.to_string()))?
        .iter()
        .skip(1)
        .map(str::to_string)
        .collect();
    let n = header.len();
    let mut rows: Vec<(String, Vec<f64>)> = Vec::with_capacity(n);
    for rec in rdr.records() {
        let rec =
            rec.map_err(|e| err(e.position().map_or(0, csv::Position::line), e.to_string()))?;
        let line = rec.position().map_or(0, csv::Position::line);
        if rec.len() != n + 1 {
            return Err(err(
                line,
                format!("expected {} fields, found {}", n + 1, rec.len()),
            ));
        }
        let vals = rec
            .iter()
            .skip(1)
            .map(|c| {
                c.parse::<f64>()
                    .map_err(|_| err(line, format!("non-numeric value `{c}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((rec[0].to_string(), vals));
    }
    let position = |name: &str, among: &[String]| {
        among
            .iter()
            .position(|t| t == name)
            .ok_or_else(|| CliError::Compatibility(format!("{label}: ticker {name} missing")))
    };
    let row_names: Vec<String> = rows.iter().map(|(t, _)| t.clone()).collect();
    let mut m = Tensor::zeros(tickers.len(), tickers.len());
    for (i, ti) in tickers.iter().enumerate() {
        let r = position(ti, &row_names)?;
        for (j, tj) in tickers.iter().enumerate() {
            let c = position(tj, &header)?;
            m.set(i, j, rows[r].1[c]);
        }
    }
    Ok(m)
}

const BIN_MAGIC: &[u8; 4] = b"DGDX";

/// `DGDX`, rows and cols as little-endian `u32`, then row-major `f64` LE.
pub fn tensor_bin(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * t.len());
    out.extend_from_slice(BIN_MAGIC);
    out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn tensor_from_bin(bytes: &[u8]) -> Result<Tensor> {
    let bad = || CliError::Runtime("malformed binary tensor".into());
    if bytes.len() < 12 || &bytes[..4] != BIN_MAGIC {
        return Err(bad());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (rows, cols) = (word(4), word(8));
    if bytes.len() != 12 + 8 * rows * cols {
        return Err(bad());
    }
    let data = bytes[12..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Tensor::from_vec(rows, cols, data)?)
}

/// Unlabelled numeric CSV, one tensor row per line.
pub fn tensor_csv(t: &Tensor) -> String {
    let mut out = String::new();
    for r in 0..t.rows() {
        let row: Vec<String> = t.row(r).iter().map(f64::to_string).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn history_csv(history: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_ce,radius_sum,penalty,val_acc,val_mcc,val_f1\n");
    for h in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            h.epoch, h.train_ce, h.radius_sum, h.penalty, h.val_acc, h.val_mcc, h.val_f1
        );
    }
    out
}

/// Aligned columns; the first column is left-aligned, the rest right-aligned.
pub fn text_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, c) in cells.iter().enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            if i == 0 {
                let _ = write!(s, "{c:<w$}", w = widths[i]);
            } else {
                let _ = write!(s, "{c:>w$}", w = widths[i]);
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    out.push_str(&line(
        widths
            .iter()
            .map(|&w| "-".repeat(w))
            .collect::<Vec<_>>()
            .iter()
            .map(String::as_str)
            .collect(),
    ));
    for r in rows {
        out.push_str(&line(r.iter().take(cols).map(String::as_str).collect()));
    }
    out
}

const REPORT_COLUMNS: [&str; 10] = [
    "name", "total", "tp", "fp", "tn", "fn", "acc", "mcc", "f1", "macro_f1",
];

fn report_row(name: &str, r: &EvalReport) -> Vec<String> {
    let c = r.confusion;
    vec![
        name.to_string(),
        r.total.to_string(),
        c.true_pos.to_string(),
        c.false_pos.to_string(),
        c.true_neg.to_string(),
        c.false_neg.to_string(),
        format!("{:.4}", r.acc),
        format!("{:.4}", r.mcc),
        format!("{:.4}", r.f1),
        format!("{:.4}", r.macro_f1),
    ]
}

/// One line per `(name, report)`.
pub fn reports_table(reports: &[(&str, &EvalReport)]) -> String {
    let rows: Vec<_> = reports.iter().map(|(n, r)| report_row(n, r)).collect();
    text_table(&REPORT_COLUMNS, &rows)
}
