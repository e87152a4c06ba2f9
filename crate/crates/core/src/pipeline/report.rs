//! CSV and SVG artifacts.

use std::fmt::Write as _;

use super::sweep::SweepPoint;
use super::train::EpochLog;
use crate::coding::CodeSpec;
use crate::error::{Error, Result};

pub const TRAIN_LOG_HEADER: &str = "epoch,mean_loss,mean_batch_ber";
pub const SWEEP_HEADER: &str = "decoder,code,snr_db,bits,bit_errors,ber";

pub fn train_log_csv(logs: &[EpochLog]) -> String {
    let mut out = format!("{TRAIN_LOG_HEADER}\n");
    for l in logs {
        let _ = writeln!(out, "{},{},{}", l.epoch, l.mean_loss, l.mean_batch_ber);
    }
    out
}

/// Code column value; octal generators joined by `/` so the field needs no quoting.
pub fn code_field(code: &CodeSpec) -> String {
    code.octal().join("/")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub decoder: String,
    pub code: String,
    pub snr_db: f64,
    pub bits: u64,
    pub bit_errors: u64,
    pub ber: f64,
}

impl SweepRow {
    pub fn from_point(decoder: &str, code: &CodeSpec, p: &SweepPoint) -> Self {
        Self {
            decoder: decoder.to_string(),
            code: code_field(code),
            snr_db: p.snr_db,
            bits: p.report.bits_counted,
            bit_errors: p.report.bit_errors,
            ber: p.report.ber(),
        }
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.decoder, r.code, r.snr_db, r.bits, r.bit_errors, r.ber);
    }
    out
}

/// Parses and validates a sweep CSV, including `ber = bit_errors / bits`.
pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == SWEEP_HEADER => {}
        Some(h) => return Err(Error::InvalidArgument(format!("sweep CSV header is `{h}`, expected `{SWEEP_HEADER}`"))),
        None => return Err(Error::InvalidArgument("sweep CSV is empty".into())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::InvalidArgument(format!("sweep CSV line {line_no}: {what}"));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad(&format!("{} fields, expected 6", f.len())));
        }
        let row = SweepRow {
            decoder: f[0].to_string(),
            code: f[1].to_string(),
            snr_db: f[2].parse().map_err(|_| bad("snr_db"))?,
            bits: f[3].parse().map_err(|_| bad("bits"))?,
            bit_errors: f[4].parse().map_err(|_| bad("bit_errors"))?,
            ber: f[5].parse().map_err(|_| bad("ber"))?,
        };
        if row.bits == 0 || row.bit_errors > row.bits {
            return Err(bad("need 0 <= bit_errors <= bits and bits >= 1"));
        }
        if (row.ber - row.bit_errors as f64 / row.bits as f64).abs() > 1e-12 {
            return Err(bad("ber is not bit_errors / bits"));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn parse_train_log(text: &str) -> Result<Vec<EpochLog>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim_end) != Some(TRAIN_LOG_HEADER) {
        return Err(Error::InvalidArgument(format!("training log must start with `{TRAIN_LOG_HEADER}`")));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let bad = || Error::InvalidArgument(format!("training log line {}: `{l}`", i + 2));
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 3 {
                return Err(bad());
            }
            Ok(EpochLog {
                epoch: f[0].parse().map_err(|_| bad())?,
                mean_loss: f[1].parse().map_err(|_| bad())?,
                mean_batch_ber: f[2].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// BER against SNR with a log-scale y axis, one polyline per decoder.
///
/// Zero-BER points are drawn at half of one error over the bits simulated
/// so they stay on the log scale.
pub fn sweep_svg(rows: &[SweepRow]) -> String {
    let (w, h, ml, mr, mt, mb) = (640.0, 420.0, 70.0, 130.0, 20.0, 50.0);
    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for r in rows {
        let y = if r.bit_errors == 0 { 0.5 / r.bits.max(1) as f64 } else { r.ber };
        let label = format!("{} {}", r.decoder, r.code);
        match series.iter_mut().find(|(l, _)| *l == label) {
            Some((_, pts)) => pts.push((r.snr_db, y)),
            None => series.push((label, vec![(r.snr_db, y)])),
        }
    }
    let xs = rows.iter().map(|r| r.snr_db);
    let (mut x0, mut x1) = xs.clone().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let ys = series.iter().flat_map(|(_, p)| p.iter().map(|q| q.1.log10()));
    let (ylo, yhi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
    let (d0, d1) = if ylo.is_finite() { (ylo.floor(), yhi.ceil().max(ylo.floor() + 1.0)) } else { (-6.0, 0.0) };
    let px = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
    let py = |y: f64| mt + (d1 - y.log10()) / (d1 - d0) * (h - mt - mb);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect x="{ml}" y="{mt}" width="{}" height="{}" fill="white" stroke="black"/>"#, w - ml - mr, h - mt - mb);
    for d in (d0 as i32)..=(d1 as i32) {
        let y = py(10f64.powi(d));
        let _ = writeln!(s, r##"<line x1="{ml}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##, w - mr);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{d}</text>"#, ml - 6.0, y + 4.0);
    }
    for i in 0..=4 {
        let x = x0 + (x1 - x0) * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{x:.1}</text>"#, px(x), h - mb + 18.0);
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">Eb/N0 (dB)</text>"#, (ml + w - mr) / 2.0, h - 8.0);
    let _ = writeln!(s, r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">BER</text>"#, h / 2.0, h / 2.0);
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, coords.join(" "));
        let ly = mt + 16.0 + 18.0 * i as f64;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{ly:.2}" fill="{color}">{label}</text>"#, w - mr + 8.0);
    }
    s.push_str("</svg>\n");
    s
}
