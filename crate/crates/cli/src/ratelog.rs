//! Tab-separated per-frame rate/quality logs and BD-rate over them.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use anyhow::{bail, Context, Result};
use asn_core::metrics::{bd_rate, RdCurve};
use asn_core::RateEstimate;

pub const RATE_HEADER: &str = "sequence\tframe\tqp\tpayload_bits\tsignaling_bits\ttotal_bits\tpsnr";

#[derive(Clone, Debug, PartialEq)]
pub struct RateRow {
    pub sequence: String,
    pub frame: usize,
    pub qp: u8,
    pub rate: RateEstimate,
    pub psnr_db: f64,
}

pub fn format_rate_log(rows: &[RateRow]) -> String {
    let mut s = format!("{RATE_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{:.3}\t{}\t{:.3}\t{:.6}",
            r.sequence, r.frame, r.qp, r.rate.payload_bits, r.rate.signaling_bits, r.rate.total_bits, r.psnr_db
        );
    }
    s
}

pub fn parse_rate_log(text: &str) -> Result<Vec<RateRow>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == RATE_HEADER => {}
        _ => bail!("rate log must start with the header `{}`", RATE_HEADER.replace('\t', "<TAB>")),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 7 {
                bail!("rate log row {} has {} fields, expected 7", i + 1, f.len());
            }
            let ctx = || format!("rate log row {}", i + 1);
            let payload: f64 = f[3].parse().with_context(ctx)?;
            let signaling: u64 = f[4].parse().with_context(ctx)?;
            Ok(RateRow {
                sequence: f[0].to_string(),
                frame: f[1].parse().with_context(ctx)?,
                qp: f[2].parse().with_context(ctx)?,
                rate: RateEstimate::new(payload, signaling),
                psnr_db: f[6].parse().with_context(ctx)?,
            })
        })
        .collect()
}

/// Per sequence, one RD point per QP: summed bits and mean frame PSNR.
pub fn rd_points(rows: &[RateRow]) -> BTreeMap<String, BTreeMap<u8, (f64, f64)>> {
    let mut acc: BTreeMap<String, BTreeMap<u8, (f64, f64, usize)>> = BTreeMap::new();
    for r in rows {
        let e = acc.entry(r.sequence.clone()).or_default().entry(r.qp).or_insert((0.0, 0.0, 0));
        e.0 += r.rate.total_bits;
        e.1 += r.psnr_db;
        e.2 += 1;
    }
    acc.into_iter()
        .map(|(seq, per_qp)| {
            let pts = per_qp.into_iter().map(|(qp, (bits, psnr, n))| (qp, (bits, psnr / n as f64))).collect();
            (seq, pts)
        })
        .collect()
}

/// BD-rate (percent) of `test` against `anchor` for every sequence present in both.
pub fn bd_rates(anchor: &[RateRow], test: &[RateRow]) -> Result<Vec<(String, f64)>> {
    let a = rd_points(anchor);
    let t = rd_points(test);
    let mut out = Vec::new();
    for (seq, ap) in &a {
        let Some(tp) = t.get(seq) else { continue };
        if ap.keys().ne(tp.keys()) {
            bail!("sequence {seq}: anchor and test logs cover different QPs");
        }
        let curve = |pts: &BTreeMap<u8, (f64, f64)>| RdCurve::from_pairs(&pts.values().copied().collect::<Vec<_>>());
        let value = bd_rate(&curve(ap)?, &curve(tp)?).with_context(|| format!("BD-rate of sequence {seq}"))?;
        out.push((seq.clone(), value));
    }
    if out.is_empty() {
        bail!("anchor and test logs share no sequence");
    }
    Ok(out)
}

pub fn format_bd_table(rates: &[(String, f64)]) -> String {
    let mut s = String::from("sequence\tbd_rate_percent\n");
    for (seq, v) in rates {
        let _ = writeln!(s, "{seq}\t{v:.4}");
    }
    let mean = rates.iter().map(|(_, v)| v).sum::<f64>() / rates.len() as f64;
    let _ = writeln!(s, "mean\t{mean:.4}");
    s
}
