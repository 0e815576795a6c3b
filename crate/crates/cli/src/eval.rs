use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use asn_core::codec::pgm::write_pgm;
use asn_core::codec::DEFAULT_SPLIT_THRESHOLD;
use asn_core::ensemble::{decode_dispatch, encode_select_flags, AsnBank, FlagStream};
use asn_core::metrics::{format_report_table, psnr, ReportRow};
use asn_core::models::enhance_frame;
use asn_core::nn::load_model;
use asn_core::FramePlane;
use clap::Args;
use rayon::prelude::*;

use crate::codec::{code_frames, frame_stem, load_frames};
use crate::ratelog::{bd_rates, format_bd_table, format_rate_log, parse_rate_log, RateRow};
use crate::settings::{prepare_out_dir, require_dir, require_file, QpList, Settings};

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub qp: Option<QpList>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub frames: Option<usize>,
    /// Bank directory written by `asn train-asn` (`<out>/bank`).
    #[arg(long, conflicts_with = "model")]
    pub bank: Option<PathBuf>,
    /// Single model file written by `asn train-single`.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

enum Method {
    Bank(Box<AsnBank>),
    Single(Box<asn_core::nn::ModelWeights>),
}

struct Processed {
    frame: FramePlane,
    flags: Option<FlagStream>,
}

pub fn run_eval(a: EvalArgs, mut s: Settings) -> Result<()> {
    let input = s.path("input", a.input)?;
    let out = s.path("out", a.out)?;
    let qps = s.value("qp", a.qp, QpList::default())?;
    let threshold = s.value("threshold", a.threshold, DEFAULT_SPLIT_THRESHOLD)?;
    let frames = s.optional("frames", a.frames)?;
    let bank_dir = s.optional_path("bank", a.bank)?;
    let model_path = s.optional_path("model", a.model)?;
    require_dir(&input)?;
    let method = match (bank_dir, model_path) {
        (Some(dir), None) => {
            require_dir(&dir)?;
            Method::Bank(Box::new(AsnBank::load(&dir).with_context(|| format!("loading bank from {}", dir.display()))?))
        }
        (None, Some(path)) => {
            require_file(&path)?;
            Method::Single(Box::new(load_model(&path).with_context(|| format!("loading model {}", path.display()))?))
        }
        (Some(_), Some(_)) => bail!("pass either --bank or --model, not both"),
        (None, None) => bail!("pass --bank DIR or --model FILE"),
    };
    prepare_out_dir(&out)?;

    let sources = load_frames(&input, frames)?;
    let coded = code_frames(&sources, &qps.0, threshold)?;
    let processed: Vec<Processed> = coded
        .par_iter()
        .map(|(i, _, c)| -> Result<Processed> {
            let original = &sources[*i].original;
            Ok(match &method {
                Method::Bank(bank) => {
                    let sel = encode_select_flags(bank, &c.decoded, original, &c.partition)?;
                    Processed { frame: sel.mosaic, flags: Some(sel.flags) }
                }
                Method::Single(model) => {
                    Processed { frame: enhance_frame(model, &c.decoded, &c.partition)?, flags: None }
                }
            })
        })
        .collect::<Result<_>>()?;

    let mut anchor_rows = Vec::with_capacity(coded.len());
    let mut method_rows = Vec::with_capacity(coded.len());
    let mut per_seq: BTreeMap<(String, u8), (f64, f64, usize)> = BTreeMap::new();
    for ((i, qp, c), p) in coded.iter().zip(&processed) {
        let src = &sources[*i];
        let dir = out.join(format!("qp{qp}")).join(&src.sequence);
        fs::create_dir_all(&dir)?;
        let stem = frame_stem(src.index);
        write_pgm(dir.join(format!("{stem}.pgm")), &p.frame)?;
        let mut rate = c.rate;
        if let (Some(flags), Method::Bank(bank)) = (&p.flags, &method) {
            let flag_path = dir.join(format!("{stem}.asnf"));
            flags.write(&flag_path)?;
            let reread = FlagStream::read(&flag_path)?;
            let decoded = decode_dispatch(bank, &c.decoded, &c.partition, &reread)?;
            if decoded != p.frame {
                bail!("decoder-side reconstruction of {} frame {stem} differs from the encoder's", src.sequence);
            }
            rate = rate.with_extra_signaling(reread.bits());
        }
        let base_db = psnr(&c.decoded, &src.original)?;
        let method_db = psnr(&p.frame, &src.original)?;
        anchor_rows.push(RateRow {
            sequence: src.sequence.clone(),
            frame: src.index,
            qp: *qp,
            rate: c.rate,
            psnr_db: base_db,
        });
        method_rows.push(RateRow {
            sequence: src.sequence.clone(),
            frame: src.index,
            qp: *qp,
            rate,
            psnr_db: method_db,
        });
        let e = per_seq.entry((src.sequence.clone(), *qp)).or_insert((0.0, 0.0, 0));
        e.0 += base_db;
        e.1 += method_db;
        e.2 += 1;
    }
    fs::write(out.join("anchor_rate.tsv"), format_rate_log(&anchor_rows))?;
    fs::write(out.join("method_rate.tsv"), format_rate_log(&method_rows))?;
    let report: Vec<ReportRow> = per_seq
        .into_iter()
        .map(|((sequence, qp), (b, m, n))| ReportRow {
            sequence,
            qp,
            baseline_db: b / n as f64,
            method_db: m / n as f64,
        })
        .collect();
    fs::write(out.join("report.tsv"), format_report_table(&report))?;
    if qps.0.len() >= 4 {
        let table = format_bd_table(&bd_rates(&anchor_rows, &method_rows)?);
        fs::write(out.join("bdrate.tsv"), table)?;
    }
    s.write(&out)
}

#[derive(Args, Debug)]
pub struct BdrateArgs {
    /// Anchor rate log (`rate.tsv` or `anchor_rate.tsv`).
    #[arg(long)]
    pub anchor: Option<PathBuf>,
    /// Test rate log.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Directory for `bdrate.tsv`; the table is always printed.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_bdrate(a: BdrateArgs, mut s: Settings) -> Result<()> {
    let anchor = s.path("anchor", a.anchor)?;
    let test = s.path("test", a.test)?;
    let out = s.optional_path("out", a.out)?;
    require_file(&anchor)?;
    require_file(&test)?;
    let read = |p: &PathBuf| -> Result<Vec<RateRow>> {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        parse_rate_log(&text).with_context(|| format!("parsing {}", p.display()))
    };
    let table = format_bd_table(&bd_rates(&read(&anchor)?, &read(&test)?)?);
    print!("{table}");
    if let Some(dir) = out {
        prepare_out_dir(&dir)?;
        fs::write(dir.join("bdrate.tsv"), &table)?;
        s.write(&dir)?;
    }
    Ok(())
}
