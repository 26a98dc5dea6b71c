//! Aggregation of campaign records and the on-disk artifacts: the
//! per-image `outcomes.csv`, the `tail_curve.csv` samples, and PGM/PPM dumps
//! of the lowest-SSIM successful images.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::campaign::{AttackKind, Campaign, OutcomeRecord, RecordKind};
use crate::data::quantize;
use crate::error::{Error, Result};
use crate::image::Image;

pub const OUTCOMES_HEADER: [&str; 11] =
    ["image_id", "attack", "true_label", "adv_label", "success", "ssim", "l1", "l2", "linf", "c_final", "iterations"];
pub const TAIL_HEADER: [&str; 4] = ["attack", "ssim_min", "success_rate", "proportion"];
/// Number of tail-curve samples: thresholds `0.00, 0.05, ..., 1.00`.
pub const TAIL_POINTS: usize = 21;
/// Lowest-SSIM successful images dumped per attack.
pub const EXHIBITS_PER_ATTACK: usize = 9;

/// Threshold of tail-curve sample `k`.
pub fn tail_threshold(k: usize) -> f64 {
    k as f64 / (TAIL_POINTS - 1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailPoint {
    pub ssim_min: f64,
    /// Successes with SSIM at least `ssim_min`, over attempted images.
    pub success_rate: f64,
    /// Returned images (successful or not) with SSIM at least `ssim_min`,
    /// over attempted images.
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSummary {
    pub attack: AttackKind,
    /// Correctly classified images this attack was run on.
    pub attempted: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Distortion and SSIM statistics over successful images; `None` when
    /// nothing succeeded.
    pub mean_l1: Option<f64>,
    pub mean_l2: Option<f64>,
    pub mean_linf: Option<f64>,
    pub mean_ssim: Option<f64>,
    pub median_ssim: Option<f64>,
    pub min_ssim: Option<f64>,
    pub tail: Vec<TailPoint>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    /// Clean images the model already misclassified.
    pub skipped: usize,
    pub attacks: Vec<AttackSummary>,
}

impl EvalReport {
    pub fn attack(&self, kind: AttackKind) -> Option<&AttackSummary> {
        self.attacks.iter().find(|s| s.attack == kind)
    }

    /// Summary with attacks in order of first appearance in `records`.
    pub fn from_records(records: &[OutcomeRecord]) -> Self {
        let mut order = Vec::new();
        for r in records {
            if let RecordKind::Attack(k) = r.attack {
                if !order.contains(&k) {
                    order.push(k);
                }
            }
        }
        summarize(records, &order)
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn opt(v: Option<f64>) -> String {
            v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
        }
        writeln!(f, "skipped (misclassified clean): {}", self.skipped)?;
        writeln!(
            f,
            "{:<9} {:>9} {:>8} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
            "attack", "attempted", "success", "mean L1", "mean L2", "mean Linf", "mean SSIM", "med SSIM", "min SSIM"
        )?;
        for s in &self.attacks {
            writeln!(
                f,
                "{:<9} {:>9} {:>7.1}% {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
                s.attack.name(),
                s.attempted,
                100.0 * s.success_rate,
                opt(s.mean_l1),
                opt(s.mean_l2),
                opt(s.mean_linf),
                opt(s.mean_ssim),
                opt(s.median_ssim),
                opt(s.min_ssim)
            )?;
        }
        Ok(())
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) })
}

/// Tail curve of one attack's records. Negative SSIM values count as 0, so
/// the first sample covers every record.
pub fn tail_curve(records: &[&OutcomeRecord]) -> Vec<TailPoint> {
    let n = records.len();
    (0..TAIL_POINTS)
        .map(|k| {
            let th = tail_threshold(k);
            let above = |r: &&&OutcomeRecord| r.ssim.max(0.0) >= th;
            let produced = records.iter().filter(above).count();
            let succeeded = records.iter().filter(above).filter(|r| r.success).count();
            let rate = |m: usize| if n == 0 { 0.0 } else { m as f64 / n as f64 };
            TailPoint { ssim_min: th, success_rate: rate(succeeded), proportion: rate(produced) }
        })
        .collect()
}

/// Aggregates records per attack, in the order given.
pub fn summarize(records: &[OutcomeRecord], attacks: &[AttackKind]) -> EvalReport {
    let skipped = records.iter().filter(|r| r.attack == RecordKind::Skipped).count();
    let attacks = attacks
        .iter()
        .map(|&kind| {
            let rows: Vec<&OutcomeRecord> = records.iter().filter(|r| r.attack == RecordKind::Attack(kind)).collect();
            let ok: Vec<&OutcomeRecord> = rows.iter().copied().filter(|r| r.success).collect();
            let col = |f: fn(&OutcomeRecord) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let ssims = col(|r| r.ssim);
            AttackSummary {
                attack: kind,
                attempted: rows.len(),
                successes: ok.len(),
                success_rate: if rows.is_empty() { 0.0 } else { ok.len() as f64 / rows.len() as f64 },
                mean_l1: mean(&col(|r| r.l1)),
                mean_l2: mean(&col(|r| r.l2)),
                mean_linf: mean(&col(|r| r.linf)),
                mean_ssim: mean(&ssims),
                median_ssim: median(&ssims),
                min_ssim: ssims.iter().copied().reduce(f64::min),
                tail: tail_curve(&rows),
            }
        })
        .collect();
    EvalReport { skipped, attacks }
}

/// Shortest decimal form of `v` rounded to 6 significant digits.
pub fn format_sig6(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("formatted float parses");
    rounded.to_string()
}

pub fn write_outcomes_csv<W: Write>(records: &[OutcomeRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(OUTCOMES_HEADER)?;
    for r in records {
        out.write_record([
            r.image_id.to_string(),
            r.attack.to_string(),
            r.true_label.to_string(),
            r.adv_label.to_string(),
            r.success.to_string(),
            format_sig6(r.ssim),
            format_sig6(r.l1),
            format_sig6(r.l2),
            format_sig6(r.linf),
            r.c_final.map(format_sig6).unwrap_or_default(),
            r.iterations.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Parses `outcomes.csv`. Image payloads are not stored there, so every
/// record comes back with `adversarial: None`.
pub fn read_outcomes_csv<R: Read>(r: R) -> Result<Vec<OutcomeRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(OUTCOMES_HEADER) {
        return Err(Error::Record(format!("unexpected outcomes header: {}", header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut out = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row?;
        let bad = |field: &str| Error::Record(format!("row {}: bad {field}", line + 1));
        let num = |i: usize| row[i].parse::<f64>().map_err(|_| bad(OUTCOMES_HEADER[i]));
        let int = |i: usize| row[i].parse::<usize>().map_err(|_| bad(OUTCOMES_HEADER[i]));
        out.push(OutcomeRecord {
            image_id: int(0)?,
            attack: row[1].parse()?,
            true_label: int(2)?,
            adv_label: int(3)?,
            success: row[4].parse().map_err(|_| bad("success"))?,
            ssim: num(5)?,
            l1: num(6)?,
            l2: num(7)?,
            linf: num(8)?,
            c_final: if row[9].is_empty() { None } else { Some(num(9)?) },
            iterations: int(10)?,
            adversarial: None,
        });
    }
    Ok(out)
}

pub fn write_tail_csv<W: Write>(report: &EvalReport, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TAIL_HEADER)?;
    for s in &report.attacks {
        for p in &s.tail {
            out.write_record([
                s.attack.name().to_string(),
                format!("{:.2}", p.ssim_min),
                format_sig6(p.success_rate),
                format_sig6(p.proportion),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Binary PGM (one channel) or PPM (three channels, interleaved), 8-bit.
pub fn write_netpbm<W: Write>(img: &Image, mut w: W) -> Result<()> {
    let s = img.shape();
    let magic = match s.channels {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::config(format!("cannot write a {c}-channel image as PGM/PPM"))),
    };
    write!(w, "{magic}\n{} {}\n255\n", s.width, s.height)?;
    let plane = s.plane();
    let mut bytes = Vec::with_capacity(img.len());
    for p in 0..plane {
        for c in 0..s.channels {
            bytes.push(quantize(img.as_slice()[c * plane + p]));
        }
    }
    w.write_all(&bytes)?;
    Ok(())
}

/// Writes the `k` lowest-SSIM successful images of each attack into `dir`
/// as `<attack>_<rank>_img<id>.{pgm,ppm}`. Returns the paths written.
pub fn write_exhibits(records: &[OutcomeRecord], attacks: &[AttackKind], k: usize, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut written = Vec::new();
    for &kind in attacks {
        let mut ok: Vec<(&OutcomeRecord, &Image)> = records
            .iter()
            .filter(|r| r.attack == RecordKind::Attack(kind) && r.success)
            .filter_map(|r| r.adversarial.as_ref().map(|img| (r, img)))
            .collect();
        ok.sort_by(|a, b| a.0.ssim.total_cmp(&b.0.ssim).then(a.0.image_id.cmp(&b.0.image_id)));
        for (rank, (r, img)) in ok.into_iter().take(k).enumerate() {
            if written.is_empty() {
                fs::create_dir_all(dir)?;
            }
            let ext = if img.shape().channels == 3 { "ppm" } else { "pgm" };
            let path = dir.join(format!("{}_{rank}_img{}.{ext}", kind.name(), r.image_id));
            let mut f = BufWriter::new(File::create(&path)?);
            write_netpbm(img, &mut f)?;
            f.flush()?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Writes `outcomes.csv`, `tail_curve.csv` and the lowest-SSIM exhibits
/// under `outdir/images`.
pub fn emit_report(campaign: &Campaign, outdir: &Path) -> Result<()> {
    fs::create_dir_all(outdir)?;
    let attacks: Vec<AttackKind> = campaign.report.attacks.iter().map(|s| s.attack).collect();
    write_outcomes_csv(&campaign.records, BufWriter::new(File::create(outdir.join("outcomes.csv"))?))?;
    write_tail_csv(&campaign.report, BufWriter::new(File::create(outdir.join("tail_curve.csv"))?))?;
    write_exhibits(&campaign.records, &attacks, EXHIBITS_PER_ATTACK, &outdir.join("images"))?;
    Ok(())
}
