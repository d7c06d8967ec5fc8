use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::analysis::{BandRecord, ErrorSpectrum, SpectrumTracker};
use crate::error::Result;
use crate::generator::Checkpoint;
use crate::grid::Field;
use crate::problems::ProblemDef;
use crate::training::{EpochRecord, PicnState, TrainObserver};

pub const FIELD_FILE: &str = "field.csv";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SPECTRUM_FILE: &str = "spectrum.csv";
pub const SPECTRUM_LOG_FILE: &str = "spectrum_log.csv";
pub const SPECTRA_FILE: &str = "spectra.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CONFIG_ECHO_FILE: &str = "config.resolved.toml";
pub const REPORT_FILE: &str = "report.json";
pub const GRADCHECK_FILE: &str = "gradcheck.csv";

/// 17 significant digits, enough to restore every double.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

const CHANNEL_PREFIX: [&str; 2] = ["u", "v"];

fn prefix(c: usize) -> String {
    CHANNEL_PREFIX.get(c).map_or_else(|| format!("u{c}"), |s| s.to_string())
}

/// One row per evaluation node: `x,y`, then per channel the prediction
/// and, when an exact solution exists, the exact value and absolute error.
pub fn field_csv(problem: &ProblemDef, fields: &[Field]) -> String {
    let has_exact = problem.exact.is_some();
    let mut header = vec!["x".to_string(), "y".to_string()];
    for c in 0..fields.len() {
        let p = prefix(c);
        header.push(format!("{p}_pred"));
        if has_exact {
            header.push(format!("{p}_exact"));
            header.push(if c == 0 { "abs_err".into() } else { format!("{p}_abs_err") });
        }
    }
    let mut out = header.join(",");
    out.push('\n');
    for (i, j) in problem.evaluation_nodes() {
        let (x, y) = problem.grid.node(i, j);
        let mut row = vec![num(x), num(y)];
        for (c, f) in fields.iter().enumerate() {
            let u = f[[i, j]];
            row.push(num(u));
            if let Some(e) = problem.exact_value(x, y, c) {
                row.push(num(e));
                row.push(num((u - e).abs()));
            }
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn spectrum_rows(out: &mut String, s: &ErrorSpectrum, lead: &str) {
    for k in 0..s.power.len() {
        out.push_str(lead);
        match &s.freq_y {
            Some(fy) => {
                let _ = writeln!(out, "{},{},{}", num(s.freq_x[k]), num(fy[k]), num(s.power[k]));
            }
            None => {
                let _ = writeln!(out, "{},{}", num(s.freq_x[k]), num(s.power[k]));
            }
        }
    }
}

fn spectrum_header(s: &ErrorSpectrum) -> &'static str {
    if s.is_2d() {
        "freq_x,freq_y,power"
    } else {
        "freq_x,power"
    }
}

pub fn spectrum_csv(s: &ErrorSpectrum) -> String {
    let mut out = format!("{}\n", spectrum_header(s));
    spectrum_rows(&mut out, s, "");
    out
}

pub fn band_log_csv(records: &[BandRecord]) -> String {
    let mut out = String::from("epoch,band,lo,hi,normalized_error\n");
    for r in records {
        let _ = writeln!(out, "{},{},{},{},{}", r.epoch, r.band, num(r.lo), num(r.hi), num(r.normalized_error));
    }
    out
}

pub fn checkpoint_text(state: &PicnState) -> String {
    Checkpoint {
        models: state.models.clone(),
        lambda: state.lambda.values.clone(),
    }
    .to_text()
}

#[derive(Serialize)]
struct MetricsLine {
    epoch: usize,
    loss_total: f64,
    loss_g: f64,
    loss_r1: f64,
    loss_r2: f64,
    loss_obs: f64,
    rel_l2: Option<f64>,
}

pub fn metrics_line(r: &EpochRecord) -> Result<String> {
    let line = MetricsLine {
        epoch: r.epoch,
        loss_total: r.loss.total,
        loss_g: r.loss.l_g,
        loss_r1: r.loss.l_r1,
        loss_r2: r.loss.l_r2,
        loss_obs: r.loss.l_obs,
        rel_l2: r.rel_l2,
    };
    Ok(serde_json::to_string(&line)?)
}

/// Streams metrics, tracks band errors and optionally keeps every logged
/// spectrum while training runs.
pub struct RunObserver {
    metrics: BufWriter<File>,
    pub tracker: Option<SpectrumTracker>,
    /// `epoch,` prefixed spectrum rows of every logged epoch.
    pub spectra: Option<String>,
    pub quiet: bool,
}

impl RunObserver {
    pub fn create(out_dir: &Path, tracker: Option<SpectrumTracker>, keep_spectra: bool, quiet: bool) -> Result<Self> {
        Ok(Self {
            metrics: BufWriter::new(File::create(out_dir.join(METRICS_FILE))?),
            tracker,
            spectra: keep_spectra.then(String::new),
            quiet,
        })
    }

    pub fn finish(&mut self) -> Result<()> {
        self.metrics.flush()?;
        Ok(())
    }
}

impl TrainObserver for RunObserver {
    fn on_record(&mut self, record: &EpochRecord, _state: &PicnState, fields: &[Field]) -> Result<()> {
        writeln!(self.metrics, "{}", metrics_line(record)?)?;
        if let Some(t) = self.tracker.as_mut() {
            let s = t.record(record.epoch, &fields[t.channel]);
            if let Some(buf) = self.spectra.as_mut() {
                if buf.is_empty() {
                    let _ = writeln!(buf, "epoch,{}", spectrum_header(&s));
                }
                spectrum_rows(buf, &s, &format!("{},", record.epoch));
            }
        }
        if !self.quiet {
            let l = &record.loss;
            let rel = record.rel_l2.map_or_else(String::new, |r| format!("  rel_l2 {r:.3e}"));
            eprintln!(
                "epoch {:>7}  loss {:.4e}  g {:.3e}  r1 {:.3e}  r2 {:.3e}  obs {:.3e}{rel}",
                record.epoch, l.total, l.l_g, l.l_r1, l.l_r2, l.l_obs
            );
        }
        Ok(())
    }
}
