//! Report rows and their JSON / CSV encodings.

use std::io::Write;

use nli_core::link::Diagnostic;
use nli_core::pipeline::{BenchReport, CutResult, PipelineOutput, StageTimes};
use nli_core::units::{psd_to_dbm_per_ghz, watt_to_dbm};
use serde::{Deserialize, Serialize};

/// One CUT of a run. Linear values are SI; `_db*` fields are derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub channel: usize,
    pub f_cut_hz: f64,
    pub bandwidth_hz: f64,
    pub g_nli_w_per_hz: f64,
    pub g_nli_dbm_per_ghz: f64,
    pub incoherent_w_per_hz: f64,
    pub coherence_w_per_hz: f64,
    pub nli_power_w: f64,
    pub nli_power_dbm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_w_per_hz: Option<f64>,
    /// Closed-form incoherent part relative to the oracle, dB.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_gap_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_time_s: Option<f64>,
}

impl Row {
    pub fn new(r: &CutResult, timing: bool) -> Self {
        Row {
            channel: r.report.cut,
            f_cut_hz: r.report.f_cut,
            bandwidth_hz: r.report.bandwidth,
            g_nli_w_per_hz: r.report.g_nli,
            g_nli_dbm_per_ghz: psd_to_dbm_per_ghz(r.report.g_nli),
            incoherent_w_per_hz: r.report.incoherent,
            coherence_w_per_hz: r.report.coherence,
            nli_power_w: r.nli_power,
            nli_power_dbm: watt_to_dbm(r.nli_power),
            oracle_w_per_hz: r.oracle,
            oracle_gap_db: r.oracle_gap_db(),
            eval_time_s: timing.then_some(r.report.eval_time),
        }
    }
}

/// Everything written for a `run`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub cuts: Vec<Row>,
    pub diagnostics: Vec<Diagnostic>,
    /// Whether SRS solutions and fits came from a cache file.
    pub cached: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<StageTimes>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bench: Option<BenchReport>,
}

impl RunReport {
    pub fn new(out: &PipelineOutput, timing: bool) -> Self {
        RunReport {
            cuts: out.results.iter().map(|r| Row::new(r, timing)).collect(),
            diagnostics: out.diagnostics.clone(),
            cached: out.cached,
            timing: timing.then_some(out.times),
            bench: None,
        }
    }
}

pub fn write_json(report: &RunReport, w: &mut dyn Write) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut *w, report)?;
    writeln!(w)
}

fn db4(x: f64) -> String {
    format!("{x:.4}")
}

fn sci(x: f64) -> String {
    format!("{x:e}")
}

/// Writes one CSV line per CUT. Linear values keep full precision; dB values
/// are rounded to 4 decimals. Timing and bench summaries are not part of the
/// table.
pub fn write_csv(report: &RunReport, w: &mut dyn Write) -> csv::Result<()> {
    let oracle = report.cuts.iter().any(|r| r.oracle_w_per_hz.is_some());
    let timing = report.cuts.iter().any(|r| r.eval_time_s.is_some());
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec![
        "channel",
        "f_cut_hz",
        "bandwidth_hz",
        "g_nli_w_per_hz",
        "g_nli_dbm_per_ghz",
        "incoherent_w_per_hz",
        "coherence_w_per_hz",
        "nli_power_w",
        "nli_power_dbm",
    ];
    if oracle {
        header.extend(["oracle_w_per_hz", "oracle_gap_db"]);
    }
    if timing {
        header.push("eval_time_s");
    }
    out.write_record(&header)?;
    for r in &report.cuts {
        let mut rec = vec![
            r.channel.to_string(),
            sci(r.f_cut_hz),
            sci(r.bandwidth_hz),
            sci(r.g_nli_w_per_hz),
            db4(r.g_nli_dbm_per_ghz),
            sci(r.incoherent_w_per_hz),
            sci(r.coherence_w_per_hz),
            sci(r.nli_power_w),
            db4(r.nli_power_dbm),
        ];
        if oracle {
            rec.push(r.oracle_w_per_hz.map(sci).unwrap_or_default());
            rec.push(r.oracle_gap_db.map(db4).unwrap_or_default());
        }
        if timing {
            rec.push(r.eval_time_s.map(sci).unwrap_or_default());
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}
