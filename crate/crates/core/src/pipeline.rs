//! End-to-end evaluation: SRS solve per span, loss tables, profile fits,
//! closed-form NLI per CUT, and the optional numerical reference.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cfm::{CfmModel, CfmOptions, CorrectionFactors, NliReport, SpanLossTable};
use crate::fit::{fit_profile, FitSettings, FittedProfile, Samples};
use crate::link::{Diagnostic, Link};
use crate::oracle::{nli_reference, OracleOptions, OracleProfiles};
use crate::srs::{solve_power_evolution, PowerEvolution, SolverOptions};
use crate::units::db_to_linear;
use crate::{Error, Result};

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

/// Solves every span in order; each span launches the previous span's end
/// powers after amplification.
pub fn solve_link(link: &Link, opts: &SolverOptions) -> Result<Vec<PowerEvolution>> {
    let freqs: Vec<f64> = link.channels.iter().map(|c| c.f_center).collect();
    let mut launch = link.launch_powers();
    let mut out = Vec::with_capacity(link.spans.len());
    for (p, span) in link.spans.iter().enumerate() {
        let ev = solve_power_evolution(p + 1, span, &freqs, &launch, opts)?;
        launch = ev
            .powers
            .iter()
            .enumerate()
            .map(|(j, pw)| {
                let loss = pw[0] / pw[pw.len() - 1];
                pw[pw.len() - 1] * span.gain(j, loss)
            })
            .collect();
        out.push(ev);
    }
    Ok(out)
}

/// Fits every non-pump channel of every span; pumps get `None`.
pub fn fit_link(
    link: &Link,
    evolutions: &[PowerEvolution],
    settings: &FitSettings,
) -> Result<Vec<Vec<Option<FittedProfile>>>> {
    let jobs: Vec<(usize, usize)> = (0..evolutions.len())
        .flat_map(|p| (0..link.channels.len()).map(move |j| (p, j)))
        .collect();
    let fits: Vec<Option<FittedProfile>> = jobs
        .par_iter()
        .map(|&(p, j)| -> Result<Option<FittedProfile>> {
            if link.channels[j].is_pump {
                return Ok(None);
            }
            let ev = &evolutions[p];
            let s = Samples::new(&ev.z_grid, &ev.powers[j])?;
            fit_profile(p + 1, j + 1, s, link.spans[p].intrinsic_alpha[j], settings).map(Some)
        })
        .collect::<Result<_>>()?;
    Ok(fits.chunks(link.channels.len().max(1)).map(|c| c.to_vec()).collect())
}

/// Slow-stage outputs that can be cached between runs. The inputs they were
/// computed from are stored alongside so stale caches are detected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub link: Link,
    pub solver: SolverOptions,
    pub fit: FitSettings,
    pub evolutions: Vec<PowerEvolution>,
    pub fits: Vec<Vec<Option<FittedProfile>>>,
}

impl Artifacts {
    pub fn matches(&self, link: &Link, solver: &SolverOptions, fit: &FitSettings) -> bool {
        self.link == *link && self.solver == *solver && self.fit == *fit
    }

    pub fn losses(&self) -> SpanLossTable {
        SpanLossTable::from_evolutions(&self.evolutions)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    /// Integrate the fitted profiles.
    Fitted,
    /// Integrate the sampled power evolutions.
    Deep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub solver: SolverOptions,
    pub fit: FitSettings,
    pub cfm: CfmOptions,
    pub oracle: Option<(OracleMode, OracleOptions)>,
    /// Launch power change applied to every channel, dB.
    pub power_offset_db: f64,
    /// Apply `power_offset_db` to the closed form only, keeping the SRS
    /// solution and fits of the nominal launch.
    pub freeze_profiles: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            solver: SolverOptions::default(),
            fit: FitSettings::default(),
            cfm: CfmOptions::default(),
            oracle: None,
            power_offset_db: 0.0,
            freeze_profiles: false,
        }
    }
}

/// Wall time of each stage, s.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimes {
    pub ode: f64,
    pub fit: f64,
    pub cfm: f64,
    pub oracle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutResult {
    pub report: NliReport,
    /// NLI power inside the CUT band, W.
    pub nli_power: f64,
    pub oracle: Option<f64>,
}

impl CutResult {
    /// 10·log10(closed form / reference).
    pub fn oracle_gap_db(&self) -> Option<f64> {
        self.oracle.map(|o| 10.0 * (self.report.incoherent / o).log10())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub results: Vec<CutResult>,
    pub diagnostics: Vec<Diagnostic>,
    pub times: StageTimes,
    pub artifacts: Artifacts,
    /// True when the slow stages were skipped thanks to a cache.
    pub cached: bool,
}

fn offset_link(link: &Link, factor: f64) -> Link {
    let mut l = link.clone();
    for c in &mut l.channels {
        c.launch_psd *= factor;
    }
    l
}

/// Runs the slow stages (SRS solve and fits), or reuses `cache` when it was
/// computed from the same inputs.
pub fn prepare_artifacts(
    link: &Link,
    config: &PipelineConfig,
    cache: Option<Artifacts>,
    times: &mut StageTimes,
) -> Result<(Artifacts, bool)> {
    if let Some(a) = cache {
        if a.matches(link, &config.solver, &config.fit) {
            return Ok((a, true));
        }
    }
    let t = Instant::now();
    let evolutions = stage("srs", solve_link(link, &config.solver))?;
    times.ode = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let fits = stage("fit", fit_link(link, &evolutions, &config.fit))?;
    times.fit = t.elapsed().as_secs_f64();
    Ok((
        Artifacts {
            link: link.clone(),
            solver: config.solver,
            fit: config.fit,
            evolutions,
            fits,
        },
        false,
    ))
}

/// Full evaluation of every CUT of `link`.
pub fn run_pipeline(
    link: &Link,
    config: &PipelineConfig,
    rho: &dyn CorrectionFactors,
    cache: Option<Artifacts>,
) -> Result<PipelineOutput> {
    let mut diagnostics = link.ensure_valid()?;
    let factor = db_to_linear(config.power_offset_db);
    let physical = if config.freeze_profiles || config.power_offset_db == 0.0 {
        link.clone()
    } else {
        offset_link(link, factor)
    };
    let mut times = StageTimes::default();
    let (artifacts, cached) = prepare_artifacts(&physical, config, cache, &mut times)?;
    for row in &artifacts.fits {
        for f in row.iter().flatten() {
            diagnostics.extend(f.diagnostics.iter().cloned());
        }
    }
    let losses = artifacts.losses();
    let cfm_link = if config.freeze_profiles && config.power_offset_db != 0.0 {
        offset_link(&physical, factor)
    } else {
        physical.clone()
    };

    let t = Instant::now();
    let model = stage("cfm", CfmModel::new(&cfm_link, &artifacts.fits, &losses, config.cfm))?;
    diagnostics.extend(model.diagnostics().iter().cloned());
    let cuts = cfm_link.cut_positions();
    let reports: Vec<NliReport> = stage(
        "cfm",
        cuts.par_iter().map(|&c| model.nli_cfm5(c, rho)).collect::<Result<_>>(),
    )?;
    times.cfm = t.elapsed().as_secs_f64();

    let oracle: Vec<Option<f64>> = match config.oracle {
        None => vec![None; cuts.len()],
        Some((mode, opts)) => {
            let t = Instant::now();
            let profiles = match mode {
                OracleMode::Fitted => OracleProfiles::Fitted(&artifacts.fits),
                OracleMode::Deep => OracleProfiles::Sampled(&artifacts.evolutions),
            };
            let v = cuts
                .iter()
                .map(|&c| nli_reference(&cfm_link, profiles, &losses, c, &opts).map(Some))
                .collect::<Result<_>>();
            times.oracle = t.elapsed().as_secs_f64();
            stage("oracle", v)?
        }
    };

    let results = reports
        .into_iter()
        .zip(oracle)
        .map(|(report, oracle)| CutResult {
            nli_power: report.g_nli * report.bandwidth,
            report,
            oracle,
        })
        .collect();
    Ok(PipelineOutput {
        results,
        diagnostics,
        times,
        artifacts,
        cached,
    })
}

/// Median and minimum of a set of timings, s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub median: f64,
    pub min: f64,
    pub samples: Vec<f64>,
}

impl TimingStats {
    pub fn from_samples(samples: Vec<f64>) -> Self {
        let mut s = samples.clone();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let median = if n == 0 {
            f64::NAN
        } else if n % 2 == 1 {
            s[n / 2]
        } else {
            0.5 * (s[n / 2 - 1] + s[n / 2])
        };
        TimingStats {
            median,
            min: s.first().copied().unwrap_or(f64::NAN),
            samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub repetitions: usize,
    pub channels: usize,
    pub spans: usize,
    pub cuts: usize,
    /// `None` when the slow stages came from a cache.
    pub ode: Option<TimingStats>,
    pub fit: Option<TimingStats>,
    pub cfm: TimingStats,
    /// CFM stage time divided by the number of CUTs.
    pub cfm_per_cut: TimingStats,
}

/// Times each stage `repetitions` times (at least 3). With `cfm_only`, the
/// slow stages run once to build artifacts (or come from `cache`) and only
/// the closed form is timed.
pub fn benchmark(
    link: &Link,
    config: &PipelineConfig,
    rho: &dyn CorrectionFactors,
    repetitions: usize,
    cfm_only: bool,
    cache: Option<Artifacts>,
) -> Result<BenchReport> {
    if repetitions < 3 {
        return Err(Error::InvalidInput("benchmark needs at least 3 repetitions".into()));
    }
    link.ensure_valid()?;
    let cuts = link.cut_positions();
    let (mut ode, mut fit, mut cfm) = (Vec::new(), Vec::new(), Vec::new());
    let mut cache = cache;
    for _ in 0..repetitions {
        let mut times = StageTimes::default();
        let (artifacts, _) = if cfm_only {
            prepare_artifacts(link, config, cache.take(), &mut times)?
        } else {
            prepare_artifacts(link, config, None, &mut times)?
        };
        if !cfm_only {
            ode.push(times.ode);
            fit.push(times.fit);
        }
        let losses = artifacts.losses();
        let t = Instant::now();
        let model = CfmModel::new(link, &artifacts.fits, &losses, config.cfm)?;
        let reports: Vec<NliReport> = cuts
            .par_iter()
            .map(|&c| model.nli_cfm5(c, rho))
            .collect::<Result<_>>()?;
        cfm.push(t.elapsed().as_secs_f64());
        std::hint::black_box(reports);
        cache = Some(artifacts);
    }
    let n = cuts.len().max(1) as f64;
    Ok(BenchReport {
        repetitions,
        channels: link.channels.len(),
        spans: link.spans.len(),
        cuts: cuts.len(),
        ode: (!cfm_only).then(|| TimingStats::from_samples(ode)),
        fit: (!cfm_only).then(|| TimingStats::from_samples(fit)),
        cfm_per_cut: TimingStats::from_samples(cfm.iter().map(|t| t / n).collect()),
        cfm: TimingStats::from_samples(cfm),
    })
}
