//! Closed-form NLI evaluation: the incoherent island sum, its corrected form
//! with the coherence term, and the first-order (M = 1) legacy form.

use std::f64::consts::PI;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::fit::FittedProfile;
use crate::link::{Diagnostic, Link, Span};
use crate::special::{coherence_brace_f64, f_int_exact, si};
use crate::srs::PowerEvolution;
use crate::units::ISLAND_ARG_DIM;
use crate::{Error, Result};

/// |β2eff| below this is treated as the zero-dispersion singularity, s²/m.
pub const MIN_BETA2_EFF: f64 = 1e-30;

/// Series orders above this suggest a pathological profile fit.
pub const MAX_REASONABLE_M: usize = 120;

/// |2α1/σ| above which the first-order legacy form is flagged.
pub const LEGACY_X_LIMIT: f64 = 0.3;

const NLI_PREFACTOR: f64 = 16.0 / 27.0;

/// P(0)/P(L) for every channel of one span.
pub fn span_loss(ev: &PowerEvolution) -> Vec<f64> {
    ev.powers.iter().map(|p| p[0] / p[p.len() - 1]).collect()
}

/// Power-loss factors S_p(f_j), indexed `[span][channel]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanLossTable {
    pub s: Vec<Vec<f64>>,
}

impl SpanLossTable {
    pub fn from_evolutions(evs: &[PowerEvolution]) -> Self {
        SpanLossTable {
            s: evs.iter().map(span_loss).collect(),
        }
    }

    pub fn num_spans(&self) -> usize {
        self.s.len()
    }
}

/// Amplifier gains Γ_p(f_j), indexed `[span][channel]`.
pub fn amp_gains(link: &Link, losses: &SpanLossTable) -> Vec<Vec<f64>> {
    link.spans
        .iter()
        .zip(&losses.s)
        .map(|(span, s)| s.iter().enumerate().map(|(j, &loss)| span.gain(j, loss)).collect())
        .collect()
}

/// Launch PSD of every span: G^(ns)_j = G_j·Π_{p<ns} Γ_p(f_j)/S_p(f_j).
pub fn propagate_psd(launch_psd: &[f64], losses: &SpanLossTable, gains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(losses.num_spans());
    let mut g = launch_psd.to_vec();
    for (s, gamma) in losses.s.iter().zip(gains) {
        out.push(g.clone());
        for j in 0..g.len() {
            g[j] *= gamma[j] / s[j];
        }
    }
    out
}

/// Series order M = 1 + floor(10·|2α1/σ|).
pub fn choose_m(alpha1: f64, sigma: f64) -> usize {
    1 + (10.0 * (2.0 * alpha1 / sigma).abs()).floor() as usize
}

/// h(k1) = Σ_{k2=0..M} (2/k2!)·x^{k2} / (4α0 + (k1 + k2)σ), x = 2α1/σ.
pub fn h_coeff(k1: usize, m: usize, alpha0: f64, alpha1: f64, sigma: f64) -> f64 {
    let x = 2.0 * alpha1 / sigma;
    let mut term = 1.0; // x^k2 / k2!
    let mut sum = 0.0;
    for k2 in 0..=m {
        if k2 > 0 {
            term *= x / k2 as f64;
        }
        sum += 2.0 * term / (4.0 * alpha0 + (k1 + k2) as f64 * sigma);
    }
    sum
}

/// |ζ|² at phase mismatch ϱ, using the real-valued single-sum form.
pub fn zeta_sq(varrho: f64, alpha0: f64, alpha1: f64, sigma: f64, m: usize) -> f64 {
    let x = 2.0 * alpha1 / sigma;
    let mut term = 1.0;
    let mut sum = 0.0;
    for k1 in 0..=m {
        if k1 > 0 {
            term *= x / k1 as f64;
        }
        let a = 2.0 * alpha0 + k1 as f64 * sigma;
        sum += term * a / (a * a + varrho * varrho) * h_coeff(k1, m, alpha0, alpha1, sigma);
    }
    sum
}

/// β2 + πβ3(f_mch + f_cut − 2f_c).
pub fn beta2_eff(span: &Span, f_mch: f64, f_cut: f64) -> f64 {
    span.beta2_eff(f_mch, f_cut)
}

/// Which island kernel to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FintMode {
    /// π·asinh(x/2)
    #[default]
    Asinh,
    /// j·(Li2(−jx) − Li2(jx))
    Exact,
}

fn check_beta(beta2eff: f64) -> Result<()> {
    if !(beta2eff.abs() >= MIN_BETA2_EFF) {
        return Err(Error::DispersionSingularity { beta2_eff: beta2eff });
    }
    Ok(())
}

/// Rectangular-island integral of a/(a² + ϱ²) with a = 2α0 + k1σ, over the
/// interferer band [f_start, f_end] and the CUT band of width `bw_cut`.
#[allow(clippy::too_many_arguments)]
pub fn island_integral(
    k1: usize,
    fit: &FittedProfile,
    beta2eff: f64,
    bw_cut: f64,
    f_cut: f64,
    f_start: f64,
    f_end: f64,
    mode: FintMode,
) -> Result<f64> {
    check_beta(beta2eff)?;
    let a = 2.0 * fit.alpha0 + k1 as f64 * fit.sigma;
    Ok(island_kernel(a, beta2eff, bw_cut, f_end - f_cut, f_start - f_cut, mode))
}

#[inline]
fn island_kernel(a: f64, beta: f64, bw: f64, off_end: f64, off_start: f64, mode: FintMode) -> f64 {
    match mode {
        FintMode::Asinh => {
            let c = PI * PI * beta * bw / a;
            ((c * off_end).asinh() - (c * off_start).asinh()) / (4.0 * PI * beta)
        }
        FintMode::Exact => {
            let c = 2.0 * PI * PI * beta * bw / a;
            (f_int_exact(c * off_end) - f_int_exact(c * off_start)) / (4.0 * PI * PI * beta)
        }
    }
}

/// Inputs to the correction-factor laws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectionContext {
    /// 1-based span index.
    pub span: usize,
    /// 1-based channel index of the CUT.
    pub cut: usize,
    /// 1-based interferer index; `None` for CUT-only factors.
    pub interferer: Option<usize>,
    /// Σ_{p≤ns} β2,p·L_p, s².
    pub accumulated_dispersion: f64,
    /// CUT bandwidth, Hz.
    pub symbol_rate: f64,
    /// Modulation-format constant of the CUT.
    pub phi_cut: f64,
    /// Modulation-format constant of the interferer, if any.
    pub phi_interferer: Option<f64>,
}

/// Correction-factor laws applied to the closed form.
pub trait CorrectionFactors: Send + Sync {
    fn rho_cut(&self, ctx: &CorrectionContext) -> f64;
    fn rho_mch(&self, ctx: &CorrectionContext) -> f64;
    /// Weight of the coherence term; 0 disables it.
    fn rho_coh(&self) -> f64;
}

/// ρ_CUT = ρ_mch = 1, ρ_coh = 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityCorrection;

impl CorrectionFactors for IdentityCorrection {
    fn rho_cut(&self, _: &CorrectionContext) -> f64 {
        1.0
    }
    fn rho_mch(&self, _: &CorrectionContext) -> f64 {
        1.0
    }
    fn rho_coh(&self) -> f64 {
        0.0
    }
}

/// Span- and channel-independent constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantCorrection {
    pub rho_cut: f64,
    pub rho_mch: f64,
    pub rho_coh: f64,
}

impl Default for ConstantCorrection {
    fn default() -> Self {
        ConstantCorrection {
            rho_cut: 1.0,
            rho_mch: 1.0,
            rho_coh: 0.0,
        }
    }
}

impl ConstantCorrection {
    pub fn validate(&self) -> Result<()> {
        check_rho("rho_cut", self.rho_cut, false)?;
        check_rho("rho_mch", self.rho_mch, false)?;
        check_rho("rho_coh", self.rho_coh, true)?;
        Ok(())
    }
}

impl CorrectionFactors for ConstantCorrection {
    fn rho_cut(&self, _: &CorrectionContext) -> f64 {
        self.rho_cut
    }
    fn rho_mch(&self, _: &CorrectionContext) -> f64 {
        self.rho_mch
    }
    fn rho_coh(&self) -> f64 {
        self.rho_coh
    }
}

fn check_rho(name: &'static str, value: f64, zero_ok: bool) -> Result<f64> {
    let ok = value.is_finite() && (value > 0.0 || (zero_ok && value == 0.0));
    if ok {
        Ok(value)
    } else {
        Err(Error::InvalidCorrection { name, value })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CfmOptions {
    pub fint: FintMode,
    /// Keep the per-(span, interferer) breakdown in reports.
    pub breakdown: bool,
}

/// One (span, interferer) term of the incoherent sum, W/Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub span: usize,
    pub interferer: usize,
    pub value: f64,
}

/// NLI at the center of one CUT.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NliReport {
    /// 1-based channel index.
    pub cut: usize,
    pub f_cut: f64,
    pub bandwidth: f64,
    /// W/Hz
    pub g_nli: f64,
    pub incoherent: f64,
    pub coherence: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub breakdown: Vec<Contribution>,
    /// Evaluation time, s.
    pub eval_time: f64,
}

/// Per-(span, channel) exponential-series data: e^{−2x} and (a_k, c_k) with
/// a_k = 2α0 + kσ and c_k = x^k/k!·h(k).
#[derive(Debug, Clone, PartialEq)]
struct Series {
    alpha0: f64,
    alpha1: f64,
    sigma: f64,
    prefactor: f64,
    terms: Vec<(f64, f64)>,
}

impl Series {
    fn new(fit: &FittedProfile) -> Self {
        let (alpha0, alpha1, sigma) = (fit.alpha0, fit.alpha1, fit.sigma);
        let x = 2.0 * alpha1 / sigma;
        let m = choose_m(alpha1, sigma);
        let mut term = 1.0;
        let terms = (0..=m)
            .map(|k| {
                if k > 0 {
                    term *= x / k as f64;
                }
                (
                    2.0 * alpha0 + k as f64 * sigma,
                    term * h_coeff(k, m, alpha0, alpha1, sigma),
                )
            })
            .collect();
        Series {
            alpha0,
            alpha1,
            sigma,
            prefactor: (-2.0 * x).exp(),
            terms,
        }
    }

    fn x(&self) -> f64 {
        2.0 * self.alpha1 / self.sigma
    }
}

#[derive(Debug, Clone, PartialEq)]
struct SpanData {
    gamma: f64,
    length: f64,
    beta2: f64,
    beta3: f64,
    f_taylor_center: f64,
    /// Launch PSD per channel.
    psd: Vec<f64>,
    /// Π_{p≥ns} Γ_p/S_p per channel.
    post: Vec<f64>,
    /// Indexed by channel; `None` for pumps.
    series: Vec<Option<Series>>,
    accumulated_dispersion: f64,
}

impl SpanData {
    fn beta2_eff(&self, f_a: f64, f_b: f64) -> f64 {
        self.beta2 + PI * self.beta3 * (f_a + f_b - 2.0 * self.f_taylor_center)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ChannelData {
    f_center: f64,
    f_start: f64,
    f_end: f64,
    bandwidth: f64,
    phi: f64,
    is_pump: bool,
}

/// Precomputed closed-form model of a link: everything that does not
/// depend on the CUT.
#[derive(Debug, Clone, PartialEq)]
pub struct CfmModel {
    spans: Vec<SpanData>,
    channels: Vec<ChannelData>,
    options: CfmOptions,
    diagnostics: Vec<Diagnostic>,
}

impl CfmModel {
    /// `fits[span][channel]` must hold a profile for every non-pump channel.
    pub fn new(
        link: &Link,
        fits: &[Vec<Option<FittedProfile>>],
        losses: &SpanLossTable,
        options: CfmOptions,
    ) -> Result<Self> {
        debug_assert!(ISLAND_ARG_DIM.is_dimensionless());
        let ns = link.spans.len();
        let nc = link.channels.len();
        if fits.len() != ns || losses.num_spans() != ns {
            return Err(Error::InvalidInput(format!(
                "{} spans but {} fit rows and {} loss rows",
                ns,
                fits.len(),
                losses.num_spans()
            )));
        }
        let gains = amp_gains(link, losses);
        let psd = propagate_psd(&link.launch_psds(), losses, &gains);

        let mut post = vec![vec![1.0; nc]; ns];
        for p in (0..ns).rev() {
            for j in 0..nc {
                let next = if p + 1 < ns { post[p + 1][j] } else { 1.0 };
                post[p][j] = next * gains[p][j] / losses.s[p][j];
            }
        }

        let mut diagnostics = Vec::new();
        let mut spans = Vec::with_capacity(ns);
        let mut acc = 0.0;
        for (p, span) in link.spans.iter().enumerate() {
            acc += span.beta2 * span.length;
            if fits[p].len() != nc || losses.s[p].len() != nc {
                return Err(Error::InvalidInput(format!("span {}: table width mismatch", p + 1)));
            }
            let mut series = Vec::with_capacity(nc);
            for (j, ch) in link.channels.iter().enumerate() {
                if ch.is_pump {
                    series.push(None);
                    continue;
                }
                let fit = fits[p][j].as_ref().ok_or_else(|| {
                    Error::InvalidInput(format!("span {}: no profile fit for channel {}", p + 1, j + 1))
                })?;
                let m = choose_m(fit.alpha1, fit.sigma);
                if m > MAX_REASONABLE_M {
                    diagnostics.push(Diagnostic::warning(format!(
                        "span {}, channel {}: series order M = {m} suggests a pathological profile fit",
                        p + 1,
                        j + 1
                    )));
                }
                series.push(Some(Series::new(fit)));
            }
            spans.push(SpanData {
                gamma: span.gamma,
                length: span.length,
                beta2: span.beta2,
                beta3: span.beta3,
                f_taylor_center: span.f_taylor_center,
                psd: psd[p].clone(),
                post: post[p].clone(),
                series,
                accumulated_dispersion: acc,
            });
        }
        let channels = link
            .channels
            .iter()
            .map(|c| ChannelData {
                f_center: c.f_center,
                f_start: c.f_start(),
                f_end: c.f_end(),
                bandwidth: c.bandwidth,
                phi: c.mod_format_phi,
                is_pump: c.is_pump,
            })
            .collect();
        Ok(CfmModel {
            spans,
            channels,
            options,
            diagnostics,
        })
    }

    pub fn diagnostics(&self) -> &[Diagnostic] {
        &self.diagnostics
    }

    pub fn options(&self) -> CfmOptions {
        self.options
    }

    pub fn num_spans(&self) -> usize {
        self.spans.len()
    }

    /// Per-span launch PSDs, `[span][channel]`.
    pub fn span_psds(&self) -> Vec<Vec<f64>> {
        self.spans.iter().map(|s| s.psd.clone()).collect()
    }

    /// Multiplies every span-launch PSD by `factor`, leaving profiles and
    /// losses untouched.
    pub fn scale_psd(&mut self, factor: f64) {
        for s in &mut self.spans {
            for g in &mut s.psd {
                *g *= factor;
            }
        }
    }

    fn check_cut(&self, cut: usize) -> Result<&ChannelData> {
        match self.channels.get(cut) {
            Some(c) if !c.is_pump => Ok(c),
            Some(_) => Err(Error::InvalidInput(format!("channel {} is a pump, not a CUT", cut + 1))),
            None => Err(Error::InvalidInput(format!("CUT position {} out of range", cut + 1))),
        }
    }

    fn context(&self, span: usize, cut: usize, interferer: Option<usize>) -> CorrectionContext {
        CorrectionContext {
            span: span + 1,
            cut: cut + 1,
            interferer: interferer.map(|m| m + 1),
            accumulated_dispersion: self.spans[span].accumulated_dispersion,
            symbol_rate: self.channels[cut].bandwidth,
            phi_cut: self.channels[cut].phi,
            phi_interferer: interferer.map(|m| self.channels[m].phi),
        }
    }

    /// Incoherent sum over spans and interferers with an optional ρ weight.
    fn incoherent_sum(
        &self,
        cut: usize,
        rho: Option<&dyn CorrectionFactors>,
        breakdown: Option<&mut Vec<Contribution>>,
    ) -> Result<f64> {
        let c = self.check_cut(cut)?;
        let mut keep = breakdown;
        let mut total = 0.0;
        for (p, span) in self.spans.iter().enumerate() {
            let g_cut = span.psd[cut];
            let outer = span.gamma * span.gamma * g_cut * span.post[cut];
            for (m, ch) in self.channels.iter().enumerate() {
                let Some(series) = &span.series[m] else { continue };
                let beta = span.beta2_eff(ch.f_center, c.f_center);
                check_beta(beta).map_err(|e| Error::Contribution {
                    span: p + 1,
                    interferer: m + 1,
                    source: Box::new(e),
                })?;
                let off_end = ch.f_end - c.f_center;
                let off_start = ch.f_start - c.f_center;
                let mut sum = 0.0;
                for &(a, coef) in &series.terms {
                    sum += coef * island_kernel(a, beta, c.bandwidth, off_end, off_start, self.options.fint);
                }
                let fold = if m == cut { 1.0 } else { 2.0 };
                let g_m = span.psd[m];
                let mut v = NLI_PREFACTOR * outer * g_m * g_m * fold * series.prefactor * sum;
                if let Some(r) = rho {
                    let ctx = self.context(p, cut, Some(m));
                    let w = if m == cut {
                        check_rho("rho_cut", r.rho_cut(&ctx), false)?
                    } else {
                        check_rho("rho_mch", r.rho_mch(&ctx), false)?
                    };
                    v *= w;
                }
                if let Some(b) = keep.as_deref_mut() {
                    b.push(Contribution {
                        span: p + 1,
                        interferer: m + 1,
                        value: v,
                    });
                }
                total += v;
            }
        }
        Ok(total)
    }

    /// Incoherent closed-form G_NLI at the center of channel position `cut`.
    pub fn nli_incoherent(&self, cut: usize) -> Result<f64> {
        self.incoherent_sum(cut, None, None)
    }

    /// The approximate coherent-accumulation term, W/Hz.
    pub fn coherence_term(&self, cut: usize, rho: &dyn CorrectionFactors) -> Result<f64> {
        let c = self.check_cut(cut)?;
        let rho_coh = check_rho("rho_coh", rho.rho_coh(), true)?;
        let brace = coherence_brace_f64(self.spans.len() as u64);
        if rho_coh == 0.0 || brace == 0.0 {
            return Ok(0.0);
        }
        let bw = c.bandwidth;
        let mut total = 0.0;
        for (p, span) in self.spans.iter().enumerate() {
            let series = span.series[cut].as_ref().expect("CUT has a fit");
            let alpha0 = series.alpha0;
            let beta = span.beta2_eff(c.f_center, c.f_center);
            check_beta(beta)?;
            let ctx = self.context(p, cut, None);
            let rho_cut = check_rho("rho_cut", rho.rho_cut(&ctx), false)?;
            let g = span.psd[cut];
            let si_ratio = si(PI * PI * beta * span.length * bw * bw) / (PI * alpha0 * span.length);
            total += span.gamma * span.gamma * g * g * g * rho_cut * span.post[cut] / (4.0 * PI * beta * alpha0)
                * 2.0
                * si_ratio;
        }
        Ok(NLI_PREFACTOR * rho_coh * total * brace)
    }

    /// Corrected closed form: ρ-weighted incoherent sum plus coherence term.
    pub fn nli_cfm5(&self, cut: usize, rho: &dyn CorrectionFactors) -> Result<NliReport> {
        let t0 = Instant::now();
        let c = self.check_cut(cut)?;
        let mut breakdown = Vec::new();
        let b = self.options.breakdown.then_some(&mut breakdown);
        let incoherent = self.incoherent_sum(cut, Some(rho), b)?;
        let coherence = self.coherence_term(cut, rho)?;
        Ok(NliReport {
            cut: cut + 1,
            f_cut: c.f_center,
            bandwidth: c.bandwidth,
            g_nli: incoherent + coherence,
            incoherent,
            coherence,
            breakdown,
            eval_time: t0.elapsed().as_secs_f64(),
        })
    }

    /// First-order form valid for |2α1/σ| ≪ 1: M forced to 1 and e^{−2x}
    /// linearised. Returns the value and a diagnostic per large |x|.
    pub fn nli_m1_legacy(&self, cut: usize) -> Result<(f64, Vec<Diagnostic>)> {
        let c = self.check_cut(cut)?;
        let mut diags = Vec::new();
        let mut total = 0.0;
        for (p, span) in self.spans.iter().enumerate() {
            let g_cut = span.psd[cut];
            let outer = span.gamma * span.gamma * g_cut * span.post[cut];
            for (m, ch) in self.channels.iter().enumerate() {
                let Some(s) = &span.series[m] else { continue };
                let x = s.x();
                if x.abs() > LEGACY_X_LIMIT {
                    diags.push(Diagnostic::warning(format!(
                        "span {}, channel {}: |2 alpha1/sigma| = {:.3} exceeds {LEGACY_X_LIMIT}; first-order form is unreliable",
                        p + 1,
                        m + 1,
                        x.abs()
                    )));
                }
                let beta = span.beta2_eff(ch.f_center, c.f_center);
                check_beta(beta).map_err(|e| Error::Contribution {
                    span: p + 1,
                    interferer: m + 1,
                    source: Box::new(e),
                })?;
                let off_end = ch.f_end - c.f_center;
                let off_start = ch.f_start - c.f_center;
                let mut sum = 0.0;
                let mut term = 1.0;
                for k1 in 0..=1usize {
                    if k1 == 1 {
                        term = x;
                    }
                    let a = 2.0 * s.alpha0 + k1 as f64 * s.sigma;
                    let h = h_coeff(k1, 1, s.alpha0, s.alpha1, s.sigma);
                    sum += term * h * island_kernel(a, beta, c.bandwidth, off_end, off_start, self.options.fint);
                }
                let fold = if m == cut { 1.0 } else { 2.0 };
                let g_m = span.psd[m];
                total += NLI_PREFACTOR * outer * g_m * g_m * fold * (1.0 - 2.0 * x) * sum;
            }
        }
        Ok((total, diags))
    }

    /// Largest |2α1/σ| over all spans and non-pump channels.
    pub fn max_abs_x(&self) -> f64 {
        self.spans
            .iter()
            .flat_map(|s| s.series.iter().flatten())
            .map(|s| s.x().abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link::{AmpGain, Channel, RamanGainProfile};
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fit(alpha0: f64, alpha1: f64, sigma: f64) -> FittedProfile {
        FittedProfile {
            alpha0,
            alpha1,
            sigma,
            ..FittedProfile::lossy(1, 1, alpha0)
        }
    }

    /// |Σ_k x^k/k!·1/(a_k − jϱ)|², the complex form of |ζ|².
    fn zeta_sq_complex(varrho: f64, alpha0: f64, alpha1: f64, sigma: f64, m: usize) -> f64 {
        let x = 2.0 * alpha1 / sigma;
        let mut z = Complex64::new(0.0, 0.0);
        let mut fact = 1.0;
        for k in 0..=m {
            if k > 0 {
                fact *= k as f64;
            }
            let a = 2.0 * alpha0 + k as f64 * sigma;
            z += x.powi(k as i32) / fact / Complex64::new(a, -varrho);
        }
        z.norm_sqr()
    }

    #[test]
    fn series_order() {
        assert_eq!(choose_m(0.73 / 2.0 * 3e-5, 3e-5), 8);
        assert_eq!(choose_m(0.0, 3e-5), 1);
        assert_eq!(choose_m(-0.099 / 2.0 * 3e-5, 3e-5), 1);
    }

    #[test]
    fn h_coefficient_limits() {
        let (a0, s) = (2.3e-5, 4.6e-5);
        assert!((h_coeff(0, 1, a0, 0.0, s) - 2.0 / (4.0 * a0)).abs() < 1e-9);
        assert!((h_coeff(3, 1, a0, 0.0, s) - 2.0 / (4.0 * a0 + 3.0 * s)).abs() < 1e-9);
        assert_eq!(h_coeff(0, 0, a0, 5e-6, s), 2.0 / (4.0 * a0));
    }

    #[test]
    fn zeta_sq_limits() {
        let (a0, s) = (2.3e-5, 4.6e-5);
        let m = choose_m(0.0, s);
        for rho in [0.0, 1e-5, 3e-4] {
            let expect = 1.0 / (4.0 * a0 * a0 + rho * rho);
            assert!((zeta_sq(rho, a0, 0.0, s, m) / expect - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn zeta_sq_matches_double_sum() {
        // the double sum with both Lorentzian denominators, brute force
        let (a0, a1, s, m) = (2.2e-5, -7e-6, 4.1e-5, 6);
        let x = 2.0 * a1 / s;
        let fact = |k: usize| (1..=k).map(|i| i as f64).product::<f64>();
        for rho in [0.0, 2e-5, 1e-4, 7e-4] {
            let mut d = 0.0;
            for k1 in 0..=m {
                for k2 in 0..=m {
                    let a = 2.0 * a0 + k1 as f64 * s;
                    d += 2.0 / (fact(k1) * fact(k2)) * x.powi((k1 + k2) as i32) / (4.0 * a0 + (k1 + k2) as f64 * s) * a
                        / (a * a + rho * rho);
                }
            }
            assert!((zeta_sq(rho, a0, a1, s, m) / d - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zeta_sq_matches_complex_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let a0 = rng.gen_range(1e-5..5e-5);
            let s = a0 * rng.gen_range(0.5..8.0);
            let a1 = a0 * rng.gen_range(-1.0..1.0);
            let m = rng.gen_range(0..=8);
            let rho = a0 * 10f64.powf(rng.gen_range(-3.0..2.0));
            let a = zeta_sq(rho, a0, a1, s, m);
            let b = zeta_sq_complex(rho, a0, a1, s, m);
            assert!((a / b - 1.0).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn beta2_eff_cases() {
        let span = test_span(1);
        assert_eq!(beta2_eff(&span, span.f_taylor_center, span.f_taylor_center), span.beta2);
        let mut flat = span.clone();
        flat.beta3 = 0.0;
        assert_eq!(beta2_eff(&flat, 190e12, 196e12), span.beta2);
        let mut s = span.clone();
        s.beta2 = -21.3e-27;
        s.beta3 = 0.12e-39;
        s.f_taylor_center = 193e12;
        let v = beta2_eff(&s, 198e12, 198e12);
        let alt = s.beta3.mul_add(PI * 1e13, s.beta2);
        assert!((v - alt).abs() <= 2.0 * f64::EPSILON * v.abs());
    }

    fn trapezoid_2d(f: impl Fn(f64, f64) -> f64, x: (f64, f64), y: (f64, f64), n: usize) -> f64 {
        let hx = (x.1 - x.0) / n as f64;
        let hy = (y.1 - y.0) / n as f64;
        let mut s = 0.0;
        for i in 0..=n {
            let wx = if i == 0 || i == n { 0.5 } else { 1.0 };
            for k in 0..=n {
                let wy = if k == 0 || k == n { 0.5 } else { 1.0 };
                s += wx * wy * f(x.0 + i as f64 * hx, y.0 + k as f64 * hy);
            }
        }
        s * hx * hy
    }

    #[test]
    fn island_integral_matches_quadrature() {
        let f = fit(2.3e-5, 0.0, 4.6e-5);
        let beta = -21.7e-27;
        let bw = 32e9;
        let fc = 193e12;
        let a = 2.0 * f.alpha0;
        let integrand = |f1: f64, f2: f64| {
            let r = 4.0 * PI * PI * (f1 - fc) * (f2 - fc) * beta;
            a / (a * a + r * r)
        };
        // self term
        let exact = island_integral(0, &f, beta, bw, fc, fc - bw / 2.0, fc + bw / 2.0, FintMode::Exact).unwrap();
        let asinh = island_integral(0, &f, beta, bw, fc, fc - bw / 2.0, fc + bw / 2.0, FintMode::Asinh).unwrap();
        let q = trapezoid_2d(
            integrand,
            (fc - bw / 2.0, fc + bw / 2.0),
            (fc - bw / 2.0, fc + bw / 2.0),
            2000,
        );
        assert!((exact / q - 1.0).abs() < 2e-3, "{exact} vs {q}");
        // the asinh kernel is within its approximation error
        assert!((asinh / q - 1.0).abs() < 0.06, "{asinh} vs {q}");
        // interferer 5 THz away: large arguments, asinh is accurate
        let off = 5e12;
        let far = island_integral(
            0,
            &f,
            beta,
            bw,
            fc,
            fc + off - bw / 2.0,
            fc + off + bw / 2.0,
            FintMode::Asinh,
        )
        .unwrap();
        let far_exact = island_integral(
            0,
            &f,
            beta,
            bw,
            fc,
            fc + off - bw / 2.0,
            fc + off + bw / 2.0,
            FintMode::Exact,
        )
        .unwrap();
        assert!((far / far_exact - 1.0).abs() < 0.02);
    }

    #[test]
    fn island_integral_symmetries() {
        let f = fit(2.3e-5, 1e-6, 4.6e-5);
        let (beta, bw, fc) = (-21.7e-27, 32e9, 193e12);
        for mode in [FintMode::Asinh, FintMode::Exact] {
            for k in 0..3 {
                let up = island_integral(k, &f, beta, bw, fc, fc + 0.95e12, fc + 1.05e12, mode).unwrap();
                let down = island_integral(k, &f, beta, bw, fc, fc - 1.05e12, fc - 0.95e12, mode).unwrap();
                assert!((up - down).abs() <= 1e-14 * up.abs());
                let flipped = island_integral(k, &f, -beta, bw, fc, fc - 1.05e12, fc - 0.95e12, mode).unwrap();
                assert!((up - flipped).abs() <= 1e-14 * up.abs());
                assert!(up > 0.0);
            }
        }
    }

    #[test]
    fn island_integral_rejects_zero_dispersion() {
        let f = fit(2.3e-5, 0.0, 4.6e-5);
        let r = island_integral(
            0,
            &f,
            1e-31,
            32e9,
            193e12,
            193e12 - 16e9,
            193e12 + 16e9,
            FintMode::Asinh,
        );
        assert!(matches!(r, Err(Error::DispersionSingularity { .. })));
    }

    // --- link-level fixtures ---

    fn test_span(nc: usize) -> Span {
        Span {
            length: 100e3,
            gamma: 1.3e-3,
            beta2: -21.7e-27,
            beta3: 0.14e-39,
            f_taylor_center: 193e12,
            intrinsic_alpha: vec![2.3e-5; nc],
            amp_gain: AmpGain::Transparent,
            raman: RamanGainProfile::none(),
        }
    }

    fn comb(nc: usize, spacing: f64, bw: f64, psd: f64) -> Vec<Channel> {
        let f0 = 193e12 - spacing * (nc as f64 - 1.0) / 2.0;
        (0..nc)
            .map(|j| Channel::new(j + 1, f0 + spacing * j as f64, bw, psd))
            .collect()
    }

    /// Link with frozen Raman-free profiles and transparent amplification.
    fn model(nc: usize, ns: usize, fits_x: impl Fn(usize, usize) -> (f64, f64, f64)) -> (Link, CfmModel) {
        let link = Link {
            spans: (0..ns).map(|_| test_span(nc)).collect(),
            channels: comb(nc, 100e9, 64e9, 1e-3 / 64e9),
            cut_selection: None,
        };
        let fits: Vec<Vec<Option<FittedProfile>>> = (0..ns)
            .map(|p| {
                (0..nc)
                    .map(|j| {
                        let (a0, a1, s) = fits_x(p, j);
                        Some(fit(a0, a1, s))
                    })
                    .collect()
            })
            .collect();
        let losses = SpanLossTable {
            s: (0..ns).map(|_| vec![(4.6f64).exp(); nc]).collect(),
        };
        let m = CfmModel::new(&link, &fits, &losses, CfmOptions::default()).unwrap();
        (link, m)
    }

    fn raman_free(_: usize, _: usize) -> (f64, f64, f64) {
        (2.3e-5, 0.0, 4.6e-5)
    }

    #[test]
    fn span_loss_factors() {
        let ev = PowerEvolution {
            span_index: 1,
            z_grid: vec![0.0, 50e3, 100e3],
            powers: vec![vec![1.0, (-2.3f64).exp(), (-4.6f64).exp()], vec![2.0, 2.0, 2.0]],
            launch: vec![1.0, 2.0],
        };
        let s = span_loss(&ev);
        assert!((s[0] - 99.484_315_641_933_8).abs() < 1e-9);
        assert_eq!(s[1], 1.0);
        let t = SpanLossTable::from_evolutions(std::slice::from_ref(&ev));
        for (j, p) in ev.powers.iter().enumerate() {
            assert!((t.s[0][j] * p[2] / p[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn psd_ladders() {
        let launch = [1.0, 2.0];
        let losses = SpanLossTable {
            s: vec![vec![10.0, 20.0], vec![10.0, 20.0]],
        };
        let transparent = propagate_psd(&launch, &losses, &losses.s);
        assert_eq!(transparent, vec![launch.to_vec(), launch.to_vec()]);
        let unity = vec![vec![1.0; 2]; 2];
        let g = propagate_psd(&launch, &losses, &unity);
        assert_eq!(g[1], vec![0.1, 0.1]);
        let single = propagate_psd(
            &launch,
            &SpanLossTable {
                s: vec![vec![3.0, 3.0]],
            },
            &[vec![1.0; 2]],
        );
        assert_eq!(single, vec![launch.to_vec()]);
    }

    #[test]
    fn zero_gamma_gives_zero() {
        let (mut link, _) = model(5, 1, raman_free);
        link.spans[0].gamma = 0.0;
        let fits = vec![(0..5).map(|_| Some(fit(2.3e-5, 0.0, 4.6e-5))).collect()];
        let losses = SpanLossTable { s: vec![vec![99.0; 5]] };
        let m = CfmModel::new(&link, &fits, &losses, CfmOptions::default()).unwrap();
        assert_eq!(m.nli_incoherent(2).unwrap(), 0.0);
    }

    #[test]
    fn single_span_raman_free_is_textbook_gn() {
        // (16/27)·γ²·G³·Σ_m (2−δ)·asinh-difference/(4πβ)/(2α), the Raman-free GN closed form
        let (link, m) = model(5, 1, raman_free);
        let cut = 2;
        let span = &link.spans[0];
        let a = 2.0 * 2.3e-5;
        let g = link.channels[0].launch_psd;
        let fc = link.channels[cut].f_center;
        let bw = link.channels[cut].bandwidth;
        let post = 1.0; // transparent
        let mut expect = 0.0;
        for (j, ch) in link.channels.iter().enumerate() {
            let beta = span.beta2 + PI * span.beta3 * (ch.f_center + fc - 2.0 * span.f_taylor_center);
            let d = ((PI * PI * beta * bw * (ch.f_end() - fc) / a).asinh()
                - (PI * PI * beta * bw * (ch.f_start() - fc) / a).asinh())
                / (4.0 * PI * beta);
            let fold = if j == cut { 1.0 } else { 2.0 };
            expect += 16.0 / 27.0 * span.gamma.powi(2) * g.powi(3) * fold * post * d / a;
        }
        let v = m.nli_incoherent(cut).unwrap();
        assert!((v / expect - 1.0).abs() < 1e-13, "{v} vs {expect}");
    }

    #[test]
    fn identity_cfm5_is_bit_identical() {
        let (_, m) = model(7, 3, |p, j| (2.2e-5 + 1e-7 * j as f64, -3e-6 + 1e-6 * p as f64, 4.4e-5));
        for cut in 0..7 {
            let r = m.nli_cfm5(cut, &IdentityCorrection).unwrap();
            assert_eq!(r.incoherent.to_bits(), m.nli_incoherent(cut).unwrap().to_bits());
            assert_eq!(r.coherence, 0.0);
            assert_eq!(r.g_nli, r.incoherent);
        }
    }

    #[test]
    fn rho_mch_scales_only_cross_terms() {
        let opts = CfmOptions {
            breakdown: true,
            ..Default::default()
        };
        let (link, m0) = model(5, 2, raman_free);
        let m = CfmModel { options: opts, ..m0 };
        let full = m.nli_cfm5(1, &IdentityCorrection).unwrap();
        let half = ConstantCorrection {
            rho_mch: 0.5,
            ..Default::default()
        };
        let r = m.nli_cfm5(1, &half).unwrap();
        for (a, b) in full.breakdown.iter().zip(&r.breakdown) {
            let expect = if a.interferer == 2 { a.value } else { 0.5 * a.value };
            assert_eq!(b.value, expect);
        }
        assert_eq!(full.breakdown.len(), link.spans.len() * link.channels.len());
    }

    #[test]
    fn coherence_term_structure() {
        let (_, single) = model(3, 1, raman_free);
        let on = ConstantCorrection {
            rho_coh: 1.0,
            ..Default::default()
        };
        assert_eq!(single.coherence_term(1, &on).unwrap(), 0.0);
        let (link, four) = model(3, 4, raman_free);
        assert_eq!(four.coherence_term(1, &IdentityCorrection).unwrap(), 0.0);
        let v = four.coherence_term(1, &on).unwrap();
        // independent re-evaluation
        let span = &link.spans[0];
        let ch = &link.channels[1];
        let (a0, g, bw, l) = (2.3e-5, ch.launch_psd, ch.bandwidth, span.length);
        let beta = span.beta2 + 2.0 * PI * span.beta3 * (ch.f_center - span.f_taylor_center);
        let per_span = span.gamma.powi(2) * g.powi(3) * 2.0 * si(PI * PI * beta * l * bw * bw)
            / (4.0 * PI * beta * a0 * PI * a0 * l);
        let expect = 16.0 / 27.0 * 4.0 * per_span * (11.0 / 6.0 - 0.75);
        assert!((v / expect - 1.0).abs() < 1e-13, "{v} vs {expect}");
        assert!(v > 0.0);
        let r = four.nli_cfm5(1, &on).unwrap();
        assert_eq!(r.g_nli, r.incoherent + r.coherence);
    }

    #[test]
    fn invalid_corrections_are_rejected() {
        let (_, m) = model(3, 1, raman_free);
        let bad = ConstantCorrection {
            rho_mch: -1.0,
            ..Default::default()
        };
        assert!(matches!(
            m.nli_cfm5(1, &bad),
            Err(Error::InvalidCorrection { name: "rho_mch", .. })
        ));
        assert!(bad.validate().is_err());
        assert!(ConstantCorrection::default().validate().is_ok());
    }

    #[test]
    fn cubic_homogeneity() {
        let (_, mut m) = model(5, 2, |_, j| (2.3e-5, 2e-6 * (j as f64 - 2.0), 4.6e-5));
        let base: Vec<f64> = (0..5).map(|c| m.nli_incoherent(c).unwrap()).collect();
        m.scale_psd(10.0);
        for (c, b) in base.iter().enumerate() {
            let v = m.nli_incoherent(c).unwrap();
            assert!((v / (1000.0 * b) - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn two_transparent_spans_double_the_nli() {
        let (_, one) = model(5, 1, raman_free);
        let (_, two) = model(5, 2, raman_free);
        for c in 0..5 {
            let a = one.nli_incoherent(c).unwrap();
            let b = two.nli_incoherent(c).unwrap();
            assert!((b / (2.0 * a) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn cross_terms_decay_with_distance() {
        let opts = CfmOptions {
            breakdown: true,
            ..Default::default()
        };
        let (_, m0) = model(11, 1, raman_free);
        let m = CfmModel { options: opts, ..m0 };
        let cut = 5;
        let r = m.nli_cfm5(cut, &IdentityCorrection).unwrap();
        let by = |i: usize| r.breakdown.iter().find(|c| c.interferer == i + 1).unwrap().value;
        for d in 1..5 {
            assert!(by(cut + d + 1) <= by(cut + d));
            assert!(by(cut - d - 1) <= by(cut - d));
        }
    }

    #[test]
    fn legacy_form_agrees_for_small_x_and_not_for_large() {
        let (_, free) = model(5, 2, raman_free);
        let (v, d) = free.nli_m1_legacy(2).unwrap();
        assert!((v / free.nli_incoherent(2).unwrap() - 1.0).abs() < 1e-14);
        assert!(d.is_empty());

        let small = |x: f64| move |_: usize, _: usize| (2.3e-5, x * 4.6e-5 / 2.0, 4.6e-5);
        let (_, m) = model(5, 2, small(0.05));
        let gap = (m.nli_m1_legacy(2).unwrap().0 / m.nli_incoherent(2).unwrap() - 1.0).abs();
        assert!(gap < 0.01, "{gap}");
        let (_, m) = model(5, 2, small(0.8));
        let (v, d) = m.nli_m1_legacy(2).unwrap();
        let gap = (v / m.nli_incoherent(2).unwrap() - 1.0).abs();
        assert!(gap > 0.05, "{gap}");
        assert!(!d.is_empty());
    }

    #[test]
    fn pumps_are_not_interferers_or_cuts() {
        let nc = 4;
        let mut link = Link {
            spans: vec![test_span(nc)],
            channels: comb(3, 100e9, 64e9, 1e-3 / 64e9),
            cut_selection: None,
        };
        link.channels.push(Channel::pump(4, 206e12, 1e9, 0.3));
        let fits = vec![vec![
            Some(fit(2.3e-5, 0.0, 4.6e-5)),
            Some(fit(2.3e-5, 0.0, 4.6e-5)),
            Some(fit(2.3e-5, 0.0, 4.6e-5)),
            None,
        ]];
        let losses = SpanLossTable {
            s: vec![vec![99.0; nc]],
        };
        let m = CfmModel::new(&link, &fits, &losses, CfmOptions::default()).unwrap();
        assert!(m.nli_incoherent(3).is_err());
        let (_, plain) = model(3, 1, raman_free);
        let a = m.nli_incoherent(1).unwrap();
        let b = plain.nli_incoherent(1).unwrap();
        assert!((a / b - 1.0).abs() < 1e-14);
    }
}
