//! Physical description of a multi-span WDM link.
//!
//! Attenuations are stored as field attenuation in Np/m, so power decays as
//! `exp(-2·alpha·z)` in the absence of SRS. Dispersion is stored as β2/β3
//! Taylor-expanded around each span's own center frequency.

use serde::{Deserialize, Serialize};

use crate::units;

/// Loss below which the closed form's long-span assumption starts to break.
pub const MIN_SPAN_LOSS_DB: f64 = 8.0;

/// Dispersion magnitude below which MCI islands stop being negligible.
pub const MIN_DISPERSION_PS_NM_KM: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    /// 1-based ordinal within the comb.
    pub index: usize,
    /// Center frequency, Hz.
    pub f_center: f64,
    /// Rectangular null-to-null width, Hz (the symbol rate).
    pub bandwidth: f64,
    /// Flat-top PSD at launch, W/Hz.
    pub launch_psd: f64,
    /// EGN modulation-format constant; only correction plugins read it.
    pub mod_format_phi: f64,
    /// Co-propagating Raman pump: takes part in SRS, never in NLI sums.
    pub is_pump: bool,
}

impl Channel {
    pub fn new(index: usize, f_center: f64, bandwidth: f64, launch_psd: f64) -> Self {
        Channel {
            index,
            f_center,
            bandwidth,
            launch_psd,
            mod_format_phi: 1.0,
            is_pump: false,
        }
    }

    /// A forward pump of total power `power` [W] occupying `bandwidth` [Hz].
    pub fn pump(index: usize, f_center: f64, bandwidth: f64, power: f64) -> Self {
        Channel {
            is_pump: true,
            ..Channel::new(index, f_center, bandwidth, power / bandwidth)
        }
    }

    pub fn f_start(&self) -> f64 {
        self.f_center - self.bandwidth / 2.0
    }

    pub fn f_end(&self) -> f64 {
        self.f_center + self.bandwidth / 2.0
    }

    /// Launch power P(0) = PSD × bandwidth, W.
    pub fn launch_power(&self) -> f64 {
        self.launch_psd * self.bandwidth
    }
}

/// Odd Raman gain function C_R(u) in 1/(W·m). Only u ≥ 0 is stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RamanGainProfile {
    /// Linear in |u| up to `delta_f`, zero beyond.
    Triangular { c_r_max: f64, delta_f: f64 },
    /// Linear interpolation through `(u, c_r)` samples, zero past the last one.
    Tabulated { samples: Vec<(f64, f64)> },
}

impl RamanGainProfile {
    /// Profile with no Raman interaction at all.
    pub fn none() -> Self {
        RamanGainProfile::Triangular {
            c_r_max: 0.0,
            delta_f: 1.0,
        }
    }

    pub fn triangular(c_r_max: f64, delta_f: f64) -> crate::Result<Self> {
        if !(c_r_max >= 0.0 && c_r_max.is_finite()) || !(delta_f > 0.0 && delta_f.is_finite()) {
            return Err(crate::Error::InvalidInput(format!(
                "triangular Raman profile needs c_r_max >= 0 and delta_f > 0 (got {c_r_max}, {delta_f})"
            )));
        }
        Ok(RamanGainProfile::Triangular { c_r_max, delta_f })
    }

    /// Builds a tabulated profile. A leading `(0, 0)` sample is added when absent.
    pub fn tabulated(mut samples: Vec<(f64, f64)>) -> crate::Result<Self> {
        let bad = |msg: &str| Err(crate::Error::InvalidInput(format!("tabulated Raman profile: {msg}")));
        if samples.is_empty() {
            return bad("no samples");
        }
        if samples
            .iter()
            .any(|&(u, c)| !u.is_finite() || !c.is_finite() || u < 0.0 || c < 0.0)
        {
            return bad("samples must be finite with u >= 0 and c_r >= 0");
        }
        if samples.windows(2).any(|w| w[1].0 <= w[0].0) {
            return bad("frequencies must be strictly increasing");
        }
        if samples[0].0 == 0.0 {
            if samples[0].1 != 0.0 {
                return bad("C_R(0) must be 0");
            }
        } else {
            samples.insert(0, (0.0, 0.0));
        }
        Ok(RamanGainProfile::Tabulated { samples })
    }

    /// C_R(u), odd in u.
    pub fn gain(&self, u: f64) -> f64 {
        let mag = u.abs();
        let g = match self {
            RamanGainProfile::Triangular { c_r_max, delta_f } => {
                if mag > *delta_f {
                    0.0
                } else {
                    c_r_max / delta_f * mag
                }
            }
            RamanGainProfile::Tabulated { samples } => interpolate(samples, mag),
        };
        if u < 0.0 {
            -g
        } else {
            g
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            RamanGainProfile::Triangular { c_r_max, .. } => *c_r_max == 0.0,
            RamanGainProfile::Tabulated { samples } => samples.iter().all(|&(_, c)| c == 0.0),
        }
    }
}

fn interpolate(samples: &[(f64, f64)], u: f64) -> f64 {
    let last = samples[samples.len() - 1];
    if u > last.0 {
        return 0.0;
    }
    if u == last.0 {
        return last.1;
    }
    let k = samples.partition_point(|&(x, _)| x <= u);
    let (u0, c0) = samples[k - 1];
    let (u1, c1) = samples[k];
    c0 + (c1 - c0) * (u - u0) / (u1 - u0)
}

/// Amplifier power gain Γ at the end of a span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmpGain {
    /// Per-channel linear gain, aligned with the link's channel order.
    PerChannel(Vec<f64>),
    /// Γ(f) = S(f): restores every channel to its span-launch power.
    Transparent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Span {
    /// Span length L_s, m.
    pub length: f64,
    /// Nonlinearity coefficient, 1/(W·m).
    pub gamma: f64,
    /// s²/m
    pub beta2: f64,
    /// s³/m
    pub beta3: f64,
    /// Center of the dispersion Taylor expansion, Hz.
    pub f_taylor_center: f64,
    /// Field attenuation per channel (channel order), Np/m.
    pub intrinsic_alpha: Vec<f64>,
    pub amp_gain: AmpGain,
    pub raman: RamanGainProfile,
}

impl Span {
    /// β2 + π·β3·(f_a + f_b − 2·f_c).
    pub fn beta2_eff(&self, f_a: f64, f_b: f64) -> f64 {
        self.beta2 + std::f64::consts::PI * self.beta3 * (f_a + f_b - 2.0 * self.f_taylor_center)
    }

    /// Amplifier gain for channel position `j` given that span's loss factor.
    pub fn gain(&self, j: usize, loss: f64) -> f64 {
        match &self.amp_gain {
            AmpGain::PerChannel(g) => g[j],
            AmpGain::Transparent => loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub spans: Vec<Span>,
    pub channels: Vec<Channel>,
    /// 1-based channel indices to evaluate; `None` means every non-pump channel.
    pub cut_selection: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Info,
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    pub fn error(message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            message: message.into(),
        }
    }

    pub fn warning(message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            message: message.into(),
        }
    }

    pub fn info(message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Info,
            message: message.into(),
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = match self.severity {
            Severity::Info => "info",
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

impl Link {
    /// Channel positions (0-based) that are evaluated as CUT.
    pub fn cut_positions(&self) -> Vec<usize> {
        match &self.cut_selection {
            Some(sel) => sel.iter().map(|&i| i - 1).collect(),
            None => self
                .channels
                .iter()
                .enumerate()
                .filter(|(_, c)| !c.is_pump)
                .map(|(j, _)| j)
                .collect(),
        }
    }

    pub fn launch_powers(&self) -> Vec<f64> {
        self.channels.iter().map(Channel::launch_power).collect()
    }

    pub fn launch_psds(&self) -> Vec<f64> {
        self.channels.iter().map(|c| c.launch_psd).collect()
    }

    /// Checks every invariant; warnings flag regimes where the closed form loses accuracy.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        if self.spans.is_empty() {
            out.push(Diagnostic::error("link has no spans"));
        }
        if self.channels.is_empty() {
            out.push(Diagnostic::error("link has no channels"));
        }

        for (j, ch) in self.channels.iter().enumerate() {
            let id = j + 1;
            if ch.index != id {
                out.push(Diagnostic::error(format!(
                    "channel at position {id} carries index {}",
                    ch.index
                )));
            }
            if !(ch.f_center > 0.0 && ch.f_center.is_finite()) {
                out.push(Diagnostic::error(format!("channel {id}: f_center must be > 0")));
            }
            if !(ch.bandwidth > 0.0 && ch.bandwidth.is_finite()) {
                out.push(Diagnostic::error(format!("channel {id}: bandwidth must be > 0")));
            }
            if !(ch.launch_psd >= 0.0 && ch.launch_psd.is_finite()) {
                out.push(Diagnostic::error(format!("channel {id}: launch_psd must be >= 0")));
            } else if ch.launch_psd == 0.0 {
                out.push(Diagnostic::error(format!(
                    "channel {id}: launch power must be > 0 for the SRS solve"
                )));
            }
        }
        for w in self.channels.windows(2) {
            if w[1].f_center <= w[0].f_center {
                out.push(Diagnostic::error(format!(
                    "overlapping channels: {} and {} are not strictly increasing in frequency",
                    w[0].index, w[1].index
                )));
            } else if w[1].f_start() < w[0].f_end() {
                out.push(Diagnostic::warning(format!(
                    "overlapping channels: bands of {} and {} overlap",
                    w[0].index, w[1].index
                )));
            }
        }

        let n = self.channels.len();
        for (s, span) in self.spans.iter().enumerate() {
            let id = s + 1;
            if !(span.length > 0.0 && span.length.is_finite()) {
                out.push(Diagnostic::error(format!("span {id}: length must be > 0")));
            }
            if !(span.gamma >= 0.0 && span.gamma.is_finite()) {
                out.push(Diagnostic::error(format!("span {id}: gamma must be >= 0")));
            }
            if !(span.f_taylor_center > 0.0) {
                out.push(Diagnostic::error(format!("span {id}: f_taylor_center must be > 0")));
            }
            if span.intrinsic_alpha.len() != n {
                out.push(Diagnostic::error(format!(
                    "span {id}: {} attenuation values for {n} channels",
                    span.intrinsic_alpha.len()
                )));
            } else if span.intrinsic_alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
                out.push(Diagnostic::error(format!("span {id}: attenuation must be > 0")));
            }
            if let AmpGain::PerChannel(g) = &span.amp_gain {
                if g.len() != n {
                    out.push(Diagnostic::error(format!(
                        "span {id}: {} amplifier gains for {n} channels",
                        g.len()
                    )));
                } else if g.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                    out.push(Diagnostic::error(format!("span {id}: amplifier gains must be > 0")));
                }
            }

            if span.intrinsic_alpha.len() == n && span.length > 0.0 {
                let worst = self
                    .channels
                    .iter()
                    .zip(&span.intrinsic_alpha)
                    .filter(|(c, _)| !c.is_pump)
                    .map(|(_, &a)| units::span_loss_db(a, span.length))
                    .fold(f64::INFINITY, f64::min);
                if worst < MIN_SPAN_LOSS_DB {
                    out.push(Diagnostic::warning(format!(
                        "span {id}: span loss < 8 dB ({worst:.2} dB); closed form accuracy degrades"
                    )));
                }
            }
            let low_d: Vec<usize> = self
                .channels
                .iter()
                .filter(|c| !c.is_pump)
                .filter(|c| {
                    let d = units::local_dispersion(span.beta2, span.beta3, span.f_taylor_center, c.f_center);
                    d.abs() / units::PS_PER_NM_KM < MIN_DISPERSION_PS_NM_KM
                })
                .map(|c| c.index)
                .collect();
            if !low_d.is_empty() {
                out.push(Diagnostic::warning(format!(
                    "span {id}: dispersion below 2 ps/(nm km) at channels {low_d:?}; MCI is not negligible"
                )));
            }
        }

        if let Some(sel) = &self.cut_selection {
            for &i in sel {
                match self.channels.get(i.wrapping_sub(1)) {
                    None => out.push(Diagnostic::error(format!("CUT index {i} out of range"))),
                    Some(c) if c.is_pump => out.push(Diagnostic::error(format!("CUT index {i} refers to a pump"))),
                    _ => {}
                }
            }
        }
        out
    }

    /// `Err` listing the error diagnostics, if any.
    pub fn ensure_valid(&self) -> crate::Result<Vec<Diagnostic>> {
        let diags = self.validate();
        let errors: Vec<String> = diags
            .iter()
            .filter(|d| d.is_error())
            .map(|d| d.message.clone())
            .collect();
        if errors.is_empty() {
            Ok(diags)
        } else {
            Err(crate::Error::InvalidLink(errors))
        }
    }
}
