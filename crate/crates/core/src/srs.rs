//! Inter-channel stimulated Raman scattering: numerical power evolution per
//! span and the analytic special-case solutions used to cross-check it.
//!
//! The solver integrates ln P_j rather than P_j, which keeps powers positive
//! and turns each equation into a linear combination of the other channels'
//! powers:
//!
//! d ln P_l / dz = Σ_{i>l} C_R(f_i − f_l)·P_i − Σ_{i<l} (f_l/f_i)·C_R(f_l − f_i)·P_i − 2α_l

use serde::{Deserialize, Serialize};

use crate::link::{RamanGainProfile, Span};
use crate::ode::{self, OdeFailure, OdeSystem, StepControl};
use crate::{Error, Result};

/// C_R(u) in 1/(W·m).
pub fn evaluate_gain(profile: &RamanGainProfile, u: f64) -> f64 {
    profile.gain(u)
}

/// Resolution of the uniform output grid handed to the profile fitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub min_points: usize,
    /// Upper bound on the grid spacing, m.
    pub max_spacing: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            min_points: 200,
            max_spacing: 250.0,
        }
    }
}

impl GridSpec {
    pub fn points(&self, length: f64) -> usize {
        self.min_points.max((length / self.max_spacing).ceil() as usize).max(3)
    }

    pub fn grid(&self, length: f64) -> Vec<f64> {
        let n = self.points(length);
        let mut z: Vec<f64> = (0..n).map(|k| length * k as f64 / (n - 1) as f64).collect();
        z[n - 1] = length;
        z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Relative tolerance on each channel power.
    pub rtol: f64,
    /// Absolute tolerance on each channel power, W.
    pub atol: f64,
    /// Keep the photon-conversion factors f_l/f_i. `false` replaces them with 1.
    pub photon_factors: bool,
    /// Largest integrator step, m; unbounded when `None`.
    pub max_step: Option<f64>,
    pub grid: GridSpec,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            rtol: 1e-8,
            atol: 1e-15,
            photon_factors: true,
            max_step: None,
            grid: GridSpec::default(),
        }
    }
}

/// Sampled P_j(z) over one span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerEvolution {
    pub span_index: usize,
    pub z_grid: Vec<f64>,
    /// `powers[j][k]` is channel j at `z_grid[k]`, W.
    pub powers: Vec<Vec<f64>>,
    pub launch: Vec<f64>,
}

impl PowerEvolution {
    pub fn length(&self) -> f64 {
        *self.z_grid.last().unwrap()
    }

    pub fn channel(&self, j: usize) -> &[f64] {
        &self.powers[j]
    }

    pub fn end_powers(&self) -> Vec<f64> {
        self.powers.iter().map(|p| *p.last().unwrap()).collect()
    }

    pub fn num_channels(&self) -> usize {
        self.powers.len()
    }
}

struct SrsSystem {
    n: usize,
    /// Row l holds the coefficient of P_i in d ln P_l/dz.
    coupling: Vec<f64>,
    two_alpha: Vec<f64>,
    rtol: f64,
    atol: f64,
}

impl SrsSystem {
    fn new(freqs: &[f64], alpha: &[f64], profile: &RamanGainProfile, opts: &SolverOptions) -> Self {
        let n = freqs.len();
        let mut coupling = vec![0.0; n * n];
        for l in 0..n {
            for i in 0..n {
                if i == l {
                    continue;
                }
                // C_R odd: C_R(f_i − f_l) = −C_R(f_l − f_i) for lower-frequency sources
                let mut c = profile.gain(freqs[i] - freqs[l]);
                if freqs[i] < freqs[l] && opts.photon_factors {
                    c *= freqs[l] / freqs[i];
                }
                coupling[l * n + i] = c;
            }
        }
        SrsSystem {
            n,
            coupling,
            two_alpha: alpha.iter().map(|a| 2.0 * a).collect(),
            rtol: opts.rtol,
            atol: opts.atol,
        }
    }
}

impl OdeSystem for SrsSystem {
    fn dim(&self) -> usize {
        self.n
    }

    fn rhs(&self, _z: f64, y: &[f64], dy: &mut [f64]) {
        let p: Vec<f64> = y.iter().map(|v| v.exp()).collect();
        for (l, d) in dy.iter_mut().enumerate() {
            let row = &self.coupling[l * self.n..(l + 1) * self.n];
            let s: f64 = row.iter().zip(&p).map(|(c, p)| c * p).sum();
            *d = s - self.two_alpha[l];
        }
    }

    fn error_scale(&self, _i: usize, y_old: f64, y_new: f64) -> f64 {
        // |δP| ≤ atol + rtol·P  ⇔  |δ ln P| ≤ rtol + atol/P
        self.rtol + self.atol * (-y_old.max(y_new)).exp()
    }
}

/// Integrates the coupled SRS equations over one span.
///
/// `freqs` are the channel center frequencies (ascending) and `launch` the
/// powers at z = 0. Returns samples on the uniform grid from `opts.grid`.
pub fn solve_power_evolution(
    span_index: usize,
    span: &Span,
    freqs: &[f64],
    launch: &[f64],
    opts: &SolverOptions,
) -> Result<PowerEvolution> {
    let n = freqs.len();
    if launch.len() != n || span.intrinsic_alpha.len() != n {
        return Err(Error::InvalidInput(format!(
            "span {span_index}: {} frequencies, {} launch powers, {} attenuations",
            n,
            launch.len(),
            span.intrinsic_alpha.len()
        )));
    }
    if let Some(j) = launch.iter().position(|&p| !(p > 0.0 && p.is_finite())) {
        return Err(Error::InvalidInput(format!(
            "span {span_index}: launch power of channel {} must be > 0",
            j + 1
        )));
    }
    let length = span.length;
    let z_grid = opts.grid.grid(length);
    let sys = SrsSystem::new(freqs, &span.intrinsic_alpha, &span.raman, opts);
    let y0: Vec<f64> = launch.iter().map(|p| p.ln()).collect();
    let ctl = StepControl {
        max_step: opts.max_step.unwrap_or(f64::INFINITY),
        min_step: 1e-9 * length,
        max_steps: 2_000_000,
    };
    let (samples, _stats) = ode::integrate(&sys, 0.0, &y0, &z_grid, ctl).map_err(|f| {
        let (z, reason) = match f {
            OdeFailure::StepUnderflow { x } => (x, "step size underflow"),
            OdeFailure::NonFinite { x } => (x, "non-finite power"),
            OdeFailure::TooManySteps { x } => (x, "step budget exhausted"),
        };
        Error::SolverDivergence {
            span: span_index,
            z,
            reason: reason.to_string(),
        }
    })?;

    let mut powers = vec![Vec::with_capacity(z_grid.len()); n];
    for (k, y) in samples.iter().enumerate() {
        for j in 0..n {
            let p = if k == 0 { launch[j] } else { y[j].exp() };
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::SolverDivergence {
                    span: span_index,
                    z: z_grid[k],
                    reason: format!("channel {} power left (0, inf)", j + 1),
                });
            }
            powers[j].push(p);
        }
    }
    Ok(PowerEvolution {
        span_index,
        z_grid,
        powers,
        launch: launch.to_vec(),
    })
}

/// Parameters shared by the analytic solutions: common loss and a triangular
/// gain wide enough to cover the comb.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticParams {
    /// Common field attenuation α0, Np/m.
    pub alpha0: f64,
    pub c_r_max: f64,
    /// ISRS bandwidth Δf_ISRS, Hz.
    pub delta_f_isrs: f64,
}

impl AnalyticParams {
    fn slope(&self) -> f64 {
        self.c_r_max / self.delta_f_isrs
    }

    /// (1 − e^{−2α0 z}) / (2α0)
    fn effective_length(&self, z: f64) -> f64 {
        -(-2.0 * self.alpha0 * z).exp_m1() / (2.0 * self.alpha0)
    }
}

/// Closed-form evolution for a triangular gain, common loss and no photon
/// conversion loss; channel powers may differ.
pub fn analytic_flat_solution(params: &AnalyticParams, freqs: &[f64], launch: &[f64], z: f64) -> Vec<f64> {
    let f_n = *freqs.last().unwrap();
    let p_tot: f64 = launch.iter().sum();
    let k = p_tot * params.slope() * params.effective_length(z);
    let expo: Vec<f64> = freqs.iter().map(|f| k * (f_n - f)).collect();
    let m = expo.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = launch.iter().zip(&expo).map(|(p, e)| p * (e - m).exp()).sum();
    let decay = (-2.0 * params.alpha0 * z).exp();
    launch
        .iter()
        .zip(&expo)
        .map(|(p, e)| p * decay * p_tot * (e - m).exp() / denom)
        .collect()
}

/// Closed-form evolution for `n` equally spaced channels of equal power `p0`,
/// the first at `f_first` with spacing `spacing`.
pub fn analytic_uniform_solution(
    params: &AnalyticParams,
    n: usize,
    f_first: f64,
    spacing: f64,
    p0: f64,
    z: f64,
) -> Vec<f64> {
    let nf = n as f64;
    let f_last = f_first + spacing * (nf - 1.0);
    let common = nf * p0 / 2.0 * params.slope() * params.effective_length(z);
    let a = common * spacing;
    // ln[sinh(a)/sinh(N·a)]
    let ln_ratio = if a == 0.0 {
        -nf.ln()
    } else if a > 20.0 {
        a - nf * a + (-(-2.0 * a).exp()).ln_1p() - (-(-2.0 * nf * a).exp()).ln_1p()
    } else {
        (a.sinh() / (nf * a).sinh()).ln()
    };
    let base = (nf * p0).ln() - 2.0 * params.alpha0 * z + ln_ratio;
    (0..n)
        .map(|j| {
            let f_j = f_first + spacing * j as f64;
            (base + common * (f_last + f_first - 2.0 * f_j)).exp()
        })
        .collect()
}

/// The (α0, α1, σ) triple that the weak-Raman uniform comb maps onto.
pub fn perturbative_triple(
    params: &AnalyticParams,
    n: usize,
    f_first: f64,
    spacing: f64,
    p0: f64,
    j: usize,
) -> (f64, f64, f64) {
    let nf = n as f64;
    let f_last = f_first + spacing * (nf - 1.0);
    let f_j = f_first + spacing * j as f64;
    let alpha1 = -nf * p0 / 4.0 * params.slope() * (f_last + f_first - 2.0 * f_j);
    (params.alpha0, alpha1, 2.0 * params.alpha0)
}

/// Weak-Raman approximation of channel `j` (0-based) of a uniform comb.
pub fn perturbative_profile(
    params: &AnalyticParams,
    n: usize,
    f_first: f64,
    spacing: f64,
    p0: f64,
    j: usize,
    z: f64,
) -> f64 {
    let (a0, a1, s) = perturbative_triple(params, n, f_first, spacing, p0, j);
    crate::fit::model_profile(p0, a0, a1, s, z)
}

/// Left side of the weak-Raman condition, maximised over z ∈ [0, L].
pub fn weak_raman_measure(params: &AnalyticParams, p_tot: f64, wdm_bandwidth: f64, length: f64) -> f64 {
    p_tot * params.slope() * wdm_bandwidth * params.effective_length(length)
}
