//! Three-parameter power-profile model and its weighted least-squares fit.
//!
//! P(z) ≈ P(0)·exp(−2α0·z + (2α1/σ)(e^{−σz} − 1))
//!
//! For fixed σ the log-residual is linear in (α0, α1), so the optimal pair
//! solves a 2×2 system; σ itself is found by golden-section search.

use serde::{Deserialize, Serialize};

use crate::link::Diagnostic;
use crate::{Error, Result};

/// Condition number above which the (α0, α1) system is rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Evaluates the profile model at `z`.
pub fn model_profile(p0: f64, alpha0: f64, alpha1: f64, sigma: f64, z: f64) -> f64 {
    p0 * (-2.0 * alpha0 * z + 2.0 * alpha1 / sigma * (-sigma * z).exp_m1()).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    /// Exponent of the power weighting in the cost.
    pub m_c: f64,
    pub sigma_lo_factor: f64,
    pub sigma_hi_factor: f64,
    /// Golden-section stop: interval width below `gs_tol` × the starting width.
    pub gs_tol: f64,
    /// Widen to [0.25α, 8α] when the optimum lands on a boundary.
    pub auto_widen: bool,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            m_c: 2.0,
            sigma_lo_factor: 1.0,
            sigma_hi_factor: 4.0,
            gs_tol: 1e-4,
            auto_widen: true,
        }
    }
}

impl FitSettings {
    pub const WIDE_LO: f64 = 0.25;
    pub const WIDE_HI: f64 = 8.0;

    pub fn validate(&self) -> Result<()> {
        let ok = self.m_c >= 0.0
            && self.m_c.is_finite()
            && self.sigma_lo_factor > 0.0
            && self.sigma_lo_factor < self.sigma_hi_factor
            && self.sigma_hi_factor.is_finite()
            && self.gs_tol > 0.0
            && self.gs_tol < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid fit settings: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedProfile {
    pub span_index: usize,
    pub channel_index: usize,
    /// Np/m
    pub alpha0: f64,
    /// Np/m
    pub alpha1: f64,
    /// 1/m
    pub sigma: f64,
    pub cost: f64,
    pub m_c: f64,
    /// σ search interval actually used, 1/m.
    pub sigma_interval: (f64, f64),
    pub widened: bool,
    #[serde(default)]
    pub diagnostics: Vec<Diagnostic>,
}

impl FittedProfile {
    /// 2α1/σ, the expansion variable of the closed form.
    pub fn x(&self) -> f64 {
        2.0 * self.alpha1 / self.sigma
    }

    pub fn evaluate(&self, p0: f64, z: f64) -> f64 {
        model_profile(p0, self.alpha0, self.alpha1, self.sigma, z)
    }

    /// Raman-free profile with loss α: (α, 0, 2α).
    pub fn lossy(span_index: usize, channel_index: usize, alpha: f64) -> Self {
        FittedProfile {
            span_index,
            channel_index,
            alpha0: alpha,
            alpha1: 0.0,
            sigma: 2.0 * alpha,
            cost: 0.0,
            m_c: 0.0,
            sigma_interval: (alpha, 4.0 * alpha),
            widened: false,
            diagnostics: Vec::new(),
        }
    }
}

/// One channel's sampled evolution: positions (m) and powers (W).
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a> {
    pub z: &'a [f64],
    pub p: &'a [f64],
}

impl<'a> Samples<'a> {
    pub fn new(z: &'a [f64], p: &'a [f64]) -> Result<Self> {
        if z.len() != p.len() || z.len() < 3 {
            return Err(Error::InvalidInput(format!(
                "profile fit needs at least 3 matching samples, got {} positions and {} powers",
                z.len(),
                p.len()
            )));
        }
        if p.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidInput("profile fit needs positive finite powers".into()));
        }
        Ok(Samples { z, p })
    }

    fn p0(&self) -> f64 {
        self.p[0]
    }

    fn length(&self) -> f64 {
        *self.z.last().unwrap()
    }
}

fn trapezoid(z: &[f64], f: impl Fn(usize) -> f64) -> f64 {
    let mut acc = 0.0;
    let mut prev = f(0);
    for k in 1..z.len() {
        let cur = f(k);
        acc += 0.5 * (z[k] - z[k - 1]) * (prev + cur);
        prev = cur;
    }
    acc
}

/// (1 − e^{−σz})/σ
fn basis_g(sigma: f64, z: f64) -> f64 {
    -(-sigma * z).exp_m1() / sigma
}

/// Weighted squared log-residual, ∫ P^{m_c}·(ln(P_model/P))² dz, by trapezoid.
pub fn fit_cost(s: Samples<'_>, alpha0: f64, alpha1: f64, sigma: f64, m_c: f64) -> f64 {
    let p0 = s.p0();
    trapezoid(s.z, |k| {
        let z = s.z[k];
        let r = (s.p[k] / p0).ln() + 2.0 * alpha0 * z + 2.0 * alpha1 * basis_g(sigma, z);
        s.p[k].powf(m_c) * r * r
    })
}

/// Closed-form (α0, α1) minimising the cost at fixed σ.
pub fn solve_alpha01(s: Samples<'_>, sigma: f64, m_c: f64) -> Result<(f64, f64)> {
    let p0 = s.p0();
    let len = s.length();
    // Work in units of the span length and the launch power so the system
    // is well scaled regardless of the physical magnitudes.
    let w = |k: usize| (s.p[k] / p0).powf(m_c);
    let u = |k: usize| s.z[k] / len;
    let g = |k: usize| basis_g(sigma, s.z[k]) / len;
    let l = |k: usize| (s.p[k] / p0).ln();

    let a11 = trapezoid(s.z, |k| w(k) * u(k) * u(k));
    let a12 = trapezoid(s.z, |k| w(k) * u(k) * g(k));
    let a22 = trapezoid(s.z, |k| w(k) * g(k) * g(k));
    let b1 = trapezoid(s.z, |k| w(k) * u(k) * l(k));
    let b2 = trapezoid(s.z, |k| w(k) * g(k) * l(k));

    let condition = condition_number(a11, a12, a22);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::DegenerateFit { condition });
    }
    let det = a11 * a22 - a12 * a12;
    // [a11 a12; a12 a22]·[2α0·L; 2α1·L] = −[b1; b2]
    let c0 = -(a22 * b1 - a12 * b2) / det;
    let c1 = -(a11 * b2 - a12 * b1) / det;
    Ok((c0 / (2.0 * len), c1 / (2.0 * len)))
}

/// Spectral condition number of a symmetric positive 2×2 matrix, after
/// symmetric diagonal scaling.
fn condition_number(a11: f64, a12: f64, a22: f64) -> f64 {
    if !(a11 > 0.0 && a22 > 0.0) {
        return f64::INFINITY;
    }
    let r = (a12 / (a11 * a22).sqrt()).abs();
    if r >= 1.0 {
        return f64::INFINITY;
    }
    (1.0 + r) / (1.0 - r)
}

#[derive(Clone, Copy)]
struct Point {
    sigma: f64,
    alpha0: f64,
    alpha1: f64,
    cost: f64,
}

fn evaluate(s: Samples<'_>, sigma: f64, m_c: f64) -> Option<Point> {
    let (alpha0, alpha1) = solve_alpha01(s, sigma, m_c).ok()?;
    let cost = fit_cost(s, alpha0, alpha1, sigma, m_c);
    cost.is_finite().then_some(Point {
        sigma,
        alpha0,
        alpha1,
        cost,
    })
}

/// Golden-section search on [lo, hi]; returns the best point seen, or
/// `None` when every iterate failed.
fn golden_section(s: Samples<'_>, lo: f64, hi: f64, m_c: f64, tol: f64) -> Option<Point> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let cost_of = |p: &Option<Point>| p.as_ref().map_or(f64::INFINITY, |p| p.cost);
    let (mut a, mut b) = (lo, hi);
    let stop = tol * (hi - lo);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut pc = evaluate(s, c, m_c);
    let mut pd = evaluate(s, d, m_c);
    let mut best: Option<Point> = None;
    let keep = |p: &Option<Point>, best: &mut Option<Point>| {
        if let Some(p) = p {
            if best.as_ref().is_none_or(|b| p.cost < b.cost) {
                *best = Some(*p);
            }
        }
    };
    keep(&pc, &mut best);
    keep(&pd, &mut best);
    while b - a > stop {
        if cost_of(&pc) <= cost_of(&pd) {
            b = d;
            d = c;
            pd = pc;
            c = b - inv_phi * (b - a);
            pc = evaluate(s, c, m_c);
            keep(&pc, &mut best);
        } else {
            a = c;
            c = d;
            pc = pd;
            d = a + inv_phi * (b - a);
            pd = evaluate(s, d, m_c);
            keep(&pd, &mut best);
        }
    }
    // the end points are never iterates, but a boundary optimum should be reported as such
    for edge in [lo, hi] {
        if (edge - a).abs() <= stop || (edge - b).abs() <= stop {
            keep(&evaluate(s, edge, m_c), &mut best);
        }
    }
    best
}

/// Fits (α0, α1, σ) to one channel's evolution over one span.
///
/// `intrinsic_alpha` (Np/m) sets the σ search interval.
pub fn fit_profile(
    span_index: usize,
    channel_index: usize,
    s: Samples<'_>,
    intrinsic_alpha: f64,
    settings: &FitSettings,
) -> Result<FittedProfile> {
    settings.validate()?;
    if !(intrinsic_alpha > 0.0) {
        return Err(Error::InvalidInput(format!(
            "span {span_index}, channel {channel_index}: intrinsic attenuation must be > 0 to set the sigma interval"
        )));
    }
    let fail = |reason: &str| Error::FitFailed {
        span: span_index,
        channel: channel_index,
        reason: reason.to_string(),
    };
    let mut lo = settings.sigma_lo_factor * intrinsic_alpha;
    let mut hi = settings.sigma_hi_factor * intrinsic_alpha;
    let mut best = golden_section(s, lo, hi, settings.m_c, settings.gs_tol)
        .ok_or_else(|| fail("every sigma iterate produced a degenerate system"))?;
    let mut widened = false;
    let mut diagnostics = Vec::new();

    let wide_lo = FitSettings::WIDE_LO * intrinsic_alpha;
    let wide_hi = FitSettings::WIDE_HI * intrinsic_alpha;
    let edge_tol = 2.0 * settings.gs_tol * (hi - lo);
    let on_edge = (best.sigma - lo).abs() <= edge_tol || (hi - best.sigma).abs() <= edge_tol;
    // A perfect exponential fits equally well at every σ; that is not a boundary optimum.
    let trivial = best.cost <= 1e-12 * residual_scale(s, settings.m_c);
    if settings.auto_widen && on_edge && !trivial && (lo > wide_lo || hi < wide_hi) {
        lo = lo.min(wide_lo);
        hi = hi.max(wide_hi);
        if let Some(p) = golden_section(s, lo, hi, settings.m_c, settings.gs_tol) {
            if p.cost <= best.cost {
                best = p;
            }
        }
        widened = true;
        diagnostics.push(Diagnostic::info(format!(
            "span {span_index}, channel {channel_index}: sigma optimum on the search boundary, interval widened to [{}, {}]·alpha",
            lo / intrinsic_alpha,
            hi / intrinsic_alpha
        )));
    }

    Ok(FittedProfile {
        span_index,
        channel_index,
        alpha0: best.alpha0,
        alpha1: best.alpha1,
        sigma: best.sigma,
        cost: best.cost,
        m_c: settings.m_c,
        sigma_interval: (lo, hi),
        widened,
        diagnostics,
    })
}

/// ∫ P^{m_c}·(ln(P/P0))² dz: the cost of the trivial model P = P0.
fn residual_scale(s: Samples<'_>, m_c: f64) -> f64 {
    fit_cost(s, 0.0, 0.0, 1.0, m_c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(len: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| len * k as f64 / (n - 1) as f64).collect()
    }

    fn synthetic(p0: f64, a0: f64, a1: f64, sigma: f64, z: &[f64]) -> Vec<f64> {
        z.iter().map(|&z| model_profile(p0, a0, a1, sigma, z)).collect()
    }

    #[test]
    fn model_profile_reductions() {
        let z = 37e3;
        assert_eq!(model_profile(2e-3, 2.3e-5, 4e-6, 4.6e-5, 0.0), 2e-3);
        let e = model_profile(2e-3, 2.3e-5, 0.0, 4.6e-5, z);
        assert!((e / (2e-3 * (-2.0 * 2.3e-5 * z).exp()) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cost_vanishes_on_exact_model() {
        let z = grid(100e3, 400);
        let p = synthetic(1e-3, 2.2e-5, -3e-6, 4.4e-5, &z);
        let s = Samples::new(&z, &p).unwrap();
        assert!(fit_cost(s, 2.2e-5, -3e-6, 4.4e-5, 2.0) < 1e-18);
        assert!(fit_cost(s, 2.2e-5, -3e-6, 4.4e-5, 0.0) < 1e-18);
    }

    #[test]
    fn cost_grows_away_from_optimum_and_is_non_negative() {
        let z = grid(100e3, 400);
        let p = synthetic(1e-3, 2.2e-5, -3e-6, 4.4e-5, &z);
        let s = Samples::new(&z, &p).unwrap();
        // mismatched σ: fitted (α0, α1) at σ = 3e-5 then perturb α0
        let (a0, a1) = solve_alpha01(s, 3e-5, 2.0).unwrap();
        let c = fit_cost(s, a0, a1, 3e-5, 2.0);
        assert!(fit_cost(s, 1.1 * a0, a1, 3e-5, 2.0) > c);
        let c0 = fit_cost(s, a0, a1, 3e-5, 0.0);
        assert!(c > 0.0 && c0 > 0.0 && c != c0);
    }

    #[test]
    fn recovers_generating_pair_at_true_sigma() {
        let z = grid(80e3, 320);
        let (a0, a1, sg) = (2.1e-5, 5e-6, 4.2e-5);
        let p = synthetic(3e-3, a0, a1, sg, &z);
        let s = Samples::new(&z, &p).unwrap();
        for m_c in [0.0, 1.0, 2.0] {
            let (b0, b1) = solve_alpha01(s, sg, m_c).unwrap();
            assert!((b0 / a0 - 1.0).abs() < 1e-6);
            assert!((b1 / a1 - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn pure_exponential_has_no_second_coefficient() {
        let z = grid(80e3, 320);
        let p = synthetic(1e-3, 2.3e-5, 0.0, 1.0, &z);
        let s = Samples::new(&z, &p).unwrap();
        for sigma in [2.3e-5, 5e-5, 9e-5] {
            let (a0, a1) = solve_alpha01(s, sigma, 2.0).unwrap();
            assert!(a1.abs() < 1e-12);
            assert!((a0 / 2.3e-5 - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn returned_pair_is_stationary() {
        // non-model profile: the residual does not vanish
        let z = grid(90e3, 360);
        let p: Vec<f64> = z
            .iter()
            .map(|&z| 1e-3 * (-4.6e-5 * z).exp() * (1.0 + 0.3 * (z / 9e4).powi(3)))
            .collect();
        let s = Samples::new(&z, &p).unwrap();
        let sigma = 5e-5;
        let (a0, a1) = solve_alpha01(s, sigma, 2.0).unwrap();
        let c = fit_cost(s, a0, a1, sigma, 2.0);
        let h = 1e-9;
        let d0 = (fit_cost(s, a0 + h, a1, sigma, 2.0) - fit_cost(s, a0 - h, a1, sigma, 2.0)) / (2.0 * h);
        let d1 = (fit_cost(s, a0, a1 + h, sigma, 2.0) - fit_cost(s, a0, a1 - h, sigma, 2.0)) / (2.0 * h);
        // cost-scale: cost per unit attenuation change over the span
        let scale = residual_scale(s, 2.0) / 2.3e-5;
        assert!(d0.abs() < 1e-8 * scale, "{d0} vs {scale}");
        assert!(d1.abs() < 1e-8 * scale, "{d1} vs {scale}");
        assert!(c > 0.0);
    }

    #[test]
    fn vanishing_sigma_is_degenerate() {
        let z = grid(80e3, 320);
        let p = synthetic(1e-3, 2.3e-5, 1e-6, 4.6e-5, &z);
        let s = Samples::new(&z, &p).unwrap();
        match solve_alpha01(s, 1e-16, 2.0) {
            Err(Error::DegenerateFit { condition }) => assert!(condition > MAX_CONDITION),
            other => panic!("expected degenerate fit, got {other:?}"),
        }
    }

    #[test]
    fn recovers_sigma_of_synthetic_profile() {
        let alpha = 2.3e-5;
        let z = grid(100e3, 400);
        let p = synthetic(1e-3, 2.25e-5, -4e-6, 2.0 * alpha, &z);
        let s = Samples::new(&z, &p).unwrap();
        let f = fit_profile(1, 3, s, alpha, &FitSettings::default()).unwrap();
        assert!((f.sigma / (2.0 * alpha) - 1.0).abs() < 0.01, "{}", f.sigma / alpha);
        assert!(f.cost >= 0.0);
        assert!(!f.widened);
        assert_eq!((f.span_index, f.channel_index), (1, 3));
    }

    #[test]
    fn raman_free_fit() {
        let alpha = 2.3e-5;
        let z = grid(100e3, 400);
        let p = synthetic(1e-3, alpha, 0.0, 1.0, &z);
        let s = Samples::new(&z, &p).unwrap();
        let f = fit_profile(1, 1, s, alpha, &FitSettings::default()).unwrap();
        assert!((f.alpha0 / alpha - 1.0).abs() < 1e-6);
        assert!(f.alpha1.abs() < 1e-12);
        assert!(!f.widened);
        assert!(f.sigma >= f.sigma_interval.0 && f.sigma <= f.sigma_interval.1);
    }

    #[test]
    fn boundary_optimum_widens_interval() {
        let alpha = 2.3e-5;
        let z = grid(100e3, 400);
        let p = synthetic(1e-3, 2.3e-5, 3e-6, 6.0 * alpha, &z);
        let s = Samples::new(&z, &p).unwrap();
        let f = fit_profile(2, 5, s, alpha, &FitSettings::default()).unwrap();
        assert!(f.widened);
        assert_eq!(f.diagnostics.len(), 1);
        assert!((f.sigma / (6.0 * alpha) - 1.0).abs() < 0.01);
        let strict = FitSettings {
            auto_widen: false,
            ..Default::default()
        };
        let g = fit_profile(2, 5, s, alpha, &strict).unwrap();
        assert!(!g.widened);
        assert!((g.sigma - 4.0 * alpha).abs() < 1e-3 * alpha);
    }

    #[test]
    fn fit_is_locally_optimal() {
        let alpha = 2.3e-5;
        let z = grid(100e3, 400);
        let p: Vec<f64> = z
            .iter()
            .map(|&z| 1e-3 * (-4.6e-5 * z + 0.15 * (z / 1e5).sqrt()).exp())
            .collect();
        let s = Samples::new(&z, &p).unwrap();
        let set = FitSettings {
            auto_widen: false,
            ..Default::default()
        };
        let f = fit_profile(1, 1, s, alpha, &set).unwrap();
        let step = set.gs_tol * (f.sigma_interval.1 - f.sigma_interval.0);
        for sg in [f.sigma - step, f.sigma + step] {
            if sg < f.sigma_interval.0 || sg > f.sigma_interval.1 {
                continue;
            }
            let (a0, a1) = solve_alpha01(s, sg, set.m_c).unwrap();
            let c = fit_cost(s, a0, a1, sg, set.m_c);
            assert!(c >= f.cost * (1.0 - 1e-6));
        }
    }

    #[test]
    fn rejects_bad_settings_and_short_input() {
        let z = grid(1e3, 10);
        let p = vec![1e-3; 10];
        let s = Samples::new(&z, &p).unwrap();
        let bad = FitSettings {
            sigma_lo_factor: 4.0,
            sigma_hi_factor: 1.0,
            ..Default::default()
        };
        assert!(fit_profile(1, 1, s, 2e-5, &bad).is_err());
        assert!(Samples::new(&z[..2], &p[..2]).is_err());
    }

    #[test]
    fn every_iterate_degenerate_is_fit_failure() {
        // a two-point-wide support makes both basis functions collinear
        let z = [0.0, 1e-9, 2e-9];
        let p = [1e-3, 1e-3, 1e-3];
        let s = Samples::new(&z, &p).unwrap();
        match fit_profile(4, 9, s, 2.3e-5, &FitSettings::default()) {
            Err(Error::FitFailed {
                span: 4, channel: 9, ..
            }) => {}
            other => panic!("expected fit failure, got {other:?}"),
        }
    }
}
