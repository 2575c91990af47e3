//! Numerical reference for the incoherent GN integral: each SCI/XCI island is
//! integrated by nested adaptive Gauss–Kronrod quadrature, with the
//! frequency-dependent dispersion kept inside the integrand and the profile
//! series summed to convergence.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cfm::{amp_gains, propagate_psd, SpanLossTable};
use crate::fit::FittedProfile;
use crate::link::{Link, Span};
use crate::srs::PowerEvolution;
use crate::{Error, Result};

/// Default guard on channels × spans.
pub const DEFAULT_ISLAND_SPAN_LIMIT: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IslandKind {
    Sci,
    Xci,
    Mci,
}

/// A rectangular integration island. Channel indices are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Island {
    pub m_ch: usize,
    pub n_ch: usize,
    pub k_ch: usize,
    /// f1 interval, Hz.
    pub f1: (f64, f64),
    /// f2 interval, Hz.
    pub f2: (f64, f64),
    pub kind: IslandKind,
}

impl Island {
    pub fn id(&self) -> String {
        format!("({}, {}, {})", self.m_ch, self.n_ch, self.k_ch)
    }

    /// 1 for the self-channel island, 2 for a folded cross-channel pair.
    pub fn fold(&self) -> f64 {
        if self.kind == IslandKind::Sci {
            1.0
        } else {
            2.0
        }
    }

    /// The same island with f1 and f2 exchanged.
    pub fn mirrored(&self) -> Island {
        Island {
            m_ch: self.n_ch,
            n_ch: self.m_ch,
            f1: self.f2,
            f2: self.f1,
            ..self.clone()
        }
    }
}

/// Folded SCI-XCI islands for CUT position `cut`: one per non-pump channel,
/// f1 over the interferer band and f2 over the CUT band.
pub fn enumerate_islands(link: &Link, cut: usize) -> Vec<Island> {
    let c = &link.channels[cut];
    link.channels
        .iter()
        .enumerate()
        .filter(|(_, ch)| !ch.is_pump)
        .map(|(m, ch)| Island {
            m_ch: m + 1,
            n_ch: cut + 1,
            k_ch: m + 1,
            f1: (ch.f_start(), ch.f_end()),
            f2: (c.f_start(), c.f_end()),
            kind: if m == cut { IslandKind::Sci } else { IslandKind::Xci },
        })
        .collect()
}

/// Number of channel triples outside the SCI-XCI set whose island has a
/// non-empty interior, evaluated at the CUT center frequency.
pub fn count_mci_islands(link: &Link, cut: usize) -> usize {
    let f = link.channels[cut].f_center;
    let ch: Vec<_> = link.channels.iter().filter(|c| !c.is_pump).collect();
    let cut_index = link.channels[cut].index;
    let mut count = 0;
    for m in &ch {
        for n in &ch {
            let lo = m.f_start() + n.f_start();
            let hi = m.f_end() + n.f_end();
            for k in &ch {
                let sci_xci =
                    (m.index == cut_index && n.index == k.index) || (n.index == cut_index && m.index == k.index);
                if sci_xci {
                    continue;
                }
                if lo.max(k.f_start() + f) < hi.min(k.f_end() + f) {
                    count += 1;
                }
            }
        }
    }
    count
}

/// Quadrature controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadSpec {
    /// Uniform starting panels per dimension (at least 32).
    pub panels: usize,
    /// Relative tolerance of each island integral.
    pub rtol: f64,
    /// Subdivision budget per one-dimensional integral.
    pub max_subdivisions: usize,
}

impl Default for QuadSpec {
    fn default() -> Self {
        QuadSpec {
            panels: 32,
            rtol: 1e-4,
            max_subdivisions: 4000,
        }
    }
}

impl QuadSpec {
    pub fn validate(&self) -> Result<()> {
        if self.panels < 32 || !(self.rtol > 0.0 && self.rtol < 1.0) || self.max_subdivisions < self.panels {
            return Err(Error::InvalidInput(format!("invalid quadrature settings: {self:?}")));
        }
        Ok(())
    }
}

// 15-point Kronrod extension of the 7-point Gauss rule.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for i in 0..7 {
        let d = h * XGK[i];
        let s = f(c - d) + f(c + d);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Globally adaptive Gauss–Kronrod quadrature over the panels delimited by
/// `breaks` (ascending). Returns `None` when the budget runs out.
pub fn adaptive_gk(mut f: impl FnMut(f64) -> f64, breaks: &[f64], rtol: f64, max_subdivisions: usize) -> Option<f64> {
    let mut heap = BinaryHeap::with_capacity(2 * breaks.len());
    let (mut total, mut err) = (0.0, 0.0);
    for w in breaks.windows(2) {
        let (v, e) = gk15(&mut f, w[0], w[1]);
        total += v;
        err += e;
        heap.push(Panel {
            a: w[0],
            b: w[1],
            value: v,
            error: e,
        });
    }
    let mut panels = heap.len();
    while !(err <= rtol * total.abs()) {
        if panels >= max_subdivisions || !err.is_finite() {
            return None;
        }
        let p = heap.pop()?;
        let mid = 0.5 * (p.a + p.b);
        let (v1, e1) = gk15(&mut f, p.a, mid);
        let (v2, e2) = gk15(&mut f, mid, p.b);
        total += v1 + v2 - p.value;
        err += e1 + e2 - p.error;
        heap.push(Panel {
            a: p.a,
            b: mid,
            value: v1,
            error: e1,
        });
        heap.push(Panel {
            a: mid,
            b: p.b,
            value: v2,
            error: e2,
        });
        panels += 1;
    }
    // re-sum to shed accumulated cancellation in the running total
    Some(heap.iter().map(|p| p.value).sum())
}

/// Uniform panels over [lo, hi], plus a geometric grading towards `ridge`
/// when it lies inside.
fn breakpoints(lo: f64, hi: f64, panels: usize, ridge: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..=panels)
        .map(|i| lo + (hi - lo) * i as f64 / panels as f64)
        .collect();
    if ridge > lo && ridge < hi {
        let step = (hi - lo) / panels as f64;
        let mut d = step / 2.0;
        for _ in 0..24 {
            for p in [ridge - d, ridge + d] {
                if p > lo && p < hi {
                    v.push(p);
                }
            }
            d /= 4.0;
        }
        v.push(ridge);
    }
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// |∫₀^∞ P(z)/P(0)·e^{jϱz} dz|² for the fitted profile, summed to convergence.
pub fn model_link_sq(varrho: f64, alpha0: f64, alpha1: f64, sigma: f64) -> f64 {
    let x = 2.0 * alpha1 / sigma;
    let mut z = Complex64::new(0.0, 0.0);
    let mut term = 1.0;
    let mut k = 0usize;
    loop {
        let a = 2.0 * alpha0 + k as f64 * sigma;
        let t = Complex64::new(a, varrho).inv() * term;
        z += t;
        k += 1;
        term *= x / k as f64;
        if (k as f64) > x.abs() && term.abs() / (2.0 * alpha0 + k as f64 * sigma) < 1e-17 * z.norm() {
            break;
        }
        if k > 400 {
            break;
        }
    }
    (-2.0 * x).exp() * z.norm_sqr()
}

/// Filon weights of one segment of width `h`: ∫₀^h e^{jϱs}(A + B·s/h) ds =
/// h·(a·A + b·B), returned with the phase advance e^{jϱh}.
fn filon_weights(varrho: f64, h: f64) -> (Complex64, Complex64, Complex64) {
    let th = varrho * h;
    let e = Complex64::new(0.0, th).exp();
    if th.abs() < 1e-3 {
        let t2 = th * th;
        (
            Complex64::new(1.0 - t2 / 6.0, th / 2.0 - th * t2 / 24.0),
            Complex64::new(0.5 - t2 / 8.0, th / 3.0 - th * t2 / 30.0),
            e,
        )
    } else {
        let jt = Complex64::new(0.0, th);
        let a = (e - 1.0) / jt;
        (a, e / jt + (e - 1.0) / (th * th), e)
    }
}

/// |∫₀^L P(z)/P(0)·e^{jϱz} dz|² for a sampled profile, with P piecewise linear.
pub fn sampled_link_sq(varrho: f64, z: &[f64], p: &[f64]) -> f64 {
    let p0 = p[0];
    let mut acc = Complex64::new(0.0, 0.0);
    let mut phase = Complex64::new(0.0, varrho * z[0]).exp();
    // Output grids are uniform, so the weights are shared between segments.
    let mut cached = (f64::NAN, filon_weights(varrho, 0.0));
    for k in 1..z.len() {
        let h = z[k] - z[k - 1];
        if h != cached.0 {
            cached = (h, filon_weights(varrho, h));
        }
        let (a, b, e) = cached.1;
        acc += phase * h * (a * p[k - 1] + b * (p[k] - p[k - 1]));
        phase *= e;
    }
    (acc / p0).norm_sqr()
}

/// Which link function the oracle integrates.
#[derive(Debug, Clone, Copy)]
pub enum LinkFunction<'a> {
    /// The fitted three-parameter profile.
    Model(&'a FittedProfile),
    /// The sampled power evolution of the interferer.
    Sampled { z: &'a [f64], p: &'a [f64] },
}

impl LinkFunction<'_> {
    fn eval(&self, varrho: f64) -> f64 {
        match *self {
            LinkFunction::Model(f) => model_link_sq(varrho, f.alpha0, f.alpha1, f.sigma),
            LinkFunction::Sampled { z, p } => sampled_link_sq(varrho, z, p),
        }
    }
}

/// ∫∫ over the island of the squared link function, with
/// ϱ = 4π²(f1 − f_cut)(f2 − f_cut)(β2 + πβ3(f1 + f2 − 2f_c)).
pub fn integrate_island_numeric(
    island: &Island,
    span: &Span,
    f_cut: f64,
    link_fn: LinkFunction<'_>,
    quad: &QuadSpec,
) -> Result<f64> {
    quad.validate()?;
    let fail = || Error::QuadratureNonConvergence { island: island.id() };
    let inner_rtol = quad.rtol * 1e-2;
    let b1 = breakpoints(island.f1.0, island.f1.1, quad.panels, f_cut);
    let b2 = breakpoints(island.f2.0, island.f2.1, quad.panels, f_cut);
    let mut failed = false;
    let outer = |f1: f64| {
        if failed {
            return 0.0;
        }
        let d1 = f1 - f_cut;
        let inner = |f2: f64| {
            let beta = span.beta2 + PI * span.beta3 * (f1 + f2 - 2.0 * span.f_taylor_center);
            let varrho = 4.0 * PI * PI * d1 * (f2 - f_cut) * beta;
            link_fn.eval(varrho)
        };
        match adaptive_gk(inner, &b2, inner_rtol, quad.max_subdivisions) {
            Some(v) => v,
            None => {
                failed = true;
                0.0
            }
        }
    };
    let v = adaptive_gk(outer, &b1, quad.rtol * 0.1, quad.max_subdivisions).ok_or_else(fail)?;
    if failed {
        return Err(fail());
    }
    Ok(v)
}

/// Link function source for `nli_reference`.
#[derive(Debug, Clone, Copy)]
pub enum OracleProfiles<'a> {
    /// `fits[span][channel]`
    Fitted(&'a [Vec<Option<FittedProfile>>]),
    /// Raw per-span evolutions.
    Sampled(&'a [PowerEvolution]),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    pub quad: QuadSpec,
    /// Maximum channels × spans accepted.
    pub island_span_limit: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            quad: QuadSpec::default(),
            island_span_limit: DEFAULT_ISLAND_SPAN_LIMIT,
        }
    }
}

/// Reference G_NLI at the center of CUT position `cut`, W/Hz.
pub fn nli_reference(
    link: &Link,
    profiles: OracleProfiles<'_>,
    losses: &SpanLossTable,
    cut: usize,
    opts: &OracleOptions,
) -> Result<f64> {
    let ns = link.spans.len();
    let nc = link.channels.len();
    if nc * ns > opts.island_span_limit {
        return Err(Error::OracleGuard {
            island_spans: nc * ns,
            limit: opts.island_span_limit,
        });
    }
    if cut >= nc || link.channels[cut].is_pump {
        return Err(Error::InvalidInput(format!("channel {} cannot be a CUT", cut + 1)));
    }
    let gains = amp_gains(link, losses);
    let psd = propagate_psd(&link.launch_psds(), losses, &gains);
    let mut post = vec![1.0; ns + 1];
    for p in (0..ns).rev() {
        post[p] = post[p + 1] * gains[p][cut] / losses.s[p][cut];
    }
    let f_cut = link.channels[cut].f_center;
    let islands = enumerate_islands(link, cut);
    let jobs: Vec<(usize, &Island)> = (0..ns).flat_map(|p| islands.iter().map(move |i| (p, i))).collect();
    let parts: Vec<f64> = jobs
        .par_iter()
        .map(|&(p, island)| -> Result<f64> {
            let m = island.m_ch - 1;
            let span = &link.spans[p];
            let link_fn = match profiles {
                OracleProfiles::Fitted(fits) => LinkFunction::Model(fits[p][m].as_ref().ok_or_else(|| {
                    Error::InvalidInput(format!("span {}: no profile fit for channel {}", p + 1, m + 1))
                })?),
                OracleProfiles::Sampled(evs) => LinkFunction::Sampled {
                    z: &evs[p].z_grid,
                    p: &evs[p].powers[m],
                },
            };
            let v = integrate_island_numeric(island, span, f_cut, link_fn, &opts.quad).map_err(|e| {
                Error::Contribution {
                    span: p + 1,
                    interferer: m + 1,
                    source: Box::new(e),
                }
            })?;
            let g = &psd[p];
            Ok(16.0 / 27.0 * span.gamma * span.gamma * g[cut] * g[m] * g[m] * island.fold() * post[p] * v)
        })
        .collect::<Result<_>>()?;
    Ok(parts.iter().sum())
}
