//! Special functions needed by the closed form: sine integral, harmonic
//! numbers, complex dilogarithm and the island kernel F_int.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::OnceLock;

use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

/// Sine integral Si(x) = ∫₀ˣ sin(t)/t dt.
///
/// Power series for |x| ≤ 4, continued fraction for E1(ix) beyond.
pub fn si(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let ax = x.abs();
    let v = if ax <= 4.0 {
        si_series(ax)
    } else {
        si_continued_fraction(ax)
    };
    v.copysign(x)
}

fn si_series(x: f64) -> f64 {
    // Σ (-1)^n x^(2n+1) / ((2n+1)·(2n+1)!)
    let x2 = x * x;
    let mut term = x; // x^(2n+1)/(2n+1)!
    let mut sum = x;
    let mut n = 0u32;
    loop {
        n += 1;
        let k = (2 * n) as f64;
        term *= -x2 / (k * (k + 1.0));
        let add = term / (k + 1.0);
        sum += add;
        if add.abs() < 1e-18 * sum.abs() {
            return sum;
        }
    }
}

fn si_continued_fraction(x: f64) -> f64 {
    // Modified Lentz on the continued fraction of E1(ix); Si = π/2 + Im(e^{-ix}·h).
    const TINY: f64 = 1e-300;
    let mut b = Complex64::new(1.0, x);
    let mut c = Complex64::new(1.0 / TINY, 0.0);
    let mut d = b.inv();
    let mut h = d;
    for i in 2..1000 {
        let a = -((i - 1) as f64).powi(2);
        b += 2.0;
        d = (d * a + b).inv();
        c = b + c.inv() * a;
        let del = c * d;
        h *= del;
        if (del - 1.0).norm() < 1e-16 {
            break;
        }
    }
    let h = Complex64::new(x.cos(), -x.sin()) * h;
    FRAC_PI_2 + h.im
}

/// Harmonic number HN(n) = Σ_{k=1..n} 1/k as an exact rational; HN(0) = 0.
pub fn harmonic(n: u64) -> BigRational {
    let mut acc = BigRational::zero();
    for k in 1..=n {
        acc += BigRational::new(BigInt::from(1), BigInt::from(k));
    }
    acc
}

pub fn harmonic_f64(n: u64) -> f64 {
    (1..=n).rev().map(|k| 1.0 / k as f64).sum()
}

/// HN(Ns−1) + (1−Ns)/Ns, the span-count factor of the coherence term.
pub fn coherence_brace(num_spans: u64) -> BigRational {
    assert!(num_spans >= 1, "at least one span");
    let ns = BigInt::from(num_spans);
    harmonic(num_spans - 1) + BigRational::new(BigInt::from(1) - &ns, ns)
}

pub fn coherence_brace_f64(num_spans: u64) -> f64 {
    coherence_brace(num_spans).to_f64().unwrap_or(f64::NAN)
}

/// The island kernel in its asinh form, π·asinh(x/2).
pub fn f_int(x: f64) -> f64 {
    PI * (x / 2.0).asinh()
}

/// The island kernel j·(Li2(−jx) − Li2(jx)), real for real x.
pub fn f_int_exact(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let z = Complex64::new(0.0, x);
    let v = Complex64::i() * (li2(-z) - li2(z));
    v.re
}

const PI2_6: f64 = PI * PI / 6.0;

/// Coefficients B_{2n}/(2n+1)! of the Bernoulli series of Li2 in u = −ln(1−z).
fn bernoulli_coefficients() -> &'static [f64] {
    static COEFFS: OnceLock<Vec<f64>> = OnceLock::new();
    COEFFS.get_or_init(|| {
        // B_2 .. B_30 as (numerator, denominator)
        const B: [(f64, f64); 15] = [
            (1.0, 6.0),
            (-1.0, 30.0),
            (1.0, 42.0),
            (-1.0, 30.0),
            (5.0, 66.0),
            (-691.0, 2730.0),
            (7.0, 6.0),
            (-3617.0, 510.0),
            (43867.0, 798.0),
            (-174611.0, 330.0),
            (854513.0, 138.0),
            (-236364091.0, 2730.0),
            (8553103.0, 6.0),
            (-23749461029.0, 870.0),
            (8615841276005.0, 14322.0),
        ];
        let mut fact = 1.0f64; // (2n+1)!
        let mut k = 1u32;
        B.iter()
            .map(|&(num, den)| {
                fact *= ((k + 1) * (k + 2)) as f64;
                k += 2;
                num / den / fact
            })
            .collect()
    })
}

/// Complex dilogarithm Li2(z) on the principal branch.
///
/// Uses inversion for |z| > 1, reflection for Re z > 1/2, and the Bernoulli
/// series in −ln(1−z) on the remaining region.
pub fn li2(z: Complex64) -> Complex64 {
    if z == Complex64::new(0.0, 0.0) {
        return z;
    }
    if z == Complex64::new(1.0, 0.0) {
        return Complex64::new(PI2_6, 0.0);
    }
    if z.norm_sqr() > 1.0 {
        let l = (-z).ln();
        return -li2_unit_disk(z.inv()) - PI2_6 - 0.5 * l * l;
    }
    li2_unit_disk(z)
}

fn li2_unit_disk(z: Complex64) -> Complex64 {
    if z.re > 0.5 {
        let w = Complex64::new(1.0, 0.0) - z;
        return -li2_bernoulli(w) + PI2_6 - z.ln() * w.ln();
    }
    li2_bernoulli(z)
}

fn li2_bernoulli(z: Complex64) -> Complex64 {
    let u = -(Complex64::new(1.0, 0.0) - z).ln();
    let u2 = u * u;
    let mut pow = u * u2; // u^(2n+1)
    let mut sum = u - 0.25 * u2;
    for &c in bernoulli_coefficients() {
        let t = pow * c;
        sum += t;
        if t.norm() < 1e-17 * sum.norm() {
            break;
        }
        pow *= u2;
    }
    sum
}
