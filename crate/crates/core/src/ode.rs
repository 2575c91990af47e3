//! Dormand–Prince 5(4) integrator with FSAL and a fourth-order continuous
//! extension, sampled onto caller-supplied output points.

/// A first-order system y' = f(x, y).
pub trait OdeSystem {
    fn dim(&self) -> usize;

    fn rhs(&self, x: f64, y: &[f64], dy: &mut [f64]);

    /// Allowed local error for component `i` given its values at both ends of a step.
    fn error_scale(&self, i: usize, y_old: f64, y_new: f64) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub struct StepControl {
    pub max_step: f64,
    pub min_step: f64,
    pub max_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OdeFailure {
    StepUnderflow { x: f64 },
    NonFinite { x: f64 },
    TooManySteps { x: f64 },
}

#[derive(Debug, Clone, Default)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// continuous extension
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Integrates from `x0` to the last entry of `outputs` (sorted ascending,
/// all ≥ `x0`), returning the solution at every output point.
pub fn integrate<S: OdeSystem>(
    sys: &S,
    x0: f64,
    y0: &[f64],
    outputs: &[f64],
    ctl: StepControl,
) -> Result<(Vec<Vec<f64>>, OdeStats), OdeFailure> {
    let n = sys.dim();
    assert_eq!(y0.len(), n);
    let x_end = *outputs.last().expect("at least one output point");
    let mut stats = OdeStats::default();
    let mut out = Vec::with_capacity(outputs.len());
    let mut next_out = 0;
    while next_out < outputs.len() && outputs[next_out] <= x0 {
        out.push(y0.to_vec());
        next_out += 1;
    }
    if next_out == outputs.len() {
        return Ok((out, stats));
    }

    let mut x = x0;
    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; n];
    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) = (
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
    );
    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    sys.rhs(x, &y, &mut k1);
    stats.evaluations += 1;

    let mut h = initial_step(sys, x, &y, &k1, x_end - x0).min(ctl.max_step);
    let mut last_accept_rejected = false;

    while x < x_end {
        if stats.accepted + stats.rejected >= ctl.max_steps {
            return Err(OdeFailure::TooManySteps { x });
        }
        if h < ctl.min_step {
            return Err(OdeFailure::StepUnderflow { x });
        }
        let last = x + h >= x_end;
        if last {
            h = x_end - x;
        }

        for i in 0..n {
            ytmp[i] = y[i] + h * A21 * k1[i];
        }
        sys.rhs(x + C2 * h, &ytmp, &mut k2);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        sys.rhs(x + C3 * h, &ytmp, &mut k3);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        sys.rhs(x + C4 * h, &ytmp, &mut k4);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        sys.rhs(x + C5 * h, &ytmp, &mut k5);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        let x_new = if last { x_end } else { x + h };
        sys.rhs(x_new, &ytmp, &mut k6);
        for i in 0..n {
            ynew[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        sys.rhs(x_new, &ynew, &mut k7);
        stats.evaluations += 6;

        let mut err = 0.0;
        for i in 0..n {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = sys.error_scale(i, y[i], ynew[i]);
            err += (e / sc).powi(2);
        }
        let err = (err / n as f64).sqrt();
        if !err.is_finite() || ynew.iter().any(|v| !v.is_finite()) {
            // shrink hard and retry; a persistent blow-up ends as step underflow
            stats.rejected += 1;
            h *= 0.1;
            last_accept_rejected = true;
            continue;
        }

        if err <= 1.0 {
            stats.accepted += 1;
            // dense output for every requested point inside (x, x_new]
            while next_out < outputs.len() && outputs[next_out] <= x_new {
                let xo = outputs[next_out];
                if xo == x_new {
                    out.push(ynew.clone());
                } else {
                    let theta = (xo - x) / h;
                    let theta1 = 1.0 - theta;
                    let yo: Vec<f64> = (0..n)
                        .map(|i| {
                            let r1 = y[i];
                            let r2 = ynew[i] - y[i];
                            let r3 = h * k1[i] - r2;
                            let r4 = r2 - h * k7[i] - r3;
                            let r5 = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
                            r1 + theta * (r2 + theta1 * (r3 + theta * (r4 + theta1 * r5)))
                        })
                        .collect();
                    if yo.iter().any(|v| !v.is_finite()) {
                        return Err(OdeFailure::NonFinite { x: xo });
                    }
                    out.push(yo);
                }
                next_out += 1;
            }
            std::mem::swap(&mut y, &mut ynew);
            std::mem::swap(&mut k1, &mut k7);
            x = x_new;
            let mut fac = 0.9 * err.max(1e-10).powf(-0.2);
            fac = fac.clamp(0.2, 10.0);
            if last_accept_rejected {
                fac = fac.min(1.0);
            }
            h = (h * fac).min(ctl.max_step);
            last_accept_rejected = false;
        } else {
            stats.rejected += 1;
            let fac = (0.9 * err.powf(-0.2)).max(0.2);
            h *= fac;
            last_accept_rejected = true;
        }
    }
    Ok((out, stats))
}

fn initial_step<S: OdeSystem>(sys: &S, x: f64, y: &[f64], f0: &[f64], span: f64) -> f64 {
    let n = y.len();
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for i in 0..n {
        let sc = sys.error_scale(i, y[i], y[i]);
        d0 += (y[i] / sc).powi(2);
        d1 += (f0[i] / sc).powi(2);
    }
    let d0 = (d0 / n as f64).sqrt();
    let d1 = (d1 / n as f64).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6 * span
    } else {
        0.01 * d0 / d1
    };
    let h0 = h0.min(span);
    let y1: Vec<f64> = (0..n).map(|i| y[i] + h0 * f0[i]).collect();
    let mut f1 = vec![0.0; n];
    sys.rhs(x + h0, &y1, &mut f1);
    let mut d2 = 0.0;
    for i in 0..n {
        let sc = sys.error_scale(i, y[i], y[i]);
        d2 += ((f1[i] - f0[i]) / sc).powi(2);
    }
    let d2 = (d2 / n as f64).sqrt() / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6 * span)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}
