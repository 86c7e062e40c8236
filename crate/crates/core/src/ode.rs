//! Adaptive Dormand–Prince 5(4) integrator for complex-valued systems.

use crate::error::{Error, Result};
use crate::fock::C64;

/// Right-hand side `dy/dt = f(t, y)`.
pub trait OdeSystem {
    fn rhs(&self, t: f64, y: &[C64], dy: &mut [C64]);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rtol: 1e-8,
            atol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub accepted: u64,
    pub rejected: u64,
    pub rhs_evals: u64,
    pub min_step: f64,
    pub max_step: f64,
}

// Dormand & Prince (1980) tableau.
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
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// PI step-size controller (Hairer & Wanner, II.4).
const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const ALPHA: f64 = 0.2 - 0.75 * BETA;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

/// Integrates from `t0` through every time in `outputs` (strictly
/// increasing, all `>= t0`), calling `observe` with the exact state at each.
/// Steps are shortened to land on output times.
pub fn integrate<S, F>(
    sys: &S,
    t0: f64,
    mut y: Vec<C64>,
    outputs: &[f64],
    tol: Tolerances,
    mut observe: F,
) -> Result<(Vec<C64>, StepStats)>
where
    S: OdeSystem,
    F: FnMut(f64, &[C64]) -> Result<()>,
{
    let n = y.len();
    let mut stats = StepStats {
        min_step: f64::INFINITY,
        ..Default::default()
    };
    let Some(&t_final) = outputs.last() else {
        return Ok((y, stats));
    };
    let mut k1 = vec![C64::default(); n];
    let mut k2 = vec![C64::default(); n];
    let mut k3 = vec![C64::default(); n];
    let mut k4 = vec![C64::default(); n];
    let mut k5 = vec![C64::default(); n];
    let mut k6 = vec![C64::default(); n];
    let mut k7 = vec![C64::default(); n];
    let mut tmp = vec![C64::default(); n];
    let mut y_new = vec![C64::default(); n];

    let mut t = t0;
    sys.rhs(t, &y, &mut k1);
    stats.rhs_evals += 1;
    let mut h = initial_step(sys, t, &y, &k1, tol, t_final - t0, &mut tmp, &mut k2);
    stats.rhs_evals += 1;
    let mut err_prev: f64 = 1e-4;
    let mut next_out = 0;

    while next_out < outputs.len() && outputs[next_out] <= t {
        observe(outputs[next_out], &y)?;
        next_out += 1;
    }

    while next_out < outputs.len() {
        let target = outputs[next_out];
        let mut h_try = h;
        let mut lands = false;
        if t + h_try >= target - 1e-12 * h_try.max(target.abs() * f64::EPSILON) {
            h_try = target - t;
            lands = true;
        }
        if h_try <= 16.0 * f64::EPSILON * t.abs().max(1e-300) {
            return Err(Error::ToleranceFailure { time: t, step: h_try });
        }

        stage(&mut tmp, &y, h_try, &[(A21, &k1)]);
        sys.rhs(t + C2 * h_try, &tmp, &mut k2);
        stage(&mut tmp, &y, h_try, &[(A31, &k1), (A32, &k2)]);
        sys.rhs(t + C3 * h_try, &tmp, &mut k3);
        stage(&mut tmp, &y, h_try, &[(A41, &k1), (A42, &k2), (A43, &k3)]);
        sys.rhs(t + C4 * h_try, &tmp, &mut k4);
        stage(&mut tmp, &y, h_try, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]);
        sys.rhs(t + C5 * h_try, &tmp, &mut k5);
        stage(
            &mut tmp,
            &y,
            h_try,
            &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
        );
        sys.rhs(t + h_try, &tmp, &mut k6);
        stage(
            &mut y_new,
            &y,
            h_try,
            &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
        );
        let t_new = if lands { target } else { t + h_try };
        sys.rhs(t_new, &y_new, &mut k7);
        stats.rhs_evals += 6;

        let err = error_norm(&y, &y_new, h_try, [&k1, &k3, &k4, &k5, &k6, &k7], tol);
        if !err.is_finite() {
            h = h_try * FAC_MIN;
            stats.rejected += 1;
            continue;
        }
        if err <= 1.0 {
            stats.accepted += 1;
            stats.min_step = stats.min_step.min(h_try);
            stats.max_step = stats.max_step.max(h_try);
            let err_c = err.max(1e-10);
            let fac = (SAFETY * err_c.powf(-ALPHA) * err_prev.powf(BETA)).clamp(FAC_MIN, FAC_MAX);
            err_prev = err_c;
            let h_next = h_try * fac;
            // a step shortened to hit an output should not shrink the next one
            h = if lands { h.max(h_next) } else { h_next };
            t = t_new;
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut k1, &mut k7);
            if lands {
                observe(target, &y)?;
                next_out += 1;
            }
        } else {
            stats.rejected += 1;
            h = h_try * (SAFETY * err.powf(-0.2)).max(FAC_MIN);
        }
    }
    Ok((y, stats))
}

#[inline]
fn stage(out: &mut [C64], y: &[C64], h: f64, terms: &[(f64, &Vec<C64>)]) {
    out.copy_from_slice(y);
    for (a, k) in terms {
        let c = a * h;
        for (o, kv) in out.iter_mut().zip(k.iter()) {
            *o += kv * c;
        }
    }
}

fn error_norm(
    y: &[C64],
    y_new: &[C64],
    h: f64,
    k: [&Vec<C64>; 6],
    tol: Tolerances,
) -> f64 {
    let [k1, k3, k4, k5, k6, k7] = k;
    let mut acc = 0.0;
    for i in 0..y.len() {
        let e = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7) * h;
        let sc = tol.atol + tol.rtol * y[i].norm().max(y_new[i].norm());
        acc += e.norm_sqr() / (sc * sc);
    }
    (acc / y.len() as f64).sqrt()
}

fn scaled_norm(v: &[C64], y: &[C64], tol: Tolerances) -> f64 {
    let mut acc = 0.0;
    for (vi, yi) in v.iter().zip(y) {
        let sc = tol.atol + tol.rtol * yi.norm();
        acc += vi.norm_sqr() / (sc * sc);
    }
    (acc / v.len() as f64).sqrt()
}

/// Starting step size following Hairer, Nørsett & Wanner (II.4).
#[allow(clippy::too_many_arguments)]
fn initial_step<S: OdeSystem>(
    sys: &S,
    t: f64,
    y: &[C64],
    f0: &[C64],
    tol: Tolerances,
    span: f64,
    y1: &mut [C64],
    f1: &mut [C64],
) -> f64 {
    let d0 = scaled_norm(y, y, tol);
    let d1 = scaled_norm(f0, y, tol);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 * span } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    for i in 0..y.len() {
        y1[i] = y[i] + f0[i] * h0;
    }
    sys.rhs(t + h0, y1, f1);
    let diff: Vec<C64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = scaled_norm(&diff, y, tol) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6 * span)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}
