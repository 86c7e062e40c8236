//! Bit-flip time extraction: binning, conditional selection and an
//! `A·exp(−t/τ)` fit.

use crate::dynamics::TimeSeries;
use crate::error::{Error, Result};

/// Reported τ never exceeds this; larger fits are flagged with `at_cap`.
pub const TAU_CAP: f64 = 1e-3;

/// Fits with τ beyond this multiple of the horizon are rejected.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Non-overlapping bin averages of a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedTrace {
    pub bin_centers: Vec<f64>,
    pub bin_means: Vec<f64>,
    /// Standard error of each mean, present for ensemble averages.
    pub bin_errors: Option<Vec<f64>>,
    pub bin_width: f64,
}

impl BinnedTrace {
    pub fn new(bin_centers: Vec<f64>, bin_means: Vec<f64>, bin_errors: Option<Vec<f64>>, bin_width: f64) -> Result<Self> {
        if bin_centers.len() != bin_means.len() {
            return Err(Error::DimensionMismatch {
                expected: bin_centers.len(),
                got: bin_means.len(),
            });
        }
        if let Some(e) = &bin_errors {
            if e.len() != bin_means.len() {
                return Err(Error::DimensionMismatch {
                    expected: bin_means.len(),
                    got: e.len(),
                });
            }
        }
        if !(bin_width > 0.0) {
            return Err(Error::InvalidBinWidth(format!("bin width must be positive, got {bin_width}")));
        }
        if bin_means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidParams("bin means must be finite".into()));
        }
        Ok(BinnedTrace {
            bin_centers,
            bin_means,
            bin_errors,
            bin_width,
        })
    }

    pub fn len(&self) -> usize {
        self.bin_means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bin_means.is_empty()
    }

    /// End of the last bin.
    pub fn horizon(&self) -> f64 {
        self.bin_centers.last().map_or(0.0, |c| c + 0.5 * self.bin_width)
    }

    pub fn scaled(&self, c: f64) -> BinnedTrace {
        BinnedTrace {
            bin_centers: self.bin_centers.clone(),
            bin_means: self.bin_means.iter().map(|m| c * m).collect(),
            bin_errors: self.bin_errors.as_ref().map(|e| e.iter().map(|x| c.abs() * x).collect()),
            bin_width: self.bin_width,
        }
    }

    /// Drops the first `k` bins.
    pub fn skip(&self, k: usize) -> BinnedTrace {
        BinnedTrace {
            bin_centers: self.bin_centers[k.min(self.len())..].to_vec(),
            bin_means: self.bin_means[k.min(self.len())..].to_vec(),
            bin_errors: self.bin_errors.as_ref().map(|e| e[k.min(e.len())..].to_vec()),
            bin_width: self.bin_width,
        }
    }
}

/// Averages the real part of `series` over consecutive bins of `bin_width`.
///
/// Sample `k` stands for the interval `[t_k, t_k + stride)`, so a bin holds
/// `bin_width / stride` samples. The width must be an integer multiple of
/// the stride and at least two strides; a trailing partial bin is dropped.
pub fn bin_trace(series: &TimeSeries, bin_width: f64) -> Result<BinnedTrace> {
    if series.len() < 2 {
        return Err(Error::InvalidBinWidth("series needs at least two samples".into()));
    }
    let stride = series.stride();
    let ratio = bin_width / stride;
    let per_bin = ratio.round();
    if !ratio.is_finite() || per_bin < 2.0 || (ratio - per_bin).abs() > 1e-6 * ratio {
        return Err(Error::InvalidBinWidth(format!(
            "bin width {bin_width:e} s must be an integer multiple (≥ 2) of the stride {stride:e} s"
        )));
    }
    let per_bin = per_bin as usize;
    let values = series.real_values();
    let t0 = series.times[0];
    let nbins = values.len() / per_bin;
    if nbins == 0 {
        return Err(Error::InvalidBinWidth(format!(
            "bin width {bin_width:e} s exceeds the series duration"
        )));
    }
    let mut centers = Vec::with_capacity(nbins);
    let mut means = Vec::with_capacity(nbins);
    for (k, chunk) in values.chunks_exact(per_bin).enumerate() {
        centers.push(t0 + (k as f64 + 0.5) * bin_width);
        means.push(chunk.iter().sum::<f64>() / per_bin as f64);
    }
    BinnedTrace::new(centers, means, None, bin_width)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub amplitude: f64,
    pub amplitude_error: f64,
    /// Seconds; clamped to [`TAU_CAP`].
    pub tau: f64,
    pub tau_error: f64,
    pub residual_rms: f64,
    /// The unclamped fit exceeded [`TAU_CAP`].
    pub at_cap: bool,
}

impl FitResult {
    pub fn model(&self, t: f64) -> f64 {
        self.amplitude * (-t / self.tau).exp()
    }

    pub const PLOT_CSV_HEADER: &'static str = "bin_center_us,mean,fit_value";

    pub fn plot_csv(&self, trace: &BinnedTrace) -> String {
        let mut out = String::from(Self::PLOT_CSV_HEADER);
        out.push('\n');
        for (t, m) in trace.bin_centers.iter().zip(&trace.bin_means) {
            out.push_str(&format!("{:.6},{:.12e},{:.12e}\n", t * 1e6, m, self.model(*t)));
        }
        out
    }
}

/// Least-squares fit of `A·exp(−t/τ)` to the bin means.
///
/// Levenberg–Marquardt on `(A, k = 1/τ)` with an analytic Jacobian, started
/// from `A` = first mean and `τ` = horizon/2. Bins are weighted by
/// `1/σ²` when every bin carries a positive standard error; the covariance
/// then uses those errors directly, otherwise it is scaled by the residual
/// variance.
pub fn fit_exponential(trace: &BinnedTrace) -> Result<FitResult> {
    let n = trace.len();
    if n < 3 {
        return Err(Error::FitDiverged(format!("need at least 3 bins, got {n}")));
    }
    let first = trace.bin_means[0];
    if trace.bin_means.iter().all(|&m| m == first) {
        return Err(Error::FitDiverged("trace is constant".into()));
    }
    let horizon = trace.horizon();
    let ts: Vec<f64> = trace.bin_centers.iter().map(|t| t / horizon).collect();
    let ys = &trace.bin_means;
    let weights: Option<Vec<f64>> = trace
        .bin_errors
        .as_ref()
        .filter(|e| e.iter().all(|&s| s > 0.0 && s.is_finite()))
        .map(|e| e.iter().map(|s| 1.0 / (s * s)).collect());
    let w = |i: usize| weights.as_ref().map_or(1.0, |w| w[i]);

    // u = k·horizon keeps both parameters O(1)
    let cost = |a: f64, u: f64| -> f64 {
        (0..n)
            .map(|i| {
                let r = ys[i] - a * (-u * ts[i]).exp();
                w(i) * r * r
            })
            .sum()
    };
    let normal = |a: f64, u: f64| -> ([f64; 3], [f64; 2]) {
        let (mut jaa, mut jau, mut juu, mut ga, mut gu) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let e = (-u * ts[i]).exp();
            let da = e;
            let du = -a * ts[i] * e;
            let r = ys[i] - a * e;
            let wi = w(i);
            jaa += wi * da * da;
            jau += wi * da * du;
            juu += wi * du * du;
            ga += wi * da * r;
            gu += wi * du * r;
        }
        ([jaa, jau, juu], [ga, gu])
    };

    let (mut a, mut u) = (if first != 0.0 { first } else { ys[1] }, 2.0);
    let mut c = cost(a, u);
    let mut lambda = 1e-3;
    let mut converged = false;
    for _ in 0..500 {
        let ([jaa, jau, juu], [ga, gu]) = normal(a, u);
        let m00 = jaa * (1.0 + lambda);
        let m11 = juu * (1.0 + lambda);
        let det = m00 * m11 - jau * jau;
        if !(det.abs() > 0.0) || !det.is_finite() {
            lambda *= 10.0;
            if lambda > 1e16 {
                break;
            }
            continue;
        }
        let da = (m11 * ga - jau * gu) / det;
        let du = (m00 * gu - jau * ga) / det;
        let (na, nu) = (a + da, u + du);
        let nc = cost(na, nu);
        if nc.is_finite() && nc <= c {
            let small_step = da.abs() <= 1e-13 * a.abs().max(1e-300) && du.abs() <= 1e-13 * u.abs().max(1e-12);
            let small_gain = c - nc <= 1e-30 * c.max(1e-300) || c == 0.0;
            a = na;
            u = nu;
            c = nc;
            lambda = (lambda / 3.0).max(1e-15);
            if small_step || small_gain {
                converged = true;
                break;
            }
        } else {
            lambda *= 4.0;
            if lambda > 1e16 {
                converged = true;
                break;
            }
        }
    }
    if !converged || !a.is_finite() || !u.is_finite() {
        return Err(Error::FitDiverged("optimizer did not converge".into()));
    }
    if u.abs() < 1.0 / DIVERGENCE_FACTOR {
        return Err(Error::FitDiverged(format!(
            "τ exceeds {DIVERGENCE_FACTOR:e} × horizon"
        )));
    }
    let k = u / horizon;
    let tau = 1.0 / k;
    if tau <= 0.0 {
        return Err(Error::NonPositiveTau(tau));
    }

    let ([jaa, jau, juu], _) = normal(a, u);
    let det = jaa * juu - jau * jau;
    let scale = if weights.is_some() {
        1.0
    } else if n > 2 {
        c / (n - 2) as f64
    } else {
        0.0
    };
    let (var_a, var_u) = if det > 0.0 {
        (scale * juu / det, scale * jaa / det)
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    // dτ/du = −horizon/u²
    let tau_error = var_u.max(0.0).sqrt() * horizon / (u * u);
    let rss_unweighted: f64 = (0..n)
        .map(|i| {
            let r = ys[i] - a * (-u * ts[i]).exp();
            r * r
        })
        .sum();
    let at_cap = tau > TAU_CAP;
    Ok(FitResult {
        amplitude: a,
        amplitude_error: var_a.max(0.0).sqrt(),
        tau: tau.min(TAU_CAP),
        tau_error,
        residual_rms: (rss_unweighted / n as f64).sqrt(),
        at_cap,
    })
}

/// Which trials enter a conditional average, judged on the first bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// First bin `> 0`.
    Positive,
    /// First bin `< 0`.
    Negative,
    /// Every trial, negated when its first bin is negative.
    SignFold,
}

/// Ensemble mean over trials chosen by `selection`, with standard errors.
pub fn conditional_select(trials: &[BinnedTrace], selection: Selection) -> Result<BinnedTrace> {
    match selection {
        Selection::Positive => conditional_select_by(trials, |x| x > 0.0),
        Selection::Negative => conditional_select_by(trials, |x| x < 0.0),
        Selection::SignFold => {
            check_trials(trials)?;
            let folded: Vec<(f64, &BinnedTrace)> = trials
                .iter()
                .map(|t| (if t.bin_means[0] < 0.0 { -1.0 } else { 1.0 }, t))
                .collect();
            ensemble_mean(&folded)
        }
    }
}

/// Conditional average and fit with delete-a-group jackknife errors.
///
/// Bins of one trial are correlated, so the per-bin standard errors
/// understate the spread of τ. Trials are split into `groups` contiguous
/// blocks; each block is left out once and the refits give the errors.
/// The first `skip` bins are dropped before every fit.
pub fn jackknife_fit(trials: &[BinnedTrace], selection: Selection, skip: usize, groups: usize) -> Result<FitResult> {
    if groups < 2 || groups > trials.len() {
        return Err(Error::InvalidParams(format!(
            "jackknife needs 2..={} groups, got {groups}",
            trials.len()
        )));
    }
    let fit_subset = |subset: &[BinnedTrace]| -> Result<FitResult> {
        fit_exponential(&conditional_select(subset, selection)?.skip(skip))
    };
    let mut full = fit_subset(trials)?;
    let n = trials.len();
    let mut taus = Vec::with_capacity(groups);
    let mut amps = Vec::with_capacity(groups);
    for g in 0..groups {
        let (lo, hi) = (g * n / groups, (g + 1) * n / groups);
        let rest: Vec<BinnedTrace> = trials[..lo].iter().chain(&trials[hi..]).cloned().collect();
        let f = fit_subset(&rest)?;
        taus.push(f.tau);
        amps.push(f.amplitude);
    }
    let spread = |xs: &[f64]| {
        let m = xs.iter().sum::<f64>() / groups as f64;
        let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
        (ss * (groups as f64 - 1.0) / groups as f64).sqrt()
    };
    full.tau_error = spread(&taus);
    full.amplitude_error = spread(&amps);
    Ok(full)
}

/// Ensemble mean over trials whose first bin satisfies `predicate`.
pub fn conditional_select_by<P>(trials: &[BinnedTrace], predicate: P) -> Result<BinnedTrace>
where
    P: Fn(f64) -> bool,
{
    check_trials(trials)?;
    let chosen: Vec<(f64, &BinnedTrace)> = trials
        .iter()
        .filter(|t| predicate(t.bin_means[0]))
        .map(|t| (1.0, t))
        .collect();
    ensemble_mean(&chosen)
}

fn check_trials(trials: &[BinnedTrace]) -> Result<()> {
    let first = trials.first().ok_or(Error::EmptySelection)?;
    if first.is_empty() {
        return Err(Error::EmptySelection);
    }
    for t in trials {
        if t.len() != first.len() {
            return Err(Error::DimensionMismatch {
                expected: first.len(),
                got: t.len(),
            });
        }
    }
    Ok(())
}

fn ensemble_mean(chosen: &[(f64, &BinnedTrace)]) -> Result<BinnedTrace> {
    let (_, head) = chosen.first().ok_or(Error::EmptySelection)?;
    let nb = head.len();
    let count = chosen.len() as f64;
    let mut mean = vec![0.0; nb];
    for (s, t) in chosen {
        for (m, v) in mean.iter_mut().zip(&t.bin_means) {
            *m += s * v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let errors = if chosen.len() > 1 {
        let mut var = vec![0.0; nb];
        for (s, t) in chosen {
            for ((acc, v), m) in var.iter_mut().zip(&t.bin_means).zip(&mean) {
                let d = s * v - m;
                *acc += d * d;
            }
        }
        Some(var.iter().map(|v| (v / (count - 1.0) / count).sqrt()).collect())
    } else {
        None
    };
    BinnedTrace::new(head.bin_centers.clone(), mean, errors, head.bin_width)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(n: usize, stride: f64, f: impl Fn(f64) -> f64) -> TimeSeries {
        let times: Vec<f64> = (0..n).map(|k| k as f64 * stride).collect();
        let vals: Vec<f64> = times.iter().map(|&t| f(t)).collect();
        TimeSeries::from_real(times, &vals, "x").unwrap()
    }

    fn exact_bins(a: f64, tau: f64, nb: usize, width: f64) -> BinnedTrace {
        let c: Vec<f64> = (0..nb).map(|k| (k as f64 + 0.5) * width).collect();
        let m = c.iter().map(|t| a * (-t / tau).exp()).collect();
        BinnedTrace::new(c, m, None, width).unwrap()
    }

    #[test]
    fn jackknife_of_identical_trials_has_no_spread() {
        let t = exact_bins(1.0, 4e-6, 10, 2e-6);
        let trials = vec![t; 40];
        let f = jackknife_fit(&trials, Selection::SignFold, 1, 8).unwrap();
        assert!((f.tau - 4e-6).abs() < 1e-12);
        assert!(f.tau_error < 1e-15);
    }

    #[test]
    fn jackknife_rejects_bad_group_counts() {
        let trials = vec![exact_bins(1.0, 4e-6, 10, 2e-6); 5];
        assert!(jackknife_fit(&trials, Selection::SignFold, 0, 1).is_err());
        assert!(jackknife_fit(&trials, Selection::SignFold, 0, 6).is_err());
    }

    #[test]
    fn constant_series_bins_to_constant() {
        let s = series(2001, 1e-8, |_| 1.0);
        for w in [2e-8, 1e-6, 2e-6, 5e-7] {
            let b = bin_trace(&s, w).unwrap();
            assert!(b.bin_means.iter().all(|&m| (m - 1.0).abs() < 1e-15));
        }
    }

    #[test]
    fn twenty_microseconds_in_two_microsecond_bins() {
        let s = series(2001, 1e-8, |t| t);
        let b = bin_trace(&s, 2e-6).unwrap();
        assert_eq!(b.len(), 10);
        assert!((b.bin_centers[0] - 1e-6).abs() < 1e-18);
        assert_eq!(bin_trace(&s, 1e-6).unwrap().len(), 20);
    }

    #[test]
    fn ramp_bins_to_midpoints() {
        // samples at cell midpoints of a 0→1 ramp over two bins
        let n = 200;
        let s = series(n, 1.0 / n as f64, |t| t + 0.5 / n as f64);
        let b = bin_trace(&s, 0.5).unwrap();
        assert_eq!(b.len(), 2);
        assert!((b.bin_means[0] - 0.25).abs() < 1e-12);
        assert!((b.bin_means[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn bin_width_checks() {
        let s = series(100, 1e-8, |_| 1.0);
        assert!(matches!(bin_trace(&s, 1e-8), Err(Error::InvalidBinWidth(_))));
        assert!(matches!(bin_trace(&s, 2.5e-8), Err(Error::InvalidBinWidth(_))));
        assert!(matches!(bin_trace(&s, 1e-5), Err(Error::InvalidBinWidth(_))));
        assert!(bin_trace(&s, 2e-8).is_ok());
    }

    #[test]
    fn noiseless_round_trip() {
        let tr = exact_bins(1.0, 9.4e-6, 10, 2e-6);
        let f = fit_exponential(&tr).unwrap();
        assert!((f.tau / 9.4e-6 - 1.0).abs() < 1e-6);
        assert!((f.amplitude - 1.0).abs() < 1e-6);
        assert!(!f.at_cap);
    }

    #[test]
    fn wide_range_of_taus() {
        for tau in [0.3e-6, 2.9e-6, 15e-6, 80e-6, 400e-6] {
            let tr = exact_bins(-2.3, tau, 20, 1e-6);
            let f = fit_exponential(&tr).unwrap();
            assert!((f.tau / tau - 1.0).abs() < 1e-6, "{tau}: {}", f.tau);
        }
    }

    #[test]
    fn constant_trace_diverges() {
        let c: Vec<f64> = (0..10).map(|k| k as f64 + 0.5).collect();
        let tr = BinnedTrace::new(c, vec![0.7; 10], None, 1.0).unwrap();
        assert!(matches!(fit_exponential(&tr), Err(Error::FitDiverged(_))));
    }

    #[test]
    fn growing_trace_is_rejected() {
        let tr = exact_bins(1.0, -5e-6, 10, 1e-6);
        assert!(matches!(fit_exponential(&tr), Err(Error::NonPositiveTau(_))));
    }

    #[test]
    fn too_few_bins() {
        let tr = exact_bins(1.0, 5e-6, 2, 1e-6);
        assert!(fit_exponential(&tr).is_err());
    }

    #[test]
    fn slow_decay_is_capped() {
        let tr = exact_bins(1.0, 5e-3, 20, 1e-6);
        let f = fit_exponential(&tr).unwrap();
        assert!(f.at_cap);
        assert_eq!(f.tau, TAU_CAP);
    }

    #[test]
    fn weighted_fit_uses_given_errors() {
        let mut tr = exact_bins(1.0, 5e-6, 10, 1e-6);
        tr.bin_errors = Some(vec![0.01; 10]);
        let f = fit_exponential(&tr).unwrap();
        assert!((f.tau / 5e-6 - 1.0).abs() < 1e-8);
        assert!(f.tau_error > 0.0);
        tr.bin_errors = Some(vec![0.02; 10]);
        let g = fit_exponential(&tr).unwrap();
        assert!((g.tau_error / f.tau_error - 2.0).abs() < 1e-6);
    }

    #[test]
    fn selection_variants() {
        let up = exact_bins(1.0, 5e-6, 5, 1e-6);
        let down = up.scaled(-1.0);
        let trials = vec![up.clone(), up.clone(), down.clone()];
        let pos = conditional_select(&trials, Selection::Positive).unwrap();
        assert_eq!(pos.bin_means, up.bin_means);
        assert!(pos.bin_errors.unwrap().iter().all(|&e| e == 0.0));
        let neg = conditional_select(&trials, Selection::Negative).unwrap();
        assert_eq!(neg.bin_means, down.bin_means);
        assert!(neg.bin_errors.is_none());
        let fold = conditional_select(&trials, Selection::SignFold).unwrap();
        for (a, b) in fold.bin_means.iter().zip(&up.bin_means) {
            assert!((a - b).abs() < 1e-15);
        }
        let all_up = vec![up.clone(); 4];
        assert_eq!(conditional_select(&all_up, Selection::Positive).unwrap().bin_means, up.bin_means);
        assert_eq!(conditional_select(&all_up, Selection::Negative), Err(Error::EmptySelection));
        assert_eq!(conditional_select(&[], Selection::SignFold), Err(Error::EmptySelection));
        assert!(conditional_select_by(&all_up, |x| x > 10.0).is_err());
    }

    #[test]
    fn plot_csv_has_one_row_per_bin() {
        let tr = exact_bins(1.0, 5e-6, 4, 1e-6);
        let f = fit_exponential(&tr).unwrap();
        let csv = f.plot_csv(&tr);
        assert!(csv.starts_with(FitResult::PLOT_CSV_HEADER));
        assert_eq!(csv.lines().count(), 5);
    }
}
