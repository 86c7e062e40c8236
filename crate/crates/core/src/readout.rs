//! Emulated heterodyne readout: telegraph trajectories, IF synthesis,
//! DFT demodulation and IQ statistics.
//!
//! The qubit state `s = ±1` enters the carrier as a π phase flip, so each
//! channel contributes `A·s(t)·cos(2π f t + φ)`. This is a classical
//! emulation layer for exercising the analysis chain.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::bitflip::BinnedTrace;
use crate::dynamics::TimeSeries;
use crate::error::{Error, Result};
use crate::fock::C64;

/// 250 MS/s.
pub const DEFAULT_SAMPLE_RATE: f64 = 250e6;

/// Per-sample noise standard deviation for unit channel amplitude. With
/// 2 µs bins at 250 MS/s the IQ spread is about 0.06, far below the
/// separation of 2.
pub const DEFAULT_NOISE_SIGMA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialSign {
    Plus,
    Minus,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TelegraphSpec {
    /// Decay time of the ensemble mean; `f64::INFINITY` never switches.
    pub tau_flip: f64,
    pub t_end: f64,
    pub sample_rate: f64,
    pub initial: InitialSign,
    pub seed: u64,
    /// ChaCha stream, so trials and channels draw independent sequences.
    pub stream: u64,
}

impl TelegraphSpec {
    pub fn samples(&self) -> usize {
        (self.t_end * self.sample_rate).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_flip > 0.0) {
            return Err(Error::InvalidParams(format!("tau_flip must be positive, got {}", self.tau_flip)));
        }
        if !(self.sample_rate > 0.0) || !self.sample_rate.is_finite() || !(self.t_end > 0.0) {
            return Err(Error::InvalidParams("sample rate and duration must be positive".into()));
        }
        if self.t_end * self.sample_rate < 100.0 {
            return Err(Error::InvalidParams("a trajectory needs at least 100 samples".into()));
        }
        Ok(())
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// ±1 trajectory switching at rate `1/(2τ)`, so `⟨s(t) s(0)⟩ = e^{−t/τ}`.
pub fn telegraph_trajectory(spec: &TelegraphSpec) -> Result<TimeSeries> {
    spec.validate()?;
    let states = telegraph_states(spec);
    let dt = 1.0 / spec.sample_rate;
    let times = (0..states.len()).map(|k| k as f64 * dt).collect();
    TimeSeries::new(times, states.into_iter().map(|s| C64::new(s, 0.0)).collect(), "telegraph")
}

fn telegraph_states(spec: &TelegraphSpec) -> Vec<f64> {
    let n = spec.samples();
    let mut rng = rng_for(spec.seed, spec.stream);
    let mut s = match spec.initial {
        InitialSign::Plus => 1.0,
        InitialSign::Minus => -1.0,
        InitialSign::Random => {
            if rng.random::<bool>() {
                1.0
            } else {
                -1.0
            }
        }
    };
    let dt = 1.0 / spec.sample_rate;
    let mut out = Vec::with_capacity(n);
    if !spec.tau_flip.is_finite() {
        out.resize(n, s);
        return out;
    }
    let wait = Exp::new(1.0 / (2.0 * spec.tau_flip)).expect("positive rate");
    let mut next_flip = wait.sample(&mut rng);
    for k in 0..n {
        let t = k as f64 * dt;
        while t >= next_flip {
            s = -s;
            next_flip += wait.sample(&mut rng);
        }
        out.push(s);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct IfChannel {
    pub label: String,
    /// Intermediate frequency in Hz.
    pub if_freq: f64,
    /// Carrier amplitude for either qubit state.
    pub amplitude: f64,
    /// Carrier phase in radians.
    pub phase_offset: f64,
}

impl IfChannel {
    pub fn new(label: impl Into<String>, if_freq: f64, amplitude: f64) -> Self {
        IfChannel {
            label: label.into(),
            if_freq,
            amplitude,
            phase_offset: 0.0,
        }
    }
}

/// Channels validated against a demodulation bin duration.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPlan {
    channels: Vec<IfChannel>,
    bin_duration: f64,
}

impl ChannelPlan {
    /// Frequencies must be positive and at least `2/bin_duration` apart.
    pub fn new(channels: Vec<IfChannel>, bin_duration: f64) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidParams("at least one IF channel is required".into()));
        }
        if !(bin_duration > 0.0) {
            return Err(Error::InvalidBin(format!("bin duration must be positive, got {bin_duration}")));
        }
        for c in &channels {
            if !(c.if_freq > 0.0) || !c.if_freq.is_finite() {
                return Err(Error::InvalidParams(format!("channel {} needs a positive IF", c.label)));
            }
        }
        let min_gap = 2.0 / bin_duration;
        for (a, ca) in channels.iter().enumerate() {
            for cb in &channels[a + 1..] {
                if (ca.if_freq - cb.if_freq).abs() < min_gap * (1.0 - 1e-9) {
                    return Err(Error::ChannelCollision(ca.label.clone(), cb.label.clone()));
                }
            }
        }
        Ok(ChannelPlan {
            channels,
            bin_duration,
        })
    }

    pub fn channels(&self) -> &[IfChannel] {
        &self.channels
    }

    pub fn bin_duration(&self) -> f64 {
        self.bin_duration
    }

    /// Samples per bin, which must be an integer of at least 16.
    pub fn samples_per_bin(&self, sample_rate: f64) -> Result<usize> {
        let r = self.bin_duration * sample_rate;
        let n = r.round();
        if (r - n).abs() > 1e-6 * r.max(1.0) || n < 16.0 {
            return Err(Error::InvalidBin(format!(
                "bin duration × sample rate = {r} must be an integer ≥ 16"
            )));
        }
        Ok(n as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub sample_rate: f64,
    pub samples: Vec<f64>,
}

/// Carrier tables shared by every trial on the same sample grid.
struct Carriers {
    cos: Vec<Vec<f64>>,
    /// `e^{−i2πft_k}`.
    ref_osc: Vec<Vec<C64>>,
}

impl Carriers {
    fn new(plan: &ChannelPlan, sample_rate: f64, n: usize) -> Self {
        let mut cos = Vec::new();
        let mut ref_osc = Vec::new();
        for c in plan.channels() {
            let w = TAU * c.if_freq / sample_rate;
            cos.push((0..n).map(|k| c.amplitude * (w * k as f64 + c.phase_offset).cos()).collect());
            ref_osc.push((0..n).map(|k| C64::from_polar(1.0, -w * k as f64)).collect());
        }
        Carriers { cos, ref_osc }
    }
}

fn synthesize_states(states: &[Vec<f64>], carriers: &Carriers, noise_sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = states[0].len();
    let mut out = vec![0.0; n];
    for (s, c) in states.iter().zip(&carriers.cos) {
        for ((o, sv), cv) in out.iter_mut().zip(s).zip(c) {
            *o += sv * cv;
        }
    }
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).expect("finite sigma");
        for o in out.iter_mut() {
            *o += normal.sample(rng);
        }
    }
    out
}

/// Sums the carriers of every channel, phase-flipped by its trajectory,
/// plus white Gaussian noise of `noise_sigma` per sample.
pub fn synthesize_if_signal(
    trajectories: &[TimeSeries],
    plan: &ChannelPlan,
    noise_sigma: f64,
    seed: u64,
) -> Result<Waveform> {
    if trajectories.len() != plan.channels().len() {
        return Err(Error::DimensionMismatch {
            expected: plan.channels().len(),
            got: trajectories.len(),
        });
    }
    if !(noise_sigma >= 0.0) {
        return Err(Error::InvalidParams("noise sigma must be non-negative".into()));
    }
    let first = &trajectories[0];
    if first.len() < 2 {
        return Err(Error::InvalidParams("trajectories need at least two samples".into()));
    }
    if trajectories.iter().any(|t| t.times != first.times) {
        return Err(Error::InvalidParams("trajectories must share one sample grid".into()));
    }
    let sample_rate = 1.0 / first.stride();
    let states: Vec<Vec<f64>> = trajectories.iter().map(|t| t.real_values()).collect();
    let carriers = Carriers::new(plan, sample_rate, first.len());
    let mut rng = rng_for(seed, u64::MAX);
    Ok(Waveform {
        sample_rate,
        samples: synthesize_states(&states, &carriers, noise_sigma, &mut rng),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IqRecord {
    pub trial: usize,
    pub bin: usize,
    pub channel: usize,
    pub i: f64,
    pub q: f64,
}

impl IqRecord {
    pub fn z(&self) -> C64 {
        C64::new(self.i, self.q)
    }
}

pub const IQ_CSV_HEADER: &str = "trial,bin,channel,I,Q";

pub fn iq_csv(records: &[IqRecord]) -> String {
    let mut out = String::with_capacity(48 * (records.len() + 1));
    out.push_str(IQ_CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{},{},{},{:.9e},{:.9e}", r.trial, r.bin, r.channel, r.i, r.q);
    }
    out
}

fn demod_samples(samples: &[f64], carriers: &Carriers, per_bin: usize, trial: usize) -> Vec<IqRecord> {
    let nbins = samples.len() / per_bin;
    let mut out = Vec::with_capacity(nbins * carriers.ref_osc.len());
    let norm = 2.0 / per_bin as f64;
    for b in 0..nbins {
        let range = b * per_bin..(b + 1) * per_bin;
        for (c, osc) in carriers.ref_osc.iter().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for (w, e) in samples[range.clone()].iter().zip(&osc[range.clone()]) {
                acc += e * *w;
            }
            acc *= norm;
            out.push(IqRecord {
                trial,
                bin: b,
                channel: c,
                i: acc.re,
                q: acc.im,
            });
        }
    }
    out
}

/// Per-bin, per-channel `I + iQ = (2/N) Σ w_k e^{−i2π f t_k}` with a
/// rectangular window and no phase alignment. A trailing partial bin is
/// dropped.
pub fn demodulate_raw(waveform: &Waveform, plan: &ChannelPlan, trial: usize) -> Result<Vec<IqRecord>> {
    let per_bin = plan.samples_per_bin(waveform.sample_rate)?;
    if waveform.samples.len() < per_bin {
        return Err(Error::InvalidBin("waveform is shorter than one bin".into()));
    }
    let carriers = Carriers::new(plan, waveform.sample_rate, waveform.samples.len());
    Ok(demod_samples(&waveform.samples, &carriers, per_bin, trial))
}

/// [`demodulate_raw`] followed by [`align_phases`] over this waveform.
pub fn demodulate(waveform: &Waveform, plan: &ChannelPlan) -> Result<Vec<IqRecord>> {
    let mut recs = demodulate_raw(waveform, plan, 0)?;
    align_phases(&mut recs, plan.channels().len());
    Ok(recs)
}

/// Rotates each channel by `−arg(Σ z²)/2`, which puts the two
/// antipodal states on the I axis. Returns the applied angles.
pub fn align_phases(records: &mut [IqRecord], channels: usize) -> Vec<f64> {
    let mut sums = vec![C64::new(0.0, 0.0); channels];
    for r in records.iter() {
        sums[r.channel] += r.z() * r.z();
    }
    let angles: Vec<f64> = sums.iter().map(|s| if s.norm() > 0.0 { s.arg() / 2.0 } else { 0.0 }).collect();
    for r in records.iter_mut() {
        let z = r.z() * C64::from_polar(1.0, -angles[r.channel]);
        r.i = z.re;
        r.q = z.im;
    }
    angles
}

/// One emulated experiment: independent telegraph trajectories per
/// channel, synthesis, demodulation and global phase alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub plan: ChannelPlan,
    /// Bit-flip time for each channel, in the channel order of `plan`.
    pub tau_flip: Vec<f64>,
    pub t_end: f64,
    pub sample_rate: f64,
    pub initial: InitialSign,
    pub noise_sigma: f64,
    pub trials: usize,
    pub seed: u64,
}

impl EnsembleSpec {
    fn validate(&self) -> Result<()> {
        if self.tau_flip.len() != self.plan.channels().len() {
            return Err(Error::DimensionMismatch {
                expected: self.plan.channels().len(),
                got: self.tau_flip.len(),
            });
        }
        if self.trials == 0 {
            return Err(Error::InvalidParams("at least one trial is required".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidParams("noise sigma must be non-negative".into()));
        }
        self.plan.samples_per_bin(self.sample_rate)?;
        for &tau in &self.tau_flip {
            self.telegraph(tau, 0, 0).validate()?;
        }
        Ok(())
    }

    fn telegraph(&self, tau: f64, trial: usize, channel: usize) -> TelegraphSpec {
        TelegraphSpec {
            tau_flip: tau,
            t_end: self.t_end,
            sample_rate: self.sample_rate,
            initial: self.initial,
            seed: self.seed,
            stream: self.stream(trial, channel),
        }
    }

    /// Channel streams first, then one noise stream per trial.
    fn stream(&self, trial: usize, slot: usize) -> u64 {
        (trial as u64) * (self.plan.channels().len() as u64 + 1) + slot as u64
    }
}

/// Runs every trial in parallel; records are ordered by (trial, bin, channel).
pub fn emulate_ensemble(spec: &EnsembleSpec) -> Result<Vec<IqRecord>> {
    spec.validate()?;
    let per_bin = spec.plan.samples_per_bin(spec.sample_rate)?;
    let n = (spec.t_end * spec.sample_rate).round() as usize;
    let carriers = Carriers::new(&spec.plan, spec.sample_rate, n);
    let nch = spec.plan.channels().len();
    let per_trial: Vec<Vec<IqRecord>> = (0..spec.trials)
        .into_par_iter()
        .map(|trial| {
            let states: Vec<Vec<f64>> = spec
                .tau_flip
                .iter()
                .enumerate()
                .map(|(c, &tau)| telegraph_states(&spec.telegraph(tau, trial, c)))
                .collect();
            let mut rng = rng_for(spec.seed, spec.stream(trial, nch));
            let w = synthesize_states(&states, &carriers, spec.noise_sigma, &mut rng);
            demod_samples(&w, &carriers, per_bin, trial)
        })
        .collect();
    let mut records: Vec<IqRecord> = per_trial.into_iter().flatten().collect();
    align_phases(&mut records, nch);
    Ok(records)
}

/// Per-trial binned I traces of one channel.
pub fn channel_traces(records: &[IqRecord], channel: usize, bin_duration: f64) -> Result<Vec<BinnedTrace>> {
    let mut by_trial: Vec<Vec<(usize, f64)>> = Vec::new();
    for r in records.iter().filter(|r| r.channel == channel) {
        if by_trial.len() <= r.trial {
            by_trial.resize(r.trial + 1, Vec::new());
        }
        by_trial[r.trial].push((r.bin, r.i));
    }
    by_trial
        .into_iter()
        .filter(|v| !v.is_empty())
        .map(|mut v| {
            v.sort_by_key(|x| x.0);
            let centers = v.iter().map(|(b, _)| (*b as f64 + 0.5) * bin_duration).collect();
            let means = v.iter().map(|x| x.1).collect();
            BinnedTrace::new(centers, means, None, bin_duration)
        })
        .collect()
}

/// Fractions of the sign combinations `(I₁, I₂)` in one bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadrantStats {
    /// Order: `(+,+)`, `(+,−)`, `(−,+)`, `(−,−)`.
    pub fractions: [f64; 4],
    /// Binomial standard errors `√(p(1−p)/N)`.
    pub errors: [f64; 4],
    pub trials: usize,
}

/// Sign correlations between channels 0 and 1 in `bin`.
pub fn quadrant_statistics(records: &[IqRecord], bin: usize) -> Result<QuadrantStats> {
    let mut pairs: Vec<[Option<f64>; 2]> = Vec::new();
    for r in records.iter().filter(|r| r.bin == bin && r.channel < 2) {
        if pairs.len() <= r.trial {
            pairs.resize(r.trial + 1, [None, None]);
        }
        pairs[r.trial][r.channel] = Some(r.i);
    }
    let complete: Vec<(f64, f64)> = pairs
        .iter()
        .filter_map(|p| match p {
            [Some(a), Some(b)] => Some((*a, *b)),
            _ => None,
        })
        .collect();
    let n = complete.len();
    if n < 100 {
        return Err(Error::InvalidParams(format!(
            "quadrant statistics need at least 100 two-channel trials, got {n}"
        )));
    }
    let mut counts = [0usize; 4];
    for (a, b) in complete {
        let k = match (a >= 0.0, b >= 0.0) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        };
        counts[k] += 1;
    }
    let nf = n as f64;
    let fractions = counts.map(|c| c as f64 / nf);
    let errors = fractions.map(|p| (p * (1.0 - p) / nf).sqrt());
    Ok(QuadrantStats {
        fractions,
        errors,
        trials: n,
    })
}

impl QuadrantStats {
    pub fn report(&self) -> String {
        let labels = ["(+,+)", "(+,-)", "(-,+)", "(-,-)"];
        let mut out = format!("quadrant fractions over {} trials\n", self.trials);
        for ((l, f), e) in labels.iter().zip(&self.fractions).zip(&self.errors) {
            let _ = writeln!(out, "{l}  {:6.3}% ± {:.3}%", 100.0 * f, 100.0 * e);
        }
        out
    }
}

/// Counts of (I, Q) in a regular grid; samples outside are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram2d {
    pub i_edges: Vec<f64>,
    pub q_edges: Vec<f64>,
    /// `counts[i_bin][q_bin]`.
    pub counts: Vec<Vec<u64>>,
}

pub fn iq_histogram(records: &[IqRecord], channel: usize, bins: usize, range: f64) -> Result<Histogram2d> {
    if bins == 0 || !(range > 0.0) {
        return Err(Error::InvalidParams("histogram needs bins > 0 and a positive range".into()));
    }
    let edges: Vec<f64> = (0..=bins).map(|k| -range + 2.0 * range * k as f64 / bins as f64).collect();
    let mut counts = vec![vec![0u64; bins]; bins];
    let cell = |x: f64| -> Option<usize> {
        let k = ((x + range) / (2.0 * range) * bins as f64).floor();
        (k >= 0.0 && k < bins as f64).then_some(k as usize)
    };
    for r in records.iter().filter(|r| r.channel == channel) {
        if let (Some(a), Some(b)) = (cell(r.i), cell(r.q)) {
            counts[a][b] += 1;
        }
    }
    Ok(Histogram2d {
        i_edges: edges.clone(),
        q_edges: edges,
        counts,
    })
}

impl Histogram2d {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Edges in two comment lines, then one `i_bin,q_bin,count` row per cell.
    pub fn to_csv(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:.6e}")).collect::<Vec<_>>().join(";");
        let mut out = String::new();
        let _ = writeln!(out, "# i_edges {}", join(&self.i_edges));
        let _ = writeln!(out, "# q_edges {}", join(&self.q_edges));
        out.push_str("i_bin,q_bin,count\n");
        for (a, row) in self.counts.iter().enumerate() {
            for (b, c) in row.iter().enumerate() {
                let _ = writeln!(out, "{a},{b},{c}");
            }
        }
        out
    }
}

/// One-sided amplitude spectrum `(f, 2|X_k|/N)` of a waveform.
pub fn dft_spectrum(waveform: &Waveform) -> Vec<(f64, f64)> {
    let n = waveform.samples.len();
    if n == 0 {
        return Vec::new();
    }
    let mut buf: Vec<C64> = waveform.samples.iter().map(|&x| C64::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let df = waveform.sample_rate / n as f64;
    (0..=n / 2).map(|k| (k as f64 * df, 2.0 * buf[k].norm() / n as f64)).collect()
}

pub const SPECTRUM_CSV_HEADER: &str = "freq_mhz,magnitude";

pub fn spectrum_csv(spectrum: &[(f64, f64)]) -> String {
    let mut out = String::from(SPECTRUM_CSV_HEADER);
    out.push('\n');
    for (f, m) in spectrum {
        let _ = writeln!(out, "{:.6},{:.9e}", f / 1e6, m);
    }
    out
}

/// Local maxima of the spectrum above `threshold`, as frequencies in Hz.
pub fn spectral_peaks(spectrum: &[(f64, f64)], threshold: f64) -> Vec<f64> {
    (1..spectrum.len().saturating_sub(1))
        .filter(|&k| {
            let m = spectrum[k].1;
            m > threshold && m >= spectrum[k - 1].1 && m > spectrum[k + 1].1
        })
        .map(|k| spectrum[k].0)
        .collect()
}
