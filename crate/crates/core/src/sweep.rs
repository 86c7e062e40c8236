//! τ(Δ_in, P_in) grids with parallel scheduling and checkpoint/resume.

use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::bitflip::{bin_trace, fit_exponential, FitResult};
use crate::dynamics::{evolve, EvolutionSpec, Observable};
use crate::error::{Error, Result};
use crate::fock::FockDim;
use crate::model::{amplitude_to_input_power, input_power_to_amplitude, DriveSpec, KpoParams};
use crate::spectrum::{excitation_energy, kpo_spectrum};
use crate::units::{mhz, to_mhz};

pub const CSV_HEADER: &str = "detuning_mhz,power_dbm,omega_in_mhz,theta_in_rad,tau_us,tau_err_us,fit_rms,status";

const CHECKPOINT_MAGIC: &str = "# kpo-sweep-checkpoint v1";

/// Input-power axis, in exactly one unit.
#[derive(Debug, Clone, PartialEq)]
pub enum PowerAxis {
    /// Powers at the device input in dBm.
    Dbm(Vec<f64>),
    /// Drive amplitudes `Ω_in` in rad/s.
    Amplitude(Vec<f64>),
}

impl PowerAxis {
    pub fn values(&self) -> &[f64] {
        match self {
            PowerAxis::Dbm(v) | PowerAxis::Amplitude(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PhaseMode {
    Single(f64),
    /// τ is averaged over runs at each phase.
    Average(Vec<f64>),
}

impl PhaseMode {
    /// `{0, π/2, π, 3π/2}`.
    pub fn quarter_average() -> Self {
        let h = std::f64::consts::FRAC_PI_2;
        PhaseMode::Average(vec![0.0, h, 2.0 * h, 3.0 * h])
    }

    fn phases(&self) -> &[f64] {
        match self {
            PhaseMode::Single(t) => std::slice::from_ref(t),
            PhaseMode::Average(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// Drive-free template; each point adds its own drive.
    pub base: EvolutionSpec,
    pub detuning_axis: Vec<f64>,
    pub power_axis: PowerAxis,
    pub phase: PhaseMode,
    /// Detunings inside this interval (rad/s) are annotated in the output.
    pub exclusion_window: (f64, f64),
    /// Input carrier `ω_in` used for dBm conversion (rad/s).
    pub input_freq: f64,
    pub bin_width: f64,
}

impl SweepSpec {
    /// Single phase 0, ±1 MHz exclusion window, 1 µs bins, and `ω_in` taken
    /// from the resonance frequency.
    pub fn new(base: EvolutionSpec, detuning_axis: Vec<f64>, power_axis: PowerAxis) -> Result<Self> {
        let input_freq = base.params.resonance_freq.ok_or_else(|| {
            Error::InvalidParams("resonance frequency needed to convert input power".into())
        })?;
        let spec = SweepSpec {
            base,
            detuning_axis,
            power_axis,
            phase: PhaseMode::Single(0.0),
            exclusion_window: (mhz(-1.0), mhz(1.0)),
            input_freq,
            bin_width: 1e-6,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        check_axis("detuning", &self.detuning_axis)?;
        check_axis("power", self.power_axis.values())?;
        if let PowerAxis::Amplitude(v) = &self.power_axis {
            if v.iter().any(|&x| x < 0.0) {
                return Err(Error::InvalidParams("drive amplitudes must be non-negative".into()));
            }
        }
        if self.phase.phases().is_empty() || self.phase.phases().iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidParams("phase list must be nonempty and finite".into()));
        }
        if !(self.input_freq > 0.0) {
            return Err(Error::InvalidParams("input frequency must be positive".into()));
        }
        if !(self.bin_width > 0.0) {
            return Err(Error::InvalidBinWidth(format!("{}", self.bin_width)));
        }
        self.base.output_times()?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.detuning_axis.len() * self.power_axis.values().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid index → (detuning index, power index); detuning runs fastest.
    pub fn coordinates(&self, index: usize) -> (usize, usize) {
        let nd = self.detuning_axis.len();
        (index % nd, index / nd)
    }

    /// SHA-256 of the full spec, used to tie checkpoints to configurations.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(format!("{self:?}").as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    fn drive_amplitude(&self, power_index: usize) -> Result<(f64, f64)> {
        let kappa_ext = self.base.params.kappa_ext;
        match &self.power_axis {
            PowerAxis::Dbm(v) => {
                let dbm = v[power_index];
                Ok((input_power_to_amplitude(dbm, kappa_ext, self.input_freq)?, dbm))
            }
            PowerAxis::Amplitude(v) => {
                let om = v[power_index];
                let dbm = if kappa_ext > 0.0 {
                    amplitude_to_input_power(om, kappa_ext, self.input_freq)?
                } else {
                    f64::NAN
                };
                Ok((om, dbm))
            }
        }
    }
}

fn check_axis(name: &str, axis: &[f64]) -> Result<()> {
    if axis.is_empty() {
        return Err(Error::InvalidParams(format!("{name} axis is empty")));
    }
    if axis.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParams(format!("{name} axis has non-finite entries")));
    }
    let inc = axis.windows(2).all(|w| w[1] > w[0]);
    let dec = axis.windows(2).all(|w| w[1] < w[0]);
    if !(inc || dec) {
        return Err(Error::InvalidParams(format!("{name} axis must be strictly monotone")));
    }
    Ok(())
}

/// Fit and integrator bookkeeping of one successful grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointFit {
    pub fit: FitResult,
    pub accepted_steps: u64,
    pub rejected_steps: u64,
    pub max_trace_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub index: usize,
    pub detuning: f64,
    pub omega_in: f64,
    pub power_dbm: f64,
    pub outcome: std::result::Result<PointFit, String>,
}

impl PointResult {
    pub fn tau(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|p| p.fit.tau)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub spec: SweepSpec,
    pub config_hash: String,
    pub code_version: String,
    /// One entry per grid index, in grid order.
    pub points: Vec<PointResult>,
}

impl SweepResult {
    pub fn failed(&self) -> usize {
        self.points.iter().filter(|p| p.outcome.is_err()).count()
    }

    pub fn is_partial(&self) -> bool {
        let f = self.failed();
        f > 0 && f < self.points.len()
    }

    pub fn point(&self, detuning_index: usize, power_index: usize) -> &PointResult {
        &self.points[power_index * self.spec.detuning_axis.len() + detuning_index]
    }

    pub fn to_csv(&self) -> String {
        let theta = match &self.spec.phase {
            PhaseMode::Single(t) => format!("{t:.6}"),
            PhaseMode::Average(_) => "avg".to_string(),
        };
        let (lo, hi) = self.spec.exclusion_window;
        let mut out = String::with_capacity(64 * (self.points.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for p in &self.points {
            let _ = write!(
                out,
                "{:.6},{:.4},{:.6},{},",
                to_mhz(p.detuning),
                p.power_dbm,
                to_mhz(p.omega_in),
                theta
            );
            match &p.outcome {
                Ok(pf) => {
                    let mut status = if pf.fit.at_cap { "capped" } else { "ok" }.to_string();
                    if p.detuning > lo && p.detuning < hi {
                        status.push_str("+window");
                    }
                    let _ = writeln!(
                        out,
                        "{:.6},{:.6},{:.6e},{}",
                        pf.fit.tau * 1e6,
                        pf.fit.tau_error * 1e6,
                        pf.fit.residual_rms,
                        status
                    );
                }
                Err(msg) => {
                    let _ = writeln!(out, "nan,nan,nan,failed: {}", sanitize(msg));
                }
            }
        }
        out
    }

    /// Config hash, code version and per-point integrator statistics.
    pub fn provenance(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "config_sha256 = {}", self.config_hash);
        let _ = writeln!(out, "code_version = {}", self.code_version);
        let _ = writeln!(out, "points = {}", self.points.len());
        let _ = writeln!(out, "failed = {}", self.failed());
        let _ = writeln!(out, "index,accepted_steps,rejected_steps,max_trace_error");
        for p in &self.points {
            if let Ok(pf) = &p.outcome {
                let _ = writeln!(
                    out,
                    "{},{},{},{:.3e}",
                    p.index, pf.accepted_steps, pf.rejected_steps, pf.max_trace_error
                );
            }
        }
        out
    }
}

fn sanitize(msg: &str) -> String {
    msg.replace([',', '\n', '\r'], ";")
}

/// Evolves, bins and fits one point at every phase of the spec.
fn run_point(spec: &SweepSpec, index: usize) -> PointResult {
    let (di, pi) = spec.coordinates(index);
    let detuning = spec.detuning_axis[di];
    let amp = spec.drive_amplitude(pi);
    let (omega_in, power_dbm) = match &amp {
        Ok(v) => *v,
        Err(_) => (f64::NAN, f64::NAN),
    };
    let outcome = amp.and_then(|(om, _)| fit_point(spec, detuning, om)).map_err(|e| e.to_string());
    PointResult {
        index,
        detuning,
        omega_in,
        power_dbm,
        outcome,
    }
}

fn fit_point(spec: &SweepSpec, detuning: f64, omega_in: f64) -> Result<PointFit> {
    let phases = spec.phase.phases();
    let dim = spec.base.dim;
    let obs = [Observable::quadrature(dim)];
    let mut fits = Vec::with_capacity(phases.len());
    let (mut acc, mut rej, mut trace_err) = (0, 0, 0.0f64);
    for &theta in phases {
        let mut run = spec.base.clone();
        run.drive = if omega_in > 0.0 {
            Some(DriveSpec::new(omega_in, detuning, theta)?)
        } else {
            None
        };
        let ev = evolve(&run, &obs)?;
        acc += ev.diagnostics.steps.accepted;
        rej += ev.diagnostics.steps.rejected;
        trace_err = trace_err.max(ev.diagnostics.max_trace_error);
        fits.push(fit_exponential(&bin_trace(&ev.series[0], spec.bin_width)?)?);
    }
    Ok(PointFit {
        fit: average_fits(&fits),
        accepted_steps: acc,
        rejected_steps: rej,
        max_trace_error: trace_err,
    })
}

/// Mean of τ, A and residuals; errors add in quadrature over the mean.
fn average_fits(fits: &[FitResult]) -> FitResult {
    if fits.len() == 1 {
        return fits[0];
    }
    let n = fits.len() as f64;
    let mean = |f: fn(&FitResult) -> f64| fits.iter().map(f).sum::<f64>() / n;
    let quad = |f: fn(&FitResult) -> f64| fits.iter().map(|x| f(x).powi(2)).sum::<f64>().sqrt() / n;
    FitResult {
        amplitude: mean(|f| f.amplitude),
        amplitude_error: quad(|f| f.amplitude_error),
        tau: mean(|f| f.tau),
        tau_error: quad(|f| f.tau_error),
        residual_rms: mean(|f| f.residual_rms),
        at_cap: fits.iter().any(|f| f.at_cap),
    }
}

/// Runs every grid point on `parallelism` worker threads.
pub fn run_sweep(spec: &SweepSpec, parallelism: usize) -> Result<SweepResult> {
    run_sweep_checkpointed(spec, parallelism, None, false)
}

/// Like [`run_sweep`], appending each finished point to `checkpoint`.
/// With `resume`, points already recorded there are loaded instead of rerun.
pub fn run_sweep_checkpointed(
    spec: &SweepSpec,
    parallelism: usize,
    checkpoint: Option<&Path>,
    resume: bool,
) -> Result<SweepResult> {
    spec.validate()?;
    if parallelism == 0 {
        return Err(Error::InvalidParams("parallelism must be at least 1".into()));
    }
    let hash = spec.config_hash();
    let mut done: Vec<Option<PointResult>> = vec![None; spec.len()];
    let writer = match checkpoint {
        Some(path) => {
            if resume && path.exists() {
                for p in read_checkpoint(path, spec, &hash)? {
                    let i = p.index;
                    done[i] = Some(p);
                }
                truncate_partial_tail(path)?;
                Some(Mutex::new(OpenOptions::new().append(true).open(path)?))
            } else {
                let mut f = File::create(path)?;
                writeln!(f, "{CHECKPOINT_MAGIC}")?;
                writeln!(f, "# config_sha256 {hash}")?;
                f.flush()?;
                Some(Mutex::new(f))
            }
        }
        None => None,
    };

    let todo: Vec<usize> = (0..spec.len()).filter(|&i| done[i].is_none()).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::InvalidParams(e.to_string()))?;
    let fresh: Vec<Result<PointResult>> = pool.install(|| {
        todo.par_iter()
            .map(|&i| {
                let p = run_point(spec, i);
                if let Some(w) = &writer {
                    let line = checkpoint_line(&p);
                    let mut f = w.lock().map_err(|_| Error::Io("checkpoint lock poisoned".into()))?;
                    f.write_all(line.as_bytes())?;
                    f.flush()?;
                }
                Ok(p)
            })
            .collect()
    });
    for p in fresh {
        let p = p?;
        let i = p.index;
        done[i] = Some(p);
    }
    let points: Vec<PointResult> = done.into_iter().map(|p| p.expect("every index filled")).collect();
    if points.iter().all(|p| p.outcome.is_err()) {
        return Err(Error::SweepFailed);
    }
    Ok(SweepResult {
        spec: spec.clone(),
        config_hash: hash,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        points,
    })
}

/// Shortest round-trip representation, so reloaded points are bit-identical.
fn checkpoint_line(p: &PointResult) -> String {
    match &p.outcome {
        Ok(pf) => format!(
            "{},ok,{:?},{:?},{:?},{:?},{:?},{:?},{:?},{},{},{},{:?}\n",
            p.index,
            p.omega_in,
            p.power_dbm,
            pf.fit.amplitude,
            pf.fit.amplitude_error,
            pf.fit.tau,
            pf.fit.tau_error,
            pf.fit.residual_rms,
            pf.fit.at_cap,
            pf.accepted_steps,
            pf.rejected_steps,
            pf.max_trace_error
        ),
        Err(msg) => format!("{},err,{:?},{:?},{}\n", p.index, p.omega_in, p.power_dbm, sanitize(msg)),
    }
}

fn bad_record(line: usize) -> Error {
    Error::Io(format!("malformed checkpoint record on line {line}"))
}

fn read_checkpoint(path: &Path, spec: &SweepSpec, hash: &str) -> Result<Vec<PointResult>> {
    let text = std::fs::read_to_string(path)?;
    let complete = text.ends_with('\n');
    let mut lines: Vec<&str> = text.lines().collect();
    // a record cut short by an interrupted write is dropped
    if !complete && lines.len() > 2 {
        lines.pop();
    }
    if lines.first() != Some(&CHECKPOINT_MAGIC) {
        return Err(Error::Io(format!("{} is not a v1 sweep checkpoint", path.display())));
    }
    if lines.get(1).copied() != Some(format!("# config_sha256 {hash}").as_str()) {
        return Err(Error::InvalidParams(
            "checkpoint was written for a different configuration".into(),
        ));
    }
    let mut out = Vec::new();
    for (k, line) in lines.iter().enumerate().skip(2) {
        let f: Vec<&str> = line.splitn(5, ',').collect();
        if f.len() < 4 {
            return Err(bad_record(k + 1));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad_record(k + 1));
        let index: usize = f[0].parse().map_err(|_| bad_record(k + 1))?;
        if index >= spec.len() {
            return Err(bad_record(k + 1));
        }
        let (di, _) = spec.coordinates(index);
        let omega_in = num(f[2])?;
        let power_dbm = num(f[3])?;
        let outcome = match f[1] {
            "ok" => {
                let r: Vec<&str> = f.get(4).ok_or_else(|| bad_record(k + 1))?.split(',').collect();
                if r.len() != 9 {
                    return Err(bad_record(k + 1));
                }
                Ok(PointFit {
                    fit: FitResult {
                        amplitude: num(r[0])?,
                        amplitude_error: num(r[1])?,
                        tau: num(r[2])?,
                        tau_error: num(r[3])?,
                        residual_rms: num(r[4])?,
                        at_cap: r[5].parse().map_err(|_| bad_record(k + 1))?,
                    },
                    accepted_steps: r[6].parse().map_err(|_| bad_record(k + 1))?,
                    rejected_steps: r[7].parse().map_err(|_| bad_record(k + 1))?,
                    max_trace_error: num(r[8])?,
                })
            }
            "err" => Err(f.get(4).copied().unwrap_or("").to_string()),
            _ => return Err(bad_record(k + 1)),
        };
        out.push(PointResult {
            index,
            detuning: spec.detuning_axis[di],
            omega_in,
            power_dbm,
            outcome,
        });
    }
    Ok(out)
}

/// Cuts a record left incomplete by an interrupted write.
fn truncate_partial_tail(path: &Path) -> Result<()> {
    let bytes = std::fs::read(path)?;
    if bytes.last().is_some_and(|&b| b != b'\n') {
        let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |k| k + 1);
        OpenOptions::new().write(true).open(path)?.set_len(keep as u64)?;
    }
    Ok(())
}

/// Strict local minima of `y` along `x`, refined by a parabola through
/// each minimum and its neighbours.
pub fn local_minima(x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    if x.len() != y.len() || x.len() < 3 {
        return out;
    }
    for k in 1..x.len() - 1 {
        if y[k] < y[k - 1] && y[k] < y[k + 1] {
            out.push(parabola_vertex([x[k - 1], x[k], x[k + 1]], [y[k - 1], y[k], y[k + 1]]));
        }
    }
    out
}

fn parabola_vertex(x: [f64; 3], y: [f64; 3]) -> f64 {
    let denom = (x[0] - x[1]) * (x[0] - x[2]) * (x[1] - x[2]);
    let a = (x[2] * (y[1] - y[0]) + x[1] * (y[0] - y[2]) + x[0] * (y[2] - y[1])) / denom;
    let b = (x[2] * x[2] * (y[0] - y[1]) + x[1] * x[1] * (y[2] - y[0]) + x[0] * x[0] * (y[1] - y[2])) / denom;
    let (lo, hi) = (x[0].min(x[2]), x[0].max(x[2]));
    if a > 0.0 && a.is_finite() {
        (-b / (2.0 * a)).clamp(lo, hi)
    } else {
        x[1]
    }
}

/// Dips of τ along the detuning axis at one power-axis value. Failed
/// points are skipped.
pub fn dip_locator(result: &SweepResult, power: f64) -> Vec<f64> {
    let axis = result.spec.power_axis.values();
    let Some(pi) = axis
        .iter()
        .position(|&v| (v - power).abs() <= 1e-9 * v.abs().max(1.0))
    else {
        return Vec::new();
    };
    let (x, y): (Vec<f64>, Vec<f64>) = (0..result.spec.detuning_axis.len())
        .filter_map(|di| {
            let p = result.point(di, pi);
            p.tau().map(|t| (p.detuning, t))
        })
        .unzip();
    local_minima(&x, &y)
}

/// Pump amplitude at which the computed `E_02` equals `observed_dip`.
///
/// Secant iteration from `p = |observed|/2`, converged to 1e-9 relative;
/// fails if `E_02` is not within 0.1% after 50 iterations.
pub fn calibrate_pump_from_dip(observed_dip: f64, params: &KpoParams, dim: FockDim) -> Result<f64> {
    if !(observed_dip < 0.0) {
        return Err(Error::InvalidParams(format!(
            "observed dip must be negative, got {observed_dip}"
        )));
    }
    const MAX_ITER: usize = 50;
    let e02 = |p: f64| -> Result<f64> {
        let mut q = params.clone();
        q.pump_amplitude = p;
        excitation_energy(&kpo_spectrum(&q, dim)?, 0, 2)
    };
    let target = observed_dip;
    let mut p0 = target.abs() / 2.0;
    let mut f0 = e02(p0)? - target;
    let mut p1 = p0 * 1.01;
    let mut f1 = e02(p1)? - target;
    for _ in 0..MAX_ITER {
        if (f1 / target).abs() < 1e-9 {
            return Ok(p1);
        }
        let slope = (f1 - f0) / (p1 - p0);
        if !(slope.is_finite()) || slope == 0.0 {
            break;
        }
        let p2 = (p1 - f1 / slope).max(0.5 * p1);
        p0 = p1;
        f0 = f1;
        p1 = p2;
        f1 = e02(p1)? - target;
    }
    if (f1 / target).abs() <= 1e-3 {
        Ok(p1)
    } else {
        Err(Error::NoConvergence(MAX_ITER))
    }
}
