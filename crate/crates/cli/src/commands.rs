//! One function per subcommand. Each returns the text report it printed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use kpo::bitflip::{bin_trace, fit_exponential, jackknife_fit, Selection};
use kpo::dynamics::{evolve, EvolutionSpec, InitialState, Observable};
use kpo::model::{coherent_amplitude, input_power_to_amplitude, DriveSpec, KpoParams};
use kpo::ode::Tolerances;
use kpo::readout::{
    channel_traces, dft_spectrum, emulate_ensemble, iq_csv, iq_histogram, quadrant_statistics,
    spectrum_csv, synthesize_if_signal, telegraph_trajectory, ChannelPlan, EnsembleSpec, IfChannel,
    InitialSign, TelegraphSpec,
};
use kpo::spectrum::{
    avoided_crossing_splitting, collision_report, excitation_energy, kpo_spectrum, CollisionOptions,
};
use kpo::sweep::{dip_locator, run_sweep_checkpointed, PhaseMode, PowerAxis, SweepSpec};
use kpo::units::{ghz, mhz, to_mhz, to_us, us};
use kpo::{FockDim, C64};

use crate::config::{KpoSection, RunConfig};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Spectrum,
    Bitflip,
    Sweep,
    ReadoutDemo,
    CollisionReport,
}

/// Command-line overrides applied on top of the config.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Options {
    pub out: PathBuf,
    pub parallel: Option<usize>,
    pub dim: Option<usize>,
    pub seed: Option<u64>,
    pub resume: bool,
    pub theta_average: bool,
}

pub fn run(cmd: Command, cfg: &RunConfig, opts: &Options) -> Result<String, CliError> {
    fs::create_dir_all(&opts.out).map_err(|e| out_err(&opts.out, e))?;
    match cmd {
        Command::Spectrum => cmd_spectrum(cfg, opts),
        Command::Bitflip => cmd_bitflip(cfg, opts),
        Command::Sweep => cmd_sweep(cfg, opts),
        Command::ReadoutDemo => cmd_readout_demo(cfg, opts),
        Command::CollisionReport => cmd_collision_report(cfg, opts),
    }
}

fn out_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Output {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

fn write_out(opts: &Options, name: &str, contents: &str) -> Result<(), CliError> {
    let path = opts.out.join(name);
    fs::write(&path, contents).map_err(|e| out_err(&path, e))
}

fn fock_dim(cfg: &RunConfig, opts: &Options) -> Result<FockDim, CliError> {
    Ok(FockDim::new(opts.dim.unwrap_or(cfg.simulation.dim))?)
}

fn input_freq(explicit: Option<f64>, params: &KpoParams) -> Result<f64, CliError> {
    explicit
        .map(ghz)
        .or(params.resonance_freq)
        .ok_or_else(|| CliError::Config("input_frequency or resonance_frequency is required".into()))
}

pub fn cmd_spectrum(cfg: &RunConfig, opts: &Options) -> Result<String, CliError> {
    let dim = fock_dim(cfg, opts)?;
    let mut report = String::new();
    let mut levels_csv = String::from("kpo,index,energy_mhz,energy_rad_s,parity\n");
    let mut pairs_csv = String::from("kpo,i,j,e_ij_mhz,e_ij_rad_s\n");
    let members: Vec<(&str, &KpoSection)> = match (&cfg.kpo, &cfg.kpo1, &cfg.kpo2) {
        (Some(k), _, _) => vec![("kpo", k)],
        (None, Some(k1), Some(k2)) => vec![("kpo1", k1), ("kpo2", k2)],
        (None, Some(k1), None) => vec![("kpo1", k1)],
        _ => return Err(CliError::Config("missing [kpo] section".into())),
    };
    for (tag, (name, section)) in members.iter().enumerate() {
        let params = section.to_params()?;
        let spec = kpo_spectrum(&params, dim)?;
        let cutoff = cfg
            .collision
            .energy_cutoff
            .map(mhz)
            .unwrap_or(2.0 * params.pump_amplitude);
        let shown: Vec<usize> = (0..spec.len()).filter(|&i| spec.energies[i] >= -cutoff).collect();
        let alpha = coherent_amplitude(&params)?;
        let _ = writeln!(report, "[{name}] dim = {}", dim.get());
        let _ = writeln!(
            report,
            "  Delta/2pi = {:.4} MHz, K/2pi = {:.4} MHz, p/2pi = {:.4} MHz",
            to_mhz(params.detuning),
            to_mhz(params.kerr),
            to_mhz(params.pump_amplitude)
        );
        let _ = writeln!(report, "  alpha = sqrt((p+Delta)/|K|) = {alpha:.4}");
        let _ = writeln!(
            report,
            "  levels above -{:.1} MHz (omega/2pi [MHz], omega [rad/s], parity):",
            to_mhz(cutoff)
        );
        for &i in &shown {
            let parity = spec.parity(i)?;
            let e = spec.energies[i];
            let _ = writeln!(report, "    {i:>3} {:>14.6} {:>16.6e} {:>+8.4}", to_mhz(e), e, parity);
        }
        for (i, e) in spec.energies.iter().enumerate() {
            let _ = writeln!(levels_csv, "{},{i},{:.9},{:.9e},{:.9}", tag + 1, to_mhz(*e), e, spec.parity(i)?);
        }
        let _ = writeln!(report, "  excitation energies E_ij = omega_j - omega_i:");
        for (a, &i) in shown.iter().enumerate() {
            for &j in &shown[a + 1..] {
                let e = excitation_energy(&spec, i, j)?;
                let _ = writeln!(report, "    E_{i}{j}/2pi = {:>12.6} MHz  ({:.6e} rad/s)", to_mhz(e), e);
                let _ = writeln!(pairs_csv, "{},{i},{j},{:.9},{:.9e}", tag + 1, to_mhz(e), e);
            }
        }
        if spec.len() > 2 {
            let e02 = excitation_energy(&spec, 0, 2)?;
            let _ = writeln!(report, "  E_02/2pi = {:.4} MHz", to_mhz(e02));
            if params.pump_amplitude > 0.0 {
                let _ = writeln!(report, "  |E_02|/(2p) = {:.4}", e02.abs() / (2.0 * params.pump_amplitude));
            }
        }
    }
    if members.len() == 2 {
        if let Some(c) = &cfg.coupling {
            let g = mhz(c.two_body_coupling);
            let split = avoided_crossing_splitting(0.0, 0.0, g);
            let _ = writeln!(
                report,
                "avoided crossing: 2g = {:.1} MHz  ({:.6e} rad/s)",
                to_mhz(split),
                split
            );
        }
    }
    write_out(opts, "spectrum_levels.csv", &levels_csv)?;
    write_out(opts, "spectrum_pairs.csv", &pairs_csv)?;
    write_out(opts, "spectrum_report.txt", &report)?;
    Ok(report)
}

/// Evolution template from `[kpo]` and `[simulation]`.
pub fn evolution_spec(cfg: &RunConfig, opts: &Options) -> Result<(EvolutionSpec, f64), CliError> {
    let params = cfg.single()?.to_params()?;
    let sim = &cfg.simulation;
    let mut spec = EvolutionSpec::new(params, fock_dim(cfg, opts)?)?;
    if let Some(a) = sim.initial_alpha {
        spec.initial = InitialState::Coherent(C64::new(a, 0.0));
    }
    spec.t_end = us(sim.t_end);
    spec.output_stride = sim.output_stride * 1e-9;
    spec.tolerances = Tolerances {
        rtol: sim.rtol,
        atol: sim.atol,
    };
    spec.ramp = sim.ramp.map(us);
    spec.output_times()?;
    Ok((spec, us(sim.bin_width)))
}

pub fn cmd_bitflip(cfg: &RunConfig, opts: &Options) -> Result<String, CliError> {
    let (mut spec, bin_width) = evolution_spec(cfg, opts)?;
    let mut report = String::new();
    if let Some(d) = &cfg.drive {
        let amplitude = match (d.power_dbm, d.amplitude) {
            (Some(dbm), None) => {
                let w_in = input_freq(d.input_frequency, &spec.params)?;
                input_power_to_amplitude(dbm + d.power_correction_db, spec.params.kappa_ext, w_in)?
            }
            (None, Some(a)) => mhz(a),
            _ => return Err(CliError::Config("[drive] needs exactly one of power_dbm or amplitude".into())),
        };
        spec.drive = Some(DriveSpec::new(amplitude, mhz(d.detuning), d.phase)?);
        let _ = writeln!(
            report,
            "drive: Delta_in/2pi = {:.4} MHz, Omega_in/2pi = {:.4} MHz, theta_in = {:.4} rad",
            d.detuning,
            to_mhz(amplitude),
            d.phase
        );
    }
    let dim = spec.dim;
    let ev = evolve(&spec, &[Observable::quadrature(dim)])?;
    let trace = bin_trace(&ev.series[0], bin_width)?;
    let fit = fit_exponential(&trace)?;
    let _ = writeln!(report, "dim = {}, horizon = {} us, bins = {}", dim.get(), to_us(spec.t_end), trace.len());
    let _ = writeln!(
        report,
        "tau = {:.4} ± {:.4} us{}",
        to_us(fit.tau),
        to_us(fit.tau_error),
        if fit.at_cap { " (at cap)" } else { "" }
    );
    let _ = writeln!(report, "A = {:.6} ± {:.6}, fit rms = {:.3e}", fit.amplitude, fit.amplitude_error, fit.residual_rms);
    let d = &ev.diagnostics;
    let _ = writeln!(
        report,
        "steps accepted = {}, rejected = {}, max trace error = {:.2e}, max edge population = {:.2e}",
        d.steps.accepted, d.steps.rejected, d.max_trace_error, d.max_edge_population
    );
    write_out(opts, "bitflip_trace.csv", &ev.series[0].to_csv())?;
    write_out(opts, "bitflip_fit.csv", &fit.plot_csv(&trace))?;
    write_out(opts, "bitflip_report.txt", &report)?;
    Ok(report)
}

pub fn sweep_spec(cfg: &RunConfig, opts: &Options) -> Result<SweepSpec, CliError> {
    let s = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [sweep] section".into()))?;
    let (base, bin_width) = evolution_spec(cfg, opts)?;
    let detunings: Vec<f64> = s.detuning_axis()?.into_iter().map(mhz).collect();
    let power = match (&s.powers_dbm, &s.amplitudes) {
        (Some(p), None) => PowerAxis::Dbm(p.iter().map(|x| x + s.power_correction_db).collect()),
        (None, Some(a)) => PowerAxis::Amplitude(a.iter().copied().map(mhz).collect()),
        _ => return Err(CliError::Config("[sweep] needs exactly one of powers_dbm or amplitudes".into())),
    };
    let input = input_freq(s.input_frequency, &base.params)?;
    let mut spec = SweepSpec::new(base, detunings, power)?;
    spec.input_freq = input;
    spec.bin_width = bin_width;
    spec.exclusion_window = (mhz(s.exclusion_window[0]), mhz(s.exclusion_window[1]));
    spec.phase = if s.theta_average || opts.theta_average {
        PhaseMode::quarter_average()
    } else {
        PhaseMode::Single(s.phase)
    };
    spec.validate()?;
    Ok(spec)
}

pub const SWEEP_CHECKPOINT: &str = "sweep.checkpoint";

pub fn cmd_sweep(cfg: &RunConfig, opts: &Options) -> Result<String, CliError> {
    let spec = sweep_spec(cfg, opts)?;
    let parallel = opts.parallel.unwrap_or(1);
    let checkpoint = opts.out.join(SWEEP_CHECKPOINT);
    let result = run_sweep_checkpointed(&spec, parallel, Some(&checkpoint), opts.resume)?;
    let mut dips = String::from("power,dip_detuning_mhz\n");
    let mut report = format!("sweep: {} points, {} failed\n", result.points.len(), result.failed());
    for &p in spec.power_axis.values() {
        let label = match spec.power_axis {
            PowerAxis::Dbm(_) => format!("{p} dBm"),
            PowerAxis::Amplitude(_) => format!("{:.6} MHz", to_mhz(p)),
        };
        let found = dip_locator(&result, p);
        let list: Vec<String> = found.iter().map(|d| format!("{:.3}", to_mhz(*d))).collect();
        let _ = writeln!(report, "dips at {label}: [{}] MHz", list.join(", "));
        for d in found {
            let v = match spec.power_axis {
                PowerAxis::Dbm(_) => p,
                PowerAxis::Amplitude(_) => to_mhz(p),
            };
            let _ = writeln!(dips, "{v},{:.6}", to_mhz(d));
        }
    }
    write_out(opts, "sweep.csv", &result.to_csv())?;
    write_out(opts, "sweep_dips.csv", &dips)?;
    write_out(opts, "provenance.txt", &result.provenance())?;
    if result.is_partial() {
        print!("{report}");
        return Err(CliError::PartialSweep {
            failed: result.failed(),
            total: result.points.len(),
        });
    }
    Ok(report)
}

fn channel_plan(cfg: &RunConfig) -> Result<ChannelPlan, CliError> {
    let r = &cfg.readout;
    let n = r.if_frequencies.len();
    if n == 0 {
        return Err(CliError::Config("[readout] needs at least one IF".into()));
    }
    let check = |name: &str, len: Option<usize>| match len {
        Some(l) if l != n => Err(CliError::Config(format!(
            "[readout] {name} has {l} entries for {n} IF channels"
        ))),
        _ => Ok(()),
    };
    check("tau_flip", Some(r.tau_flip.len()))?;
    check("labels", r.labels.as_ref().map(Vec::len))?;
    check("amplitudes", r.amplitudes.as_ref().map(Vec::len))?;
    let channels = (0..n)
        .map(|k| {
            let label = r.labels.as_ref().map_or_else(|| format!("KPO{}", k + 1), |l| l[k].clone());
            let amp = r.amplitudes.as_ref().map_or(1.0, |a| a[k]);
            IfChannel::new(label, r.if_frequencies[k] * 1e6, amp)
        })
        .collect();
    Ok(ChannelPlan::new(channels, us(r.bin_duration))?)
}

pub fn cmd_readout_demo(cfg: &RunConfig, opts: &Options) -> Result<String, CliError> {
    let r = &cfg.readout;
    let plan = channel_plan(cfg)?;
    let seed = opts.seed.unwrap_or(r.seed);
    let sample_rate = r.sample_rate * 1e6;
    let t_end = us(r.t_end);
    let taus: Vec<f64> = r.tau_flip.iter().copied().map(us).collect();
    let nch = plan.channels().len();
    let mut report = String::new();

    // one trial in full for the spectrum of the multiplexed signal
    let single: Vec<_> = taus
        .iter()
        .enumerate()
        .map(|(c, &tau)| {
            telegraph_trajectory(&TelegraphSpec {
                tau_flip: tau,
                t_end,
                sample_rate,
                initial: InitialSign::Random,
                seed,
                stream: c as u64,
            })
        })
        .collect::<Result<_, _>>()?;
    let waveform = synthesize_if_signal(&single, &plan, r.noise_sigma, seed)?;
    write_out(opts, "readout_spectrum.csv", &spectrum_csv(&dft_spectrum(&waveform)))?;

    let records = emulate_ensemble(&EnsembleSpec {
        plan: plan.clone(),
        tau_flip: taus,
        t_end,
        sample_rate,
        initial: InitialSign::Random,
        noise_sigma: r.noise_sigma,
        trials: r.trials,
        seed,
    })?;
    write_out(opts, "readout_iq.csv", &iq_csv(&records))?;
    let range = 1.05 * records.iter().map(|x| x.i.abs().max(x.q.abs())).fold(0.0, f64::max);
    let _ = writeln!(report, "trials = {}, seed = {seed}, channels = {nch}", r.trials);
    for (c, ch) in plan.channels().iter().enumerate() {
        let h = iq_histogram(&records, c, r.histogram_bins, range.max(f64::MIN_POSITIVE))?;
        write_out(opts, &format!("readout_hist_ch{c}.csv"), &h.to_csv())?;
        let traces = channel_traces(&records, c, plan.bin_duration())?;
        // the first bin sets the fold sign, so it is left out of the fit
        match jackknife_fit(&traces, Selection::SignFold, 1, traces.len().min(20)) {
            Ok(fit) => {
                let _ = writeln!(
                    report,
                    "{} (IF {:.3} MHz): tau = {:.4} ± {:.4} us (emulated {:.4} us)",
                    ch.label,
                    ch.if_freq / 1e6,
                    to_us(fit.tau),
                    to_us(fit.tau_error),
                    r.tau_flip[c]
                );
            }
            Err(e) => {
                let _ = writeln!(report, "{}: no decay fit ({e})", ch.label);
            }
        }
    }
    if nch >= 2 {
        let stats = quadrant_statistics(&records, 0)?;
        let text = stats.report();
        write_out(opts, "readout_quadrants.txt", &text)?;
        report.push_str(&text);
    }
    write_out(opts, "readout_report.txt", &report)?;
    Ok(report)
}

pub fn cmd_collision_report(cfg: &RunConfig, opts: &Options) -> Result<String, CliError> {
    let two = cfg.pair()?;
    let c = &cfg.collision;
    let opts_c = CollisionOptions {
        threshold: mhz(c.threshold),
        energy_cutoff: c.energy_cutoff.map(mhz),
        include_doublets: c.include_doublets,
        doublet_ratio: c.doublet_ratio,
        dim: fock_dim(cfg, opts)?,
    };
    let rep = collision_report(&two, &opts_c)?;
    let mut report = format!(
        "Delta_p/2pi = {:.4} MHz, g/2pi = {:.4} MHz\n",
        to_mhz(two.pump_freq_halfdiff),
        to_mhz(two.coupling)
    );
    report.push_str(&rep.to_table());
    write_out(opts, "collisions.csv", &rep.to_csv())?;
    write_out(opts, "collision_report.txt", &report)?;
    Ok(report)
}
