//! Bit-flip time of the single-KPO operating point, optionally with an
//! input signal.
//!
//! cargo run --release --example bitflip_baseline -- [dim] [drive_mhz detuning_mhz phase_rad]

use std::time::Instant;

use kpo::bitflip::{bin_trace, fit_exponential};
use kpo::dynamics::{evolve, EvolutionSpec, Observable};
use kpo::model::{presets, DriveSpec};
use kpo::units::{mhz, to_us};
use kpo::FockDim;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<f64> = std::env::args().skip(1).map(|s| s.parse()).collect::<Result<_, _>>()?;
    let dim = FockDim::new(args.first().map_or(40, |&d| d as usize))?;
    let mut spec = EvolutionSpec::new(presets::single(), dim)?;
    if let [_, amp, det, phase] = args[..] {
        spec.drive = Some(DriveSpec::new(mhz(amp), mhz(det), phase)?);
    }
    let start = Instant::now();
    let ev = evolve(&spec, &[Observable::quadrature(dim)])?;
    let fit = fit_exponential(&bin_trace(&ev.series[0], 1e-6)?)?;
    println!(
        "dim {}: tau = {:.4} ± {:.4} us, A = {:.4}, {} steps, {:.1} s",
        dim.get(),
        to_us(fit.tau),
        to_us(fit.tau_error),
        fit.amplitude,
        ev.diagnostics.steps.accepted,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
