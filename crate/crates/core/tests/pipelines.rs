use kpo::bitflip::{jackknife_fit, Selection};
use kpo::dynamics::EvolutionSpec;
use kpo::model::KpoParams;
use kpo::readout::{channel_traces, emulate_ensemble, ChannelPlan, EnsembleSpec, IfChannel, InitialSign};
use kpo::sweep::{run_sweep, run_sweep_checkpointed, PowerAxis, SweepSpec};
use kpo::units::{ghz, mhz};
use kpo::FockDim;

fn small_sweep() -> SweepSpec {
    let params = KpoParams {
        detuning: 0.0,
        kerr: mhz(-14.0),
        pump_amplitude: mhz(14.0),
        kappa_ext: mhz(0.72),
        kappa_int: mhz(1.16),
        dephasing: mhz(0.0091),
        resonance_freq: Some(ghz(9.9)),
        pump_freq: None,
        flux_bias: None,
        dfreq_dcurrent: None,
    };
    let mut base = EvolutionSpec::new(params, FockDim::new(12).unwrap()).unwrap();
    base.t_end = 2e-6;
    let axis = vec![mhz(-30.0), mhz(-20.0), mhz(-10.0), 0.0, mhz(10.0)];
    let mut spec = SweepSpec::new(base, axis, PowerAxis::Amplitude(vec![mhz(0.5), mhz(1.5)])).unwrap();
    spec.bin_width = 0.2e-6;
    spec
}

#[test]
fn sweep_output_is_independent_of_thread_count() {
    let spec = small_sweep();
    let one = run_sweep(&spec, 1).unwrap();
    let four = run_sweep(&spec, 4).unwrap();
    assert_eq!(one.to_csv(), four.to_csv());
    assert_eq!(one.failed(), 0);
    assert_eq!(one.points.len(), 10);
}

#[test]
fn checkpoint_resume_matches_uninterrupted_run() {
    let spec = small_sweep();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck");
    let full = run_sweep_checkpointed(&spec, 2, Some(&path), false).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let keep: Vec<&str> = text.lines().take(text.lines().take_while(|l| l.starts_with('#')).count() + 4).collect();
    std::fs::write(&path, format!("{}\n7,ok,1.2", keep.join("\n"))).unwrap();
    let resumed = run_sweep_checkpointed(&spec, 3, Some(&path), true).unwrap();
    assert_eq!(resumed.to_csv(), full.to_csv());
}

#[test]
fn resume_refuses_a_foreign_checkpoint() {
    let spec = small_sweep();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck");
    run_sweep_checkpointed(&spec, 2, Some(&path), false).unwrap();
    let mut other = spec.clone();
    other.bin_width = 0.4e-6;
    assert!(run_sweep_checkpointed(&other, 2, Some(&path), true).is_err());
}

#[test]
fn readout_round_trip_recovers_flip_time() {
    let plan = ChannelPlan::new(
        vec![IfChannel::new("KPO1", 1e6, 1.0), IfChannel::new("KPO2", 31e6, 1.0)],
        2e-6,
    )
    .unwrap();
    let tau = 5e-6;
    let spec = EnsembleSpec {
        plan,
        tau_flip: vec![tau, tau],
        t_end: 20e-6,
        sample_rate: 250e6,
        initial: InitialSign::Plus,
        noise_sigma: 1.0,
        trials: 2000,
        seed: 11,
    };
    let records = emulate_ensemble(&spec).unwrap();
    for ch in 0..2 {
        let traces = channel_traces(&records, ch, 2e-6).unwrap();
        let fit = jackknife_fit(&traces, Selection::SignFold, 1, 20).unwrap();
        assert!((fit.tau - tau).abs() < 3.0 * fit.tau_error, "channel {ch}: {fit:?}");
    }
}
