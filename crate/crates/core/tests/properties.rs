use kpo::bitflip::{bin_trace, conditional_select, fit_exponential, BinnedTrace, Selection};
use kpo::dynamics::{lindblad_rhs, TimeSeries};
use kpo::fock::{coherent_state, parity_operator};
use kpo::model::{
    amplitude_to_input_power, build_effective_from_coupling, build_input_driven, build_single_kpo,
    input_power_to_amplitude, DriveSpec, KpoParams, TwoKpoParams,
};
use kpo::readout::{telegraph_trajectory, InitialSign, TelegraphSpec};
use kpo::spectrum::{excitation_energy, kpo_spectrum};
use kpo::sweep::local_minima;
use kpo::units::mhz;
use kpo::{DensityState, FockDim, StateVector, C64};
use proptest::prelude::*;

fn kpo(detuning: f64, kerr: f64, pump: f64) -> KpoParams {
    KpoParams {
        detuning: mhz(detuning),
        kerr: mhz(kerr),
        pump_amplitude: mhz(pump),
        kappa_ext: mhz(0.72),
        kappa_int: mhz(1.16),
        dephasing: mhz(0.0091),
        resonance_freq: None,
        pump_freq: None,
        flux_bias: None,
        dfreq_dcurrent: None,
    }
}

fn random_state(dim: usize, re: &[f64], im: &[f64]) -> StateVector {
    let amps: Vec<C64> = (0..dim).map(|k| C64::new(re[k], im[k])).collect();
    let norm = amps.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    StateVector::from_amplitudes(amps.into_iter().map(|c| c / norm).collect()).unwrap()
}

fn exact_trace(amplitude: f64, tau: f64, n: usize, width: f64) -> BinnedTrace {
    let centers: Vec<f64> = (0..n).map(|k| (k as f64 + 0.5) * width).collect();
    let means = centers.iter().map(|t| amplitude * (-t / tau).exp()).collect();
    BinnedTrace::new(centers, means, None, width).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hamiltonian_is_hermitian_and_parity_symmetric(
        d in -50.0..50.0f64, k in -30.0..-1.0f64, p in 0.0..200.0f64, n in 4usize..30,
    ) {
        let dim = FockDim::new(n).unwrap();
        let h = build_single_kpo(&kpo(d, k, p), dim).unwrap();
        prop_assert!(h.hermiticity_deviation() < 1e-14);
        let comm = h.commutator(&parity_operator(dim));
        prop_assert!(comm.frobenius_norm() <= 1e-12 * h.frobenius_norm().max(1.0));
    }

    #[test]
    fn coupling_reduces_to_input_drive(
        g in 0.1..10.0f64, alpha2 in 0.1..4.0f64, dp in -300.0..300.0f64,
        theta in -3.2..3.2f64, t in 0.0..2e-5f64,
    ) {
        let dim = FockDim::new(16).unwrap();
        let two = TwoKpoParams::new(kpo(0.0, -14.0, 110.0), kpo(0.0, -15.0, 140.0), mhz(g), mhz(dp), theta).unwrap();
        let eff = build_effective_from_coupling(&two, C64::new(alpha2, 0.0), t, dim).unwrap();
        let drive = DriveSpec::new(mhz(g) * alpha2, mhz(dp), theta).unwrap();
        let direct = build_input_driven(&two.kpo1, &drive, t, dim).unwrap();
        let diff = (eff.matrix() - direct.matrix()).norm();
        prop_assert!(diff <= 1e-12 * direct.frobenius_norm());
    }

    #[test]
    fn generator_is_traceless_and_hermitian(
        re in prop::collection::vec(-1.0..1.0f64, 10),
        im in prop::collection::vec(-1.0..1.0f64, 10),
        d in -20.0..20.0f64, p in 0.0..50.0f64,
    ) {
        prop_assume!(re.iter().chain(&im).map(|x| x * x).sum::<f64>() > 1e-3);
        let dim = FockDim::new(10).unwrap();
        let params = kpo(d, -14.0, p);
        let rho = DensityState::from_pure(&random_state(10, &re, &im));
        let h = build_single_kpo(&params, dim).unwrap();
        let dr = lindblad_rhs(&rho, &h, params.kappa_tot(), params.dephasing).unwrap();
        let scale = dr.norm().max(1.0);
        prop_assert!(dr.trace().norm() < 1e-12 * scale);
        prop_assert!((&dr - dr.adjoint()).norm() < 1e-12 * scale);
    }

    #[test]
    fn excitation_energies_add_up(p in 10.0..150.0f64, i in 0usize..4, j in 4usize..8, k in 8usize..12) {
        let spec = kpo_spectrum(&kpo(0.0, -14.0, p), FockDim::new(30).unwrap()).unwrap();
        let eij = excitation_energy(&spec, i, j).unwrap();
        let ejk = excitation_energy(&spec, j, k).unwrap();
        let eik = excitation_energy(&spec, i, k).unwrap();
        prop_assert!((eij + ejk - eik).abs() <= 1e-9 * eik.abs());
        prop_assert!(eik <= 0.0);
    }

    #[test]
    fn energies_are_sorted_descending(d in -50.0..50.0f64, p in 0.0..150.0f64) {
        let spec = kpo_spectrum(&kpo(d, -14.0, p), FockDim::new(24).unwrap()).unwrap();
        prop_assert!(spec.energies.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn coherent_state_is_normalized(re in -2.0..2.0f64, im in -2.0..2.0f64) {
        let psi = coherent_state(FockDim::new(40).unwrap(), C64::new(re, im)).unwrap();
        prop_assert!((psi.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn power_conversion_round_trips(dbm in -160.0..-90.0f64, kext in 0.1..5.0f64, f in 4.0..12.0f64) {
        let w = 2.0 * std::f64::consts::PI * f * 1e9;
        let om = input_power_to_amplitude(dbm, mhz(kext), w).unwrap();
        let back = amplitude_to_input_power(om, mhz(kext), w).unwrap();
        prop_assert!((back - dbm).abs() < 1e-9);
    }

    #[test]
    fn noiseless_fit_recovers_parameters(a in 0.1..3.0f64, tau_us in 0.5..50.0f64, n in 5usize..40) {
        let tau = tau_us * 1e-6;
        let fit = fit_exponential(&exact_trace(a, tau, n, 1e-6)).unwrap();
        prop_assert!((fit.tau - tau).abs() < 1e-6 * tau);
        prop_assert!((fit.amplitude - a).abs() < 1e-6 * a);
    }

    #[test]
    fn fit_is_scale_equivariant(a in 0.1..3.0f64, tau_us in 1.0..30.0f64, c in -5.0..5.0f64) {
        prop_assume!(c.abs() > 0.05);
        let tau = tau_us * 1e-6;
        let base = exact_trace(a, tau, 20, 1e-6);
        let f0 = fit_exponential(&base).unwrap();
        let f1 = fit_exponential(&base.scaled(c)).unwrap();
        prop_assert!((f1.tau - f0.tau).abs() < 1e-8 * f0.tau);
        prop_assert!((f1.amplitude - c * f0.amplitude).abs() < 1e-8 * (c * f0.amplitude).abs());
    }

    #[test]
    fn dropping_leading_bins_keeps_fit(a in 0.5..2.0f64, tau_us in 2.0..30.0f64, k in 1usize..5) {
        let tau = tau_us * 1e-6;
        let base = exact_trace(a, tau, 24, 1e-6);
        let f1 = fit_exponential(&base.skip(k)).unwrap();
        prop_assert!((f1.tau - tau).abs() < 1e-6 * tau);
        prop_assert!((f1.amplitude - a).abs() < 1e-6 * a);
    }

    #[test]
    fn fit_is_time_shift_covariant(a in 0.5..2.0f64, tau_us in 2.0..30.0f64, shift_us in 0.0..10.0f64) {
        let (tau, s) = (tau_us * 1e-6, shift_us * 1e-6);
        let base = exact_trace(a, tau, 24, 1e-6);
        let shifted = BinnedTrace::new(
            base.bin_centers.iter().map(|t| t + s).collect(),
            base.bin_means.clone(),
            None,
            base.bin_width,
        )
        .unwrap();
        let f = fit_exponential(&shifted).unwrap();
        prop_assert!((f.tau - tau).abs() < 1e-6 * tau);
        let expected = a * (s / tau).exp();
        prop_assert!((f.amplitude - expected).abs() < 1e-6 * expected);
    }

    #[test]
    fn bins_of_affine_series_are_midpoints(
        c0 in -2.0..2.0f64, slope in -1e5..1e5f64, per_bin in 2usize..20, extra in 0usize..20,
    ) {
        let stride = 1e-8;
        let nbins = 7;
        let len = nbins * per_bin + extra.min(per_bin - 1);
        let times: Vec<f64> = (0..len).map(|k| k as f64 * stride).collect();
        let values: Vec<f64> = times.iter().map(|t| c0 + slope * t).collect();
        let series = TimeSeries::from_real(times, &values, "x").unwrap();
        let bins = bin_trace(&series, per_bin as f64 * stride).unwrap();
        prop_assert_eq!(bins.len(), nbins);
        for (t, m) in bins.bin_centers.iter().zip(&bins.bin_means) {
            // the bin holds samples at its left cell edges
            let expected = c0 + slope * (t - 0.5 * stride);
            prop_assert!((m - expected).abs() < 1e-9 * (1.0 + expected.abs()));
        }
    }

    #[test]
    fn sign_fold_undoes_flipped_copies(means in prop::collection::vec(-1.0..1.0f64, 6)) {
        prop_assume!(means[0].abs() > 1e-3);
        let centers: Vec<f64> = (0..6).map(|k| (k as f64 + 0.5) * 1e-6).collect();
        let t = BinnedTrace::new(centers, means.clone(), None, 1e-6).unwrap();
        let folded = conditional_select(&[t.clone(), t.scaled(-1.0)], Selection::SignFold).unwrap();
        let sign = means[0].signum();
        for (a, b) in folded.bin_means.iter().zip(&means) {
            prop_assert!((a - sign * b).abs() < 1e-15);
        }
    }

    #[test]
    fn telegraph_is_binary_and_seeded(seed in any::<u64>(), stream in 0u64..1000, tau_us in 0.1..20.0f64) {
        let spec = TelegraphSpec {
            tau_flip: tau_us * 1e-6,
            t_end: 4e-6,
            sample_rate: 250e6,
            initial: InitialSign::Random,
            seed,
            stream,
        };
        let a = telegraph_trajectory(&spec).unwrap();
        prop_assert!(a.real_values().iter().all(|v| *v == 1.0 || *v == -1.0));
        prop_assert_eq!(&a.values, &telegraph_trajectory(&spec).unwrap().values);
    }

    #[test]
    fn parabola_minimum_is_exact(x0 in -80.0..80.0f64, curv in 0.1..10.0f64) {
        let x: Vec<f64> = (-25..=25).map(|k| 4.0 * k as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| curv * (v - x0).powi(2) + 1.0).collect();
        let m = local_minima(&x, &y);
        prop_assert_eq!(m.len(), 1);
        prop_assert!((m[0] - x0).abs() < 1e-9 * (1.0 + x0.abs()));
    }
}
