//! Parameter records, Hamiltonian builders and calibration conversions.
//!
//! All Hamiltonians are `H/ħ` in rad/s, written in the frame rotating at
//! half the pump frequency:
//!
//! ```text
//! H_1KPO = Δ a†a + (K/2) a†²a² + (p/2)(a†² + a²)
//! H_in   = H_1KPO + Ω_in [e^{−i(Δ_in t + θ_in)} a† + e^{+i(Δ_in t + θ_in)} a]
//! H_2KPO = H_1KPO(1) + H_1KPO(2) + g [e^{−i(Δ_p t + θ_p)} a₁†a₂ + h.c.]
//! ```

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fock::{annihilation, creation, FockDim, OperatorMatrix, C64, ZERO};
use crate::units::{dbm_to_watts, HBAR};

/// Largest composite dimension `build_two_kpo` accepts by default.
pub const DEFAULT_TWO_KPO_CAP: usize = 4096;

/// Physical parameters of one KPO. Frequencies and rates are angular (rad/s).
#[derive(Debug, Clone, PartialEq)]
pub struct KpoParams {
    /// Pump detuning `Δ = ω_r − ω_p/2`.
    pub detuning: f64,
    /// Kerr nonlinearity `K`, negative.
    pub kerr: f64,
    /// Pump amplitude `p`.
    pub pump_amplitude: f64,
    pub kappa_ext: f64,
    pub kappa_int: f64,
    /// Pure dephasing rate `γ`.
    pub dephasing: f64,
    /// Resonance frequency `ω_r`, when known.
    pub resonance_freq: Option<f64>,
    /// Pump frequency `ω_p`, when known.
    pub pump_freq: Option<f64>,
    /// Flux bias `Φ/Φ₀` (metadata).
    pub flux_bias: Option<f64>,
    /// `|dω_r/dI|` in rad/s per ampere (metadata for pump calibration).
    pub dfreq_dcurrent: Option<f64>,
}

impl KpoParams {
    /// Minimal record: Hamiltonian terms and loss channels, no metadata.
    pub fn new(
        detuning: f64,
        kerr: f64,
        pump_amplitude: f64,
        kappa_ext: f64,
        kappa_int: f64,
        dephasing: f64,
    ) -> Result<Self> {
        let p = KpoParams {
            detuning,
            kerr,
            pump_amplitude,
            kappa_ext,
            kappa_int,
            dephasing,
            resonance_freq: None,
            pump_freq: None,
            flux_bias: None,
            dfreq_dcurrent: None,
        };
        p.validate()?;
        Ok(p)
    }

    /// `κ_tot = κ_ext + κ_int + 2γ`.
    pub fn kappa_tot(&self) -> f64 {
        self.kappa_ext + self.kappa_int + 2.0 * self.dephasing
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("detuning", self.detuning),
            ("kerr", self.kerr),
            ("pump_amplitude", self.pump_amplitude),
            ("kappa_ext", self.kappa_ext),
            ("kappa_int", self.kappa_int),
            ("dephasing", self.dephasing),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::InvalidParams(format!("{name} is not finite")));
            }
        }
        if !(self.kerr < 0.0) {
            return Err(Error::InvalidParams(format!(
                "Kerr nonlinearity must be negative, got {}",
                self.kerr
            )));
        }
        for (name, v) in &fields[2..] {
            if *v < 0.0 {
                return Err(Error::InvalidParams(format!("{name} must be non-negative, got {v}")));
            }
        }
        if let (Some(wr), Some(wp)) = (self.resonance_freq, self.pump_freq) {
            let implied = wr - wp / 2.0;
            if (implied - self.detuning).abs() > 1.0 {
                return Err(Error::InvalidParams(format!(
                    "pump detuning {} inconsistent with resonance/pump frequencies (implies {implied})",
                    self.detuning
                )));
            }
        }
        Ok(())
    }

    /// Pump frequency, falling back to `2(ω_r − Δ)` when only `ω_r` is known.
    pub fn effective_pump_freq(&self) -> Option<f64> {
        self.pump_freq
            .or_else(|| self.resonance_freq.map(|wr| 2.0 * (wr - self.detuning)))
    }
}

/// Injected microwave drive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveSpec {
    /// `Ω_in` in rad/s.
    pub amplitude: f64,
    /// `Δ_in = ω_in − ω_p/2` in rad/s.
    pub detuning: f64,
    /// `θ_in` in radians, normalized to `[0, 2π)`.
    pub phase: f64,
}

impl DriveSpec {
    pub fn new(amplitude: f64, detuning: f64, phase: f64) -> Result<Self> {
        if !(amplitude >= 0.0) || !amplitude.is_finite() {
            return Err(Error::InvalidParams(format!(
                "drive amplitude must be finite and non-negative, got {amplitude}"
            )));
        }
        if !detuning.is_finite() || !phase.is_finite() {
            return Err(Error::InvalidParams("drive detuning and phase must be finite".into()));
        }
        Ok(DriveSpec {
            amplitude,
            detuning,
            phase: phase.rem_euclid(std::f64::consts::TAU),
        })
    }

    pub fn off() -> Self {
        DriveSpec {
            amplitude: 0.0,
            detuning: 0.0,
            phase: 0.0,
        }
    }
}

/// Two coupled KPOs.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoKpoParams {
    pub kpo1: KpoParams,
    pub kpo2: KpoParams,
    /// Two-body coupling `g` in rad/s.
    pub coupling: f64,
    /// `Δ_p = (ω_p2 − ω_p1)/2` in rad/s.
    pub pump_freq_halfdiff: f64,
    /// `θ_p = (θ_p2 − θ_p1)/2` in radians.
    pub pump_phase_halfdiff: f64,
}

impl TwoKpoParams {
    pub fn new(
        kpo1: KpoParams,
        kpo2: KpoParams,
        coupling: f64,
        pump_freq_halfdiff: f64,
        pump_phase_halfdiff: f64,
    ) -> Result<Self> {
        let t = TwoKpoParams {
            kpo1,
            kpo2,
            coupling,
            pump_freq_halfdiff,
            pump_phase_halfdiff,
        };
        t.validate()?;
        Ok(t)
    }

    /// Derives `Δ_p` from the member pump frequencies.
    pub fn from_pump_frequencies(
        kpo1: KpoParams,
        kpo2: KpoParams,
        coupling: f64,
        pump_phase_halfdiff: f64,
    ) -> Result<Self> {
        let (Some(w1), Some(w2)) = (kpo1.effective_pump_freq(), kpo2.effective_pump_freq()) else {
            return Err(Error::InvalidParams(
                "pump frequencies of both KPOs are needed to derive the pump half-difference".into(),
            ));
        };
        Self::new(kpo1, kpo2, coupling, (w2 - w1) / 2.0, pump_phase_halfdiff)
    }

    pub fn validate(&self) -> Result<()> {
        self.kpo1.validate()?;
        self.kpo2.validate()?;
        if !self.coupling.is_finite()
            || !self.pump_freq_halfdiff.is_finite()
            || !self.pump_phase_halfdiff.is_finite()
        {
            return Err(Error::InvalidParams("coupling parameters must be finite".into()));
        }
        if let (Some(w1), Some(w2)) = (self.kpo1.pump_freq, self.kpo2.pump_freq) {
            let implied = (w2 - w1) / 2.0;
            if (implied - self.pump_freq_halfdiff).abs() > 1.0 {
                return Err(Error::InvalidParams(format!(
                    "pump half-difference {} inconsistent with member pump frequencies (implies {implied})",
                    self.pump_freq_halfdiff
                )));
            }
        }
        Ok(())
    }
}

/// A Hamiltonian `H(t) = H_static + Σ_k [c_k(t) X_k + c_k(t)* X_k†]` with
/// harmonic coefficients `c_k(t) = A_k e^{−i(ω_k t + φ_k)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeDependentHamiltonian {
    static_part: OperatorMatrix,
    terms: Vec<HarmonicTerm>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicTerm {
    pub op: OperatorMatrix,
    pub amplitude: C64,
    pub freq: f64,
    pub phase: f64,
}

impl HarmonicTerm {
    #[inline]
    pub fn coefficient(&self, t: f64) -> C64 {
        self.amplitude * C64::from_polar(1.0, -(self.freq * t + self.phase))
    }
}

impl TimeDependentHamiltonian {
    pub fn constant(h: OperatorMatrix) -> Self {
        TimeDependentHamiltonian {
            static_part: h,
            terms: Vec::new(),
        }
    }

    pub fn with_term(mut self, term: HarmonicTerm) -> Result<Self> {
        crate::fock::check_dim(self.dim(), term.op.dim())?;
        if term.amplitude != ZERO {
            self.terms.push(term);
        }
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.static_part.dim()
    }

    pub fn static_part(&self) -> &OperatorMatrix {
        &self.static_part
    }

    pub fn terms(&self) -> &[HarmonicTerm] {
        &self.terms
    }

    pub fn is_static(&self) -> bool {
        self.terms.is_empty()
    }

    /// Dense `H(t)`.
    pub fn at(&self, t: f64) -> OperatorMatrix {
        let mut m = self.static_part.matrix().clone();
        for term in &self.terms {
            let c = term.coefficient(t);
            let x = term.op.matrix();
            let n = m.nrows();
            for j in 0..n {
                for i in 0..n {
                    let xij = x[(i, j)];
                    if xij != ZERO {
                        m[(i, j)] += c * xij;
                        m[(j, i)] += (c * xij).conj();
                    }
                }
            }
        }
        OperatorMatrix::from_matrix(m).expect("square by construction")
    }
}

/// `Δ a†a + (K/2) a†²a² + (p/2)(a†² + a²)`, written out entry by entry.
fn kpo_matrix(params: &KpoParams, n: usize) -> DMatrix<C64> {
    let mut m = DMatrix::zeros(n, n);
    for k in 0..n {
        let kf = k as f64;
        m[(k, k)] = C64::new(params.detuning * kf + 0.5 * params.kerr * kf * (kf - 1.0), 0.0);
        if k >= 2 {
            let v = C64::new(0.5 * params.pump_amplitude * (kf * (kf - 1.0)).sqrt(), 0.0);
            m[(k, k - 2)] = v;
            m[(k - 2, k)] = v;
        }
    }
    m
}

/// Single-KPO Hamiltonian in the pump frame.
pub fn build_single_kpo(params: &KpoParams, dim: FockDim) -> Result<OperatorMatrix> {
    params.validate()?;
    OperatorMatrix::from_matrix(kpo_matrix(params, dim.get()))
}

/// Single KPO plus the injected drive, as a function of time.
pub fn input_driven_hamiltonian(
    params: &KpoParams,
    drive: &DriveSpec,
    dim: FockDim,
) -> Result<TimeDependentHamiltonian> {
    let h0 = build_single_kpo(params, dim)?;
    TimeDependentHamiltonian::constant(h0).with_term(HarmonicTerm {
        op: creation(dim),
        amplitude: C64::new(drive.amplitude, 0.0),
        freq: drive.detuning,
        phase: drive.phase,
    })
}

/// Single KPO with an injected microwave drive, evaluated at time `t` (s).
pub fn build_input_driven(
    params: &KpoParams,
    drive: &DriveSpec,
    t: f64,
    dim: FockDim,
) -> Result<OperatorMatrix> {
    Ok(input_driven_hamiltonian(params, drive, dim)?.at(t))
}

/// Two coupled KPOs on the product space (KPO1 is the slow index).
pub fn two_kpo_hamiltonian(
    params: &TwoKpoParams,
    dim1: FockDim,
    dim2: FockDim,
    cap: usize,
) -> Result<TimeDependentHamiltonian> {
    params.validate()?;
    let total = dim1.get() * dim2.get();
    if total > cap {
        return Err(Error::DimensionCap { dim: total, cap });
    }
    let h1 = build_single_kpo(&params.kpo1, dim1)?;
    let h2 = build_single_kpo(&params.kpo2, dim2)?;
    let id1 = OperatorMatrix::identity(dim1.get());
    let id2 = OperatorMatrix::identity(dim2.get());
    let static_part = &h1.kron(&id2) + &id1.kron(&h2);
    let exchange = creation(dim1).kron(&annihilation(dim2));
    TimeDependentHamiltonian::constant(static_part).with_term(HarmonicTerm {
        op: exchange,
        amplitude: C64::new(params.coupling, 0.0),
        freq: params.pump_freq_halfdiff,
        phase: params.pump_phase_halfdiff,
    })
}

/// Two-KPO Hamiltonian at time `t` with the default dimension cap.
pub fn build_two_kpo(
    params: &TwoKpoParams,
    t: f64,
    dim1: FockDim,
    dim2: FockDim,
) -> Result<OperatorMatrix> {
    Ok(two_kpo_hamiltonian(params, dim1, dim2, DEFAULT_TWO_KPO_CAP)?.at(t))
}

/// Effective KPO1 Hamiltonian with KPO2 replaced by the coherent amplitude
/// `alpha2`. For real positive `alpha2` this is the input-driven Hamiltonian
/// with `Ω_in = g·α₂`, `Δ_in = Δ_p`, `θ_in = θ_p`.
pub fn effective_from_coupling(
    params: &TwoKpoParams,
    alpha2: C64,
    dim: FockDim,
) -> Result<TimeDependentHamiltonian> {
    params.validate()?;
    let h0 = build_single_kpo(&params.kpo1, dim)?;
    TimeDependentHamiltonian::constant(h0).with_term(HarmonicTerm {
        op: creation(dim),
        amplitude: alpha2 * params.coupling,
        freq: params.pump_freq_halfdiff,
        phase: params.pump_phase_halfdiff,
    })
}

pub fn build_effective_from_coupling(
    params: &TwoKpoParams,
    alpha2: C64,
    t: f64,
    dim: FockDim,
) -> Result<OperatorMatrix> {
    Ok(effective_from_coupling(params, alpha2, dim)?.at(t))
}

/// Drive amplitude `Ω_in = √(P_in κ_ext / ħω_in)` for an input power in dBm.
pub fn input_power_to_amplitude(power_dbm: f64, kappa_ext: f64, omega_in: f64) -> Result<f64> {
    if !(kappa_ext > 0.0) || !(omega_in > 0.0) {
        return Err(Error::InvalidParams(
            "external loss rate and input frequency must be positive".into(),
        ));
    }
    if power_dbm.is_nan() || power_dbm == f64::INFINITY {
        return Err(Error::InvalidParams(format!("invalid input power {power_dbm} dBm")));
    }
    let watts = dbm_to_watts(power_dbm);
    Ok((watts * kappa_ext / (HBAR * omega_in)).sqrt())
}

/// Inverse of [`input_power_to_amplitude`].
pub fn amplitude_to_input_power(amplitude: f64, kappa_ext: f64, omega_in: f64) -> Result<f64> {
    if !(kappa_ext > 0.0) || !(omega_in > 0.0) || !(amplitude >= 0.0) {
        return Err(Error::InvalidParams("invalid amplitude conversion inputs".into()));
    }
    let watts = amplitude * amplitude * HBAR * omega_in / kappa_ext;
    Ok(crate::units::watts_to_dbm(watts))
}

/// Pump amplitude `p = √(P_p / 2Z) · |dω_r/dI|`.
pub fn pump_power_to_amplitude(pump_power: f64, impedance: f64, dfreq_dcurrent: f64) -> Result<f64> {
    if !(impedance > 0.0) {
        return Err(Error::InvalidParams(format!("line impedance must be positive, got {impedance}")));
    }
    if !(pump_power >= 0.0) {
        return Err(Error::InvalidParams(format!("pump power must be non-negative, got {pump_power}")));
    }
    Ok((pump_power / (2.0 * impedance)).sqrt() * dfreq_dcurrent.abs())
}

/// Coherent-state amplitude `α = √((p + Δ)/|K|)`.
pub fn coherent_amplitude(params: &KpoParams) -> Result<f64> {
    if !(params.kerr < 0.0) {
        return Err(Error::InvalidParams("Kerr nonlinearity must be negative".into()));
    }
    let num = params.pump_amplitude + params.detuning;
    if num < 0.0 {
        return Err(Error::InvalidParams(format!("p + Δ = {num} is negative")));
    }
    Ok((num / params.kerr.abs()).sqrt())
}

/// Internal loss rate from the total budget `κ_tot = κ_ext + κ_int + 2γ`.
pub fn kappa_int_from_budget(kappa_tot: f64, kappa_ext: f64, gamma: f64) -> Result<f64> {
    let k = kappa_tot - kappa_ext - 2.0 * gamma;
    // absorb rounding when the budget is exactly saturated
    let tol = 1e-12 * kappa_tot.abs().max(1.0);
    if k < -tol || !k.is_finite() {
        return Err(Error::InvalidParams(format!(
            "loss budget is negative: κ_tot − κ_ext − 2γ = {k}"
        )));
    }
    Ok(k.max(0.0))
}

/// Operating points from the reference device.
pub mod presets {
    use super::*;
    use crate::units::{ghz, mhz};

    /// Dephasing rate that reproduces the measured 9.4 µs baseline.
    pub const BASELINE_DEPHASING_MHZ: f64 = 9.1e-3;

    fn kpo(
        resonance_ghz: f64,
        kappa_tot_mhz: f64,
        kappa_ext_mhz: f64,
        kerr_mhz: f64,
        pump_mhz: f64,
        flux_bias: f64,
    ) -> KpoParams {
        let gamma = mhz(BASELINE_DEPHASING_MHZ);
        let kappa_int = kappa_int_from_budget(mhz(kappa_tot_mhz), mhz(kappa_ext_mhz), gamma)
            .expect("preset loss budget");
        let wr = ghz(resonance_ghz);
        KpoParams {
            detuning: 0.0,
            kerr: mhz(kerr_mhz),
            pump_amplitude: mhz(pump_mhz),
            kappa_ext: mhz(kappa_ext_mhz),
            kappa_int,
            dephasing: gamma,
            resonance_freq: Some(wr),
            pump_freq: Some(2.0 * wr),
            flux_bias: Some(flux_bias),
            dfreq_dcurrent: None,
        }
    }

    /// Single KPO used for the drive-injection runs: `ω_r/2π = 9.90 GHz`,
    /// `κ_tot/2π = 1.9 MHz`, `κ_ext/2π = 0.72 MHz`, `K/2π = −14 MHz`,
    /// `Δ = 0`, `p/2π = 110 MHz`, `γ/2π = 9.1 kHz`.
    pub fn single() -> KpoParams {
        kpo(9.90, 1.9, 0.72, -14.0, 110.0, 0.37)
    }

    /// The coupled pair (`p/2π = 140 MHz` each, `g/2π = 3.0 MHz`), with
    /// `Δ_p` derived from the two pump frequencies.
    pub fn pair() -> TwoKpoParams {
        let k1 = kpo(9.90, 1.9, 0.72, -14.0, 140.0, 0.37);
        let k2 = kpo(9.93, 2.1, 0.64, -15.0, 140.0, 0.36);
        TwoKpoParams::from_pump_frequencies(k1, k2, mhz(3.0), 0.0).expect("preset pair")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{number, parity_operator};
    use crate::units::{ghz, mhz, to_mhz};

    fn dim(n: usize) -> FockDim {
        FockDim::new(n).unwrap()
    }

    fn operator_route(params: &KpoParams, d: FockDim) -> OperatorMatrix {
        let a = annihilation(d);
        let ad = creation(d);
        let a2 = &a * &a;
        let ad2 = &ad * &ad;
        let n = number(d);
        let kerr = &ad2 * &a2;
        let pump = &ad2 + &a2;
        &(&n.scale_re(params.detuning) + &kerr.scale_re(params.kerr / 2.0))
            + &pump.scale_re(params.pump_amplitude / 2.0)
    }

    fn max_abs_diff(a: &OperatorMatrix, b: &OperatorMatrix) -> f64 {
        (a.matrix() - b.matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn zero_hamiltonian() {
        let mut p = presets::single();
        p.detuning = 0.0;
        p.pump_amplitude = 0.0;
        p.kerr = 0.0;
        // K = 0 is rejected by the builder; the formula itself gives zero.
        assert!(build_single_kpo(&p, dim(5)).is_err());
        let m = kpo_matrix(&p, 5);
        assert!(m.iter().all(|z| *z == ZERO));
    }

    #[test]
    fn entrywise_builder_matches_operator_products() {
        let mut p = presets::single();
        p.detuning = mhz(3.5);
        p.pump_freq = None;
        let d = dim(25);
        let h = build_single_kpo(&p, d).unwrap();
        let h_ops = operator_route(&p, d);
        let scale = h.frobenius_norm();
        // the operator route loses the top level of a†²a²; compare the interior
        for i in 0..23 {
            for j in 0..23 {
                assert!((h.get(i, j) - h_ops.get(i, j)).norm() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn reference_hamiltonian_is_hermitian_and_parity_symmetric() {
        let p = presets::single();
        let d = dim(40);
        let h = build_single_kpo(&p, d).unwrap();
        assert!(h.hermiticity_deviation() < 1e-12);
        let c = h.commutator(&parity_operator(d));
        assert!(c.frobenius_norm() < 1e-10 * h.frobenius_norm());
    }

    #[test]
    fn bare_kerr_spectrum_on_diagonal() {
        let mut p = presets::single();
        p.pump_amplitude = 0.0;
        let h = build_single_kpo(&p, dim(12)).unwrap();
        for n in 0..12 {
            let nf = n as f64;
            let expect = p.kerr / 2.0 * nf * (nf - 1.0);
            assert!((h.get(n, n).re - expect).abs() < 1e-3);
        }
    }

    #[test]
    fn drive_off_equals_bare_kpo() {
        let p = presets::single();
        let d = dim(20);
        let h0 = build_single_kpo(&p, d).unwrap();
        let h = build_input_driven(&p, &DriveSpec::off(), 3.3e-7, d).unwrap();
        assert_eq!(h, h0);
    }

    #[test]
    fn resonant_zero_phase_drive_is_static_quadrature() {
        let p = presets::single();
        let d = dim(20);
        let om = mhz(2.0);
        let drive = DriveSpec::new(om, 0.0, 0.0).unwrap();
        let expect = &build_single_kpo(&p, d).unwrap()
            + &(&creation(d) + &annihilation(d)).scale_re(om);
        for t in [0.0, 1e-7, 7.7e-6] {
            let h = build_input_driven(&p, &drive, t, d).unwrap();
            assert!(max_abs_diff(&h, &expect) < 1e-6);
        }
    }

    #[test]
    fn drive_term_rotates_with_detuning() {
        let p = presets::single();
        let d = dim(16);
        let drive = DriveSpec::new(mhz(1.1), mhz(-204.0), 0.4).unwrap();
        let h0 = build_single_kpo(&p, d).unwrap();
        let term = |t: f64| &build_input_driven(&p, &drive, t, d).unwrap() - &h0;
        let v0 = term(0.0);
        let v1 = term(1e-6);
        let phase = C64::from_polar(1.0, -drive.detuning * 1e-6);
        // creation part sits below the diagonal
        for k in 1..16 {
            let lower = v0.get(k, k - 1) * phase;
            let upper = v0.get(k - 1, k) * phase.conj();
            assert!((v1.get(k, k - 1) - lower).norm() < 1e-10 * lower.norm());
            assert!((v1.get(k - 1, k) - upper).norm() < 1e-10 * upper.norm());
        }
        for t in [0.0, 2.5e-7, 1e-6] {
            assert!(build_input_driven(&p, &drive, t, d).unwrap().hermiticity_deviation() < 1e-12);
        }
    }

    #[test]
    fn decoupled_pair_is_kronecker_sum() {
        let mut pair = presets::pair();
        pair.coupling = 0.0;
        let (d1, d2) = (dim(6), dim(5));
        let h = build_two_kpo(&pair, 1e-7, d1, d2).unwrap();
        let h1 = build_single_kpo(&pair.kpo1, d1).unwrap();
        let h2 = build_single_kpo(&pair.kpo2, d2).unwrap();
        let expect = &h1.kron(&OperatorMatrix::identity(5)) + &OperatorMatrix::identity(6).kron(&h2);
        assert_eq!(h, expect);
    }

    #[test]
    fn coupling_block_at_zero_time() {
        let mut pair = presets::pair();
        pair.pump_freq_halfdiff = 0.0;
        pair.kpo1.pump_freq = None;
        pair.kpo2.pump_freq = None;
        let (d1, d2) = (dim(5), dim(5));
        let h = build_two_kpo(&pair, 0.0, d1, d2).unwrap();
        let mut decoupled = pair.clone();
        decoupled.coupling = 0.0;
        let h_dec = build_two_kpo(&decoupled, 0.0, d1, d2).unwrap();
        let hop = creation(d1).kron(&annihilation(d2));
        let expect = (&hop + &hop.dagger()).scale_re(mhz(3.0));
        assert!(max_abs_diff(&(&h - &h_dec), &expect) < 1e-6);
        assert!(h.hermiticity_deviation() < 1e-12);
    }

    #[test]
    fn exchange_conserves_total_photon_number() {
        let (d1, d2) = (dim(6), dim(7));
        let hop = creation(d1).kron(&annihilation(d2));
        let g_term = &hop + &hop.dagger();
        let n_tot = &number(d1).kron(&OperatorMatrix::identity(7))
            + &OperatorMatrix::identity(6).kron(&number(d2));
        assert!(g_term.commutator(&n_tot).frobenius_norm() < 1e-10);
    }

    #[test]
    fn two_kpo_dimension_cap() {
        let pair = presets::pair();
        let err = build_two_kpo(&pair, 0.0, dim(80), dim(80)).unwrap_err();
        assert!(matches!(err, Error::DimensionCap { dim: 6400, cap: 4096 }));
    }

    #[test]
    fn effective_hamiltonian_matches_input_drive() {
        let pair = presets::pair();
        let d = dim(30);
        let alpha2 = 2.0;
        let drive = DriveSpec::new(
            pair.coupling * alpha2,
            pair.pump_freq_halfdiff,
            pair.pump_phase_halfdiff,
        )
        .unwrap();
        assert!((to_mhz(drive.amplitude) - 6.0).abs() < 1e-12);
        for t in [0.0, 1.3e-8, 4.2e-6] {
            let eff = build_effective_from_coupling(&pair, C64::new(alpha2, 0.0), t, d).unwrap();
            let inp = build_input_driven(&pair.kpo1, &drive, t, d).unwrap();
            let diff = max_abs_diff(&eff, &inp);
            assert!(diff <= 1e-14 * eff.frobenius_norm(), "diff {diff}");
        }
    }

    #[test]
    fn effective_hamiltonian_without_partner_amplitude() {
        let pair = presets::pair();
        let d = dim(12);
        let eff = build_effective_from_coupling(&pair, ZERO, 5e-7, d).unwrap();
        assert_eq!(eff, build_single_kpo(&pair.kpo1, d).unwrap());
    }

    #[test]
    fn partner_amplitude_sets_drive_strength() {
        let pair = presets::pair();
        assert!((to_mhz(pair.coupling * 3.0) - 9.0).abs() < 1e-12);
    }

    #[test]
    fn input_power_reference_point() {
        let om = input_power_to_amplitude(-132.0, mhz(0.72), ghz(9.90)).unwrap();
        assert!((to_mhz(om) - 1.1).abs() < 0.06, "{}", to_mhz(om));
        assert_eq!(input_power_to_amplitude(f64::NEG_INFINITY, mhz(0.72), ghz(9.9)).unwrap(), 0.0);
        let om4 = input_power_to_amplitude(-132.0 + 10.0 * 4f64.log10(), mhz(0.72), ghz(9.90)).unwrap();
        assert!((om4 / om - 2.0).abs() < 1e-12);
        assert!(input_power_to_amplitude(-132.0, 0.0, ghz(9.9)).is_err());
    }

    #[test]
    fn amplitude_power_inverse() {
        let om = input_power_to_amplitude(-128.5, mhz(0.72), ghz(9.90)).unwrap();
        let p = amplitude_to_input_power(om, mhz(0.72), ghz(9.90)).unwrap();
        assert!((p + 128.5).abs() < 1e-10);
    }

    #[test]
    fn pump_power_conversion() {
        let z = 50.0;
        let slope = 3.0e9;
        assert_eq!(pump_power_to_amplitude(0.0, z, slope).unwrap(), 0.0);
        assert!((pump_power_to_amplitude(2.0 * z, z, slope).unwrap() - slope).abs() < 1e-6);
        let p1 = pump_power_to_amplitude(1e-9, z, slope).unwrap();
        let p4 = pump_power_to_amplitude(4e-9, z, slope).unwrap();
        assert!((p4 / p1 - 2.0).abs() < 1e-12);
        assert!(pump_power_to_amplitude(1e-9, 0.0, slope).is_err());
    }

    #[test]
    fn coherent_amplitudes_of_reference_points() {
        let single = presets::single();
        assert!((coherent_amplitude(&single).unwrap() - 2.80).abs() < 0.005);
        let pair = presets::pair();
        let a1 = coherent_amplitude(&pair.kpo1).unwrap();
        let a2 = coherent_amplitude(&pair.kpo2).unwrap();
        assert!((a1 - 3.16).abs() < 0.005);
        assert!((a2 - 3.06).abs() < 0.005);
        let mut idle = single.clone();
        idle.pump_amplitude = 0.0;
        assert_eq!(coherent_amplitude(&idle).unwrap(), 0.0);
        idle.detuning = mhz(-5.0);
        assert!(coherent_amplitude(&idle).is_err());
    }

    #[test]
    fn loss_budget() {
        let k = kappa_int_from_budget(mhz(1.9), mhz(0.72), mhz(9.1e-3)).unwrap();
        assert!((to_mhz(k) - 1.1618).abs() < 1e-9);
        assert_eq!(kappa_int_from_budget(mhz(1.9), mhz(1.9), 0.0).unwrap(), 0.0);
        assert!(kappa_int_from_budget(mhz(1.0), mhz(1.9), 0.0).is_err());
        assert!((presets::single().kappa_tot() - mhz(1.9)).abs() < 1e-6);
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = presets::single();
        p.kerr = mhz(1.0);
        assert!(matches!(build_single_kpo(&p, dim(4)), Err(Error::InvalidParams(_))));
        let mut p = presets::single();
        p.detuning = mhz(1.0);
        assert!(p.validate().is_err(), "detuning inconsistent with ω_r, ω_p");
        assert!(DriveSpec::new(-1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn pair_pump_halfdiff_from_frequencies() {
        let pair = presets::pair();
        assert!((to_mhz(pair.pump_freq_halfdiff) - 30.0).abs() < 1e-6);
    }
}
