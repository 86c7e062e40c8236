//! Run configuration: a sectioned key = value file (TOML syntax).
//!
//! Row names follow the parameter tables of the reference device. Rates and
//! frequencies are `ω/2π` in MHz, except `resonance_frequency` in GHz.

use std::path::Path;

use kpo::model::{kappa_int_from_budget, KpoParams, TwoKpoParams};
use kpo::units::{ghz, mhz};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KpoSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flux_bias: Option<f64>,
    /// GHz.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resonance_frequency: Option<f64>,
    pub total_loss_rate: f64,
    pub external_loss_rate: f64,
    pub kerr_nonlinearity: f64,
    #[serde(default)]
    pub pump_detuning: f64,
    pub pump_amplitude: f64,
    /// Checked against `√((p+Δ)/|K|)`; informational only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coherent_state_amplitude: Option<f64>,
    #[serde(default)]
    pub dephasing_rate: f64,
}

impl KpoSection {
    pub fn to_params(&self) -> Result<KpoParams, CliError> {
        let gamma = mhz(self.dephasing_rate);
        let kappa_ext = mhz(self.external_loss_rate);
        let kappa_int = kappa_int_from_budget(mhz(self.total_loss_rate), kappa_ext, gamma)?;
        let resonance = self.resonance_frequency.map(ghz);
        let p = KpoParams {
            detuning: mhz(self.pump_detuning),
            kerr: mhz(self.kerr_nonlinearity),
            pump_amplitude: mhz(self.pump_amplitude),
            kappa_ext,
            kappa_int,
            dephasing: gamma,
            resonance_freq: resonance,
            pump_freq: resonance.map(|wr| 2.0 * (wr - mhz(self.pump_detuning))),
            flux_bias: self.flux_bias,
            dfreq_dcurrent: None,
        };
        p.validate()?;
        Ok(p)
    }

    /// Warning text when the tabulated α disagrees with the computed one by more than 5%.
    pub fn alpha_warning(&self, name: &str) -> Option<String> {
        let stated = self.coherent_state_amplitude?;
        let num = self.pump_amplitude + self.pump_detuning;
        let alpha = (num / self.kerr_nonlinearity.abs()).sqrt();
        ((stated - alpha).abs() > 0.05 * alpha).then(|| {
            format!("warning: [{name}] coherent_state_amplitude = {stated} but sqrt((p+Δ)/|K|) = {alpha:.3}")
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSection {
    /// `g/2π` in MHz.
    pub two_body_coupling: f64,
    /// `Δ_p/2π` in MHz; derived from the two pump frequencies when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pump_frequency_halfdiff: Option<f64>,
    /// `θ_p` in radians.
    #[serde(default)]
    pub pump_phase_halfdiff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveSection {
    /// `Δ_in/2π` in MHz.
    pub detuning: f64,
    /// Input power in dBm; exclusive with `amplitude`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_dbm: Option<f64>,
    /// `Ω_in/2π` in MHz; exclusive with `power_dbm`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    /// `θ_in` in radians.
    #[serde(default)]
    pub phase: f64,
    /// Carrier used for the power conversion, GHz; defaults to the resonance frequency.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_frequency: Option<f64>,
    /// Added to `power_dbm` before conversion, e.g. `-3` for a 3 dB insertion-loss correction.
    #[serde(default)]
    pub power_correction_db: f64,
}

fn default_dim() -> usize {
    40
}
fn default_rtol() -> f64 {
    1e-8
}
fn default_atol() -> f64 {
    1e-10
}
fn default_t_end() -> f64 {
    20.0
}
fn default_stride() -> f64 {
    10.0
}
fn default_bin() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
    /// µs.
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    /// ns.
    #[serde(default = "default_stride")]
    pub output_stride: f64,
    /// µs.
    #[serde(default = "default_bin")]
    pub bin_width: f64,
    /// Linear pump/drive ramp in µs; off when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ramp: Option<f64>,
    /// Initial coherent amplitude; `√((p+Δ)/|K|)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_alpha: Option<f64>,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            dim: default_dim(),
            rtol: default_rtol(),
            atol: default_atol(),
            t_end: default_t_end(),
            output_stride: default_stride(),
            bin_width: default_bin(),
            ramp: None,
            initial_alpha: None,
        }
    }
}

fn default_window() -> [f64; 2] {
    [-1.0, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// `Δ_in/2π` values in MHz; exclusive with `detuning_range`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detunings: Option<Vec<f64>>,
    /// `[start, stop, step]` in MHz, stop included when on the grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detuning_range: Option<[f64; 3]>,
    /// dBm; exclusive with `amplitudes`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub powers_dbm: Option<Vec<f64>>,
    /// `Ω_in/2π` in MHz.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitudes: Option<Vec<f64>>,
    /// `θ_in` in radians; ignored with `theta_average`.
    #[serde(default)]
    pub phase: f64,
    /// Average τ over θ_in ∈ {0, π/2, π, 3π/2}.
    #[serde(default)]
    pub theta_average: bool,
    /// MHz; annotated in the output only.
    #[serde(default = "default_window")]
    pub exclusion_window: [f64; 2],
    /// GHz; defaults to the resonance frequency.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_frequency: Option<f64>,
    /// Added to every entry of `powers_dbm` before conversion.
    #[serde(default)]
    pub power_correction_db: f64,
}

impl SweepSection {
    pub fn detuning_axis(&self) -> Result<Vec<f64>, CliError> {
        match (&self.detunings, &self.detuning_range) {
            (Some(v), None) => Ok(v.clone()),
            (None, Some([start, stop, step])) => {
                if !(*step != 0.0) || !step.is_finite() || (stop - start) / step < 0.0 {
                    return Err(CliError::Config("detuning_range step must point from start to stop".into()));
                }
                let n = ((stop - start) / step + 1e-9).floor() as usize;
                Ok((0..=n).map(|k| start + k as f64 * step).collect())
            }
            _ => Err(CliError::Config(
                "[sweep] needs exactly one of detunings or detuning_range".into(),
            )),
        }
    }
}

fn default_ifs() -> Vec<f64> {
    vec![1.0, 31.0]
}
fn default_taus() -> Vec<f64> {
    vec![5.0, 5.0]
}
fn default_noise() -> f64 {
    kpo::readout::DEFAULT_NOISE_SIGMA
}
fn default_trials() -> usize {
    10_000
}
fn default_sample_rate() -> f64 {
    250.0
}
fn default_bin_duration() -> f64 {
    2.0
}
fn default_histogram_bins() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutSection {
    /// IF per channel in MHz.
    #[serde(default = "default_ifs")]
    pub if_frequencies: Vec<f64>,
    /// Emulated bit-flip time per channel in µs.
    #[serde(default = "default_taus")]
    pub tau_flip: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitudes: Option<Vec<f64>>,
    /// Per-sample noise standard deviation.
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// MS/s.
    #[serde(default = "default_sample_rate")]
    pub sample_rate: f64,
    /// µs.
    #[serde(default = "default_bin_duration")]
    pub bin_duration: f64,
    /// µs.
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_histogram_bins")]
    pub histogram_bins: usize,
}

impl Default for ReadoutSection {
    fn default() -> Self {
        ReadoutSection {
            if_frequencies: default_ifs(),
            tau_flip: default_taus(),
            labels: None,
            amplitudes: None,
            noise_sigma: default_noise(),
            trials: default_trials(),
            seed: 0,
            sample_rate: default_sample_rate(),
            bin_duration: default_bin_duration(),
            t_end: default_t_end(),
            histogram_bins: default_histogram_bins(),
        }
    }
}

fn default_threshold() -> f64 {
    1.0
}
fn default_ratio() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollisionSection {
    /// MHz.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// MHz; `2p` per KPO when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_cutoff: Option<f64>,
    #[serde(default)]
    pub include_doublets: bool,
    #[serde(default = "default_ratio")]
    pub doublet_ratio: f64,
}

impl Default for CollisionSection {
    fn default() -> Self {
        CollisionSection {
            threshold: default_threshold(),
            energy_cutoff: None,
            include_doublets: false,
            doublet_ratio: default_ratio(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kpo: Option<KpoSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kpo1: Option<KpoSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kpo2: Option<KpoSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<CouplingSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drive: Option<DriveSection>,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub readout: ReadoutSection,
    #[serde(default)]
    pub collision: CollisionSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn dump(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The single-KPO section: `[kpo]`, else `[kpo1]`.
    pub fn single(&self) -> Result<&KpoSection, CliError> {
        self.kpo
            .as_ref()
            .or(self.kpo1.as_ref())
            .ok_or_else(|| CliError::Config("missing [kpo] section".into()))
    }

    pub fn pair(&self) -> Result<TwoKpoParams, CliError> {
        let (Some(k1), Some(k2)) = (&self.kpo1, &self.kpo2) else {
            return Err(CliError::Config("two-KPO commands need [kpo1] and [kpo2]".into()));
        };
        let c = self
            .coupling
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [coupling] section".into()))?;
        let (p1, p2) = (k1.to_params()?, k2.to_params()?);
        let g = mhz(c.two_body_coupling);
        let two = match c.pump_frequency_halfdiff {
            Some(dp) => {
                let (mut p1, mut p2) = (p1, p2);
                // an explicit Δ_p overrides the tabulated pump frequencies
                p1.pump_freq = None;
                p2.pump_freq = None;
                TwoKpoParams::new(p1, p2, g, mhz(dp), c.pump_phase_halfdiff)?
            }
            None => TwoKpoParams::from_pump_frequencies(p1, p2, g, c.pump_phase_halfdiff)?,
        };
        Ok(two)
    }

    pub fn warnings(&self) -> Vec<String> {
        [("kpo", &self.kpo), ("kpo1", &self.kpo1), ("kpo2", &self.kpo2)]
            .iter()
            .filter_map(|(n, s)| s.as_ref().and_then(|s| s.alpha_warning(n)))
            .collect()
    }
}
