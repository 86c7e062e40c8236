//! Lindblad evolution of a single driven KPO.
//!
//! ```text
//! dρ/dt = −i[H(t), ρ] + (κ_tot/2)(2aρa† − ρa†a − a†aρ) + γ(2nρn − ρn² − n²ρ)
//! ```
//!
//! [`lindblad_rhs`] evaluates this with dense matrix products and serves as
//! the reference. [`evolve`] uses a banded kernel specialised to the KPO
//! Hamiltonian (diagonal, pump at offset ±2, drive at offset ±1) and
//! integrates only the upper triangle of `ρ`, mirroring the rest.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fock::{
    annihilation, check_dim, coherent_state, creation, number, DensityState, FockDim,
    OperatorMatrix, StateVector, C64, ZERO,
};
use crate::model::{coherent_amplitude, DriveSpec, KpoParams};
use crate::ode::{integrate, OdeSystem, StepStats, Tolerances};

/// Population allowed on the two highest Fock levels before a run is
/// declared truncation-limited.
pub const TRUNCATION_POPULATION_LIMIT: f64 = 1e-4;

/// Dense right-hand side of the master equation.
pub fn lindblad_rhs(
    rho: &DensityState,
    h: &OperatorMatrix,
    kappa_tot: f64,
    gamma: f64,
) -> Result<DMatrix<C64>> {
    check_dim(rho.dim(), h.dim())?;
    let dim = FockDim::new(rho.dim())?;
    let a = annihilation(dim);
    let ad = creation(dim);
    let n = number(dim);
    let r = rho.matrix();
    let (a, ad, n, hm) = (a.matrix(), ad.matrix(), n.matrix(), h.matrix());
    let adag_a = ad * a;
    let n2 = n * n;
    let minus_i = C64::new(0.0, -1.0);
    let comm = hm * r - r * hm;
    let loss = (a * r * ad) * C64::new(2.0, 0.0) - r * &adag_a - &adag_a * r;
    let deph = (n * r * n) * C64::new(2.0, 0.0) - r * &n2 - &n2 * r;
    Ok(comm * minus_i + loss * C64::new(kappa_tot / 2.0, 0.0) + deph * C64::new(gamma, 0.0))
}

/// Named observable `O`; its time series is `Tr[ρ(t) O]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    pub name: String,
    pub op: OperatorMatrix,
}

impl Observable {
    pub fn new(name: impl Into<String>, op: OperatorMatrix) -> Self {
        Observable {
            name: name.into(),
            op,
        }
    }

    /// `(a + a†)/2`, the bit-flip observable.
    pub fn quadrature(dim: FockDim) -> Self {
        let x = (&annihilation(dim) + &creation(dim)).scale_re(0.5);
        Observable::new("x", x)
    }

    pub fn annihilation(dim: FockDim) -> Self {
        Observable::new("a", annihilation(dim))
    }

    pub fn photon_number(dim: FockDim) -> Self {
        Observable::new("n", number(dim))
    }
}

/// Uniformly sampled trace of one observable.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub values: Vec<C64>,
    pub observable_name: String,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>, values: Vec<C64>, name: impl Into<String>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: times.len(),
                got: values.len(),
            });
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParams("time samples must be strictly increasing".into()));
        }
        Ok(TimeSeries {
            times,
            values,
            observable_name: name.into(),
        })
    }

    pub fn from_real(times: Vec<f64>, values: &[f64], name: impl Into<String>) -> Result<Self> {
        Self::new(times, values.iter().map(|&v| C64::new(v, 0.0)).collect(), name)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn real_values(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.re).collect()
    }

    /// Sample spacing; zero for fewer than two samples.
    pub fn stride(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            (self.times[self.times.len() - 1] - self.times[0]) / (self.times.len() - 1) as f64
        }
    }

    pub const CSV_HEADER: &'static str = "time_us,value_re,value_im";

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.len() * 40);
        out.push_str(Self::CSV_HEADER);
        out.push('\n');
        for (t, v) in self.times.iter().zip(&self.values) {
            out.push_str(&format!("{:.6},{:.12e},{:.12e}\n", t * 1e6, v.re, v.im));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    /// Coherent state `|α⟩`.
    Coherent(C64),
    Pure(StateVector),
    Mixed(DensityState),
}

impl InitialState {
    fn density(&self, dim: FockDim) -> Result<DensityState> {
        match self {
            InitialState::Coherent(alpha) => Ok(DensityState::from_pure(&coherent_state(dim, *alpha)?)),
            InitialState::Pure(psi) => {
                check_dim(dim.get(), psi.dim())?;
                Ok(DensityState::from_pure(psi))
            }
            InitialState::Mixed(rho) => {
                check_dim(dim.get(), rho.dim())?;
                Ok(rho.clone())
            }
        }
    }
}

/// Everything `evolve` needs for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionSpec {
    pub params: KpoParams,
    pub drive: Option<DriveSpec>,
    pub initial: InitialState,
    pub dim: FockDim,
    /// Horizon in seconds.
    pub t_end: f64,
    /// Output spacing in seconds.
    pub output_stride: f64,
    pub tolerances: Tolerances,
    /// Linear ramp of pump and drive over this duration (s). Off by default.
    pub ramp: Option<f64>,
}

impl EvolutionSpec {
    /// Plateau-only run from `|α⟩` with `α = √((p+Δ)/|K|)`: 20 µs horizon,
    /// 10 ns output stride, `rtol = 1e-8`, `atol = 1e-10`.
    pub fn new(params: KpoParams, dim: FockDim) -> Result<Self> {
        let alpha = coherent_amplitude(&params)?;
        Ok(EvolutionSpec {
            params,
            drive: None,
            initial: InitialState::Coherent(C64::new(alpha, 0.0)),
            dim,
            t_end: 20e-6,
            output_stride: 10e-9,
            tolerances: Tolerances::default(),
            ramp: None,
        })
    }

    pub fn with_drive(mut self, drive: DriveSpec) -> Self {
        self.drive = Some(drive);
        self
    }

    pub fn output_times(&self) -> Result<Vec<f64>> {
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(Error::InvalidParams(format!("t_end must be positive, got {}", self.t_end)));
        }
        if !(self.output_stride > 0.0) {
            return Err(Error::InvalidParams(format!(
                "output stride must be positive, got {}",
                self.output_stride
            )));
        }
        let ratio = self.t_end / self.output_stride;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-6 * ratio.max(1.0) || steps < 1.0 {
            return Err(Error::InvalidParams(format!(
                "output stride {} does not divide t_end {}",
                self.output_stride, self.t_end
            )));
        }
        let steps = steps as usize;
        Ok((0..=steps).map(|k| k as f64 * self.output_stride).collect())
    }

    fn validate(&self) -> Result<()> {
        let p = &self.params;
        let fields = [p.detuning, p.kerr, p.pump_amplitude, p.kappa_ext, p.kappa_int, p.dephasing];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("evolution parameters must be finite".into()));
        }
        if p.kappa_ext < 0.0 || p.kappa_int < 0.0 || p.dephasing < 0.0 || p.pump_amplitude < 0.0 {
            return Err(Error::InvalidParams("rates and pump amplitude must be non-negative".into()));
        }
        if let Some(r) = self.ramp {
            if !(r > 0.0) {
                return Err(Error::InvalidParams("ramp duration must be positive".into()));
            }
        }
        if !(self.tolerances.rtol > 0.0) || !(self.tolerances.atol > 0.0) {
            return Err(Error::InvalidParams("tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Integrator bookkeeping for one run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    pub steps: StepStats,
    /// Largest `|Tr ρ − 1|` seen at an output time.
    pub max_trace_error: f64,
    /// Largest absolute Frobenius deviation `‖ρ − ρ†‖` at an output time.
    pub max_hermiticity_error: f64,
    /// Largest population on the top two Fock levels.
    pub max_edge_population: f64,
    /// Smallest eigenvalue of the final state.
    pub final_min_eigenvalue: f64,
}

#[derive(Debug, Clone)]
pub struct Evolution {
    pub series: Vec<TimeSeries>,
    pub final_state: DensityState,
    pub diagnostics: Diagnostics,
}

/// Banded Liouvillian of a driven KPO acting on a zero-padded density
/// matrix. Row `i` of `ρ` lives at padded row `i + 2`.
pub(crate) struct KpoLiouvillian {
    n: usize,
    /// Static part of the elementwise coefficient: `−i(d_i − d_j) − κ(i+j)/2 − γ(i−j)²`.
    coef: Vec<C64>,
    /// `P(k) = (p/2)√(k(k−1))` for `k < n`, zero elsewhere; length `n + 2`.
    pump: Vec<f64>,
    /// `√k` for `k < n`, zero at `k = n`; length `n + 1`.
    sqrt: Vec<f64>,
    /// `κ √((i+1)(j+1))` factors: `κ^{1/2} √(i+1)`; length `n`.
    loss: Vec<f64>,
    drive: Option<DriveSpec>,
    ramp: Option<f64>,
}

impl KpoLiouvillian {
    pub(crate) fn new(params: &KpoParams, drive: Option<DriveSpec>, ramp: Option<f64>, n: usize) -> Self {
        let kappa = params.kappa_tot();
        let gamma = params.dephasing;
        let diag: Vec<f64> = (0..n)
            .map(|k| {
                let kf = k as f64;
                params.detuning * kf + 0.5 * params.kerr * kf * (kf - 1.0)
            })
            .collect();
        let mut coef = vec![ZERO; n * n];
        for i in 0..n {
            for j in 0..n {
                let d = (i as f64) - (j as f64);
                coef[i * n + j] = C64::new(
                    -0.5 * kappa * (i + j) as f64 - gamma * d * d,
                    -(diag[i] - diag[j]),
                );
            }
        }
        let mut pump = vec![0.0; n + 2];
        for (k, p) in pump.iter_mut().enumerate().take(n).skip(2) {
            let kf = k as f64;
            *p = 0.5 * params.pump_amplitude * (kf * (kf - 1.0)).sqrt();
        }
        let mut sqrt = vec![0.0; n + 1];
        for (k, s) in sqrt.iter_mut().enumerate().take(n) {
            *s = (k as f64).sqrt();
        }
        let loss = (0..n).map(|k| (kappa * (k + 1) as f64).sqrt()).collect();
        let drive = drive.filter(|d| d.amplitude != 0.0);
        KpoLiouvillian {
            n,
            coef,
            pump,
            sqrt,
            loss,
            drive,
            ramp,
        }
    }

    #[inline]
    pub(crate) fn padded_len(n: usize) -> usize {
        (n + 4) * (n + 4)
    }

    #[inline]
    fn envelope(&self, t: f64) -> f64 {
        match self.ramp {
            Some(r) if t < r => (t / r).max(0.0),
            _ => 1.0,
        }
    }

    pub(crate) fn pack(&self, rho: &DMatrix<C64>) -> Vec<C64> {
        let n = self.n;
        let m = n + 4;
        let mut y = vec![ZERO; Self::padded_len(n)];
        for i in 0..n {
            for j in 0..n {
                y[(i + 2) * m + j + 2] = rho[(i, j)];
            }
        }
        y
    }

    pub(crate) fn unpack(&self, y: &[C64]) -> DMatrix<C64> {
        let n = self.n;
        let m = n + 4;
        DMatrix::from_fn(n, n, |i, j| y[(i + 2) * m + j + 2])
    }
}

impl OdeSystem for KpoLiouvillian {
    fn rhs(&self, t: f64, y: &[C64], dy: &mut [C64]) {
        let n = self.n;
        let m = n + 4;
        let s = self.envelope(t);
        // a† carries c = Ω e^{−i(Δt+θ)}, a carries c*
        let c = match self.drive {
            Some(d) => C64::from_polar(s * d.amplitude, -(d.detuning * t + d.phase)),
            None => ZERO,
        };
        let cc = c.conj();
        let pump = &self.pump;
        let sq = &self.sqrt;
        for i in 0..n {
            let len = n - i;
            let p_lo = s * pump[i];
            let p_hi = s * pump[i + 2];
            let c_lo = c * sq[i];
            let c_hi = cc * sq[i + 1];
            let loss_i = self.loss[i];
            // every slice starts at column j = i of its row
            let col = 2 + i;
            let up2 = &y[i * m + col..][..len];
            let up1 = &y[(i + 1) * m + col..][..len];
            let cur = &y[(i + 2) * m + col - 2..][..len + 4];
            let dn1 = &y[(i + 3) * m + col..][..len + 1];
            let dn2 = &y[(i + 4) * m + col..][..len];
            let pj = &pump[i..][..len + 2];
            let sj = &sq[i..][..len + 1];
            let lj = &self.loss[i..][..len];
            let coef = &self.coef[i * n + i..][..len];
            let out = &mut dy[(i + 2) * m + col..][..len];
            for k in 0..len {
                let h_rho = up2[k] * p_lo + dn2[k] * p_hi + c_lo * up1[k] + c_hi * dn1[k];
                let rho_h = cur[k] * (s * pj[k])
                    + cur[k + 4] * (s * pj[k + 2])
                    + cur[k + 1] * (cc * sj[k])
                    + cur[k + 3] * (c * sj[k + 1]);
                let comm = h_rho - rho_h;
                let jump = dn1[k + 1] * (loss_i * lj[k]);
                out[k] = coef[k] * cur[k + 2] + C64::new(comm.im, -comm.re) + jump;
            }
        }
        for i in 1..n {
            let row = (i + 2) * m + 2;
            for j in 0..i {
                dy[row + j] = dy[(j + 2) * m + 2 + i].conj();
            }
        }
    }
}

/// Integrates the master equation and records `Tr[ρ(t) O]` for each
/// observable at every output time.
pub fn evolve(spec: &EvolutionSpec, observables: &[Observable]) -> Result<Evolution> {
    spec.validate()?;
    let n = spec.dim.get();
    for obs in observables {
        check_dim(n, obs.op.dim())?;
    }
    let times = spec.output_times()?;
    let rho0 = spec.initial.density(spec.dim)?;
    let sys = KpoLiouvillian::new(&spec.params, spec.drive, spec.ramp, n);
    let y0 = sys.pack(rho0.matrix());

    let m = n + 4;
    let mut values: Vec<Vec<C64>> = vec![Vec::with_capacity(times.len()); observables.len()];
    let mut diag = Diagnostics::default();
    let obs_ops: Vec<&DMatrix<C64>> = observables.iter().map(|o| o.op.matrix()).collect();

    let (y_end, stats) = integrate(&sys, 0.0, y0, &times, spec.tolerances, |t, y| {
        let at = |i: usize, j: usize| y[(i + 2) * m + j + 2];
        let mut tr = ZERO;
        for i in 0..n {
            tr += at(i, i);
        }
        diag.max_trace_error = diag.max_trace_error.max((tr - C64::new(1.0, 0.0)).norm());
        let edge = at(n - 1, n - 1).re + at(n - 2, n - 2).re;
        diag.max_edge_population = diag.max_edge_population.max(edge);
        if edge > TRUNCATION_POPULATION_LIMIT {
            return Err(Error::Truncation(format!(
                "population {edge:e} on the top two Fock levels at t = {t:e} s (dim {n})"
            )));
        }
        let mut herm = 0.0;
        for i in 0..n {
            for j in i..n {
                herm += (at(i, j) - at(j, i).conj()).norm_sqr();
            }
        }
        diag.max_hermiticity_error = diag.max_hermiticity_error.max(herm.sqrt());
        for (vals, op) in values.iter_mut().zip(&obs_ops) {
            let mut acc = ZERO;
            for i in 0..n {
                for k in 0..n {
                    acc += at(i, k) * op[(k, i)];
                }
            }
            vals.push(acc);
        }
        Ok(())
    })?;
    diag.steps = stats;

    let final_state = DensityState::from_matrix_unchecked(sys.unpack(&y_end));
    diag.final_min_eigenvalue = final_state.min_eigenvalue();
    if diag.final_min_eigenvalue < DensityState::NEGATIVITY_TOL {
        return Err(Error::ToleranceFailure {
            time: spec.t_end,
            step: stats.min_step,
        });
    }
    let series = observables
        .iter()
        .zip(values)
        .map(|(o, v)| TimeSeries {
            times: times.clone(),
            values: v,
            observable_name: o.name.clone(),
        })
        .collect();
    Ok(Evolution {
        series,
        final_state,
        diagnostics: diag,
    })
}

/// Result of re-running one evolution at several truncations.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub dims: Vec<FockDim>,
    pub runs: Vec<Evolution>,
    /// `max_rel_change[k][o]`: largest change of observable `o` between
    /// dims `k` and `k+1`, relative to the largest magnitude at dim `k`.
    pub max_rel_change: Vec<Vec<f64>>,
}

impl ConvergenceReport {
    /// Final value of every observable per dimension.
    pub fn finals(&self) -> Vec<Vec<C64>> {
        self.runs
            .iter()
            .map(|r| r.series.iter().map(|s| *s.values.last().unwrap()).collect())
            .collect()
    }

    pub fn worst_change(&self) -> f64 {
        self.max_rel_change
            .iter()
            .flatten()
            .copied()
            .fold(0.0, f64::max)
    }
}

/// Re-runs `spec` at each dimension, building observables per dimension.
pub fn convergence_check<F>(spec: &EvolutionSpec, dims: &[FockDim], observables: F) -> Result<ConvergenceReport>
where
    F: Fn(FockDim) -> Vec<Observable>,
{
    if dims.len() < 2 {
        return Err(Error::InvalidParams("convergence check needs at least two dimensions".into()));
    }
    let mut runs = Vec::with_capacity(dims.len());
    for &d in dims {
        let mut s = spec.clone();
        s.dim = d;
        s.initial = match &spec.initial {
            InitialState::Coherent(a) => InitialState::Coherent(*a),
            other => {
                check_dim(d.get(), spec.dim.get()).map_err(|_| {
                    Error::InvalidParams(
                        "convergence checks over dimensions need a coherent initial state".into(),
                    )
                })?;
                other.clone()
            }
        };
        runs.push(evolve(&s, &observables(d))?);
    }
    let mut max_rel_change = Vec::new();
    for pair in runs.windows(2) {
        let changes = pair[0]
            .series
            .iter()
            .zip(&pair[1].series)
            .map(|(a, b)| {
                let scale = a.values.iter().map(|z| z.norm()).fold(0.0, f64::max);
                let diff = a
                    .values
                    .iter()
                    .zip(&b.values)
                    .map(|(x, y)| (x - y).norm())
                    .fold(0.0, f64::max);
                if scale > 0.0 {
                    diff / scale
                } else {
                    diff
                }
            })
            .collect();
        max_rel_change.push(changes);
    }
    Ok(ConvergenceReport {
        dims: dims.to_vec(),
        runs,
        max_rel_change,
    })
}
