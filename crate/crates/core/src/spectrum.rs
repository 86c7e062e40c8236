//! Eigenstructure of the KPO Hamiltonian.
//!
//! Eigenstates are ordered by *descending* energy: with `K < 0` the two
//! quasi-degenerate cat states sit at the top of the spectrum and are
//! labelled 0 and 1. Excitation energies `E_ij = ω_j − ω_i` (`i < j`) are
//! therefore negative.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::fock::{parity_operator, FockDim, OperatorMatrix, StateVector, C64, ZERO};
use crate::model::{build_single_kpo, KpoParams, TwoKpoParams};
use crate::units::to_mhz;

/// Relative Hermiticity deviation above which `diagonalize` refuses input.
const HERMITIAN_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct SpectrumResult {
    /// Eigenenergies in rad/s, descending.
    pub energies: Vec<f64>,
    pub eigenvectors: Vec<StateVector>,
    pub dim: usize,
}

impl SpectrumResult {
    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    /// `⟨ψ_i|P|ψ_i⟩`; only meaningful on a single-mode space.
    pub fn parity(&self, i: usize) -> Result<f64> {
        let dim = FockDim::new(self.dim)?;
        Ok(self.eigenvectors[i].expectation(&parity_operator(dim))?.re)
    }
}

/// Full Hermitian eigendecomposition, sorted by descending energy.
pub fn diagonalize(h: &OperatorMatrix) -> Result<SpectrumResult> {
    let dev = h.hermiticity_deviation();
    if dev > HERMITIAN_TOL {
        return Err(Error::NotHermitian(dev));
    }
    // symmetrize so round-off asymmetry does not leak into the solver
    let herm = (h.matrix() + h.matrix().adjoint()) * C64::new(0.5, 0.0);
    let n = h.dim();
    let scale = herm.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let parity_symmetric = (0..n).all(|i| {
        (0..n).all(|j| (i + j) % 2 == 0 || herm[(i, j)].norm() <= 1e-14 * scale)
    });
    // parity sectors are solved apart so degenerate doublets keep definite parity
    let sectors: Vec<Vec<usize>> = if parity_symmetric && n > 1 {
        vec![(0..n).step_by(2).collect(), (1..n).step_by(2).collect()]
    } else {
        vec![(0..n).collect()]
    };
    let mut pairs: Vec<(f64, DVector<C64>)> = Vec::with_capacity(n);
    for idx in &sectors {
        let block = DMatrix::from_fn(idx.len(), idx.len(), |a, b| herm[(idx[a], idx[b])]);
        let eig = SymmetricEigen::new(block);
        for k in 0..idx.len() {
            let mut v = DVector::from_element(n, ZERO);
            for (a, &row) in idx.iter().enumerate() {
                v[row] = eig.eigenvectors[(a, k)];
            }
            pairs.push((eig.eigenvalues[k], v));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let energies = pairs.iter().map(|p| p.0).collect();
    let eigenvectors = pairs
        .into_iter()
        .map(|(_, v)| StateVector::from_normalized(v))
        .collect();
    Ok(SpectrumResult {
        energies,
        eigenvectors,
        dim: h.dim(),
    })
}

/// Diagonalizes the single-KPO Hamiltonian.
pub fn kpo_spectrum(params: &KpoParams, dim: FockDim) -> Result<SpectrumResult> {
    diagonalize(&build_single_kpo(params, dim)?)
}

/// `E_ij = ω_j − ω_i` for `i < j`.
pub fn excitation_energy(spec: &SpectrumResult, i: usize, j: usize) -> Result<f64> {
    if i >= j {
        return Err(Error::Index(format!("excitation energy needs i < j, got ({i}, {j})")));
    }
    if j >= spec.len() {
        return Err(Error::Index(format!("level {j} outside spectrum of size {}", spec.len())));
    }
    Ok(spec.energies[j] - spec.energies[i])
}

/// Groups the top of the spectrum into parity doublets.
///
/// Levels `(2k, 2k+1)` form a doublet when they have opposite parity and
/// their splitting is below `ratio` times the gap to level `2k+2`. Grouping
/// stops at the first pair that fails, everything below is a singleton.
/// Returns the class representative (lowest index) of each level.
pub fn doublet_classes(spec: &SpectrumResult, ratio: f64) -> Result<Vec<usize>> {
    let n = spec.len();
    let mut rep: Vec<usize> = (0..n).collect();
    let mut k = 0;
    while k + 1 < n {
        let pk = spec.parity(k)?;
        let pk1 = spec.parity(k + 1)?;
        if pk * pk1 > -0.25 {
            break;
        }
        let split = (spec.energies[k] - spec.energies[k + 1]).abs();
        let gap = if k + 2 < n {
            (spec.energies[k + 1] - spec.energies[k + 2]).abs()
        } else {
            f64::INFINITY
        };
        if !(split < ratio * gap) {
            break;
        }
        rep[k + 1] = k;
        k += 2;
    }
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollisionOptions {
    /// Flag when `|Δ − E_ij|` is below this (rad/s).
    pub threshold: f64,
    /// Levels with `ω_i < −cutoff` are left out. `None` uses `2p` per KPO.
    pub energy_cutoff: Option<f64>,
    /// Report intra-doublet pairs such as (0, 1) as collision candidates.
    pub include_doublets: bool,
    /// Splitting-to-gap ratio below which two levels count as a doublet.
    pub doublet_ratio: f64,
    pub dim: FockDim,
}

impl Default for CollisionOptions {
    fn default() -> Self {
        CollisionOptions {
            threshold: crate::units::mhz(1.0),
            energy_cutoff: None,
            include_doublets: false,
            doublet_ratio: 0.1,
            dim: FockDim::DEFAULT,
        }
    }
}

/// One transition class of one KPO.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionEntry {
    /// 1 or 2.
    pub kpo: u8,
    /// Representative pair (lowest indices of the two classes).
    pub i: usize,
    pub j: usize,
    /// `E_ij` of the representative pair (rad/s).
    pub energy: f64,
    /// Drive detuning seen by this KPO (rad/s): `Δ_p` for KPO1, `−Δ_p` for KPO2.
    pub drive_detuning: f64,
    /// Smallest `|drive_detuning − E_kl|` over the member pairs (rad/s).
    pub margin: f64,
    pub flagged: bool,
    pub intra_doublet: bool,
    /// Every level pair `(k, l)` represented by this entry.
    pub members: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollisionReport {
    pub entries: Vec<CollisionEntry>,
    pub threshold: f64,
}

impl CollisionReport {
    pub fn flagged(&self) -> impl Iterator<Item = &CollisionEntry> {
        self.entries.iter().filter(|e| e.flagged)
    }

    /// Fixed-width table, one row per transition class.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "threshold/2pi = {:.4} MHz; entries = {}; flagged = {}",
            to_mhz(self.threshold),
            self.entries.len(),
            self.flagged().count()
        );
        let _ = writeln!(
            out,
            "{:>4} {:>4} {:>4} {:>14} {:>14} {:>14} {:>8}",
            "kpo", "i", "j", "E_ij/2pi[MHz]", "drive/2pi[MHz]", "margin[MHz]", "flagged"
        );
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{:>4} {:>4} {:>4} {:>14.4} {:>14.4} {:>14.4} {:>8}",
                e.kpo,
                e.i,
                e.j,
                to_mhz(e.energy),
                to_mhz(e.drive_detuning),
                to_mhz(e.margin),
                if e.flagged { "YES" } else { "no" }
            );
        }
        out
    }

    pub const CSV_HEADER: &'static str =
        "kpo,i,j,e_ij_mhz,drive_detuning_mhz,margin_mhz,flagged,intra_doublet,members";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for e in &self.entries {
            let members: Vec<String> = e.members.iter().map(|(k, l)| format!("{k}-{l}")).collect();
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6},{},{},{}",
                e.kpo,
                e.i,
                e.j,
                to_mhz(e.energy),
                to_mhz(e.drive_detuning),
                to_mhz(e.margin),
                e.flagged,
                e.intra_doublet,
                members.join(" ")
            );
        }
        out
    }
}

/// Transition classes of one KPO that could be driven at `drive_detuning`.
pub fn kpo_collisions(
    params: &KpoParams,
    kpo: u8,
    drive_detuning: f64,
    opts: &CollisionOptions,
) -> Result<Vec<CollisionEntry>> {
    if !(opts.threshold > 0.0) {
        return Err(Error::InvalidParams(format!(
            "collision threshold must be positive, got {}",
            opts.threshold
        )));
    }
    let spec = kpo_spectrum(params, opts.dim)?;
    let cutoff = opts.energy_cutoff.unwrap_or(2.0 * params.pump_amplitude);
    let levels: Vec<usize> = (0..spec.len()).filter(|&i| spec.energies[i] >= -cutoff).collect();
    let rep = doublet_classes(&spec, opts.doublet_ratio)?;

    let mut entries: Vec<CollisionEntry> = Vec::new();
    for (a, &k) in levels.iter().enumerate() {
        for &l in &levels[a + 1..] {
            let (ri, rj) = (rep[k], rep[l]);
            let e_kl = spec.energies[l] - spec.energies[k];
            let margin = (drive_detuning - e_kl).abs();
            match entries.iter_mut().find(|e| e.i == ri && e.j == rj) {
                Some(e) => {
                    e.members.push((k, l));
                    e.margin = e.margin.min(margin);
                }
                None => entries.push(CollisionEntry {
                    kpo,
                    i: ri,
                    j: rj,
                    energy: spec.energies[rj] - spec.energies[ri],
                    drive_detuning,
                    margin,
                    flagged: false,
                    intra_doublet: ri == rj,
                    members: vec![(k, l)],
                }),
            }
        }
    }
    // an intra-doublet class is keyed (k, k); give it its natural (k, k+1) label
    for e in entries.iter_mut().filter(|e| e.intra_doublet) {
        e.j = e.i + 1;
        e.energy = spec.energies[e.j] - spec.energies[e.i];
    }
    for e in &mut entries {
        e.flagged = e.margin < opts.threshold && (opts.include_doublets || !e.intra_doublet);
    }
    entries.sort_by_key(|e| (e.i, e.j));
    Ok(entries)
}

/// Checks both KPOs of a coupled pair for `Δ_p = E_ij` resonances.
///
/// The exchange term drives KPO1 at `+Δ_p` and KPO2 at `−Δ_p`.
pub fn collision_report(two: &TwoKpoParams, opts: &CollisionOptions) -> Result<CollisionReport> {
    two.validate()?;
    let mut entries = kpo_collisions(&two.kpo1, 1, two.pump_freq_halfdiff, opts)?;
    entries.extend(kpo_collisions(&two.kpo2, 2, -two.pump_freq_halfdiff, opts)?);
    Ok(CollisionReport {
        entries,
        threshold: opts.threshold,
    })
}

/// Eigenvalue gap of `[[ω₁, g], [g, ω₂]]`: `√((ω₁−ω₂)² + 4g²)`.
pub fn avoided_crossing_splitting(omega1: f64, omega2: f64, g: f64) -> f64 {
    let d = omega1 - omega2;
    (d * d + 4.0 * g * g).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{coherent_state, OperatorMatrix};
    use crate::model::presets;
    use crate::units::mhz;
    use nalgebra::DMatrix;

    fn dim(n: usize) -> FockDim {
        FockDim::new(n).unwrap()
    }

    #[test]
    fn bare_kerr_levels_descending() {
        let mut p = presets::single();
        p.pump_amplitude = 0.0;
        let s = kpo_spectrum(&p, dim(10)).unwrap();
        let expect = [0.0, 0.0, -14.0, -42.0, -84.0];
        for (e, x) in s.energies.iter().zip(expect) {
            assert!((to_mhz(*e) - x).abs() < 1e-9, "{} vs {x}", to_mhz(*e));
        }
        assert!(s.energies.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn scaled_identity() {
        let h = OperatorMatrix::identity(7).scale_re(3.25);
        let s = diagonalize(&h).unwrap();
        assert!(s.energies.iter().all(|e| (e - 3.25).abs() < 1e-12));
    }

    #[test]
    fn reconstruction_and_orthonormality() {
        let d = dim(40);
        let h = build_single_kpo(&presets::single(), d).unwrap();
        let s = diagonalize(&h).unwrap();
        let n = s.len();
        let mut v = DMatrix::zeros(n, n);
        for (k, psi) in s.eigenvectors.iter().enumerate() {
            v.set_column(k, psi.amplitudes());
        }
        let lam = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            n,
            s.energies.iter().map(|&e| C64::new(e, 0.0)),
        ));
        let rec = &v * lam * v.adjoint();
        let err = (h.matrix() - rec).norm();
        assert!(err < 1e-9 * h.frobenius_norm());
        let gram = v.adjoint() * &v;
        let ortho = (gram - DMatrix::identity(n, n)).norm();
        assert!(ortho < 1e-10);
    }

    #[test]
    fn ground_doublet_is_degenerate() {
        let s = kpo_spectrum(&presets::single(), dim(40)).unwrap();
        let e01 = excitation_energy(&s, 0, 1).unwrap();
        let e02 = excitation_energy(&s, 0, 2).unwrap();
        assert!((e01 / e02).abs() < 1e-3);
    }

    #[test]
    fn e02_near_reference_and_twice_pump() {
        let p = presets::single();
        let s = kpo_spectrum(&p, dim(40)).unwrap();
        let e02 = excitation_energy(&s, 0, 2).unwrap();
        assert!((to_mhz(e02) + 204.0).abs() < 0.05 * 204.0);
        let ratio = e02.abs() / (2.0 * p.pump_amplitude);
        assert!((0.85..=1.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn excitation_energy_index_checks() {
        let s = kpo_spectrum(&presets::single(), dim(8)).unwrap();
        assert!(matches!(excitation_energy(&s, 2, 2), Err(Error::Index(_))));
        assert!(matches!(excitation_energy(&s, 3, 1), Err(Error::Index(_))));
        assert!(matches!(excitation_energy(&s, 0, 8), Err(Error::Index(_))));
    }

    #[test]
    fn not_hermitian_rejected() {
        let mut m = DMatrix::zeros(3, 3);
        m[(0, 1)] = C64::new(1.0, 0.0);
        let h = OperatorMatrix::from_matrix(m).unwrap();
        assert!(matches!(diagonalize(&h), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn eigenvectors_have_definite_parity() {
        let s = kpo_spectrum(&presets::single(), dim(40)).unwrap();
        for i in 0..20 {
            let p = s.parity(i).unwrap();
            assert!((p.abs() - 1.0).abs() < 1e-8, "level {i}: {p}");
        }
    }

    #[test]
    fn ground_doublet_spans_cat_states() {
        let d = dim(40);
        let p = presets::single();
        let s = kpo_spectrum(&p, d).unwrap();
        let alpha = crate::model::coherent_amplitude(&p).unwrap();
        let plus = coherent_state(d, C64::new(alpha, 0.0)).unwrap();
        let minus = coherent_state(d, C64::new(-alpha, 0.0)).unwrap();
        let psi0 = &s.eigenvectors[0];
        let w = psi0.inner(&plus).unwrap().norm_sqr() + psi0.inner(&minus).unwrap().norm_sqr();
        assert!(w > 0.99, "{w}");
    }

    #[test]
    fn confined_excitations_converged_in_dimension() {
        let p = presets::single();
        let s40 = kpo_spectrum(&p, dim(40)).unwrap();
        let s60 = kpo_spectrum(&p, dim(60)).unwrap();
        let confined: Vec<usize> =
            (0..40).filter(|&i| s40.energies[i].abs() < p.pump_amplitude).collect();
        assert!(confined.len() >= 4);
        for (a, &i) in confined.iter().enumerate() {
            for &j in &confined[a + 1..] {
                let e40 = excitation_energy(&s40, i, j).unwrap();
                let e60 = excitation_energy(&s60, i, j).unwrap();
                assert!((e40 - e60).abs() <= 1e-3 * e60.abs().max(mhz(1e-3)), "({i},{j})");
            }
        }
    }

    #[test]
    fn doublets_found_at_top_of_spectrum() {
        let s = kpo_spectrum(&presets::single(), dim(40)).unwrap();
        let rep = doublet_classes(&s, 0.1).unwrap();
        assert_eq!(&rep[..8], &[0, 0, 2, 2, 4, 4, 6, 7]);
    }

    fn pair_with_halfdiff(dp: f64) -> TwoKpoParams {
        let mut pair = presets::pair();
        pair.kpo1.pump_freq = None;
        pair.kpo2.pump_freq = None;
        pair.pump_freq_halfdiff = dp;
        pair
    }

    #[test]
    fn equal_pumps_raise_no_flags() {
        let report = collision_report(&pair_with_halfdiff(0.0), &CollisionOptions::default()).unwrap();
        assert_eq!(report.flagged().count(), 0, "{}", report.to_table());
        let naive = CollisionOptions {
            include_doublets: true,
            ..Default::default()
        };
        let report = collision_report(&pair_with_halfdiff(0.0), &naive).unwrap();
        assert!(report.flagged().any(|e| e.kpo == 1 && e.i == 0 && e.j == 1));
    }

    #[test]
    fn constructed_collision_is_flagged_once() {
        let pair = presets::pair();
        let s = kpo_spectrum(&pair.kpo1, FockDim::DEFAULT).unwrap();
        let e02 = excitation_energy(&s, 0, 2).unwrap();
        let report = collision_report(&pair_with_halfdiff(e02), &CollisionOptions::default()).unwrap();
        let flagged: Vec<_> = report.flagged().collect();
        assert_eq!(flagged.len(), 1, "{}", report.to_table());
        assert_eq!((flagged[0].kpo, flagged[0].i, flagged[0].j), (1, 0, 2));
        assert!(flagged[0].margin < 1e-6);
    }

    #[test]
    fn margin_beyond_threshold_not_flagged() {
        let pair = presets::pair();
        let s = kpo_spectrum(&pair.kpo1, FockDim::DEFAULT).unwrap();
        let e02 = excitation_energy(&s, 0, 2).unwrap();
        let report =
            collision_report(&pair_with_halfdiff(e02 + mhz(5.0)), &CollisionOptions::default()).unwrap();
        let entry = report.entries.iter().find(|e| e.kpo == 1 && e.i == 0 && e.j == 2).unwrap();
        assert!(!entry.flagged);
        assert!((to_mhz(entry.margin) - 5.0).abs() < 0.01);
    }

    #[test]
    fn report_covers_every_pair() {
        let pair = pair_with_halfdiff(0.0);
        let opts = CollisionOptions::default();
        let report = collision_report(&pair, &opts).unwrap();
        let s = kpo_spectrum(&pair.kpo1, opts.dim).unwrap();
        let cutoff = 2.0 * pair.kpo1.pump_amplitude;
        let n_levels = s.energies.iter().filter(|&&e| e >= -cutoff).count();
        let members: usize = report
            .entries
            .iter()
            .filter(|e| e.kpo == 1)
            .map(|e| e.members.len())
            .sum();
        assert_eq!(members, n_levels * (n_levels - 1) / 2);
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), report.entries.len() + 1);
    }

    #[test]
    fn zero_threshold_rejected() {
        let opts = CollisionOptions {
            threshold: 0.0,
            ..Default::default()
        };
        assert!(collision_report(&presets::pair(), &opts).is_err());
    }

    #[test]
    fn avoided_crossing() {
        let g = mhz(3.0);
        assert!((to_mhz(avoided_crossing_splitting(mhz(9900.0), mhz(9900.0), g)) - 6.0).abs() < 1e-9);
        assert!((avoided_crossing_splitting(mhz(10.0), mhz(2.0), 0.0) - mhz(8.0)).abs() < 1e-3);
        assert!((to_mhz(avoided_crossing_splitting(mhz(8.0), 0.0, g)) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn avoided_crossing_matches_two_mode_eigenvalues() {
        let (w1, w2, g) = (mhz(9900.0), mhz(9903.5), mhz(3.0));
        let m = DMatrix::from_row_slice(
            2,
            2,
            &[C64::new(w1, 0.0), C64::new(g, 0.0), C64::new(g, 0.0), C64::new(w2, 0.0)],
        );
        let s = diagonalize(&OperatorMatrix::from_matrix(m).unwrap()).unwrap();
        let gap = s.energies[0] - s.energies[1];
        assert!((gap - avoided_crossing_splitting(w1, w2, g)).abs() < 1e-6 * gap);
    }
}
