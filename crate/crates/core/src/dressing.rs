//! Driven sensor in the rotating frame and its dressed (spin-locking) basis.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{QnsError, Result};
use crate::noise::psd::NoisePsdSpec;
use crate::sensor::LevelStructure;

/// Largest amplitude increment between continuation steps (MHz).
const CONTINUATION_STEP: f64 = 2.0;
/// Amplitude at which labels are first assigned (MHz).
const SEED_AMPLITUDE: f64 = 1e-3;
const DEGENERACY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveSpec {
    /// Drive strength on the 0-1 transition (MHz).
    pub amplitude: f64,
    /// Drive frequency (MHz).
    pub frequency: f64,
    /// Drive phase (rad). Folded out of the RWA Hamiltonian.
    #[serde(default)]
    pub phase: f64,
    /// Index `j` of the driven (j-1, j) transition.
    pub target: usize,
}

impl DriveSpec {
    /// Drive resonant with the (target-1, target) transition.
    pub fn resonant(levels: &LevelStructure, target: usize, amplitude: f64) -> Self {
        DriveSpec {
            amplitude,
            frequency: levels.transition(target),
            phase: 0.0,
            target,
        }
    }

    pub fn with_amplitude(&self, amplitude: f64) -> Self {
        DriveSpec { amplitude, ..*self }
    }

    pub fn validate(&self, levels: &LevelStructure) -> Result<()> {
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(QnsError::InvalidParameter(format!(
                "drive amplitude must be non-negative, got {}",
                self.amplitude
            )));
        }
        if self.target == 0 || self.target >= levels.num_levels() {
            return Err(QnsError::InvalidParameter(format!(
                "target {} outside 1..{}",
                self.target,
                levels.num_levels() - 1
            )));
        }
        if !self.frequency.is_finite() {
            return Err(QnsError::InvalidParameter("drive frequency must be finite".into()));
        }
        Ok(())
    }
}

/// Diagonal `ω^(j) - j·f_d`, off-diagonal `λ^(j-1,j)·A/2`, in MHz.
pub fn build_rwa_hamiltonian(levels: &LevelStructure, drive: &DriveSpec) -> Result<DMatrix<f64>> {
    drive.validate(levels)?;
    Ok(rwa_matrix(levels, drive.frequency, drive.amplitude))
}

fn rwa_matrix(levels: &LevelStructure, frequency: f64, amplitude: f64) -> DMatrix<f64> {
    let d = levels.num_levels();
    let mut h = DMatrix::zeros(d, d);
    for k in 0..d {
        h[(k, k)] = levels.level_freqs[k] - k as f64 * frequency;
    }
    for k in 1..d {
        let g = 0.5 * levels.drive_ratios[k - 1] * amplitude;
        h[(k - 1, k)] = g;
        h[(k, k - 1)] = g;
    }
    h
}

/// Eigen-decomposition of the driven sensor with adiabatically continued
/// labels. Column `k` of `basis_change` is the dressed state labeled `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DressedFrame {
    pub target: usize,
    pub amplitude: f64,
    pub drive_frequency: f64,
    /// E^(k) in MHz, in label order.
    pub energies: Vec<f64>,
    pub basis_change: DMatrix<f64>,
    /// Ω^(j-1,j) = E^(j) - E^(j-1) (MHz).
    pub rabi: f64,
    /// α^(k) for k = 0..d-1.
    pub alpha: Vec<f64>,
    /// β^(k) for k = 0..d-1.
    pub beta: Vec<f64>,
}

impl DressedFrame {
    pub fn num_levels(&self) -> usize {
        self.energies.len()
    }

    /// `Σ_k α^(k) c_k` for per-level couplings `c` (index 0 = ground).
    pub fn transverse(&self, couplings: &[f64]) -> f64 {
        self.alpha.iter().zip(couplings).map(|(a, c)| a * c).sum()
    }

    /// `Σ_k β^(k) c_k`.
    pub fn longitudinal(&self, couplings: &[f64]) -> f64 {
        self.beta.iter().zip(couplings).map(|(b, c)| b * c).sum()
    }

    /// Flux transduction `Σ_k α^(k) ∂ω^(k)/∂Φ` (MHz/Φ₀).
    pub fn flux_transduction(&self, levels: &LevelStructure) -> f64 {
        (0..self.num_levels())
            .map(|k| self.alpha[k] * levels.level_sens(k))
            .sum()
    }

    /// `⟨a|V† O V|b⟩` for a real operator `O`.
    pub fn element(&self, a: usize, op: &DMatrix<f64>, b: usize) -> f64 {
        let v = &self.basis_change;
        (v.column(a).transpose() * op * v.column(b))[(0, 0)]
    }

    /// Largest deviation of `V†V` from the identity.
    pub fn unitarity_error(&self) -> f64 {
        let v = &self.basis_change;
        let g = v.transpose() * v - DMatrix::identity(v.ncols(), v.ncols());
        g.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Frame with column `k` of V negated; for gauge checks.
    pub fn with_column_flipped(&self, k: usize) -> Self {
        let mut v = self.basis_change.clone();
        v.column_mut(k).neg_mut();
        frame_from(self.target, self.amplitude, self.drive_frequency, self.energies.clone(), v)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("frame serializes")
    }
}

fn frame_from(
    target: usize,
    amplitude: f64,
    drive_frequency: f64,
    energies: Vec<f64>,
    v: DMatrix<f64>,
) -> DressedFrame {
    let d = energies.len();
    let (lo, hi) = (target - 1, target);
    let alpha = (0..d).map(|k| v[(k, lo)] * v[(k, hi)]).collect();
    let beta = (0..d)
        .map(|k| v[(k, lo)] * v[(k, lo)] - v[(k, hi)] * v[(k, hi)])
        .collect();
    DressedFrame {
        target,
        amplitude,
        drive_frequency,
        rabi: energies[hi] - energies[lo],
        energies,
        basis_change: v,
        alpha,
        beta,
    }
}

fn eigh(h: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (vals, vecs)
}

/// Greedy one-to-one assignment maximizing `score[label][column]`.
fn greedy_assign(score: &DMatrix<f64>) -> Vec<usize> {
    let d = score.nrows();
    let mut label_of_col = vec![usize::MAX; d];
    let mut col_of_label = vec![usize::MAX; d];
    for _ in 0..d {
        let mut best = (f64::NEG_INFINITY, 0, 0);
        for l in 0..d {
            if col_of_label[l] != usize::MAX {
                continue;
            }
            for c in 0..d {
                if label_of_col[c] == usize::MAX && score[(l, c)] > best.0 {
                    best = (score[(l, c)], l, c);
                }
            }
        }
        col_of_label[best.1] = best.2;
        label_of_col[best.2] = best.1;
    }
    col_of_label
}

/// Labeled eigenvectors as columns in label order, with eigenvalues.
#[derive(Debug, Clone)]
struct Labeled {
    energies: Vec<f64>,
    vectors: DMatrix<f64>,
}

fn seed_labels(levels: &LevelStructure, frequency: f64, target: usize, amplitude: f64) -> Labeled {
    let d = levels.num_levels();
    let (vals, vecs) = eigh(rwa_matrix(levels, frequency, amplitude));
    let (lo, hi) = (target - 1, target);
    let pair_weight = |c: usize| vecs[(lo, c)].powi(2) + vecs[(hi, c)].powi(2);
    let mut cols: Vec<usize> = (0..d).collect();
    cols.sort_by(|&a, &b| pair_weight(b).total_cmp(&pair_weight(a)));
    let (mut p, mut q) = (cols[0], cols[1]);
    if vals[p] > vals[q] {
        std::mem::swap(&mut p, &mut q);
    }
    let mut score = DMatrix::from_fn(d, d, |l, c| vecs[(l, c)].abs());
    for c in 0..d {
        score[(lo, c)] = -1.0;
        score[(hi, c)] = -1.0;
        if c == p || c == q {
            for l in 0..d {
                score[(l, c)] = -1.0;
            }
        }
    }
    score[(lo, p)] = 2.0;
    score[(hi, q)] = 2.0;
    let col_of_label = greedy_assign(&score);
    reorder(&vals, &vecs, &col_of_label)
}

fn reorder(vals: &[f64], vecs: &DMatrix<f64>, col_of_label: &[usize]) -> Labeled {
    let d = vals.len();
    Labeled {
        energies: col_of_label.iter().map(|&c| vals[c]).collect(),
        vectors: DMatrix::from_fn(d, d, |r, l| vecs[(r, col_of_label[l])]),
    }
}

fn continue_to(
    levels: &LevelStructure,
    frequency: f64,
    prev: &Labeled,
    from: f64,
    to: f64,
) -> Labeled {
    let steps = ((to - from).abs() / CONTINUATION_STEP).ceil().max(1.0) as usize;
    let mut cur = prev.clone();
    for s in 1..=steps {
        let a = from + (to - from) * s as f64 / steps as f64;
        let (vals, vecs) = eigh(rwa_matrix(levels, frequency, a));
        let overlap = (cur.vectors.transpose() * &vecs).map(f64::abs);
        let col_of_label = greedy_assign(&overlap);
        let mut next = reorder(&vals, &vecs, &col_of_label);
        for l in 0..next.energies.len() {
            if next.vectors.column(l).dot(&cur.vectors.column(l)) < 0.0 {
                next.vectors.column_mut(l).neg_mut();
            }
        }
        cur = next;
    }
    cur
}

fn fix_gauge(v: &mut DMatrix<f64>) {
    for c in 0..v.ncols() {
        let mut best = 0usize;
        for r in 0..v.nrows() {
            if v[(r, c)].abs() > v[(best, c)].abs() + 1e-14 {
                best = r;
            }
        }
        if v[(best, c)] < 0.0 {
            v.column_mut(c).neg_mut();
        }
    }
}

fn finish(levels: &LevelStructure, drive: &DriveSpec, lab: &Labeled) -> Result<DressedFrame> {
    let mut v = lab.vectors.clone();
    fix_gauge(&mut v);
    let energies = if drive.amplitude == 0.0 {
        let h = rwa_matrix(levels, drive.frequency, 0.0);
        (0..v.ncols())
            .map(|k| (v.column(k).transpose() * &h * v.column(k))[(0, 0)])
            .collect()
    } else {
        lab.energies.clone()
    };
    let frame = frame_from(drive.target, drive.amplitude, drive.frequency, energies, v);
    if drive.amplitude > 0.0 && frame.rabi.abs() < DEGENERACY_TOL {
        return Err(QnsError::LabelingAmbiguity {
            gap_mhz: frame.rabi.abs(),
        });
    }
    Ok(frame)
}

fn seed_amplitude(a: f64) -> f64 {
    if a > 0.0 {
        SEED_AMPLITUDE.min(a)
    } else {
        SEED_AMPLITUDE * 1e-3
    }
}

/// Dressed frame at `drive.amplitude`, labeled by continuation from weak
/// drive. At zero amplitude the weak-drive limit of the eigenvectors is
/// returned with the undriven energies.
pub fn dress(levels: &LevelStructure, drive: &DriveSpec) -> Result<DressedFrame> {
    drive.validate(levels)?;
    let seed_amp = seed_amplitude(drive.amplitude);
    let seed = seed_labels(levels, drive.frequency, drive.target, seed_amp);
    let lab = if drive.amplitude > seed_amp {
        continue_to(levels, drive.frequency, &seed, seed_amp, drive.amplitude)
    } else {
        seed
    };
    finish(levels, drive, &lab)
}

/// Frames along a sorted amplitude sweep, continued point to point.
pub fn dress_sweep(
    levels: &LevelStructure,
    drive: &DriveSpec,
    amplitudes: &[f64],
) -> Result<Vec<DressedFrame>> {
    drive.validate(levels)?;
    if amplitudes.windows(2).any(|w| w[1] < w[0]) {
        return Err(QnsError::InvalidParameter("amplitudes must be sorted".into()));
    }
    if amplitudes.iter().any(|a| !(*a >= 0.0)) {
        return Err(QnsError::InvalidParameter("amplitudes must be non-negative".into()));
    }
    let mut out = Vec::with_capacity(amplitudes.len());
    let mut state: Option<(f64, Labeled)> = None;
    for &a in amplitudes {
        let this = drive.with_amplitude(a);
        let lab = match &state {
            Some((prev_a, prev)) if *prev_a > 0.0 => {
                continue_to(levels, drive.frequency, prev, *prev_a, a)
            }
            _ => {
                let seed_amp = seed_amplitude(a);
                let seed = seed_labels(levels, drive.frequency, drive.target, seed_amp);
                if a > seed_amp {
                    continue_to(levels, drive.frequency, &seed, seed_amp, a)
                } else {
                    seed
                }
            }
        };
        out.push(finish(levels, &this, &lab)?);
        state = Some((seed_amplitude(a).max(a), lab));
    }
    Ok(out)
}

/// Ω(A) over a sorted amplitude grid, with its inverse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RabiCurve {
    pub target: usize,
    pub amplitudes: Vec<f64>,
    pub omegas: Vec<f64>,
    pub frames: Vec<DressedFrame>,
}

impl RabiCurve {
    /// A(Ω) by linear interpolation on the monotone curve.
    pub fn amplitude_for(&self, omega: f64) -> Result<f64> {
        let n = self.omegas.len();
        if n < 2 || omega < self.omegas[0] || omega > self.omegas[n - 1] {
            return Err(QnsError::OutOfRange(omega));
        }
        let i = self.omegas.partition_point(|&w| w <= omega).clamp(1, n - 1);
        let (w0, w1) = (self.omegas[i - 1], self.omegas[i]);
        let (a0, a1) = (self.amplitudes[i - 1], self.amplitudes[i]);
        Ok(a0 + (a1 - a0) * (omega - w0) / (w1 - w0))
    }

    /// CSV with columns `A_drive_MHz,Omega_MHz,alpha_1..,beta_1..`.
    pub fn to_csv(&self) -> String {
        let d = self.frames.first().map_or(0, |f| f.num_levels());
        let mut out = String::from("A_drive_MHz,Omega_MHz");
        for k in 1..d {
            out.push_str(&format!(",alpha_{k}"));
        }
        for k in 1..d {
            out.push_str(&format!(",beta_{k}"));
        }
        out.push('\n');
        for f in &self.frames {
            out.push_str(&format!("{},{}", f.amplitude, f.rabi));
            for k in 1..d {
                out.push_str(&format!(",{}", f.alpha[k]));
            }
            for k in 1..d {
                out.push_str(&format!(",{}", f.beta[k]));
            }
            out.push('\n');
        }
        out
    }
}

pub fn rabi_curve(levels: &LevelStructure, target: usize, amplitudes: &[f64]) -> Result<RabiCurve> {
    let drive = DriveSpec::resonant(levels, target, 0.0);
    let frames = dress_sweep(levels, &drive, amplitudes)?;
    let omegas: Vec<f64> = frames.iter().map(|f| f.rabi).collect();
    for (i, w) in omegas.windows(2).enumerate() {
        if amplitudes[i + 1] > amplitudes[i] && w[1] <= w[0] {
            return Err(QnsError::NonMonotone {
                amplitude_mhz: amplitudes[i + 1],
            });
        }
    }
    Ok(RabiCurve {
        target,
        amplitudes: amplitudes.to_vec(),
        omegas,
        frames,
    })
}

/// Resonant amplitude whose dressed splitting equals `omega` (MHz), found by
/// bracketing on a coarse curve up to `max_amplitude` and bisecting.
pub fn amplitude_for_rabi(
    levels: &LevelStructure,
    target: usize,
    omega: f64,
    max_amplitude: f64,
) -> Result<f64> {
    let n = ((max_amplitude / 5.0).ceil() as usize).max(4);
    let grid: Vec<f64> = (0..=n).map(|i| max_amplitude * i as f64 / n as f64).collect();
    let curve = rabi_curve(levels, target, &grid)?;
    let guess = curve.amplitude_for(omega)?;
    let i = curve.amplitudes.partition_point(|&a| a <= guess).clamp(1, n);
    let (mut lo, mut hi) = (curve.amplitudes[i - 1], curve.amplitudes[i]);
    let drive = DriveSpec::resonant(levels, target, 0.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if dress(levels, &drive.with_amplitude(mid))?.rabi < omega {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-10 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn transition_element(frame: &DressedFrame, a: usize, b: usize, weights: &[f64]) -> f64 {
    let v = &frame.basis_change;
    (1..frame.num_levels())
        .map(|k| weights[k] * v[(k, a)] * v[(k, b)])
        .sum()
}

/// Golden-rule leakage out of the locked pair with identical noise on
/// every excited level.
pub fn leakage_rate(frame: &DressedFrame, psd: &NoisePsdSpec) -> f64 {
    let ones = vec![1.0; frame.num_levels()];
    leakage_rate_with(frame, psd, &ones)
}

/// Golden-rule leakage for `B^(k) = c_k x(t)` where `x` has spectrum `psd`
/// and `weights[k] = c_k` (index 0 ignored). Returns the larger of the
/// upper (j → j+1) and lower (j-1 → j-2) channels.
pub fn leakage_rate_with(frame: &DressedFrame, psd: &NoisePsdSpec, weights: &[f64]) -> f64 {
    let d = frame.num_levels();
    let j = frame.target;
    let e = &frame.energies;
    let mut rate = 0.0f64;
    if j + 1 < d {
        let m = transition_element(frame, j + 1, j, weights);
        rate = rate.max(m * m * psd.eval(e[j + 1] - e[j]));
    }
    if j >= 2 {
        let m = transition_element(frame, j - 2, j - 1, weights);
        rate = rate.max(m * m * psd.eval(e[j - 1] - e[j - 2]));
    }
    rate
}

/// Γ₁ for every transition: measured values first, the rest extrapolated
/// as `k·Γ₁^(0,1)`.
pub fn t1_ladder(measured: &[f64], num_levels: usize) -> Vec<f64> {
    let g01 = measured.first().copied().unwrap_or(0.0);
    (1..num_levels)
        .map(|k| measured.get(k - 1).copied().unwrap_or(k as f64 * g01))
        .collect()
}

/// Γ₁,eff^(j-1,j) (1/μs) for zero-temperature per-transition rates
/// `gamma1[k-1] = Γ₁^(k-1,k)`.
pub fn effective_t1(frame: &DressedFrame, gamma1: &[f64]) -> f64 {
    let v = &frame.basis_change;
    let (lo, hi) = (frame.target - 1, frame.target);
    (1..frame.num_levels())
        .map(|k| {
            let g = gamma1.get(k - 1).copied().unwrap_or(0.0);
            g * ((v[(k - 1, lo)] * v[(k, hi)]).abs() + (v[(k - 1, hi)] * v[(k, lo)]).abs())
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchKind {
    /// Sideband of the locked pair itself.
    Sideband,
    SinglePhoton,
    TwoPhoton,
}

/// One probe-transition branch traced across an amplitude sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PumpProbeBranch {
    pub kind: BranchKind,
    /// Dressed label of the initial state.
    pub from: usize,
    /// Dressed label of the final state.
    pub to: usize,
    /// (A_drive, probe frequency) in MHz.
    pub points: Vec<(f64, f64)>,
    /// Squared probe matrix element at each point.
    pub weights: Vec<f64>,
}

/// Probe transitions between dressed states of neighboring (single-photon)
/// and next-nearest (two-photon, half gap) excitation manifolds, traced over
/// the sorted `amplitudes`. `drive` fixes target and frequency.
pub fn pump_probe_spectrum(
    levels: &LevelStructure,
    drive: &DriveSpec,
    amplitudes: &[f64],
) -> Result<Vec<PumpProbeBranch>> {
    let frames = dress_sweep(levels, drive, amplitudes)?;
    let d = levels.num_levels();
    let j = drive.target;
    let f = drive.frequency;
    let manifold = |k: usize| if k == j - 1 { j } else { k };
    let raise = DMatrix::from_fn(d, d, |r, c| {
        if r == c + 1 {
            levels.drive_ratios[c]
        } else {
            0.0
        }
    });
    let raise2 = &raise * &raise;

    let mut specs: Vec<(BranchKind, usize, usize)> = vec![
        (BranchKind::Sideband, j - 1, j),
        (BranchKind::Sideband, j, j - 1),
    ];
    for p in [j - 1, j] {
        if j + 1 < d {
            specs.push((BranchKind::SinglePhoton, p, j + 1));
        }
        if j >= 2 {
            specs.push((BranchKind::SinglePhoton, j - 2, p));
        }
        if j + 2 < d {
            specs.push((BranchKind::TwoPhoton, p, j + 2));
        }
        if j >= 3 {
            specs.push((BranchKind::TwoPhoton, j - 3, p));
        }
    }

    Ok(specs
        .into_iter()
        .map(|(kind, from, to)| {
            let mut points = Vec::with_capacity(frames.len());
            let mut weights = Vec::with_capacity(frames.len());
            for fr in &frames {
                let eps = |k: usize| fr.energies[k] + manifold(k) as f64 * f;
                let (freq, w) = match kind {
                    BranchKind::Sideband => (
                        fr.energies[to] - fr.energies[from] + f,
                        fr.element(to, &raise, from).powi(2),
                    ),
                    BranchKind::SinglePhoton => {
                        (eps(to) - eps(from), fr.element(to, &raise, from).powi(2))
                    }
                    BranchKind::TwoPhoton => (
                        0.5 * (eps(to) - eps(from)),
                        fr.element(to, &raise2, from).powi(2),
                    ),
                };
                points.push((fr.amplitude, freq));
                weights.push(w);
            }
            PumpProbeBranch {
                kind,
                from,
                to,
                points,
                weights,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::{solve_levels, TransmonSpec};
    use proptest::prelude::*;

    fn reference_levels() -> LevelStructure {
        solve_levels(&TransmonSpec::reference()).unwrap()
    }

    #[test]
    fn rwa_two_level() {
        let lv = LevelStructure::two_level(5000.0, 0.0);
        let h = build_rwa_hamiltonian(&lv, &DriveSpec::resonant(&lv, 1, 10.0)).unwrap();
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[0.0, 5.0, 5.0, 0.0]));
    }

    #[test]
    fn rwa_zero_drive_is_detunings() {
        let lv = reference_levels();
        let h = build_rwa_hamiltonian(&lv, &DriveSpec::resonant(&lv, 1, 0.0)).unwrap();
        let f = lv.transition(1);
        for k in 0..5 {
            assert_eq!(h[(k, k)], lv.level_freqs[k] - k as f64 * f);
        }
        assert!(h[(1, 1)].abs() < 1e-9);
        assert_eq!(h[(0, 1)], 0.0);
    }

    #[test]
    fn rwa_off_diagonals_follow_ratios() {
        let lv = reference_levels();
        let h = build_rwa_hamiltonian(&lv, &DriveSpec::resonant(&lv, 1, 100.0)).unwrap();
        for k in 1..5 {
            assert!((h[(k - 1, k)] - 50.0 * lv.drive_ratios[k - 1]).abs() < 1e-12);
        }
        assert_eq!(h[(0, 2)], 0.0);
    }

    #[test]
    fn two_level_exact() {
        let lv = LevelStructure::two_level(5000.0, -3000.0);
        for a in [0.5, 10.0, 77.0] {
            let fr = dress(&lv, &DriveSpec::resonant(&lv, 1, a)).unwrap();
            assert!((fr.rabi - a).abs() < 1e-10);
            assert!((fr.alpha[1].abs() - 0.5).abs() < 1e-12);
            assert!(fr.beta[1].abs() < 1e-12);
        }
    }

    #[test]
    fn weak_drive_limit() {
        let lv = reference_levels();
        for j in 1..=2 {
            let fr = dress(&lv, &DriveSpec::resonant(&lv, j, 1.0)).unwrap();
            for k in 0..5 {
                if k == j - 1 || k == j {
                    assert!((fr.alpha[k].abs() - 0.5).abs() < 1e-3);
                } else {
                    assert!(fr.alpha[k].abs() < 1e-2);
                }
                assert!(fr.beta[k].abs() < 1e-2);
            }
            let sum: f64 = fr.alpha.iter().map(|a| a.abs()).sum();
            assert!((sum - 1.0).abs() < 1e-2);
        }
    }

    #[test]
    fn linear_regime() {
        let lv = reference_levels();
        let c = rabi_curve(&lv, 1, &[0.5, 1.0, 2.0, 5.0]).unwrap();
        for (a, w) in c.amplitudes.iter().zip(&c.omegas) {
            assert!((w / a - 1.0).abs() < 1e-3);
        }
        let fr = dress(&lv, &DriveSpec::resonant(&lv, 2, 1.0)).unwrap();
        assert!((fr.rabi / lv.drive_ratios[1] - 1.0).abs() < 5e-3);
    }

    #[test]
    fn strong_drive_pushes_splitting_down() {
        let lv = reference_levels();
        let c01 = rabi_curve(&lv, 1, &[100.0, 200.0, 300.0]).unwrap();
        assert!((c01.omegas[0] - 97.31).abs() < 0.1);
        assert!((c01.omegas[1] - 182.39).abs() < 0.1);
        assert!((c01.omegas[2] - 254.89).abs() < 0.1);
        let c12 = rabi_curve(&lv, 2, &[100.0, 200.0, 300.0]).unwrap();
        assert!((c12.omegas[0] - 127.19).abs() < 0.1);
        assert!((c12.omegas[1] - 219.8).abs() < 0.1);
        assert!((c12.omegas[2] - 292.38).abs() < 0.1);
        assert!(c01.frames[2].alpha.iter().skip(2).any(|a| a.abs() > 1e-2));
    }

    #[test]
    fn sweep_matches_single_dress() {
        let lv = reference_levels();
        let amps = [0.0, 10.0, 50.0, 150.0, 300.0];
        let c = rabi_curve(&lv, 2, &amps).unwrap();
        for (i, a) in amps.iter().enumerate() {
            let fr = dress(&lv, &DriveSpec::resonant(&lv, 2, *a)).unwrap();
            assert!((fr.rabi - c.omegas[i]).abs() < 1e-9);
            for k in 0..5 {
                assert!((fr.alpha[k] - c.frames[i].alpha[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_amplitude_limit() {
        let lv = reference_levels();
        let fr = dress(&lv, &DriveSpec::resonant(&lv, 1, 0.0)).unwrap();
        assert!(fr.rabi.abs() < 1e-9);
        assert!((fr.alpha[0].abs() - 0.5).abs() < 1e-9);
        assert!((fr.alpha[1].abs() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn inverse_curve() {
        let lv = reference_levels();
        let grid: Vec<f64> = (0..=60).map(|i| 5.0 * i as f64).collect();
        let c = rabi_curve(&lv, 1, &grid).unwrap();
        let a = c.amplitude_for(200.0).unwrap();
        let w = dress(&lv, &DriveSpec::resonant(&lv, 1, a)).unwrap().rabi;
        assert!((w - 200.0).abs() < 0.2);
        let exact = amplitude_for_rabi(&lv, 1, 200.0, 350.0).unwrap();
        let w = dress(&lv, &DriveSpec::resonant(&lv, 1, exact)).unwrap().rabi;
        assert!((w - 200.0).abs() < 1e-6);
        assert!(matches!(c.amplitude_for(1e4), Err(QnsError::OutOfRange(_))));
    }

    #[test]
    fn csv_layout() {
        let lv = reference_levels();
        let c = rabi_curve(&lv, 1, &[1.0, 2.0]).unwrap();
        let csv = c.to_csv();
        let header = csv.lines().next().unwrap();
        assert_eq!(
            header,
            "A_drive_MHz,Omega_MHz,alpha_1,alpha_2,alpha_3,alpha_4,beta_1,beta_2,beta_3,beta_4"
        );
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn leakage_limits() {
        let lv = reference_levels();
        let fr = dress(&lv, &DriveSpec::resonant(&lv, 1, 1.0)).unwrap();
        assert_eq!(leakage_rate(&fr, &NoisePsdSpec::Zero), 0.0);
        let white = NoisePsdSpec::Tabulated {
            points: vec![(0.0, 1.0), (1e4, 1.0)],
        };
        let ones = vec![1.0; 5];
        let m = transition_element(&fr, 2, 1, &ones);
        assert!(m.abs() < 1e-2);
        let in_pair = fr.transverse(&[0.0, 1.0, 1.0, 1.0, 1.0]);
        assert!((in_pair.abs() - 0.5).abs() < 1e-3);
        assert!(leakage_rate(&fr, &white) * 1e4 <= in_pair * in_pair * 1.0);
    }

    #[test]
    fn t1_limits() {
        let lv = reference_levels();
        let fr = dress(&lv, &DriveSpec::resonant(&lv, 1, 0.5)).unwrap();
        let g = t1_ladder(&[1.0 / 58.0], 5);
        assert!((g[2] - 3.0 / 58.0).abs() < 1e-15);
        assert!((effective_t1(&fr, &g) * 58.0 - 1.0).abs() < 1e-2);
        assert_eq!(effective_t1(&fr, &[0.0; 4]), 0.0);
        let fr = dress(&lv, &DriveSpec::resonant(&lv, 2, 0.5)).unwrap();
        let g = t1_ladder(&[1.0 / 58.0, 1.0 / 31.0], 5);
        assert!((effective_t1(&fr, &g) * 31.0 - 1.0).abs() < 1e-2);
    }

    #[test]
    fn pump_probe_zero_drive_is_bare() {
        let lv = reference_levels();
        let drive = DriveSpec::resonant(&lv, 1, 0.0);
        let br = pump_probe_spectrum(&lv, &drive, &[0.0]).unwrap();
        for b in &br {
            let f = b.points[0].1;
            match (b.kind, b.to) {
                (BranchKind::Sideband, _) => assert!((f - lv.transition(1)).abs() < 1e-9),
                (BranchKind::SinglePhoton, 2) => assert!((f - lv.transition(2)).abs() < 1e-9),
                (BranchKind::TwoPhoton, 3) => {
                    assert!((f - 0.5 * (lv.level_freqs[3] - lv.level_freqs[1])).abs() < 1e-9)
                }
                other => panic!("unexpected branch {other:?}"),
            }
        }
    }

    #[test]
    fn pump_probe_splitting() {
        let lv = reference_levels();
        let drive = DriveSpec::resonant(&lv, 1, 0.0);
        let amps = [2.0, 100.0, 200.0, 300.0];
        let br = pump_probe_spectrum(&lv, &drive, &amps).unwrap();
        let single: Vec<_> = br
            .iter()
            .filter(|b| b.kind == BranchKind::SinglePhoton && b.to == 2)
            .collect();
        assert_eq!(single.len(), 2);
        let sep: Vec<f64> = (0..amps.len())
            .map(|i| (single[0].points[i].1 - single[1].points[i].1).abs())
            .collect();
        assert!((sep[0] - 2.0).abs() < 1e-2);
        let push: Vec<f64> = sep.iter().zip(&amps).map(|(s, a)| s - a).collect();
        for w in push.windows(2).skip(1) {
            assert!(w[1] < w[0] && w[1] < 0.0);
        }
    }

    #[test]
    fn degenerate_detuned_pair_is_rejected() {
        let lv = LevelStructure::two_level(5000.0, 0.0);
        let drive = DriveSpec {
            amplitude: 1e-9,
            frequency: 5000.0,
            phase: 0.0,
            target: 1,
        };
        assert!(matches!(
            dress(&lv, &drive),
            Err(QnsError::LabelingAmbiguity { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn unitary_and_gauge_invariant(a in 0.0f64..300.0, target in 1usize..3, flip in 0usize..5) {
            let lv = reference_levels();
            let fr = dress(&lv, &DriveSpec::resonant(&lv, target, a)).unwrap();
            prop_assert!(fr.unitarity_error() < 1e-12);
            let g = fr.with_column_flipped(flip);
            prop_assert!((g.rabi - fr.rabi).abs() < 1e-12);
            for k in 0..5 {
                prop_assert!((g.alpha[k].abs() - fr.alpha[k].abs()).abs() < 1e-12);
                prop_assert!((g.beta[k] - fr.beta[k]).abs() < 1e-12);
            }
            let white = NoisePsdSpec::boxcar(1.0, 0.0, 1e4);
            prop_assert!((leakage_rate(&g, &white) - leakage_rate(&fr, &white)).abs() < 1e-12);
            let gam = t1_ladder(&[1.0 / 58.0, 1.0 / 31.0], 5);
            prop_assert!((effective_t1(&g, &gam) - effective_t1(&fr, &gam)).abs() < 1e-12);
            let t = fr.flux_transduction(&lv);
            prop_assert!((g.flux_transduction(&lv).powi(2) - t * t).abs() < 1e-9 * t * t + 1e-12);
        }

        #[test]
        fn two_level_any_amplitude(a in 1e-3f64..500.0) {
            let lv = LevelStructure::two_level(4000.0, 1.0);
            let fr = dress(&lv, &DriveSpec::resonant(&lv, 1, a)).unwrap();
            prop_assert!((fr.alpha[1].abs() - 0.5).abs() < 1e-12);
            prop_assert!(fr.beta[1].abs() < 1e-12);
            prop_assert!((fr.rabi - a).abs() < 1e-9 * a.max(1.0));
        }

        #[test]
        fn energies_continuous(a in 10.0f64..290.0) {
            let lv = reference_levels();
            let c = rabi_curve(&lv, 2, &[a, a + 0.5]).unwrap();
            for k in 0..5 {
                prop_assert!((c.frames[0].energies[k] - c.frames[1].energies[k]).abs() < 2.0);
            }
        }
    }
}
