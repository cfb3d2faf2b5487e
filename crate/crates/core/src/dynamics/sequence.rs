//! Spin-locking sequence on the d-level sensor.
//!
//! Protocol per realization: ideal ladder prep into `|+⟩ = (|j-1⟩ + |j⟩)/√2`,
//! Gaussian ramp-up, flat-top lock of duration τ under noise and T1,
//! ramp-down, closing `R_y(-π/2)` on (j-1, j), projective readout.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::propagator::{exact_propagator, rotation_y, CMat, MixedScratch, SplitStep};
use super::rk45::{integrate, Rk45Options};
use crate::dressing::{build_rwa_hamiltonian, DriveSpec};
use crate::error::{QnsError, Result};
use crate::noise::synth::DEFAULT_OVERSAMPLING;
use crate::noise::LevelNoise;
use crate::sensor::LevelStructure;

type C = Complex64;

/// Ramp envelopes are integrated with this substep (μs).
const RAMP_SUBSTEP: f64 = 1e-4;
const TRACE_TOL: f64 = 1e-6;
const POSITIVITY_TOL: f64 = -1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Integrator {
    /// Symmetric split step; `step = None` picks one from the drive and noise bandwidth.
    SplitStep { step: Option<f64> },
    /// Dormand–Prince 5(4) on the full time-dependent generator.
    Adaptive { rtol: f64 },
}

impl Default for Integrator {
    fn default() -> Self {
        Integrator::SplitStep { step: None }
    }
}

fn default_edge_sigma() -> f64 {
    12.0
}

fn default_ensemble() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    /// Lock drive; `drive.target` selects the (j-1, j) pair.
    pub drive: DriveSpec,
    /// Gaussian edge σ (ns).
    #[serde(default = "default_edge_sigma")]
    pub edge_sigma: f64,
    /// Flat-top lock durations τ (μs), ascending.
    pub durations: Vec<f64>,
    #[serde(default = "default_ensemble")]
    pub ensemble: usize,
    /// Γ₁ of transition (k-1, k) at index k-1 (1/μs).
    #[serde(default)]
    pub t1_rates: Vec<f64>,
    #[serde(default)]
    pub integrator: Integrator,
}

impl SequenceSpec {
    pub fn new(drive: DriveSpec, durations: Vec<f64>) -> Self {
        SequenceSpec {
            drive,
            edge_sigma: default_edge_sigma(),
            durations,
            ensemble: 1,
            t1_rates: Vec::new(),
            integrator: Integrator::default(),
        }
    }

    pub fn target(&self) -> usize {
        self.drive.target
    }

    pub fn validate(&self, levels: &LevelStructure) -> Result<()> {
        self.drive.validate(levels)?;
        if self.ensemble == 0 {
            return Err(QnsError::InvalidParameter("ensemble must be at least 1".into()));
        }
        if !(self.edge_sigma > 0.0 && self.edge_sigma.is_finite()) {
            return Err(QnsError::InvalidParameter(format!(
                "edge_sigma must be positive, got {}",
                self.edge_sigma
            )));
        }
        if self.durations.is_empty() {
            return Err(QnsError::InvalidParameter("no lock durations".into()));
        }
        if self.durations[0] < 0.0 || self.durations.windows(2).any(|w| w[1] < w[0]) {
            return Err(QnsError::InvalidParameter(
                "durations must be non-negative and ascending".into(),
            ));
        }
        if self.t1_rates.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
            return Err(QnsError::InvalidParameter("T1 rates must be non-negative".into()));
        }
        match self.integrator {
            Integrator::SplitStep { step: Some(h) } if !(h > 0.0 && h.is_finite()) => {
                Err(QnsError::InvalidParameter(format!("step must be positive, got {h}")))
            }
            Integrator::Adaptive { rtol } if !(rtol > 0.0 && rtol < 1.0) => {
                Err(QnsError::InvalidParameter(format!("rtol must be in (0, 1), got {rtol}")))
            }
            _ => Ok(()),
        }
    }

    fn is_dissipative(&self) -> bool {
        self.t1_rates.iter().any(|&g| g > 0.0)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("sequence spec serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub seeds: Vec<u64>,
    pub spec_hash: String,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayTrace {
    pub target: usize,
    pub tau: Vec<f64>,
    pub pop_lower: Vec<f64>,
    pub pop_upper: Vec<f64>,
    pub pop_leak: Vec<f64>,
    pub polarization: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Leave-one-group-out polarization curves over realizations.
    #[serde(default)]
    pub replicates: Vec<Vec<f64>>,
    #[serde(default)]
    pub metadata: TraceMetadata,
}

impl DecayTrace {
    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("tau_us,pop_lower,pop_upper,pop_leak,polarization,stderr\n");
        for i in 0..self.len() {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.tau[i],
                self.pop_lower[i],
                self.pop_upper[i],
                self.pop_leak[i],
                self.polarization[i],
                self.stderr[i]
            ));
        }
        s
    }

    pub fn metadata_json(&self) -> String {
        serde_json::to_string_pretty(&self.metadata).expect("metadata serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

/// Truncated Gaussian rising edge on `[0, 3σ]`, rescaled to run from 0 to 1.
pub fn edge_envelope(t: f64, sigma: f64) -> f64 {
    let span = 3.0 * sigma;
    if t <= 0.0 {
        return 0.0;
    }
    if t >= span {
        return 1.0;
    }
    let g0 = (-4.5f64).exp();
    let x = (t - span) / sigma;
    ((-0.5 * x * x).exp() - g0) / (1.0 - g0)
}

/// Propagator over a rising (`rising = true`) or falling edge.
pub fn ramp_propagator(levels: &LevelStructure, drive: &DriveSpec, sigma_us: f64, rising: bool) -> Result<CMat> {
    let span = 3.0 * sigma_us;
    let n = (span / RAMP_SUBSTEP).ceil().max(1.0) as usize;
    let h = span / n as f64;
    let mut u = CMat::identity(levels.num_levels());
    for i in 0..n {
        let t_mid = (i as f64 + 0.5) * h;
        let env = if rising {
            edge_envelope(t_mid, sigma_us)
        } else {
            edge_envelope(span - t_mid, sigma_us)
        };
        let hm = build_rwa_hamiltonian(levels, &drive.with_amplitude(drive.amplitude * env))?;
        u = exact_propagator(&hm, h).mul(&u);
    }
    Ok(u)
}

/// Ideal prep from `|0⟩`: π pulses up the ladder, then π/2 on (j-1, j).
pub fn prep_unitary(d: usize, j: usize) -> CMat {
    let mut u = CMat::identity(d);
    for k in 1..j {
        u = rotation_y(d, k - 1, k, PI).mul(&u);
    }
    rotation_y(d, j - 1, j, PI / 2.0).mul(&u)
}

/// Closing pulse mapping `|+⟩ → |j-1⟩` and `|-⟩ → |j⟩`.
pub fn closing_unitary(d: usize, j: usize) -> CMat {
    rotation_y(d, j - 1, j, -PI / 2.0)
}

struct Plan {
    d: usize,
    j: usize,
    h0: DMatrix<f64>,
    prep_up: CMat,
    close: CMat,
    /// Split-step propagators and step counts per checkpoint interval.
    intervals: Vec<(SplitStep, usize)>,
    step: f64,
}

/// Largest off-diagonal magnitude of the RWA Hamiltonian (MHz).
fn coupling_scale(h0: &DMatrix<f64>) -> f64 {
    let d = h0.nrows();
    let mut m = 0.0f64;
    for r in 0..d {
        for c in 0..d {
            if r != c {
                m = m.max(h0[(r, c)].abs());
            }
        }
    }
    m
}

fn auto_step(h0: &DMatrix<f64>, noise_rate: Option<f64>) -> f64 {
    let f_noise = noise_rate.map_or(0.0, |r| r / DEFAULT_OVERSAMPLING);
    let f_max = coupling_scale(h0).max(f_noise);
    if f_max > 0.0 {
        (1.0 / (50.0 * f_max)).min(1e-3)
    } else {
        1e-3
    }
}

fn build_plan(levels: &LevelStructure, seq: &SequenceSpec, noise_rate: Option<f64>) -> Result<Plan> {
    seq.validate(levels)?;
    let d = levels.num_levels();
    let j = seq.target();
    let h0 = build_rwa_hamiltonian(levels, &seq.drive)?;
    let sigma_us = seq.edge_sigma * 1e-3;
    let up = ramp_propagator(levels, &seq.drive, sigma_us, true)?;
    let down = ramp_propagator(levels, &seq.drive, sigma_us, false)?;
    let prep_up = up.mul(&prep_unitary(d, j));
    let close = closing_unitary(d, j).mul(&down);

    let step = match seq.integrator {
        Integrator::SplitStep { step: Some(h) } => h,
        _ => auto_step(&h0, noise_rate),
    };
    let limit = 1.0 / (20.0 * coupling_scale(&h0).max(1e-300));
    if step > limit {
        return Err(QnsError::InvalidParameter(format!(
            "integrator step {step} exceeds 1/(20 max|H|) = {limit}"
        )));
    }
    let mut intervals = Vec::with_capacity(seq.durations.len());
    let mut prev = 0.0;
    for &tau in &seq.durations {
        let span = tau - prev;
        let n = if span > 0.0 { (span / step - 1e-9).ceil() as usize } else { 0 };
        let h = if n > 0 { span / n as f64 } else { step };
        intervals.push((SplitStep::new(&h0, h, &seq.t1_rates), n));
        prev = tau;
    }
    Ok(Plan {
        d,
        j,
        h0,
        prep_up,
        close,
        intervals,
        step,
    })
}

/// Readout of one realization at one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Readout {
    lower: f64,
    upper: f64,
}

impl Readout {
    fn polarization(&self) -> f64 {
        let s = self.lower + self.upper;
        if s > 0.0 {
            (self.lower - self.upper) / s
        } else {
            0.0
        }
    }
}

fn check_density(rho: &CMat, t: f64) -> Result<()> {
    let dev = (rho.trace().re - 1.0).abs();
    if dev > TRACE_TOL {
        return Err(QnsError::TraceDeviation {
            deviation: dev,
            time_us: t,
        });
    }
    let ev = rho.min_eigenvalue();
    if ev < POSITIVITY_TOL {
        return Err(QnsError::Positivity {
            eigenvalue: ev,
            time_us: t,
        });
    }
    Ok(())
}

fn pure_to_density(psi: &[C]) -> CMat {
    let d = psi.len();
    let mut rho = CMat::zeros(d);
    for r in 0..d {
        for c in 0..d {
            rho.set(r, c, psi[r] * psi[c].conj());
        }
    }
    rho
}

fn initial_state(plan: &Plan) -> Vec<C> {
    let mut e0 = vec![C::new(0.0, 0.0); plan.d];
    e0[0] = C::new(1.0, 0.0);
    let mut psi = vec![C::new(0.0, 0.0); plan.d];
    plan.prep_up.apply(&e0, &mut psi);
    psi
}

fn noise_at(noise: Option<&LevelNoise>, t: f64, b: &mut [f64]) {
    match noise {
        Some(n) => {
            for (k, x) in b.iter_mut().enumerate() {
                *x = n.value(k, t);
            }
        }
        None => b.iter_mut().for_each(|x| *x = 0.0),
    }
}

fn run_split_pure(plan: &Plan, seq: &SequenceSpec, noise: Option<&LevelNoise>) -> Result<Vec<Readout>> {
    let mut psi = initial_state(plan);
    let mut b = vec![0.0; plan.d];
    let mut out = Vec::with_capacity(seq.durations.len());
    let mut closed = vec![C::new(0.0, 0.0); plan.d];
    let mut t = 0.0;
    for (idx, (ss, n)) in plan.intervals.iter().enumerate() {
        let mut ss = ss.clone();
        let h = ss.step;
        let start = if idx == 0 { 0.0 } else { seq.durations[idx - 1] };
        for i in 0..*n {
            noise_at(noise, start + (i as f64 + 0.5) * h, &mut b);
            ss.step_pure(&mut psi, &b);
        }
        t = seq.durations[idx].max(t);
        plan.close.apply(&psi, &mut closed);
        let norm: f64 = closed.iter().map(|c| c.norm_sqr()).sum();
        if (norm - 1.0).abs() > TRACE_TOL {
            return Err(QnsError::TraceDeviation {
                deviation: (norm - 1.0).abs(),
                time_us: t,
            });
        }
        out.push(Readout {
            lower: closed[plan.j - 1].norm_sqr(),
            upper: closed[plan.j].norm_sqr(),
        });
    }
    Ok(out)
}

fn run_split_mixed(plan: &Plan, seq: &SequenceSpec, noise: Option<&LevelNoise>) -> Result<Vec<Readout>> {
    let mut rho = pure_to_density(&initial_state(plan));
    let mut b = vec![0.0; plan.d];
    let mut scratch = MixedScratch::new(plan.d);
    let mut out = Vec::with_capacity(seq.durations.len());
    for (idx, (ss, n)) in plan.intervals.iter().enumerate() {
        let h = ss.step;
        let start = if idx == 0 { 0.0 } else { seq.durations[idx - 1] };
        for i in 0..*n {
            noise_at(noise, start + (i as f64 + 0.5) * h, &mut b);
            ss.step_mixed(&mut rho, &b, &mut scratch);
        }
        let closed = plan.close.conjugate(&rho);
        check_density(&closed, seq.durations[idx])?;
        out.push(Readout {
            lower: closed.at(plan.j - 1, plan.j - 1).re,
            upper: closed.at(plan.j, plan.j).re,
        });
    }
    Ok(out)
}

fn run_adaptive(
    plan: &Plan,
    seq: &SequenceSpec,
    noise: Option<&LevelNoise>,
    rtol: f64,
) -> Result<Vec<Readout>> {
    let d = plan.d;
    let max_h = plan.h0.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let opts = Rk45Options {
        rtol,
        atol: rtol * 1e-3,
        max_step: 1.0 / (20.0 * max_h.max(1e-300)),
        ..Default::default()
    };
    let h0 = &plan.h0;
    let gammas: Vec<f64> = (1..d)
        .map(|k| seq.t1_rates.get(k - 1).copied().unwrap_or(0.0))
        .collect();
    let rho0 = pure_to_density(&initial_state(plan));
    let mut out = Vec::with_capacity(seq.durations.len());
    let mut failure = None;
    let mut b = vec![0.0; d];
    let rhs = |t: f64, y: &[C], dy: &mut [C]| {
        noise_at(noise, t, &mut b);
        // dρ/dt = -i[H, ρ] + Σ Γ_k (L ρ L† - ½{L†L, ρ})
        for r in 0..d {
            for c in 0..d {
                let mut acc = C::new(0.0, 0.0);
                for k in 0..d {
                    let hrk = 2.0 * PI * h0[(r, k)] + if r == k { b[r] } else { 0.0 };
                    let hkc = 2.0 * PI * h0[(k, c)] + if k == c { b[c] } else { 0.0 };
                    acc += y[k * d + c] * hrk - y[r * d + k] * hkc;
                }
                let mut v = C::new(0.0, -1.0) * acc;
                let gr = if r > 0 { gammas[r - 1] } else { 0.0 };
                let gc = if c > 0 { gammas[c - 1] } else { 0.0 };
                v -= y[r * d + c] * (0.5 * (gr + gc));
                if r == c && r + 1 < d {
                    v += y[(r + 1) * d + r + 1] * gammas[r];
                }
                dy[r * d + c] = v;
            }
        }
    };
    integrate(rhs, 0.0, &rho0.data, &seq.durations, &opts, |i, y| {
        if failure.is_some() {
            return;
        }
        let rho = CMat {
            dim: d,
            data: y.to_vec(),
        };
        let closed = plan.close.conjugate(&rho);
        if let Err(e) = check_density(&closed, seq.durations[i]) {
            failure = Some(e);
            return;
        }
        out.push(Readout {
            lower: closed.at(plan.j - 1, plan.j - 1).re,
            upper: closed.at(plan.j, plan.j).re,
        });
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

fn run_one(plan: &Plan, seq: &SequenceSpec, noise: Option<&LevelNoise>) -> Result<Vec<Readout>> {
    if let Some(n) = noise {
        if n.num_levels() != plan.d {
            return Err(QnsError::InvalidParameter(format!(
                "noise has {} levels, sensor has {}",
                n.num_levels(),
                plan.d
            )));
        }
        let need = *seq.durations.last().unwrap_or(&0.0);
        if n.duration() + 1e-9 < need {
            return Err(QnsError::NoiseTooShort {
                need,
                have: n.duration(),
            });
        }
    }
    match seq.integrator {
        Integrator::Adaptive { rtol } => run_adaptive(plan, seq, noise, rtol),
        Integrator::SplitStep { .. } if seq.is_dissipative() => run_split_mixed(plan, seq, noise),
        Integrator::SplitStep { .. } => run_split_pure(plan, seq, noise),
    }
}

/// Deterministic pairwise sum.
pub fn pairwise_sum(x: &[f64]) -> f64 {
    match x.len() {
        0 => 0.0,
        1 => x[0],
        2 => x[0] + x[1],
        n => pairwise_sum(&x[..n / 2]) + pairwise_sum(&x[n / 2..]),
    }
}

fn reduce(seq: &SequenceSpec, runs: Vec<Vec<Readout>>, step: f64) -> DecayTrace {
    let n = runs.len() as f64;
    let m = seq.durations.len();
    let mut trace = DecayTrace {
        target: seq.target(),
        tau: seq.durations.clone(),
        pop_lower: Vec::with_capacity(m),
        pop_upper: Vec::with_capacity(m),
        pop_leak: Vec::with_capacity(m),
        polarization: Vec::with_capacity(m),
        stderr: Vec::with_capacity(m),
        replicates: Vec::new(),
        metadata: TraceMetadata {
            seeds: Vec::new(),
            spec_hash: seq.hash(),
            step,
        },
    };
    for i in 0..m {
        let lower: Vec<f64> = runs.iter().map(|r| r[i].lower).collect();
        let upper: Vec<f64> = runs.iter().map(|r| r[i].upper).collect();
        let pols: Vec<f64> = runs.iter().map(|r| r[i].polarization()).collect();
        let lo = (pairwise_sum(&lower) / n).clamp(0.0, 1.0);
        let up = (pairwise_sum(&upper) / n).clamp(0.0, 1.0);
        let pair = lo + up;
        let mean_pol = pairwise_sum(&pols) / n;
        let dev: Vec<f64> = pols.iter().map(|p| (p - mean_pol).powi(2)).collect();
        let stderr = if runs.len() > 1 {
            (pairwise_sum(&dev) / (n - 1.0)).sqrt() / n.sqrt()
        } else {
            0.0
        };
        trace.pop_lower.push(lo);
        trace.pop_upper.push(up);
        trace.pop_leak.push((1.0 - pair).max(0.0));
        trace.polarization.push(if pair > 0.0 { (lo - up) / pair } else { 0.0 });
        trace.stderr.push(stderr);
    }
    if runs.len() >= 2 * JACKKNIFE_GROUPS {
        trace.replicates = (0..JACKKNIFE_GROUPS)
            .map(|g| {
                (0..m)
                    .map(|i| {
                        let (lo, up) = runs
                            .iter()
                            .enumerate()
                            .filter(|(r, _)| r * JACKKNIFE_GROUPS / runs.len() != g)
                            .fold((0.0, 0.0), |(lo, up), (_, x)| (lo + x[i].lower, up + x[i].upper));
                        if lo + up > 0.0 {
                            (lo - up) / (lo + up)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
    }
    trace
}

/// Realization groups for jackknife replicates.
pub const JACKKNIFE_GROUPS: usize = 16;

/// Simulate with one explicit noise record per realization.
///
/// `noise` is either empty (noiseless; every realization identical) or holds
/// exactly `seq.ensemble` records.
pub fn simulate_sequence(
    levels: &LevelStructure,
    seq: &SequenceSpec,
    noise: &[LevelNoise],
) -> Result<DecayTrace> {
    if !noise.is_empty() && noise.len() != seq.ensemble {
        return Err(QnsError::InvalidParameter(format!(
            "{} noise records for an ensemble of {}",
            noise.len(),
            seq.ensemble
        )));
    }
    if noise.is_empty() {
        simulate_sequence_with(levels, seq, |_| Ok(None))
    } else {
        simulate_sequence_with(levels, seq, |r| Ok(Some(noise[r].clone())))
    }
}

/// Simulate with noise generated on demand for realization `r`.
pub fn simulate_sequence_with<F>(levels: &LevelStructure, seq: &SequenceSpec, noise_for: F) -> Result<DecayTrace>
where
    F: Fn(usize) -> Result<Option<LevelNoise>> + Sync,
{
    let probe = noise_for(0)?;
    let plan = build_plan(levels, seq, probe.as_ref().map(|n| n.sample_rate))?;
    let first = run_one(&plan, seq, probe.as_ref())?;
    let rest: Vec<Result<Vec<Readout>>> = (1..seq.ensemble)
        .into_par_iter()
        .map(|r| {
            let noise = noise_for(r)?;
            run_one(&plan, seq, noise.as_ref())
        })
        .collect();
    let mut runs = Vec::with_capacity(seq.ensemble);
    runs.push(first);
    for r in rest {
        runs.push(r?);
    }
    Ok(reduce(seq, runs, plan.step))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dressing::dress;
    use crate::noise::{level_noise_series, synthesize, CouplingModel, NoisePsdSpec, SynthesisOptions};
    use crate::sensor::{solve_levels, TransmonSpec};

    fn reference_levels() -> LevelStructure {
        solve_levels(&TransmonSpec::reference()).unwrap()
    }

    #[test]
    fn envelope_shape() {
        assert_eq!(edge_envelope(0.0, 1.0), 0.0);
        assert_eq!(edge_envelope(3.0, 1.0), 1.0);
        let mut prev = 0.0;
        for i in 1..300 {
            let e = edge_envelope(i as f64 * 0.01, 1.0);
            assert!(e >= prev);
            prev = e;
        }
    }

    #[test]
    fn prep_and_close_are_inverse_on_plus() {
        for j in 1..4 {
            let d = 5;
            let mut e0 = vec![C::new(0.0, 0.0); d];
            e0[0] = C::new(1.0, 0.0);
            let mut psi = vec![C::new(0.0, 0.0); d];
            prep_unitary(d, j).apply(&e0, &mut psi);
            assert!((psi[j - 1].re - 0.5f64.sqrt()).abs() < 1e-14);
            assert!((psi[j].re - 0.5f64.sqrt()).abs() < 1e-14);
            let mut out = vec![C::new(0.0, 0.0); d];
            closing_unitary(d, j).apply(&psi, &mut out);
            assert!((out[j - 1].norm_sqr() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn noiseless_two_level_lock_is_exact() {
        let lv = LevelStructure::two_level(5000.0, 0.0);
        for a in [5.0, 20.0, 150.0] {
            let drive = DriveSpec::resonant(&lv, 1, a);
            let seq = SequenceSpec::new(drive, vec![0.0, 0.3, 1.0, 2.0]);
            let tr = simulate_sequence(&lv, &seq, &[]).unwrap();
            for p in &tr.polarization {
                assert!((p - 1.0).abs() < 1e-6, "A={a} pol={p}");
            }
        }
    }

    #[test]
    fn noiseless_multilevel_lock_approaches_one_with_slow_edges() {
        let lv = reference_levels();
        for (j, a) in [(1, 20.0), (2, 20.0), (1, 150.0), (2, 150.0)] {
            let mut prev = 0.0;
            for sigma in [12.0, 48.0, 192.0] {
                let drive = DriveSpec::resonant(&lv, j, a);
                let mut seq = SequenceSpec::new(drive, (0..40).map(|i| i as f64 * 0.0025).collect());
                seq.edge_sigma = sigma;
                let tr = simulate_sequence(&lv, &seq, &[]).unwrap();
                let min = tr.polarization.iter().cloned().fold(1.0, f64::min);
                assert!(min > 0.98, "j={j} A={a} sigma={sigma} min={min}");
                assert!(min > prev);
                prev = min;
            }
            assert!(prev > 0.9998, "j={j} A={a} min={prev}");
        }
    }

    #[test]
    fn t1_only_decay_is_half_gamma() {
        let g = 1.0 / 58.0;
        for lv in [LevelStructure::two_level(5000.0, 0.0), reference_levels()] {
            let drive = DriveSpec::resonant(&lv, 1, 10.0);
            let mut seq = SequenceSpec::new(drive, vec![0.0, 30.0, 60.0]);
            seq.t1_rates = vec![g, 2.0 * g, 3.0 * g, 4.0 * g];
            seq.integrator = Integrator::SplitStep { step: Some(2e-3) };
            let tr = simulate_sequence(&lv, &seq, &[]).unwrap();
            let p = &tr.polarization;
            // Three equally spaced points fix rate and offset of an exponential.
            let rate = -((p[2] - p[1]) / (p[1] - p[0])).ln() / 30.0;
            assert!((rate / (0.5 * g) - 1.0).abs() < 0.05, "d={} rate {rate}", lv.num_levels());
        }
    }

    #[test]
    fn density_matrix_stays_physical() {
        let lv = reference_levels();
        let drive = DriveSpec::resonant(&lv, 2, 120.0);
        let mut seq = SequenceSpec::new(drive, vec![0.5, 1.0]);
        seq.t1_rates = vec![0.5, 1.0, 1.5, 2.0];
        let psd = NoisePsdSpec::boxcar(5.0, 1.0, 200.0);
        let opts = SynthesisOptions {
            duration: 1.0,
            fundamental: 0.5,
            ..Default::default()
        };
        let w = synthesize(&psd, &opts, 3).unwrap();
        let n = level_noise_series(&w, &CouplingModel::Direct { weights: vec![1.0, 2.0, 3.0, 4.0] }, 5).unwrap();
        let tr = simulate_sequence(&lv, &seq, &[n]).unwrap();
        for i in 0..tr.len() {
            let s = tr.pop_lower[i] + tr.pop_upper[i] + tr.pop_leak[i];
            assert!(s <= 1.0 + 1e-9);
            assert!((-1.0..=1.0).contains(&tr.polarization[i]));
        }
    }

    #[test]
    fn split_step_agrees_with_adaptive() {
        let lv = reference_levels();
        let drive = DriveSpec::resonant(&lv, 1, 80.0);
        let mut seq = SequenceSpec::new(drive, vec![0.1, 0.25]);
        seq.t1_rates = vec![0.2, 0.4, 0.6, 0.8];
        let psd = NoisePsdSpec::boxcar(40.0, 10.0, 100.0);
        let opts = SynthesisOptions {
            duration: 0.5,
            fundamental: 2.0,
            ..Default::default()
        };
        let w = synthesize(&psd, &opts, 11).unwrap();
        let n = level_noise_series(&w, &CouplingModel::Direct { weights: vec![1.0, 1.5, 2.0, 2.5] }, 5).unwrap();
        seq.integrator = Integrator::SplitStep { step: Some(2e-5) };
        let a = simulate_sequence(&lv, &seq, &[n.clone()]).unwrap();
        seq.integrator = Integrator::Adaptive { rtol: 1e-9 };
        let b = simulate_sequence(&lv, &seq, &[n]).unwrap();
        for i in 0..a.len() {
            assert!((a.pop_lower[i] - b.pop_lower[i]).abs() < 1e-5, "{a:?} {b:?}");
            assert!((a.pop_upper[i] - b.pop_upper[i]).abs() < 1e-5);
        }
    }

    fn ramp_leakage(lv: &LevelStructure, j: usize, a: f64, sigma_ns: f64) -> f64 {
        let drive = DriveSpec::resonant(lv, j, a);
        let d = lv.num_levels();
        let u = ramp_propagator(lv, &drive, sigma_ns * 1e-3, true).unwrap();
        let mut e0 = vec![C::new(0.0, 0.0); d];
        e0[0] = C::new(1.0, 0.0);
        let mut psi = vec![C::new(0.0, 0.0); d];
        u.mul(&prep_unitary(d, j)).apply(&e0, &mut psi);
        // Population outside the dressed pair after the ramp.
        let fr = dress(lv, &drive).unwrap();
        let v = &fr.basis_change;
        let mut inside = 0.0;
        for col in [j - 1, j] {
            let mut amp = C::new(0.0, 0.0);
            for k in 0..d {
                amp += psi[k] * v[(k, col)];
            }
            inside += amp.norm_sqr();
        }
        1.0 - inside
    }

    #[test]
    fn gaussian_edges_are_adiabatic() {
        let lv = reference_levels();
        for j in [1, 2] {
            for a in [25.0, 100.0, 200.0, 300.0] {
                let leak = ramp_leakage(&lv, j, a, 12.0);
                assert!(leak < 1e-3, "j={j} A={a} leak={leak}");
            }
        }
        let mut prev = 0.0;
        for s in [12.0, 6.0, 3.0, 1.5, 0.75] {
            let leak = ramp_leakage(&lv, 1, 250.0, s);
            assert!(leak >= prev, "sigma={s} leak={leak} prev={prev}");
            prev = leak;
        }
    }

    #[test]
    fn frozen_offset_tilts_lock_axis() {
        let lv = reference_levels();
        let (j, a, delta) = (1, 150.0, 2.0 * PI * 8.0);
        let drive = DriveSpec::resonant(&lv, j, a);
        let fr = dress(&lv, &drive).unwrap();
        let v = &fr.basis_change;
        // Offset on level j, projected into the dressed pair.
        let b = |p: usize, q: usize| delta * v[(j, p)] * v[(j, q)];
        let split = 2.0 * PI * fr.rabi + b(j, j) - b(j - 1, j - 1);
        let theta = (2.0 * b(j - 1, j)).atan2(split);
        let period = 1.0 / fr.rabi;
        let taus: Vec<f64> = (0..400).map(|i| i as f64 * period / 400.0 * 1.0).collect();
        let mut seq = SequenceSpec::new(drive, taus);
        seq.edge_sigma = 400.0;
        seq.integrator = Integrator::SplitStep { step: Some(2e-5) };
        let mut noise = LevelNoise::zeros(lv.num_levels(), 100.0, 200);
        noise.series[j].iter_mut().for_each(|x| *x = delta);
        let tr = simulate_sequence(&lv, &seq, &[noise]).unwrap();
        let min = tr.polarization.iter().cloned().fold(f64::INFINITY, f64::min);
        let want = (2.0 * theta).cos();
        assert!((min - want).abs() < 2e-3, "min {min} want {want} theta {theta}");
    }

    #[test]
    fn stderr_scales_with_ensemble() {
        let lv = reference_levels();
        let drive = DriveSpec::resonant(&lv, 1, 20.0);
        let psd = NoisePsdSpec::boxcar(2.0, 5.0, 40.0);
        let opts = SynthesisOptions {
            duration: 1.0,
            fundamental: 0.05,
            ..Default::default()
        };
        let model = CouplingModel::Direct { weights: vec![1.0; 4] };
        let run = |n: usize| {
            let mut seq = SequenceSpec::new(drive, vec![1.0]);
            seq.ensemble = n;
            seq.integrator = Integrator::SplitStep { step: Some(1e-3) };
            simulate_sequence_with(&lv, &seq, |r| {
                let w = synthesize(&psd, &opts, r as u64)?;
                Ok(Some(level_noise_series(&w, &model, 5)?))
            })
            .unwrap()
            .stderr[0]
        };
        let ratio = run(100) / run(400);
        assert!((ratio - 2.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn deterministic_reduction() {
        let lv = reference_levels();
        let drive = DriveSpec::resonant(&lv, 1, 20.0);
        let psd = NoisePsdSpec::boxcar(2.0, 5.0, 40.0);
        let opts = SynthesisOptions {
            duration: 0.5,
            fundamental: 0.1,
            ..Default::default()
        };
        let model = CouplingModel::Direct { weights: vec![1.0; 4] };
        let mut seq = SequenceSpec::new(drive, vec![0.25, 0.5]);
        seq.ensemble = 16;
        let go = || {
            simulate_sequence_with(&lv, &seq, |r| {
                let w = synthesize(&psd, &opts, r as u64)?;
                Ok(Some(level_noise_series(&w, &model, 5)?))
            })
            .unwrap()
        };
        assert_eq!(go().to_csv(), go().to_csv());
    }

    #[test]
    fn rejects_bad_input() {
        let lv = reference_levels();
        let drive = DriveSpec::resonant(&lv, 1, 20.0);
        let mut seq = SequenceSpec::new(drive, vec![1.0, 0.5]);
        assert!(simulate_sequence(&lv, &seq, &[]).is_err());
        seq.durations = vec![1.0];
        let short = LevelNoise::zeros(5, 100.0, 10);
        assert!(matches!(
            simulate_sequence(&lv, &seq, &[short]),
            Err(QnsError::NoiseTooShort { .. })
        ));
        seq.ensemble = 3;
        assert!(simulate_sequence(&lv, &seq, &[LevelNoise::zeros(5, 100.0, 1000)]).is_err());
    }
}
