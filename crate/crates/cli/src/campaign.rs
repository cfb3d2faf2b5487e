//! Campaign execution: one presence/absence pair per (target, grid point),
//! then extraction, correction and optional source separation.

use std::collections::BTreeMap;

use qns_core::dressing::{amplitude_for_rabi, effective_t1, t1_ladder};
use qns_core::dynamics::{simulate_sequence, simulate_sequence_with, DecayTrace, SequenceSpec};
use qns_core::noise::synth::{synthesize, SynthesisOptions, DEFAULT_OVERSAMPLING};
use qns_core::noise::{level_noise_series, CouplingModel, LevelNoise, NoisePsdSpec};
use qns_core::reconstruction::fit::FitErrors;
use qns_core::reconstruction::{
    correct_estimate, discriminate_sources_jackknife, extract_transverse_psd, fit_decay, fit_replicates, PsdEstimate,
    RelaxationFit, SourceComponents, TransverseEstimate,
};
use qns_core::{dress, solve_levels, DressedFrame, DriveSpec, LevelStructure};
use serde::{Deserialize, Serialize};

use crate::config::{CampaignConfig, Grid};
use crate::error::{CliError, Result};

/// Realizations per (point, source) block in the seed layout.
const SEED_STRIDE: u64 = 1 << 32;
/// Extra record length beyond the longest duration (μs).
const RECORD_MARGIN: f64 = 0.01;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses all cores.
    pub workers: Option<usize>,
    pub seed_offset: u64,
}

/// Seed of realization `r` of source `s` at grid point `p`. Independent of
/// the target so the two transitions see the same records.
pub fn realization_seed(base: u64, offset: u64, point: usize, source: usize, num_sources: usize, r: usize) -> u64 {
    let block = (point * num_sources.max(1) + source) as u64;
    base.wrapping_add(offset)
        .wrapping_add(block.wrapping_mul(SEED_STRIDE))
        .wrapping_add(r as u64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointResult {
    pub target: usize,
    pub index: usize,
    pub amplitude: f64,
    pub omega_naive: f64,
    pub omega: f64,
    /// Predicted presence decay rate used to size the τ grid (1/μs).
    pub expected_rate: f64,
    pub presence_durations: Vec<f64>,
    pub absence_durations: Vec<f64>,
    pub first_seed: u64,
    pub presence_spec_hash: Option<String>,
    pub absence_spec_hash: Option<String>,
    pub presence: Option<RelaxationFit>,
    pub absence: Option<RelaxationFit>,
    /// `false` when no background relaxation exists and Γ_abs = 0 exactly.
    pub absence_simulated: bool,
    pub estimate: Option<TransverseEstimate>,
    pub error: Option<String>,
    #[serde(skip)]
    pub presence_trace: Option<DecayTrace>,
    #[serde(skip)]
    pub absence_trace: Option<DecayTrace>,
    #[serde(skip)]
    pub frame: Option<DressedFrame>,
    /// Estimates from the jackknife replicates of the presence trace.
    #[serde(skip)]
    pub replicates: Vec<TransverseEstimate>,
}

#[derive(Debug, Clone)]
pub struct CampaignResult {
    pub config: CampaignConfig,
    pub seed_offset: u64,
    pub levels: LevelStructure,
    pub points: Vec<PointResult>,
    pub estimates: BTreeMap<usize, PsdEstimate>,
    pub discrimination: Option<SourceComponents>,
    pub discrimination_ratio: Option<f64>,
    /// Campaign-level failures that did not stop the run.
    pub warnings: Vec<String>,
}

struct Source {
    psd: NoisePsdSpec,
    coupling: CouplingModel,
    weights: Vec<f64>,
}

struct Context<'a> {
    cfg: &'a CampaignConfig,
    levels: &'a LevelStructure,
    sources: Vec<Source>,
    gamma1: Vec<f64>,
    sample_rate: Option<f64>,
    seed_offset: u64,
}

/// Run every point of the campaign. Module errors are recorded per point.
pub fn execute(cfg: &CampaignConfig, opts: &RunOptions) -> Result<CampaignResult> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.workers {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder.build().map_err(|e| CliError::Pool(e.to_string()))?;
    pool.install(|| execute_inner(cfg, opts))
}

fn execute_inner(cfg: &CampaignConfig, opts: &RunOptions) -> Result<CampaignResult> {
    let levels = solve_levels(&cfg.sensor)?;
    let d = levels.num_levels();
    let mut sources = Vec::new();
    for s in &cfg.noise_sources {
        let coupling = s.coupling(&levels);
        let weights = coupling.level_weights(d)?;
        sources.push(Source {
            psd: s.psd(),
            coupling,
            weights,
        });
    }
    let sample_rate = cfg.synthesis.sample_rate.or_else(|| {
        sources
            .iter()
            .filter(|s| !s.psd.is_zero())
            .map(|s| DEFAULT_OVERSAMPLING * s.psd.default_cutoffs().1)
            .reduce(f64::max)
    });
    let gamma1 = if cfg.t1_rates.iter().any(|&g| g > 0.0) {
        t1_ladder(&cfg.t1_rates, d)
    } else {
        Vec::new()
    };
    let ctx = Context {
        cfg,
        levels: &levels,
        sources,
        gamma1,
        sample_rate,
        seed_offset: opts.seed_offset,
    };

    let grid = cfg.grid();
    let span_rates = shared_span_rates(&ctx, &grid);
    let mut points = Vec::new();
    let mut estimates = BTreeMap::new();
    let mut replicate_estimates: BTreeMap<usize, Vec<PsdEstimate>> = BTreeMap::new();
    let mut warnings = Vec::new();
    let reference = reference_coupling(cfg, &levels);
    let build = |target: usize, raw: &[(f64, TransverseEstimate)], frames: &[DressedFrame]| {
        PsdEstimate::naive(&levels, &reference, target, raw)
            .and_then(|n| correct_estimate(&n, frames, &levels, &reference))
            .map(|e| e.in_units(cfg.display_units))
    };
    for &target in &cfg.target_pairs {
        let mut raw = Vec::new();
        let mut frames = Vec::new();
        let mut reps: Vec<Vec<TransverseEstimate>> = Vec::new();
        for p in 0..grid.len() {
            let res = run_point(&ctx, &grid, target, p, span_rates.as_ref().map(|r| r[p]));
            if let (Some(e), Some(f)) = (res.estimate, res.frame.clone()) {
                raw.push((res.amplitude, e));
                frames.push(f);
                reps.push(res.replicates.clone());
            }
            points.push(res);
        }
        if raw.is_empty() {
            warnings.push(format!("target {target}: no successful points"));
            continue;
        }
        match build(target, &raw, &frames) {
            Ok(e) => {
                estimates.insert(target, e);
            }
            Err(e) => warnings.push(format!("target {target}: {e}")),
        }
        let groups = reps.first().map_or(0, Vec::len);
        if groups >= 2 && reps.iter().all(|r| r.len() == groups) {
            let per_group: Option<Vec<PsdEstimate>> = (0..groups)
                .map(|g| {
                    let raw_g: Vec<(f64, TransverseEstimate)> =
                        raw.iter().zip(&reps).map(|((a, _), r)| (*a, r[g])).collect();
                    build(target, &raw_g, &frames).ok()
                })
                .collect();
            if let Some(v) = per_group {
                replicate_estimates.insert(target, v);
            }
        }
    }

    let mut discrimination = None;
    let mut discrimination_ratio = None;
    if let Some(dc) = &cfg.discrimination {
        let r = dc.ratio.unwrap_or_else(|| photon_flux_ratio(cfg, &levels));
        discrimination_ratio = Some(r);
        let paired: Vec<(PsdEstimate, PsdEstimate)> = match (replicate_estimates.get(&1), replicate_estimates.get(&2)) {
            (Some(a), Some(b)) if a.len() == b.len() => a.iter().cloned().zip(b.iter().cloned()).collect(),
            _ => Vec::new(),
        };
        match (estimates.get(&1), estimates.get(&2)) {
            (Some(a), Some(b)) => match discriminate_sources_jackknife(a, b, r, &paired) {
                Ok(c) => discrimination = Some(c),
                Err(e) => warnings.push(format!("discrimination: {e}")),
            },
            _ => warnings.push("discrimination: missing estimate for pair 1 or 2".into()),
        }
    }

    Ok(CampaignResult {
        config: cfg.clone(),
        seed_offset: opts.seed_offset,
        levels,
        points,
        estimates,
        discrimination,
        discrimination_ratio,
        warnings,
    })
}

/// With discrimination on a frequency grid, pairs 1 and 2 share one τ grid
/// per point, sized by the faster of their predicted rates, so both see the
/// same noise records over the same durations.
fn shared_span_rates(ctx: &Context, grid: &Grid) -> Option<Vec<f64>> {
    let cfg = ctx.cfg;
    if cfg.discrimination.is_none() || !matches!(grid, Grid::Frequency(_)) {
        return None;
    }
    let pairs: Vec<usize> = cfg.target_pairs.iter().copied().filter(|t| *t == 1 || *t == 2).collect();
    if pairs.len() < 2 {
        return None;
    }
    (0..grid.len())
        .map(|p| {
            pairs
                .iter()
                .map(|&t| predict(ctx, grid, t, p).ok().map(|x| x.2))
                .try_fold(0.0f64, |m, r| r.map(|r| m.max(r)))
        })
        .collect()
}

/// Coupling that refers `s_lab` back to the lab-frame record.
pub fn reference_coupling(cfg: &CampaignConfig, levels: &LevelStructure) -> CouplingModel {
    match cfg.reference_source {
        Some(i) => cfg.noise_sources[i].coupling(levels),
        None => CouplingModel::Flux {
            flux_sens: levels.flux_sens.clone(),
        },
    }
}

/// `r` of the two-source model for flux-referred spectra:
/// `(χ¹²/χ⁰¹)²·(∂ω⁰¹/∂Φ / ∂ω¹²/∂Φ)²`.
pub fn photon_flux_ratio(cfg: &CampaignConfig, levels: &LevelStructure) -> f64 {
    let chi = cfg
        .noise_sources
        .iter()
        .find_map(|s| match s {
            crate::config::NoiseSource::Photon { photon } => Some(photon.chi.clone()),
            _ => None,
        })
        .unwrap_or_else(|| levels.dispersive_shifts.clone());
    let s1 = levels.level_sens(1) - levels.level_sens(0);
    let s2 = levels.level_sens(2) - levels.level_sens(1);
    (chi[1] / chi[0]).powi(2) * (s1 / s2).powi(2)
}

fn failed(mut res: PointResult, e: impl std::fmt::Display) -> PointResult {
    res.error = Some(e.to_string());
    res
}

/// Drive amplitude, dressed frame and predicted presence decay rate of one
/// grid point.
fn predict(ctx: &Context, grid: &Grid, target: usize, p: usize) -> Result<(f64, DressedFrame, f64)> {
    let levels = ctx.levels;
    let amplitude = match grid {
        Grid::Amplitude(a) => a[p],
        Grid::Frequency(f) => {
            let max_amp = 2.0 * f[p] / levels.drive_ratios[target - 1] + 20.0;
            amplitude_for_rabi(levels, target, f[p], max_amp)?
        }
    };
    let frame = dress(levels, &DriveSpec::resonant(levels, target, amplitude))?;
    let t1_rate = if ctx.gamma1.is_empty() {
        0.0
    } else {
        0.5 * effective_t1(&frame, &ctx.gamma1)
    };
    let noise_rate: f64 = ctx
        .sources
        .iter()
        .map(|s| {
            let t = frame.transverse(&s.weights);
            2.0 * t * t * s.psd.eval(frame.rabi)
        })
        .sum();
    Ok((amplitude, frame, noise_rate + t1_rate))
}

/// `span_rate` sizes the τ grid in place of the point's own predicted rate.
fn run_point(ctx: &Context, grid: &Grid, target: usize, p: usize, span_rate: Option<f64>) -> PointResult {
    let cfg = ctx.cfg;
    let levels = ctx.levels;
    let lambda = levels.drive_ratios[target - 1];
    let mut res = PointResult {
        target,
        index: p,
        amplitude: f64::NAN,
        omega_naive: f64::NAN,
        omega: f64::NAN,
        expected_rate: f64::NAN,
        presence_durations: Vec::new(),
        absence_durations: Vec::new(),
        first_seed: realization_seed(cfg.seeds.base, ctx.seed_offset, p, 0, ctx.sources.len(), 0),
        presence_spec_hash: None,
        absence_spec_hash: None,
        presence: None,
        absence: None,
        absence_simulated: false,
        estimate: None,
        error: None,
        presence_trace: None,
        absence_trace: None,
        frame: None,
        replicates: Vec::new(),
    };
    let (amplitude, frame, rate) = match predict(ctx, grid, target, p) {
        Ok(x) => x,
        Err(e) => return failed(res, e),
    };
    res.amplitude = amplitude;
    res.omega_naive = lambda * amplitude;
    res.omega = frame.rabi;
    res.expected_rate = rate;
    let drive = DriveSpec::resonant(levels, target, amplitude);
    res.frame = Some(frame);

    let mut seq = SequenceSpec::new(drive, cfg.durations.grid(span_rate.unwrap_or(res.expected_rate)));
    seq.edge_sigma = cfg.edge_sigma;
    seq.ensemble = cfg.ensemble;
    seq.t1_rates = ctx.gamma1.clone();
    seq.integrator = cfg.integrator.clone();
    res.presence_durations = seq.durations.clone();
    res.presence_spec_hash = Some(seq.hash());

    let active: Vec<&Source> = ctx.sources.iter().filter(|s| !s.psd.is_zero()).collect();
    let span = *seq.durations.last().unwrap_or(&0.0) + RECORD_MARGIN;
    let synth = SynthesisOptions {
        duration: span,
        fundamental: cfg.synthesis.fundamental.min(1.0 / span),
        cutoffs: None,
        sample_rate: ctx.sample_rate,
        rayleigh: cfg.synthesis.rayleigh,
    };
    let n_src = ctx.sources.len();
    let d = levels.num_levels();
    let trace = if active.is_empty() {
        seq.ensemble = 1;
        simulate_sequence(levels, &seq, &[])
    } else {
        simulate_sequence_with(levels, &seq, |r| {
            let mut total: Option<LevelNoise> = None;
            for (si, s) in ctx.sources.iter().enumerate() {
                if s.psd.is_zero() {
                    continue;
                }
                let seed = realization_seed(cfg.seeds.base, ctx.seed_offset, p, si, n_src, r);
                let w = synthesize(&s.psd, &synth, seed)?;
                let ln = level_noise_series(&w, &s.coupling, d)?;
                match &mut total {
                    None => total = Some(ln),
                    Some(t) => t.add(&ln)?,
                }
            }
            Ok(total)
        })
    };
    let trace = match trace {
        Ok(t) => t,
        Err(e) => return failed(res, e),
    };
    let pres = match fit_decay(&trace) {
        Ok(f) => f,
        Err(e) => return failed(res, e),
    };
    res.presence_trace = Some(trace);
    res.presence = Some(pres.clone());

    let abs = if ctx.gamma1.is_empty() {
        res.absence_durations = Vec::new();
        RelaxationFit {
            target,
            gamma_1rho: 0.0,
            sz_eq: 0.0,
            amplitude: 0.0,
            offset: 0.0,
            stderr: FitErrors::default(),
            chi2_reduced: 0.0,
            rate_unresolved: true,
            evaluations: 0,
        }
    } else {
        let t1_rate = res.frame.as_ref().map_or(0.0, |f| 0.5 * effective_t1(f, &ctx.gamma1));
        let mut aseq = SequenceSpec::new(drive, cfg.absence_durations.grid(t1_rate));
        aseq.edge_sigma = cfg.edge_sigma;
        aseq.ensemble = 1;
        aseq.t1_rates = ctx.gamma1.clone();
        aseq.integrator = cfg.integrator.clone();
        res.absence_durations = aseq.durations.clone();
        res.absence_spec_hash = Some(aseq.hash());
        res.absence_simulated = true;
        let t = match simulate_sequence(levels, &aseq, &[]) {
            Ok(t) => t,
            Err(e) => return failed(res, e),
        };
        let f = match fit_decay(&t) {
            Ok(f) => f,
            Err(e) => return failed(res, e),
        };
        res.absence_trace = Some(t);
        f
    };
    res.absence = Some(abs.clone());
    match extract_transverse_psd(&pres, &abs) {
        Ok(e) => res.estimate = Some(e),
        Err(e) => return failed(res, e),
    }
    if let Some(fits) = res.presence_trace.as_ref().and_then(fit_replicates) {
        res.replicates = fits.iter().filter_map(|f| extract_transverse_psd(f, &abs).ok()).collect();
    }
    res
}

impl CampaignResult {
    pub fn failures(&self) -> Vec<&PointResult> {
        self.points.iter().filter(|p| p.error.is_some()).collect()
    }

    /// Per-point summary table.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from(
            "target,point,A_drive_MHz,omega_naive_MHz,omega_MHz,expected_rate_per_us,gamma_presence,gamma_presence_sigma,sz_presence,sz_presence_sigma,gamma_absence,gamma_absence_sigma,S_transverse_per_us,S_transverse_sigma,status\n",
        );
        for p in &self.points {
            let (gp, gps, sz, szs) = p.presence.as_ref().map_or((f64::NAN, f64::NAN, f64::NAN, f64::NAN), |f| {
                (f.gamma_1rho, f.stderr.gamma_1rho, f.sz_eq, f.stderr.sz_eq)
            });
            let (ga, gas) = p
                .absence
                .as_ref()
                .map_or((f64::NAN, f64::NAN), |f| (f.gamma_1rho, f.stderr.gamma_1rho));
            let (sv, ss) = p.estimate.map_or((f64::NAN, f64::NAN), |e| (e.value, e.sigma));
            let status = match &p.error {
                Some(e) => format!("error: {}", e.replace([',', '\n'], ";")),
                None => "ok".into(),
            };
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                p.target, p.index, p.amplitude, p.omega_naive, p.omega, p.expected_rate, gp, gps, sz, szs, ga, gas, sv, ss, status
            ));
        }
        s
    }
}
