use qns_core::dynamics::simulate_sequence_with;
use qns_core::noise::{level_noise_series, synthesize, CouplingModel, SynthesisOptions};
use qns_core::reconstruction::{PsdEstimate, RelaxationFit};
use qns_core::{
    correct_estimate, dress, extract_transverse_psd, fit_decay, solve_levels, DriveSpec, NoisePsdSpec,
    SequenceSpec, TransmonSpec,
};

fn no_absence(target: usize) -> RelaxationFit {
    RelaxationFit {
        target,
        gamma_1rho: 0.0,
        sz_eq: 0.0,
        amplitude: 0.0,
        offset: 0.0,
        stderr: Default::default(),
        chi2_reduced: 0.0,
        rate_unresolved: true,
        evaluations: 0,
    }
}

#[test]
fn flat_flux_spectrum_is_recovered() {
    let lv = solve_levels(&TransmonSpec::reference()).unwrap();
    let d = lv.num_levels();
    let coupling = CouplingModel::Flux { flux_sens: lv.flux_sens.clone() };
    let c = coupling.level_weights(d).unwrap();
    let target = 1;
    let t0 = 0.5 * (c[target] - c[target - 1]).abs();
    let level = 1.0 / (2.0 * t0 * t0);
    let psd = NoisePsdSpec::boxcar(level, 2.0, 30.0);

    let amplitudes = [8.0, 16.0];
    let mut raw = Vec::new();
    let mut frames = Vec::new();
    for (i, &a) in amplitudes.iter().enumerate() {
        let drive = DriveSpec::resonant(&lv, target, a);
        frames.push(dress(&lv, &drive).unwrap());
        let mut seq = SequenceSpec::new(drive, (1..=12).map(|k| 0.25 * k as f64).collect());
        seq.ensemble = 400;
        let synth = SynthesisOptions {
            duration: 3.2,
            fundamental: 0.25,
            rayleigh: true,
            ..Default::default()
        };
        let trace = simulate_sequence_with(&lv, &seq, |r| {
            let w = synthesize(&psd, &synth, 10_000 * i as u64 + r as u64)?;
            level_noise_series(&w, &coupling, d).map(Some)
        })
        .unwrap();
        let fit = fit_decay(&trace).unwrap();
        raw.push((a, extract_transverse_psd(&fit, &no_absence(target)).unwrap()));
    }

    let naive = PsdEstimate::naive(&lv, &coupling, target, &raw).unwrap();
    let corrected = correct_estimate(&naive, &frames, &lv, &coupling).unwrap();
    for p in &corrected.points {
        let err = (p.s_lab - level).abs();
        assert!(err < 4.0 * p.sigma && err < 0.2 * level, "{p:?} vs {level}");
        assert!(p.omega_corrected > 0.0 && p.transduction > 0.0);
    }
}
