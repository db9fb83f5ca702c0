//! End-to-end runs behind the command-line tool. Each run is a pure function
//! of the configuration (including its seed) and returns its outputs as
//! in-memory artifacts.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde_json::json;

use crate::analysis::{
    angular_basis_scan, basis_seed, bell_minus, bell_visibility_flag, bootstrap_errors, calibrate_white_noise, chsh,
    chsh_expected_counts, fit_visibility, sample_chsh_counts, sample_tomography_counts, tomography_expected_counts,
    tomography_linear, AngularExperiment, AngularSource, BasisScan, ScanOptions, VisibilityResult, TOMOGRAPHY_SETTINGS,
    WITNESS_BASES,
};
use crate::config::{ExperimentConfig, ResolvedConfig};
use crate::error::{Error, Result};
use crate::io::{count_table_csv, histogram_csv, pgm_bytes, Artifact, ArtifactKind, CountRow};
use crate::measurement::{coincidence_prob, expected_heralded_image, sample_image, AnalyzerSetting};
use crate::pump::{input_polarization, prepare_pump_from, SagnacConfig};
use crate::quantum::{fidelity, Ket, PolBasis};
use crate::report::{AnalysisReport, BootstrapInfo, Estimate, MatrixJson, PetalSummary};
use crate::rng;
use crate::spatial::{angular_profile, find_maxima, petal_fit, render_projection, ModeTable};
use crate::spdc::{down_convert, TwoPhotonState};

/// Analyzer angles of a fringe sweep: 36 steps of 5 degrees.
pub const SWEEP_STEPS: usize = 36;

pub const GALLERY_BASES: [PolBasis; 6] = [
    PolBasis::H,
    PolBasis::A,
    PolBasis::R,
    PolBasis::V,
    PolBasis::D,
    PolBasis::L,
];

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: AnalysisReport,
    /// Always ends with `report.json`.
    pub artifacts: Vec<Artifact>,
}

fn finish(report: AnalysisReport, mut artifacts: Vec<Artifact>) -> Result<RunOutput> {
    artifacts.push(Artifact::new(
        "report",
        ArtifactKind::Json,
        report.to_json()?.into_bytes(),
    ));
    Ok(RunOutput { report, artifacts })
}

fn pump_for(r: &ResolvedConfig, l: i32) -> Result<Ket> {
    let cfg = SagnacConfig::with_window(l, r.pump.phi, r.pump.oam_window)?;
    prepare_pump_from(&cfg, &input_polarization(r.pump.alpha)?)
}

fn noiseless_pair(cfg: &ExperimentConfig, r: &ResolvedConfig, l: i32) -> Result<TwoPhotonState> {
    down_convert(&pump_for(r, l)?, &cfg.crystal_config()?)
}

fn parameters(r: &ResolvedConfig, extra: serde_json::Value) -> Result<serde_json::Value> {
    let mut v = serde_json::to_value(r)?;
    if let (Some(m), serde_json::Value::Object(e)) = (v.as_object_mut(), extra) {
        m.extend(e);
    }
    Ok(v)
}

/// Polarization-projected pump images for the six analyzer states plus the
/// unprojected beam.
pub fn pump_gallery(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let r = cfg.resolved()?;
    let l = r.pump.l;
    let pump = pump_for(&r, l)?;
    let grid = r.grid()?;
    let annulus = (r.annulus[0], r.annulus[1]);
    let mut report = AnalysisReport::new("pump-gallery", r.seed(), false, parameters(&r, json!({}))?);
    let mut artifacts = Vec::new();
    let projections: Vec<(String, Option<Ket>)> = GALLERY_BASES
        .iter()
        .map(|b| (b.name().to_string(), Some(b.ket())))
        .chain(std::iter::once(("unprojected".to_string(), None)))
        .collect();
    for (name, pol) in projections {
        let img = render_projection(&pump, pol.as_ref(), &grid, r.waist)?;
        let hist = angular_profile(&img, r.nbins, annulus)?;
        let fit = if l != 0 {
            Some(petal_fit(&hist, l.unsigned_abs())?)
        } else {
            None
        };
        report.petals.insert(
            name.clone(),
            PetalSummary {
                null_projection: img.meta.null_projection,
                theta0_deg: fit.and_then(|f| f.theta0).map(f64::to_degrees),
                visibility: fit.map_or(0.0, |f| f.visibility),
                maxima_deg: find_maxima(&hist).into_iter().map(f64::to_degrees).collect(),
            },
        );
        artifacts.push(Artifact::new(
            &format!("pump_l{l}_{name}"),
            ArtifactKind::Pgm,
            pgm_bytes(&img),
        ));
    }
    finish(report, artifacts)
}

fn sample_or_keep(mean: f64, seed: u64, stream: u64, sampled: bool) -> Result<f64> {
    if sampled {
        Ok(rng::poisson(&mut rng::stream(seed, stream), mean)? as f64)
    } else {
        Ok(mean)
    }
}

/// Polarization entanglement of the Gaussian-pumped source: fringe
/// visibilities in the H and D idler bases, CHSH, and linear tomography.
pub fn polarization_bell(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let r = cfg.resolved()?;
    let sampled = !r.expectation_only;
    let seed = r.seed();
    let det = &r.detector;
    let state = noiseless_pair(cfg, &r, 0)?.apply_noise(r.noise.p_white, r.noise.space.into())?;
    let mut report = AnalysisReport::new("polarization-bell", seed, sampled, parameters(&r, json!({}))?);
    let mut rows = Vec::new();

    for idler in [PolBasis::H, PolBasis::D] {
        let s = rng::derive_seed(seed, rng::tag(&format!("sweep:{idler}")));
        let mut series = Vec::with_capacity(SWEEP_STEPS);
        for k in 0..SWEEP_STEPS {
            let t = k as f64 * PI / SWEEP_STEPS as f64;
            let p = coincidence_prob(
                &state,
                &AnalyzerSetting::for_basis(idler),
                &AnalyzerSetting::linear(t),
                None,
            )?;
            let n = sample_or_keep(det.expected_counts(p, 0)?, s, k as u64, sampled)?;
            rows.push(CountRow {
                setting_id: format!("sweep-{idler}-{k:02}"),
                idler_basis: idler.name().into(),
                signal: format!("lin:{}", t.to_degrees()),
                counts: n,
            });
            series.push((t, n));
        }
        report
            .visibilities
            .insert(idler.name().into(), fit_visibility(&series)?);
    }

    let settings = r.chsh_settings()?;
    let expected = chsh_expected_counts(&state, &settings, det)?;
    let counts = if sampled {
        sample_chsh_counts(&expected, rng::derive_seed(seed, rng::tag("chsh")))?
    } else {
        expected
    };
    let table = settings.table();
    for (i, row) in counts.iter().enumerate() {
        for (j, &n) in row.iter().enumerate() {
            let (a, b) = table[i][j];
            rows.push(CountRow {
                setting_id: format!("chsh-{i}{j}"),
                idler_basis: format!("lin:{}", (2.0 * a.hwp).to_degrees()),
                signal: format!("lin:{}", (2.0 * b.hwp).to_degrees()),
                counts: n,
            });
        }
    }
    let (s_val, s_sigma) = chsh(&counts)?;
    report.chsh = Some(Estimate {
        value: s_val,
        sigma: Some(s_sigma),
    });

    let expected = tomography_expected_counts(&state, det)?;
    let counts = if sampled {
        sample_tomography_counts(&expected, rng::derive_seed(seed, rng::tag("tomography")))?
    } else {
        expected
    };
    for (k, &(i, s)) in TOMOGRAPHY_SETTINGS.iter().enumerate() {
        rows.push(CountRow {
            setting_id: format!("tomo-{i}{s}"),
            idler_basis: i.name().into(),
            signal: s.name().into(),
            counts: counts[k],
        });
    }
    let rho = tomography_linear(&counts)?;
    report.fidelity = Some(fidelity(&rho, &bell_minus())?);
    report.density_matrix = Some(MatrixJson::from(&rho));
    let v = |k: &str| report.visibilities[k].visibility;
    report.bell_visibility_flag = Some(bell_visibility_flag(v("H"), v("D")));

    let artifacts = vec![Artifact::new("bell_counts", ArtifactKind::Csv, count_table_csv(&rows)?)];
    finish(report, artifacts)
}

fn scan_statistics(scan: &BasisScan) -> Result<Vec<f64>> {
    let w = scan.witness()?;
    Ok(vec![w.witness(), w.v_da.visibility, w.v_rl.visibility])
}

/// Expected witness of the image pipeline as a function of the white-noise
/// weight, for calibration.
pub fn expected_witness(
    base: &TwoPhotonState,
    exp: &AngularExperiment,
    p: f64,
    space: crate::spdc::NoiseSpace,
) -> Result<f64> {
    let state = base.apply_noise(p, space)?;
    Ok(exp.for_state(&state)?.expected_scan()?.witness()?.witness())
}

/// Hybrid entanglement witness from heralded coincidence images.
pub fn hybrid_witness(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let r = cfg.resolved()?;
    let l = r.pump.l.unsigned_abs();
    if !(1..=3).contains(&l) {
        return Err(Error::InvalidParameter(format!(
            "hybrid witness needs 1 <= |l| <= 3, got {}",
            r.pump.l
        )));
    }
    let sampled = !r.expectation_only;
    let seed = r.seed();
    let det = &r.detector;
    let space = r.noise.space.into();
    let grid = r.grid()?;
    let opts = ScanOptions {
        nbins: r.nbins,
        source: AngularSource::Image {
            grid,
            waist: r.waist,
            annulus: (r.annulus[0], r.annulus[1]),
        },
        signal: AnalyzerSetting::for_basis(r.signal_basis),
        sampled,
    };
    let base = noiseless_pair(cfg, &r, r.pump.l)?;
    let probe = AngularExperiment::new(&base, l, &WITNESS_BASES, det, &opts)?;
    let p_white = match r.noise.target_witness {
        Some(target) => calibrate_white_noise(target, |p| expected_witness(&base, &probe, p, space))?,
        None => r.noise.p_white,
    };
    let state = base.apply_noise(p_white, space)?;
    let exp = probe.for_state(&state)?;

    let (scan, images) = if sampled {
        exp.sampled(seed)?
    } else {
        let imgs = exp.expected_images().into_iter().map(|(b, i)| (b, i.clone())).collect();
        (exp.expected_scan()?, imgs)
    };
    let table = ModeTable::new(grid, r.waist, state.signal_alphabet())?;
    let mixed = expected_heralded_image(&state, None, &opts.signal, &table, det)?;
    let mixed = if sampled {
        sample_image(&mixed, basis_seed(seed, PolBasis::H) ^ 1)?
    } else {
        mixed
    };

    let parts = scan.witness()?;
    let (w_sigma, boot) = if sampled && r.n_bootstrap >= 1 {
        let stats = bootstrap_errors(r.n_bootstrap, seed, |s| scan_statistics(&exp.sampled_scan(s)?))?;
        (stats.sigma, Some(stats.n_iter))
    } else {
        (None, None)
    };
    let sigma = |k: usize| w_sigma.as_ref().map(|s| s[k]);

    let extra = json!({ "p_white_used": p_white, "petal_anchor_deg": parts.anchor.to_degrees() });
    let mut report = AnalysisReport::new("hybrid-witness", seed, sampled, parameters(&r, extra)?);
    report.witness = Some(Estimate {
        value: parts.witness(),
        sigma: sigma(0),
    });
    let with_err = |v: VisibilityResult, s: Option<f64>| VisibilityResult { stderr: s, ..v };
    report.visibilities.insert("DA".into(), with_err(parts.v_da, sigma(1)));
    report.visibilities.insert("RL".into(), with_err(parts.v_rl, sigma(2)));
    report.bootstrap = boot.map(|n| BootstrapInfo {
        n_iter: n,
        statistics: vec!["witness".into(), "DA".into(), "RL".into()],
    });

    let mut artifacts = Vec::new();
    let mut petals = BTreeMap::new();
    for (b, img) in &images {
        artifacts.push(Artifact::new(
            &format!("herald_l{l}_{b}"),
            ArtifactKind::Pgm,
            pgm_bytes(img),
        ));
    }
    artifacts.push(Artifact::new(
        &format!("herald_l{l}_mixed"),
        ArtifactKind::Pgm,
        pgm_bytes(&mixed),
    ));
    for (b, entry) in &scan.entries {
        artifacts.push(Artifact::new(
            &format!("hist_l{l}_{b}"),
            ArtifactKind::Csv,
            histogram_csv(&entry.hist)?,
        ));
        petals.insert(
            b.name().to_string(),
            PetalSummary {
                null_projection: false,
                theta0_deg: entry.fit.theta0.map(f64::to_degrees),
                visibility: entry.fit.visibility,
                maxima_deg: find_maxima(&entry.hist).into_iter().map(f64::to_degrees).collect(),
            },
        );
    }
    report.petals = petals;
    finish(report, artifacts)
}

/// Expected-value witness on the analytic histograms, for quick checks.
pub fn analytic_witness(state: &TwoPhotonState, l: u32, nbins: usize) -> Result<f64> {
    let det = crate::measurement::DetectorModel::default();
    Ok(
        angular_basis_scan(state, l, &WITNESS_BASES, &det, &ScanOptions::analytic(nbins))?
            .witness()?
            .witness(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::read_pgm;

    fn config(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(text).unwrap()
    }

    #[test]
    fn gallery_petal_counts() {
        let out = pump_gallery(&config(r#"{"pump": {"l": 1}, "grid": {"n": 128}}"#)).unwrap();
        assert_eq!(out.artifacts.len(), 8);
        assert_eq!(out.report.petals["D"].maxima_deg.len(), 2);
        assert_eq!(out.report.petals["H"].maxima_deg.len(), 0);
        let out = pump_gallery(&config(r#"{"pump": {"l": 3}, "grid": {"n": 128}}"#)).unwrap();
        assert_eq!(out.report.petals["D"].maxima_deg.len(), 6);
    }

    #[test]
    fn gaussian_gallery_images_coincide() {
        let out = pump_gallery(&config(r#"{"pump": {"l": 0}, "grid": {"n": 64}}"#)).unwrap();
        // the l = 0 pump is diagonal, so the A projection is empty
        assert!(out.report.petals["A"].null_projection);
        let images: Vec<_> = out
            .artifacts
            .iter()
            .filter(|a| a.kind == ArtifactKind::Pgm && a.name != "pump_l0_A.pgm")
            .map(|a| read_pgm(&a.bytes).unwrap().3)
            .collect();
        assert_eq!(images.len(), 6);
        for img in &images[1..] {
            let diff = img.iter().zip(&images[0]).map(|(a, b)| a.abs_diff(*b)).max().unwrap();
            assert!(diff <= 1, "{diff}");
        }
    }

    #[test]
    fn ideal_bell_report() {
        let out = polarization_bell(&config(r#"{"analysis": {"expectation_only": true}}"#)).unwrap();
        let s = out.report.chsh.unwrap().value;
        assert!((s - 2.0 * 2f64.sqrt()).abs() < 1e-9);
        assert!((out.report.fidelity.unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(out.report.bell_visibility_flag, Some(true));
    }

    #[test]
    fn sampled_bell_is_reproducible() {
        let c = config(r#"{"noise": {"p_white": 0.0347}, "detector": {"seed": 4}}"#);
        let a = polarization_bell(&c).unwrap();
        let b = polarization_bell(&c).unwrap();
        assert_eq!(a.artifacts, b.artifacts);
        let s = a.report.chsh.unwrap();
        assert!((s.value - 2.73).abs() < 4.0 * s.sigma.unwrap());
    }

    #[test]
    fn ideal_hybrid_witness() {
        let c = config(r#"{"pump": {"l": 1}, "grid": {"n": 128}, "analysis": {"expectation_only": true}}"#);
        let out = hybrid_witness(&c).unwrap();
        let w = out.report.witness.unwrap().value;
        assert!(w > 1.97, "{w}");
        assert!(hybrid_witness(&config(r#"{"pump": {"l": 0}}"#)).is_err());
    }

    #[test]
    fn witness_calibration_hits_target() {
        let c = config(
            r#"{"pump": {"l": 2}, "grid": {"n": 96}, "noise": {"target_witness": 1.4}, "analysis": {"expectation_only": true}}"#,
        );
        let out = hybrid_witness(&c).unwrap();
        assert!((out.report.witness.unwrap().value - 1.4).abs() < 1e-6);
    }
}
