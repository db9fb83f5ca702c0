//! Polarization analyzers, coincidence probabilities, photon counting and
//! heralded coincidence images.
//!
//! An analyzer is a quarter-wave plate (optional), a half-wave plate and the
//! transmitted port of a PBS, in that order along the beam. Settings for the
//! six standard states:
//!
//! | state | QWP     | HWP     |
//! |-------|---------|---------|
//! | H     | -       | 0       |
//! | V     | -       | pi/4    |
//! | D     | -       | pi/8    |
//! | A     | -       | -pi/8   |
//! | R     | pi/4    | pi/4    |
//! | L     | pi/4    | 0       |
//!
//! A linear polarizer at angle `t` is the HWP at `t/2` with no QWP.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_4, FRAC_PI_8};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jones::{half_wave, pbs_transmit, quarter_wave, JonesMatrix};
use crate::par;
use crate::quantum::{polarization_ket, project, Ket, PolBasis, State, C64};
use crate::rng;
use crate::spatial::{peak_intensity, FieldImage, Grid, ImageMeta, ModeTable};
use crate::spdc::{TwoPhotonState, IDLER_POL, SIGNAL_OAM, SIGNAL_POL};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyzerSetting {
    pub qwp: Option<f64>,
    pub hwp: f64,
}

impl AnalyzerSetting {
    pub fn new(qwp: Option<f64>, hwp: f64) -> Result<Self> {
        if !hwp.is_finite() || qwp.is_some_and(|q| !q.is_finite()) {
            return Err(Error::InvalidParameter("analyzer angles must be finite".into()));
        }
        Ok(AnalyzerSetting { qwp, hwp })
    }

    pub fn for_basis(b: PolBasis) -> Self {
        let (qwp, hwp) = match b {
            PolBasis::H => (None, 0.0),
            PolBasis::V => (None, FRAC_PI_4),
            PolBasis::D => (None, FRAC_PI_8),
            PolBasis::A => (None, -FRAC_PI_8),
            PolBasis::R => (Some(FRAC_PI_4), FRAC_PI_4),
            PolBasis::L => (Some(FRAC_PI_4), 0.0),
        };
        AnalyzerSetting { qwp, hwp }
    }

    /// Linear polarizer transmitting the direction at `angle` from H.
    pub fn linear(angle: f64) -> Self {
        AnalyzerSetting {
            qwp: None,
            hwp: angle / 2.0,
        }
    }

    /// Jones matrix of the full chain in beam order.
    pub fn chain(&self) -> JonesMatrix {
        let q = self.qwp.map_or(JonesMatrix::identity(), quarter_wave);
        pbs_transmit() * half_wave(self.hwp) * q
    }

    /// The polarization state the chain transmits with certainty.
    pub fn state(&self) -> Ket {
        analyzer_state(self)
    }
}

/// `QWP(q)^dag HWP(h) |H>`: the only input the PBS passes with probability 1.
pub fn analyzer_state(s: &AnalyzerSetting) -> Ket {
    let q = s.qwp.map_or(JonesMatrix::identity(), quarter_wave);
    let v = (q.adjoint() * half_wave(s.hwp)).apply(Vector2::new(C64::new(1.0, 0.0), C64::new(0.0, 0.0)));
    polarization_ket(v[0], v[1]).expect("unitary image of a unit vector")
}

fn default_rate_scale() -> BTreeMap<u32, f64> {
    BTreeMap::from([(0, 1.0), (1, 0.5), (2, 0.25), (3, 0.12)])
}

/// Coincidence counting model. Rates are in counts per second.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorModel {
    pub pair_rate: f64,
    pub accidental_rate: f64,
    pub integration_time: f64,
    pub rate_scale_per_l: BTreeMap<u32, f64>,
    pub seed: u64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        DetectorModel {
            pair_rate: 1e4,
            accidental_rate: 0.0,
            integration_time: 10.0,
            rate_scale_per_l: default_rate_scale(),
            seed: 0,
        }
    }
}

impl DetectorModel {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::InvalidParameter(format!("detector {what} = {v}")));
        if !(self.pair_rate >= 0.0 && self.pair_rate.is_finite()) {
            return bad("pair_rate", self.pair_rate);
        }
        if !(self.accidental_rate >= 0.0 && self.accidental_rate.is_finite()) {
            return bad("accidental_rate", self.accidental_rate);
        }
        if !(self.integration_time > 0.0 && self.integration_time.is_finite()) {
            return bad("integration_time", self.integration_time);
        }
        for (&l, &s) in &self.rate_scale_per_l {
            if !(s > 0.0 && s <= 1.0) {
                return bad(&format!("rate_scale_per_l[{l}]"), s);
            }
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        DetectorModel { seed, ..self.clone() }
    }

    pub fn rate_scale(&self, l: u32) -> Result<f64> {
        self.rate_scale_per_l
            .get(&l)
            .copied()
            .ok_or_else(|| Error::InvalidParameter(format!("no rate scale for |l| = {l}")))
    }

    /// `(pair_rate * scale(l) * prob + accidental_rate) * integration_time`.
    pub fn expected_counts(&self, prob: f64, l: u32) -> Result<f64> {
        if !(-1e-12..=1.0 + 1e-12).contains(&prob) {
            return Err(Error::InvalidParameter(format!("probability {prob} outside [0, 1]")));
        }
        let prob = prob.clamp(0.0, 1.0);
        Ok((self.pair_rate * self.rate_scale(l)? * prob + self.accidental_rate) * self.integration_time)
    }
}

/// Joint probability that the idler passes `idler` and the signal passes
/// `signal` (and, if given, projects onto `signal_oam`). Without an OAM
/// projector the signal OAM is traced out.
pub fn coincidence_prob(
    state: &TwoPhotonState,
    idler: &AnalyzerSetting,
    signal: &AnalyzerSetting,
    signal_oam: Option<&Ket>,
) -> Result<f64> {
    let first = state.herald(&idler.state())?;
    let p_idler = first.probability();
    let Some(sig) = first.into_residual() else {
        return Ok(p_idler.max(0.0));
    };
    let second = project(&sig, SIGNAL_POL, &signal.state())?;
    let p_signal = second.probability();
    let p = match (signal_oam, second.into_residual()) {
        (Some(o), Some(rest)) => p_idler * p_signal * project(&rest, SIGNAL_OAM, o)?.probability(),
        _ => p_idler * p_signal,
    };
    Ok(p.clamp(0.0, 1.0))
}

/// Poisson count for a joint probability, drawn from stream `stream_id` of
/// `det.seed`.
pub fn sample_counts(prob: f64, det: &DetectorModel, l: u32, stream_id: u64) -> Result<u64> {
    let mean = det.expected_counts(prob, l)?;
    rng::poisson(&mut rng::stream(det.seed, stream_id), mean)
}

/// Expected heralded coincidence image in counts per pixel. The pair rate is
/// the rate that would land on a single pixel at the ring maximum of a pure
/// vortex of the state's largest charge; the accidental rate is per pixel.
/// With no idler analyzer the idler is traced out.
pub fn expected_heralded_image(
    state: &TwoPhotonState,
    idler: Option<&AnalyzerSetting>,
    signal_pol: &AnalyzerSetting,
    table: &ModeTable,
    det: &DetectorModel,
) -> Result<FieldImage> {
    if table.alphabet() != state.signal_alphabet() {
        return Err(Error::DimensionMismatch {
            expected: state.signal_alphabet().len(),
            got: table.alphabet().len(),
        });
    }
    let l = state.max_charge();
    let grid = *table.grid();
    let (weight, signal, descriptor) = match idler {
        Some(a) => {
            let out = state.herald(&a.state())?;
            let w = out.probability();
            (w, out.into_residual(), "heralded")
        }
        None => (
            1.0,
            Some(State::Mixed(state.to_density().partial_trace(IDLER_POL)?)),
            "idler traced",
        ),
    };
    let oam = match signal {
        Some(s) => {
            let out = project(&s, SIGNAL_POL, &signal_pol.state())?;
            let w = weight * out.probability();
            out.into_residual().map(|r| (w, r.to_density()))
        }
        None => None,
    };
    let background = det.accidental_rate * det.integration_time;
    let Some((prob, rho)) = oam else {
        let meta = ImageMeta {
            descriptor: "null projection".into(),
            null_projection: true,
        };
        det.rate_scale(l)?;
        return FieldImage::new(grid, vec![background; grid.len()], meta);
    };
    let scale =
        det.pair_rate * det.rate_scale(l)? * prob * det.integration_time / peak_intensity(l as i32, table.waist());
    let intensity = table.intensity(&rho)?;
    let pixels = intensity.iter().map(|i| scale * i + background).collect();
    let meta = ImageMeta {
        descriptor: descriptor.into(),
        null_projection: false,
    };
    FieldImage::new(grid, pixels, meta)
}

/// Per-pixel Poisson draw; pixel `i` uses stream `i` of `seed`.
pub fn sample_image(expected: &FieldImage, seed: u64) -> Result<FieldImage> {
    let px = expected.pixels();
    let counts = par::try_map_range(px.len(), |i| {
        rng::poisson(&mut rng::stream(seed, i as u64), px[i]).map(|c| c as f64)
    })?;
    FieldImage::new(*expected.grid(), counts, expected.meta.clone())
}

/// Heralded coincidence image, either expected counts or a Poisson sample
/// keyed by `det.seed`.
pub fn heralded_image(
    state: &TwoPhotonState,
    idler: Option<&AnalyzerSetting>,
    signal_pol: &AnalyzerSetting,
    grid: &Grid,
    waist: f64,
    det: &DetectorModel,
    sampled: bool,
) -> Result<FieldImage> {
    det.validate()?;
    let table = ModeTable::new(*grid, waist, state.signal_alphabet())?;
    let img = expected_heralded_image(state, idler, signal_pol, &table, det)?;
    if sampled {
        sample_image(&img, det.seed)
    } else {
        Ok(img)
    }
}
