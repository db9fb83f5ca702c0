//! Experiment configuration: one JSON document, unknown keys rejected,
//! every field optional with a default.
//!
//! ```json
//! {
//!   "pump":     { "l": 1, "phi": 0.0, "alpha": 0.7071067811865476, "oam_window": 3 },
//!   "crystal":  { "h_pump_sign": [-1.0, 0.0] },
//!   "noise":    { "p_white": 0.0, "space": "full", "target_witness": null },
//!   "detector": { "pair_rate": 10000.0, "accidental_rate": 0.0, "integration_time": 10.0,
//!                 "rate_scale_per_l": { "0": 1.0, "1": 0.5, "2": 0.25, "3": 0.12 }, "seed": 0 },
//!   "grid":     { "n": 256, "extent": null, "waist": 1.0 },
//!   "analysis": { "nbins": 72, "annulus": null, "chsh_settings": [0.0, 45.0, -22.5, -67.5],
//!                 "n_bootstrap": 100, "expectation_only": false, "signal_basis": "D" }
//! }
//! ```
//!
//! Angles: `phi` in radians, CHSH settings in degrees. Lengths in mm.
//! `extent` defaults to the grid that holds the largest configured charge;
//! `annulus` defaults to the ring maximum of `|l|` plus or minus 35%.

use std::f64::consts::FRAC_1_SQRT_2;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::ChshSettings;
use crate::error::{Error, Result};
use crate::measurement::DetectorModel;
use crate::pump::{SagnacConfig, DEFAULT_OAM_WINDOW};
use crate::quantum::{PolBasis, C64};
use crate::spatial::{default_annulus, default_extent, Grid};
use crate::spdc::{CrystalPairConfig, NoiseSpace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PumpConfig {
    pub l: i32,
    pub phi: f64,
    /// `|H>` amplitude of the light entering the loop.
    pub alpha: f64,
    pub oam_window: u32,
}

impl Default for PumpConfig {
    fn default() -> Self {
        PumpConfig {
            l: 1,
            phi: 0.0,
            alpha: FRAC_1_SQRT_2,
            oam_window: DEFAULT_OAM_WINDOW,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrystalConfig {
    /// `[re, im]` of the coefficient on the `|H>` pump conversion.
    pub h_pump_sign: [f64; 2],
}

impl Default for CrystalConfig {
    fn default() -> Self {
        CrystalConfig {
            h_pump_sign: [-1.0, 0.0],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseSpaceName {
    #[default]
    Full,
    Polarization,
}

impl From<NoiseSpaceName> for NoiseSpace {
    fn from(n: NoiseSpaceName) -> Self {
        match n {
            NoiseSpaceName::Full => NoiseSpace::Full,
            NoiseSpaceName::Polarization => NoiseSpace::Polarization,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub p_white: f64,
    pub space: NoiseSpaceName,
    /// When set, the hybrid pipeline replaces `p_white` by the weight whose
    /// expected witness equals this value.
    pub target_witness: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n: usize,
    pub extent: Option<f64>,
    pub waist: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            n: 256,
            extent: None,
            waist: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub nbins: usize,
    pub annulus: Option<[f64; 2]>,
    pub chsh_settings: [f64; 4],
    pub n_bootstrap: usize,
    /// Skip Poisson sampling and report expectation values.
    pub expectation_only: bool,
    /// Fixed signal polarization analyzer for heralded images.
    pub signal_basis: PolBasis,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            nbins: 72,
            annulus: None,
            chsh_settings: ChshSettings::default().degrees(),
            n_bootstrap: 100,
            expectation_only: false,
            signal_basis: PolBasis::D,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub pump: PumpConfig,
    pub crystal: CrystalConfig,
    pub noise: NoiseConfig,
    pub detector: DetectorModel,
    pub grid: GridConfig,
    pub analysis: AnalysisConfig,
}

/// A validated configuration with every default filled in.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResolvedConfig {
    pub pump: PumpConfig,
    pub crystal: CrystalConfig,
    pub noise: NoiseConfig,
    pub detector: DetectorModel,
    pub grid_n: usize,
    pub grid_extent: f64,
    pub waist: f64,
    pub nbins: usize,
    pub annulus: [f64; 2],
    pub chsh_settings_deg: [f64; 4],
    pub n_bootstrap: usize,
    pub expectation_only: bool,
    pub signal_basis: PolBasis,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Validates and fills defaults.
    pub fn resolved(&self) -> Result<ResolvedConfig> {
        let cfg = |m: String| Err(Error::Config(m));
        let p = &self.pump;
        SagnacConfig::with_window(p.l, p.phi, p.oam_window)?;
        if !(0.0..=1.0).contains(&p.alpha) {
            return cfg(format!("pump.alpha = {} outside [0, 1]", p.alpha));
        }
        self.crystal_config()?;
        let n = &self.noise;
        if !(0.0..=1.0).contains(&n.p_white) {
            return cfg(format!("noise.p_white = {} outside [0, 1]", n.p_white));
        }
        if let Some(t) = n.target_witness {
            if !(0.0..=2.0).contains(&t) {
                return cfg(format!("noise.target_witness = {t} outside [0, 2]"));
            }
        }
        self.detector.validate()?;
        let max_l = p.l.unsigned_abs();
        self.detector.rate_scale(max_l)?;
        let g = &self.grid;
        if !(g.waist > 0.0 && g.waist.is_finite()) {
            return cfg(format!("grid.waist = {} must be positive", g.waist));
        }
        let extent = g.extent.unwrap_or_else(|| default_extent(g.waist, max_l));
        Grid::new(g.n, extent)?;
        let a = &self.analysis;
        if a.nbins < 8 {
            return cfg(format!("analysis.nbins = {} below 8", a.nbins));
        }
        if max_l > 0 && a.nbins < 4 * max_l as usize {
            return cfg(format!(
                "analysis.nbins = {} cannot resolve {} petals",
                a.nbins,
                2 * max_l
            ));
        }
        let annulus = match a.annulus {
            Some(r) => r,
            None => {
                let (lo, hi) = default_annulus(g.waist, p.l);
                [lo, hi]
            }
        };
        if !(annulus[0] >= 0.0 && annulus[0] < annulus[1] && annulus[1] <= extent / 2.0) {
            return cfg(format!(
                "analysis.annulus {annulus:?} does not fit in a {extent} mm grid"
            ));
        }
        ChshSettings::from_degrees(a.chsh_settings)?;
        if a.n_bootstrap == 0 {
            return cfg("analysis.n_bootstrap must be at least 1".into());
        }
        Ok(ResolvedConfig {
            pump: p.clone(),
            crystal: self.crystal.clone(),
            noise: n.clone(),
            detector: self.detector.clone(),
            grid_n: g.n,
            grid_extent: extent,
            waist: g.waist,
            nbins: a.nbins,
            annulus,
            chsh_settings_deg: a.chsh_settings,
            n_bootstrap: a.n_bootstrap,
            expectation_only: a.expectation_only,
            signal_basis: a.signal_basis,
        })
    }

    pub fn crystal_config(&self) -> Result<CrystalPairConfig> {
        let [re, im] = self.crystal.h_pump_sign;
        CrystalPairConfig::new(C64::new(re, im))
            .map_err(|_| Error::Config(format!("crystal.h_pump_sign [{re}, {im}] is not a unit complex number")))
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.detector.seed = seed;
        self
    }
}

impl ResolvedConfig {
    pub fn sagnac(&self) -> Result<SagnacConfig> {
        SagnacConfig::with_window(self.pump.l, self.pump.phi, self.pump.oam_window)
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid_n, self.grid_extent)
    }

    pub fn chsh_settings(&self) -> Result<ChshSettings> {
        ChshSettings::from_degrees(self.chsh_settings_deg)
    }

    pub fn seed(&self) -> u64 {
        self.detector.seed
    }
}
