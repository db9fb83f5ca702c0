//! Statistics extracted from coincidence counts: visibility fits, CHSH,
//! linear two-qubit tomography, the hybrid entanglement witness from petal
//! orientations, and parametric-bootstrap error bars.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4, PI};

use nalgebra::{DMatrix, Matrix3, SMatrix, SVector, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measurement::{coincidence_prob, expected_heralded_image, sample_image, AnalyzerSetting, DetectorModel};
use crate::par;
use crate::quantum::{project, Basis, DensityMatrix, Ket, PolBasis, Subsystem, C64};
use crate::rng;
use crate::spatial::{
    analytic_angular_profile, petal_fit, AngularBinner, AngularHistogram, FieldImage, Grid, ModeTable, PetalFit,
};
use crate::spdc::{TwoPhotonState, IDLER_POL, SIGNAL_POL};

/// Fitted fringe or petal visibility.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VisibilityResult {
    /// Clamped to `[0, 1]`.
    pub visibility: f64,
    pub raw_visibility: f64,
    /// Orientation of the fitted maximum; `None` when degenerate.
    pub theta0: Option<f64>,
    pub stderr: Option<f64>,
    pub degenerate: bool,
    pub residual: f64,
}

impl VisibilityResult {
    fn degenerate(residual: f64) -> Self {
        VisibilityResult {
            visibility: 0.0,
            raw_visibility: 0.0,
            theta0: None,
            stderr: None,
            degenerate: true,
            residual,
        }
    }

    /// `V - stderr < 0`; reported, never clipped.
    pub fn lower_bound_negative(&self) -> bool {
        self.stderr.is_some_and(|s| self.visibility - s < 0.0)
    }
}

/// Fits `a + b cos 2t + c sin 2t` to `(analyzer angle, counts)` pairs by
/// linear least squares. `V = sqrt(b^2 + c^2)/a` equals `(max - min)/(max +
/// min)` of the fitted curve. The points must be at least 8 and cover a full
/// 180 degree period, counting the sample spacing. The standard error uses
/// Poisson variances (`max(counts, 1)`) propagated through the fit.
pub fn fit_visibility(series: &[(f64, f64)]) -> Result<VisibilityResult> {
    let n = series.len();
    if n < 8 {
        return Err(Error::InvalidParameter(format!(
            "visibility fit needs at least 8 points, got {n}"
        )));
    }
    let lo = series.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = series.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo) * n as f64 / (n - 1) as f64;
    if !(span >= PI - 1e-9) {
        return Err(Error::InvalidParameter(format!(
            "analyzer angles span {:.1} degrees, need 180",
            span.to_degrees()
        )));
    }
    let rows: Vec<Vector3<f64>> = series
        .iter()
        .map(|&(t, _)| Vector3::new(1.0, (2.0 * t).cos(), (2.0 * t).sin()))
        .collect();
    let mut xtx = Matrix3::zeros();
    let mut xty = Vector3::zeros();
    let mut meat = Matrix3::zeros();
    for (row, &(_, y)) in rows.iter().zip(series) {
        xtx += row * row.transpose();
        xty += row * y;
        meat += row * row.transpose() * y.max(1.0);
    }
    let Some(inv) = xtx.try_inverse() else {
        return Ok(VisibilityResult::degenerate(f64::NAN));
    };
    let beta = inv * xty;
    let residual = (rows
        .iter()
        .zip(series)
        .map(|(row, &(_, y))| (y - row.dot(&beta)).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt();
    let (a, b, c) = (beta[0], beta[1], beta[2]);
    let amp = b.hypot(c);
    if !(a > 0.0) || amp <= 1e-12 * a {
        return Ok(VisibilityResult::degenerate(residual));
    }
    let v = amp / a;
    let cov = inv * meat * inv;
    let grad = Vector3::new(-v / a, b / (a * amp), c / (a * amp));
    let stderr = grad.dot(&(cov * grad)).max(0.0).sqrt();
    Ok(VisibilityResult {
        visibility: v.clamp(0.0, 1.0),
        raw_visibility: v,
        theta0: Some((c.atan2(b) / 2.0).rem_euclid(PI)),
        stderr: Some(stderr),
        degenerate: false,
        residual,
    })
}

/// Both fringe visibilities above `1/sqrt(2)`, the level needed for a CHSH
/// violation.
pub fn bell_visibility_flag(v1: f64, v2: f64) -> bool {
    v1 > FRAC_1_SQRT_2 && v2 > FRAC_1_SQRT_2
}

/// Linear-polarizer angles (radians) for the CHSH test; `a` on the idler,
/// `b` on the signal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChshSettings {
    pub a: f64,
    pub a_prime: f64,
    pub b: f64,
    pub b_prime: f64,
}

impl Default for ChshSettings {
    /// `0, 45, -22.5, -67.5` degrees. The signal angles are mirrored because
    /// the source state is anti-correlated in the diagonal basis.
    fn default() -> Self {
        ChshSettings {
            a: 0.0,
            a_prime: FRAC_PI_4,
            b: -PI / 8.0,
            b_prime: -3.0 * PI / 8.0,
        }
    }
}

impl ChshSettings {
    pub fn from_degrees(d: [f64; 4]) -> Result<Self> {
        if d.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("CHSH angles must be finite".into()));
        }
        Ok(ChshSettings {
            a: d[0].to_radians(),
            a_prime: d[1].to_radians(),
            b: d[2].to_radians(),
            b_prime: d[3].to_radians(),
        })
    }

    pub fn degrees(&self) -> [f64; 4] {
        [self.a, self.a_prime, self.b, self.b_prime].map(f64::to_degrees)
    }

    /// Rows `(a,b), (a,b'), (a',b), (a',b')`; columns `++, +-, -+, --`
    /// where `-` is the orthogonal polarizer.
    pub fn table(&self) -> [[(AnalyzerSetting, AnalyzerSetting); 4]; 4] {
        let pairs = [
            (self.a, self.b),
            (self.a, self.b_prime),
            (self.a_prime, self.b),
            (self.a_prime, self.b_prime),
        ];
        pairs.map(|(x, y)| {
            [(0.0, 0.0), (0.0, FRAC_PI_2), (FRAC_PI_2, 0.0), (FRAC_PI_2, FRAC_PI_2)]
                .map(|(dx, dy)| (AnalyzerSetting::linear(x + dx), AnalyzerSetting::linear(y + dy)))
        })
    }
}

pub type ChshCounts = [[f64; 4]; 4];

pub fn chsh_expected_counts(
    state: &TwoPhotonState,
    settings: &ChshSettings,
    det: &DetectorModel,
) -> Result<ChshCounts> {
    let l = state.max_charge();
    let mut out = [[0.0; 4]; 4];
    for (r, row) in settings.table().iter().enumerate() {
        for (c, (i, s)) in row.iter().enumerate() {
            out[r][c] = det.expected_counts(coincidence_prob(state, i, s, None)?, l)?;
        }
    }
    Ok(out)
}

/// Cell `(r, c)` draws from stream `4 r + c` of `seed`.
pub fn sample_chsh_counts(expected: &ChshCounts, seed: u64) -> Result<ChshCounts> {
    let mut out = [[0.0; 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            let mut g = rng::stream(seed, (4 * r + c) as u64);
            out[r][c] = rng::poisson(&mut g, expected[r][c])? as f64;
        }
    }
    Ok(out)
}

/// `S = |E(a,b) - E(a,b') + E(a',b) + E(a',b')|` with
/// `E = (N++ + N-- - N+- - N-+)/N` and `var(E) = (1 - E^2)/N`.
pub fn chsh(counts: &ChshCounts) -> Result<(f64, f64)> {
    let mut e = [0.0; 4];
    let mut var = 0.0;
    for (k, row) in counts.iter().enumerate() {
        let n: f64 = row.iter().sum();
        if !(n > 0.0) {
            return Err(Error::Numerical(format!("CHSH setting {k} has no counts")));
        }
        e[k] = (row[0] + row[3] - row[1] - row[2]) / n;
        var += (1.0 - e[k] * e[k]).max(0.0) / n;
    }
    Ok(((e[0] - e[1] + e[2] + e[3]).abs(), var.sqrt()))
}

/// The 16 two-qubit projections of the standard linear-tomography set,
/// idler first.
pub const TOMOGRAPHY_SETTINGS: [(PolBasis, PolBasis); 16] = {
    use PolBasis::*;
    [
        (H, H),
        (H, V),
        (V, V),
        (V, H),
        (R, H),
        (R, V),
        (D, V),
        (D, H),
        (D, R),
        (D, D),
        (R, D),
        (H, D),
        (V, D),
        (V, L),
        (H, L),
        (R, L),
    ]
};

pub fn polarization_pair_basis() -> Basis {
    Basis::new(vec![
        Subsystem::polarization(IDLER_POL),
        Subsystem::polarization(SIGNAL_POL),
    ])
    .expect("distinct names")
}

/// `(|HH> - |VV>)/sqrt(2)` on `idler_pol x signal_pol`.
pub fn bell_minus() -> Ket {
    let r = FRAC_1_SQRT_2;
    let z = C64::new(0.0, 0.0);
    Ket::new(
        polarization_pair_basis(),
        vec![C64::new(r, 0.0), z, z, C64::new(-r, 0.0)],
    )
    .expect("normalized")
}

fn pauli(k: usize) -> [[C64; 2]; 2] {
    let (o, z, i) = (C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 1.0));
    match k {
        0 => [[o, z], [z, o]],
        1 => [[z, o], [o, z]],
        2 => [[z, -i], [i, z]],
        _ => [[o, z], [z, -o]],
    }
}

/// `sigma_i x sigma_j / 2` for `mu = 4 i + j`.
fn gamma(mu: usize) -> DMatrix<C64> {
    let (a, b) = (pauli(mu / 4), pauli(mu % 4));
    DMatrix::from_fn(4, 4, |r, c| a[r / 2][c / 2] * b[r % 2][c % 2] * 0.5)
}

fn projection_ket(i: PolBasis, s: PolBasis) -> Vec<C64> {
    let (ih, iv) = i.amplitudes();
    let (sh, sv) = s.amplitudes();
    vec![ih * sh, ih * sv, iv * sh, iv * sv]
}

/// Linear inversion of the 16 projection counts (ordered as
/// [`TOMOGRAPHY_SETTINGS`]). The result is Hermitian with unit trace; it may
/// fail to be positive, which [`DensityMatrix::is_psd`] reports.
pub fn tomography_linear(counts: &[f64; 16]) -> Result<DensityMatrix> {
    let norm = counts[0] + counts[1] + counts[2] + counts[3];
    if !(norm > 0.0) {
        return Err(Error::Numerical("tomography normalization N is zero".into()));
    }
    let gammas: Vec<DMatrix<C64>> = (0..16).map(gamma).collect();
    let kets: Vec<Vec<C64>> = TOMOGRAPHY_SETTINGS.iter().map(|&(i, s)| projection_ket(i, s)).collect();
    let b = SMatrix::<f64, 16, 16>::from_fn(|nu, mu| {
        let psi = &kets[nu];
        let g = &gammas[mu];
        let mut s = C64::new(0.0, 0.0);
        for r in 0..4 {
            for c in 0..4 {
                s += psi[r].conj() * g[(r, c)] * psi[c];
            }
        }
        s.re
    });
    let n = SVector::<f64, 16>::from_fn(|k, _| counts[k] / norm);
    let r = b
        .lu()
        .solve(&n)
        .ok_or_else(|| Error::Numerical("tomography matrix is singular".into()))?;
    let mut rho = DMatrix::<C64>::zeros(4, 4);
    for (mu, g) in gammas.iter().enumerate() {
        rho += g * C64::new(r[mu], 0.0);
    }
    DensityMatrix::new(polarization_pair_basis(), rho)
}

/// Expected counts for the 16 projections with the signal OAM traced out.
pub fn tomography_expected_counts(state: &TwoPhotonState, det: &DetectorModel) -> Result<[f64; 16]> {
    let l = state.max_charge();
    let mut out = [0.0; 16];
    for (k, &(i, s)) in TOMOGRAPHY_SETTINGS.iter().enumerate() {
        let p = coincidence_prob(
            state,
            &AnalyzerSetting::for_basis(i),
            &AnalyzerSetting::for_basis(s),
            None,
        )?;
        out[k] = det.expected_counts(p, l)?;
    }
    Ok(out)
}

/// Projection `k` draws from stream `k` of `seed`.
pub fn sample_tomography_counts(expected: &[f64; 16], seed: u64) -> Result<[f64; 16]> {
    let mut out = [0.0; 16];
    for (k, &m) in expected.iter().enumerate() {
        out[k] = rng::poisson(&mut rng::stream(seed, k as u64), m)? as f64;
    }
    Ok(out)
}

/// Idler bases whose heralded petals enter the witness.
pub const WITNESS_BASES: [PolBasis; 4] = [PolBasis::A, PolBasis::D, PolBasis::R, PolBasis::L];

/// Petal orientation of each idler basis relative to the `A` pattern, in
/// display-frame radians: `L` at `45/l`, `D` at `90/l`, `R` at `135/l`
/// degrees. Linear bases return `None` for `H` and `V`, which herald vortex
/// rings.
pub fn petal_offset(b: PolBasis, l: u32) -> Option<f64> {
    let unit = PI / (4.0 * f64::from(l));
    match b {
        PolBasis::A => Some(0.0),
        PolBasis::L => Some(unit),
        PolBasis::D => Some(2.0 * unit),
        PolBasis::R => Some(3.0 * unit),
        PolBasis::H | PolBasis::V => None,
    }
}

/// Pair visibilities from the four heralded petal fits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WitnessParts {
    /// Common orientation of the `A` pattern implied by all four fits.
    pub anchor: f64,
    pub v_da: VisibilityResult,
    pub v_rl: VisibilityResult,
}

impl WitnessParts {
    pub fn witness(&self) -> f64 {
        witness(&self.v_rl, &self.v_da).0
    }
}

/// Orientation-resolved pair visibilities. A single orientation for the `A`
/// pattern is estimated from all fits (each shifted back by its nominal
/// offset and weighted by its amplitude). For a pair `(x, y)` of orthogonal
/// idler states, each fitted curve is read at its own nominal maximum and at
/// its partner's:
/// `V = [C_x(t_x) + C_y(t_y) - C_x(t_y) - C_y(t_x)] / [sum of the four]`.
/// For any separable state the two pair visibilities add to at most 1.
pub fn witness_visibilities(fits: &BTreeMap<PolBasis, PetalFit>, l: u32) -> Result<WitnessParts> {
    let k = 2.0 * f64::from(l);
    let mut z = C64::new(0.0, 0.0);
    for b in WITNESS_BASES {
        let f = fits
            .get(&b)
            .ok_or_else(|| Error::InvalidParameter(format!("missing petal fit for idler {b}")))?;
        if f.l != l {
            return Err(Error::InvalidParameter(format!("petal fit for {b} has l = {}", f.l)));
        }
        let off = petal_offset(b, l).expect("witness basis");
        z += C64::new(f.cos_coef, f.sin_coef) * C64::from_polar(1.0, -k * off);
    }
    let anchor = if z.norm() > 0.0 {
        (z.arg() / k).rem_euclid(PI / f64::from(l))
    } else {
        0.0
    };
    let pair = |x: PolBasis, y: PolBasis| {
        let (fx, fy) = (&fits[&x], &fits[&y]);
        let tx = anchor + petal_offset(x, l).unwrap();
        let ty = anchor + petal_offset(y, l).unwrap();
        let (xx, yy, xy, yx) = (fx.curve(tx), fy.curve(ty), fx.curve(ty), fy.curve(tx));
        let den = xx + yy + xy + yx;
        let residual = fx.residual.hypot(fy.residual);
        if !(den > 0.0) {
            return VisibilityResult::degenerate(residual);
        }
        let v = (xx + yy - xy - yx) / den;
        VisibilityResult {
            visibility: v.clamp(0.0, 1.0),
            raw_visibility: v,
            theta0: Some(tx),
            stderr: None,
            degenerate: false,
            residual,
        }
    };
    Ok(WitnessParts {
        anchor,
        v_da: pair(PolBasis::D, PolBasis::A),
        v_rl: pair(PolBasis::R, PolBasis::L),
    })
}

/// `W = V_RL + V_DA`; sigma in quadrature when both errors are known.
pub fn witness(v_rl: &VisibilityResult, v_da: &VisibilityResult) -> (f64, Option<f64>) {
    let w = v_rl.visibility + v_da.visibility;
    let s = match (v_rl.stderr, v_da.stderr) {
        (Some(a), Some(b)) => Some(a.hypot(b)),
        _ => None,
    };
    (w, s)
}

/// Where angular histograms come from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AngularSource {
    /// Heralded coincidence images binned over an annulus.
    Image {
        grid: Grid,
        waist: f64,
        annulus: (f64, f64),
    },
    /// Exact per-bin probabilities over the whole transverse plane. The pair
    /// rate is then the total heralded rate; accidentals spread evenly.
    Analytic,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanOptions {
    pub nbins: usize,
    pub source: AngularSource,
    /// Fixed signal polarization analyzer.
    pub signal: AnalyzerSetting,
    pub sampled: bool,
}

impl ScanOptions {
    pub fn analytic(nbins: usize) -> Self {
        ScanOptions {
            nbins,
            source: AngularSource::Analytic,
            signal: AnalyzerSetting::for_basis(PolBasis::D),
            sampled: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScanEntry {
    pub hist: AngularHistogram,
    pub fit: PetalFit,
}

#[derive(Clone, Debug)]
pub struct BasisScan {
    pub l: u32,
    pub entries: BTreeMap<PolBasis, ScanEntry>,
}

impl BasisScan {
    pub fn fits(&self) -> BTreeMap<PolBasis, PetalFit> {
        self.entries.iter().map(|(&b, e)| (b, e.fit)).collect()
    }

    pub fn theta0(&self, b: PolBasis) -> Option<f64> {
        self.entries.get(&b).and_then(|e| e.fit.theta0)
    }

    pub fn visibility(&self, b: PolBasis) -> Option<f64> {
        self.entries.get(&b).map(|e| e.fit.visibility)
    }

    pub fn witness(&self) -> Result<WitnessParts> {
        witness_visibilities(&self.fits(), self.l)
    }
}

#[derive(Clone, Debug)]
enum Expected {
    Image(FieldImage),
    Hist(AngularHistogram),
}

/// Expected data for one angular scan, computed once and resampled many
/// times.
#[derive(Clone, Debug)]
pub struct AngularExperiment {
    l: u32,
    bases: Vec<PolBasis>,
    det: DetectorModel,
    opts: ScanOptions,
    expected: Vec<Expected>,
    tools: Option<(ModeTable, AngularBinner)>,
}

/// Seed for the image or histogram of one idler basis.
pub fn basis_seed(seed: u64, b: PolBasis) -> u64 {
    rng::derive_seed(seed, rng::tag(&format!("idler:{b}")))
}

impl AngularExperiment {
    pub fn new(
        state: &TwoPhotonState,
        l: u32,
        bases: &[PolBasis],
        det: &DetectorModel,
        opts: &ScanOptions,
    ) -> Result<Self> {
        det.validate()?;
        if !(1..=3).contains(&l) {
            return Err(Error::InvalidParameter(format!(
                "angular scan needs l in 1..=3, got {l}"
            )));
        }
        let tools = match opts.source {
            AngularSource::Image { grid, waist, annulus } => Some((
                ModeTable::new(grid, waist, state.signal_alphabet())?,
                AngularBinner::new(&grid, opts.nbins, annulus)?,
            )),
            AngularSource::Analytic => None,
        };
        let mut exp = AngularExperiment {
            l,
            bases: bases.to_vec(),
            det: det.clone(),
            opts: *opts,
            expected: Vec::new(),
            tools,
        };
        exp.expected = exp.expectations(state)?;
        Ok(exp)
    }

    /// Same scan geometry and detector for another state over the same
    /// signal alphabet.
    pub fn for_state(&self, state: &TwoPhotonState) -> Result<Self> {
        let mut exp = AngularExperiment {
            expected: Vec::new(),
            ..self.clone()
        };
        exp.expected = exp.expectations(state)?;
        Ok(exp)
    }

    fn expectations(&self, state: &TwoPhotonState) -> Result<Vec<Expected>> {
        self.bases
            .iter()
            .map(|b| match &self.tools {
                Some((table, _)) => {
                    let a = AnalyzerSetting::for_basis(*b);
                    expected_heralded_image(state, Some(&a), &self.opts.signal, table, &self.det).map(Expected::Image)
                }
                None => analytic_expected_hist(state, *b, &self.det, &self.opts).map(Expected::Hist),
            })
            .collect()
    }

    pub fn l(&self) -> u32 {
        self.l
    }

    pub fn bases(&self) -> &[PolBasis] {
        &self.bases
    }

    /// Expected images, when the source is [`AngularSource::Image`].
    pub fn expected_images(&self) -> Vec<(PolBasis, &FieldImage)> {
        self.bases
            .iter()
            .zip(&self.expected)
            .filter_map(|(b, e)| match e {
                Expected::Image(img) => Some((*b, img)),
                Expected::Hist(_) => None,
            })
            .collect()
    }

    fn histogram(&self, e: &Expected) -> Result<AngularHistogram> {
        match e {
            Expected::Image(img) => self.tools.as_ref().expect("image source has a binner").1.apply(img),
            Expected::Hist(h) => Ok(h.clone()),
        }
    }

    fn assemble(&self, hists: Vec<AngularHistogram>) -> Result<BasisScan> {
        let mut entries = BTreeMap::new();
        for (b, hist) in self.bases.iter().zip(hists) {
            let fit = petal_fit(&hist, self.l)?;
            entries.insert(*b, ScanEntry { hist, fit });
        }
        Ok(BasisScan { l: self.l, entries })
    }

    pub fn expected_scan(&self) -> Result<BasisScan> {
        let hists = self
            .expected
            .iter()
            .map(|e| self.histogram(e))
            .collect::<Result<Vec<_>>>()?;
        self.assemble(hists)
    }

    /// Poisson-resampled scan; returns sampled images too for the image
    /// source.
    pub fn sampled(&self, seed: u64) -> Result<(BasisScan, Vec<(PolBasis, FieldImage)>)> {
        let mut hists = Vec::with_capacity(self.bases.len());
        let mut images = Vec::new();
        for (b, e) in self.bases.iter().zip(&self.expected) {
            let s = basis_seed(seed, *b);
            match e {
                Expected::Image(img) => {
                    let sampled = sample_image(img, s)?;
                    hists.push(self.histogram(&Expected::Image(sampled.clone()))?);
                    images.push((*b, sampled));
                }
                Expected::Hist(h) => {
                    let bins = h
                        .bins()
                        .iter()
                        .enumerate()
                        .map(|(k, &m)| rng::poisson(&mut rng::stream(s, k as u64), m).map(|c| c as f64))
                        .collect::<Result<Vec<_>>>()?;
                    hists.push(AngularHistogram::new(bins, h.annulus())?);
                }
            }
        }
        Ok((self.assemble(hists)?, images))
    }

    pub fn sampled_scan(&self, seed: u64) -> Result<BasisScan> {
        Ok(self.sampled(seed)?.0)
    }
}

fn analytic_expected_hist(
    state: &TwoPhotonState,
    b: PolBasis,
    det: &DetectorModel,
    opts: &ScanOptions,
) -> Result<AngularHistogram> {
    let l = state.max_charge();
    let herald = state.herald(&b.ket())?;
    let w = herald.probability();
    let background = det.accidental_rate * det.integration_time / opts.nbins as f64;
    let signal = herald
        .into_residual()
        .map(|s| project(&s, SIGNAL_POL, &opts.signal.state()))
        .transpose()?;
    let (prob, rho) = match signal.map(|o| (o.probability(), o.into_residual())) {
        Some((p, Some(r))) => (w * p, r.to_density()),
        _ => return AngularHistogram::new(vec![background; opts.nbins], (0.0, f64::INFINITY)),
    };
    let hist = analytic_angular_profile(&rho, opts.nbins, (0.0, f64::INFINITY))?;
    let scale = det.pair_rate * det.rate_scale(l)? * prob * det.integration_time;
    let bins = hist.bins().iter().map(|p| scale * p + background).collect();
    AngularHistogram::new(bins, hist.annulus())
}

/// Runs the scan once: expected values, or a sample keyed by `det.seed`.
pub fn angular_basis_scan(
    state: &TwoPhotonState,
    l: u32,
    bases: &[PolBasis],
    det: &DetectorModel,
    opts: &ScanOptions,
) -> Result<BasisScan> {
    let exp = AngularExperiment::new(state, l, bases, det, opts)?;
    if opts.sampled {
        exp.sampled_scan(det.seed)
    } else {
        exp.expected_scan()
    }
}

/// Summary of repeated sampled runs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BootstrapStats {
    pub n_iter: usize,
    pub mean: Vec<f64>,
    /// Sample standard deviation; `None` with fewer than two iterations.
    pub sigma: Option<Vec<f64>>,
}

/// Seed of bootstrap iteration `i`.
pub fn iteration_seed(seed: u64, i: usize) -> u64 {
    rng::derive_seed(seed, rng::tag("bootstrap") ^ (i as u64 + 1))
}

/// Re-runs `run` with `n_iter` derived seeds (possibly in parallel) and
/// summarizes each returned statistic. Results are gathered in iteration
/// order and summed pairwise, so the summary does not depend on scheduling.
pub fn bootstrap_errors<F>(n_iter: usize, seed: u64, run: F) -> Result<BootstrapStats>
where
    F: Fn(u64) -> Result<Vec<f64>> + Sync + Send,
{
    if n_iter == 0 {
        return Err(Error::InvalidParameter("bootstrap needs at least one iteration".into()));
    }
    let samples = par::try_map_range(n_iter, |i| run(iteration_seed(seed, i)))?;
    let m = samples[0].len();
    if samples.iter().any(|s| s.len() != m) {
        return Err(Error::Numerical("bootstrap statistics changed length".into()));
    }
    let column = |j: usize| samples.iter().map(|s| s[j]).collect::<Vec<f64>>();
    let mean: Vec<f64> = (0..m).map(|j| par::pairwise_sum(&column(j)) / n_iter as f64).collect();
    let sigma = (n_iter >= 2).then(|| {
        (0..m)
            .map(|j| {
                let dev: Vec<f64> = column(j).iter().map(|x| (x - mean[j]).powi(2)).collect();
                (par::pairwise_sum(&dev) / (n_iter - 1) as f64).sqrt()
            })
            .collect()
    });
    Ok(BootstrapStats { n_iter, mean, sigma })
}

/// Bisection for `f(p) = target` on `[lo, hi]` with `f` decreasing.
pub fn solve_decreasing<F>(target: f64, lo: f64, hi: f64, f: F) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    const MAX_STEPS: usize = 100;
    let (mut a, mut b) = (lo, hi);
    let (fa, fb) = (f(a)?, f(b)?);
    if !(fa >= target && fb <= target) {
        return Err(Error::Numerical(format!(
            "target {target} not bracketed by [{fb}, {fa}]"
        )));
    }
    for _ in 0..MAX_STEPS {
        let m = 0.5 * (a + b);
        if b - a < 1e-12 {
            return Ok(m);
        }
        if f(m)? > target {
            a = m;
        } else {
            b = m;
        }
    }
    Err(Error::Numerical("bisection did not converge".into()))
}

/// White-noise weight at which the expected witness equals `target`.
pub fn calibrate_white_noise<F>(target_w: f64, witness_at: F) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    solve_decreasing(target_w, 0.0, 1.0, witness_at)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pump::{prepare_pump, SagnacConfig};
    use crate::quantum::{fidelity, State};
    use crate::spatial::{angle_diff, default_annulus, default_extent, find_maxima};
    use crate::spdc::{down_convert, two_photon_basis, CrystalPairConfig, NoiseSpace};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn psi(l: i32, p: f64) -> TwoPhotonState {
        let pump = prepare_pump(&SagnacConfig::new(l, 0.0).unwrap()).unwrap();
        down_convert(&pump, &CrystalPairConfig::default())
            .unwrap()
            .apply_noise(p, NoiseSpace::Full)
            .unwrap()
    }

    fn sweep(state: &TwoPhotonState, idler: PolBasis) -> Vec<(f64, f64)> {
        let det = DetectorModel::default();
        (0..36)
            .map(|k| {
                let t = k as f64 * PI / 36.0;
                let p = coincidence_prob(
                    state,
                    &AnalyzerSetting::for_basis(idler),
                    &AnalyzerSetting::linear(t),
                    None,
                )
                .unwrap();
                (t, det.expected_counts(p, 0).unwrap())
            })
            .collect()
    }

    #[test]
    fn visibility_fits() {
        let v = fit_visibility(&sweep(&psi(0, 0.0), PolBasis::H)).unwrap();
        assert_abs_diff_eq!(v.visibility, 1.0, epsilon = 1e-9);
        let v = fit_visibility(&sweep(&psi(0, 0.003), PolBasis::H)).unwrap();
        assert_abs_diff_eq!(v.visibility, 0.997, epsilon = 1e-9);
        let v = fit_visibility(&sweep(&psi(0, 0.031), PolBasis::D)).unwrap();
        assert_abs_diff_eq!(v.visibility, 0.969, epsilon = 1e-9);
        assert!(v.stderr.unwrap() > 0.0);
        let flat: Vec<(f64, f64)> = (0..12).map(|k| (k as f64 * PI / 12.0, 50.0)).collect();
        let v = fit_visibility(&flat).unwrap();
        assert!(v.degenerate && v.visibility == 0.0);
    }

    #[test]
    fn visibility_fit_preconditions() {
        let short: Vec<(f64, f64)> = (0..7).map(|k| (k as f64 * 0.5, 1.0)).collect();
        assert!(fit_visibility(&short).is_err());
        let narrow: Vec<(f64, f64)> = (0..10).map(|k| (k as f64 * 0.1, 1.0)).collect();
        assert!(fit_visibility(&narrow).is_err());
    }

    #[test]
    fn bell_flag_threshold() {
        assert!(bell_visibility_flag(0.72, 0.9));
        assert!(!bell_visibility_flag(0.70, 0.99));
    }

    #[test]
    fn chsh_values() {
        let det = DetectorModel::default();
        let s = ChshSettings::default();
        let (v, sigma) = chsh(&chsh_expected_counts(&psi(0, 0.0), &s, &det).unwrap()).unwrap();
        assert_abs_diff_eq!(v, 2.0 * 2f64.sqrt(), epsilon = 1e-9);
        assert!(sigma > 0.0);
        let (v, _) = chsh(&chsh_expected_counts(&psi(0, 0.0347), &s, &det).unwrap()).unwrap();
        assert_abs_diff_eq!(v, 2.0 * 2f64.sqrt() * (1.0 - 0.0347), epsilon = 1e-9);
        assert_abs_diff_eq!(v, 2.730, epsilon = 1e-3);
        assert!(chsh(&[[0.0; 4]; 4]).is_err());
    }

    #[test]
    fn chsh_product_state_is_classical() {
        let basis = two_photon_basis(&[0]).unwrap();
        let hh = Ket::basis_state(
            basis,
            &[
                crate::quantum::Label::Pol(crate::quantum::Pol::H),
                crate::quantum::Label::Pol(crate::quantum::Pol::H),
                crate::quantum::Label::Oam(0),
            ],
        )
        .unwrap();
        let state = TwoPhotonState::new(State::Pure(hh), 1.0, 0.0).unwrap();
        let (v, _) =
            chsh(&chsh_expected_counts(&state, &ChshSettings::default(), &DetectorModel::default()).unwrap()).unwrap();
        assert!(v <= 2.0 + 1e-12);
        assert_abs_diff_eq!(v, 2f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn tomography_of_bell_state() {
        let det = DetectorModel::default();
        let counts = tomography_expected_counts(&psi(0, 0.0), &det).unwrap();
        let rho = tomography_linear(&counts).unwrap();
        assert_abs_diff_eq!(fidelity(&rho, &bell_minus()).unwrap(), 1.0, epsilon = 1e-9);
        assert!(rho.is_psd());
        assert!(tomography_linear(&[0.0; 16]).is_err());
    }

    #[test]
    fn tomography_recovers_werner_weight() {
        let p = 0.21;
        let counts = tomography_expected_counts(&psi(0, p), &DetectorModel::default()).unwrap();
        let rho = tomography_linear(&counts).unwrap();
        // fidelity of a Werner state is 1 - 3p/4
        let f = fidelity(&rho, &bell_minus()).unwrap();
        assert_abs_diff_eq!((1.0 - f) * 4.0 / 3.0, p, epsilon = 1e-9);
    }

    #[test]
    fn tomography_sampled_fidelity() {
        // mean ~ 1e4 per correlated setting
        let det = DetectorModel {
            integration_time: 2.0,
            ..Default::default()
        };
        let expected = tomography_expected_counts(&psi(0, 0.008), &det).unwrap();
        let counts = sample_tomography_counts(&expected, 5).unwrap();
        let f = fidelity(&tomography_linear(&counts).unwrap().repaired().unwrap(), &bell_minus()).unwrap();
        assert!((f - 0.992).abs() < 0.005, "{f}");
    }

    fn random_rho(seed: &[f64]) -> DensityMatrix {
        let a = DMatrix::from_fn(4, 4, |r, c| C64::new(seed[4 * r + c], seed[16 + 4 * r + c]));
        DensityMatrix::new(polarization_pair_basis(), &a * a.adjoint()).unwrap()
    }

    proptest! {
        #[test]
        fn tomography_round_trip(v in prop::collection::vec(-1.0f64..1.0, 32)) {
            let rho = random_rho(&v);
            let mut counts = [0.0; 16];
            for (k, &(i, s)) in TOMOGRAPHY_SETTINGS.iter().enumerate() {
                let ket = Ket::new(polarization_pair_basis(), projection_ket(i, s)).unwrap();
                counts[k] = 1e4 * rho.expectation(&ket).unwrap().re;
            }
            prop_assume!(counts[0] + counts[1] + counts[2] + counts[3] > 1e-3);
            let back = tomography_linear(&counts).unwrap();
            prop_assert!((back.entries() - rho.entries()).norm() < 1e-9);
        }
    }

    #[test]
    fn offsets_follow_petal_shift_laws() {
        for l in 1..=3u32 {
            let lf = f64::from(l);
            assert_abs_diff_eq!(
                petal_offset(PolBasis::L, l).unwrap().to_degrees(),
                45.0 / lf,
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(
                petal_offset(PolBasis::D, l).unwrap().to_degrees(),
                90.0 / lf,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn ideal_witness_is_two() {
        for l in 1..=3 {
            let scan = angular_basis_scan(
                &psi(l, 0.0),
                l as u32,
                &WITNESS_BASES,
                &DetectorModel::default(),
                &ScanOptions::analytic(72),
            )
            .unwrap();
            assert_abs_diff_eq!(scan.witness().unwrap().witness(), 2.0, epsilon = 1e-9);
            for b in WITNESS_BASES {
                let want = scan.theta0(PolBasis::A).unwrap() + petal_offset(b, l as u32).unwrap();
                let d = angle_diff(scan.theta0(b).unwrap(), want, PI / f64::from(l as u32));
                assert!(d.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn white_noise_witness_is_linear() {
        for p in [0.1, 0.3, 0.5] {
            let scan = angular_basis_scan(
                &psi(2, p),
                2,
                &WITNESS_BASES,
                &DetectorModel::default(),
                &ScanOptions::analytic(72),
            )
            .unwrap();
            assert_abs_diff_eq!(scan.witness().unwrap().witness(), 2.0 * (1.0 - p), epsilon = 1e-9);
        }
    }

    #[test]
    fn image_scan_geometry() {
        let l = 3u32;
        let grid = Grid::new(128, default_extent(1.0, l)).unwrap();
        let opts = ScanOptions {
            nbins: 72,
            source: AngularSource::Image {
                grid,
                waist: 1.0,
                annulus: default_annulus(1.0, l as i32),
            },
            signal: AnalyzerSetting::for_basis(PolBasis::D),
            sampled: false,
        };
        let scan = angular_basis_scan(&psi(3, 0.0), l, &WITNESS_BASES, &DetectorModel::default(), &opts).unwrap();
        let a = scan.theta0(PolBasis::A).unwrap();
        let half_bin = 2.5;
        let shift = |b| angle_diff(scan.theta0(b).unwrap(), a, PI / 3.0).to_degrees();
        assert!((shift(PolBasis::L) - 15.0).abs() < half_bin);
        assert!((shift(PolBasis::D).abs() - 30.0).abs() < half_bin);
        let maxima = find_maxima(&scan.entries[&PolBasis::A].hist);
        assert_eq!(maxima.len(), 6);
        let w = scan.witness().unwrap().witness();
        // pixels average the petals over their angular width
        assert!(w > 1.97, "{w}");
    }

    #[test]
    fn separable_witness_bound() {
        let mut g = rng::stream(3, 0);
        use rand::Rng;
        for _ in 0..50 {
            let c = |g: &mut rand_chacha::ChaCha8Rng| C64::new(g.random_range(-1.0..1.0), g.random_range(-1.0..1.0));
            let idler = [c(&mut g), c(&mut g)];
            let signal = [c(&mut g), c(&mut g), c(&mut g), c(&mut g)];
            let mut amps = Vec::new();
            for i in idler {
                for s in signal {
                    amps.push(i * s);
                }
            }
            let n: f64 = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            let amps = amps.into_iter().map(|a| a / n).collect();
            let ket = Ket::new(two_photon_basis(&[-1, 1]).unwrap(), amps).unwrap();
            let state = TwoPhotonState::new(State::Pure(ket), FRAC_1_SQRT_2, FRAC_1_SQRT_2).unwrap();
            let scan = angular_basis_scan(
                &state,
                1,
                &WITNESS_BASES,
                &DetectorModel::default(),
                &ScanOptions::analytic(72),
            )
            .unwrap();
            let w = scan.witness().unwrap();
            assert!(w.v_da.raw_visibility.abs() + w.v_rl.raw_visibility.abs() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn bootstrap_summary() {
        let stats = bootstrap_errors(200, 9, |s| {
            let mut g = rng::stream(s, 0);
            Ok(vec![rng::poisson(&mut g, 100.0)? as f64, 1.0])
        })
        .unwrap();
        assert!((stats.mean[0] - 100.0).abs() < 3.0);
        let sigma = stats.sigma.clone().unwrap();
        assert!((sigma[0] - 10.0).abs() < 2.0);
        assert_eq!(sigma[1], 0.0);
        let again = bootstrap_errors(200, 9, |s| {
            let mut g = rng::stream(s, 0);
            Ok(vec![rng::poisson(&mut g, 100.0)? as f64, 1.0])
        })
        .unwrap();
        assert_eq!(stats, again);
        let one = bootstrap_errors(1, 9, |_| Ok(vec![1.0])).unwrap();
        assert!(one.sigma.is_none());
    }

    #[test]
    fn bisection_calibrates_noise() {
        let p = calibrate_white_noise(1.25, |p| Ok(2.0 * (1.0 - p))).unwrap();
        assert_abs_diff_eq!(p, 0.375, epsilon = 1e-9);
        assert!(calibrate_white_noise(2.5, |p| Ok(2.0 * (1.0 - p))).is_err());
    }
}
