//! Laguerre-Gauss (`p = 0`) field synthesis on square pixel grids, and the
//! azimuthal analysis of ring and petal patterns.
//!
//! Fields are defined in the beam frame (right-handed, looking along the
//! propagation direction). Images are stored in the camera frame, which looks
//! back toward the source and is therefore mirrored in `x`: a pixel at display
//! angle `t` samples the beam at azimuth `pi - t`. Rows run top to bottom, so
//! row 0 holds the largest `y`. All azimuths reported by this module (bin
//! centres, petal orientations, maxima) are display-frame angles measured
//! counter-clockwise from the `+x` image axis.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::par;
use crate::quantum::{project_ket, DensityMatrix, Ket, SubsystemKind, C64};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LgMode {
    pub l: i32,
    /// Millimetres.
    pub waist: f64,
}

impl LgMode {
    pub fn new(l: i32, waist: f64) -> Result<Self> {
        if !(waist > 0.0 && waist.is_finite()) {
            return Err(Error::InvalidParameter(format!("waist {waist} mm must be positive")));
        }
        Ok(LgMode { l, waist })
    }
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// `Gamma(k/2 + 1)` for integer `k >= 0`.
fn gamma_half_plus_one(k: u32) -> f64 {
    if k.is_multiple_of(2) {
        factorial(k / 2)
    } else {
        // Gamma(1/2) = sqrt(pi), Gamma(x + 1) = x Gamma(x)
        let mut g = PI.sqrt();
        let mut x = 0.5;
        while x < f64::from(k) / 2.0 + 1.0 - 1e-9 {
            g *= x;
            x += 1.0;
        }
        g
    }
}

fn normalization(l: u32, waist: f64) -> f64 {
    (2.0 / (PI * waist * waist * factorial(l))).sqrt()
}

/// `C (sqrt2 r/w)^|l| exp(-r^2/w^2) exp(i l theta)`, unit-normalized over the
/// transverse plane. `theta` is the beam-frame azimuth.
pub fn lg_amplitude(r: f64, theta: f64, mode: &LgMode) -> C64 {
    let al = mode.l.unsigned_abs();
    let w = mode.waist;
    let radial = normalization(al, w) * (2f64.sqrt() * r / w).powi(al as i32) * (-(r * r) / (w * w)).exp();
    C64::from_polar(radial, f64::from(mode.l) * theta)
}

/// Radius of peak intensity, `w sqrt(|l|/2)`.
pub fn peak_radius(l: i32, waist: f64) -> f64 {
    waist * (f64::from(l.unsigned_abs()) / 2.0).sqrt()
}

/// Peak of `|lg_amplitude|^2` over the plane.
pub fn peak_intensity(l: i32, waist: f64) -> f64 {
    let mode = LgMode { l, waist };
    lg_amplitude(peak_radius(l, waist), 0.0, &mode).norm_sqr()
}

/// `8 w sqrt(max|l|/2 + 1)`.
pub fn default_extent(waist: f64, max_l: u32) -> f64 {
    8.0 * waist * (f64::from(max_l) / 2.0 + 1.0).sqrt()
}

/// Peak radius +/- 35%; for `l = 0` the disc of radius `w`.
pub fn default_annulus(waist: f64, l: i32) -> (f64, f64) {
    if l == 0 {
        (0.0, waist)
    } else {
        let r = peak_radius(l, waist);
        (0.65 * r, 1.35 * r)
    }
}

/// Beam-frame azimuth sampled by a display-frame angle.
pub fn beam_angle(display_angle: f64) -> f64 {
    PI - display_angle
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    n: usize,
    extent: f64,
}

impl Grid {
    pub const MIN_N: usize = 16;

    /// `n x n` pixels spanning `extent` millimetres.
    pub fn new(n: usize, extent: f64) -> Result<Self> {
        if n < Self::MIN_N {
            return Err(Error::InvalidParameter(format!("grid size {n} below {}", Self::MIN_N)));
        }
        if !(extent > 0.0 && extent.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "grid extent {extent} mm must be positive"
            )));
        }
        Ok(Grid { n, extent })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn pixel_size(&self) -> f64 {
        self.extent / self.n as f64
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Display-frame `(x, y)` of the centre of pixel `index` (row-major).
    pub fn xy(&self, index: usize) -> (f64, f64) {
        let (row, col) = (index / self.n, index % self.n);
        let d = self.pixel_size();
        let half = self.extent / 2.0;
        ((col as f64 + 0.5) * d - half, half - (row as f64 + 0.5) * d)
    }

    /// Radius and display-frame angle in `[0, 2pi)` of pixel `index`.
    pub fn polar(&self, index: usize) -> (f64, f64) {
        let (x, y) = self.xy(index);
        (x.hypot(y), y.atan2(x).rem_euclid(TAU))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageMeta {
    pub descriptor: String,
    /// Set when the image comes from a zero-probability projection.
    pub null_projection: bool,
}

/// Non-negative real image on a square grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldImage {
    grid: Grid,
    pixels: Vec<f64>,
    pub meta: ImageMeta,
}

impl FieldImage {
    pub fn new(grid: Grid, pixels: Vec<f64>, meta: ImageMeta) -> Result<Self> {
        if pixels.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: pixels.len(),
            });
        }
        if let Some(bad) = pixels.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::Numerical(format!("invalid pixel value {bad}")));
        }
        Ok(FieldImage { grid, pixels, meta })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn max(&self) -> f64 {
        self.pixels.iter().copied().fold(0.0, f64::max)
    }

    pub fn total(&self) -> f64 {
        par::pairwise_sum(&self.pixels)
    }

    pub fn max_normalized(mut self) -> Self {
        let m = self.max();
        if m > 0.0 {
            self.pixels.iter_mut().for_each(|p| *p /= m);
        }
        self
    }
}

/// Mode fields of an OAM alphabet sampled on a grid, stored per pixel.
#[derive(Clone, Debug)]
pub struct ModeTable {
    grid: Grid,
    waist: f64,
    alphabet: Vec<i32>,
    fields: Vec<C64>,
}

impl ModeTable {
    pub fn new(grid: Grid, waist: f64, alphabet: &[i32]) -> Result<Self> {
        let modes = alphabet
            .iter()
            .map(|&l| LgMode::new(l, waist))
            .collect::<Result<Vec<_>>>()?;
        let per_pixel = par::map_range(grid.len(), |i| {
            let (r, t) = grid.polar(i);
            let tb = beam_angle(t);
            modes.iter().map(|m| lg_amplitude(r, tb, m)).collect::<Vec<_>>()
        });
        Ok(ModeTable {
            grid,
            waist,
            alphabet: alphabet.to_vec(),
            fields: per_pixel.into_iter().flatten().collect(),
        })
    }

    pub fn alphabet(&self) -> &[i32] {
        &self.alphabet
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn waist(&self) -> f64 {
        self.waist
    }

    /// Per-pixel `sum_mn rho_mn A_m conj(A_n)` (probability density, mm^-2).
    pub fn intensity(&self, rho: &DensityMatrix) -> Result<Vec<f64>> {
        let k = self.alphabet.len();
        if oam_alphabet(rho)? != self.alphabet.as_slice() {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: rho.dim(),
            });
        }
        let m = rho.entries();
        Ok(par::map_range(self.grid.len(), |i| {
            let a = &self.fields[i * k..(i + 1) * k];
            let mut s = 0.0;
            for p in 0..k {
                s += m[(p, p)].re * a[p].norm_sqr();
                for q in p + 1..k {
                    s += 2.0 * (m[(p, q)] * a[p] * a[q].conj()).re;
                }
            }
            s.max(0.0)
        }))
    }
}

/// Alphabet of a single-subsystem OAM state.
pub fn oam_alphabet(rho: &DensityMatrix) -> Result<&[i32]> {
    match rho.basis().subsystems() {
        [s] => match &s.kind {
            SubsystemKind::Oam(alphabet) => Ok(alphabet),
            SubsystemKind::Polarization => Err(Error::SubsystemKindMismatch(s.name.clone())),
        },
        _ => Err(Error::InvalidParameter(
            "expected a state of a single OAM subsystem".into(),
        )),
    }
}

/// Intensity of the OAM state left after projecting the polarization of a
/// pump ket (`pol x oam`) onto `pol`, max-normalized to 1. With `pol = None`
/// the two polarization components add incoherently. A zero-probability
/// projection gives an all-zero image with `meta.null_projection` set.
pub fn render_projection(state: &Ket, pol: Option<&Ket>, grid: &Grid, waist: f64) -> Result<FieldImage> {
    let (oam, descriptor) = match pol {
        Some(p) => {
            let out = project_ket(state, "pol", p)?;
            match out.into_residual() {
                Some(k) => (k.projector(), "projected".to_string()),
                None => {
                    let meta = ImageMeta {
                        descriptor: "null projection".into(),
                        null_projection: true,
                    };
                    return FieldImage::new(*grid, vec![0.0; grid.len()], meta);
                }
            }
        }
        None => (state.projector().partial_trace("pol")?, "unprojected".to_string()),
    };
    let table = ModeTable::new(*grid, waist, oam_alphabet(&oam)?)?;
    let pixels = table.intensity(&oam)?;
    let meta = ImageMeta {
        descriptor,
        null_projection: false,
    };
    Ok(FieldImage::new(*grid, pixels, meta)?.max_normalized())
}

/// Azimuthal histogram over an annulus. Bin `k` covers display angles
/// `[2pi k/n, 2pi (k+1)/n)`; its centre is `2pi (k + 1/2)/n`.
#[derive(Clone, Debug, PartialEq)]
pub struct AngularHistogram {
    bins: Vec<f64>,
    annulus: (f64, f64),
}

impl AngularHistogram {
    pub const MIN_BINS: usize = 8;

    pub fn new(bins: Vec<f64>, annulus: (f64, f64)) -> Result<Self> {
        if bins.len() < Self::MIN_BINS {
            return Err(Error::InvalidParameter(format!(
                "{} angular bins, need at least {}",
                bins.len(),
                Self::MIN_BINS
            )));
        }
        if bins.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::Numerical("negative or non-finite bin value".into()));
        }
        if !(annulus.0 >= 0.0 && annulus.0 < annulus.1) {
            return Err(Error::InvalidParameter(format!("bad annulus {annulus:?}")));
        }
        Ok(AngularHistogram { bins, annulus })
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn nbins(&self) -> usize {
        self.bins.len()
    }

    pub fn annulus(&self) -> (f64, f64) {
        self.annulus
    }

    pub fn bin_width(&self) -> f64 {
        TAU / self.bins.len() as f64
    }

    pub fn bin_center(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.bin_width()
    }

    pub fn total(&self) -> f64 {
        par::pairwise_sum(&self.bins)
    }
}

/// Each pixel is split into `PROFILE_SUBSAMPLES^2` sub-pixels that are binned
/// by their own radius and angle.
pub const PROFILE_SUBSAMPLES: usize = 8;
const EDGE_EPS: f64 = 1e-9;

/// Precomputed pixel-to-bin weights for one grid, bin count and annulus.
/// Building it costs the sub-pixel scan once; applying it is a sparse sum.
#[derive(Clone, Debug)]
pub struct AngularBinner {
    grid: Grid,
    nbins: usize,
    annulus: (f64, f64),
    entries: Vec<(u32, u32, f64)>,
}

impl AngularBinner {
    pub fn new(grid: &Grid, nbins: usize, annulus: (f64, f64)) -> Result<Self> {
        let (r_min, r_max) = annulus;
        if nbins < AngularHistogram::MIN_BINS {
            return Err(Error::InvalidParameter(format!(
                "{nbins} angular bins, need at least 8"
            )));
        }
        if !(r_min >= 0.0 && r_min < r_max && r_max <= grid.extent() / 2.0) {
            return Err(Error::InvalidParameter(format!(
                "annulus ({r_min}, {r_max}) mm does not fit in a {} mm image",
                grid.extent()
            )));
        }
        let d = grid.pixel_size();
        let sub = d / PROFILE_SUBSAMPLES as f64;
        let weight = 1.0 / (PROFILE_SUBSAMPLES * PROFILE_SUBSAMPLES) as f64;
        let per_pixel = par::map_range(grid.len(), |i| {
            let mut local: Vec<(u32, f64)> = Vec::new();
            let mut add = |k: usize, w: f64| match local.iter_mut().find(|(b, _)| *b as usize == k) {
                Some(e) => e.1 += w,
                None => local.push((k as u32, w)),
            };
            let (xc, yc) = grid.xy(i);
            let r = xc.hypot(yc);
            if r + d < r_min || r - d >= r_max {
                return local;
            }
            for a in 0..PROFILE_SUBSAMPLES {
                let y = yc + d / 2.0 - (a as f64 + 0.5) * sub;
                for b in 0..PROFILE_SUBSAMPLES {
                    let x = xc - d / 2.0 + (b as f64 + 0.5) * sub;
                    let rs = x.hypot(y);
                    if rs < r_min || rs >= r_max {
                        continue;
                    }
                    let f = y.atan2(x).rem_euclid(TAU) / TAU * nbins as f64;
                    let k = f.floor();
                    let frac = f - k;
                    let k = (k as usize) % nbins;
                    // sub-pixels on a bin edge are shared so the binning keeps
                    // the grid's four-fold symmetry
                    if frac < EDGE_EPS {
                        add(k, 0.5 * weight);
                        add((k + nbins - 1) % nbins, 0.5 * weight);
                    } else if 1.0 - frac < EDGE_EPS {
                        add(k, 0.5 * weight);
                        add((k + 1) % nbins, 0.5 * weight);
                    } else {
                        add(k, weight);
                    }
                }
            }
            local.sort_by_key(|e| e.0);
            local
        });
        let entries: Vec<(u32, u32, f64)> = per_pixel
            .into_iter()
            .enumerate()
            .flat_map(|(i, v)| v.into_iter().map(move |(k, w)| (i as u32, k, w)))
            .collect();
        if entries.is_empty() {
            return Err(Error::EmptyAnnulus { r_min, r_max });
        }
        Ok(AngularBinner {
            grid: *grid,
            nbins,
            annulus,
            entries,
        })
    }

    pub fn nbins(&self) -> usize {
        self.nbins
    }

    pub fn annulus(&self) -> (f64, f64) {
        self.annulus
    }

    pub fn apply(&self, img: &FieldImage) -> Result<AngularHistogram> {
        if img.grid != self.grid {
            return Err(Error::DimensionMismatch {
                expected: self.grid.len(),
                got: img.grid.len(),
            });
        }
        let mut bins = vec![0.0; self.nbins];
        for &(i, k, w) in &self.entries {
            bins[k as usize] += img.pixels[i as usize] * w;
        }
        AngularHistogram::new(bins, self.annulus)
    }
}

/// Sums image values per azimuthal bin over the annulus `r_min <= r < r_max`.
pub fn angular_profile(img: &FieldImage, nbins: usize, annulus: (f64, f64)) -> Result<AngularHistogram> {
    AngularBinner::new(&img.grid, nbins, annulus)?.apply(img)
}

/// Radial overlap `int u_|m| u_|n| r dr` of two normalized LG profiles.
fn radial_overlap(m: i32, n: i32) -> f64 {
    let (a, b) = (m.unsigned_abs(), n.unsigned_abs());
    gamma_half_plus_one(a + b) / (TAU * (factorial(a) * factorial(b)).sqrt())
}

/// Exact probability per azimuthal bin for an OAM density matrix, integrated
/// over all radii. The annulus recorded on the histogram is nominal.
pub fn analytic_angular_profile(rho: &DensityMatrix, nbins: usize, annulus: (f64, f64)) -> Result<AngularHistogram> {
    if nbins < AngularHistogram::MIN_BINS {
        return Err(Error::InvalidParameter(format!(
            "{nbins} angular bins, need at least 8"
        )));
    }
    let alphabet = oam_alphabet(rho)?;
    let m = rho.entries();
    let width = TAU / nbins as f64;
    let bins = (0..nbins)
        .map(|k| {
            let (t0, t1) = (k as f64 * width, (k + 1) as f64 * width);
            let mut s = 0.0;
            for (p, &lp) in alphabet.iter().enumerate() {
                for (q, &lq) in alphabet.iter().enumerate() {
                    let dk = f64::from(lp - lq);
                    // display frame: exp(i dk (pi - t))
                    let integral = if lp == lq {
                        C64::new(width, 0.0)
                    } else {
                        let e = |t: f64| C64::from_polar(1.0, dk * (PI - t));
                        (e(t1) - e(t0)) / C64::new(0.0, -dk)
                    };
                    s += (m[(p, q)] * radial_overlap(lp, lq) * integral).re;
                }
            }
            s.max(0.0)
        })
        .collect();
    AngularHistogram::new(bins, annulus)
}

/// Least-squares petal fit `B (1 + V cos(2l(t - t0)))/2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PetalFit {
    pub l: u32,
    /// Orientation of a maximum in `[0, pi/l)`; `None` for a flat profile.
    pub theta0: Option<f64>,
    /// Clamped to `[0, 1]`.
    pub visibility: f64,
    pub raw_visibility: f64,
    /// RMS of the bin residuals.
    pub residual: f64,
    /// Fitted curve `mean + cos_coef cos(2lt) + sin_coef sin(2lt)`, in bin
    /// units (value a bin of the same width would hold at angle `t`).
    pub mean: f64,
    pub cos_coef: f64,
    pub sin_coef: f64,
}

impl PetalFit {
    pub fn curve(&self, theta: f64) -> f64 {
        let a = 2.0 * f64::from(self.l) * theta;
        self.mean + self.cos_coef * a.cos() + self.sin_coef * a.sin()
    }

    pub fn amplitude(&self) -> f64 {
        self.cos_coef.hypot(self.sin_coef)
    }
}

/// Fits the bin contents with the model integrated across each bin, so the
/// recovered visibility does not depend on the bin width.
pub fn petal_fit(hist: &AngularHistogram, l: u32) -> Result<PetalFit> {
    if l == 0 {
        return Err(Error::InvalidParameter("petal fit needs l >= 1".into()));
    }
    let n = hist.nbins();
    if n < 4 * l as usize {
        return Err(Error::InvalidParameter(format!(
            "{n} bins cannot resolve 2l = {} petals (need {})",
            2 * l,
            4 * l
        )));
    }
    let w = hist.bin_width();
    let k = 2.0 * f64::from(l);
    let mut ata = Matrix3::<f64>::zeros();
    let mut aty = Vector3::<f64>::zeros();
    let rows: Vec<Vector3<f64>> = (0..n)
        .map(|i| {
            let (t0, t1) = (i as f64 * w, (i + 1) as f64 * w);
            let g = ((k * t1).sin() - (k * t0).sin()) / (k * w);
            let h = -((k * t1).cos() - (k * t0).cos()) / (k * w);
            Vector3::new(1.0, g, h)
        })
        .collect();
    for (row, &y) in rows.iter().zip(hist.bins()) {
        ata += row * row.transpose();
        aty += row * y;
    }
    let beta = ata
        .lu()
        .solve(&aty)
        .ok_or_else(|| Error::Numerical("singular petal-fit normal equations".into()))?;
    let residual = (rows
        .iter()
        .zip(hist.bins())
        .map(|(row, &y)| (y - row.dot(&beta)).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt();
    let (mean, b, c) = (beta[0], beta[1], beta[2]);
    let amp = b.hypot(c);
    let degenerate = !(mean > 0.0) || amp <= 1e-12 * mean.abs().max(f64::MIN_POSITIVE);
    let (theta0, raw) = if degenerate {
        (None, 0.0)
    } else {
        let period = PI / f64::from(l);
        (Some((c.atan2(b) / k).rem_euclid(period)), amp / mean)
    };
    Ok(PetalFit {
        l,
        theta0,
        visibility: raw.clamp(0.0, 1.0),
        raw_visibility: raw,
        residual,
        mean,
        cos_coef: b,
        sin_coef: c,
    })
}

/// Profiles whose smoothed contrast stays below this are treated as flat.
pub const FLAT_CONTRAST: f64 = 0.02;

/// Angles of local maxima after a 3-bin circular moving average, refined by
/// a parabola through the neighbours. Flat profiles have none.
pub fn find_maxima(hist: &AngularHistogram) -> Vec<f64> {
    let b = hist.bins();
    let n = b.len();
    let s: Vec<f64> = (0..n)
        .map(|i| (b[(i + n - 1) % n] + b[i] + b[(i + 1) % n]) / 3.0)
        .collect();
    let hi = s.iter().copied().fold(f64::MIN, f64::max);
    let lo = s.iter().copied().fold(f64::MAX, f64::min);
    if !(hi > 0.0) || (hi - lo) / (hi + lo) < FLAT_CONTRAST {
        return Vec::new();
    }
    let w = hist.bin_width();
    (0..n)
        .filter_map(|i| {
            let (prev, cur, next) = (s[(i + n - 1) % n], s[i], s[(i + 1) % n]);
            // a two-bin plateau counts once, at its first bin
            if cur > prev && cur >= next {
                let denom = prev - 2.0 * cur + next;
                let shift = if denom != 0.0 { 0.5 * (prev - next) / denom } else { 0.0 };
                Some((hist.bin_center(i) + shift * w).rem_euclid(TAU))
            } else {
                None
            }
        })
        .collect()
}

/// Signed difference `a - b` folded into `[-period/2, period/2)`.
pub fn angle_diff(a: f64, b: f64, period: f64) -> f64 {
    (a - b + period / 2.0).rem_euclid(period) - period / 2.0
}
