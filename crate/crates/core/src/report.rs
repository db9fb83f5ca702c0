//! JSON analysis report.
//!
//! Schema `he-sim.report/1`, top-level keys:
//!
//! - `schema`, `command`, `seed`, `sampled`
//! - `parameters`: the resolved configuration plus derived values
//! - `chsh`, `witness`: `{ "value", "sigma" }` or null
//! - `fidelity`, `density_matrix` (`{ "re": [[..]], "im": [[..]], "psd" }`)
//! - `visibilities`: fringe or pair visibilities keyed by name
//! - `petals`: per projection `{ "null_projection", "theta0_deg", "visibility", "maxima_deg" }`
//! - `bell_visibility_flag`
//! - `violation_sigmas`: `{ "chsh": (S - 2)/sigma_S, "witness": (W - 1)/sigma_W }`,
//!   recomputed on every serialization
//! - `bootstrap`: iteration count and statistic names
//!
//! Every float is rounded to 12 significant digits.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::analysis::VisibilityResult;
use crate::error::Result;
use crate::quantum::DensityMatrix;

pub const REPORT_SCHEMA: &str = "he-sim.report/1";
pub const SIGNIFICANT_DIGITS: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub sigma: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatrixJson {
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
    pub psd: bool,
}

impl From<&DensityMatrix> for MatrixJson {
    fn from(rho: &DensityMatrix) -> Self {
        let m = rho.entries();
        let rows = |f: fn(&crate::quantum::C64) -> f64| {
            (0..m.nrows())
                .map(|r| (0..m.ncols()).map(|c| f(&m[(r, c)])).collect())
                .collect()
        };
        MatrixJson {
            re: rows(|z| z.re),
            im: rows(|z| z.im),
            psd: rho.is_psd(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PetalSummary {
    /// The projection had zero probability; the image is blank.
    pub null_projection: bool,
    pub theta0_deg: Option<f64>,
    pub visibility: f64,
    pub maxima_deg: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BootstrapInfo {
    pub n_iter: usize,
    pub statistics: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub schema: String,
    pub command: String,
    pub seed: u64,
    pub sampled: bool,
    pub parameters: Value,
    pub chsh: Option<Estimate>,
    pub witness: Option<Estimate>,
    pub fidelity: Option<f64>,
    pub density_matrix: Option<MatrixJson>,
    pub visibilities: BTreeMap<String, VisibilityResult>,
    pub petals: BTreeMap<String, PetalSummary>,
    pub bell_visibility_flag: Option<bool>,
    pub bootstrap: Option<BootstrapInfo>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ViolationSigmas {
    pub chsh: Option<f64>,
    pub witness: Option<f64>,
}

fn sigmas_above(e: Option<Estimate>, bound: f64) -> Option<f64> {
    let e = e?;
    let s = e.sigma?;
    (s > 0.0).then(|| (e.value - bound) / s)
}

impl AnalysisReport {
    pub fn new(command: &str, seed: u64, sampled: bool, parameters: Value) -> Self {
        AnalysisReport {
            schema: REPORT_SCHEMA.into(),
            command: command.into(),
            seed,
            sampled,
            parameters,
            chsh: None,
            witness: None,
            fidelity: None,
            density_matrix: None,
            visibilities: BTreeMap::new(),
            petals: BTreeMap::new(),
            bell_visibility_flag: None,
            bootstrap: None,
        }
    }

    /// `(S - 2)/sigma_S` and `(W - 1)/sigma_W`.
    pub fn violation_sigmas(&self) -> ViolationSigmas {
        ViolationSigmas {
            chsh: sigmas_above(self.chsh, 2.0),
            witness: sigmas_above(self.witness, 1.0),
        }
    }

    pub fn to_value(&self) -> Result<Value> {
        let mut v = serde_json::to_value(self)?;
        if let Value::Object(m) = &mut v {
            m.insert(
                "violation_sigmas".into(),
                serde_json::to_value(self.violation_sigmas())?,
            );
        }
        Ok(round_floats(v))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&self.to_value()?)?;
        s.push('\n');
        Ok(s)
    }
}

/// Rounds to `SIGNIFICANT_DIGITS` significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x).parse().unwrap_or(x)
}

/// Applies [`round_sig`] to every float in a JSON tree; non-finite floats
/// become null.
pub fn round_floats(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => n
            .as_f64()
            .and_then(|x| serde_json::Number::from_f64(round_sig(x)))
            .map_or(Value::Null, Value::Number),
        Value::Array(a) => Value::Array(a.into_iter().map(round_floats).collect()),
        Value::Object(m) => Value::Object(
            m.into_iter()
                .map(|(k, v)| (k, round_floats(v)))
                .collect::<Map<String, Value>>(),
        ),
        other => other,
    }
}
