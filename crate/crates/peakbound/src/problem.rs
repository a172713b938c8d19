//! Problem files: the versioned JSON document the command line reads.
//!
//! One file fully describes a peak estimation instance plus run options.
//! Polynomials are arrays of terms, each a coefficient `c` and an exponent
//! record `e` with one entry per variable block; omitted blocks mean zero
//! exponents. Parsing is strict (unknown fields rejected) so a typo fails
//! loudly instead of silently changing the problem. Files round-trip
//! losslessly through serialize/parse.

use crate::model::{
    Horizon, ModelError, Objective, Problem, SemiAlgebraicSet, Subsystem, ValueTransform,
};
use crate::poly::{Monomial, Poly, Vars};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const SCHEMA: &str = "peakbound/1";

/// Failure before any mathematics: unreadable or malformed document.
#[derive(Debug, Error)]
pub enum ParseError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported schema {found:?}, this build reads {SCHEMA:?}")]
    Schema { found: String },
}

/// Failure of a well-formed document to describe a solvable problem.
#[derive(Debug, Error)]
pub enum FileError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{place}: exponent list longer than its block ({found} > {expected})")]
    ExponentArity {
        place: String,
        found: usize,
        expected: usize,
    },
    #[error("horizon must be a positive step count in discrete mode, got {0}")]
    BadSteps(f64),
    #[error("horizon must be a number or \"inf\", got {0:?}")]
    BadHorizonWord(String),
    #[error("objective_mode \"maximin\" requires at least one objective")]
    EmptyMaximin,
    #[error("objective_mode \"max\" takes exactly one objective, got {0}")]
    NotSingleObjective(usize),
    #[error("scale needs one [lo, hi] range per state, got {0}")]
    BadScale(usize),
    #[error("unknown unit {0:?}, expected \"degrees\"")]
    BadUnit(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub schema: String,
    pub name: String,
    pub mode: Mode,
    pub dims: Dims,
    /// Time horizon: seconds in continuous mode, step count in discrete
    /// mode (must then be a positive integer). The word "inf" selects the
    /// unbounded-time formulation (continuous mode only).
    pub horizon: HorizonFile,
    pub sets: Sets,
    pub subsystems: Vec<SubsystemFile>,
    pub objectives: Vec<PolyFile>,
    #[serde(default)]
    pub objective_mode: ObjectiveMode,
    #[serde(default)]
    pub options: Options,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Continuous,
    Discrete,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub nx: usize,
    #[serde(default)]
    pub ntheta: usize,
    #[serde(default)]
    pub nw: usize,
}

/// Support sets as constraint lists `g_i >= 0`; an empty list is the whole
/// space.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sets {
    #[serde(default, rename = "X")]
    pub x: Vec<PolyFile>,
    #[serde(default, rename = "X0")]
    pub x0: Vec<PolyFile>,
    #[serde(default, rename = "Theta")]
    pub theta: Vec<PolyFile>,
    #[serde(default, rename = "W")]
    pub w: Vec<PolyFile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsystemFile {
    pub f: Vec<PolyFile>,
    /// Where this subsystem may be active; empty means everywhere on `X`.
    #[serde(default)]
    pub region: Vec<PolyFile>,
}

pub type PolyFile = Vec<TermFile>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermFile {
    pub c: f64,
    #[serde(default, skip_serializing_if = "ExpFile::is_zero")]
    pub e: ExpFile,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpFile {
    #[serde(default, skip_serializing_if = "is_zero_u8")]
    pub t: u8,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub x: Vec<u8>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub th: Vec<u8>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub w: Vec<u8>,
}

fn is_zero_u8(v: &u8) -> bool {
    *v == 0
}

impl ExpFile {
    fn is_zero(&self) -> bool {
        self.t == 0
            && self.x.iter().all(|&e| e == 0)
            && self.th.iter().all(|&e| e == 0)
            && self.w.iter().all(|&e| e == 0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveMode {
    #[default]
    Max,
    Maximin,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Options {
    /// Relaxation order; the `--order` flag overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<u32>,
    /// Per-state `[lo, hi]` ranges mapped to `[-1, 1]` before relaxing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<Vec<(f64, f64)>>,
    /// Report `sqrt(bound)` alongside the raw bound (objective is a square).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub sqrt_report: bool,
    /// With `sqrt_report`, "degrees" converts the reported root from
    /// radians.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(default, skip_serializing_if = "is_zero_u64")]
    pub seed: u64,
    /// Trajectory count for the sampling command.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    /// Disturbance hold interval; defaults to `T / 200` inside the sampler.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hold: Option<f64>,
}

fn is_zero_u64(v: &u64) -> bool {
    *v == 0
}

impl ProblemFile {
    pub fn from_str(text: &str) -> Result<ProblemFile, ParseError> {
        let file: ProblemFile = serde_json::from_str(text)?;
        if file.schema != SCHEMA {
            return Err(ParseError::Schema { found: file.schema });
        }
        Ok(file)
    }

    pub fn from_path(path: &Path) -> Result<ProblemFile, ParseError> {
        let text = std::fs::read_to_string(path).map_err(|source| ParseError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_str(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem files always serialize")
    }

    /// Builds and validates the model-side problem.
    pub fn to_problem(&self) -> Result<Problem, FileError> {
        let vars = Vars::new(self.dims.nx, self.dims.ntheta, self.dims.nw);
        let horizon = match self.mode {
            Mode::Continuous => Horizon::Finite(self.horizon),
            Mode::Discrete => {
                let n = self.horizon;
                if !(n.is_finite() && n >= 1.0 && n.fract() == 0.0) {
                    return Err(FileError::BadSteps(n));
                }
                Horizon::Steps(n as u64)
            }
        };
        let set = |polys: &[PolyFile], place: &str| -> Result<SemiAlgebraicSet, FileError> {
            Ok(SemiAlgebraicSet::new(self.polys(polys, vars, place)?))
        };
        let subsystems = self
            .subsystems
            .iter()
            .enumerate()
            .map(|(k, sub)| {
                Ok(Subsystem::with_region(
                    self.polys(&sub.f, vars, &format!("subsystem {k} dynamics"))?,
                    set(&sub.region, &format!("subsystem {k} region"))?,
                ))
            })
            .collect::<Result<Vec<_>, FileError>>()?;
        let mut objectives = self.polys(&self.objectives, vars, "objectives")?;
        let objective = match self.objective_mode {
            ObjectiveMode::Maximin => {
                if objectives.is_empty() {
                    return Err(FileError::EmptyMaximin);
                }
                Objective::Maximin(objectives)
            }
            ObjectiveMode::Max => match objectives.len() {
                1 => Objective::Single(objectives.pop().unwrap()),
                n => return Err(FileError::NotSingleObjective(n)),
            },
        };
        let value_transform = match (&self.options.sqrt_report, self.options.unit.as_deref()) {
            (false, _) => ValueTransform::None,
            (true, None) => ValueTransform::Sqrt,
            (true, Some("degrees")) => ValueTransform::SqrtDegrees,
            (true, Some(other)) => return Err(FileError::BadUnit(other.into())),
        };
        if let Some(ranges) = &self.options.scale {
            if ranges.len() != self.dims.nx {
                return Err(FileError::BadScale(ranges.len()));
            }
        }

        let problem = Problem {
            name: self.name.clone(),
            vars,
            horizon,
            subsystems,
            state_set: set(&self.sets.x, "X")?,
            init_set: set(&self.sets.x0, "X0")?,
            param_set: set(&self.sets.theta, "Theta")?,
            dist_set: set(&self.sets.w, "W")?,
            objective,
            value_transform,
        };
        problem.validate()?;
        Ok(problem)
    }

    fn polys(&self, files: &[PolyFile], vars: Vars, place: &str) -> Result<Vec<Poly>, FileError> {
        files
            .iter()
            .enumerate()
            .map(|(i, terms)| poly_from_terms(terms, vars, &format!("{place}[{i}]")))
            .collect()
    }
}

/// Exponent list padded with zeros to its block length; longer lists are a
/// dimension error, not silent truncation.
fn pad(e: &[u8], len: usize, place: &str) -> Result<Vec<u8>, FileError> {
    if e.len() > len {
        return Err(FileError::ExponentArity {
            place: place.into(),
            found: e.len(),
            expected: len,
        });
    }
    let mut out = e.to_vec();
    out.resize(len, 0);
    Ok(out)
}

pub fn poly_from_terms(terms: &[TermFile], vars: Vars, place: &str) -> Result<Poly, FileError> {
    let mut p = Poly::zero(vars);
    for term in terms {
        let m = Monomial {
            t: term.e.t,
            x: pad(&term.e.x, vars.nx, place)?,
            th: pad(&term.e.th, vars.nth, place)?,
            w: pad(&term.e.w, vars.nw, place)?,
        };
        p.add_term(m, term.c);
    }
    Ok(p)
}

/// Term list of a polynomial in file encoding, exponents trimmed of
/// trailing zeros so the output stays minimal.
pub fn poly_to_terms(p: &Poly) -> Vec<TermFile> {
    let trim = |e: &[u8]| -> Vec<u8> {
        let mut v = e.to_vec();
        while v.last() == Some(&0) {
            v.pop();
        }
        v
    };
    p.terms()
        .map(|(m, c)| TermFile {
            c,
            e: ExpFile {
                t: m.t,
                x: trim(&m.x),
                th: trim(&m.th),
                w: trim(&m.w),
            },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const FLOWLIKE: &str = r#"{
        "schema": "peakbound/1",
        "name": "toy",
        "mode": "continuous",
        "dims": {"nx": 2, "ntheta": 1},
        "horizon": 5.0,
        "sets": {
            "X": [[{"c": 9.0}, {"c": -1.0, "e": {"x": [2]}}, {"c": -1.0, "e": {"x": [0, 2]}}]],
            "X0": [[{"c": -0.25, "e": {}}, {"c": 1.0, "e": {"x": [1]}}, {"c": -1.0, "e": {"x": [2]}}]],
            "Theta": [[{"c": 0.25}, {"c": -1.0, "e": {"th": [2]}}]]
        },
        "subsystems": [{"f": [
            [{"c": 1.0, "e": {"x": [0, 1]}}],
            [{"c": -1.0, "e": {"x": [0, 1]}}, {"c": 0.5, "e": {"th": [1]}}]
        ]}],
        "objectives": [[{"c": 1.0, "e": {"x": [0, 1]}}]],
        "options": {"order": 3, "seed": 7}
    }"#;

    #[test]
    fn parse_builds_validated_problem() {
        let file = ProblemFile::from_str(FLOWLIKE).unwrap();
        let problem = file.to_problem().unwrap();
        assert_eq!(problem.vars, Vars::new(2, 1, 0));
        assert!(matches!(problem.horizon, Horizon::Finite(t) if t == 5.0));
        assert_eq!(problem.subsystems.len(), 1);
        assert_eq!(problem.state_set.constraints.len(), 1);
        // x2 coefficient of the second dynamics component is -1.
        let f1 = &problem.subsystems[0].f[1];
        let mut m = Monomial::one(problem.vars);
        m.x[1] = 1;
        assert_eq!(f1.coef(&m), -1.0);
    }

    #[test]
    fn round_trip_is_identity() {
        let file = ProblemFile::from_str(FLOWLIKE).unwrap();
        let again = ProblemFile::from_str(&file.to_json()).unwrap();
        assert_eq!(file, again);
        // And once more through serialization to pin full stability.
        assert_eq!(file.to_json(), again.to_json());
    }

    #[test]
    fn wrong_schema_and_unknown_fields_are_parse_errors() {
        let wrong = FLOWLIKE.replace("peakbound/1", "peakbound/2");
        assert!(matches!(
            ProblemFile::from_str(&wrong),
            Err(ParseError::Schema { .. })
        ));
        let extra = FLOWLIKE.replace("\"name\"", "\"namme\"");
        assert!(matches!(
            ProblemFile::from_str(&extra),
            Err(ParseError::Json(_))
        ));
    }

    #[test]
    fn discrete_horizon_must_be_integral() {
        let file = ProblemFile::from_str(FLOWLIKE).unwrap();
        let mut bad = file.clone();
        bad.mode = Mode::Discrete;
        bad.horizon = 5.5;
        assert!(matches!(bad.to_problem(), Err(FileError::BadSteps(_))));
        bad.horizon = 5.0;
        assert!(bad.to_problem().is_ok());
    }

    #[test]
    fn oversized_exponent_list_is_rejected() {
        let file = ProblemFile::from_str(FLOWLIKE).unwrap();
        let mut bad = file.clone();
        bad.objectives[0][0].e.x = vec![1, 0, 2];
        assert!(matches!(
            bad.to_problem(),
            Err(FileError::ExponentArity { .. })
        ));
    }

    #[test]
    fn poly_encoding_round_trips_through_model() {
        let file = ProblemFile::from_str(FLOWLIKE).unwrap();
        let vars = Vars::new(2, 1, 0);
        for (i, terms) in file.sets.x0.iter().enumerate() {
            let p = poly_from_terms(terms, vars, "t").unwrap();
            let back = poly_to_terms(&p);
            let q = poly_from_terms(&back, vars, "t").unwrap();
            assert_eq!(p, q, "constraint {i}");
        }
    }
}
