//! Scenario files: model, characteristic and run parameters in TOML.
//!
//! Types are 1-based in the file and 0-based everywhere else. Probabilities
//! may be written as rational strings (`"1/2"`) or as numbers; characteristic
//! values may be real numbers or `[re, im]` pairs.
//!
//! ```toml
//! version = 1
//!
//! [model]
//! types = 1
//! initial_type = 1
//!
//! [model.offspring]
//! "1" = [{ p = "1/2", counts = [1] }, { p = "1/2", counts = [3] }]
//!
//! [characteristic]
//! kind = "indicator"
//! row = [1]
//!
//! [run]
//! n = 12
//! delta = 6
//! replicates = 2000
//! seed = 1
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::characteristics::{Characteristic, NoiseLaw, DEFAULT_TAIL_EPSILON};
use crate::constants::DEFAULT_REPORT_EPSILON;
use crate::error::{Error, Result};
use crate::linalg::{CRow, C64};
use crate::model::{ModelSpec, Probability};
use crate::simulator::DEFAULT_DELTA;
use crate::spectral::DEFAULT_TOLERANCE;
use crate::stats::VerifyOptions;

pub const SCHEMA_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// On-disk representation

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(untagged)]
enum RawNumber {
    Int(i64),
    Float(f64),
    Text(String),
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(untagged)]
enum RawValue {
    Int(i64),
    Float(f64),
    Pair([f64; 2]),
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawOutcome {
    p: RawNumber,
    counts: Vec<i64>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    types: usize,
    initial_type: usize,
    offspring: BTreeMap<String, Vec<RawOutcome>>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawRowEntry {
    k: i64,
    row: Vec<RawValue>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawNoiseOutcome {
    p: RawNumber,
    value: RawValue,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawNoiseEntry {
    k: i64,
    #[serde(rename = "type")]
    type_index: usize,
    outcomes: Vec<RawNoiseOutcome>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawCharacteristic {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    row: Option<Vec<RawValue>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    base: Vec<RawRowEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    coeff: Vec<RawRowEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    noise: Vec<RawNoiseEntry>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    n: Option<u32>,
    delta: Option<u32>,
    replicates: Option<u64>,
    seed: Option<u64>,
    workers: Option<usize>,
    eps_tail: Option<f64>,
    eps_report: Option<f64>,
    w_min: Option<f64>,
    tol: Option<f64>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawThresholds {
    p_min: Option<f64>,
    mean_band_sigmas: Option<f64>,
    variance_band_se: Option<f64>,
    bootstrap_reps: Option<usize>,
    bootstrap_seed: Option<u64>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    version: u32,
    model: RawModel,
    characteristic: RawCharacteristic,
    #[serde(default)]
    run: RawRun,
    #[serde(default)]
    thresholds: RawThresholds,
}

// ---------------------------------------------------------------------------
// Validated representation

#[derive(Clone, Debug, PartialEq)]
pub enum CharacteristicSpec {
    /// `row 1{k=0}`.
    Indicator { row: Vec<C64> },
    /// `a 1{k=0}` with `a . u = 0`.
    KestenStigum { row: Vec<C64> },
    /// Deterministic table `k -> row`.
    Table { base: Vec<(i64, Vec<C64>)> },
    Custom {
        base: Vec<(i64, Vec<C64>)>,
        coeff: Vec<(i64, Vec<C64>)>,
        noise: Vec<NoiseSpec>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    pub k: i64,
    /// 0-based type.
    pub type_index: usize,
    pub outcomes: Vec<(Probability, C64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunParams {
    pub n: u32,
    pub delta: u32,
    pub replicates: u64,
    pub seed: u64,
    pub workers: usize,
    pub eps_tail: f64,
    pub eps_report: f64,
    pub w_min: f64,
    pub tol: f64,
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            n: 12,
            delta: DEFAULT_DELTA,
            replicates: 2000,
            seed: 1,
            workers: 1,
            eps_tail: DEFAULT_TAIL_EPSILON,
            eps_report: DEFAULT_REPORT_EPSILON,
            w_min: 1e-3,
            tol: DEFAULT_TOLERANCE,
        }
    }
}

impl RunParams {
    pub fn horizon(&self) -> u32 {
        self.n + self.delta
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdParams {
    pub p_min: f64,
    pub mean_band_sigmas: f64,
    pub variance_band_se: f64,
    pub bootstrap_reps: usize,
    pub bootstrap_seed: u64,
}

impl Default for ThresholdParams {
    fn default() -> Self {
        let d = VerifyOptions::default();
        Self {
            p_min: d.p_min,
            mean_band_sigmas: d.mean_band_sigmas,
            variance_band_se: d.variance_band_se,
            bootstrap_reps: d.bootstrap_reps,
            bootstrap_seed: d.bootstrap_seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub version: u32,
    pub model: ModelSpec,
    pub characteristic: CharacteristicSpec,
    pub run: RunParams,
    pub thresholds: ThresholdParams,
}

fn parse_probability(raw: &RawNumber, location: &str) -> Result<Probability> {
    match raw {
        RawNumber::Int(i) => Ok(Probability::Exact(Ratio::from_integer(*i))),
        RawNumber::Float(x) => Ok(Probability::Float(*x)),
        RawNumber::Text(s) => {
            let s = s.trim();
            let parsed = match s.split_once('/') {
                Some((num, den)) => {
                    let num: i64 = num.trim().parse().map_err(|_| {
                        Error::scenario(location, format!("bad numerator in `{s}`"))
                    })?;
                    let den: i64 = den.trim().parse().map_err(|_| {
                        Error::scenario(location, format!("bad denominator in `{s}`"))
                    })?;
                    if den == 0 {
                        return Err(Error::scenario(location, "zero denominator"));
                    }
                    Probability::Exact(Ratio::new(num, den))
                }
                None => match s.parse::<i64>() {
                    Ok(i) => Probability::Exact(Ratio::from_integer(i)),
                    Err(_) => Probability::Float(s.parse().map_err(|_| {
                        Error::scenario(location, format!("`{s}` is not a number"))
                    })?),
                },
            };
            Ok(parsed)
        }
    }
}

fn probability_to_raw(p: &Probability) -> RawNumber {
    match p {
        Probability::Exact(r) if *r.denom() == 1 => RawNumber::Int(*r.numer()),
        Probability::Exact(r) => RawNumber::Text(format!("{}/{}", r.numer(), r.denom())),
        Probability::Float(x) => RawNumber::Float(*x),
    }
}

fn parse_value(raw: &RawValue) -> C64 {
    match raw {
        RawValue::Int(i) => C64::new(*i as f64, 0.0),
        RawValue::Float(x) => C64::new(*x, 0.0),
        RawValue::Pair([re, im]) => C64::new(*re, *im),
    }
}

fn value_to_raw(z: &C64) -> RawValue {
    if z.im != 0.0 {
        RawValue::Pair([z.re, z.im])
    } else if z.re.fract() == 0.0 && z.re.abs() < 9.0e15 {
        RawValue::Int(z.re as i64)
    } else {
        RawValue::Float(z.re)
    }
}

fn parse_row(raw: &[RawValue], types: usize, location: &str) -> Result<Vec<C64>> {
    if raw.len() != types {
        return Err(Error::scenario(
            location,
            format!("expected {types} entries, found {}", raw.len()),
        ));
    }
    let row: Vec<C64> = raw.iter().map(parse_value).collect();
    if row.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::scenario(location, "non-finite value"));
    }
    Ok(row)
}

fn parse_entries(raw: &[RawRowEntry], types: usize, section: &str) -> Result<Vec<(i64, Vec<C64>)>> {
    let mut seen = std::collections::BTreeSet::new();
    raw.iter()
        .enumerate()
        .map(|(i, e)| {
            let loc = format!("characteristic.{section}[{i}]");
            if !seen.insert(e.k) {
                return Err(Error::scenario(&loc, format!("duplicate age k = {}", e.k)));
            }
            Ok((e.k, parse_row(&e.row, types, &format!("{loc}.row"))?))
        })
        .collect()
}

fn entries_to_raw(entries: &[(i64, Vec<C64>)]) -> Vec<RawRowEntry> {
    entries
        .iter()
        .map(|(k, row)| RawRowEntry {
            k: *k,
            row: row.iter().map(value_to_raw).collect(),
        })
        .collect()
}

fn positive<T: PartialOrd + Default + Copy + std::fmt::Display>(
    value: T,
    location: &str,
) -> Result<T> {
    if value > T::default() {
        Ok(value)
    } else {
        Err(Error::scenario(
            location,
            format!("must be positive, got {value}"),
        ))
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| {
            let location = e
                .span()
                .map(|span| {
                    let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
                    format!("line {line}")
                })
                .unwrap_or_else(|| "document".into());
            Error::scenario(location, e.message().to_string())
        })?;
        Self::from_raw(raw)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    fn from_raw(raw: RawScenario) -> Result<Self> {
        if raw.version != SCHEMA_VERSION {
            return Err(Error::scenario(
                "version",
                format!(
                    "unsupported schema version {}, expected {SCHEMA_VERSION}",
                    raw.version
                ),
            ));
        }
        let types = positive(raw.model.types, "model.types")?;
        if raw.model.initial_type == 0 || raw.model.initial_type > types {
            return Err(Error::scenario(
                "model.initial_type",
                format!("must lie in 1..={types}, got {}", raw.model.initial_type),
            ));
        }
        for key in raw.model.offspring.keys() {
            match key.parse::<usize>() {
                Ok(j) if (1..=types).contains(&j) => {}
                _ => {
                    return Err(Error::scenario(
                        format!("model.offspring.{key}"),
                        format!("unexpected key; types are numbered 1..={types}"),
                    ))
                }
            }
        }
        let mut offspring = Vec::with_capacity(types);
        for j in 1..=types {
            let key = j.to_string();
            let loc = format!("model.offspring.{key}");
            let outcomes = raw
                .model
                .offspring
                .get(&key)
                .ok_or_else(|| Error::scenario(&loc, "missing offspring law for this type"))?;
            if outcomes.is_empty() {
                return Err(Error::scenario(&loc, "empty outcome list"));
            }
            let mut column = Vec::with_capacity(outcomes.len());
            for (i, o) in outcomes.iter().enumerate() {
                let oloc = format!("{loc}[{i}]");
                if o.counts.len() != types {
                    return Err(Error::scenario(
                        format!("{oloc}.counts"),
                        format!("expected {types} counts, found {}", o.counts.len()),
                    ));
                }
                if o.counts.iter().any(|&c| c < 0) {
                    return Err(Error::scenario(format!("{oloc}.counts"), "negative count"));
                }
                column.push((
                    parse_probability(&o.p, &format!("{oloc}.p"))?,
                    o.counts.clone(),
                ));
            }
            offspring.push(column);
        }
        let model = ModelSpec {
            types,
            offspring,
            initial_type: raw.model.initial_type - 1,
        };

        let rc = &raw.characteristic;
        let require_row = |kind: &str| -> Result<Vec<C64>> {
            let row = rc.row.as_ref().ok_or_else(|| {
                Error::scenario("characteristic.row", format!("required for kind `{kind}`"))
            })?;
            parse_row(row, types, "characteristic.row")
        };
        let only_row = |kind: &str| -> Result<()> {
            if !rc.base.is_empty() || !rc.coeff.is_empty() || !rc.noise.is_empty() {
                return Err(Error::scenario(
                    "characteristic",
                    format!("kind `{kind}` takes only `row`"),
                ));
            }
            Ok(())
        };
        let characteristic = match rc.kind.as_str() {
            "indicator" => {
                only_row("indicator")?;
                CharacteristicSpec::Indicator {
                    row: require_row("indicator")?,
                }
            }
            "kesten_stigum" => {
                only_row("kesten_stigum")?;
                CharacteristicSpec::KestenStigum {
                    row: require_row("kesten_stigum")?,
                }
            }
            "table" => {
                if rc.row.is_some() || !rc.coeff.is_empty() || !rc.noise.is_empty() {
                    return Err(Error::scenario(
                        "characteristic",
                        "kind `table` takes only `base` entries",
                    ));
                }
                CharacteristicSpec::Table {
                    base: parse_entries(&rc.base, types, "base")?,
                }
            }
            "custom" => {
                if rc.row.is_some() {
                    return Err(Error::scenario(
                        "characteristic.row",
                        "kind `custom` uses base/coeff/noise",
                    ));
                }
                let mut noise = Vec::new();
                for (i, e) in rc.noise.iter().enumerate() {
                    let loc = format!("characteristic.noise[{i}]");
                    if e.type_index == 0 || e.type_index > types {
                        return Err(Error::scenario(
                            format!("{loc}.type"),
                            format!("must lie in 1..={types}"),
                        ));
                    }
                    let outcomes = e
                        .outcomes
                        .iter()
                        .enumerate()
                        .map(|(x, o)| {
                            Ok((
                                parse_probability(&o.p, &format!("{loc}.outcomes[{x}].p"))?,
                                parse_value(&o.value),
                            ))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    noise.push(NoiseSpec {
                        k: e.k,
                        type_index: e.type_index - 1,
                        outcomes,
                    });
                }
                CharacteristicSpec::Custom {
                    base: parse_entries(&rc.base, types, "base")?,
                    coeff: parse_entries(&rc.coeff, types, "coeff")?,
                    noise,
                }
            }
            other => return Err(Error::scenario(
                "characteristic.kind",
                format!(
                    "unknown kind `{other}`; expected indicator, table, kesten_stigum or custom"
                ),
            )),
        };

        let d = RunParams::default();
        let rr = &raw.run;
        let run = RunParams {
            n: positive(rr.n.unwrap_or(d.n), "run.n")?,
            delta: rr.delta.unwrap_or(d.delta),
            replicates: positive(rr.replicates.unwrap_or(d.replicates), "run.replicates")?,
            seed: rr.seed.unwrap_or(d.seed),
            workers: positive(rr.workers.unwrap_or(d.workers), "run.workers")?,
            eps_tail: positive(rr.eps_tail.unwrap_or(d.eps_tail), "run.eps_tail")?,
            eps_report: positive(rr.eps_report.unwrap_or(d.eps_report), "run.eps_report")?,
            w_min: positive(rr.w_min.unwrap_or(d.w_min), "run.w_min")?,
            tol: positive(rr.tol.unwrap_or(d.tol), "run.tol")?,
        };
        let dt = ThresholdParams::default();
        let rt = &raw.thresholds;
        let thresholds = ThresholdParams {
            p_min: positive(rt.p_min.unwrap_or(dt.p_min), "thresholds.p_min")?,
            mean_band_sigmas: positive(
                rt.mean_band_sigmas.unwrap_or(dt.mean_band_sigmas),
                "thresholds.mean_band_sigmas",
            )?,
            variance_band_se: positive(
                rt.variance_band_se.unwrap_or(dt.variance_band_se),
                "thresholds.variance_band_se",
            )?,
            bootstrap_reps: positive(
                rt.bootstrap_reps.unwrap_or(dt.bootstrap_reps),
                "thresholds.bootstrap_reps",
            )?,
            bootstrap_seed: rt.bootstrap_seed.unwrap_or(dt.bootstrap_seed),
        };
        Ok(Scenario {
            version: raw.version,
            model,
            characteristic,
            run,
            thresholds,
        })
    }

    fn to_raw(&self) -> RawScenario {
        let offspring = self
            .model
            .offspring
            .iter()
            .enumerate()
            .map(|(j, column)| {
                let outcomes = column
                    .iter()
                    .map(|(p, counts)| RawOutcome {
                        p: probability_to_raw(p),
                        counts: counts.clone(),
                    })
                    .collect();
                ((j + 1).to_string(), outcomes)
            })
            .collect();
        let row = |r: &[C64]| Some(r.iter().map(value_to_raw).collect());
        let mut characteristic = RawCharacteristic {
            kind: String::new(),
            row: None,
            base: Vec::new(),
            coeff: Vec::new(),
            noise: Vec::new(),
        };
        match &self.characteristic {
            CharacteristicSpec::Indicator { row: r } => {
                characteristic.kind = "indicator".into();
                characteristic.row = row(r);
            }
            CharacteristicSpec::KestenStigum { row: r } => {
                characteristic.kind = "kesten_stigum".into();
                characteristic.row = row(r);
            }
            CharacteristicSpec::Table { base } => {
                characteristic.kind = "table".into();
                characteristic.base = entries_to_raw(base);
            }
            CharacteristicSpec::Custom { base, coeff, noise } => {
                characteristic.kind = "custom".into();
                characteristic.base = entries_to_raw(base);
                characteristic.coeff = entries_to_raw(coeff);
                characteristic.noise = noise
                    .iter()
                    .map(|n| RawNoiseEntry {
                        k: n.k,
                        type_index: n.type_index + 1,
                        outcomes: n
                            .outcomes
                            .iter()
                            .map(|(p, v)| RawNoiseOutcome {
                                p: probability_to_raw(p),
                                value: value_to_raw(v),
                            })
                            .collect(),
                    })
                    .collect();
            }
        }
        let r = &self.run;
        let t = &self.thresholds;
        RawScenario {
            version: self.version,
            model: RawModel {
                types: self.model.types,
                initial_type: self.model.initial_type + 1,
                offspring,
            },
            characteristic,
            run: RawRun {
                n: Some(r.n),
                delta: Some(r.delta),
                replicates: Some(r.replicates),
                seed: Some(r.seed),
                workers: Some(r.workers),
                eps_tail: Some(r.eps_tail),
                eps_report: Some(r.eps_report),
                w_min: Some(r.w_min),
                tol: Some(r.tol),
            },
            thresholds: RawThresholds {
                p_min: Some(t.p_min),
                mean_band_sigmas: Some(t.mean_band_sigmas),
                variance_band_se: Some(t.variance_band_se),
                bootstrap_reps: Some(t.bootstrap_reps),
                bootstrap_seed: Some(t.bootstrap_seed),
            },
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.to_raw()).expect("scenario serializes")
    }

    /// Builds the characteristic described by the scenario.
    pub fn build_characteristic(&self) -> Result<Characteristic> {
        let types = self.model.types;
        let to_row = |r: &[C64]| CRow::from_iterator(r.len(), r.iter().copied());
        match &self.characteristic {
            CharacteristicSpec::Indicator { row } | CharacteristicSpec::KestenStigum { row } => {
                Ok(Characteristic::indicator(to_row(row)))
            }
            CharacteristicSpec::Table { base } => {
                Characteristic::from_table(types, base.iter().map(|(k, r)| (*k, to_row(r))))
            }
            CharacteristicSpec::Custom { base, coeff, noise } => {
                let mut phi =
                    Characteristic::from_table(types, base.iter().map(|(k, r)| (*k, to_row(r))))?;
                for (k, r) in coeff {
                    phi.set_coeff(*k, to_row(r))?;
                }
                for n in noise {
                    let law =
                        NoiseLaw::new(n.outcomes.iter().map(|(p, v)| (p.value(), *v)).collect())
                            .map_err(|e| {
                                Error::scenario(
                                    format!("characteristic.noise (k = {})", n.k),
                                    e.to_string(),
                                )
                            })?;
                    phi.set_noise(n.k, n.type_index, law)?;
                }
                Ok(phi)
            }
        }
    }

    pub fn verify_options(&self) -> VerifyOptions {
        VerifyOptions {
            w_min: self.run.w_min,
            p_min: self.thresholds.p_min,
            mean_band_sigmas: self.thresholds.mean_band_sigmas,
            variance_band_se: self.thresholds.variance_band_se,
            bootstrap_reps: self.thresholds.bootstrap_reps,
            bootstrap_seed: self.thresholds.bootstrap_seed,
            requested_case: None,
            scale_override: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const S2: &str = r#"
version = 1

[model]
types = 2
initial_type = 1

[model.offspring]
"1" = [{ p = "1/2", counts = [2, 2] }, { p = "1/2", counts = [4, 0] }]
"2" = [{ p = "1/2", counts = [2, 2] }, { p = 0.5, counts = [0, 4] }]

[characteristic]
kind = "kesten_stigum"
row = [1, -1]

[run]
n = 12
replicates = 100
"#;

    #[test]
    fn parses_and_fills_defaults() {
        let s = Scenario::from_toml_str(S2).unwrap();
        assert_eq!(s.model.types, 2);
        assert_eq!(s.model.initial_type, 0);
        assert_eq!(
            s.model.offspring[0][0].0,
            Probability::Exact(Ratio::new(1, 2))
        );
        assert_eq!(s.model.offspring[1][1].0, Probability::Float(0.5));
        assert_eq!(s.run.delta, DEFAULT_DELTA);
        assert_eq!(s.run.horizon(), 18);
        assert_eq!(
            s.characteristic,
            CharacteristicSpec::KestenStigum {
                row: vec![C64::new(1.0, 0.0), C64::new(-1.0, 0.0)]
            }
        );
    }

    #[test]
    fn round_trip() {
        let s = Scenario::from_toml_str(S2).unwrap();
        let again = Scenario::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn missing_offspring_key_is_named() {
        let text = S2.replace(
            "\"2\" = [{ p = \"1/2\", counts = [2, 2] }, { p = 0.5, counts = [0, 4] }]\n",
            "",
        );
        match Scenario::from_toml_str(&text) {
            Err(Error::Scenario { location, .. }) => assert_eq!(location, "model.offspring.2"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_fields() {
        let bad_kind = S2.replace("kesten_stigum", "mystery");
        assert!(matches!(
            Scenario::from_toml_str(&bad_kind),
            Err(Error::Scenario { location, .. }) if location == "characteristic.kind"
        ));
        let bad_row = S2.replace("row = [1, -1]", "row = [1]");
        assert!(matches!(
            Scenario::from_toml_str(&bad_row),
            Err(Error::Scenario { location, .. }) if location == "characteristic.row"
        ));
        let unknown = S2.replace("n = 12", "n = 12\ncolour = 3");
        assert!(matches!(
            Scenario::from_toml_str(&unknown),
            Err(Error::Scenario { .. })
        ));
        let bad_p = S2.replace(
            "\"1/2\", counts = [2, 2] }, { p = \"1/2\"",
            "\"1/0\", counts = [2, 2] }, { p = \"1/2\"",
        );
        assert!(matches!(
            Scenario::from_toml_str(&bad_p),
            Err(Error::Scenario { .. })
        ));
    }

    #[test]
    fn custom_characteristic_round_trip() {
        let text = r#"
version = 1
[model]
types = 1
initial_type = 1
[model.offspring]
"1" = [{ p = "1/2", counts = [1] }, { p = "1/2", counts = [3] }]
[characteristic]
kind = "custom"
[[characteristic.base]]
k = 0
row = [[1.5, -2.0]]
[[characteristic.coeff]]
k = 1
row = [0.25]
[[characteristic.noise]]
k = 0
type = 1
outcomes = [{ p = "1/4", value = 1 }, { p = "3/4", value = [0.0, 2.0] }]
"#;
        let s = Scenario::from_toml_str(text).unwrap();
        assert_eq!(s, Scenario::from_toml_str(&s.to_toml_string()).unwrap());
        let phi = s.build_characteristic().unwrap();
        assert_eq!(phi.support(), Some((0, 1)));
        assert!(!phi.is_real());
    }
}
