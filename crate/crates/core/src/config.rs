//! Flat experiment configuration.
//!
//! A TOML document whose keys, after flattening tables into dotted paths, must all
//! be known. Values missing from the document take their defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::kinetic::KineticConfig;
use crate::params::{Domain, Params, Sign};
use crate::stability::BoundConstants;
use crate::transport::OtConfig;
use crate::vlasov::{Family, InitialCondition, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Int,
    Float,
    Str,
    Bool,
}

/// Known keys with their kinds and defaults.
const KEYS: &[(&str, Kind, &str)] = &[
    ("seed", Kind::Int, "0"),
    ("sim.p", Kind::Float, "2.0"),
    ("sim.d", Kind::Int, "1"),
    ("sim.sigma", Kind::Int, "-1"),
    ("sim.domain", Kind::Str, "\"torus\""),
    ("sim.family", Kind::Str, "\"perturbed\""),
    ("sim.eps1", Kind::Float, "0.01"),
    ("sim.eps2", Kind::Float, "0.02"),
    ("sim.mode", Kind::Int, "1"),
    ("sim.vth", Kind::Float, "0.08"),
    ("sim.shift", Kind::Float, "0.05"),
    ("sim.particles", Kind::Int, "65536"),
    ("sim.cells", Kind::Int, "512"),
    ("sim.dt", Kind::Float, "0.001"),
    ("sim.t_end", Kind::Float, "2.0"),
    ("sim.snapshots", Kind::Int, "20"),
    ("sim.blowup_cap", Kind::Float, "1000.0"),
    ("sim.cfl_safety", Kind::Float, "1.0"),
    ("sim.subsample", Kind::Int, "500"),
    ("ot.exact_cap", Kind::Int, "2000"),
    ("ot.epsilon", Kind::Float, "0.001"),
    ("ot.tol", Kind::Float, "1e-9"),
    ("ot.max_iter", Kind::Int, "20000"),
    ("ot.kinetic_max_iter", Kind::Int, "100"),
    ("bounds.C_L", Kind::Float, "1.0"),
    ("bounds.C_KW", Kind::Float, "1.0"),
    ("bounds.C_HW", Kind::Float, "1.0"),
    ("bounds.C_loglip", Kind::Float, "1.0"),
    ("bounds.C_d", Kind::Float, "1.0"),
    ("bounds.c0", Kind::Float, "1.0"),
    ("bounds.fit", Kind::Bool, "false"),
    ("output.dir", Kind::Str, "\"out\""),
    ("output.snapshot_files", Kind::Bool, "false"),
];

fn kind_of(key: &str) -> Option<Kind> {
    KEYS.iter().find(|k| k.0 == key).map(|k| k.1)
}

fn parse_value(text: &str) -> Result<Value> {
    let doc: Table = format!("v = {text}").parse().map_err(|e| Error::Config(format!("bad value '{text}': {e}")))?;
    Ok(doc["v"].clone())
}

fn coerce(key: &str, value: Value) -> Result<Value> {
    let kind = kind_of(key).ok_or_else(|| Error::Config(format!("unknown key '{key}'")))?;
    match (kind, value) {
        (Kind::Float, Value::Integer(i)) => Ok(Value::Float(i as f64)),
        (Kind::Float, v @ Value::Float(_))
        | (Kind::Int, v @ Value::Integer(_))
        | (Kind::Str, v @ Value::String(_))
        | (Kind::Bool, v @ Value::Boolean(_)) => Ok(v),
        (kind, v) => Err(Error::Config(format!("key '{key}' expects {kind:?}, got '{v}'"))),
    }
}

fn flatten(prefix: &str, table: &Table, out: &mut BTreeMap<String, Value>) -> Result<()> {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out)?,
            other => {
                out.insert(key.clone(), coerce(&key, other.clone())?);
            }
        }
    }
    Ok(())
}

/// Validated experiment description plus the flat key-value view it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    entries: BTreeMap<String, Value>,
    pub seed: u64,
    pub sim: SimConfig,
    /// Number of equal intervals between snapshots; `snapshots + 1` are taken.
    pub snapshots: usize,
    pub kinetic: KineticConfig,
    pub bounds: BoundConstants,
    /// Replace `C_L` and `C_KW` by the largest common value satisfying both side conditions.
    pub fit_constants: bool,
    pub output_dir: PathBuf,
    pub snapshot_files: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::from_entries(BTreeMap::new()).expect("defaults are valid")
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        let mut entries = BTreeMap::new();
        flatten("", &table, &mut entries)?;
        Self::from_entries(entries)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Overrides one key with a TOML-literal value (`0.5`, `"torus"`, `true`).
    /// Bare words are taken as strings.
    pub fn with_override(&self, key: &str, text: &str) -> Result<Self> {
        let value = match parse_value(text) {
            Ok(v) => v,
            Err(_) if kind_of(key) == Some(Kind::Str) => Value::String(text.to_string()),
            Err(e) => return Err(e),
        };
        let mut entries = self.entries.clone();
        entries.insert(key.to_string(), coerce(key, value)?);
        Self::from_entries(entries)
    }

    fn from_entries(entries: BTreeMap<String, Value>) -> Result<Self> {
        let get = |key: &str| -> Value {
            entries.get(key).cloned().unwrap_or_else(|| {
                let default = KEYS.iter().find(|k| k.0 == key).expect("known key").2;
                coerce(key, parse_value(default).expect("default parses")).expect("default has the right kind")
            })
        };
        let float = |key: &str| get(key).as_float().expect("coerced");
        let int = |key: &str| -> Result<u64> {
            let v = get(key).as_integer().expect("coerced");
            u64::try_from(v).map_err(|_| Error::Config(format!("key '{key}' must be nonnegative, got {v}")))
        };
        let string = |key: &str| get(key).as_str().expect("coerced").to_string();
        let boolean = |key: &str| get(key).as_bool().expect("coerced");

        let seed = int("seed")?;
        let sigma = Sign::from_value(get("sim.sigma").as_integer().expect("coerced") as f64)
            .map_err(|e| Error::Config(e.to_string()))?;
        let domain: Domain = string("sim.domain").parse().map_err(|e: Error| Error::Config(e.to_string()))?;
        let params = Params::new(float("sim.p"), int("sim.d")? as usize, sigma, domain)
            .map_err(|e| Error::Config(e.to_string()))?;
        let family: Family = string("sim.family").parse().map_err(|e: Error| Error::Config(e.to_string()))?;
        let mode = u32::try_from(int("sim.mode")?).map_err(|_| Error::Config("sim.mode too large".into()))?;
        let ic = InitialCondition {
            family,
            eps1: float("sim.eps1"),
            eps2: float("sim.eps2"),
            mode,
            vth: float("sim.vth"),
            shift: float("sim.shift"),
            seed,
        };
        let mut sim = SimConfig::new(params, ic);
        sim.particles = int("sim.particles")? as usize;
        sim.cells = int("sim.cells")? as usize;
        sim.dt = float("sim.dt");
        sim.t_end = float("sim.t_end");
        sim.blowup_cap = float("sim.blowup_cap");
        sim.cfl_safety = float("sim.cfl_safety");
        sim.subsample = int("sim.subsample")? as usize;
        sim.validate().map_err(|e| Error::Config(e.to_string()))?;
        let snapshots = int("sim.snapshots")? as usize;
        if snapshots == 0 {
            return Err(Error::Config("sim.snapshots must be at least 1".into()));
        }

        let ot = OtConfig {
            exact_cap: int("ot.exact_cap")? as usize,
            epsilon: float("ot.epsilon"),
            tol: float("ot.tol"),
            max_iter: int("ot.max_iter")? as usize,
        };
        if !(ot.epsilon > 0.0 && ot.tol > 0.0) || ot.max_iter == 0 {
            return Err(Error::Config("ot.epsilon, ot.tol and ot.max_iter must be positive".into()));
        }
        let kinetic = KineticConfig { max_iter: int("ot.kinetic_max_iter")? as usize, ot, ..Default::default() };

        let bounds = BoundConstants {
            c_l: float("bounds.C_L"),
            c_kw: float("bounds.C_KW"),
            c_hw: float("bounds.C_HW"),
            c_loglip: float("bounds.C_loglip"),
            c_d: float("bounds.C_d"),
            c0: float("bounds.c0"),
        };
        bounds.validate().map_err(|e| Error::Config(e.to_string()))?;

        Ok(Self {
            seed,
            sim,
            snapshots,
            kinetic,
            bounds,
            fit_constants: boolean("bounds.fit"),
            output_dir: PathBuf::from(string("output.dir")),
            snapshot_files: boolean("output.snapshot_files"),
            entries,
        })
    }

    /// Every key with its effective value, defaults included.
    pub fn effective(&self) -> BTreeMap<String, Value> {
        KEYS.iter()
            .map(|&(key, _, default)| {
                let v = self
                    .entries
                    .get(key)
                    .cloned()
                    .unwrap_or_else(|| coerce(key, parse_value(default).expect("default parses")).expect("kind"));
                (key.to_string(), v)
            })
            .collect()
    }

    /// Effective configuration as a nested TOML table.
    pub fn to_table(&self) -> Table {
        let mut root = Table::new();
        for (key, value) in self.effective() {
            let mut parts: Vec<&str> = key.split('.').collect();
            let leaf = parts.pop().expect("nonempty key");
            let mut t = &mut root;
            for part in parts {
                t = t
                    .entry(part.to_string())
                    .or_insert_with(|| Value::Table(Table::new()))
                    .as_table_mut()
                    .expect("sections are tables");
            }
            t.insert(leaf.to_string(), value);
        }
        root
    }

    pub fn params(&self) -> &Params {
        &self.sim.params
    }

    pub fn known_keys() -> impl Iterator<Item = &'static str> {
        KEYS.iter().map(|k| k.0)
    }
}
