//! Scenario files.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! frequency_hz = 28e9
//! wire_radius_m = 1e-5            # optional, default lambda/1000
//! segments_per_dipole = 11        # optional, odd, default 11
//! zg_ohm = [50.0, 0.0]            # optional
//! zr_ohm = [50.0, 0.0]            # optional
//!
//! [[dipoles]]
//! role = "tx"                     # tx | rx | ris
//! center = [4.0, 0.0, 3.0]
//! axis = [0.0, 0.0, 1.0]          # optional, default +z
//! length_m = "0.5 lambda"
//!
//! [ris_array]                     # optional generator
//! center = [0.0, 0.0, 2.0]
//! rows = 2
//! cols = 32
//! dy_m = "0.125 lambda"
//! dz_m = "0.75 lambda"
//! element_length_m = "0.5 lambda"
//! ```
//!
//! Lengths are metres, or strings of the form `"<number> lambda"`. Ports are
//! numbered in file order, generated RIS elements last.

use std::path::Path;

use num_complex::Complex64;
use serde::Serialize;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::constants;
use crate::error::{Error, Result};
use crate::geometry::{
    default_wire_radius, Dipole, RisArray, Role, Scenario, Vec3, DEFAULT_SEGMENTS_PER_DIPOLE,
};

/// A parsed scenario plus the source and receiver terminations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub zg: Complex64,
    pub zr: Complex64,
}

impl ScenarioConfig {
    /// Checks that the scenario is a complete link: one Tx and one Rx.
    pub fn require_link(&self) -> Result<()> {
        for role in [Role::Tx, Role::Rx] {
            let n = self.scenario.count(role);
            if n != 1 {
                return Err(Error::config("dipoles", format!("need exactly one {role} dipole, found {n}")));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the parsed scenario.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

pub fn parse_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Input {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_scenario_str(&text).map_err(|e| match e {
        Error::Config { .. } => e,
        other => Error::Input {
            path: path.display().to_string(),
            message: other.to_string(),
        },
    })
}

pub fn parse_scenario_str(text: &str) -> Result<ScenarioConfig> {
    let doc: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config("document", e.message().to_string()))?;

    let known = [
        "frequency_hz",
        "wire_radius_m",
        "segments_per_dipole",
        "zg_ohm",
        "zr_ohm",
        "dipoles",
        "ris_array",
    ];
    if let Some(k) = doc.keys().find(|k| !known.contains(&k.as_str())) {
        return Err(Error::config(k.as_str(), "unknown key"));
    }

    let frequency = positive(real(required(&doc, "frequency_hz", "frequency_hz")?, "frequency_hz")?, "frequency_hz")?;
    let lambda = constants::wavelength(frequency);
    let wire_radius = match doc.get("wire_radius_m") {
        Some(v) => positive(length(v, "wire_radius_m", lambda)?, "wire_radius_m")?,
        None => default_wire_radius(lambda),
    };
    let segments_per_dipole = match doc.get("segments_per_dipole") {
        Some(v) => {
            let n = integer(v, "segments_per_dipole")?;
            if n < 3 || n % 2 == 0 {
                return Err(Error::config(
                    "segments_per_dipole",
                    format!("must be an odd integer >= 3, got {n}"),
                ));
            }
            n as usize
        }
        None => DEFAULT_SEGMENTS_PER_DIPOLE,
    };
    let zg = optional_complex(&doc, "zg_ohm")?;
    let zr = optional_complex(&doc, "zr_ohm")?;

    let mut dipoles = Vec::new();
    if let Some(list) = doc.get("dipoles") {
        let list = list
            .as_array()
            .ok_or_else(|| Error::config("dipoles", "expected an array of tables"))?;
        for (i, item) in list.iter().enumerate() {
            let key = format!("dipoles[{i}]");
            let t = item
                .as_table()
                .ok_or_else(|| Error::config(&key, "expected a table"))?;
            dipoles.push(parse_dipole(t, &key, lambda, dipoles.len())?);
        }
    }
    if let Some(v) = doc.get("ris_array") {
        let t = v
            .as_table()
            .ok_or_else(|| Error::config("ris_array", "expected a table"))?;
        let array = parse_ris_array(t, lambda)?;
        let expanded = array
            .expand(dipoles.len())
            .map_err(|e| Error::config("ris_array", e.to_string()))?;
        dipoles.extend(expanded);
    }

    if dipoles.is_empty() {
        return Err(Error::config("dipoles", "missing"));
    }
    for role in [Role::Tx, Role::Rx] {
        let n = dipoles.iter().filter(|d| d.role == role).count();
        if n > 1 {
            return Err(Error::config("dipoles", format!("at most one {role} dipole allowed, found {n}")));
        }
    }
    let scenario = Scenario::new(frequency, wire_radius, segments_per_dipole, dipoles)
        .map_err(|e| Error::config("dipoles", e.to_string()))?;
    Ok(ScenarioConfig { scenario, zg, zr })
}

fn parse_dipole(t: &Table, key: &str, lambda: f64, port: usize) -> Result<Dipole> {
    check_keys(t, key, &["role", "center", "axis", "length_m"])?;
    let role = role(required(t, "role", key)?, &format!("{key}.role"))?;
    let center = vec3(required(t, "center", key)?, &format!("{key}.center"))?;
    let axis = match t.get("axis") {
        Some(v) => vec3(v, &format!("{key}.axis"))?,
        None => Vec3::z(),
    };
    let len_key = format!("{key}.length_m");
    let len = positive(length(required(t, "length_m", key)?, &len_key, lambda)?, &len_key)?;
    if (axis.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::config(format!("{key}.axis"), "must be a unit vector"));
    }
    Dipole::new(center, axis, len, role, port).map_err(|e| Error::config(key, e.to_string()))
}

fn parse_ris_array(t: &Table, lambda: f64) -> Result<RisArray> {
    let key = "ris_array";
    check_keys(t, key, &["center", "rows", "cols", "dy_m", "dz_m", "element_length_m"])?;
    let count = |name: &str| -> Result<usize> {
        let k = format!("{key}.{name}");
        let n = integer(required(t, name, key)?, &k)?;
        if n < 1 {
            return Err(Error::config(k, format!("must be at least 1, got {n}")));
        }
        Ok(n as usize)
    };
    let len = |name: &str| -> Result<f64> {
        let k = format!("{key}.{name}");
        positive(length(required(t, name, key)?, &k, lambda)?, &k)
    };
    Ok(RisArray {
        center: vec3(required(t, "center", key)?, "ris_array.center")?,
        rows: count("rows")?,
        cols: count("cols")?,
        dy: len("dy_m")?,
        dz: len("dz_m")?,
        element_length: len("element_length_m")?,
    })
}

fn check_keys(t: &Table, key: &str, known: &[&str]) -> Result<()> {
    match t.keys().find(|k| !known.contains(&k.as_str())) {
        Some(k) => Err(Error::config(format!("{key}.{k}"), "unknown key")),
        None => Ok(()),
    }
}

fn required<'a>(t: &'a Table, name: &str, parent: &str) -> Result<&'a Value> {
    let path = if parent == name {
        name.to_string()
    } else {
        format!("{parent}.{name}")
    };
    t.get(name).ok_or_else(|| Error::config(path, "missing"))
}

fn real(v: &Value, key: &str) -> Result<f64> {
    let x = match v {
        Value::Float(x) => *x,
        Value::Integer(i) => *i as f64,
        other => return Err(Error::config(key, format!("expected a number, got {}", other.type_str()))),
    };
    if !x.is_finite() {
        return Err(Error::config(key, "must be finite"));
    }
    Ok(x)
}

fn positive(x: f64, key: &str) -> Result<f64> {
    if x > 0.0 {
        Ok(x)
    } else {
        Err(Error::config(key, format!("must be positive, got {x}")))
    }
}

fn integer(v: &Value, key: &str) -> Result<i64> {
    v.as_integer()
        .ok_or_else(|| Error::config(key, format!("expected an integer, got {}", v.type_str())))
}

/// Metres, or `"<number> lambda"`.
fn length(v: &Value, key: &str, lambda: f64) -> Result<f64> {
    if let Value::String(s) = v {
        let mut parts = s.split_whitespace();
        let (Some(num), Some("lambda"), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::config(key, format!("expected metres or \"<number> lambda\", got {s:?}")));
        };
        let x: f64 = num
            .parse()
            .map_err(|_| Error::config(key, format!("bad number {num:?}")))?;
        if !x.is_finite() {
            return Err(Error::config(key, "must be finite"));
        }
        return Ok(x * lambda);
    }
    real(v, key)
}

fn vec3(v: &Value, key: &str) -> Result<Vec3> {
    let a = v
        .as_array()
        .filter(|a| a.len() == 3)
        .ok_or_else(|| Error::config(key, "expected an array of 3 numbers"))?;
    Ok(Vec3::new(
        real(&a[0], &format!("{key}[0]"))?,
        real(&a[1], &format!("{key}[1]"))?,
        real(&a[2], &format!("{key}[2]"))?,
    ))
}

fn optional_complex(doc: &Table, key: &str) -> Result<Complex64> {
    let Some(v) = doc.get(key) else {
        return Ok(Complex64::new(50.0, 0.0));
    };
    let a = v
        .as_array()
        .filter(|a| a.len() == 2)
        .ok_or_else(|| Error::config(key, "expected [re, im]"))?;
    Ok(Complex64::new(real(&a[0], &format!("{key}[0]"))?, real(&a[1], &format!("{key}[1]"))?))
}

fn role(v: &Value, key: &str) -> Result<Role> {
    match v.as_str() {
        Some("tx") => Ok(Role::Tx),
        Some("rx") => Ok(Role::Rx),
        Some("ris") => Ok(Role::Ris),
        _ => Err(Error::config(key, format!("expected \"tx\", \"rx\" or \"ris\", got {v}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::paper_scenario;

    const TWO_DIPOLES: &str = r#"
        frequency_hz = 28e9
        [[dipoles]]
        role = "tx"
        center = [0, 0, 0]
        length_m = "0.5 lambda"
        [[dipoles]]
        role = "rx"
        center = [0.0, 0.1, 0.0]
        length_m = 0.005
    "#;

    fn key_of(e: Error) -> String {
        match e {
            Error::Config { key, .. } => key,
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn empty_document_names_frequency() {
        let e = parse_scenario_str("").unwrap_err();
        assert_eq!(e.to_string(), "frequency_hz: missing");
    }

    #[test]
    fn minimal_two_dipoles() {
        let cfg = parse_scenario_str(TWO_DIPOLES).unwrap();
        let s = &cfg.scenario;
        assert_eq!(s.dipoles.len(), 2);
        assert_eq!(s.segments_per_dipole, 11);
        assert_eq!(s.wire_radius, default_wire_radius(s.wavelength()));
        assert_eq!(s.dipoles[0].length, 0.5 * s.wavelength());
        assert_eq!(s.dipoles[1].length, 0.005);
        assert_eq!(s.dipoles[1].port_index, 1);
        assert_eq!(cfg.zg, Complex64::new(50.0, 0.0));
    }

    #[test]
    fn even_segments_rejected() {
        let text = format!("segments_per_dipole = 10\n{TWO_DIPOLES}");
        assert_eq!(key_of(parse_scenario_str(&text).unwrap_err()), "segments_per_dipole");
    }

    #[test]
    fn lone_dipole_parses_but_is_no_link() {
        let text = "frequency_hz = 1e9\n[[dipoles]]\nrole = \"tx\"\ncenter = [0,0,0]\nlength_m = 0.1\n";
        let cfg = parse_scenario_str(text).unwrap();
        assert_eq!(key_of(cfg.require_link().unwrap_err()), "dipoles");
        assert!(parse_scenario_str(TWO_DIPOLES).unwrap().require_link().is_ok());
    }

    #[test]
    fn duplicate_roles_and_empty_lists_rejected() {
        let text = TWO_DIPOLES.replace("role = \"rx\"", "role = \"tx\"");
        assert_eq!(key_of(parse_scenario_str(&text).unwrap_err()), "dipoles");
        let e = parse_scenario_str("frequency_hz = 1e9").unwrap_err();
        assert_eq!(e.to_string(), "dipoles: missing");
    }

    #[test]
    fn wrong_types_name_the_key() {
        let text = TWO_DIPOLES.replace("center = [0, 0, 0]", "center = \"origin\"");
        assert_eq!(key_of(parse_scenario_str(&text).unwrap_err()), "dipoles[0].center");
        let text = TWO_DIPOLES.replace("role = \"rx\"", "role = 3");
        assert_eq!(key_of(parse_scenario_str(&text).unwrap_err()), "dipoles[1].role");
        let text = TWO_DIPOLES.replace("length_m = 0.005", "length_m = \"5 furlongs\"");
        assert_eq!(key_of(parse_scenario_str(&text).unwrap_err()), "dipoles[1].length_m");
        let text = TWO_DIPOLES.replace("frequency_hz = 28e9", "frequency_hz = -1.0");
        assert_eq!(key_of(parse_scenario_str(&text).unwrap_err()), "frequency_hz");
    }

    #[test]
    fn missing_nested_key() {
        let text = TWO_DIPOLES.replace("length_m = 0.005", "");
        let e = parse_scenario_str(&text).unwrap_err();
        assert_eq!(e.to_string(), "dipoles[1].length_m: missing");
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("colour = 3\n{TWO_DIPOLES}");
        assert_eq!(key_of(parse_scenario_str(&text).unwrap_err()), "colour");
    }

    #[test]
    fn syntax_error_is_config_error() {
        assert!(matches!(parse_scenario_str("frequency_hz = = 3"), Err(Error::Config { .. })));
    }

    #[test]
    fn bundled_file_equals_reference() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/paper.scenario");
        let cfg = parse_scenario(&path).unwrap();
        assert_eq!(cfg.scenario, paper_scenario());
        assert_eq!(cfg.scenario.count(Role::Ris), 64);
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        let a = parse_scenario_str(TWO_DIPOLES).unwrap();
        let b = parse_scenario_str(&format!("# comment\n{TWO_DIPOLES}")).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
        let c = parse_scenario_str(&TWO_DIPOLES.replace("0.005", "0.0051")).unwrap();
        assert_ne!(a.digest(), c.digest());
    }
}
