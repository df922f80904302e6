//! TOML descriptions of markets and weights for the batch front end.
//!
//! A market file carries either a continuum instance — `[density]` and
//! `[cost]` tables holding a piecewise polynomial as `breakpoints` plus
//! per-piece `coefficients` (constant term first) — or an explicitly
//! discrete market as parallel `types`/`masses`/`costs` arrays under
//! `[discrete]`. A top-level `regime` key admits cost curves that touch
//! the diagonal at the origin, which must be declared on purpose. The
//! optional `[weight]` table supplies a default trade weight; command-line
//! weight specifications use the small `const:`/`poly:`/`piecewise:`
//! language parsed here as well.

use std::path::Path;

use serde::Deserialize;

use crate::discretize::SignalEntry;
use crate::error::{Error, Result};
use crate::lp::DiscreteMarket;
use crate::market::{MarketInstance, Regime};
use crate::scalar::ScalarFn;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPiecewise {
    breakpoints: Vec<f64>,
    coefficients: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDiscrete {
    types: Vec<f64>,
    masses: Vec<f64>,
    costs: Vec<f64>,
    theta_star: Option<f64>,
    /// Optional hand-specified signal to score against the oracle optimum:
    /// cells of `(row, posterior mean, mass)`.
    signal: Option<Vec<RawCell>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCell {
    row: usize,
    x: f64,
    mass: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMarket {
    density: Option<RawPiecewise>,
    cost: Option<RawPiecewise>,
    weight: Option<RawPiecewise>,
    regime: Option<String>,
    discrete: Option<RawDiscrete>,
}

/// A parsed market description.
#[derive(Debug)]
pub enum MarketConfig {
    /// A continuum instance, with an optional default trade weight.
    Continuum { instance: MarketInstance, weight: Option<ScalarFn> },
    /// An explicitly discrete market; only the finite oracle applies. A
    /// hand-specified `reference` signal, when present, is scored against
    /// the oracle optimum.
    Discrete {
        market: DiscreteMarket,
        weight: Option<ScalarFn>,
        reference: Vec<SignalEntry>,
    },
}

impl MarketConfig {
    pub fn weight(&self) -> Option<&ScalarFn> {
        match self {
            MarketConfig::Continuum { weight, .. } => weight.as_ref(),
            MarketConfig::Discrete { weight, .. } => weight.as_ref(),
        }
    }
}

fn section<T>(name: &str, r: std::result::Result<T, Error>) -> Result<T> {
    r.map_err(|e| Error::Config(format!("[{name}]: {e}")))
}

/// Parses a market description from TOML text.
pub fn parse_market(text: &str) -> Result<MarketConfig> {
    let raw: RawMarket =
        toml::from_str(text).map_err(|e| Error::Config(format!("market file: {e}")))?;

    let weight = match raw.weight {
        Some(w) => Some(section("weight", ScalarFn::weight(w.breakpoints, w.coefficients))?),
        None => None,
    };

    if let Some(d) = raw.discrete {
        if raw.density.is_some() || raw.cost.is_some() || raw.regime.is_some() {
            return Err(Error::Config(
                "[discrete] excludes the [density], [cost], and regime keys".into(),
            ));
        }
        let theta_star = d.theta_star.unwrap_or_else(|| default_crossing(&d.types, &d.costs));
        let signal = d.signal.unwrap_or_default();
        let market = section(
            "discrete",
            DiscreteMarket::from_parts(d.types, d.masses, d.costs, theta_star),
        )?;
        let mut reference = Vec::with_capacity(signal.len());
        for cell in signal {
            if cell.row >= market.types.len() {
                return Err(Error::Config(format!(
                    "[discrete] signal cell names row {} of a {}-type market",
                    cell.row,
                    market.types.len()
                )));
            }
            if !(0.0..=1.0).contains(&cell.x) || !(cell.mass > 0.0) {
                return Err(Error::Config(format!(
                    "[discrete] signal cell (row {}, x {}, mass {}) must have x in [0, 1] and positive mass",
                    cell.row, cell.x, cell.mass
                )));
            }
            reference.push(SignalEntry {
                row: cell.row,
                col: 0,
                theta: market.types[cell.row],
                x: cell.x,
                mass: cell.mass,
            });
        }
        return Ok(MarketConfig::Discrete { market, weight, reference });
    }

    let regime = match raw.regime.as_deref() {
        None => None,
        Some("gains-at-top") => Some(Regime::GainsAtTop),
        Some("gains-at-bottom") => Some(Regime::GainsAtBottom),
        Some("multi-crossing") => Some(Regime::MultiCrossing),
        Some(other) => {
            return Err(Error::Config(format!(
                "regime \"{other}\" is not one of gains-at-top, gains-at-bottom, multi-crossing"
            )));
        }
    };
    let Some(df) = raw.density else {
        return Err(Error::Config("missing [density] table".into()));
    };
    let Some(cf) = raw.cost else {
        return Err(Error::Config("missing [cost] table".into()));
    };
    let density = section("density", ScalarFn::density(df.breakpoints, df.coefficients))?;
    let cost = if regime == Some(Regime::GainsAtBottom) {
        section("cost", ScalarFn::cost_with_zero_origin(cf.breakpoints, cf.coefficients))?
    } else {
        section("cost", ScalarFn::cost(cf.breakpoints, cf.coefficients))?
    };
    let instance = MarketInstance::with_declared_regime(density, cost, regime)?;
    Ok(MarketConfig::Continuum { instance, weight })
}

/// Reads and parses a market description file.
pub fn load_market(path: &Path) -> Result<MarketConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_market(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// The reported crossing for a discrete market that does not declare one:
/// the midpoint between the last self-blocked type (cost above type) below
/// the first self-trading type and that type, with all-or-nothing fallbacks.
fn default_crossing(types: &[f64], costs: &[f64]) -> f64 {
    let first_eff = (0..types.len()).find(|&i| costs[i] <= types[i]);
    match first_eff {
        None => 1.0,
        Some(0) => 0.0,
        Some(i) => 0.5 * (types[i - 1] + types[i]),
    }
}

/// Parses a weight specification: `const:<v>`, `poly:<c0,c1,...>` (constant
/// term first, on all of `[0, 1]`), or `piecewise:<file>` naming a TOML
/// file with top-level `breakpoints` and `coefficients` keys.
pub fn parse_alpha(spec: &str) -> Result<ScalarFn> {
    let err = |msg: String| Error::Config(format!("weight spec \"{spec}\": {msg}"));
    if let Some(v) = spec.strip_prefix("const:") {
        let v: f64 = v.trim().parse().map_err(|e| err(format!("{e}")))?;
        return ScalarFn::weight(vec![0.0, 1.0], vec![vec![v]])
            .map_err(|e| err(format!("{e}")));
    }
    if let Some(list) = spec.strip_prefix("poly:") {
        let coefs: std::result::Result<Vec<f64>, _> =
            list.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let coefs = coefs.map_err(|e| err(format!("{e}")))?;
        if coefs.is_empty() {
            return Err(err("empty coefficient list".into()));
        }
        return ScalarFn::weight(vec![0.0, 1.0], vec![coefs]).map_err(|e| err(format!("{e}")));
    }
    if let Some(path) = spec.strip_prefix("piecewise:") {
        let text = std::fs::read_to_string(path.trim()).map_err(|e| err(format!("{e}")))?;
        let raw: RawPiecewise = toml::from_str(&text).map_err(|e| err(format!("{e}")))?;
        return ScalarFn::weight(raw.breakpoints, raw.coefficients)
            .map_err(|e| err(format!("{e}")));
    }
    Err(err("expected const:<v>, poly:<c0,c1,...>, or piecewise:<file>".into()))
}
