//! Browser bindings: evolution curves, the open density profile and a lane
//! spectrum, each returning a JSON string.

use d2stoch::algebra::{BoundaryRates, Lane};
use d2stoch::bethe::{reconcile_spec, Branch, SolveOptions};
use d2stoch::dynamics::{evolve, profile_table};
use d2stoch::markov::{build_generator, parse_state, state_label, GeneratorSpec};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

/// Largest chain the page will build (4^N states).
const MAX_SITES: usize = 5;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Model {
    pub model: String,
    pub n: usize,
    #[serde(default)]
    pub rates: Option<BoundaryRates>,
    #[serde(default)]
    pub eta1: Option<f64>,
    #[serde(default)]
    pub eta2: Option<f64>,
}

impl Model {
    fn spec(&self) -> Result<GeneratorSpec, String> {
        if self.n > MAX_SITES {
            return Err(format!("N = {} exceeds {MAX_SITES}", self.n));
        }
        let rates = self.rates.unwrap_or_else(BoundaryRates::table3);
        rates.validate_stochastic().map_err(|e| e.to_string())?;
        let asym = |s: GeneratorSpec| match (self.eta1, self.eta2) {
            (Some(a), Some(b)) => Ok(s.with_asymmetry(a, b)),
            _ => Err("asymmetric models need eta1 and eta2".to_string()),
        };
        let s = match self.model.as_str() {
            "periodic-sym" => GeneratorSpec::periodic(self.n),
            "twisted-sym" => GeneratorSpec::twisted(self.n),
            "open-sym" => GeneratorSpec::open(self.n, rates),
            "periodic-asym" => asym(GeneratorSpec::periodic(self.n))?,
            "open-asym" => asym(GeneratorSpec::open(self.n, rates))?,
            other => return Err(format!("unknown model '{other}'")),
        };
        s.validate().map_err(|e| e.to_string())?;
        Ok(s)
    }
}

fn parse_model(json: &str) -> Result<GeneratorSpec, String> {
    serde_json::from_str::<Model>(json).map_err(|e| e.to_string())?.spec()
}

#[derive(Serialize)]
pub struct Curves {
    pub times: Vec<f64>,
    pub labels: Vec<String>,
    /// One series per observed configuration.
    pub series: Vec<Vec<f64>>,
}

/// Coefficients of the `observe` configurations (`;`-separated labels, all
/// non-negligible ones when empty) from a basis initial state on a linear grid.
pub fn evolve_curves(model: &str, initial: &str, t_end: f64, count: usize, observe: &str) -> Result<Curves, String> {
    let spec = parse_model(model)?;
    let (n, idx) = parse_state(initial).map_err(|e| e.to_string())?;
    if n != spec.n {
        return Err(format!("initial state has {n} sites, model has {}", spec.n));
    }
    if !(t_end.is_finite() && t_end > 0.0) || !(2..=2000).contains(&count) {
        return Err("need t_end > 0 and 2 <= count <= 2000".into());
    }
    let g = build_generator(&spec).map_err(|e| e.to_string())?;
    let mut v = vec![0.0; g.dim()];
    v[idx] = 1.0;
    let times: Vec<f64> = (0..count).map(|i| t_end * i as f64 / (count - 1) as f64).collect();
    let tr = evolve(&g, &v, &times).map_err(|e| e.to_string())?;
    let cols: Vec<usize> = if observe.trim().is_empty() {
        (0..g.dim())
            .filter(|&j| tr.states.iter().any(|s| s[j] > 1e-6))
            .collect()
    } else {
        observe
            .split(';')
            .map(|p| match parse_state(p) {
                Ok((m, j)) if m == n => Ok(j),
                Ok(_) => Err(format!("'{p}' has the wrong number of sites")),
                Err(e) => Err(e.to_string()),
            })
            .collect::<Result<_, _>>()?
    };
    Ok(Curves {
        labels: cols.iter().map(|&j| state_label(j, n)).collect(),
        series: cols.iter().map(|&j| tr.coefficient(j)).collect(),
        times,
    })
}

pub fn open_profile(model: &str) -> Result<Vec<d2stoch::dynamics::ProfileRow>, String> {
    profile_table(&parse_model(model)?).map_err(|e| e.to_string())
}

#[derive(Serialize)]
pub struct SpectrumRow {
    pub ed: [f64; 2],
    pub bethe: Option<[f64; 2]>,
    pub residual: f64,
    pub singular: bool,
    pub roots: String,
}

/// ED eigenvalues of one lane matched to Bethe energies.
pub fn lane_spectrum(model: &str, lane: &str, branch: &str) -> Result<Vec<SpectrumRow>, String> {
    let spec = parse_model(model)?;
    let lane = match lane {
        "sigma" => Lane::Sigma,
        "tau" => Lane::Tau,
        other => return Err(format!("unknown lane '{other}'")),
    };
    let br = match branch {
        "plus" => Branch::Plus,
        "minus" => Branch::Minus,
        other => return Err(format!("unknown branch '{other}'")),
    };
    let (rec, _) = reconcile_spec(&spec, Some(lane), (br, br), &SolveOptions::default()).map_err(|e| e.to_string())?;
    Ok(rec
        .rows
        .into_iter()
        .map(|r| SpectrumRow {
            ed: [r.ed.re, r.ed.im],
            bethe: r.bethe.map(|b| [b.re, b.im]),
            residual: r.residual,
            singular: r.singular,
            roots: r.label,
        })
        .collect())
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    r.and_then(|x| serde_json::to_string(&x).map_err(|e| e.to_string()))
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = evolveCurves)]
pub fn evolve_curves_js(model: &str, initial: &str, t_end: f64, count: usize, observe: &str) -> Result<String, JsError> {
    to_js(evolve_curves(model, initial, t_end, count, observe))
}

#[wasm_bindgen(js_name = openProfile)]
pub fn open_profile_js(model: &str) -> Result<String, JsError> {
    to_js(open_profile(model))
}

#[wasm_bindgen(js_name = laneSpectrum)]
pub fn lane_spectrum_js(model: &str, lane: &str, branch: &str) -> Result<String, JsError> {
    to_js(lane_spectrum(model, lane, branch))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curves_relax_to_sector_average() {
        let c = evolve_curves(r#"{"model":"periodic-sym","n":3}"#, "-2,-1,+1", 20.0, 50, "").unwrap();
        assert_eq!(c.labels.len(), 9);
        for s in &c.series {
            assert!((s.last().unwrap() - 1.0 / 9.0).abs() < 1e-6);
        }
    }

    #[test]
    fn profile_rows_agree() {
        let rows = open_profile(r#"{"model":"open-sym","n":2}"#).unwrap();
        assert_eq!(rows.len(), 8);
        assert!(rows.iter().all(|r| r.diff < 1e-8));
        assert!(open_profile(r#"{"model":"periodic-sym","n":2}"#).is_err());
    }

    #[test]
    fn spectrum_matches() {
        let rows = lane_spectrum(r#"{"model":"periodic-sym","n":4}"#, "sigma", "plus").unwrap();
        assert_eq!(rows.len(), 16);
        assert!(rows.iter().filter(|r| !r.singular).all(|r| r.residual < 1e-7));
    }

    #[test]
    fn bad_inputs() {
        assert!(parse_model(r#"{"model":"periodic-sym","n":9}"#).is_err());
        assert!(parse_model(r#"{"model":"nope","n":2}"#).is_err());
        assert!(parse_model(r#"{"model":"periodic-asym","n":2}"#).is_err());
        assert!(parse_model(r#"{"model":"periodic-sym","n":2,"extra":1}"#).is_err());
        assert!(evolve_curves(r#"{"model":"periodic-sym","n":3}"#, "-2,-1", 1.0, 10, "").is_err());
    }
}
