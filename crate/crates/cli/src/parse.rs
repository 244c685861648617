//! Parsers for time grids, initial states and boundary rates.

use d2stoch::algebra::BoundaryRates;
use d2stoch::lintensor::SiteIndexing;
use d2stoch::markov::parse_state;
use serde_json::Value;

/// `start:end:count`, optionally prefixed by `log:` for geometric spacing.
pub fn time_grid(s: &str) -> Result<Vec<f64>, String> {
    let (log, body) = match s.strip_prefix("log:") {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let parts: Vec<&str> = body.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("time grid '{s}': expected start:end:count"));
    }
    let num = |p: &str| -> Result<f64, String> {
        let x: f64 = p.trim().parse().map_err(|_| format!("time grid '{s}': bad number '{p}'"))?;
        if x.is_finite() {
            Ok(x)
        } else {
            Err(format!("time grid '{s}': non-finite '{p}'"))
        }
    };
    let (a, b) = (num(parts[0])?, num(parts[1])?);
    let count: usize = parts[2]
        .trim()
        .parse()
        .map_err(|_| format!("time grid '{s}': bad count '{}'", parts[2]))?;
    if count == 0 {
        return Err(format!("time grid '{s}': count must be positive"));
    }
    if a < 0.0 || b < a {
        return Err(format!("time grid '{s}': need 0 <= start <= end"));
    }
    if log && a <= 0.0 {
        return Err(format!("time grid '{s}': log spacing needs start > 0"));
    }
    if count == 1 {
        return Ok(vec![a]);
    }
    let last = (count - 1) as f64;
    Ok((0..count)
        .map(|i| {
            let f = i as f64 / last;
            if i == count - 1 {
                b
            } else if log {
                (a.ln() + (b.ln() - a.ln()) * f).exp()
            } else {
                a + (b - a) * f
            }
        })
        .collect())
}

/// A probability vector from species labels (`-2,-1,+1`), a JSON vector of
/// length 4^N, or a JSON list of per-site 4-vectors (product state).
/// Returns (N, vector).
pub fn initial_state(s: &str) -> Result<(usize, Vec<f64>), String> {
    let t = s.trim();
    if !t.starts_with('[') {
        let (n, idx) = parse_state(t).map_err(|e| e.to_string())?;
        let mut v = vec![0.0; SiteIndexing::new(n, 4).dim()];
        v[idx] = 1.0;
        return Ok((n, v));
    }
    let val: Value = serde_json::from_str(t).map_err(|e| format!("initial state JSON: {e}"))?;
    let arr = val.as_array().ok_or("initial state JSON must be an array")?;
    if arr.is_empty() {
        return Err("initial state JSON is empty".into());
    }
    let nums = |v: &Value| -> Result<Vec<f64>, String> {
        v.as_array()
            .ok_or("expected an array of numbers")?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| format!("not a number: {x}")))
            .collect()
    };
    if arr.iter().all(Value::is_array) {
        let mut v = vec![1.0];
        for site in arr {
            let f = nums(site)?;
            if f.len() != 4 {
                return Err(format!("per-site factor has {} entries, need 4", f.len()));
            }
            v = v.iter().flat_map(|a| f.iter().map(move |b| a * b)).collect();
        }
        return Ok((arr.len(), v));
    }
    let v = nums(&val)?;
    let mut n = 0;
    let mut d = 1;
    while d < v.len() {
        d *= 4;
        n += 1;
    }
    if d != v.len() || n == 0 {
        return Err(format!("initial vector length {} is not 4^N", v.len()));
    }
    Ok((n, v))
}

const RATE_KEYS: [&str; 8] = ["s1", "s2", "t1", "t2", "s1p", "s2p", "t1p", "t2p"];

/// Boundary rates from a JSON object with exactly the eight rate keys.
pub fn rates(s: &str) -> Result<BoundaryRates, String> {
    let val: Value = serde_json::from_str(s).map_err(|e| format!("--rates JSON: {e}"))?;
    let obj = val.as_object().ok_or("--rates must be a JSON object")?;
    for k in obj.keys() {
        if !RATE_KEYS.contains(&k.as_str()) {
            return Err(format!("--rates: unknown key '{k}'"));
        }
    }
    for k in RATE_KEYS {
        if !obj.contains_key(k) {
            return Err(format!("--rates: missing key '{k}'"));
        }
    }
    let r: BoundaryRates = serde_json::from_value(val).map_err(|e| format!("--rates: {e}"))?;
    r.validate_stochastic().map_err(|e| e.to_string())?;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_and_log_grids() {
        assert_eq!(time_grid("0:10:3").unwrap(), vec![0.0, 5.0, 10.0]);
        let g = time_grid("log:0.001:10:5").unwrap();
        assert_eq!(g.len(), 5);
        assert!((g[1] - 0.01).abs() < 1e-15);
        assert_eq!(g[4], 10.0);
        for bad in ["0:10", "1:0:3", "0:1:0", "log:0:1:3", "a:1:3", "-1:1:2"] {
            assert!(time_grid(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn initial_forms() {
        let (n, v) = initial_state("-2,-1,+1").unwrap();
        assert_eq!(n, 3);
        assert_eq!(v.iter().position(|&x| x == 1.0), Some(4 + 2));
        let (n, v) = initial_state("[[0.5,0.5,0,0],[1,0,0,0]]").unwrap();
        assert_eq!((n, v.len()), (2, 16));
        assert_eq!(v[0], 0.5);
        assert_eq!(v[4], 0.5);
        let (n, _) = initial_state(&format!("[{}]", vec!["0.0625"; 16].join(","))).unwrap();
        assert_eq!(n, 2);
        assert!(initial_state("[1,0,0]").is_err());
        assert!(initial_state("-3,+1").is_err());
    }

    #[test]
    fn rate_keys_are_strict() {
        let ok = r#"{"s1":0.36,"s2":0.52,"t1":0.66,"t2":0.81,"s1p":-0.32,"s2p":-0.48,"t1p":-0.56,"t2p":-0.9}"#;
        assert_eq!(rates(ok).unwrap(), BoundaryRates::table3());
        assert!(rates(&ok.replace("\"t2p\"", "\"t3p\"")).is_err());
        assert!(rates(r#"{"s1":0.36}"#).is_err());
        assert!(rates(&ok.replace("0.36", "-0.36")).is_err());
    }
}
