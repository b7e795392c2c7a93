//! Flat key = value experiment configuration. One assignment per line,
//! `#` starts a comment, keys are case-sensitive. Every parse error names
//! the offending field.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    SymQuadratic,
    AsymQuadratic,
    Sensing,
    Bernoulli,
}

impl ModelKind {
    pub fn is_symmetric(self) -> bool {
        matches!(self, ModelKind::SymQuadratic)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelKind::SymQuadratic => "sym-quadratic",
            ModelKind::AsymQuadratic => "asym-quadratic",
            ModelKind::Sensing => "sensing",
            ModelKind::Bernoulli => "bernoulli",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    Oracle,
    Spectral,
}

/// A parsed experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub n: usize,
    pub q: usize,
    pub r: usize,
    pub sigma_min: f64,
    pub kappa: f64,
    /// sigma (quadratic), sigma_xi (sensing), or alpha0 (bernoulli).
    pub noise: f64,
    /// Measurement count; sensing only.
    pub m: usize,
    pub init: InitKind,
    pub phi: f64,
    pub psi: f64,
    /// None = theorem step size.
    pub eta: Option<f64>,
    pub max_iter: usize,
    /// None = 1e-9 * tau_star^2 (asymmetric) or unused (symmetric).
    pub align_tol: Option<f64>,
    pub record_alignment: bool,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config field `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.to_string(),
        message: message.into(),
    }
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, ConfigError> {
    let text = text.trim();
    if let Some((lo, hi)) = text.split_once("..") {
        let lo: u64 = lo
            .trim()
            .parse()
            .map_err(|_| err("seeds", format!("bad range start `{lo}`")))?;
        let hi: u64 = hi
            .trim()
            .parse()
            .map_err(|_| err("seeds", format!("bad range end `{hi}`")))?;
        if hi <= lo {
            return Err(err("seeds", format!("empty range {lo}..{hi}")));
        }
        return Ok((lo..hi).collect());
    }
    let seeds: Result<Vec<u64>, _> = text
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::parse)
        .collect();
    let seeds = seeds.map_err(|_| err("seeds", format!("bad seed list `{text}`")))?;
    if seeds.is_empty() {
        return Err(err("seeds", "no seeds given"));
    }
    Ok(seeds)
}

impl ExperimentConfig {
    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(err(
                    line,
                    format!("line {} is not a `key = value` assignment", lineno + 1),
                ));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if map.insert(key.clone(), value).is_some() {
                return Err(err(&key, "duplicate assignment"));
            }
        }
        Self::from_map(&map)
    }

    pub fn parse_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| err("config", format!("cannot read {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    fn from_map(map: &BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let known = [
            "model",
            "n",
            "q",
            "r",
            "sigma_min",
            "kappa",
            "noise",
            "m",
            "init",
            "phi",
            "psi",
            "eta",
            "max_iter",
            "align_tol",
            "record_alignment",
            "seeds",
            "out",
        ];
        for key in map.keys() {
            if !known.contains(&key.as_str()) {
                return Err(err(key, "unknown field"));
            }
        }
        let get = |field: &str| -> Result<&str, ConfigError> {
            map.get(field)
                .map(String::as_str)
                .ok_or_else(|| err(field, "missing"))
        };
        let get_f64 = |field: &str| -> Result<f64, ConfigError> {
            let raw = get(field)?;
            raw.parse::<f64>()
                .map_err(|_| err(field, format!("`{raw}` is not a number")))
        };
        let get_usize = |field: &str| -> Result<usize, ConfigError> {
            let raw = get(field)?;
            raw.parse::<usize>()
                .map_err(|_| err(field, format!("`{raw}` is not a non-negative integer")))
        };

        let model = match get("model")? {
            "sym-quadratic" => ModelKind::SymQuadratic,
            "asym-quadratic" => ModelKind::AsymQuadratic,
            "sensing" => ModelKind::Sensing,
            "bernoulli" => ModelKind::Bernoulli,
            other => {
                return Err(err(
                    "model",
                    format!(
                        "`{other}` is not one of sym-quadratic, asym-quadratic, sensing, bernoulli"
                    ),
                ))
            }
        };
        let n = get_usize("n")?;
        if n == 0 {
            return Err(err("n", "must be >= 1"));
        }
        let q = match map.get("q") {
            Some(raw) => raw
                .parse::<usize>()
                .map_err(|_| err("q", format!("`{raw}` is not a non-negative integer")))?,
            None => n,
        };
        let r = get_usize("r")?;
        if r == 0 || r > n.min(q) {
            return Err(err("r", format!("rank {r} out of range for {n}x{q}")));
        }
        let sigma_min = get_f64("sigma_min")?;
        if !(sigma_min > 0.0) {
            return Err(err("sigma_min", "must be positive"));
        }
        let kappa = get_f64("kappa")?;
        if kappa < 1.0 {
            return Err(err("kappa", "must be >= 1"));
        }
        let noise = get_f64("noise")?;
        if matches!(model, ModelKind::SymQuadratic | ModelKind::AsymQuadratic | ModelKind::Sensing)
            && noise < 0.0
        {
            return Err(err("noise", "noise level must be >= 0 for this model"));
        }
        let m = match map.get("m") {
            Some(raw) => raw
                .parse::<usize>()
                .map_err(|_| err("m", format!("`{raw}` is not a non-negative integer")))?,
            None => 0,
        };
        if model == ModelKind::Sensing && m == 0 {
            return Err(err("m", "sensing needs m >= 1 measurements"));
        }
        let init = match get("init")? {
            "oracle" => InitKind::Oracle,
            "spectral" => InitKind::Spectral,
            other => {
                return Err(err(
                    "init",
                    format!("`{other}` is not one of oracle, spectral"),
                ))
            }
        };
        if init == InitKind::Spectral && model.is_symmetric() {
            return Err(err("init", "spectral init is only wired for the asymmetric models"));
        }
        let phi = match map.get("phi") {
            Some(raw) => raw
                .parse::<f64>()
                .map_err(|_| err("phi", format!("`{raw}` is not a number")))?,
            None if init == InitKind::Oracle => return Err(err("phi", "missing (oracle init)")),
            None => 0.0,
        };
        if init == InitKind::Oracle && !(phi >= 0.0) {
            return Err(err("phi", "must be >= 0"));
        }
        let psi = match map.get("psi") {
            Some(raw) if raw == "inf" => f64::INFINITY,
            Some(raw) => raw
                .parse::<f64>()
                .map_err(|_| err("psi", format!("`{raw}` is not a number or `inf`")))?,
            None => f64::INFINITY,
        };
        if !(psi > 0.0) {
            return Err(err("psi", "must be positive"));
        }
        let eta = match map.get("eta") {
            None => None,
            Some(raw) if raw == "auto" => None,
            Some(raw) => Some(
                raw.parse::<f64>()
                    .map_err(|_| err("eta", format!("`{raw}` is not a number or `auto`")))?,
            ),
        };
        if let Some(e) = eta {
            if !(e > 0.0) {
                return Err(err("eta", "must be positive"));
            }
        }
        let max_iter = get_usize("max_iter")?;
        if max_iter == 0 {
            return Err(err("max_iter", "must be >= 1"));
        }
        let align_tol = match map.get("align_tol") {
            None => None,
            Some(raw) if raw == "auto" => None,
            Some(raw) => Some(
                raw.parse::<f64>()
                    .map_err(|_| err("align_tol", format!("`{raw}` is not a number or `auto`")))?,
            ),
        };
        let record_alignment = match map.get("record_alignment") {
            None => true,
            Some(raw) => raw.parse::<bool>().map_err(|_| {
                err("record_alignment", format!("`{raw}` is not true/false"))
            })?,
        };
        let seeds = parse_seeds(get("seeds")?)?;
        let out = PathBuf::from(get("out")?);
        Ok(ExperimentConfig {
            model,
            n,
            q,
            r,
            sigma_min,
            kappa,
            noise,
            m,
            init,
            phi,
            psi,
            eta,
            max_iter,
            align_tol,
            record_alignment,
            seeds,
            out,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "
        model = sym-quadratic
        n = 50
        r = 2
        sigma_min = 1.0
        kappa = 2.0
        noise = 0.01
        init = oracle
        phi = 0.05
        max_iter = 200
        seeds = 0..4
        out = /tmp/x
    ";

    #[test]
    fn parses_base_config() {
        let cfg = ExperimentConfig::parse_str(BASE).unwrap();
        assert_eq!(cfg.model, ModelKind::SymQuadratic);
        assert_eq!(cfg.q, 50);
        assert_eq!(cfg.seeds, vec![0, 1, 2, 3]);
        assert!(cfg.eta.is_none());
        assert!(cfg.psi.is_infinite());
    }

    #[test]
    fn rejects_unknown_and_malformed_fields_by_name() {
        let bad = BASE.replace("kappa = 2.0", "kappa = banana");
        let e = ExperimentConfig::parse_str(&bad).unwrap_err();
        assert_eq!(e.field, "kappa");

        let bad = format!("{BASE}\nwidth = 3\n");
        let e = ExperimentConfig::parse_str(&bad).unwrap_err();
        assert_eq!(e.field, "width");

        let bad = BASE.replace("model = sym-quadratic", "model = cubic");
        let e = ExperimentConfig::parse_str(&bad).unwrap_err();
        assert_eq!(e.field, "model");

        let bad = BASE.replace("seeds = 0..4", "seeds = 4..4");
        let e = ExperimentConfig::parse_str(&bad).unwrap_err();
        assert_eq!(e.field, "seeds");
    }

    #[test]
    fn sensing_requires_m() {
        let cfg = BASE
            .replace("model = sym-quadratic", "model = sensing")
            .replace("n = 50", "n = 20\nq = 20");
        let e = ExperimentConfig::parse_str(&cfg).unwrap_err();
        assert_eq!(e.field, "m");
        let ok = format!("{cfg}\nm = 100\n");
        assert!(ExperimentConfig::parse_str(&ok).is_ok());
    }

    #[test]
    fn seed_list_form() {
        let cfg = BASE.replace("seeds = 0..4", "seeds = 7, 9, 11");
        let cfg = ExperimentConfig::parse_str(&cfg).unwrap();
        assert_eq!(cfg.seeds, vec![7, 9, 11]);
    }
}
