//! Flat INI experiment configuration: `[section]` headers and
//! `key = value` lines, `#`/`;` comments. Parsing is strict (unknown keys
//! are errors); serialization writes every field in a fixed order so a
//! resolved config carries no implicit defaults and re-serializes
//! byte-identically.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown key '{0}'")]
    UnknownKey(String),
    #[error("invalid value for '{key}': {message}")]
    BadValue { key: String, message: String },
}

fn bad(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Hetero,
    Patch,
    Imaging,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Hetero => "hetero",
            Method::Patch => "patch",
            Method::Imaging => "imaging",
        }
    }

    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        match s {
            "hetero" => Ok(Method::Hetero),
            "patch" => Ok(Method::Patch),
            "imaging" => Ok(Method::Imaging),
            other => Err(bad("methods.enabled", format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TvWeights {
    Combinatorial,
    Geometric,
}

impl TvWeights {
    fn as_str(&self) -> &'static str {
        match self {
            TvWeights::Combinatorial => "combinatorial",
            TvWeights::Geometric => "geometric",
        }
    }
}

/// Full experiment description. Defaults reproduce the desk-scale
/// reference setup: icosphere level 4 (2562 nodes), 128 helmet sensors,
/// the standard true patch at (0.4, -0.58, 0.1) with 0.6 nAm/mm^2 density,
/// background std 0.17 of the per-node patch moment scale, and sensor
/// noise at 0.1 of the clean field norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    // [geometry]
    pub subdivisions: u32,
    pub base_radius: f64,
    pub wrinkle_amp: f64,
    pub wrinkle_freq: u32,
    pub geometry_seed: u64,
    // [sensors]
    pub n_sensors: usize,
    pub helmet_radius: f64,
    pub cap_angle: f64,
    // [truth]
    pub theta0: f64,
    pub phi0: f64,
    pub r0: f64,
    /// Surface density in nAm/mm^2 (the conventional unit at the config
    /// boundary; converted to SI internally).
    pub j0_density_nam_mm2: f64,
    // [noise]
    /// sigma_b = sigma_b_ratio * j0(SI) * mean node area.
    pub sigma_b_ratio: f64,
    /// sigma_n = noise_ratio * || L (Jp + Jb) ||.
    pub noise_ratio: f64,
    pub noise_seed: u64,
    // [solver]
    /// Smearing width in radians; `None` resolves to the mesh mean edge arc.
    pub eps: Option<f64>,
    pub r_max: f64,
    pub max_evals: usize,
    pub min_diag: f64,
    pub balance_eps: f64,
    pub polish_tol: f64,
    /// Override of the dataset-resolved background std (A·m).
    pub sigma_b: Option<f64>,
    /// Override of the dataset-resolved sensor noise std (tesla).
    pub sigma_n: Option<f64>,
    pub alpha: f64,
    pub n_lambdas: usize,
    pub imaging_tol: f64,
    pub imaging_max_iter: usize,
    pub tv_weights: TvWeights,
    // [methods]
    pub methods: Vec<Method>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            subdivisions: 4,
            base_radius: 0.08,
            wrinkle_amp: 0.008,
            wrinkle_freq: 6,
            geometry_seed: 7,
            n_sensors: 128,
            helmet_radius: 0.12,
            cap_angle: 2.0,
            theta0: 0.4,
            phi0: -0.58,
            r0: 0.1,
            j0_density_nam_mm2: 0.6,
            sigma_b_ratio: 0.17,
            noise_ratio: 0.1,
            noise_seed: 1,
            eps: None,
            r_max: 0.3,
            max_evals: 2000,
            min_diag: 1e-3,
            balance_eps: 1e-4,
            polish_tol: 1e-4,
            sigma_b: None,
            sigma_n: None,
            alpha: 0.67,
            n_lambdas: 25,
            imaging_tol: 1e-5,
            imaging_max_iter: 1500,
            tv_weights: TvWeights::Combinatorial,
            methods: vec![Method::Hetero, Method::Patch, Method::Imaging],
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "auto".to_string(),
    }
}

impl ExperimentConfig {
    /// Serialize with every key explicit, fixed order.
    pub fn to_ini(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[geometry]");
        let _ = writeln!(s, "subdivisions = {}", self.subdivisions);
        let _ = writeln!(s, "base_radius = {}", self.base_radius);
        let _ = writeln!(s, "wrinkle_amp = {}", self.wrinkle_amp);
        let _ = writeln!(s, "wrinkle_freq = {}", self.wrinkle_freq);
        let _ = writeln!(s, "seed = {}", self.geometry_seed);
        let _ = writeln!(s);
        let _ = writeln!(s, "[sensors]");
        let _ = writeln!(s, "n_sensors = {}", self.n_sensors);
        let _ = writeln!(s, "helmet_radius = {}", self.helmet_radius);
        let _ = writeln!(s, "cap_angle = {}", self.cap_angle);
        let _ = writeln!(s);
        let _ = writeln!(s, "[truth]");
        let _ = writeln!(s, "theta0 = {}", self.theta0);
        let _ = writeln!(s, "phi0 = {}", self.phi0);
        let _ = writeln!(s, "r0 = {}", self.r0);
        let _ = writeln!(s, "j0_density_nam_mm2 = {}", self.j0_density_nam_mm2);
        let _ = writeln!(s);
        let _ = writeln!(s, "[noise]");
        let _ = writeln!(s, "sigma_b_ratio = {}", self.sigma_b_ratio);
        let _ = writeln!(s, "noise_ratio = {}", self.noise_ratio);
        let _ = writeln!(s, "seed = {}", self.noise_seed);
        let _ = writeln!(s);
        let _ = writeln!(s, "[solver]");
        let _ = writeln!(s, "eps = {}", fmt_opt(self.eps));
        let _ = writeln!(s, "r_max = {}", self.r_max);
        let _ = writeln!(s, "max_evals = {}", self.max_evals);
        let _ = writeln!(s, "min_diag = {}", self.min_diag);
        let _ = writeln!(s, "balance_eps = {}", self.balance_eps);
        let _ = writeln!(s, "polish_tol = {}", self.polish_tol);
        let _ = writeln!(s, "sigma_b = {}", fmt_opt(self.sigma_b));
        let _ = writeln!(s, "sigma_n = {}", fmt_opt(self.sigma_n));
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "n_lambdas = {}", self.n_lambdas);
        let _ = writeln!(s, "imaging_tol = {}", self.imaging_tol);
        let _ = writeln!(s, "imaging_max_iter = {}", self.imaging_max_iter);
        let _ = writeln!(s, "tv_weights = {}", self.tv_weights.as_str());
        let _ = writeln!(s);
        let _ = writeln!(s, "[methods]");
        let _ = writeln!(
            s,
            "enabled = {}",
            self.methods
                .iter()
                .map(|m| m.as_str())
                .collect::<Vec<_>>()
                .join(",")
        );
        s
    }

    /// Parse over defaults; unknown sections or keys are errors.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or(ConfigError::Parse {
                    line: lineno + 1,
                    message: "unterminated section header".into(),
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Parse {
                line: lineno + 1,
                message: "expected 'key = value'".into(),
            })?;
            let key = key.trim();
            let value = value.trim();
            cfg.apply(&format!("{section}.{key}"), value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply one `section.key = value` override.
    pub fn apply(&mut self, path: &str, value: &str) -> Result<(), ConfigError> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            v.parse::<T>().map_err(|e| bad(key, format!("{e}")))
        }
        fn opt_num(key: &str, v: &str) -> Result<Option<f64>, ConfigError> {
            if v == "auto" {
                Ok(None)
            } else {
                Ok(Some(num::<f64>(key, v)?))
            }
        }
        match path {
            "geometry.subdivisions" => self.subdivisions = num(path, value)?,
            "geometry.base_radius" => self.base_radius = num(path, value)?,
            "geometry.wrinkle_amp" => self.wrinkle_amp = num(path, value)?,
            "geometry.wrinkle_freq" => self.wrinkle_freq = num(path, value)?,
            "geometry.seed" => self.geometry_seed = num(path, value)?,
            "sensors.n_sensors" => self.n_sensors = num(path, value)?,
            "sensors.helmet_radius" => self.helmet_radius = num(path, value)?,
            "sensors.cap_angle" => self.cap_angle = num(path, value)?,
            "truth.theta0" => self.theta0 = num(path, value)?,
            "truth.phi0" => self.phi0 = num(path, value)?,
            "truth.r0" => self.r0 = num(path, value)?,
            "truth.j0_density_nam_mm2" => self.j0_density_nam_mm2 = num(path, value)?,
            "noise.sigma_b_ratio" => self.sigma_b_ratio = num(path, value)?,
            "noise.noise_ratio" => self.noise_ratio = num(path, value)?,
            "noise.seed" => self.noise_seed = num(path, value)?,
            "solver.eps" => self.eps = opt_num(path, value)?,
            "solver.r_max" => self.r_max = num(path, value)?,
            "solver.max_evals" => self.max_evals = num(path, value)?,
            "solver.min_diag" => self.min_diag = num(path, value)?,
            "solver.balance_eps" => self.balance_eps = num(path, value)?,
            "solver.polish_tol" => self.polish_tol = num(path, value)?,
            "solver.sigma_b" => self.sigma_b = opt_num(path, value)?,
            "solver.sigma_n" => self.sigma_n = opt_num(path, value)?,
            "solver.alpha" => self.alpha = num(path, value)?,
            "solver.n_lambdas" => self.n_lambdas = num(path, value)?,
            "solver.imaging_tol" => self.imaging_tol = num(path, value)?,
            "solver.imaging_max_iter" => self.imaging_max_iter = num(path, value)?,
            "solver.tv_weights" => {
                self.tv_weights = match value {
                    "combinatorial" => TvWeights::Combinatorial,
                    "geometric" => TvWeights::Geometric,
                    other => return Err(bad(path, format!("unknown weighting '{other}'"))),
                }
            }
            "methods.enabled" => {
                let methods: Result<Vec<Method>, ConfigError> = value
                    .split(',')
                    .map(|m| Method::parse(m.trim()))
                    .collect();
                self.methods = methods?;
            }
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.subdivisions < 2 {
            return Err(bad("geometry.subdivisions", "must be >= 2"));
        }
        if !(self.base_radius > 0.0) {
            return Err(bad("geometry.base_radius", "must be positive"));
        }
        if self.n_sensors == 0 {
            return Err(bad("sensors.n_sensors", "must be >= 1"));
        }
        if !(self.r_max > 0.0) {
            return Err(bad("solver.r_max", "must be positive"));
        }
        if self.methods.is_empty() {
            return Err(bad("methods.enabled", "at least one method"));
        }
        if let Some(e) = self.eps {
            if !(e > 0.0) {
                return Err(bad("solver.eps", "must be positive or auto"));
            }
        }
        if !(0.01..=1.0).contains(&self.alpha) {
            return Err(bad("solver.alpha", "must lie in [0.01, 1]"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_roundtrips_through_ini() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_ini();
        let parsed = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(parsed, cfg);
        assert_eq!(parsed.to_ini(), text);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = ExperimentConfig::parse(
            "[geometry]\nsubdivisions = 3\n\n[noise]\nseed = 42\n",
        )
        .unwrap();
        assert_eq!(cfg.subdivisions, 3);
        assert_eq!(cfg.noise_seed, 42);
        assert_eq!(cfg.n_sensors, 128);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(
            ExperimentConfig::parse("[geometry]\nsubdivs = 3\n"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(ExperimentConfig::parse("[geometry]\nsubdivisions = soup\n").is_err());
        assert!(ExperimentConfig::parse("[methods]\nenabled = magic\n").is_err());
        assert!(ExperimentConfig::parse("[solver]\nalpha = 7\n").is_err());
    }

    #[test]
    fn overrides_apply_by_path() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply("solver.max_evals", "500").unwrap();
        cfg.apply("solver.sigma_b", "1e-9").unwrap();
        cfg.apply("solver.sigma_n", "auto").unwrap();
        assert_eq!(cfg.max_evals, 500);
        assert_eq!(cfg.sigma_b, Some(1e-9));
        assert_eq!(cfg.sigma_n, None);
        assert!(cfg.apply("solver.nope", "1").is_err());
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let cfg = ExperimentConfig::parse(
            "# comment\n; other comment\n\n[truth]\nr0 = 0.2\n",
        )
        .unwrap();
        assert_eq!(cfg.r0, 0.2);
    }
}
