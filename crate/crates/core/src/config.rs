//! `key=value` pipeline configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Keys are namespaced:
//!
//! ```text
//! rules.cc_mult_cost=1          rules.polyact_depth.8=3
//! planner.max_level=22          planner.fanout_threshold=inf
//! planner.strategy=greedy       planner.bootstrap_reset_to=0
//! cost.w_bootstrap=1207.9       noise.epsilon=1e-3
//! noise.seed=7                  activation.2=0.5 0.5 0.125
//! ```
//!
//! `activation.<d>` replaces the shipped degree-`d` polynomial with the
//! listed coefficients (ascending powers). Unknown keys are errors.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::cost::{CostWeights, OpClass};
use crate::levels::LevelRules;
use crate::planner::{PlannerConfig, NO_FANOUT};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {message}")]
    Value {
        line: usize,
        key: String,
        message: String,
    },
}

/// Mock-backend noise settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    /// Half-width of the uniform perturbation applied at each bootstrap.
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            epsilon: 0.0,
            seed: 0,
        }
    }
}

/// Everything a pipeline run can be configured with.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub rules: LevelRules,
    pub planner: PlannerConfig,
    pub weights: CostWeights,
    pub noise: NoiseConfig,
    /// Activation coefficient overrides by degree.
    pub activations: BTreeMap<u32, Vec<f64>>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            rules: LevelRules::default(),
            planner: PlannerConfig::default(),
            weights: CostWeights::calibrated(),
            noise: NoiseConfig::default(),
            activations: BTreeMap::new(),
        }
    }
}

impl FromStr for Config {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut cfg = Config::default();
        cfg.apply(text)?;
        Ok(cfg)
    }
}

fn value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    raw.parse().map_err(|e: T::Err| ConfigError::Value {
        line,
        key: key.to_string(),
        message: e.to_string(),
    })
}

impl Config {
    /// Apply the settings in `text` on top of `self`.
    pub fn apply(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, val) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                message: format!("expected `key=value`, got `{content}`"),
            })?;
            self.set(line, key.trim(), val.trim())?;
        }
        self.check(text.lines().count().max(1))
    }

    fn set(&mut self, line: usize, key: &str, val: &str) -> Result<(), ConfigError> {
        let unknown = || ConfigError::UnknownKey {
            line,
            key: key.to_string(),
        };
        let (ns, name) = key.split_once('.').ok_or_else(unknown)?;
        match (ns, name) {
            ("rules", "cc_mult_cost") => self.rules.cc_mult_cost = value(line, key, val)?,
            ("rules", "cp_mult_cost") => self.rules.cp_mult_cost = value(line, key, val)?,
            ("rules", "bn_cost") => self.rules.bn_cost = value(line, key, val)?,
            ("rules", n) if n.starts_with("polyact_depth.") => {
                let degree = value(line, key, &n["polyact_depth.".len()..])?;
                self.rules
                    .polyact_overrides
                    .insert(degree, value(line, key, val)?);
            }
            ("planner", "max_level") => self.planner.max_level = value(line, key, val)?,
            ("planner", "bootstrap_reset_to") => {
                self.planner.bootstrap_reset_to = value(line, key, val)?
            }
            ("planner", "fanout_threshold") => {
                self.planner.fanout_threshold = match val {
                    "inf" | "infinity" | "none" => NO_FANOUT,
                    _ => value(line, key, val)?,
                }
            }
            ("planner", "strategy") => self.planner.strategy = value(line, key, val)?,
            ("cost", n) => {
                let class: OpClass = n
                    .strip_prefix("w_")
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(unknown)?;
                self.weights.set(class, value(line, key, val)?);
            }
            ("noise", "epsilon") => self.noise.epsilon = value(line, key, val)?,
            ("noise", "seed") => self.noise.seed = value(line, key, val)?,
            ("activation", d) => {
                let degree: u32 = value(line, key, d)?;
                let coeffs = val
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|t| !t.is_empty())
                    .map(|t| value::<f64>(line, key, t))
                    .collect::<Result<Vec<_>, _>>()?;
                if coeffs.len() != degree as usize + 1 {
                    return Err(ConfigError::Value {
                        line,
                        key: key.to_string(),
                        message: format!(
                            "degree {degree} needs {} coefficients, got {}",
                            degree + 1,
                            coeffs.len()
                        ),
                    });
                }
                self.activations.insert(degree, coeffs);
            }
            _ => return Err(unknown()),
        }
        Ok(())
    }

    fn check(&self, line: usize) -> Result<(), ConfigError> {
        let bad = |key: &str, message: String| ConfigError::Value {
            line,
            key: key.to_string(),
            message,
        };
        self.planner
            .check()
            .map_err(|e| bad("planner", e.to_string()))?;
        self.weights
            .check()
            .map_err(|e| bad("cost", e.to_string()))?;
        if !(self.noise.epsilon >= 0.0 && self.noise.epsilon.is_finite()) {
            return Err(bad("noise.epsilon", "must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::Strategy;

    #[test]
    fn empty_config_is_default() {
        assert_eq!("".parse::<Config>().unwrap(), Config::default());
        assert_eq!(
            "# only a comment\n\n".parse::<Config>().unwrap(),
            Config::default()
        );
    }

    #[test]
    fn every_namespace_parses() {
        let cfg: Config = "\
rules.cc_mult_cost = 2
rules.polyact_depth.8=3   # Paterson-Stockmeyer
planner.max_level=16
planner.fanout_threshold=inf
planner.strategy=exhaustive
cost.w_bootstrap=10
cost.w_polyact_per_level=0.5
noise.epsilon=1e-3
noise.seed=42
activation.2=0.25, 0.5, 0.1
"
        .parse()
        .unwrap();
        assert_eq!(cfg.rules.cc_mult_cost, 2);
        assert_eq!(cfg.rules.polyact_depth(8), 3);
        assert_eq!(cfg.planner.max_level, 16);
        assert_eq!(cfg.planner.fanout_threshold, NO_FANOUT);
        assert_eq!(cfg.planner.strategy, Strategy::ExhaustiveTiny);
        assert_eq!(cfg.weights.w_bootstrap, 10.0);
        assert_eq!(cfg.weights.w_polyact_per_level, 0.5);
        assert_eq!(
            cfg.noise,
            NoiseConfig {
                epsilon: 1e-3,
                seed: 42
            }
        );
        assert_eq!(cfg.activations[&2], [0.25, 0.5, 0.1]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = "planner.max_level=4\nbogus.key=1"
            .parse::<Config>()
            .unwrap_err();
        assert_eq!(
            err,
            ConfigError::UnknownKey {
                line: 2,
                key: "bogus.key".into()
            }
        );
        assert!(matches!(
            "cost.w_nothing=1".parse::<Config>(),
            Err(ConfigError::UnknownKey { line: 1, .. })
        ));
        assert!(matches!(
            "\nplanner.max_level=lots".parse::<Config>(),
            Err(ConfigError::Value { line: 2, .. })
        ));
        assert!(matches!(
            "planner.max_level".parse::<Config>(),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            "activation.4=1 2".parse::<Config>(),
            Err(ConfigError::Value { .. })
        ));
    }

    #[test]
    fn invariants_are_enforced() {
        assert!("planner.bootstrap_reset_to=30".parse::<Config>().is_err());
        assert!("cost.w_rescale=1e9".parse::<Config>().is_err());
        assert!("noise.epsilon=-1".parse::<Config>().is_err());
    }

    #[test]
    fn layering_overrides_selectively() {
        let mut cfg: Config = "planner.max_level=9".parse().unwrap();
        cfg.apply("cost.w_add=0.25").unwrap();
        assert_eq!(cfg.planner.max_level, 9);
        assert_eq!(cfg.weights.w_add, 0.25);
    }
}
