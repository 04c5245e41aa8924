use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rounding {
    /// Top-S selection of switch probabilities.
    Phyr,
    /// Smooth step relaxation, no hard selection during training.
    Insi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Supervision {
    Unsupervised,
    Semi,
    Supervised,
}

impl Supervision {
    pub fn needs_targets(self) -> bool {
        !matches!(self, Supervision::Unsupervised)
    }
}

impl fmt::Display for Rounding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rounding::Phyr => "phyr",
            Rounding::Insi => "insi",
        })
    }
}

impl FromStr for Rounding {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phyr" => Ok(Rounding::Phyr),
            "insi" => Ok(Rounding::Insi),
            _ => Err(Error::Validation(format!("unknown rounding `{s}` (phyr|insi)"))),
        }
    }
}

impl fmt::Display for Supervision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Supervision::Unsupervised => "unsupervised",
            Supervision::Semi => "semi",
            Supervision::Supervised => "supervised",
        })
    }
}

impl FromStr for Supervision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unsupervised" => Ok(Supervision::Unsupervised),
            "semi" => Ok(Supervision::Semi),
            "supervised" => Ok(Supervision::Supervised),
            _ => Err(Error::Validation(format!(
                "unknown supervision `{s}` (unsupervised|semi|supervised)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub line_hidden: usize,
    pub switch_hidden: usize,
    pub dropout: f64,
    /// Weight of the violation norm.
    pub lambda: f64,
    /// Weight of the switch-status penalty in semi-supervised mode.
    pub mu: f64,
    pub insi_tau: f64,
    pub insi_mu: f64,
    pub rounding: Rounding,
    pub supervision: Supervision,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 4,
            hidden: 8,
            line_hidden: 24,
            switch_hidden: 32,
            dropout: 0.1,
            lambda: 100.0,
            mu: 10.0,
            insi_tau: 5.0,
            insi_mu: 0.1,
            rounding: Rounding::Phyr,
            supervision: Supervision::Unsupervised,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(m.to_string()));
        if self.layers < 1 {
            return bad("layers must be at least 1");
        }
        if self.hidden < 1 || self.line_hidden < 1 || self.switch_hidden < 1 {
            return bad("widths must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.lambda >= 0.0) || !(self.mu >= 0.0) {
            return bad("lambda and mu must be non-negative");
        }
        if !(self.insi_tau > 0.0) || !(self.insi_mu > 0.0) {
            return bad("InSi tau and mu must be positive");
        }
        Ok(())
    }

    /// `key=value` pairs, the inverse of [`ModelConfig::from_pairs`].
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("layers".into(), self.layers.to_string()),
            ("hidden".into(), self.hidden.to_string()),
            ("line_hidden".into(), self.line_hidden.to_string()),
            ("switch_hidden".into(), self.switch_hidden.to_string()),
            ("dropout".into(), self.dropout.to_string()),
            ("lambda".into(), self.lambda.to_string()),
            ("mu".into(), self.mu.to_string()),
            ("insi_tau".into(), self.insi_tau.to_string()),
            ("insi_mu".into(), self.insi_mu.to_string()),
            ("rounding".into(), self.rounding.to_string()),
            ("supervision".into(), self.supervision.to_string()),
        ]
    }

    /// Unknown keys are ignored; missing keys keep their defaults.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut c = ModelConfig::default();
        for (k, v) in pairs {
            let num = |v: &str| -> Result<f64> {
                v.parse()
                    .map_err(|_| Error::Validation(format!("`{k}` expects a number, got `{v}`")))
            };
            let int = |v: &str| -> Result<usize> {
                v.parse()
                    .map_err(|_| Error::Validation(format!("`{k}` expects an integer, got `{v}`")))
            };
            match k {
                "layers" => c.layers = int(v)?,
                "hidden" => c.hidden = int(v)?,
                "line_hidden" => c.line_hidden = int(v)?,
                "switch_hidden" => c.switch_hidden = int(v)?,
                "dropout" => c.dropout = num(v)?,
                "lambda" => c.lambda = num(v)?,
                "mu" => c.mu = num(v)?,
                "insi_tau" => c.insi_tau = num(v)?,
                "insi_mu" => c.insi_mu = num(v)?,
                "rounding" => c.rounding = v.parse()?,
                "supervision" => c.supervision = v.parse()?,
                _ => {}
            }
        }
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_round_trip() {
        let c = ModelConfig {
            lambda: 3.5,
            rounding: Rounding::Insi,
            supervision: Supervision::Semi,
            ..ModelConfig::default()
        };
        let pairs = c.to_pairs();
        let back = ModelConfig::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str()))).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(ModelConfig::from_pairs([("layers", "0")]).is_err());
        assert!(ModelConfig::from_pairs([("lambda", "-1")]).is_err());
        assert!(ModelConfig::from_pairs([("rounding", "round")]).is_err());
        assert!(ModelConfig::from_pairs([("hidden", "x")]).is_err());
    }
}
