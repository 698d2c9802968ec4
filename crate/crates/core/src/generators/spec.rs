use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{make_ce_generator, transform_g_expectation, Generator, Utility};
use crate::error::{Error, Result};

/// Utility as written in configuration files: `{kind = "power", r = 0.5}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilitySpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
}

impl UtilitySpec {
    pub fn build(&self) -> Result<Utility> {
        let need_r = || {
            self.r
                .ok_or_else(|| Error::invalid(format!("utility '{}' needs parameter r", self.kind)))
        };
        match self.kind.as_str() {
            "log" => Ok(Utility::Log),
            "power" => Utility::power(need_r()?),
            "exponential" | "exp" => Utility::exponential(need_r()?),
            other => Err(Error::invalid(format!("unknown utility kind '{other}'"))),
        }
    }
}

impl From<Utility> for UtilitySpec {
    fn from(u: Utility) -> Self {
        let r = match u {
            Utility::Log => None,
            Utility::Power { r } | Utility::Exponential { r } => Some(r),
        };
        UtilitySpec {
            kind: u.name().to_string(),
            r,
        }
    }
}

/// Serializable description of a generator.
///
/// Kinds: `zero`, `certainty-equivalent` (needs a utility), `g-expectation`
/// (needs `base` and a utility), `quadratic`, `norm` and `relative-quadratic`
/// (parameter `coef`, default 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utility: Option<UtilitySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<Box<GeneratorSpec>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
}

impl GeneratorSpec {
    pub fn new(kind: impl Into<String>) -> Self {
        GeneratorSpec {
            kind: kind.into(),
            utility: None,
            base: None,
            params: BTreeMap::new(),
        }
    }

    pub fn build(&self) -> Result<Generator> {
        self.build_with(None)
    }

    /// Builds the generator, using `fallback` when the spec has no utility of its own.
    pub fn build_with(&self, fallback: Option<Utility>) -> Result<Generator> {
        let utility = || -> Result<Utility> {
            match &self.utility {
                Some(u) => u.build(),
                None => fallback
                    .ok_or_else(|| Error::invalid(format!("generator '{}' needs a utility", self.kind))),
            }
        };
        let coef = self.params.get("coef").copied().unwrap_or(1.0);
        for key in self.params.keys() {
            if key != "coef" {
                return Err(Error::invalid(format!("unknown generator parameter '{key}'")));
            }
        }
        match self.kind.as_str() {
            "zero" => Ok(Generator::zero()),
            "certainty-equivalent" | "ce" => make_ce_generator(utility()?),
            "g-expectation" => {
                let base = self
                    .base
                    .as_ref()
                    .ok_or_else(|| Error::invalid("g-expectation generator needs a base"))?;
                transform_g_expectation(base.build_with(None)?, utility()?)
            }
            "quadratic" => Generator::quadratic(coef),
            "norm" => Generator::norm(coef),
            "relative-quadratic" => Generator::relative_quadratic(coef),
            other => Err(Error::invalid(format!("unknown generator kind '{other}'"))),
        }
    }
}
