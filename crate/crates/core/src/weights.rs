//! Named parameter bags.
//!
//! Entry names follow `<scope>.<kind><index>.<param>`:
//!
//! * `scope`: `s_stream`, `t_stream`, `head` (student decoder) or `fusion`
//!   (spatiotemporal decoder)
//! * `kind`: `conv` or `deconv`
//! * `index`: 1-based position among the network's weighted layers (1–13)
//! * `param`: `kernel` or `bias`
//!
//! e.g. `s_stream.conv3.kernel`, `fusion.deconv13.bias`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    SpatialStream,
    TemporalStream,
    Head,
    Fusion,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::SpatialStream => "s_stream",
            Scope::TemporalStream => "t_stream",
            Scope::Head => "head",
            Scope::Fusion => "fusion",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamRole {
    Kernel,
    Bias,
}

/// Parsed canonical parameter name.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamName {
    pub scope: Scope,
    pub deconv: bool,
    pub index: usize,
    pub role: ParamRole,
}

impl ParamName {
    pub fn new(scope: Scope, deconv: bool, index: usize, role: ParamRole) -> Self {
        Self {
            scope,
            deconv,
            index,
            role,
        }
    }
}

impl fmt::Display for ParamName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}.{}{}.{}",
            self.scope.as_str(),
            if self.deconv { "deconv" } else { "conv" },
            self.index,
            match self.role {
                ParamRole::Kernel => "kernel",
                ParamRole::Bias => "bias",
            }
        )
    }
}

impl FromStr for ParamName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("'{s}' is not a canonical parameter name"));
        let mut parts = s.split('.');
        let (Some(scope), Some(layer), Some(role), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad());
        };
        let scope = match scope {
            "s_stream" => Scope::SpatialStream,
            "t_stream" => Scope::TemporalStream,
            "head" => Scope::Head,
            "fusion" => Scope::Fusion,
            _ => return Err(bad()),
        };
        let (deconv, digits) = if let Some(d) = layer.strip_prefix("deconv") {
            (true, d)
        } else if let Some(d) = layer.strip_prefix("conv") {
            (false, d)
        } else {
            return Err(bad());
        };
        if digits.is_empty() || digits.starts_with('0') || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let index: usize = digits.parse().map_err(|_| bad())?;
        let role = match role {
            "kernel" => ParamRole::Kernel,
            "bias" => ParamRole::Bias,
            _ => return Err(bad()),
        };
        Ok(Self {
            scope,
            deconv,
            index,
            role,
        })
    }
}

/// Map from canonical parameter name to tensor, iterated in name order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct WeightStore<T: Scalar = f32> {
    entries: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> WeightStore<T> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    /// Insert under a name that must parse as a [`ParamName`].
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        name.parse::<ParamName>()?;
        self.entries.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name)
            .ok_or_else(|| Error::Config(format!("weight store has no entry '{name}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> WeightStore<U> {
        WeightStore {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }
}
