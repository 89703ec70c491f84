use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in `R^{n×d}`: `n` tokens of `d` channels, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePoint {
    values: Vec<f64>,
    tokens: usize,
    channels: usize,
}

impl StatePoint {
    pub fn new(values: Vec<f64>, tokens: usize, channels: usize) -> Result<Self> {
        if tokens == 0 || channels == 0 {
            return Err(Error::invalid("shape", "tokens and channels must be >= 1"));
        }
        if values.len() != tokens * channels {
            return Err(Error::shape(
                format!("{} values ({}x{})", tokens * channels, tokens, channels),
                values.len(),
            ));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                layer: format!("state entry {v}"),
            });
        }
        Ok(Self {
            values,
            tokens,
            channels,
        })
    }

    /// A single token of `values.len()` channels.
    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        let d = values.len();
        Self::new(values, 1, d)
    }

    pub fn zeros(tokens: usize, channels: usize) -> Self {
        Self {
            values: vec![0.0; tokens * channels],
            tokens,
            channels,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn same_shape(&self, other: &StatePoint) -> bool {
        self.tokens == other.tokens && self.channels == other.channels
    }

    pub(crate) fn check_shape(&self, other: &StatePoint) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(
                format!("{}x{}", self.tokens, self.channels),
                format!("{}x{}", other.tokens, other.channels),
            ))
        }
    }

    pub(crate) fn map_with(&self, values: Vec<f64>) -> StatePoint {
        debug_assert_eq!(values.len(), self.values.len());
        StatePoint {
            values,
            tokens: self.tokens,
            channels: self.channels,
        }
    }
}
