use serde::{Deserialize, Serialize};

use super::kernel::AugmentedInput;
use crate::error::{Error, Result};

const DUPLICATE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub input: AugmentedInput,
    pub value: f64,
}

/// Observations of the information sources. Rejects duplicate `(source, z)`
/// pairs and non-finite values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    entries: Vec<Observation>,
}

impl TrainingSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_observations(observations: impl IntoIterator<Item = (AugmentedInput, f64)>) -> Result<Self> {
        let mut set = TrainingSet::new();
        for (input, value) in observations {
            set.push(input, value)?;
        }
        Ok(set)
    }

    pub fn contains(&self, input: &AugmentedInput) -> bool {
        self.entries.iter().any(|o| {
            o.input.source == input.source
                && o.input.location.len() == input.location.len()
                && o.input.location.iter().zip(&input.location).all(|(a, b)| (a - b).abs() <= DUPLICATE_TOLERANCE)
        })
    }

    pub fn push(&mut self, input: AugmentedInput, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::precondition(format!("non-finite observation {value} at source {}", input.source)));
        }
        if input.location.iter().any(|v| !v.is_finite()) {
            return Err(Error::precondition("non-finite input location"));
        }
        if let Some(first) = self.entries.first() {
            if first.input.location.len() != input.location.len() {
                return Err(Error::precondition("observation dimension mismatch"));
            }
        }
        if self.contains(&input) {
            return Err(Error::precondition(format!("duplicate observation at source {} {:?}", input.source, input.location)));
        }
        self.entries.push(Observation { input, value });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Observation> {
        self.entries.iter()
    }

    pub fn get(&self, i: usize) -> &Observation {
        &self.entries[i]
    }

    pub fn count_for_source(&self, source: usize) -> usize {
        self.entries.iter().filter(|o| o.input.source == source).count()
    }
}
