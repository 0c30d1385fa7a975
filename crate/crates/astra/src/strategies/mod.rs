//! Runtime-selectable algorithm variants.
//!
//! Each interchangeable family (mixup, displacement objective, encoder
//! attention layout) lives behind a common trait. Variants register by name
//! and are looked up from the config/CLI flags.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{AstraError, Result};

pub mod displacement;
pub mod encoder_layout;
pub mod mixup;

pub use displacement::{displacement_registry, DisplacementObjective};
pub use encoder_layout::{encoder_layout_registry, EncoderLayout};
pub use mixup::{mixup_registry, ClassQueue, MixupStrategy};

/// Name-keyed registry of one strategy family.
pub struct StrategyRegistry<T: ?Sized> {
    family: &'static str,
    entries: BTreeMap<String, Arc<T>>,
}

impl<T: ?Sized> StrategyRegistry<T> {
    pub fn new(family: &'static str) -> Self {
        StrategyRegistry { family, entries: BTreeMap::new() }
    }

    pub fn register(&mut self, name: &str, strategy: Arc<T>) {
        self.entries.insert(name.to_string(), strategy);
    }

    pub fn get(&self, name: &str) -> Result<Arc<T>> {
        self.entries.get(name).cloned().ok_or_else(|| AstraError::UnknownStrategy {
            family: self.family,
            name: name.to_string(),
            known: self.names(),
        })
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }
}
