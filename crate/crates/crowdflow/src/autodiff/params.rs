//! Registry of named trainable parameters.
//!
//! Registration order is fixed and determines optimizer iteration order, so a
//! model built the same way twice steps identically.

use super::value::Value;
use std::collections::HashMap;

#[derive(Default)]
pub struct ParamSet {
    order: Vec<String>,
    by_name: HashMap<String, Value>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    /// Register a new trainable parameter. Names must be unique.
    pub fn register(&mut self, name: &str, data: Vec<f64>, shape: Vec<usize>) -> Value {
        assert!(
            !self.by_name.contains_key(name),
            "parameter `{name}` registered twice"
        );
        let v = Value::parameter(data, shape);
        self.order.push(name.to_string());
        self.by_name.insert(name.to_string(), v.clone());
        v
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.by_name.get(name)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Total number of scalar entries across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.iter().map(|(_, v)| v.numel()).sum()
    }

    /// Iterate `(name, value)` in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.order
            .iter()
            .map(move |n| (n.as_str(), &self.by_name[n]))
    }

    pub fn zero_grads(&self) {
        for (_, v) in self.iter() {
            v.zero_grad();
        }
    }

    /// Overwrite every parameter with zeros (degenerate-model runs).
    pub fn set_all_zero(&self) {
        for (_, v) in self.iter() {
            v.set_data(&vec![0.0; v.numel()]);
        }
    }
}
