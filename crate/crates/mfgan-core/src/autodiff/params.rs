//! Named-parameter traversal.
//!
//! Model parameter structs expose their tensors through a visitor so that the
//! optimizer, the checkpoint writer, and the finite-difference oracle can all
//! walk the same deterministic (name, tensor) sequence without knowing the
//! concrete layout.

use super::tensor::Tensor;

/// A collection of named trainable tensors, visited in a stable order.
pub trait Parameterized {
    fn for_each_param(&self, f: &mut dyn FnMut(&str, &Tensor));
    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));

    /// Parameter names in visit order.
    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.for_each_param(&mut |name, _| names.push(name.to_string()));
        names
    }

    /// Total scalar parameter count.
    fn param_count(&self) -> usize {
        let mut count = 0;
        self.for_each_param(&mut |_, t| count += t.numel());
        count
    }

    /// Read one coordinate of one named parameter.
    fn param_coord(&self, name: &str, index: usize) -> f32 {
        let mut out = None;
        self.for_each_param(&mut |n, t| {
            if n == name {
                out = Some(t.data()[index]);
            }
        });
        out.unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    /// Overwrite one coordinate of one named parameter.
    fn set_param_coord(&mut self, name: &str, index: usize, value: f32) {
        let mut hit = false;
        self.for_each_param_mut(&mut |n, t| {
            if n == name {
                t.data_mut()[index] = value;
                hit = true;
            }
        });
        assert!(hit, "unknown parameter {name}");
    }

    /// Clone of one named parameter.
    fn param(&self, name: &str) -> Option<Tensor> {
        let mut found = None;
        self.for_each_param(&mut |n, t| {
            if n == name {
                found = Some(t.clone());
            }
        });
        found
    }
}
