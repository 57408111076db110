//! Named parameter storage.
//!
//! Parameters live outside any tape and are bound onto a fresh tape each
//! forward pass. Storage is `Rc<Vec<f64>>` so binding copies nothing; the
//! optimizer mutates through [`Rc::make_mut`], which only clones if a tape
//! from a previous pass still holds the buffer (it never does in the training
//! loop, so updates are in place). Iteration order is insertion order, which
//! makes optimizer sweeps and checkpoints deterministic.

use std::collections::HashMap;
use std::rc::Rc;

use rand::Rng;

#[derive(Clone, Debug)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Rc<Vec<f64>>,
}

impl Param {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<(String, Param)>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn insert(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "param {name}: shape {shape:?} does not hold {} values",
            data.len()
        );
        assert!(
            !self.index.contains_key(name),
            "param {name}: registered twice"
        );
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((
            name.to_string(),
            Param {
                shape,
                data: Rc::new(data),
            },
        ));
    }

    /// Registers a parameter filled i.i.d. uniform from `[-bound, bound]`.
    pub fn insert_uniform(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        bound: f64,
        rng: &mut impl Rng,
    ) {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        self.insert(name, shape, data);
    }

    /// Registers a zero-filled parameter (biases).
    pub fn insert_zeros(&mut self, name: &str, shape: Vec<usize>) {
        let n: usize = shape.iter().product();
        self.insert(name, shape, vec![0.0; n]);
    }

    pub fn get(&self, name: &str) -> &Param {
        let idx = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("param {name}: not registered"));
        &self.entries[idx].1
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// Mutable view of a parameter's values, for the optimizer and for
    /// finite-difference probing.
    pub fn data_mut(&mut self, name: &str) -> &mut Vec<f64> {
        let idx = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("param {name}: not registered"));
        Rc::make_mut(&mut self.entries[idx].1.data)
    }

    /// Parameters in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(n, p)| (n.as_str(), p))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|(_, p)| p.numel()).sum()
    }
}
