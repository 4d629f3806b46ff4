use std::collections::HashMap;

/// Index of a parameter array inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named, shaped parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Persistent parameter storage shared by all trainable modules.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Panics on duplicate names or a shape/length mismatch.
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], values: Vec<f64>) -> ParamId {
        let name = name.into();
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "parameter {name}: values do not match shape {shape:?}"
        );
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            shape: shape.to_vec(),
            values,
        });
        id
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn values(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].values
    }

    /// Replaces the contents of a parameter, possibly changing its leading dimension.
    pub fn replace(&mut self, id: ParamId, shape: &[usize], values: Vec<f64>) {
        assert_eq!(shape.iter().product::<usize>(), values.len());
        let p = &mut self.params[id.0];
        p.shape = shape.to_vec();
        p.values = values;
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }
}

/// Gradients for parameters reached by a backward sweep.
#[derive(Debug, Clone, Default)]
pub struct ParamGrads {
    grads: HashMap<ParamId, Vec<f64>>,
}

impl ParamGrads {
    pub(crate) fn accumulate(&mut self, id: ParamId, g: &[f64]) {
        match self.grads.get_mut(&id) {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => {
                self.grads.insert(id, g.to_vec());
            }
        }
    }

    pub fn insert(&mut self, id: ParamId, g: Vec<f64>) {
        self.grads.insert(id, g);
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.grads.get(&id).map(|v| v.as_slice())
    }

    pub fn contains(&self, id: ParamId) -> bool {
        self.grads.contains_key(&id)
    }

    /// Drops every gradient whose id is not in `keep`.
    pub fn retain(&mut self, keep: &[ParamId]) {
        self.grads.retain(|id, _| keep.contains(id));
    }

    pub fn is_finite(&self) -> bool {
        self.grads.values().all(|g| g.iter().all(|x| x.is_finite()))
    }

    /// Ids in ascending order, for deterministic iteration.
    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<_> = self.grads.keys().copied().collect();
        ids.sort();
        ids
    }
}
