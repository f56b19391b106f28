use indexmap::IndexMap;

use super::{NumError, Result, Shape, Tensor};

/// Named tensors in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: IndexMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(NumError::DuplicateParam(name));
        }
        self.entries.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| NumError::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| NumError::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Same keys and shapes, all zeros.
    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn check_same_layout(&self, other: &ParamSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(NumError::KeyMismatch(format!(
                "{} entries vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for ((ka, va), (kb, vb)) in self.entries.iter().zip(&other.entries) {
            if ka != kb {
                return Err(NumError::KeyMismatch(format!("`{ka}` vs `{kb}`")));
            }
            if va.shape() != vb.shape() {
                return Err(NumError::Dim {
                    op: "param layout",
                    left: va.shape(),
                    right: vb.shape(),
                });
            }
        }
        Ok(())
    }

    /// `self += other`, key by key.
    pub fn accumulate(&mut self, other: &ParamSet) -> Result<()> {
        self.check_same_layout(other)?;
        for (a, b) in self.entries.values_mut().zip(other.entries.values()) {
            a.add_assign(b);
        }
        Ok(())
    }

    pub fn fill_zero(&mut self) {
        for v in self.entries.values_mut() {
            v.values_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Sum of squares of every value.
    pub fn sq_norm(&self) -> f64 {
        self.entries.values().map(Tensor::sq_norm).sum()
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Moves every entry of `other` in under `prefix`.
    pub fn absorb(&mut self, prefix: &str, other: ParamSet) -> Result<()> {
        for (k, v) in other.entries {
            self.insert(format!("{prefix}{k}"), v)?;
        }
        Ok(())
    }

    /// Entries whose names start with `prefix`, with the prefix stripped.
    pub fn extract(&self, prefix: &str) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }

    pub fn shape_of(&self, name: &str) -> Result<Shape> {
        self.get(name).map(Tensor::shape)
    }

    /// Rescales all values so the global L2 norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let norm = self.sq_norm().sqrt();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for v in self.entries.values_mut() {
                v.values_mut().iter_mut().for_each(|x| *x *= s);
            }
        }
    }
}

impl FromIterator<(String, Tensor)> for ParamSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        ParamSet {
            entries: iter.into_iter().collect(),
        }
    }
}

/// In-place `theta <- theta - lr * g`.
pub fn sgd_step(params: &mut ParamSet, grads: &ParamSet, lr: f64) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(NumError::InvalidArgument(format!("learning rate {lr}")));
    }
    params.check_same_layout(grads)?;
    for (p, g) in params.entries.values_mut().zip(grads.entries.values()) {
        for (x, d) in p.values_mut().iter_mut().zip(g.values()) {
            *x -= lr * d;
        }
        if !p.is_finite() {
            return Err(NumError::NonFinite("sgd_step"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(name: &str, v: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.insert(name, Tensor::scalar(v).unwrap()).unwrap();
        ps
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut ps = one("w", 1.0);
        assert!(ps.insert("w", Tensor::scalar(2.0).unwrap()).is_err());
    }

    #[test]
    fn zero_lr_is_noop() {
        let mut ps = one("w", 0.7);
        let before = ps.clone();
        sgd_step(&mut ps, &one("w", 3.0), 0.0).unwrap();
        assert_eq!(ps, before);
    }

    #[test]
    fn single_step_arithmetic() {
        let mut ps = one("w", 1.0);
        sgd_step(&mut ps, &one("w", 1.0), 0.1).unwrap();
        assert_eq!(ps.get("w").unwrap().values()[0], 0.9);
    }

    #[test]
    fn closed_form_quadratic_descent() {
        // f(w) = w^2, gradient 2w, so each step multiplies w by (1 - 0.2).
        let mut ps = one("w", 1.0);
        for k in 1..=20 {
            let w = ps.get("w").unwrap().values()[0];
            sgd_step(&mut ps, &one("w", 2.0 * w), 0.1).unwrap();
            let got = ps.get("w").unwrap().values()[0];
            assert!((got - 0.8f64.powi(k)).abs() < 1e-14);
        }
    }

    #[test]
    fn mismatched_keys_rejected() {
        let mut ps = one("w", 1.0);
        assert!(sgd_step(&mut ps, &one("v", 1.0), 0.1).is_err());
        assert!(sgd_step(&mut ps, &one("w", 1.0), -0.1).is_err());
    }

    #[test]
    fn prefix_roundtrip() {
        let mut outer = ParamSet::new();
        outer.absorb("a.", one("w", 1.0)).unwrap();
        outer.absorb("b.", one("w", 2.0)).unwrap();
        assert_eq!(outer.extract("b."), one("w", 2.0));
        assert_eq!(outer.names().collect::<Vec<_>>(), vec!["a.w", "b.w"]);
    }
}
