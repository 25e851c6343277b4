use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Named parameters with gradient buffers of matching shape. Iteration order
/// is the lexicographic order of names.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    params: BTreeMap<String, Param<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter {name}")));
        }
        let grad = value.zeros_like();
        self.params.insert(name, Param { value, grad });
        Ok(())
    }

    fn entry(&self, name: &str) -> Result<&Param<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.entry(name)?.value)
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.entry(name)?.grad)
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))
    }

    /// Replace a value, keeping the shape.
    pub fn set_value(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let slot = self.value_mut(name)?;
        if slot.shape() != value.shape() {
            return Err(Error::shape("set_value", slot.shape(), value.shape()));
        }
        *slot = value;
        Ok(())
    }

    pub fn accumulate(&mut self, name: &str, grad: &Tensor<T>) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))?;
        p.grad.add_assign(grad)
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(T::zero());
        }
    }

    pub fn scale_grads(&mut self, c: T) {
        for p in self.params.values_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= c);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param<T>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param<T>)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(|p| p.value.all_finite())
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            value: p.value.cast(),
                            grad: p.grad.cast(),
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Glorot/Xavier uniform initialisation: `U(-a, a)` with
/// `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<T: Real>(
    rng: &mut SeededRng,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Result<Tensor<T>> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    crate::rng::rand_uniform(rng, shape, -a, a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grads_track_values() {
        let mut p = ParamSet::<f32>::new();
        p.insert("w", Tensor::ones(&[2, 3]).unwrap()).unwrap();
        assert!(p.insert("w", Tensor::ones(&[1]).unwrap()).is_err());
        assert_eq!(p.grad("w").unwrap().shape(), &[2, 3]);
        p.accumulate("w", &Tensor::ones(&[2, 3]).unwrap()).unwrap();
        p.accumulate("w", &Tensor::ones(&[2, 3]).unwrap()).unwrap();
        assert_eq!(p.grad("w").unwrap().data(), &[2.0; 6]);
        assert!(p.accumulate("w", &Tensor::ones(&[3, 2]).unwrap()).is_err());
        p.zero_grads();
        assert_eq!(p.grad("w").unwrap().sum(), 0.0);
    }

    #[test]
    fn xavier_bounds() {
        let mut rng = SeededRng::new(0);
        let w: Tensor<f64> = xavier_uniform(&mut rng, &[16, 8, 3, 3], 8 * 9, 16 * 9).unwrap();
        let a = (6.0f64 / (72.0 + 144.0)).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= a));
        assert!(w.max_abs() > 0.9 * a);
    }
}
