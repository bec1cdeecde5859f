use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::layers::LayerParams;
use crate::rng::Rng;
use crate::tensor::Element;

use super::spec::{LayerKind, NetworkSpec};

/// Parameters, gradients and momentum for every layer, keyed by layer name
/// in canonical order. All three maps always share the same key set; a
/// gradient entry is `None` until a backward pass fills it.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T = f32> {
    params: IndexMap<String, LayerParams<T>>,
    grads: IndexMap<String, Option<LayerParams<T>>>,
    momentum: IndexMap<String, LayerParams<T>>,
}

impl<T: Element> ParamStore<T> {
    /// He-initialized parameters drawn from one stream seeded by `seed`, in
    /// canonical layer order.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let params = spec
            .layers()
            .into_iter()
            .map(|(name, kind)| {
                let p = match kind {
                    LayerKind::Conv(c) => LayerParams::init_conv(&c, &mut rng),
                    LayerKind::Fc(f) => LayerParams::init_fc(&f, &mut rng),
                };
                (name, p)
            })
            .collect();
        Self::from_params(params)
    }

    pub fn from_params(params: IndexMap<String, LayerParams<T>>) -> Self {
        let grads = params.keys().map(|k| (k.clone(), None)).collect();
        let momentum = params.iter().map(|(k, p)| (k.clone(), p.zeros_like())).collect();
        Self { params, grads, momentum }
    }

    /// Every weight and bias set to zero.
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let mut s = Self::init(spec, 0);
        for p in s.params.values_mut() {
            *p = p.zeros_like();
        }
        s
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Result<&LayerParams<T>> {
        self.params.get(name).ok_or_else(|| Error::Shape(format!("no parameters for layer `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut LayerParams<T>> {
        self.params.get_mut(name).ok_or_else(|| Error::Shape(format!("no parameters for layer `{name}`")))
    }

    pub fn grad(&self, name: &str) -> Option<&LayerParams<T>> {
        self.grads.get(name).and_then(Option::as_ref)
    }

    pub fn momentum(&self, name: &str) -> Option<&LayerParams<T>> {
        self.momentum.get(name)
    }

    pub fn momentum_mut(&mut self, name: &str) -> Option<&mut LayerParams<T>> {
        self.momentum.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &LayerParams<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn set_grad(&mut self, name: &str, grad: LayerParams<T>) -> Result<()> {
        let slot =
            self.grads.get_mut(name).ok_or_else(|| Error::Shape(format!("no gradient slot for layer `{name}`")))?;
        *slot = Some(grad);
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        self.grads.values_mut().for_each(|g| *g = None);
    }

    pub fn grads_populated(&self) -> bool {
        self.grads.values().all(Option::is_some)
    }

    /// Borrow parameters and momentum together with the gradients for an
    /// optimizer update.
    pub(crate) fn split_mut(
        &mut self,
    ) -> (
        &mut IndexMap<String, LayerParams<T>>,
        &IndexMap<String, Option<LayerParams<T>>>,
        &mut IndexMap<String, LayerParams<T>>,
    ) {
        (&mut self.params, &self.grads, &mut self.momentum)
    }

    pub fn element_count(&self) -> usize {
        self.params.values().map(LayerParams::element_count).sum()
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            grads: self.grads.iter().map(|(k, v)| (k.clone(), v.as_ref().map(LayerParams::cast))).collect(),
            momentum: self.momentum.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Checks names and shapes against `spec`.
    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        let layers = spec.layers();
        if layers.len() != self.params.len() {
            return Err(Error::Shape(format!("spec has {} layers, store has {}", layers.len(), self.params.len())));
        }
        for (name, kind) in layers {
            let p = self.get(&name)?;
            let expected = match kind {
                LayerKind::Conv(c) => c.weight_shape(),
                LayerKind::Fc(f) => f.weight_shape(),
            };
            if p.weights.shape() != expected {
                return Err(Error::Shape(format!("layer `{name}` weights {} != {expected}", p.weights.shape())));
            }
        }
        Ok(())
    }
}
