use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    /// Multinomial logistic regression: one dense layer with softmax.
    Mlr,
    /// One hidden ReLU layer followed by a softmax layer.
    Dnn,
}

impl Architecture {
    pub fn id(self) -> &'static str {
        match self {
            Architecture::Mlr => "mlr",
            Architecture::Dnn => "dnn",
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlr" => Ok(Architecture::Mlr),
            "dnn" => Ok(Architecture::Dnn),
            other => Err(Error::config(format!(
                "unknown model `{other}` (expected mlr or dnn)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Weight,
    Bias,
}

/// Layer sizes of a model; fixes the component layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Architecture,
    pub input_dim: usize,
    /// Hidden width; ignored for MLR.
    pub hidden: usize,
    pub classes: usize,
}

impl ModelSpec {
    pub fn mlr(input_dim: usize, classes: usize) -> Self {
        Self {
            arch: Architecture::Mlr,
            input_dim,
            hidden: 0,
            classes,
        }
    }

    pub fn dnn(input_dim: usize, hidden: usize, classes: usize) -> Self {
        Self {
            arch: Architecture::Dnn,
            input_dim,
            hidden,
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.classes == 0 {
            return Err(Error::config("model input width and class count must be positive"));
        }
        if self.arch == Architecture::Dnn && self.hidden == 0 {
            return Err(Error::config("DNN hidden width must be positive"));
        }
        Ok(())
    }

    /// `(role, fan_in, fan_out)` per component, in component order.
    /// Biases report `fan_in == 1`.
    pub fn layout(&self) -> Vec<(Role, usize, usize)> {
        match self.arch {
            Architecture::Mlr => vec![
                (Role::Weight, self.input_dim, self.classes),
                (Role::Bias, 1, self.classes),
            ],
            Architecture::Dnn => vec![
                (Role::Weight, self.input_dim, self.hidden),
                (Role::Bias, 1, self.hidden),
                (Role::Weight, self.hidden, self.classes),
                (Role::Bias, 1, self.classes),
            ],
        }
    }

    pub fn num_components(&self) -> usize {
        match self.arch {
            Architecture::Mlr => 2,
            Architecture::Dnn => 4,
        }
    }
}

/// One parameter tensor of a model, flattened row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub role: Role,
    /// `[fan_in, fan_out]` for weights, `[fan_out]` for biases.
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Component {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A model viewed as an ordered list of layer components (weights and biases).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    spec: ModelSpec,
    components: Vec<Component>,
}

impl Model {
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let components = spec
            .layout()
            .into_iter()
            .map(|(role, fan_in, fan_out)| blank_component(role, fan_in, fan_out))
            .collect();
        Ok(Self { spec, components })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        let mut model = Self::zeros(spec)?;
        for (component, (role, fan_in, fan_out)) in
            model.components.iter_mut().zip(spec.layout())
        {
            if role == Role::Weight {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for v in component.values.iter_mut() {
                    *v = rng.random_range(-limit..=limit);
                }
            }
        }
        Ok(model)
    }

    /// Builds a model from flat component buffers laid out as [`ModelSpec::layout`].
    pub fn from_components(spec: ModelSpec, values: Vec<Vec<f64>>) -> Result<Self> {
        let mut model = Self::zeros(spec)?;
        if values.len() != model.components.len() {
            return Err(Error::DimensionMismatch {
                context: "component count",
                expected: model.components.len(),
                actual: values.len(),
            });
        }
        for (component, buf) in model.components.iter_mut().zip(values) {
            if buf.len() != component.values.len() {
                return Err(Error::DimensionMismatch {
                    context: "component length",
                    expected: component.values.len(),
                    actual: buf.len(),
                });
            }
            component.values = buf;
        }
        Ok(model)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn architecture(&self) -> Architecture {
        self.spec.arch
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn component(&self, layer: usize) -> &[f64] {
        &self.components[layer].values
    }

    pub fn component_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.components[layer].values
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn num_params(&self) -> usize {
        self.components.iter().map(Component::len).sum()
    }

    /// All parameters concatenated in component order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for c in &self.components {
            out.extend_from_slice(&c.values);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.components
            .iter()
            .all(|c| c.values.iter().all(|v| v.is_finite()))
    }

    /// Sum of squared weight entries (biases excluded).
    pub fn weight_sq_norm(&self) -> f64 {
        self.components
            .iter()
            .filter(|c| c.role == Role::Weight)
            .flat_map(|c| c.values.iter())
            .map(|v| v * v)
            .sum()
    }

    /// Errors unless `other` has the same spec (and so the same component shapes).
    pub fn check_congruent(&self, other: &Model) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::DimensionMismatch {
                context: "model congruence (parameter count)",
                expected: self.num_params(),
                actual: other.num_params(),
            });
        }
        Ok(())
    }
}

fn blank_component(role: Role, fan_in: usize, fan_out: usize) -> Component {
    match role {
        Role::Weight => Component {
            role,
            shape: vec![fan_in, fan_out],
            values: vec![0.0; fan_in * fan_out],
        },
        Role::Bias => Component {
            role,
            shape: vec![fan_out],
            values: vec![0.0; fan_out],
        },
    }
}

/// Gradient with the same component layout as its model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    components: Vec<Vec<f64>>,
}

impl Gradient {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            components: model
                .components()
                .iter()
                .map(|c| vec![0.0; c.len()])
                .collect(),
        }
    }

    pub fn from_components(components: Vec<Vec<f64>>) -> Self {
        Self { components }
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn component_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.components[layer]
    }

    pub fn check_congruent(&self, model: &Model) -> Result<()> {
        if self.components.len() != model.num_components() {
            return Err(Error::DimensionMismatch {
                context: "gradient component count",
                expected: model.num_components(),
                actual: self.components.len(),
            });
        }
        for (g, c) in self.components.iter().zip(model.components()) {
            if g.len() != c.len() {
                return Err(Error::DimensionMismatch {
                    context: "gradient component length",
                    expected: c.len(),
                    actual: g.len(),
                });
            }
        }
        Ok(())
    }

    /// Adds `lambda * (model - anchor)` in place.
    pub fn add_proximal(&mut self, model: &Model, anchor: &Model, lambda: f64) -> Result<()> {
        model.check_congruent(anchor)?;
        self.check_congruent(model)?;
        for (layer, g) in self.components.iter_mut().enumerate() {
            let (m, a) = (model.component(layer), anchor.component(layer));
            for ((gv, mv), av) in g.iter_mut().zip(m).zip(a) {
                *gv += lambda * (mv - av);
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.components.iter().all(|c| c.iter().all(|v| v.is_finite()))
    }
}
