//! MLP with a ReLU encoder, a linear classification head and an optional
//! projection head used only by the contrastive path.
//!
//! Weights are stored `(out_dim, in_dim)` row-major, so a layer computes
//! `y = act(x · Wᵀ + b)` over a batch `x` of shape `(n, in_dim)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{dim_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let mut layer = Self::zeros(in_dim, out_dim, activation);
        for w in layer.weight.data_mut() {
            *w = rng.random_range(-limit..limit);
        }
        layer
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return dim_err(format!(
                "layer expects {} inputs, batch has {}",
                self.in_dim(),
                x.cols()
            ));
        }
        let mut out = x.matmul_t(&self.weight)?;
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            for (v, b) in row.iter_mut().zip(&self.bias) {
                *v += b;
                if self.activation == Activation::Relu && *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        Ok(out)
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the layer input. `output` is this layer's forward output.
    fn backward(
        &self,
        input: &Matrix,
        output: &Matrix,
        d_out: &Matrix,
        grad: &mut Dense,
        need_input_grad: bool,
    ) -> Result<Option<Matrix>> {
        if d_out.shape() != output.shape() {
            return dim_err(format!(
                "upstream gradient {:?} vs layer output {:?}",
                d_out.shape(),
                output.shape()
            ));
        }
        let mut d_pre = d_out.clone();
        if self.activation == Activation::Relu {
            for (d, &o) in d_pre.data_mut().iter_mut().zip(output.data()) {
                if o <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        grad.weight.add_assign(&d_pre.t_matmul(input)?)?;
        for row in d_pre.iter_rows() {
            for (g, d) in grad.bias.iter_mut().zip(row) {
                *g += d;
            }
        }
        if need_input_grad {
            Ok(Some(d_pre.matmul(&self.weight)?))
        } else {
            Ok(None)
        }
    }

    fn params(&self) -> [&[f64]; 2] {
        [self.weight.data(), &self.bias]
    }

    fn params_mut(&mut self) -> [&mut [f64]; 2] {
        [self.weight.data_mut(), &mut self.bias]
    }

    fn zeros_like(&self) -> Dense {
        Dense::zeros(self.in_dim(), self.out_dim(), self.activation)
    }
}

/// Architecture description; the model is built from it with a seeded rng.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Encoder widths; the last entry is the representation dimension `d`.
    pub hidden: Vec<usize>,
    pub classes: usize,
    /// Widths of an optional nonlinear projection head on top of the encoder.
    #[serde(default)]
    pub projection: Vec<usize>,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.classes == 0 {
            return Err(Error::Config("input_dim and classes must be positive".into()));
        }
        if self.hidden.iter().chain(&self.projection).any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn representation_dim(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.input_dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub encoder: Vec<Dense>,
    pub classifier: Dense,
    #[serde(default)]
    pub projection: Vec<Dense>,
}

/// Per-layer outputs kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    encoder_outputs: Vec<Matrix>,
    pub logits: Matrix,
}

impl ForwardCache {
    /// Last-hidden-layer outputs; the batch itself when the encoder is empty.
    pub fn representations<'a>(&'a self, batch: &'a Matrix) -> &'a Matrix {
        self.encoder_outputs.last().unwrap_or(batch)
    }
}

#[derive(Debug, Clone)]
pub struct ProjectionCache {
    outputs: Vec<Matrix>,
}

impl ProjectionCache {
    pub fn output<'a>(&'a self, representations: &'a Matrix) -> &'a Matrix {
        self.outputs.last().unwrap_or(representations)
    }
}

impl MlpModel {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut encoder = Vec::with_capacity(cfg.hidden.len());
        let mut width = cfg.input_dim;
        for &h in &cfg.hidden {
            encoder.push(Dense::glorot(width, h, Activation::Relu, rng));
            width = h;
        }
        let classifier = Dense::glorot(width, cfg.classes, Activation::Identity, rng);
        let mut projection = Vec::with_capacity(cfg.projection.len());
        for (i, &p) in cfg.projection.iter().enumerate() {
            let act = if i + 1 == cfg.projection.len() {
                Activation::Identity
            } else {
                Activation::Relu
            };
            projection.push(Dense::glorot(width, p, act, rng));
            width = p;
        }
        Ok(Self {
            encoder,
            classifier,
            projection,
        })
    }

    /// Assembles a model from explicit layers, checking that shapes compose.
    pub fn from_layers(encoder: Vec<Dense>, classifier: Dense, projection: Vec<Dense>) -> Result<Self> {
        for pair in encoder.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return dim_err("encoder layer widths do not compose");
            }
        }
        if let Some(last) = encoder.last() {
            if last.out_dim() != classifier.in_dim() {
                return dim_err("classifier input must equal representation dim");
            }
        }
        let mut width = classifier.in_dim();
        for p in &projection {
            if p.in_dim() != width {
                return dim_err("projection head widths do not compose");
            }
            width = p.out_dim();
        }
        for l in encoder.iter().chain([&classifier]).chain(&projection) {
            if l.bias.len() != l.out_dim() {
                return dim_err("bias length must equal layer output width");
            }
        }
        Ok(Self {
            encoder,
            classifier,
            projection,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder
            .first()
            .map_or(self.classifier.in_dim(), Dense::in_dim)
    }

    pub fn representation_dim(&self) -> usize {
        self.classifier.in_dim()
    }

    pub fn classes(&self) -> usize {
        self.classifier.out_dim()
    }

    pub fn has_projection(&self) -> bool {
        !self.projection.is_empty()
    }

    pub fn forward_cached(&self, batch: &Matrix) -> Result<ForwardCache> {
        if batch.cols() != self.input_dim() {
            return dim_err(format!(
                "model expects {} input features, batch has {}",
                self.input_dim(),
                batch.cols()
            ));
        }
        let mut outputs: Vec<Matrix> = Vec::with_capacity(self.encoder.len());
        for layer in &self.encoder {
            let next = layer.forward(outputs.last().unwrap_or(batch))?;
            outputs.push(next);
        }
        let logits = self.classifier.forward(outputs.last().unwrap_or(batch))?;
        Ok(ForwardCache {
            encoder_outputs: outputs,
            logits,
        })
    }

    /// Returns `(representations, logits)`.
    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, Matrix)> {
        let mut cache = self.forward_cached(batch)?;
        let reps = cache.encoder_outputs.pop().unwrap_or_else(|| batch.clone());
        Ok((reps, cache.logits))
    }

    /// Forward over `batch` in fixed-size row blocks, concatenated in order.
    pub fn forward_blocked(&self, batch: &Matrix, block: usize) -> Result<(Matrix, Matrix)> {
        let block = block.max(1);
        if batch.rows() <= block {
            return self.forward(batch);
        }
        let mut reps = Vec::new();
        let mut logits = Vec::new();
        let mut start = 0;
        while start < batch.rows() {
            let end = (start + block).min(batch.rows());
            let (r, l) = self.forward(&batch.slice_rows(start, end))?;
            reps.push(r);
            logits.push(l);
            start = end;
        }
        let reps_refs: Vec<&Matrix> = reps.iter().collect();
        let logit_refs: Vec<&Matrix> = logits.iter().collect();
        Ok((Matrix::vstack(&reps_refs)?, Matrix::vstack(&logit_refs)?))
    }

    pub fn project(&self, representations: &Matrix) -> Result<ProjectionCache> {
        let mut outputs: Vec<Matrix> = Vec::with_capacity(self.projection.len());
        for layer in &self.projection {
            let next = layer.forward(outputs.last().unwrap_or(representations))?;
            outputs.push(next);
        }
        Ok(ProjectionCache { outputs })
    }

    /// Backpropagates through the projection head, accumulating its
    /// parameter gradients, and returns the gradient on the representations.
    pub fn project_backward(
        &self,
        representations: &Matrix,
        cache: &ProjectionCache,
        d_out: &Matrix,
        grads: &mut GradientStore,
    ) -> Result<Matrix> {
        let mut upstream = d_out.clone();
        for i in (0..self.projection.len()).rev() {
            let input = if i == 0 {
                representations
            } else {
                &cache.outputs[i - 1]
            };
            upstream = self.projection[i]
                .backward(input, &cache.outputs[i], &upstream, &mut grads.projection[i], true)?
                .expect("input gradient requested");
        }
        Ok(upstream)
    }

    /// Reverse-mode pass accumulating `∂loss/∂θ` into `grads`. Gradients
    /// arriving at the representations and at the logits are summed.
    pub fn backward_into(
        &self,
        batch: &Matrix,
        cache: &ForwardCache,
        d_repr: Option<&Matrix>,
        d_logits: Option<&Matrix>,
        grads: &mut GradientStore,
    ) -> Result<()> {
        grads.check_shapes(self)?;
        let reps = cache.representations(batch);
        let mut upstream = match d_repr {
            Some(d) => {
                if d.shape() != reps.shape() {
                    return dim_err(format!(
                        "representation gradient {:?} vs representations {:?}",
                        d.shape(),
                        reps.shape()
                    ));
                }
                d.clone()
            }
            None => Matrix::zeros(reps.rows(), reps.cols()),
        };
        if let Some(dl) = d_logits {
            let d_in = self
                .classifier
                .backward(reps, &cache.logits, dl, &mut grads.classifier, true)?
                .expect("input gradient requested");
            upstream.add_assign(&d_in)?;
        }
        for i in (0..self.encoder.len()).rev() {
            let input = if i == 0 {
                batch
            } else {
                &cache.encoder_outputs[i - 1]
            };
            let next = self.encoder[i].backward(
                input,
                &cache.encoder_outputs[i],
                &upstream,
                &mut grads.encoder[i],
                i > 0,
            )?;
            if let Some(n) = next {
                upstream = n;
            }
        }
        Ok(())
    }

    /// Convenience wrapper returning a fresh [`GradientStore`].
    pub fn backward(
        &self,
        batch: &Matrix,
        cache: &ForwardCache,
        d_repr: Option<&Matrix>,
        d_logits: Option<&Matrix>,
    ) -> Result<GradientStore> {
        let mut grads = GradientStore::zeros_like(self);
        self.backward_into(batch, cache, d_repr, d_logits, &mut grads)?;
        Ok(grads)
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.encoder
            .iter()
            .chain(std::iter::once(&self.classifier))
            .chain(&self.projection)
    }

    /// Parameter buffers in a fixed order (encoder, classifier, projection).
    pub fn params(&self) -> Vec<&[f64]> {
        self.layers().flat_map(Dense::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.encoder
            .iter_mut()
            .chain(std::iter::once(&mut self.classifier))
            .chain(self.projection.iter_mut())
            .flat_map(Dense::params_mut)
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }
}

/// Shape-matched gradient buffers for every parameter of an [`MlpModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientStore {
    pub encoder: Vec<Dense>,
    pub classifier: Dense,
    pub projection: Vec<Dense>,
}

impl GradientStore {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            encoder: model.encoder.iter().map(Dense::zeros_like).collect(),
            classifier: model.classifier.zeros_like(),
            projection: model.projection.iter().map(Dense::zeros_like).collect(),
        }
    }

    pub fn zero(&mut self) {
        for p in self.params_mut() {
            p.fill(0.0);
        }
    }

    fn check_shapes(&self, model: &MlpModel) -> Result<()> {
        let ok = self.encoder.len() == model.encoder.len()
            && self.projection.len() == model.projection.len()
            && self
                .params()
                .iter()
                .zip(model.params())
                .all(|(g, p)| g.len() == p.len());
        if ok {
            Ok(())
        } else {
            dim_err("gradient store does not mirror the model")
        }
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.encoder
            .iter()
            .chain(std::iter::once(&self.classifier))
            .chain(&self.projection)
            .flat_map(Dense::params)
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.encoder
            .iter_mut()
            .chain(std::iter::once(&mut self.classifier))
            .chain(self.projection.iter_mut())
            .flat_map(Dense::params_mut)
            .collect()
    }

    pub fn add_assign(&mut self, other: &GradientStore) -> Result<()> {
        let theirs = other.params();
        let mine = self.params_mut();
        if mine.len() != theirs.len() {
            return dim_err("gradient stores differ in layout");
        }
        for (a, b) in mine.into_iter().zip(theirs) {
            if a.len() != b.len() {
                return dim_err("gradient stores differ in layout");
            }
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|&v| v == 0.0))
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }
}
