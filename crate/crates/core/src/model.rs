//! Linear softmax classifier or one-hidden-layer network with hand-written
//! backpropagation. Parameters live in one flat buffer:
//! `[W1 (h×d), b1 (h), W2 (c×h), b2 (c)]`, or `[W (c×d), b (c)]` when linear.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::prob::Logits;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// 0 selects the linear model.
    pub hidden_dim: usize,
    pub classes: usize,
    pub weight_init_scale: f64,
    pub activation: Activation,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::param("input_dim must be >= 1"));
        }
        if self.classes < 2 {
            return Err(Error::param("classes must be >= 2"));
        }
        if !(self.weight_init_scale.is_finite() && self.weight_init_scale >= 0.0) {
            return Err(Error::param("weight_init_scale must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let (d, h, c) = (self.input_dim, self.hidden_dim, self.classes);
        if h == 0 {
            d * c + c
        } else {
            h * d + h + c * h + c
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    cfg: ModelConfig,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

impl ForwardCache {
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }
}

struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

impl Model {
    /// Weights uniform on `±scale/√fan_in`, biases zero.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Model::zeros(cfg)?;
        let l = model.layout();
        let (d, h, c) = (cfg.input_dim, cfg.hidden_dim, cfg.classes);
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, params: &mut [f64]| {
            let bound = cfg.weight_init_scale / (fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 };
            }
        };
        if h == 0 {
            fill(l.w2..l.w2 + c * d, d, &mut model.params);
        } else {
            fill(l.w1..l.w1 + h * d, d, &mut model.params);
            fill(l.w2..l.w2 + c * h, h, &mut model.params);
        }
        Ok(model)
    }

    pub fn zeros(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Model {
            cfg,
            params: vec![0.0; cfg.param_count()],
        })
    }

    pub fn from_params(cfg: ModelConfig, params: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        check_dims(cfg.param_count(), params.len())?;
        Ok(Model { cfg, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layout(&self) -> Layout {
        let (d, h, c) = (self.cfg.input_dim, self.cfg.hidden_dim, self.cfg.classes);
        if h == 0 {
            Layout {
                w1: 0,
                b1: 0,
                w2: 0,
                b2: c * d,
            }
        } else {
            let b1 = h * d;
            let w2 = b1 + h;
            Layout {
                w1: 0,
                b1,
                w2,
                b2: w2 + c * h,
            }
        }
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        check_dims(self.cfg.input_dim, x.len())?;
        let (h, c) = (self.cfg.hidden_dim, self.cfg.classes);
        let l = self.layout();
        let p = &self.params;
        let hidden: Vec<f64> = if h == 0 {
            Vec::new()
        } else {
            (0..h)
                .map(|i| {
                    let row = &p[l.w1 + i * x.len()..l.w1 + (i + 1) * x.len()];
                    let pre = p[l.b1 + i] + dot(row, x);
                    self.cfg.activation.apply(pre)
                })
                .collect()
        };
        let input: &[f64] = if h == 0 { x } else { &hidden };
        let width = input.len();
        let logits = (0..c)
            .map(|k| p[l.b2 + k] + dot(&p[l.w2 + k * width..l.w2 + (k + 1) * width], input))
            .collect();
        Ok(ForwardCache { hidden, logits })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Logits> {
        Logits::new(self.forward_cached(x)?.logits)
    }

    /// Add `∂L/∂θ` to `grad` given `∂L/∂z` for input `x`.
    pub fn backward(
        &self,
        x: &[f64],
        cache: &ForwardCache,
        dlogits: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        check_dims(self.cfg.classes, dlogits.len())?;
        check_dims(self.params.len(), grad.len())?;
        let (h, c) = (self.cfg.hidden_dim, self.cfg.classes);
        let l = self.layout();
        let input: &[f64] = if h == 0 { x } else { &cache.hidden };
        let width = input.len();
        for k in 0..c {
            let g = dlogits[k];
            grad[l.b2 + k] += g;
            let row = &mut grad[l.w2 + k * width..l.w2 + (k + 1) * width];
            row.iter_mut().zip(input).for_each(|(w, a)| *w += g * a);
        }
        if h == 0 {
            return Ok(());
        }
        let d = x.len();
        for i in 0..h {
            let upstream: f64 = (0..c).map(|k| dlogits[k] * self.params[l.w2 + k * h + i]).sum();
            let g = upstream * self.cfg.activation.derivative_from_output(cache.hidden[i]);
            if g == 0.0 {
                continue;
            }
            grad[l.b1 + i] += g;
            let row = &mut grad[l.w1 + i * d..l.w1 + (i + 1) * d];
            row.iter_mut().zip(x).for_each(|(w, a)| *w += g * a);
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
