use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::taxonomy::VehicleClass;

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = logits.iter().find(|z| !z.is_finite()) {
        return Err(Error::Numeric(format!("non-finite logit {bad}")));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Fully-connected layer; `weights` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Uniform in `±1/sqrt(inputs)`, zero bias.
    fn fan_in_uniform(inputs: usize, outputs: usize, rng: &mut SplitMix64) -> Self {
        let scale = 1.0 / (inputs.max(1) as f64).sqrt();
        Dense {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| rng.uniform(-scale, scale)).collect(),
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

/// Hidden layers use the rectifier; the last layer feeds softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub layers: Vec<Dense>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    /// Ties go to the lowest class index.
    pub class: VehicleClass,
}

impl ClassifierHead {
    /// Hidden layers get seeded fan-in uniform weights; the output layer
    /// starts at zero, so an untrained head predicts the uniform distribution.
    pub fn new(input_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden.contains(&0) {
            return Err(Error::Validation("layer widths must be positive".into()));
        }
        let mut rng = SplitMix64::derive(seed, "head-init");
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_dim;
        for &width in hidden {
            layers.push(Dense::fan_in_uniform(fan_in, width, &mut rng));
            fan_in = width;
        }
        layers.push(Dense::zeros(fan_in, VehicleClass::COUNT));
        Ok(ClassifierHead { layers })
    }

    pub fn zeros(input_dim: usize) -> Self {
        ClassifierHead {
            layers: vec![Dense::zeros(input_dim, VehicleClass::COUNT)],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.outputs).collect()
    }

    /// Shapes chain from the input width to four outputs and all parameters are finite.
    pub fn validate(&self) -> Result<()> {
        let Some(last) = self.layers.last() else {
            return Err(Error::Validation("head has no layers".into()));
        };
        if last.outputs != VehicleClass::COUNT {
            return Err(Error::Shape {
                expected: VehicleClass::COUNT,
                found: last.outputs,
            });
        }
        for pair in self.layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::Shape {
                    expected: pair[0].outputs,
                    found: pair[1].inputs,
                });
            }
        }
        for l in &self.layers {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::Validation("layer parameter length does not match its shape".into()));
            }
            if l.weights.iter().chain(&l.bias).any(|p| !p.is_finite()) {
                return Err(Error::Numeric("non-finite parameter".into()));
            }
        }
        Ok(())
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Pre-activations and activations for every layer. `acts[0]` is the input.
    fn forward_cached(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(acts.last().unwrap());
            let a = if i + 1 < self.layers.len() {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
            acts.push(a);
        }
        (pre, acts)
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let (_, mut acts) = self.forward_cached(x);
        Ok(acts.pop().unwrap())
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let probabilities = softmax(&self.logits(x)?)?;
        let mut best = 0;
        for (i, p) in probabilities.iter().enumerate() {
            if *p > probabilities[best] {
                best = i;
            }
        }
        Ok(Prediction {
            class: VehicleClass::from_index(best).expect("four outputs"),
            probabilities,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters flattened layer by layer, weights then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape {
                expected: self.param_count(),
                found: flat.len(),
            });
        }
        let mut at = 0;
        for l in &mut self.layers {
            let (w, b) = (l.weights.len(), l.bias.len());
            l.weights.copy_from_slice(&flat[at..at + w]);
            at += w;
            l.bias.copy_from_slice(&flat[at..at + b]);
            at += b;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub features: &'a [f64],
    pub label: usize,
}

/// Gradients with the same layout as [`ClassifierHead::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        ClassifierHead {
            layers: self.layers.clone(),
        }
        .params()
    }
}

/// Mean cross-entropy `-mean log p(label)` and its gradient by backpropagation.
pub fn loss_and_grad(head: &ClassifierHead, batch: &[Example<'_>]) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Training("empty batch".into()));
    }
    let mut grads = Gradients {
        layers: head
            .layers
            .iter()
            .map(|l| Dense::zeros(l.inputs, l.outputs))
            .collect(),
    };
    let mut total = 0.0;
    for ex in batch {
        head.check_dim(ex.features)?;
        if ex.label >= VehicleClass::COUNT {
            return Err(Error::Validation(format!("label {} out of range", ex.label)));
        }
        let (pre, acts) = head.forward_cached(ex.features);
        let logits = acts.last().unwrap();
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::Numeric("non-finite logit during training".into()));
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
        total += log_sum - logits[ex.label];

        // dL/dz at the output: p - onehot
        let mut delta: Vec<f64> = logits.iter().map(|z| (z - log_sum).exp()).collect();
        delta[ex.label] -= 1.0;
        for li in (0..head.layers.len()).rev() {
            let layer = &head.layers[li];
            let input = &acts[li];
            let g = &mut grads.layers[li];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, a) in row.iter_mut().zip(input) {
                    *gw += d * a;
                }
                g.bias[o] += d;
            }
            if li > 0 {
                let mut back = vec![0.0; layer.inputs];
                for (o, d) in delta.iter().enumerate() {
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (b, w) in back.iter_mut().zip(row) {
                        *b += d * w;
                    }
                }
                for (b, z) in back.iter_mut().zip(&pre[li - 1]) {
                    if *z <= 0.0 {
                        *b = 0.0;
                    }
                }
                delta = back;
            }
        }
    }
    let n = batch.len() as f64;
    for g in &mut grads.layers {
        g.weights.iter_mut().for_each(|v| *v /= n);
        g.bias.iter_mut().for_each(|v| *v /= n);
    }
    Ok((total / n, grads))
}
