//! A small deterministic fully-connected network and synthetic datasets, used
//! to produce activation traces without any external model.
//!
//! Forward passes run in `f64` with a fixed summation order; recorded
//! activations are rounded to `f32` when a trace is built, matching the
//! trace file precision.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::trace::{ActivationTrace, Layer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }
}

/// Network architecture as read from a JSON config.
///
/// ```json
/// {"input_dim": 8, "layer_widths": [16, 12, 10],
///  "activation": ["relu", "relu", "identity"],
///  "weight_seed": 7, "scale_factors": [1.0, 1.0, 10.0]}
/// ```
///
/// `scale_factors` may be omitted (all ones). A scale multiplies the
/// recorded output of its layer only; the next layer consumes the unscaled
/// output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    pub layer_widths: Vec<usize>,
    pub activation: Vec<Activation>,
    pub weight_seed: u64,
    #[serde(default)]
    pub scale_factors: Vec<f64>,
}

impl NetSpec {
    pub fn validate(&self) -> Result<()> {
        let depth = self.layer_widths.len();
        if depth < 2 {
            return Err(Error::Parameter("network needs at least 2 layers".into()));
        }
        if self.input_dim == 0 || self.layer_widths.contains(&0) {
            return Err(Error::Parameter("layer widths must be >= 1".into()));
        }
        if self.activation.len() != depth {
            return Err(Error::Parameter(format!(
                "{} activations for {depth} layers",
                self.activation.len()
            )));
        }
        if !self.scale_factors.is_empty() && self.scale_factors.len() != depth {
            return Err(Error::Parameter(format!(
                "{} scale factors for {depth} layers",
                self.scale_factors.len()
            )));
        }
        if self.scale_factors.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Parameter("scale factors must be finite and > 0".into()));
        }
        Ok(())
    }

    pub fn scale(&self, layer: usize) -> f64 {
        self.scale_factors.get(layer).copied().unwrap_or(1.0)
    }
}

/// One fully-connected layer. `weights` is row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub name: String,
    pub inputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub scale: f64,
}

impl Dense {
    pub fn outputs(&self) -> usize {
        self.bias.len()
    }

    /// Returns `(unscaled, recorded)` outputs.
    fn forward(&self, input: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let raw: Vec<f64> = self
            .weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(w, b)| {
                let mut acc = *b;
                for (wi, xi) in w.iter().zip(input) {
                    acc += wi * xi;
                }
                self.activation.apply(acc)
            })
            .collect();
        let recorded = raw.iter().map(|x| x * self.scale).collect();
        (raw, recorded)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_dim: usize,
    layers: Vec<Dense>,
}

impl Network {
    /// Draws weights and biases uniformly in `±1/sqrt(fan_in)`, one ChaCha
    /// stream per layer.
    pub fn from_spec(spec: &NetSpec) -> Result<Self> {
        spec.validate()?;
        let mut fan_in = spec.input_dim;
        let mut layers = Vec::with_capacity(spec.layer_widths.len());
        for (i, (&width, &activation)) in spec.layer_widths.iter().zip(&spec.activation).enumerate() {
            let mut rng = rng::stream(spec.weight_seed, i as u64);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut draw = |count: usize| -> Vec<f64> { (0..count).map(|_| rng.random_range(-bound..=bound)).collect() };
            let weights = draw(width * fan_in);
            let bias = draw(width);
            layers.push(Dense {
                name: format!("dense_{i}"),
                inputs: fan_in,
                weights,
                bias,
                activation,
                scale: spec.scale(i),
            });
            fan_in = width;
        }
        Ok(Self {
            input_dim: spec.input_dim,
            layers,
        })
    }

    /// Assembles a network from explicit layers.
    pub fn from_layers(input_dim: usize, layers: Vec<Dense>) -> Result<Self> {
        let mut fan_in = input_dim;
        for layer in &layers {
            if layer.inputs != fan_in || layer.weights.len() != layer.inputs * layer.outputs() {
                return Err(Error::Dimension(format!("layer `{}` does not fit fan-in {fan_in}", layer.name)));
            }
            fan_in = layer.outputs();
        }
        Ok(Self { input_dim, layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Recorded (scaled) outputs of every layer for one input.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<Vec<f64>>> {
        if input.len() != self.input_dim {
            return Err(Error::Dimension(format!(
                "input has width {}, network expects {}",
                input.len(),
                self.input_dim
            )));
        }
        let mut current = input.to_vec();
        let mut recorded = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (raw, out) = layer.forward(&current);
            recorded.push(out);
            current = raw;
        }
        Ok(recorded)
    }

    /// Runs every input of `data` and records the selected layers (all when
    /// `layer_filter` is `None`).
    pub fn forward_trace(&self, data: &SyntheticDataset, layer_filter: Option<&[String]>) -> Result<ActivationTrace> {
        if data.dim != self.input_dim {
            return Err(Error::Dimension(format!(
                "dataset has width {}, network expects {}",
                data.dim, self.input_dim
            )));
        }
        let selected: Vec<usize> = match layer_filter {
            None => (0..self.layers.len()).collect(),
            Some(names) => {
                for name in names {
                    if !self.layers.iter().any(|l| &l.name == name) {
                        return Err(Error::Parameter(format!("unknown layer `{name}`")));
                    }
                }
                (0..self.layers.len())
                    .filter(|&i| names.contains(&self.layers[i].name))
                    .collect()
            }
        };
        let mut columns: Vec<Vec<f64>> = selected.iter().map(|_| Vec::new()).collect();
        for row in data.rows() {
            let outputs = self.forward(row)?;
            for (col, &li) in columns.iter_mut().zip(&selected) {
                col.extend(outputs[li].iter().map(|&x| x as f32 as f64));
            }
        }
        let layers = selected
            .iter()
            .zip(columns)
            .map(|(&li, data)| Layer::new(self.layers[li].name.clone(), self.layers[li].outputs(), data))
            .collect::<Result<Vec<_>>>()?;
        let trace = ActivationTrace::new("toynet", data.len(), layers)?;
        match &data.labels {
            Some(labels) => trace.with_labels(labels.clone()),
            None => Ok(trace),
        }
    }
}

/// Shorthand for building the network of `spec` and tracing `data`.
pub fn forward_trace(spec: &NetSpec, data: &SyntheticDataset, layer_filter: Option<&[String]>) -> Result<ActivationTrace> {
    Network::from_spec(spec)?.forward_trace(data, layer_filter)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    Uniform,
    GaussianBlobs { k: usize, spread: f64 },
}

/// Dataset recipe as read from a JSON config.
///
/// ```json
/// {"n": 500, "dim": 8, "generator": {"kind": "gaussian_blobs", "k": 2, "spread": 0.1},
///  "range": [-1.0, 1.0], "seed": 3}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n: usize,
    pub dim: usize,
    pub generator: Generator,
    pub range: [f64; 2],
    pub seed: u64,
}

/// Row-major `len × dim` inputs, all inside `range`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub dim: usize,
    pub inputs: Vec<f64>,
    pub range: [f64; 2],
    /// Generating blob of each input, when known.
    pub labels: Option<Vec<i64>>,
}

impl SyntheticDataset {
    pub fn new(dim: usize, inputs: Vec<f64>, range: [f64; 2], labels: Option<Vec<i64>>) -> Result<Self> {
        if dim == 0 || !inputs.len().is_multiple_of(dim) {
            return Err(Error::Dimension(format!("{} values do not fill rows of width {dim}", inputs.len())));
        }
        if inputs.iter().any(|x| !(range[0] <= *x && *x <= range[1])) {
            return Err(Error::Parameter("input outside the declared range".into()));
        }
        if labels.as_ref().is_some_and(|l| l.len() != inputs.len() / dim) {
            return Err(Error::Dimension("label count does not match inputs".into()));
        }
        Ok(Self {
            dim,
            inputs,
            range,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.inputs.chunks_exact(self.dim)
    }
}

const CENTER_ATTEMPTS: usize = 1000;

pub fn make_dataset(spec: &DatasetSpec) -> Result<SyntheticDataset> {
    let [lo, hi] = spec.range;
    if spec.n == 0 || spec.dim == 0 {
        return Err(Error::Parameter("dataset needs n >= 1 and dim >= 1".into()));
    }
    if !(lo < hi) {
        return Err(Error::Parameter(format!("empty range [{lo}, {hi}]")));
    }
    let mut rng = rng::seeded(spec.seed);
    match spec.generator {
        Generator::Uniform => {
            let inputs = (0..spec.n * spec.dim).map(|_| rng.random_range(lo..=hi)).collect();
            SyntheticDataset::new(spec.dim, inputs, spec.range, None)
        }
        Generator::GaussianBlobs { k, spread } => {
            if k == 0 || !(spread > 0.0) {
                return Err(Error::Parameter("gaussian blobs need k >= 1 and spread > 0".into()));
            }
            let centers = blob_centers(&mut rng, k, spec.dim, spec.range, spread);
            let noise = Normal::new(0.0, spread).expect("spread > 0");
            let mut inputs = Vec::with_capacity(spec.n * spec.dim);
            let mut labels = Vec::with_capacity(spec.n);
            for i in 0..spec.n {
                let blob = i % k;
                labels.push(blob as i64);
                for &c in &centers[blob] {
                    inputs.push((c + noise.sample(&mut rng)).clamp(lo, hi));
                }
            }
            SyntheticDataset::new(spec.dim, inputs, spec.range, Some(labels))
        }
    }
}

/// Blob centers kept two spreads inside the range and, when the range
/// allows it, at least four spreads apart.
fn blob_centers(rng: &mut rng::Rng, k: usize, dim: usize, [lo, hi]: [f64; 2], spread: f64) -> Vec<Vec<f64>> {
    let (inner_lo, inner_hi) = if hi - lo > 4.0 * spread {
        (lo + 2.0 * spread, hi - 2.0 * spread)
    } else {
        (lo, hi)
    };
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    while centers.len() < k {
        let mut candidate = Vec::new();
        for attempt in 0..CENTER_ATTEMPTS {
            candidate = (0..dim).map(|_| rng.random_range(inner_lo..=inner_hi)).collect();
            let far = centers.iter().all(|c| euclidean(c, &candidate) >= 4.0 * spread);
            if far || attempt + 1 == CENTER_ATTEMPTS {
                break;
            }
        }
        centers.push(candidate);
    }
    centers
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(scales: Vec<f64>) -> NetSpec {
        NetSpec {
            input_dim: 4,
            layer_widths: vec![6, 5, 3],
            activation: vec![Activation::Relu, Activation::Tanh, Activation::Identity],
            weight_seed: 11,
            scale_factors: scales,
        }
    }

    fn uniform(n: usize, dim: usize, seed: u64) -> SyntheticDataset {
        make_dataset(&DatasetSpec {
            n,
            dim,
            generator: Generator::Uniform,
            range: [-1.0, 1.0],
            seed,
        })
        .unwrap()
    }

    #[test]
    fn identity_network_reproduces_inputs() {
        let eye = |n: usize| -> Vec<f64> { (0..n * n).map(|i| if i % (n + 1) == 0 { 1.0 } else { 0.0 }).collect() };
        let layer = |name: &str| Dense {
            name: name.into(),
            inputs: 3,
            weights: eye(3),
            bias: vec![0.0; 3],
            activation: Activation::Identity,
            scale: 1.0,
        };
        let net = Network::from_layers(3, vec![layer("a"), layer("b")]).unwrap();
        let data = SyntheticDataset::new(3, vec![0.5, -0.25, 1.0, 0.0, 0.75, -1.0], [-1.0, 1.0], None).unwrap();
        let trace = net.forward_trace(&data, None).unwrap();
        for layer in trace.layers() {
            assert_eq!(layer.data(), data.inputs.as_slice());
        }
    }

    #[test]
    fn final_layer_scale_is_linear() {
        let data = uniform(20, 4, 1);
        let base = Network::from_spec(&spec(vec![])).unwrap();
        let scaled = Network::from_spec(&spec(vec![1.0, 1.0, 10.0])).unwrap();
        for row in data.rows() {
            let a = base.forward(row).unwrap();
            let b = scaled.forward(row).unwrap();
            assert_eq!(a[0], b[0]);
            assert_eq!(a[1], b[1]);
            for (x, y) in a[2].iter().zip(&b[2]) {
                assert_eq!(x * 10.0, *y);
            }
        }
    }

    #[test]
    fn relu_layers_are_non_negative() {
        let mut s = spec(vec![]);
        s.activation = vec![Activation::Relu; 3];
        let trace = forward_trace(&s, &uniform(50, 4, 2), None).unwrap();
        assert!(trace.layers().iter().all(|l| l.data().iter().all(|&x| x >= 0.0)));
    }

    #[test]
    fn traces_are_reproducible_and_filterable() {
        let data = uniform(30, 4, 3);
        let a = forward_trace(&spec(vec![]), &data, None).unwrap();
        let b = forward_trace(&spec(vec![]), &data, None).unwrap();
        assert_eq!(a, b);
        let names = vec!["dense_2".to_string()];
        let only = forward_trace(&spec(vec![]), &data, Some(&names)).unwrap();
        assert_eq!(only.layers().len(), 1);
        assert_eq!(only.layers()[0], a.layers()[2]);
        assert!(forward_trace(&spec(vec![]), &data, Some(&["nope".to_string()])).is_err());
        assert!(forward_trace(&spec(vec![]), &uniform(3, 5, 0), None).is_err());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = spec(vec![]);
        s.layer_widths = vec![3];
        s.activation = vec![Activation::Relu];
        assert!(s.validate().is_err());
        assert!(spec(vec![1.0, 0.0, 1.0]).validate().is_err());
        assert!(spec(vec![1.0]).validate().is_err());
    }

    #[test]
    fn datasets_are_deterministic_and_in_range() {
        let a = uniform(100, 3, 9);
        assert_eq!(a, uniform(100, 3, 9));
        assert!(a.inputs.iter().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn blob_means_are_separated() {
        let spread = 0.1;
        let data = make_dataset(&DatasetSpec {
            n: 2000,
            dim: 3,
            generator: Generator::GaussianBlobs { k: 2, spread },
            range: [-1.0, 1.0],
            seed: 4,
        })
        .unwrap();
        let labels = data.labels.as_ref().unwrap();
        let mut means = vec![vec![0.0; 3]; 2];
        let mut counts = [0usize; 2];
        for (row, &l) in data.rows().zip(labels) {
            counts[l as usize] += 1;
            for (m, x) in means[l as usize].iter_mut().zip(row) {
                *m += x;
            }
        }
        for (m, c) in means.iter_mut().zip(counts) {
            m.iter_mut().for_each(|x| *x /= c as f64);
        }
        assert!(euclidean(&means[0], &means[1]) >= spread);
    }

    #[test]
    fn net_spec_json_schema() {
        let json = r#"{"input_dim":8,"layer_widths":[16,12],"activation":["relu","identity"],"weight_seed":7}"#;
        let s: NetSpec = serde_json::from_str(json).unwrap();
        assert_eq!(s.scale(1), 1.0);
        s.validate().unwrap();
        let d: DatasetSpec = serde_json::from_str(
            r#"{"n":5,"dim":8,"generator":{"kind":"gaussian_blobs","k":2,"spread":0.1},"range":[-1,1],"seed":3}"#,
        )
        .unwrap();
        assert_eq!(make_dataset(&d).unwrap().len(), 5);
    }
}
