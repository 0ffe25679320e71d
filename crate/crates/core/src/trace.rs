//! Activation traces, suite views over them and the trace directory format.
//!
//! A trace directory holds:
//!
//! ```text
//! manifest.json        {"version":1,"model":..,"num_inputs":..,"dtype":"f32",
//!                       "endianness":"little","layers":[{"name":..,"neurons":..}],
//!                       "has_labels":..,"has_predictions":..}
//! layers/<name>.f32    row-major N x m little-endian binary32, no header
//! labels.i64           optional, little-endian int64, length N
//! predictions.i64      optional, little-endian int64, length N
//! ```
//!
//! Values are held as `f64` in memory and narrowed to `f32` on save, so any
//! trace whose values are exactly representable in binary32 round-trips
//! bit-for-bit.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LAYERS_DIR: &str = "layers";
pub const LABELS_FILE: &str = "labels.i64";
pub const PREDICTIONS_FILE: &str = "predictions.i64";
pub const FORMAT_VERSION: u32 = 1;

/// Outputs of one layer for every input, row-major `num_inputs × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    name: String,
    width: usize,
    data: Vec<f64>,
}

impl Layer {
    pub fn new(name: impl Into<String>, width: usize, data: Vec<f64>) -> Result<Self> {
        let name = name.into();
        validate_layer_name(&name)?;
        if width == 0 {
            return Err(Error::Trace(format!("layer `{name}` has no neurons")));
        }
        if !data.len().is_multiple_of(width) {
            return Err(Error::Trace(format!(
                "layer `{name}`: {} values do not fill rows of width {width}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|x| !x.is_finite()) {
            return Err(Error::Trace(format!("layer `{name}` holds non-finite value {bad}")));
        }
        Ok(Self { name, width, data })
    }

    /// Builds a layer from explicit rows.
    pub fn from_rows(name: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let name = name.into();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Trace(format!("layer `{name}`: ragged rows")));
        }
        Self::new(name, width, rows.concat())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_rows(&self) -> usize {
        self.data.len() / self.width
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.data[index * self.width..(index + 1) * self.width]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Rows named by `view`, in view order.
    pub fn view_rows<'a>(&'a self, view: &'a SuiteView) -> impl Iterator<Item = &'a [f64]> + 'a {
        view.indices().iter().map(move |&i| self.row(i))
    }
}

fn validate_layer_name(name: &str) -> Result<()> {
    let bad = name.is_empty()
        || name == "."
        || name == ".."
        || name.chars().any(|c| c == '/' || c == '\\' || c == '\0');
    if bad {
        return Err(Error::Trace(format!("invalid layer name {name:?}")));
    }
    Ok(())
}

/// Per-layer activation matrices for `num_inputs` test inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    model: String,
    num_inputs: usize,
    layers: Vec<Layer>,
    labels: Option<Vec<i64>>,
    predictions: Option<Vec<i64>>,
}

impl ActivationTrace {
    pub fn new(model: impl Into<String>, num_inputs: usize, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Trace("trace has no layers".into()));
        }
        let mut names = HashSet::new();
        for layer in &layers {
            if !names.insert(layer.name()) {
                return Err(Error::Trace(format!("duplicate layer name `{}`", layer.name())));
            }
            if layer.num_rows() != num_inputs {
                return Err(Error::Trace(format!(
                    "layer `{}` has {} rows, expected {num_inputs}",
                    layer.name(),
                    layer.num_rows()
                )));
            }
        }
        Ok(Self {
            model: model.into(),
            num_inputs,
            layers,
            labels: None,
            predictions: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<i64>) -> Result<Self> {
        self.check_len("labels", labels.len())?;
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_predictions(mut self, predictions: Vec<i64>) -> Result<Self> {
        self.check_len("predictions", predictions.len())?;
        self.predictions = Some(predictions);
        Ok(self)
    }

    fn check_len(&self, what: &str, len: usize) -> Result<()> {
        if len != self.num_inputs {
            return Err(Error::Trace(format!("{what} has length {len}, expected {}", self.num_inputs)));
        }
        Ok(())
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.name() == name)
    }

    pub fn total_neurons(&self) -> usize {
        self.layers.iter().map(Layer::width).sum()
    }

    pub fn labels(&self) -> Option<&[i64]> {
        self.labels.as_deref()
    }

    pub fn predictions(&self) -> Option<&[i64]> {
        self.predictions.as_deref()
    }

    /// View over every input in recorded order.
    pub fn full_view(&self) -> SuiteView {
        SuiteView::full(self.num_inputs)
    }

    /// Keeps only the named layers, in trace order.
    pub fn select_layers(&self, names: &[String]) -> Result<Self> {
        for name in names {
            if self.layer(name).is_none() {
                return Err(Error::Trace(format!("unknown layer `{name}`")));
            }
        }
        let layers = self
            .layers
            .iter()
            .filter(|l| names.iter().any(|n| n == l.name()))
            .cloned()
            .collect();
        let mut out = Self::new(self.model.clone(), self.num_inputs, layers)?;
        out.labels = self.labels.clone();
        out.predictions = self.predictions.clone();
        Ok(out)
    }

    fn manifest(&self) -> Manifest {
        Manifest {
            version: FORMAT_VERSION,
            model: self.model.clone(),
            num_inputs: self.num_inputs,
            dtype: "f32".into(),
            endianness: "little".into(),
            layers: self
                .layers
                .iter()
                .map(|l| ManifestLayer {
                    name: l.name.clone(),
                    neurons: l.width,
                })
                .collect(),
            has_labels: self.labels.is_some(),
            has_predictions: self.predictions.is_some(),
        }
    }

    /// Writes the trace directory. Refuses to write into a non-empty
    /// directory.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        if dir.exists() {
            let mut entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
            if entries.next().is_some() {
                return Err(Error::Trace(format!("refusing to overwrite non-empty directory {}", dir.display())));
            }
        }
        let layers_dir = dir.join(LAYERS_DIR);
        fs::create_dir_all(&layers_dir).map_err(|e| Error::io(&layers_dir, e))?;

        for layer in &self.layers {
            let mut bytes = Vec::with_capacity(layer.data.len() * 4);
            for &x in &layer.data {
                let narrow = x as f32;
                if !narrow.is_finite() {
                    return Err(Error::Numeric(format!(
                        "layer `{}`: value {x} is not representable as f32",
                        layer.name
                    )));
                }
                bytes.extend_from_slice(&narrow.to_le_bytes());
            }
            write_file(&layer_path(dir, &layer.name), &bytes)?;
        }
        if let Some(labels) = &self.labels {
            write_file(&dir.join(LABELS_FILE), &encode_i64(labels))?;
        }
        if let Some(predictions) = &self.predictions {
            write_file(&dir.join(PREDICTIONS_FILE), &encode_i64(predictions))?;
        }
        let manifest = serde_json::to_string(&self.manifest()).expect("manifest serializes");
        write_file(&dir.join(MANIFEST_FILE), manifest.as_bytes())
    }

    /// Reads and validates a trace directory. Malformed input is rejected,
    /// never repaired.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: manifest_path.clone(),
            source,
        })?;
        if manifest.version != FORMAT_VERSION {
            return Err(Error::Trace(format!("unsupported manifest version {}", manifest.version)));
        }
        if manifest.dtype != "f32" {
            return Err(Error::Trace(format!("unsupported dtype `{}`", manifest.dtype)));
        }
        if manifest.endianness != "little" {
            return Err(Error::Trace(format!("unsupported endianness `{}`", manifest.endianness)));
        }

        let n = manifest.num_inputs;
        let mut layers = Vec::with_capacity(manifest.layers.len());
        for entry in &manifest.layers {
            validate_layer_name(&entry.name)?;
            let path = layer_path(dir, &entry.name);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let row_bytes = entry.neurons * 4;
            if entry.neurons == 0 || bytes.len() % row_bytes != 0 || bytes.len() / row_bytes != n {
                return Err(Error::Trace(format!(
                    "layer `{}`: file holds {} bytes, expected {n} rows of {} neurons ({} bytes)",
                    entry.name,
                    bytes.len(),
                    entry.neurons,
                    n * row_bytes
                )));
            }
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            layers.push(Layer::new(entry.name.clone(), entry.neurons, data)?);
        }

        let mut trace = Self::new(manifest.model, n, layers)?;
        if manifest.has_labels {
            trace = trace.with_labels(read_i64(&dir.join(LABELS_FILE))?)?;
        }
        if manifest.has_predictions {
            trace = trace.with_predictions(read_i64(&dir.join(PREDICTIONS_FILE))?)?;
        }
        Ok(trace)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    model: String,
    num_inputs: usize,
    dtype: String,
    endianness: String,
    layers: Vec<ManifestLayer>,
    has_labels: bool,
    has_predictions: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestLayer {
    name: String,
    neurons: usize,
}

fn layer_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(LAYERS_DIR).join(format!("{name}.f32"))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn encode_i64(values: &[i64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn read_i64(path: &Path) -> Result<Vec<i64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Trace(format!("{}: length is not a multiple of 8", path.display())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// An ordered sequence of input indices into a trace. Duplicates are
/// allowed, so a view can stand for a subset, a permutation or a suite with
/// repeated tests.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SuiteView {
    indices: Vec<usize>,
}

impl SuiteView {
    pub fn new(indices: Vec<usize>) -> Self {
        Self { indices }
    }

    pub fn full(n: usize) -> Self {
        Self::new((0..n).collect())
    }

    pub fn empty() -> Self {
        Self::new(Vec::new())
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Checks every index against a trace of `num_inputs` rows.
    pub fn validate(&self, num_inputs: usize) -> Result<()> {
        match self.indices.iter().find(|&&i| i >= num_inputs) {
            Some(i) => Err(Error::View(format!("index {i} out of range for {num_inputs} inputs"))),
            None => Ok(()),
        }
    }

    /// `k` distinct positions of this view chosen uniformly, in random order.
    pub fn subset(&self, k: usize, seed: u64) -> Result<Self> {
        if k > self.len() {
            return Err(Error::View(format!("cannot take {k} of {} inputs", self.len())));
        }
        let mut picked = self.shuffled(seed).indices;
        picked.truncate(k);
        Ok(Self::new(picked))
    }

    pub fn shuffled(&self, seed: u64) -> Self {
        self.shuffled_with(&mut rng::seeded(seed))
    }

    pub fn shuffled_with(&self, rng: &mut rng::Rng) -> Self {
        let mut indices = self.indices.clone();
        indices.shuffle(rng);
        Self::new(indices)
    }

    /// `self` followed by `other`.
    pub fn concat(&self, other: &Self) -> Self {
        let mut indices = self.indices.clone();
        indices.extend_from_slice(&other.indices);
        Self::new(indices)
    }

    /// Splits the view into consecutive chunks of at most `size` inputs.
    pub fn batches(&self, size: usize) -> impl Iterator<Item = &[usize]> {
        self.indices.chunks(size.max(1))
    }
}

/// Per-neuron activation range observed on a reference trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingProfile {
    pub layers: Vec<LayerProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProfile {
    pub name: String,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl TrainingProfile {
    /// Min/max of every neuron over the whole trace.
    pub fn from_trace(trace: &ActivationTrace) -> Result<Self> {
        Self::from_view(trace, &trace.full_view())
    }

    pub fn from_view(trace: &ActivationTrace, view: &SuiteView) -> Result<Self> {
        if view.is_empty() {
            return Err(Error::Profile("cannot profile an empty trace".into()));
        }
        view.validate(trace.num_inputs())?;
        let layers = trace
            .layers()
            .iter()
            .map(|layer| {
                let mut low = vec![f64::INFINITY; layer.width()];
                let mut high = vec![f64::NEG_INFINITY; layer.width()];
                for row in layer.view_rows(view) {
                    for (j, &x) in row.iter().enumerate() {
                        low[j] = low[j].min(x);
                        high[j] = high[j].max(x);
                    }
                }
                LayerProfile {
                    name: layer.name().to_owned(),
                    low,
                    high,
                }
            })
            .collect();
        Ok(Self { layers })
    }

    /// Checks that the profile describes the same layers and widths as
    /// `trace`, and that every range is well formed.
    pub fn check_covers(&self, trace: &ActivationTrace) -> Result<()> {
        if self.layers.len() != trace.layers().len() {
            return Err(Error::Profile(format!(
                "profile has {} layers, trace has {}",
                self.layers.len(),
                trace.layers().len()
            )));
        }
        for (p, l) in self.layers.iter().zip(trace.layers()) {
            if p.name != l.name() || p.low.len() != l.width() || p.high.len() != l.width() {
                return Err(Error::Profile(format!(
                    "profile layer `{}` ({} neurons) does not match trace layer `{}` ({} neurons)",
                    p.name,
                    p.low.len(),
                    l.name(),
                    l.width()
                )));
            }
            if p.low.iter().zip(&p.high).any(|(lo, hi)| !(lo <= hi)) {
                return Err(Error::Profile(format!("profile layer `{}` has low > high", p.name)));
            }
        }
        Ok(())
    }
}

/// Shorthand for [`TrainingProfile::from_trace`].
pub fn profile_training(trace: &ActivationTrace) -> Result<TrainingProfile> {
    TrainingProfile::from_trace(trace)
}
