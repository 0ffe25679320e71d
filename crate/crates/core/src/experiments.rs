//! Studies built on top of the criteria: per-layer contribution reports,
//! white-noise suite construction, activation spectra with Jensen-Shannon
//! divergence, and clustering-based subset selection.

use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::criteria::{Criterion, CriterionResult};
use crate::error::{Error, Result};
use crate::kmeans::{kmeans, squared_distance, KMeansConfig, KMeansFit};
use crate::linalg::CovarianceAccumulator;
use crate::rng;
use crate::toynet::{Network, SyntheticDataset};
use crate::trace::{ActivationTrace, Layer, SuiteView};

// ---------------------------------------------------------------------------
// Layer contributions

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerShare {
    pub layer: String,
    pub value: f64,
    /// Percentage of the summed per-layer values.
    pub share_pct: f64,
}

/// Per-layer values and their share of the total, deepest layer first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub criterion: String,
    pub total: f64,
    pub layers: Vec<LayerShare>,
    /// Every layer is zero; shares are reported as zero.
    pub degenerate: bool,
}

pub fn layer_report(result: &CriterionResult) -> Result<LayerReport> {
    if let Some(neg) = result.per_layer.iter().find(|l| !(l.value >= 0.0)) {
        return Err(Error::Parameter(format!(
            "layer shares need non-negative per-layer values; `{}` is {}",
            neg.layer, neg.value
        )));
    }
    let total: f64 = result.per_layer.iter().map(|l| l.value).sum();
    let degenerate = total == 0.0;
    let layers = result
        .per_layer
        .iter()
        .rev()
        .map(|l| LayerShare {
            layer: l.layer.clone(),
            value: l.value,
            share_pct: if degenerate { 0.0 } else { l.value / total * 100.0 },
        })
        .collect();
    Ok(LayerReport {
        criterion: result.criterion.clone(),
        total,
        layers,
        degenerate,
    })
}

/// Evaluates `criterion` and builds its layer report.
pub fn layer_report_for(criterion: &dyn Criterion, trace: &ActivationTrace, view: &SuiteView) -> Result<LayerReport> {
    layer_report(&criterion.evaluate(trace, view)?)
}

pub const LAYER_CSV_HEADER: &str = "criterion,layer,value,share_pct";

impl LayerReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{LAYER_CSV_HEADER}\n");
        for l in &self.layers {
            let _ = writeln!(out, "{},{},{},{}", self.criterion, l.layer, l.value, l.share_pct);
        }
        out
    }

    /// Horizontal bar chart of per-layer values on a log10 axis, one bar per
    /// layer annotated with its percentage share.
    pub fn to_svg(&self) -> String {
        const BAR: f64 = 22.0;
        const GAP: f64 = 8.0;
        const LEFT: f64 = 140.0;
        const PLOT: f64 = 480.0;
        const TOP: f64 = 30.0;

        let positive: Vec<f64> = self.layers.iter().map(|l| l.value).filter(|&v| v > 0.0).collect();
        let (lo_exp, hi_exp) = match (
            positive.iter().copied().fold(f64::INFINITY, f64::min),
            positive.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ) {
            (lo, hi) if lo.is_finite() => {
                let a = lo.log10().floor();
                let b = hi.log10().ceil();
                (a, if b > a { b } else { a + 1.0 })
            }
            _ => (0.0, 1.0),
        };
        let x_of = |v: f64| LEFT + (v.log10() - lo_exp) / (hi_exp - lo_exp) * PLOT;
        let height = TOP + self.layers.len() as f64 * (BAR + GAP) + 40.0;
        let width = LEFT + PLOT + 90.0;

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(
            svg,
            r#"<text x="{LEFT}" y="18">{} per layer (log scale)</text>"#,
            xml_escape(&self.criterion)
        );
        for (i, l) in self.layers.iter().enumerate() {
            let y = TOP + i as f64 * (BAR + GAP);
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
                LEFT - 6.0,
                y + BAR * 0.7,
                xml_escape(&l.layer)
            );
            if l.value > 0.0 {
                let w = (x_of(l.value) - LEFT).max(1.0);
                let _ = writeln!(
                    svg,
                    r##"<rect class="bar" x="{LEFT}" y="{y}" width="{w:.2}" height="{BAR}" fill="#4c78a8"/>"##
                );
                let _ = writeln!(
                    svg,
                    r#"<text x="{:.2}" y="{}">{:.2}%</text>"#,
                    LEFT + w + 4.0,
                    y + BAR * 0.7,
                    l.share_pct
                );
            }
        }
        let axis_y = TOP + self.layers.len() as f64 * (BAR + GAP);
        let _ = writeln!(
            svg,
            r#"<line x1="{LEFT}" y1="{axis_y}" x2="{}" y2="{axis_y}" stroke="black"/>"#,
            LEFT + PLOT
        );
        let mut e = lo_exp;
        while e <= hi_exp {
            let x = x_of(10f64.powf(e));
            let _ = writeln!(
                svg,
                r#"<text x="{x:.2}" y="{}" text-anchor="middle">1e{e}</text>"#,
                axis_y + 16.0
            );
            e += 1.0;
        }
        svg.push_str("</svg>\n");
        svg
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

// ---------------------------------------------------------------------------
// Noise suites

/// Paired white-noise suites built from one shared set of base inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSuites {
    /// Indices of the sampled base inputs.
    pub bases: Vec<usize>,
    /// `|dataset|` replicas.
    pub x1: SyntheticDataset,
    /// `10 · |dataset|` replicas.
    pub x10: SyntheticDataset,
    /// Base index of every replica, per suite.
    pub x1_sources: Vec<usize>,
    pub x10_sources: Vec<usize>,
}

/// `count` replicas cycling through `bases`, each perturbed by i.i.d.
/// uniform noise in `[low, high]` per feature and clamped to the dataset
/// range. Returns the replicas and the base index of each.
pub fn noise_replicas(
    dataset: &SyntheticDataset,
    bases: &[usize],
    count: usize,
    low: f64,
    high: f64,
    rng: &mut rng::Rng,
) -> Result<(SyntheticDataset, Vec<usize>)> {
    if !(low <= high) {
        return Err(Error::Parameter(format!("noise range [{low}, {high}] is empty")));
    }
    if bases.is_empty() || bases.iter().any(|&b| b >= dataset.len()) {
        return Err(Error::Parameter("replica bases must be non-empty and within the dataset".into()));
    }
    let [lo, hi] = dataset.range;
    let mut inputs = Vec::with_capacity(count * dataset.dim);
    let mut sources = Vec::with_capacity(count);
    for i in 0..count {
        let base = bases[i % bases.len()];
        sources.push(base);
        for &x in dataset.row(base) {
            let noise = if low == high { low } else { rng.random_range(low..high) };
            inputs.push((x + noise).clamp(lo, hi));
        }
    }
    let labels = dataset
        .labels
        .as_ref()
        .map(|l| sources.iter().map(|&s| l[s]).collect());
    Ok((SyntheticDataset::new(dataset.dim, inputs, dataset.range, labels)?, sources))
}

pub fn make_noise_suites(
    dataset: &SyntheticDataset,
    base_count: usize,
    noise_low: f64,
    noise_high: f64,
    seed: u64,
) -> Result<NoiseSuites> {
    if base_count == 0 || base_count > dataset.len() {
        return Err(Error::Parameter(format!(
            "base_count must be in 1..={}, got {base_count}",
            dataset.len()
        )));
    }
    let mut base_rng = rng::stream(seed, 0);
    let mut bases: Vec<usize> = (0..dataset.len()).collect();
    bases.shuffle(&mut base_rng);
    bases.truncate(base_count);

    let n = dataset.len();
    let (x1, x1_sources) = noise_replicas(dataset, &bases, n, noise_low, noise_high, &mut rng::stream(seed, 1))?;
    let (x10, x10_sources) = noise_replicas(dataset, &bases, 10 * n, noise_low, noise_high, &mut rng::stream(seed, 2))?;
    Ok(NoiseSuites {
        bases,
        x1,
        x10,
        x1_sources,
        x10_sources,
    })
}

// ---------------------------------------------------------------------------
// Activation spectra

/// Which layer(s) feed an activation spectrum.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSelector {
    #[default]
    Penultimate,
    Last,
    All,
    Index(usize),
    Name(String),
}

impl FromStr for LayerSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "penultimate" => LayerSelector::Penultimate,
            "last" => LayerSelector::Last,
            "all" => LayerSelector::All,
            _ => match s.parse::<usize>() {
                Ok(i) => LayerSelector::Index(i),
                Err(_) => LayerSelector::Name(s.to_owned()),
            },
        })
    }
}

impl std::fmt::Display for LayerSelector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LayerSelector::Penultimate => f.write_str("penultimate"),
            LayerSelector::Last => f.write_str("last"),
            LayerSelector::All => f.write_str("all"),
            LayerSelector::Index(i) => write!(f, "{i}"),
            LayerSelector::Name(n) => f.write_str(n),
        }
    }
}

impl LayerSelector {
    pub fn select<'a>(&self, trace: &'a ActivationTrace) -> Result<Vec<&'a Layer>> {
        let layers = trace.layers();
        let pick = |i: usize| {
            layers
                .get(i)
                .map(|l| vec![l])
                .ok_or_else(|| Error::Parameter(format!("trace has no layer {i}")))
        };
        match self {
            LayerSelector::All => Ok(layers.iter().collect()),
            LayerSelector::Last => pick(layers.len() - 1),
            LayerSelector::Penultimate => pick(layers.len().saturating_sub(2)),
            LayerSelector::Index(i) => pick(*i),
            LayerSelector::Name(name) => trace
                .layer(name)
                .map(|l| vec![l])
                .ok_or_else(|| Error::Parameter(format!("unknown layer `{name}`"))),
        }
    }
}

/// Normalized histogram of activation values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub bin_edges: Vec<f64>,
    pub mass: Vec<f64>,
    /// No values were binned; `mass` is all zeros.
    pub empty: bool,
}

impl Spectrum {
    fn from_counts(bin_edges: Vec<f64>, counts: &[f64]) -> Self {
        let total: f64 = counts.iter().sum();
        if total == 0.0 {
            return Self {
                bin_edges,
                mass: vec![0.0; counts.len()],
                empty: true,
            };
        }
        Self {
            bin_edges,
            mass: counts.iter().map(|c| c / total).collect(),
            empty: false,
        }
    }
}

/// Fixed bin edges over the activation range of a reference view, so that
/// spectra of different suites are comparable. Values outside the range
/// fall into the edge bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Binning {
    edges: Vec<f64>,
    selector: LayerSelector,
}

impl Binning {
    pub fn from_view(trace: &ActivationTrace, view: &SuiteView, selector: &LayerSelector, bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::Parameter("spectra need at least 2 bins".into()));
        }
        if view.is_empty() {
            return Err(Error::View("cannot bin an empty view".into()));
        }
        view.validate(trace.num_inputs())?;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for layer in selector.select(trace)? {
            for row in layer.view_rows(view) {
                for &x in row {
                    lo = lo.min(x);
                    hi = hi.max(x);
                }
            }
        }
        if lo == hi {
            lo -= 0.5;
            hi += 0.5;
        }
        let mut edges: Vec<f64> = (0..bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect();
        edges.push(hi);
        Ok(Self {
            edges,
            selector: selector.clone(),
        })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn bins(&self) -> usize {
        self.edges.len() - 1
    }

    fn bin_of(&self, x: f64) -> usize {
        let lo = self.edges[0];
        let hi = self.edges[self.bins()];
        let pos = ((x - lo) / (hi - lo) * self.bins() as f64).floor();
        (pos.max(0.0) as usize).min(self.bins() - 1)
    }

    fn counts(&self, layers: &[&Layer], rows: &[usize]) -> Vec<f64> {
        let mut counts = vec![0.0; self.bins()];
        for layer in layers {
            for &r in rows {
                for &x in layer.row(r) {
                    counts[self.bin_of(x)] += 1.0;
                }
            }
        }
        counts
    }

    /// One histogram pooled over every selected activation in the view.
    pub fn spectrum(&self, trace: &ActivationTrace, view: &SuiteView) -> Result<Spectrum> {
        view.validate(trace.num_inputs())?;
        let layers = self.selector.select(trace)?;
        Ok(Spectrum::from_counts(self.edges.clone(), &self.counts(&layers, view.indices())))
    }

    /// Histogram of a single input.
    pub fn input_spectrum(&self, trace: &ActivationTrace, input: usize) -> Result<Spectrum> {
        self.spectrum(trace, &SuiteView::new(vec![input]))
    }

    /// Mean of the per-input histograms of the view.
    pub fn mean_input_spectrum(&self, trace: &ActivationTrace, view: &SuiteView) -> Result<Spectrum> {
        view.validate(trace.num_inputs())?;
        let mut mass = vec![0.0; self.bins()];
        for &i in view.indices() {
            for (m, x) in mass.iter_mut().zip(self.input_spectrum(trace, i)?.mass) {
                *m += x;
            }
        }
        Ok(Spectrum::from_counts(self.edges.clone(), &mass))
    }
}

/// Pooled spectrum of `view` binned over its own activation range.
pub fn activation_spectrum(
    trace: &ActivationTrace,
    view: &SuiteView,
    selector: &LayerSelector,
    bins: usize,
) -> Result<Spectrum> {
    Binning::from_view(trace, view, selector, bins)?.spectrum(trace, view)
}

/// Jensen-Shannon divergence in nats; lies in `[0, ln 2]`.
pub fn js_divergence(p: &Spectrum, q: &Spectrum) -> Result<f64> {
    if p.bin_edges != q.bin_edges {
        return Err(Error::Parameter("spectra have different bin edges".into()));
    }
    let mut js = 0.0;
    for (&a, &b) in p.mass.iter().zip(&q.mass) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            js += 0.5 * a * (a / m).ln();
        }
        if b > 0.0 {
            js += 0.5 * b * (b / m).ln();
        }
    }
    Ok(js.max(0.0))
}

// ---------------------------------------------------------------------------
// Clustering-based selection

#[derive(Debug, Clone, PartialEq)]
pub struct CentroidSelection {
    /// One input per cluster, the member nearest its centroid, in cluster
    /// order.
    pub picks: Vec<usize>,
    pub fit: Option<KMeansFit>,
}

/// Clusters per-input spectra with k-means and keeps, per cluster, the
/// member closest to the centroid (ties go to the lower index).
pub fn centroid_select(spectra: &[Vec<f64>], k: usize, seed: u64) -> Result<CentroidSelection> {
    if k == 0 || k > spectra.len() {
        return Err(Error::Parameter(format!(
            "cannot select {k} centroids from {} inputs",
            spectra.len()
        )));
    }
    if k == spectra.len() {
        return Ok(CentroidSelection {
            picks: (0..k).collect(),
            fit: None,
        });
    }
    let fit = kmeans(spectra, &KMeansConfig::new(k, seed))?;
    let picks = (0..k)
        .filter_map(|c| {
            fit.members(c).min_by(|&a, &b| {
                squared_distance(&spectra[a], &fit.centroids[c])
                    .total_cmp(&squared_distance(&spectra[b], &fit.centroids[c]))
                    .then(a.cmp(&b))
            })
        })
        .collect();
    Ok(CentroidSelection { picks, fit: Some(fit) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityConfig {
    /// Number of clusters / selected base inputs.
    pub k: usize,
    pub bins: usize,
    pub layer: LayerSelector,
    pub noise_low: f64,
    pub noise_high: f64,
    /// Average per-input histograms instead of pooling all activations.
    pub per_input_average: bool,
    pub seed: u64,
}

impl Default for DiversityConfig {
    fn default() -> Self {
        Self {
            k: 100,
            bins: 100,
            layer: LayerSelector::Penultimate,
            noise_low: -0.1,
            noise_high: 0.1,
            per_input_average: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityRow {
    pub strategy: String,
    pub suite_size: usize,
    /// JS divergence from the full set's spectrum.
    pub js: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub layer: String,
    pub rows: Vec<DiversityRow>,
}

pub const DIVERSITY_CSV_HEADER: &str = "strategy,suite_size,js";

impl DiversityReport {
    pub fn js(&self, strategy: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.strategy == strategy).map(|r| r.js)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{DIVERSITY_CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.strategy, r.suite_size, r.js);
        }
        out
    }
}

struct SpectrumContext<'a> {
    binning: Binning,
    config: &'a DiversityConfig,
    full: Spectrum,
}

impl SpectrumContext<'_> {
    fn of(&self, trace: &ActivationTrace, view: &SuiteView) -> Result<Spectrum> {
        if self.config.per_input_average {
            self.binning.mean_input_spectrum(trace, view)
        } else {
            self.binning.spectrum(trace, view)
        }
    }

    fn row(&self, strategy: &str, trace: &ActivationTrace, view: &SuiteView) -> Result<DiversityRow> {
        Ok(DiversityRow {
            strategy: strategy.to_owned(),
            suite_size: view.len(),
            js: js_divergence(&self.of(trace, view)?, &self.full)?,
        })
    }
}

/// Subset-only diversity comparison on an existing trace: centroid picks,
/// members of the largest single cluster and a random subset of the same
/// size, each compared with the full set.
pub fn subset_diversity(trace: &ActivationTrace, config: &DiversityConfig) -> Result<DiversityReport> {
    let (ctx, selection) = prepare(trace, config)?;
    let mut rows = vec![ctx.row("centroid_subset", trace, &SuiteView::new(selection.picks.clone()))?];
    rows.push(ctx.row(
        "single_cluster_subset",
        trace,
        &SuiteView::new(single_cluster_bases(&selection, config.k, config.seed)),
    )?);
    rows.push(ctx.row(
        "random_subset",
        trace,
        &trace.full_view().subset(selection.picks.len(), config.seed)?,
    )?);
    Ok(DiversityReport {
        layer: config.layer.to_string(),
        rows,
    })
}

fn prepare<'a>(trace: &ActivationTrace, config: &'a DiversityConfig) -> Result<(SpectrumContext<'a>, CentroidSelection)> {
    let full_view = trace.full_view();
    let binning = Binning::from_view(trace, &full_view, &config.layer, config.bins)?;
    let per_input = (0..trace.num_inputs())
        .map(|i| binning.input_spectrum(trace, i).map(|s| s.mass))
        .collect::<Result<Vec<_>>>()?;
    let selection = centroid_select(&per_input, config.k, config.seed)?;
    let mut ctx = SpectrumContext {
        binning,
        config,
        full: Spectrum::from_counts(Vec::new(), &[]),
    };
    ctx.full = ctx.of(trace, &full_view)?;
    Ok((ctx, selection))
}

/// Up to `k` members of the largest cluster, chosen at random.
fn single_cluster_bases(selection: &CentroidSelection, k: usize, seed: u64) -> Vec<usize> {
    let Some(fit) = &selection.fit else {
        return selection.picks.clone();
    };
    let clusters = fit.centroids.len();
    let largest = (0..clusters).max_by_key(|&c| (fit.members(c).count(), std::cmp::Reverse(c))).unwrap_or(0);
    let mut members: Vec<usize> = fit.members(largest).collect();
    members.shuffle(&mut rng::stream(seed, 7));
    members.truncate(k);
    members
}

/// Full diversity study on a toy network: the JS divergence from the full
/// dataset of (a) the centroid subset itself and of white-noise dummy
/// suites of `|dataset|` replicas built from (b) centroid picks, (c) members
/// of a single cluster and (d) random inputs.
pub fn diversity_study(net: &Network, dataset: &SyntheticDataset, config: &DiversityConfig) -> Result<DiversityReport> {
    let trace = net.forward_trace(dataset, None)?;
    let (ctx, selection) = prepare(&trace, config)?;
    let n = dataset.len();

    let dummy = |strategy: &str, bases: &[usize], stream: u64| -> Result<DiversityRow> {
        let (replicas, _) = noise_replicas(
            dataset,
            bases,
            n,
            config.noise_low,
            config.noise_high,
            &mut rng::stream(config.seed, stream),
        )?;
        let dummy_trace = net.forward_trace(&replicas, None)?;
        ctx.row(strategy, &dummy_trace, &dummy_trace.full_view())
    };

    let random: Vec<usize> = trace
        .full_view()
        .subset(selection.picks.len(), config.seed)?
        .indices()
        .to_vec();
    let rows = vec![
        ctx.row("centroid_subset", &trace, &SuiteView::new(selection.picks.clone()))?,
        dummy("centroid_dummy", &selection.picks, 11)?,
        dummy("single_cluster_dummy", &single_cluster_bases(&selection, config.k, config.seed), 12)?,
        dummy("random_dummy", &random, 13)?,
    ];
    Ok(DiversityReport {
        layer: config.layer.to_string(),
        rows,
    })
}

/// Result of the simplified clustering-based diversity metric: PCA to at
/// most 8 dimensions, then k-means with the number of clusters chosen by
/// silhouette score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDiversity {
    pub method: String,
    pub chosen_k: usize,
    pub silhouette: f64,
    pub assignments: Vec<usize>,
    /// One input per cluster, nearest its centroid.
    pub representatives: Vec<usize>,
}

impl ClusterDiversity {
    /// Fraction of clusters hit by the inputs of `subset`.
    pub fn coverage(&self, subset: &[usize]) -> f64 {
        let mut hit = vec![false; self.chosen_k];
        for &i in subset {
            hit[self.assignments[i]] = true;
        }
        hit.iter().filter(|&&h| h).count() as f64 / self.chosen_k as f64
    }
}

pub const PCA_DIMS: usize = 8;

/// Projects centered points onto their leading principal axes.
pub fn pca_project(points: &[Vec<f64>], dims: usize) -> Result<Vec<Vec<f64>>> {
    let width = points.first().map_or(0, Vec::len);
    let acc = CovarianceAccumulator::from_rows(width, points.iter().map(Vec::as_slice))?;
    let eig = SymmetricEigen::new(acc.covariance());
    let mut order: Vec<usize> = (0..width).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    order.truncate(dims.min(width));
    let axes: DMatrix<f64> = DMatrix::from_fn(width, order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(points
        .iter()
        .map(|p| {
            (0..axes.ncols())
                .map(|c| (0..width).map(|r| (p[r] - acc.mean()[r]) * axes[(r, c)]).sum())
                .collect()
        })
        .collect())
}

/// Mean silhouette coefficient of a clustering.
pub fn silhouette(points: &[Vec<f64>], assignments: &[usize], k: usize) -> f64 {
    let n = points.len();
    let sizes = (0..k).map(|c| assignments.iter().filter(|&&a| a == c).count()).collect::<Vec<_>>();
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if i != j {
                sums[assignments[j]] += squared_distance(&points[i], &points[j]).sqrt();
            }
        }
        let own = assignments[i];
        if sizes[own] <= 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() && a.max(b) > 0.0 {
            total += (b - a) / a.max(b);
        }
    }
    total / n as f64
}

pub fn cluster_diversity_simplified(points: &[Vec<f64>], max_k: usize, seed: u64) -> Result<ClusterDiversity> {
    if points.len() < 3 {
        return Err(Error::Parameter("clustering diversity needs at least 3 inputs".into()));
    }
    let projected = pca_project(points, PCA_DIMS)?;
    let upper = max_k.min(points.len() - 1);
    if upper < 2 {
        return Err(Error::Parameter("max_k must be >= 2".into()));
    }
    let mut best: Option<(f64, KMeansFit)> = None;
    for k in 2..=upper {
        let fit = kmeans(&projected, &KMeansConfig::new(k, seed))?;
        let score = silhouette(&projected, &fit.assignments, k);
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, fit));
        }
    }
    let (score, fit) = best.expect("at least one k evaluated");
    let chosen_k = fit.centroids.len();
    let representatives = (0..chosen_k)
        .filter_map(|c| {
            fit.members(c).min_by(|&a, &b| {
                squared_distance(&projected[a], &fit.centroids[c])
                    .total_cmp(&squared_distance(&projected[b], &fit.centroids[c]))
                    .then(a.cmp(&b))
            })
        })
        .collect();
    Ok(ClusterDiversity {
        method: "simplified-pca8-kmeans-silhouette".into(),
        chosen_k,
        silhouette: score,
        assignments: fit.assignments,
        representatives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::criteria::{LayerValue, Nlc};

    fn result(values: &[f64]) -> CriterionResult {
        CriterionResult {
            criterion: "nlc".into(),
            value: values.iter().sum(),
            per_layer: values
                .iter()
                .enumerate()
                .map(|(i, &v)| LayerValue {
                    layer: format!("l{i}"),
                    value: v,
                    degenerate: false,
                })
                .collect(),
            accepted_inputs: None,
            committed: None,
        }
    }

    fn trace(rows: &[Vec<f64>]) -> ActivationTrace {
        ActivationTrace::new("t", rows.len(), vec![Layer::from_rows("l0", rows).unwrap()]).unwrap()
    }

    #[test]
    fn shares_follow_values() {
        let r = layer_report(&result(&[1.0, 9.0])).unwrap();
        assert_eq!(r.layers[0].layer, "l1");
        assert_eq!(r.layers[0].share_pct, 90.0);
        assert_eq!(r.layers[1].share_pct, 10.0);
        assert_eq!(layer_report(&result(&[4.0])).unwrap().layers[0].share_pct, 100.0);
        let zero = layer_report(&result(&[0.0, 0.0])).unwrap();
        assert!(zero.degenerate);
        assert!(zero.layers.iter().all(|l| l.share_pct == 0.0));
        assert!(layer_report(&result(&[-1.0, 2.0])).is_err());
    }

    #[test]
    fn layer_report_outputs() {
        let r = layer_report(&result(&[0.01, 2.0, 300.0])).unwrap();
        let csv = r.to_csv();
        assert!(csv.starts_with(LAYER_CSV_HEADER));
        assert_eq!(csv.lines().count(), 4);
        let svg = r.to_svg();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches(r#"class="bar""#).count(), 3);
        assert!(svg.contains("1e-2"));
    }

    #[test]
    fn layer_report_via_criterion() {
        let t = trace(&[vec![1.0], vec![-1.0]]);
        let r = layer_report_for(&Nlc, &t, &t.full_view()).unwrap();
        assert_eq!(r.total, 1.0);
    }

    fn dataset(n: usize) -> SyntheticDataset {
        let inputs = (0..n * 2).map(|i| ((i * 13 % 7) as f64 / 7.0) * 2.0 - 1.0).collect();
        SyntheticDataset::new(2, inputs, [-1.0, 1.0], None).unwrap()
    }

    #[test]
    fn noise_suite_sizes_and_bounds() {
        let d = dataset(1000);
        let s = make_noise_suites(&d, 100, -0.1, 0.1, 4).unwrap();
        assert_eq!(s.x1.len(), 1000);
        assert_eq!(s.x10.len(), 10_000);
        for (i, &src) in s.x10_sources.iter().enumerate() {
            for (a, b) in s.x10.row(i).iter().zip(d.row(src)) {
                assert!((a - b).abs() <= 0.1 + 1e-15);
            }
        }
        let again = make_noise_suites(&d, 100, -0.1, 0.1, 4).unwrap();
        assert_eq!(again, s);
        assert!(make_noise_suites(&d, 1001, -0.1, 0.1, 4).is_err());
        assert!(make_noise_suites(&d, 10, 0.2, 0.1, 4).is_err());
    }

    #[test]
    fn zero_noise_replicas_equal_bases() {
        let d = dataset(50);
        let s = make_noise_suites(&d, 5, 0.0, 0.0, 1).unwrap();
        for (i, &src) in s.x1_sources.iter().enumerate() {
            assert_eq!(s.x1.row(i), d.row(src));
        }
    }

    #[test]
    fn spectrum_basics() {
        let t = trace(&[vec![0.5, 0.5], vec![0.5, 0.5]]);
        let s = activation_spectrum(&t, &t.full_view(), &LayerSelector::All, 10).unwrap();
        assert_eq!(s.mass.iter().filter(|&&m| m == 1.0).count(), 1);
        assert!(s.bin_edges.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(js_divergence(&s, &s).unwrap(), 0.0);
        assert!(activation_spectrum(&t, &SuiteView::empty(), &LayerSelector::All, 10).is_err());
        assert!(activation_spectrum(&t, &t.full_view(), &LayerSelector::All, 1).is_err());
    }

    #[test]
    fn out_of_range_values_clamp_to_edge_bins() {
        let t = trace(&[vec![0.0], vec![1.0], vec![-5.0], vec![9.0]]);
        let binning = Binning::from_view(&t, &SuiteView::new(vec![0, 1]), &LayerSelector::Last, 4).unwrap();
        let s = binning.spectrum(&t, &SuiteView::new(vec![2, 3])).unwrap();
        assert_eq!(s.mass, vec![0.5, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn js_of_disjoint_supports_is_ln2() {
        let edges = vec![0.0, 1.0, 2.0];
        let p = Spectrum { bin_edges: edges.clone(), mass: vec![1.0, 0.0], empty: false };
        let q = Spectrum { bin_edges: edges, mass: vec![0.0, 1.0], empty: false };
        assert!((js_divergence(&p, &q).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let r = Spectrum { bin_edges: vec![0.0, 1.0, 3.0], mass: vec![1.0, 0.0], empty: false };
        assert!(js_divergence(&p, &r).is_err());
    }

    #[test]
    fn selectors_parse() {
        assert_eq!("penultimate".parse::<LayerSelector>().unwrap(), LayerSelector::Penultimate);
        assert_eq!("2".parse::<LayerSelector>().unwrap(), LayerSelector::Index(2));
        assert_eq!("fc1".parse::<LayerSelector>().unwrap(), LayerSelector::Name("fc1".into()));
        let t = trace(&[vec![1.0]]);
        assert_eq!(LayerSelector::Penultimate.select(&t).unwrap()[0].name(), "l0");
        assert!(LayerSelector::Index(3).select(&t).is_err());
    }

    #[test]
    fn centroid_select_all_and_groups() {
        let spectra: Vec<Vec<f64>> = (0..10)
            .map(|i| if i < 5 { vec![1.0 - 0.01 * i as f64, 0.01 * i as f64] } else { vec![0.01 * i as f64, 1.0 - 0.01 * i as f64] })
            .collect();
        assert_eq!(centroid_select(&spectra, 10, 0).unwrap().picks, (0..10).collect::<Vec<_>>());
        let picks = centroid_select(&spectra, 2, 0).unwrap().picks;
        assert_eq!(picks.len(), 2);
        assert!(picks.iter().any(|&p| p < 5) && picks.iter().any(|&p| p >= 5));
        assert!(centroid_select(&spectra, 11, 0).is_err());
    }

    #[test]
    fn silhouette_prefers_true_cluster_count() {
        let mut points = Vec::new();
        for c in 0..3 {
            for i in 0..15 {
                let jitter = (i as f64 * 0.37).sin() * 0.05;
                points.push(vec![c as f64 * 5.0 + jitter, -(c as f64) * 3.0 - jitter, jitter]);
            }
        }
        let d = cluster_diversity_simplified(&points, 10, 1).unwrap();
        assert_eq!(d.chosen_k, 3);
        assert_eq!(d.coverage(&d.representatives), 1.0);
        assert!((d.coverage(&[0, 1]) - 1.0 / 3.0).abs() < 1e-12);
    }
}
