use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use nlcov_core::axioms::{self, AxiomConfig, Witness, AXIOM_CSV_HEADER};
use nlcov_core::criteria::{self, Criterion, CriterionParams, NlcIncremental};
use nlcov_core::experiments::{self, DiversityConfig, LayerSelector};
use nlcov_core::fixtures;
use nlcov_core::toynet::{make_dataset, DatasetSpec, NetSpec, Network, SyntheticDataset};
use nlcov_core::trace::{profile_training, ActivationTrace, SuiteView};

use crate::{
    AxiomsArgs, CliError, CliResult, Common, ComputeArgs, CriterionArgs, DiversityArgs, Format, GenTraceArgs,
    LayerReportArgs, MakeSuitesArgs, ShuffleArgs,
};

/// Output directory of a run; `run.json` is written on creation.
pub struct RunInfo {
    out: PathBuf,
}

impl RunInfo {
    pub fn new<T: Serialize + HasCommon>(command: &str, args: &T, config_file: Option<&Path>) -> CliResult<Self> {
        let out = args.common().out.clone();
        fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
        let run = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "config_file": config_file,
            "config": args,
        });
        let info = Self { out };
        info.write_json("run.json", &run)?;
        Ok(info)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, contents: &str) -> CliResult<()> {
        let path = self.path(name);
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))
    }

    fn write_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::new("json", e.to_string()))?;
        text.push('\n');
        self.write(name, &text)
    }
}

pub trait HasCommon {
    fn common(&self) -> &Common;
}

macro_rules! has_common {
    ($($t:ty),*) => {$(
        impl HasCommon for $t {
            fn common(&self) -> &Common {
                &self.common
            }
        }
    )*};
}

has_common!(ComputeArgs, AxiomsArgs, ShuffleArgs, LayerReportArgs, DiversityArgs, MakeSuitesArgs, GenTraceArgs);

fn require<'a, T>(value: &'a Option<T>, flag: &str) -> CliResult<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| CliError::new("usage", format!("missing required option --{flag}")))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::new("json", format!("{}: {e}", path.display())))
}

fn print_json(value: &serde_json::Value) {
    println!("{value}");
}

fn load_trace(args: &CriterionArgs) -> CliResult<ActivationTrace> {
    Ok(ActivationTrace::load(require(&args.trace, "trace")?)?)
}

fn build_criterion(args: &CriterionArgs) -> CliResult<Box<dyn Criterion>> {
    let name = require(&args.criterion, "criterion")?;
    let params = CriterionParams::from(&args.params);
    if let Some(reference) = &args.warm_start {
        if name != "nlc-inc" {
            return Err(CliError::new("parameter", "--warm-start only applies to nlc-inc"));
        }
        let reference = ActivationTrace::load(reference)?;
        return Ok(Box::new(NlcIncremental::new(params.batch_size)?.with_warm_start(&reference)?));
    }
    let profile = match &args.profile {
        Some(path) if criteria::requires_profile(name) => Some(profile_training(&ActivationTrace::load(path)?)?),
        _ => None,
    };
    Ok(criteria::build(name, &params, profile)?)
}

pub fn compute(args: &ComputeArgs, run: &RunInfo) -> CliResult<()> {
    let trace = load_trace(&args.criterion)?;
    let criterion = build_criterion(&args.criterion)?;
    let view = match &args.view {
        Some(path) => SuiteView::new(read_json(path)?),
        None => trace.full_view(),
    };
    let result = criterion.evaluate(&trace, &view)?;
    if args.common.wants(Format::Json) {
        run.write_json("result.json", &result)?;
    }
    if args.common.wants(Format::Csv) {
        let mut csv = String::from("criterion,layer,value,degenerate\n");
        for l in &result.per_layer {
            let _ = writeln!(csv, "{},{},{},{}", result.criterion, l.layer, l.value, l.degenerate);
        }
        run.write("result.csv", &csv)?;
    }
    print_json(&json!({ "criterion": result.criterion, "value": result.value }));
    Ok(())
}

pub fn axioms(args: &AxiomsArgs, run: &RunInfo) -> CliResult<()> {
    let trace = load_trace(&args.criterion)?;
    let criterion = build_criterion(&args.criterion)?;
    if let Some(path) = &args.replay {
        let witness: Witness = read_json(path)?;
        let reproduced = witness.replay(criterion.as_ref(), &trace)?;
        let smaller = criterion.evaluate(&trace, &witness.smaller)?.value;
        let larger = criterion.evaluate(&trace, &witness.larger)?.value;
        let report = json!({
            "criterion": criterion.name(),
            "reproduced": reproduced,
            "smaller_value": smaller,
            "larger_value": larger,
        });
        if args.common.wants(Format::Json) {
            run.write_json("replay.json", &report)?;
        }
        print_json(&report);
        return Ok(());
    }

    let config = AxiomConfig {
        trials: args.trials,
        chain_len: args.chain_len,
        seed: args.common.seed,
    };
    let report = axioms::run_axioms(criterion.as_ref(), &trace, &config)?;
    if args.common.wants(Format::Json) {
        run.write_json("axioms.json", &report)?;
    }
    if args.common.wants(Format::Csv) {
        run.write("axioms.csv", &format!("{AXIOM_CSV_HEADER}\n{}\n", report.csv_row()))?;
    }
    if let Some(witness) = &report.witness {
        run.write_json("witness.json", witness)?;
    }
    print_json(&json!({
        "criterion": report.criterion,
        "monotone_violations": report.monotone_violations,
        "max_permutation_delta": report.max_permutation_delta,
        "duplicate_violations": report.duplicate_violations,
        "witness": report.witness.as_ref().map(|_| run.path("witness.json")),
    }));
    Ok(())
}

pub fn shuffle_study(args: &ShuffleArgs, run: &RunInfo) -> CliResult<()> {
    let trace = load_trace(&args.criterion)?;
    let criterion = build_criterion(&args.criterion)?;
    let study = axioms::shuffle_study(criterion.as_ref(), &trace, args.runs, args.common.seed)?;
    if args.common.wants(Format::Json) {
        run.write_json("stability.json", &study)?;
    }
    if args.common.wants(Format::Csv) {
        run.write("stability.csv", &study.to_csv())?;
    }
    print_json(&json!({
        "criterion": study.criterion,
        "control_std": study.control.std,
        "shuffled_std": study.shuffled.std,
        "shuffled_max_pct_drop": study.shuffled.max_pct_drop,
    }));
    Ok(())
}

pub fn layer_report(args: &LayerReportArgs, run: &RunInfo) -> CliResult<()> {
    let trace = load_trace(&args.criterion)?;
    let criterion = build_criterion(&args.criterion)?;
    let report = experiments::layer_report_for(criterion.as_ref(), &trace, &trace.full_view())?;
    if args.common.wants(Format::Json) {
        run.write_json("layer_report.json", &report)?;
    }
    if args.common.wants(Format::Csv) {
        run.write("layer_report.csv", &report.to_csv())?;
    }
    if args.common.wants(Format::Svg) {
        run.write("layer_report.svg", &report.to_svg())?;
    }
    print_json(&json!({
        "criterion": report.criterion,
        "total": report.total,
        "degenerate": report.degenerate,
        "shares": report.layers.iter().map(|l| json!([l.layer, l.share_pct])).collect::<Vec<_>>(),
    }));
    Ok(())
}

fn load_net_and_data(net: &Option<PathBuf>, dataset: &Option<PathBuf>) -> CliResult<(Network, SyntheticDataset)> {
    let spec: NetSpec = read_json(require(net, "net")?)?;
    let data_spec: DatasetSpec = read_json(require(dataset, "dataset")?)?;
    Ok((Network::from_spec(&spec)?, make_dataset(&data_spec)?))
}

pub fn diversity(args: &DiversityArgs, run: &RunInfo) -> CliResult<()> {
    let layer: LayerSelector = args.layer.parse()?;
    let config = DiversityConfig {
        k: args.k,
        bins: args.bins,
        layer: layer.clone(),
        noise_low: args.noise_low,
        noise_high: args.noise_high,
        per_input_average: args.per_input_average,
        seed: args.common.seed,
    };
    let (report, trace) = match &args.trace {
        Some(path) => {
            if args.net.is_some() || args.dataset.is_some() {
                return Err(CliError::new("usage", "use either --trace or --net with --dataset"));
            }
            let trace = ActivationTrace::load(path)?;
            (experiments::subset_diversity(&trace, &config)?, trace)
        }
        None => {
            let (net, data) = load_net_and_data(&args.net, &args.dataset)?;
            let report = experiments::diversity_study(&net, &data, &config)?;
            (report, net.forward_trace(&data, None)?)
        }
    };
    if args.common.wants(Format::Json) {
        run.write_json("diversity.json", &report)?;
    }
    if args.common.wants(Format::Csv) {
        run.write("diversity.csv", &report.to_csv())?;
    }
    let mut summary = json!({
        "layer": report.layer,
        "js": report.rows.iter().map(|r| json!([r.strategy, r.js])).collect::<Vec<_>>(),
    });

    if args.simplified {
        let layers = layer.select(&trace)?;
        let points: Vec<Vec<f64>> = (0..trace.num_inputs())
            .map(|i| layers.iter().flat_map(|l| l.row(i).iter().copied()).collect())
            .collect();
        let clusters = experiments::cluster_diversity_simplified(&points, args.max_k, args.common.seed)?;
        if args.common.wants(Format::Json) {
            run.write_json("cluster_diversity.json", &clusters)?;
        }
        if args.common.wants(Format::Csv) {
            run.write(
                "cluster_diversity.csv",
                &format!(
                    "method,chosen_k,silhouette,representatives\n{},{},{},{}\n",
                    clusters.method,
                    clusters.chosen_k,
                    clusters.silhouette,
                    clusters.representatives.len()
                ),
            )?;
        }
        summary["simplified"] = json!({
            "method": clusters.method,
            "chosen_k": clusters.chosen_k,
            "silhouette": clusters.silhouette,
        });
    }
    print_json(&summary);
    Ok(())
}

fn inputs_csv(data: &SyntheticDataset, sources: &[usize]) -> String {
    let mut csv = String::from("source");
    for f in 0..data.dim {
        let _ = write!(csv, ",f{f}");
    }
    csv.push('\n');
    for (i, src) in sources.iter().enumerate() {
        let _ = write!(csv, "{src}");
        for x in data.row(i) {
            let _ = write!(csv, ",{x}");
        }
        csv.push('\n');
    }
    csv
}

pub fn make_suites(args: &MakeSuitesArgs, run: &RunInfo) -> CliResult<()> {
    let data_spec: DatasetSpec = read_json(require(&args.dataset, "dataset")?)?;
    let data = make_dataset(&data_spec)?;
    let suites = experiments::make_noise_suites(&data, args.base_count, args.noise_low, args.noise_high, args.common.seed)?;
    if args.common.wants(Format::Json) {
        run.write_json(
            "suites.json",
            &json!({
                "dataset_size": data.len(),
                "bases": suites.bases,
                "x1_size": suites.x1.len(),
                "x10_size": suites.x10.len(),
                "x1_sources": suites.x1_sources,
                "x10_sources": suites.x10_sources,
            }),
        )?;
    }
    if args.common.wants(Format::Csv) {
        run.write(
            "suites.csv",
            &format!(
                "suite,inputs,bases\noriginal,{},{}\nx1,{},{}\nx10,{},{}\n",
                data.len(),
                data.len(),
                suites.x1.len(),
                suites.bases.len(),
                suites.x10.len(),
                suites.bases.len()
            ),
        )?;
        run.write("x1_inputs.csv", &inputs_csv(&suites.x1, &suites.x1_sources))?;
        run.write("x10_inputs.csv", &inputs_csv(&suites.x10, &suites.x10_sources))?;
    }
    if let Some(net) = &args.net {
        let net = Network::from_spec(&read_json::<NetSpec>(net)?)?;
        net.forward_trace(&suites.x1, None)?.save(run.path("x1"))?;
        net.forward_trace(&suites.x10, None)?.save(run.path("x10"))?;
    }
    print_json(&json!({
        "dataset_size": data.len(),
        "x1_size": suites.x1.len(),
        "x10_size": suites.x10.len(),
    }));
    Ok(())
}

pub fn gen_trace(args: &GenTraceArgs, run: &RunInfo) -> CliResult<()> {
    let trace = match &args.fixture {
        Some(name) => {
            if args.net.is_some() || args.dataset.is_some() || args.layers.is_some() {
                return Err(CliError::new("usage", "--fixture cannot be combined with --net, --dataset or --layers"));
            }
            fixtures::by_name(name, args.common.seed)?
        }
        None => {
            let (net, data) = load_net_and_data(&args.net, &args.dataset)?;
            net.forward_trace(&data, args.layers.as_deref())?
        }
    };
    let dir = run.path("trace");
    trace.save(&dir)?;
    print_json(&json!({
        "trace": dir,
        "num_inputs": trace.num_inputs(),
        "layers": trace.layers().iter().map(|l| json!([l.name(), l.width()])).collect::<Vec<_>>(),
    }));
    Ok(())
}
