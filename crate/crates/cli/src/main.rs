//! `windgmm`: fit and evaluate joint PDFs of aggregated wind power output and
//! its forecast, centrally or over a simulated farm communication network.

use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use windgmm::consensus::{k_shell, select_key_nodes, Topology};
use windgmm::dmap::{estimate_aggregated_outputs, fit_dmap, fit_naive_single_node, DmapConfig};
use windgmm::eval::{
    admissible_long_links, conditional_empirical, curve, density_rmse, empirical_pdf,
    evaluate_conditional_fit, linspace, union_grid, write_bin_rmse, write_curve, write_model_rmse,
    Density1D, GRID_POINTS,
};
use windgmm::io::config::{test_seed, DataSource, ScenarioConfig};
use windgmm::io::data::{self, aggregate, observation_blocks};
use windgmm::io::synth::{bundled_scenario, BUNDLED_COORDINATES, BUNDLED_THRESHOLD_KM};
use windgmm::linalg::Vec2;
use windgmm::map::{
    default_hyperparams_with, fit_em, fit_map, init_params, FitReport, Hyperparams,
};
use windgmm::{Axis, GmmParams};

/// Training hours of the bundled scenario when no config is given.
const DEFAULT_BUNDLED_POINTS: usize = 720;

#[derive(Parser)]
#[command(name = "windgmm", version, about)]
struct Cli {
    /// Scenario file (TOML). Without one the bundled ten-farm scenario is used.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Replaces the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for every written artifact.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Centralized maximum-likelihood fit of the aggregated series.
    FitEm,
    /// Centralized MAP fit of the aggregated series.
    FitMap {
        /// Fit every farm's consensus estimate pooled together, the exact
        /// centralized counterpart of `fit-dmap`.
        #[arg(long)]
        pooled: bool,
    },
    /// Distributed MAP fit over the farm network with a listening control center.
    FitDmap,
    /// MAP fit on one farm's consensus estimate of the aggregated series alone.
    FitNaive {
        /// Farm id.
        #[arg(long, default_value_t = 1)]
        node: usize,
    },
    /// Marginal-PDF RMSE of fitted models against held-out data or a benchmark fit.
    EvalRmse {
        #[command(flatten)]
        models: ModelArgs,
        /// Score against this fit's marginal instead of an empirical PDF.
        #[arg(long, value_name = "FILE")]
        against: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = AxisArg::Actual)]
        axis: AxisArg,
    },
    /// Per-forecast-bin RMSE of conditional forecast-error densities.
    EvalConditional {
        #[command(flatten)]
        models: ModelArgs,
    },
    /// Build, inspect, decompose or cut the communication graph.
    Topology {
        /// Rebuild the links from the node coordinates with this range.
        #[arg(long, value_name = "KM")]
        threshold: Option<f64>,
        /// Remove a link, given as two farm ids; repeatable.
        #[arg(long = "cut-link", value_name = "A,B", value_parser = parse_link)]
        cut_links: Vec<(usize, usize)>,
        /// Write coreness and key-node selection.
        #[arg(long)]
        k_shell: bool,
    },
    /// Write the bundled scenario as CSV files with a matching config.
    Synth {
        /// Training hours; the config's bundled size by default.
        #[arg(long)]
        points: Option<usize>,
    },
    /// Density curves for plotting.
    Plotdata {
        #[command(flatten)]
        models: ModelArgs,
        /// Also write conditional error curves for every forecast bin.
        #[arg(long)]
        conditional: bool,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// Fit output (from any fit command) or bare parameter JSON; repeatable.
    #[arg(long = "params", value_name = "FILE", required = true)]
    params: Vec<PathBuf>,
    /// Directory of held-out farm CSVs. Defaults to the scenario's held-out
    /// data, or its training data when it has none.
    #[arg(long, value_name = "DIR")]
    reference: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Actual,
    Forecast,
}

impl From<AxisArg> for Axis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::Actual => Axis::Actual,
            AxisArg::Forecast => Axis::Forecast,
        }
    }
}

fn parse_link(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected A,B, got {s:?}"))?;
    let id = |t: &str| match t.trim().parse::<usize>() {
        Ok(0) | Err(_) => Err(format!("farm ids are positive integers, got {t:?}")),
        Ok(v) => Ok(v),
    };
    Ok((id(a)?, id(b)?))
}

/// A fit that stopped at its iteration cap; its outputs are still written.
#[derive(Debug)]
struct Unconverged(String);

impl fmt::Display for Unconverged {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} did not converge; results were written anyway",
            self.0
        )
    }
}

impl std::error::Error for Unconverged {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

/// The error chain on one line, skipping causes their parent already quotes.
fn describe(e: &anyhow::Error) -> String {
    let mut text = e.to_string();
    let mut last = text.clone();
    for cause in e.chain().skip(1) {
        let msg = cause.to_string();
        if !last.contains(&msg) {
            text = format!("{text}: {msg}");
        }
        last = msg;
    }
    text
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let numerical = e.chain().any(|c| {
        c.is::<Unconverged>()
            || c.downcast_ref::<windgmm::Error>()
                .is_some_and(windgmm::Error::is_numerical)
    });
    if numerical {
        2
    } else {
        1
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = scenario(cli)?;
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    match &cli.command {
        Command::FitEm => fit_central(&cfg, &cli.out, false),
        Command::FitMap { pooled: false } => fit_central(&cfg, &cli.out, true),
        Command::FitMap { pooled: true } => fit_pooled(&cfg, &cli.out),
        Command::FitDmap => fit_distributed(&cfg, &cli.out),
        Command::FitNaive { node } => fit_naive(&cfg, &cli.out, *node),
        Command::EvalRmse {
            models,
            against,
            axis,
        } => eval_rmse(&cfg, &cli.out, models, against.as_deref(), (*axis).into()),
        Command::EvalConditional { models } => eval_conditional(&cfg, &cli.out, models),
        Command::Topology {
            threshold,
            cut_links,
            k_shell,
        } => topology(&cfg, &cli.out, *threshold, cut_links, *k_shell),
        Command::Synth { points } => synth(&cfg, &cli.out, *points),
        Command::Plotdata {
            models,
            conditional,
        } => plotdata(&cfg, &cli.out, models, *conditional),
    }
}

fn scenario(cli: &Cli) -> Result<ScenarioConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            ScenarioConfig::load(path).with_context(|| format!("loading {}", path.display()))?
        }
        None => ScenarioConfig::bundled(DEFAULT_BUNDLED_POINTS),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn training(cfg: &ScenarioConfig) -> Result<Vec<data::WindSeries>> {
    let (series, dropped) = cfg.load_training()?;
    if dropped > 0 {
        eprintln!("note: {dropped} rows without a matching timestamp in every farm were dropped");
    }
    Ok(series)
}

fn priors(cfg: &ScenarioConfig, data: &[Vec2]) -> Result<(Hyperparams, GmmParams)> {
    let hyper = default_hyperparams_with(data, cfg.components, &cfg.hyper)?;
    let init = init_params(data, cfg.components, cfg.seed)?;
    Ok((hyper, init))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn finish(what: &str, report: &FitReport, path: &Path) -> Result<()> {
    println!(
        "{what}: {} components, {} iterations, log-objective {:.6}, wrote {}",
        report.params.n_components(),
        report.iterations,
        report.final_log_posterior(),
        path.display()
    );
    if report.converged {
        Ok(())
    } else {
        Err(Unconverged(what.to_string()).into())
    }
}

fn fit_central(cfg: &ScenarioConfig, out: &Path, map: bool) -> Result<()> {
    let agg = aggregate(&training(cfg)?);
    let (hyper, init) = priors(cfg, &agg)?;
    let (report, name) = if map {
        (fit_map(&agg, &hyper, &init, &cfg.fit)?, "fit_map")
    } else {
        (fit_em(&agg, &init, &cfg.fit)?, "fit_em")
    };
    let path = out.join(format!("{name}.json"));
    write_text(&path, &report.to_json())?;
    finish(name, &report, &path)
}

fn fit_pooled(cfg: &ScenarioConfig, out: &Path) -> Result<()> {
    let farms = observation_blocks(&training(cfg)?);
    let topo = cfg.load_topology()?.detach_virtual_node();
    let agg = estimate_aggregated_outputs(&farms, &topo, &cfg.consensus)?;
    let (hyper, init) = priors(cfg, &agg.per_node[0])?;
    let pooled: Vec<Vec2> = agg.per_node.iter().flatten().copied().collect();
    let report = fit_map(&pooled, &hyper, &init, &cfg.fit)?;
    let path = out.join("fit_map_pooled.json");
    write_text(&path, &report.to_json())?;
    finish("fit_map_pooled", &report, &path)
}

fn dmap_config(cfg: &ScenarioConfig) -> DmapConfig {
    DmapConfig {
        key_fraction: cfg.key_fraction,
        consensus: cfg.consensus,
        fit: cfg.fit,
    }
}

fn fit_distributed(cfg: &ScenarioConfig, out: &Path) -> Result<()> {
    let farms = observation_blocks(&training(cfg)?);
    let topo = cfg.load_topology()?.detach_virtual_node();
    let dcfg = dmap_config(cfg);
    // Every farm derives the same priors from its own aggregate estimate; farm 1's is used.
    let agg = estimate_aggregated_outputs(&farms, &topo, &dcfg.consensus)?;
    let (hyper, init) = priors(cfg, &agg.per_node[0])?;
    let report = fit_dmap(&farms, &topo, &hyper, &init, &dcfg)?;
    let path = out.join("fit_dmap.json");
    write_text(&path, &report.to_json())?;
    let keys: Vec<String> = report
        .key_nodes
        .iter()
        .map(|k| (k + 1).to_string())
        .collect();
    println!(
        "fit_dmap: {} farms, key nodes {}, {} outer iterations, {} messages ({} floats) vs {} uploads ({} floats) centrally, wrote {}",
        report.n_farms,
        keys.join(","),
        report.iterations,
        report.aggregation.messages + report.statistics.messages,
        report.aggregation.floats + report.statistics.floats,
        report.centralized_messages(),
        report.centralized_floats(),
        path.display()
    );
    if report.converged {
        Ok(())
    } else {
        Err(Unconverged("fit_dmap".into()).into())
    }
}

fn fit_naive(cfg: &ScenarioConfig, out: &Path, node: usize) -> Result<()> {
    let farms = observation_blocks(&training(cfg)?);
    let topo = cfg.load_topology()?.detach_virtual_node();
    if node == 0 || node > topo.n_real() {
        bail!("farm id {node} outside 1..={}", topo.n_real());
    }
    let agg = estimate_aggregated_outputs(&farms, &topo, &cfg.consensus)?;
    let own = &agg.per_node[node - 1];
    let (hyper, init) = priors(cfg, own)?;
    let report = fit_naive_single_node(own, &hyper, &init, &cfg.fit)?;
    let path = out.join(format!("fit_naive_{node:02}.json"));
    write_text(&path, &report.to_json())?;
    finish("fit_naive", &report, &path)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ParamsDoc {
    Distributed { nodes: Vec<NodeDoc> },
    Fit { params: GmmParams },
    Bare(GmmParams),
}

#[derive(Deserialize)]
struct NodeDoc {
    id: usize,
    decision_output: bool,
    params: GmmParams,
}

/// Labelled models in a params file; a distributed report yields every node
/// when `all_nodes` is set and only the control center otherwise.
fn load_models(path: &Path, all_nodes: bool) -> Result<Vec<(String, GmmParams)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let doc: ParamsDoc = serde_json::from_str(&text).with_context(|| {
        format!(
            "{} is neither a fit report nor a parameter set",
            path.display()
        )
    })?;
    let stem = path
        .file_stem()
        .map_or("model".into(), |s| s.to_string_lossy().into_owned());
    Ok(match doc {
        ParamsDoc::Distributed { nodes } => nodes
            .into_iter()
            .filter(|n| all_nodes || n.decision_output)
            .map(|n| {
                let tag = if n.decision_output {
                    "cc".to_string()
                } else {
                    format!("node{:02}", n.id)
                };
                (format!("{stem}_{tag}"), n.params)
            })
            .collect(),
        ParamsDoc::Fit { params } | ParamsDoc::Bare(params) => vec![(stem, params)],
    })
}

fn all_models(args: &ModelArgs, all_nodes: bool) -> Result<Vec<(String, GmmParams)>> {
    let mut models = Vec::new();
    for p in &args.params {
        models.extend(load_models(p, all_nodes)?);
    }
    Ok(models)
}

/// Aggregated `(AWO, FWO)` pairs the fits are scored against.
fn reference_pairs(cfg: &ScenarioConfig, dir: Option<&Path>) -> Result<Vec<Vec2>> {
    if let Some(dir) = dir {
        return Ok(aggregate(&data::load_csv(dir)?.series));
    }
    match cfg.load_test()? {
        Some(test) => Ok(aggregate(&test)),
        None => Ok(aggregate(&training(cfg)?)),
    }
}

fn eval_rmse(
    cfg: &ScenarioConfig,
    out: &Path,
    args: &ModelArgs,
    against: Option<&Path>,
    axis: Axis,
) -> Result<()> {
    let models = all_models(args, true)?;
    let reference: Box<dyn Density1D> = match against {
        Some(path) => {
            let mut bench = load_models(path, false)?;
            if bench.len() != 1 {
                bail!("{} must hold exactly one benchmark fit", path.display());
            }
            Box::new(bench.remove(0).1.marginal(axis))
        }
        None => {
            let pairs = reference_pairs(cfg, args.reference.as_deref())?;
            let values: Vec<f64> = pairs.iter().map(|p| p[axis.index()]).collect();
            Box::new(empirical_pdf(&values, cfg.eval.hist_bins)?)
        }
    };
    let rows: Vec<(String, f64)> = models
        .into_iter()
        .map(|(label, params)| {
            let r = density_rmse(&params.marginal(axis), reference.as_ref());
            (label, r)
        })
        .collect();
    for (label, r) in &rows {
        println!("{label}\t{r:.6e}");
    }
    let path = out.join("rmse.csv");
    write_model_rmse(create(&path)?, &rows)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn eval_conditional(cfg: &ScenarioConfig, out: &Path, args: &ModelArgs) -> Result<()> {
    let pairs = reference_pairs(cfg, args.reference.as_deref())?;
    let bins = conditional_empirical(&pairs, cfg.eval.forecast_bins, cfg.eval.hist_bins, None)?;
    let empty = bins.empty_bins();
    if !empty.is_empty() {
        let ids: Vec<String> = empty.iter().map(usize::to_string).collect();
        println!("skipping bins with too few samples: {}", ids.join(","));
    }
    for (label, params) in all_models(args, false)? {
        let scores = evaluate_conditional_fit(&params, &bins)?;
        let cells: Vec<String> = scores
            .iter()
            .map(|s| s.rmse.map_or("-".into(), |r| format!("{r:.4}")))
            .collect();
        println!("{label}\t{}", cells.join("\t"));
        write_bin_rmse(
            create(&out.join(format!("conditional_{label}.csv")))?,
            &scores,
        )?;
    }
    Ok(())
}

fn plotdata(cfg: &ScenarioConfig, out: &Path, args: &ModelArgs, conditional: bool) -> Result<()> {
    let pairs = reference_pairs(cfg, args.reference.as_deref())?;
    let models = all_models(args, false)?;
    for axis in [Axis::Actual, Axis::Forecast] {
        let name = match axis {
            Axis::Actual => "actual",
            Axis::Forecast => "forecast",
        };
        let values: Vec<f64> = pairs.iter().map(|p| p[axis.index()]).collect();
        let emp = empirical_pdf(&values, cfg.eval.hist_bins)?;
        write_curve(
            create(&out.join(format!("empirical_{name}.csv")))?,
            &emp.centers(),
            emp.densities(),
        )?;
        for (label, params) in &models {
            let marginal = params.marginal(axis);
            let grid = union_grid(&marginal, &emp, GRID_POINTS);
            write_curve(
                create(&out.join(format!("{label}_{name}.csv")))?,
                &grid,
                &curve(&marginal, &grid),
            )?;
        }
    }
    if conditional {
        let bins = conditional_empirical(&pairs, cfg.eval.forecast_bins, cfg.eval.hist_bins, None)?;
        for b in &bins.bins {
            let Some(pdf) = &b.pdf else { continue };
            write_curve(
                create(&out.join(format!("empirical_bin{}.csv", b.index)))?,
                &pdf.centers(),
                pdf.densities(),
            )?;
            let edges = pdf.edges();
            let grid = linspace(edges[0], edges[edges.len() - 1], GRID_POINTS);
            for (label, params) in &models {
                let cond = params.condition_on_forecast(b.center)?;
                let density: Vec<f64> = grid.iter().map(|&e| cond.pdf(e)).collect();
                write_curve(
                    create(&out.join(format!("{label}_bin{}.csv", b.index)))?,
                    &grid,
                    &density,
                )?;
            }
        }
    }
    println!("wrote density curves to {}", out.display());
    Ok(())
}

fn topology(
    cfg: &ScenarioConfig,
    out: &Path,
    threshold: Option<f64>,
    cuts: &[(usize, usize)],
    with_k_shell: bool,
) -> Result<()> {
    let mut topo = cfg.load_topology()?.detach_virtual_node();
    if let Some(km) = threshold {
        topo = Topology::build(topo.coordinates().to_vec(), km)?;
    }
    if !cuts.is_empty() {
        let zero_based: Vec<(usize, usize)> = cuts.iter().map(|&(a, b)| (a - 1, b - 1)).collect();
        topo = topo.without_edges(&zero_based)?;
    }
    let m = topo.n_real();
    let edges = topo.edges();
    println!(
        "{m} farms, {} links, range {} km",
        edges.len(),
        topo.threshold_km()
    );
    for v in 0..m {
        let neighbors: Vec<String> = topo
            .neighbors(v)
            .iter()
            .map(|n| (n + 1).to_string())
            .collect();
        println!(
            "  farm {:>2}: degree {}, linked to {}",
            v + 1,
            topo.degree(v),
            neighbors.join(",")
        );
    }
    let long: Vec<String> = admissible_long_links(&topo, 3.5)
        .iter()
        .map(|&(a, b)| format!("{}-{} ({:.2} km)", a + 1, b + 1, topo.edge_length(a, b)))
        .collect();
    println!(
        "links over 3.5 km that can be cut alone: {}",
        if long.is_empty() {
            "none".into()
        } else {
            long.join(", ")
        }
    );
    if with_k_shell {
        let core = k_shell(&topo);
        let keys = select_key_nodes(&topo, &core, cfg.key_fraction)?;
        let mut table = String::from("node,coreness,degree,key\n");
        for (v, c) in core.iter().enumerate() {
            table += &format!("{},{},{},{}\n", v + 1, c, topo.degree(v), keys.contains(&v));
        }
        write_text(&out.join("k_shell.csv"), &table)?;
        let ids: Vec<String> = keys.iter().map(|k| (k + 1).to_string()).collect();
        println!(
            "key nodes at fraction {}: {}",
            cfg.key_fraction,
            ids.join(",")
        );
    }
    let path = out.join("topology.toml");
    write_text(&path, &topo.to_toml())?;
    println!("wrote {}", path.display());
    Ok(())
}

fn synth(cfg: &ScenarioConfig, out: &Path, points: Option<usize>) -> Result<()> {
    let n = match (points, &cfg.data) {
        (Some(n), _) => n,
        (None, DataSource::Bundled { n_points }) => *n_points,
        (None, DataSource::Csv { .. }) => DEFAULT_BUNDLED_POINTS,
    };
    if n == 0 {
        bail!("--points must be positive");
    }
    let scenario = bundled_scenario();
    let train = scenario.generate(n, cfg.seed)?;
    let test = scenario.generate(cfg.eval.test_points, test_seed(cfg.seed))?;
    data::write_csv(&out.join("data"), &train.series)?;
    data::write_csv(&out.join("test"), &test.series)?;
    write_text(
        &out.join("aggregated_truth.json"),
        &train.aggregated_truth.to_json(),
    )?;
    let topo = Topology::build(BUNDLED_COORDINATES.to_vec(), BUNDLED_THRESHOLD_KM)?;
    write_text(&out.join("topology.toml"), &topo.to_toml())?;
    let mut written = ScenarioConfig::bundled(n);
    written.topology = Some("topology.toml".into());
    written.data = DataSource::Csv {
        dir: "data".into(),
        test_dir: Some("test".into()),
    };
    written.seed = cfg.seed;
    write_text(&out.join("scenario.toml"), &written.to_toml())?;
    println!(
        "wrote {n} training and {} held-out hours for {} farms ({} values clamped at zero) to {}",
        cfg.eval.test_points,
        train.series.len(),
        train.clamped + test.clamped,
        out.display()
    );
    Ok(())
}
