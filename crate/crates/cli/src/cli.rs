//! Subcommand definitions and dispatch.
//!
//! Every command validates its parameters and reads its inputs before
//! writing anything. All randomness is derived from `--seed`, one stream per
//! command.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use dpsan::analytics::{compare_fits, fit_poisson};
use dpsan::ctn::{build_ctn, sanitize_gi, sanitize_rr, simulate_ctn, ClusterSpec, ContactGraph};
use dpsan::doppelganger::{generate_doppelganger, DoppelgangerParams};
use dpsan::heatmap::{render_heatmap, Bounds};
use dpsan::histogram::{build_tree, sanitize_tree, HistogramTree, PostProcess};
use dpsan::stats::GraphStats;
use dpsan::{GeoPoint, PrivacyBudget, RandomSource};

use crate::error::{CliError, CliResult};
use crate::experiment::{self, SweepConfig, Table1Config, DEFAULT_CONTACT_DISTANCE};
use crate::io;

const STREAM_COUNTS: u64 = 1;
const STREAM_DOPPELGANGER: u64 = 2;
const STREAM_CTN: u64 = 3;

#[derive(Debug, Parser)]
#[command(name = "dpsan", version, about = "Differentially private release of case counts, locations and contact networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Release subgroup counts through the hierarchical histogram.
    SanitizeCounts(SanitizeCountsArgs),
    /// Release K perturbed copies of every input location.
    Doppelganger(DoppelgangerArgs),
    /// Render a KDE hot-spot raster from locations.
    Heatmap(HeatmapArgs),
    /// Simulate clustered locations for a synthetic contact network.
    SimulateCtn(SimulateCtnArgs),
    /// Release a sanitized contact network as an edge list.
    Ctn(CtnArgs),
    /// Compute the structural statistics of a contact network.
    CtnStats(CtnStatsArgs),
    /// Fit Poisson models to subgroup counts, optionally against a sanitized table.
    Fit(FitArgs),
    /// Run one of the bundled experiment sweeps.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct SanitizeCountsArgs {
    /// Tree spec JSON: {"attributes":[{"name","levels"}],"allocation":[...]}.
    #[arg(long)]
    pub spec: PathBuf,
    /// Leaf counts CSV: attribute columns plus `count`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Number of independent releases; extra ones go to `<output>.rep<i>.csv`.
    #[arg(long, default_value_t = 1)]
    pub replicates: usize,
    /// Add the true counts as a column.
    #[arg(long)]
    pub include_truth: bool,
    /// Round leaves half away from zero and clamp at zero.
    #[arg(long)]
    pub round: bool,
}

#[derive(Debug, Args)]
pub struct DoppelgangerArgs {
    /// Locations CSV (id, x, y).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub k: usize,
    /// Per-unit-distance budget for each location's whole set.
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1.0)]
    pub r: f64,
    #[arg(long)]
    pub r_prime: Option<f64>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Raster CSV; the metadata sidecar goes to `<output>.json`.
    #[arg(long)]
    pub output: PathBuf,
    /// Kernel bandwidth. Defaults to half of `--r`.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long, default_value_t = 10.0)]
    pub r: f64,
    #[arg(long, default_value_t = 100)]
    pub nx: usize,
    #[arg(long, default_value_t = 100)]
    pub ny: usize,
    /// xmin,xmax,ymin,ymax. Defaults to the data extent plus 6 bandwidths.
    #[arg(long, value_delimiter = ',', num_args = 4)]
    pub bounds: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct SimulateCtnArgs {
    #[arg(long, default_value_t = experiment::FIXTURE_NODES)]
    pub nodes: usize,
    #[arg(long, default_value_t = DEFAULT_CONTACT_DISTANCE)]
    pub contact_distance: f64,
    #[arg(long, default_value_t = experiment::FIXTURE_SEED)]
    pub seed: u64,
    /// Locations CSV (id, x, y).
    #[arg(long)]
    pub output: PathBuf,
    /// Optional edge list of the simulated network.
    #[arg(long)]
    pub edges_output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mechanism {
    Gi,
    Rr,
}

impl Mechanism {
    fn name(self) -> &'static str {
        match self {
            Mechanism::Gi => "gi",
            Mechanism::Rr => "rr",
        }
    }
}

#[derive(Debug, Args)]
pub struct CtnArgs {
    /// Locations CSV (id, x, y).
    #[arg(long)]
    pub input: PathBuf,
    /// Sanitized edge list CSV (i, j).
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum)]
    pub mechanism: Mechanism,
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long, default_value_t = DEFAULT_CONTACT_DISTANCE)]
    pub contact_distance: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CtnStatsArgs {
    /// Edge list CSV (i, j).
    #[arg(long, conflicts_with = "locations")]
    pub input: Option<PathBuf>,
    /// Build the network from a locations CSV instead.
    #[arg(long)]
    pub locations: Option<PathBuf>,
    /// Node count for an edge list; defaults to the largest index + 1.
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_CONTACT_DISTANCE)]
    pub contact_distance: f64,
    #[arg(long)]
    pub output: PathBuf,
    /// Recorded in the metadata block only.
    #[arg(long, value_enum)]
    pub mechanism: Option<Mechanism>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Subgroup CSV: factor columns, `count`, `population`.
    #[arg(long)]
    pub input: PathBuf,
    /// Sanitized table with the same layout; switches to a comparison report.
    #[arg(long)]
    pub sanitized: Option<PathBuf>,
    /// Interaction degrees to fit.
    #[arg(long = "degree", default_values_t = [1usize, 2, 3])]
    pub degrees: Vec<usize>,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Which {
    Fig4,
    Fig5,
    Table1,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long, value_enum)]
    pub which: Which,
    /// Defaults: 100000 for the sweeps, 100 for table1.
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 10.0)]
    pub r: f64,
    /// Locations CSV for table1; defaults to the bundled network.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_CONTACT_DISTANCE)]
    pub contact_distance: f64,
    /// Long-format CSV; checks go to `<output>.json`.
    #[arg(long)]
    pub output: PathBuf,
}

fn require(cond: bool, msg: impl Into<String>) -> CliResult<()> {
    if cond {
        Ok(())
    } else {
        Err(CliError::Validation(msg.into()))
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::SanitizeCounts(a) => sanitize_counts(a),
        Command::Doppelganger(a) => doppelganger(a),
        Command::Heatmap(a) => heatmap(a),
        Command::SimulateCtn(a) => simulate(a),
        Command::Ctn(a) => ctn(a),
        Command::CtnStats(a) => ctn_stats(a),
        Command::Fit(a) => fit(a),
        Command::Experiment(a) => run_experiment(a),
    }
}

fn tree_csv(tree: &HistogramTree, include_truth: bool) -> String {
    let mut s = String::from(if include_truth { "node_path,layer,true_count,h\n" } else { "node_path,layer,h\n" });
    let h = tree.h().expect("released tree");
    for (id, node) in tree.nodes().iter().enumerate() {
        if include_truth {
            s.push_str(&format!("{},{},{},{}\n", tree.node_label(id), node.layer, node.true_count, h[id]));
        } else {
            s.push_str(&format!("{},{},{}\n", tree.node_label(id), node.layer, h[id]));
        }
    }
    s
}

fn sanitize_counts(a: SanitizeCountsArgs) -> CliResult<()> {
    let budget = PrivacyBudget::per_dataset(a.epsilon)?;
    require(a.replicates >= 1, "--replicates must be >= 1")?;
    let spec = io::read_tree_spec(&a.spec)?;
    let leaves = io::read_leaf_counts(&a.input, &spec)?;
    let tree = build_tree(&leaves, &spec)?;
    let allocation = spec.allocation_or_uniform();
    let mode = if a.round { PostProcess::RoundedNonnegative } else { PostProcess::Raw };
    let source = RandomSource::new(a.seed, STREAM_COUNTS);
    let mut outputs = Vec::with_capacity(a.replicates);
    for rep in 0..a.replicates {
        let mut rng = source.derive(rep as u64).rng();
        let released = sanitize_tree(&tree, budget, &allocation, &mut rng)?.postprocess_counts(mode)?;
        let path = if rep == 0 { a.output.clone() } else { io::sidecar(&a.output, &format!(".rep{rep}.csv")) };
        outputs.push((path, tree_csv(&released, a.include_truth)));
    }
    for (path, body) in outputs {
        io::write_atomic(&path, body.as_bytes())?;
    }
    Ok(())
}

fn doppelganger(a: DoppelgangerArgs) -> CliResult<()> {
    let params = DoppelgangerParams::new(a.k, a.r, a.r_prime.unwrap_or(a.r), a.epsilon)?;
    let locations = io::read_locations(&a.input)?;
    let source = RandomSource::new(a.seed, STREAM_DOPPELGANGER);
    let mut body = String::from("origin-id,replicate-index,x*,y*\n");
    for (n, (id, p)) in locations.iter().enumerate() {
        let mut rng = source.derive(n as u64).rng();
        let set = generate_doppelganger(id.clone(), *p, &params, &mut rng)?;
        for (i, q) in set.points.iter().enumerate() {
            body.push_str(&format!("{},{},{},{}\n", set.origin_id, i, q.x, q.y));
        }
    }
    io::write_atomic(&a.output, body.as_bytes())
}

fn heatmap(a: HeatmapArgs) -> CliResult<()> {
    let bandwidth = a.bandwidth.unwrap_or(0.5 * a.r);
    require(bandwidth.is_finite() && bandwidth > 0.0, "--bandwidth must be positive")?;
    require(a.nx > 0 && a.ny > 0, "--nx and --ny must be positive")?;
    let points: Vec<GeoPoint> = io::read_locations(&a.input)?.into_iter().map(|(_, p)| p).collect();
    let bounds = match &a.bounds {
        Some(b) => Bounds::new(b[0], b[1], b[2], b[3])?,
        None => Bounds::covering(&points, 6.0 * bandwidth)?,
    };
    let grid = render_heatmap(&points, bandwidth, bounds, (a.nx, a.ny))?;
    let mut body = String::from("iy,ix,x,y,value\n");
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let c = grid.cell_center(ix, iy);
            body.push_str(&format!("{iy},{ix},{},{},{}\n", c.x, c.y, grid.value(ix, iy)));
        }
    }
    let meta = json!({
        "bounds": grid.bounds,
        "nx": grid.nx,
        "ny": grid.ny,
        "bandwidth": grid.bandwidth,
        "kernel": "gaussian",
        "points": points.len(),
        "total_mass": grid.total_mass(),
        "layout": "row-major, iy ascending from ymin",
    });
    let meta = serde_json::to_string_pretty(&meta).expect("serializable");
    io::write_atomic(&a.output, body.as_bytes())?;
    io::write_atomic(&io::sidecar(&a.output, ".json"), meta.as_bytes())
}

fn simulate(a: SimulateCtnArgs) -> CliResult<()> {
    require(a.nodes >= 2, "--nodes must be >= 2")?;
    let mut rng = RandomSource::new(a.seed, 0).rng();
    let (locations, g) = simulate_ctn(a.nodes, &ClusterSpec::default(), a.contact_distance, &mut rng)?;
    let rows: Vec<(String, GeoPoint)> =
        locations.into_iter().enumerate().map(|(i, p)| (i.to_string(), p)).collect();
    io::write_atomic(&a.output, io::locations_csv(&rows).as_bytes())?;
    if let Some(path) = &a.edges_output {
        io::write_atomic(path, io::edges_csv(&g.edges()).as_bytes())?;
    }
    Ok(())
}

fn ctn(a: CtnArgs) -> CliResult<()> {
    require(
        a.contact_distance.is_finite() && a.contact_distance > 0.0,
        "--contact-distance must be positive",
    )?;
    let budget = match a.mechanism {
        Mechanism::Gi => PrivacyBudget::per_node(a.epsilon)?,
        Mechanism::Rr => PrivacyBudget::per_edge_pair(a.epsilon)?,
    };
    let locations: Vec<GeoPoint> = io::read_locations(&a.input)?.into_iter().map(|(_, p)| p).collect();
    let mut rng = RandomSource::new(a.seed, STREAM_CTN).rng();
    let g = match a.mechanism {
        Mechanism::Gi => sanitize_gi(&locations, budget, a.contact_distance, &mut rng)?.1,
        Mechanism::Rr => sanitize_rr(&build_ctn(&locations, a.contact_distance)?, budget, &mut rng)?,
    };
    io::write_atomic(&a.output, io::edges_csv(&g.edges()).as_bytes())
}

fn ctn_stats(a: CtnStatsArgs) -> CliResult<()> {
    let g = match (&a.input, &a.locations) {
        (Some(path), None) => {
            let edges = io::read_edges(path)?;
            let inferred = edges.iter().map(|&(i, j)| i.max(j) + 1).max().unwrap_or(0);
            let n = a.nodes.unwrap_or(inferred);
            require(n >= inferred, format!("--nodes {n} is smaller than the largest edge index"))?;
            ContactGraph::from_edges(n, &edges)?
        }
        (None, Some(path)) => {
            let pts: Vec<GeoPoint> = io::read_locations(path)?.into_iter().map(|(_, p)| p).collect();
            build_ctn(&pts, a.contact_distance)?
        }
        _ => return Err(CliError::Validation("give exactly one of --input or --locations".into())),
    };
    let stats = GraphStats::compute(&g);
    let doc = json!({
        "metadata": {
            "mechanism": a.mechanism.map(Mechanism::name),
            "epsilon": a.epsilon,
            "seed": a.seed,
            "betweenness": "unnormalized sum over unordered pairs",
            "closeness": "reciprocal distance sum over reachable nodes, 0 if isolated",
        },
        "stats": stats,
    });
    let body = serde_json::to_string_pretty(&doc).expect("serializable");
    io::write_atomic(&a.output, body.as_bytes())
}

fn fit(a: FitArgs) -> CliResult<()> {
    let original = io::read_subgroups(&a.input)?;
    for &d in &a.degrees {
        require(
            d <= original.factors.len(),
            format!("--degree {d} exceeds the {} factors", original.factors.len()),
        )?;
    }
    let doc = match &a.sanitized {
        Some(path) => {
            let sanitized = io::read_subgroups(path)?;
            serde_json::to_value(compare_fits(&original, &sanitized, &a.degrees)?)
        }
        None => {
            let fits = a.degrees.iter().map(|&d| fit_poisson(&original, d)).collect::<Result<Vec<_>, _>>()?;
            serde_json::to_value(json!({ "fits": fits }))
        }
    }
    .expect("serializable");
    let body = serde_json::to_string_pretty(&doc).expect("serializable");
    io::write_atomic(&a.output, body.as_bytes())
}

fn run_experiment(a: ExperimentArgs) -> CliResult<()> {
    require(a.r.is_finite() && a.r > 0.0, "--r must be positive")?;
    let (csv, checks) = match a.which {
        Which::Fig4 | Which::Fig5 => {
            let reps = a.reps.unwrap_or(100_000);
            require(reps >= 1, "--reps must be >= 1")?;
            let mut cfg = if a.which == Which::Fig4 {
                SweepConfig::fig4(reps, a.seed)
            } else {
                SweepConfig::fig5(reps, a.seed)
            };
            cfg.r = a.r;
            let report =
                if a.which == Which::Fig4 { experiment::run_fig4(&cfg)? } else { experiment::run_fig5(&cfg)? };
            (report.to_csv(), report.checks)
        }
        Which::Table1 => {
            let reps = a.reps.unwrap_or(100);
            require(reps >= 1, "--reps must be >= 1")?;
            let mut cfg = Table1Config::with_fixture(reps, a.seed);
            cfg.contact_distance = a.contact_distance;
            if let Some(path) = &a.input {
                cfg.locations = io::read_locations(path)?.into_iter().map(|(_, p)| p).collect();
            }
            let report = experiment::run_table1(&cfg)?;
            (report.to_csv(), report.checks)
        }
    };
    let body = serde_json::to_string_pretty(&json!({ "checks": checks })).expect("serializable");
    io::write_atomic(&a.output, csv.as_bytes())?;
    io::write_atomic(&io::sidecar(&a.output, ".json"), body.as_bytes())
}
