//! Experiment harness: the doppelganger effectiveness / re-identification
//! sweeps and the contact-network sanitization table, each with the checks
//! that decide whether a run reproduces the expected behaviour.

use serde::{Deserialize, Serialize};

use dpsan::ctn::{
    expected_rr_edges, flip_probability, sanitize_gi, sanitize_rr, simulate_ctn, ClusterSpec,
    ContactGraph,
};
use dpsan::doppelganger::{
    closed_form_effectiveness, evaluate, within_radius_probability, DoppelgangerParams,
};
use dpsan::stats::{count_edges, count_triangles};
use dpsan::{GeoPoint, PrivacyBudget, RandomSource};

use crate::error::CliResult;

const STREAM_FIG4: u64 = 40;
const STREAM_FIG5: u64 = 50;
const STREAM_TABLE1: u64 = 60;

/// Seed of the bundled 100-person network (39 contacts, 10 triangles at a
/// contact distance of 6).
pub const FIXTURE_SEED: u64 = 303;
pub const FIXTURE_NODES: usize = 100;
pub const DEFAULT_CONTACT_DISTANCE: f64 = 6.0;

/// Reference edge-count standard deviations of the RR release over 100
/// repeats at ε = 0.5, 2, 3, 5, used to size the tolerance of the RR check.
pub const RR_REFERENCE_SD: [(f64, f64); 4] = [(0.5, 37.4), (2.0, 20.9), (3.0, 16.0), (5.0, 5.2)];

/// Locations of the bundled fixture network.
pub fn fixture_locations() -> Vec<GeoPoint> {
    let mut rng = RandomSource::new(FIXTURE_SEED, 0).rng();
    simulate_ctn(FIXTURE_NODES, &ClusterSpec::default(), DEFAULT_CONTACT_DISTANCE, &mut rng)
        .expect("fixture parameters are valid")
        .0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Self { name: name.to_string(), pass, detail }
    }
}

fn checks_pass(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.pass)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub ks: Vec<usize>,
    pub r_eps: Vec<f64>,
    /// Utility radius; ε is derived as `rε / r`. Also the adversary cutoff.
    pub r: f64,
    pub reps: usize,
    pub seed: u64,
}

impl SweepConfig {
    pub fn fig4(reps: usize, seed: u64) -> Self {
        Self { ks: (2..=10).collect(), r_eps: vec![2.5, 5.0, 10.0, 15.0], r: 10.0, reps, seed }
    }

    pub fn fig5(reps: usize, seed: u64) -> Self {
        Self { ks: (1..=10).collect(), ..Self::fig4(reps, seed) }
    }
}

/// One estimate in long format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub r_eps: f64,
    pub r: f64,
    pub epsilon: f64,
    pub metric: String,
    pub estimate: f64,
    pub std_error: f64,
    pub target: Option<f64>,
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: SweepConfig,
    pub rows: Vec<SweepRow>,
    pub checks: Vec<Check>,
}

impl SweepReport {
    pub fn passed(&self) -> bool {
        checks_pass(&self.checks)
    }

    pub fn get(&self, k: usize, r_eps: f64, metric: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.k == k && r.r_eps == r_eps && r.metric == metric)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,r_eps,r,epsilon,metric,estimate,std_error,target,pass\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.k,
                r.r_eps,
                r.r,
                r.epsilon,
                r.metric,
                r.estimate,
                r.std_error,
                r.target.map(|t| t.to_string()).unwrap_or_default(),
                r.pass.map(|p| p.to_string()).unwrap_or_default(),
            ));
        }
        s
    }
}

fn within(estimate: f64, target: f64, se: f64, z: f64) -> bool {
    (estimate - target).abs() <= z * se
}

/// Effectiveness and re-identification over the `(K, rε)` grid with `r = r′`
/// and cutoff `l = r`, compared with the closed form.
pub fn run_fig4(cfg: &SweepConfig) -> CliResult<SweepReport> {
    let source = RandomSource::new(cfg.seed, STREAM_FIG4);
    let mut rows = Vec::new();
    let mut index = 0;
    for &re in &cfg.r_eps {
        for &k in &cfg.ks {
            let eps = re / cfg.r;
            let params = DoppelgangerParams::new(k, cfg.r, cfg.r, eps)?;
            let res = evaluate(&params, cfg.r, cfg.reps, source.derive(index))?;
            index += 1;
            let exact = closed_form_effectiveness(k, eps, cfg.r)?;
            let se_exact = (exact * (1.0 - exact) / cfg.reps as f64).sqrt();
            rows.push(SweepRow {
                k,
                r_eps: re,
                r: cfg.r,
                epsilon: eps,
                metric: "effectiveness".into(),
                estimate: res.effectiveness.value,
                std_error: res.effectiveness.std_error,
                target: Some(exact),
                pass: Some(within(res.effectiveness.value, exact, se_exact, 3.0)),
            });
            rows.push(SweepRow {
                k,
                r_eps: re,
                r: cfg.r,
                epsilon: eps,
                metric: "reid_rate".into(),
                estimate: res.reid_rate.value,
                std_error: res.reid_rate.std_error,
                target: None,
                pass: None,
            });
        }
    }
    let mut report = SweepReport { config: cfg.clone(), rows, checks: Vec::new() };

    let eff: Vec<&SweepRow> = report.rows.iter().filter(|r| r.metric == "effectiveness").collect();
    let misses = eff.iter().filter(|r| r.pass == Some(false)).count();
    let mut checks = vec![Check::new(
        "effectiveness-matches-closed-form",
        misses == 0,
        format!("{} of {} grid points outside 3 SE", misses, eff.len()),
    )];

    let top = cfg.r_eps.iter().cloned().fold(f64::MIN, f64::max);
    let best = eff
        .iter()
        .filter(|r| r.r_eps == top)
        .map(|r| r.estimate)
        .fold(0.0, f64::max);
    checks.push(Check::new(
        "effectiveness-near-one-at-largest-r-eps",
        best >= 0.97,
        format!("max effectiveness at rε={top}: {best}"),
    ));

    let k_min = cfg.ks.iter().copied().min().unwrap_or(2);
    if let Some(row) = report.get(k_min, top, "reid_rate") {
        checks.push(Check::new(
            "reid-near-one-at-largest-r-eps",
            row.estimate >= 0.95,
            format!("reid at K={k_min}, rε={top}: {}", row.estimate),
        ));
    }

    let mut violations = Vec::new();
    for &re in &cfg.r_eps {
        for pair in cfg.ks.windows(2) {
            let (a, b) = (report.get(pair[0], re, "reid_rate"), report.get(pair[1], re, "reid_rate"));
            if let (Some(a), Some(b)) = (a, b) {
                let tol = 3.0 * (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
                if b.estimate > a.estimate + tol {
                    violations.push(format!("rε={re} K={}→{}", pair[0], pair[1]));
                }
            }
        }
    }
    checks.push(Check::new(
        "reid-non-increasing-in-k",
        violations.is_empty(),
        if violations.is_empty() { "ok".into() } else { violations.join("; ") },
    ));
    report.checks = checks;
    Ok(report)
}

/// Gap between effectiveness and re-identification, K = 1 included as the
/// single-release reference.
pub fn run_fig5(cfg: &SweepConfig) -> CliResult<SweepReport> {
    let source = RandomSource::new(cfg.seed, STREAM_FIG5);
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    let mut index = 0;
    for &re in &cfg.r_eps {
        for &k in &cfg.ks {
            let eps = re / cfg.r;
            let params = if k == 1 {
                DoppelgangerParams::baseline(cfg.r, cfg.r, eps)?
            } else {
                DoppelgangerParams::new(k, cfg.r, cfg.r, eps)?
            };
            let res = evaluate(&params, cfg.r, cfg.reps, source.derive(index))?;
            index += 1;
            let gap_se = (res.effectiveness.std_error.powi(2) + res.reid_rate.std_error.powi(2)).sqrt();
            let base = |metric: &str, estimate: f64, std_error: f64| SweepRow {
                k,
                r_eps: re,
                r: cfg.r,
                epsilon: eps,
                metric: metric.into(),
                estimate,
                std_error,
                target: None,
                pass: None,
            };
            rows.push(base("effectiveness", res.effectiveness.value, res.effectiveness.std_error));
            let mut reid = base("reid_rate", res.reid_rate.value, res.reid_rate.std_error);
            let mut gap = base("gap", res.gap(), gap_se);
            if k == 1 {
                let exact = within_radius_probability(eps, cfg.r);
                let se = (exact * (1.0 - exact) / cfg.reps as f64).sqrt();
                let ok = within(res.reid_rate.value, exact, se, 3.0);
                reid.target = Some(exact);
                reid.pass = Some(ok);
                gap.target = Some(0.0);
                gap.pass = Some(res.gap() == 0.0);
                checks.push(Check::new(
                    "baseline-reid-matches-closed-form",
                    ok,
                    format!("rε={re}: {} vs {exact}", res.reid_rate.value),
                ));
                checks.push(Check::new(
                    "baseline-gap-is-zero",
                    res.gap() == 0.0,
                    format!("rε={re}: gap {}", res.gap()),
                ));
            }
            rows.push(reid);
            rows.push(gap);
        }
    }
    Ok(SweepReport { config: cfg.clone(), rows, checks })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Table1Config {
    pub locations: Vec<GeoPoint>,
    pub contact_distance: f64,
    pub reps: usize,
    pub seed: u64,
    pub rr_eps: Vec<f64>,
    pub gi_eps: Vec<f64>,
}

impl Table1Config {
    pub fn with_fixture(reps: usize, seed: u64) -> Self {
        Self {
            locations: fixture_locations(),
            contact_distance: DEFAULT_CONTACT_DISTANCE,
            reps,
            seed,
            rr_eps: vec![0.5, 2.0, 3.0, 5.0],
            gi_eps: vec![0.5, 1.0, 1.5, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub mechanism: String,
    pub epsilon: Option<f64>,
    pub reps: usize,
    pub edges_mean: f64,
    pub edges_sd: f64,
    pub triangles_mean: f64,
    pub triangles_sd: f64,
    pub expected_edges: Option<f64>,
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Table1Report {
    pub rows: Vec<Table1Row>,
    pub checks: Vec<Check>,
}

impl Table1Report {
    pub fn passed(&self) -> bool {
        checks_pass(&self.checks)
    }

    pub fn row(&self, mechanism: &str, epsilon: f64) -> Option<&Table1Row> {
        self.rows.iter().find(|r| r.mechanism == mechanism && r.epsilon == Some(epsilon))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "mechanism,epsilon,reps,edges_mean,edges_sd,triangles_mean,triangles_sd,expected_edges,pass\n",
        );
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.mechanism,
                opt(r.epsilon),
                r.reps,
                r.edges_mean,
                r.edges_sd,
                r.triangles_mean,
                r.triangles_sd,
                opt(r.expected_edges),
                r.pass.map(|p| p.to_string()).unwrap_or_default(),
            ));
        }
        s
    }
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn summarize(mechanism: &str, epsilon: Option<f64>, graphs: &[ContactGraph]) -> Table1Row {
    let edges: Vec<f64> = graphs.iter().map(|g| count_edges(g) as f64).collect();
    let tris: Vec<f64> = graphs.iter().map(|g| count_triangles(g) as f64).collect();
    let (edges_mean, edges_sd) = mean_sd(&edges);
    let (triangles_mean, triangles_sd) = mean_sd(&tris);
    Table1Row {
        mechanism: mechanism.into(),
        epsilon,
        reps: graphs.len(),
        edges_mean,
        edges_sd,
        triangles_mean,
        triangles_sd,
        expected_edges: None,
        pass: None,
    }
}

/// Edge and triangle counts of GI- and RR-sanitized networks, averaged over
/// `reps` releases each.
pub fn run_table1(cfg: &Table1Config) -> CliResult<Table1Report> {
    let original = dpsan::ctn::build_ctn(&cfg.locations, cfg.contact_distance)?;
    let source = RandomSource::new(cfg.seed, STREAM_TABLE1);
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    let mut index = 0;

    let mut gi_means = Vec::new();
    for &eps in &cfg.gi_eps {
        let budget = PrivacyBudget::per_node(eps)?;
        let mut rng = source.derive(index).rng();
        index += 1;
        let graphs = (0..cfg.reps)
            .map(|_| sanitize_gi(&cfg.locations, budget, cfg.contact_distance, &mut rng).map(|(_, g)| g))
            .collect::<Result<Vec<_>, _>>()?;
        let row = summarize("gi", Some(eps), &graphs);
        gi_means.push(row.edges_mean);
        rows.push(row);
    }

    let m = count_edges(&original);
    for &eps in &cfg.rr_eps {
        let budget = PrivacyBudget::per_edge_pair(eps)?;
        let mut rng = source.derive(index).rng();
        index += 1;
        let graphs = (0..cfg.reps)
            .map(|_| sanitize_rr(&original, budget, &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        let mut row = summarize("rr", Some(eps), &graphs);
        let target = expected_rr_edges(m, original.pair_count(), flip_probability(eps));
        row.expected_edges = Some(target);
        if let Some(&(_, sd)) = RR_REFERENCE_SD.iter().find(|(e, _)| *e == eps) {
            let se = sd / (cfg.reps as f64).sqrt();
            let ok = within(row.edges_mean, target, se, 3.0);
            row.pass = Some(ok);
            checks.push(Check::new(
                "rr-edge-count-matches-closed-form",
                ok,
                format!("ε={eps}: mean {} vs {target:.1} (3 SE = {:.2})", row.edges_mean, 3.0 * se),
            ));
        }
        rows.push(row);
    }

    rows.push(summarize("original", None, std::slice::from_ref(&original)));

    if !gi_means.is_empty() {
        let hi = gi_means.iter().cloned().fold(f64::MIN, f64::max);
        let lo = gi_means.iter().cloned().fold(f64::MAX, f64::min);
        let ratio = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        checks.push(Check::new(
            "gi-edge-count-stable-across-epsilon",
            ratio <= 1.25,
            format!("max/min mean edges {ratio:.3} ({hi:.2}/{lo:.2})"),
        ));
    }
    Ok(Table1Report { rows, checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_network_shape() {
        let locs = fixture_locations();
        let g = dpsan::ctn::build_ctn(&locs, DEFAULT_CONTACT_DISTANCE).unwrap();
        assert_eq!(g.node_count(), 100);
        assert_eq!(count_edges(&g), 39);
        assert_eq!(count_triangles(&g), 10);
    }

    #[test]
    fn small_sweep_runs() {
        let cfg = SweepConfig { ks: vec![2, 3], r_eps: vec![5.0], r: 10.0, reps: 2000, seed: 1 };
        let rep = run_fig4(&cfg).unwrap();
        assert_eq!(rep.rows.len(), 4);
        assert!(rep.to_csv().lines().count() == 5);
        let cfg = SweepConfig { ks: vec![1, 2], ..cfg };
        let rep = run_fig5(&cfg).unwrap();
        assert_eq!(rep.get(1, 5.0, "gap").unwrap().estimate, 0.0);
    }
}
