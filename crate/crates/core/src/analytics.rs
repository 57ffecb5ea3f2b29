//! Poisson regression of subgroup counts with a log-population offset, used to
//! measure how much a sanitized release distorts downstream analysis.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histogram::{HistogramTree, PostProcess};

const MAX_ITERATIONS: usize = 50;
const DEVIANCE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupRow {
    pub values: Vec<String>,
    pub count: f64,
    pub population: f64,
}

/// Counts and populations per combination of categorical factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupTable {
    pub factors: Vec<String>,
    /// Levels per factor; the first level is the reference category.
    pub levels: Vec<Vec<String>>,
    pub rows: Vec<SubgroupRow>,
}

impl SubgroupTable {
    /// Levels are taken in order of first appearance.
    pub fn new(factors: Vec<String>, rows: Vec<SubgroupRow>) -> Result<Self> {
        let mut levels = vec![Vec::<String>::new(); factors.len()];
        for row in &rows {
            for (f, v) in row.values.iter().enumerate() {
                if let Some(lv) = levels.get_mut(f) {
                    if !lv.contains(v) {
                        lv.push(v.clone());
                    }
                }
            }
        }
        Self::with_levels(factors, levels, rows)
    }

    pub fn with_levels(
        factors: Vec<String>,
        levels: Vec<Vec<String>>,
        rows: Vec<SubgroupRow>,
    ) -> Result<Self> {
        if factors.len() != levels.len() {
            return Err(Error::InvalidInput("one level list per factor is required".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.values.len() != factors.len() {
                return Err(Error::InvalidInput(format!(
                    "row {i} has {} factor values, expected {}",
                    row.values.len(),
                    factors.len()
                )));
            }
            for (f, v) in row.values.iter().enumerate() {
                if !levels[f].contains(v) {
                    return Err(Error::InvalidInput(format!(
                        "row {i}: '{v}' is not a level of '{}'",
                        factors[f]
                    )));
                }
            }
            if !(row.population.is_finite() && row.population > 0.0) {
                return Err(Error::InvalidInput(format!("row {i}: population must be > 0")));
            }
            if !row.count.is_finite() {
                return Err(Error::InvalidInput(format!("row {i}: count is not finite")));
            }
        }
        Ok(Self { factors, levels, rows })
    }

    /// Leaf counts of a released tree, post-processed with `mode`, paired with
    /// user-supplied populations (one per leaf, in leaf order).
    pub fn from_tree(tree: &HistogramTree, populations: &[f64], mode: PostProcess) -> Result<Self> {
        let released = tree.postprocess_counts(mode)?;
        let leaves = released.query_marginal(tree.depth() - 1)?;
        Self::from_leaf_values(tree, &leaves, populations)
    }

    /// Leaf true counts of a tree, for the unsanitized reference fit.
    pub fn from_tree_truth(tree: &HistogramTree, populations: &[f64]) -> Result<Self> {
        let range = tree.layer(tree.depth() - 1).expect("leaf layer exists");
        let leaves: Vec<f64> = tree.nodes()[range].iter().map(|n| n.true_count as f64).collect();
        Self::from_leaf_values(tree, &leaves, populations)
    }

    fn from_leaf_values(tree: &HistogramTree, leaves: &[f64], populations: &[f64]) -> Result<Self> {
        if populations.len() != leaves.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} populations, got {}",
                leaves.len(),
                populations.len()
            )));
        }
        let spec = tree.spec();
        let range = tree.layer(tree.depth() - 1).expect("leaf layer exists");
        let rows = tree.nodes()[range]
            .iter()
            .zip(leaves)
            .zip(populations)
            .map(|((node, &count), &population)| SubgroupRow {
                values: node
                    .path
                    .iter()
                    .zip(&spec.attributes)
                    .map(|(&l, a)| a.levels[l].clone())
                    .collect(),
                count,
                population,
            })
            .collect();
        Self::with_levels(
            spec.attributes.iter().map(|a| a.name.clone()).collect(),
            spec.attributes.iter().map(|a| a.levels.clone()).collect(),
            rows,
        )
    }

    fn same_structure(&self, other: &SubgroupTable) -> bool {
        self.factors == other.factors
            && self.levels == other.levels
            && self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| a.values == b.values)
    }
}

/// Dummy-coded design: intercept, then every interaction term of order
/// `1..=degree` over non-reference levels, factors in table order.
fn design(table: &SubgroupTable, degree: usize) -> (Vec<String>, DMatrix<f64>) {
    let nf = table.factors.len();
    let mut names = vec!["(Intercept)".to_string()];
    // each column: list of (factor, level index) that must all match
    let mut columns: Vec<Vec<(usize, usize)>> = vec![Vec::new()];
    for order in 1..=degree {
        for subset in combinations(nf, order) {
            let mut combos: Vec<Vec<(usize, usize)>> = vec![Vec::new()];
            for &f in &subset {
                combos = combos
                    .into_iter()
                    .flat_map(|c| {
                        (1..table.levels[f].len()).map(move |l| {
                            let mut c = c.clone();
                            c.push((f, l));
                            c
                        })
                    })
                    .collect();
            }
            for c in combos {
                names.push(
                    c.iter()
                        .map(|&(f, l)| format!("{}[{}]", table.factors[f], table.levels[f][l]))
                        .collect::<Vec<_>>()
                        .join(":"),
                );
                columns.push(c);
            }
        }
    }
    let level_idx: Vec<Vec<usize>> = table
        .rows
        .iter()
        .map(|r| {
            r.values
                .iter()
                .enumerate()
                .map(|(f, v)| table.levels[f].iter().position(|l| l == v).unwrap())
                .collect()
        })
        .collect();
    let x = DMatrix::from_fn(table.rows.len(), columns.len(), |i, j| {
        columns[j].iter().all(|&(f, l)| level_idx[i][f] == l) as u8 as f64
    });
    (names, x)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::new(), &mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonFit {
    pub degree: usize,
    pub coefficients: Vec<Coefficient>,
    pub converged: bool,
    pub iterations: usize,
    pub deviance: f64,
}

impl PoissonFit {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

fn poisson_deviance(y: &DVector<f64>, mu: &DVector<f64>) -> f64 {
    2.0 * y
        .iter()
        .zip(mu.iter())
        .map(|(&y, &m)| if y > 0.0 { y * (y / m).ln() - (y - m) } else { m })
        .sum::<f64>()
}

/// Fits `log E[count] = log(population) + Xβ` by iteratively reweighted least
/// squares, with interactions up to `degree` (0 is the intercept-only model).
/// Negative counts are clamped to zero first.
pub fn fit_poisson(table: &SubgroupTable, degree: usize) -> Result<PoissonFit> {
    if degree > table.factors.len() {
        return Err(Error::InvalidParameter(format!(
            "interaction degree must be in 0..={}, got {degree}",
            table.factors.len()
        )));
    }
    let (names, x) = design(table, degree);
    let p = x.ncols();
    if x.nrows() < p || x.clone().svd(false, false).rank(1e-9) < p {
        return Err(Error::SingularDesign(format!(
            "{} rows cannot identify {} coefficients",
            x.nrows(),
            p
        )));
    }
    let clamped = table.rows.iter().filter(|r| r.count < 0.0).count();
    if clamped > 0 {
        log::warn!("clamping {clamped} negative counts to zero before fitting");
    }
    let y = DVector::from_iterator(table.rows.len(), table.rows.iter().map(|r| r.count.max(0.0)));
    let offset = DVector::from_iterator(table.rows.len(), table.rows.iter().map(|r| r.population.ln()));
    let total_count = y.sum();
    let total_pop: f64 = table.rows.iter().map(|r| r.population).sum();

    let mut beta = DVector::zeros(p);
    if total_count <= 0.0 {
        beta[0] = f64::NEG_INFINITY;
        return Ok(PoissonFit {
            degree,
            coefficients: pack(&names, &beta, &DVector::from_element(p, f64::NAN)),
            converged: false,
            iterations: 0,
            deviance: 0.0,
        });
    }
    beta[0] = (total_count / total_pop).ln();

    let mut eta = &x * &beta + &offset;
    let mut mu = eta.map(f64::exp);
    let mut deviance = poisson_deviance(&y, &mu);
    let mut converged = false;
    let mut iterations = 0;
    let mut information = DMatrix::zeros(p, p);
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let working = DVector::from_iterator(
            y.len(),
            (0..y.len()).map(|i| eta[i] - offset[i] + (y[i] - mu[i]) / mu[i]),
        );
        let xw = DMatrix::from_fn(x.nrows(), p, |i, j| x[(i, j)] * mu[i]);
        information = xw.transpose() * &x;
        let rhs = xw.transpose() * working;
        let chol = information
            .clone()
            .cholesky()
            .ok_or_else(|| Error::SingularDesign("weighted normal equations are singular".into()))?;
        beta = chol.solve(&rhs);
        eta = &x * &beta + &offset;
        mu = eta.map(f64::exp);
        let next = poisson_deviance(&y, &mu);
        if !next.is_finite() {
            break;
        }
        let change = (next - deviance).abs() / (next.abs() + 0.1);
        deviance = next;
        if change < DEVIANCE_TOLERANCE {
            converged = true;
            break;
        }
    }
    let xw = DMatrix::from_fn(x.nrows(), p, |i, j| x[(i, j)] * mu[i]);
    let refreshed = xw.transpose() * &x;
    if refreshed.iter().all(|v| v.is_finite()) {
        information = refreshed;
    }
    let se = information
        .try_inverse()
        .map(|inv| DVector::from_iterator(p, (0..p).map(|j| inv[(j, j)].sqrt())))
        .unwrap_or_else(|| DVector::from_element(p, f64::NAN));
    Ok(PoissonFit { degree, coefficients: pack(&names, &beta, &se), converged, iterations, deviance })
}

fn pack(names: &[String], beta: &DVector<f64>, se: &DVector<f64>) -> Vec<Coefficient> {
    names
        .iter()
        .enumerate()
        .map(|(j, n)| Coefficient { name: n.clone(), estimate: beta[j], std_error: se[j] })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientComparison {
    pub name: String,
    pub original: f64,
    pub sanitized: f64,
    pub difference: f64,
    pub sign_agrees: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub degree: usize,
    pub original_converged: bool,
    pub sanitized_converged: bool,
    pub coefficients: Vec<CoefficientComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub models: Vec<ModelComparison>,
}

impl ComparisonReport {
    /// Comparisons of all non-intercept coefficients across models.
    pub fn slopes(&self) -> impl Iterator<Item = &CoefficientComparison> {
        self.models
            .iter()
            .flat_map(|m| m.coefficients.iter().filter(|c| c.name != "(Intercept)"))
    }

    pub fn mean_abs_difference(&self) -> f64 {
        let (sum, n) = self.slopes().fold((0.0, 0usize), |(s, n), c| (s + c.difference.abs(), n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    pub fn max_abs_difference(&self) -> f64 {
        self.slopes().map(|c| c.difference.abs()).fold(0.0, f64::max)
    }

    pub fn sign_flips(&self) -> Vec<&CoefficientComparison> {
        self.slopes().filter(|c| !c.sign_agrees).collect()
    }
}

/// Fits both tables at every requested degree and pairs the coefficients.
pub fn compare_fits(
    original: &SubgroupTable,
    sanitized: &SubgroupTable,
    degrees: &[usize],
) -> Result<ComparisonReport> {
    if !original.same_structure(sanitized) {
        return Err(Error::InvalidInput("original and sanitized tables differ in structure".into()));
    }
    let mut models = Vec::with_capacity(degrees.len());
    for &degree in degrees {
        let a = fit_poisson(original, degree)?;
        let b = fit_poisson(sanitized, degree)?;
        let coefficients = a
            .coefficients
            .iter()
            .zip(&b.coefficients)
            .map(|(ca, cb)| CoefficientComparison {
                name: ca.name.clone(),
                original: ca.estimate,
                sanitized: cb.estimate,
                difference: cb.estimate - ca.estimate,
                sign_agrees: ca.estimate.signum() == cb.estimate.signum(),
            })
            .collect();
        models.push(ModelComparison {
            degree,
            original_converged: a.converged,
            sanitized_converged: b.converged,
            coefficients,
        });
    }
    Ok(ComparisonReport { models })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(counts: &[f64], pops: &[f64]) -> SubgroupTable {
        let levels = [("0", "0", "0"), ("0", "0", "1"), ("0", "1", "0"), ("0", "1", "1"),
                      ("1", "0", "0"), ("1", "0", "1"), ("1", "1", "0"), ("1", "1", "1")];
        let rows = levels
            .iter()
            .zip(counts.iter().zip(pops))
            .map(|(&(a, b, c), (&count, &population))| SubgroupRow {
                values: vec![a.into(), b.into(), c.into()],
                count,
                population,
            })
            .collect();
        SubgroupTable::new(vec!["age".into(), "race".into(), "gender".into()], rows).unwrap()
    }

    #[test]
    fn design_column_names() {
        let t = table(&[1.0; 8], &[10.0; 8]);
        let (names, x) = design(&t, 3);
        assert_eq!(names.len(), 8);
        assert_eq!(names[1], "age[1]");
        assert_eq!(names[4], "age[1]:race[1]");
        assert_eq!(names[7], "age[1]:race[1]:gender[1]");
        assert_eq!(x.nrows(), 8);
        assert_eq!(design(&t, 1).0.len(), 4);
        assert_eq!(design(&t, 2).0.len(), 7);
    }

    #[test]
    fn saturated_reproduces_log_rates() {
        let counts = [12.0, 7.0, 30.0, 4.0, 9.0, 15.0, 2.0, 40.0];
        let pops = [1000.0, 800.0, 5000.0, 700.0, 900.0, 1200.0, 300.0, 2500.0];
        let t = table(&counts, &pops);
        let fit = fit_poisson(&t, 3).unwrap();
        assert!(fit.converged);
        let (_, x) = design(&t, 3);
        let beta = DVector::from_iterator(8, fit.coefficients.iter().map(|c| c.estimate));
        let eta = &x * beta;
        for i in 0..8 {
            assert!((eta[i] - (counts[i] / pops[i]).ln()).abs() < 1e-8);
        }
    }

    #[test]
    fn intercept_shift_under_doubled_population() {
        let rows = vec![
            SubgroupRow { values: vec!["a".into()], count: 3.0, population: 100.0 },
            SubgroupRow { values: vec!["b".into()], count: 9.0, population: 50.0 },
        ];
        let t = SubgroupTable::new(vec!["g".into()], rows).unwrap();
        let mut t2 = t.clone();
        t2.rows.iter_mut().for_each(|r| r.population *= 2.0);
        let f1 = fit_poisson(&t, 0).unwrap();
        let f2 = fit_poisson(&t2, 0).unwrap();
        assert_eq!(f1.coefficients.len(), 1);
        assert!((f1.coefficients[0].estimate - (12.0f64 / 150.0).ln()).abs() < 1e-12);
        let d = f1.coefficients[0].estimate - f2.coefficients[0].estimate;
        assert!((d - std::f64::consts::LN_2).abs() < 1e-8);

        let m1 = fit_poisson(&t, 1).unwrap();
        let m2 = fit_poisson(&t2, 1).unwrap();
        assert!((m1.coefficients[0].estimate - m2.coefficients[0].estimate - std::f64::consts::LN_2).abs() < 1e-8);
        assert!((m1.coefficients[1].estimate - m2.coefficients[1].estimate).abs() < 1e-8);
    }

    #[test]
    fn zero_counts_flag_non_convergence() {
        let t = table(&[0.0; 8], &[100.0; 8]);
        let fit = fit_poisson(&t, 1).unwrap();
        assert!(!fit.converged);
    }

    #[test]
    fn singular_design_and_bad_degree() {
        let rows = vec![
            SubgroupRow { values: vec!["a".into(), "x".into()], count: 3.0, population: 100.0 },
            SubgroupRow { values: vec!["b".into(), "y".into()], count: 9.0, population: 50.0 },
        ];
        let t = SubgroupTable::new(vec!["g".into(), "h".into()], rows).unwrap();
        assert!(matches!(fit_poisson(&t, 1), Err(Error::SingularDesign(_))));
        assert!(fit_poisson(&t, 3).is_err());
    }

    #[test]
    fn table_validation() {
        let bad = vec![SubgroupRow { values: vec!["a".into()], count: 1.0, population: 0.0 }];
        assert!(SubgroupTable::new(vec!["g".into()], bad).is_err());
    }

    #[test]
    fn identical_tables_compare_to_zero() {
        let t = table(&[12.0, 7.0, 30.0, 4.0, 9.0, 15.0, 2.0, 40.0], &[1000.0; 8]);
        let rep = compare_fits(&t, &t, &[1, 2, 3]).unwrap();
        assert_eq!(rep.models.len(), 3);
        assert_eq!(rep.max_abs_difference(), 0.0);
        assert!(rep.sign_flips().is_empty());

        let mut other = t.clone();
        other.rows.pop();
        assert!(compare_fits(&t, &other, &[1]).is_err());
    }

    #[test]
    fn sign_flip_is_reported() {
        let a = table(&[10.0, 20.0, 10.0, 20.0, 10.0, 20.0, 10.0, 20.0], &[100.0; 8]);
        let b = table(&[20.0, 10.0, 20.0, 10.0, 20.0, 10.0, 20.0, 10.0], &[100.0; 8]);
        let rep = compare_fits(&a, &b, &[1]).unwrap();
        let flips = rep.sign_flips();
        assert_eq!(flips.len(), 1);
        assert_eq!(flips[0].name, "gender[1]");
    }
}
