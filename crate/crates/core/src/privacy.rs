//! Noise primitives and privacy-budget accounting.
//!
//! Two mechanisms are provided:
//!
//! * the scalar Laplace mechanism, `s* = s + Lap(0, Δ₁/ε)`;
//! * the planar (polar) Laplace mechanism for geo-indistinguishability, which
//!   draws a radius `r ~ Gamma(2, ε)` and an angle `θ ~ U[0, 2π)` and moves a
//!   point by `(r cos θ, r sin θ)`. A release made this way has loss `εγ`
//!   within any radius `γ`.
//!
//! Budgets are inert values. Callers decide how budgets compose and use
//! [`compose_sequential`] / [`compose_parallel`] to account for it.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::point::GeoPoint;

/// What a budget's epsilon is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetKind {
    PerDataset,
    PerNode,
    PerEdgePair,
    /// Geo-indistinguishability loss per unit of planar distance.
    PerUnitDistance,
}

/// A privacy loss parameter together with the unit it is charged against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    epsilon: f64,
    kind: BudgetKind,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, kind: BudgetKind) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive and finite, got {epsilon}"
            )));
        }
        Ok(Self { epsilon, kind })
    }

    pub fn per_dataset(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, BudgetKind::PerDataset)
    }

    pub fn per_node(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, BudgetKind::PerNode)
    }

    pub fn per_edge_pair(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, BudgetKind::PerEdgePair)
    }

    pub fn per_unit_distance(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, BudgetKind::PerUnitDistance)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn kind(&self) -> BudgetKind {
        self.kind
    }

    /// Splits this budget into `parts` equal shares of the same kind.
    pub fn split(&self, parts: usize) -> Result<Self> {
        if parts == 0 {
            return Err(Error::InvalidParameter("cannot split a budget into 0 parts".into()));
        }
        Self::new(self.epsilon / parts as f64, self.kind)
    }

    /// Returns a budget with the same epsilon charged against another unit.
    pub fn with_kind(&self, kind: BudgetKind) -> Self {
        Self { epsilon: self.epsilon, kind }
    }

    /// Loss incurred over a protection radius `gamma` (geo-indistinguishability).
    pub fn loss_within(&self, gamma: f64) -> f64 {
        self.epsilon * gamma
    }
}

/// L1 global sensitivity of a statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sensitivity(f64);

impl Sensitivity {
    /// Sensitivity of a count over disjoint bins.
    pub const COUNT: Sensitivity = Sensitivity(1.0);

    pub fn new(delta1: f64) -> Result<Self> {
        if !(delta1.is_finite() && delta1 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sensitivity must be positive and finite, got {delta1}"
            )));
        }
        Ok(Self(delta1))
    }

    pub fn delta1(&self) -> f64 {
        self.0
    }
}

/// The generator behind every [`RandomSource`].
pub type SourceRng = ChaCha12Rng;

/// Reproducible handle on a random stream.
///
/// The same `(seed, stream)` pair always yields the same sample sequence.
/// Independent tasks should use distinct stream ids, either directly or via
/// [`RandomSource::derive`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomSource {
    pub seed: u64,
    pub stream: u64,
}

impl RandomSource {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn rng(&self) -> SourceRng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// A child source for sub-task `index`. Children of distinct parents or
    /// distinct indices do not share streams.
    pub fn derive(&self, index: u64) -> RandomSource {
        RandomSource { seed: splitmix64(self.seed ^ splitmix64(self.stream)), stream: index }
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard exponential draw via inversion on (0, 1].
fn standard_exponential<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.gen();
    -(1.0 - u).ln()
}

fn check_scale(scale: f64) -> Result<()> {
    if scale.is_finite() && scale > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("scale must be positive and finite, got {scale}")))
    }
}

/// One draw from Laplace(0, scale).
pub fn sample_laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> Result<f64> {
    check_scale(scale)?;
    let magnitude = scale * standard_exponential(rng);
    Ok(if rng.gen::<bool>() { magnitude } else { -magnitude })
}

/// Laplace mechanism: `value + Lap(0, Δ₁/ε)`.
pub fn sanitize_scalar<R: Rng + ?Sized>(
    value: f64,
    sens: Sensitivity,
    budget: PrivacyBudget,
    rng: &mut R,
) -> Result<f64> {
    Ok(value + sample_laplace(laplace_scale(sens, budget), rng)?)
}

/// Noise scale `Δ₁/ε` used by [`sanitize_scalar`].
pub fn laplace_scale(sens: Sensitivity, budget: PrivacyBudget) -> f64 {
    sens.delta1() / budget.epsilon()
}

/// Radius of a polar Laplace offset: Gamma(shape 2, rate ε), drawn as the sum
/// of two independent Exponential(ε) variates.
pub fn sample_planar_radius<R: Rng + ?Sized>(epsilon: f64, rng: &mut R) -> f64 {
    (standard_exponential(rng) + standard_exponential(rng)) / epsilon
}

/// Polar Laplace offset `(r cos θ, r sin θ)` with `r ~ Gamma(2, ε)` and
/// `θ ~ U[0, 2π)`.
pub fn sample_planar_offset<R: Rng + ?Sized>(
    budget: PrivacyBudget,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if budget.kind() != BudgetKind::PerUnitDistance {
        return Err(Error::Contract(format!(
            "planar Laplace needs a per-unit-distance budget, got {:?}",
            budget.kind()
        )));
    }
    let r = sample_planar_radius(budget.epsilon(), rng);
    let theta = TAU * rng.gen::<f64>();
    let (sin, cos) = theta.sin_cos();
    Ok((r * cos, r * sin))
}

/// Geo-indistinguishable release of a single location.
pub fn perturb_location<R: Rng + ?Sized>(
    p: GeoPoint,
    budget: PrivacyBudget,
    rng: &mut R,
) -> Result<GeoPoint> {
    if !p.is_finite() {
        return Err(Error::InvalidInput(format!("non-finite location ({}, {})", p.x, p.y)));
    }
    let (dx, dy) = sample_planar_offset(budget, rng)?;
    Ok(GeoPoint::new(p.x + dx, p.y + dy))
}

fn common_kind(budgets: &[PrivacyBudget]) -> Result<BudgetKind> {
    let first = budgets
        .first()
        .ok_or_else(|| Error::Contract("cannot compose an empty list of budgets".into()))?;
    if let Some(other) = budgets.iter().find(|b| b.kind != first.kind) {
        return Err(Error::Contract(format!(
            "cannot compose budgets of kinds {:?} and {:?}",
            first.kind, other.kind
        )));
    }
    Ok(first.kind)
}

/// Sequential composition: losses add.
pub fn compose_sequential(budgets: &[PrivacyBudget]) -> Result<PrivacyBudget> {
    let kind = common_kind(budgets)?;
    PrivacyBudget::new(budgets.iter().map(|b| b.epsilon).sum(), kind)
}

/// Parallel composition over disjoint partitions: the loss is the maximum.
/// Disjointness is the caller's responsibility.
pub fn compose_parallel(budgets: &[PrivacyBudget]) -> Result<PrivacyBudget> {
    let kind = common_kind(budgets)?;
    PrivacyBudget::new(budgets.iter().map(|b| b.epsilon).fold(f64::MIN, f64::max), kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn laplace_moments_and_median() {
        let mut rng = RandomSource::new(1, 0).rng();
        let xs: Vec<f64> = (0..1_000_000).map(|_| sample_laplace(1.0, &mut rng).unwrap()).collect();
        let (mean, var) = mean_var(&xs);
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 2.0).abs() < 0.05, "var {var}");

        let mut rng = RandomSource::new(2, 0).rng();
        let below = (0..1_000_000)
            .filter(|_| sample_laplace(2.0, &mut rng).unwrap() <= 0.0)
            .count() as f64
            / 1e6;
        assert!((below - 0.5).abs() < 0.005, "P(x<=0) {below}");
    }

    #[test]
    fn laplace_rejects_bad_scale() {
        let mut rng = RandomSource::new(0, 0).rng();
        for bad in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(sample_laplace(bad, &mut rng), Err(Error::InvalidParameter(_))));
        }
    }

    #[test]
    fn laplace_empirical_cdf_matches() {
        let mut rng = RandomSource::new(3, 0).rng();
        let b = 1.5;
        let mut xs: Vec<f64> = (0..1_000_000).map(|_| sample_laplace(b, &mut rng).unwrap()).collect();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let cdf = |x: f64| if x < 0.0 { 0.5 * (x / b).exp() } else { 1.0 - 0.5 * (-x / b).exp() };
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.002, "KS {ks}");
    }

    #[test]
    fn scalar_mechanism() {
        let mut rng = RandomSource::new(4, 0).rng();
        let huge = PrivacyBudget::per_dataset(1e6).unwrap();
        let close = (0..1000)
            .filter(|_| {
                (sanitize_scalar(10.0, Sensitivity::COUNT, huge, &mut rng).unwrap() - 10.0).abs() < 1e-4
            })
            .count();
        assert!(close >= 990);

        let one = PrivacyBudget::per_dataset(1.0).unwrap();
        let mean = (0..1_000_000)
            .map(|_| sanitize_scalar(0.0, Sensitivity::COUNT, one, &mut rng).unwrap())
            .sum::<f64>()
            / 1e6;
        assert!(mean.abs() < 0.01);

        let tenth = PrivacyBudget::per_dataset(0.1).unwrap();
        assert!((laplace_scale(Sensitivity::COUNT, tenth) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn planar_radius_and_angle() {
        let budget = PrivacyBudget::per_unit_distance(1.0).unwrap();
        let mut rng = RandomSource::new(5, 0).rng();
        let n = 1_000_000;
        let (mut sum_r, mut inside, mut sum_theta) = (0.0, 0usize, 0.0);
        let (mut rs, mut cs, mut ss) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let (dx, dy) = sample_planar_offset(budget, &mut rng).unwrap();
            let r = dx.hypot(dy);
            let theta = dy.atan2(dx).rem_euclid(TAU);
            sum_r += r;
            sum_theta += theta;
            if r <= 2.0 {
                inside += 1;
            }
            rs.push(r);
            cs.push(theta.cos());
            ss.push(theta.sin());
        }
        let nf = n as f64;
        assert!((sum_r / nf - 2.0).abs() < 0.01);
        let target = 1.0 - 3.0 * (-2.0f64).exp();
        assert!((inside as f64 / nf - target).abs() < 0.005);
        assert!((sum_theta / nf - std::f64::consts::PI).abs() < 0.01);
        assert!(correlation(&rs, &cs).abs() < 0.01);
        assert!(correlation(&rs, &ss).abs() < 0.01);
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let (ma, va) = mean_var(a);
        let (mb, vb) = mean_var(b);
        let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() as f64 - 1.0);
        cov / (va * vb).sqrt()
    }

    #[test]
    fn planar_offset_needs_distance_budget() {
        let mut rng = RandomSource::new(0, 0).rng();
        let b = PrivacyBudget::per_node(1.0).unwrap();
        assert!(matches!(sample_planar_offset(b, &mut rng), Err(Error::Contract(_))));
    }

    #[test]
    fn perturb_location_examples() {
        let mut rng = RandomSource::new(6, 0).rng();
        let tight = PrivacyBudget::per_unit_distance(1e6).unwrap();
        let near = (0..1000)
            .filter(|_| perturb_location(GeoPoint::ORIGIN, tight, &mut rng).unwrap().norm() < 1e-3)
            .count();
        assert!(near >= 990);

        let one = PrivacyBudget::per_unit_distance(1.0).unwrap();
        let (mut sx, mut sy) = (0.0, 0.0);
        for _ in 0..1_000_000 {
            let q = perturb_location(GeoPoint::new(5.0, 7.0), one, &mut rng).unwrap();
            sx += q.x;
            sy += q.y;
        }
        assert!((sx / 1e6 - 5.0).abs() < 0.01 && (sy / 1e6 - 7.0).abs() < 0.01);

        let half = PrivacyBudget::per_unit_distance(0.5).unwrap();
        let within = (0..1_000_000)
            .filter(|_| perturb_location(GeoPoint::ORIGIN, half, &mut rng).unwrap().norm() <= 4.0)
            .count() as f64
            / 1e6;
        assert!((within - (1.0 - 3.0 * (-2.0f64).exp())).abs() < 0.005);

        let bad = GeoPoint::new(f64::NAN, 0.0);
        assert!(matches!(perturb_location(bad, one, &mut rng), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn distance_law_depends_only_on_eps_times_r() {
        let n = 200_000;
        let mut rng = RandomSource::new(7, 0).rng();
        let one = PrivacyBudget::per_unit_distance(1.0).unwrap();
        let quarter = PrivacyBudget::per_unit_distance(0.25).unwrap();
        let mut a: Vec<f64> = (0..n)
            .map(|_| perturb_location(GeoPoint::ORIGIN, one, &mut rng).unwrap().norm())
            .collect();
        let mut b: Vec<f64> = (0..n)
            .map(|_| perturb_location(GeoPoint::ORIGIN, quarter, &mut rng).unwrap().norm() / 4.0)
            .collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        // two-sample KS by merging
        let (mut i, mut j, mut d) = (0, 0, 0.0f64);
        while i < n && j < n {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 - j as f64).abs() / n as f64);
        }
        assert!(d < 0.005, "KS {d}");
    }

    #[test]
    fn composition() {
        let tenth = PrivacyBudget::per_dataset(0.1).unwrap();
        let seq = compose_sequential(&[tenth; 5]).unwrap();
        assert!((seq.epsilon() - 0.5).abs() < 1e-12);

        let whole = PrivacyBudget::per_unit_distance(1.0).unwrap();
        let share = whole.split(5).unwrap();
        assert!((compose_sequential(&[share; 5]).unwrap().epsilon() - 1.0).abs() < 1e-12);
        assert_eq!(compose_sequential(&[tenth]).unwrap(), tenth);

        let one = PrivacyBudget::per_node(1.0).unwrap();
        assert_eq!(compose_parallel(&[one; 3]).unwrap(), one);
        let half = PrivacyBudget::per_node(0.5).unwrap();
        let two = PrivacyBudget::per_node(2.0).unwrap();
        assert_eq!(compose_parallel(&[half, two]).unwrap(), two);
        assert_eq!(compose_parallel(&[half]).unwrap(), half);

        assert!(matches!(compose_sequential(&[tenth, one]), Err(Error::Contract(_))));
        assert!(matches!(compose_parallel(&[tenth, one]), Err(Error::Contract(_))));
        assert!(matches!(compose_parallel(&[]), Err(Error::Contract(_))));
    }

    #[test]
    fn budget_validation() {
        assert!(PrivacyBudget::per_dataset(0.0).is_err());
        assert!(PrivacyBudget::per_dataset(f64::INFINITY).is_err());
        assert!(Sensitivity::new(-1.0).is_err());
    }

    #[test]
    fn random_source_is_reproducible() {
        let src = RandomSource::new(42, 3);
        let a: Vec<u64> = (0..8).map({ let mut r = src.rng(); move |_| r.gen() }).collect();
        let b: Vec<u64> = (0..8).map({ let mut r = src.rng(); move |_| r.gen() }).collect();
        assert_eq!(a, b);
        let c: Vec<u64> = (0..8).map({ let mut r = RandomSource::new(42, 4).rng(); move |_| r.gen() }).collect();
        assert_ne!(a, c);
        assert_ne!(src.derive(0), src.derive(1));
        assert_eq!(src.derive(9), src.derive(9));
    }
}
