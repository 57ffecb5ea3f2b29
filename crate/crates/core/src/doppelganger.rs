//! Doppelganger sets: K geo-indistinguishable copies of one true location.
//!
//! Each copy is released with the planar Laplace mechanism at `ε/K`, so a set
//! costs `ε` in total. A set is *effective* for `(r, r′)` when at least one
//! copy lands strictly within `r` of the truth and at least one strictly
//! beyond `r′`. The adversary averages the copies; the *re-identification
//! rate* is the probability that this centroid lands within `l` of the truth.
//!
//! Both rates depend on `r` and `ε` only through `rε`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::point::GeoPoint;
use crate::privacy::{perturb_location, PrivacyBudget, RandomSource};

/// Replicates per RNG stream in the Monte-Carlo estimators. Fixed so results
/// do not depend on the worker count.
const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoppelgangerParams {
    k: usize,
    r: f64,
    r_prime: f64,
    epsilon: PrivacyBudget,
}

impl DoppelgangerParams {
    /// `epsilon` is the per-unit-distance budget for the whole set.
    pub fn new(k: usize, r: f64, r_prime: f64, epsilon: f64) -> Result<Self> {
        if k < 2 {
            return Err(Error::Contract(format!("a doppelganger set needs K >= 2, got {k}")));
        }
        Self::unchecked_k(k, r, r_prime, epsilon)
    }

    /// Single-release reference (K = 1). Only the estimators accept it; no set
    /// can be generated from it.
    pub fn baseline(r: f64, r_prime: f64, epsilon: f64) -> Result<Self> {
        Self::unchecked_k(1, r, r_prime, epsilon)
    }

    fn unchecked_k(k: usize, r: f64, r_prime: f64, epsilon: f64) -> Result<Self> {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::InvalidParameter(format!("r must be positive, got {r}")));
        }
        if !(r_prime.is_finite() && r_prime >= r) {
            return Err(Error::InvalidParameter(format!("r' must be >= r = {r}, got {r_prime}")));
        }
        let epsilon = PrivacyBudget::per_unit_distance(epsilon)?;
        Ok(Self { k, r, r_prime, epsilon })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn r_prime(&self) -> f64 {
        self.r_prime
    }

    pub fn epsilon(&self) -> PrivacyBudget {
        self.epsilon
    }

    /// Budget spent on each released copy.
    pub fn per_point_budget(&self) -> PrivacyBudget {
        self.epsilon.split(self.k).expect("k >= 1 and epsilon valid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoppelgangerSet {
    pub origin_id: String,
    pub points: Vec<GeoPoint>,
}

/// Releases K perturbed copies of `p`, each at `ε/K`.
pub fn generate_doppelganger<R: Rng + ?Sized>(
    origin_id: impl Into<String>,
    p: GeoPoint,
    params: &DoppelgangerParams,
    rng: &mut R,
) -> Result<DoppelgangerSet> {
    if params.k < 2 {
        return Err(Error::Contract(format!("a doppelganger set needs K >= 2, got {}", params.k)));
    }
    Ok(DoppelgangerSet { origin_id: origin_id.into(), points: perturb_copies(p, params, rng)? })
}

fn perturb_copies<R: Rng + ?Sized>(
    p: GeoPoint,
    params: &DoppelgangerParams,
    rng: &mut R,
) -> Result<Vec<GeoPoint>> {
    let share = params.per_point_budget();
    (0..params.k).map(|_| perturb_location(p, share, rng)).collect()
}

/// True iff some point is strictly within `r` of `p` and some point is
/// strictly beyond `r_prime`.
pub fn is_effective(p: GeoPoint, points: &[GeoPoint], r: f64, r_prime: f64) -> bool {
    let inside = points.iter().any(|q| q.distance(&p) < r);
    let outside = points.iter().any(|q| q.distance(&p) > r_prime);
    inside && outside
}

/// Arithmetic mean of the released coordinates.
pub fn infer_centroid(points: &[GeoPoint]) -> Result<GeoPoint> {
    if points.is_empty() {
        return Err(Error::InvalidInput("cannot take the centroid of an empty set".into()));
    }
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(sx, sy), q| (sx + q.x, sy + q.y));
    Ok(GeoPoint::new(sx / n, sy / n))
}

/// Geometric median by Weiszfeld iteration. An alternative attacker; not used
/// by the estimators.
pub fn infer_geometric_median(points: &[GeoPoint]) -> Result<GeoPoint> {
    let mut m = infer_centroid(points)?;
    for _ in 0..200 {
        let (mut wx, mut wy, mut w) = (0.0, 0.0, 0.0);
        for q in points {
            let d = q.distance(&m);
            if d < 1e-12 {
                return Ok(*q);
            }
            wx += q.x / d;
            wy += q.y / d;
            w += 1.0 / d;
        }
        let next = GeoPoint::new(wx / w, wy / w);
        let moved = next.distance(&m);
        m = next;
        if moved < 1e-10 {
            break;
        }
    }
    Ok(m)
}

/// A Monte-Carlo proportion with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub reps: usize,
}

impl Estimate {
    fn from_hits(hits: usize, reps: usize) -> Self {
        let p = hits as f64 / reps as f64;
        Self { value: p, std_error: (p * (1.0 - p) / reps as f64).sqrt(), reps }
    }
}

/// Effectiveness `1−β` and re-identification rate `1−α` from shared replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub effectiveness: Estimate,
    pub reid_rate: Estimate,
    pub reps: usize,
}

impl EvaluationResult {
    /// `(1−β) − (1−α)`.
    pub fn gap(&self) -> f64 {
        self.effectiveness.value - self.reid_rate.value
    }
}

/// Runs `reps` replicates of one set around the origin and evaluates both
/// events on each. With K = 1 the joint event cannot hold, so effectiveness
/// degenerates to "the single copy lands within r".
pub fn evaluate(
    params: &DoppelgangerParams,
    cutoff: f64,
    reps: usize,
    source: RandomSource,
) -> Result<EvaluationResult> {
    if reps == 0 {
        return Err(Error::InvalidParameter("reps must be >= 1".into()));
    }
    if !(cutoff.is_finite() && cutoff > 0.0) {
        return Err(Error::InvalidParameter(format!("cutoff must be positive, got {cutoff}")));
    }
    let chunks = reps.div_ceil(CHUNK);
    let counts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = source.derive(c as u64).rng();
            let n = CHUNK.min(reps - c * CHUNK);
            let (mut eff, mut reid) = (0usize, 0usize);
            for _ in 0..n {
                let pts = perturb_copies(GeoPoint::ORIGIN, params, &mut rng)?;
                let effective = if params.k == 1 {
                    pts[0].norm() < params.r
                } else {
                    is_effective(GeoPoint::ORIGIN, &pts, params.r, params.r_prime)
                };
                eff += effective as usize;
                reid += (infer_centroid(&pts)?.norm() <= cutoff) as usize;
            }
            Ok((eff, reid))
        })
        .collect::<Result<Vec<_>>>()?;
    let (eff, reid) = counts.iter().fold((0, 0), |(a, b), (x, y)| (a + x, b + y));
    Ok(EvaluationResult {
        effectiveness: Estimate::from_hits(eff, reps),
        reid_rate: Estimate::from_hits(reid, reps),
        reps,
    })
}

/// Monte-Carlo `1−β`.
pub fn estimate_effectiveness(
    params: &DoppelgangerParams,
    reps: usize,
    source: RandomSource,
) -> Result<Estimate> {
    Ok(evaluate(params, params.r, reps, source)?.effectiveness)
}

/// Monte-Carlo `1−α` for an adversary cutoff `l`.
pub fn estimate_reidentification(
    params: &DoppelgangerParams,
    cutoff: f64,
    reps: usize,
    source: RandomSource,
) -> Result<Estimate> {
    Ok(evaluate(params, cutoff, reps, source)?.reid_rate)
}

/// `α − β` estimated from shared replicates.
pub fn alpha_beta_gap(
    params: &DoppelgangerParams,
    cutoff: f64,
    reps: usize,
    source: RandomSource,
) -> Result<f64> {
    Ok(evaluate(params, cutoff, reps, source)?.gap())
}

/// Probability that one planar Laplace release at loss `epsilon` lands within
/// `r`: the Gamma(2, ε) CDF `1 − e^{−εr}(1 + εr)`.
pub fn within_radius_probability(epsilon: f64, r: f64) -> f64 {
    let t = epsilon * r;
    -(-t).exp_m1() - t * (-t).exp()
}

/// Exact effectiveness for `r = r′`: with `p` the per-copy within-`r`
/// probability at `ε/K`, returns `1 − p^K − (1 − p)^K`. For K = 1 returns `p`.
pub fn closed_form_effectiveness(k: usize, epsilon: f64, r: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidParameter("K must be >= 1".into()));
    }
    if !(epsilon * r > 0.0) {
        return Err(Error::InvalidParameter(format!("εr must be positive, got {}", epsilon * r)));
    }
    let p = within_radius_probability(epsilon / k as f64, r);
    if k == 1 {
        return Ok(p);
    }
    Ok(1.0 - p.powi(k as i32) - (1.0 - p).powi(k as i32))
}
