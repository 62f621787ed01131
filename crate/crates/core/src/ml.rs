//! Learning primitives shared across layers: weighted EM Gaussian-mixture
//! clustering, X-Means with BIC-guided splits, and a linear max-margin
//! classifier trained by subgradient descent on the hinge loss.
//!
//! Points carry weights (call counts at a tower) instead of being
//! duplicated; every algorithm here treats weight as multiplicity. All
//! entry points are deterministic given their seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Variance floor, in squared degrees. Many calls at one tower produce
/// byte-identical points, which would otherwise collapse a component.
pub const VAR_FLOOR: f64 = 1e-4 * 1e-4;

/// A 2-D point with a non-negative multiplicity weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedPoint {
    pub pos: [f64; 2],
    pub weight: f64,
}

impl WeightedPoint {
    pub fn new(x: f64, y: f64, weight: f64) -> Self {
        WeightedPoint { pos: [x, y], weight }
    }
}

/// One fitted cluster.
#[derive(Debug, Clone)]
pub struct ClusterSummary {
    pub centroid: [f64; 2],
    /// Fraction of total point weight carried by this cluster.
    pub weight: f64,
    /// Per-dimension variance (floored).
    pub variance: [f64; 2],
    /// Number of input points hard-assigned here.
    pub members: usize,
}

/// Clustering result with hard assignments and a model-quality score
/// (final log-likelihood for EM, BIC for X-Means; higher is better).
#[derive(Debug, Clone)]
pub struct ClusterModel {
    pub clusters: Vec<ClusterSummary>,
    pub assignment: Vec<usize>,
    pub quality: f64,
    /// Log-likelihood after each EM iteration (empty for X-Means).
    pub ll_trace: Vec<f64>,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.clusters.len()
    }
}

fn distinct_positions(points: &[WeightedPoint]) -> usize {
    let mut seen: Vec<[u64; 2]> = points
        .iter()
        .map(|p| [p.pos[0].to_bits(), p.pos[1].to_bits()])
        .collect();
    seen.sort();
    seen.dedup();
    seen.len()
}

fn sq_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// k-means++ seeding over weighted points.
fn seed_centroids(points: &[WeightedPoint], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let mut centroids: Vec<[f64; 2]> = Vec::with_capacity(k);
    let total: f64 = points.iter().map(|p| p.weight).sum();
    let pick = |weights: &[f64], rng: &mut ChaCha8Rng| -> usize {
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return 0;
        }
        let mut target = rng.random::<f64>() * sum;
        for (i, w) in weights.iter().enumerate() {
            target -= w;
            if target <= 0.0 {
                return i;
            }
        }
        weights.len() - 1
    };
    let first_weights: Vec<f64> = points.iter().map(|p| p.weight).collect();
    let _ = total;
    centroids.push(points[pick(&first_weights, rng)].pos);
    while centroids.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| {
                let nearest = centroids
                    .iter()
                    .map(|&c| sq_dist(p.pos, c))
                    .fold(f64::INFINITY, f64::min);
                p.weight * nearest
            })
            .collect();
        if d2.iter().sum::<f64>() <= 0.0 {
            // All mass already covered; spread over distinct leftovers.
            let covered: Vec<[f64; 2]> = centroids.clone();
            if let Some(p) = points.iter().find(|p| !covered.contains(&p.pos)) {
                centroids.push(p.pos);
                continue;
            }
            break;
        }
        centroids.push(points[pick(&d2, rng)].pos);
    }
    centroids
}

/// Weighted Lloyd iterations from the given initial centroids.
/// Returns (centroids, assignment).
fn lloyd(
    points: &[WeightedPoint],
    mut centroids: Vec<[f64; 2]>,
    max_iter: usize,
) -> (Vec<[f64; 2]>, Vec<usize>) {
    let k = centroids.len();
    let mut assignment = vec![0usize; points.len()];
    for _ in 0..max_iter {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, &centroid) in centroids.iter().enumerate() {
                let d = sq_dist(p.pos, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![[0.0f64; 2]; k];
        let mut mass = vec![0.0f64; k];
        for (i, p) in points.iter().enumerate() {
            let c = assignment[i];
            sums[c][0] += p.weight * p.pos[0];
            sums[c][1] += p.weight * p.pos[1];
            mass[c] += p.weight;
        }
        for c in 0..k {
            if mass[c] > 0.0 {
                centroids[c] = [sums[c][0] / mass[c], sums[c][1] / mass[c]];
            } else {
                // Reseed an empty cluster at the point farthest from its
                // currently assigned centroid.
                let far = points
                    .iter()
                    .enumerate()
                    .max_by(|(i, a), (j, b)| {
                        let da = a.weight * sq_dist(a.pos, centroids[assignment[*i]]);
                        let db = b.weight * sq_dist(b.pos, centroids[assignment[*j]]);
                        da.total_cmp(&db)
                    })
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                centroids[c] = points[far].pos;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    (centroids, assignment)
}

/// Fits a diagonal-covariance Gaussian mixture by expectation-maximization.
///
/// Deterministic given `seed` (k-means++-style init). Iterates until the
/// log-likelihood improves by less than `tol` or `max_iter` is reached.
/// Hard assignments take the maximal responsibility, ties toward the lower
/// cluster index. Variances are floored at [`VAR_FLOOR`], which keeps the
/// constrained M-step a proper ascent step even on repeated coordinates.
pub fn em_cluster(
    points: &[WeightedPoint],
    k: usize,
    max_iter: usize,
    tol: f64,
    seed: u64,
) -> Result<ClusterModel> {
    if k == 0 {
        return Err(Error::config("em_cluster needs k >= 1"));
    }
    if points.is_empty() {
        return Err(Error::data("em_cluster needs at least one point"));
    }
    if points.iter().any(|p| p.weight < 0.0) {
        return Err(Error::data("negative point weight"));
    }
    let distinct = distinct_positions(points);
    if distinct < k {
        return Err(Error::data(format!(
            "cannot fit {k} clusters to {distinct} distinct points"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centroids = seed_centroids(points, k, &mut rng);
    let total_w: f64 = points.iter().map(|p| p.weight).sum();
    if total_w <= 0.0 {
        return Err(Error::data("total point weight is zero"));
    }

    // Initialize from a short Lloyd pass so EM starts near sensible means.
    let (mut means, init_assign) = lloyd(points, centroids, 10);
    let mut weights = vec![0.0f64; k];
    let mut vars = vec![[VAR_FLOOR; 2]; k];
    {
        let mut mass = vec![0.0f64; k];
        let mut sq = vec![[0.0f64; 2]; k];
        for (i, p) in points.iter().enumerate() {
            let c = init_assign[i];
            mass[c] += p.weight;
            sq[c][0] += p.weight * (p.pos[0] - means[c][0]).powi(2);
            sq[c][1] += p.weight * (p.pos[1] - means[c][1]).powi(2);
        }
        for c in 0..k {
            weights[c] = (mass[c] / total_w).max(1e-12);
            if mass[c] > 0.0 {
                vars[c] = [
                    (sq[c][0] / mass[c]).max(VAR_FLOOR),
                    (sq[c][1] / mass[c]).max(VAR_FLOOR),
                ];
            }
        }
        let wsum: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= wsum;
        }
    }

    let n = points.len();
    let mut resp = vec![vec![0.0f64; k]; n];
    let mut ll_trace = Vec::new();
    let mut prev_ll = f64::NEG_INFINITY;

    for _ in 0..max_iter.max(1) {
        // E-step in the log domain.
        let mut ll = 0.0;
        for (i, p) in points.iter().enumerate() {
            let mut logp = vec![0.0f64; k];
            for c in 0..k {
                let dx = p.pos[0] - means[c][0];
                let dy = p.pos[1] - means[c][1];
                logp[c] = weights[c].ln()
                    - 0.5 * ((2.0 * std::f64::consts::PI * vars[c][0]).ln()
                        + (2.0 * std::f64::consts::PI * vars[c][1]).ln())
                    - 0.5 * (dx * dx / vars[c][0] + dy * dy / vars[c][1]);
            }
            let m = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + logp.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
            for c in 0..k {
                resp[i][c] = (logp[c] - lse).exp();
            }
            ll += p.weight * lse;
        }
        ll_trace.push(ll);

        // M-step.
        for c in 0..k {
            let mass: f64 = points.iter().enumerate().map(|(i, p)| p.weight * resp[i][c]).sum();
            if mass > 1e-300 {
                let mx: f64 =
                    points.iter().enumerate().map(|(i, p)| p.weight * resp[i][c] * p.pos[0]).sum();
                let my: f64 =
                    points.iter().enumerate().map(|(i, p)| p.weight * resp[i][c] * p.pos[1]).sum();
                means[c] = [mx / mass, my / mass];
                let vx: f64 = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| p.weight * resp[i][c] * (p.pos[0] - means[c][0]).powi(2))
                    .sum();
                let vy: f64 = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| p.weight * resp[i][c] * (p.pos[1] - means[c][1]).powi(2))
                    .sum();
                vars[c] = [(vx / mass).max(VAR_FLOOR), (vy / mass).max(VAR_FLOOR)];
                weights[c] = mass / total_w;
            } else {
                weights[c] = 1e-12;
            }
        }
        let wsum: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= wsum;
        }

        if ll - prev_ll < tol && prev_ll > f64::NEG_INFINITY {
            break;
        }
        prev_ll = ll;
    }

    let assignment: Vec<usize> = resp
        .iter()
        .map(|r| {
            let mut best = 0;
            for c in 1..k {
                if r[c] > r[best] {
                    best = c;
                }
            }
            best
        })
        .collect();

    let mut members = vec![0usize; k];
    for &a in &assignment {
        members[a] += 1;
    }
    let clusters = (0..k)
        .map(|c| ClusterSummary {
            centroid: means[c],
            weight: weights[c],
            variance: vars[c],
            members: members[c],
        })
        .collect();
    let quality = *ll_trace.last().expect("at least one iteration");
    Ok(ClusterModel { clusters, assignment, quality, ll_trace })
}

/// Spherical-Gaussian BIC of a hard clustering; higher is better.
/// `p = (k - 1) + d*k + 1` free parameters, per the usual X-Means scoring.
fn bic(points: &[WeightedPoint], centroids: &[[f64; 2]], assignment: &[usize]) -> f64 {
    let d = 2.0;
    let k = centroids.len();
    let n: f64 = points.iter().map(|p| p.weight).sum();
    if n <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let mut mass = vec![0.0f64; k];
    let mut rss = 0.0;
    for (i, p) in points.iter().enumerate() {
        mass[assignment[i]] += p.weight;
        rss += p.weight * sq_dist(p.pos, centroids[assignment[i]]);
    }
    let dof = (n - k as f64).max(1.0);
    let sigma2 = (rss / (d * dof)).max(1e-12);
    let mut ll = -(n * d / 2.0) * (2.0 * std::f64::consts::PI * sigma2).ln() - d * dof / 2.0;
    for &m in &mass {
        if m > 0.0 {
            ll += m * (m / n).ln();
        }
    }
    let p = (k as f64 - 1.0) + d * k as f64 + 1.0;
    ll - (p / 2.0) * n.ln()
}

/// X-Means: start at `k_min` centroids, repeatedly split clusters whose
/// local BIC improves on splitting, stop at `k_max` or when no split helps.
/// Splits are also guarded by the global BIC, so the reported quality never
/// falls below the initial `k_min` model's.
pub fn xmeans_cluster(
    points: &[WeightedPoint],
    k_min: usize,
    k_max: usize,
    seed: u64,
) -> Result<ClusterModel> {
    if k_min == 0 || k_min > k_max {
        return Err(Error::config("xmeans needs 1 <= k_min <= k_max"));
    }
    let distinct = distinct_positions(points);
    if points.is_empty() || distinct < k_min {
        return Err(Error::data(format!(
            "cannot fit {k_min} clusters to {distinct} distinct points"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = seed_centroids(points, k_min, &mut rng);
    let (mut centroids, mut assignment) = lloyd(points, init, 100);
    let mut best_bic = bic(points, &centroids, &assignment);

    loop {
        let k = centroids.len();
        if k >= k_max.min(distinct) {
            break;
        }
        let mut proposal: Vec<[f64; 2]> = Vec::new();
        let mut any_split = false;
        let mut budget = k_max.min(distinct) - k;
        for c in 0..k {
            let members: Vec<WeightedPoint> = points
                .iter()
                .enumerate()
                .filter(|(i, _)| assignment[*i] == c)
                .map(|(_, p)| *p)
                .collect();
            if budget == 0 || members.is_empty() || distinct_positions(&members) < 2 {
                proposal.push(centroids[c]);
                continue;
            }
            let child_init = seed_centroids(&members, 2, &mut rng);
            let (child_centroids, child_assign) = lloyd(&members, child_init, 100);
            let parent_local = bic(&members, &centroids[c..=c], &vec![0; members.len()]);
            let child_local = bic(&members, &child_centroids, &child_assign);
            if child_local > parent_local {
                proposal.extend_from_slice(&child_centroids);
                any_split = true;
                budget -= 1;
            } else {
                proposal.push(centroids[c]);
            }
        }
        if !any_split {
            break;
        }
        let (new_centroids, new_assignment) = lloyd(points, proposal, 100);
        let new_bic = bic(points, &new_centroids, &new_assignment);
        if new_bic <= best_bic {
            break;
        }
        centroids = new_centroids;
        assignment = new_assignment;
        best_bic = new_bic;
    }

    let k = centroids.len();
    let total_w: f64 = points.iter().map(|p| p.weight).sum();
    let mut mass = vec![0.0f64; k];
    let mut members = vec![0usize; k];
    let mut sq = vec![[0.0f64; 2]; k];
    for (i, p) in points.iter().enumerate() {
        let c = assignment[i];
        mass[c] += p.weight;
        members[c] += 1;
        sq[c][0] += p.weight * (p.pos[0] - centroids[c][0]).powi(2);
        sq[c][1] += p.weight * (p.pos[1] - centroids[c][1]).powi(2);
    }
    let clusters = (0..k)
        .map(|c| ClusterSummary {
            centroid: centroids[c],
            weight: if total_w > 0.0 { mass[c] / total_w } else { 0.0 },
            variance: if mass[c] > 0.0 {
                [(sq[c][0] / mass[c]).max(VAR_FLOOR), (sq[c][1] / mass[c]).max(VAR_FLOOR)]
            } else {
                [VAR_FLOOR; 2]
            },
            members: members[c],
        })
        .collect();
    Ok(ClusterModel { clusters, assignment, quality: best_bic, ll_trace: Vec::new() })
}

/// Two-class linear decision rule.
///
/// `decision(x) = weights . x + bias`; non-negative maps to `classes.0`,
/// negative to `classes.1`. An exact zero therefore goes to the first class.
#[derive(Debug, Clone)]
pub struct LinearModel<L> {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub classes: (L, L),
}

impl<L: Clone> LinearModel<L> {
    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::data(format!(
                "feature dimension {} does not match model dimension {}",
                x.len(),
                self.weights.len()
            )));
        }
        Ok(self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias)
    }

    pub fn predict(&self, x: &[f64]) -> Result<L> {
        let d = self.decision(x)?;
        Ok(if d >= 0.0 { self.classes.0.clone() } else { self.classes.1.clone() })
    }
}

/// Trains a linear classifier by epoch-ordered subgradient descent on
/// `hinge + (reg/2)||w||^2`. Samples are visited in their given order every
/// epoch; the seed only perturbs the tiny random init, so training is fully
/// deterministic.
///
/// The first label encountered becomes `classes.0` (the positive side).
pub fn train_linear<L: Clone + PartialEq + std::fmt::Debug>(
    samples: &[(Vec<f64>, L)],
    epochs: usize,
    learning_rate: f64,
    regularization: f64,
    seed: u64,
) -> Result<LinearModel<L>> {
    if samples.is_empty() {
        return Err(Error::data("no training samples"));
    }
    let dim = samples[0].0.len();
    if samples.iter().any(|(x, _)| x.len() != dim) {
        return Err(Error::data("inconsistent feature dimensions"));
    }
    let pos = samples[0].1.clone();
    let neg = samples
        .iter()
        .map(|(_, l)| l)
        .find(|l| **l != pos)
        .cloned()
        .ok_or_else(|| Error::data("training needs both classes present"))?;
    if samples.iter().any(|(_, l)| *l != pos && *l != neg) {
        return Err(Error::data("more than two classes in training data"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: Vec<f64> = (0..dim).map(|_| (rng.random::<f64>() - 0.5) * 1e-3).collect();
    let mut b = 0.0f64;
    for _ in 0..epochs {
        for (x, label) in samples {
            let y = if *label == pos { 1.0 } else { -1.0 };
            let margin = y * (w.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>() + b);
            let shrink = 1.0 - learning_rate * regularization;
            for wi in w.iter_mut() {
                *wi *= shrink;
            }
            if margin < 1.0 {
                for (wi, xi) in w.iter_mut().zip(x) {
                    *wi += learning_rate * y * xi;
                }
                b += learning_rate * y;
            }
        }
    }
    Ok(LinearModel { weights: w, bias: b, classes: (pos, neg) })
}

/// One-vs-rest composition of [`LinearModel`]s for 3+ classes.
#[derive(Debug, Clone)]
pub struct OneVsRest<L> {
    pub classes: Vec<L>,
    models: Vec<LinearModel<i8>>,
}

impl<L: Clone + PartialEq + std::fmt::Debug> OneVsRest<L> {
    pub fn train(
        samples: &[(Vec<f64>, L)],
        classes: &[L],
        epochs: usize,
        learning_rate: f64,
        regularization: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut models = Vec::with_capacity(classes.len());
        for (ci, class) in classes.iter().enumerate() {
            let mapped: Vec<(Vec<f64>, i8)> = samples
                .iter()
                .map(|(x, l)| (x.clone(), if l == class { 1 } else { -1 }))
                .collect();
            // Put a positive sample first so the positive side is classes.0.
            let mut ordered = mapped.clone();
            ordered.sort_by_key(|(_, y)| -i32::from(*y));
            if ordered.first().map(|(_, y)| *y) != Some(1) {
                return Err(Error::data(format!("class {class:?} absent from training data")));
            }
            models.push(train_linear(
                &ordered,
                epochs,
                learning_rate,
                regularization,
                seed.wrapping_add(ci as u64),
            )?);
        }
        Ok(OneVsRest { classes: classes.to_vec(), models })
    }

    /// Argmax of the per-class decision values; ties resolve to the earlier
    /// class in the training order.
    pub fn predict(&self, x: &[f64]) -> Result<L> {
        let mut best = 0;
        let mut best_d = f64::NEG_INFINITY;
        for (i, m) in self.models.iter().enumerate() {
            let d = m.decision(x)?;
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        Ok(self.classes[best].clone())
    }
}

/// Per-feature standardization fitted on a training set.
#[derive(Debug, Clone)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::data("cannot standardize an empty set"));
        }
        let dim = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for row in rows {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut sd = vec![0.0; dim];
        for row in rows {
            for (s, (v, m)) in sd.iter_mut().zip(row.iter().zip(&mean)) {
                *s += (v - m).powi(2);
            }
        }
        for s in &mut sd {
            *s = (*s / n).sqrt();
            if *s < 1e-12 {
                *s = 1.0;
            }
        }
        Ok(Standardizer { mean, sd })
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}
