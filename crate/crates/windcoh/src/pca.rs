//! Principal-component weightings of trajectory matrices and measurement
//! based clustering.
//!
//! The trajectory matrix `𝕄` (signals × samples) is factored as
//! `𝕄 = U Σ Vᵀ = K Vᵀ` with `K = UΣ`. Row `i` of `K` weights signal `i` on
//! each principal direction, so machines that swing together sit close in
//! the columns of `K` that carry the most spread.
//!
//! ```
//! use nalgebra::DMatrix;
//! use windcoh::pca::{cluster_coords, pca_weightings};
//!
//! // two groups of two signals, each group a different sinusoid
//! let m = DMatrix::from_fn(4, 200, |i, k| {
//!     let t = k as f64 * 0.05;
//!     if i < 2 { (1.0 + 0.1 * i as f64) * t.sin() } else { (2.0 - 0.1 * i as f64) * (3.0 * t).cos() }
//! });
//! let res = pca_weightings(&m, 2, true).unwrap();
//! let parts = cluster_coords(&res.coords, 2);
//! assert_eq!(parts, vec![vec![0, 1], vec![2, 3]]);
//! ```

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::coherency::{labels_of, moved_machines};
use crate::error::{Error, Result};

/// Restarts of the clustering; restart `k` seeds from point `k mod ρ`.
pub const RESTARTS: usize = 100;
const MAX_LLOYD: usize = 300;

#[derive(Clone, Debug, PartialEq)]
pub struct PcaResult {
    /// `UΣ`, one row per signal.
    pub k: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    /// Columns of `K` by decreasing sample variance.
    pub selected_axes: Vec<usize>,
    pub variances: Vec<f64>,
    /// Rows of `K` restricted to the selected axes.
    pub coords: DMatrix<f64>,
    pub centered: bool,
    /// Row means removed before the decomposition.
    pub means: Vec<f64>,
    pub warnings: Vec<String>,
}

impl PcaResult {
    /// `‖𝕄 − KVᵀ‖ / ‖𝕄‖` against the (centred) input.
    pub fn reconstruction_error(&self, data: &DMatrix<f64>) -> f64 {
        let x = center(data, self.centered).0;
        let norm = x.norm();
        if norm == 0.0 {
            return (&self.k * self.v.transpose()).norm();
        }
        (x - &self.k * self.v.transpose()).norm() / norm
    }
}

fn center(data: &DMatrix<f64>, on: bool) -> (DMatrix<f64>, Vec<f64>) {
    let means: Vec<f64> =
        if on { (0..data.nrows()).map(|i| data.row(i).mean()).collect() } else { vec![0.0; data.nrows()] };
    (DMatrix::from_fn(data.nrows(), data.ncols(), |i, j| data[(i, j)] - means[i]), means)
}

fn sample_variance(x: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = x.clone().count();
    if n < 2 {
        return 0.0;
    }
    let mean = x.clone().sum::<f64>() / n as f64;
    x.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
}

/// SVD of the trajectory matrix and the `c` highest-variance weighting axes.
pub fn pca_weightings(data: &DMatrix<f64>, c: usize, centered: bool) -> Result<PcaResult> {
    let (rho, s) = data.shape();
    if !(s >= rho && rho >= c && c >= 1) {
        return Err(Error::Domain(format!("need samples ≥ signals ≥ c ≥ 1, got {s}, {rho}, {c}")));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("trajectory matrix has non-finite entries".into()));
    }
    let (x, means) = center(data, centered);
    let svd = x.svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested Vᵀ");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    // singular vectors are fixed only up to sign: make each column's largest entry positive
    let sign: Vec<f64> = order
        .iter()
        .map(|&c| {
            let col = u.column(c);
            let top = (0..rho).fold(0, |b, i| if col[i].abs() > col[b].abs() { i } else { b });
            if col[top] < 0.0 { -1.0 } else { 1.0 }
        })
        .collect();
    let k = DMatrix::from_fn(rho, sv.len(), |i, j| sign[j] * u[(i, order[j])] * sv[j]);
    let v = DMatrix::from_fn(s, sv.len(), |i, j| sign[j] * vt[(order[j], i)]);

    let variances: Vec<f64> = (0..k.ncols()).map(|j| sample_variance(k.column(j).iter().copied())).collect();
    let mut axes: Vec<usize> = (0..k.ncols()).collect();
    axes.sort_by(|&a, &b| variances[b].total_cmp(&variances[a]).then(a.cmp(&b)));
    axes.truncate(c);

    let mut warnings = Vec::new();
    let tol = sv.first().copied().unwrap_or(0.0) * 1e-12 * rho.max(s) as f64;
    let rank = sv.iter().filter(|&&x| x > tol).count();
    if rank < c {
        warnings.push(format!("trajectory rank {rank} is below c = {c}; axes padded with null directions"));
    }
    let coords = DMatrix::from_fn(rho, c, |i, j| k[(i, axes[j])]);
    Ok(PcaResult {
        k,
        v,
        singular_values: sv,
        variances: axes.iter().map(|&a| variances[a]).collect(),
        selected_axes: axes,
        coords,
        centered,
        means,
        warnings,
    })
}

fn dist2(p: &DMatrix<f64>, i: usize, c: &DMatrix<f64>, j: usize) -> f64 {
    (0..p.ncols()).map(|d| (p[(i, d)] - c[(j, d)]).powi(2)).sum()
}

/// One k-means run from farthest-point seeds starting at point `first`.
fn kmeans(p: &DMatrix<f64>, r: usize, first: usize) -> (Vec<usize>, f64) {
    let (n, dim) = p.shape();
    let mut seeds = vec![first];
    let mut near: Vec<f64> = (0..n).map(|i| dist2(p, i, p, first)).collect();
    while seeds.len() < r {
        let mut best = None::<(usize, f64)>;
        for i in 0..n {
            if seeds.contains(&i) {
                continue;
            }
            if best.is_none_or(|(_, d)| near[i] > d) {
                best = Some((i, near[i]));
            }
        }
        let next = best.expect("r ≤ number of points").0;
        seeds.push(next);
        for i in 0..n {
            near[i] = near[i].min(dist2(p, i, p, next));
        }
    }
    let mut cent = DMatrix::from_fn(r, dim, |j, d| p[(seeds[j], d)]);
    let mut assign = vec![usize::MAX; n];
    for _ in 0..MAX_LLOYD {
        let mut changed = false;
        for i in 0..n {
            let mut bj = 0;
            let mut bd = f64::INFINITY;
            for j in 0..r {
                let d = dist2(p, i, &cent, j);
                if d < bd {
                    bd = d;
                    bj = j;
                }
            }
            if assign[i] != bj {
                assign[i] = bj;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for j in 0..r {
            let members: Vec<usize> = (0..n).filter(|&i| assign[i] == j).collect();
            if members.is_empty() {
                continue;
            }
            for d in 0..dim {
                cent[(j, d)] = members.iter().map(|&i| p[(i, d)]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    let inertia = (0..n).map(|i| dist2(p, i, &cent, assign[i])).sum();
    (assign, inertia)
}

/// Group `labels` into areas ordered by their smallest member.
fn areas_from_labels(labels: &[usize]) -> Vec<Vec<usize>> {
    let mut areas: Vec<Vec<usize>> = Vec::new();
    let mut map = std::collections::BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        let a = *map.entry(l).or_insert_with(|| {
            areas.push(Vec::new());
            areas.len() - 1
        });
        areas[a].push(i);
    }
    areas
}

/// k-means partition of the rows of `coords` into `r` groups.
///
/// Deterministic: farthest-point seeding, one restart per starting point
/// (cycled up to [`RESTARTS`]), lowest inertia kept with the earliest restart
/// winning ties. Areas are returned ordered by their smallest member.
pub fn cluster_coords(coords: &DMatrix<f64>, r: usize) -> Vec<Vec<usize>> {
    let n = coords.nrows();
    if n == 0 || r == 0 {
        return Vec::new();
    }
    let r = r.min(n);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for k in 0..RESTARTS {
        let (assign, inertia) = kmeans(coords, r, k % n);
        if best.as_ref().is_none_or(|(_, b)| inertia < *b) {
            best = Some((assign, inertia));
        }
    }
    areas_from_labels(&best.expect("at least one restart").0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterComparison {
    pub pca_partition: Vec<Vec<usize>>,
    pub model_partition: Vec<Vec<usize>>,
    /// Rand index: share of machine pairs on which both partitions agree
    /// about being together or apart.
    pub agreement: f64,
    pub moved_set: BTreeSet<usize>,
}

pub fn compare_partitions(pca_p: &[Vec<usize>], model_p: &[Vec<usize>]) -> Result<ClusterComparison> {
    let set = |p: &[Vec<usize>]| p.iter().flatten().copied().collect::<BTreeSet<usize>>();
    let (sa, sb) = (set(pca_p), set(model_p));
    if sa != sb {
        return Err(Error::Domain("partitions cover different machine sets".into()));
    }
    let n = sa.iter().next_back().map_or(0, |m| m + 1);
    let (la, lb) = (labels_of(pca_p, n), labels_of(model_p, n));
    let machines: Vec<usize> = sa.into_iter().collect();
    let mut agree = 0usize;
    let mut pairs = 0usize;
    for (x, &i) in machines.iter().enumerate() {
        for &j in &machines[x + 1..] {
            pairs += 1;
            if (la[i] == la[j]) == (lb[i] == lb[j]) {
                agree += 1;
            }
        }
    }
    Ok(ClusterComparison {
        pca_partition: pca_p.to_vec(),
        model_partition: model_p.to_vec(),
        agreement: if pairs == 0 { 1.0 } else { agree as f64 / pairs as f64 },
        moved_set: moved_machines(model_p, pca_p, n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_one_is_collinear() {
        let base: Vec<f64> = (0..50).map(|k| (k as f64 * 0.3).sin()).collect();
        let m = DMatrix::from_fn(4, 50, |i, k| (i + 1) as f64 * base[k]);
        let res = pca_weightings(&m, 2, true).unwrap();
        assert!(res.variances[1] < 1e-10);
        assert!(res.reconstruction_error(&m) < 1e-10);
        assert_eq!(res.warnings.len(), 1);
    }

    #[test]
    fn reconstruction_without_centering() {
        let m = DMatrix::from_fn(5, 40, |i, k| ((i * 7 + k * 3) % 11) as f64 - 2.0 + 0.01 * (k * k) as f64);
        let res = pca_weightings(&m, 3, false).unwrap();
        assert!(res.reconstruction_error(&m) < 1e-10);
        assert!(res.singular_values.windows(2).all(|w| w[0] >= w[1]));
        assert!(res.variances.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn two_tight_clusters() {
        let p = DMatrix::from_row_slice(6, 2, &[0.0, 0.0, 0.1, 0.0, 0.0, 0.1, 5.0, 5.0, 5.1, 5.0, 5.0, 5.1]);
        assert_eq!(cluster_coords(&p, 2), vec![vec![0, 1, 2], vec![3, 4, 5]]);
    }

    #[test]
    fn r_equal_rho_gives_singletons() {
        let p = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 3.0]);
        assert_eq!(cluster_coords(&p, 3), vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn duplicates_stay_together() {
        let p = DMatrix::from_row_slice(5, 1, &[0.0, 2.0, 2.0, 9.0, 10.0]);
        let parts = cluster_coords(&p, 3);
        assert!(parts.iter().any(|a| a.contains(&1) && a.contains(&2)));
    }

    #[test]
    fn agreement_scores() {
        let a = vec![vec![0, 1, 2], vec![3, 4]];
        let same = compare_partitions(&[vec![3, 4], vec![0, 1, 2]], &a).unwrap();
        assert_eq!(same.agreement, 1.0);
        assert!(same.moved_set.is_empty());

        let model: Vec<Vec<usize>> = vec![(0..8).collect(), (8..16).collect()];
        let pca: Vec<Vec<usize>> = vec![(0..7).collect(), (7..16).collect()];
        let c = compare_partitions(&pca, &model).unwrap();
        assert!(c.agreement < 1.0);
        assert_eq!(c.moved_set.len(), 1);
        assert!(compare_partitions(&[vec![0]], &[vec![1]]).is_err());
    }
}
