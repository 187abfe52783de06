//! Slow-coherency identification.
//!
//! The `r` eigenvalues of `M⁻¹ℒ` smallest in magnitude span the slow
//! subspace. Full-pivot elimination on those eigenvectors picks one reference
//! machine per area; expressing every row in reference coordinates gives the
//! grouping matrix `V_L = V V_r1⁻¹`, whose rows sum to one, and each machine
//! joins the area of its largest entry.
//!
//! ```
//! use nalgebra::DMatrix;
//! use windcoh::coherency::identify;
//!
//! // two pairs of machines, tightly coupled inside each pair
//! let mut l = DMatrix::zeros(4, 4);
//! for (i, j, w) in [(0, 1, 100.0), (2, 3, 100.0), (1, 2, 1.0)] {
//!     l[(i, j)] = w;
//!     l[(j, i)] = w;
//! }
//! let l = windcoh::linalg::make_laplacian(&l);
//! let (_, part) = identify(&[1.0; 4], &l, 2).unwrap();
//! let mut areas = part.areas.clone();
//! for a in &mut areas {
//!     a.sort();
//! }
//! areas.sort();
//! assert_eq!(areas, vec![vec![0, 1], vec![2, 3]]);
//! ```

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, C64};
use crate::linearize::scale_rows;

/// Two eigenvalues count as degenerate within this relative distance.
pub const GAP_TOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct SlowEigenspace {
    /// `n × r` real basis of the slow subspace.
    pub v: DMatrix<f64>,
    /// Selected eigenvalues, ascending in magnitude.
    pub eigenvalues: Vec<C64>,
    /// `|λ_{r+1}| / |λ_r|`; infinite when `r = n`.
    pub gap_ratio: f64,
    /// Invariant-subspace residual `‖AV − V(V⁺AV)‖_F / ‖V‖_F`.
    pub residual: f64,
    pub warnings: Vec<String>,
}

impl SlowEigenspace {
    pub fn r(&self) -> usize {
        self.v.ncols()
    }

    /// `√|λ|/2π` for the selected eigenvalues after the zero mode.
    pub fn frequencies_hz(&self) -> Vec<f64> {
        self.eigenvalues.iter().skip(1).map(|l| l.norm().sqrt() / (2.0 * std::f64::consts::PI)).collect()
    }
}

fn magnitude_order(ev: &[C64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ev.len()).collect();
    order.sort_by(|&a, &b| {
        ev[a].norm()
            .total_cmp(&ev[b].norm())
            .then(ev[a].re.total_cmp(&ev[b].re))
            .then(ev[b].im.total_cmp(&ev[a].im))
    });
    order
}

/// Real basis of the slow subspace of `M⁻¹ℒ`.
///
/// Eigenvectors come from the null space of `A − λI`. A complex pair inside
/// the selection contributes its real and imaginary parts, orthonormalised
/// against each other; a pair cut by the selection boundary contributes only
/// its real part, with a warning.
pub fn slow_eigenbasis(m: &[f64], l: &DMatrix<f64>, r: usize) -> Result<SlowEigenspace> {
    let n = l.nrows();
    if r == 0 || r > n || m.len() != n {
        return Err(Error::Domain(format!("need 1 ≤ r ≤ n = {n}, got r = {r}")));
    }
    let a = scale_rows(l, m);
    let ev = linalg::eigenvalues(&a);
    let order = magnitude_order(&ev);
    let sel: Vec<C64> = order[..r].iter().map(|&k| ev[k]).collect();
    let mut warnings = Vec::new();
    let gap_ratio = if r < n { ev[order[r]].norm() / sel[r - 1].norm() } else { f64::INFINITY };
    if r < n {
        let (lo, hi) = (sel[r - 1].norm(), ev[order[r]].norm());
        if (hi - lo).abs() <= GAP_TOL * hi.max(f64::MIN_POSITIVE) {
            warnings.push(format!("eigenvalues {r} and {} are degenerate (|λ| = {lo:.6e}, {hi:.6e})", r + 1));
        }
    }

    let mut v = DMatrix::zeros(n, r);
    let mut col = 0;
    while col < r {
        let lam = sel[col];
        if lam.im == 0.0 {
            v.set_column(col, &linalg::real_eigenvector(&a, lam.re));
            col += 1;
            continue;
        }
        let w = linalg::complex_eigenvector(&a, lam);
        let mut re = w.map(|z| z.re);
        let mut im = w.map(|z| z.im);
        let paired = col + 1 < r && (sel[col + 1] - lam.conj()).norm() <= 1e-9 * lam.norm().max(1.0);
        let nr = re.norm();
        if nr > 0.0 {
            re /= nr;
        }
        if paired {
            im -= &re * re.dot(&im);
            let ni = im.norm();
            if ni > 0.0 {
                im /= ni;
            }
            v.set_column(col, &re);
            v.set_column(col + 1, &im);
            col += 2;
        } else {
            warnings.push(format!("complex pair at |λ| = {:.6e} is split by r = {r}; only its real part is used", lam.norm()));
            v.set_column(col, &re);
            col += 1;
        }
    }

    let av = &a * &v;
    let proj = v.clone().pseudo_inverse(1e-14).map_err(|e| Error::Domain(e.to_string()))? * &av;
    let residual = (av - &v * proj).norm() / v.norm();
    Ok(SlowEigenspace { v, eigenvalues: sel, gap_ratio, residual, warnings })
}

/// Reference rows from Gaussian elimination with full pivoting.
///
/// Columns are scaled to unit 2-norm first, so the choice does not depend on
/// how the eigenvectors happen to be normalised. Ties go to the first maximum
/// in row-major order.
pub fn reference_machines(v: &DMatrix<f64>) -> Result<Vec<usize>> {
    let (n, r) = v.shape();
    if r > n {
        return Err(Error::Domain(format!("{r} columns but only {n} rows")));
    }
    let mut w = v.clone();
    for mut c in w.column_iter_mut() {
        let norm = c.norm();
        if norm > 0.0 {
            c /= norm;
        }
    }
    let scale = w.amax();
    let mut rows: Vec<usize> = (0..n).collect();
    let mut cols: Vec<usize> = (0..r).collect();
    let mut refs = Vec::with_capacity(r);
    for _ in 0..r {
        let (mut bi, mut bj, mut best) = (0, 0, -1.0);
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                if w[(i, j)].abs() > best {
                    (bi, bj, best) = (a, b, w[(i, j)].abs());
                }
            }
        }
        if best <= 1e-12 * scale || scale == 0.0 {
            return Err(Error::Domain("eigenvector matrix is rank deficient; no pivot left".into()));
        }
        let (pi, pj) = (rows.remove(bi), cols.remove(bj));
        refs.push(pi);
        let pivot_row = w.row(pi).into_owned();
        for &i in &rows {
            let factor = w[(i, pj)] / pivot_row[pj];
            for j in 0..r {
                w[(i, j)] -= factor * pivot_row[j];
            }
        }
    }
    Ok(refs)
}

/// `V_L = V V_r1⁻¹`, where `V_r1` are the reference rows of `V`.
pub fn grouping_matrix(v: &DMatrix<f64>, refs: &[usize]) -> Result<DMatrix<f64>> {
    let vr1 = linalg::rows(v, refs);
    let f = linalg::Factored::new(&vr1, "reference rows of the slow eigenbasis (try a different r)")?;
    Ok(v * f.inverse)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherencyPartition {
    /// Machine indices per area; the reference machine is listed first.
    pub areas: Vec<Vec<usize>>,
    pub reference_machines: Vec<usize>,
    pub r: usize,
    pub grouping_matrix: DMatrix<f64>,
    /// Gap between the largest and second largest `|V_L(i,·)|`.
    pub assignment_margins: Vec<f64>,
    /// Machines whose largest entry was shared by several areas.
    pub ties: Vec<usize>,
}

impl CoherencyPartition {
    pub fn n(&self) -> usize {
        self.grouping_matrix.nrows()
    }

    pub fn labels(&self) -> Vec<usize> {
        let mut lab = vec![0; self.n()];
        for (a, members) in self.areas.iter().enumerate() {
            for &i in members {
                lab[i] = a;
            }
        }
        lab
    }

    /// Largest deviation of a `V_L` row sum from one.
    pub fn hyperplane_error(&self) -> f64 {
        self.grouping_matrix.row_iter().map(|row| (row.sum() - 1.0).abs()).fold(0.0, f64::max)
    }
}

/// Assign each machine to the area of its largest `|V_L|` entry.
pub fn assign_areas(vl: &DMatrix<f64>, refs: &[usize]) -> CoherencyPartition {
    let (n, r) = vl.shape();
    let mut areas: Vec<Vec<usize>> = refs.iter().map(|&i| vec![i]).collect();
    let mut margins = vec![0.0; n];
    let mut ties = Vec::new();
    for i in 0..n {
        let mut best = 0;
        for j in 1..r {
            if vl[(i, j)].abs() > vl[(i, best)].abs() {
                best = j;
            }
        }
        let top = vl[(i, best)].abs();
        let second = (0..r).filter(|&j| j != best).map(|j| vl[(i, j)].abs()).fold(f64::NEG_INFINITY, f64::max);
        margins[i] = if r > 1 { top - second } else { top };
        if r > 1 && second == top {
            ties.push(i);
        }
        if refs.contains(&i) {
            continue;
        }
        areas[best].push(i);
    }
    for a in &mut areas {
        a[1..].sort_unstable();
    }
    CoherencyPartition {
        areas,
        reference_machines: refs.to_vec(),
        r,
        grouping_matrix: vl.clone(),
        assignment_margins: margins,
        ties,
    }
}

/// Algorithm 1 end to end.
pub fn identify(m: &[f64], l: &DMatrix<f64>, r: usize) -> Result<(SlowEigenspace, CoherencyPartition)> {
    let space = slow_eigenbasis(m, l, r)?;
    let refs = reference_machines(&space.v)?;
    let vl = grouping_matrix(&space.v, &refs)?;
    Ok((space, assign_areas(&vl, &refs)))
}

/// Labels per machine from area lists.
pub fn labels_of(areas: &[Vec<usize>], n: usize) -> Vec<usize> {
    let mut lab = vec![usize::MAX; n];
    for (a, members) in areas.iter().enumerate() {
        for &i in members {
            lab[i] = a;
        }
    }
    lab
}

/// Label map from areas of `a` to areas of `b` with the largest total overlap.
///
/// Exhaustive over permutations up to 8 areas, greedy above; unmatched areas
/// map to `None`. Among equal overlaps the lexicographically first map wins.
pub fn match_labels(a: &[Vec<usize>], b: &[Vec<usize>]) -> Vec<Option<usize>> {
    let overlap: Vec<Vec<usize>> = a
        .iter()
        .map(|x| {
            let xs: BTreeSet<usize> = x.iter().copied().collect();
            b.iter().map(|y| y.iter().filter(|i| xs.contains(i)).count()).collect()
        })
        .collect();
    let k = a.len().max(b.len());
    if k <= 8 {
        let mut best: (usize, Vec<usize>) = (0, Vec::new());
        let mut perm: Vec<usize> = (0..k).collect();
        let mut first = true;
        loop {
            let score: usize = (0..a.len()).filter(|&i| perm[i] < b.len()).map(|i| overlap[i][perm[i]]).sum();
            if first || score > best.0 {
                best = (score, perm.clone());
                first = false;
            }
            if !next_permutation(&mut perm) {
                break;
            }
        }
        (0..a.len()).map(|i| (best.1[i] < b.len()).then_some(best.1[i])).collect()
    } else {
        let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
        for (i, row) in overlap.iter().enumerate() {
            for (j, &o) in row.iter().enumerate() {
                pairs.push((o, i, j));
            }
        }
        pairs.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        let mut map = vec![None; a.len()];
        let mut used = vec![false; b.len()];
        for (_, i, j) in pairs {
            if map[i].is_none() && !used[j] {
                map[i] = Some(j);
                used[j] = true;
            }
        }
        map
    }
}

fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Machines outside their matched area, under the best label matching.
pub fn moved_machines(a: &[Vec<usize>], b: &[Vec<usize>], n: usize) -> BTreeSet<usize> {
    let map = match_labels(a, b);
    let (la, lb) = (labels_of(a, n), labels_of(b, n));
    (0..n).filter(|&i| la[i] == usize::MAX || map[la[i]] != Some(lb[i])).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionDistance {
    pub moved: BTreeSet<usize>,
    /// `(reference in the first partition, reference in the matched area of the second)`.
    pub reference_changes: Vec<(usize, usize)>,
}

pub fn partition_distance(p1: &CoherencyPartition, p2: &CoherencyPartition) -> PartitionDistance {
    let n = p1.n();
    let moved = moved_machines(&p1.areas, &p2.areas, n);
    let map = match_labels(&p1.areas, &p2.areas);
    let mut reference_changes = Vec::new();
    for (a, target) in map.iter().enumerate() {
        if let Some(b) = target {
            let (r1, r2) = (p1.reference_machines[a], p2.reference_machines[*b]);
            if r1 != r2 {
                reference_changes.push((r1, r2));
            }
        }
    }
    PartitionDistance { moved, reference_changes }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> DMatrix<f64> {
        let mut l = DMatrix::zeros(4, 4);
        for (i, j, w) in [(0, 1, 100.0), (2, 3, 100.0), (1, 2, 1.0)] {
            l[(i, j)] = w;
            l[(j, i)] = w;
        }
        linalg::make_laplacian(&l)
    }

    #[test]
    fn dc_mode_is_constant() {
        let s = slow_eigenbasis(&[1.0; 4], &toy(), 2).unwrap();
        let c = s.v.column(0);
        let mean = c.sum() / 4.0;
        assert!(c.iter().all(|x| (x - mean).abs() < 1e-12));
        assert!(s.residual < 1e-10);
    }

    #[test]
    fn toy_second_mode_matches_aggregate() {
        // aggregate: two unit-inertia pairs joined by coupling 1 -> λ = −1
        let s = slow_eigenbasis(&[1.0; 4], &toy(), 2).unwrap();
        assert!((s.eigenvalues[1].re + 1.0).abs() < 0.02);
        let v = s.v.column(1);
        assert!(v[0] * v[1] > 0.0 && v[2] * v[3] > 0.0 && v[0] * v[3] < 0.0);
    }

    #[test]
    fn identity_references() {
        let mut v = DMatrix::zeros(5, 3);
        v[(1, 0)] = 1.0;
        v[(3, 1)] = 1.0;
        v[(4, 2)] = 1.0;
        let mut refs = reference_machines(&v).unwrap();
        refs.sort();
        assert_eq!(refs, vec![1, 3, 4]);
        let vl = grouping_matrix(&v, &[1, 3, 4]).unwrap();
        for (k, &i) in [1usize, 3, 4].iter().enumerate() {
            for j in 0..3 {
                assert_eq!(vl[(i, j)], if j == k { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn rank_deficient_is_error() {
        let v = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(reference_machines(&v).is_err());
    }

    #[test]
    fn toy_row_and_margin() {
        let (_, p) = identify(&[1.0; 4], &toy(), 2).unwrap();
        assert!(p.hyperplane_error() < 1e-10);
        for i in 0..4 {
            let a = p.labels()[i];
            assert!((p.grouping_matrix[(i, a)] - 1.0).abs() < 0.05);
        }
        assert!(p.ties.is_empty());
    }

    #[test]
    fn distances() {
        let a = vec![vec![0, 1], vec![2, 3]];
        let b = vec![vec![3, 2], vec![1, 0]];
        assert!(moved_machines(&a, &b, 4).is_empty());
        let c = vec![vec![0, 1, 2], vec![3]];
        assert_eq!(moved_machines(&a, &c, 4), BTreeSet::from([2]));
        assert_eq!(moved_machines(&c, &a, 4), BTreeSet::from([2]));
    }

    #[test]
    fn permutation_enumeration() {
        let mut p = vec![0, 1, 2];
        let mut count = 1;
        while next_permutation(&mut p) {
            count += 1;
        }
        assert_eq!(count, 6);
    }
}
