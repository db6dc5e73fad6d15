//! Group-representation export, k-means clustering, and 2-D projection.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{DatasetSplit, Domain, SequenceExample};
use crate::error::{Error, Result};
use crate::model::ManModel;

/// Pooled group representation of one user in one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupReprRow {
    pub user_id: String,
    pub domain: Domain,
    pub vector: Vec<f64>,
    pub true_group: Option<usize>,
}

/// One row per user per domain, from the user's most recent training
/// sequence. `truth` maps user ids to planted groups when known.
pub fn export_group_representations(
    model: &ManModel,
    split: &DatasetSplit,
    truth: Option<&[(String, usize)]>,
) -> Result<Vec<GroupReprRow>> {
    let truth: BTreeMap<&str, usize> = truth
        .unwrap_or_default()
        .iter()
        .map(|(u, g)| (u.as_str(), *g))
        .collect();
    let mut rows = Vec::new();
    for d in Domain::BOTH {
        let parts = split.domain(d);
        let mut latest: BTreeMap<&str, &SequenceExample> = BTreeMap::new();
        for ex in parts.train.iter().filter(|e| e.label == 1) {
            let slot = latest.entry(ex.user_id.as_str()).or_insert(ex);
            if ex.timestamp > slot.timestamp {
                *slot = ex;
            }
        }
        let mut unseen: Vec<&str> = parts
            .validation
            .iter()
            .chain(&parts.test)
            .map(|e| e.user_id.as_str())
            .filter(|u| !latest.contains_key(u))
            .collect();
        unseen.sort_unstable();
        unseen.dedup();
        if !unseen.is_empty() {
            log::warn!("domain {d}: {} users without a training sequence skipped", unseen.len());
        }
        for (user, ex) in latest {
            let vector = model
                .group_representation(d, &ex.history, &ex.mask)?
                .ok_or_else(|| Error::InvalidArgument("model has no group-prototype attention".into()))?;
            rows.push(GroupReprRow {
                user_id: user.to_string(),
                domain: d,
                vector,
                true_group: truth.get(user).copied(),
            });
        }
    }
    Ok(rows)
}

/// `user_id,domain,true_group,v_0..v_{D-1}`; the group column is empty
/// when unknown.
pub fn export_csv(rows: &[GroupReprRow]) -> String {
    let dim = rows.first().map_or(0, |r| r.vector.len());
    let mut out = String::from("user_id,domain,true_group");
    for i in 0..dim {
        let _ = write!(out, ",v_{i}");
    }
    out.push('\n');
    for r in rows {
        let group = r.true_group.map(|g| g.to_string()).unwrap_or_default();
        let _ = write!(out, "{},{},{}", r.user_id, r.domain.tag(), group);
        for v in &r.vector {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// `user_id,domain,cluster,x,y`.
pub fn projection_csv(rows: &[GroupReprRow], clusters: &[usize], coords: &[[f64; 2]]) -> Result<String> {
    if rows.len() != clusters.len() || rows.len() != coords.len() {
        return Err(Error::Shape(format!(
            "{} rows, {} cluster labels, {} coordinates",
            rows.len(),
            clusters.len(),
            coords.len()
        )));
    }
    let mut out = String::from("user_id,domain,cluster,x,y\n");
    for ((r, c), [x, y]) in rows.iter().zip(clusters).zip(coords) {
        let _ = writeln!(out, "{},{},{c},{x},{y}", r.user_id, r.domain.tag());
    }
    Ok(out)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after every assignment step.
    pub history: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_rows(rows: &[Vec<f64>]) -> Result<usize> {
    let dim = rows.first().map_or(0, Vec::len);
    if let Some(r) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::Shape(format!("row of length {} among rows of length {dim}", r.len())));
    }
    Ok(dim)
}

/// k-means++ seeding.
fn seed_centroids(rows: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![rows[rng.gen_range(0..rows.len())].clone()];
    let mut d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = rows.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.gen_range(0..rows.len())
        };
        centroids.push(rows[next].clone());
        for (d, r) in d2.iter_mut().zip(rows) {
            *d = d.min(sq_dist(r, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn assign(rows: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut inertia = 0.0;
    let labels = rows
        .iter()
        .map(|r| {
            let (best, d) = centroids
                .iter()
                .enumerate()
                .map(|(j, c)| (j, sq_dist(r, c)))
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            inertia += d;
            best
        })
        .collect();
    (labels, inertia)
}

/// Lloyd's algorithm from k-means++ seeds; stops when assignments repeat or
/// after `max_iter` updates. A cluster that empties keeps its old centroid.
pub fn kmeans(rows: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<KMeans> {
    let dim = check_rows(rows)?;
    if k == 0 || k > rows.len() {
        return Err(Error::InvalidArgument(format!("k = {k} for {} rows", rows.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(rows, k, &mut rng);
    let (mut labels, mut inertia) = assign(rows, &centroids);
    let mut history = vec![inertia];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (r, &l) in rows.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(r) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        let (next, next_inertia) = assign(rows, &centroids);
        history.push(next_inertia);
        let stable = next == labels;
        labels = next;
        inertia = next_inertia;
        if stable {
            break;
        }
    }
    Ok(KMeans {
        assignments: labels,
        centroids,
        inertia,
        history,
        iterations,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub coords: Vec<[f64; 2]>,
    pub components: [Vec<f64>; 2],
    /// Variance along each component.
    pub explained: [f64; 2],
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn orthogonalize(v: &mut [f64], against: &[Vec<f64>]) {
    for u in against {
        let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
        v.iter_mut().zip(u).for_each(|(x, y)| *x -= d * y);
    }
}

/// Leading eigenpair of a symmetric PSD matrix, orthogonal to `found`.
fn power_iteration(cov: &[Vec<f64>], found: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let dim = cov.len();
    let mut v: Vec<f64> = (0..dim).map(|i| 1.0 + 0.1 * i as f64).collect();
    orthogonalize(&mut v, found);
    if normalize(&mut v) == 0.0 {
        v = vec![0.0; dim];
        v[dim - 1] = 1.0;
    }
    let mut value = 0.0;
    for _ in 0..10_000 {
        let mut w = mat_vec(cov, &v);
        orthogonalize(&mut w, found);
        let n = normalize(&mut w);
        if n == 0.0 {
            // Nothing left in the orthogonal complement: any unit vector there works.
            for axis in 0..dim {
                let mut e = vec![0.0; dim];
                e[axis] = 1.0;
                orthogonalize(&mut e, found);
                if normalize(&mut e) > 1e-6 {
                    return (e, 0.0);
                }
            }
            return (v, 0.0);
        }
        let delta = v.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = w;
        value = n;
        if delta < 1e-15 {
            break;
        }
    }
    (v, value)
}

/// Centres the rows and projects them onto the top two covariance
/// eigenvectors; each component's first nonzero loading is positive.
pub fn pca_2d(rows: &[Vec<f64>]) -> Result<Pca> {
    let dim = check_rows(rows)?;
    if rows.len() < 2 || dim == 0 {
        return Err(Error::InvalidArgument(format!("pca needs at least 2 rows, got {}", rows.len())));
    }
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..dim).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let centred: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect()).collect();
    let mut cov = vec![vec![0.0; dim]; dim];
    for r in &centred {
        for i in 0..dim {
            for j in 0..dim {
                cov[i][j] += r[i] * r[j] / n;
            }
        }
    }
    let scale = cov.iter().map(|row| row.iter().map(|x| x.abs()).fold(0.0, f64::max)).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::InvalidArgument("pca of rank-0 data".into()));
    }
    let mut comps: Vec<Vec<f64>> = Vec::with_capacity(2);
    let mut explained = [0.0; 2];
    for slot in &mut explained {
        if comps.len() == dim {
            break;
        }
        let (mut v, mut value) = power_iteration(&cov, &comps);
        if value < scale * 1e-13 {
            value = 0.0;
        }
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
        *slot = value;
        comps.push(v);
    }
    while comps.len() < 2 {
        comps.push(vec![0.0; dim]);
    }
    let coords = centred
        .iter()
        .map(|r| {
            let p = |c: &Vec<f64>| r.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            [p(&comps[0]), p(&comps[1])]
        })
        .collect();
    let [c0, c1]: [Vec<f64>; 2] = comps.try_into().expect("two components");
    Ok(Pca {
        coords,
        components: [c0, c1],
        explained,
    })
}

/// Fraction of points labelled correctly under the best one-to-one matching
/// of predicted clusters to true groups.
pub fn group_alignment_score(assignments: &[usize], truth: &[usize]) -> Result<f64> {
    if assignments.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} assignments for {} ground-truth labels",
            assignments.len(),
            truth.len()
        )));
    }
    if assignments.is_empty() {
        return Err(Error::InvalidArgument("alignment of zero points".into()));
    }
    let size = assignments.iter().chain(truth).max().map_or(0, |m| m + 1);
    let mut counts = vec![vec![0i64; size]; size];
    for (&a, &t) in assignments.iter().zip(truth) {
        counts[a][t] += 1;
    }
    let weights = Matrix::from_rows(counts).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let (matched, _) = kuhn_munkres(&weights);
    Ok(matched as f64 / assignments.len() as f64)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;

    fn blob(center: &[f64], n: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| center.iter().map(|c| c + sigma * (rng.gen::<f64>() * 2.0 - 1.0)).collect())
            .collect()
    }

    #[test]
    fn one_cluster_per_point_has_zero_inertia() {
        let rows = vec![vec![0.0, 1.0], vec![3.0, -1.0], vec![5.0, 5.0]];
        let km = kmeans(&rows, 3, 0, 50).unwrap();
        assert_eq!(km.inertia, 0.0);
        let mut a = km.assignments.clone();
        a.sort();
        assert_eq!(a, vec![0, 1, 2]);
    }

    #[test]
    fn single_cluster_centroid_is_the_mean() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 6.0], vec![5.0, 1.0]];
        let km = kmeans(&rows, 1, 4, 50).unwrap();
        assert!((km.centroids[0][0] - 3.0).abs() < 1e-12);
        assert!((km.centroids[0][1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn separated_blobs_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut rows = blob(&[0.0, 0.0], 30, 0.1, &mut rng);
        rows.extend(blob(&[1.0, 1.0], 30, 0.1, &mut rng));
        let truth: Vec<usize> = (0..60).map(|i| i / 30).collect();
        for seed in 0..10 {
            let km = kmeans(&rows, 2, seed, 100).unwrap();
            assert_eq!(group_alignment_score(&km.assignments, &truth).unwrap(), 1.0);
        }
    }

    #[test]
    fn too_many_clusters_is_an_error() {
        assert!(kmeans(&[vec![1.0]], 2, 0, 10).is_err());
        assert!(kmeans(&[vec![1.0], vec![1.0, 2.0]], 1, 0, 10).is_err());
    }

    #[test]
    fn collinear_points_have_no_second_coordinate() {
        let rows: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)]).collect();
        let p = pca_2d(&rows).unwrap();
        assert!(p.coords.iter().all(|c| c[1].abs() < 1e-9));
        assert!(p.explained[1].abs() < 1e-9);
    }

    #[test]
    fn axis_variances_are_recovered() {
        // Symmetric design: x in {±2}, y in {±1}, all four corners.
        let rows = vec![vec![2.0, 1.0], vec![2.0, -1.0], vec![-2.0, 1.0], vec![-2.0, -1.0]];
        let p = pca_2d(&rows).unwrap();
        assert!((p.explained[0] - 4.0).abs() < 1e-6);
        assert!((p.explained[1] - 1.0).abs() < 1e-6);
        assert!(p.components[0][0] > 0.0);
    }

    #[test]
    fn planar_data_keeps_pairwise_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..12).map(|_| vec![rng.gen::<f64>() * 4.0, rng.gen::<f64>()]).collect();
        let p = pca_2d(&rows).unwrap();
        for i in 0..rows.len() {
            for j in 0..rows.len() {
                let d_in = sq_dist(&rows[i], &rows[j]);
                let d_out = sq_dist(&p.coords[i], &p.coords[j]);
                assert!((d_in - d_out).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn constant_rows_are_rank_zero() {
        assert!(pca_2d(&[vec![1.0, 2.0], vec![1.0, 2.0]]).is_err());
        assert!(pca_2d(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn alignment_of_identical_and_permuted_labels() {
        let truth = vec![0, 0, 1, 1, 2, 2, 3];
        assert_eq!(group_alignment_score(&truth, &truth).unwrap(), 1.0);
        let permuted: Vec<usize> = truth.iter().map(|&t| (t + 2) % 4).collect();
        assert_eq!(group_alignment_score(&permuted, &truth).unwrap(), 1.0);
        assert!(group_alignment_score(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn random_balanced_labels_align_near_chance() {
        let n = 400;
        let truth: Vec<usize> = (0..n).map(|i| i % 4).collect();
        let mut total = 0.0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let guess: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
            total += group_alignment_score(&guess, &truth).unwrap();
        }
        let mean = total / 20.0;
        assert!((mean - 0.25).abs() < 0.05, "{mean}");
    }

    #[test]
    fn csv_layouts() {
        let rows = vec![
            GroupReprRow { user_id: "u1".into(), domain: Domain::A, vector: vec![0.5, -1.0], true_group: Some(2) },
            GroupReprRow { user_id: "u2".into(), domain: Domain::B, vector: vec![1.0, 0.0], true_group: None },
        ];
        let csv = export_csv(&rows);
        assert_eq!(csv, "user_id,domain,true_group,v_0,v_1\nu1,a,2,0.5,-1\nu2,b,,1,0\n");
        let proj = projection_csv(&rows, &[1, 0], &[[0.0, 1.0], [2.0, 3.0]]).unwrap();
        assert_eq!(proj.lines().count(), 3);
        assert!(projection_csv(&rows, &[1], &[[0.0, 1.0]]).is_err());
    }

    fn arb_rows() -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 4..20)
    }

    proptest! {
        #[test]
        fn inertia_never_increases(rows in arb_rows(), k in 1usize..4, seed in 0u64..50) {
            let km = kmeans(&rows, k, seed, 100).unwrap();
            for w in km.history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9);
            }
        }

        #[test]
        fn pca_ignores_row_order(rows in arb_rows(), rot in 0usize..20) {
            prop_assume!(pca_2d(&rows).is_ok());
            let p = pca_2d(&rows).unwrap();
            // Well-separated eigenvalues only; otherwise the plane is ambiguous.
            prop_assume!(p.explained[0] - p.explained[1] > 1e-3 * p.explained[0]);
            let mut shuffled = rows.clone();
            shuffled.rotate_left(rot % rows.len());
            let q = pca_2d(&shuffled).unwrap();
            for i in 0..rows.len() {
                let j = (i + rows.len() - rot % rows.len()) % rows.len();
                prop_assert!((p.coords[i][0].abs() - q.coords[j][0].abs()).abs() < 1e-6);
            }
        }

        #[test]
        fn alignment_ignores_relabeling(truth in prop::collection::vec(0usize..4, 1..40), guess_seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(guess_seed);
            let guess: Vec<usize> = truth.iter().map(|_| rng.gen_range(0..4)).collect();
            let base = group_alignment_score(&guess, &truth).unwrap();
            let relabeled: Vec<usize> = guess.iter().map(|&g| 3 - g).collect();
            prop_assert!((group_alignment_score(&relabeled, &truth).unwrap() - base).abs() < 1e-12);
            let relabeled_truth: Vec<usize> = truth.iter().map(|&t| (t + 1) % 4).collect();
            prop_assert!((group_alignment_score(&guess, &relabeled_truth).unwrap() - base).abs() < 1e-12);
        }
    }
}
