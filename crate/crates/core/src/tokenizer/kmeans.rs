//! Lloyd's k-means with k-means++ seeding over row-major point sets.

use std::cmp::Ordering;

use rand::Rng;

pub const MAX_ITERS: usize = 100;
pub const REL_TOLERANCE: f64 = 1e-6;

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
pub(crate) fn nearest(centroids: &[f64], dim: usize, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

pub(crate) fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Number of bitwise-distinct rows.
pub(crate) fn count_distinct(points: &[f64], dim: usize) -> usize {
    let mut rows: Vec<&[f64]> = points.chunks_exact(dim).collect();
    rows.sort_by(|a, b| lex_cmp(a, b));
    rows.dedup_by(|a, b| lex_cmp(a, b).is_eq());
    rows.len()
}

fn plus_plus_init(points: &[f64], dim: usize, k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let n = points.len() / dim;
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(&points[first * dim..(first + 1) * dim]);
    let mut d2: Vec<f64> = points
        .chunks_exact(dim)
        .map(|p| sq_dist(p, &centroids[..dim]))
        .collect();
    while centroids.len() < k * dim {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = None;
            for (i, w) in d2.iter().enumerate() {
                if *w > 0.0 {
                    chosen = Some(i);
                    if target < *w {
                        break;
                    }
                    target -= w;
                }
            }
            chosen.expect("positive total weight has a positive entry")
        } else {
            // Only reachable when fewer than k distinct points exist, which
            // callers rule out beforehand.
            rng.random_range(0..n)
        };
        let c = points[pick * dim..(pick + 1) * dim].to_vec();
        for (w, p) in d2.iter_mut().zip(points.chunks_exact(dim)) {
            *w = w.min(sq_dist(p, &c));
        }
        centroids.extend(c);
    }
    centroids
}

/// Clusters `points` (row-major, `dim` columns) into `k` centroids. Returns
/// the centroid matrix, row-major, in no particular order.
pub fn kmeans(points: &[f64], dim: usize, k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let n = points.len() / dim;
    assert!(k >= 1 && k <= n, "k must be in 1..=n");
    let mut centroids = plus_plus_init(points, dim, k, rng);
    let mut assign = vec![0usize; n];
    let mut prev_inertia = f64::INFINITY;
    for _ in 0..MAX_ITERS {
        let mut inertia = 0.0;
        let mut dists = vec![0.0; n];
        for (i, p) in points.chunks_exact(dim).enumerate() {
            let (c, d) = nearest(&centroids, dim, p);
            assign[i] = c;
            dists[i] = d;
            inertia += d;
        }

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, p) in points.chunks_exact(dim).enumerate() {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i] * dim..(assign[i] + 1) * dim]
                .iter_mut()
                .zip(p)
            {
                *s += v;
            }
        }
        for c in 0..k {
            let row = &mut centroids[c * dim..(c + 1) * dim];
            if counts[c] == 0 {
                // Re-seed an empty cluster at the worst-served point.
                let far = (0..n)
                    .max_by(|a, b| dists[*a].total_cmp(&dists[*b]).then(b.cmp(a)))
                    .expect("non-empty point set");
                row.copy_from_slice(&points[far * dim..(far + 1) * dim]);
                dists[far] = 0.0;
            } else {
                for (r, s) in row.iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                    *r = s / counts[c] as f64;
                }
            }
        }

        if inertia == 0.0 || (prev_inertia - inertia).abs() <= REL_TOLERANCE * prev_inertia {
            break;
        }
        prev_inertia = inertia;
    }
    centroids
}

/// Sorts centroid rows lexicographically by coordinates.
pub(crate) fn canonical_sort(centroids: &[f64], dim: usize) -> Vec<f64> {
    let mut rows: Vec<&[f64]> = centroids.chunks_exact(dim).collect();
    rows.sort_by(|a, b| lex_cmp(a, b));
    rows.concat()
}
