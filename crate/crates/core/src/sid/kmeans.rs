//! Lloyd's k-means with k-means++ seeding, used once per quantization level.

use rand::Rng;

/// Squared Euclidean distance, accumulated in f64.
pub(crate) fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let t = f64::from(x) - f64::from(y);
            t * t
        })
        .sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
pub(crate) fn nearest(point: &[f32], centroids: &[f32], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let dist = sq_dist(point, c);
        if dist < best.1 {
            best = (j, dist);
        }
    }
    best
}

fn plus_plus_init<R: Rng>(data: &[f32], n: usize, dim: usize, k: usize, rng: &mut R) -> Vec<f32> {
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(&data[first * dim..(first + 1) * dim]);

    let mut d2: Vec<f64> = data
        .chunks_exact(dim)
        .map(|p| sq_dist(p, &centroids[..dim]))
        .collect();

    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    chosen = Some(i);
                    break;
                }
            }
            // Rounding can leave `target` at the very top of the range.
            chosen.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap_or(0))
        } else {
            rng.random_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(&data[pick * dim..(pick + 1) * dim]);
        for (p, slot) in data.chunks_exact(dim).zip(d2.iter_mut()) {
            let dist = sq_dist(p, &centroids[start..]);
            if dist < *slot {
                *slot = dist;
            }
        }
    }
    centroids
}

/// Fit `k` centroids to the `n × dim` row-major `data`.
///
/// Clusters that empty out during an iteration are re-seeded with the point
/// farthest from its own centroid, taken from a cluster with more than one
/// member.
pub(crate) fn fit<R: Rng>(
    data: &[f32],
    n: usize,
    dim: usize,
    k: usize,
    iters: usize,
    rng: &mut R,
) -> Vec<f32> {
    debug_assert!(n >= k && k >= 1);
    let mut centroids = plus_plus_init(data, n, dim, k, rng);
    let mut assign = vec![usize::MAX; n];
    let mut dist = vec![0.0f64; n];

    for _ in 0..iters {
        let mut changed = false;
        for (i, p) in data.chunks_exact(dim).enumerate() {
            let (j, d) = nearest(p, &centroids, dim);
            if assign[i] != j {
                changed = true;
                assign[i] = j;
            }
            dist[i] = d;
        }

        let mut counts = vec![0usize; k];
        for &j in &assign {
            counts[j] += 1;
        }
        for empty in 0..k {
            if counts[empty] > 0 {
                continue;
            }
            let donor = (0..n)
                .filter(|&i| counts[assign[i]] > 1)
                .fold(None::<usize>, |best, i| match best {
                    Some(b) if dist[b] >= dist[i] => Some(b),
                    _ => Some(i),
                });
            if let Some(i) = donor {
                counts[assign[i]] -= 1;
                assign[i] = empty;
                counts[empty] = 1;
                dist[i] = 0.0;
                changed = true;
            }
        }

        let mut sums = vec![0.0f64; k * dim];
        for (p, &j) in data.chunks_exact(dim).zip(&assign) {
            for (s, &x) in sums[j * dim..(j + 1) * dim].iter_mut().zip(p) {
                *s += f64::from(x);
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let inv = 1.0 / counts[j] as f64;
            for (c, &s) in centroids[j * dim..(j + 1) * dim]
                .iter_mut()
                .zip(&sums[j * dim..(j + 1) * dim])
            {
                *c = (s * inv) as f32;
            }
        }

        if !changed {
            break;
        }
    }
    centroids
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_cluster_is_the_mean() {
        let data = [0.0f32, 0.0, 2.0, 4.0, 4.0, 2.0];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = fit(&data, 3, 2, 1, 5, &mut rng);
        assert_eq!(c, vec![2.0, 2.0]);
    }

    #[test]
    fn nearest_prefers_lowest_index_on_ties() {
        let centroids = [1.0f32, 0.0, -1.0, 0.0];
        assert_eq!(nearest(&[0.0, 0.0], &centroids, 2).0, 0);
    }

    #[test]
    fn empty_cluster_gets_refilled() {
        // Two identical points and one outlier with k = 3: duplicates force
        // a collision during seeding, leaving one cluster empty.
        let data = [0.0f32, 0.0, 0.0, 10.0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = fit(&data, 4, 1, 3, 10, &mut rng);
        let mut live = [0usize; 3];
        for p in data.chunks_exact(1) {
            live[nearest(p, &c, 1).0] += 1;
        }
        assert!(c.iter().all(|x| x.is_finite()));
        assert_eq!(live.iter().sum::<usize>(), 4);
    }
}
