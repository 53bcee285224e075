use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use rastp_core::sid::{encode_item, fit_codebooks, ItemEmbedding, SidCodebooks, SidIndex};

fn gaussian_items(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<ItemEmbedding> {
    let normal = Normal::new(0.0f32, 1.0).unwrap();
    (0..n)
        .map(|i| ItemEmbedding::new(format!("i{i}"), (0..dim).map(|_| normal.sample(rng)).collect()))
        .collect()
}

/// Residual nearest-centroid scan, one level at a time, with plain loops.
fn exhaustive_encode(cb: &SidCodebooks, v: &[f32]) -> Vec<u32> {
    let mut r: Vec<f64> = v.iter().map(|&x| f64::from(x)).collect();
    let mut codes = Vec::new();
    for l in 0..cb.levels() {
        let mut best = (f64::INFINITY, 0usize);
        for c in 0..cb.size() {
            let d: f64 = cb
                .centroid(l, c)
                .iter()
                .zip(&r)
                .map(|(&a, &b)| (f64::from(a) - b).powi(2))
                .sum();
            if d < best.0 {
                best = (d, c);
            }
        }
        for (x, &c) in r.iter_mut().zip(cb.centroid(l, best.1)) {
            *x -= f64::from(c);
        }
        codes.push(best.1 as u32);
    }
    codes
}

#[test]
fn encode_matches_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let items = gaussian_items(&mut rng, 300, 12);
    let cb = fit_codebooks(&items, 3, 8, 25, 7).unwrap();
    for e in items.iter().take(100) {
        assert_eq!(encode_item(&cb, e).unwrap().0, exhaustive_encode(&cb, &e.vector));
    }
}

#[test]
fn fitting_is_deterministic_in_the_seed() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let items = gaussian_items(&mut rng, 120, 6);
    let a = fit_codebooks(&items, 2, 6, 20, 3).unwrap();
    let b = fit_codebooks(&items, 2, 6, 20, 3).unwrap();
    let c = fit_codebooks(&items, 2, 6, 20, 4).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.level(0), c.level(0));
}

#[test]
fn first_level_recovers_separated_clusters() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dim = 16;
    let normal = Normal::new(0.0f32, 1.0).unwrap();
    let centers: Vec<Vec<f32>> = (0..8)
        .map(|_| (0..dim).map(|_| normal.sample(&mut rng) * 10.0).collect())
        .collect();
    let items: Vec<ItemEmbedding> = (0..400)
        .map(|i| {
            let c = &centers[i % 8];
            let v = c.iter().map(|&x| x + 0.1 * normal.sample(&mut rng)).collect();
            ItemEmbedding::new(format!("i{i}"), v)
        })
        .collect();
    let cb = fit_codebooks(&items, 2, 8, 30, 11).unwrap();
    // the first-level code is a relabelling of the true cluster
    let mut map: HashMap<usize, u32> = HashMap::new();
    for (i, e) in items.iter().enumerate() {
        let code = cb.encode(e).unwrap().0[0];
        assert_eq!(*map.entry(i % 8).or_insert(code), code);
    }
    let distinct: HashSet<u32> = map.values().copied().collect();
    assert_eq!(distinct.len(), 8);
}

#[test]
fn mean_residual_shrinks_with_depth() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let items = gaussian_items(&mut rng, 400, 10);
    let cb = fit_codebooks(&items, 4, 8, 30, 5).unwrap();
    let mut per_level = vec![0.0f64; 4];
    for e in &items {
        let (_, res) = cb.encode_with_residual(&e.vector).unwrap();
        for (acc, r) in per_level.iter_mut().zip(res) {
            *acc += r;
        }
    }
    let base: f64 = items
        .iter()
        .map(|e| e.vector.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>())
        .sum();
    let mut prev = base;
    for r in per_level {
        assert!(r < prev, "{r} !< {prev}");
        prev = r;
    }
}

#[test]
fn codebooks_round_trip_through_disk() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let items = gaussian_items(&mut rng, 50, 4);
    let cb = fit_codebooks(&items, 2, 4, 10, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cb.bin");
    cb.save(&path).unwrap();
    let back = SidCodebooks::load(&path).unwrap();
    assert_eq!(cb, back);
    for e in &items {
        assert_eq!(cb.encode(e).unwrap(), back.encode(e).unwrap());
    }
}

#[test]
fn trie_paths_equal_distinct_sequences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let items = gaussian_items(&mut rng, 200, 8);
    let cb = fit_codebooks(&items, 3, 4, 15, 2).unwrap();
    let index = SidIndex::build(&cb, &items, None, false).unwrap();
    let distinct: HashSet<Vec<u32>> = items.iter().map(|e| cb.encode(e).unwrap().0).collect();
    assert_eq!(index.trie().path_count(), distinct.len());
    assert_eq!(index.num_sequences(), distinct.len());
    assert_eq!(index.num_items(), items.len());
    for seq in &distinct {
        for l in 0..=seq.len() {
            assert!(index.trie().contains_prefix(&seq[..l]));
        }
    }
    // every indexed item is found in its own bucket
    for e in &items {
        let sid = index.sid(&e.item_id).unwrap();
        assert!(index.items(sid).contains(&e.item_id));
    }
}

#[test]
fn popularity_orders_collision_buckets() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let items = gaussian_items(&mut rng, 60, 3);
    // two levels of two codes cannot separate 60 items
    let cb = fit_codebooks(&items, 2, 2, 10, 2).unwrap();
    let pop: HashMap<String, u64> = items
        .iter()
        .map(|e| (e.item_id.clone(), rng.random_range(0..5)))
        .collect();
    let index = SidIndex::build(&cb, &items, Some(&pop), false).unwrap();
    let mut seen = 0;
    for (_, bucket) in index.buckets() {
        seen += bucket.len();
        for w in bucket.windows(2) {
            assert!(pop[&w[0]] >= pop[&w[1]]);
        }
    }
    assert_eq!(seen, items.len());
}
