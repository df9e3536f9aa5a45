//! Average-linkage agglomerative clustering on cosine distance.

use super::DiarizeError;

pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    1.0 - dot / (na * nb)
}

/// Upper-triangular distance storage.
struct Condensed {
    n: usize,
    d: Vec<f64>,
}

impl Condensed {
    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.d[self.idx(i, j)]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.d[k] = v;
    }
}

/// Clusters `points` into exactly `k` groups.
///
/// Repeatedly merges the closest pair of clusters (mean pairwise cosine
/// distance); among equally close pairs the one with the lowest indices goes
/// first. Labels are numbered by each cluster's first member.
pub fn agglomerative(points: &[Vec<f64>], k: usize) -> Result<Vec<usize>, DiarizeError> {
    let n = points.len();
    if k == 0 || n < k {
        return Err(DiarizeError::TooFewSegments { found: n, clusters: k });
    }
    let mut dist = Condensed {
        n,
        d: Vec::with_capacity(n * n.saturating_sub(1) / 2),
    };
    for i in 0..n {
        for j in i + 1..n {
            dist.d.push(cosine_distance(&points[i], &points[j]));
        }
    }
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut parent: Vec<usize> = (0..n).collect();
    // Nearest active neighbour with a larger index, lowest index on ties.
    let mut nn = vec![usize::MAX; n];
    let mut nn_dist = vec![f64::INFINITY; n];

    let rescan = |i: usize, active: &[bool], dist: &Condensed| -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for j in i + 1..n {
            if active[j] {
                let d = dist.get(i, j);
                if d < best.1 {
                    best = (j, d);
                }
            }
        }
        best
    };
    for i in 0..n {
        (nn[i], nn_dist[i]) = rescan(i, &active, &dist);
    }

    let mut clusters = n;
    while clusters > k {
        let mut a = usize::MAX;
        let mut best = f64::INFINITY;
        for i in 0..n {
            if active[i] && nn[i] != usize::MAX && nn_dist[i] < best {
                best = nn_dist[i];
                a = i;
            }
        }
        let b = nn[a];
        debug_assert!(a < b);
        let (sa, sb) = (size[a] as f64, size[b] as f64);
        for c in 0..n {
            if active[c] && c != a && c != b {
                let merged = (sa * dist.get(a, c) + sb * dist.get(b, c)) / (sa + sb);
                dist.set(a, c, merged);
            }
        }
        active[b] = false;
        size[a] += size[b];
        parent[b] = a;
        clusters -= 1;

        (nn[a], nn_dist[a]) = rescan(a, &active, &dist);
        for c in 0..n {
            if !active[c] || c == a {
                continue;
            }
            if nn[c] == a || nn[c] == b {
                (nn[c], nn_dist[c]) = rescan(c, &active, &dist);
            } else if c < a {
                let d = dist.get(c, a);
                if d < nn_dist[c] || (d == nn_dist[c] && a < nn[c]) {
                    nn[c] = a;
                    nn_dist[c] = d;
                }
            }
        }
    }

    let root = |mut i: usize| {
        while parent[i] != i {
            i = parent[i];
        }
        i
    };
    let mut label_of_root = vec![usize::MAX; n];
    let mut next = 0;
    Ok((0..n)
        .map(|i| {
            let r = root(i);
            if label_of_root[r] == usize::MAX {
                label_of_root[r] = next;
                next += 1;
            }
            label_of_root[r]
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Reference implementation: full scan of all cluster pairs per merge.
    fn naive(points: &[Vec<f64>], k: usize) -> Vec<usize> {
        let mut clusters: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
        while clusters.len() > k {
            let mut best = (f64::INFINITY, 0, 0);
            for a in 0..clusters.len() {
                for b in a + 1..clusters.len() {
                    let mut s = 0.0;
                    for &i in &clusters[a] {
                        for &j in &clusters[b] {
                            s += cosine_distance(&points[i], &points[j]);
                        }
                    }
                    let d = s / (clusters[a].len() * clusters[b].len()) as f64;
                    if d < best.0 - 1e-12 {
                        best = (d, a, b);
                    }
                }
            }
            let merged = clusters.remove(best.2);
            clusters[best.1].extend(merged);
        }
        let mut labels = vec![0; points.len()];
        let mut order: Vec<usize> = (0..clusters.len()).collect();
        order.sort_by_key(|&c| *clusters[c].iter().min().unwrap());
        for (label, &c) in order.iter().enumerate() {
            for &i in &clusters[c] {
                labels[i] = label;
            }
        }
        labels
    }

    fn blob(center: &[f64], n: usize, spread: f64, rng: &mut impl Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| center.iter().map(|c| c + rng.gen_range(-spread..spread)).collect())
            .collect()
    }

    #[test]
    fn k_equal_to_n_gives_singletons() {
        let pts: Vec<Vec<f64>> = (0..5).map(|i| vec![1.0, i as f64]).collect();
        assert_eq!(agglomerative(&pts, 5).unwrap(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn too_few_points_is_an_error() {
        let pts = vec![vec![1.0, 0.0]];
        assert!(matches!(
            agglomerative(&pts, 2),
            Err(DiarizeError::TooFewSegments { found: 1, clusters: 2 })
        ));
    }

    #[test]
    fn two_blobs_match_best_bipartition() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut pts = blob(&[1.0, 0.1, 0.0], 6, 0.05, &mut rng);
        pts.extend(blob(&[0.0, 0.1, 1.0], 6, 0.05, &mut rng));
        // Brute force: the 2-partition with the smallest within-cluster
        // distance sum over all 2^11 - 1 splits.
        let n = pts.len();
        let mut best = (f64::INFINITY, 0u32);
        for mask in 1u32..(1 << (n - 1)) {
            let mut cost = 0.0;
            for i in 0..n {
                for j in i + 1..n {
                    if (mask >> i & 1) == (mask >> j & 1) {
                        cost += cosine_distance(&pts[i], &pts[j]);
                    }
                }
            }
            if cost < best.0 {
                best = (cost, mask);
            }
        }
        let labels = agglomerative(&pts, 2).unwrap();
        for i in 0..n {
            for j in 0..n {
                let same_oracle = (best.1 >> i & 1) == (best.1 >> j & 1);
                assert_eq!(labels[i] == labels[j], same_oracle);
            }
        }
        assert!(labels[..6].iter().all(|&l| l == labels[0]));
        assert!(labels[6..].iter().all(|&l| l == labels[6]));
    }

    #[test]
    fn duplicated_points_share_labels() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let base: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut pts = base.clone();
        pts.extend(base.clone());
        let labels = agglomerative(&pts, 3).unwrap();
        for i in 0..8 {
            assert_eq!(labels[i], labels[i + 8]);
        }
    }

    #[test]
    fn ties_break_towards_lowest_pair() {
        // Four identical points: merges go (0,1), then (0,2), then stop at k=2.
        let pts = vec![vec![1.0, 0.0]; 4];
        assert_eq!(agglomerative(&pts, 2).unwrap(), vec![0, 0, 0, 1]);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(40))]
        #[test]
        fn matches_naive_linkage(seed in 0u64..5000, n in 2usize..25, k in 1usize..6) {
            let k = k.min(n);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            proptest::prop_assert_eq!(agglomerative(&pts, k).unwrap(), naive(&pts, k));
        }
    }
}
