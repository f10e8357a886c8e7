//! Deterministic hashing and small partition helpers.

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Order-sensitive combination of a seed with a sequence of words.
pub fn derive_seed(seed: u64, words: &[u64]) -> u64 {
    words.iter().fold(mix64(seed), |h, &w| mix64(h ^ mix64(w)))
}

/// FNV-1a over 64-bit words; stable across runs and platforms.
#[derive(Clone, Copy, Debug)]
pub struct Fingerprint(u64);

impl Default for Fingerprint {
    fn default() -> Self {
        Fingerprint(0xcbf2_9ce4_8422_2325)
    }
}

impl Fingerprint {
    pub fn write(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    pub fn write_str(&mut self, s: &str) {
        for b in s.bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
        self.write(s.len() as u64);
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

/// Canonical cluster label per mention: the smallest mention id in its cluster.
pub fn canonical_labels(n: usize, clusters: &[Vec<usize>]) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).collect();
    for c in clusters {
        let min = *c.iter().min().expect("non-empty cluster");
        for &m in c {
            labels[m] = min;
        }
    }
    labels
}

/// Groups mentions by label. Clusters come out ordered by first mention and
/// sorted internally.
pub fn labels_to_partition(labels: &[usize]) -> Vec<Vec<usize>> {
    let mut slot = std::collections::HashMap::new();
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (m, &l) in labels.iter().enumerate() {
        let i = *slot.entry(l).or_insert_with(|| {
            out.push(Vec::new());
            out.len() - 1
        });
        out[i].push(m);
    }
    out
}

/// Connected components of `n` mentions under `links`.
pub fn partition_from_links(n: usize, links: impl IntoIterator<Item = (usize, usize)>) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (a, b) in links {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let labels: Vec<usize> = (0..n).map(|m| find(&mut parent, m)).collect();
    labels_to_partition(&labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn links_close_transitively() {
        assert_eq!(
            partition_from_links(4, [(2, 1), (1, 0)]),
            vec![vec![0, 1, 2], vec![3]]
        );
        assert_eq!(canonical_labels(4, &[vec![3, 1]]), vec![0, 1, 2, 1]);
    }

    #[test]
    fn derive_seed_is_order_sensitive() {
        assert_ne!(derive_seed(1, &[2, 3]), derive_seed(1, &[3, 2]));
        assert_eq!(derive_seed(1, &[2, 3]), derive_seed(1, &[2, 3]));
    }
}
