use std::collections::{BTreeMap, HashMap};

use super::{ItemEmbedding, SidCodebooks, SidSequence};
use crate::error::{Error, Result};

/// Prefix trie over the code sequences present in a corpus.
#[derive(Debug, Clone, Default)]
pub struct SidTrie {
    // node -> sorted (code, child) pairs; node 0 is the root
    nodes: Vec<Vec<(u32, usize)>>,
    leaves: usize,
}

impl SidTrie {
    pub fn new() -> Self {
        SidTrie {
            nodes: vec![Vec::new()],
            leaves: 0,
        }
    }

    pub fn insert(&mut self, codes: &[u32]) {
        let mut node = 0;
        let mut created = false;
        for &code in codes {
            let children = &self.nodes[node];
            node = match children.binary_search_by_key(&code, |&(c, _)| c) {
                Ok(pos) => children[pos].1,
                Err(pos) => {
                    let child = self.nodes.len();
                    self.nodes.push(Vec::new());
                    self.nodes[node].insert(pos, (code, child));
                    created = true;
                    child
                }
            };
        }
        if created {
            self.leaves += 1;
        }
    }

    fn walk(&self, prefix: &[u32]) -> Option<usize> {
        let mut node = 0;
        for &code in prefix {
            let children = &self.nodes[node];
            let pos = children.binary_search_by_key(&code, |&(c, _)| c).ok()?;
            node = children[pos].1;
        }
        Some(node)
    }

    /// Valid next codes after `prefix`, ascending. Empty when the prefix is
    /// not in the trie or is already complete.
    pub fn children(&self, prefix: &[u32]) -> Vec<u32> {
        self.walk(prefix)
            .map(|n| self.nodes[n].iter().map(|&(c, _)| c).collect())
            .unwrap_or_default()
    }

    pub fn contains_prefix(&self, prefix: &[u32]) -> bool {
        self.walk(prefix).is_some()
    }

    /// Number of root-to-leaf paths, i.e. distinct inserted sequences.
    pub fn path_count(&self) -> usize {
        self.leaves
    }

    pub fn is_empty(&self) -> bool {
        self.leaves == 0
    }
}

/// Bidirectional item ↔ SID map plus the trie used for constrained decoding.
#[derive(Debug, Clone)]
pub struct SidIndex {
    depth: usize,
    size: usize,
    forward: HashMap<String, SidSequence>,
    inverse: BTreeMap<SidSequence, Vec<String>>,
    trie: SidTrie,
}

impl SidIndex {
    /// Encode every item and index it.
    ///
    /// Items sharing a sequence land in one bucket ordered by `popularity`
    /// (descending, ties in input order). With `dedup_level` an extra code
    /// holding each item's rank inside its bucket is appended, making every
    /// sequence unique.
    pub fn build(
        codebooks: &SidCodebooks,
        embeddings: &[ItemEmbedding],
        popularity: Option<&HashMap<String, u64>>,
        dedup_level: bool,
    ) -> Result<Self> {
        let mut assignments = Vec::with_capacity(embeddings.len());
        for e in embeddings {
            assignments.push((e.item_id.clone(), codebooks.encode(e)?));
        }
        Self::from_assignments(
            codebooks.size(),
            codebooks.levels(),
            assignments,
            popularity,
            dedup_level,
        )
    }

    /// Index precomputed `(item, sequence)` pairs.
    pub fn from_assignments(
        size: usize,
        levels: usize,
        assignments: Vec<(String, SidSequence)>,
        popularity: Option<&HashMap<String, u64>>,
        dedup_level: bool,
    ) -> Result<Self> {
        let mut buckets: BTreeMap<SidSequence, Vec<String>> = BTreeMap::new();
        for (item, seq) in assignments {
            if seq.len() != levels {
                return Err(Error::DimensionMismatch {
                    expected: levels,
                    got: seq.len(),
                });
            }
            if let Some(&bad) = seq.0.iter().find(|&&c| c as usize >= size) {
                return Err(Error::InvalidArgument(format!(
                    "code {bad} outside codebook of size {size}"
                )));
            }
            buckets.entry(seq).or_default().push(item);
        }
        if let Some(pop) = popularity {
            for items in buckets.values_mut() {
                // stable: equal counts keep insertion order
                items.sort_by_key(|i| std::cmp::Reverse(pop.get(i).copied().unwrap_or(0)));
            }
        }

        let depth = if dedup_level { levels + 1 } else { levels };
        let mut forward = HashMap::new();
        let mut inverse = BTreeMap::new();
        let mut trie = SidTrie::new();
        for (seq, items) in buckets {
            if dedup_level {
                if items.len() > size {
                    return Err(Error::InvalidArgument(format!(
                        "collision bucket of {} items exceeds codebook size {size}",
                        items.len()
                    )));
                }
                for (rank, item) in items.into_iter().enumerate() {
                    let mut codes = seq.0.clone();
                    codes.push(rank as u32);
                    let ext = SidSequence(codes);
                    trie.insert(&ext.0);
                    if forward.insert(item.clone(), ext.clone()).is_some() {
                        return Err(Error::InvalidArgument(format!("duplicate item {item}")));
                    }
                    inverse.insert(ext, vec![item]);
                }
            } else {
                trie.insert(&seq.0);
                for item in &items {
                    if forward.insert(item.clone(), seq.clone()).is_some() {
                        return Err(Error::InvalidArgument(format!("duplicate item {item}")));
                    }
                }
                inverse.insert(seq, items);
            }
        }
        Ok(SidIndex {
            depth,
            size,
            forward,
            inverse,
            trie,
        })
    }

    /// Codes per sequence (including the disambiguation level, if any).
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn codebook_size(&self) -> usize {
        self.size
    }

    pub fn num_items(&self) -> usize {
        self.forward.len()
    }

    pub fn num_sequences(&self) -> usize {
        self.inverse.len()
    }

    pub fn sid(&self, item: &str) -> Option<&SidSequence> {
        self.forward.get(item)
    }

    /// Items sharing `seq`, most popular first.
    pub fn items(&self, seq: &SidSequence) -> &[String] {
        self.inverse.get(seq).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn buckets(&self) -> impl Iterator<Item = (&SidSequence, &[String])> {
        self.inverse.iter().map(|(s, v)| (s, v.as_slice()))
    }

    pub fn trie(&self) -> &SidTrie {
        &self.trie
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(c: &[u32]) -> SidSequence {
        SidSequence(c.to_vec())
    }

    #[test]
    fn trie_counts_and_children() {
        let mut t = SidTrie::new();
        t.insert(&[1, 2]);
        t.insert(&[1, 3]);
        t.insert(&[0, 2]);
        t.insert(&[1, 2]);
        assert_eq!(t.path_count(), 3);
        assert_eq!(t.children(&[]), vec![0, 1]);
        assert_eq!(t.children(&[1]), vec![2, 3]);
        assert!(t.children(&[2]).is_empty());
        assert!(t.children(&[1, 2]).is_empty());
        assert!(t.contains_prefix(&[0, 2]));
        assert!(!t.contains_prefix(&[0, 3]));
    }

    #[test]
    fn collisions_share_a_bucket_in_popularity_order() {
        let pairs = vec![
            ("a".to_string(), seq(&[0, 1])),
            ("b".to_string(), seq(&[0, 1])),
            ("c".to_string(), seq(&[2, 0])),
        ];
        let pop: HashMap<String, u64> = [("a".into(), 1), ("b".into(), 5)].into();
        let idx = SidIndex::from_assignments(4, 2, pairs.clone(), Some(&pop), false).unwrap();
        assert_eq!(idx.items(&seq(&[0, 1])), &["b".to_string(), "a".to_string()]);
        assert_eq!(idx.num_sequences(), 2);
        assert_eq!(idx.trie().path_count(), 2);

        let plain = SidIndex::from_assignments(4, 2, pairs.clone(), None, false).unwrap();
        assert_eq!(plain.items(&seq(&[0, 1])), &["a".to_string(), "b".to_string()]);

        let dedup = SidIndex::from_assignments(4, 2, pairs, Some(&pop), true).unwrap();
        assert_eq!(dedup.depth(), 3);
        assert_eq!(dedup.sid("b").unwrap(), &seq(&[0, 1, 0]));
        assert_eq!(dedup.sid("a").unwrap(), &seq(&[0, 1, 1]));
        assert_eq!(dedup.trie().path_count(), 3);
    }

    #[test]
    fn rejects_out_of_range_codes() {
        let pairs = vec![("a".to_string(), seq(&[0, 9]))];
        assert!(SidIndex::from_assignments(4, 2, pairs, None, false).is_err());
    }
}
