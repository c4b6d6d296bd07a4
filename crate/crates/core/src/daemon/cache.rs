//! Least-recently-used cache of open backing files.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::hash::Hash;
use std::sync::Arc;

/// An open backing file plus the identity it was opened under, so a hit can
/// be checked against the current directory entry.
#[derive(Clone, Debug)]
pub struct CachedFile {
    pub file: Arc<File>,
    pub dev: u64,
    pub ino: u64,
}

/// Plain LRU map. Capacity zero disables caching entirely.
pub struct LruCache<K, V> {
    capacity: usize,
    tick: u64,
    entries: HashMap<K, (V, u64)>,
    order: BTreeMap<u64, K>,
}

impl<K: Eq + Hash + Clone, V: Clone> LruCache<K, V> {
    pub fn new(capacity: usize) -> Self {
        LruCache {
            capacity,
            tick: 0,
            entries: HashMap::new(),
            order: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&mut self, key: &K) -> Option<V> {
        self.tick += 1;
        let tick = self.tick;
        let (value, stamp) = self.entries.get_mut(key)?;
        self.order.remove(stamp);
        *stamp = tick;
        self.order.insert(tick, key.clone());
        Some(value.clone())
    }

    /// Inserts and returns whatever was evicted. Dropping an evicted file
    /// closes it once no request still holds it.
    pub fn insert(&mut self, key: K, value: V) -> Vec<V> {
        if self.capacity == 0 {
            return vec![value];
        }
        let mut evicted = Vec::new();
        if let Some(old) = self.remove(&key) {
            evicted.push(old);
        }
        self.tick += 1;
        self.order.insert(self.tick, key.clone());
        self.entries.insert(key, (value, self.tick));
        while self.entries.len() > self.capacity {
            let (_, oldest) = self.order.pop_first().expect("order tracks every entry");
            if let Some((v, _)) = self.entries.remove(&oldest) {
                evicted.push(v);
            }
        }
        evicted
    }

    pub fn remove(&mut self, key: &K) -> Option<V> {
        let (value, stamp) = self.entries.remove(key)?;
        self.order.remove(&stamp);
        Some(value)
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&K) -> bool) {
        let order = &mut self.order;
        self.entries.retain(|k, (_, stamp)| {
            let kept = keep(k);
            if !kept {
                order.remove(stamp);
            }
            kept
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn evicts_least_recently_used() {
        let mut c = LruCache::new(2);
        c.insert(1, "a");
        c.insert(2, "b");
        assert_eq!(c.get(&1), Some("a"));
        assert_eq!(c.insert(3, "c"), vec!["b"]);
        assert_eq!(c.get(&2), None);
        assert_eq!(c.get(&1), Some("a"));
        assert_eq!(c.get(&3), Some("c"));
    }

    #[test]
    fn zero_capacity_holds_nothing() {
        let mut c = LruCache::new(0);
        assert_eq!(c.insert(1, 1), vec![1]);
        assert!(c.is_empty());
        assert_eq!(c.get(&1), None);
    }

    #[test]
    fn retain_and_reinsert() {
        let mut c = LruCache::new(4);
        for k in 0..4 {
            c.insert(k, k * 10);
        }
        c.retain(|k| k % 2 == 0);
        assert_eq!(c.len(), 2);
        assert_eq!(c.insert(0, 1), vec![0]);
        assert_eq!(c.get(&0), Some(1));
    }

    proptest! {
        // Compared against a brute-force recency list.
        #[test]
        fn matches_reference_model(cap in 0usize..6, ops in proptest::collection::vec((any::<bool>(), 0u8..10), 0..200)) {
            let mut c = LruCache::new(cap);
            let mut model: Vec<(u8, u32)> = Vec::new();
            for (i, (is_get, k)) in ops.into_iter().enumerate() {
                if is_get {
                    let want = model.iter().position(|e| e.0 == k).map(|p| {
                        let e = model.remove(p);
                        model.push(e);
                        e.1
                    });
                    prop_assert_eq!(c.get(&k), want);
                } else {
                    c.insert(k, i as u32);
                    model.retain(|e| e.0 != k);
                    if cap > 0 {
                        model.push((k, i as u32));
                        if model.len() > cap {
                            model.remove(0);
                        }
                    }
                }
                prop_assert!(c.len() <= cap);
                prop_assert_eq!(c.len(), model.len());
            }
        }
    }
}
