//! LRU map from hot keys to the location of their newest version.

use std::num::NonZeroUsize;

use lru::LruCache;

use crate::ftl::{FlashLocation, Key, Timestamp};

/// Accounted bytes per cache slot: 4 address, 16 LRU links.
pub const CACHE_ENTRY_BYTES: u64 = 20;
/// Host bytes per cached entry beyond the accounted figure (key, timestamp).
const CACHE_KEY_BYTES: u64 = 16 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheEntry {
    pub loc: FlashLocation,
    pub ts: Timestamp,
}

pub struct TranslationCache {
    lru: Option<LruCache<Key, CacheEntry>>,
    capacity: usize,
    hits: u64,
    misses: u64,
}

impl TranslationCache {
    /// A capacity of zero disables caching; every probe misses.
    pub fn new(capacity: usize) -> Self {
        TranslationCache {
            lru: NonZeroUsize::new(capacity).map(LruCache::new),
            capacity,
            hits: 0,
            misses: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.lru.as_ref().map_or(0, |l| l.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Looks a key up, promoting it on a hit, and counts the outcome.
    pub fn probe(&mut self, key: &Key) -> Option<CacheEntry> {
        let found = self.lru.as_mut().and_then(|l| l.get(key).copied());
        if found.is_some() {
            self.hits += 1;
        } else {
            self.misses += 1;
        }
        found
    }

    pub fn insert(&mut self, key: Key, e: CacheEntry) {
        if let Some(l) = self.lru.as_mut() {
            l.put(key, e);
        }
    }

    /// Updates an entry only if the key is already cached, without
    /// changing its recency.
    pub fn refresh(&mut self, key: &Key, e: CacheEntry) {
        if let Some(slot) = self.lru.as_mut().and_then(|l| l.peek_mut(key)) {
            *slot = e;
        }
    }

    /// Every cached entry, most recent first.
    pub fn entries(&self) -> Vec<(Key, CacheEntry)> {
        self.lru.as_ref().map_or_else(Vec::new, |l| l.iter().map(|(k, e)| (*k, *e)).collect())
    }

    pub fn peek(&self, key: &Key) -> Option<CacheEntry> {
        self.lru.as_ref().and_then(|l| l.peek(key).copied())
    }

    pub fn clear(&mut self) {
        if let Some(l) = self.lru.as_mut() {
            l.clear();
        }
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn reset_counters(&mut self) {
        self.hits = 0;
        self.misses = 0;
    }

    pub fn accounted_bytes(&self) -> u64 {
        CACHE_ENTRY_BYTES * self.capacity as u64
    }

    pub fn key_bytes(&self) -> u64 {
        CACHE_KEY_BYTES * self.len() as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(page: u32) -> CacheEntry {
        CacheEntry { loc: FlashLocation::new(page, 0).unwrap(), ts: page as u64 }
    }

    #[test]
    fn evicts_least_recently_used() {
        let mut c = TranslationCache::new(2);
        c.insert(Key::from_u64(1), e(1));
        c.insert(Key::from_u64(2), e(2));
        assert!(c.probe(&Key::from_u64(1)).is_some());
        c.insert(Key::from_u64(3), e(3));
        assert!(c.peek(&Key::from_u64(2)).is_none());
        assert!(c.peek(&Key::from_u64(1)).is_some());
        assert_eq!((c.hits(), c.misses()), (1, 0));
    }

    #[test]
    fn refresh_leaves_absent_keys_out() {
        let mut c = TranslationCache::new(4);
        c.refresh(&Key::from_u64(1), e(1));
        assert!(c.is_empty());
        c.insert(Key::from_u64(1), e(1));
        c.refresh(&Key::from_u64(1), e(9));
        assert_eq!(c.peek(&Key::from_u64(1)), Some(e(9)));
    }

    #[test]
    fn zero_capacity_always_misses() {
        let mut c = TranslationCache::new(0);
        c.insert(Key::from_u64(1), e(1));
        assert_eq!(c.probe(&Key::from_u64(1)), None);
        assert_eq!(c.misses(), 1);
        assert_eq!(c.accounted_bytes(), 0);
    }
}
