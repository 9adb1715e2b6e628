//! Set-associative cache model for node-record accesses.
//!
//! The tree does not cache data — node records live in ordinary memory.
//! This models which record accesses would hit a small dedicated cache so
//! that backends can be compared on locality, not just operation counts.

/// Geometry of the node cache. The default is an 8 KiB, 2-way cache holding
/// 32-byte node records: 128 sets of 2 lines.
#[derive(Debug, Clone, Copy)]
pub struct CacheConfig {
    pub size_bytes: usize,
    pub ways: usize,
    pub record_bytes: usize,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            size_bytes: 8 * 1024,
            ways: 2,
            record_bytes: 32,
        }
    }
}

impl CacheConfig {
    pub fn sets(&self) -> usize {
        (self.size_bytes / (self.ways * self.record_bytes)).max(1)
    }
}

#[derive(Debug, Clone, Copy)]
struct Line {
    tag: u64,
    /// Larger value = more recently used.
    lru: u64,
}

/// LRU set-associative cache over node ids. One record per line.
#[derive(Debug, Clone)]
pub struct NodeCache {
    sets: Vec<Vec<Line>>,
    ways: usize,
    tick: u64,
}

impl NodeCache {
    pub fn new(config: CacheConfig) -> Self {
        NodeCache {
            sets: vec![Vec::new(); config.sets()],
            ways: config.ways,
            tick: 0,
        }
    }

    /// Access the record of node `n`; returns true on hit.
    pub fn access(&mut self, n: u64) -> bool {
        self.tick += 1;
        let nsets = self.sets.len() as u64;
        let set = &mut self.sets[(n % nsets) as usize];
        let tag = n / nsets;

        if let Some(line) = set.iter_mut().find(|l| l.tag == tag) {
            line.lru = self.tick;
            return true;
        }
        if set.len() < self.ways {
            set.push(Line { tag, lru: self.tick });
        } else {
            // Evict the least recently used line.
            let victim = set
                .iter_mut()
                .min_by_key(|l| l.lru)
                .expect("cache set cannot be empty here");
            *victim = Line { tag, lru: self.tick };
        }
        false
    }

    pub fn clear(&mut self) {
        for set in &mut self.sets {
            set.clear();
        }
        self.tick = 0;
    }
}
