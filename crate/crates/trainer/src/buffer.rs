use pac_algo::Episode;
use rand::seq::index;
use rand::Rng;

/// Ring buffer of whole episodes.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: Vec<Episode>,
    /// Slot the next insertion overwrites once full.
    head: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            episodes: Vec::with_capacity(capacity.min(4096)),
            head: 0,
            inserted: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Total insertions since creation.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, episode: Episode) {
        if self.episodes.len() < self.capacity {
            self.episodes.push(episode);
        } else {
            self.episodes[self.head] = episode;
            self.head = (self.head + 1) % self.capacity;
        }
        self.inserted += 1;
    }

    /// Stored episodes, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Episode> {
        let (newer, older) = self.episodes.split_at(self.head);
        older.iter().chain(newer)
    }

    /// `n` distinct episodes drawn uniformly, or `None` when fewer are
    /// stored.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Option<Vec<&Episode>> {
        if n > self.episodes.len() {
            return None;
        }
        Some(
            index::sample(rng, self.episodes.len(), n)
                .into_iter()
                .map(|i| &self.episodes[i])
                .collect(),
        )
    }
}
