//! The overall request queue: unsent packet sequence numbers with O(log n)
//! positional access.
//!
//! Positions are counted over live entries only. The front region holds
//! reinserted (timed-out or rejected) sequence numbers in ascending order;
//! behind it sit the never-sent sequence numbers of the task in ascending
//! order. Taking an entry from the middle leaves a tombstone in the fresh
//! region's bitmap and a Fenwick tree keeps live counts so that the k-th
//! live entry is found without scanning.

use std::collections::VecDeque;
use std::ops::Range;

#[derive(Debug, Clone)]
struct Fenwick {
    tree: Vec<u32>,
}

impl Fenwick {
    fn full(n: usize) -> Self {
        let mut tree = vec![0u32; n + 1];
        for i in 1..=n {
            tree[i] += 1;
            let parent = i + (i & i.wrapping_neg());
            if parent <= n {
                tree[parent] += tree[i];
            }
        }
        Self { tree }
    }

    fn add(&mut self, idx: usize, delta: i32) {
        let mut i = idx + 1;
        while i < self.tree.len() {
            self.tree[i] = (self.tree[i] as i32 + delta) as u32;
            i += i & i.wrapping_neg();
        }
    }

    /// Number of live slots in `[0, idx)`.
    fn prefix(&self, idx: usize) -> usize {
        let mut i = idx.min(self.tree.len() - 1);
        let mut sum = 0usize;
        while i > 0 {
            sum += self.tree[i] as usize;
            i -= i & i.wrapping_neg();
        }
        sum
    }

    /// Slot index of the k-th (0-based) live slot.
    fn select(&self, mut k: usize) -> usize {
        let n = self.tree.len() - 1;
        let mut pos = 0usize;
        let mut step = if n == 0 { 0 } else { 1usize << (usize::BITS - 1 - n.leading_zeros()) };
        while step > 0 {
            let next = pos + step;
            if next <= n && (self.tree[next] as usize) <= k {
                pos = next;
                k -= self.tree[next] as usize;
            }
            step >>= 1;
        }
        pos
    }
}

#[derive(Debug, Clone)]
pub struct RequestQueue {
    base: u64,
    retransmit: VecDeque<u64>,
    live: Vec<bool>,
    counts: Fenwick,
    fresh_len: usize,
}

impl RequestQueue {
    /// A queue holding every sequence number of `range` in order.
    pub fn new(range: Range<u64>) -> Self {
        let n = (range.end - range.start) as usize;
        Self { base: range.start, retransmit: VecDeque::new(), live: vec![true; n], counts: Fenwick::full(n), fresh_len: n }
    }

    pub fn len(&self) -> usize {
        self.retransmit.len() + self.fresh_len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sequence number at a live position.
    pub fn get(&self, pos: usize) -> Option<u64> {
        if pos < self.retransmit.len() {
            return Some(self.retransmit[pos]);
        }
        let k = pos - self.retransmit.len();
        if k >= self.fresh_len {
            return None;
        }
        Some(self.base + self.counts.select(k) as u64)
    }

    pub fn contains(&self, seq: u64) -> bool {
        self.fresh_slot(seq).is_some_and(|i| self.live[i]) || self.retransmit.contains(&seq)
    }

    fn fresh_slot(&self, seq: u64) -> Option<usize> {
        seq.checked_sub(self.base).map(|d| d as usize).filter(|&d| d < self.live.len())
    }

    /// Removes a sequence number wherever it sits. Returns whether it was
    /// present.
    pub fn remove(&mut self, seq: u64) -> bool {
        if let Some(i) = self.retransmit.iter().position(|&s| s == seq) {
            self.retransmit.remove(i);
            return true;
        }
        match self.fresh_slot(seq) {
            Some(i) if self.live[i] => {
                self.live[i] = false;
                self.counts.add(i, -1);
                self.fresh_len -= 1;
                true
            }
            _ => false,
        }
    }

    /// Reinserts a sequence number into the front region, keeping it sorted.
    pub fn push_front(&mut self, seq: u64) {
        debug_assert!(!self.contains(seq));
        let at = self.retransmit.partition_point(|&s| s < seq);
        self.retransmit.insert(at, seq);
    }

    /// Number of leading positions whose sequence number is below `limit`.
    /// Front-region entries were all sent under an earlier, lower window,
    /// so the eligible positions always form a prefix.
    pub fn positions_below(&self, limit: u64) -> usize {
        let front = self.retransmit.iter().take_while(|&&s| s < limit).count();
        if front < self.retransmit.len() {
            return front;
        }
        let slots = limit.saturating_sub(self.base).min(self.live.len() as u64) as usize;
        front + self.counts.prefix(slots)
    }

    /// Live entries in positional order.
    pub fn iter(&self) -> impl Iterator<Item = u64> + '_ {
        let base = self.base;
        self.retransmit
            .iter()
            .copied()
            .chain(self.live.iter().enumerate().filter(|(_, &l)| l).map(move |(i, _)| base + i as u64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn positional_access_skips_taken_slots() {
        let mut q = RequestQueue::new(10..20);
        assert_eq!(q.get(0), Some(10));
        assert!(q.remove(12));
        assert!(q.remove(13));
        assert_eq!(q.get(2), Some(14));
        assert_eq!(q.len(), 8);
        q.push_front(13);
        assert_eq!(q.get(0), Some(13));
        assert_eq!(q.get(3), Some(14));
        assert_eq!(q.positions_below(15), 4);
        assert!(!q.remove(12));
    }

    proptest! {
        #[test]
        fn matches_a_two_region_vec_model(n in 1u64..200, ops in proptest::collection::vec((0u8..2, 0usize..400), 0..300)) {
            let mut q = RequestQueue::new(0..n);
            let mut front: Vec<u64> = Vec::new();
            let mut fresh: Vec<u64> = (0..n).collect();
            let mut taken: Vec<u64> = Vec::new();
            for (op, arg) in ops {
                let len = front.len() + fresh.len();
                if op == 0 && len > 0 {
                    let pos = arg % len;
                    let expect = if pos < front.len() { front.remove(pos) } else { fresh.remove(pos - front.len()) };
                    prop_assert_eq!(q.get(pos), Some(expect));
                    prop_assert!(q.remove(expect));
                    taken.push(expect);
                } else if op == 1 && !taken.is_empty() {
                    let seq = taken.swap_remove(arg % taken.len());
                    q.push_front(seq);
                    let at = front.partition_point(|&s| s < seq);
                    front.insert(at, seq);
                }
                let model: Vec<u64> = front.iter().chain(fresh.iter()).copied().collect();
                prop_assert_eq!(q.len(), model.len());
                let listed: Vec<u64> = q.iter().collect();
                prop_assert_eq!(&listed, &model);
                for (i, s) in model.iter().enumerate() {
                    prop_assert_eq!(q.get(i), Some(*s));
                    prop_assert!(q.contains(*s));
                }
            }
        }
    }
}
