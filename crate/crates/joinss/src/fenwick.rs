//! Binary indexed tree over u128 counts with append and prefix search.

/// Prefix-sum tree supporting point increments, prefix sums, appends with
/// capacity doubling, and "smallest position with prefix >= target" descent.
/// Positions are 0-based.
#[derive(Debug, Clone, Default)]
pub struct Fenwick {
    values: Vec<u128>,
    tree: Vec<u128>,
}

impl Fenwick {
    pub fn new() -> Fenwick {
        Fenwick::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, pos: usize) -> u128 {
        self.values[pos]
    }

    /// Append a new slot; doubles and remaps the tree when capacity runs out.
    pub fn push(&mut self, value: u128) {
        self.values.push(0);
        if self.values.len() > self.tree.len() {
            let cap = (self.tree.len() * 2).max(4);
            self.rebuild(cap);
        }
        self.add(self.values.len() - 1, value);
    }

    fn rebuild(&mut self, cap: usize) {
        self.tree = vec![0u128; cap];
        for pos in 0..self.values.len() {
            let v = self.values[pos];
            let mut i = pos + 1;
            while i <= cap {
                self.tree[i - 1] += v;
                i += i & i.wrapping_neg();
            }
        }
    }

    pub fn add(&mut self, pos: usize, delta: u128) {
        if delta == 0 {
            return;
        }
        self.values[pos] += delta;
        let mut i = pos + 1;
        while i <= self.tree.len() {
            self.tree[i - 1] += delta;
            i += i & i.wrapping_neg();
        }
    }

    /// Sum of values at positions `0..=pos`.
    pub fn prefix(&self, pos: usize) -> u128 {
        let mut sum = 0;
        let mut i = (pos + 1).min(self.values.len());
        while i > 0 {
            sum += self.tree[i - 1];
            i -= i & i.wrapping_neg();
        }
        sum
    }

    pub fn total(&self) -> u128 {
        if self.values.is_empty() {
            0
        } else {
            self.prefix(self.values.len() - 1)
        }
    }

    /// Smallest position whose prefix sum reaches `target` (1-based target),
    /// or None when the total is too small.
    pub fn search(&self, target: u128) -> Option<usize> {
        if target == 0 || target > self.total() {
            return None;
        }
        let mut remaining = target;
        let mut pos = 0usize; // 1-based cursor into the tree
        let mut step = self.tree.len().next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= self.tree.len() && self.tree[next - 1] < remaining {
                remaining -= self.tree[next - 1];
                pos = next;
            }
            step >>= 1;
        }
        Some(pos) // first 0-based position with cumulative >= target
    }

    /// Sum within `0..=pos` restricted to positions at or after `start`.
    pub fn range_prefix(&self, start: usize, pos: usize) -> u128 {
        let upto = self.prefix(pos);
        if start == 0 {
            upto
        } else {
            upto - self.prefix(start - 1)
        }
    }
}
