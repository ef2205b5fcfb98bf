use crate::rng::SplitMix64;

/// KLL quantile sketch over `f64` values.
///
/// Level `h` holds items of weight `2^h`. When the sketch is over capacity
/// the lowest overfull level is sorted and compacted: a random half (odd or
/// even positions) is promoted to the next level. Exact minimum and maximum
/// are tracked on the side.
#[derive(Clone, Debug)]
pub struct QuantileSketch {
    k: usize,
    levels: Vec<Vec<f64>>,
    count: u64,
    min: f64,
    max: f64,
    rng: SplitMix64,
}

const CAPACITY_DECAY: f64 = 2.0 / 3.0;
const MIN_LEVEL_CAPACITY: usize = 2;

impl QuantileSketch {
    pub const DEFAULT_K: usize = 1000;

    pub fn new(k: usize, seed: u64) -> Self {
        assert!(k >= 8, "k must be at least 8");
        Self {
            k,
            levels: vec![Vec::new()],
            count: 0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            rng: SplitMix64::new(seed),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Approximate normalized rank error for a single quantile query at
    /// roughly 99% confidence.
    pub fn epsilon(&self) -> f64 {
        2.446 / (self.k as f64).powf(0.9433)
    }

    fn level_capacity(&self, level: usize) -> usize {
        let depth = self.levels.len() - level - 1;
        let cap = (self.k as f64 * CAPACITY_DECAY.powi(depth as i32)).ceil() as usize;
        cap.max(MIN_LEVEL_CAPACITY)
    }

    fn total_capacity(&self) -> usize {
        (0..self.levels.len()).map(|l| self.level_capacity(l)).sum()
    }

    fn retained(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn insert(&mut self, value: f64) {
        if value.is_nan() {
            return;
        }
        self.count += 1;
        self.min = self.min.min(value);
        self.max = self.max.max(value);
        self.levels[0].push(value);
        while self.retained() > self.total_capacity() {
            self.compact();
        }
    }

    fn compact(&mut self) {
        let level = (0..self.levels.len())
            .find(|&l| self.levels[l].len() >= self.level_capacity(l))
            .expect("an over-capacity sketch has an overfull level");
        if level + 1 == self.levels.len() {
            self.levels.push(Vec::new());
        }
        let mut items = std::mem::take(&mut self.levels[level]);
        items.sort_by(f64::total_cmp);
        // An odd item out stays behind at this level.
        if items.len() % 2 == 1 {
            let keep = items.pop().expect("non-empty");
            self.levels[level].push(keep);
        }
        let offset = usize::from(self.rng.next_bool());
        let promoted: Vec<f64> = items.iter().skip(offset).step_by(2).copied().collect();
        self.levels[level + 1].extend(promoted);
    }

    pub fn merge(&mut self, other: &QuantileSketch) {
        if other.is_empty() {
            return;
        }
        while self.levels.len() < other.levels.len() {
            self.levels.push(Vec::new());
        }
        for (mine, theirs) in self.levels.iter_mut().zip(&other.levels) {
            mine.extend_from_slice(theirs);
        }
        self.count += other.count;
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
        while self.retained() > self.total_capacity() {
            self.compact();
        }
    }

    /// Smallest retained value whose cumulative weight reaches `q * n`.
    /// `q <= 0` gives the exact minimum and `q >= 1` the exact maximum.
    pub fn query(&self, q: f64) -> Option<f64> {
        if self.is_empty() {
            return None;
        }
        if q <= 0.0 {
            return Some(self.min);
        }
        if q >= 1.0 {
            return Some(self.max);
        }
        let mut weighted: Vec<(f64, u64)> = self
            .levels
            .iter()
            .enumerate()
            .flat_map(|(l, items)| items.iter().map(move |&v| (v, 1u64 << l)))
            .collect();
        weighted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: u64 = weighted.iter().map(|w| w.1).sum();
        let target = (q * total as f64).ceil().max(1.0) as u64;
        let mut acc = 0u64;
        for (v, w) in weighted {
            acc += w;
            if acc >= target {
                return Some(v);
            }
        }
        Some(self.max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rank_error(sorted: &[f64], v: f64, q: f64) -> f64 {
        let lo = sorted.partition_point(|&x| x < v) as f64;
        let hi = sorted.partition_point(|&x| x <= v) as f64;
        let target = q * sorted.len() as f64;
        if target < lo {
            lo - target
        } else if target > hi {
            target - hi
        } else {
            0.0
        }
    }

    #[test]
    fn exact_below_capacity() {
        let mut s = QuantileSketch::new(200, 0);
        for v in 1..=100 {
            s.insert(v as f64);
        }
        assert_eq!(s.query(0.5), Some(50.0));
        assert_eq!(s.query(0.0), Some(1.0));
        assert_eq!(s.query(1.0), Some(100.0));
    }

    #[test]
    fn single_value_for_any_q() {
        let mut s = QuantileSketch::new(200, 0);
        s.insert(7.0);
        for q in [0.0, 0.3, 0.5, 1.0] {
            assert_eq!(s.query(q), Some(7.0));
        }
    }

    #[test]
    fn large_stream_rank_error_bounded() {
        let mut s = QuantileSketch::new(QuantileSketch::DEFAULT_K, 3);
        let mut rng = SplitMix64::new(11);
        let mut all = Vec::new();
        for _ in 0..100_000 {
            let v = rng.next_f64() * 1000.0;
            s.insert(v);
            all.push(v);
        }
        all.sort_by(f64::total_cmp);
        for q in [0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99] {
            let v = s.query(q).unwrap();
            let err = rank_error(&all, v, q);
            assert!(err <= 0.01 * all.len() as f64, "q={q} err={err}");
        }
        assert!(s.retained() < 5_000);
    }

    #[test]
    fn merge_keeps_counts_and_extremes() {
        let mut a = QuantileSketch::new(50, 1);
        let mut b = QuantileSketch::new(50, 2);
        for v in 0..500 {
            a.insert(v as f64);
            b.insert((v + 500) as f64);
        }
        a.merge(&b);
        assert_eq!(a.count(), 1000);
        assert_eq!(a.query(0.0), Some(0.0));
        assert_eq!(a.query(1.0), Some(999.0));
        let med = a.query(0.5).unwrap();
        assert!((med - 500.0).abs() < 60.0, "median {med}");
    }

    #[test]
    fn empty_sketch_has_no_quantile() {
        assert_eq!(QuantileSketch::new(50, 0).query(0.5), None);
    }
}
