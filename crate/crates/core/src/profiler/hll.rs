use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::rng::mix64;
use crate::tabular::Value;

/// HyperLogLog distinct-count sketch over seeded 64-bit value hashes.
///
/// Small cardinalities are tracked exactly (the set of hashes) until the set
/// outgrows `m / 16` entries; after that the sketch switches to registers.
#[derive(Clone, Debug)]
pub struct DistinctSketch {
    precision: u8,
    seed: u64,
    exact: Option<BTreeSet<u64>>,
    registers: Vec<u8>,
}

impl DistinctSketch {
    pub const DEFAULT_PRECISION: u8 = 14;

    pub fn new(precision: u8, seed: u64) -> Self {
        assert!((4..=18).contains(&precision), "precision must be between 4 and 18");
        Self {
            precision,
            seed,
            exact: Some(BTreeSet::new()),
            registers: Vec::new(),
        }
    }

    pub fn precision(&self) -> u8 {
        self.precision
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn register_count(&self) -> usize {
        1 << self.precision
    }

    fn exact_limit(&self) -> usize {
        self.register_count() / 16
    }

    /// Nominal relative standard error, `1.04 / sqrt(m)`.
    pub fn relative_error(&self) -> f64 {
        1.04 / (self.register_count() as f64).sqrt()
    }

    pub fn insert_value(&mut self, value: &Value) {
        if !value.is_null() {
            let h = hash_value(value, self.seed);
            self.insert_hash(h);
        }
    }

    pub fn insert_hash(&mut self, hash: u64) {
        match &mut self.exact {
            Some(set) => {
                set.insert(hash);
                if set.len() > self.exact_limit() {
                    self.densify();
                }
            }
            None => self.update_register(hash),
        }
    }

    fn update_register(&mut self, hash: u64) {
        let p = self.precision;
        let idx = (hash >> (64 - p)) as usize;
        let rest = (hash << p) | (1 << (p - 1));
        let rank = rest.leading_zeros() as u8 + 1;
        if self.registers[idx] < rank {
            self.registers[idx] = rank;
        }
    }

    fn densify(&mut self) {
        if let Some(set) = self.exact.take() {
            self.registers = vec![0; self.register_count()];
            for h in set {
                self.update_register(h);
            }
        }
    }

    pub fn merge(&mut self, other: &DistinctSketch) -> Result<()> {
        if self.precision != other.precision || self.seed != other.seed {
            return Err(Error::Domain(
                "cannot merge sketches with different precision or seed".into(),
            ));
        }
        match (&mut self.exact, &other.exact) {
            (Some(mine), Some(theirs)) => {
                mine.extend(theirs.iter().copied());
                if mine.len() > self.exact_limit() {
                    self.densify();
                }
            }
            (_, Some(theirs)) => {
                for &h in theirs {
                    self.update_register(h);
                }
            }
            (_, None) => {
                self.densify();
                for (a, &b) in self.registers.iter_mut().zip(&other.registers) {
                    *a = (*a).max(b);
                }
            }
        }
        Ok(())
    }

    pub fn estimate(&self) -> f64 {
        if let Some(set) = &self.exact {
            return set.len() as f64;
        }
        let m = self.register_count() as f64;
        let alpha = match self.register_count() {
            16 => 0.673,
            32 => 0.697,
            64 => 0.709,
            _ => 0.7213 / (1.0 + 1.079 / m),
        };
        let sum: f64 = self
            .registers
            .iter()
            .map(|&r| f64::from_bits((1023 - r as u64) << 52))
            .sum();
        let raw = alpha * m * m / sum;
        let zeros = self.registers.iter().filter(|&&r| r == 0).count();
        if raw <= 2.5 * m && zeros > 0 {
            m * (m / zeros as f64).ln()
        } else {
            raw
        }
    }
}

/// Seeded 64-bit hash of a cell: FNV-1a over a kind tag and the value's
/// bytes, finished with the SplitMix64 mixer.
pub fn hash_value(value: &Value, seed: u64) -> u64 {
    const OFFSET: u64 = 0xCBF2_9CE4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01B3;
    let mut h = OFFSET;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
    };
    match value {
        Value::Null => feed(&[0]),
        Value::Boolean(b) => feed(&[1, *b as u8]),
        Value::Integer(i) => {
            feed(&[2]);
            feed(&i.to_le_bytes());
        }
        Value::Real(r) => {
            feed(&[3]);
            // -0.0 and 0.0 are the same value.
            let r = if *r == 0.0 { 0.0 } else { *r };
            feed(&r.to_bits().to_le_bytes());
        }
        Value::Text(s) => {
            feed(&[4]);
            feed(s.as_bytes());
        }
    }
    mix64(h ^ seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn empty_sketch_estimates_zero() {
        assert_eq!(DistinctSketch::new(14, 0).estimate(), 0.0);
    }

    #[test]
    fn repeated_value_is_exactly_one() {
        let mut s = DistinctSketch::new(14, 0);
        for _ in 0..3 {
            s.insert_value(&Value::Text("x".into()));
        }
        assert_eq!(s.estimate(), 1.0);
    }

    #[test]
    fn random_values_within_three_sigma() {
        let mut s = DistinctSketch::new(14, 9);
        let mut rng = SplitMix64::new(123);
        let n = 100_000;
        for _ in 0..n {
            s.insert_value(&Value::Integer(rng.next_u64() as i64));
        }
        let rel = (s.estimate() - n as f64).abs() / n as f64;
        assert!(rel <= 3.0 * s.relative_error(), "relative error {rel}");
    }

    #[test]
    fn merge_is_commutative_across_modes() {
        let mut a = DistinctSketch::new(10, 1);
        let mut b = DistinctSketch::new(10, 1);
        for i in 0..5000 {
            a.insert_value(&Value::Integer(i));
        }
        for i in 0..20 {
            b.insert_value(&Value::Integer(i * 1000));
        }
        let mut ab = a.clone();
        ab.merge(&b).unwrap();
        let mut ba = b.clone();
        ba.merge(&a).unwrap();
        assert_eq!(ab.estimate(), ba.estimate());
    }

    #[test]
    fn merge_rejects_mismatched_seed() {
        let mut a = DistinctSketch::new(10, 1);
        assert!(a.merge(&DistinctSketch::new(10, 2)).is_err());
    }

    #[test]
    fn negative_zero_hashes_like_zero() {
        assert_eq!(hash_value(&Value::Real(-0.0), 5), hash_value(&Value::Real(0.0), 5));
    }
}
