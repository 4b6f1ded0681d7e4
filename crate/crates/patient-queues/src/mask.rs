//! Queue subsets as bitmasks.
//!
//! All set-function machinery works on subsets of the queue index set
//! `{0, .., n-1}` with `n` bounded by the enumeration cap, so a `u32`
//! bitmask is both compact and fast to enumerate.

use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A subset of queue indices encoded as a bitmask over bits `0..n`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct SubsetMask(pub u32);

impl SubsetMask {
    pub const EMPTY: SubsetMask = SubsetMask(0);

    /// The full set `{0, .., n-1}`.
    pub fn full(n: usize) -> Self {
        debug_assert!(n <= 32);
        if n == 32 {
            SubsetMask(u32::MAX)
        } else {
            SubsetMask((1u32 << n) - 1)
        }
    }

    pub fn singleton(i: usize) -> Self {
        SubsetMask(1u32 << i)
    }

    pub fn from_indices(indices: &[usize]) -> Self {
        let mut bits = 0u32;
        for &i in indices {
            bits |= 1 << i;
        }
        SubsetMask(bits)
    }

    pub fn contains(self, i: usize) -> bool {
        self.0 >> i & 1 == 1
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn insert(self, i: usize) -> Self {
        SubsetMask(self.0 | 1 << i)
    }

    pub fn remove(self, i: usize) -> Self {
        SubsetMask(self.0 & !(1 << i))
    }

    pub fn union(self, other: Self) -> Self {
        SubsetMask(self.0 | other.0)
    }

    pub fn intersection(self, other: Self) -> Self {
        SubsetMask(self.0 & other.0)
    }

    pub fn difference(self, other: Self) -> Self {
        SubsetMask(self.0 & !other.0)
    }

    pub fn is_disjoint(self, other: Self) -> bool {
        self.0 & other.0 == 0
    }

    pub fn is_subset_of(self, other: Self) -> bool {
        self.0 & !other.0 == 0
    }

    /// Iterate member indices in increasing order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let i = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(i)
            }
        })
    }

    pub fn indices(self) -> Vec<usize> {
        self.iter().collect()
    }
}

impl std::fmt::Debug for SubsetMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

impl std::fmt::Display for SubsetMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Debug::fmt(self, f)
    }
}

// Masks serialize as sorted index arrays so JSON output is readable and
// independent of the bitmask encoding.
impl Serialize for SubsetMask {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.len()))?;
        for i in self.iter() {
            seq.serialize_element(&i)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for SubsetMask {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let indices = Vec::<usize>::deserialize(deserializer)?;
        for &i in &indices {
            if i >= 32 {
                return Err(serde::de::Error::custom(format!("queue index {i} out of range")));
            }
        }
        Ok(SubsetMask::from_indices(&indices))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn basic_ops() {
        let s = SubsetMask::from_indices(&[0, 2, 5]);
        assert_eq!(s.len(), 3);
        assert!(s.contains(2));
        assert!(!s.contains(1));
        assert_eq!(s.indices(), vec![0, 2, 5]);
        assert_eq!(s.remove(2).indices(), vec![0, 5]);
        assert!(SubsetMask::full(3).is_subset_of(SubsetMask::full(4)));
        assert_eq!(format!("{s}"), "{0,2,5}");
    }

    #[test]
    fn json_round_trip() {
        let s = SubsetMask::from_indices(&[1, 3]);
        let js = serde_json::to_string(&s).unwrap();
        assert_eq!(js, "[1,3]");
        let back: SubsetMask = serde_json::from_str(&js).unwrap();
        assert_eq!(back, s);
    }

    proptest! {
        #[test]
        fn set_algebra(a in 0u32..1 << 12, b in 0u32..1 << 12) {
            let (a, b) = (SubsetMask(a), SubsetMask(b));
            prop_assert_eq!(a.union(b).len() + a.intersection(b).len(), a.len() + b.len());
            prop_assert!(a.difference(b).is_disjoint(b));
            prop_assert_eq!(a.difference(b).union(a.intersection(b)), a);
            let rebuilt = SubsetMask::from_indices(&a.indices());
            prop_assert_eq!(rebuilt, a);
        }
    }
}
