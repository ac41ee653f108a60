//! Value types shared by the protocol, the simulator and the verifier.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported process count.
pub const MAX_PROCESSES: usize = 1024;

/// Largest supported weight denominator exponent.
pub const MAX_LOG2_DENOMINATOR: u32 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProcessId(pub u32);

impl ProcessId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MssId(pub u32);

impl MssId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for MssId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MSS{}", self.0)
    }
}

/// Checkpoint sequence number. Also names the checkpoint interval that the
/// checkpoint with this number opens.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Csn(pub u64);

impl Csn {
    pub fn next(self) -> Csn {
        Csn(self.0 + 1)
    }
}

impl fmt::Display for Csn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Fixed-length boolean vector indexed by process. Backs the dependency
/// vector, the send vector, minset, new_ddv and Uminset.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BitVector {
    bits: Vec<bool>,
}

impl BitVector {
    pub fn zeros(n: usize) -> Self {
        BitVector { bits: vec![false; n] }
    }

    pub fn singleton(n: usize, p: ProcessId) -> Self {
        let mut v = Self::zeros(n);
        v.bits[p.index()] = true;
        v
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        BitVector { bits }
    }

    pub fn from_members(n: usize, members: impl IntoIterator<Item = ProcessId>) -> Self {
        let mut v = Self::zeros(n);
        for p in members {
            v.bits[p.index()] = true;
        }
        v
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, p: ProcessId) -> bool {
        self.bits.get(p.index()).copied().unwrap_or(false)
    }

    pub fn set(&mut self, p: ProcessId) {
        self.bits[p.index()] = true;
    }

    pub fn clear(&mut self, p: ProcessId) {
        self.bits[p.index()] = false;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// True when no bit is set.
    pub fn is_zero(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn members(&self) -> impl Iterator<Item = ProcessId> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(i, _)| ProcessId(i as u32))
    }

    fn check_len(&self, other: &BitVector) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch {
                left: self.len(),
                right: other.len(),
            });
        }
        Ok(())
    }

    /// Bitwise inclusive OR.
    pub fn merge(&self, other: &BitVector) -> Result<BitVector> {
        self.check_len(other)?;
        Ok(BitVector {
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect(),
        })
    }

    pub fn merge_in(&mut self, other: &BitVector) -> Result<()> {
        self.check_len(other)?;
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
        Ok(())
    }

    pub fn and(&self, other: &BitVector) -> Result<BitVector> {
        self.check_len(other)?;
        Ok(BitVector {
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect(),
        })
    }

    pub fn is_subset_of(&self, other: &BitVector) -> Result<bool> {
        self.check_len(other)?;
        Ok(self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b))
    }
}

/// Free-function form of [`BitVector::merge`].
pub fn ddv_merge(a: &BitVector, b: &BitVector) -> Result<BitVector> {
    a.merge(b)
}

impl fmt::Debug for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for b in &self.bits {
            f.write_str(if *b { "1" } else { "0" })?;
        }
        f.write_str("]")
    }
}

impl Serialize for BitVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.bits.len()))?;
        for b in &self.bits {
            seq.serialize_element(&u8::from(*b))?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for BitVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct BitsVisitor;

        impl<'de> Visitor<'de> for BitsVisitor {
            type Value = BitVector;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an array of 0/1 integers")
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> std::result::Result<BitVector, A::Error> {
                let mut bits = Vec::new();
                while let Some(v) = seq.next_element::<u8>()? {
                    match v {
                        0 => bits.push(false),
                        1 => bits.push(true),
                        other => {
                            return Err(de::Error::invalid_value(
                                de::Unexpected::Unsigned(other as u64),
                                &"0 or 1",
                            ))
                        }
                    }
                }
                Ok(BitVector { bits })
            }
        }

        deserializer.deserialize_seq(BitsVisitor)
    }
}

/// Exact dyadic rational `num / 2^log2den` in `[0, 1]`, always kept in
/// lowest terms so that equality is structural.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Weight {
    num: u64,
    #[serde(rename = "log2den")]
    log2_denominator: u32,
}

impl Weight {
    pub const ZERO: Weight = Weight {
        num: 0,
        log2_denominator: 0,
    };
    pub const ONE: Weight = Weight {
        num: 1,
        log2_denominator: 0,
    };

    pub fn new(num: u64, log2_denominator: u32) -> Result<Weight> {
        if log2_denominator > MAX_LOG2_DENOMINATOR {
            return Err(Error::DenominatorOverflow {
                max: MAX_LOG2_DENOMINATOR,
            });
        }
        if (num as u128) > (1u128 << log2_denominator) {
            return Err(Error::WeightExceedsOne);
        }
        Ok(Self::normalized(num as u128, log2_denominator))
    }

    fn normalized(mut num: u128, mut log2_denominator: u32) -> Weight {
        if num == 0 {
            return Weight::ZERO;
        }
        while log2_denominator > 0 && num.is_multiple_of(2) {
            num /= 2;
            log2_denominator -= 1;
        }
        Weight {
            num: num as u64,
            log2_denominator,
        }
    }

    pub fn numerator(self) -> u64 {
        self.num
    }

    pub fn log2_denominator(self) -> u32 {
        self.log2_denominator
    }

    pub fn is_zero(self) -> bool {
        self.num == 0
    }

    pub fn is_one(self) -> bool {
        self == Weight::ONE
    }

    /// Splits the weight into two equal halves.
    pub fn halve(self) -> Result<(Weight, Weight)> {
        if self.is_zero() {
            return Err(Error::HalveZero);
        }
        if self.log2_denominator >= MAX_LOG2_DENOMINATOR {
            return Err(Error::DenominatorOverflow {
                max: MAX_LOG2_DENOMINATOR,
            });
        }
        let h = Weight {
            num: self.num,
            log2_denominator: self.log2_denominator + 1,
        };
        Ok((h, h))
    }

    /// Exact sum; fails if it would exceed one.
    pub fn accumulate(self, other: Weight) -> Result<Weight> {
        let sum = self.unchecked_add(other);
        if sum.0 > (1u128 << sum.1) {
            return Err(Error::WeightExceedsOne);
        }
        Ok(Self::normalized(sum.0, sum.1))
    }

    /// Exact difference `self - other`, or an error if negative.
    pub fn checked_sub(self, other: Weight) -> Result<Weight> {
        let d = self.log2_denominator.max(other.log2_denominator);
        let a = (self.num as u128) << (d - self.log2_denominator);
        let b = (other.num as u128) << (d - other.log2_denominator);
        if b > a {
            return Err(Error::Protocol("negative weight".into()));
        }
        Ok(Self::normalized(a - b, d))
    }

    fn unchecked_add(self, other: Weight) -> (u128, u32) {
        let d = self.log2_denominator.max(other.log2_denominator);
        let a = (self.num as u128) << (d - self.log2_denominator);
        let b = (other.num as u128) << (d - other.log2_denominator);
        (a + b, d)
    }
}

impl PartialOrd for Weight {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Weight {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        let d = self.log2_denominator.max(other.log2_denominator);
        let a = (self.num as u128) << (d - self.log2_denominator);
        let b = (other.num as u128) << (d - other.log2_denominator);
        a.cmp(&b)
    }
}

impl fmt::Debug for Weight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self)
    }
}

impl fmt::Display for Weight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.log2_denominator == 0 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/2^{}", self.num, self.log2_denominator)
        }
    }
}

pub fn weight_halve(w: Weight) -> Result<(Weight, Weight)> {
    w.halve()
}

pub fn weight_accumulate(acc: Weight, w: Weight) -> Result<Weight> {
    acc.accumulate(w)
}

/// Identifies one checkpointing session.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Trigger {
    pub initiator: ProcessId,
    pub initiator_mss: MssId,
    pub initiation_csn: Csn,
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {})",
            self.initiator, self.initiator_mss, self.initiation_csn
        )
    }
}

/// Control information attached to an application message by the sender's
/// support station. `minset` and `trigger` are present when the sender is on
/// the post-checkpoint side of an open session. `dep_csn` holds, for each
/// set bit of `ddv` in index order, the checkpoint interval depended upon.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Piggyback {
    pub ddv: BitVector,
    pub dep_csn: Vec<Csn>,
    pub own_csn: Csn,
    pub c_state: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minset: Option<BitVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger: Option<Trigger>,
}

impl Piggyback {
    pub fn session(&self) -> Option<(Trigger, &BitVector)> {
        match (&self.trigger, &self.minset) {
            (Some(t), Some(m)) => Some((*t, m)),
            _ => None,
        }
    }

    /// Dependencies as (process, interval) pairs.
    pub fn dependencies(&self) -> impl Iterator<Item = (ProcessId, Csn)> + '_ {
        self.ddv.members().zip(self.dep_csn.iter().copied())
    }

    /// Approximate wire size in bytes: bit vectors packed, csn values as u64,
    /// state as one byte, trigger as three u64s.
    pub fn wire_bytes(&self) -> u64 {
        let vec_bytes = |v: &BitVector| v.len().div_ceil(8) as u64;
        let mut bytes = vec_bytes(&self.ddv) + 8 * self.dep_csn.len() as u64 + 8 + 1;
        if let Some(m) = &self.minset {
            bytes += vec_bytes(m);
        }
        if self.trigger.is_some() {
            bytes += 24;
        }
        bytes
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Commit,
    Abort,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum WireMessage {
    App {
        src: ProcessId,
        dst: ProcessId,
        seq: u64,
        piggyback: Piggyback,
    },
    CReq {
        trigger: Trigger,
        minset: BitVector,
        ws: Weight,
    },
    CRply {
        from: ProcessId,
        trigger: Trigger,
        new_ddv: BitVector,
        weight: Weight,
        mr: bool,
    },
    Commit {
        trigger: Trigger,
        uminset: BitVector,
    },
    Abort {
        trigger: Trigger,
        uminset: BitVector,
    },
}

impl WireMessage {
    pub fn decision(outcome: Outcome, trigger: Trigger, uminset: BitVector) -> WireMessage {
        match outcome {
            Outcome::Commit => WireMessage::Commit { trigger, uminset },
            Outcome::Abort => WireMessage::Abort { trigger, uminset },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Tentative,
    Permanent,
    Disconnect,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointCause {
    Initial,
    Initiator,
    Requested,
    Induced,
    Disconnect,
}

/// Digest of application state: how many application messages have been
/// processed and the last sequence number seen from each peer.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppDigest {
    pub processed: u64,
    pub last_seq_from: BTreeMap<ProcessId, u64>,
}

impl AppDigest {
    pub fn record(&mut self, src: ProcessId, seq: u64) {
        self.processed += 1;
        self.last_seq_from.insert(src, seq);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub owner: ProcessId,
    pub csn: Csn,
    pub kind: CheckpointKind,
    pub cause: CheckpointCause,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger: Option<Trigger>,
    pub ddv_snapshot: BitVector,
    pub app_state: AppDigest,
    pub logical_time: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bv(bits: &[u8]) -> BitVector {
        BitVector::from_bits(bits.iter().map(|b| *b == 1).collect())
    }

    #[test]
    fn merge_is_bitwise_or() {
        assert_eq!(
            ddv_merge(&bv(&[0, 1, 0, 0]), &bv(&[0, 0, 1, 0])).unwrap(),
            bv(&[0, 1, 1, 0])
        );
        let v = bv(&[1, 0, 1, 1]);
        assert_eq!(ddv_merge(&v, &BitVector::zeros(4)).unwrap(), v);
    }

    #[test]
    fn merge_rejects_length_mismatch() {
        let err = ddv_merge(&BitVector::zeros(3), &BitVector::zeros(4)).unwrap_err();
        assert_eq!(err, Error::LengthMismatch { left: 3, right: 4 });
    }

    #[test]
    fn bitvector_json_is_array_of_ints() {
        let v = bv(&[1, 0, 1]);
        assert_eq!(serde_json::to_string(&v).unwrap(), "[1,0,1]");
        assert_eq!(serde_json::from_str::<BitVector>("[0,1]").unwrap(), bv(&[0, 1]));
        assert!(serde_json::from_str::<BitVector>("[0,2]").is_err());
    }

    #[test]
    fn weight_halving_is_exact() {
        let (a, b) = Weight::ONE.halve().unwrap();
        assert_eq!(a, b);
        assert_eq!(a, Weight::new(1, 1).unwrap());
        let eighth = Weight::new(1, 3).unwrap();
        let (h, _) = eighth.halve().unwrap();
        assert_eq!(h, Weight::new(1, 4).unwrap());
        assert_eq!(h.log2_denominator(), eighth.log2_denominator() + 1);
        assert_eq!(Weight::ZERO.halve().unwrap_err(), Error::HalveZero);
    }

    #[test]
    fn weight_accumulation() {
        let half = Weight::new(1, 1).unwrap();
        let quarter = Weight::new(1, 2).unwrap();
        assert!(half.accumulate(half).unwrap().is_one());
        let three_quarters = half.accumulate(quarter).unwrap();
        assert!(!three_quarters.is_one());
        assert_eq!(three_quarters, Weight::new(3, 2).unwrap());
        assert_eq!(Weight::ONE.accumulate(quarter).unwrap_err(), Error::WeightExceedsOne);
    }

    #[test]
    fn weight_json_shape() {
        let w = Weight::new(3, 2).unwrap();
        assert_eq!(serde_json::to_string(&w).unwrap(), r#"{"num":3,"log2den":2}"#);
    }

    #[test]
    fn denominator_cap() {
        let mut w = Weight::ONE;
        for _ in 0..MAX_LOG2_DENOMINATOR {
            w = w.halve().unwrap().0;
        }
        assert!(matches!(w.halve(), Err(Error::DenominatorOverflow { .. })));
    }

    /// Exact-rational oracle: a weight as a (numerator, denominator) pair of
    /// u128 with denominator a power of two, summed without normalisation.
    fn oracle_sum(leaves: &[(u128, u32)]) -> (u128, u128) {
        let max = leaves.iter().map(|l| l.1).max().unwrap_or(0);
        let num: u128 = leaves.iter().map(|(n, d)| n << (max - d)).sum();
        (num, 1u128 << max)
    }

    proptest! {
        #[test]
        fn merge_matches_naive_loop(a in proptest::collection::vec(any::<bool>(), 16),
                                    b in proptest::collection::vec(any::<bool>(), 16)) {
            let got = ddv_merge(&BitVector::from_bits(a.clone()), &BitVector::from_bits(b.clone())).unwrap();
            let mut expected = Vec::new();
            for k in 0..16 {
                expected.push(a[k] || b[k]);
            }
            prop_assert_eq!(got.bits(), &expected[..]);
        }

        #[test]
        fn merge_laws(a in proptest::collection::vec(any::<bool>(), 12),
                      b in proptest::collection::vec(any::<bool>(), 12),
                      c in proptest::collection::vec(any::<bool>(), 12)) {
            let (a, b, c) = (BitVector::from_bits(a), BitVector::from_bits(b), BitVector::from_bits(c));
            prop_assert_eq!(a.merge(&a).unwrap(), a.clone());
            prop_assert_eq!(a.merge(&b).unwrap(), b.merge(&a).unwrap());
            prop_assert_eq!(a.merge(&b).unwrap().merge(&c).unwrap(), a.merge(&b.merge(&c).unwrap()).unwrap());
        }

        /// Random halving trees: repeatedly pick a leaf and split it. The
        /// leaves always sum back to exactly one.
        #[test]
        fn halving_leaves_sum_to_one(picks in proptest::collection::vec(any::<prop::sample::Index>(), 0..40)) {
            let mut leaves = vec![Weight::ONE];
            for pick in picks {
                let i = pick.index(leaves.len());
                if leaves[i].log2_denominator() >= MAX_LOG2_DENOMINATOR {
                    continue;
                }
                let (a, b) = leaves[i].halve().unwrap();
                leaves[i] = a;
                leaves.push(b);
            }
            let raw: Vec<(u128, u32)> = leaves.iter().map(|w| (w.numerator() as u128, w.log2_denominator())).collect();
            let (num, den) = oracle_sum(&raw);
            prop_assert_eq!(num, den);
            let total = leaves.iter().try_fold(Weight::ZERO, |acc, w| acc.accumulate(*w)).unwrap();
            prop_assert!(total.is_one());
        }
    }
}
