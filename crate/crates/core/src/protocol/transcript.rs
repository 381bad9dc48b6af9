//! Message log of a protocol run, with byte accounting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::PartyId;

/// Bytes per plaintext real on the wire.
pub const BYTES_PER_REAL: u64 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessageKind {
    PublicKey,
    EncryptedFeatures,
    NoisyAggregates,
    Centroids,
    DecryptionShare,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    /// 0 for setup, `1..=r` for rounds, `r + 1` for the final broadcast.
    pub round: u32,
    pub sender: PartyId,
    pub receiver: PartyId,
    pub kind: MessageKind,
    pub byte_size: u64,
    pub ciphertext_count: u64,
    pub plaintext_reals: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub messages: Vec<Message>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KindTotals {
    pub messages: u64,
    pub ciphertexts: u64,
    pub plaintext_reals: u64,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptSummary {
    pub messages: u64,
    pub ciphertexts: u64,
    pub plaintext_reals: u64,
    pub total_bytes: u64,
    pub by_kind: BTreeMap<MessageKind, KindTotals>,
}

/// Messages sharing a round index. Messages of one kind inside a phase go
/// out in parallel, so each kind is one sequential exchange.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub round: u32,
    pub bytes: u64,
    pub exchanges: u64,
}

impl Transcript {
    pub fn push(&mut self, m: Message) {
        self.messages.push(m);
    }

    pub fn total_bytes(&self) -> u64 {
        self.messages.iter().map(|m| m.byte_size).sum()
    }

    pub fn of_kind(&self, kind: MessageKind) -> impl Iterator<Item = &Message> {
        self.messages.iter().filter(move |m| m.kind == kind)
    }

    pub fn in_round(&self, round: u32) -> impl Iterator<Item = &Message> {
        self.messages.iter().filter(move |m| m.round == round)
    }

    pub fn summary(&self) -> TranscriptSummary {
        let mut by_kind: BTreeMap<MessageKind, KindTotals> = BTreeMap::new();
        for m in &self.messages {
            let t = by_kind.entry(m.kind).or_default();
            t.messages += 1;
            t.ciphertexts += m.ciphertext_count;
            t.plaintext_reals += m.plaintext_reals;
            t.bytes += m.byte_size;
        }
        TranscriptSummary {
            messages: self.messages.len() as u64,
            ciphertexts: self.messages.iter().map(|m| m.ciphertext_count).sum(),
            plaintext_reals: self.messages.iter().map(|m| m.plaintext_reals).sum(),
            total_bytes: self.total_bytes(),
            by_kind,
        }
    }

    pub fn phases(&self) -> Vec<Phase> {
        let mut grouped: BTreeMap<u32, (u64, Vec<MessageKind>)> = BTreeMap::new();
        for m in &self.messages {
            let entry = grouped.entry(m.round).or_default();
            entry.0 += m.byte_size;
            if !entry.1.contains(&m.kind) {
                entry.1.push(m.kind);
            }
        }
        grouped
            .into_iter()
            .map(|(round, (bytes, kinds))| Phase {
                round,
                bytes,
                exchanges: kinds.len() as u64,
            })
            .collect()
    }
}
