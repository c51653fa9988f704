use super::exact::ExactBlock;
use crate::dense::Dense;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Bytes charged per matrix entry.
pub const ENTRY_BYTES: u64 = 8;
/// Fixed per-message header, excluded from payload volume.
pub const HEADER_BYTES: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tag {
    /// Diagonal `L_KK` sent down the column group for normalization.
    LPanel,
    /// Normalized `L̂[I][K]ᵀ` handed to the owner of `Û[K][I]`.
    UPanel,
    /// `Û[K][I]` broadcast within the column group of `I`.
    ColBcast,
    /// Partial products reduced within the row group of `J`.
    RowReduce,
    /// Diagonal-block contributions reduced to the owner of `(K, K)`.
    DiagUpdate,
    /// Finished `Ainv[J][K]ᵀ` sent to the owner of `(K, J)`.
    AinvTranspose,
}

impl Tag {
    pub const ALL: [Tag; 6] = [Tag::LPanel, Tag::UPanel, Tag::ColBcast, Tag::RowReduce, Tag::DiagUpdate, Tag::AinvTranspose];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn kind(self) -> VolumeKind {
        match self {
            Tag::ColBcast => VolumeKind::ColBcast,
            Tag::RowReduce => VolumeKind::RowReduce,
            _ => VolumeKind::Other,
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Grouping of tags used by the volume statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeKind {
    ColBcast,
    RowReduce,
    Other,
    All,
}

impl VolumeKind {
    pub fn matches(self, tag: Tag) -> bool {
        self == VolumeKind::All || tag.kind() == self
    }

    pub fn name(self) -> &'static str {
        match self {
            VolumeKind::ColBcast => "colbcast",
            VolumeKind::RowReduce => "rowreduce",
            VolumeKind::Other => "other",
            VolumeKind::All => "all",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Block(Dense),
    /// Partial sums travel exactly; they are charged as doubles.
    Exact(ExactBlock),
}

impl Payload {
    pub fn entries(&self) -> usize {
        match self {
            Payload::Block(d) => d.len(),
            Payload::Exact(e) => e.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub src: usize,
    pub dst: usize,
    pub tag: Tag,
    pub supernode: usize,
    /// The other supernode index of the block the message is about.
    pub block: usize,
    pub payload: Payload,
}

impl Message {
    pub fn payload_bytes(&self) -> u64 {
        ENTRY_BYTES * self.payload.entries() as u64
    }

    /// Payload plus header.
    pub fn size(&self) -> u64 {
        self.payload_bytes() + HEADER_BYTES
    }
}
