use super::message::{Message, Tag, VolumeKind, HEADER_BYTES};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Sent,
    Received,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Sent => "sent",
            Direction::Received => "received",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MessageEvent {
    /// Global send order within the run.
    pub seq: u64,
    pub src: usize,
    pub dst: usize,
    pub tag: Tag,
    pub supernode: usize,
    pub block: usize,
    pub payload_bytes: u64,
}

const NTAGS: usize = Tag::ALL.len();

#[derive(Debug, Clone, Default, PartialEq)]
struct Counters {
    bytes: [u64; NTAGS],
    messages: [u64; NTAGS],
}

/// Per-rank payload volume and message counts by tag, plus the send log.
#[derive(Debug, Clone, PartialEq)]
pub struct CommLedger {
    sent: Vec<Counters>,
    received: Vec<Counters>,
    events: Vec<MessageEvent>,
}

impl CommLedger {
    pub fn new(p: usize) -> Self {
        Self { sent: vec![Counters::default(); p], received: vec![Counters::default(); p], events: Vec::new() }
    }

    pub fn p(&self) -> usize {
        self.sent.len()
    }

    pub fn record_send(&mut self, m: &Message, seq: u64) {
        let c = &mut self.sent[m.src];
        c.bytes[m.tag.index()] += m.payload_bytes();
        c.messages[m.tag.index()] += 1;
        self.events.push(MessageEvent {
            seq,
            src: m.src,
            dst: m.dst,
            tag: m.tag,
            supernode: m.supernode,
            block: m.block,
            payload_bytes: m.payload_bytes(),
        });
    }

    pub fn record_receive(&mut self, m: &Message) {
        let c = &mut self.received[m.dst];
        c.bytes[m.tag.index()] += m.payload_bytes();
        c.messages[m.tag.index()] += 1;
    }

    /// Adds another partial ledger of the same run into this one.
    pub fn merge(&mut self, other: CommLedger) {
        assert_eq!(self.p(), other.p());
        for (a, b) in self.sent.iter_mut().zip(&other.sent).chain(self.received.iter_mut().zip(&other.received)) {
            for t in 0..NTAGS {
                a.bytes[t] += b.bytes[t];
                a.messages[t] += b.messages[t];
            }
        }
        self.events.extend(other.events);
        self.events.sort_by_key(|e| e.seq);
    }

    fn side(&self, dir: Direction) -> &[Counters] {
        match dir {
            Direction::Sent => &self.sent,
            Direction::Received => &self.received,
        }
    }

    /// Payload bytes of `rank` in the given direction, summed over matching tags.
    pub fn bytes(&self, rank: usize, dir: Direction, kind: VolumeKind) -> u64 {
        let c = &self.side(dir)[rank];
        Tag::ALL.iter().filter(|t| kind.matches(**t)).map(|t| c.bytes[t.index()]).sum()
    }

    pub fn tag_bytes(&self, rank: usize, dir: Direction, tag: Tag) -> u64 {
        self.side(dir)[rank].bytes[tag.index()]
    }

    pub fn messages(&self, rank: usize, dir: Direction, tag: Tag) -> u64 {
        self.side(dir)[rank].messages[tag.index()]
    }

    pub fn per_rank(&self, dir: Direction, kind: VolumeKind) -> Vec<u64> {
        (0..self.p()).map(|r| self.bytes(r, dir, kind)).collect()
    }

    pub fn total(&self, dir: Direction, kind: VolumeKind) -> u64 {
        self.per_rank(dir, kind).iter().sum()
    }

    pub fn total_messages(&self, dir: Direction) -> u64 {
        self.side(dir).iter().flat_map(|c| c.messages.iter()).sum()
    }

    /// Header bytes sent by `rank` (not part of the payload volume).
    pub fn header_bytes(&self, rank: usize) -> u64 {
        HEADER_BYTES * self.sent[rank].messages.iter().sum::<u64>()
    }

    /// Events in send order.
    pub fn events(&self) -> &[MessageEvent] {
        &self.events
    }

    /// Events with the send order erased, sorted by content. Two runs of the
    /// same configuration under different schedules agree on this.
    pub fn canonical_events(&self) -> Vec<MessageEvent> {
        let mut ev: Vec<MessageEvent> = self.events.iter().map(|e| MessageEvent { seq: 0, ..*e }).collect();
        ev.sort_unstable();
        ev
    }

    /// Same counters and the same set of messages, ignoring send order.
    pub fn same_traffic(&self, other: &CommLedger) -> bool {
        self.sent == other.sent && self.received == other.received && self.canonical_events() == other.canonical_events()
    }

    /// Sent equals received for every tag.
    pub fn is_conserved(&self) -> bool {
        Tag::ALL.iter().all(|&t| {
            let s: u64 = (0..self.p()).map(|r| self.tag_bytes(r, Direction::Sent, t)).sum();
            let r: u64 = (0..self.p()).map(|r| self.tag_bytes(r, Direction::Received, t)).sum();
            let sm: u64 = (0..self.p()).map(|r| self.messages(r, Direction::Sent, t)).sum();
            let rm: u64 = (0..self.p()).map(|r| self.messages(r, Direction::Received, t)).sum();
            s == r && sm == rm
        })
    }

    /// Builds a ledger directly from per-rank payload bytes of one tag.
    /// Intended for tests and synthetic analyses.
    pub fn from_sent_bytes(tag: Tag, sent: &[u64]) -> Self {
        let mut l = CommLedger::new(sent.len());
        for (r, &b) in sent.iter().enumerate() {
            l.sent[r].bytes[tag.index()] = b;
            l.sent[r].messages[tag.index()] = u64::from(b > 0);
        }
        l
    }
}
