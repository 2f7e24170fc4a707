//! Key material: per-link key vaults and multi-hop XOR relay.
//!
//! A key block is 32 bytes (256 bits). Links produce blocks at their rate in
//! blocks per tick; fractional rates carry over between ticks so the long-run
//! average equals the rate exactly. Block bytes are derived from
//! `SHA-256(seed, link, block id)`, which keeps runs reproducible.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::rate::{self, Rate};
use crate::topology::{NetworkGraph, NodeId, NodePair, Path};

pub const KEY_BYTES: usize = 32;

pub type KeyBytes = [u8; KEY_BYTES];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KeymatError {
    #[error("tick {tick} does not follow tick {last}")]
    NonMonotonicTick { tick: u64, last: u64 },
    #[error("no key available on link {0}")]
    InsufficientKeys(NodePair),
    #[error("path {0} is not backed by vault links")]
    NoPath(String),
    #[error("relay of {path} reconstructed the wrong key")]
    ReconstructionMismatch { path: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockState {
    Available,
    Reserved,
    Consumed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyBlock {
    pub id: u64,
    pub link: NodePair,
    pub bytes: KeyBytes,
    pub state: BlockState,
    pub created_tick: u64,
}

#[derive(Debug, Clone, Default)]
struct LinkStore {
    rate: Rate,
    accumulator: Rate,
    queue: VecDeque<KeyBlock>,
    generated: u64,
    reserved: u64,
    consumed: u64,
}

impl LinkStore {
    fn available(&self) -> u64 {
        self.generated - self.reserved - self.consumed
    }

    fn reserve_front(&mut self) -> Option<u64> {
        let block = self.queue.iter_mut().find(|b| b.state == BlockState::Available)?;
        block.state = BlockState::Reserved;
        self.reserved += 1;
        Some(block.id)
    }

    fn release(&mut self, id: u64) {
        if let Some(block) = self.queue.iter_mut().find(|b| b.id == id) {
            debug_assert_eq!(block.state, BlockState::Reserved);
            block.state = BlockState::Available;
            self.reserved -= 1;
        }
    }

    fn consume(&mut self, id: u64) -> KeyBlock {
        let pos = self
            .queue
            .iter()
            .position(|b| b.id == id)
            .expect("reserved block is queued");
        let mut block = self.queue.remove(pos).expect("position is in range");
        debug_assert_eq!(block.state, BlockState::Reserved);
        block.state = BlockState::Consumed;
        self.reserved -= 1;
        self.consumed += 1;
        block
    }
}

/// Per-link FIFO store of key blocks.
///
/// Consumed blocks leave the queue and are only visible through the counters,
/// so no query for usable keys can ever return them.
#[derive(Debug, Clone)]
pub struct KeyVault {
    links: BTreeMap<NodePair, LinkStore>,
    next_id: u64,
    last_tick: Option<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LinkCounts {
    pub generated: u64,
    pub available: u64,
    pub reserved: u64,
    pub consumed: u64,
}

pub type VaultSnapshot = BTreeMap<NodePair, LinkCounts>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelayMode {
    /// Each intermediate node forwards its XOR value to the next node.
    #[default]
    HopByHop,
    /// Intermediate nodes report their XOR values to a central collector.
    Centralized,
}

/// Where an intermediate XOR value was sent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipient {
    Node(NodeId),
    Collector,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RelayMessage {
    pub from: NodeId,
    pub to: Recipient,
    #[serde(serialize_with = "hex_bytes")]
    pub value: KeyBytes,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RelayTranscript {
    pub path: Path,
    pub mode: RelayMode,
    #[serde(serialize_with = "hex_bytes")]
    pub end_to_end_key: KeyBytes,
    pub consumed_ids: Vec<u64>,
    pub intermediate_messages: Vec<RelayMessage>,
}

fn hex_bytes<S: serde::Serializer>(bytes: &KeyBytes, s: S) -> Result<S::Ok, S::Error> {
    let text: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
    s.serialize_str(&text)
}

pub fn xor(a: &KeyBytes, b: &KeyBytes) -> KeyBytes {
    let mut out = [0u8; KEY_BYTES];
    for (o, (x, y)) in out.iter_mut().zip(a.iter().zip(b)) {
        *o = x ^ y;
    }
    out
}

fn derive_bytes(seed: u64, link: &NodePair, id: u64) -> KeyBytes {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(link.lo().as_str().as_bytes());
    h.update([0u8]);
    h.update(link.hi().as_str().as_bytes());
    h.update([0u8]);
    h.update(id.to_le_bytes());
    h.finalize().into()
}

impl KeyVault {
    /// Empty vault with one store per physical link of `g`.
    pub fn new(g: &NetworkGraph) -> Self {
        let links = g
            .links()
            .map(|l| {
                (
                    l.pair.clone(),
                    LinkStore {
                        rate: l.rate,
                        ..LinkStore::default()
                    },
                )
            })
            .collect();
        KeyVault {
            links,
            next_id: 0,
            last_tick: None,
        }
    }

    pub fn has_link(&self, pair: &NodePair) -> bool {
        self.links.contains_key(pair)
    }

    pub fn available(&self, pair: &NodePair) -> u64 {
        self.links.get(pair).map_or(0, LinkStore::available)
    }

    /// Usable blocks on a link, oldest first.
    pub fn usable_blocks(&self, pair: &NodePair) -> impl Iterator<Item = &KeyBlock> {
        self.links
            .get(pair)
            .into_iter()
            .flat_map(|s| s.queue.iter())
            .filter(|b| b.state == BlockState::Available)
    }

    /// Adds `block` to the back of its link queue. Test and fixture helper.
    pub fn push_block(&mut self, pair: &NodePair, bytes: KeyBytes, tick: u64) -> Option<u64> {
        let store = self.links.get_mut(pair)?;
        let id = self.next_id;
        self.next_id += 1;
        store.queue.push_back(KeyBlock {
            id,
            link: pair.clone(),
            bytes,
            state: BlockState::Available,
            created_tick: tick,
        });
        store.generated += 1;
        Some(id)
    }

    pub fn snapshot(&self) -> VaultSnapshot {
        vault_snapshot(self)
    }
}

/// Generates this tick's blocks on every link and returns how many each got.
///
/// `g` supplies the rates; links of `g` unknown to the vault are ignored.
pub fn tick_generate(
    vault: &mut KeyVault,
    g: &NetworkGraph,
    tick: u64,
    seed: u64,
) -> Result<BTreeMap<NodePair, u64>, KeymatError> {
    if let Some(last) = vault.last_tick {
        if tick <= last {
            return Err(KeymatError::NonMonotonicTick { tick, last });
        }
    }
    vault.last_tick = Some(tick);
    let mut counts = BTreeMap::new();
    for link in g.links() {
        let Some(store) = vault.links.get_mut(&link.pair) else {
            continue;
        };
        store.rate = link.rate;
        store.accumulator += store.rate;
        let whole = rate::floor_u64(&store.accumulator);
        store.accumulator -= Rate::from_integer(whole as i64);
        for _ in 0..whole {
            let id = vault.next_id;
            vault.next_id += 1;
            store.queue.push_back(KeyBlock {
                id,
                link: link.pair.clone(),
                bytes: derive_bytes(seed, &link.pair, id),
                state: BlockState::Available,
                created_tick: tick,
            });
            store.generated += 1;
        }
        counts.insert(link.pair.clone(), whole);
    }
    Ok(counts)
}

/// Relays one end-to-end key along `path`, consuming one block per hop.
///
/// The end-to-end key is the first hop's key. Every intermediate node `v_i`
/// emits `k(v_{i-1}, v_i) XOR k(v_i, v_{i+1})`; the destination XORs its own
/// last-hop key with all emitted values to recover the first-hop key. If some
/// hop has no key, reservations already taken on earlier hops are released.
pub fn xor_relay(
    vault: &mut KeyVault,
    path: &Path,
    mode: RelayMode,
) -> Result<RelayTranscript, KeymatError> {
    let hops = path.hops();
    if let Some(missing) = hops.iter().find(|h| !vault.links.contains_key(h)) {
        return Err(KeymatError::NoPath(format!("{path} (missing link {missing})")));
    }

    let mut reserved: Vec<(NodePair, u64)> = Vec::with_capacity(hops.len());
    for hop in &hops {
        let store = vault.links.get_mut(hop).expect("checked above");
        match store.reserve_front() {
            Some(id) => reserved.push((hop.clone(), id)),
            None => {
                for (pair, id) in reserved {
                    vault.links.get_mut(&pair).expect("checked above").release(id);
                }
                return Err(KeymatError::InsufficientKeys(hop.clone()));
            }
        }
    }

    let blocks: Vec<KeyBlock> = reserved
        .into_iter()
        .map(|(pair, id)| vault.links.get_mut(&pair).expect("checked above").consume(id))
        .collect();

    let nodes = path.nodes();
    let intermediate_messages: Vec<RelayMessage> = (1..blocks.len())
        .map(|i| RelayMessage {
            from: nodes[i].clone(),
            to: match mode {
                RelayMode::HopByHop => Recipient::Node(nodes[i + 1].clone()),
                RelayMode::Centralized => Recipient::Collector,
            },
            value: xor(&blocks[i - 1].bytes, &blocks[i].bytes),
        })
        .collect();

    let end_to_end_key = blocks[0].bytes;
    let reconstructed = intermediate_messages
        .iter()
        .fold(blocks[blocks.len() - 1].bytes, |acc, m| xor(&acc, &m.value));
    if reconstructed != end_to_end_key {
        return Err(KeymatError::ReconstructionMismatch {
            path: path.to_string(),
        });
    }

    Ok(RelayTranscript {
        path: path.clone(),
        mode,
        end_to_end_key,
        consumed_ids: blocks.iter().map(|b| b.id).collect(),
        intermediate_messages,
    })
}

/// Recomputes the destination's key from a transcript and the last hop's key.
pub fn reconstruct(last_hop_key: &KeyBytes, messages: &[RelayMessage]) -> KeyBytes {
    messages.iter().fold(*last_hop_key, |acc, m| xor(&acc, &m.value))
}

pub fn vault_snapshot(vault: &KeyVault) -> VaultSnapshot {
    vault
        .links
        .iter()
        .map(|(pair, s)| {
            (
                pair.clone(),
                LinkCounts {
                    generated: s.generated,
                    available: s.available(),
                    reserved: s.reserved,
                    consumed: s.consumed,
                },
            )
        })
        .collect()
}

impl LinkCounts {
    pub fn is_conserved(&self) -> bool {
        self.generated == self.available + self.reserved + self.consumed
    }
}
