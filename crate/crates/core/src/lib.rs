//! Trusted-node QKD network simulator built around virtual links and
//! virtual networks.
//!
//! Layers, bottom to top:
//!
//! * [`topology`]: physical nodes and links, path enumeration.
//! * [`keymat`]: per-link key vaults and multi-hop XOR key relay.
//! * [`virtlink`]: trunks split into sub-connections (QVLinks) by a quota
//!   function, with weighted water-filling when quotas clash.
//! * [`qvnetctl`]: QVNets assembled from same-id QVLinks, with routing,
//!   access and schedule policy.
//! * [`behavior_opt`]: balanced, broadcast and high-throughput key-rate
//!   allocation as exact linear programs.
//! * [`kms`]: the per-QVNet key management layer serving key requests.
//! * [`updater`]: demand-driven quota rebalancing.
//! * [`sim`]: scenario loading, the tick loop and metrics output.

pub mod behavior_opt;
pub mod kms;
pub mod keymat;
pub mod qvnetctl;
pub mod rate;
pub mod sim;
pub mod simplex;
pub mod topology;
pub mod updater;
pub mod virtlink;
