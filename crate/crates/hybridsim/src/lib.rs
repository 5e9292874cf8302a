//! Round-synchronous simulator of a hybrid distributed-computing model:
//! unlimited-bandwidth communication along the edges of a graph combined with
//! a per-node capacity-capped any-to-any global network.
//!
//! On top of the engine the crate provides reference implementations of
//! algorithms whose round complexity is governed by the graph parameter
//! *neighborhood quality*: multi-token dissemination and aggregation,
//! multi-message unicast routing, skeleton-graph/spanner based shortest-path
//! approximation, and Eulerian-orientation machinery, plus centralized oracles
//! used to verify every output.

pub mod dissemination;
pub mod eulertools;
pub mod graphcore;
pub mod hybridnet;
pub mod nq;
pub mod overlay;
pub mod routing;
pub mod shortestpaths;
