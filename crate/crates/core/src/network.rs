//! Road-network topology.
//!
//! A network is a set of directed road links. Each link `i` carries a length in
//! meters and an *ordered* neighbor list `pi_i` — the links whose congestion
//! state at one epoch may influence `i`'s state at the next epoch. The list
//! always contains `i` itself, and its order is authoritative: transition-model
//! parameters are indexed by position in this list, so two files with the same
//! sets but different orders describe different parameterizations.
//!
//! Besides the flat neighbor list, each link records which neighbors play the
//! *upstream* and *downstream* roles (traffic reaches `i` from upstream links
//! and leaves into downstream links). Neighbors in neither role list are
//! lateral — e.g. crossing links at an intersection. Role lists drive route
//! contiguity checks and second-order augmentation; the flat list drives the
//! probabilistic model.
//!
//! # File format
//!
//! One link per line:
//!
//! ```text
//! link <id> <length_m> <n1,n2,...> up:<u1,...> down:<d1,...>
//! ```
//!
//! The third field is the full ordered neighbor list and must contain the
//! link's own id. Role lists may be empty (`up:` with nothing after the colon)
//! and must be subsets of the flat list. Blank lines and lines starting with
//! `#` are ignored.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// External identifier of a link (as it appears in files).
pub type LinkId = u32;

/// Default length threshold (meters) below which a link is considered too
/// short to carry a full epoch of travel, triggering second-order
/// neighborhood augmentation across it.
pub const DEFAULT_SHORT_LINK_THRESHOLD_M: f64 = 75.0;

/// One directed road link.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: LinkId,
    pub length_m: f64,
}

/// A road network: links plus ordered neighbor structure.
///
/// Internally links are addressed by *dense index* — their position in the
/// stored link order (the file order). All hot-path structures are indexed
/// densely; ids appear only at the I/O boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadNetwork {
    links: Vec<Link>,
    id_to_idx: HashMap<LinkId, usize>,
    /// Ordered neighbor lists as dense indices; `neighbors[i]` contains `i`.
    neighbors: Vec<Vec<usize>>,
    /// Upstream role lists as dense indices (order as in file).
    upstream: Vec<Vec<usize>>,
    /// Downstream role lists as dense indices (order as in file).
    downstream: Vec<Vec<usize>>,
}

impl RoadNetwork {
    /// Assemble and validate a network from per-link raw data
    /// (id, length, flat neighbor ids, upstream ids, downstream ids).
    pub fn new(
        raw: Vec<(LinkId, f64, Vec<LinkId>, Vec<LinkId>, Vec<LinkId>)>,
    ) -> Result<RoadNetwork> {
        if raw.is_empty() {
            return Err(Error::validation("network has no links"));
        }
        let mut id_to_idx = HashMap::with_capacity(raw.len());
        for (pos, (id, _, _, _, _)) in raw.iter().enumerate() {
            if id_to_idx.insert(*id, pos).is_some() {
                return Err(Error::validation(format!("duplicate link id {id}")));
            }
        }
        let resolve = |ids: &[LinkId], what: &str, owner: LinkId| -> Result<Vec<usize>> {
            ids.iter()
                .map(|nid| {
                    id_to_idx.get(nid).copied().ok_or_else(|| {
                        Error::validation(format!(
                            "link {owner}: {what} references unknown link id {nid}"
                        ))
                    })
                })
                .collect()
        };

        let mut links = Vec::with_capacity(raw.len());
        let mut neighbors = Vec::with_capacity(raw.len());
        let mut upstream = Vec::with_capacity(raw.len());
        let mut downstream = Vec::with_capacity(raw.len());

        for (id, length_m, flat, up, down) in &raw {
            if !length_m.is_finite() || *length_m <= 0.0 {
                return Err(Error::validation(format!(
                    "link {id}: length must be positive and finite, got {length_m}"
                )));
            }
            let flat_idx = resolve(flat, "neighbor list", *id)?;
            let up_idx = resolve(up, "upstream list", *id)?;
            let down_idx = resolve(down, "downstream list", *id)?;

            let self_idx = id_to_idx[id];
            if !flat_idx.contains(&self_idx) {
                return Err(Error::validation(format!(
                    "link {id}: neighbor list must contain the link itself"
                )));
            }
            let mut seen = std::collections::HashSet::new();
            for &n in &flat_idx {
                if !seen.insert(n) {
                    return Err(Error::validation(format!(
                        "link {id}: duplicate entry in neighbor list"
                    )));
                }
            }
            for (role, list) in [("upstream", &up_idx), ("downstream", &down_idx)] {
                for &n in list.iter() {
                    if n == self_idx {
                        return Err(Error::validation(format!(
                            "link {id}: {role} list must not contain the link itself"
                        )));
                    }
                    if !flat_idx.contains(&n) {
                        return Err(Error::validation(format!(
                            "link {id}: {role} link {} is not in the neighbor list",
                            raw[n].0
                        )));
                    }
                }
            }

            links.push(Link { id: *id, length_m: *length_m });
            neighbors.push(flat_idx);
            upstream.push(up_idx);
            downstream.push(down_idx);
        }

        Ok(RoadNetwork { links, id_to_idx, neighbors, upstream, downstream })
    }

    /// Number of links.
    pub fn n_links(&self) -> usize {
        self.links.len()
    }

    /// Link metadata by dense index.
    pub fn link(&self, idx: usize) -> &Link {
        &self.links[idx]
    }

    /// All links in stored order.
    pub fn links(&self) -> &[Link] {
        &self.links
    }

    /// Dense index for an external id.
    pub fn index_of(&self, id: LinkId) -> Result<usize> {
        self.id_to_idx
            .get(&id)
            .copied()
            .ok_or_else(|| Error::validation(format!("unknown link id {id}")))
    }

    /// Ordered neighbor list (dense indices) of link `idx`; contains `idx`.
    pub fn neighbors(&self, idx: usize) -> &[usize] {
        &self.neighbors[idx]
    }

    /// Upstream role list (dense indices) of link `idx`.
    pub fn upstream(&self, idx: usize) -> &[usize] {
        &self.upstream[idx]
    }

    /// Downstream role list (dense indices) of link `idx`.
    pub fn downstream(&self, idx: usize) -> &[usize] {
        &self.downstream[idx]
    }

    /// Position of link `idx` within its own neighbor list.
    pub fn self_position(&self, idx: usize) -> usize {
        self.neighbors[idx]
            .iter()
            .position(|&n| n == idx)
            .expect("validated: neighbor list contains self")
    }

    /// Whether `b` directly follows `a` in the traffic flow sense.
    pub fn is_downstream_of(&self, a: usize, b: usize) -> bool {
        self.downstream[a].contains(&b)
    }

    /// Validate that consecutive links of a route are connected.
    pub fn check_route_contiguity(&self, route: &[usize]) -> Result<()> {
        if route.is_empty() {
            return Err(Error::validation("route is empty"));
        }
        for idx in route {
            if *idx >= self.n_links() {
                return Err(Error::validation(format!("route link index {idx} out of range")));
            }
        }
        for w in route.windows(2) {
            if !self.is_downstream_of(w[0], w[1]) {
                return Err(Error::validation(format!(
                    "route not contiguous: link {} does not flow into link {}",
                    self.links[w[0]].id, self.links[w[1]].id
                )));
            }
        }
        Ok(())
    }

    /// Second-order neighborhood augmentation across short links.
    ///
    /// A link shorter than `threshold_m` can be fully crossed well within one
    /// epoch, so congestion effectively skips over it. For every such link
    /// `i`, each upstream link of `i` gains `i`'s downstream links as
    /// neighbors, and each downstream link gains `i`'s upstream links. New
    /// entries are appended after existing ones in ascending id order;
    /// existing entries are never reordered or duplicated, and role lists are
    /// left untouched, so the operation is idempotent.
    pub fn augment_second_order(&mut self, threshold_m: f64) {
        let short: Vec<usize> = (0..self.n_links())
            .filter(|&i| self.links[i].length_m < threshold_m)
            .collect();
        // Collect additions first so iteration order over existing structures
        // is unaffected by mutation.
        let mut additions: Vec<Vec<usize>> = vec![Vec::new(); self.n_links()];
        for &i in &short {
            for &u in &self.upstream[i] {
                for &d in &self.downstream[i] {
                    if u != d {
                        additions[u].push(d);
                        additions[d].push(u);
                    }
                }
            }
        }
        for (i, mut extra) in additions.into_iter().enumerate() {
            extra.sort_by_key(|&n| self.links[n].id);
            extra.dedup();
            for n in extra {
                if !self.neighbors[i].contains(&n) {
                    self.neighbors[i].push(n);
                }
            }
        }
    }

    /// Parse a network from its text form.
    pub fn parse(text: &str) -> Result<RoadNetwork> {
        let mut raw = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut toks = line.split_whitespace();
            let ctx = |msg: String| Error::validation(format!("line {}: {msg}", lineno + 1));
            match toks.next() {
                Some("link") => {}
                Some(other) => {
                    return Err(ctx(format!("expected 'link', got '{other}'")));
                }
                None => unreachable!("non-empty line has a first token"),
            }
            let id: LinkId = toks
                .next()
                .ok_or_else(|| ctx("missing link id".into()))?
                .parse()
                .map_err(|e| ctx(format!("bad link id: {e}")))?;
            let length_m: f64 = toks
                .next()
                .ok_or_else(|| ctx("missing length".into()))?
                .parse()
                .map_err(|e| ctx(format!("bad length: {e}")))?;
            let flat = parse_id_list(
                toks.next().ok_or_else(|| ctx("missing neighbor list".into()))?,
            )
            .map_err(|e| ctx(format!("bad neighbor list: {e}")))?;
            let up_tok = toks.next().ok_or_else(|| ctx("missing up: list".into()))?;
            let down_tok = toks.next().ok_or_else(|| ctx("missing down: list".into()))?;
            let up = parse_role_list(up_tok, "up:").map_err(ctx)?;
            let down = parse_role_list(down_tok, "down:").map_err(ctx)?;
            if let Some(extra) = toks.next() {
                return Err(ctx(format!("unexpected trailing token '{extra}'")));
            }
            raw.push((id, length_m, flat, up, down));
        }
        RoadNetwork::new(raw)
    }

    /// Serialize to the text form. Feeding the output back through
    /// [`RoadNetwork::parse`] reproduces the same network, and re-serializing
    /// yields identical bytes.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let id_of = |idx: &usize| self.links[*idx].id.to_string();
        for (i, link) in self.links.iter().enumerate() {
            let flat: Vec<String> = self.neighbors[i].iter().map(id_of).collect();
            let up: Vec<String> = self.upstream[i].iter().map(id_of).collect();
            let down: Vec<String> = self.downstream[i].iter().map(id_of).collect();
            writeln!(
                out,
                "link {} {} {} up:{} down:{}",
                link.id,
                link.length_m,
                flat.join(","),
                up.join(","),
                down.join(",")
            )
            .expect("writing to String cannot fail");
        }
        out
    }

    /// Load a network from a file.
    pub fn load(path: &std::path::Path) -> Result<RoadNetwork> {
        let text = std::fs::read_to_string(path)?;
        RoadNetwork::parse(&text)
    }

    /// Save the network to a file.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.serialize())?;
        Ok(())
    }
}

fn parse_id_list(tok: &str) -> std::result::Result<Vec<LinkId>, String> {
    if tok.is_empty() {
        return Ok(Vec::new());
    }
    tok.split(',')
        .map(|s| s.parse::<LinkId>().map_err(|e| format!("'{s}': {e}")))
        .collect()
}

fn parse_role_list(tok: &str, prefix: &str) -> std::result::Result<Vec<LinkId>, String> {
    let rest = tok
        .strip_prefix(prefix)
        .ok_or_else(|| format!("expected '{prefix}...', got '{tok}'"))?;
    parse_id_list(rest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_line_net() -> &'static str {
        "link 1 1000 1,2,3 up:3 down:2\n\
         link 2 1000 1,2,3 up:1 down:3\n\
         link 3 1000 1,2,3 up:2 down:1\n"
    }

    #[test]
    fn parse_serialize_roundtrip_is_byte_identical() {
        let net = RoadNetwork::parse(three_line_net()).expect("valid network");
        let once = net.serialize();
        let net2 = RoadNetwork::parse(&once).expect("serialized form parses");
        assert_eq!(net, net2);
        assert_eq!(once, net2.serialize(), "serialization must be canonical");
    }

    #[test]
    fn neighbor_order_is_preserved_exactly() {
        let text = "link 5 100 7,5,9 up:7 down:9\n\
                    link 7 100 7,5 up: down:5\n\
                    link 9 100 5,9 up:5 down:\n";
        let net = RoadNetwork::parse(text).expect("valid network");
        let i5 = net.index_of(5).unwrap();
        let order: Vec<LinkId> = net.neighbors(i5).iter().map(|&n| net.link(n).id).collect();
        assert_eq!(order, vec![7, 5, 9], "file order is authoritative");
        assert_eq!(net.self_position(i5), 1);
    }

    #[test]
    fn missing_self_neighbor_is_rejected() {
        let text = "link 1 100 2 up: down:2\nlink 2 100 1,2 up:1 down:\n";
        let err = RoadNetwork::parse(text).unwrap_err();
        assert!(err.to_string().contains("contain the link itself"), "got: {err}");
    }

    #[test]
    fn duplicate_ids_unknown_refs_and_bad_lengths_are_rejected() {
        assert!(RoadNetwork::parse("link 1 100 1 up: down:\nlink 1 100 1 up: down:\n")
            .unwrap_err()
            .to_string()
            .contains("duplicate link id"));
        assert!(RoadNetwork::parse("link 1 100 1,9 up: down:\n")
            .unwrap_err()
            .to_string()
            .contains("unknown link id 9"));
        assert!(RoadNetwork::parse("link 1 0 1 up: down:\n")
            .unwrap_err()
            .to_string()
            .contains("length must be positive"));
        assert!(RoadNetwork::parse("link 1 -5 1 up: down:\n").is_err());
    }

    #[test]
    fn role_lists_must_be_neighbors_and_not_self() {
        let text = "link 1 100 1,2 up: down:3\nlink 2 100 1,2 up:1 down:\nlink 3 100 3 up: down:\n";
        let err = RoadNetwork::parse(text).unwrap_err();
        assert!(err.to_string().contains("not in the neighbor list"), "got: {err}");
        let text2 = "link 1 100 1 up:1 down:\n";
        assert!(RoadNetwork::parse(text2)
            .unwrap_err()
            .to_string()
            .contains("must not contain the link itself"));
    }

    #[test]
    fn route_contiguity_follows_downstream_role() {
        let net = RoadNetwork::parse(three_line_net()).unwrap();
        let (a, b, c) = (
            net.index_of(1).unwrap(),
            net.index_of(2).unwrap(),
            net.index_of(3).unwrap(),
        );
        assert!(net.check_route_contiguity(&[a, b, c, a]).is_ok());
        assert!(net.check_route_contiguity(&[a, c]).is_err(), "1 does not flow into 3");
        assert!(net.check_route_contiguity(&[]).is_err());
    }

    /// Chain 1 -> 2 -> 3 with a short middle link: 1 and 3 must become
    /// mutual neighbors, appended in ascending id order, without touching
    /// role lists, and a second application must change nothing.
    #[test]
    fn augmentation_bridges_short_links_idempotently() {
        let text = "link 1 500 1,2 up: down:2\n\
                    link 2 40 1,2,3 up:1 down:3\n\
                    link 3 500 2,3 up:2 down:\n";
        let mut net = RoadNetwork::parse(text).unwrap();
        net.augment_second_order(DEFAULT_SHORT_LINK_THRESHOLD_M);
        let i1 = net.index_of(1).unwrap();
        let i3 = net.index_of(3).unwrap();
        let ids = |list: &[usize]| -> Vec<LinkId> { list.iter().map(|&n| net.link(n).id).collect() };
        assert_eq!(ids(net.neighbors(i1)), vec![1, 2, 3]);
        assert_eq!(ids(net.neighbors(i3)), vec![2, 3, 1], "appended after existing entries");
        assert_eq!(ids(net.upstream(i3)), vec![2], "role lists unchanged");
        let snapshot = net.serialize();
        net.augment_second_order(DEFAULT_SHORT_LINK_THRESHOLD_M);
        assert_eq!(net.serialize(), snapshot, "augmentation must be idempotent");
    }

    #[test]
    fn augmentation_appends_multiple_ids_in_ascending_order() {
        // Short link 10 sits between upstream 9 and downstreams 7, 3 (ids
        // deliberately unsorted in the file).
        let text = "link 9 500 9,10 up: down:10\n\
                    link 10 30 9,10,7,3 up:9 down:7,3\n\
                    link 7 500 10,7 up:10 down:\n\
                    link 3 500 10,3 up:10 down:\n";
        let mut net = RoadNetwork::parse(text).unwrap();
        net.augment_second_order(75.0);
        let i9 = net.index_of(9).unwrap();
        let ids: Vec<LinkId> = net.neighbors(i9).iter().map(|&n| net.link(n).id).collect();
        assert_eq!(ids, vec![9, 10, 3, 7], "new ids 3 and 7 appended ascending");
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "# header\n\nlink 1 100 1 up: down:\n";
        assert_eq!(RoadNetwork::parse(text).unwrap().n_links(), 1);
    }
}
