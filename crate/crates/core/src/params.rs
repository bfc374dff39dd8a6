//! Bundled model parameters and their text-file format.
//!
//! A parameter file fixes everything needed to run inference on a given
//! network: the epoch length, the per-link observation Gaussians, and one
//! transition table (noisy-OR or saturation-pattern). Learned parameter files
//! use the same format as ground-truth files so the two can be diffed
//! directly.
//!
//! # File format
//!
//! ```text
//! delta <seconds>
//! obs <id> <mu_free> <sigma_free> <mu_cong> <sigma_cong>
//! noisyor <id> <q0> <q1> ... <qK>        # or: satpat <id> <a0> ... <aK>
//! ```
//!
//! One `obs` line and one transition line per link; transition entries follow
//! the link's neighbor-list order from the network file (entry 0 is the bias
//! for `noisyor`, the zero-active-neighbors cell for `satpat`). A file must
//! use a single transition family. Blank lines and `#` comments are ignored.
//! Serialization is canonical: re-serializing a parsed file reproduces it
//! byte for byte.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::cpd::{CpdKind, TransitionParams};
use crate::error::{Error, Result};
use crate::network::{LinkId, RoadNetwork};
use crate::travel_time::ObservationParams;

/// Everything needed to simulate, filter, learn, and predict on one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaParams {
    /// Epoch length in seconds.
    pub delta: f64,
    pub obs: ObservationParams,
    pub trans: TransitionParams,
}

impl ThetaParams {
    /// Validate internal consistency against a network.
    pub fn validate(&self, net: &RoadNetwork) -> Result<()> {
        if !self.delta.is_finite() || self.delta <= 0.0 {
            return Err(Error::validation(format!(
                "epoch length must be positive, got {}",
                self.delta
            )));
        }
        self.obs.validate(net.n_links())?;
        self.trans.validate(net)?;
        Ok(())
    }

    /// Parse from text, resolving link ids against `net`.
    pub fn parse(text: &str, net: &RoadNetwork) -> Result<ThetaParams> {
        let n = net.n_links();
        let mut delta: Option<f64> = None;
        let mut obs_seen: HashMap<usize, ([f64; 2], [f64; 2])> = HashMap::new();
        let mut trans_kind: Option<CpdKind> = None;
        let mut trans_rows: HashMap<usize, Vec<f64>> = HashMap::new();

        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let ctx = |msg: String| Error::validation(format!("line {}: {msg}", lineno + 1));
            let mut toks = line.split_whitespace();
            let head = toks.next().expect("non-empty line");
            let rest: Vec<&str> = toks.collect();
            let parse_f64 = |s: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|e| ctx(format!("bad number '{s}': {e}")))
            };
            match head {
                "delta" => {
                    if rest.len() != 1 {
                        return Err(ctx("delta takes exactly one value".into()));
                    }
                    if delta.replace(parse_f64(rest[0])?).is_some() {
                        return Err(ctx("duplicate delta line".into()));
                    }
                }
                "obs" => {
                    if rest.len() != 5 {
                        return Err(ctx("obs takes <id> and four numbers".into()));
                    }
                    let id: LinkId =
                        rest[0].parse().map_err(|e| ctx(format!("bad link id: {e}")))?;
                    let idx = net.index_of(id).map_err(|e| ctx(e.to_string()))?;
                    let vals: Vec<f64> =
                        rest[1..].iter().map(|s| parse_f64(s)).collect::<Result<_>>()?;
                    let entry = ([vals[0], vals[2]], [vals[1], vals[3]]);
                    if obs_seen.insert(idx, entry).is_some() {
                        return Err(ctx(format!("duplicate obs line for link {id}")));
                    }
                }
                "noisyor" | "satpat" => {
                    let kind =
                        if head == "noisyor" { CpdKind::NoisyOr } else { CpdKind::SatPat };
                    match trans_kind {
                        None => trans_kind = Some(kind),
                        Some(k) if k != kind => {
                            return Err(ctx(
                                "file mixes noisyor and satpat lines; pick one family".into(),
                            ));
                        }
                        _ => {}
                    }
                    if rest.is_empty() {
                        return Err(ctx(format!("{head} line missing link id")));
                    }
                    let id: LinkId =
                        rest[0].parse().map_err(|e| ctx(format!("bad link id: {e}")))?;
                    let idx = net.index_of(id).map_err(|e| ctx(e.to_string()))?;
                    let row: Vec<f64> =
                        rest[1..].iter().map(|s| parse_f64(s)).collect::<Result<_>>()?;
                    if trans_rows.insert(idx, row).is_some() {
                        return Err(ctx(format!("duplicate transition line for link {id}")));
                    }
                }
                other => return Err(ctx(format!("unknown record type '{other}'"))),
            }
        }

        let delta =
            delta.ok_or_else(|| Error::validation("parameter file missing delta line"))?;
        let mut mu = Vec::with_capacity(n);
        let mut sigma = Vec::with_capacity(n);
        for idx in 0..n {
            let (m, s) = obs_seen.get(&idx).ok_or_else(|| {
                Error::validation(format!("missing obs line for link {}", net.link(idx).id))
            })?;
            mu.push(*m);
            sigma.push(*s);
        }
        let kind = trans_kind
            .ok_or_else(|| Error::validation("parameter file has no transition lines"))?;
        let mut rows = Vec::with_capacity(n);
        for idx in 0..n {
            let row = trans_rows.remove(&idx).ok_or_else(|| {
                Error::validation(format!(
                    "missing transition line for link {}",
                    net.link(idx).id
                ))
            })?;
            rows.push(row);
        }
        let trans = match kind {
            CpdKind::NoisyOr => TransitionParams::NoisyOr(rows),
            CpdKind::SatPat => TransitionParams::SatPat(rows),
        };

        let theta = ThetaParams { delta, obs: ObservationParams { mu, sigma }, trans };
        theta.validate(net)?;
        Ok(theta)
    }

    /// Serialize to canonical text form (links in network order).
    pub fn serialize(&self, net: &RoadNetwork) -> String {
        let mut out = String::new();
        writeln!(out, "delta {}", self.delta).unwrap();
        for (idx, link) in net.links().iter().enumerate() {
            writeln!(
                out,
                "obs {} {} {} {} {}",
                link.id,
                self.obs.mu[idx][0],
                self.obs.sigma[idx][0],
                self.obs.mu[idx][1],
                self.obs.sigma[idx][1]
            )
            .unwrap();
        }
        let keyword = self.trans.kind().keyword();
        for (idx, link) in net.links().iter().enumerate() {
            let row: Vec<String> =
                self.trans.rows()[idx].iter().map(|v| v.to_string()).collect();
            writeln!(out, "{keyword} {} {}", link.id, row.join(" ")).unwrap();
        }
        out
    }

    /// Load parameters from a file, validating against `net`.
    pub fn load(path: &std::path::Path, net: &RoadNetwork) -> Result<ThetaParams> {
        let text = std::fs::read_to_string(path)?;
        ThetaParams::parse(&text, net)
    }

    /// Save parameters to a file in canonical form.
    pub fn save(&self, path: &std::path::Path, net: &RoadNetwork) -> Result<()> {
        std::fs::write(path, self.serialize(net))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> RoadNetwork {
        RoadNetwork::parse(
            "link 1 1000 1,2,3 up:3 down:2\n\
             link 2 1000 1,2,3 up:1 down:3\n\
             link 3 1000 1,2,3 up:2 down:1\n",
        )
        .unwrap()
    }

    fn sample_text() -> &'static str {
        "delta 300\n\
         obs 1 90 6 180 6\n\
         obs 2 90 6 180 6\n\
         obs 3 90 6 180 6\n\
         noisyor 1 0.8 1 1 0\n\
         noisyor 2 1 0 1 1\n\
         noisyor 3 1 1 0 1\n"
    }

    #[test]
    fn parse_serialize_roundtrip_is_byte_identical() {
        let net = net();
        let theta = ThetaParams::parse(sample_text(), &net).unwrap();
        let once = theta.serialize(&net);
        let theta2 = ThetaParams::parse(&once, &net).unwrap();
        assert_eq!(theta, theta2);
        assert_eq!(once, theta2.serialize(&net));
    }

    #[test]
    fn parsed_rows_follow_neighbor_order() {
        let net = net();
        let theta = ThetaParams::parse(sample_text(), &net).unwrap();
        match &theta.trans {
            TransitionParams::NoisyOr(rows) => {
                // Link 2's neighbor order is [1, 2, 3]; the q for neighbor 1
                // sits at position 1 of the row.
                let idx = net.index_of(2).unwrap();
                assert_eq!(rows[idx], vec![1.0, 0.0, 1.0, 1.0]);
            }
            _ => panic!("expected noisy-OR"),
        }
        assert_eq!(theta.delta, 300.0);
        assert_eq!(theta.obs.mu[0], [90.0, 180.0]);
        assert_eq!(theta.obs.sigma[2], [6.0, 6.0]);
    }

    #[test]
    fn satpat_rows_parse_with_their_own_keyword() {
        let net = net();
        let text = "delta 300\n\
                    obs 1 90 6 180 6\nobs 2 90 6 180 6\nobs 3 90 6 180 6\n\
                    satpat 1 0.1 0.2 0.5 0.9\n\
                    satpat 2 0.1 0.2 0.5 0.9\n\
                    satpat 3 0.1 0.2 0.5 0.9\n";
        let theta = ThetaParams::parse(text, &net).unwrap();
        assert_eq!(theta.trans.kind(), CpdKind::SatPat);
    }

    #[test]
    fn mixed_families_are_rejected() {
        let net = net();
        let text = sample_text().replace("noisyor 3 1 1 0 1", "satpat 3 0.1 0.2 0.5 0.9");
        let err = ThetaParams::parse(&text, &net).unwrap_err();
        assert!(err.to_string().contains("mixes"), "got: {err}");
    }

    #[test]
    fn missing_or_duplicate_records_are_rejected() {
        let net = net();
        for (needle, broken) in [
            ("missing delta", sample_text().replace("delta 300\n", "")),
            ("missing obs", sample_text().replace("obs 2 90 6 180 6\n", "")),
            ("missing transition", sample_text().replace("noisyor 3 1 1 0 1\n", "")),
            (
                "duplicate delta",
                format!("delta 300\n{}", sample_text()),
            ),
            (
                "duplicate obs",
                format!("{}obs 1 90 6 180 6\n", sample_text()),
            ),
        ] {
            assert!(ThetaParams::parse(&broken, &net).is_err(), "case: {needle}");
        }
    }

    #[test]
    fn wrong_row_length_and_bad_values_are_rejected() {
        let net = net();
        let short = sample_text().replace("noisyor 1 0.8 1 1 0", "noisyor 1 0.8 1 1");
        assert!(ThetaParams::parse(&short, &net).is_err());
        let out_of_range = sample_text().replace("noisyor 1 0.8 1 1 0", "noisyor 1 1.2 1 1 0");
        assert!(ThetaParams::parse(&out_of_range, &net).is_err());
        let neg_sigma = sample_text().replace("obs 1 90 6 180 6", "obs 1 90 -6 180 6");
        assert!(ThetaParams::parse(&neg_sigma, &net).is_err());
        let bad_delta = sample_text().replace("delta 300", "delta 0");
        assert!(ThetaParams::parse(&bad_delta, &net).is_err());
        let unknown = format!("{}frob 1 2\n", sample_text());
        assert!(ThetaParams::parse(&unknown, &net).is_err());
    }
}
