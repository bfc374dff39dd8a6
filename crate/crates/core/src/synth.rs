//! Synthetic trace generation.
//!
//! Produces exactly the kind of data the learning pipeline consumes in the
//! field — per-epoch vehicle trajectory records — from a known ground-truth
//! model, so that learned parameters and predictions can be scored against
//! the truth.
//!
//! Simulation proceeds per day. Hidden congestion states start all-free at
//! epoch 0 and evolve epoch by epoch under the transition model. Probe
//! vehicles drive fixed circular routes; within an epoch a vehicle repeatedly
//! samples a full-link traversal time from the observation model of the link
//! it is on (and the link's current state) and advances until the epoch's
//! time budget is used up, recording the links it touched and the fractions
//! of the first and last links covered. Every record therefore spans exactly
//! one epoch: its observed duration equals the epoch length, and the
//! information lies in *how far* the vehicle got.
//!
//! The module also ships a fixed 20-link benchmark: two one-way circular
//! loops (links 1..=10 and 11..=20, all 1 km) crossing at four central links
//! (3, 8, 13, 18), with congestion germinating at four origin links (1, 6,
//! 11, 16) and propagating deterministically down four five-link corridors
//! before dying out. A variant adds self-persistence on every link so that
//! congestion, once triggered, tends to linger.
//!
//! # File formats
//!
//! Trajectory records, one per line:
//!
//! ```text
//! <day> <epoch> <vehicle> <y_seconds> <alpha_s> <alpha_e> <link1,link2,...>
//! ```
//!
//! Ground-truth states, one line per (day, epoch):
//!
//! ```text
//! <day> <epoch> <bits>
//! ```
//!
//! where `bits` has one `0`/`1` character per link, in network link order.

use std::fmt::Write as _;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::bits::gather_bits;
use crate::cpd::{noisyor_sample_step, satpat_sample_step, TransitionParams};
use crate::error::{Error, Result};
use crate::network::{LinkId, RoadNetwork};
use crate::params::ThetaParams;
use crate::rng::{substream, Domain};
use crate::travel_time::ObservationParams;

/// Maximum resampling attempts for a nonpositive traversal-time draw.
const MAX_TIME_REDRAWS: usize = 100;

/// Hard cap on links crossed per vehicle per epoch; exceeding it indicates
/// pathological parameters rather than a plausible trajectory.
const MAX_LINKS_PER_EPOCH: usize = 10_000;

/// Result of evolving hidden states for one day.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEvolution {
    /// Joint state mask per epoch `1..=T` (`states[t-1]` is epoch `t`).
    /// Epoch 0 is implicitly all-free.
    pub states: Vec<u64>,
    /// For noisy-OR models: the sampled auxiliary cause masks, indexed as
    /// `aux[step][link]` where step `t` covers the transition from epoch `t`
    /// to `t + 1` (step 0 leaves the all-free state). `None` for models
    /// without auxiliary variables.
    pub aux: Option<Vec<Vec<u64>>>,
}

/// One per-epoch trajectory record.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryObservation {
    pub day: u32,
    pub epoch: u32,
    pub vehicle: u32,
    /// Observed duration in seconds (always the epoch length for generated
    /// records).
    pub y_seconds: f64,
    /// Fraction of the first link still ahead at the record start (traversed
    /// within the record unless the record ends on the same link).
    pub alpha_s: f64,
    /// Fraction of the last link traversed from its start by the record end.
    pub alpha_e: f64,
    /// External link ids in traversal order.
    pub links: Vec<LinkId>,
}

/// One simulated day: hidden states plus records grouped by epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct DayData {
    /// 1-based day number.
    pub day: u32,
    /// Joint state mask per epoch `1..=T`.
    pub states: Vec<u64>,
    /// `epochs[t-1]` holds the records of epoch `t`, in generation order.
    pub epochs: Vec<Vec<TrajectoryObservation>>,
}

/// A multi-day trace collection over one network.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceDataset {
    pub n_links: usize,
    pub days: Vec<DayData>,
}

impl TraceDataset {
    /// Total number of trajectory records.
    pub fn n_observations(&self) -> usize {
        self.days.iter().map(|d| d.epochs.iter().map(Vec::len).sum::<usize>()).sum()
    }

    /// Number of epochs per day (identical across days).
    pub fn epochs_per_day(&self) -> usize {
        self.days.first().map(|d| d.states.len()).unwrap_or(0)
    }
}

/// A probe vehicle on a fixed circular route.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleRoute {
    /// 1-based vehicle id as written to trace files.
    pub vehicle: u32,
    /// The cyclic route as dense link indices.
    pub cycle: Vec<usize>,
    /// Starting position within `cycle`.
    pub start_pos: usize,
    /// Meters of the starting link still ahead at the start.
    pub start_remaining_m: f64,
}

/// Evolve hidden congestion states for `epochs` epochs from the all-free
/// state, recording auxiliary cause masks for noisy-OR models.
pub fn evolve_states(
    trans: &TransitionParams,
    net: &RoadNetwork,
    epochs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<StateEvolution> {
    if net.n_links() > crate::bits::MAX_MASK_BITS {
        return Err(Error::validation(format!(
            "state evolution supports at most {} links, network has {}",
            crate::bits::MAX_MASK_BITS,
            net.n_links()
        )));
    }
    let n = net.n_links();
    let rows = trans.rows();
    let record_aux = matches!(trans, TransitionParams::NoisyOr(_));
    let mut states = Vec::with_capacity(epochs);
    let mut aux = if record_aux { Some(Vec::with_capacity(epochs)) } else { None };
    let mut prev = 0u64;
    for _ in 0..epochs {
        let mut next = 0u64;
        let mut aux_row = if record_aux { vec![0u64; n] } else { Vec::new() };
        for i in 0..n {
            let eta = gather_bits(prev, net.neighbors(i));
            let congested = match trans {
                TransitionParams::NoisyOr(_) => {
                    let (s, a) = noisyor_sample_step(&rows[i], eta, rng);
                    aux_row[i] = a;
                    s
                }
                TransitionParams::SatPat(_) => satpat_sample_step(&rows[i], eta, rng),
            };
            if congested {
                next |= 1u64 << i;
            }
        }
        states.push(next);
        if let Some(ref mut a) = aux {
            a.push(aux_row);
        }
        prev = next;
    }
    Ok(StateEvolution { states, aux })
}

/// Links touched by one vehicle over one epoch, as dense indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Passage {
    pub links: Vec<usize>,
    pub alpha_s: f64,
    pub alpha_e: f64,
}

/// Advance one vehicle through one epoch of length `delta` seconds.
///
/// `pos` is the vehicle's `(cycle position, remaining meters)` and is updated
/// in place. Traversal times are drawn per link entry from the observation
/// model under the epoch's `state_mask`; nonpositive draws are rejected and
/// redrawn up to a bounded number of times.
pub fn advance_vehicle(
    cycle: &[usize],
    pos: &mut (usize, f64),
    state_mask: u64,
    obs: &ObservationParams,
    net: &RoadNetwork,
    delta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Passage> {
    let sample_tau = |link: usize, rng: &mut ChaCha8Rng| -> Result<f64> {
        let s = ((state_mask >> link) & 1) as usize;
        let normal = Normal::new(obs.mu[link][s], obs.sigma[link][s])
            .map_err(|e| Error::numerical(format!("bad observation parameters: {e}")))?;
        for _ in 0..MAX_TIME_REDRAWS {
            let tau = normal.sample(rng);
            if tau > 0.0 {
                return Ok(tau);
            }
        }
        Err(Error::numerical(format!(
            "could not draw a positive traversal time for link id {} after {MAX_TIME_REDRAWS} tries",
            net.link(link).id
        )))
    };

    let (mut c, mut remaining) = *pos;
    let first_len = net.link(cycle[c]).length_m;
    let alpha_s = remaining / first_len;
    let mut links = vec![cycle[c]];
    let mut budget = delta;
    let alpha_e;
    loop {
        if links.len() > MAX_LINKS_PER_EPOCH {
            return Err(Error::numerical(
                "vehicle crossed an implausible number of links in one epoch",
            ));
        }
        let link = cycle[c];
        let len = net.link(link).length_m;
        let tau = sample_tau(link, rng)?;
        let time_to_finish = tau * remaining / len;
        if time_to_finish > budget {
            // The epoch ends mid-link.
            remaining -= len * budget / tau;
            alpha_e = (len - remaining) / len;
            break;
        }
        // The link boundary is reached within the epoch.
        budget -= time_to_finish;
        c = (c + 1) % cycle.len();
        remaining = net.link(cycle[c]).length_m;
        if budget <= 0.0 {
            // Landed exactly on the boundary: the finished link closes the
            // record with a full traversal.
            alpha_e = 1.0;
            break;
        }
        links.push(cycle[c]);
    }
    *pos = (c, remaining);
    Ok(Passage { links, alpha_s, alpha_e })
}

/// Simulate one day: hidden states plus all vehicle records.
pub fn simulate_day(
    net: &RoadNetwork,
    theta: &ThetaParams,
    routes: &[VehicleRoute],
    day: u32,
    epochs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DayData> {
    let evolution = evolve_states(&theta.trans, net, epochs, rng)?;
    let mut positions: Vec<(usize, f64)> =
        routes.iter().map(|r| (r.start_pos, r.start_remaining_m)).collect();
    let mut by_epoch = Vec::with_capacity(epochs);
    for t in 1..=epochs {
        let state_mask = evolution.states[t - 1];
        let mut records = Vec::with_capacity(routes.len());
        for (route, pos) in routes.iter().zip(positions.iter_mut()) {
            let passage =
                advance_vehicle(&route.cycle, pos, state_mask, &theta.obs, net, theta.delta, rng)?;
            records.push(TrajectoryObservation {
                day,
                epoch: t as u32,
                vehicle: route.vehicle,
                y_seconds: theta.delta,
                alpha_s: passage.alpha_s,
                alpha_e: passage.alpha_e,
                links: passage.links.iter().map(|&l| net.link(l).id).collect(),
            });
        }
        by_epoch.push(records);
    }
    Ok(DayData { day, states: evolution.states, epochs: by_epoch })
}

/// Simulate a multi-day dataset. Days are independent given the master seed
/// (each draws from its own substream) and are simulated in parallel.
pub fn generate_dataset(
    net: &RoadNetwork,
    theta: &ThetaParams,
    routes: &[VehicleRoute],
    days: usize,
    epochs: usize,
    master_seed: u64,
) -> Result<TraceDataset> {
    theta.validate(net)?;
    if days == 0 || epochs == 0 {
        return Err(Error::validation("days and epochs must both be positive"));
    }
    for route in routes {
        net.check_route_contiguity(&route.cycle)?;
        if route.start_pos >= route.cycle.len() {
            return Err(Error::validation(format!(
                "vehicle {}: start position outside its cycle",
                route.vehicle
            )));
        }
        let len = net.link(route.cycle[route.start_pos]).length_m;
        if !(route.start_remaining_m > 0.0 && route.start_remaining_m <= len) {
            return Err(Error::validation(format!(
                "vehicle {}: starting remainder {}m outside (0, {}m]",
                route.vehicle, route.start_remaining_m, len
            )));
        }
    }
    let days_data: Result<Vec<DayData>> = (1..=days as u32)
        .into_par_iter()
        .map(|day| {
            let mut rng = substream(master_seed, Domain::Generate, day as u64);
            simulate_day(net, theta, routes, day, epochs, &mut rng)
        })
        .collect();
    Ok(TraceDataset { n_links: net.n_links(), days: days_data? })
}

// ---------------------------------------------------------------------------
// Built-in benchmark
// ---------------------------------------------------------------------------

/// Congestion regime planted in the benchmark ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    /// Congestion germinates at the four origins, races down its corridor
    /// one link per epoch, and dies at the corridor end.
    ShortLived,
    /// Same, plus weak self-persistence on every link.
    Persisting,
}

impl Pattern {
    pub fn keyword(self) -> &'static str {
        match self {
            Pattern::ShortLived => "short",
            Pattern::Persisting => "persist",
        }
    }
}

/// Benchmark constants.
pub const BENCHMARK_LINK_LENGTH_M: f64 = 1000.0;
pub const BENCHMARK_MU_FREE_S: f64 = 90.0;
pub const BENCHMARK_MU_CONG_S: f64 = 180.0;
pub const BENCHMARK_SIGMA_S: f64 = 6.0;
pub const BENCHMARK_DELTA_S: f64 = 300.0;
/// Links where congestion germinates spontaneously.
pub const BENCHMARK_ORIGINS: [LinkId; 4] = [1, 6, 11, 16];
/// Probability of spontaneous germination at an origin, per epoch.
pub const BENCHMARK_GERMINATION_P: f64 = 0.2;
/// Self-persistence probability in the persisting pattern.
pub const BENCHMARK_PERSISTENCE_P: f64 = 0.1;

/// The directed edges along which congestion propagates with probability one:
/// `(from, to)` pairs inside the four five-link corridors.
pub fn benchmark_propagation_edges() -> Vec<(LinkId, LinkId)> {
    let mut edges = Vec::new();
    for corridor_start in [1u32, 6, 11, 16] {
        for k in 0..4 {
            edges.push((corridor_start + k, corridor_start + k + 1));
        }
    }
    edges
}

/// The fixed 20-link benchmark network: two one-way loops crossing at four
/// central links.
///
/// Loop one cycles through links 1..=10, loop two through 11..=20; all links
/// are 1 km. Each link neighbors its predecessor, itself, and its successor
/// in its loop; the four crossing links additionally neighbor the two
/// crossing links of the other loop. Neighbor lists are in ascending id
/// order.
pub fn benchmark_network() -> RoadNetwork {
    let mut raw = Vec::with_capacity(20);
    let lateral: &[(LinkId, [LinkId; 2])] =
        &[(3, [13, 18]), (8, [13, 18]), (13, [3, 8]), (18, [3, 8])];
    for id in 1..=20u32 {
        let base = if id <= 10 { 1 } else { 11 };
        let prev = if id == base { base + 9 } else { id - 1 };
        let next = if id == base + 9 { base } else { id + 1 };
        let mut flat = vec![prev, id, next];
        if let Some((_, lat)) = lateral.iter().find(|(l, _)| *l == id) {
            flat.extend_from_slice(lat);
        }
        flat.sort_unstable();
        raw.push((id, BENCHMARK_LINK_LENGTH_M, flat, vec![prev], vec![next]));
    }
    RoadNetwork::new(raw).expect("benchmark network is statically valid")
}

/// Ground-truth parameters for the benchmark under the given pattern.
pub fn benchmark_theta(pattern: Pattern, net: &RoadNetwork) -> ThetaParams {
    let n = net.n_links();
    let obs = ObservationParams {
        mu: vec![[BENCHMARK_MU_FREE_S, BENCHMARK_MU_CONG_S]; n],
        sigma: vec![[BENCHMARK_SIGMA_S, BENCHMARK_SIGMA_S]; n],
    };
    let edges = benchmark_propagation_edges();
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let id = net.link(i).id;
        let mut row = vec![1.0; net.neighbors(i).len() + 1];
        if BENCHMARK_ORIGINS.contains(&id) {
            row[0] = 1.0 - BENCHMARK_GERMINATION_P;
        }
        for (pos, &nbr) in net.neighbors(i).iter().enumerate() {
            let nbr_id = net.link(nbr).id;
            if edges.contains(&(nbr_id, id)) {
                row[pos + 1] = 0.0;
            }
        }
        if pattern == Pattern::Persisting {
            row[net.self_position(i) + 1] = 1.0 - BENCHMARK_PERSISTENCE_P;
        }
        rows.push(row);
    }
    ThetaParams { delta: BENCHMARK_DELTA_S, obs, trans: TransitionParams::NoisyOr(rows) }
}

/// The benchmark's sixteen probe vehicles: eight per loop, evenly spaced
/// around it.
pub fn benchmark_routes(net: &RoadNetwork) -> Vec<VehicleRoute> {
    let mut routes = Vec::with_capacity(16);
    for loop_idx in 0..2u32 {
        let first_id = 1 + 10 * loop_idx;
        let cycle: Vec<usize> = (0..10)
            .map(|k| net.index_of(first_id + k).expect("benchmark ids exist"))
            .collect();
        let loop_len = 10.0 * BENCHMARK_LINK_LENGTH_M;
        for v in 0..8u32 {
            let offset = v as f64 * loop_len / 8.0;
            let start_pos = (offset / BENCHMARK_LINK_LENGTH_M).floor() as usize;
            let into_link = offset - start_pos as f64 * BENCHMARK_LINK_LENGTH_M;
            routes.push(VehicleRoute {
                vehicle: 1 + v + 8 * loop_idx,
                cycle: cycle.clone(),
                start_pos,
                start_remaining_m: BENCHMARK_LINK_LENGTH_M - into_link,
            });
        }
    }
    routes
}

/// Build the benchmark and simulate a dataset from it in one call.
pub fn build_benchmark(
    pattern: Pattern,
    days: usize,
    epochs: usize,
    delta: f64,
    seed: u64,
) -> Result<(RoadNetwork, ThetaParams, TraceDataset)> {
    let net = benchmark_network();
    let mut theta = benchmark_theta(pattern, &net);
    theta.delta = delta;
    let routes = benchmark_routes(&net);
    let dataset = generate_dataset(&net, &theta, &routes, days, epochs, seed)?;
    Ok((net, theta, dataset))
}

// ---------------------------------------------------------------------------
// Small ring fixture (testing and exact-inference checks)
// ---------------------------------------------------------------------------

/// A one-way ring of `n` links (ids 1..=n), each neighboring its predecessor,
/// itself, and its successor, with ascending-id neighbor lists.
pub fn ring_network(n: usize, length_m: f64) -> RoadNetwork {
    assert!(n >= 3, "a ring needs at least 3 links");
    let mut raw = Vec::with_capacity(n);
    for id in 1..=n as u32 {
        let prev = if id == 1 { n as u32 } else { id - 1 };
        let next = if id == n as u32 { 1 } else { id + 1 };
        let mut flat = vec![prev, id, next];
        flat.sort_unstable();
        flat.dedup();
        raw.push((id, length_m, flat, vec![prev], vec![next]));
    }
    RoadNetwork::new(raw).expect("ring network is statically valid")
}

/// Ground truth for the three-link ring fixture: congestion germinates at
/// link 1 and hops deterministically 1 -> 2 -> 3 before dying out.
pub fn three_ring_theta(net: &RoadNetwork) -> ThetaParams {
    assert_eq!(net.n_links(), 3, "fixture is for the 3-ring");
    let obs = ObservationParams {
        mu: vec![[BENCHMARK_MU_FREE_S, BENCHMARK_MU_CONG_S]; 3],
        sigma: vec![[BENCHMARK_SIGMA_S, BENCHMARK_SIGMA_S]; 3],
    };
    // Neighbor order is [1, 2, 3] for every link.
    let rows = vec![
        vec![1.0 - BENCHMARK_GERMINATION_P, 1.0, 1.0, 1.0],
        vec![1.0, 0.0, 1.0, 1.0],
        vec![1.0, 1.0, 0.0, 1.0],
    ];
    ThetaParams {
        delta: BENCHMARK_DELTA_S,
        obs,
        trans: TransitionParams::NoisyOr(rows),
    }
}

/// Probe vehicles for ring fixtures, evenly spaced around the ring.
pub fn ring_routes(net: &RoadNetwork, n_vehicles: usize) -> Vec<VehicleRoute> {
    let n = net.n_links();
    let cycle: Vec<usize> = (1..=n as u32).map(|id| net.index_of(id).unwrap()).collect();
    let ring_len: f64 = cycle.iter().map(|&l| net.link(l).length_m).sum();
    (0..n_vehicles)
        .map(|v| {
            let offset = v as f64 * ring_len / n_vehicles as f64;
            let mut acc = 0.0;
            let mut start_pos = 0;
            let mut into_link = offset;
            for (k, &l) in cycle.iter().enumerate() {
                let len = net.link(l).length_m;
                if offset < acc + len {
                    start_pos = k;
                    into_link = offset - acc;
                    break;
                }
                acc += len;
            }
            VehicleRoute {
                vehicle: v as u32 + 1,
                cycle: cycle.clone(),
                start_pos,
                start_remaining_m: net.link(cycle[start_pos]).length_m - into_link,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Trace file I/O
// ---------------------------------------------------------------------------

/// Serialize all trajectory records to the trace text format.
pub fn serialize_traces(dataset: &TraceDataset) -> String {
    let mut out = String::new();
    for day in &dataset.days {
        for epoch in &day.epochs {
            for r in epoch {
                let links: Vec<String> = r.links.iter().map(|l| l.to_string()).collect();
                writeln!(
                    out,
                    "{} {} {} {} {} {} {}",
                    r.day,
                    r.epoch,
                    r.vehicle,
                    r.y_seconds,
                    r.alpha_s,
                    r.alpha_e,
                    links.join(",")
                )
                .unwrap();
            }
        }
    }
    out
}

/// Serialize ground-truth states to the sidecar text format.
pub fn serialize_states(dataset: &TraceDataset) -> String {
    let mut out = String::new();
    for day in &dataset.days {
        for (t, &mask) in day.states.iter().enumerate() {
            let bits: String = (0..dataset.n_links)
                .map(|k| if (mask >> k) & 1 == 1 { '1' } else { '0' })
                .collect();
            writeln!(out, "{} {} {}", day.day, t + 1, bits).unwrap();
        }
    }
    out
}

/// Write `traces.txt` and `states.txt` into `dir`.
pub fn write_dataset(dataset: &TraceDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("traces.txt"), serialize_traces(dataset))?;
    std::fs::write(dir.join("states.txt"), serialize_states(dataset))?;
    Ok(())
}

/// Load a dataset previously written by [`write_dataset`] (or assembled by
/// hand in the same format) from `dir`, validating against `net`.
pub fn load_dataset(dir: &Path, net: &RoadNetwork) -> Result<TraceDataset> {
    let traces_text = std::fs::read_to_string(dir.join("traces.txt"))?;
    let states_text = std::fs::read_to_string(dir.join("states.txt"))?;
    parse_dataset(&traces_text, &states_text, net)
}

/// Parse a dataset from the two text blobs.
pub fn parse_dataset(
    traces_text: &str,
    states_text: &str,
    net: &RoadNetwork,
) -> Result<TraceDataset> {
    let n = net.n_links();

    // States first: they define the (day, epoch) grid.
    let mut state_rows: Vec<(u32, u32, u64)> = Vec::new();
    for (lineno, line) in states_text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let ctx =
            |msg: String| Error::validation(format!("states line {}: {msg}", lineno + 1));
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(ctx("expected '<day> <epoch> <bits>'".into()));
        }
        let day: u32 = toks[0].parse().map_err(|e| ctx(format!("bad day: {e}")))?;
        let epoch: u32 = toks[1].parse().map_err(|e| ctx(format!("bad epoch: {e}")))?;
        let bits = toks[2];
        if bits.len() != n {
            return Err(ctx(format!("expected {n} state bits, got {}", bits.len())));
        }
        let mut mask = 0u64;
        for (k, ch) in bits.chars().enumerate() {
            match ch {
                '1' => mask |= 1u64 << k,
                '0' => {}
                other => return Err(ctx(format!("bad state character '{other}'"))),
            }
        }
        if day == 0 || epoch == 0 {
            return Err(ctx("days and epochs are 1-based".into()));
        }
        state_rows.push((day, epoch, mask));
    }
    if state_rows.is_empty() {
        return Err(Error::validation("states file has no rows"));
    }
    let n_days = state_rows.iter().map(|r| r.0).max().unwrap() as usize;
    let epochs = state_rows.iter().map(|r| r.1).max().unwrap() as usize;
    let mut states: Vec<Vec<Option<u64>>> = vec![vec![None; epochs]; n_days];
    for (day, epoch, mask) in state_rows {
        let slot = &mut states[day as usize - 1][epoch as usize - 1];
        if slot.replace(mask).is_some() {
            return Err(Error::validation(format!(
                "duplicate states row for day {day} epoch {epoch}"
            )));
        }
    }

    let mut days: Vec<DayData> = (1..=n_days as u32)
        .map(|day| {
            let day_states: Result<Vec<u64>> = states[day as usize - 1]
                .iter()
                .enumerate()
                .map(|(t, s)| {
                    s.ok_or_else(|| {
                        Error::validation(format!(
                            "missing states row for day {day} epoch {}",
                            t + 1
                        ))
                    })
                })
                .collect();
            Ok(DayData { day, states: day_states?, epochs: vec![Vec::new(); epochs] })
        })
        .collect::<Result<_>>()?;

    for (lineno, line) in traces_text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let ctx =
            |msg: String| Error::validation(format!("traces line {}: {msg}", lineno + 1));
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 7 {
            return Err(ctx(format!("expected 7 fields, got {}", toks.len())));
        }
        let day: u32 = toks[0].parse().map_err(|e| ctx(format!("bad day: {e}")))?;
        let epoch: u32 = toks[1].parse().map_err(|e| ctx(format!("bad epoch: {e}")))?;
        let vehicle: u32 = toks[2].parse().map_err(|e| ctx(format!("bad vehicle: {e}")))?;
        let y_seconds: f64 = toks[3].parse().map_err(|e| ctx(format!("bad duration: {e}")))?;
        let alpha_s: f64 = toks[4].parse().map_err(|e| ctx(format!("bad alpha_s: {e}")))?;
        let alpha_e: f64 = toks[5].parse().map_err(|e| ctx(format!("bad alpha_e: {e}")))?;
        let links: Vec<LinkId> = toks[6]
            .split(',')
            .map(|s| s.parse::<LinkId>().map_err(|e| ctx(format!("bad link id '{s}': {e}"))))
            .collect::<Result<_>>()?;
        if links.is_empty() {
            return Err(ctx("record has no links".into()));
        }
        for id in &links {
            net.index_of(*id).map_err(|e| ctx(e.to_string()))?;
        }
        if day == 0 || day as usize > n_days {
            return Err(ctx(format!("day {day} outside the states grid")));
        }
        if epoch == 0 || epoch as usize > epochs {
            return Err(ctx(format!("epoch {epoch} outside the states grid")));
        }
        if !(y_seconds.is_finite() && y_seconds > 0.0) {
            return Err(ctx(format!("duration must be positive, got {y_seconds}")));
        }
        days[day as usize - 1].epochs[epoch as usize - 1].push(TrajectoryObservation {
            day,
            epoch,
            vehicle,
            y_seconds,
            alpha_s,
            alpha_e,
            links,
        });
    }

    Ok(TraceDataset { n_links: n, days })
}
