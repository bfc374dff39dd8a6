//! Exact references for small networks.
//!
//! On a network of `n` links the joint state space has `2^n` points, so for
//! small `n` the model admits exact computation: the full joint transition
//! matrix, an exact forward (filtering) pass with per-epoch normalization,
//! a brute-force likelihood by enumerating whole state sequences, an exact
//! distribution-propagating forecast, an enumeration form of the trip
//! predictor, and a Monte-Carlo trip reference that averages the predictor
//! over sampled state chains. None of these scale; they exist to measure the
//! particle-based production code against ground truth.
//!
//! Joint state indexing matches the particle masks: bit `i` of a state index
//! is link `i`'s congestion indicator. Inside the enumeration predictor,
//! prefix states are keyed with the route's first link in the most
//! significant bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bits::gather_bits;
use crate::cpd::TransitionParams;
use crate::error::{Error, Result};
use crate::filter::PreparedObs;
use crate::network::RoadNetwork;
use crate::params::ThetaParams;
use crate::predict::{
    predict_route, segment_route, validate_route_query, ParticleForecast, Prediction,
    PrefixTimes, StateForecast,
};
use crate::travel_time::ObservationParams;

/// Largest network for which the joint transition matrix may be materialized
/// (`4^n` entries grows hopeless quickly).
pub const MAX_EXACT_LINKS: usize = 14;

/// Build the dense joint transition matrix, row-major: entry `u * 2^n + v`
/// is the probability of moving from joint state `u` to joint state `v`.
/// Every row is a product of per-link probabilities and sums to one.
pub fn build_joint_transition(trans: &TransitionParams, net: &RoadNetwork) -> Result<Vec<f64>> {
    let n = net.n_links();
    if n > MAX_EXACT_LINKS {
        return Err(Error::validation(format!(
            "exact computation supports at most {MAX_EXACT_LINKS} links, network has {n}"
        )));
    }
    trans.validate(net)?;
    let size = 1usize << n;
    let rows = trans.rows();
    let mut joint = vec![0.0f64; size * size];
    let mut p1 = vec![0.0f64; n];
    for u in 0..size {
        for i in 0..n {
            let eta = gather_bits(u as u64, net.neighbors(i));
            p1[i] = trans.congestion_prob(&rows[i], eta);
        }
        // Tensor-product fill: double the populated width once per link.
        let row = &mut joint[u * size..(u + 1) * size];
        row[0] = 1.0;
        let mut width = 1usize;
        for i in 0..n {
            for k in 0..width {
                let a = row[k];
                row[k] = a * (1.0 - p1[i]);
                row[k + width] = a * p1[i];
            }
            width <<= 1;
        }
    }
    Ok(joint)
}

/// Result of an exact forward pass.
#[derive(Debug, Clone)]
pub struct ExactForward {
    /// Log-likelihood of all processed observations.
    pub log_lik: f64,
    /// Exact filtered marginal congestion probability per epoch and link.
    pub marginals: Vec<Vec<f64>>,
    /// Exact filtered joint distribution after the last processed epoch.
    pub final_dist: Vec<f64>,
}

/// Exact filtering over one day: start from the all-free state, alternate
/// transition and observation conditioning, renormalizing each epoch. The
/// emission step works in log space, so only a genuinely zero total
/// likelihood fails (with a numerical error — unlike the particle filter,
/// the exact reference has no fallback).
pub fn exact_forward(
    theta: &ThetaParams,
    net: &RoadNetwork,
    epochs: &[Vec<PreparedObs>],
    upto_epoch: Option<usize>,
) -> Result<ExactForward> {
    theta.validate(net)?;
    let n = net.n_links();
    let t_max = upto_epoch.unwrap_or(epochs.len());
    if t_max > epochs.len() {
        return Err(Error::validation(format!(
            "requested epoch {t_max} beyond the day's {} epochs",
            epochs.len()
        )));
    }
    if t_max == 0 {
        return Err(Error::validation("cannot filter zero epochs"));
    }
    let matrix = build_joint_transition(&theta.trans, net)?;
    let size = 1usize << n;
    let mut dist = vec![0.0f64; size];
    dist[0] = 1.0;
    let mut propagated = vec![0.0f64; size];
    let mut logc = vec![0.0f64; size];
    let mut log_lik = 0.0;
    let mut marginals = Vec::with_capacity(t_max);

    for t in 1..=t_max {
        propagated.iter_mut().for_each(|x| *x = 0.0);
        for u in 0..size {
            let mass = dist[u];
            if mass == 0.0 {
                continue;
            }
            let row = &matrix[u * size..(u + 1) * size];
            for v in 0..size {
                propagated[v] += mass * row[v];
            }
        }
        let obs = &epochs[t - 1];
        for v in 0..size {
            let mut lc = propagated[v].ln();
            for o in obs {
                lc += o.log_density(v as u64, &theta.obs);
            }
            logc[v] = lc;
        }
        let max_lc = logc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max_lc == f64::NEG_INFINITY || max_lc.is_nan() {
            return Err(Error::numerical(format!(
                "observation likelihood vanished at epoch {t}"
            )));
        }
        let mut norm = 0.0;
        for v in 0..size {
            let p = (logc[v] - max_lc).exp();
            dist[v] = p;
            norm += p;
        }
        log_lik += max_lc + norm.ln();
        let inv = 1.0 / norm;
        dist.iter_mut().for_each(|x| *x *= inv);

        let mut m = vec![0.0f64; n];
        for (v, &p) in dist.iter().enumerate() {
            let mut rest = v;
            while rest != 0 {
                let i = rest.trailing_zeros() as usize;
                m[i] += p;
                rest &= rest - 1;
            }
        }
        marginals.push(m);
    }

    Ok(ExactForward { log_lik, marginals, final_dist: dist })
}

/// Likelihood by brute force: sum over every joint state sequence of the
/// product of transition and observation terms. Only viable for a handful of
/// links and epochs; it cross-checks the forward pass.
pub fn brute_force_log_lik(
    theta: &ThetaParams,
    net: &RoadNetwork,
    epochs: &[Vec<PreparedObs>],
) -> Result<f64> {
    theta.validate(net)?;
    let n = net.n_links();
    let t_max = epochs.len();
    if t_max == 0 {
        return Err(Error::validation("cannot score zero epochs"));
    }
    if n > 6 || t_max > 8 {
        return Err(Error::validation(
            "brute-force enumeration is limited to 6 links and 8 epochs",
        ));
    }
    let matrix = build_joint_transition(&theta.trans, net)?;
    let size = 1usize << n;
    // Observation likelihood of every (epoch, state) pair.
    let mut emission = vec![1.0f64; t_max * size];
    for t in 0..t_max {
        for v in 0..size {
            let mut lc = 0.0;
            for o in &epochs[t] {
                lc += o.log_density(v as u64, &theta.obs);
            }
            emission[t * size + v] = lc.exp();
        }
    }

    fn recurse(
        t: usize,
        t_max: usize,
        prev: usize,
        weight: f64,
        size: usize,
        matrix: &[f64],
        emission: &[f64],
    ) -> f64 {
        if t == t_max {
            return weight;
        }
        let mut total = 0.0;
        for v in 0..size {
            let w = weight * matrix[prev * size + v] * emission[t * size + v];
            if w > 0.0 {
                total += recurse(t + 1, t_max, v, w, size, matrix, emission);
            }
        }
        total
    }

    let total = recurse(0, t_max, 0, 1.0, size, &matrix, &emission);
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::numerical(format!(
            "sequence-sum likelihood degenerate: {total}"
        )));
    }
    Ok(total.ln())
}

/// A forecast that propagates the exact joint distribution.
pub struct ExactForecast {
    dist: Vec<f64>,
    matrix: Vec<f64>,
    n: usize,
    scratch: Vec<f64>,
}

impl ExactForecast {
    /// Start from an explicit joint distribution (length `2^n`, summing to
    /// one within `1e-6`; it is renormalized exactly).
    pub fn new(
        mut dist: Vec<f64>,
        trans: &TransitionParams,
        net: &RoadNetwork,
    ) -> Result<ExactForecast> {
        let n = net.n_links();
        let matrix = build_joint_transition(trans, net)?;
        if dist.len() != 1usize << n {
            return Err(Error::validation(format!(
                "distribution length {} does not match 2^{n}",
                dist.len()
            )));
        }
        let mut sum = 0.0;
        for &p in &dist {
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::validation(format!("invalid probability {p}")));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::validation(format!(
                "distribution sums to {sum}, expected 1"
            )));
        }
        dist.iter_mut().for_each(|p| *p /= sum);
        let scratch = vec![0.0; dist.len()];
        Ok(ExactForecast { dist, matrix, n, scratch })
    }

    /// Start from a single known joint state.
    pub fn from_mask(mask: u64, trans: &TransitionParams, net: &RoadNetwork) -> Result<Self> {
        let n = net.n_links();
        if n > MAX_EXACT_LINKS {
            return Err(Error::validation(format!(
                "exact computation supports at most {MAX_EXACT_LINKS} links, network has {n}"
            )));
        }
        let mut dist = vec![0.0; 1usize << n];
        let idx = usize::try_from(mask)
            .ok()
            .filter(|&i| i < dist.len())
            .ok_or_else(|| Error::validation(format!("state mask {mask:#x} out of range")))?;
        dist[idx] = 1.0;
        ExactForecast::new(dist, trans, net)
    }

    pub fn dist(&self) -> &[f64] {
        &self.dist
    }
}

impl StateForecast for ExactForecast {
    fn advance(&mut self) {
        let size = self.dist.len();
        self.scratch.iter_mut().for_each(|x| *x = 0.0);
        for u in 0..size {
            let mass = self.dist[u];
            if mass == 0.0 {
                continue;
            }
            let row = &self.matrix[u * size..(u + 1) * size];
            for v in 0..size {
                self.scratch[v] += mass * row[v];
            }
        }
        std::mem::swap(&mut self.dist, &mut self.scratch);
    }

    fn congestion_prob(&self, link: usize) -> f64 {
        debug_assert!(link < self.n);
        self.dist
            .iter()
            .enumerate()
            .filter(|(v, _)| (v >> link) & 1 == 1)
            .map(|(_, &p)| p)
            .sum()
    }
}

/// Enumeration form of the trip predictor's per-window times: for a prefix of
/// `l` route links, the joint distribution over those links' states (keyed
/// with the first route link in the most significant bit) is dotted with the
/// conditional expected prefix times.
struct EnumerationPrefix<'a> {
    forecast: ExactForecast,
    obs: &'a ObservationParams,
}

impl PrefixTimes for EnumerationPrefix<'_> {
    fn advance(&mut self) {
        self.forecast.advance();
    }

    fn cumulative(&mut self, links: &[usize], entry_fraction: f64, out: &mut Vec<f64>) {
        out.clear();
        let dist = self.forecast.dist();
        for l in 1..=links.len() {
            // Prefix state distribution, first link most significant.
            let mut prefix_dist = vec![0.0f64; 1usize << l];
            for (v, &p) in dist.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let mut b = 0usize;
                for (k, &link) in links[..l].iter().enumerate() {
                    b |= ((v >> link) & 1) << (l - 1 - k);
                }
                prefix_dist[b] += p;
            }
            let mut expected = 0.0;
            for (b, &p) in prefix_dist.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let mut time = entry_fraction
                    * self.obs.mu[links[0]][(b >> (l - 1)) & 1];
                for (k, &link) in links[1..l].iter().enumerate() {
                    time += self.obs.mu[link][(b >> (l - 2 - k)) & 1];
                }
                expected += p * time;
            }
            out.push(expected);
        }
    }

    fn full_first(&mut self, link: usize) -> f64 {
        let rho = self.forecast.congestion_prob(link);
        (1.0 - rho) * self.obs.mu[link][0] + rho * self.obs.mu[link][1]
    }
}

/// Trip prediction with exact enumeration of prefix-state distributions in
/// place of the linear marginal form. Agreement between the two is a direct
/// check that the marginal form loses nothing, expectation being linear.
pub fn predict_route_enumeration(
    route: &[usize],
    alpha_s: f64,
    obs: &ObservationParams,
    delta: f64,
    net: &RoadNetwork,
    forecast: ExactForecast,
) -> Result<Prediction> {
    validate_route_query(route, alpha_s, delta, net)?;
    obs.validate(net.n_links())?;
    let mut prefix = EnumerationPrefix { forecast, obs };
    segment_route(route, alpha_s, delta, &mut prefix)
}

/// Monte-Carlo trip reference: sample a start state from `start_states`
/// (uniformly — pass filter particles or exact samples), run the predictor
/// along a single sampled state chain, and average. Returns the sample mean
/// and its standard error.
pub fn mc_trip_oracle(
    route: &[usize],
    alpha_s: f64,
    theta: &ThetaParams,
    net: &RoadNetwork,
    start_states: &[u64],
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    validate_route_query(route, alpha_s, theta.delta, net)?;
    if start_states.is_empty() {
        return Err(Error::validation("need at least one start state"));
    }
    if samples < 2 {
        return Err(Error::validation("need at least two samples for a standard error"));
    }
    let mut values = Vec::with_capacity(samples);
    for _ in 0..samples {
        let start = start_states[rng.random_range(0..start_states.len())];
        let chain_rng = ChaCha8Rng::seed_from_u64(rng.random::<u64>());
        let mut chain = ParticleForecast::new(vec![start], &theta.trans, net, chain_rng)?;
        let pred = predict_route(route, alpha_s, &theta.obs, theta.delta, net, &mut chain)?;
        values.push(pred.expected_seconds);
    }
    let mean = values.iter().sum::<f64>() / samples as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (samples as f64 - 1.0);
    Ok((mean, (var / samples as f64).sqrt()))
}
