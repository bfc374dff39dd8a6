//! Arbitrary-duration trip travel-time prediction.
//!
//! The predictor walks a route through consecutive forecast windows of the
//! epoch duration. Each window it advances a state forecast one epoch, turns
//! per-link congestion marginals into expected traversal times (expectation
//! is linear, so a link's expected time is the marginal-weighted mix of its
//! free and congested means, and a partial first link scales linearly by the
//! remaining fraction), and accumulates cumulative expected times along the
//! remaining route:
//!
//! * if even the full remaining route fits inside the window, the trip ends
//!   and the remainder is added to the total;
//! * otherwise the crossing link — the first whose cumulative time strictly
//!   exceeds the window — is found by binary search (cumulative times are
//!   strictly increasing because means are positive), the route is truncated
//!   to start there with the matching remaining fraction, a full window is
//!   added to the total, and the walk repeats.
//!
//! The forecast abstraction covers both the production path (particles
//! propagated through the transition model) and the exact references used in
//! tests.

use rand_chacha::ChaCha8Rng;

use crate::bits::gather_bits;
use crate::cpd::{noisyor_sample_step, satpat_sample_step, TransitionParams};
use crate::error::{Error, Result};
use crate::network::RoadNetwork;
use crate::travel_time::ObservationParams;

/// Hard ceiling on forecast windows per query, guarding against a
/// non-terminating walk on degenerate inputs.
pub const MAX_FORECAST_WINDOWS: usize = 1_000_000;

/// A per-link congestion forecast that can be advanced epoch by epoch.
pub trait StateForecast {
    /// Step the forecast one epoch forward.
    fn advance(&mut self);
    /// Probability that `link` is congested at the current epoch.
    fn congestion_prob(&self, link: usize) -> f64;
}

/// A forecast frozen at fixed marginals (for tests and worked examples).
#[derive(Debug, Clone)]
pub struct FixedForecast {
    pub rho: Vec<f64>,
}

impl StateForecast for FixedForecast {
    fn advance(&mut self) {}

    fn congestion_prob(&self, link: usize) -> f64 {
        self.rho[link]
    }
}

/// The production forecast: an ensemble of joint states propagated through
/// the transition model, marginals read off as bit frequencies. Seeding it
/// from a filter's post-resample particles continues inference seamlessly
/// past the last observation.
pub struct ParticleForecast<'a> {
    states: Vec<u64>,
    trans: &'a TransitionParams,
    net: &'a RoadNetwork,
    rng: ChaCha8Rng,
}

impl<'a> ParticleForecast<'a> {
    pub fn new(
        states: Vec<u64>,
        trans: &'a TransitionParams,
        net: &'a RoadNetwork,
        rng: ChaCha8Rng,
    ) -> Result<ParticleForecast<'a>> {
        if states.is_empty() {
            return Err(Error::validation("forecast needs at least one particle"));
        }
        trans.validate(net)?;
        Ok(ParticleForecast { states, trans, net, rng })
    }

    pub fn n_particles(&self) -> usize {
        self.states.len()
    }
}

impl StateForecast for ParticleForecast<'_> {
    fn advance(&mut self) {
        let n = self.net.n_links();
        for slot in &mut self.states {
            let from = *slot;
            let mut to = 0u64;
            for i in 0..n {
                let eta = gather_bits(from, self.net.neighbors(i));
                let congested = match self.trans {
                    TransitionParams::NoisyOr(rows) => {
                        noisyor_sample_step(&rows[i], eta, &mut self.rng).0
                    }
                    TransitionParams::SatPat(rows) => {
                        satpat_sample_step(&rows[i], eta, &mut self.rng)
                    }
                };
                if congested {
                    to |= 1u64 << i;
                }
            }
            *slot = to;
        }
    }

    fn congestion_prob(&self, link: usize) -> f64 {
        let hits = self.states.iter().filter(|&&s| (s >> link) & 1 == 1).count();
        hits as f64 / self.states.len() as f64
    }
}

/// Expected traversal time of one full link under congestion probability
/// `rho`.
#[inline]
pub fn expected_link_time(rho: f64, mu: [f64; 2]) -> f64 {
    (1.0 - rho) * mu[0] + rho * mu[1]
}

/// Cumulative expected times along `links` at the forecast's current epoch,
/// the first link scaled by `entry_fraction`. Exposed for diagnostics; the
/// predictor consumes it internally.
pub fn prefix_expected_times(
    forecast: &dyn StateForecast,
    obs: &ObservationParams,
    links: &[usize],
    entry_fraction: f64,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(links.len());
    let mut acc = 0.0;
    for (k, &l) in links.iter().enumerate() {
        let mean = expected_link_time(forecast.congestion_prob(l), obs.mu[l]);
        acc += if k == 0 { entry_fraction * mean } else { mean };
        out.push(acc);
    }
    out
}

/// What a window-by-window walk needs from its time model. The linear
/// marginal form and the exact enumeration reference both implement it.
pub(crate) trait PrefixTimes {
    fn advance(&mut self);
    /// Fill `out` with cumulative expected times over `links`, the first
    /// scaled by `entry_fraction`.
    fn cumulative(&mut self, links: &[usize], entry_fraction: f64, out: &mut Vec<f64>);
    /// Expected traversal time of the full link `link`.
    fn full_first(&mut self, link: usize) -> f64;
}

struct LinearPrefix<'a> {
    forecast: &'a mut dyn StateForecast,
    obs: &'a ObservationParams,
}

impl PrefixTimes for LinearPrefix<'_> {
    fn advance(&mut self) {
        self.forecast.advance();
    }

    fn cumulative(&mut self, links: &[usize], entry_fraction: f64, out: &mut Vec<f64>) {
        out.clear();
        let mut acc = 0.0;
        for (k, &l) in links.iter().enumerate() {
            let mean = expected_link_time(self.forecast.congestion_prob(l), self.obs.mu[l]);
            acc += if k == 0 { entry_fraction * mean } else { mean };
            out.push(acc);
        }
    }

    fn full_first(&mut self, link: usize) -> f64 {
        expected_link_time(self.forecast.congestion_prob(link), self.obs.mu[link])
    }
}

/// A finished travel-time query.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Expected trip duration in seconds.
    pub expected_seconds: f64,
    /// Number of full forecast windows consumed before the terminal partial
    /// window.
    pub full_windows: usize,
}

pub(crate) fn validate_route_query(
    route: &[usize],
    alpha_s: f64,
    delta: f64,
    net: &RoadNetwork,
) -> Result<()> {
    if route.is_empty() {
        return Err(Error::validation("route must contain at least one link"));
    }
    for &l in route {
        if l >= net.n_links() {
            return Err(Error::validation(format!(
                "route link index {l} out of range for {} links",
                net.n_links()
            )));
        }
    }
    net.check_route_contiguity(route)?;
    if !(alpha_s.is_finite() && alpha_s > 0.0 && alpha_s <= 1.0) {
        return Err(Error::validation(format!(
            "entry fraction must lie in (0, 1], got {alpha_s}"
        )));
    }
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::validation(format!("window duration must be positive, got {delta}")));
    }
    Ok(())
}

/// The window-by-window walk shared by the marginal predictor and the exact
/// enumeration reference. Inputs are assumed validated.
pub(crate) fn segment_route<P: PrefixTimes + ?Sized>(
    route: &[usize],
    alpha_s: f64,
    delta: f64,
    prefix: &mut P,
) -> Result<Prediction> {
    let mut remaining: Vec<usize> = route.to_vec();
    let mut entry = alpha_s;
    let mut total_seconds = 0.0;
    let mut full_windows = 0usize;
    let mut times: Vec<f64> = Vec::with_capacity(remaining.len());
    loop {
        prefix.advance();
        prefix.cumulative(&remaining, entry, &mut times);
        let route_time = *times.last().expect("route never empties");
        if !route_time.is_finite() {
            return Err(Error::numerical(format!(
                "non-finite expected route time {route_time}"
            )));
        }
        if route_time > delta {
            // First link whose cumulative time strictly exceeds the window
            // (1-based), found by binary search on the increasing prefix.
            let crossing = times.partition_point(|&e| e <= delta) + 1;
            if crossing > 1 {
                let link_time = times[crossing - 1] - times[crossing - 2];
                entry = 1.0 - (delta - times[crossing - 2]) / link_time;
                remaining.drain(..crossing - 1);
            } else {
                let full = prefix.full_first(remaining[0]);
                entry *= 1.0 - delta / full;
            }
            total_seconds += delta;
            full_windows += 1;
            if full_windows > MAX_FORECAST_WINDOWS {
                return Err(Error::numerical(format!(
                    "query exceeded {MAX_FORECAST_WINDOWS} forecast windows"
                )));
            }
        } else {
            total_seconds += route_time;
            break;
        }
    }
    Ok(Prediction { expected_seconds: total_seconds, full_windows })
}

/// Predict the expected travel time over `route` (dense link indices),
/// entering the first link with fraction `alpha_s` left to traverse, starting
/// from the state forecast's current epoch.
pub fn predict_route(
    route: &[usize],
    alpha_s: f64,
    obs: &ObservationParams,
    delta: f64,
    net: &RoadNetwork,
    forecast: &mut dyn StateForecast,
) -> Result<Prediction> {
    validate_route_query(route, alpha_s, delta, net)?;
    obs.validate(net.n_links())?;
    let mut prefix = LinearPrefix { forecast, obs };
    segment_route(route, alpha_s, delta, &mut prefix)
}
