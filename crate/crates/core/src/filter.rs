//! Sequential importance resampling over joint congestion states.
//!
//! Filtering runs over one day at a time. A particle is a joint state mask
//! (one bit per link). All particles start at the all-free state of epoch 0.
//! Each epoch the filter:
//!
//! 1. propagates every particle one step through the transition model,
//!    remembering the auxiliary cause masks for noisy-OR models;
//! 2. weights every particle by the product of that epoch's observation
//!    densities, computed in log space and exp-normalized from the max so
//!    that underflow cannot wipe out a healthy particle set (weights are
//!    fresh each epoch because step 4 resets them);
//! 3. accumulates filtered marginals and — off the *normalized, pre-resample*
//!    weights — the expected sufficient statistics used by the M-step;
//! 4. resamples multinomially down to uniform weights.
//!
//! If every particle receives exactly zero weight (all log densities
//! `-inf`), the epoch's weights fall back to uniform and the event is
//! counted, rather than aborting a whole learning run.
//!
//! Expected sufficient statistics are represented by [`EssAccumulator`],
//! which additively merges across days. The same accumulation code also
//! ingests fully observed sequences (states plus auxiliaries), which gives an
//! exact reference for testing the learning update.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::bits::gather_bits;
use crate::cpd::{noisyor_sample_step, satpat_sample_step, CpdKind, TransitionParams};
use crate::error::{Error, Result};
use crate::network::RoadNetwork;
use crate::params::ThetaParams;
use crate::synth::{DayData, StateEvolution, TraceDataset};
use crate::travel_time::{normal_log_pdf, ObservationParams, PathSegment};

/// One observation, pre-resolved for repeated density evaluation: dense link
/// indices, fixed traversal fractions, and the observed duration.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedObs {
    pub links: Vec<usize>,
    pub fractions: Vec<f64>,
    pub y: f64,
}

impl PreparedObs {
    /// Log observation density under the joint state `mask`.
    #[inline]
    pub fn log_density(&self, mask: u64, params: &ObservationParams) -> f64 {
        let mut mean = 0.0;
        let mut var = 0.0;
        for (&l, &f) in self.links.iter().zip(&self.fractions) {
            let k = ((mask >> l) & 1) as usize;
            mean += f * params.mu[l][k];
            let sd = params.sigma[l][k];
            var += f * f * sd * sd;
        }
        normal_log_pdf(self.y, mean, var)
    }
}

/// One day of observations grouped by epoch, ready for filtering.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDay {
    /// `epochs[t-1]` holds epoch `t`'s observations.
    pub epochs: Vec<Vec<PreparedObs>>,
}

/// Resolve a day's records against the network.
pub fn prepare_day(day: &DayData, net: &RoadNetwork) -> Result<PreparedDay> {
    let mut epochs = Vec::with_capacity(day.epochs.len());
    for records in &day.epochs {
        let mut prepared = Vec::with_capacity(records.len());
        for r in records {
            let links: Vec<usize> =
                r.links.iter().map(|&id| net.index_of(id)).collect::<Result<_>>()?;
            let seg = PathSegment { links, alpha_s: r.alpha_s, alpha_e: r.alpha_e };
            seg.validate(net.n_links())?;
            if !(r.y_seconds.is_finite() && r.y_seconds > 0.0) {
                return Err(Error::validation(format!(
                    "day {} epoch {} vehicle {}: nonpositive duration",
                    r.day, r.epoch, r.vehicle
                )));
            }
            let fractions = seg.fractions()?;
            prepared.push(PreparedObs { links: seg.links, fractions, y: r.y_seconds });
        }
        epochs.push(prepared);
    }
    Ok(PreparedDay { epochs })
}

/// Prepare every day of a dataset.
pub fn prepare_dataset(dataset: &TraceDataset, net: &RoadNetwork) -> Result<Vec<PreparedDay>> {
    dataset.days.iter().map(|d| prepare_day(d, net)).collect()
}

/// Expected sufficient statistics for one transition family.
///
/// All weights are accumulated off normalized pre-resample particle weights,
/// so entries are expected event counts given the observations processed so
/// far. Merging accumulators from independent days is plain addition.
#[derive(Debug, Clone, PartialEq)]
pub enum EssAccumulator {
    /// Noisy-OR: `bias[i][b]` is the expected number of steps on which link
    /// `i`'s bias line did (`b = 1`) or did not (`b = 0`) fire;
    /// `edge[i][k][b]` likewise for neighbor position `k`, counting only
    /// steps on which that neighbor was active.
    NoisyOr { bias: Vec<[f64; 2]>, edge: Vec<Vec<[f64; 2]>> },
    /// Saturation pattern: `table[i][j][s]` is the expected number of steps
    /// on which link `i` had exactly `j` active neighbors and moved to state
    /// `s`.
    SatPat { table: Vec<Vec<[f64; 2]>> },
}

impl EssAccumulator {
    /// Zero statistics shaped for `net`.
    pub fn zeros(kind: CpdKind, net: &RoadNetwork) -> EssAccumulator {
        let n = net.n_links();
        match kind {
            CpdKind::NoisyOr => EssAccumulator::NoisyOr {
                bias: vec![[0.0; 2]; n],
                edge: (0..n).map(|i| vec![[0.0; 2]; net.neighbors(i).len()]).collect(),
            },
            CpdKind::SatPat => EssAccumulator::SatPat {
                table: (0..n).map(|i| vec![[0.0; 2]; net.neighbors(i).len() + 1]).collect(),
            },
        }
    }

    pub fn kind(&self) -> CpdKind {
        match self {
            EssAccumulator::NoisyOr { .. } => CpdKind::NoisyOr,
            EssAccumulator::SatPat { .. } => CpdKind::SatPat,
        }
    }

    /// Add another accumulator of identical shape (independent data).
    pub fn merge(&mut self, other: &EssAccumulator) -> Result<()> {
        match (self, other) {
            (
                EssAccumulator::NoisyOr { bias: b1, edge: e1 },
                EssAccumulator::NoisyOr { bias: b2, edge: e2 },
            ) if b1.len() == b2.len() && e1.len() == e2.len() => {
                for (a, b) in b1.iter_mut().zip(b2) {
                    a[0] += b[0];
                    a[1] += b[1];
                }
                for (ra, rb) in e1.iter_mut().zip(e2) {
                    if ra.len() != rb.len() {
                        return Err(Error::validation(
                            "cannot merge sufficient statistics of different shapes",
                        ));
                    }
                    for (a, b) in ra.iter_mut().zip(rb) {
                        a[0] += b[0];
                        a[1] += b[1];
                    }
                }
                Ok(())
            }
            (EssAccumulator::SatPat { table: t1 }, EssAccumulator::SatPat { table: t2 })
                if t1.len() == t2.len() =>
            {
                for (ra, rb) in t1.iter_mut().zip(t2) {
                    if ra.len() != rb.len() {
                        return Err(Error::validation(
                            "cannot merge sufficient statistics of different shapes",
                        ));
                    }
                    for (a, b) in ra.iter_mut().zip(rb) {
                        a[0] += b[0];
                        a[1] += b[1];
                    }
                }
                Ok(())
            }
            _ => Err(Error::validation(
                "cannot merge sufficient statistics of different kinds or sizes",
            )),
        }
    }

    /// Account one weighted noisy-OR step of one link: neighborhood state
    /// `eta`, sampled auxiliary mask `aux`.
    #[inline]
    pub(crate) fn accumulate_noisyor(&mut self, link: usize, eta: u64, aux: u64, w: f64) {
        if let EssAccumulator::NoisyOr { bias, edge } = self {
            bias[link][(aux & 1) as usize] += w;
            let row = &mut edge[link];
            let mut rest = eta;
            while rest != 0 {
                let k = rest.trailing_zeros() as usize;
                row[k][((aux >> (k + 1)) & 1) as usize] += w;
                rest &= rest - 1;
            }
        } else {
            unreachable!("accumulate_noisyor on a saturation-pattern accumulator");
        }
    }

    /// Account one weighted saturation-pattern step of one link.
    #[inline]
    pub(crate) fn accumulate_satpat(&mut self, link: usize, eta: u64, next_state: bool, w: f64) {
        if let EssAccumulator::SatPat { table } = self {
            table[link][eta.count_ones() as usize][next_state as usize] += w;
        } else {
            unreachable!("accumulate_satpat on a noisy-OR accumulator");
        }
    }
}

/// Exact sufficient statistics from a fully observed noisy-OR evolution
/// (states plus recorded auxiliary masks), weight one per step.
pub fn ess_from_complete_noisyor(
    evolution: &StateEvolution,
    net: &RoadNetwork,
) -> Result<EssAccumulator> {
    let aux = evolution.aux.as_ref().ok_or_else(|| {
        Error::validation("complete-data statistics need recorded auxiliary masks")
    })?;
    let mut ess = EssAccumulator::zeros(CpdKind::NoisyOr, net);
    let mut prev = 0u64;
    for (aux_row, &state) in aux.iter().zip(&evolution.states) {
        for i in 0..net.n_links() {
            let eta = gather_bits(prev, net.neighbors(i));
            ess.accumulate_noisyor(i, eta, aux_row[i], 1.0);
        }
        prev = state;
    }
    Ok(ess)
}

/// Exact sufficient statistics for the saturation-pattern family from a fully
/// observed state sequence.
pub fn ess_from_complete_satpat(states: &[u64], net: &RoadNetwork) -> EssAccumulator {
    let mut ess = EssAccumulator::zeros(CpdKind::SatPat, net);
    let mut prev = 0u64;
    for &state in states {
        for i in 0..net.n_links() {
            let eta = gather_bits(prev, net.neighbors(i));
            ess.accumulate_satpat(i, eta, (state >> i) & 1 == 1, 1.0);
        }
        prev = state;
    }
    ess
}

/// What a filtering pass should record beyond its sufficient statistics.
#[derive(Debug, Clone, Default)]
pub struct FilterOptions {
    /// Process only epochs `1..=upto_epoch` (must not exceed the day's
    /// length). `None` processes the whole day.
    pub upto_epoch: Option<usize>,
    /// Record pre-resample filtered marginals per epoch.
    pub record_marginals: bool,
    /// Record post-resample particle states per epoch (each snapshot carries
    /// uniform weights by construction).
    pub record_snapshots: bool,
    /// Accumulate expected sufficient statistics for this family.
    pub accumulate_ess: Option<CpdKind>,
}

/// Output of one filtering pass over one day.
#[derive(Debug, Clone)]
pub struct FilterDayResult {
    /// Pre-resample filtered marginal congestion probability per epoch and
    /// link (empty unless requested).
    pub marginals: Vec<Vec<f64>>,
    /// Post-resample particle states per epoch (empty unless requested).
    pub snapshots: Vec<Vec<u64>>,
    /// Post-resample particle states after the last processed epoch.
    pub final_states: Vec<u64>,
    /// Sufficient statistics (zeros unless requested).
    pub ess: EssAccumulator,
    /// Number of epochs on which every particle got zero weight.
    pub zero_weight_epochs: u32,
}

/// Run the filter over one prepared day.
pub fn filter_day(
    prepared: &PreparedDay,
    theta: &ThetaParams,
    net: &RoadNetwork,
    n_particles: usize,
    options: &FilterOptions,
    rng: &mut ChaCha8Rng,
) -> Result<FilterDayResult> {
    let n = net.n_links();
    if n > crate::bits::MAX_MASK_BITS {
        return Err(Error::validation(format!(
            "filtering supports at most {} links, network has {n}",
            crate::bits::MAX_MASK_BITS
        )));
    }
    if n_particles == 0 {
        return Err(Error::validation("particle count must be positive"));
    }
    let t_max = options.upto_epoch.unwrap_or(prepared.epochs.len());
    if t_max > prepared.epochs.len() {
        return Err(Error::validation(format!(
            "requested epoch {t_max} beyond the day's {} epochs",
            prepared.epochs.len()
        )));
    }
    if t_max == 0 {
        return Err(Error::validation("cannot filter zero epochs"));
    }

    let rows = theta.trans.rows();
    let is_noisyor = matches!(theta.trans, TransitionParams::NoisyOr(_));
    let mut ess = EssAccumulator::zeros(
        options.accumulate_ess.unwrap_or(theta.trans.kind()),
        net,
    );
    if let Some(kind) = options.accumulate_ess {
        if kind != theta.trans.kind() {
            return Err(Error::validation(
                "sufficient-statistics family differs from the transition family",
            ));
        }
    }

    let r = n_particles;
    let mut states = vec![0u64; r];
    let mut prev_states = vec![0u64; r];
    // Auxiliary cause masks per (particle, link), refilled each epoch.
    let mut aux = if is_noisyor { vec![0u64; r * n] } else { Vec::new() };
    let mut logw = vec![0.0f64; r];
    let mut weights = vec![1.0 / r as f64; r];
    let mut cumsum = vec![0.0f64; r];

    let mut marginals = Vec::new();
    let mut snapshots = Vec::new();
    let mut zero_weight_epochs = 0u32;

    for t in 1..=t_max {
        // Propagate (previous states are kept for the statistics pass).
        std::mem::swap(&mut states, &mut prev_states);
        for p in 0..r {
            let from = prev_states[p];
            let mut to = 0u64;
            for i in 0..n {
                let eta = gather_bits(from, net.neighbors(i));
                let congested = if is_noisyor {
                    let (s, a) = noisyor_sample_step(&rows[i], eta, rng);
                    aux[p * n + i] = a;
                    s
                } else {
                    satpat_sample_step(&rows[i], eta, rng)
                };
                if congested {
                    to |= 1u64 << i;
                }
            }
            states[p] = to;
        }

        // Weight by this epoch's observations.
        let obs = &prepared.epochs[t - 1];
        if obs.is_empty() {
            let u = 1.0 / r as f64;
            weights.iter_mut().for_each(|w| *w = u);
        } else {
            for p in 0..r {
                let mut lw = 0.0;
                for o in obs {
                    lw += o.log_density(states[p], &theta.obs);
                }
                logw[p] = lw;
            }
            let max_lw = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max_lw == f64::NEG_INFINITY {
                zero_weight_epochs += 1;
                let u = 1.0 / r as f64;
                weights.iter_mut().for_each(|w| *w = u);
            } else {
                let mut total = 0.0;
                for p in 0..r {
                    let w = (logw[p] - max_lw).exp();
                    weights[p] = w;
                    total += w;
                }
                let inv = 1.0 / total;
                weights.iter_mut().for_each(|w| *w *= inv);
            }
        }

        // Filtered marginals, before resampling.
        if options.record_marginals {
            let mut m = vec![0.0f64; n];
            for p in 0..r {
                let w = weights[p];
                let mut rest = states[p];
                while rest != 0 {
                    let i = rest.trailing_zeros() as usize;
                    m[i] += w;
                    rest &= rest - 1;
                }
            }
            marginals.push(m);
        }

        // Sufficient statistics, before resampling, off normalized weights.
        if options.accumulate_ess.is_some() {
            for p in 0..r {
                let w = weights[p];
                if w == 0.0 {
                    continue;
                }
                let from = prev_states[p];
                if is_noisyor {
                    for i in 0..n {
                        let eta = gather_bits(from, net.neighbors(i));
                        ess.accumulate_noisyor(i, eta, aux[p * n + i], w);
                    }
                } else {
                    let to = states[p];
                    for i in 0..n {
                        let eta = gather_bits(from, net.neighbors(i));
                        ess.accumulate_satpat(i, eta, (to >> i) & 1 == 1, w);
                    }
                }
            }
        }

        // Multinomial resampling down to uniform weights.
        let mut acc = 0.0;
        for p in 0..r {
            acc += weights[p];
            cumsum[p] = acc;
        }
        // Guard the final entry against roundoff so search cannot fall off.
        cumsum[r - 1] = f64::INFINITY;
        for slot in prev_states.iter_mut() {
            let u = rng.random::<f64>() * acc.min(1.0);
            let idx = cumsum.partition_point(|&c| c < u);
            *slot = states[idx.min(r - 1)];
        }
        std::mem::swap(&mut states, &mut prev_states);
        let u = 1.0 / r as f64;
        weights.iter_mut().for_each(|w| *w = u);

        if options.record_snapshots {
            snapshots.push(states.clone());
        }
    }

    Ok(FilterDayResult {
        marginals,
        snapshots,
        final_states: states,
        ess,
        zero_weight_epochs,
    })
}
