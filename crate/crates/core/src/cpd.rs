//! Per-link congestion transition models.
//!
//! Let `pi_i` be link `i`'s ordered neighbor list (which contains `i` itself)
//! and `eta` the congestion states of those neighbors at the previous epoch.
//! Two conditional models for the next state of `i` are provided.
//!
//! # Noisy-OR
//!
//! Each position `j = 1..=|pi_i|` in the neighbor list carries a retention
//! probability `q[j]`, and `q[0]` is a spontaneous (bias) term. Given `eta`,
//! the link stays free with probability `q[0] * prod_{j: eta_j = 1} q[j]`, so
//!
//! ```text
//! P(congested | eta) = 1 - q[0] * prod_{j active} q[j]
//! ```
//!
//! The model has an equivalent generative story through auxiliary cause bits
//! `eta_bar`: the bias line fires with probability `1 - q[0]`; each *active*
//! neighbor line `j` fires independently with probability `1 - q[j]`; inactive
//! lines cannot fire; the link becomes congested iff some line fired. The
//! auxiliary bits are what make expectation-maximization tractable, so the
//! sampler returns them and [`noisyor_factor`] scores complete
//! `(eta, eta_bar, s)` triples. The factor is zero for inconsistent triples —
//! a fired inactive line, or `s != OR(eta_bar)` — and sums to one over all
//! consistent completions of a given `eta`.
//!
//! # Saturation pattern
//!
//! A direct table lookup: position `j` of the row holds the probability that
//! the link is congested next epoch given that exactly `j` of its neighbors
//! (self included) are congested now. Sampling needs exactly one Bernoulli
//! draw regardless of neighborhood size.
//!
//! # Bit conventions
//!
//! A neighborhood state `eta` is a mask whose bit `k` is the state of
//! `pi_i[k]` (`k` 0-based). An auxiliary mask `eta_bar` has bit 0 for the bias
//! line and bit `k + 1` for neighbor position `k`.

use rand::Rng;

use crate::bits;
use crate::error::{Error, Result};
use crate::network::RoadNetwork;

/// Which transition family a parameter table belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpdKind {
    NoisyOr,
    SatPat,
}

impl CpdKind {
    /// Keyword used in parameter files and CLI flags.
    pub fn keyword(self) -> &'static str {
        match self {
            CpdKind::NoisyOr => "noisyor",
            CpdKind::SatPat => "satpat",
        }
    }
}

/// Transition parameters for every link, in dense-index order.
///
/// For `NoisyOr`, row `i` holds `q[0..=|pi_i|]` (bias then one retention
/// probability per neighbor position). For `SatPat`, row `i` holds
/// `a[0..=|pi_i|]` (congestion probability given `j` active neighbors).
#[derive(Debug, Clone, PartialEq)]
pub enum TransitionParams {
    NoisyOr(Vec<Vec<f64>>),
    SatPat(Vec<Vec<f64>>),
}

impl TransitionParams {
    pub fn kind(&self) -> CpdKind {
        match self {
            TransitionParams::NoisyOr(_) => CpdKind::NoisyOr,
            TransitionParams::SatPat(_) => CpdKind::SatPat,
        }
    }

    /// The per-link probability rows, whichever family they belong to.
    pub fn rows(&self) -> &Vec<Vec<f64>> {
        match self {
            TransitionParams::NoisyOr(rows) | TransitionParams::SatPat(rows) => rows,
        }
    }

    /// Validate row count, row lengths (`|pi_i| + 1`), and probability ranges.
    pub fn validate(&self, net: &RoadNetwork) -> Result<()> {
        let rows = self.rows();
        if rows.len() != net.n_links() {
            return Err(Error::validation(format!(
                "transition parameters cover {} links, network has {}",
                rows.len(),
                net.n_links()
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            let want = net.neighbors(i).len() + 1;
            if row.len() != want {
                return Err(Error::validation(format!(
                    "link id {}: expected {want} transition entries, got {}",
                    net.link(i).id,
                    row.len()
                )));
            }
            for &p in row {
                if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                    return Err(Error::validation(format!(
                        "link id {}: transition entry {p} outside [0, 1]",
                        net.link(i).id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Probability that the link of row `row` is congested next epoch given
    /// the neighborhood state `eta`.
    #[inline]
    pub fn congestion_prob(&self, row: &[f64], eta: u64) -> f64 {
        match self {
            TransitionParams::NoisyOr(_) => noisyor_congestion_prob(row, eta),
            TransitionParams::SatPat(_) => satpat_congestion_prob(row, eta),
        }
    }
}

/// Noisy-OR probability of congestion given active-neighbor mask `eta`.
#[inline]
pub fn noisyor_congestion_prob(q_row: &[f64], eta: u64) -> f64 {
    let mut stay_free = q_row[0];
    let mut rest = eta;
    while rest != 0 {
        let k = rest.trailing_zeros() as usize;
        stay_free *= q_row[k + 1];
        rest &= rest - 1;
    }
    1.0 - stay_free
}

/// Sample the next state of one link under noisy-OR, returning the state and
/// the auxiliary cause mask (bit 0 = bias line, bit `k + 1` = neighbor `k`).
///
/// Inactive neighbor lines never fire, so the returned mask is always
/// consistent with `eta`, and the state always equals `OR(eta_bar)`.
#[inline]
pub fn noisyor_sample_step<R: Rng + ?Sized>(q_row: &[f64], eta: u64, rng: &mut R) -> (bool, u64) {
    let mut aux = 0u64;
    if rng.random::<f64>() < 1.0 - q_row[0] {
        aux |= 1;
    }
    let mut rest = eta;
    while rest != 0 {
        let k = rest.trailing_zeros() as usize;
        if rng.random::<f64>() < 1.0 - q_row[k + 1] {
            aux |= 1u64 << (k + 1);
        }
        rest &= rest - 1;
    }
    (aux != 0, aux)
}

/// Joint transition factor of one link: the probability of drawing auxiliary
/// mask `eta_bar` and next state `s` given the neighborhood state `eta`.
///
/// Zero when the triple is inconsistent (some `eta_bar` line fired while its
/// neighbor was inactive, or `s != OR(eta_bar)`). For fixed `eta`, summing
/// over all `eta_bar` with `s = OR(eta_bar)` gives exactly one.
pub fn noisyor_factor(q_row: &[f64], eta: u64, eta_bar: u64, s: bool) -> f64 {
    let n = q_row.len() - 1;
    if s != (eta_bar != 0) {
        return 0.0;
    }
    // Bias line.
    let mut f = if bits::bit(eta_bar, 0) { 1.0 - q_row[0] } else { q_row[0] };
    for k in 0..n {
        let active = bits::bit(eta, k);
        let fired = bits::bit(eta_bar, k + 1);
        match (active, fired) {
            (false, true) => return 0.0,
            (false, false) => {}
            (true, true) => f *= 1.0 - q_row[k + 1],
            (true, false) => f *= q_row[k + 1],
        }
    }
    f
}

/// Saturation-pattern probability of congestion: row entry indexed by the
/// number of active neighbors.
#[inline]
pub fn satpat_congestion_prob(a_row: &[f64], eta: u64) -> f64 {
    a_row[eta.count_ones() as usize]
}

/// Sample the next state under the saturation-pattern model. Exactly one
/// uniform draw is consumed regardless of neighborhood size.
#[inline]
pub fn satpat_sample_step<R: Rng + ?Sized>(a_row: &[f64], eta: u64, rng: &mut R) -> bool {
    rng.random::<f64>() < satpat_congestion_prob(a_row, eta)
}
