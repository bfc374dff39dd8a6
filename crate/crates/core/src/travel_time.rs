//! Gaussian travel-time observation model.
//!
//! Conditional on its congestion state `s` (0 free-flow, 1 congested), the time
//! to traverse link `i` in full is normal with state-specific mean and standard
//! deviation. Link times are conditionally independent given the states, so a
//! path's total time is normal with summed means and variances. A partially
//! traversed link contributes linearly to the mean and quadratically to the
//! variance: a fraction `a` of a link scales its mean by `a` and its variance
//! by `a^2`.
//!
//! A trajectory record covers a contiguous run of links, entering the first
//! link possibly mid-way (fraction `alpha_s` of it remains ahead and is
//! traversed) and leaving the last link possibly before its end (fraction
//! `alpha_e` of it was traversed). When a record starts and ends within the
//! *same* link, the traversed fraction is `alpha_s - (1 - alpha_e)`; a
//! non-positive value means the record is inconsistent and is rejected rather
//! than guessed at.
//!
//! The module also provides a deterministic two-component Gaussian mixture
//! fitter used to calibrate per-link observation parameters from pooled
//! travel-time samples.

use crate::error::{Error, Result};

/// Smallest traversed fraction accepted for a same-link record.
const MIN_TRAVERSED_FRACTION: f64 = 1e-9;

/// Variance floor for the mixture fitter, in seconds squared.
const GMM_VARIANCE_FLOOR: f64 = 1e-6;

/// Per-link, per-state Gaussian parameters (seconds), indexed by dense link
/// index; element `[0]` is the free-flow state, `[1]` the congested state.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationParams {
    pub mu: Vec<[f64; 2]>,
    pub sigma: Vec<[f64; 2]>,
}

impl ObservationParams {
    /// Validate shape and positivity for a network of `n_links` links.
    pub fn validate(&self, n_links: usize) -> Result<()> {
        if self.mu.len() != n_links || self.sigma.len() != n_links {
            return Err(Error::validation(format!(
                "observation parameters cover {} links, network has {n_links}",
                self.mu.len()
            )));
        }
        for (i, (m, s)) in self.mu.iter().zip(&self.sigma).enumerate() {
            for k in 0..2 {
                if !m[k].is_finite() || m[k] <= 0.0 {
                    return Err(Error::validation(format!(
                        "link index {i}: mean travel time must be positive, got {}",
                        m[k]
                    )));
                }
                if !s[k].is_finite() || s[k] <= 0.0 {
                    return Err(Error::validation(format!(
                        "link index {i}: travel-time std must be positive, got {}",
                        s[k]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A contiguous run of links with partial first/last traversal.
///
/// `links` are dense link indices. `alpha_s` is the fraction of the first link
/// that lies ahead at the start and is traversed; `alpha_e` is the fraction of
/// the last link traversed before the end. Both are in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSegment {
    pub links: Vec<usize>,
    pub alpha_s: f64,
    pub alpha_e: f64,
}

impl PathSegment {
    /// Segment over full links only.
    pub fn full(links: Vec<usize>) -> PathSegment {
        PathSegment { links, alpha_s: 1.0, alpha_e: 1.0 }
    }

    /// Validate link indices and fraction ranges.
    pub fn validate(&self, n_links: usize) -> Result<()> {
        if self.links.is_empty() {
            return Err(Error::validation("path segment has no links"));
        }
        for &l in &self.links {
            if l >= n_links {
                return Err(Error::validation(format!("segment link index {l} out of range")));
            }
        }
        for (name, a) in [("alpha_s", self.alpha_s), ("alpha_e", self.alpha_e)] {
            if !a.is_finite() || a <= 0.0 || a > 1.0 {
                return Err(Error::validation(format!("{name} must lie in (0, 1], got {a}")));
            }
        }
        if self.links.len() == 1 {
            traversed_single_fraction(self.alpha_s, self.alpha_e)?;
        }
        Ok(())
    }

    /// Traversed fraction per link, in order.
    pub fn fractions(&self) -> Result<Vec<f64>> {
        if self.links.len() == 1 {
            return Ok(vec![traversed_single_fraction(self.alpha_s, self.alpha_e)?]);
        }
        let mut f = vec![1.0; self.links.len()];
        f[0] = self.alpha_s;
        *f.last_mut().expect("non-empty") = self.alpha_e;
        Ok(f)
    }
}

/// Traversed fraction for a record that starts and ends on the same link.
fn traversed_single_fraction(alpha_s: f64, alpha_e: f64) -> Result<f64> {
    let f = alpha_s - (1.0 - alpha_e);
    if f < MIN_TRAVERSED_FRACTION {
        return Err(Error::validation(format!(
            "single-link segment traverses nothing: alpha_s={alpha_s}, alpha_e={alpha_e}"
        )));
    }
    Ok(f)
}

/// Mean and variance of the segment's travel time given per-link states.
///
/// `states[k]` is the congestion state of `seg.links[k]`.
pub fn path_gaussian(
    seg: &PathSegment,
    states: &[bool],
    params: &ObservationParams,
) -> Result<(f64, f64)> {
    if states.len() != seg.links.len() {
        return Err(Error::validation(format!(
            "segment has {} links but {} states were given",
            seg.links.len(),
            states.len()
        )));
    }
    let fractions = seg.fractions()?;
    let mut mean = 0.0;
    let mut var = 0.0;
    for ((&l, &s), f) in seg.links.iter().zip(states).zip(fractions) {
        let k = s as usize;
        mean += f * params.mu[l][k];
        let sd = params.sigma[l][k];
        var += f * f * sd * sd;
    }
    Ok((mean, var))
}

/// Same as [`path_gaussian`] but reading states from a joint bitmask
/// (`state` bit `l` = state of dense link `l`). Used on hot paths.
pub fn path_gaussian_mask(
    seg: &PathSegment,
    state: u64,
    params: &ObservationParams,
) -> Result<(f64, f64)> {
    let fractions = seg.fractions()?;
    let mut mean = 0.0;
    let mut var = 0.0;
    for (&l, f) in seg.links.iter().zip(fractions) {
        let k = ((state >> l) & 1) as usize;
        mean += f * params.mu[l][k];
        let sd = params.sigma[l][k];
        var += f * f * sd * sd;
    }
    Ok((mean, var))
}

/// Gaussian density of observing total time `y` on the segment.
pub fn observation_density(
    y: f64,
    seg: &PathSegment,
    states: &[bool],
    params: &ObservationParams,
) -> Result<f64> {
    let (mean, var) = path_gaussian(seg, states, params)?;
    Ok(normal_pdf(y, mean, var))
}

/// Natural log of [`observation_density`]; safe against underflow.
pub fn log_observation_density(
    y: f64,
    seg: &PathSegment,
    states: &[bool],
    params: &ObservationParams,
) -> Result<f64> {
    let (mean, var) = path_gaussian(seg, states, params)?;
    Ok(normal_log_pdf(y, mean, var))
}

/// Log density variant over a joint state bitmask, for filter weighting.
pub fn log_observation_density_mask(
    y: f64,
    seg: &PathSegment,
    state: u64,
    params: &ObservationParams,
) -> Result<f64> {
    let (mean, var) = path_gaussian_mask(seg, state, params)?;
    Ok(normal_log_pdf(y, mean, var))
}

/// Normal density with mean `mean` and variance `var`.
pub fn normal_pdf(y: f64, mean: f64, var: f64) -> f64 {
    normal_log_pdf(y, mean, var).exp()
}

/// Log normal density with mean `mean` and variance `var`.
pub fn normal_log_pdf(y: f64, mean: f64, var: f64) -> f64 {
    let d = y - mean;
    -0.5 * (d * d / var) - 0.5 * (2.0 * std::f64::consts::PI * var).ln()
}

/// Result of fitting a two-component Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureFit {
    /// Mean and std of the lower-mean (free-flow) component.
    pub mu0: f64,
    pub sigma0: f64,
    /// Mean and std of the higher-mean (congested) component.
    pub mu1: f64,
    pub sigma1: f64,
    /// Mixing weight of the congested component, in `[0, 1]`.
    pub mix1: f64,
    /// Whether the fit converged within the iteration budget.
    pub converged: bool,
    /// Iterations actually performed.
    pub iterations: usize,
}

/// Fit a one-dimensional two-component Gaussian mixture by EM.
///
/// The fit is deterministic: components are initialized from the lower and
/// upper halves of the sorted sample. Components are kept ordered so that
/// `mu0 <= mu1`, variances are floored at 1e-6 s^2, and convergence is declared
/// when no parameter moves by more than `tol` between iterations. At least
/// four samples with nonzero spread are required.
pub fn fit_travel_time_mixture(samples: &[f64], max_iters: usize, tol: f64) -> Result<MixtureFit> {
    if samples.len() < 4 {
        return Err(Error::validation(format!(
            "mixture fit needs at least 4 samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|y| !y.is_finite()) {
        return Err(Error::validation("mixture fit given non-finite sample"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let spread = sorted.last().unwrap() - sorted.first().unwrap();
    if spread <= 0.0 {
        return Err(Error::validation("mixture fit needs samples with nonzero spread"));
    }

    let half = sorted.len() / 2;
    let mean_of = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let var_of = |xs: &[f64], m: f64| {
        (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64)
            .max(GMM_VARIANCE_FLOOR)
    };
    let mut mu = [mean_of(&sorted[..half]), mean_of(&sorted[half..])];
    let mut var = [var_of(&sorted[..half], mu[0]), var_of(&sorted[half..], mu[1])];
    let mut mix1 = 0.5f64;

    let n = samples.len() as f64;
    let mut resp = vec![0.0f64; samples.len()];
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..max_iters {
        iterations += 1;
        // E-step: responsibility of the congested component per sample.
        for (r, &y) in resp.iter_mut().zip(samples) {
            let l0 = (1.0 - mix1) * normal_pdf(y, mu[0], var[0]);
            let l1 = mix1 * normal_pdf(y, mu[1], var[1]);
            let tot = l0 + l1;
            *r = if tot > 0.0 { l1 / tot } else { 0.5 };
        }
        // M-step.
        let n1: f64 = resp.iter().sum();
        let n0 = n - n1;
        let new_mix1 = n1 / n;
        let mut new_mu = mu;
        let mut new_var = var;
        if n0 > 0.0 {
            new_mu[0] = samples.iter().zip(&resp).map(|(y, r)| (1.0 - r) * y).sum::<f64>() / n0;
            new_var[0] = (samples
                .iter()
                .zip(&resp)
                .map(|(y, r)| (1.0 - r) * (y - new_mu[0]) * (y - new_mu[0]))
                .sum::<f64>()
                / n0)
                .max(GMM_VARIANCE_FLOOR);
        }
        if n1 > 0.0 {
            new_mu[1] = samples.iter().zip(&resp).map(|(y, r)| r * y).sum::<f64>() / n1;
            new_var[1] = (samples
                .iter()
                .zip(&resp)
                .map(|(y, r)| r * (y - new_mu[1]) * (y - new_mu[1]))
                .sum::<f64>()
                / n1)
                .max(GMM_VARIANCE_FLOOR);
        }
        let mut new_mix = new_mix1;
        // Keep the component order canonical: component 0 is the faster one.
        if new_mu[0] > new_mu[1] {
            new_mu.swap(0, 1);
            new_var.swap(0, 1);
            new_mix = 1.0 - new_mix;
        }
        let delta = (new_mu[0] - mu[0])
            .abs()
            .max((new_mu[1] - mu[1]).abs())
            .max((new_var[0] - var[0]).abs())
            .max((new_var[1] - var[1]).abs())
            .max((new_mix - mix1).abs());
        mu = new_mu;
        var = new_var;
        mix1 = new_mix;
        if delta <= tol {
            converged = true;
            break;
        }
    }

    Ok(MixtureFit {
        mu0: mu[0],
        sigma0: var[0].sqrt(),
        mu1: mu[1],
        sigma1: var[1].sqrt(),
        mix1,
        converged,
        iterations,
    })
}
