//! Head-to-head evaluation of learned models on held-out days.
//!
//! Test trips are carved out of probe-vehicle traces. A candidate trip picks
//! a vehicle, a start epoch boundary, and a horizon of `m` windows; its route
//! is the vehicle's actual path over those windows, truncated at the last
//! link boundary the vehicle crossed inside window `m` (a trip ends at a link
//! boundary, and a window in which the vehicle never finished a link yields
//! no trip). The ground-truth duration interpolates inside the final window
//! with expected traversal times under the day's recorded true states:
//! `(m-1)·delta` for the full windows plus the expected fraction of window
//! `m` spent before that boundary.
//!
//! Each model predicts every trip from the same footing: the day's
//! observations up to the trip's start epoch are filtered under that model
//! (particle snapshots are shared across the day's trips), the surviving
//! particles seed a forecast, and the predictor walks the trip route. Errors
//! are relative absolute deviations; the report carries per-horizon means
//! and full error distributions.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::filter::{filter_day, prepare_dataset, FilterOptions};
use crate::network::RoadNetwork;
use crate::params::ThetaParams;
use crate::predict::{predict_route, ParticleForecast};
use crate::rng::{substream, Domain};
use crate::synth::{TraceDataset, TrajectoryObservation};
use crate::travel_time::PathSegment;

/// One evaluation trip with its ground-truth duration.
#[derive(Debug, Clone)]
pub struct TestTrip {
    pub day: usize,
    pub vehicle: u32,
    /// The trip starts at the end of this epoch (0 = the day's start).
    pub start_epoch: usize,
    /// Dense link indices, ending at a link boundary.
    pub route: Vec<usize>,
    /// Fraction of the first link still ahead at the start.
    pub alpha_s: f64,
    pub true_seconds: f64,
    /// Number of windows the trip spans.
    pub horizon: usize,
}

/// Relative absolute error of a prediction.
pub fn relative_abs_error(predicted: f64, truth: f64) -> f64 {
    (predicted - truth).abs() / truth
}

/// Index a day's records: per vehicle, one record per epoch.
fn records_by_vehicle<'a>(
    epochs: &'a [Vec<TrajectoryObservation>],
) -> Result<BTreeMap<u32, Vec<&'a TrajectoryObservation>>> {
    let mut map: BTreeMap<u32, Vec<Option<&TrajectoryObservation>>> = BTreeMap::new();
    for (t, records) in epochs.iter().enumerate() {
        for r in records {
            let slots = map.entry(r.vehicle).or_insert_with(|| vec![None; epochs.len()]);
            if slots[t].is_some() {
                return Err(Error::validation(format!(
                    "vehicle {} has two records in epoch {}",
                    r.vehicle,
                    t + 1
                )));
            }
            slots[t] = Some(r);
        }
    }
    map.into_iter()
        .map(|(v, slots)| {
            let complete: Option<Vec<_>> = slots.into_iter().collect();
            complete
                .map(|rs| (v, rs))
                .ok_or_else(|| Error::validation(format!("vehicle {v} misses an epoch record")))
        })
        .collect()
}

/// Stitch one candidate trip. Returns `None` when window `m` crossed no link
/// boundary.
fn stitch_trip(
    records: &[&TrajectoryObservation],
    day: usize,
    vehicle: u32,
    start_epoch: usize,
    horizon: usize,
    day_states: &[u64],
    net: &RoadNetwork,
    truth: &ThetaParams,
) -> Result<Option<TestTrip>> {
    let window_records = &records[start_epoch..start_epoch + horizon];
    let last = window_records[horizon - 1];
    if last.links.len() == 1 && last.alpha_e < 1.0 {
        return Ok(None);
    }

    let mut route: Vec<usize> = Vec::new();
    for (k, r) in window_records.iter().enumerate() {
        let dense: Vec<usize> =
            r.links.iter().map(|&id| net.index_of(id)).collect::<Result<_>>()?;
        if k == 0 {
            route.extend(dense);
            continue;
        }
        let prev = window_records[k - 1];
        if prev.alpha_e < 1.0 {
            // Continuation within the same link.
            if r.links.first() != prev.links.last()
                || (r.alpha_s - (1.0 - prev.alpha_e)).abs() > 1e-9
            {
                return Err(Error::validation(format!(
                    "vehicle {vehicle} breaks continuity entering epoch {}",
                    prev.epoch + 1
                )));
            }
            route.extend(&dense[1..]);
        } else {
            if (r.alpha_s - 1.0).abs() > 1e-9 {
                return Err(Error::validation(format!(
                    "vehicle {vehicle} re-enters a finished link at epoch {}",
                    prev.epoch + 1
                )));
            }
            route.extend(dense);
        }
    }
    if last.alpha_e < 1.0 {
        route.pop();
    }
    if route.is_empty() {
        return Ok(None);
    }

    // Expected time through window m's passage under the recorded true
    // states, and through the truncated tail beyond the boundary.
    let state = day_states[start_epoch + horizon - 1];
    let seg = PathSegment {
        links: last.links.iter().map(|&id| net.index_of(id)).collect::<Result<_>>()?,
        alpha_s: last.alpha_s,
        alpha_e: last.alpha_e,
    };
    let fractions = seg.fractions()?;
    let mut e_total = 0.0;
    for (&l, &f) in seg.links.iter().zip(&fractions) {
        let k = ((state >> l) & 1) as usize;
        e_total += f * truth.obs.mu[l][k];
    }
    if !(e_total > 0.0) {
        return Err(Error::numerical(format!(
            "window passage has nonpositive expected time {e_total}"
        )));
    }
    let e_tail = if last.alpha_e < 1.0 {
        let l = *seg.links.last().expect("passage has links");
        let k = ((state >> l) & 1) as usize;
        last.alpha_e * truth.obs.mu[l][k]
    } else {
        0.0
    };
    let true_seconds =
        (horizon as f64 - 1.0) * truth.delta + truth.delta * (1.0 - e_tail / e_total);

    Ok(Some(TestTrip {
        day,
        vehicle,
        start_epoch,
        route,
        alpha_s: window_records[0].alpha_s,
        true_seconds,
        horizon,
    }))
}

/// Extract up to `max_trips` trips of `horizon` windows from the given days,
/// spread evenly over the candidate pool in (day, vehicle, start) order.
pub fn extract_trips(
    dataset: &TraceDataset,
    net: &RoadNetwork,
    truth: &ThetaParams,
    days: &[usize],
    horizon: usize,
    max_trips: usize,
) -> Result<Vec<TestTrip>> {
    if horizon == 0 {
        return Err(Error::validation("horizon must be at least one window"));
    }
    if max_trips == 0 {
        return Err(Error::validation("trip budget must be positive"));
    }
    let mut pool = Vec::new();
    for &d in days {
        let day = dataset
            .days
            .get(d)
            .ok_or_else(|| Error::validation(format!("day index {d} out of range")))?;
        let by_vehicle = records_by_vehicle(&day.epochs)?;
        let t_total = day.epochs.len();
        if t_total < horizon {
            continue;
        }
        for (vehicle, records) in &by_vehicle {
            for start in 0..=t_total - horizon {
                if let Some(trip) = stitch_trip(
                    records,
                    d,
                    *vehicle,
                    start,
                    horizon,
                    &day.states,
                    net,
                    truth,
                )? {
                    pool.push(trip);
                }
            }
        }
    }
    if pool.len() <= max_trips {
        return Ok(pool);
    }
    let stride = pool.len() as f64 / max_trips as f64;
    let mut picked = Vec::with_capacity(max_trips);
    let mut pool = pool.into_iter().map(Some).collect::<Vec<_>>();
    for i in 0..max_trips {
        let idx = (i as f64 * stride) as usize;
        picked.push(pool[idx].take().expect("stride indices are distinct"));
    }
    Ok(picked)
}

/// A labeled parameter set entering the comparison.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub label: String,
    pub theta: ThetaParams,
}

/// Per-horizon aggregate of the comparison.
#[derive(Debug, Clone)]
pub struct HorizonSummary {
    pub horizon: usize,
    pub n_trips: usize,
    /// Mean relative absolute error per model, `NaN` when no trips exist.
    pub mae: Vec<f64>,
}

/// Full comparison output.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub labels: Vec<String>,
    pub rows: Vec<HorizonSummary>,
    /// `errors[model][row]` lists per-trip relative absolute errors.
    pub errors: Vec<Vec<Vec<f64>>>,
}

impl EvalReport {
    /// One line per horizon: trips and each model's mean error.
    pub fn serialize_summary(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            out.push_str(&format!("horizon {} trips {}", row.horizon, row.n_trips));
            for (label, mae) in self.labels.iter().zip(&row.mae) {
                if mae.is_nan() {
                    out.push_str(&format!(" {label} na"));
                } else {
                    out.push_str(&format!(" {label} {mae}"));
                }
            }
            out.push('\n');
        }
        out
    }

    /// Empirical error distribution of one model at one horizon row:
    /// `error cumulative_fraction` per line, errors ascending.
    pub fn serialize_cdf(&self, model: usize, row: usize) -> String {
        let mut errors = self.errors[model][row].clone();
        errors.sort_by(|a, b| a.partial_cmp(b).expect("errors are finite"));
        let n = errors.len();
        let mut out = String::new();
        for (i, e) in errors.iter().enumerate() {
            out.push_str(&format!("{e} {}\n", (i + 1) as f64 / n as f64));
        }
        out
    }
}

/// Compare models on the same trips. For every (day, model) pair the day is
/// filtered once with per-epoch particle snapshots; every trip starting after
/// epoch `t` forecasts from the epoch-`t` snapshot (trips starting at the
/// day's very beginning forecast from the known all-free state).
pub fn evaluate_models(
    dataset: &TraceDataset,
    net: &RoadNetwork,
    truth: &ThetaParams,
    models: &[ModelSpec],
    horizons: &[usize],
    days: &[usize],
    n_particles: usize,
    max_trips_per_horizon: usize,
    seed: u64,
) -> Result<EvalReport> {
    if models.is_empty() {
        return Err(Error::validation("need at least one model to evaluate"));
    }
    if horizons.is_empty() {
        return Err(Error::validation("need at least one horizon"));
    }
    truth.validate(net)?;
    for m in models {
        m.theta.validate(net)?;
        if m.theta.delta != truth.delta {
            return Err(Error::validation(format!(
                "model {} uses window {} s but the data was generated at {} s",
                m.label, m.theta.delta, truth.delta
            )));
        }
    }
    let mut day_order: Vec<usize> = days.to_vec();
    day_order.sort_unstable();
    day_order.dedup();
    let prepared = prepare_dataset(dataset, net)?;

    // Snapshots[day position][model]: per-epoch post-resample particles.
    let mut snapshots: Vec<Vec<Vec<Vec<u64>>>> = Vec::with_capacity(day_order.len());
    let mut day_pos: BTreeMap<usize, usize> = BTreeMap::new();
    for (pos, &d) in day_order.iter().enumerate() {
        if d >= prepared.len() {
            return Err(Error::validation(format!("day index {d} out of range")));
        }
        day_pos.insert(d, pos);
        let mut per_model = Vec::with_capacity(models.len());
        for (j, m) in models.iter().enumerate() {
            let mut rng =
                substream(seed, Domain::Filter, (pos * models.len() + j) as u64);
            let opts = FilterOptions { record_snapshots: true, ..Default::default() };
            let res = filter_day(&prepared[d], &m.theta, net, n_particles, &opts, &mut rng)?;
            per_model.push(res.snapshots);
        }
        snapshots.push(per_model);
    }

    let mut rows = Vec::with_capacity(horizons.len());
    let mut errors: Vec<Vec<Vec<f64>>> =
        vec![Vec::with_capacity(horizons.len()); models.len()];
    let mut forecast_counter = 0u64;
    for &h in horizons {
        let trips = extract_trips(dataset, net, truth, &day_order, h, max_trips_per_horizon)?;
        let mut per_model_errors: Vec<Vec<f64>> = vec![Vec::new(); models.len()];
        for trip in &trips {
            let pos = day_pos[&trip.day];
            for (j, m) in models.iter().enumerate() {
                let start = if trip.start_epoch == 0 {
                    vec![0u64; n_particles]
                } else {
                    snapshots[pos][j][trip.start_epoch - 1].clone()
                };
                let rng = substream(seed, Domain::Evaluate, forecast_counter);
                forecast_counter += 1;
                let mut forecast = ParticleForecast::new(start, &m.theta.trans, net, rng)?;
                let pred = predict_route(
                    &trip.route,
                    trip.alpha_s,
                    &m.theta.obs,
                    m.theta.delta,
                    net,
                    &mut forecast,
                )?;
                per_model_errors[j]
                    .push(relative_abs_error(pred.expected_seconds, trip.true_seconds));
            }
        }
        let mae: Vec<f64> = per_model_errors
            .iter()
            .map(|errs| {
                if errs.is_empty() {
                    f64::NAN
                } else {
                    errs.iter().sum::<f64>() / errs.len() as f64
                }
            })
            .collect();
        rows.push(HorizonSummary { horizon: h, n_trips: trips.len(), mae });
        for (j, errs) in per_model_errors.into_iter().enumerate() {
            errors[j].push(errs);
        }
    }

    Ok(EvalReport {
        labels: models.iter().map(|m| m.label.clone()).collect(),
        rows,
        errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpd::TransitionParams;
    use crate::em::init_transition;
    use crate::synth::{
        generate_dataset, ring_network, ring_routes, three_ring_theta, VehicleRoute,
    };
    use crate::travel_time::ObservationParams;
    use approx::assert_relative_eq;

    /// A near-noiseless single vehicle on the 3-ring walks 10/3 links per
    /// window, so horizon-1 trips truncate to three whole links and a true
    /// duration of nine tenths of the window.
    #[test]
    fn truncation_and_interpolation_follow_the_boundary_rule() {
        let net = ring_network(3, 1000.0);
        let mut theta = three_ring_theta(&net);
        // Freeze congestion out and the time model to its mean.
        theta.trans = TransitionParams::NoisyOr(vec![vec![1.0; 4]; 3]);
        theta.obs.sigma = vec![[1e-6, 1e-6]; 3];
        let routes = vec![VehicleRoute {
            vehicle: 1,
            cycle: vec![0, 1, 2],
            start_pos: 0,
            start_remaining_m: 1000.0,
        }];
        let dataset = generate_dataset(&net, &theta, &routes, 1, 4, 5).unwrap();
        let trips = extract_trips(&dataset, &net, &theta, &[0], 1, 100).unwrap();
        assert_eq!(trips.len(), 4, "every window crosses boundaries");
        let first = &trips[0];
        assert_eq!(first.route, vec![0, 1, 2]);
        assert_relative_eq!(first.alpha_s, 1.0, epsilon = 1e-9);
        // Boundary reached after 270 of the 300 s window.
        assert_relative_eq!(first.true_seconds, 270.0, epsilon = 1e-3);
        // The next window opens with two thirds of link 1 (dense 0) left:
        // 60 s finishes it, 180 s crosses two more, and the last 60 s covers
        // two thirds of the wrapped link — truncated true time 240 s.
        let second = &trips[1];
        assert_relative_eq!(second.alpha_s, 2.0 / 3.0, epsilon = 1e-6);
        assert_relative_eq!(second.true_seconds, 240.0, epsilon = 1e-3);
    }

    #[test]
    fn windows_without_boundaries_yield_no_trips() {
        let net = ring_network(3, 10_000.0);
        let mut theta = three_ring_theta(&net);
        theta.trans = TransitionParams::NoisyOr(vec![vec![1.0; 4]; 3]);
        // 10 km at free flow 90 s/km-ish: mu is per link, so one link takes
        // 900 s > the 300 s window; no boundary is ever crossed mid-day.
        theta.obs = ObservationParams { mu: vec![[900.0, 1800.0]; 3], sigma: vec![[1e-6; 2]; 3] };
        let routes = ring_routes(&net, 1);
        let dataset = generate_dataset(&net, &theta, &routes, 1, 2, 6).unwrap();
        let trips = extract_trips(&dataset, &net, &theta, &[0], 1, 100).unwrap();
        assert!(trips.is_empty(), "no link boundary inside any window");
    }

    #[test]
    fn trip_budget_subsamples_evenly_and_deterministically() {
        let net = ring_network(3, 1000.0);
        let theta = three_ring_theta(&net);
        let routes = ring_routes(&net, 4);
        let dataset = generate_dataset(&net, &theta, &routes, 2, 10, 7).unwrap();
        let all = extract_trips(&dataset, &net, &theta, &[0, 1], 2, usize::MAX).unwrap();
        let capped = extract_trips(&dataset, &net, &theta, &[0, 1], 2, 10).unwrap();
        assert!(all.len() > 10);
        assert_eq!(capped.len(), 10);
        let again = extract_trips(&dataset, &net, &theta, &[0, 1], 2, 10).unwrap();
        for (a, b) in capped.iter().zip(&again) {
            assert_eq!(a.route, b.route);
            assert_eq!(a.true_seconds, b.true_seconds);
        }
        // The capped set spans both days rather than exhausting day 0 first.
        assert!(capped.iter().any(|t| t.day == 1));
    }

    #[test]
    fn extracted_trips_have_consistent_fields() {
        let net = ring_network(3, 1000.0);
        let theta = three_ring_theta(&net);
        let routes = ring_routes(&net, 3);
        let dataset = generate_dataset(&net, &theta, &routes, 2, 8, 11).unwrap();
        for h in 1..=3 {
            for trip in extract_trips(&dataset, &net, &theta, &[1], h, 50).unwrap() {
                assert_eq!(trip.horizon, h);
                assert_eq!(trip.day, 1);
                assert!(!trip.route.is_empty());
                assert!(net.check_route_contiguity(&trip.route).is_ok());
                assert!(trip.alpha_s > 0.0 && trip.alpha_s <= 1.0);
                assert!(
                    trip.true_seconds > (h as f64 - 1.0) * theta.delta
                        && trip.true_seconds <= h as f64 * theta.delta,
                    "true duration {} outside window {h}",
                    trip.true_seconds
                );
                assert!(trip.start_epoch + h <= 8);
            }
        }
    }

    #[test]
    fn bad_day_indices_and_degenerate_budgets_are_rejected() {
        let net = ring_network(3, 1000.0);
        let theta = three_ring_theta(&net);
        let routes = ring_routes(&net, 1);
        let dataset = generate_dataset(&net, &theta, &routes, 1, 3, 1).unwrap();
        assert!(extract_trips(&dataset, &net, &theta, &[5], 1, 10).is_err());
        assert!(extract_trips(&dataset, &net, &theta, &[0], 0, 10).is_err());
        assert!(extract_trips(&dataset, &net, &theta, &[0], 1, 0).is_err());
    }

    #[test]
    fn true_parameters_beat_a_random_model() {
        let net = ring_network(3, 1000.0);
        let theta = three_ring_theta(&net);
        let routes = ring_routes(&net, 4);
        let dataset = generate_dataset(&net, &theta, &routes, 1, 12, 23).unwrap();
        let mut wrong = theta.clone();
        wrong.trans = init_transition(&net, crate::cpd::CpdKind::NoisyOr, 99);
        let models = vec![
            ModelSpec { label: "truth".into(), theta: theta.clone() },
            ModelSpec { label: "random".into(), theta: wrong },
        ];
        let report = evaluate_models(
            &dataset, &net, &theta, &models, &[1, 2], &[0], 400, 40, 55,
        )
        .unwrap();
        assert_eq!(report.labels, vec!["truth", "random"]);
        for row in &report.rows {
            assert!(row.n_trips > 0);
            assert!(
                row.mae[0] < row.mae[1],
                "horizon {}: truth {} should beat random {}",
                row.horizon,
                row.mae[0],
                row.mae[1]
            );
        }
    }

    #[test]
    fn evaluation_is_deterministic_in_the_seed() {
        let net = ring_network(3, 1000.0);
        let theta = three_ring_theta(&net);
        let routes = ring_routes(&net, 2);
        let dataset = generate_dataset(&net, &theta, &routes, 1, 6, 3).unwrap();
        let models = vec![ModelSpec { label: "m".into(), theta: theta.clone() }];
        let run = |seed| {
            evaluate_models(&dataset, &net, &theta, &models, &[1], &[0], 200, 20, seed)
                .unwrap()
        };
        let (a, b, c) = (run(1), run(1), run(2));
        assert_eq!(a.errors, b.errors);
        assert_ne!(a.errors, c.errors, "seed must matter");
    }

    #[test]
    fn report_serialization_round_trips_shape() {
        let net = ring_network(3, 1000.0);
        let theta = three_ring_theta(&net);
        let routes = ring_routes(&net, 2);
        let dataset = generate_dataset(&net, &theta, &routes, 1, 6, 3).unwrap();
        let models = vec![ModelSpec { label: "m".into(), theta: theta.clone() }];
        let report =
            evaluate_models(&dataset, &net, &theta, &models, &[1, 2], &[0], 100, 15, 9)
                .unwrap();
        let summary = report.serialize_summary();
        assert_eq!(summary.lines().count(), 2);
        assert!(summary.starts_with("horizon 1 trips "));
        let cdf = report.serialize_cdf(0, 0);
        let lines: Vec<&str> = cdf.lines().collect();
        assert_eq!(lines.len(), report.rows[0].n_trips);
        assert!(lines.last().unwrap().ends_with(" 1"));
        // Cumulative fractions ascend.
        let fractions: Vec<f64> = lines
            .iter()
            .map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap())
            .collect();
        assert!(fractions.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn mismatched_window_durations_are_rejected() {
        let net = ring_network(3, 1000.0);
        let theta = three_ring_theta(&net);
        let routes = ring_routes(&net, 2);
        let dataset = generate_dataset(&net, &theta, &routes, 1, 4, 3).unwrap();
        let mut other = theta.clone();
        other.delta = 600.0;
        let models = vec![ModelSpec { label: "m".into(), theta: other }];
        assert!(
            evaluate_models(&dataset, &net, &theta, &models, &[1], &[0], 100, 10, 9).is_err()
        );
    }
}
