//! Expectation-maximization for transition parameters.
//!
//! The observation model and epoch duration are held fixed; learning targets
//! only the transition family's parameter rows. Each iteration runs the
//! particle filter over every day (days are independent given the
//! parameters, so they run in parallel and their expected sufficient
//! statistics merge additively in day order), then applies the closed-form
//! update:
//!
//! * noisy-OR: a line's inhibition is the expected fraction of exposures on
//!   which it did *not* fire — bias lines are exposed every step, neighbor
//!   lines only when that neighbor was active;
//! * saturation pattern: an activity-count entry is the expected fraction of
//!   its steps that ended congested.
//!
//! Any entry whose exposure count is zero keeps its previous value instead
//! of dividing by zero. Optionally each iterate (and the initial guess) is
//! scored with the exact forward pass, which is only feasible on small
//! networks but turns the learner into a measurable object.

use rayon::prelude::*;

use crate::cpd::{CpdKind, TransitionParams};
use crate::error::{Error, Result};
use crate::filter::{filter_day, EssAccumulator, FilterOptions, PreparedDay};
use crate::network::RoadNetwork;
use crate::oracle;
use crate::params::ThetaParams;
use crate::rng::{substream, Domain};

/// Starting transition parameters: noisy-OR inhibitions drawn uniformly from
/// `[0.3, 0.7]`, saturation-pattern entries all `0.5`.
pub fn init_transition(net: &RoadNetwork, kind: CpdKind, seed: u64) -> TransitionParams {
    use rand::Rng;
    match kind {
        CpdKind::NoisyOr => {
            let mut rng = substream(seed, Domain::Init, 0);
            let rows = (0..net.n_links())
                .map(|i| {
                    (0..net.neighbors(i).len() + 1)
                        .map(|_| 0.3 + 0.4 * rng.random::<f64>())
                        .collect()
                })
                .collect();
            TransitionParams::NoisyOr(rows)
        }
        CpdKind::SatPat => {
            let rows = (0..net.n_links())
                .map(|i| vec![0.5; net.neighbors(i).len() + 1])
                .collect();
            TransitionParams::SatPat(rows)
        }
    }
}

/// Closed-form maximization given expected sufficient statistics. Returns the
/// updated parameters and how many entries were retained from `prev` because
/// their exposure count was zero.
pub fn m_step(
    ess: &EssAccumulator,
    prev: &TransitionParams,
) -> Result<(TransitionParams, usize)> {
    let mut retained = 0usize;
    match (ess, prev) {
        (EssAccumulator::NoisyOr { bias, edge }, TransitionParams::NoisyOr(prev_rows)) => {
            if bias.len() != prev_rows.len() {
                return Err(Error::validation(
                    "statistics and parameters disagree on link count",
                ));
            }
            let mut rows = Vec::with_capacity(prev_rows.len());
            for i in 0..prev_rows.len() {
                if edge[i].len() + 1 != prev_rows[i].len() {
                    return Err(Error::validation(format!(
                        "statistics and parameters disagree on row {i} width"
                    )));
                }
                let mut row = Vec::with_capacity(prev_rows[i].len());
                let total = bias[i][0] + bias[i][1];
                if total > 0.0 {
                    row.push(bias[i][0] / total);
                } else {
                    row.push(prev_rows[i][0]);
                    retained += 1;
                }
                for (k, counts) in edge[i].iter().enumerate() {
                    let total = counts[0] + counts[1];
                    if total > 0.0 {
                        row.push(counts[0] / total);
                    } else {
                        row.push(prev_rows[i][k + 1]);
                        retained += 1;
                    }
                }
                rows.push(row);
            }
            Ok((TransitionParams::NoisyOr(rows), retained))
        }
        (EssAccumulator::SatPat { table }, TransitionParams::SatPat(prev_rows)) => {
            if table.len() != prev_rows.len() {
                return Err(Error::validation(
                    "statistics and parameters disagree on link count",
                ));
            }
            let mut rows = Vec::with_capacity(prev_rows.len());
            for i in 0..prev_rows.len() {
                if table[i].len() != prev_rows[i].len() {
                    return Err(Error::validation(format!(
                        "statistics and parameters disagree on row {i} width"
                    )));
                }
                let mut row = Vec::with_capacity(prev_rows[i].len());
                for (j, counts) in table[i].iter().enumerate() {
                    let total = counts[0] + counts[1];
                    if total > 0.0 {
                        row.push(counts[1] / total);
                    } else {
                        row.push(prev_rows[i][j]);
                        retained += 1;
                    }
                }
                rows.push(row);
            }
            Ok((TransitionParams::SatPat(rows), retained))
        }
        _ => Err(Error::validation(
            "statistics family differs from the parameter family",
        )),
    }
}

/// Largest absolute entrywise difference between two parameter sets of the
/// same shape.
pub fn max_param_delta(a: &TransitionParams, b: &TransitionParams) -> f64 {
    let mut worst: f64 = 0.0;
    for (ra, rb) in a.rows().iter().zip(b.rows()) {
        for (&x, &y) in ra.iter().zip(rb) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

/// Knobs for a learning run.
#[derive(Debug, Clone)]
pub struct EmOptions {
    pub n_particles: usize,
    pub max_iters: usize,
    /// Stop once the largest parameter change falls below this; `0.0` forces
    /// all iterations.
    pub tol: f64,
    /// Score the initial guess and every iterate with the exact forward pass
    /// (small networks only).
    pub exact_monitor: bool,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions { n_particles: 2000, max_iters: 20, tol: 0.0, exact_monitor: false }
    }
}

/// One row of the per-iteration progress report.
#[derive(Debug, Clone)]
pub struct EmIterationRow {
    pub iteration: usize,
    pub max_param_delta: f64,
    pub retained_entries: usize,
    pub zero_weight_epochs: u32,
    pub exact_log_lik: Option<f64>,
}

/// Progress of a learning run.
#[derive(Debug, Clone, Default)]
pub struct EmReport {
    pub initial_exact_log_lik: Option<f64>,
    pub iterations: Vec<EmIterationRow>,
    pub converged: bool,
}

impl EmReport {
    /// Plain-text rendering, one line per iteration.
    pub fn serialize(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map_or_else(|| "na".into(), |x| format!("{x}"))
        }
        let mut out = String::new();
        out.push_str(&format!("init_log_lik {}\n", opt(self.initial_exact_log_lik)));
        for row in &self.iterations {
            out.push_str(&format!(
                "iter {} max_delta {} retained {} zero_weight_epochs {} log_lik {}\n",
                row.iteration,
                row.max_param_delta,
                row.retained_entries,
                row.zero_weight_epochs,
                opt(row.exact_log_lik),
            ));
        }
        out.push_str(&format!("converged {}\n", self.converged));
        out
    }
}

fn exact_data_log_lik(
    theta: &ThetaParams,
    net: &RoadNetwork,
    prepared: &[PreparedDay],
) -> Result<f64> {
    let mut total = 0.0;
    for day in prepared {
        total += oracle::exact_forward(theta, net, &day.epochs, None)?.log_lik;
    }
    Ok(total)
}

/// Run EM from `theta0` (whose transition rows are the starting guess) and
/// return the learned parameters plus a progress report. Observation
/// parameters and the epoch duration are carried through unchanged.
pub fn run_em(
    prepared: &[PreparedDay],
    net: &RoadNetwork,
    theta0: &ThetaParams,
    options: &EmOptions,
    seed: u64,
) -> Result<(ThetaParams, EmReport)> {
    if prepared.is_empty() {
        return Err(Error::validation("learning needs at least one day of data"));
    }
    theta0.validate(net)?;
    let kind = theta0.trans.kind();
    let n_days = prepared.len();
    let filter_opts = FilterOptions {
        accumulate_ess: Some(kind),
        ..Default::default()
    };

    let mut theta = theta0.clone();
    let mut report = EmReport::default();
    if options.exact_monitor {
        report.initial_exact_log_lik = Some(exact_data_log_lik(&theta, net, prepared)?);
    }

    for iter in 0..options.max_iters {
        let per_day: Vec<Result<(EssAccumulator, u32)>> = prepared
            .par_iter()
            .enumerate()
            .map(|(di, day)| {
                let mut rng =
                    substream(seed, Domain::Filter, (iter * n_days + di) as u64);
                let res =
                    filter_day(day, &theta, net, options.n_particles, &filter_opts, &mut rng)?;
                Ok((res.ess, res.zero_weight_epochs))
            })
            .collect();

        // Merge in day order so the result is schedule-independent.
        let mut merged = EssAccumulator::zeros(kind, net);
        let mut zero_weight_epochs = 0u32;
        for item in per_day {
            let (ess, zw) = item?;
            merged.merge(&ess)?;
            zero_weight_epochs += zw;
        }

        let (new_trans, retained) = m_step(&merged, &theta.trans)?;
        let delta = max_param_delta(&new_trans, &theta.trans);
        theta.trans = new_trans;

        let exact_log_lik = if options.exact_monitor {
            Some(exact_data_log_lik(&theta, net, prepared)?)
        } else {
            None
        };
        report.iterations.push(EmIterationRow {
            iteration: iter + 1,
            max_param_delta: delta,
            retained_entries: retained,
            zero_weight_epochs,
            exact_log_lik,
        });

        if options.tol > 0.0 && delta < options.tol {
            report.converged = true;
            break;
        }
    }

    Ok((theta, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{ess_from_complete_noisyor, ess_from_complete_satpat, prepare_dataset};
    use crate::rng::{substream, Domain};
    use crate::synth::{
        evolve_states, generate_dataset, ring_network, ring_routes, three_ring_theta,
    };
    use approx::assert_relative_eq;

    #[test]
    fn init_is_deterministic_and_in_range() {
        let net = ring_network(4, 500.0);
        let a = init_transition(&net, CpdKind::NoisyOr, 42);
        let b = init_transition(&net, CpdKind::NoisyOr, 42);
        assert_eq!(a.rows(), b.rows());
        let c = init_transition(&net, CpdKind::NoisyOr, 43);
        assert_ne!(a.rows(), c.rows(), "different seeds give different starts");
        for row in a.rows() {
            for &q in row {
                assert!((0.3..=0.7).contains(&q), "inhibition {q} outside the start range");
            }
        }
        let s = init_transition(&net, CpdKind::SatPat, 42);
        for row in s.rows() {
            assert!(row.iter().all(|&a| a == 0.5));
        }
    }

    /// On fully observed data the update is plain event counting, so the
    /// maximizer must reproduce independently computed ratios exactly.
    #[test]
    fn maximization_matches_direct_counting_on_complete_data() {
        let net = ring_network(3, 1000.0);
        let theta = three_ring_theta(&net);
        let mut rng = substream(17, Domain::Generate, 0);
        let evo = evolve_states(&theta.trans, &net, 150, &mut rng).unwrap();
        let ess = ess_from_complete_noisyor(&evo, &net).unwrap();
        let prev = init_transition(&net, CpdKind::NoisyOr, 0);
        let (updated, _) = m_step(&ess, &prev).unwrap();

        // Independent counting straight off the recorded masks.
        let aux = evo.aux.as_ref().unwrap();
        for i in 0..3 {
            let nbrs = net.neighbors(i).to_vec();
            let mut bias = [0u32; 2];
            let mut edge = vec![[0u32; 2]; nbrs.len()];
            let mut prev_state = 0u64;
            for (step, &state) in evo.states.iter().enumerate() {
                let mask = aux[step][i];
                bias[(mask & 1) as usize] += 1;
                for (k, &nb) in nbrs.iter().enumerate() {
                    if (prev_state >> nb) & 1 == 1 {
                        edge[k][((mask >> (k + 1)) & 1) as usize] += 1;
                    }
                }
                prev_state = state;
            }
            let row = &updated.rows()[i];
            assert_relative_eq!(
                row[0],
                bias[0] as f64 / (bias[0] + bias[1]) as f64,
                max_relative = 1e-14
            );
            for (k, e) in edge.iter().enumerate() {
                let total = e[0] + e[1];
                if total > 0 {
                    assert_relative_eq!(
                        row[k + 1],
                        e[0] as f64 / total as f64,
                        max_relative = 1e-14
                    );
                }
            }
        }
    }

    #[test]
    fn zero_exposure_entries_keep_previous_values() {
        let net = ring_network(3, 1000.0);
        // All links stay free forever: neighbor lines never get exposed.
        let states = vec![0u64; 20];
        let aux = vec![vec![0u64; 3]; 20];
        let evo = crate::synth::StateEvolution { states: states.clone(), aux: Some(aux) };
        let ess = ess_from_complete_noisyor(&evo, &net).unwrap();
        let prev = init_transition(&net, CpdKind::NoisyOr, 5);
        let (updated, retained) = m_step(&ess, &prev).unwrap();
        // 3 links x 3 neighbor entries retained; biases all move to 1.
        assert_eq!(retained, 9);
        for i in 0..3 {
            assert_eq!(updated.rows()[i][0], 1.0, "bias line never fired");
            for k in 0..3 {
                assert_eq!(updated.rows()[i][k + 1], prev.rows()[i][k + 1]);
            }
        }

        let ess_sat = ess_from_complete_satpat(&states, &net);
        let prev_sat = init_transition(&net, CpdKind::SatPat, 5);
        let (updated_sat, retained_sat) = m_step(&ess_sat, &prev_sat).unwrap();
        // Only the zero-active-neighbors column is ever exposed.
        assert_eq!(retained_sat, 9);
        for i in 0..3 {
            assert_eq!(updated_sat.rows()[i][0], 0.0);
            for j in 1..=3 {
                assert_eq!(updated_sat.rows()[i][j], 0.5);
            }
        }
    }

    #[test]
    fn mismatched_family_or_shape_is_rejected() {
        let net = ring_network(3, 1000.0);
        let ess = crate::filter::EssAccumulator::zeros(CpdKind::NoisyOr, &net);
        let prev_sat = init_transition(&net, CpdKind::SatPat, 1);
        assert!(m_step(&ess, &prev_sat).is_err());
        let net4 = ring_network(4, 1000.0);
        let prev4 = init_transition(&net4, CpdKind::NoisyOr, 1);
        assert!(m_step(&ess, &prev4).is_err());
    }

    fn small_learning_setup() -> (RoadNetwork, ThetaParams, Vec<PreparedDay>) {
        let net = ring_network(3, 1000.0);
        let theta = three_ring_theta(&net);
        let routes = ring_routes(&net, 4);
        let dataset = generate_dataset(&net, &theta, &routes, 2, 25, 314).unwrap();
        let prepared = prepare_dataset(&dataset, &net).unwrap();
        (net, theta, prepared)
    }

    #[test]
    fn learning_is_deterministic_given_seed() {
        let (net, truth, prepared) = small_learning_setup();
        let mut theta0 = truth.clone();
        theta0.trans = init_transition(&net, CpdKind::NoisyOr, 7);
        let opts = EmOptions { n_particles: 200, max_iters: 3, ..Default::default() };
        let (a, _) = run_em(&prepared, &net, &theta0, &opts, 11).unwrap();
        let (b, _) = run_em(&prepared, &net, &theta0, &opts, 11).unwrap();
        assert_eq!(a.trans.rows(), b.trans.rows());
        let (c, _) = run_em(&prepared, &net, &theta0, &opts, 12).unwrap();
        assert_ne!(a.trans.rows(), c.trans.rows());
    }

    #[test]
    fn learning_improves_the_exact_likelihood_from_a_random_start() {
        let (net, truth, prepared) = small_learning_setup();
        let mut theta0 = truth.clone();
        theta0.trans = init_transition(&net, CpdKind::NoisyOr, 3);
        let opts = EmOptions {
            n_particles: 1000,
            max_iters: 8,
            exact_monitor: true,
            ..Default::default()
        };
        let (_, report) = run_em(&prepared, &net, &theta0, &opts, 21).unwrap();
        let init_ll = report.initial_exact_log_lik.unwrap();
        let final_ll = report.iterations.last().unwrap().exact_log_lik.unwrap();
        assert!(
            final_ll > init_ll + 1.0,
            "likelihood should climb well clear of the random start: {init_ll} -> {final_ll}"
        );
        // The bulk of the climb should arrive early and the tail stay stable.
        let mid_ll = report.iterations[3].exact_log_lik.unwrap();
        assert!(final_ll - mid_ll < (mid_ll - init_ll).abs() + 1.0);
    }

    #[test]
    fn tolerance_zero_forces_all_iterations_and_positive_tol_stops_early() {
        let (net, truth, prepared) = small_learning_setup();
        let mut theta0 = truth.clone();
        theta0.trans = init_transition(&net, CpdKind::NoisyOr, 9);
        let all = EmOptions { n_particles: 100, max_iters: 4, tol: 0.0, ..Default::default() };
        let (_, report) = run_em(&prepared, &net, &theta0, &all, 5).unwrap();
        assert_eq!(report.iterations.len(), 4);
        assert!(!report.converged);
        let loose = EmOptions { n_particles: 100, max_iters: 4, tol: 10.0, ..Default::default() };
        let (_, report) = run_em(&prepared, &net, &theta0, &loose, 5).unwrap();
        assert_eq!(report.iterations.len(), 1, "any step beats a tolerance of 10");
        assert!(report.converged);
    }

    #[test]
    fn report_serialization_lists_every_iteration() {
        let (net, truth, prepared) = small_learning_setup();
        let mut theta0 = truth.clone();
        theta0.trans = init_transition(&net, CpdKind::SatPat, 2);
        let opts = EmOptions { n_particles: 100, max_iters: 2, ..Default::default() };
        let (_, report) = run_em(&prepared, &net, &theta0, &opts, 8).unwrap();
        let text = report.serialize();
        assert!(text.starts_with("init_log_lik na\n"));
        assert!(text.contains("iter 1 "));
        assert!(text.contains("iter 2 "));
        assert!(text.trim_end().ends_with("converged false"));
    }
}
