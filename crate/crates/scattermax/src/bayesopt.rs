//! Sequential Bayesian optimization with the expected-improvement
//! acquisition.
//!
//! A GP is refit on all observations each iteration; the next sample is the
//! EI argmax found by evaluating a Sobol candidate set and locally refining
//! the best candidates. Maximization is run as minimization of the negated
//! objective, so both modes share one proposal path.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{BoxDomain, ParameterVector};
use crate::error::{Error, Result};
use crate::gp::{FitOptions, GPModel};
use crate::optim::{nelder_mead, Bound};
use crate::sobol::sobol_in_domain;

const SQRT_2PI: f64 = 2.5066282746310002;

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / SQRT_2PI
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Closed-form expected improvement below `f_best` for a normal predictive
/// distribution: `E[max(0, f_best - N(mean, variance))]`. Non-negative.
pub fn expected_improvement(mean: f64, variance: f64, f_best: f64) -> f64 {
    let improvement = f_best - mean;
    if variance <= 0.0 {
        return improvement.max(0.0);
    }
    let sd = variance.sqrt();
    let z = improvement / sd;
    (improvement * normal_cdf(z) + sd * normal_pdf(z)).max(0.0)
}

/// Optimization direction. Maximize negates the objective internally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizeMode {
    Minimize,
    Maximize,
}

/// One objective evaluation in a run's history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BORecord {
    pub iteration: usize,
    pub point: ParameterVector,
    /// `None` when the objective failed at this proposal.
    pub value: Option<f64>,
    /// Best value seen so far, in the caller's orientation.
    pub incumbent: f64,
}

/// Result of a run: the best observation and the full evaluation history.
#[derive(Debug, Clone)]
pub struct BORun {
    pub best_point: ParameterVector,
    pub best_value: f64,
    pub history: Vec<BORecord>,
}

impl BORun {
    /// Write the history as JSON lines, one record per evaluation.
    pub fn write_history_jsonl<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        for record in &self.history {
            serde_json::to_writer(&mut w, record)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// State of the sequential loop (minimization orientation).
#[derive(Debug)]
pub struct BOState {
    observations: Vec<(ParameterVector, f64)>,
    domain: BoxDomain,
    inner_gp: Option<GPModel>,
    iteration: usize,
    failed: Vec<ParameterVector>,
}

/// Tuning knobs for the proposal machinery.
#[derive(Debug, Clone)]
pub struct BoConfig {
    /// Sobol candidates scored per proposal.
    pub acq_starts: usize,
    /// How many of the best candidates get local refinement.
    pub acq_refine: usize,
    /// Objective-evaluation budget of each refinement.
    pub acq_evals: usize,
    /// Multi-start count of the first inner-GP fit; later refits warm-start
    /// from the previous hyperparameters.
    pub gp_restarts: usize,
    /// Cap on the inner-GP hyperparameter-fit subsample.
    pub gp_subsample: Option<usize>,
}

impl Default for BoConfig {
    fn default() -> Self {
        BoConfig {
            acq_starts: 64,
            acq_refine: 8,
            acq_evals: 60,
            gp_restarts: 4,
            gp_subsample: Some(256),
        }
    }
}

impl BOState {
    pub fn new(domain: BoxDomain, observations: Vec<(ParameterVector, f64)>) -> Result<Self> {
        for (p, v) in &observations {
            domain.check_dim(p.len())?;
            if !domain.contains(p) {
                return Err(Error::InvalidDomain(format!(
                    "observation {p:?} lies outside the optimization domain"
                )));
            }
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: "BO seed observation".into(),
                });
            }
        }
        Ok(BOState {
            observations,
            domain,
            inner_gp: None,
            iteration: 0,
            failed: Vec::new(),
        })
    }

    /// Remember a proposal whose objective evaluation failed so it is not
    /// proposed again verbatim.
    pub fn record_failure(&mut self, point: ParameterVector) {
        self.failed.push(point);
        self.iteration += 1;
    }

    pub fn observations(&self) -> &[(ParameterVector, f64)] {
        &self.observations
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Smallest observed value (minimization orientation).
    pub fn f_min(&self) -> Option<f64> {
        self.observations
            .iter()
            .map(|(_, v)| *v)
            .min_by(|a, b| a.partial_cmp(b).unwrap())
    }

    pub fn push(&mut self, point: ParameterVector, value: f64) {
        self.observations.push((point, value));
        self.iteration += 1;
    }

    fn refit(&mut self, cfg: &BoConfig, seed: u64) -> Result<()> {
        let points: Vec<ParameterVector> =
            self.observations.iter().map(|(p, _)| p.clone()).collect();
        let values: Vec<f64> = self.observations.iter().map(|(_, v)| *v).collect();
        let opts = FitOptions {
            restarts: if self.inner_gp.is_some() { 2 } else { cfg.gp_restarts },
            seed,
            max_evals: 300,
            hyper_subsample: cfg.gp_subsample,
        };
        match (&self.inner_gp, GPModel::fit_with(&points, &values, &opts)) {
            (_, Ok(model)) => {
                self.inner_gp = Some(model);
                Ok(())
            }
            // Warm path: keep previous hyperparameters if the refit fails.
            (Some(prev), Err(_)) => {
                let hyper = prev.hyper().clone();
                self.inner_gp = Some(GPModel::condition(points, values, hyper)?);
                Ok(())
            }
            (None, Err(e)) => Err(e),
        }
    }

    /// Sobol exploration point used when the GP cannot propose (fit failure
    /// or EI identically zero), skipping ahead past anything already used.
    fn sobol_fallback(&self) -> Result<ParameterVector> {
        let skip = self.observations.len() + self.iteration;
        Ok(sobol_in_domain(&self.domain, 1, skip)?.pop().unwrap())
    }
}

/// Proposal outcome: the point and whether it came from the acquisition or
/// the exploration fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub point: ParameterVector,
    pub fallback: bool,
}

/// Propose the next sample: refit the inner GP, then return the EI argmax
/// over the domain from `cfg.acq_starts` Sobol candidates with local
/// refinement of the best few. Returns ranked alternatives (best first).
pub fn propose_ranked<R: Rng>(
    state: &mut BOState,
    cfg: &BoConfig,
    rng: &mut R,
) -> Result<Vec<Proposal>> {
    if state.observations.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 observations to propose, have {}",
            state.observations.len()
        )));
    }
    let fit_seed: u64 = rng.random();
    if state.refit(cfg, fit_seed).is_err() {
        return Ok(vec![Proposal {
            point: state.sobol_fallback()?,
            fallback: true,
        }]);
    }
    let gp = state.inner_gp.as_ref().unwrap();
    let f_best = state.f_min().unwrap();

    let candidates = sobol_in_domain(&state.domain, cfg.acq_starts, state.iteration % 64)?;
    let preds = gp.predict_batch(&candidates)?;
    let mut scored: Vec<(f64, ParameterVector)> = candidates
        .into_iter()
        .zip(preds)
        .map(|(p, pred)| (expected_improvement(pred.mean, pred.variance, f_best), p))
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));

    let bounds: Vec<Bound> = (0..state.domain.dim())
        .map(|i| Bound::new(state.domain.lower()[i], state.domain.upper()[i]))
        .collect();
    let neg_ei = |p: &[f64]| -> f64 {
        match gp.predict(p) {
            Ok(pred) => -expected_improvement(pred.mean, pred.variance, f_best),
            Err(_) => f64::INFINITY,
        }
    };
    let mut refined: Vec<(f64, ParameterVector)> = Vec::new();
    for (ei, start) in scored.iter().take(cfg.acq_refine.max(1)) {
        let r = nelder_mead(neg_ei, start, &bounds, cfg.acq_evals, 1e-9);
        let best_ei = (-r.value).max(*ei);
        let point = if -r.value >= *ei { r.point } else { start.clone() };
        refined.push((best_ei, point));
    }
    refined.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));

    // Degenerate acquisition (EI ~ 0 everywhere, e.g. constant data) or a
    // proposal collapsing onto an already-seen point: explore instead. The
    // floor catches the jitter-scale EI a constant-data GP produces.
    let ei_floor = 1e-9 * (1.0 + f_best.abs());
    let seen = |p: &ParameterVector| {
        state
            .observations
            .iter()
            .map(|(q, _)| q)
            .chain(state.failed.iter())
            .any(|q| state.domain.normalized_distance(p, q) < 1e-9)
    };
    let mut out: Vec<Proposal> = Vec::new();
    for (ei, p) in refined {
        let dup_in_out = out
            .iter()
            .any(|o| state.domain.normalized_distance(&o.point, &p) < 1e-9);
        if ei > ei_floor && !seen(&p) && !dup_in_out {
            out.push(Proposal { point: p, fallback: false });
        }
    }
    if out.is_empty() {
        out.push(Proposal {
            point: state.sobol_fallback()?,
            fallback: true,
        });
    }
    Ok(out)
}

/// The best single proposal.
pub fn propose_next<R: Rng>(
    state: &mut BOState,
    cfg: &BoConfig,
    rng: &mut R,
) -> Result<ParameterVector> {
    Ok(propose_ranked(state, cfg, rng)?.remove(0).point)
}

/// Run the iterate–evaluate–refit loop for `budget` objective evaluations
/// starting from `seed_observations`, and return the best observation.
pub fn bo_run<R, F>(
    objective: F,
    domain: &BoxDomain,
    budget: usize,
    seed_observations: Vec<(ParameterVector, f64)>,
    mode: OptimizeMode,
    rng: &mut R,
) -> Result<BORun>
where
    R: Rng,
    F: Fn(&[f64]) -> Result<f64>,
{
    bo_run_with(objective, domain, budget, seed_observations, mode, &BoConfig::default(), rng)
}

pub fn bo_run_with<R, F>(
    objective: F,
    domain: &BoxDomain,
    budget: usize,
    seed_observations: Vec<(ParameterVector, f64)>,
    mode: OptimizeMode,
    cfg: &BoConfig,
    rng: &mut R,
) -> Result<BORun>
where
    R: Rng,
    F: Fn(&[f64]) -> Result<f64>,
{
    let sign = match mode {
        OptimizeMode::Minimize => 1.0,
        OptimizeMode::Maximize => -1.0,
    };
    let seeds: Vec<(ParameterVector, f64)> = seed_observations
        .into_iter()
        .map(|(p, v)| (p, sign * v))
        .collect();
    if budget == 0 && seeds.is_empty() {
        return Err(Error::Config("BO needs a budget or seed observations".into()));
    }
    let mut state = BOState::new(domain.clone(), seeds)?;

    // Too few observations to model: bootstrap from Sobol exploration.
    let mut history: Vec<BORecord> = Vec::new();
    let mut spent = 0usize;
    let mut bootstrap = 0usize;
    while state.observations.len() < 2 && spent < budget {
        let p = sobol_in_domain(domain, 1, bootstrap)?.pop().unwrap();
        bootstrap += 1;
        spent += 1;
        match objective(&p) {
            Ok(v) if v.is_finite() => {
                state.push(p.clone(), sign * v);
                let incumbent = sign * state.f_min().unwrap();
                history.push(BORecord { iteration: spent, point: p, value: Some(v), incumbent });
            }
            _ => {
                let incumbent = state.f_min().map(|m| sign * m).unwrap_or(f64::NAN);
                history.push(BORecord { iteration: spent, point: p, value: None, incumbent });
            }
        }
    }

    while spent < budget {
        let proposals = propose_ranked(&mut state, cfg, rng)?;
        let mut evaluated = false;
        for proposal in proposals.iter().take(2) {
            spent += 1;
            match objective(&proposal.point) {
                Ok(v) if v.is_finite() => {
                    state.push(proposal.point.clone(), sign * v);
                    let incumbent = sign * state.f_min().unwrap();
                    history.push(BORecord {
                        iteration: spent,
                        point: proposal.point.clone(),
                        value: Some(v),
                        incumbent,
                    });
                    evaluated = true;
                    break;
                }
                _ => {
                    state.record_failure(proposal.point.clone());
                    let incumbent = state.f_min().map(|m| sign * m).unwrap_or(f64::NAN);
                    history.push(BORecord {
                        iteration: spent,
                        point: proposal.point.clone(),
                        value: None,
                        incumbent,
                    });
                    if spent >= budget {
                        break;
                    }
                }
            }
        }
        if !evaluated && spent >= budget {
            break;
        }
    }

    let (best_point, best_internal) = state
        .observations
        .iter()
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
        .cloned()
        .ok_or_else(|| Error::FitFailure("BO run produced no observations".into()))?;
    Ok(BORun {
        best_point,
        best_value: sign * best_internal,
        history,
    })
}
