//! Convergence harness: random quadratic bilevel instances run with the
//! theorem's step sizes, a decay-ratio test on `‖∇Φ‖²` and step-by-step
//! checks of the contraction and hypergradient-bias bounds.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::manifest::{RunDir, RunManifest};
use crate::error::{Error, Result};
use crate::models::{QuadraticBilevel, QuadraticFamily};
use crate::numerics::{streams, RngStream};
use crate::optim::theory::{decay_ratio, deterministic_bilevel_run, TheoremConstants, TraceRow};

pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TRACE_HEADER: &str =
    "instance,step,phi,grad_phi_sq,lower_error,contraction_lhs,contraction_rhs,bias_lhs,bias_rhs";

/// Parameters of one harness invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryStudy {
    pub instances: usize,
    pub upper_dim: usize,
    pub lower_dim: usize,
    pub steps: usize,
    /// Prefix length of the decay-ratio test.
    pub head: usize,
    /// Largest accepted decay ratio.
    pub max_decay_ratio: f64,
    /// Strong-convexity modulus `μ` of the lower level.
    pub mu: Option<f64>,
    /// Smoothness `L`; with it instances come from the bounded family,
    /// otherwise from the well-conditioned one.
    pub smoothness: Option<f64>,
    /// Zero coupling between the levels.
    pub decoupled: bool,
    pub seed: u64,
}

impl Default for TheoryStudy {
    fn default() -> Self {
        Self {
            instances: 5,
            upper_dim: 8,
            lower_dim: 8,
            steps: 1600,
            head: 100,
            max_decay_ratio: 0.15,
            mu: None,
            smoothness: None,
            decoupled: false,
            seed: 0,
        }
    }
}

/// Outcome for one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub instance: usize,
    pub mu: f64,
    pub smoothness: f64,
    pub alpha: f64,
    pub eta: f64,
    /// `None` when the run is not longer than the test prefix.
    pub decay_ratio: Option<f64>,
    pub contraction_violations: usize,
    pub bias_violations: usize,
    /// `‖∇Φ‖²` never increases along the trace.
    pub monotone: bool,
    pub final_grad_phi_sq: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheorySummary {
    pub instances: Vec<InstanceSummary>,
    /// Every applicable decay ratio is at most `max_decay_ratio`.
    pub decay_pass: bool,
    /// No lemma violation anywhere.
    pub lemma_pass: bool,
}

impl TheorySummary {
    pub fn pass(&self) -> bool {
        self.decay_pass && self.lemma_pass
    }
}

impl TheoryStudy {
    /// Reads a TOML document of study fields; absent fields keep defaults.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.instances == 0 || self.upper_dim == 0 || self.lower_dim == 0 || self.steps == 0 || self.head == 0 {
            return Err(Error::invalid("instances, dimensions, steps and head must be >= 1"));
        }
        if let Some(mu) = self.mu {
            if !(mu > 0.0) || !mu.is_finite() {
                return Err(Error::invalid(format!("mu must be positive, got {mu}")));
            }
        }
        if let (Some(mu), Some(l)) = (self.mu, self.smoothness) {
            if l < mu {
                return Err(Error::invalid(format!("ill-conditioned request: L = {l} < mu = {mu}")));
            }
        }
        Ok(())
    }

    pub fn family(&self) -> Result<QuadraticFamily> {
        self.validate()?;
        let mu = self.mu.unwrap_or(1.0);
        let family = match self.smoothness {
            Some(l) => QuadraticFamily::bounded(mu, l)?,
            None => QuadraticFamily::well_conditioned(mu),
        };
        Ok(if self.decoupled { family.decoupled() } else { family })
    }

    /// Instance `i` with its starting point, from its own random stream.
    pub fn instance(&self, i: usize) -> Result<(QuadraticBilevel, Vec<f64>, Vec<f64>)> {
        let mut rng = RngStream::new(self.seed, streams::THEORY + i as u64);
        let q = QuadraticBilevel::random(self.upper_dim, self.lower_dim, self.family()?, &mut rng)?;
        let x0 = (0..self.upper_dim).map(|_| rng.standard_normal()).collect();
        let y0 = (0..self.lower_dim).map(|_| rng.standard_normal()).collect();
        Ok((q, x0, y0))
    }
}

/// Magnitude the lemma roundoff slack is taken relative to.
fn lemma_scale(row: &TraceRow) -> f64 {
    row.lower_error + row.grad_phi_sq.sqrt()
}

fn summarize(i: usize, study: &TheoryStudy, c: &TheoremConstants, trace: &[TraceRow]) -> Result<InstanceSummary> {
    Ok(InstanceSummary {
        instance: i,
        mu: c.mu,
        smoothness: c.smoothness,
        alpha: c.alpha,
        eta: c.eta,
        decay_ratio: if trace.len() > study.head {
            Some(decay_ratio(trace, study.head)?)
        } else {
            None
        },
        contraction_violations: trace.iter().filter(|r| !r.contraction_holds(lemma_scale(r))).count(),
        bias_violations: trace.iter().filter(|r| !r.bias_holds(lemma_scale(r))).count(),
        monotone: trace.windows(2).all(|w| w[1].grad_phi_sq <= w[0].grad_phi_sq),
        final_grad_phi_sq: trace.last().map_or(0.0, |r| r.grad_phi_sq),
    })
}

/// Runs every instance and returns the traces with their summary.
pub fn run_theory(study: &TheoryStudy) -> Result<(Vec<Vec<TraceRow>>, TheorySummary)> {
    study.validate()?;
    let mut traces = Vec::with_capacity(study.instances);
    let mut instances = Vec::with_capacity(study.instances);
    for i in 0..study.instances {
        let (q, x0, y0) = study.instance(i)?;
        let constants = TheoremConstants::for_problem(&q)?;
        let trace = deterministic_bilevel_run(&q, &x0, &y0, study.steps)?;
        instances.push(summarize(i, study, &constants, &trace)?);
        traces.push(trace);
    }
    let decay_pass = instances
        .iter()
        .all(|s| s.decay_ratio.is_none_or(|r| r <= study.max_decay_ratio));
    let lemma_pass = instances
        .iter()
        .all(|s| s.contraction_violations == 0 && s.bias_violations == 0);
    Ok((
        traces,
        TheorySummary {
            instances,
            decay_pass,
            lemma_pass,
        },
    ))
}

/// Trace CSV: one row per instance and step.
pub fn trace_csv(traces: &[Vec<TraceRow>]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for (i, trace) in traces.iter().enumerate() {
        for r in trace {
            let _ = writeln!(
                out,
                "{i},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.step,
                r.phi,
                r.grad_phi_sq,
                r.lower_error,
                r.contraction_lhs,
                r.contraction_rhs,
                r.bias_lhs,
                r.bias_rhs
            );
        }
    }
    out
}

/// Runs the study and writes `trace.csv` and `summary.json` into a run
/// directory.
pub fn execute_theory(study: &TheoryStudy, out_dir: impl AsRef<Path>) -> Result<TheorySummary> {
    study.validate()?;
    let config = serde_json::to_string(study).map_err(|e| Error::invalid(e.to_string()))?;
    let manifest = RunManifest::new("theory", config, study.seed, &[TRACE_FILE, SUMMARY_FILE]);
    let dir = RunDir::begin(out_dir, manifest)?;
    let (traces, summary) = run_theory(study)?;
    let trace_path = dir.file(TRACE_FILE);
    std::fs::write(&trace_path, trace_csv(&traces)).map_err(|e| Error::io(&trace_path, e))?;
    let summary_path = dir.file(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::invalid(e.to_string()))?;
    std::fs::write(&summary_path, text + "\n").map_err(|e| Error::io(&summary_path, e))?;
    dir.finish()?;
    Ok(summary)
}
