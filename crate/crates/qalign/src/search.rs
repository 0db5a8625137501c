//! Constraint-filtered configuration search over quantization settings with
//! Pareto frontier extraction.
//!
//! The space is small enough to enumerate, so the default mode evaluates the
//! whole grid; a seeded budgeted mode subsamples it. Feasibility applies two
//! gates relative to the full-precision baseline: bounded quality
//! degradation and a minimum latency improvement.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::quant::{ActivationPolicy, WeightScheme};

/// One point of the quantization configuration grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantConfig {
    pub weight_scheme: WeightScheme,
    pub alpha: f32,
    pub policy: ActivationPolicy,
}

impl QuantConfig {
    /// Total order used to make aggregation independent of evaluation order.
    fn key(&self) -> (u8, u32, u8) {
        let scheme = match self.weight_scheme {
            WeightScheme::PerTensor => 0,
            WeightScheme::PerOutputChannel => 1,
        };
        let policy = match self.policy {
            ActivationPolicy::Static => 0,
            ActivationPolicy::Dynamic => 1,
        };
        // alpha is non-negative, so its bit pattern orders numerically
        (scheme, self.alpha.to_bits(), policy)
    }
}

impl std::fmt::Display for QuantConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}/alpha={}/{}",
            self.weight_scheme, self.alpha, self.policy
        )
    }
}

/// Candidate configurations to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub configs: Vec<QuantConfig>,
}

/// Default smoothing-factor grid.
pub const ALPHA_GRID: [f32; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

impl SearchSpace {
    /// Full cartesian grid: both weight schemes, the default alpha grid,
    /// both activation policies.
    pub fn grid() -> Self {
        let mut configs = Vec::new();
        for weight_scheme in [WeightScheme::PerTensor, WeightScheme::PerOutputChannel] {
            for alpha in ALPHA_GRID {
                for policy in [ActivationPolicy::Static, ActivationPolicy::Dynamic] {
                    configs.push(QuantConfig {
                        weight_scheme,
                        alpha,
                        policy,
                    });
                }
            }
        }
        Self { configs }
    }

    pub fn validate(&self) -> Result<()> {
        if self.configs.is_empty() {
            return Err(Error::Empty { op: "SearchSpace" });
        }
        for c in &self.configs {
            if !(0.0..=1.0).contains(&c.alpha) || !c.alpha.is_finite() {
                return Err(Error::domain(
                    "SearchSpace",
                    format!("alpha {} outside [0, 1]", c.alpha),
                ));
            }
        }
        Ok(())
    }
}

/// Evaluation-budget selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    /// Evaluate every config of the space.
    Exhaustive,
    /// Evaluate a seeded random subset of at most `max_trials` configs.
    Sampled { max_trials: usize, seed: u64 },
}

/// Measured outcome of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub config: QuantConfig,
    /// Alignment agreement against the full-precision pipeline, in `[0, 1]`.
    pub quality: f64,
    pub latency_ms: f64,
}

impl TrialResult {
    pub fn new(config: QuantConfig, quality: f64, latency_ms: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&quality) {
            return Err(Error::domain(
                "TrialResult",
                format!("quality {quality} outside [0, 1]"),
            ));
        }
        if !(latency_ms.is_finite() && latency_ms > 0.0) {
            return Err(Error::domain(
                "TrialResult",
                format!("latency {latency_ms} must be positive and finite"),
            ));
        }
        Ok(Self {
            config,
            quality,
            latency_ms,
        })
    }
}

/// The full-precision reference point both gates compare against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BaselinePoint {
    pub quality: f64,
    pub latency_ms: f64,
}

/// Feasibility gates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Constraints {
    /// Largest tolerated quality drop below the baseline (absolute).
    pub max_quality_degradation: f64,
    /// Smallest required relative latency improvement.
    pub min_latency_improvement: f64,
}

impl Default for Constraints {
    fn default() -> Self {
        Self {
            max_quality_degradation: 0.0001,
            min_latency_improvement: 0.20,
        }
    }
}

impl Constraints {
    pub fn validate(&self) -> Result<()> {
        if self.max_quality_degradation < 0.0 || self.min_latency_improvement < 0.0 {
            return Err(Error::domain(
                "Constraints",
                "both thresholds must be >= 0",
            ));
        }
        Ok(())
    }

    pub fn feasible(&self, baseline: &BaselinePoint, trial: &TrialResult) -> bool {
        trial.quality >= baseline.quality - self.max_quality_degradation
            && trial.latency_ms <= baseline.latency_ms * (1.0 - self.min_latency_improvement)
    }
}

/// All trials not dominated by another (dominated: some other trial has
/// quality >= and latency <=, with at least one strict), ordered by
/// ascending latency.
pub fn pareto_frontier(trials: &[TrialResult]) -> Result<Vec<TrialResult>> {
    if trials.is_empty() {
        return Err(Error::Empty {
            op: "pareto_frontier",
        });
    }
    let dominated = |a: &TrialResult| {
        trials.iter().any(|b| {
            b.quality >= a.quality
                && b.latency_ms <= a.latency_ms
                && (b.quality > a.quality || b.latency_ms < a.latency_ms)
        })
    };
    let mut frontier: Vec<TrialResult> = trials.iter().filter(|t| !dominated(t)).cloned().collect();
    frontier.sort_by(|a, b| {
        a.latency_ms
            .total_cmp(&b.latency_ms)
            .then(b.quality.total_cmp(&a.quality))
            .then(a.config.key().cmp(&b.config.key()))
    });
    Ok(frontier)
}

/// One evaluated trial plus its feasibility flag.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluatedTrial {
    #[serde(flatten)]
    pub trial: TrialResult,
    pub feasible: bool,
}

/// The trial closest to satisfying one gate, with its (clamped) shortfall.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NearMiss {
    pub constraint: String,
    pub trial: TrialResult,
    pub shortfall: f64,
}

/// Why no configuration was selected.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfeasibilityReport {
    pub quality_nearest: NearMiss,
    pub latency_nearest: NearMiss,
}

/// Everything a search run produces: every trial with its feasibility flag,
/// the Pareto frontier, and either a selection or an infeasibility report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchReport {
    pub baseline: BaselinePoint,
    pub constraints: Constraints,
    pub trials: Vec<EvaluatedTrial>,
    pub frontier: Vec<TrialResult>,
    pub selection: Option<TrialResult>,
    pub infeasibility: Option<InfeasibilityReport>,
}

impl SearchReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::write_atomic(path, self.to_json()?.as_bytes())
    }
}

/// Evaluates the space (fully, or a seeded subset under a budget), applies
/// both gates, and selects the feasible frontier point with the highest
/// quality, breaking ties toward lower latency.
///
/// Domination preserves feasibility, so whenever any trial is feasible the
/// feasible frontier is nonempty; otherwise the report carries the
/// nearest-miss trial per constraint.
pub fn run_search<F>(
    space: &SearchSpace,
    baseline: &BaselinePoint,
    mut evaluator: F,
    constraints: &Constraints,
    budget: Budget,
) -> Result<SearchReport>
where
    F: FnMut(&QuantConfig) -> Result<TrialResult>,
{
    space.validate()?;
    constraints.validate()?;

    let mut configs: Vec<QuantConfig> = space.configs.clone();
    if let Budget::Sampled { max_trials, seed } = budget {
        if max_trials == 0 {
            return Err(Error::domain("run_search", "budget must allow >= 1 trial"));
        }
        if max_trials < configs.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Fisher-Yates prefix; draws are independent of evaluation order
            for i in 0..max_trials {
                let j = i + (rng.next_u64() as usize) % (configs.len() - i);
                configs.swap(i, j);
            }
            configs.truncate(max_trials);
        }
    }

    let mut trials = Vec::with_capacity(configs.len());
    for cfg in &configs {
        let t = evaluator(cfg)?;
        trials.push(t);
    }
    // aggregation is order-independent: sort by config key before selection
    trials.sort_by_key(|t| t.config.key());

    let evaluated: Vec<EvaluatedTrial> = trials
        .iter()
        .map(|t| EvaluatedTrial {
            trial: t.clone(),
            feasible: constraints.feasible(baseline, t),
        })
        .collect();
    let frontier = pareto_frontier(&trials)?;

    let selection = frontier
        .iter()
        .filter(|t| constraints.feasible(baseline, t))
        .max_by(|a, b| {
            a.quality
                .total_cmp(&b.quality)
                .then(b.latency_ms.total_cmp(&a.latency_ms))
                .then(b.config.key().cmp(&a.config.key()))
        })
        .cloned();

    let infeasibility = if selection.is_none() {
        let quality_target = baseline.quality - constraints.max_quality_degradation;
        let latency_target = baseline.latency_ms * (1.0 - constraints.min_latency_improvement);
        let best_quality = trials
            .iter()
            .max_by(|a, b| a.quality.total_cmp(&b.quality))
            .expect("trials nonempty");
        let best_latency = trials
            .iter()
            .min_by(|a, b| a.latency_ms.total_cmp(&b.latency_ms))
            .expect("trials nonempty");
        Some(InfeasibilityReport {
            quality_nearest: NearMiss {
                constraint: format!("quality >= {quality_target:.6}"),
                trial: best_quality.clone(),
                shortfall: (quality_target - best_quality.quality).max(0.0),
            },
            latency_nearest: NearMiss {
                constraint: format!("latency <= {latency_target:.4} ms"),
                trial: best_latency.clone(),
                shortfall: (best_latency.latency_ms - latency_target).max(0.0),
            },
        })
    } else {
        None
    };

    Ok(SearchReport {
        baseline: *baseline,
        constraints: *constraints,
        trials: evaluated,
        frontier,
        selection,
        infeasibility,
    })
}
