//! The two evaluation protocols: high-value removal curves and noisy-label
//! detection curves, with AUC summaries and repetition averaging.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{class_partition, inject_label_noise, split, DataSplit, Dataset, NoiseMask, SplitSpec};
use crate::error::{Error, Result};
use crate::estimators::{cmc_estimate, ctmc_estimate, tmc_estimate, EstimatorConfig, EstimatorDiagnostics};
use crate::ml::{LogRegHyper, MlUtilityOracle, PositionWeighting};
use crate::model::{OrderedCoalition, UtilityOracle, ValueVector};

/// Curves run over removal fractions `0, step, 2*step, ...` up to this cap,
/// which is also the default AUC integration limit.
pub const REMOVAL_LIMIT: f64 = 0.5;

/// Removal order for a curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Direction {
    /// Highest value first (ties by ascending index).
    MostFirst,
    /// Lowest value first.
    LeastFirst,
    /// Seeded uniform order, the reference baseline.
    Random { seed: u64 },
}

impl Direction {
    pub fn label(&self) -> &'static str {
        match self {
            Direction::MostFirst => "most-first",
            Direction::LeastFirst => "least-first",
            Direction::Random { .. } => "random",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub accuracy: f64,
    /// Share of injected-noise points among the removed ones; present on
    /// detection curves only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flipped_recall: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Curve {
    pub direction: Direction,
    pub points: Vec<CurvePoint>,
}

/// Player indices in removal order for the given direction. Value ties
/// break by ascending index; undefined (NaN) values sort last under
/// `total_cmp`, deterministically.
fn removal_order(values: &ValueVector, direction: Direction) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.n_players()).collect();
    match direction {
        Direction::MostFirst => {
            order.sort_by(|&a, &b| values.values[b].total_cmp(&values.values[a]).then(a.cmp(&b)));
        }
        Direction::LeastFirst => {
            order.sort_by(|&a, &b| values.values[a].total_cmp(&values.values[b]).then(a.cmp(&b)));
        }
        Direction::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for t in (1..order.len()).rev() {
                let j = rng.random_range(0..=t);
                order.swap(t, j);
            }
        }
    }
    order
}

fn curve_fractions(step: f64) -> Vec<f64> {
    let mut fractions = Vec::new();
    let mut t = 0usize;
    loop {
        let f = t as f64 * step;
        if f > REMOVAL_LIMIT + 1e-9 {
            break;
        }
        fractions.push(f.min(REMOVAL_LIMIT));
        t += 1;
    }
    fractions
}

fn removal_accuracy_points(
    values: &ValueVector,
    utility: &dyn UtilityOracle,
    direction: Direction,
    step: f64,
    mask: Option<&NoiseMask>,
) -> Result<Vec<CurvePoint>> {
    let m = utility.n_players();
    if values.n_players() != m {
        return Err(Error::InvalidConfig(format!(
            "value vector covers {} players, utility covers {m}",
            values.n_players()
        )));
    }
    if !(step > 0.0 && step <= REMOVAL_LIMIT + 1e-12) {
        return Err(Error::InvalidConfig(format!(
            "step fraction must lie in (0, {REMOVAL_LIMIT}], got {step}"
        )));
    }
    let order = removal_order(values, direction);
    let fractions = curve_fractions(step);
    let flipped_total = mask.map(|m| m.flipped_count());
    let mut points = Vec::with_capacity(fractions.len());
    for (idx, &fraction) in fractions.iter().enumerate() {
        let removed = (fraction * m as f64).round() as usize;
        let removed_set = &order[..removed.min(m)];
        let mut remaining: Vec<usize> = (0..m).filter(|p| !removed_set.contains(p)).collect();
        remaining.sort_unstable();
        if remaining.is_empty() && idx + 1 < fractions.len() {
            return Err(Error::InvalidConfig(format!(
                "removal at fraction {fraction} empties the valued set before the final step"
            )));
        }
        // Retrain on the remainder in canonical index order, mirroring how
        // full coalitions were valued.
        let accuracy = utility.evaluate(&OrderedCoalition::canonical(remaining))?;
        let flipped_recall = match (mask, flipped_total) {
            (Some(mask), Some(total)) => {
                let caught = removed_set.iter().filter(|&&p| mask.flipped[p]).count();
                Some(if total == 0 {
                    0.0
                } else {
                    caught as f64 / total as f64
                })
            }
            _ => None,
        };
        points.push(CurvePoint {
            fraction,
            accuracy,
            flipped_recall,
        });
    }
    Ok(points)
}

/// Removes points in value order, retrains on the remainder at each step,
/// and records the evaluation-slice accuracy at each removal fraction.
pub fn removal_curve(
    values: &ValueVector,
    utility: &dyn UtilityOracle,
    direction: Direction,
    step: f64,
) -> Result<Curve> {
    Ok(Curve {
        direction,
        points: removal_accuracy_points(values, utility, direction, step, None)?,
    })
}

/// Like [`removal_curve`], additionally reporting at each fraction the
/// recall of noise-flipped points among the removed ones.
pub fn detection_curve(
    values: &ValueVector,
    utility: &dyn UtilityOracle,
    mask: &NoiseMask,
    direction: Direction,
    step: f64,
) -> Result<Curve> {
    if mask.flipped.len() != values.n_players() {
        return Err(Error::InvalidConfig(
            "noise mask does not align with the valued set".into(),
        ));
    }
    Ok(Curve {
        direction,
        points: removal_accuracy_points(values, utility, direction, step, Some(mask))?,
    })
}

/// Both readings of a curve's area: the trapezoidal integral of accuracy
/// over the fraction axis, and the plain sum of accuracies over the steps.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AucPair {
    pub trapezoid: f64,
    pub step_sum: f64,
}

/// Area under the curve up to `limit`. The curve must reach the limit.
pub fn curve_auc(curve: &Curve, limit: f64) -> Result<AucPair> {
    if !(limit > 0.0) {
        return Err(Error::InvalidConfig("auc limit must be positive".into()));
    }
    let points: Vec<&CurvePoint> = curve
        .points
        .iter()
        .filter(|p| p.fraction <= limit + 1e-9)
        .collect();
    let last = points
        .last()
        .ok_or_else(|| Error::InvalidConfig("curve has no points".into()))?;
    if last.fraction < limit - 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "curve reaches fraction {} but the auc limit is {limit}",
            last.fraction
        )));
    }
    let mut trapezoid = 0.0;
    for pair in points.windows(2) {
        let df = pair[1].fraction - pair[0].fraction;
        trapezoid += df * (pair[0].accuracy + pair[1].accuracy) / 2.0;
    }
    let step_sum = points.iter().map(|p| p.accuracy).sum();
    Ok(AucPair {
        trapezoid,
        step_sum,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Tmc,
    Cmc,
    Ctmc,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorKind::Tmc => "tmc",
            EstimatorKind::Cmc => "cmc",
            EstimatorKind::Ctmc => "ctmc",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentMode {
    Raw,
    Noisy,
}

impl fmt::Display for ExperimentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentMode::Raw => "raw",
            ExperimentMode::Noisy => "noisy",
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub dataset_name: String,
    pub estimator: EstimatorKind,
    pub mode: ExperimentMode,
    pub repetitions: usize,
    pub noise_fraction: f64,
    pub step_fraction: f64,
    /// Split sizes; its `seed` field is the base seed, advanced per
    /// repetition.
    pub split: SplitSpec,
    pub estimator_config: EstimatorConfig,
    pub hyper: LogRegHyper,
    pub weighting: PositionWeighting,
}

impl ExperimentConfig {
    pub fn new(
        dataset_name: impl Into<String>,
        estimator: EstimatorKind,
        mode: ExperimentMode,
        split: SplitSpec,
        n_classes: usize,
    ) -> Self {
        Self {
            dataset_name: dataset_name.into(),
            estimator,
            mode,
            repetitions: 5,
            noise_fraction: 0.2,
            step_fraction: 0.05,
            split,
            estimator_config: EstimatorConfig::default(),
            hyper: LogRegHyper::new(n_classes),
            weighting: PositionWeighting::Gaussian,
        }
    }
}

/// One repetition's artifacts. Wall time is telemetry, not part of the
/// deterministic report serialization; it lands in the timing sidecar.
#[derive(Debug, Clone, Serialize)]
pub struct RepetitionOutcome {
    pub repetition: usize,
    pub seed: u64,
    pub values: ValueVector,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flipped: Option<Vec<bool>>,
    pub curves: Vec<Curve>,
    pub aucs: Vec<DirectionAuc>,
    pub diagnostics: EstimatorDiagnostics,
    #[serde(skip)]
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DirectionAuc {
    pub direction: String,
    pub auc: AucPair,
}

#[derive(Debug, Clone, Serialize)]
pub struct RepetitionFailure {
    pub repetition: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregatedPoint {
    pub fraction: f64,
    pub mean_accuracy: f64,
    pub stddev_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_flipped_recall: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregatedCurve {
    pub direction: String,
    pub points: Vec<AggregatedPoint>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AucSummary {
    pub direction: String,
    pub trapezoid_mean: f64,
    pub trapezoid_stddev: f64,
    pub step_sum_mean: f64,
    pub step_sum_stddev: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub repetitions: Vec<RepetitionOutcome>,
    pub failures: Vec<RepetitionFailure>,
    pub aggregated_curves: Vec<AggregatedCurve>,
    pub auc_summary: Vec<AucSummary>,
    pub total_utility_evaluations: u64,
}

impl ExperimentReport {
    pub fn base_name(&self) -> String {
        format!(
            "{}_{}_{}_{}",
            self.config.dataset_name, self.config.estimator, self.config.mode, self.config.split.seed
        )
    }
}

fn sub_seed(base: u64, tag: u64) -> u64 {
    base.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(tag)
}

fn run_repetition(
    dataset: &Dataset,
    cfg: &ExperimentConfig,
    repetition: usize,
) -> Result<RepetitionOutcome> {
    let seed = cfg.split.seed.wrapping_add(repetition as u64);
    let started = Instant::now();

    let mut rep_split = cfg.split.clone();
    rep_split.seed = seed;
    let DataSplit {
        valued,
        assessment,
        heldout,
    } = split(dataset, &rep_split)?;

    let (valued, mask) = match cfg.mode {
        ExperimentMode::Raw => (valued, None),
        ExperimentMode::Noisy => {
            let (noisy, mask) = inject_label_noise(&valued, cfg.noise_fraction, sub_seed(seed, 1))?;
            (noisy, Some(mask))
        }
    };

    let mut hyper = cfg.hyper.clone();
    hyper.class_count = valued.n_classes.max(2);
    let valuation_oracle = MlUtilityOracle::new(
        valued.features.clone(),
        valued.labels.clone(),
        assessment.features.clone(),
        assessment.labels.clone(),
        hyper.clone(),
        cfg.weighting,
    )?;
    let curve_oracle = MlUtilityOracle::new(
        valued.features.clone(),
        valued.labels.clone(),
        heldout.features.clone(),
        heldout.labels.clone(),
        hyper,
        cfg.weighting,
    )?;

    let mut est_cfg = cfg.estimator_config.clone();
    est_cfg.seed = sub_seed(seed, 2);
    let m = valued.len();
    let (values, diagnostics) = match cfg.estimator {
        EstimatorKind::Tmc => tmc_estimate(&valuation_oracle, m, &est_cfg)?,
        EstimatorKind::Cmc => {
            let classes = class_partition(&valued)?;
            cmc_estimate(&valuation_oracle, m, &classes, &est_cfg)?
        }
        EstimatorKind::Ctmc => {
            let classes = class_partition(&valued)?;
            ctmc_estimate(&valuation_oracle, m, &classes, &est_cfg)?
        }
    };

    let directions: Vec<Direction> = match cfg.mode {
        ExperimentMode::Raw => vec![
            Direction::MostFirst,
            Direction::Random {
                seed: sub_seed(seed, 3),
            },
        ],
        ExperimentMode::Noisy => vec![
            Direction::LeastFirst,
            Direction::MostFirst,
            Direction::Random {
                seed: sub_seed(seed, 3),
            },
        ],
    };
    let mut curves = Vec::with_capacity(directions.len());
    let mut aucs = Vec::with_capacity(directions.len());
    for direction in directions {
        let curve = match &mask {
            Some(mask) => {
                detection_curve(&values, &curve_oracle, mask, direction, cfg.step_fraction)?
            }
            None => removal_curve(&values, &curve_oracle, direction, cfg.step_fraction)?,
        };
        aucs.push(DirectionAuc {
            direction: direction.label().to_string(),
            auc: curve_auc(&curve, REMOVAL_LIMIT)?,
        });
        curves.push(curve);
    }

    Ok(RepetitionOutcome {
        repetition,
        seed,
        values,
        flipped: mask.map(|m| m.flipped),
        curves,
        aucs,
        diagnostics,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

fn mean_and_stddev(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
    (mean, var.sqrt())
}

fn aggregate(repetitions: &[RepetitionOutcome]) -> (Vec<AggregatedCurve>, Vec<AucSummary>) {
    let mut directions: Vec<String> = Vec::new();
    for rep in repetitions {
        for curve in &rep.curves {
            let label = curve.direction.label().to_string();
            if !directions.contains(&label) {
                directions.push(label);
            }
        }
    }
    let mut curves_out = Vec::new();
    let mut aucs_out = Vec::new();
    for label in &directions {
        let matching: Vec<&Curve> = repetitions
            .iter()
            .flat_map(|r| r.curves.iter())
            .filter(|c| c.direction.label() == label)
            .collect();
        let Some(first) = matching.first() else {
            continue;
        };
        let mut points = Vec::with_capacity(first.points.len());
        for (idx, base_point) in first.points.iter().enumerate() {
            let accuracies: Vec<f64> = matching
                .iter()
                .filter_map(|c| c.points.get(idx))
                .map(|p| p.accuracy)
                .collect();
            let (mean_accuracy, stddev_accuracy) = mean_and_stddev(&accuracies);
            let recalls: Vec<f64> = matching
                .iter()
                .filter_map(|c| c.points.get(idx))
                .filter_map(|p| p.flipped_recall)
                .collect();
            let mean_flipped_recall = if recalls.is_empty() {
                None
            } else {
                Some(recalls.iter().sum::<f64>() / recalls.len() as f64)
            };
            points.push(AggregatedPoint {
                fraction: base_point.fraction,
                mean_accuracy,
                stddev_accuracy,
                mean_flipped_recall,
            });
        }
        curves_out.push(AggregatedCurve {
            direction: label.clone(),
            points,
        });

        let trapezoids: Vec<f64> = repetitions
            .iter()
            .flat_map(|r| r.aucs.iter())
            .filter(|a| a.direction == *label)
            .map(|a| a.auc.trapezoid)
            .collect();
        let step_sums: Vec<f64> = repetitions
            .iter()
            .flat_map(|r| r.aucs.iter())
            .filter(|a| a.direction == *label)
            .map(|a| a.auc.step_sum)
            .collect();
        let (trapezoid_mean, trapezoid_stddev) = mean_and_stddev(&trapezoids);
        let (step_sum_mean, step_sum_stddev) = mean_and_stddev(&step_sums);
        aucs_out.push(AucSummary {
            direction: label.clone(),
            trapezoid_mean,
            trapezoid_stddev,
            step_sum_mean,
            step_sum_stddev,
        });
    }
    (curves_out, aucs_out)
}

/// Runs the full protocol: per repetition, split, optionally inject noise,
/// value with the configured sampler, then draw removal or detection curves
/// and their AUCs. A repetition that fails is recorded and skipped; the
/// survivors aggregate into mean/stddev curves.
pub fn run_experiment(dataset: &Dataset, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    if cfg.repetitions == 0 {
        return Err(Error::InvalidConfig("need at least one repetition".into()));
    }
    let mut repetitions = Vec::new();
    let mut failures = Vec::new();
    for rep in 0..cfg.repetitions {
        match run_repetition(dataset, cfg, rep) {
            Ok(outcome) => repetitions.push(outcome),
            Err(err) => failures.push(RepetitionFailure {
                repetition: rep,
                seed: cfg.split.seed.wrapping_add(rep as u64),
                error: err.to_string(),
            }),
        }
    }
    let (aggregated_curves, auc_summary) = aggregate(&repetitions);
    let total_utility_evaluations = repetitions
        .iter()
        .map(|r| r.diagnostics.utility_evaluations)
        .sum();
    Ok(ExperimentReport {
        config: cfg.clone(),
        repetitions,
        failures,
        aggregated_curves,
        auc_summary,
        total_utility_evaluations,
    })
}

/// Writes the deterministic report JSON, one CSV per aggregated curve, and
/// a non-deterministic timing sidecar. Returns the paths written.
pub fn write_report(report: &ExperimentReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let base = report.base_name();
    let mut written = Vec::new();

    let json_path = out_dir.join(format!("{base}.json"));
    std::fs::write(&json_path, serde_json::to_string_pretty(report)?)?;
    written.push(json_path);

    for curve in &report.aggregated_curves {
        let path = out_dir.join(format!("{base}_{}.csv", curve.direction));
        let has_recall = curve.points.iter().any(|p| p.mean_flipped_recall.is_some());
        let mut out = String::new();
        out.push_str(if has_recall {
            "fraction,mean_accuracy,stddev,flipped_recall\n"
        } else {
            "fraction,mean_accuracy,stddev\n"
        });
        for p in &curve.points {
            if has_recall {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    p.fraction,
                    p.mean_accuracy,
                    p.stddev_accuracy,
                    p.mean_flipped_recall.unwrap_or(0.0)
                ));
            } else {
                out.push_str(&format!(
                    "{},{},{}\n",
                    p.fraction, p.mean_accuracy, p.stddev_accuracy
                ));
            }
        }
        std::fs::write(&path, out)?;
        written.push(path);
    }

    // Wall-clock telemetry lives apart from the deterministic outputs.
    let timing_path = out_dir.join(format!("{base}_timing.csv"));
    let mut out = String::from("repetition,wall_seconds,utility_evaluations,permutations\n");
    for rep in &report.repetitions {
        out.push_str(&format!(
            "{},{},{},{}\n",
            rep.repetition,
            rep.wall_seconds,
            rep.diagnostics.utility_evaluations,
            rep.diagnostics.permutations_used
        ));
    }
    std::fs::write(&timing_path, out)?;
    written.push(timing_path);

    Ok(written)
}
