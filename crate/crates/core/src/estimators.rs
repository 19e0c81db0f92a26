//! Monte Carlo estimation of the partial ordinal value.
//!
//! Three samplers share one round structure:
//!
//! * `tmc` — sample a join order of all players, walk its prefixes, and skip
//!   re-evaluating a prefix once its running value is within the truncated
//!   factor of the full-sequence value.
//! * `cmc` — each round subsamples a proportion `q` of every class, orders
//!   only the selected players, and evaluates every prefix.
//! * `ctmc` — class subsampling plus truncation against the selected set's
//!   full value.
//!
//! Every marginal observed for a player feeds that player's own running
//! mean; players never selected in a round are untouched, so each stored
//! value stays a plain average of that player's observed marginals.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::Partition;
use crate::model::{Method, OrderedCoalition, PlayerId, UtilityOracle, ValueVector};

/// Sampler configuration. `max_permutations` is the sample-size budget `T`;
/// the run may stop earlier when the convergence criterion fires.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Budget `T`: sampled join orders (rounds).
    pub max_permutations: u64,
    /// Absolute threshold below which a prefix inherits the previous value.
    pub truncated_factor: f64,
    /// Proportion of each class selected per round (class samplers only).
    pub class_proportion: f64,
    /// Relative-change threshold for early stopping.
    pub convergence_tolerance: f64,
    /// Rounds spanned by the relative-change statistic.
    pub convergence_window: usize,
    /// Rounds that must complete before early stopping is considered.
    pub min_permutations: u64,
    pub seed: u64,
    /// Worker threads. Multi-worker runs split the full budget into fixed
    /// per-worker quotas (no early stopping) and merge deterministically.
    pub worker_count: usize,
    /// Record per-player-per-position sample counts (the `m_j` inputs of
    /// the truncated-sampler tail bound).
    pub track_position_counts: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            max_permutations: 1000,
            truncated_factor: 0.0,
            class_proportion: 1.0,
            convergence_tolerance: 0.05,
            convergence_window: 100,
            min_permutations: 100,
            seed: 42,
            worker_count: 1,
            track_position_counts: false,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_permutations == 0 {
            return Err(Error::InvalidConfig("max_permutations must be positive".into()));
        }
        if self.min_permutations > self.max_permutations {
            return Err(Error::InvalidConfig(
                "min_permutations must not exceed max_permutations".into(),
            ));
        }
        if self.convergence_window == 0 {
            return Err(Error::InvalidConfig("convergence_window must be at least 1".into()));
        }
        if !(self.truncated_factor >= 0.0) {
            return Err(Error::InvalidConfig("truncated_factor must be >= 0".into()));
        }
        if !(self.class_proportion > 0.0 && self.class_proportion <= 1.0) {
            return Err(Error::InvalidConfig("class_proportion must lie in (0, 1]".into()));
        }
        if !(self.convergence_tolerance > 0.0) {
            return Err(Error::InvalidConfig("convergence_tolerance must be positive".into()));
        }
        if self.worker_count == 0 {
            return Err(Error::InvalidConfig("worker_count must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-run telemetry.
#[derive(Debug, Clone, Serialize)]
pub struct EstimatorDiagnostics {
    /// Rounds attempted (including rounds aborted by oracle failures).
    pub permutations_used: u64,
    /// Oracle invocations actually performed.
    pub utility_evaluations: u64,
    /// Prefix evaluations skipped by truncation.
    pub truncation_events: u64,
    /// Rounds aborted by an oracle failure; their updates are discarded.
    pub failed_rounds: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub last_error: Option<String>,
    /// Whether the convergence criterion stopped the run before the budget.
    pub converged: bool,
    pub per_player_samples: Vec<u64>,
    /// `[player][position]` sample counts, when tracking was requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_position_samples: Option<Vec<Vec<u64>>>,
    /// One rolling relative-change statistic per completed round; rounds
    /// before the window fills carry `+inf` (serialized as null).
    pub convergence_trace: Vec<f64>,
}

/// True once at least `min_permutations` rounds are done and the latest
/// rolling relative change sits below the tolerance.
pub fn convergence_check(trace: &[f64], cfg: &EstimatorConfig) -> bool {
    trace.len() as u64 >= cfg.min_permutations
        && trace
            .last()
            .is_some_and(|&change| change < cfg.convergence_tolerance)
}

/// Uniform random permutation of `players` by Fisher-Yates on the
/// configured stream. Advances `rng` deterministically.
pub fn sample_permutation(rng: &mut ChaCha8Rng, players: &[PlayerId]) -> Vec<PlayerId> {
    let mut seq = players.to_vec();
    for t in (1..seq.len()).rev() {
        let j = rng.random_range(0..=t);
        seq.swap(t, j);
    }
    seq
}

/// `ceil(q * len)` with a guard against `q * len` landing a hair above an
/// exact integer in floating point.
fn ceil_proportion(q: f64, len: usize) -> usize {
    let raw = q * len as f64;
    let rounded = raw.round();
    let count = if (raw - rounded).abs() < 1e-9 {
        rounded
    } else {
        raw.ceil()
    };
    (count as usize).min(len)
}

enum RoundKind<'a> {
    Tmc,
    Cmc { classes: &'a Partition },
    Ctmc { classes: &'a Partition },
}

struct RoundOutcome {
    /// `(player, marginal)` in join order; index = position.
    updates: Vec<(PlayerId, f64)>,
    evaluations: u64,
    truncations: u64,
}

/// Picks `ceil(q * |class|)` members of each class without replacement,
/// then orders the union uniformly.
fn select_and_order(
    rng: &mut ChaCha8Rng,
    classes: &Partition,
    q: f64,
) -> Vec<PlayerId> {
    let mut pool = Vec::new();
    for union in classes.unions() {
        let take = ceil_proportion(q, union.len());
        let mut members = union.clone();
        for t in 0..take {
            let j = rng.random_range(t..members.len());
            members.swap(t, j);
        }
        pool.extend_from_slice(&members[..take]);
    }
    sample_permutation(rng, &pool)
}

/// Walks the prefixes of `seq`, truncating against `reference` when
/// `factor > 0`. The last prefix is the full sequence, whose value is
/// `reference` itself, so it never costs an extra evaluation.
fn walk_truncated(
    utility: &dyn UtilityOracle,
    seq: &[PlayerId],
    reference: f64,
    factor: f64,
    outcome: &mut RoundOutcome,
) -> Result<()> {
    let mut prev = 0.0;
    for j in 1..=seq.len() {
        let current = if (reference - prev).abs() < factor {
            outcome.truncations += 1;
            prev
        } else if j == seq.len() {
            reference
        } else {
            outcome.evaluations += 1;
            utility.evaluate(&OrderedCoalition::from_distinct(seq[..j].to_vec()))?
        };
        outcome.updates.push((seq[j - 1], current - prev));
        prev = current;
    }
    Ok(())
}

fn run_round(
    utility: &dyn UtilityOracle,
    players: &[PlayerId],
    kind: &RoundKind<'_>,
    cfg: &EstimatorConfig,
    rng: &mut ChaCha8Rng,
) -> Result<RoundOutcome> {
    let mut outcome = RoundOutcome {
        updates: Vec::new(),
        evaluations: 0,
        truncations: 0,
    };
    match kind {
        RoundKind::Tmc => {
            let seq = sample_permutation(rng, players);
            outcome.evaluations += 1;
            let full = utility.evaluate(&OrderedCoalition::from_distinct(seq.clone()))?;
            walk_truncated(utility, &seq, full, cfg.truncated_factor, &mut outcome)?;
        }
        RoundKind::Cmc { classes } => {
            let seq = select_and_order(rng, classes, cfg.class_proportion);
            let mut prev = 0.0;
            for j in 1..=seq.len() {
                outcome.evaluations += 1;
                let current =
                    utility.evaluate(&OrderedCoalition::from_distinct(seq[..j].to_vec()))?;
                outcome.updates.push((seq[j - 1], current - prev));
                prev = current;
            }
        }
        RoundKind::Ctmc { classes } => {
            let seq = select_and_order(rng, classes, cfg.class_proportion);
            outcome.evaluations += 1;
            let full = utility.evaluate(&OrderedCoalition::from_distinct(seq.clone()))?;
            walk_truncated(utility, &seq, full, cfg.truncated_factor, &mut outcome)?;
        }
    }
    Ok(outcome)
}

struct Accumulator {
    values: Vec<f64>,
    counts: Vec<u64>,
    evaluations: u64,
    truncations: u64,
    rounds: u64,
    failed_rounds: u64,
    last_error: Option<String>,
    position_counts: Option<Vec<Vec<u64>>>,
}

impl Accumulator {
    fn new(n: usize, track_positions: bool) -> Self {
        Self {
            values: vec![0.0; n],
            counts: vec![0; n],
            evaluations: 0,
            truncations: 0,
            rounds: 0,
            failed_rounds: 0,
            last_error: None,
            position_counts: track_positions.then(|| vec![vec![0; n]; n]),
        }
    }

    fn apply(&mut self, outcome: &RoundOutcome) {
        self.evaluations += outcome.evaluations;
        self.truncations += outcome.truncations;
        for (position, &(player, marginal)) in outcome.updates.iter().enumerate() {
            self.counts[player] += 1;
            self.values[player] += (marginal - self.values[player]) / self.counts[player] as f64;
            if let Some(pos) = &mut self.position_counts {
                pos[player][position] += 1;
            }
        }
    }

    fn record_failure(&mut self, err: &Error) {
        self.failed_rounds += 1;
        self.last_error = Some(err.to_string());
    }
}

fn finalize(
    method: Method,
    accum: Accumulator,
    converged: bool,
    trace: Vec<f64>,
) -> Result<(ValueVector, EstimatorDiagnostics)> {
    if accum.rounds > 0 && accum.failed_rounds == accum.rounds {
        return Err(Error::Oracle(format!(
            "every sampled permutation failed; last error: {}",
            accum.last_error.as_deref().unwrap_or("unknown")
        )));
    }
    let n = accum.values.len();
    let mut values = ValueVector::new(method, n);
    for i in 0..n {
        // Players never observed have no defined estimate.
        values.values[i] = if accum.counts[i] == 0 {
            f64::NAN
        } else {
            accum.values[i]
        };
    }
    values.per_player_samples = accum.counts.clone();
    values.permutations_used = accum.rounds;
    values.utility_evaluations = accum.evaluations;
    let diagnostics = EstimatorDiagnostics {
        permutations_used: accum.rounds,
        utility_evaluations: accum.evaluations,
        truncation_events: accum.truncations,
        failed_rounds: accum.failed_rounds,
        last_error: accum.last_error,
        converged,
        per_player_samples: accum.counts,
        per_position_samples: accum.position_counts,
        convergence_trace: trace,
    };
    Ok((values, diagnostics))
}

fn l1_norm(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x.abs()).sum()
}

fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn run_serial(
    utility: &dyn UtilityOracle,
    n: usize,
    kind: &RoundKind<'_>,
    cfg: &EstimatorConfig,
    method: Method,
) -> Result<(ValueVector, EstimatorDiagnostics)> {
    let players: Vec<PlayerId> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut accum = Accumulator::new(n, cfg.track_position_counts);
    let mut trace: Vec<f64> = Vec::new();
    // Value snapshots of the last `window + 1` rounds; front is oldest.
    let mut snapshots: std::collections::VecDeque<Vec<f64>> =
        std::collections::VecDeque::with_capacity(cfg.convergence_window + 1);
    let mut converged = false;

    while accum.rounds < cfg.max_permutations {
        accum.rounds += 1;
        match run_round(utility, &players, kind, cfg, &mut rng) {
            Ok(outcome) => accum.apply(&outcome),
            Err(err @ Error::Oracle(_)) => accum.record_failure(&err),
            Err(err) => return Err(err),
        }
        snapshots.push_back(accum.values.clone());
        if snapshots.len() > cfg.convergence_window + 1 {
            snapshots.pop_front();
        }
        if snapshots.len() == cfg.convergence_window + 1 {
            let oldest = snapshots.front().expect("nonempty window");
            let change = l1_distance(&accum.values, oldest) / l1_norm(&accum.values).max(1e-12);
            trace.push(change);
        } else {
            trace.push(f64::INFINITY);
        }
        if convergence_check(&trace, cfg) {
            converged = true;
            break;
        }
    }
    finalize(method, accum, converged, trace)
}

fn run_parallel(
    utility: &dyn UtilityOracle,
    n: usize,
    kind: &RoundKind<'_>,
    cfg: &EstimatorConfig,
    method: Method,
) -> Result<(ValueVector, EstimatorDiagnostics)> {
    let workers = cfg.worker_count;
    let base = cfg.max_permutations / workers as u64;
    let extra = cfg.max_permutations % workers as u64;
    let players: Vec<PlayerId> = (0..n).collect();

    let results: Vec<Result<Accumulator>> = std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(workers);
        for w in 0..workers {
            let players = &players;
            let kind_ref = &*kind;
            let quota = base + u64::from((w as u64) < extra);
            handles.push(scope.spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(w as u64);
                let mut accum = Accumulator::new(n, cfg.track_position_counts);
                for _ in 0..quota {
                    accum.rounds += 1;
                    match run_round(utility, players, kind_ref, cfg, &mut rng) {
                        Ok(outcome) => accum.apply(&outcome),
                        Err(err @ Error::Oracle(_)) => accum.record_failure(&err),
                        Err(err) => return Err(err),
                    }
                }
                Ok(accum)
            }));
        }
        handles
            .into_iter()
            .map(|h| h.join().expect("estimator worker panicked"))
            .collect()
    });

    // Deterministic merge in worker-index order.
    let mut merged = Accumulator::new(n, cfg.track_position_counts);
    for result in results {
        let accum = result?;
        for i in 0..n {
            let total = merged.counts[i] + accum.counts[i];
            if total > 0 {
                merged.values[i] = (merged.values[i] * merged.counts[i] as f64
                    + accum.values[i] * accum.counts[i] as f64)
                    / total as f64;
            }
            merged.counts[i] = total;
        }
        merged.evaluations += accum.evaluations;
        merged.truncations += accum.truncations;
        merged.rounds += accum.rounds;
        merged.failed_rounds += accum.failed_rounds;
        if accum.last_error.is_some() {
            merged.last_error = accum.last_error;
        }
        if let (Some(m), Some(a)) = (&mut merged.position_counts, &accum.position_counts) {
            for (mrow, arow) in m.iter_mut().zip(a) {
                for (mc, ac) in mrow.iter_mut().zip(arow) {
                    *mc += ac;
                }
            }
        }
    }
    finalize(method, merged, false, Vec::new())
}

fn run_estimator(
    utility: &dyn UtilityOracle,
    n: usize,
    kind: RoundKind<'_>,
    cfg: &EstimatorConfig,
    method: Method,
) -> Result<(ValueVector, EstimatorDiagnostics)> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::InvalidConfig("game must have at least one player".into()));
    }
    if utility.n_players() < n {
        return Err(Error::InvalidConfig(format!(
            "oracle covers {} players, estimator asked for {n}",
            utility.n_players()
        )));
    }
    if cfg.worker_count == 1 {
        run_serial(utility, n, &kind, cfg, method)
    } else {
        run_parallel(utility, n, &kind, cfg, method)
    }
}

/// Truncated permutation sampling over all `n` players.
pub fn tmc_estimate(
    utility: &dyn UtilityOracle,
    n: usize,
    cfg: &EstimatorConfig,
) -> Result<(ValueVector, EstimatorDiagnostics)> {
    run_estimator(utility, n, RoundKind::Tmc, cfg, Method::Tmc)
}

/// Class-proportional permutation sampling: each round draws
/// `ceil(q * |class|)` members of every class and evaluates every prefix of
/// a random order of the selection.
pub fn cmc_estimate(
    utility: &dyn UtilityOracle,
    n: usize,
    classes: &Partition,
    cfg: &EstimatorConfig,
) -> Result<(ValueVector, EstimatorDiagnostics)> {
    validate_classes(classes, n)?;
    run_estimator(utility, n, RoundKind::Cmc { classes }, cfg, Method::Cmc)
}

/// Class-proportional sampling with truncation against the selected set's
/// full value.
pub fn ctmc_estimate(
    utility: &dyn UtilityOracle,
    n: usize,
    classes: &Partition,
    cfg: &EstimatorConfig,
) -> Result<(ValueVector, EstimatorDiagnostics)> {
    validate_classes(classes, n)?;
    run_estimator(utility, n, RoundKind::Ctmc { classes }, cfg, Method::Ctmc)
}

fn validate_classes(classes: &Partition, n: usize) -> Result<()> {
    if classes.n_players() != n {
        return Err(Error::InvalidPartition(format!(
            "class partition covers {} players, estimator asked for {n}",
            classes.n_players()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::partial_ordinal_shapley;
    use crate::model::TableUtility;
    use crate::synthetic::random_full_table;

    fn order_sensitive_pair() -> TableUtility {
        TableUtility::new(
            2,
            [
                ("0".parse().unwrap(), 1.0),
                ("1".parse().unwrap(), 2.0),
                ("0,1".parse().unwrap(), 4.0),
                ("1,0".parse().unwrap(), 3.0),
            ],
            0.0,
        )
        .unwrap()
    }

    fn fixed_budget(t: u64, seed: u64) -> EstimatorConfig {
        EstimatorConfig {
            max_permutations: t,
            min_permutations: t,
            seed,
            ..EstimatorConfig::default()
        }
    }

    #[test]
    fn permutation_sampler_is_deterministic_and_uniform() {
        let players = [0usize, 1, 2];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let first = sample_permutation(&mut rng, &players);
        let second = sample_permutation(&mut rng, &players);
        let mut rng2 = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(first, sample_permutation(&mut rng2, &players));
        assert_eq!(second, sample_permutation(&mut rng2, &players));
        assert_eq!(sample_permutation(&mut rng, &[4]), vec![4]);

        // Chi-squared uniformity over the 3! orderings at 60k draws.
        // Critical value for df = 5 at p = 0.001 is 20.515.
        let mut counts = std::collections::HashMap::new();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let draws = 60_000usize;
        for _ in 0..draws {
            *counts.entry(sample_permutation(&mut rng, &players)).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 6);
        let expected = draws as f64 / 6.0;
        let chi2: f64 = counts
            .values()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 20.515, "chi2 = {chi2}");
    }

    #[test]
    fn tmc_converges_to_exact_pair_values() {
        let game = order_sensitive_pair();
        let exact = partial_ordinal_shapley(&game, 2).unwrap();
        let (values, diag) = tmc_estimate(&game, 2, &fixed_budget(20_000, 11)).unwrap();
        for i in 0..2 {
            assert!(
                (values.values[i] - exact.values[i]).abs() < 0.01,
                "player {i}: {} vs {}",
                values.values[i],
                exact.values[i]
            );
        }
        assert_eq!(diag.permutations_used, 20_000);
        assert_eq!(diag.truncation_events, 0);
    }

    #[test]
    fn total_truncation_pins_every_value_at_zero() {
        let game = order_sensitive_pair();
        let cfg = EstimatorConfig {
            truncated_factor: 100.0,
            ..fixed_budget(50, 3)
        };
        let (values, diag) = tmc_estimate(&game, 2, &cfg).unwrap();
        assert!(values.values.iter().all(|&v| v == 0.0));
        assert_eq!(diag.truncation_events, 100);
        // Only the per-round full-sequence evaluation remains.
        assert_eq!(diag.utility_evaluations, 50);
    }

    #[test]
    fn single_player_game_is_exact_after_one_round() {
        let game = TableUtility::new(1, [("0".parse().unwrap(), 5.0)], 0.0).unwrap();
        let cfg = EstimatorConfig {
            max_permutations: 1,
            min_permutations: 1,
            ..EstimatorConfig::default()
        };
        let (values, _) = tmc_estimate(&game, 1, &cfg).unwrap();
        assert_eq!(values.values, vec![5.0]);
    }

    #[test]
    fn identical_seed_and_config_reproduce_bit_identically() {
        let game = random_full_table(5, 17).unwrap();
        let cfg = fixed_budget(500, 23);
        let (a, da) = tmc_estimate(&game, 5, &cfg).unwrap();
        let (b, db) = tmc_estimate(&game, 5, &cfg).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(da.utility_evaluations, db.utility_evaluations);
    }

    #[test]
    fn running_mean_matches_recomputed_average() {
        // Replay the same stream and accumulate plain sums instead of the
        // incremental mean; the two routes must agree.
        let game = random_full_table(4, 5).unwrap();
        let cfg = fixed_budget(200, 31);
        let (values, _) = tmc_estimate(&game, 4, &cfg).unwrap();

        let players: Vec<usize> = (0..4).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut sums = vec![0.0f64; 4];
        let mut counts = vec![0u64; 4];
        for _ in 0..cfg.max_permutations {
            let seq = sample_permutation(&mut rng, &players);
            let mut prev = 0.0;
            for j in 1..=4 {
                let current = game
                    .evaluate(&OrderedCoalition::from_distinct(seq[..j].to_vec()))
                    .unwrap();
                sums[seq[j - 1]] += current - prev;
                prev = current;
            }
        }
        for i in 0..4 {
            counts[i] = cfg.max_permutations;
            assert!((values.values[i] - sums[i] / counts[i] as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn cmc_full_proportion_touches_every_player_each_round() {
        let game = random_full_table(4, 2).unwrap();
        let classes = Partition::new(vec![vec![0, 1], vec![2, 3]], 4).unwrap();
        let cfg = EstimatorConfig {
            class_proportion: 1.0,
            ..fixed_budget(50, 8)
        };
        let (values, _) = cmc_estimate(&game, 4, &classes, &cfg).unwrap();
        assert!(values.per_player_samples.iter().all(|&m| m == 50));
    }

    #[test]
    fn cmc_never_selected_player_is_undefined() {
        // One class of 8 with a single pick per round and a tiny budget:
        // some player is never drawn.
        let game = random_full_table(8, 4).unwrap();
        let classes = Partition::single_union(8);
        let cfg = EstimatorConfig {
            class_proportion: 0.125,
            ..fixed_budget(3, 13)
        };
        let (values, _) = cmc_estimate(&game, 8, &classes, &cfg).unwrap();
        let undefined = values
            .per_player_samples
            .iter()
            .zip(&values.values)
            .filter(|(&m, v)| m == 0 && v.is_nan())
            .count();
        assert!(undefined >= 1);
    }

    #[test]
    fn ctmc_with_zero_factor_matches_cmc_bit_for_bit() {
        let game = random_full_table(5, 21).unwrap();
        let classes = Partition::new(vec![vec![0, 1, 2], vec![3, 4]], 5).unwrap();
        let cfg = EstimatorConfig {
            class_proportion: 0.67,
            ..fixed_budget(300, 19)
        };
        let (cmc, dc) = cmc_estimate(&game, 5, &classes, &cfg).unwrap();
        let (ctmc, dt) = ctmc_estimate(&game, 5, &classes, &cfg).unwrap();
        assert_eq!(cmc.values, ctmc.values);
        // A zero factor never truncates, so the walk only reuses the
        // reference for the final prefix: identical evaluation counts.
        assert_eq!(dc.utility_evaluations, dt.utility_evaluations);
        assert_eq!(dt.truncation_events, 0);
    }

    #[test]
    fn ctmc_truncation_saves_evaluations_vs_cmc() {
        let game = random_full_table(6, 77).unwrap();
        let classes = Partition::new(vec![vec![0, 1, 2], vec![3, 4, 5]], 6).unwrap();
        let cfg = EstimatorConfig {
            class_proportion: 0.8,
            truncated_factor: 0.25,
            ..fixed_budget(400, 5)
        };
        let (_, dc) = cmc_estimate(&game, 6, &classes, &cfg).unwrap();
        let (_, dt) = ctmc_estimate(&game, 6, &classes, &cfg).unwrap();
        assert!(
            dt.utility_evaluations < dc.utility_evaluations,
            "{} !< {}",
            dt.utility_evaluations,
            dc.utility_evaluations
        );
    }

    #[test]
    fn convergence_stops_constant_games_early() {
        // Additive game: every marginal equals the player's own value, so
        // the estimate is constant from round one.
        let game = crate::synthetic::AdditiveUtility::new(vec![1.0, 2.0, 3.0]).unwrap();
        let cfg = EstimatorConfig {
            max_permutations: 10_000,
            min_permutations: 50,
            convergence_window: 20,
            convergence_tolerance: 1e-6,
            ..EstimatorConfig::default()
        };
        let (values, diag) = tmc_estimate(&game, 3, &cfg).unwrap();
        assert!(diag.converged);
        assert!(diag.permutations_used < 200);
        for i in 0..3 {
            assert!((values.values[i] - (i + 1) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn convergence_check_contract() {
        let cfg = EstimatorConfig {
            min_permutations: 3,
            convergence_tolerance: 0.05,
            ..EstimatorConfig::default()
        };
        assert!(convergence_check(&[0.01, 0.01, 0.01], &cfg));
        assert!(!convergence_check(&[0.01, 0.01], &cfg)); // below min rounds
        assert!(!convergence_check(&[0.01, 0.01, 0.2], &cfg)); // oscillating above
        assert!(!convergence_check(&[], &cfg));
    }

    #[test]
    fn multi_worker_run_is_reproducible_and_sane() {
        let game = random_full_table(5, 3).unwrap();
        let cfg = EstimatorConfig {
            worker_count: 3,
            ..fixed_budget(3000, 41)
        };
        let (a, da) = tmc_estimate(&game, 5, &cfg).unwrap();
        let (b, _) = tmc_estimate(&game, 5, &cfg).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(da.permutations_used, 3000);
        let exact = partial_ordinal_shapley(&game, 5).unwrap();
        for i in 0..5 {
            assert!((a.values[i] - exact.values[i]).abs() < 0.06);
        }
    }

    #[test]
    fn oracle_failures_abort_rounds_but_not_the_run() {
        // A table covering only prefixes that start with player 0 makes
        // some permutations fail.
        let full = random_full_table(3, 6).unwrap();
        struct Flaky<'a>(&'a TableUtility);
        impl UtilityOracle for Flaky<'_> {
            fn n_players(&self) -> usize {
                3
            }
            fn evaluate(&self, c: &OrderedCoalition) -> crate::error::Result<f64> {
                if c.len() == 1 && c.players()[0] == 2 {
                    return Err(Error::Oracle("degenerate input".into()));
                }
                self.0.evaluate(c)
            }
        }
        let flaky = Flaky(&full);
        let (values, diag) = tmc_estimate(&flaky, 3, &fixed_budget(300, 2)).unwrap();
        assert!(diag.failed_rounds > 0);
        assert!(diag.failed_rounds < diag.permutations_used);
        assert!(values.values.iter().all(|v| v.is_finite()));
        // Failed rounds contribute no samples.
        assert!(values.per_player_samples.iter().all(|&m| m < 300));
    }

    #[test]
    fn all_rounds_failing_is_an_oracle_error() {
        let empty = TableUtility::new(2, [], 0.0).unwrap();
        let err = tmc_estimate(&empty, 2, &fixed_budget(10, 1)).unwrap_err();
        assert!(err.is_oracle_failure());
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let mut cfg = EstimatorConfig::default();
        cfg.class_proportion = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = EstimatorConfig::default();
        cfg.min_permutations = cfg.max_permutations + 1;
        assert!(cfg.validate().is_err());
        let mut cfg = EstimatorConfig::default();
        cfg.convergence_window = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = EstimatorConfig::default();
        cfg.truncated_factor = -0.1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn ceil_proportion_handles_float_edges() {
        assert_eq!(ceil_proportion(0.8, 5), 4); // 0.8 * 5 is 4.000000000000001 in f64
        assert_eq!(ceil_proportion(0.8, 4), 4); // ceil(3.2)
        assert_eq!(ceil_proportion(1.0, 7), 7);
        assert_eq!(ceil_proportion(0.1, 3), 1);
        assert_eq!(ceil_proportion(0.5, 1), 1);
    }
}
