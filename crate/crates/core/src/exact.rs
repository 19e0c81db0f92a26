//! Exact value computation by full enumeration: the classic set-based value,
//! the ordinal value (every insertion slot), the partial ordinal value
//! (append-only marginals), and the two partition special cases, plus
//! brute-force axiom checkers used as test oracles.
//!
//! Everything here is factorial; the `EXACT_*` limits exist so a bad `n`
//! fails fast instead of running for hours.

use std::collections::HashMap;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CachedUtility, Method, OrderedCoalition, PlayerId, UtilityOracle, ValueVector};

/// Largest `n` for the subset-sum classic form.
pub const EXACT_SUBSET_LIMIT: usize = 12;
/// Largest `n` for anything that enumerates all `n!` permutations.
pub const EXACT_PERMUTATION_LIMIT: usize = 8;
/// Largest `n` for the full ordinal value (every insertion slot of every
/// ordering of every subset).
pub const EXACT_ORDINAL_LIMIT: usize = 7;
/// Largest `n` for the brute-force axiom checkers.
pub const AXIOM_CHECK_LIMIT: usize = 7;
/// Absolute tolerance used by the axiom checkers; double precision leaves
/// plenty of headroom over sums of at most `8!` terms.
pub const AXIOM_TOLERANCE: f64 = 1e-9;

/// A grouping of the player set into disjoint unions covering `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    unions: Vec<Vec<PlayerId>>,
}

impl Partition {
    /// Validates that the unions are disjoint and cover `0..n` exactly.
    pub fn new(unions: Vec<Vec<PlayerId>>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        let mut covered = 0usize;
        for union in &unions {
            for &p in union {
                if p >= n {
                    return Err(Error::InvalidPartition(format!(
                        "player {p} out of range for {n} players"
                    )));
                }
                if seen[p] {
                    return Err(Error::InvalidPartition(format!(
                        "player {p} appears in more than one union"
                    )));
                }
                seen[p] = true;
                covered += 1;
            }
        }
        if covered != n {
            return Err(Error::InvalidPartition(format!(
                "unions cover {covered} of {n} players"
            )));
        }
        let mut unions = unions;
        for union in &mut unions {
            union.sort_unstable();
        }
        Ok(Self { unions })
    }

    /// The partition `(1, 1, ..., 1)`.
    pub fn singletons(n: usize) -> Self {
        Self {
            unions: (0..n).map(|p| vec![p]).collect(),
        }
    }

    /// The partition `(n)`.
    pub fn single_union(n: usize) -> Self {
        Self {
            unions: vec![(0..n).collect()],
        }
    }

    pub fn unions(&self) -> &[Vec<PlayerId>] {
        &self.unions
    }

    pub fn n_players(&self) -> usize {
        self.unions.iter().map(Vec::len).sum()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.unions.iter().map(Vec::len).collect()
    }

    /// Map from player to the index of its union.
    pub fn union_of(&self) -> Vec<usize> {
        let n = self.n_players();
        let mut map = vec![0usize; n];
        for (u, union) in self.unions.iter().enumerate() {
            for &p in union {
                map[p] = u;
            }
        }
        map
    }

    /// Parses `"0,1;2,3"` (unions split by `;`, members by `,`).
    pub fn parse(text: &str, n: usize) -> Result<Self> {
        let mut unions = Vec::new();
        for part in text.split(';') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            let mut members = Vec::new();
            for tok in part.split(',') {
                let p: PlayerId = tok.trim().parse().map_err(|_| {
                    Error::InvalidPartition(format!("invalid player id {tok:?}"))
                })?;
                members.push(p);
            }
            unions.push(members);
        }
        Partition::new(unions, n)
    }
}

/// Outcome of a brute-force axiom check.
#[derive(Debug, Clone)]
pub struct AxiomCheckResult {
    pub holds: bool,
    /// A worst violating sequence, when one exists.
    pub witness: Option<OrderedCoalition>,
    pub max_violation: f64,
}

impl AxiomCheckResult {
    fn from_scan(max_violation: f64, witness: Option<OrderedCoalition>) -> Self {
        Self {
            holds: max_violation <= AXIOM_TOLERANCE,
            witness,
            max_violation,
        }
    }
}

fn check_limit(n: usize, limit: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidConfig("game must have at least one player".into()));
    }
    if n > limit {
        return Err(Error::ExactLimit { n, limit });
    }
    Ok(())
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0f64, |acc, i| acc * i as f64)
}

/// Iterates the subsets of `0..n` that exclude `player`, as sorted member
/// lists (the canonical order).
fn subsets_excluding(n: usize, player: PlayerId) -> impl Iterator<Item = Vec<PlayerId>> {
    let others: Vec<PlayerId> = (0..n).filter(move |&p| p != player).collect();
    let m = others.len();
    (0u32..1 << m).map(move |mask| {
        others
            .iter()
            .enumerate()
            .filter(|(b, _)| mask >> b & 1 == 1)
            .map(|(_, &p)| p)
            .collect()
    })
}

/// All orderings of the given members, each as an `OrderedCoalition`.
fn orderings(members: &[PlayerId]) -> Vec<OrderedCoalition> {
    if members.is_empty() {
        return vec![OrderedCoalition::empty()];
    }
    members
        .iter()
        .copied()
        .permutations(members.len())
        .map(OrderedCoalition::from_distinct)
        .collect()
}

/// Classic set-based value by the subset sum
/// `phi_i = (1/n) * sum_S [ U(S + i) - U(S) ] / C(n-1, |S|)`,
/// evaluating every subset on its canonical sequence.
///
/// The caller asserts that the oracle is order-invariant on member sets.
/// For `n <= 7` the result is cross-checked against the permutation form
/// and a disagreement beyond `1e-9` is an error.
pub fn classic_shapley(utility: &dyn UtilityOracle, n: usize) -> Result<ValueVector> {
    check_limit(n, EXACT_SUBSET_LIMIT)?;
    let cached = CachedUtility::new(utility);
    let mut out = ValueVector::new(Method::Classic, n);
    for i in 0..n {
        let mut phi = 0.0;
        for subset in subsets_excluding(n, i) {
            let weight = 1.0 / (n as f64 * binomial(n - 1, subset.len()));
            let without = cached.evaluate(&OrderedCoalition::canonical(subset.iter().copied()))?;
            let with_members = subset.iter().copied().chain(std::iter::once(i));
            let with = cached.evaluate(&OrderedCoalition::canonical(with_members))?;
            phi += weight * (with - without);
        }
        out.values[i] = phi;
    }
    if n <= EXACT_ORDINAL_LIMIT {
        let by_perm = classic_shapley_by_permutations(&cached, n)?;
        for i in 0..n {
            let delta = (out.values[i] - by_perm.values[i]).abs();
            if delta > 1e-9 {
                return Err(Error::CrossCheck(format!(
                    "classic value of player {i} differs between subset and permutation forms by {delta:e}"
                )));
            }
        }
        out.permutations_used = by_perm.permutations_used;
    }
    out.utility_evaluations = cached.misses();
    Ok(out)
}

/// Classic value by averaging set marginals over all `n!` permutations.
/// Kept public as the independent route for cross-checks.
pub fn classic_shapley_by_permutations(
    utility: &dyn UtilityOracle,
    n: usize,
) -> Result<ValueVector> {
    check_limit(n, EXACT_PERMUTATION_LIMIT)?;
    let cached = CachedUtility::new(utility);
    let mut out = ValueVector::new(Method::Classic, n);
    let mut permutations = 0u64;
    for perm in (0..n).permutations(n) {
        permutations += 1;
        let mut prev = cached.evaluate(&OrderedCoalition::empty())?;
        for j in 1..=n {
            let current = cached.evaluate(&OrderedCoalition::canonical(perm[..j].iter().copied()))?;
            out.values[perm[j - 1]] += current - prev;
            prev = current;
        }
    }
    let scale = 1.0 / factorial(n);
    for v in &mut out.values {
        *v *= scale;
    }
    out.permutations_used = permutations;
    out.utility_evaluations = cached.misses();
    Ok(out)
}

/// Ordinal value: for every subset `S` not containing `i`, every ordering of
/// `S`, and every insertion slot `k`, accumulate
/// `[ U(insert i at k) - U(ordering) ] / ( n * (|S|+1)! * C(n-1, |S|) )`.
pub fn ordinal_shapley(utility: &dyn UtilityOracle, n: usize) -> Result<ValueVector> {
    check_limit(n, EXACT_ORDINAL_LIMIT)?;
    let cached = CachedUtility::new(utility);
    let mut out = ValueVector::new(Method::Ordinal, n);
    let mut permutations = 0u64;
    for i in 0..n {
        let mut phi = 0.0;
        for subset in subsets_excluding(n, i) {
            let s = subset.len();
            let weight = 1.0 / (n as f64 * factorial(s + 1) * binomial(n - 1, s));
            for seq in orderings(&subset) {
                permutations += 1;
                let base = cached.evaluate(&seq)?;
                for k in 0..=s {
                    let inserted = seq.insert_at(i, k)?;
                    phi += weight * (cached.evaluate(&inserted)? - base);
                }
            }
        }
        out.values[i] = phi;
    }
    out.permutations_used = permutations;
    out.utility_evaluations = cached.misses();
    Ok(out)
}

/// Partial ordinal value by the permutation form: iterate every permutation
/// of all `n` players and credit the player at each position with the
/// append-marginal of its prefix, averaging over `n!`.
pub fn partial_ordinal_shapley(utility: &dyn UtilityOracle, n: usize) -> Result<ValueVector> {
    check_limit(n, EXACT_PERMUTATION_LIMIT)?;
    let cached = CachedUtility::new(utility);
    let mut out = ValueVector::new(Method::PartialOrdinal, n);
    let mut permutations = 0u64;
    for perm in (0..n).permutations(n) {
        permutations += 1;
        let full = OrderedCoalition::from_distinct(perm);
        let mut prev = cached.evaluate(&OrderedCoalition::empty())?;
        for j in 1..=n {
            let current = cached.evaluate(&full.prefix(j))?;
            out.values[full.players()[j - 1]] += current - prev;
            prev = current;
        }
    }
    let scale = 1.0 / factorial(n);
    for v in &mut out.values {
        *v *= scale;
    }
    out.permutations_used = permutations;
    out.utility_evaluations = cached.misses();
    Ok(out)
}

/// Partial ordinal value by the subset-and-ordering form:
/// `phi_i = (1/n) * sum_S sum_{orderings pi of S}
///          [ U(pi, i appended) - U(pi) ] / ( |S|! * C(n-1, |S|) )`.
///
/// Independent of [`partial_ordinal_shapley`]; the two routes must agree.
pub fn partial_ordinal_shapley_subset_form(
    utility: &dyn UtilityOracle,
    n: usize,
) -> Result<ValueVector> {
    check_limit(n, EXACT_PERMUTATION_LIMIT)?;
    let cached = CachedUtility::new(utility);
    let mut out = ValueVector::new(Method::PartialOrdinalSubset, n);
    let mut permutations = 0u64;
    for i in 0..n {
        let mut phi = 0.0;
        for subset in subsets_excluding(n, i) {
            let s = subset.len();
            let weight = 1.0 / (n as f64 * factorial(s) * binomial(n - 1, s));
            for seq in orderings(&subset) {
                permutations += 1;
                let base = cached.evaluate(&seq)?;
                let appended = seq.appended(i)?;
                phi += weight * (cached.evaluate(&appended)? - base);
            }
        }
        out.values[i] = phi;
    }
    out.permutations_used = permutations;
    out.utility_evaluations = cached.misses();
    Ok(out)
}

/// Sequences reachable from the canonical order of `subset` by permuting
/// each union's members among that union's own positions.
fn within_union_arrangements(
    subset: &[PlayerId],
    union_of: &[usize],
    union_count: usize,
) -> Vec<OrderedCoalition> {
    let canonical: Vec<PlayerId> = {
        let mut v = subset.to_vec();
        v.sort_unstable();
        v
    };
    // Positions (into the canonical sequence) and members, per union.
    let mut positions: Vec<Vec<usize>> = vec![Vec::new(); union_count];
    let mut members: Vec<Vec<PlayerId>> = vec![Vec::new(); union_count];
    for (pos, &p) in canonical.iter().enumerate() {
        positions[union_of[p]].push(pos);
        members[union_of[p]].push(p);
    }
    let occupied: Vec<usize> = (0..union_count).filter(|&u| !members[u].is_empty()).collect();
    let per_union: Vec<Vec<Vec<PlayerId>>> = occupied
        .iter()
        .map(|&u| members[u].iter().copied().permutations(members[u].len()).collect())
        .collect();

    let mut result = Vec::new();
    let mut assignment = vec![0usize; occupied.len()];
    loop {
        let mut seq = canonical.clone();
        for (slot, &u) in occupied.iter().enumerate() {
            let perm = &per_union[slot][assignment[slot]];
            for (t, &pos) in positions[u].iter().enumerate() {
                seq[pos] = perm[t];
            }
        }
        result.push(OrderedCoalition::from_distinct(seq));
        // Odometer increment over the per-union permutation choices.
        let mut carry = true;
        for slot in 0..occupied.len() {
            if !carry {
                break;
            }
            assignment[slot] += 1;
            if assignment[slot] < per_union[slot].len() {
                carry = false;
            } else {
                assignment[slot] = 0;
            }
        }
        if carry {
            break;
        }
    }
    result
}

/// Special case where only the order *within* each union matters: average
/// the append-marginal over the within-union rearrangements of the
/// canonical sequence of each subset.
///
/// The caller is responsible for a game in which transpositions across
/// unions leave the utility unchanged; see [`verify_across_union_invariance`].
pub fn special_case_within_union(
    utility: &dyn UtilityOracle,
    partition: &Partition,
) -> Result<ValueVector> {
    let n = partition.n_players();
    check_limit(n, EXACT_PERMUTATION_LIMIT)?;
    let union_of = partition.union_of();
    let union_count = partition.unions().len();
    let cached = CachedUtility::new(utility);
    let mut out = ValueVector::new(Method::WithinUnion, n);
    let mut permutations = 0u64;
    for i in 0..n {
        let mut phi = 0.0;
        for subset in subsets_excluding(n, i) {
            let arrangements = within_union_arrangements(&subset, &union_of, union_count);
            let weight =
                1.0 / (n as f64 * binomial(n - 1, subset.len()) * arrangements.len() as f64);
            for seq in arrangements {
                permutations += 1;
                let base = cached.evaluate(&seq)?;
                let appended = seq.appended(i)?;
                phi += weight * (cached.evaluate(&appended)? - base);
            }
        }
        out.values[i] = phi;
    }
    out.permutations_used = permutations;
    out.utility_evaluations = cached.misses();
    Ok(out)
}

/// Special case where only the order *across* unions matters: enumerate all
/// orderings of each subset, bucket them by their union-id pattern (the
/// orbit of within-union rearrangement), evaluate one lexicographically
/// smallest representative per bucket, and weight it by
/// `bucket size / |S|!`.
///
/// The caller is responsible for a game in which transpositions within a
/// union leave the utility unchanged; see [`verify_within_union_invariance`].
pub fn special_case_across_union(
    utility: &dyn UtilityOracle,
    partition: &Partition,
) -> Result<ValueVector> {
    let n = partition.n_players();
    check_limit(n, EXACT_PERMUTATION_LIMIT)?;
    let union_of = partition.union_of();
    let cached = CachedUtility::new(utility);
    let mut out = ValueVector::new(Method::AcrossUnion, n);
    let mut permutations = 0u64;
    for i in 0..n {
        let mut phi = 0.0;
        for subset in subsets_excluding(n, i) {
            let total = factorial(subset.len());
            // Orbit key -> (lexicographically smallest member, orbit size).
            let mut buckets: HashMap<Vec<usize>, (OrderedCoalition, f64)> = HashMap::new();
            for seq in orderings(&subset) {
                permutations += 1;
                let key: Vec<usize> = seq.iter().map(|p| union_of[p]).collect();
                buckets
                    .entry(key)
                    .and_modify(|(rep, count)| {
                        if seq < *rep {
                            *rep = seq.clone();
                        }
                        *count += 1.0;
                    })
                    .or_insert((seq, 1.0));
            }
            let subset_weight = 1.0 / (n as f64 * binomial(n - 1, subset.len()));
            for (rep, count) in buckets.into_values() {
                let base = cached.evaluate(&rep)?;
                let appended = rep.appended(i)?;
                phi += subset_weight * (count / total) * (cached.evaluate(&appended)? - base);
            }
        }
        out.values[i] = phi;
    }
    out.permutations_used = permutations;
    out.utility_evaluations = cached.misses();
    Ok(out)
}

/// Brute-force check of the first special case's premise: the utility is
/// unchanged by any transposition of two players from different unions,
/// over every ordering of every subset. Exponential; `n <= 6`.
pub fn verify_across_union_invariance(
    utility: &dyn UtilityOracle,
    partition: &Partition,
) -> Result<AxiomCheckResult> {
    verify_transposition_invariance(utility, partition, false)
}

/// Brute-force check of the second special case's premise: the utility is
/// unchanged by any transposition of two players from the same union.
pub fn verify_within_union_invariance(
    utility: &dyn UtilityOracle,
    partition: &Partition,
) -> Result<AxiomCheckResult> {
    verify_transposition_invariance(utility, partition, true)
}

fn verify_transposition_invariance(
    utility: &dyn UtilityOracle,
    partition: &Partition,
    same_union: bool,
) -> Result<AxiomCheckResult> {
    let n = partition.n_players();
    check_limit(n, 6)?;
    let union_of = partition.union_of();
    let cached = CachedUtility::new(utility);
    let mut worst = 0.0f64;
    let mut witness = None;
    for i in 0..n {
        for j in i + 1..n {
            if (union_of[i] == union_of[j]) != same_union {
                continue;
            }
            for mask in 0u32..1 << n {
                let members: Vec<PlayerId> =
                    (0..n).filter(|&p| mask >> p & 1 == 1).collect();
                for seq in orderings(&members) {
                    let swapped = seq.transposed(i, j);
                    if swapped == seq {
                        continue;
                    }
                    let gap = (cached.evaluate(&seq)? - cached.evaluate(&swapped)?).abs();
                    if gap > worst {
                        worst = gap;
                        witness = Some(seq.clone());
                    }
                }
            }
        }
    }
    Ok(AxiomCheckResult::from_scan(worst, witness))
}

/// Checks whether appending `player` to any ordering of any subset leaves
/// the utility unchanged (within tolerance) — the condition under which the
/// partial ordinal value of that player is zero.
pub fn check_partial_ordinal_null_player(
    utility: &dyn UtilityOracle,
    player: PlayerId,
) -> Result<AxiomCheckResult> {
    let n = utility.n_players();
    check_limit(n, AXIOM_CHECK_LIMIT)?;
    if player >= n {
        return Err(Error::PlayerOutOfRange { player, n });
    }
    let cached = CachedUtility::new(utility);
    let mut worst = 0.0f64;
    let mut witness = None;
    for subset in subsets_excluding(n, player) {
        for seq in orderings(&subset) {
            let appended = seq.appended(player)?;
            let gap = (cached.evaluate(&appended)? - cached.evaluate(&seq)?).abs();
            if gap > worst {
                worst = gap;
                witness = Some(appended);
            }
        }
    }
    Ok(AxiomCheckResult::from_scan(worst, witness))
}

/// Checks whether swapping players `i` and `j` leaves the utility of every
/// ordering of every subset unchanged (within tolerance) — the symmetry
/// condition under which the two players receive equal values.
pub fn check_ordinal_symmetry(
    utility: &dyn UtilityOracle,
    i: PlayerId,
    j: PlayerId,
) -> Result<AxiomCheckResult> {
    let n = utility.n_players();
    check_limit(n, AXIOM_CHECK_LIMIT)?;
    if i == j {
        return Err(Error::InvalidConfig("symmetry check needs two distinct players".into()));
    }
    for p in [i, j] {
        if p >= n {
            return Err(Error::PlayerOutOfRange { player: p, n });
        }
    }
    let cached = CachedUtility::new(utility);
    let mut worst = 0.0f64;
    let mut witness = None;
    for mask in 0u32..1 << n {
        let members: Vec<PlayerId> = (0..n).filter(|&p| mask >> p & 1 == 1).collect();
        for seq in orderings(&members) {
            let swapped = seq.transposed(i, j);
            if swapped == seq {
                continue;
            }
            let gap = (cached.evaluate(&seq)? - cached.evaluate(&swapped)?).abs();
            if gap > worst {
                worst = gap;
                witness = Some(seq.clone());
            }
        }
    }
    Ok(AxiomCheckResult::from_scan(worst, witness))
}

/// The average utility of the grand coalition over all `n!` join orders:
/// the right-hand side of the ordinal efficiency condition.
pub fn mean_full_coalition_utility(utility: &dyn UtilityOracle, n: usize) -> Result<f64> {
    check_limit(n, EXACT_PERMUTATION_LIMIT)?;
    let mut total = 0.0;
    let mut count = 0.0;
    for perm in (0..n).permutations(n) {
        total += utility.evaluate(&OrderedCoalition::from_distinct(perm))?;
        count += 1.0;
    }
    Ok(total / count)
}

/// `| sum_i values_i  -  mean over all n! orders of U(full sequence) |`.
///
/// Zero (up to accumulation error) for ordinal and partial ordinal outputs
/// on games with a zero-valued empty coalition.
pub fn efficiency_residual(
    values: &ValueVector,
    utility: &dyn UtilityOracle,
    n: usize,
) -> Result<f64> {
    if values.n_players() != n {
        return Err(Error::InvalidConfig(format!(
            "value vector has {} players, expected {n}",
            values.n_players()
        )));
    }
    Ok((values.total() - mean_full_coalition_utility(utility, n)?).abs())
}
