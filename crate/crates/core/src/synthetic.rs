//! Deterministic synthetic games for tests, estimator calibration, and
//! bound-validity runs.

use itertools::Itertools;

use crate::error::{Error, Result};
use crate::model::{OrderedCoalition, PlayerId, TableUtility, UtilityOracle};

/// Cheap deterministic mixer used to derive per-sequence noise without
/// storing a table.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

fn unit_from_hash(h: u64) -> f64 {
    // 53 high bits -> [0, 1).
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn hash_sequence(seed: u64, items: impl Iterator<Item = u64>) -> u64 {
    let mut h = splitmix64(seed);
    for item in items {
        h = splitmix64(h ^ item.wrapping_add(0x51AF_E234));
    }
    h
}

/// `U(seq) = sum_j position_weights[j] * player_values[seq[j]]`.
///
/// The exact partial ordinal value of player `i` has the closed form
/// `player_values[i] * mean(position_weights[0..n])`, since a uniformly
/// random join order puts `i` at every position equally often.
#[derive(Debug, Clone)]
pub struct PositionalLinearUtility {
    position_weights: Vec<f64>,
    player_values: Vec<f64>,
}

impl PositionalLinearUtility {
    pub fn new(position_weights: Vec<f64>, player_values: Vec<f64>) -> Result<Self> {
        if position_weights.len() < player_values.len() {
            return Err(Error::InvalidConfig(
                "need at least one position weight per player".into(),
            ));
        }
        if player_values.is_empty() {
            return Err(Error::InvalidConfig("game must have at least one player".into()));
        }
        Ok(Self {
            position_weights,
            player_values,
        })
    }

    pub fn exact_partial_ordinal_values(&self) -> Vec<f64> {
        let n = self.player_values.len();
        let mean_weight: f64 = self.position_weights[..n].iter().sum::<f64>() / n as f64;
        self.player_values.iter().map(|v| v * mean_weight).collect()
    }

    /// Exact range of the marginal contribution realizable at `position`
    /// (0-based): the spread of `w[position] * v_i` over players.
    pub fn position_marginal_range(&self, position: usize) -> f64 {
        let (lo, hi) = min_max(&self.player_values);
        (self.position_weights[position] * (hi - lo)).abs()
    }

    /// Exact range of the marginal contribution of one player over all
    /// positions it can occupy in a full join order.
    pub fn client_marginal_range(&self, player: PlayerId) -> f64 {
        let n = self.player_values.len();
        let (lo, hi) = min_max(&self.position_weights[..n]);
        (self.player_values[player] * (hi - lo)).abs()
    }
}

fn min_max(xs: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in xs {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    (lo, hi)
}

impl UtilityOracle for PositionalLinearUtility {
    fn n_players(&self) -> usize {
        self.player_values.len()
    }

    fn evaluate(&self, coalition: &OrderedCoalition) -> Result<f64> {
        let mut total = 0.0;
        for (j, p) in coalition.iter().enumerate() {
            if p >= self.player_values.len() {
                return Err(Error::Oracle(format!("player {p} out of range")));
            }
            total += self.position_weights[j] * self.player_values[p];
        }
        Ok(total)
    }
}

/// Order-invariant additive game: `U(seq) = sum of player_values over members`.
#[derive(Debug, Clone)]
pub struct AdditiveUtility {
    player_values: Vec<f64>,
}

impl AdditiveUtility {
    pub fn new(player_values: Vec<f64>) -> Result<Self> {
        if player_values.is_empty() {
            return Err(Error::InvalidConfig("game must have at least one player".into()));
        }
        Ok(Self { player_values })
    }
}

impl UtilityOracle for AdditiveUtility {
    fn n_players(&self) -> usize {
        self.player_values.len()
    }

    fn evaluate(&self, coalition: &OrderedCoalition) -> Result<f64> {
        let mut total = 0.0;
        for p in coalition.iter() {
            if p >= self.player_values.len() {
                return Err(Error::Oracle(format!("player {p} out of range")));
            }
            total += self.player_values[p];
        }
        Ok(total)
    }
}

/// Order-invariant game that depends only on coalition size:
/// `U(seq) = per_size[len]`, with `per_size[0]` the empty value.
#[derive(Debug, Clone)]
pub struct CoalitionSizeUtility {
    per_size: Vec<f64>,
}

impl CoalitionSizeUtility {
    /// `per_size` must have `n + 1` entries for a game of `n` players.
    pub fn new(per_size: Vec<f64>) -> Result<Self> {
        if per_size.len() < 2 {
            return Err(Error::InvalidConfig(
                "need per-size values for at least sizes 0 and 1".into(),
            ));
        }
        Ok(Self { per_size })
    }
}

impl UtilityOracle for CoalitionSizeUtility {
    fn n_players(&self) -> usize {
        self.per_size.len() - 1
    }

    fn evaluate(&self, coalition: &OrderedCoalition) -> Result<f64> {
        self.per_size
            .get(coalition.len())
            .copied()
            .ok_or_else(|| Error::Oracle(format!("coalition of size {} out of range", coalition.len())))
    }
}

impl CoalitionSizeUtility {
    pub fn empty_value_of(&self) -> f64 {
        self.per_size[0]
    }
}

/// Class-structured game: each player belongs to a class, and the utility is
/// a deterministic pseudo-random function of the *class pattern* of the
/// sequence plus a small per-sequence idiosyncratic term. Players of the
/// same class are nearly interchangeable, which is the regime class-based
/// subsampling assumes.
#[derive(Debug, Clone)]
pub struct ClassPatternUtility {
    class_of: Vec<usize>,
    idiosyncrasy: f64,
    seed: u64,
}

impl ClassPatternUtility {
    pub fn new(class_of: Vec<usize>, idiosyncrasy: f64, seed: u64) -> Result<Self> {
        if class_of.is_empty() {
            return Err(Error::InvalidConfig("game must have at least one player".into()));
        }
        if !(0.0..=1.0).contains(&idiosyncrasy) {
            return Err(Error::InvalidConfig("idiosyncrasy must lie in [0, 1]".into()));
        }
        Ok(Self {
            class_of,
            idiosyncrasy,
            seed,
        })
    }

    pub fn class_of(&self) -> &[usize] {
        &self.class_of
    }

    /// Smallest and largest utility over every sequence of every length —
    /// the game's value range. Exponential scan; fine for `n <= 8`.
    pub fn value_range(&self) -> (f64, f64) {
        let n = self.class_of.len();
        let mut lo = 0.0f64; // empty coalition
        let mut hi = 0.0f64;
        for k in 1..=n {
            for seq in (0..n).permutations(k) {
                let v = self
                    .evaluate(&OrderedCoalition::from_distinct(seq))
                    .expect("in-range players");
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo, hi)
    }
}

impl UtilityOracle for ClassPatternUtility {
    fn n_players(&self) -> usize {
        self.class_of.len()
    }

    fn evaluate(&self, coalition: &OrderedCoalition) -> Result<f64> {
        if coalition.is_empty() {
            return Ok(0.0);
        }
        for p in coalition.iter() {
            if p >= self.class_of.len() {
                return Err(Error::Oracle(format!("player {p} out of range")));
            }
        }
        let pattern = hash_sequence(
            self.seed,
            coalition.iter().map(|p| self.class_of[p] as u64 + 1),
        );
        let noise = hash_sequence(self.seed ^ 0xA5A5_5A5A, coalition.iter().map(|p| p as u64 + 1));
        Ok((1.0 - self.idiosyncrasy) * unit_from_hash(pattern)
            + self.idiosyncrasy * unit_from_hash(noise))
    }
}

/// Populates a [`TableUtility`] with a deterministic pseudo-random value in
/// `[0, 1)` for every sequence of every length. Exponential in `n`.
pub fn random_full_table(n: usize, seed: u64) -> Result<TableUtility> {
    if n == 0 || n > 8 {
        return Err(Error::InvalidConfig(format!(
            "random full table supports 1..=8 players, got {n}"
        )));
    }
    let mut entries = Vec::new();
    for k in 1..=n {
        for seq in (0..n).permutations(k) {
            let coalition = OrderedCoalition::from_distinct(seq);
            let v = unit_from_hash(hash_sequence(seed, coalition.iter().map(|p| p as u64 + 1)));
            entries.push((coalition, v));
        }
    }
    TableUtility::new(n, entries, 0.0)
}

/// Constructor selector for the synthetic game families.
#[derive(Debug, Clone)]
pub enum SyntheticKind {
    /// Explicit per-sequence values.
    Table {
        n: usize,
        entries: Vec<(OrderedCoalition, f64)>,
        empty_value: f64,
    },
    /// Every sequence valued by a seeded uniform draw.
    RandomTable { n: usize },
    /// `U = sum_j w[j] * v[seq[j]]`.
    PositionalLinear {
        position_weights: Vec<f64>,
        player_values: Vec<f64>,
    },
    /// Order-invariant `U = sum of member values`.
    Additive { player_values: Vec<f64> },
    /// Order-invariant `U = f(|S|)`.
    SizeValued { per_size: Vec<f64> },
    /// Class-pattern game with a per-sequence idiosyncratic term.
    ClassPattern {
        class_of: Vec<usize>,
        idiosyncrasy: f64,
    },
}

pub fn make_synthetic_utility(kind: SyntheticKind, seed: u64) -> Result<Box<dyn UtilityOracle>> {
    Ok(match kind {
        SyntheticKind::Table {
            n,
            entries,
            empty_value,
        } => Box::new(TableUtility::new(n, entries, empty_value)?),
        SyntheticKind::RandomTable { n } => Box::new(random_full_table(n, seed)?),
        SyntheticKind::PositionalLinear {
            position_weights,
            player_values,
        } => Box::new(PositionalLinearUtility::new(position_weights, player_values)?),
        SyntheticKind::Additive { player_values } => Box::new(AdditiveUtility::new(player_values)?),
        SyntheticKind::SizeValued { per_size } => Box::new(CoalitionSizeUtility::new(per_size)?),
        SyntheticKind::ClassPattern {
            class_of,
            idiosyncrasy,
        } => Box::new(ClassPatternUtility::new(class_of, idiosyncrasy, seed)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{classic_shapley, partial_ordinal_shapley, partial_ordinal_shapley_subset_form};

    #[test]
    fn positional_linear_closed_form_matches_enumeration() {
        let game = PositionalLinearUtility::new(
            vec![2.0, 1.0, 0.5, 0.25, 3.0],
            vec![1.0, 0.4, 2.0, 0.9, 1.5],
        )
        .unwrap();
        let expected = game.exact_partial_ordinal_values();
        let solved = partial_ordinal_shapley(&game, 5).unwrap();
        let subset = partial_ordinal_shapley_subset_form(&game, 5).unwrap();
        for i in 0..5 {
            assert!((solved.values[i] - expected[i]).abs() < 1e-9);
            assert!((subset.values[i] - expected[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn equal_position_weights_are_order_invariant() {
        let game =
            PositionalLinearUtility::new(vec![1.5; 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let classic = classic_shapley(&game, 4).unwrap();
        let partial = partial_ordinal_shapley(&game, 4).unwrap();
        for i in 0..4 {
            assert!((classic.values[i] - partial.values[i]).abs() < 1e-10);
            assert!((classic.values[i] - 1.5 * (i + 1) as f64).abs() < 1e-10);
        }
    }

    #[test]
    fn additive_reduction_fixture() {
        let game = AdditiveUtility::new(vec![0.5, 1.5, 2.5]).unwrap();
        let classic = classic_shapley(&game, 3).unwrap();
        let partial = partial_ordinal_shapley(&game, 3).unwrap();
        for i in 0..3 {
            assert!((classic.values[i] - partial.values[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn random_table_reproduces_for_a_seed() {
        let a = random_full_table(4, 9).unwrap();
        let b = random_full_table(4, 9).unwrap();
        let seq: OrderedCoalition = "2,0,3".parse().unwrap();
        assert_eq!(a.evaluate(&seq).unwrap(), b.evaluate(&seq).unwrap());
        let c = random_full_table(4, 10).unwrap();
        assert_ne!(a.evaluate(&seq).unwrap(), c.evaluate(&seq).unwrap());
    }

    #[test]
    fn class_pattern_players_of_same_class_are_near_duplicates() {
        let game = ClassPatternUtility::new(vec![0, 0, 1, 1], 0.0, 3).unwrap();
        // With zero idiosyncrasy, swapping two same-class players changes nothing.
        let a: OrderedCoalition = "0,2,1".parse().unwrap();
        let b: OrderedCoalition = "1,2,0".parse().unwrap();
        assert_eq!(game.evaluate(&a).unwrap(), game.evaluate(&b).unwrap());
        // Different classes generally differ.
        let c: OrderedCoalition = "2,0,1".parse().unwrap();
        assert_ne!(game.evaluate(&a).unwrap(), game.evaluate(&c).unwrap());
    }

    #[test]
    fn table_kind_reproduces_hand_fixture() {
        let kind = SyntheticKind::Table {
            n: 2,
            entries: vec![
                ("0".parse().unwrap(), 1.0),
                ("1".parse().unwrap(), 2.0),
                ("0,1".parse().unwrap(), 4.0),
                ("1,0".parse().unwrap(), 3.0),
            ],
            empty_value: 0.0,
        };
        let game = make_synthetic_utility(kind, 0).unwrap();
        let values = partial_ordinal_shapley(&game, 2).unwrap();
        assert!((values.values[0] - 1.0).abs() < 1e-12);
        assert!((values.values[1] - 2.5).abs() < 1e-12);
    }
}
