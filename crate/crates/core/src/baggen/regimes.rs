//! Bag-size and proportion regimes for binary datasets: equal or unequal
//! sizes; bags close to, far from, or alternating around the global proportion.

use serde::{Deserialize, Serialize};

use crate::dataset::largest_remainder;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SizeRegime {
    Equal,
    NotEqual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProportionRegime {
    CloseGlobal,
    FarGlobal,
    Mixed,
}

impl SizeRegime {
    pub const ALL: [SizeRegime; 2] = [SizeRegime::Equal, SizeRegime::NotEqual];

    pub fn name(self) -> &'static str {
        match self {
            SizeRegime::Equal => "equal",
            SizeRegime::NotEqual => "not-equal",
        }
    }
}

impl ProportionRegime {
    pub const ALL: [ProportionRegime; 3] = [
        ProportionRegime::CloseGlobal,
        ProportionRegime::FarGlobal,
        ProportionRegime::Mixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProportionRegime::CloseGlobal => "close-global",
            ProportionRegime::FarGlobal => "far-global",
            ProportionRegime::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeConfig {
    /// Largest deviation from the global proportion of a close bag.
    pub close_delta: f64,
    /// Preferred deviation of a far bag.
    pub far_delta: f64,
    /// Smallest deviation of a far bag.
    pub far_min: f64,
    /// Bounds on every positive-class proportion.
    pub clamp: [f64; 2],
}

impl Default for RegimeConfig {
    fn default() -> Self {
        Self {
            close_delta: 0.05,
            far_delta: 0.3,
            far_min: 0.2,
            clamp: [0.05, 0.95],
        }
    }
}

/// Equal sizes, or sizes proportional to `1, 2, ..., L`.
pub fn bag_sizes(regime: SizeRegime, n_items: usize, n_bags: usize) -> Result<Vec<usize>> {
    if n_bags == 0 || n_items < n_bags {
        return Err(Error::InvalidArgument(format!(
            "{n_items} items cannot fill {n_bags} bags"
        )));
    }
    let weights: Vec<f64> = match regime {
        SizeRegime::Equal => vec![1.0; n_bags],
        SizeRegime::NotEqual => (1..=n_bags).map(|k| k as f64).collect(),
    };
    let total: f64 = weights.iter().sum();
    let targets: Vec<f64> = weights.iter().map(|w| w / total * n_items as f64).collect();
    let sizes = largest_remainder(&targets, n_items);
    if sizes.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "{n_items} items leave an empty bag"
        )));
    }
    Ok(sizes)
}

/// Binary proportion rows `[1 - p_l, p_l]` whose size-weighted mean equals
/// the global positive rate `positives / N` exactly.
///
/// Close bags deviate by at most `close_delta`; far bags by at least
/// `far_min`. Mixed alternates far (even index) and close (odd index)
/// bags. Far signs alternate; close bags all sit on the side the far bags
/// leave lighter, or alternate when there are none. The heavier side is
/// shrunk, then the lighter one stretched, until the weighted deviations
/// cancel.
pub fn proportions(
    regime: ProportionRegime,
    sizes: &[usize],
    positives: usize,
    cfg: &RegimeConfig,
) -> Result<Vec<Vec<f64>>> {
    let n: usize = sizes.iter().sum();
    if n == 0 || positives > n {
        return Err(Error::InvalidArgument(
            "positive count exceeds item count".into(),
        ));
    }
    let pi = positives as f64 / n as f64;
    let far: Vec<bool> = (0..sizes.len())
        .map(|b| match regime {
            ProportionRegime::CloseGlobal => false,
            ProportionRegime::FarGlobal => true,
            ProportionRegime::Mixed => b % 2 == 0,
        })
        .collect();
    // magnitude bounds per bag: far bags keep at least `far_min`, every bag stays in the clamp
    let mut rank = [0usize; 2];
    let signs: Vec<f64> = far
        .iter()
        .map(|&f| {
            let k = &mut rank[f as usize];
            *k += 1;
            if *k % 2 == 1 {
                1.0
            } else {
                -1.0
            }
        })
        .collect();
    // with far bags present, every close bag leans against their imbalance
    let far_net: f64 = far
        .iter()
        .zip(&signs)
        .zip(sizes)
        .filter(|((f, _), _)| **f)
        .map(|((_, s), &n)| s * n as f64)
        .sum();
    let lean = if far_net > 0.0 {
        Some(-1.0)
    } else if far_net < 0.0 {
        Some(1.0)
    } else {
        None
    };
    let mut bags: Vec<(f64, f64, f64, f64)> = Vec::with_capacity(sizes.len());
    for (&f, &sign) in far.iter().zip(&signs) {
        let sign = if f { sign } else { lean.unwrap_or(sign) };
        let room = if sign > 0.0 {
            cfg.clamp[1] - pi
        } else {
            pi - cfg.clamp[0]
        };
        let (lo, hi, want) = if f {
            (cfg.far_min, room, cfg.far_delta)
        } else {
            (0.0, cfg.close_delta.min(room), cfg.close_delta)
        };
        if hi < lo || hi < 0.0 {
            return Err(infeasible(regime, pi));
        }
        bags.push((sign, lo, hi, want.clamp(lo, hi)));
    }
    let side = |bags: &[(f64, f64, f64, f64)], pos: bool| -> f64 {
        bags.iter()
            .zip(sizes)
            .filter(|((sign, ..), _)| (*sign > 0.0) == pos)
            .map(|((.., m), &s)| m * s as f64)
            .sum()
    };
    let gap = side(&bags, true) - side(&bags, false);
    if gap != 0.0 {
        // shrink the heavier side toward its lower bounds, then stretch the lighter one
        let heavy = gap > 0.0;
        let mut rest = gap.abs();
        for (shrink, pos) in [(true, heavy), (false, !heavy)] {
            let cap: f64 = bags
                .iter()
                .zip(sizes)
                .filter(|((sign, ..), _)| (*sign > 0.0) == pos)
                .map(|(&(_, lo, hi, m), &s)| s as f64 * if shrink { m - lo } else { hi - m })
                .sum();
            if cap <= 0.0 || rest <= 0.0 {
                continue;
            }
            let take = rest.min(cap);
            for b in bags.iter_mut().filter(|b| (b.0 > 0.0) == pos) {
                let (_, lo, hi, m) = *b;
                b.3 = if shrink {
                    m - (m - lo) * take / cap
                } else {
                    m + (hi - m) * take / cap
                };
            }
            rest -= take;
        }
        if rest > 1e-9 * n as f64 {
            return Err(infeasible(regime, pi));
        }
    }
    let dev: Vec<f64> = bags.iter().map(|&(sign, _, _, m)| sign * m).collect();
    Ok(dev.iter().map(|v| vec![1.0 - (pi + v), pi + v]).collect())
}

fn infeasible(regime: ProportionRegime, pi: f64) -> Error {
    Error::Infeasible {
        bag: None,
        class: 1,
        reason: format!("{} regime cannot be balanced around {pi:.3}", regime.name()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean(rows: &[Vec<f64>], sizes: &[usize]) -> f64 {
        let n: usize = sizes.iter().sum();
        rows.iter()
            .zip(sizes)
            .map(|(r, &s)| r[1] * s as f64)
            .sum::<f64>()
            / n as f64
    }

    #[test]
    fn sizes() {
        assert_eq!(bag_sizes(SizeRegime::Equal, 10, 3).unwrap(), vec![4, 3, 3]);
        assert_eq!(
            bag_sizes(SizeRegime::NotEqual, 60, 3).unwrap(),
            vec![10, 20, 30]
        );
        assert!(bag_sizes(SizeRegime::Equal, 2, 3).is_err());
    }

    #[test]
    fn far_regime_balanced() {
        let sizes = vec![400; 5];
        let rows = proportions(
            ProportionRegime::FarGlobal,
            &sizes,
            1000,
            &RegimeConfig::default(),
        )
        .unwrap();
        assert!((mean(&rows, &sizes) - 0.5).abs() < 1e-12);
        let p: Vec<f64> = rows.iter().map(|r| r[1]).collect();
        for (a, b) in p.iter().zip([0.7, 0.2, 0.7, 0.2, 0.7]) {
            assert!((a - b).abs() < 1e-12, "{p:?}");
        }
        for r in &rows {
            assert!((r[1] - 0.5).abs() >= 0.2 - 1e-12);
            assert!((0.05..=0.95).contains(&r[1]));
        }
    }

    #[test]
    fn close_and_mixed() {
        let sizes = vec![100, 200, 300, 400];
        for regime in [ProportionRegime::CloseGlobal, ProportionRegime::Mixed] {
            let rows = proportions(regime, &sizes, 300, &RegimeConfig::default()).unwrap();
            assert!((mean(&rows, &sizes) - 0.3).abs() < 1e-12, "{regime:?}");
        }
        let rows = proportions(
            ProportionRegime::CloseGlobal,
            &sizes,
            300,
            &RegimeConfig::default(),
        )
        .unwrap();
        assert!(rows.iter().all(|r| (r[1] - 0.3).abs() <= 0.05 + 1e-12));
    }

    #[test]
    fn unbalanced_far_is_infeasible() {
        // global 0.1: no room below for a far bag
        assert!(proportions(
            ProportionRegime::FarGlobal,
            &[50, 50],
            10,
            &RegimeConfig::default()
        )
        .is_err());
    }
}
