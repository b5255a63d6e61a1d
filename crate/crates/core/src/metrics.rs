//! Evacuation observables and replicate statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vector2;
use crate::micro::CrowdState;
use crate::scenario::{Region, Scenario};

/// Anything that carries an amount of followers: a head count at the
/// microscopic scale, a mass at the kinetic scale.
pub trait FollowerPopulation {
    fn active_amount(&self) -> f64;
    fn amount_in(&self, region: &Region) -> f64;
}

impl FollowerPopulation for CrowdState {
    fn active_amount(&self) -> f64 {
        self.active_follower_count() as f64
    }

    fn amount_in(&self, region: &Region) -> f64 {
        self.active_followers().filter(|f| region.contains(f.position)).count() as f64
    }
}

/// Active followers (count or mass) inside the visibility region.
pub fn occupancy_of_sigma<P: FollowerPopulation + ?Sized>(population: &P, scenario: &Scenario) -> f64 {
    population.amount_in(&scenario.visibility)
}

/// `1 - current / initial`, clamped to `[0, 1]`.
pub fn evacuated_fraction<P: FollowerPopulation + ?Sized>(population: &P, initial: f64) -> f64 {
    fraction_gone(population.active_amount(), initial)
}

pub(crate) fn fraction_gone(current: f64, initial: f64) -> f64 {
    if initial <= 0.0 {
        return 0.0;
    }
    (1.0 - current / initial).clamp(0.0, 1.0)
}

/// Order parameter of one time instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Polarization {
    /// `|sum_i v_i/|v_i|| / n`, in `[0, 1]`.
    pub phi: f64,
    /// Mean of the normalized velocities.
    pub mean_heading: Vector2,
    /// Followers at rest, left out of the average.
    pub at_rest: usize,
}

pub fn polarization<I: IntoIterator<Item = Vector2>>(velocities: I) -> Polarization {
    let mut sum = Vector2::ZERO;
    let mut n = 0usize;
    let mut at_rest = 0usize;
    for v in velocities {
        let norm = v.norm();
        if norm > 0.0 {
            sum += v / norm;
            n += 1;
        } else {
            at_rest += 1;
        }
    }
    if at_rest > 0 {
        log::debug!("{at_rest} followers at rest excluded from polarization");
    }
    if n == 0 {
        return Polarization { phi: 0.0, mean_heading: Vector2::ZERO, at_rest };
    }
    let mean = sum / n as f64;
    Polarization { phi: mean.norm(), mean_heading: mean, at_rest }
}

pub fn crowd_polarization(state: &CrowdState) -> Polarization {
    polarization(state.active_followers().map(|f| f.velocity))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusCriteria {
    pub window: usize,
    pub min_polarization: f64,
    pub min_agreement: f64,
}

impl Default for ConsensusCriteria {
    fn default() -> Self {
        Self { window: 50, min_polarization: 0.95, min_agreement: 0.9 }
    }
}

/// True iff for `window` consecutive samples the crowd is polarized and its
/// mean heading points along `direction`.
pub fn consensus_detector(series: &[Polarization], direction: Vector2, criteria: &ConsensusCriteria) -> bool {
    let dir = direction.normalized_or_zero();
    let mut run = 0usize;
    for p in series {
        if p.phi >= criteria.min_polarization && p.mean_heading.dot(dir) >= criteria.min_agreement {
            run += 1;
            if run >= criteria.window {
                return true;
            }
        } else {
            run = 0;
        }
    }
    false
}

/// Success rule of the bottleneck experiment: all but `allowance` followers
/// out before the horizon.
pub fn evacuation_succeeded(initial: usize, evacuated: usize, allowance: usize) -> bool {
    evacuated + allowance >= initial
}

/// Fraction of failed replicates.
pub fn failure_rate(successes: &[bool]) -> Result<f64> {
    if successes.is_empty() {
        return Err(Error::NoReplicates);
    }
    Ok(successes.iter().filter(|s| !**s).count() as f64 / successes.len() as f64)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Sample standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Normal-approximation confidence interval of the mean, `z = 1.96`.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let m = mean(values);
    let half = 1.96 * std_dev(values) / (values.len() as f64).sqrt();
    (m - half, m + half)
}

/// Wilson score interval for a binomial proportion at `z = 1.96`.
pub fn wilson_ci95(successes: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.96f64;
    let n = trials as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// One-sided pooled two-proportion z statistic for `p1 < p2`.
/// Values above 1.645 reject equality at the 95% level.
pub fn proportion_z(k1: usize, n1: usize, k2: usize, n2: usize) -> f64 {
    let p1 = k1 as f64 / n1 as f64;
    let p2 = k2 as f64 / n2 as f64;
    let pooled = (k1 + k2) as f64 / (n1 + n2) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    if se == 0.0 {
        return if p2 > p1 { f64::INFINITY } else { 0.0 };
    }
    (p2 - p1) / se
}

/// Per-run report: time series plus scalars.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub dt: f64,
    pub initial_amount: f64,
    /// Step at which the last follower left, if it happened.
    pub evacuation_step: Option<u64>,
    pub steps_run: u64,
    pub final_amount: f64,
    pub evacuated_fraction: f64,
    pub occupancy: Vec<f64>,
    pub evacuated_series: Vec<f64>,
    #[serde(default)]
    pub polarization: Vec<Polarization>,
    #[serde(default)]
    pub consensus: Option<bool>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::micro::FollowerState;

    #[test]
    fn occupancy_counts_active_in_sigma() {
        let s = Scenario::setting1();
        assert_eq!(occupancy_of_sigma(&CrowdState::new(vec![], vec![]), &s), 0.0);
        let mut st = CrowdState::new(
            (0..5).map(|i| FollowerState::new(Vector2::new(29.0 + 0.1 * i as f64, 10.0), Vector2::ZERO)).collect(),
            vec![],
        );
        assert_eq!(occupancy_of_sigma(&st, &s), 5.0);
        st.followers[0].evacuated = true;
        st.followers[1].position = Vector2::new(0.0, 0.0);
        assert_eq!(occupancy_of_sigma(&st, &s), 3.0);
        assert!(occupancy_of_sigma(&st, &s) <= st.active_amount());
    }

    #[test]
    fn fractions() {
        let mut st = CrowdState::new(vec![FollowerState::new(Vector2::ZERO, Vector2::ZERO); 4], vec![]);
        assert_eq!(evacuated_fraction(&st, 4.0), 0.0);
        for f in &mut st.followers {
            f.evacuated = true;
        }
        assert_eq!(evacuated_fraction(&st, 4.0), 1.0);
    }

    #[test]
    fn consensus_cases() {
        let crit = ConsensusCriteria { window: 3, ..Default::default() };
        let aligned = polarization(vec![Vector2::new(1.0, 0.0); 10]);
        assert_eq!(aligned.phi, 1.0);
        assert!(consensus_detector(&[aligned; 3], Vector2::new(1.0, 0.0), &crit));
        assert!(!consensus_detector(&[aligned; 2], Vector2::new(1.0, 0.0), &crit));
        assert!(!consensus_detector(&[aligned; 3], Vector2::new(0.0, 1.0), &crit));
        let split = polarization([Vector2::new(1.0, 0.0), Vector2::new(-1.0, 0.0)].repeat(5));
        assert_eq!(split.phi, 0.0);
        assert!(!consensus_detector(&[split; 10], Vector2::new(1.0, 0.0), &crit));
        let with_rest = polarization(vec![Vector2::new(0.0, 2.0), Vector2::ZERO]);
        assert_eq!(with_rest.at_rest, 1);
        assert_eq!(with_rest.phi, 1.0);
    }

    #[test]
    fn failure_rates() {
        assert_eq!(failure_rate(&[true, true]).unwrap(), 0.0);
        assert_eq!(failure_rate(&[false, false]).unwrap(), 1.0);
        assert!(failure_rate(&[]).is_err());
        assert!(evacuation_succeeded(50, 40, 10));
        assert!(!evacuation_succeeded(50, 39, 10));
    }

    #[test]
    fn statistics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let (lo, hi) = wilson_ci95(50, 100);
        assert!(lo < 0.5 && hi > 0.5 && (hi - lo - 0.192).abs() < 0.01);
        assert!(proportion_z(10, 200, 40, 200) > 1.645);
        assert!(proportion_z(40, 200, 40, 200).abs() < 1e-12);
    }
}
