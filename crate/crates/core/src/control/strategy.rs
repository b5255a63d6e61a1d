//! Leader strategy representations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Rect, Vector2};

use super::cost::CostWeights;
use super::mpc::MpcConfig;

/// Unit vector from `y` toward `target`; zero at the target.
pub fn go_to_target(y: Vector2, target: Vector2) -> Vector2 {
    (target - y).normalized_or_zero()
}

/// Leaders keep a constant velocity during each switching interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewiseConstant {
    /// Length of a slot, in simulation steps.
    pub switch_interval: usize,
    /// `velocities[slot][leader]`.
    pub velocities: Vec<Vec<Vector2>>,
    /// Box bound: every component lies in `[-u_bound, u_bound]`.
    pub u_bound: f64,
}

impl PiecewiseConstant {
    pub fn new(switch_interval: usize, velocities: Vec<Vec<Vector2>>, u_bound: f64) -> Result<Self> {
        let s = Self { switch_interval, velocities, u_bound };
        s.check_shape()?;
        Ok(s)
    }

    /// Constant velocity along the direction from each initial leader
    /// position to the target, scaled to `speed` and clipped to the box.
    pub fn toward_target(
        leader_positions: &[Vector2],
        target: Vector2,
        switch_interval: usize,
        horizon_steps: usize,
        speed: f64,
        u_bound: f64,
    ) -> Result<Self> {
        if switch_interval == 0 {
            return Err(Error::invalid("strategy.switch_interval", "must be positive"));
        }
        let slots = horizon_steps.div_ceil(switch_interval).max(1);
        let row: Vec<Vector2> =
            leader_positions.iter().map(|&y| (go_to_target(y, target) * speed).clamp_box(u_bound)).collect();
        Self::new(switch_interval, vec![row; slots], u_bound)
    }

    fn check_shape(&self) -> Result<()> {
        if self.switch_interval == 0 {
            return Err(Error::invalid("strategy.switch_interval", "must be positive"));
        }
        if !(self.u_bound > 0.0 && self.u_bound.is_finite()) {
            return Err(Error::invalid("strategy.u_bound", "must be positive"));
        }
        if self.velocities.is_empty() {
            return Err(Error::invalid("strategy.velocities", "needs at least one slot"));
        }
        let n = self.velocities[0].len();
        for (i, row) in self.velocities.iter().enumerate() {
            if row.len() != n {
                return Err(Error::invalid(format!("strategy.velocities[{i}]"), "rows must all have one entry per leader"));
            }
            for (k, u) in row.iter().enumerate() {
                if !u.is_finite() || u.x.abs() > self.u_bound || u.y.abs() > self.u_bound {
                    return Err(Error::invalid(format!("strategy.velocities[{i}][{k}]"), "outside the admissible box"));
                }
            }
        }
        Ok(())
    }

    /// Checks the matrix against a leader count and a horizon.
    pub fn validate(&self, leaders: usize, horizon_steps: usize) -> Result<()> {
        self.check_shape()?;
        if self.leaders() != leaders {
            return Err(Error::ControlDimension { expected: leaders, got: self.leaders() });
        }
        if self.slots() * self.switch_interval < horizon_steps {
            return Err(Error::invalid(
                "strategy.velocities",
                format!(
                    "{} slots of {} steps do not cover the horizon of {horizon_steps} steps",
                    self.slots(),
                    self.switch_interval
                ),
            ));
        }
        Ok(())
    }

    pub fn slots(&self) -> usize {
        self.velocities.len()
    }

    pub fn leaders(&self) -> usize {
        self.velocities.first().map_or(0, Vec::len)
    }

    /// Slot active at `step`; the last slot persists past the end.
    pub fn slot_at(&self, step: u64) -> usize {
        ((step / self.switch_interval as u64) as usize).min(self.slots() - 1)
    }

    pub fn controls_at(&self, step: u64) -> &[Vector2] {
        &self.velocities[self.slot_at(step)]
    }

    /// Number of scalar decision variables.
    pub fn dimension(&self) -> usize {
        self.slots() * self.leaders() * 2
    }
}

/// How leaders choose their control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LeaderStrategy {
    /// Zero control: leaders only react to repulsion.
    Idle,
    PiecewiseConstant(PiecewiseConstant),
    /// Unit velocity toward the target from the current position.
    GoToTarget,
    /// Receding-horizon optimization of the running cost.
    Mpc { config: MpcConfig, weights: CostWeights },
    /// Each component uniform in `[-amplitude, amplitude]`, leaders kept in
    /// the scenario's leader region by reflection.
    SmartObstacle { amplitude: f64 },
}

/// Random velocity of a smart obstacle; a component that would carry the
/// leader out of `region` within one step is reversed.
pub fn smart_obstacle_control<R: Rng + ?Sized>(
    y: Vector2,
    amplitude: f64,
    region: Option<&Rect>,
    dt: f64,
    rng: &mut R,
) -> Vector2 {
    let mut u = Vector2::new(rng.random_range(-amplitude..=amplitude), rng.random_range(-amplitude..=amplitude));
    if let Some(r) = region {
        let next = y + u * dt;
        if (next.x < r.min.x && u.x < 0.0) || (next.x > r.max.x && u.x > 0.0) {
            u.x = -u.x;
        }
        if (next.y < r.min.y && u.y < 0.0) || (next.y > r.max.y && u.y > 0.0) {
            u.y = -u.y;
        }
    }
    u
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;

    fn v(x: f64, y: f64) -> Vector2 {
        Vector2::new(x, y)
    }

    #[test]
    fn go_to_target_examples() {
        assert_eq!(go_to_target(v(29.0, 10.0), v(30.0, 10.0)), v(1.0, 0.0));
        assert_eq!(go_to_target(v(30.0, 10.0), v(30.0, 10.0)), Vector2::ZERO);
        let u = go_to_target(v(27.0, 7.0), v(30.0, 11.0));
        assert!((u.x - 0.6).abs() < 1e-15 && (u.y - 0.8).abs() < 1e-15);
    }

    #[test]
    fn slots_and_validation() {
        let s = PiecewiseConstant::toward_target(&[v(0.0, 0.0), v(0.0, 1.0)], v(10.0, 0.0), 20, 100, 1.0, 1.0).unwrap();
        assert_eq!(s.slots(), 5);
        assert_eq!(s.dimension(), 20);
        assert_eq!(s.slot_at(0), 0);
        assert_eq!(s.slot_at(39), 1);
        assert_eq!(s.slot_at(1000), 4);
        assert!(s.validate(2, 100).is_ok());
        assert!(s.validate(2, 101).is_err());
        assert!(matches!(s.validate(3, 100), Err(Error::ControlDimension { .. })));
        assert!(PiecewiseConstant::new(20, vec![vec![v(2.0, 0.0)]], 1.0).is_err());
    }

    #[test]
    fn smart_obstacle_stays_in_region() {
        let region = Rect::new(v(0.0, 0.0), v(1.0, 1.0));
        let mut rng = RandomSource::new(5).stream(&[0]);
        let mut y = v(0.5, 0.5);
        for _ in 0..10_000 {
            let u = smart_obstacle_control(y, 1.3, Some(&region), 0.1, &mut rng);
            assert!(u.x.abs() <= 1.3 && u.y.abs() <= 1.3);
            y = y + u * 0.1;
            assert!(region.contains(y), "{y:?}");
        }
    }
}
