//! Model constants shared by the microscopic and kinetic descriptions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interaction and self-propulsion constants.
///
/// Field names spell out the role of each constant; the preset constructors
/// carry the values used by the four reference settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Number of neighbours defining the topological alignment ball.
    pub n_topo: usize,
    /// Repulsion strength felt by followers (from followers and leaders).
    pub c_rep_follower: f64,
    /// Repulsion strength felt by leaders, applied as a velocity.
    pub c_rep_leader: f64,
    /// Alignment strength.
    pub c_align: f64,
    /// Relaxation rate toward the random exploration velocity.
    pub c_noise: f64,
    /// Relaxation rate toward the unit vector pointing at the target.
    pub c_target: f64,
    /// Strength of the relaxation toward the characteristic speed.
    pub c_speed: f64,
    /// Squared characteristic speed.
    pub speed_sq: f64,
    /// Support radius of both repulsion kernels.
    pub repulsion_radius: f64,
    /// Decay exponent of the leader repulsion kernel.
    pub zeta: f64,
    /// Decay exponent of the follower repulsion kernel.
    pub gamma: f64,
    /// Variance of each component of the exploration velocity draw.
    pub noise_var: f64,
    /// Microscopic time step.
    pub dt: f64,
    /// Follower speed cap applied after each integration step.
    #[serde(default = "default_v_max")]
    pub v_max: f64,
}

fn default_v_max() -> f64 {
    10.0
}

/// Default exploration noise variance. Not fixed by the reference settings;
/// chosen so that unguided groups drift apart on the time scale of the
/// evacuation experiments while leader-driven consensus remains possible.
pub const DEFAULT_NOISE_VAR: f64 = 4.0;

impl ModelParams {
    /// Setting 0: herding test far from any exit.
    pub fn setting0() -> Self {
        Self {
            n_topo: 10,
            c_rep_follower: 2.0,
            c_rep_leader: 1.5,
            c_align: 2.0,
            c_noise: 0.25,
            c_target: 0.0,
            c_speed: 1.0,
            speed_sq: 0.5,
            repulsion_radius: 0.4,
            zeta: 0.4,
            gamma: 1.0,
            noise_var: DEFAULT_NOISE_VAR,
            dt: 0.1,
            v_max: default_v_max(),
        }
    }

    /// Setting 1: open room with a point exit.
    pub fn setting1() -> Self {
        Self {
            c_align: 3.0,
            c_noise: 0.2,
            c_target: 1.0,
            ..Self::setting0()
        }
    }

    /// Setting 2: room with three walls, exit outside the room.
    pub fn setting2() -> Self {
        Self::setting1()
    }

    /// Setting 3: bottleneck door, exit visible everywhere.
    pub fn setting3() -> Self {
        Self {
            n_topo: 10,
            c_rep_follower: 1.0,
            c_rep_leader: 0.0,
            c_align: 0.0,
            c_noise: 0.0,
            c_target: 1.0,
            c_speed: 1.0,
            speed_sq: 0.5,
            repulsion_radius: 0.5,
            zeta: 0.5,
            gamma: 1.0,
            noise_var: 0.0,
            dt: 0.1,
            v_max: default_v_max(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_topo == 0 {
            return Err(Error::invalid("n_topo", "must be a positive integer"));
        }
        let non_negative = [
            ("c_rep_follower", self.c_rep_follower),
            ("c_rep_leader", self.c_rep_leader),
            ("c_align", self.c_align),
            ("c_noise", self.c_noise),
            ("c_target", self.c_target),
            ("c_speed", self.c_speed),
            ("speed_sq", self.speed_sq),
            ("noise_var", self.noise_var),
        ];
        for (name, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::invalid(name, format!("must be finite and >= 0, got {value}")));
            }
        }
        let positive = [
            ("repulsion_radius", self.repulsion_radius),
            ("zeta", self.zeta),
            ("gamma", self.gamma),
            ("dt", self.dt),
            ("v_max", self.v_max),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::invalid(name, format!("must be finite and > 0, got {value}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn setting1_row() {
        let p = ModelParams::setting1();
        assert_eq!(p.n_topo, 10);
        assert_eq!(
            (p.c_rep_follower, p.c_rep_leader, p.c_align, p.c_noise, p.c_target, p.c_speed),
            (2.0, 1.5, 3.0, 0.2, 1.0, 1.0)
        );
        assert_eq!((p.speed_sq, p.repulsion_radius, p.zeta, p.gamma), (0.5, 0.4, 0.4, 1.0));
        assert_eq!(p.dt, 0.1);
    }

    #[test]
    fn setting3_row() {
        let p = ModelParams::setting3();
        assert_eq!((p.c_rep_follower, p.c_rep_leader), (1.0, 0.0));
        assert_eq!((p.repulsion_radius, p.zeta, p.gamma), (0.5, 0.5, 1.0));
        p.validate().unwrap();
    }

    #[test]
    fn rejects_negative_and_zero() {
        let mut p = ModelParams::setting1();
        p.c_align = -1.0;
        assert!(p.validate().is_err());
        let mut p = ModelParams::setting1();
        p.dt = 0.0;
        assert!(p.validate().is_err());
        let mut p = ModelParams::setting1();
        p.n_topo = 0;
        assert!(p.validate().is_err());
    }
}
