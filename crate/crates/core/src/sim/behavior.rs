use serde::{Deserialize, Serialize};

use super::{Result, SimError};

/// Hard floor on any commanded deceleration.
pub const MAX_DECEL: f64 = 9.0;

/// Intelligent Driver Model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// Desired speed, m/s.
    pub v0: f64,
    /// Time headway, s.
    pub time_headway: f64,
    pub a_max: f64,
    /// Comfortable deceleration, m/s^2.
    pub b: f64,
    /// Jam distance, m.
    pub s0: f64,
    pub delta: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self { v0: 33.3, time_headway: 1.5, a_max: 1.5, b: 2.0, s0: 2.0, delta: 4.0 }
    }
}

impl IdmParams {
    pub fn cyclist() -> Self {
        Self { v0: 5.5, time_headway: 1.0, a_max: 1.0, b: 1.5, s0: 1.0, delta: 4.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.v0, self.time_headway, self.a_max, self.b, self.s0];
        if positive.iter().any(|x| !(*x > 0.0)) || !(self.delta >= 1.0) {
            return Err(SimError::Domain(format!("invalid IDM parameters {self:?}")));
        }
        Ok(())
    }

    /// Desired dynamic gap s*.
    pub fn desired_gap(&self, v: f64, v_lead: f64) -> f64 {
        self.s0 + v * self.time_headway + v * (v - v_lead) / (2.0 * (self.a_max * self.b).sqrt())
    }
}

/// MOBIL lane-change parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneChangeParams {
    pub politeness: f64,
    /// Minimum net acceleration gain, m/s^2.
    pub threshold: f64,
    /// Largest deceleration a change may impose on the new follower, m/s^2 (positive).
    pub safe_decel: f64,
    pub cooldown_s: f64,
    pub blend_s: f64,
}

impl Default for LaneChangeParams {
    fn default() -> Self {
        Self { politeness: 0.3, threshold: 0.2, safe_decel: 4.0, cooldown_s: 2.0, blend_s: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorParams {
    pub vehicle: IdmParams,
    pub cyclist: IdmParams,
    pub lane_change: LaneChangeParams,
    pub pedestrian_walk_speed: f64,
    /// Gap a pedestrian needs before stepping onto a road, s.
    pub pedestrian_gap_s: f64,
    /// Spread of per-driver desired-speed factors around 1.
    pub speed_factor_spread: f64,
}

impl Default for BehaviorParams {
    fn default() -> Self {
        Self {
            vehicle: IdmParams::default(),
            cyclist: IdmParams::cyclist(),
            lane_change: LaneChangeParams::default(),
            pedestrian_walk_speed: 1.4,
            pedestrian_gap_s: 4.0,
            speed_factor_spread: 0.1,
        }
    }
}

impl BehaviorParams {
    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        self.cyclist.validate()?;
        let lc = &self.lane_change;
        if !(0.0..=1.0).contains(&lc.politeness) || !(lc.threshold > 0.0) || !(lc.safe_decel > 0.0) {
            return Err(SimError::Domain(format!("invalid lane-change parameters {lc:?}")));
        }
        if !(self.pedestrian_walk_speed > 0.0) || !(self.pedestrian_gap_s > 0.0) {
            return Err(SimError::Domain("pedestrian parameters must be positive".into()));
        }
        Ok(())
    }
}

/// IDM acceleration, clamped to `[-9, a_max]`. Pass `f64::INFINITY` as `gap` for a free road.
pub fn idm_acceleration(v: f64, v_lead: f64, gap: f64, p: &IdmParams) -> Result<f64> {
    if !(gap > 0.0) {
        return Err(SimError::Domain(format!("gap must be positive, got {gap}")));
    }
    if !(v >= 0.0) {
        return Err(SimError::Domain(format!("speed must be non-negative, got {v}")));
    }
    Ok(idm_raw(v, v_lead, gap, p))
}

pub(crate) fn idm_raw(v: f64, v_lead: f64, gap: f64, p: &IdmParams) -> f64 {
    let free = (v / p.v0).powf(p.delta);
    let interaction = if gap.is_finite() {
        let s_star = p.desired_gap(v, v_lead).max(0.0);
        (s_star / gap.max(1e-3)).powi(2)
    } else {
        0.0
    };
    (p.a_max * (1.0 - free - interaction)).clamp(-MAX_DECEL, p.a_max)
}

/// Pluggable car-following law.
pub trait BehaviorModel: Send + Sync {
    fn acceleration(&self, v: f64, v_lead: f64, gap: f64, p: &IdmParams) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Idm;

impl BehaviorModel for Idm {
    fn acceleration(&self, v: f64, v_lead: f64, gap: f64, p: &IdmParams) -> f64 {
        idm_raw(v, v_lead, gap, p)
    }
}

/// A vehicle relative to the deciding one: bumper-to-bumper gap and speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub gap: f64,
    pub v: f64,
}

/// Surroundings in one candidate lane.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LaneOption {
    pub leader: Option<Neighbor>,
    /// Would-be follower; `gap` is its distance to the deciding vehicle.
    pub follower: Option<Neighbor>,
    /// The would-be follower's current leader, as seen from that follower.
    pub follower_leader: Option<Neighbor>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneChangeSituation {
    pub v: f64,
    /// Length of the deciding vehicle, m.
    pub length: f64,
    pub params: IdmParams,
    pub current_leader: Option<Neighbor>,
    /// Current follower and its gap to the deciding vehicle.
    pub current_follower: Option<Neighbor>,
    pub left: Option<LaneOption>,
    pub right: Option<LaneOption>,
    /// Forced direction (lane closure); only the safety test applies.
    pub mandatory_left: bool,
    pub mandatory_right: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneDecision {
    Keep,
    Left,
    Right,
}

fn accel_behind(v: f64, leader: Option<Neighbor>, p: &IdmParams) -> f64 {
    match leader {
        Some(l) => idm_raw(v, l.v, l.gap, p),
        None => idm_raw(v, v, f64::INFINITY, p),
    }
}

/// MOBIL-style decision; left is evaluated before right. Followers are assumed to share
/// the deciding vehicle's IDM parameters.
pub fn lane_change_decision(s: &LaneChangeSituation, lc: &LaneChangeParams) -> LaneDecision {
    let p = &s.params;
    let a_self = accel_behind(s.v, s.current_leader, p);
    let (a_old_follower, a_old_follower_after) = match s.current_follower {
        Some(f) => {
            let before = idm_raw(f.v, s.v, f.gap, p);
            let after = match s.current_leader {
                Some(l) => idm_raw(f.v, l.v, f.gap + l.gap + s.length, p),
                None => idm_raw(f.v, f.v, f64::INFINITY, p),
            };
            (before, after)
        }
        None => (0.0, 0.0),
    };
    for (opt, decision, mandatory) in [
        (s.left, LaneDecision::Left, s.mandatory_left),
        (s.right, LaneDecision::Right, s.mandatory_right),
    ] {
        let Some(o) = opt else { continue };
        if o.leader.is_some_and(|l| l.gap <= 0.0) || o.follower.is_some_and(|f| f.gap <= 0.0) {
            continue;
        }
        let (a_new_follower, a_new_follower_before) = match o.follower {
            Some(f) => (idm_raw(f.v, s.v, f.gap, p), accel_behind(f.v, o.follower_leader, p)),
            None => (0.0, 0.0),
        };
        if a_new_follower < -lc.safe_decel {
            continue;
        }
        let a_self_new = accel_behind(s.v, o.leader, p);
        if a_self_new < -lc.safe_decel {
            continue;
        }
        if mandatory {
            return decision;
        }
        let gain = a_self_new - a_self
            + lc.politeness * ((a_new_follower - a_new_follower_before) + (a_old_follower_after - a_old_follower));
        if gain > lc.threshold {
            return decision;
        }
    }
    LaneDecision::Keep
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_params() -> IdmParams {
        IdmParams { v0: 30.0, time_headway: 1.5, a_max: 2.0, b: 3.0, s0: 2.0, delta: 4.0 }
    }

    #[test]
    fn free_road_from_standstill_is_full_acceleration() {
        let p = example_params();
        assert_eq!(idm_acceleration(0.0, 0.0, f64::INFINITY, &p).unwrap(), p.a_max);
    }

    #[test]
    fn standing_equilibrium_is_zero() {
        let p = example_params();
        assert_eq!(idm_acceleration(0.0, 0.0, p.s0, &p).unwrap(), 0.0);
    }

    #[test]
    fn worked_example() {
        let p = example_params();
        let s_star = p.desired_gap(20.0, 15.0);
        assert!((s_star - 52.4124).abs() < 1e-4);
        let a = idm_acceleration(20.0, 15.0, 30.0, &p).unwrap();
        assert!((a + 4.499).abs() < 1e-3, "{a}");
    }

    #[test]
    fn rejects_non_positive_gap() {
        assert!(idm_acceleration(1.0, 1.0, 0.0, &IdmParams::default()).is_err());
    }

    #[test]
    fn no_options_keeps_lane() {
        let s = LaneChangeSituation {
            v: 10.0,
            length: 4.5,
            params: IdmParams::default(),
            current_leader: Some(Neighbor { gap: 5.0, v: 10.0 }),
            current_follower: None,
            left: None,
            right: None,
            mandatory_left: false,
            mandatory_right: false,
        };
        assert_eq!(lane_change_decision(&s, &LaneChangeParams::default()), LaneDecision::Keep);
    }
}
