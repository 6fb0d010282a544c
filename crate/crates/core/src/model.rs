//! Planar tether-force model: geometry, force decomposition, constrained
//! tension allocation, and string-vibration tension planning.
//!
//! Frame convention: origin at the treadmill centre, +x to the runner's
//! right, +y forward. Force direction `beta` is measured in degrees with
//! 0 = right, 90 = forward, 180 = left, 270 = backward.

use crate::vec2::Vec2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Standard gravity, used to scale perturbations to body weight.
pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("participant ({0:.3}, {1:.3}) outside treadmill rectangle")]
    ParticipantOutsideTreadmill(f64, f64),
    #[error("participant within 1 cm of the {0} anchor")]
    DegenerateGeometry(&'static str),
    #[error("no in-bounds tension triple realises {magnitude:.1} N at {beta_deg:.1} deg from ({x:.2}, {y:.2})")]
    Infeasible {
        magnitude: f64,
        beta_deg: f64,
        x: f64,
        y: f64,
    },
    #[error("parameter {0} must be positive")]
    NonPositiveParameter(&'static str),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
}

/// Static scene: treadmill extents, standoff anchors, and tether parameters.
///
/// Serialises with SI-unit-suffixed keys so config files are unambiguous.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Geometry {
    /// Half of the treadmill x-extent (m); belt is `2*half_width` wide.
    #[serde(rename = "treadmill_half_width_m")]
    pub treadmill_half_width: f64,
    /// Half of the treadmill y-extent (m).
    #[serde(rename = "treadmill_half_length_m")]
    pub treadmill_half_length: f64,
    #[serde(rename = "anchor_left_m")]
    pub anchor_left: Vec2,
    #[serde(rename = "anchor_right_m")]
    pub anchor_right: Vec2,
    #[serde(rename = "anchor_back_m")]
    pub anchor_back: Vec2,
    /// Lower tension bound (N). Cables pull only; the floor keeps them taut.
    #[serde(rename = "tension_min_n")]
    pub tension_min: f64,
    /// Upper tension bound (N), set by the winch capacity.
    #[serde(rename = "tension_max_n")]
    pub tension_max: f64,
    /// Baseline tension held between perturbations (N).
    #[serde(rename = "nominal_tension_n")]
    pub nominal_tension: f64,
    #[serde(rename = "tether_length_m")]
    pub tether_length: f64,
    #[serde(rename = "tether_mass_kg")]
    pub tether_mass: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        // 1.8 x 3.25 m belt. Anchor positions are calibrated so the
        // omnidirectional workspace areas at 100/200/300/400 N come out at
        // 2.74/2.07/1.32/0.38 m^2 on the default 0.05 m grid while the
        // belt centre stays inside the 300 N workspace.
        Geometry {
            treadmill_half_width: 0.9,
            treadmill_half_length: 1.625,
            anchor_left: Vec2::new(-1.8, 0.6),
            anchor_right: Vec2::new(1.8, 0.6),
            anchor_back: Vec2::new(0.0, -2.0),
            tension_min: 30.0,
            tension_max: 600.0,
            nominal_tension: 30.0,
            tether_length: 7.0,
            tether_mass: 0.014,
        }
    }
}

impl Geometry {
    /// Check the structural invariants; call after deserialising a config.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.treadmill_half_width <= 0.0 || self.treadmill_half_length <= 0.0 {
            return Err(ModelError::InvalidGeometry(
                "treadmill extents must be positive".into(),
            ));
        }
        if !(0.0 <= self.tension_min && self.tension_min < self.tension_max) {
            return Err(ModelError::InvalidGeometry(
                "require 0 <= tension_min < tension_max".into(),
            ));
        }
        if self.tether_length <= 0.0 || self.tether_mass <= 0.0 {
            return Err(ModelError::InvalidGeometry(
                "tether length and mass must be positive".into(),
            ));
        }
        for (name, a) in [
            ("left", self.anchor_left),
            ("right", self.anchor_right),
            ("back", self.anchor_back),
        ] {
            if self.contains(a) {
                return Err(ModelError::InvalidGeometry(format!(
                    "{name} anchor must lie outside the treadmill rectangle"
                )));
            }
        }
        if self.anchor_left.x >= 0.0 || self.anchor_right.x <= 0.0 || self.anchor_back.y >= 0.0 {
            return Err(ModelError::InvalidGeometry(
                "anchor sides: left x<0, right x>0, back y<0".into(),
            ));
        }
        Ok(())
    }

    /// True when the point lies inside (or on the edge of) the belt rectangle.
    pub fn contains(&self, p: Vec2) -> bool {
        p.x.abs() <= self.treadmill_half_width && p.y.abs() <= self.treadmill_half_length
    }

    pub fn treadmill_area(&self) -> f64 {
        4.0 * self.treadmill_half_width * self.treadmill_half_length
    }
}

/// Per-tether tension triple in newtons.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TetherTensionSet {
    pub left: f64,
    pub right: f64,
    pub back: f64,
}

impl TetherTensionSet {
    pub fn uniform(t: f64) -> Self {
        TetherTensionSet {
            left: t,
            right: t,
            back: t,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.right, self.left, self.back]
    }
}

/// A commanded planar force pulse.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ForceCommand {
    /// Magnitude in newtons, >= 0.
    pub magnitude: f64,
    /// Direction in degrees: 0 right, 90 forward, 180 left, 270 backward.
    pub beta_deg: f64,
    /// Pulse duration in seconds.
    pub duration: f64,
}

impl ForceCommand {
    pub fn new(magnitude: f64, beta_deg: f64) -> Self {
        ForceCommand {
            magnitude,
            beta_deg: beta_deg.rem_euclid(360.0),
            duration: 0.25,
        }
    }

    pub fn planar(&self) -> Vec2 {
        Vec2::from_angle(self.beta_deg.to_radians()) * self.magnitude
    }
}

/// Tether direction angles at a participant position, together with the
/// participant-to-anchor unit vectors they were derived from.
///
/// Sign convention: a right-tether tension contributes (+cos theta, +sin theta)
/// to the planar force, the left contributes (-cos gamma, +sin gamma), and the
/// back contributes (+sin alpha, -cos alpha).
#[derive(Clone, Copy, Debug)]
pub struct TetherAngles {
    pub theta: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub unit_right: Vec2,
    pub unit_left: Vec2,
    pub unit_back: Vec2,
}

impl TetherAngles {
    /// Columns of the 2x3 map from tensions (right, left, back) to planar force.
    pub fn columns(&self) -> [Vec2; 3] {
        [self.unit_right, self.unit_left, self.unit_back]
    }
}

/// Compute tether angles and unit vectors for a participant position.
pub fn tether_angles(geometry: &Geometry, participant: Vec2) -> Result<TetherAngles, ModelError> {
    if !geometry.contains(participant) {
        return Err(ModelError::ParticipantOutsideTreadmill(
            participant.x,
            participant.y,
        ));
    }
    let to_unit = |anchor: Vec2, name: &'static str| -> Result<Vec2, ModelError> {
        let d = anchor - participant;
        if d.norm() < 0.01 {
            return Err(ModelError::DegenerateGeometry(name));
        }
        Ok(d.normalized().expect("norm checked above"))
    };
    let unit_right = to_unit(geometry.anchor_right, "right")?;
    let unit_left = to_unit(geometry.anchor_left, "left")?;
    let unit_back = to_unit(geometry.anchor_back, "back")?;
    Ok(TetherAngles {
        theta: unit_right.y.atan2(unit_right.x),
        gamma: unit_left.y.atan2(-unit_left.x),
        alpha: unit_back.x.atan2(-unit_back.y),
        unit_right,
        unit_left,
        unit_back,
    })
}

/// Planar force produced by a tension triple at the given tether angles,
/// plus its magnitude and four-quadrant direction in degrees.
pub fn resultant_force(tensions: &TetherTensionSet, angles: &TetherAngles) -> (Vec2, f64, f64) {
    let fx = tensions.right * angles.theta.cos() - tensions.left * angles.gamma.cos()
        + tensions.back * angles.alpha.sin();
    let fy = tensions.right * angles.theta.sin() + tensions.left * angles.gamma.sin()
        - tensions.back * angles.alpha.cos();
    let f = Vec2::new(fx, fy);
    (f, f.norm(), f.angle().to_degrees().rem_euclid(360.0))
}

/// Allocate bounded cable tensions realising a commanded planar force.
///
/// The 2x3 linear system leaves a one-dimensional null space; among the
/// in-bounds solutions on that line the allocator returns the one minimising
/// the summed squared deviation from the nominal tension.
pub fn allocate_tensions(
    command: &ForceCommand,
    geometry: &Geometry,
    participant: Vec2,
) -> Result<TetherTensionSet, ModelError> {
    let angles = tether_angles(geometry, participant)?;
    let target = command.planar();
    let infeasible = || ModelError::Infeasible {
        magnitude: command.magnitude,
        beta_deg: command.beta_deg,
        x: participant.x,
        y: participant.y,
    };

    let cols = angles.columns();
    let nominal = geometry.nominal_tension;

    // Unconstrained minimum-deviation particular solution:
    //   tau_p = nominal*1 + A^T (A A^T)^-1 (f - A * nominal*1)
    let a_aat = [
        cols.iter().map(|c| c.x * c.x).sum::<f64>(),
        cols.iter().map(|c| c.x * c.y).sum::<f64>(),
        cols.iter().map(|c| c.y * c.y).sum::<f64>(),
    ];
    let det = a_aat[0] * a_aat[2] - a_aat[1] * a_aat[1];
    if det.abs() < 1e-12 {
        // All three unit vectors collinear: cannot span the plane.
        return Err(infeasible());
    }
    let a_nom = cols
        .iter()
        .fold(Vec2::ZERO, |acc, c| acc + *c * nominal);
    let rhs = target - a_nom;
    let sol = Vec2::new(
        (a_aat[2] * rhs.x - a_aat[1] * rhs.y) / det,
        (a_aat[0] * rhs.y - a_aat[1] * rhs.x) / det,
    );
    let tau_p = [
        nominal + cols[0].dot(sol),
        nominal + cols[1].dot(sol),
        nominal + cols[2].dot(sol),
    ];

    // Null vector of the 2x3 system via the 2-D determinant identity.
    let null = [
        cols[1].cross(cols[2]),
        -cols[0].cross(cols[2]),
        cols[0].cross(cols[1]),
    ];

    // Intersect the solution line with the tension box. The slack covers
    // near-degenerate cells (participant collinear with two anchors) where
    // a tiny null component amplifies rounding in the interval bounds; any
    // admitted violation is clamped below and stays orders of magnitude
    // under the 1e-6 N force contract.
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..3 {
        if null[i].abs() < 1e-14 {
            if tau_p[i] < geometry.tension_min - 1e-9 || tau_p[i] > geometry.tension_max + 1e-9 {
                return Err(infeasible());
            }
        } else {
            let a = (geometry.tension_min - tau_p[i]) / null[i];
            let b = (geometry.tension_max - tau_p[i]) / null[i];
            lo = lo.max(a.min(b));
            hi = hi.min(a.max(b));
        }
    }
    if lo > hi + 1e-8 {
        return Err(infeasible());
    }

    // tau_p already minimises the deviation along the whole line, so the
    // constrained optimum is s = 0 clamped onto [lo, hi].
    let s = 0.0_f64.clamp(lo.min(hi), hi.max(lo));
    let clamp_in = |v: f64| v.clamp(geometry.tension_min, geometry.tension_max);
    Ok(TetherTensionSet {
        right: clamp_in(tau_p[0] + s * null[0]),
        left: clamp_in(tau_p[1] + s * null[1]),
        back: clamp_in(tau_p[2] + s * null[2]),
    })
}

/// Natural frequency (Hz) of mode `n` of a taut string of length `l` and
/// mass `m` under tension `tau`: `f = (n/2) * sqrt(tau / (l*m))`.
pub fn natural_frequency(tau: f64, length: f64, mass: f64, mode: u32) -> Result<f64, ModelError> {
    if tau <= 0.0 {
        return Err(ModelError::NonPositiveParameter("tension"));
    }
    if length <= 0.0 {
        return Err(ModelError::NonPositiveParameter("length"));
    }
    if mass <= 0.0 {
        return Err(ModelError::NonPositiveParameter("mass"));
    }
    if mode == 0 {
        return Err(ModelError::NonPositiveParameter("mode"));
    }
    Ok(f64::from(mode) / 2.0 * (tau / (length * mass)).sqrt())
}

/// Smallest tension whose first-mode frequency reaches `target_f` (Hz);
/// closed-form inverse of [`natural_frequency`] with `n = 1`.
pub fn min_nominal_tension(target_f: f64, length: f64, mass: f64) -> Result<f64, ModelError> {
    if length <= 0.0 {
        return Err(ModelError::NonPositiveParameter("length"));
    }
    if mass <= 0.0 {
        return Err(ModelError::NonPositiveParameter("mass"));
    }
    if target_f < 0.0 {
        return Err(ModelError::NonPositiveParameter("target frequency"));
    }
    Ok(4.0 * target_f * target_f * length * mass)
}
