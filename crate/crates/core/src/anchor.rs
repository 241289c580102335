//! Marker-relative coordinate frames.
//!
//! Content in a location-dependent world is stored in world coordinates that
//! were registered against a marker pose. When the marker is seen again (and
//! perhaps moved), [`rebase`] maps every point through the old marker frame
//! into the new one, so the marker-relative layout never changes.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{LocationMode, Millis};
use crate::world::WorldState;

/// Orthonormality tolerance accepted on construction.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

/// Default marker freshness window.
pub const DEFAULT_FRESHNESS_MS: Millis = 120_000;

#[derive(Debug, Error, PartialEq)]
pub enum PoseError {
    #[error("rotation is not orthonormal (max |RᵀR - I| = {0:e})")]
    NotOrthonormal(f64),
    #[error("rotation is a reflection (det = {0})")]
    Reflection(f64),
    #[error("scale must be positive and finite, got {0}")]
    BadScale(f64),
    #[error("pose contains a non-finite number")]
    NonFinite,
}

/// Similarity transform `p = scale * R * m + t` taking marker coordinates to
/// world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 13]", into = "[f64; 13]")]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    scale: f64,
}

impl Pose {
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        scale: f64,
    ) -> Result<Self, PoseError> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(PoseError::NonFinite);
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(PoseError::BadScale(scale));
        }
        let err = orthonormality_error(&rotation);
        if err > ORTHONORMAL_TOL {
            return Err(PoseError::NotOrthonormal(err));
        }
        let det = rotation.determinant();
        if det <= 0.0 {
            return Err(PoseError::Reflection(det));
        }
        Ok(Self {
            rotation,
            translation,
            scale,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn from_quaternion(q: UnitQuaternion<f64>, translation: Vector3<f64>, scale: f64) -> Result<Self, PoseError> {
        Self::new(*q.to_rotation_matrix().matrix(), translation, scale)
    }

    /// Rotation about +y by `radians`.
    pub fn yaw(radians: f64, translation: Vector3<f64>, scale: f64) -> Result<Self, PoseError> {
        Self::from_quaternion(
            UnitQuaternion::from_axis_angle(&Vector3::y_axis(), radians),
            translation,
            scale,
        )
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `self ∘ other`: first apply `other`, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.scale * (self.rotation * other.translation) + self.translation,
            scale: self.scale * other.scale,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation) / self.scale,
            scale: 1.0 / self.scale,
        }
    }

    /// Nine rotation entries (row-major), three translation, one scale.
    pub fn to_array(&self) -> [f64; 13] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)],
            r[(1, 0)], r[(1, 1)], r[(1, 2)],
            r[(2, 0)], r[(2, 1)], r[(2, 2)],
            t.x, t.y, t.z,
            self.scale,
        ]
    }

    pub fn from_array(a: [f64; 13]) -> Result<Self, PoseError> {
        let rotation = Matrix3::new(a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8]);
        Self::new(rotation, Vector3::new(a[9], a[10], a[11]), a[12])
    }
}

impl TryFrom<[f64; 13]> for Pose {
    type Error = PoseError;

    fn try_from(a: [f64; 13]) -> Result<Self, Self::Error> {
        Pose::from_array(a)
    }
}

impl From<Pose> for [f64; 13] {
    fn from(p: Pose) -> Self {
        p.to_array()
    }
}

/// Largest absolute entry of `RᵀR - I`.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).amax()
}

/// A client-asserted sighting of a marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerObservation {
    #[serde(rename = "marker")]
    pub marker_id: String,
    #[serde(rename = "pose")]
    pub world_from_marker: Pose,
    #[serde(rename = "at")]
    pub observed_at: Millis,
}

/// `m = (1/s) Rᵀ (p - t)`
pub fn to_marker_frame(pose: &Pose, world_point: &Vector3<f64>) -> Vector3<f64> {
    pose.rotation.transpose() * (world_point - pose.translation) / pose.scale
}

/// `p = s R m + t`
pub fn from_marker_frame(pose: &Pose, marker_point: &Vector3<f64>) -> Vector3<f64> {
    pose.scale * (pose.rotation * marker_point) + pose.translation
}

/// Re-registers a world point after the marker was re-detected at `new`.
pub fn rebase(old: &Pose, new: &Pose, world_point: &Vector3<f64>) -> Vector3<f64> {
    from_marker_frame(new, &to_marker_frame(old, world_point))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenyReason {
    NoObservation,
    WrongMarker,
    Stale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Allowed,
    Denied(DenyReason),
}

impl Access {
    pub fn is_allowed(self) -> bool {
        self == Access::Allowed
    }
}

/// Location gate for a world.
pub fn gate_access(
    world: &WorldState,
    last_obs: Option<&MarkerObservation>,
    now: Millis,
    freshness_window: Millis,
) -> Access {
    gate_mode(world.location(), last_obs, now, freshness_window)
}

pub fn gate_mode(
    mode: &LocationMode,
    last_obs: Option<&MarkerObservation>,
    now: Millis,
    freshness_window: Millis,
) -> Access {
    let marker = match mode {
        LocationMode::Independent => return Access::Allowed,
        LocationMode::Dependent { marker } => marker,
    };
    let Some(obs) = last_obs else {
        return Access::Denied(DenyReason::NoObservation);
    };
    if &obs.marker_id != marker {
        return Access::Denied(DenyReason::WrongMarker);
    }
    if now.saturating_sub(obs.observed_at) > freshness_window {
        return Access::Denied(DenyReason::Stale);
    }
    Access::Allowed
}
