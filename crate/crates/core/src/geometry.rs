//! Microphone layouts and free-field plane-wave steering.
//!
//! Coordinates are metres in a head-centred frame: `+x` points to the
//! front, `+y` to the left ear, `+z` up. Azimuth is measured counter-
//! clockwise from the front, so 90° is the left side.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::C64;

pub const SPEED_OF_SOUND: f64 = 343.0;
/// Head radius used by the optional shadow term.
pub const HEAD_RADIUS: f64 = 0.0875;

pub type Position = [f64; 3];

/// Head-mounted microphones plus an optional external microphone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub head_mics: Vec<Position>,
    #[serde(default)]
    pub external_mic: Option<Position>,
    /// Multiply steering magnitudes by a rigid-sphere shadow approximation.
    #[serde(default)]
    pub head_shadow: bool,
}

impl ArrayGeometry {
    /// Two microphones per ear, 15 mm apart front-to-back, ears 16 cm apart.
    /// Order: left front (reference), left rear, right front, right rear.
    pub fn binaural() -> Self {
        let half_spacing = 0.0075;
        let half_width = 0.08;
        Self {
            head_mics: vec![
                [half_spacing, half_width, 0.0],
                [-half_spacing, half_width, 0.0],
                [half_spacing, -half_width, 0.0],
                [-half_spacing, -half_width, 0.0],
            ],
            external_mic: None,
            head_shadow: false,
        }
    }

    pub fn with_external_polar(mut self, azimuth_deg: f64, distance_m: f64) -> Self {
        let u = unit_vector(azimuth_deg, 0.0);
        self.external_mic = Some([u[0] * distance_m, u[1] * distance_m, u[2] * distance_m]);
        self
    }

    pub fn num_head(&self) -> usize {
        self.head_mics.len()
    }

    pub fn num_channels(&self) -> usize {
        self.head_mics.len() + usize::from(self.external_mic.is_some())
    }

    /// All microphone positions, head first, external last.
    pub fn positions(&self) -> Vec<Position> {
        let mut p = self.head_mics.clone();
        p.extend(self.external_mic);
        p
    }

    /// Indices of the two front microphones (one per ear), used for the
    /// SNR definition. Falls back to the first channel for other layouts.
    pub fn front_pair(&self) -> Vec<usize> {
        if self.head_mics.len() == 4 {
            vec![0, 2]
        } else {
            vec![0]
        }
    }

    pub fn identifier(&self) -> String {
        let mut id = format!("freefield-{}mic", self.num_head());
        for p in &self.head_mics {
            id.push_str(&format!(":{:.4},{:.4},{:.4}", p[0], p[1], p[2]));
        }
        if self.head_shadow {
            id.push_str(":shadow");
        }
        id
    }

    pub fn validate(&self) -> Result<()> {
        if self.head_mics.len() < 2 {
            return Err(Error::config("at least two head-mounted microphones are required"));
        }
        let all = self.positions();
        for (i, a) in all.iter().enumerate() {
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(format!("microphone {i} has a non-finite position")));
            }
            for (j, b) in all.iter().enumerate().skip(i + 1) {
                if distance(a, b) < 1e-6 {
                    return Err(Error::config(format!("microphones {i} and {j} coincide")));
                }
            }
        }
        Ok(())
    }

    /// Free-field transfer factors `exp(−jω·τ_m)` of a plane wave arriving
    /// from `direction` (unit vector towards the source) onto `positions`.
    pub fn steering(&self, positions: &[Position], direction: &Position, omega: f64) -> Vec<C64> {
        positions
            .iter()
            .map(|p| {
                let tau = plane_wave_delay(p, direction);
                let phase = C64::from_polar(1.0, -omega * tau);
                if self.head_shadow && is_on_head(p) {
                    phase * shadow_gain(p, direction, omega)
                } else {
                    phase
                }
            })
            .collect()
    }
}

/// Unit vector towards azimuth/elevation given in degrees.
pub fn unit_vector(azimuth_deg: f64, elevation_deg: f64) -> Position {
    let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()]
}

pub fn distance(a: &Position, b: &Position) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn dot(a: &Position, b: &Position) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Arrival time at `position` relative to the origin for a far-field wave
/// coming from `direction`: microphones closer to the source hear it first.
pub fn plane_wave_delay(position: &Position, direction: &Position) -> f64 {
    -dot(position, direction) / SPEED_OF_SOUND
}

fn is_on_head(p: &Position) -> bool {
    distance(p, &[0.0; 3]) < 0.2
}

/// Magnitude of the one-pole/one-zero spherical head shadow filter, with
/// the incidence angle measured from the microphone's outward direction.
fn shadow_gain(position: &Position, direction: &Position, omega: f64) -> f64 {
    const ALPHA_MIN: f64 = 0.1;
    const THETA_MIN: f64 = 150.0;
    let norm = distance(position, &[0.0; 3]);
    let cos_inc = (dot(position, direction) / norm).clamp(-1.0, 1.0);
    let theta = cos_inc.acos().to_degrees();
    let alpha = (1.0 + ALPHA_MIN / 2.0)
        + (1.0 - ALPHA_MIN / 2.0) * (theta / THETA_MIN * std::f64::consts::PI).cos();
    let w0 = SPEED_OF_SOUND / HEAD_RADIUS;
    let x = omega / (2.0 * w0);
    ((1.0 + (alpha * x).powi(2)) / (1.0 + x * x)).sqrt()
}
