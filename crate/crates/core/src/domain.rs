//! Value types shared by every stage of the pipeline.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub u32);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RouteId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    /// Rotated +90 degrees (counter-clockwise).
    pub fn left(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    /// Rotated -90 degrees (clockwise).
    pub fn right(self) -> Vec2 {
        Vec2::new(self.y, -self.x)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Kinematic state of one vehicle.
///
/// `arc_position` is measured along the centerline of `route`; `position` and
/// `velocity` are the world-frame projections of that arc state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: VehicleId,
    pub position: Vec2,
    pub velocity: Vec2,
    pub route: RouteId,
    pub arc_position: f64,
    pub length: f64,
}

impl VehicleState {
    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }
}

/// The side of the intersection a vehicle enters from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Approach {
    N,
    E,
    S,
    W,
}

impl Approach {
    pub const ALL: [Approach; 4] = [Approach::N, Approach::E, Approach::S, Approach::W];

    /// Unit heading of a vehicle entering from this side.
    pub fn heading(self) -> Vec2 {
        match self {
            Approach::N => Vec2::new(0.0, -1.0),
            Approach::S => Vec2::new(0.0, 1.0),
            Approach::E => Vec2::new(-1.0, 0.0),
            Approach::W => Vec2::new(1.0, 0.0),
        }
    }

    /// The approach whose inbound heading equals `heading` (axis-aligned).
    pub fn from_heading(heading: Vec2) -> Approach {
        if heading.y < -0.5 {
            Approach::N
        } else if heading.y > 0.5 {
            Approach::S
        } else if heading.x < -0.5 {
            Approach::E
        } else {
            Approach::W
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Approach::N => "N",
            Approach::E => "E",
            Approach::S => "S",
            Approach::W => "W",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Movement {
    Straight,
    Left,
    Right,
}

impl Movement {
    pub const ALL: [Movement; 3] = [Movement::Straight, Movement::Left, Movement::Right];
}

impl fmt::Display for Movement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Movement::Straight => "straight",
            Movement::Left => "left",
            Movement::Right => "right",
        };
        f.write_str(s)
    }
}

/// Decision method compared in the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MethodKind {
    /// Each vehicle orders its detected neighbours on its own.
    #[serde(rename = "IVD")]
    Ivd,
    /// Negotiation inside influence groups only.
    #[serde(rename = "IGN")]
    Ign,
    /// Intra-group negotiation followed by an inter-group merge.
    #[serde(rename = "IIGN")]
    Iign,
}

impl MethodKind {
    pub const ALL: [MethodKind; 3] = [MethodKind::Ivd, MethodKind::Ign, MethodKind::Iign];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodKind::Ivd => "IVD",
            MethodKind::Ign => "IGN",
            MethodKind::Iign => "IIGN",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MethodKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().replace('&', "").as_str() {
            "IVD" => Ok(MethodKind::Ivd),
            "IGN" => Ok(MethodKind::Ign),
            "IIGN" => Ok(MethodKind::Iign),
            other => Err(format!("unknown method `{other}` (expected IVD, IGN or IIGN)")),
        }
    }
}
