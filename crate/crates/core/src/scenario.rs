//! Built-in procedural edit scenarios.
//!
//! Every scene is a static central body plus a smaller ball. Raw density is
//! `occupied_density` inside a primitive and `empty_density` elsewhere; empty
//! space is deep in the softplus tail, which is what makes geometric edits
//! hard to reach by plain distillation from the source.

use serde::{Deserialize, Serialize};

use crate::error::{PnrError, Result};
use crate::field::{Bbox, FieldParams, GridDims};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    ColorChange,
    ObjectAdded,
    ObjectMoved,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 3] = [
        ScenarioKind::ColorChange,
        ScenarioKind::ObjectAdded,
        ScenarioKind::ObjectMoved,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::ColorChange => "color_change",
            ScenarioKind::ObjectAdded => "object_added",
            ScenarioKind::ObjectMoved => "object_moved",
        }
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = PnrError;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| PnrError::Config(format!("unknown scenario '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneStyle {
    pub occupied_density: f64,
    pub empty_density: f64,
    /// Raw color of empty voxels (all channels).
    pub empty_color: f64,
}

impl Default for SceneStyle {
    fn default() -> Self {
        Self {
            occupied_density: 8.0,
            empty_density: -8.0,
            empty_color: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Ball {
    center: [f64; 3],
    radius: f64,
    /// Raw (pre-sigmoid) color.
    color: [f64; 3],
}

const BODY: Ball = Ball {
    center: [0.0, -0.1, 0.0],
    radius: 0.38,
    color: [-1.5, -0.5, 1.5],
};

const BODY_RECOLORED: Ball = Ball {
    color: [1.5, 1.0, -1.5],
    ..BODY
};

const SIDE_BALL: Ball = Ball {
    center: [-0.55, 0.1, 0.0],
    radius: 0.24,
    color: [1.8, -1.2, -1.2],
};

const SIDE_BALL_MOVED: Ball = Ball {
    center: [0.55, 0.1, 0.0],
    ..SIDE_BALL
};

const TOP_BALL: Ball = Ball {
    center: [0.0, 0.5, 0.0],
    radius: 0.22,
    color: [-1.2, 1.8, -1.2],
};

fn rasterize(dims: GridDims, bbox: Bbox, balls: &[Ball], style: &SceneStyle) -> FieldParams {
    let mut field = FieldParams::filled(dims, bbox, style.empty_density, style.empty_color);
    let ext = bbox.extent();
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let p = [
                    bbox.min[0] + (x as f64 + 0.5) / dims.nx as f64 * ext[0],
                    bbox.min[1] + (y as f64 + 0.5) / dims.ny as f64 * ext[1],
                    bbox.min[2] + (z as f64 + 0.5) / dims.nz as f64 * ext[2],
                ];
                let hit = balls.iter().rev().find(|b| {
                    let d2: f64 = (0..3).map(|a| (p[a] - b.center[a]).powi(2)).sum();
                    d2 <= b.radius * b.radius
                });
                if let Some(b) = hit {
                    let i = dims.index(x, y, z);
                    field.density_mut()[i] = style.occupied_density;
                    field.color_mut()[3 * i..3 * i + 3].copy_from_slice(&b.color);
                }
            }
        }
    }
    field.quantize_f32();
    field
}

/// Source and edit-target fields of a scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub source: FieldParams,
    pub target: FieldParams,
}

pub fn build_scenario(kind: ScenarioKind, dims: GridDims, bbox: Bbox, style: &SceneStyle) -> Scenario {
    let source = rasterize(dims, bbox, &[BODY, SIDE_BALL], style);
    let target = match kind {
        ScenarioKind::ColorChange => rasterize(dims, bbox, &[BODY_RECOLORED, SIDE_BALL], style),
        ScenarioKind::ObjectAdded => rasterize(dims, bbox, &[BODY, SIDE_BALL, TOP_BALL], style),
        ScenarioKind::ObjectMoved => rasterize(dims, bbox, &[BODY, SIDE_BALL_MOVED], style),
    };
    Scenario { kind, source, target }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenarios_differ_from_source() {
        let dims = GridDims::cube(16).unwrap();
        for kind in ScenarioKind::ALL {
            let s = build_scenario(kind, dims, Bbox::default(), &SceneStyle::default());
            assert_ne!(s.source, s.target, "{kind:?}");
            let changed_density = s
                .source
                .density()
                .iter()
                .zip(s.target.density())
                .filter(|(a, b)| a != b)
                .count();
            match kind {
                ScenarioKind::ColorChange => assert_eq!(changed_density, 0),
                _ => assert!(changed_density > 0),
            }
        }
    }

    #[test]
    fn names_round_trip() {
        for kind in ScenarioKind::ALL {
            assert_eq!(kind.name().parse::<ScenarioKind>().unwrap(), kind);
        }
        assert!("nope".parse::<ScenarioKind>().is_err());
    }
}
