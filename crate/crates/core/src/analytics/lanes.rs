//! Eight lane areas around a user-drawn intersection rectangle.
//!
//! Each side of the rectangle gets an arm strip running out to the frame
//! border, as wide as the rectangle itself, split along its travel-axis
//! midline. Right-hand traffic decides which half is inbound: on the north
//! arm, southbound (inbound) vehicles use the west half, and so on around.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{AnalyticsError, Direction, MicroRecord};
use crate::geometry::{BBoxCorners, ViewSize};
use crate::tracker::TrackOutput;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Approach {
    N,
    E,
    S,
    W,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    Inbound,
    Outbound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneArea {
    /// Half-open pixel rectangle.
    pub rect: BBoxCorners,
    pub approach: Approach,
    pub bound: Bound,
}

impl LaneArea {
    /// Short key such as `n_in` or `w_out`.
    pub fn key(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for LaneArea {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = match self.approach {
            Approach::N => "n",
            Approach::E => "e",
            Approach::S => "s",
            Approach::W => "w",
        };
        let b = match self.bound {
            Bound::Inbound => "in",
            Bound::Outbound => "out",
        };
        write!(f, "{a}_{b}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneRegions {
    pub center: BBoxCorners,
    /// Always eight, ordered N-in, N-out, E-in, E-out, S-in, S-out, W-in, W-out.
    pub areas: Vec<LaneArea>,
}

impl LaneRegions {
    /// Index of the lane area containing a point, if any.
    pub fn locate(&self, x: f64, y: f64) -> Option<usize> {
        self.areas.iter().position(|a| a.rect.contains(x, y))
    }

    pub fn keys(&self) -> Vec<String> {
        self.areas.iter().map(LaneArea::key).collect()
    }
}

pub fn build_lane_regions(center: BBoxCorners, frame: ViewSize) -> Result<LaneRegions, AnalyticsError> {
    let (w, h) = (f64::from(frame.width), f64::from(frame.height));
    let BBoxCorners { x1, y1, x2, y2 } = center;
    if !(x1 > 0.0 && y1 > 0.0 && x2 < w && y2 < h) {
        return Err(AnalyticsError::DegenerateArm(format!(
            "center ({x1}, {y1}, {x2}, {y2}) must lie strictly inside {}x{}",
            frame.width, frame.height
        )));
    }
    let mx = (x1 + x2) / 2.0;
    let my = (y1 + y2) / 2.0;
    let rect = |a, b, c, d| BBoxCorners {
        x1: a,
        y1: b,
        x2: c,
        y2: d,
    };
    let area = |rect, approach, bound| LaneArea {
        rect,
        approach,
        bound,
    };
    let areas = vec![
        area(rect(x1, 0.0, mx, y1), Approach::N, Bound::Inbound),
        area(rect(mx, 0.0, x2, y1), Approach::N, Bound::Outbound),
        area(rect(x2, y1, w, my), Approach::E, Bound::Inbound),
        area(rect(x2, my, w, y2), Approach::E, Bound::Outbound),
        area(rect(mx, y2, x2, h), Approach::S, Bound::Inbound),
        area(rect(x1, y2, mx, h), Approach::S, Bound::Outbound),
        area(rect(0.0, my, x1, y2), Approach::W, Bound::Inbound),
        area(rect(0.0, y1, x1, my), Approach::W, Bound::Outbound),
    ];
    Ok(LaneRegions { center, areas })
}

/// Aggregate counts for one sampling interval.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroSnapshot {
    pub interval: u64,
    pub frame: u64,
    pub total_vehicles: u32,
    /// One count per lane area, in [`LaneRegions::areas`] order. All zero when
    /// no lane regions are configured.
    pub lane_counts: [u32; 8],
    /// `(count, mean speed m/s)` for every direction with at least one vehicle.
    pub per_direction: BTreeMap<Direction, (u32, f64)>,
}

/// Counts the current tracks by lane (center-point containment) and by
/// direction of their latest micro record.
pub fn macro_snapshot(
    interval: u64,
    frame: u64,
    tracks: &[TrackOutput],
    records: &[MicroRecord],
    regions: Option<&LaneRegions>,
) -> MacroSnapshot {
    let mut lane_counts = [0u32; 8];
    if let Some(regions) = regions {
        for t in tracks {
            let (cx, cy) = t.bbox.center();
            if let Some(i) = regions.locate(cx, cy) {
                lane_counts[i] += 1;
            }
        }
    }
    let mut sums: BTreeMap<Direction, (u32, f64)> = BTreeMap::new();
    for t in tracks {
        if let Some(r) = records.iter().find(|r| r.track_id == t.id) {
            let e = sums.entry(r.direction).or_insert((0, 0.0));
            e.0 += 1;
            e.1 += r.speed_mps;
        }
    }
    let per_direction = sums
        .into_iter()
        .map(|(d, (n, total))| (d, (n, total / f64::from(n))))
        .collect();
    MacroSnapshot {
        interval,
        frame,
        total_vehicles: tracks.len() as u32,
        lane_counts,
        per_direction,
    }
}
