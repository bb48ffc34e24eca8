//! Overlay draw commands: track boxes and their labels mapped into the
//! drawing area of the display view, one JSON object per line.

use std::io::Write;

use serde::Serialize;

use super::IoError;
use crate::analytics::{Direction, LaneChange, MicroRecord};
use crate::geometry::{DrawingArea, ViewSize};
use crate::tracker::TrackOutput;

/// Vehicle state used to pick a drawing color.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorKey {
    /// No kinematics yet.
    Warmup,
    Stationary,
    Moving,
    LaneChange,
    Turn,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DrawCommand {
    pub frame: u64,
    pub track_id: u64,
    /// Top-left, top-right, bottom-right, bottom-left in view pixels.
    pub corners: [[f64; 2]; 4],
    pub label: LabelBox,
    pub color: ColorKey,
}

fn round3(v: f64) -> f64 {
    let r = (v * 1000.0).round() / 1000.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Maps tracks from video pixels into `area` and attaches a label one box
/// height above each box, four boxes wide, clamped into the area.
pub fn emit_draw_commands(
    frame: u64,
    tracks: &[TrackOutput],
    records: &[MicroRecord],
    area: &DrawingArea,
    video: ViewSize,
) -> Vec<DrawCommand> {
    let ax1 = f64::from(area.origin_dx);
    let ay1 = f64::from(area.origin_dy);
    let (aw, ah) = (f64::from(area.width), f64::from(area.height));
    let (ax2, ay2) = (ax1 + aw, ay1 + ah);
    let sx = aw / f64::from(video.width);
    let sy = ah / f64::from(video.height);
    let cx = |x: f64| round3((ax1 + x * sx).clamp(ax1, ax2));
    let cy = |y: f64| round3((ay1 + y * sy).clamp(ay1, ay2));

    tracks
        .iter()
        .map(|t| {
            let (x1, y1, x2, y2) = (cx(t.bbox.x1), cy(t.bbox.y1), cx(t.bbox.x2), cy(t.bbox.y2));
            let (bw, bh) = (x2 - x1, y2 - y1);
            let lw = (4.0 * bw).min(aw);
            let lh = bh.min(ah);
            let lx = x1.clamp(ax1, ax2 - lw);
            let ly = (y1 - bh).clamp(ay1, ay2 - lh);
            let record = records.iter().find(|r| r.track_id == t.id);
            let (text, color) = match record {
                None => (format!("#{}", t.id), ColorKey::Warmup),
                Some(r) => {
                    let color = match (r.lane_change, r.direction) {
                        (LaneChange::Left | LaneChange::Right, _) => ColorKey::LaneChange,
                        (LaneChange::Turn, _) => ColorKey::Turn,
                        (_, Direction::Stationary) => ColorKey::Stationary,
                        _ => ColorKey::Moving,
                    };
                    (format!("#{} {:.1} m/s {}", t.id, r.speed_mps, r.direction), color)
                }
            };
            DrawCommand {
                frame,
                track_id: t.id,
                corners: [[x1, y1], [x2, y1], [x2, y2], [x1, y2]],
                label: LabelBox {
                    x: round3(lx),
                    y: round3(ly),
                    w: round3(lw),
                    h: round3(lh),
                    text,
                },
                color,
            }
        })
        .collect()
}

pub fn write_draw_commands<W: Write>(mut w: W, commands: &[DrawCommand]) -> Result<(), IoError> {
    for c in commands {
        serde_json::to_writer(&mut w, c).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
