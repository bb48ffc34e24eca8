//! Box representations, letterbox computation and camera-to-ground scaling.
//!
//! Everything downstream of the input boundary works in pixel space with a
//! top-left origin and y growing downward. Vision-style boxes (normalized,
//! bottom-left origin) are converted exactly once by [`normalized_to_pixel`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("normalized box outside the unit square: {0}")]
    OutOfRange(String),
    #[error("invalid size {width}x{height}")]
    InvalidSize { width: u32, height: u32 },
    #[error("invalid camera geometry: {0}")]
    InvalidCamera(String),
    #[error("box has convention {found:?}, expected {expected:?}")]
    WrongConvention {
        found: BoxConvention,
        expected: BoxConvention,
    },
}

/// Coordinate convention carried by a [`BBoxXywh`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxConvention {
    /// Pixels, origin at the top-left corner, y down.
    TopLeftPixels,
    /// Pixels, origin at the bottom-left corner, y up.
    BottomLeftPixels,
    /// Unit square, origin at the bottom-left corner, y up.
    Normalized,
}

/// An `[x, y, w, h]` box. `(x, y)` is the origin-side corner for the box's
/// convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBoxXywh {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub convention: BoxConvention,
}

impl BBoxXywh {
    pub fn new(
        x: f64,
        y: f64,
        w: f64,
        h: f64,
        convention: BoxConvention,
    ) -> Result<Self, GeometryError> {
        if ![x, y, w, h].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidBox(format!(
                "non-finite component in ({x}, {y}, {w}, {h})"
            )));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(GeometryError::InvalidBox(format!(
                "non-positive size w={w} h={h}"
            )));
        }
        if convention == BoxConvention::Normalized {
            let inside = |v: f64| (0.0..=1.0).contains(&v);
            if !(inside(x) && inside(y) && inside(x + w) && inside(y + h)) {
                return Err(GeometryError::OutOfRange(format!(
                    "({x}, {y}, {w}, {h})"
                )));
            }
        }
        Ok(Self {
            x,
            y,
            w,
            h,
            convention,
        })
    }

    /// Shorthand for a top-left pixel box.
    pub fn pixels(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        Self::new(x, y, w, h, BoxConvention::TopLeftPixels)
    }

    pub fn to_corners(&self) -> Result<BBoxCorners, GeometryError> {
        xywh_to_corners(self)
    }
}

/// `[x1, y1, x2, y2]` in top-left pixel space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBoxCorners {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBoxCorners {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidBox(format!(
                "non-finite corner in ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        if x1 >= x2 || y1 >= y2 {
            return Err(GeometryError::InvalidBox(format!(
                "corners not ordered: ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    /// Half-open containment: `[x1, x2) x [y1, y2)`.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x1 && x < self.x2 && y >= self.y1 && y < self.y2
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    pub fn to_xywh(&self) -> BBoxXywh {
        corners_to_xywh(self)
    }
}

pub fn xywh_to_corners(b: &BBoxXywh) -> Result<BBoxCorners, GeometryError> {
    if b.convention != BoxConvention::TopLeftPixels {
        return Err(GeometryError::WrongConvention {
            found: b.convention,
            expected: BoxConvention::TopLeftPixels,
        });
    }
    if b.w <= 0.0 || b.h <= 0.0 {
        return Err(GeometryError::InvalidBox(format!(
            "non-positive size w={} h={}",
            b.w, b.h
        )));
    }
    BBoxCorners::new(b.x, b.y, b.x + b.w, b.y + b.h)
}

pub fn corners_to_xywh(c: &BBoxCorners) -> BBoxXywh {
    BBoxXywh {
        x: c.x1,
        y: c.y1,
        w: c.width(),
        h: c.height(),
        convention: BoxConvention::TopLeftPixels,
    }
}

/// Maps a normalized bottom-left box onto a `img`-sized top-left pixel box.
pub fn normalized_to_pixel(b: &BBoxXywh, img: ViewSize) -> Result<BBoxXywh, GeometryError> {
    if b.convention != BoxConvention::Normalized {
        return Err(GeometryError::WrongConvention {
            found: b.convention,
            expected: BoxConvention::Normalized,
        });
    }
    let inside = |v: f64| (0.0..=1.0).contains(&v);
    if !(inside(b.x) && inside(b.y) && inside(b.x + b.w) && inside(b.y + b.h)) {
        return Err(GeometryError::OutOfRange(format!(
            "({}, {}, {}, {})",
            b.x, b.y, b.w, b.h
        )));
    }
    let (w, h) = (f64::from(img.width), f64::from(img.height));
    BBoxXywh::pixels(b.x * w, (1.0 - b.y - b.h) * h, b.w * w, b.h * h)
}

/// Intersection over union. Zero for disjoint boxes.
pub fn iou(a: &BBoxCorners, b: &BBoxCorners) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewSize {
    pub width: u32,
    pub height: u32,
}

impl ViewSize {
    pub fn new(width: u32, height: u32) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidSize { width, height });
        }
        Ok(Self { width, height })
    }
}

/// Sub-rectangle of a view that shows the video at its native aspect ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrawingArea {
    pub origin_dx: u32,
    pub origin_dy: u32,
    pub width: u32,
    pub height: u32,
}

impl DrawingArea {
    /// An area covering a whole image with no offset.
    pub fn full(size: ViewSize) -> Self {
        Self {
            origin_dx: 0,
            origin_dy: 0,
            width: size.width,
            height: size.height,
        }
    }

    pub fn rect(&self) -> BBoxCorners {
        BBoxCorners {
            x1: f64::from(self.origin_dx),
            y1: f64::from(self.origin_dy),
            x2: f64::from(self.origin_dx + self.width),
            y2: f64::from(self.origin_dy + self.height),
        }
    }
}

/// Aspect-fit of `video` inside `view`.
///
/// Case 1 keeps the view width and letterboxes vertically; case 2 keeps the
/// view height and pillarboxes. Sizes and margins are floored; an odd
/// remainder pixel ends up on the bottom/right margin. The floors are taken in
/// exact integer arithmetic so that `1024 * 1080 / 1920` is 576, not 575.
pub fn compute_drawing_area(video: ViewSize, view: ViewSize) -> Result<DrawingArea, GeometryError> {
    for s in [video, view] {
        if s.width == 0 || s.height == 0 {
            return Err(GeometryError::InvalidSize {
                width: s.width,
                height: s.height,
            });
        }
    }
    let (vw, vh) = (u64::from(video.width), u64::from(video.height));
    let (ww, wh) = (u64::from(view.width), u64::from(view.height));

    // floor(view.width / (vw / vh))
    let option1_height = ww * vh / vw;
    if option1_height <= wh {
        if option1_height == 0 {
            return Err(GeometryError::InvalidSize {
                width: view.width,
                height: 0,
            });
        }
        return Ok(DrawingArea {
            origin_dx: 0,
            origin_dy: ((wh - option1_height) / 2) as u32,
            width: view.width,
            height: option1_height as u32,
        });
    }
    // floor(view.height * (vw / vh))
    let option2_width = wh * vw / vh;
    if option2_width == 0 {
        return Err(GeometryError::InvalidSize {
            width: 0,
            height: view.height,
        });
    }
    Ok(DrawingArea {
        origin_dx: ((ww - option2_width) / 2) as u32,
        origin_dy: 0,
        width: option2_width as u32,
        height: view.height,
    })
}

/// Drone altitude and horizontal lens field of view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraGeometry {
    altitude_m: f64,
    lens_angle_deg: f64,
}

impl CameraGeometry {
    pub fn new(altitude_m: f64, lens_angle_deg: f64) -> Result<Self, GeometryError> {
        if !altitude_m.is_finite() || altitude_m <= 0.0 {
            return Err(GeometryError::InvalidCamera(format!(
                "altitude must be finite and positive, got {altitude_m}"
            )));
        }
        if !lens_angle_deg.is_finite() || lens_angle_deg <= 0.0 || lens_angle_deg >= 180.0 {
            return Err(GeometryError::InvalidCamera(format!(
                "lens angle must lie in (0, 180) degrees, got {lens_angle_deg}"
            )));
        }
        Ok(Self {
            altitude_m,
            lens_angle_deg,
        })
    }

    pub fn altitude_m(&self) -> f64 {
        self.altitude_m
    }

    pub fn lens_angle_deg(&self) -> f64 {
        self.lens_angle_deg
    }
}

/// Real-world width of the camera footprint on flat ground, `2 h tan(θ/2)`.
///
/// The lens angle is taken as the horizontal field of view; a diagonal FOV
/// figure would overestimate the footprint.
pub fn ground_width(cam: &CameraGeometry) -> f64 {
    2.0 * cam.altitude_m * (cam.lens_angle_deg.to_radians() / 2.0).tan()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleModel {
    pub ground_width_m: f64,
    pub meters_per_pixel: f64,
}

impl ScaleModel {
    pub fn to_meters(&self, pixels: f64) -> f64 {
        pixels * self.meters_per_pixel
    }

    pub fn to_pixels(&self, meters: f64) -> f64 {
        meters / self.meters_per_pixel
    }
}

pub fn pixel_scale(ground_width_m: f64, area: &DrawingArea) -> ScaleModel {
    ScaleModel {
        ground_width_m,
        meters_per_pixel: ground_width_m / f64::from(area.width),
    }
}
