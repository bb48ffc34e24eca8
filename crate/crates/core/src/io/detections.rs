//! Line-delimited detection frames, one JSON object per line:
//!
//! ```text
//! {"frame":0,"t":0.000000,"boxes":[{"x":480.000,"y":270.000,"w":960.000,"h":540.000,"score":0.970,"class":"car"}]}
//! ```

use std::io::{BufRead, Write};

use serde::Deserialize;

use super::{fixed, IoError};
use crate::geometry::{BBoxCorners, BBoxXywh};

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBoxXywh,
    pub score: f64,
    pub class: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionFrame {
    pub frame: u64,
    pub timestamp: f64,
    pub boxes: Vec<Detection>,
}

impl DetectionFrame {
    pub fn corners(&self) -> Vec<BBoxCorners> {
        self.boxes
            .iter()
            .filter_map(|d| d.bbox.to_corners().ok())
            .collect()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameLine {
    frame: u64,
    t: f64,
    boxes: Vec<BoxLine>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxLine {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    score: f64,
    class: String,
}

/// Parses one line. `line_no` is 1-based and only used for error messages.
pub fn parse_detection_line(line: &str, line_no: usize) -> Result<DetectionFrame, IoError> {
    let parse_err = |message: String| IoError::Parse {
        line: line_no,
        message,
    };
    let raw: FrameLine = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
    if !(raw.t.is_finite() && raw.t >= 0.0) {
        return Err(parse_err(format!("timestamp {} is not a finite non-negative time", raw.t)));
    }
    let mut boxes = Vec::with_capacity(raw.boxes.len());
    for (i, b) in raw.boxes.into_iter().enumerate() {
        let bbox = BBoxXywh::pixels(b.x, b.y, b.w, b.h)
            .map_err(|e| parse_err(format!("box {i}: {e}")))?;
        if !(0.0..=1.0).contains(&b.score) {
            return Err(parse_err(format!("box {i}: score {} outside [0, 1]", b.score)));
        }
        boxes.push(Detection {
            bbox,
            score: b.score,
            class: b.class,
        });
    }
    Ok(DetectionFrame {
        frame: raw.frame,
        timestamp: raw.t,
        boxes,
    })
}

/// Streaming reader over detection lines. Blank lines are skipped; frame
/// indices must strictly increase and timestamps must not decrease.
pub struct DetectionReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    last: Option<(u64, f64)>,
    failed: bool,
}

pub fn read_detection_stream<R: BufRead>(reader: R) -> DetectionReader<R> {
    DetectionReader {
        lines: reader.lines(),
        line_no: 0,
        last: None,
        failed: false,
    }
}

impl<R: BufRead> Iterator for DetectionReader<R> {
    type Item = Result<DetectionFrame, IoError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(IoError::Io(e)));
                }
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let result = parse_detection_line(&line, self.line_no).and_then(|f| {
                if let Some((last, last_t)) = self.last {
                    if f.frame <= last {
                        return Err(IoError::Ordering {
                            line: self.line_no,
                            last,
                            got: f.frame,
                        });
                    }
                    if f.timestamp < last_t {
                        return Err(IoError::Parse {
                            line: self.line_no,
                            message: format!("timestamp {} before {last_t}", f.timestamp),
                        });
                    }
                }
                self.last = Some((f.frame, f.timestamp));
                Ok(f)
            });
            if result.is_err() {
                self.failed = true;
            }
            return Some(result);
        }
    }
}

/// Serializes one frame as a single line (no trailing newline). Times carry
/// six decimals, box components and scores three.
pub fn format_detection_line(f: &DetectionFrame) -> String {
    let boxes: Vec<String> = f
        .boxes
        .iter()
        .map(|d| {
            format!(
                "{{\"x\":{},\"y\":{},\"w\":{},\"h\":{},\"score\":{},\"class\":{}}}",
                fixed(d.bbox.x, 3),
                fixed(d.bbox.y, 3),
                fixed(d.bbox.w, 3),
                fixed(d.bbox.h, 3),
                fixed(d.score, 3),
                serde_json::Value::String(d.class.clone())
            )
        })
        .collect();
    format!(
        "{{\"frame\":{},\"t\":{},\"boxes\":[{}]}}",
        f.frame,
        fixed(f.timestamp, 6),
        boxes.join(",")
    )
}

pub fn write_detections<'a, W: Write>(
    mut w: W,
    frames: impl IntoIterator<Item = &'a DetectionFrame>,
) -> Result<(), IoError> {
    for f in frames {
        writeln!(w, "{}", format_detection_line(f))?;
    }
    w.flush()?;
    Ok(())
}
