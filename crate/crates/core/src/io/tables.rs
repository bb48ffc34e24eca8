//! CSV outputs: tracks, micro records, macro snapshots and synthetic ground
//! truth, plus a lenient box-table reader used by evaluation.

use std::io::{Read, Write};

use super::{fixed, fixed_opt, IoError};
use crate::analytics::{Direction, LaneChange, MacroSnapshot, MicroRecord};
use crate::geometry::BBoxCorners;
use crate::tracker::TrackOutput;

pub const MICRO_HEADER: [&str; 11] = [
    "frame",
    "id",
    "x",
    "y",
    "w",
    "h",
    "speed_mps",
    "accel_mps2",
    "heading_deg",
    "direction",
    "lane_change",
];

const LANE_KEYS: [&str; 8] = ["n_in", "n_out", "e_in", "e_out", "s_in", "s_out", "w_in", "w_out"];

fn box_fields(b: &BBoxCorners) -> [String; 4] {
    [
        fixed(b.x1, 3),
        fixed(b.y1, 3),
        fixed(b.width(), 3),
        fixed(b.height(), 3),
    ]
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

/// `frame,id,x,y,w,h,status`, boxes as top-left pixels.
pub struct TrackCsvWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> TrackCsvWriter<W> {
    pub fn new(w: W) -> Result<Self, IoError> {
        let mut inner = csv_writer(w);
        inner.write_record(["frame", "id", "x", "y", "w", "h", "status"])?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, frame: u64, tracks: &[TrackOutput]) -> Result<(), IoError> {
        for t in tracks {
            let [x, y, w, h] = box_fields(&t.bbox);
            self.inner.write_record([
                frame.to_string(),
                t.id.to_string(),
                x,
                y,
                w,
                h,
                t.status.as_str().to_string(),
            ])?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, IoError> {
        self.inner.flush()?;
        self.inner.into_inner().map_err(|e| IoError::Io(e.into_error()))
    }
}

fn micro_fields(r: &MicroRecord) -> Vec<String> {
    let [x, y, w, h] = box_fields(&r.bbox);
    vec![
        r.frame.to_string(),
        r.track_id.to_string(),
        x,
        y,
        w,
        h,
        fixed(r.speed_mps, 3),
        fixed_opt(r.acceleration_mps2, 3),
        fixed_opt(r.heading_deg, 3),
        r.direction.to_string(),
        r.lane_change.to_string(),
    ]
}

pub struct MicroCsvWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> MicroCsvWriter<W> {
    pub fn new(w: W) -> Result<Self, IoError> {
        let mut inner = csv_writer(w);
        inner.write_record(MICRO_HEADER)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, records: &[MicroRecord]) -> Result<(), IoError> {
        for r in records {
            self.inner.write_record(micro_fields(r))?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, IoError> {
        self.inner.flush()?;
        self.inner.into_inner().map_err(|e| IoError::Io(e.into_error()))
    }
}

/// `interval,frame,total`, one count per lane area, then a count and mean
/// speed per direction. Mean speed is empty when the count is zero.
pub struct MacroCsvWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> MacroCsvWriter<W> {
    pub fn new(w: W) -> Result<Self, IoError> {
        let mut inner = csv_writer(w);
        let mut header: Vec<String> = ["interval", "frame", "total"].map(String::from).to_vec();
        header.extend(LANE_KEYS.map(String::from));
        for d in Direction::ALL {
            header.push(format!("count_{d}"));
            header.push(format!("mean_speed_{d}"));
        }
        inner.write_record(&header)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, s: &MacroSnapshot) -> Result<(), IoError> {
        let mut row = vec![
            s.interval.to_string(),
            s.frame.to_string(),
            s.total_vehicles.to_string(),
        ];
        row.extend(s.lane_counts.iter().map(u32::to_string));
        for d in Direction::ALL {
            match s.per_direction.get(&d) {
                Some(&(n, mean)) => {
                    row.push(n.to_string());
                    row.push(fixed(mean, 3));
                }
                None => {
                    row.push("0".into());
                    row.push(String::new());
                }
            }
        }
        self.inner.write_record(&row)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, IoError> {
        self.inner.flush()?;
        self.inner.into_inner().map_err(|e| IoError::Io(e.into_error()))
    }
}

/// One ground-truth sample of a synthetic vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRow {
    pub frame: u64,
    pub t: f64,
    pub id: u64,
    pub bbox: BBoxCorners,
    pub speed_mps: f64,
    pub acceleration_mps2: Option<f64>,
    pub heading_deg: Option<f64>,
    pub direction: Direction,
    pub lane_change: LaneChange,
    /// Ground position of the box center in meters, x right and y down.
    pub true_pos_m: (f64, f64),
    /// False while the vehicle is occluded and produces no detection.
    pub visible: bool,
}

pub struct TruthCsvWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> TruthCsvWriter<W> {
    pub fn new(w: W) -> Result<Self, IoError> {
        let mut inner = csv_writer(w);
        let mut header: Vec<&str> = vec!["frame", "t"];
        header.extend(&MICRO_HEADER[1..]);
        header.extend(["true_x_m", "true_y_m", "visible"]);
        inner.write_record(&header)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, r: &TruthRow) -> Result<(), IoError> {
        let [x, y, w, h] = box_fields(&r.bbox);
        self.inner.write_record([
            r.frame.to_string(),
            fixed(r.t, 6),
            r.id.to_string(),
            x,
            y,
            w,
            h,
            fixed(r.speed_mps, 3),
            fixed_opt(r.acceleration_mps2, 3),
            fixed_opt(r.heading_deg, 3),
            r.direction.to_string(),
            r.lane_change.to_string(),
            fixed(r.true_pos_m.0, 3),
            fixed(r.true_pos_m.1, 3),
            u8::from(r.visible).to_string(),
        ])?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, IoError> {
        self.inner.flush()?;
        self.inner.into_inner().map_err(|e| IoError::Io(e.into_error()))
    }
}

/// A parsed micro CSV row.
pub type MicroRow = MicroRecord;

fn header_index(headers: &csv::StringRecord) -> impl Fn(&str) -> Option<usize> + '_ {
    move |name| headers.iter().position(|h| h == name)
}

fn field(rec: &csv::StringRecord, idx: usize, line: usize) -> Result<&str, IoError> {
    rec.get(idx).ok_or_else(|| IoError::Parse {
        line,
        message: format!("missing column {idx}"),
    })
}

fn parse_num<T: std::str::FromStr>(s: &str, name: &str, line: usize) -> Result<T, IoError>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e| IoError::Parse {
        line,
        message: format!("{name}: {e} ({s:?})"),
    })
}

fn parse_opt(s: &str, name: &str, line: usize) -> Result<Option<f64>, IoError> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_num(s, name, line).map(Some)
    }
}

fn parse_box(x: f64, y: f64, w: f64, h: f64, line: usize) -> Result<BBoxCorners, IoError> {
    BBoxCorners::new(x, y, x + w, y + h).map_err(|e| IoError::Parse {
        line,
        message: e.to_string(),
    })
}

fn record_line(rec: &csv::StringRecord) -> usize {
    rec.position().map_or(0, |p| p.line() as usize)
}

/// Reads a micro CSV written by [`MicroCsvWriter`]. The header must match
/// exactly.
pub fn read_micro_csv<R: Read>(r: R) -> Result<Vec<MicroRow>, IoError> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(MICRO_HEADER) {
        return Err(IoError::Parse {
            line: 1,
            message: format!("unexpected header {:?}", headers.iter().collect::<Vec<_>>()),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        let f = |i: usize| field(&rec, i, line);
        let num = |i: usize| -> Result<f64, IoError> { parse_num(f(i)?, MICRO_HEADER[i], line) };
        let bbox = parse_box(num(2)?, num(3)?, num(4)?, num(5)?, line)?;
        let bad = |message: String| IoError::Parse { line, message };
        out.push(MicroRecord {
            frame: parse_num(f(0)?, "frame", line)?,
            track_id: parse_num(f(1)?, "id", line)?,
            bbox,
            speed_mps: num(6)?,
            acceleration_mps2: parse_opt(f(7)?, "accel_mps2", line)?,
            heading_deg: parse_opt(f(8)?, "heading_deg", line)?,
            direction: f(9)?.parse().map_err(bad)?,
            lane_change: f(10)?.parse().map_err(|m| IoError::Parse { line, message: m })?,
        });
    }
    Ok(out)
}

/// One box from any of the CSV tables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxRow {
    pub frame: u64,
    pub id: Option<u64>,
    pub bbox: BBoxCorners,
    pub visible: bool,
}

/// Reads `frame,x,y,w,h` (plus optional `id` and `visible`) from any CSV with
/// a header row, in file order. Other columns are ignored.
pub fn read_box_table<R: Read>(r: R) -> Result<Vec<BoxRow>, IoError> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    let idx = header_index(&headers);
    let need = |name: &str| {
        idx(name).ok_or_else(|| IoError::Parse {
            line: 1,
            message: format!("missing column {name:?}"),
        })
    };
    let (fi, xi, yi, wi, hi) = (need("frame")?, need("x")?, need("y")?, need("w")?, need("h")?);
    let (id_i, vis_i) = (idx("id"), idx("visible"));
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        let num = |i: usize, name: &str| -> Result<f64, IoError> { parse_num(field(&rec, i, line)?, name, line) };
        let bbox = parse_box(num(xi, "x")?, num(yi, "y")?, num(wi, "w")?, num(hi, "h")?, line)?;
        let id = match id_i {
            Some(i) => Some(parse_num(field(&rec, i, line)?, "id", line)?),
            None => None,
        };
        let visible = match vis_i {
            Some(i) => match field(&rec, i, line)? {
                "1" | "true" => true,
                "0" | "false" => false,
                other => {
                    return Err(IoError::Parse {
                        line,
                        message: format!("visible: expected 0 or 1, got {other:?}"),
                    })
                }
            },
            None => true,
        };
        out.push(BoxRow {
            frame: parse_num(field(&rec, fi, line)?, "frame", line)?,
            id,
            bbox,
            visible,
        });
    }
    Ok(out)
}
