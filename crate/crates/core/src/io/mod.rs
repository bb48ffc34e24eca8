//! File formats: detections in, tracks / micro / macro / draw commands out.
//!
//! All numbers are written locale-independently with fixed precision so that
//! identical runs produce byte-identical files.

mod detections;
mod draw;
mod tables;

use thiserror::Error;

pub use detections::{
    format_detection_line, parse_detection_line, read_detection_stream, write_detections, Detection,
    DetectionFrame, DetectionReader,
};
pub use draw::{emit_draw_commands, write_draw_commands, ColorKey, DrawCommand, LabelBox};
pub use tables::{
    read_box_table, read_micro_csv, BoxRow, MacroCsvWriter, MicroCsvWriter, MicroRow, TrackCsvWriter,
    TruthCsvWriter, TruthRow, MICRO_HEADER,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: frame {got} does not follow frame {last}")]
    Ordering { line: usize, last: u64, got: u64 },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Fixed-point decimal with `-0.000` normalised to `0.000`.
pub(crate) fn fixed(v: f64, decimals: usize) -> String {
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

pub(crate) fn fixed_opt(v: Option<f64>, decimals: usize) -> String {
    v.map(|v| fixed(v, decimals)).unwrap_or_default()
}
