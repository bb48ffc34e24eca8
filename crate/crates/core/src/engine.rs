//! Tracker, analytics and overlay emission wired into one pipeline stage.

use thiserror::Error;

use crate::analytics::{AnalyticsError, MacroSnapshot, MicroRecord, TrafficAnalyzer};
use crate::config::{ConfigError, EngineConfig};
use crate::geometry::{DrawingArea, ViewSize};
use crate::io::{emit_draw_commands, DetectionFrame, DrawCommand};
use crate::pipeline::{FrameEnvelope, Stage, Timing};
use crate::tracker::{SortTracker, TrackOutput, TrackerError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
}

/// Everything produced for one processed frame.
#[derive(Debug, Clone)]
pub struct FrameResult {
    pub frame: u64,
    pub tracks: Vec<TrackOutput>,
    pub records: Vec<MicroRecord>,
    pub snapshot: Option<MacroSnapshot>,
    pub draws: Vec<DrawCommand>,
}

pub struct TrafficEngine {
    tracker: SortTracker,
    analyzer: TrafficAnalyzer,
    area: DrawingArea,
    video: ViewSize,
}

impl TrafficEngine {
    pub fn new(cfg: &EngineConfig) -> Result<Self, EngineError> {
        let r = cfg.resolve()?;
        Ok(Self {
            tracker: SortTracker::new(cfg.tracker)?,
            analyzer: TrafficAnalyzer::new(cfg.sampling, cfg.analytics, r.scale, r.lanes)?,
            area: r.drawing_area,
            video: r.video,
        })
    }

    pub fn tracker(&self) -> &SortTracker {
        &self.tracker
    }

    pub fn analyzer(&self) -> &TrafficAnalyzer {
        &self.analyzer
    }

    /// Processes one frame. `cycle` is the processing span fed to the rate
    /// estimate, if known.
    pub fn step(&mut self, frame: &DetectionFrame, cycle: Option<(f64, f64)>) -> Result<FrameResult, EngineError> {
        let tracks = self.tracker.step(frame.frame, &frame.corners())?;
        let analysis = self.analyzer.process(frame.frame, cycle, &tracks)?;
        let draws = emit_draw_commands(frame.frame, &tracks, &analysis.records, &self.area, self.video);
        Ok(FrameResult {
            frame: frame.frame,
            tracks,
            records: analysis.records,
            snapshot: analysis.snapshot,
            draws,
        })
    }
}

impl Stage<DetectionFrame> for TrafficEngine {
    type Output = FrameResult;
    type Error = EngineError;

    fn process(&mut self, env: &FrameEnvelope<DetectionFrame>, timing: Timing) -> Result<FrameResult, EngineError> {
        self.step(&env.payload, timing.cycle())
    }
}

/// Wraps a detection frame for the pipeline, keyed by its own index and time.
pub fn envelope(frame: DetectionFrame) -> FrameEnvelope<DetectionFrame> {
    FrameEnvelope {
        index: frame.frame,
        timestamp: frame.timestamp,
        payload: frame,
    }
}
