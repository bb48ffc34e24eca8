use std::collections::{BTreeMap, VecDeque};

use super::{
    acceleration, classify_direction, detect_lane_change, heading, macro_snapshot, real_distance,
    sampling_interval, speed, AnalyticsConfig, AnalyticsError, Direction, FpsMeter, LaneChange,
    LaneRegions, MacroSnapshot, MicroRecord, SamplingConfig,
};
use crate::geometry::ScaleModel;
use crate::tracker::TrackOutput;

#[derive(Debug, Clone, Copy)]
struct Sample {
    ordinal: u64,
    center: (f64, f64),
    /// Pixel path length since the previous ordinal.
    step: f64,
    /// Filled in for a track seen on a gap frame by linear interpolation.
    interpolated: bool,
    speed: Option<f64>,
    direction: Option<Direction>,
}

/// Result of analysing one processed frame.
#[derive(Debug, Clone, Default)]
pub struct FrameAnalysis {
    pub records: Vec<MicroRecord>,
    /// Present on the last frame of each sampling interval.
    pub snapshot: Option<MacroSnapshot>,
    pub sfps: Option<u32>,
}

/// Per-track sliding-window kinematics driven one processed frame at a time.
///
/// Windows are counted in processed frames. The sampling interval (SFPS) is
/// derived from the cumulative processing rate and only changes at interval
/// boundaries.
#[derive(Debug, Clone)]
pub struct TrafficAnalyzer {
    sampling: SamplingConfig,
    cfg: AnalyticsConfig,
    scale: ScaleModel,
    regions: Option<LaneRegions>,
    meter: FpsMeter,
    sfps: Option<u32>,
    frames_in_interval: u32,
    interval: u64,
    ordinal: u64,
    histories: BTreeMap<u64, VecDeque<Sample>>,
}

impl TrafficAnalyzer {
    pub fn new(
        sampling: SamplingConfig,
        cfg: AnalyticsConfig,
        scale: ScaleModel,
        regions: Option<LaneRegions>,
    ) -> Result<Self, AnalyticsError> {
        SamplingConfig::new(sampling.time_ratio)?;
        if !(cfg.lane_change_threshold_m >= 0.0 && cfg.stationary_eps_mps >= 0.0) {
            return Err(AnalyticsError::InvalidConfig(
                "thresholds must be non-negative".into(),
            ));
        }
        if !(scale.meters_per_pixel.is_finite() && scale.meters_per_pixel > 0.0) {
            return Err(AnalyticsError::InvalidConfig(format!(
                "meters per pixel must be positive, got {}",
                scale.meters_per_pixel
            )));
        }
        Ok(Self {
            sampling,
            cfg,
            scale,
            regions,
            meter: FpsMeter::new(),
            sfps: None,
            frames_in_interval: 0,
            interval: 0,
            ordinal: 0,
            histories: BTreeMap::new(),
        })
    }

    pub fn meter(&self) -> &FpsMeter {
        &self.meter
    }

    pub fn sfps(&self) -> Option<u32> {
        self.sfps
    }

    pub fn scale(&self) -> &ScaleModel {
        &self.scale
    }

    pub fn regions(&self) -> Option<&LaneRegions> {
        self.regions.as_ref()
    }

    /// Feeds one processed frame. `cycle` is the `(start, end)` processing
    /// span in seconds used for the rate estimate.
    pub fn process(
        &mut self,
        frame: u64,
        cycle: Option<(f64, f64)>,
        tracks: &[TrackOutput],
    ) -> Result<FrameAnalysis, AnalyticsError> {
        if let Some((start, end)) = cycle {
            self.meter.record(start, end)?;
        }
        self.ordinal += 1;
        let n = self.ordinal;
        if self.sfps.is_none() {
            self.sfps = sampling_interval(&self.meter, &self.sampling).ok();
        }

        for t in tracks {
            let center = t.bbox.center();
            let hist = self.histories.entry(t.id).or_default();
            let Some(last) = hist.back().copied() else {
                hist.push_back(Sample::observed(n, center, 0.0));
                continue;
            };
            let gap = n - last.ordinal;
            let dx = center.0 - last.center.0;
            let dy = center.1 - last.center.1;
            let per = dx.hypot(dy) / gap as f64;
            for k in 1..gap {
                let f = k as f64 / gap as f64;
                hist.push_back(Sample {
                    ordinal: last.ordinal + k,
                    center: (last.center.0 + f * dx, last.center.1 + f * dy),
                    step: per,
                    interpolated: true,
                    speed: None,
                    direction: None,
                });
            }
            hist.push_back(Sample::observed(n, center, per));
        }

        let mut records = Vec::new();
        if let Some(s) = self.sfps {
            for t in tracks {
                if let Some(r) = self.kinematics(frame, n, s, t)? {
                    records.push(r);
                }
            }
        }

        let keep = self.sfps.map_or(2, |s| 2 * u64::from(s) + 2);
        let keep_from = n.saturating_sub(keep);
        self.histories.retain(|_, h| {
            while h.front().is_some_and(|s| s.ordinal < keep_from) {
                h.pop_front();
            }
            !h.is_empty()
        });

        let mut snapshot = None;
        if let Some(s) = self.sfps {
            self.frames_in_interval += 1;
            if self.frames_in_interval >= s {
                snapshot = Some(macro_snapshot(
                    self.interval,
                    frame,
                    tracks,
                    &records,
                    self.regions.as_ref(),
                ));
                self.interval += 1;
                self.frames_in_interval = 0;
                if let Ok(next) = sampling_interval(&self.meter, &self.sampling) {
                    self.sfps = Some(next);
                }
            }
        }

        Ok(FrameAnalysis {
            records,
            snapshot,
            sfps: self.sfps,
        })
    }

    fn kinematics(
        &mut self,
        frame: u64,
        n: u64,
        sfps: u32,
        t: &TrackOutput,
    ) -> Result<Option<MicroRecord>, AnalyticsError> {
        let Some(hist) = self.histories.get_mut(&t.id) else {
            return Ok(None);
        };
        let window = sfps as usize;
        let cur = hist.len() - 1;
        if cur < window || hist[cur - window].ordinal != n - u64::from(sfps) {
            return Ok(None);
        }
        let start = hist[cur - window];
        let end = hist[cur];
        let steps: Vec<f64> = hist.range(cur - window + 1..=cur).map(|s| s.step).collect();
        let dist = real_distance(&steps, sfps, &self.scale)?;
        let v = speed(dist, &self.sampling);

        let dx = end.center.0 - start.center.0;
        let dy_north = -(end.center.1 - start.center.1);
        let raw_heading = heading(dx, dy_north);
        let direction = classify_direction(raw_heading, v, self.cfg.stationary_eps_mps);
        let heading_deg = if direction == Direction::Stationary {
            None
        } else {
            raw_heading
        };
        let accel = start
            .speed
            .filter(|_| !start.interpolated)
            .map(|prev| acceleration(v, prev, &self.sampling));
        let lane_change = match start.direction {
            Some(ds) => detect_lane_change(start.center, end.center, ds, direction, &self.cfg, &self.scale),
            None => LaneChange::None,
        };

        hist[cur].speed = Some(v);
        hist[cur].direction = Some(direction);

        Ok(Some(MicroRecord {
            track_id: t.id,
            frame,
            bbox: t.bbox,
            speed_mps: v,
            acceleration_mps2: accel,
            heading_deg,
            direction,
            lane_change,
        }))
    }
}

impl Sample {
    fn observed(ordinal: u64, center: (f64, f64), step: f64) -> Self {
        Self {
            ordinal,
            center,
            step,
            interpolated: false,
            speed: None,
            direction: None,
        }
    }
}
