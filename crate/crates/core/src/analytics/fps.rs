use super::{AnalyticsError, SamplingConfig};

/// Session-cumulative processing rate: frames over summed per-frame time.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FpsMeter {
    frames: u64,
    time_all: f64,
}

impl FpsMeter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    pub fn time_all(&self) -> f64 {
        self.time_all
    }

    pub fn record(&mut self, start: f64, end: f64) -> Result<(), AnalyticsError> {
        if end.partial_cmp(&start).is_none_or(|o| o.is_lt()) {
            return Err(AnalyticsError::Clock { start, end });
        }
        self.frames += 1;
        self.time_all += end - start;
        Ok(())
    }

    pub fn fps(&self) -> Result<f64, AnalyticsError> {
        if self.frames == 0 || self.time_all <= 0.0 {
            return Err(AnalyticsError::NotReady(
                "no processing time recorded yet".into(),
            ));
        }
        Ok(self.frames as f64 / self.time_all)
    }
}

/// Sampling window length in frames: `round(fps * time_ratio)`, at least 1.
pub fn sampling_interval(meter: &FpsMeter, cfg: &SamplingConfig) -> Result<u32, AnalyticsError> {
    let sfps = (meter.fps()? * cfg.time_ratio).round();
    Ok(sfps.clamp(1.0, f64::from(u32::MAX)) as u32)
}
