//! SORT multi-object tracking: Kalman prediction, Hungarian IoU association
//! and a spawn/confirm/reap track life cycle.

mod hungarian;
mod kalman;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, BBoxCorners};

pub use hungarian::hungarian_min_cost;
pub use kalman::{box_to_measurement, KalmanBoxState, KalmanNoise, MIN_AREA};

/// Number of `(frame, box)` pairs each track remembers.
pub const HISTORY_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackerError {
    #[error("invalid cost matrix: {0}")]
    InvalidCost(String),
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error("frame {got} arrived after frame {last}")]
    OutOfOrder { last: u64, got: u64 },
    #[error("invalid tracker config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub iou_threshold: f64,
    /// Frames a track may go unmatched before it is removed.
    pub max_age: u32,
    pub min_hits: u32,
    #[serde(skip)]
    pub noise: KalmanNoise,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.3,
            max_age: 3,
            min_hits: 1,
            noise: KalmanNoise::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackerError> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(TrackerError::InvalidConfig(format!(
                "iou_threshold must lie in (0, 1), got {}",
                self.iou_threshold
            )));
        }
        if self.max_age < 1 {
            return Err(TrackerError::InvalidConfig("max_age must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assignment {
    /// `(detection index, track index)`
    pub matches: Vec<(usize, usize)>,
    pub unmatched_detections: Vec<usize>,
    pub unmatched_tracks: Vec<usize>,
}

/// Matches detections to predicted track boxes on `1 - IoU` cost; optimal
/// pairs below `iou_threshold` are split back into unmatched entries.
pub fn associate(
    detections: &[BBoxCorners],
    predicted: &[BBoxCorners],
    iou_threshold: f64,
) -> Assignment {
    if detections.is_empty() || predicted.is_empty() {
        return Assignment {
            matches: Vec::new(),
            unmatched_detections: (0..detections.len()).collect(),
            unmatched_tracks: (0..predicted.len()).collect(),
        };
    }
    let ious: Vec<Vec<f64>> = detections
        .iter()
        .map(|d| predicted.iter().map(|p| iou(d, p)).collect())
        .collect();
    let cost: Vec<Vec<f64>> = ious
        .iter()
        .map(|row| row.iter().map(|v| 1.0 - v).collect())
        .collect();
    // cost entries are in [0, 1], never non-finite
    let pairs = hungarian_min_cost(&cost).unwrap_or_default();

    let mut det_used = vec![false; detections.len()];
    let mut trk_used = vec![false; predicted.len()];
    let mut matches = Vec::new();
    for (d, t) in pairs {
        if ious[d][t] >= iou_threshold {
            det_used[d] = true;
            trk_used[t] = true;
            matches.push((d, t));
        }
    }
    Assignment {
        matches,
        unmatched_detections: (0..detections.len()).filter(|&d| !det_used[d]).collect(),
        unmatched_tracks: (0..predicted.len()).filter(|&t| !trk_used[t]).collect(),
    }
}

#[derive(Debug, Clone)]
pub struct Track {
    pub id: u64,
    pub kalman: KalmanBoxState,
    /// Total number of matched detections, including the spawning one.
    pub hits: u32,
    pub hit_streak: u32,
    pub time_since_update: u32,
    /// Frames since spawn.
    pub age: u32,
    pub history: VecDeque<(u64, BBoxCorners)>,
}

impl Track {
    fn spawn(id: u64, frame: u64, det: &BBoxCorners, noise: &KalmanNoise) -> Self {
        let mut history = VecDeque::with_capacity(HISTORY_LEN);
        history.push_back((frame, *det));
        Self {
            id,
            kalman: KalmanBoxState::from_box(det, noise),
            hits: 1,
            hit_streak: 1,
            time_since_update: 0,
            age: 0,
            history,
        }
    }

    pub fn bbox(&self) -> Option<BBoxCorners> {
        self.kalman.to_box()
    }

    fn record(&mut self, frame: u64) {
        if let Some(b) = self.bbox() {
            if self.history.len() == HISTORY_LEN {
                self.history.pop_front();
            }
            self.history.push_back((frame, b));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackStatus {
    /// Reported during the start-up frames before it reached `min_hits`.
    Tentative,
    Confirmed,
}

impl TrackStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrackStatus::Tentative => "tentative",
            TrackStatus::Confirmed => "confirmed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackOutput {
    pub id: u64,
    pub bbox: BBoxCorners,
    pub status: TrackStatus,
}

/// Single-owner SORT tracker state.
#[derive(Debug, Clone)]
pub struct SortTracker {
    config: TrackerConfig,
    tracks: Vec<Track>,
    next_id: u64,
    last_frame: Option<u64>,
    frame_count: u64,
}

impl SortTracker {
    pub fn new(config: TrackerConfig) -> Result<Self, TrackerError> {
        config.validate()?;
        Ok(Self {
            config,
            tracks: Vec::new(),
            next_id: 1,
            last_frame: None,
            frame_count: 0,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Runs one frame: predict, associate, update, spawn, reap. Returns the
    /// tracks matched or spawned on this frame that are confirmed (or still
    /// inside the start-up window), ordered by id.
    ///
    /// A jump in frame index (dropped frames upstream) advances every filter
    /// by the number of skipped frames.
    pub fn step(
        &mut self,
        frame: u64,
        detections: &[BBoxCorners],
    ) -> Result<Vec<TrackOutput>, TrackerError> {
        if let Some(last) = self.last_frame {
            if frame < last {
                return Err(TrackerError::OutOfOrder { last, got: frame });
            }
        }
        if let Some(d) = detections
            .iter()
            .find(|d| ![d.x1, d.y1, d.x2, d.y2].iter().all(|v| v.is_finite()))
        {
            return Err(TrackerError::InvalidObservation(format!("{d:?}")));
        }
        let steps = match self.last_frame {
            Some(last) => (frame - last).min(u64::from(self.config.max_age) + 1) as u32,
            None => 1,
        };
        self.last_frame = Some(frame);
        self.frame_count += 1;
        let noise = self.config.noise;

        for t in &mut self.tracks {
            for _ in 0..steps {
                t.kalman = t.kalman.predict(&noise);
                t.age += 1;
                if t.time_since_update > 0 {
                    t.hit_streak = 0;
                }
                t.time_since_update += 1;
            }
        }
        self.tracks.retain(|t| t.bbox().is_some());

        let predicted: Vec<BBoxCorners> = self.tracks.iter().filter_map(Track::bbox).collect();
        let assignment = associate(detections, &predicted, self.config.iou_threshold);

        for &(d, t) in &assignment.matches {
            let track = &mut self.tracks[t];
            track.kalman = track.kalman.update(&detections[d], &noise)?;
            track.time_since_update = 0;
            track.hits += 1;
            track.hit_streak += 1;
            track.record(frame);
        }
        for &d in &assignment.unmatched_detections {
            let id = self.next_id;
            self.next_id += 1;
            self.tracks
                .push(Track::spawn(id, frame, &detections[d], &noise));
        }

        let max_age = self.config.max_age;
        self.tracks.retain(|t| t.time_since_update <= max_age);

        let min_hits = self.config.min_hits;
        let warmup = self.frame_count <= u64::from(min_hits);
        let mut out: Vec<TrackOutput> = self
            .tracks
            .iter()
            .filter(|t| t.time_since_update == 0)
            .filter_map(|t| {
                let confirmed = t.hits >= min_hits;
                if !(confirmed || warmup) {
                    return None;
                }
                Some(TrackOutput {
                    id: t.id,
                    bbox: t.bbox()?,
                    status: if confirmed {
                        TrackStatus::Confirmed
                    } else {
                        TrackStatus::Tentative
                    },
                })
            })
            .collect();
        out.sort_by_key(|o| o.id);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBoxCorners {
        BBoxCorners::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn associate_exact_overlap() {
        let a = associate(&[b(0.0, 0.0, 10.0, 10.0)], &[b(0.0, 0.0, 10.0, 10.0)], 0.3);
        assert_eq!(a.matches, vec![(0, 0)]);
        assert!(a.unmatched_detections.is_empty() && a.unmatched_tracks.is_empty());
    }

    #[test]
    fn associate_disjoint() {
        let a = associate(&[b(0.0, 0.0, 1.0, 1.0)], &[b(5.0, 5.0, 6.0, 6.0)], 0.3);
        assert!(a.matches.is_empty());
        assert_eq!(a.unmatched_detections, vec![0]);
        assert_eq!(a.unmatched_tracks, vec![0]);
    }

    /// Best total IoU over every partial injective matching that respects the
    /// threshold, by enumeration.
    fn brute_force(dets: &[BBoxCorners], preds: &[BBoxCorners], thr: f64) -> f64 {
        fn rec(dets: &[BBoxCorners], preds: &[BBoxCorners], thr: f64, d: usize, used: &mut Vec<bool>) -> f64 {
            if d == dets.len() {
                return 0.0;
            }
            let mut best = rec(dets, preds, thr, d + 1, used);
            for p in 0..preds.len() {
                let v = iou(&dets[d], &preds[p]);
                if !used[p] && v >= thr {
                    used[p] = true;
                    best = best.max(v + rec(dets, preds, thr, d + 1, used));
                    used[p] = false;
                }
            }
            best
        }
        rec(dets, preds, thr, 0, &mut vec![false; preds.len()])
    }

    #[test]
    fn associate_three_by_two_matches_enumeration() {
        let dets = [
            b(0.0, 0.0, 10.0, 10.0),
            b(2.0, 0.0, 12.0, 10.0),
            b(50.0, 50.0, 60.0, 60.0),
        ];
        let preds = [b(1.0, 0.0, 11.0, 10.0), b(49.0, 51.0, 59.0, 61.0)];
        let a = associate(&dets, &preds, 0.3);
        let got: f64 = a.matches.iter().map(|&(d, p)| iou(&dets[d], &preds[p])).sum();
        assert!((got - brute_force(&dets, &preds, 0.3)).abs() < 1e-12);
        assert_eq!(a.matches.len(), 2);
        assert_eq!(a.unmatched_detections.len(), 1);
        assert!(a.unmatched_tracks.is_empty());
    }

    #[test]
    fn empty_frame_on_empty_tracker() {
        let mut t = SortTracker::new(TrackerConfig::default()).unwrap();
        assert!(t.step(0, &[]).unwrap().is_empty());
    }

    #[test]
    fn out_of_order_rejected() {
        let mut t = SortTracker::new(TrackerConfig::default()).unwrap();
        t.step(5, &[]).unwrap();
        assert_eq!(
            t.step(4, &[]).unwrap_err(),
            TrackerError::OutOfOrder { last: 5, got: 4 }
        );
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = TrackerConfig {
            iou_threshold: 1.5,
            ..TrackerConfig::default()
        };
        assert!(SortTracker::new(cfg).is_err());
        let cfg = TrackerConfig {
            max_age: 0,
            ..TrackerConfig::default()
        };
        assert!(SortTracker::new(cfg).is_err());
    }

    fn moving(frame: u64, x0: f64, y0: f64, vx: f64, vy: f64) -> BBoxCorners {
        let t = frame as f64;
        b(x0 + vx * t, y0 + vy * t, x0 + vx * t + 40.0, y0 + vy * t + 16.0)
    }

    #[test]
    fn two_separated_vehicles_keep_ids() {
        let mut t = SortTracker::new(TrackerConfig::default()).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for f in 0..100 {
            let dets = [moving(f, 0.0, 100.0, 3.0, 0.0), moving(f, 600.0, 400.0, -2.0, -1.0)];
            let out = t.step(f, &dets).unwrap();
            assert_eq!(out.len(), 2);
            // first box is always the eastbound vehicle spawned first
            assert_eq!(out[0].id, 1);
            assert_eq!(out[1].id, 2);
            seen.extend(out.iter().map(|o| o.id));
        }
        assert_eq!(seen.len(), 2);
    }

    #[test]
    fn occlusion_within_max_age_keeps_id() {
        let mut t = SortTracker::new(TrackerConfig::default()).unwrap();
        for f in 0..60 {
            let dets: Vec<_> = if (30..33).contains(&f) {
                Vec::new()
            } else {
                vec![moving(f, 0.0, 100.0, 4.0, 0.0)]
            };
            let out = t.step(f, &dets).unwrap();
            if !dets.is_empty() {
                assert_eq!(out.len(), 1);
                assert_eq!(out[0].id, 1, "frame {f}");
            }
        }
    }

    #[test]
    fn long_occlusion_reaps_and_respawns() {
        let mut t = SortTracker::new(TrackerConfig::default()).unwrap();
        for f in 0..20 {
            t.step(f, &[moving(f, 0.0, 100.0, 4.0, 0.0)]).unwrap();
        }
        for f in 20..24 {
            t.step(f, &[]).unwrap();
            assert!(t.tracks().iter().all(|tr| tr.time_since_update <= 3));
        }
        assert!(t.tracks().is_empty());
        let out = t.step(24, &[moving(24, 0.0, 100.0, 4.0, 0.0)]).unwrap();
        assert_eq!(out[0].id, 2);
    }

    #[test]
    fn frame_gap_advances_prediction() {
        let mut t = SortTracker::new(TrackerConfig::default()).unwrap();
        for f in 0..20 {
            t.step(f, &[moving(f, 0.0, 100.0, 6.0, 0.0)]).unwrap();
        }
        // two frames dropped upstream; a single predict step would lag 12 px
        let out = t.step(22, &[moving(22, 0.0, 100.0, 6.0, 0.0)]).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].id, 1);
    }

    #[test]
    fn min_hits_gates_output() {
        let cfg = TrackerConfig {
            min_hits: 3,
            ..TrackerConfig::default()
        };
        let mut t = SortTracker::new(cfg).unwrap();
        // during the first min_hits frames everything is reported
        let out = t.step(0, &[moving(0, 0.0, 0.0, 2.0, 0.0)]).unwrap();
        assert_eq!(out[0].status, TrackStatus::Tentative);
        for f in 1..5 {
            t.step(f, &[moving(f, 0.0, 0.0, 2.0, 0.0)]).unwrap();
        }
        // a late newcomer is withheld until it has 3 hits
        let late = |f| moving(f, 500.0, 500.0, 0.0, 2.0);
        let out = t.step(5, &[moving(5, 0.0, 0.0, 2.0, 0.0), late(5)]).unwrap();
        assert_eq!(out.len(), 1);
        t.step(6, &[moving(6, 0.0, 0.0, 2.0, 0.0), late(6)]).unwrap();
        let out = t.step(7, &[moving(7, 0.0, 0.0, 2.0, 0.0), late(7)]).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|o| o.status == TrackStatus::Confirmed));
    }

    fn scene() -> impl Strategy<Value = Vec<Vec<(f64, f64)>>> {
        proptest::collection::vec(
            proptest::collection::vec((0.0..500.0f64, 0.0..500.0f64), 0..6),
            1..30,
        )
    }

    proptest! {
        #[test]
        fn assignment_invariants(
            dets in proptest::collection::vec((0.0..100.0f64, 0.0..100.0f64, 1.0..30.0f64), 0..6),
            preds in proptest::collection::vec((0.0..100.0f64, 0.0..100.0f64, 1.0..30.0f64), 0..6),
            thr in 0.05..0.95f64,
        ) {
            let mk = |v: &Vec<(f64, f64, f64)>| -> Vec<BBoxCorners> {
                v.iter().map(|&(x, y, s)| b(x, y, x + s, y + s)).collect()
            };
            let (d, p) = (mk(&dets), mk(&preds));
            let a = associate(&d, &p, thr);
            let mut ds: Vec<_> = a.matches.iter().map(|m| m.0).chain(a.unmatched_detections.iter().copied()).collect();
            let mut ps: Vec<_> = a.matches.iter().map(|m| m.1).chain(a.unmatched_tracks.iter().copied()).collect();
            ds.sort_unstable();
            ps.sort_unstable();
            prop_assert_eq!(ds, (0..d.len()).collect::<Vec<_>>());
            prop_assert_eq!(ps, (0..p.len()).collect::<Vec<_>>());
            for &(i, j) in &a.matches {
                prop_assert!(iou(&d[i], &p[j]) >= thr);
            }
        }

        #[test]
        fn deterministic_and_monotone_ids(frames in scene()) {
            let run = || {
                let mut t = SortTracker::new(TrackerConfig::default()).unwrap();
                let mut log = Vec::new();
                let mut seen = std::collections::BTreeSet::new();
                for (f, dets) in frames.iter().enumerate() {
                    let boxes: Vec<_> = dets.iter().map(|&(x, y)| b(x, y, x + 20.0, y + 10.0)).collect();
                    let out = t.step(f as u64, &boxes).unwrap();
                    let before = seen.last().copied().unwrap_or(0);
                    let mut fresh: Vec<u64> = Vec::new();
                    for tr in t.tracks() {
                        assert!(tr.time_since_update <= t.config().max_age);
                        if seen.insert(tr.id) {
                            fresh.push(tr.id);
                        }
                    }
                    // spawned ids exceed every earlier id and increase in spawn order
                    assert!(fresh.iter().all(|&id| id > before));
                    assert!(fresh.windows(2).all(|w| w[0] < w[1]));
                    log.push(format!("{out:?}"));
                }
                log
            };
            prop_assert_eq!(run(), run());
        }
    }
}
