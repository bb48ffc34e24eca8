//! Ingest/process separation with a bounded latest-wins buffer.
//!
//! An ingester pushes frames into the buffer as they arrive; a processor takes
//! the oldest buffered frame whenever it is free. When the buffer is full the
//! oldest frame is evicted and counted as dropped, so under overload the
//! processor always works on recent frames.
//!
//! Two clocks drive the same policy:
//! - [`run_virtual`]: a discrete-event simulation on integer nanoseconds.
//!   Arrival times come from source timestamps and per-frame processing cost
//!   from a cost model, so runs are exactly reproducible.
//! - [`run_threaded`]: a real ingester thread and processor, optionally pacing
//!   arrivals by source timestamps.

use std::collections::VecDeque;
use std::fmt::Display;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEnvelope<P> {
    pub index: u64,
    /// Source timestamp, seconds.
    pub timestamp: f64,
    pub payload: P,
}

/// Counters for one pipeline run. `received == processed + dropped + in_flight`
/// holds at every published snapshot.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PipelineStats {
    pub received: u64,
    pub processed: u64,
    pub dropped: u64,
    pub in_flight: u64,
    pub capacity: usize,
    pub max_queue: usize,
    /// Processed frames per second of pipeline time, from the first arrival to
    /// the last completed frame.
    pub processed_fps: f64,
    pub max_latency_s: f64,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("frame {got} arrived after frame {last}")]
    Ordering {
        last: u64,
        got: u64,
        stats: PipelineStats,
    },
    #[error("source failed after {} frames: {message}", stats.received)]
    Source {
        message: String,
        stats: PipelineStats,
    },
    #[error("stage failed on frame {frame}: {message}")]
    Stage {
        frame: u64,
        message: String,
        stats: PipelineStats,
    },
    #[error("invalid pipeline config: {0}")]
    Config(String),
}

impl PipelineError {
    pub fn stats(&self) -> Option<&PipelineStats> {
        match self {
            PipelineError::Ordering { stats, .. }
            | PipelineError::Source { stats, .. }
            | PipelineError::Stage { stats, .. } => Some(stats),
            PipelineError::Config(_) => None,
        }
    }
}

/// Bounded FIFO that evicts its oldest entries to make room.
#[derive(Debug, Clone)]
pub struct LatestWinsBuffer<T> {
    capacity: usize,
    items: VecDeque<T>,
}

impl<T> LatestWinsBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self, PipelineError> {
        if capacity == 0 {
            return Err(PipelineError::Config("buffer capacity must be >= 1".into()));
        }
        Ok(Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
        })
    }

    /// Stores `incoming`, returning whatever had to be evicted (oldest first).
    pub fn push(&mut self, incoming: T) -> Vec<T> {
        self.items.push_back(incoming);
        let excess = self.items.len().saturating_sub(self.capacity);
        self.items.drain(..excess).collect()
    }

    pub fn pop(&mut self) -> Option<T> {
        self.items.pop_front()
    }

    pub fn front(&self) -> Option<&T> {
        self.items.front()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

/// Free-function form of [`LatestWinsBuffer::push`].
pub fn drop_policy_latest_wins<T>(buffer: &mut LatestWinsBuffer<T>, incoming: T) -> Vec<T> {
    buffer.push(incoming)
}

/// When the processor picked up the current frame, and the previous one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub pickup: f64,
    pub prev_pickup: Option<f64>,
}

impl Timing {
    /// The processing cycle that ended with this pickup.
    pub fn cycle(&self) -> Option<(f64, f64)> {
        self.prev_pickup.map(|p| (p, self.pickup))
    }
}

pub trait Stage<P> {
    type Output;
    type Error: Display;

    fn process(&mut self, env: &FrameEnvelope<P>, timing: Timing) -> Result<Self::Output, Self::Error>;
}

/// One processed frame as delivered to the sink.
#[derive(Debug, Clone)]
pub struct Processed<O> {
    pub index: u64,
    pub timestamp: f64,
    pub arrival: f64,
    pub start: f64,
    pub end: f64,
    pub output: O,
    /// Counters right after this frame completed.
    pub stats: PipelineStats,
}

impl<O> Processed<O> {
    pub fn latency(&self) -> f64 {
        self.end - self.arrival
    }
}

struct Queued<P> {
    env: FrameEnvelope<P>,
    arrival: i128,
}

fn to_ns(seconds: f64) -> i128 {
    (seconds * 1e9).round() as i128
}

fn to_s(ns: i128) -> f64 {
    ns as f64 / 1e9
}

struct Tracker {
    stats: PipelineStats,
    last_index: Option<u64>,
    first_arrival: Option<f64>,
}

impl Tracker {
    fn new(capacity: usize) -> Self {
        Self {
            stats: PipelineStats {
                capacity,
                ..PipelineStats::default()
            },
            last_index: None,
            first_arrival: None,
        }
    }

    fn check_order(&mut self, index: u64) -> Result<(), PipelineError> {
        if let Some(last) = self.last_index {
            if index <= last {
                return Err(PipelineError::Ordering {
                    last,
                    got: index,
                    stats: self.stats,
                });
            }
        }
        self.last_index = Some(index);
        Ok(())
    }

    fn completed(&mut self, arrival: f64, end: f64, queued: usize) {
        self.stats.processed += 1;
        self.stats.in_flight = queued as u64;
        self.stats.max_latency_s = self.stats.max_latency_s.max(end - arrival);
        let first = *self.first_arrival.get_or_insert(arrival);
        let span = end - first;
        if span > 0.0 {
            self.stats.processed_fps = self.stats.processed as f64 / span;
        }
    }
}

/// Runs the pipeline on a virtual clock.
///
/// Frames arrive at their source timestamps. A frame can be picked up once the
/// processor is free; a pickup that would coincide with the next arrival
/// yields to that arrival first. `cost` gives each frame's processing time.
pub fn run_virtual<P, S, E>(
    source: impl IntoIterator<Item = Result<FrameEnvelope<P>, E>>,
    stage: &mut S,
    capacity: usize,
    mut cost: impl FnMut(&FrameEnvelope<P>) -> Duration,
    mut sink: impl FnMut(Processed<S::Output>),
) -> Result<PipelineStats, PipelineError>
where
    S: Stage<P>,
    E: Display,
{
    let mut buffer: LatestWinsBuffer<Queued<P>> = LatestWinsBuffer::new(capacity)?;
    let mut book = Tracker::new(capacity);
    let mut free_at: i128 = i128::MIN;
    let mut prev_pickup: Option<f64> = None;

    let mut drain = |limit: Option<i128>,
                     buffer: &mut LatestWinsBuffer<Queued<P>>,
                     book: &mut Tracker|
     -> Result<(), PipelineError> {
        while let Some(head) = buffer.front() {
            let pickup = free_at.max(head.arrival);
            if limit.is_some_and(|l| pickup >= l) {
                break;
            }
            let Some(q) = buffer.pop() else { break };
            let end = pickup + cost(&q.env).as_nanos() as i128;
            let timing = Timing {
                pickup: to_s(pickup),
                prev_pickup,
            };
            let output = stage.process(&q.env, timing).map_err(|e| {
                book.stats.in_flight = buffer.len() as u64 + 1;
                PipelineError::Stage {
                    frame: q.env.index,
                    message: e.to_string(),
                    stats: book.stats,
                }
            })?;
            prev_pickup = Some(timing.pickup);
            free_at = end;
            let (arrival, end) = (to_s(q.arrival), to_s(end));
            book.completed(arrival, end, buffer.len());
            sink(Processed {
                index: q.env.index,
                timestamp: q.env.timestamp,
                arrival,
                start: timing.pickup,
                end,
                output,
                stats: book.stats,
            });
        }
        Ok(())
    };

    for item in source {
        let env = item.map_err(|e| PipelineError::Source {
            message: e.to_string(),
            stats: book.stats,
        })?;
        book.check_order(env.index)?;
        let arrival = to_ns(env.timestamp);
        drain(Some(arrival), &mut buffer, &mut book)?;
        book.stats.received += 1;
        let evicted = buffer.push(Queued { env, arrival });
        book.stats.dropped += evicted.len() as u64;
        book.stats.max_queue = book.stats.max_queue.max(buffer.len());
        book.stats.in_flight = buffer.len() as u64;
    }
    drain(None, &mut buffer, &mut book)?;
    book.stats.in_flight = 0;
    Ok(book.stats)
}

struct Shared<P> {
    buffer: LatestWinsBuffer<(FrameEnvelope<P>, Instant)>,
    done: bool,
    abort: bool,
    error: Option<PipelineError>,
    stats: PipelineStats,
}

/// Runs the pipeline with a real ingester thread. With `pace` set, each frame
/// is released at its source timestamp relative to the first frame.
pub fn run_threaded<P, S, E, I>(
    source: I,
    stage: &mut S,
    capacity: usize,
    pace: bool,
    mut sink: impl FnMut(Processed<S::Output>),
) -> Result<PipelineStats, PipelineError>
where
    P: Send,
    S: Stage<P>,
    E: Display,
    I: IntoIterator<Item = Result<FrameEnvelope<P>, E>>,
    I::IntoIter: Send,
{
    let shared = Mutex::new(Shared {
        buffer: LatestWinsBuffer::new(capacity)?,
        done: false,
        abort: false,
        error: None,
        stats: PipelineStats {
            capacity,
            ..PipelineStats::default()
        },
    });
    let ready = Condvar::new();
    let origin = Instant::now();
    let secs = |t: Instant| t.duration_since(origin).as_secs_f64();

    std::thread::scope(|scope| {
        let source = source.into_iter();
        scope.spawn(|| {
            let mut last_index: Option<u64> = None;
            let mut first_ts: Option<f64> = None;
            for item in source {
                let fail = |shared: &Mutex<Shared<P>>, err: PipelineError| {
                    let mut g = shared.lock().unwrap();
                    g.error.get_or_insert(err);
                    g.done = true;
                    ready.notify_all();
                };
                let env = match item {
                    Ok(env) => env,
                    Err(e) => {
                        let stats = shared.lock().unwrap().stats;
                        fail(&shared, PipelineError::Source {
                            message: e.to_string(),
                            stats,
                        });
                        return;
                    }
                };
                if let Some(last) = last_index.filter(|&l| env.index <= l) {
                    let stats = shared.lock().unwrap().stats;
                    fail(&shared, PipelineError::Ordering {
                        last,
                        got: env.index,
                        stats,
                    });
                    return;
                }
                last_index = Some(env.index);
                if pace {
                    let first = *first_ts.get_or_insert(env.timestamp);
                    let due = Duration::from_secs_f64((env.timestamp - first).max(0.0));
                    let elapsed = origin.elapsed();
                    if due > elapsed {
                        std::thread::sleep(due - elapsed);
                    }
                }
                let mut g = shared.lock().unwrap();
                if g.abort {
                    return;
                }
                g.stats.received += 1;
                let evicted = g.buffer.push((env, Instant::now()));
                g.stats.dropped += evicted.len() as u64;
                g.stats.max_queue = g.stats.max_queue.max(g.buffer.len());
                g.stats.in_flight = g.buffer.len() as u64;
                drop(g);
                ready.notify_all();
            }
            shared.lock().unwrap().done = true;
            ready.notify_all();
        });

        let mut prev_pickup = None;
        let mut first_arrival: Option<f64> = None;
        loop {
            let mut g = shared.lock().unwrap();
            while g.buffer.is_empty() && !g.done {
                g = ready.wait(g).unwrap();
            }
            if g.error.is_some() {
                g.abort = true;
                return Err(g.error.take().unwrap());
            }
            let Some((env, arrived)) = g.buffer.pop() else {
                // done and drained
                g.stats.in_flight = 0;
                return Ok(g.stats);
            };
            drop(g);

            let pickup = secs(Instant::now());
            let timing = Timing { pickup, prev_pickup };
            let result = stage.process(&env, timing);
            let end = secs(Instant::now());
            let mut g = shared.lock().unwrap();
            let output = match result {
                Ok(o) => o,
                Err(e) => {
                    g.abort = true;
                    g.stats.in_flight = g.buffer.len() as u64 + 1;
                    return Err(PipelineError::Stage {
                        frame: env.index,
                        message: e.to_string(),
                        stats: g.stats,
                    });
                }
            };
            prev_pickup = Some(pickup);
            let arrival = secs(arrived);
            g.stats.processed += 1;
            g.stats.in_flight = g.buffer.len() as u64;
            g.stats.max_latency_s = g.stats.max_latency_s.max(end - arrival);
            let span = end - *first_arrival.get_or_insert(arrival);
            if span > 0.0 {
                g.stats.processed_fps = g.stats.processed as f64 / span;
            }
            let stats = g.stats;
            drop(g);
            sink(Processed {
                index: env.index,
                timestamp: env.timestamp,
                arrival,
                start: pickup,
                end,
                output,
                stats,
            });
        }
    })
}
