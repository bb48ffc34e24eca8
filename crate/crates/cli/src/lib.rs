//! `uavtrack` subcommands: `track` runs the engine over a detection stream,
//! `synth` writes synthetic scenarios, `eval` scores predictions against
//! ground truth.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;
use tracing::{info, warn};
use uavtrack_core::config::{ConfigError, EngineConfig};
use uavtrack_core::engine::{envelope, FrameResult, TrafficEngine};
use uavtrack_core::eval::{evaluate, frames_from_rows, prf, ConfusionCounts, EvalError, EvalReport, FrameBoxes, LabeledBox};
use uavtrack_core::io::{
    read_box_table, read_detection_stream, write_detections, write_draw_commands, DetectionFrame, IoError,
    MacroCsvWriter, MicroCsvWriter, TrackCsvWriter, TruthCsvWriter,
};
use uavtrack_core::pipeline::{run_threaded, run_virtual, FrameEnvelope, PipelineError, PipelineStats, Processed, Stage, Timing};
use uavtrack_core::synth::{generate, preset, Scenario, SynthError, PRESET_NAMES};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PARSE: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Parse(_) => EXIT_PARSE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Read { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Parse(e.to_string()),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Io(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Parse(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::UnknownPreset(_) => CliError::Usage(e.to_string()),
            _ => CliError::Parse(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "uavtrack", version, about = "Vehicle tracking and traffic kinematics for top-down UAV video")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Track vehicles in a detection stream and write per-frame outputs.
    Track(TrackArgs),
    /// Write ground truth and detections for a synthetic scenario.
    Synth(SynthArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Detections, one JSON frame per line; `-` reads stdin.
    pub input: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub iou_threshold: Option<f64>,
    #[arg(long)]
    pub max_age: Option<u32>,
    #[arg(long)]
    pub min_hits: Option<u32>,
    #[arg(long)]
    pub time_ratio: Option<f64>,
    #[arg(long)]
    pub capacity: Option<usize>,
    /// Pace frames on the wall clock by their timestamps instead of replaying
    /// on a virtual clock.
    #[arg(long)]
    pub realtime: bool,
    /// Processing cost charged per frame, in milliseconds.
    #[arg(long, default_value_t = 0.0)]
    pub stage_cost_ms: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Built-in scenario name.
    #[arg(long, conflicts_with = "scenario")]
    pub preset: Option<String>,
    /// Scenario TOML file.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, default_value = "synth")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub sigma_px: Option<f64>,
    #[arg(long)]
    pub miss_prob: Option<f64>,
    #[arg(long)]
    pub fp_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print the preset names and exit.
    #[arg(long)]
    pub list: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground-truth CSV (frame,x,y,w,h; optional id and visible columns).
    pub truth: Option<PathBuf>,
    /// Predictions: a CSV box table such as tracks.csv, or a detection JSONL.
    pub predictions: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub iou_match: f64,
    /// Frame rate used to convert bucket length to frames.
    #[arg(long, default_value_t = 30.0)]
    pub fps: f64,
    #[arg(long, default_value_t = 15.0)]
    pub bucket_s: f64,
    /// Write the report as JSON to this path.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Counts-only mode: score raw TP/FP/FN instead of files.
    #[arg(long, requires_all = ["fp", "fn_"])]
    pub tp: Option<u64>,
    #[arg(long, requires = "tp")]
    pub fp: Option<u64>,
    #[arg(long = "fn", id = "fn_", requires = "tp")]
    pub fn_: Option<u64>,
}

/// Runs a parsed command, writing human-readable results to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Track(a) => cmd_track(&a, out).map(|_| ()),
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Eval(a) => cmd_eval(&a, out).map(|_| ()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))
}

fn write_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("write failed: {e}"))
}

/// Effective engine config: file values, then flag overrides.
pub fn track_config(a: &TrackArgs) -> Result<EngineConfig, CliError> {
    let mut cfg = match &a.config {
        Some(p) => EngineConfig::load(p)?,
        None => EngineConfig::default(),
    };
    if let Some(v) = a.iou_threshold {
        cfg.tracker.iou_threshold = v;
    }
    if let Some(v) = a.max_age {
        cfg.tracker.max_age = v;
    }
    if let Some(v) = a.min_hits {
        cfg.tracker.min_hits = v;
    }
    if let Some(v) = a.time_ratio {
        cfg.sampling.time_ratio = v;
    }
    if let Some(v) = a.capacity {
        cfg.pipeline.capacity = v;
    }
    cfg.resolve()?;
    Ok(cfg)
}

struct Outputs {
    tracks: TrackCsvWriter<BufWriter<File>>,
    micro: MicroCsvWriter<BufWriter<File>>,
    macro_: MacroCsvWriter<BufWriter<File>>,
    draw: BufWriter<File>,
    ids: std::collections::BTreeSet<u64>,
    last_sfps: Option<u32>,
    error: Option<CliError>,
}

impl Outputs {
    fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            tracks: TrackCsvWriter::new(create(&dir.join("tracks.csv"))?)?,
            micro: MicroCsvWriter::new(create(&dir.join("micro.csv"))?)?,
            macro_: MacroCsvWriter::new(create(&dir.join("macro.csv"))?)?,
            draw: create(&dir.join("draw.jsonl"))?,
            ids: Default::default(),
            last_sfps: None,
            error: None,
        })
    }

    fn accept(&mut self, p: Processed<FrameResult>) {
        if self.error.is_some() {
            return;
        }
        let r = &p.output;
        self.ids.extend(r.tracks.iter().map(|t| t.id));
        let result = (|| -> Result<(), IoError> {
            self.tracks.write(r.frame, &r.tracks)?;
            self.micro.write(&r.records)?;
            if let Some(s) = &r.snapshot {
                self.macro_.write(s)?;
            }
            write_draw_commands(&mut self.draw, &r.draws)
        })();
        if let Err(e) = result {
            self.error = Some(write_err(e));
        }
    }

    fn finish(self) -> Result<(usize, Option<u32>), CliError> {
        if let Some(e) = self.error {
            return Err(e);
        }
        self.tracks.finish()?;
        self.micro.finish()?;
        self.macro_.finish()?;
        let mut d = self.draw;
        d.flush().map_err(write_err)?;
        Ok((self.ids.len(), self.last_sfps))
    }
}

/// Charges a fixed wall-clock cost per frame on top of the engine.
struct Costed<'a> {
    engine: &'a mut TrafficEngine,
    cost: Duration,
}

impl Stage<DetectionFrame> for Costed<'_> {
    type Output = FrameResult;
    type Error = uavtrack_core::engine::EngineError;

    fn process(&mut self, env: &FrameEnvelope<DetectionFrame>, timing: Timing) -> Result<FrameResult, Self::Error> {
        let r = self.engine.process(env, timing);
        std::thread::sleep(self.cost);
        r
    }
}

fn pipeline_error(e: PipelineError) -> CliError {
    match e {
        PipelineError::Source { .. } | PipelineError::Ordering { .. } => CliError::Parse(e.to_string()),
        PipelineError::Config(_) => CliError::Usage(e.to_string()),
        PipelineError::Stage { .. } => CliError::Runtime(e.to_string()),
    }
}

/// Summary written to `stats.json`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct TrackSummary {
    pub mode: &'static str,
    pub pipeline: PipelineStats,
    pub distinct_tracks: usize,
    pub sampling_interval_frames: Option<u32>,
    pub meters_per_pixel: f64,
}

pub fn cmd_track(a: &TrackArgs, out: &mut dyn Write) -> Result<TrackSummary, CliError> {
    let cfg = track_config(a)?;
    if !(a.stage_cost_ms.is_finite() && a.stage_cost_ms >= 0.0) {
        return Err(CliError::Usage(format!("--stage-cost-ms must be >= 0, got {}", a.stage_cost_ms)));
    }
    let reader: Box<dyn Read + Send> = if a.input.as_os_str() == "-" {
        Box::new(std::io::stdin())
    } else {
        Box::new(open(&a.input)?)
    };
    let source = read_detection_stream(BufReader::new(reader)).map(|r| r.map(envelope));
    let mut engine = TrafficEngine::new(&cfg).map_err(|e| CliError::Parse(e.to_string()))?;
    let mut outputs = Outputs::create(&a.out_dir)?;
    let cost = Duration::from_secs_f64(a.stage_cost_ms / 1000.0);
    let capacity = cfg.pipeline.capacity;
    info!(input = %a.input.display(), capacity, realtime = a.realtime, "tracking");

    let stats = if a.realtime {
        let mut stage = Costed { engine: &mut engine, cost };
        run_threaded(source, &mut stage, capacity, true, |p| outputs.accept(p))
    } else {
        run_virtual(source, &mut engine, capacity, |_| cost, |p| outputs.accept(p))
    }
    .map_err(pipeline_error)?;
    outputs.last_sfps = engine.analyzer().sfps();
    let (distinct, sfps) = outputs.finish()?;
    if stats.dropped > 0 {
        warn!(dropped = stats.dropped, "frames dropped under load");
    }
    let summary = TrackSummary {
        mode: if a.realtime { "realtime" } else { "virtual" },
        pipeline: stats,
        distinct_tracks: distinct,
        sampling_interval_frames: sfps,
        meters_per_pixel: engine.analyzer().scale().meters_per_pixel,
    };
    let mut w = create(&a.out_dir.join("stats.json"))?;
    serde_json::to_writer_pretty(&mut w, &summary).map_err(write_err)?;
    w.write_all(b"\n").map_err(write_err)?;
    w.flush().map_err(write_err)?;
    writeln!(
        out,
        "processed {} of {} frames ({} dropped), {} tracks, {:.2} fps",
        stats.processed, stats.received, stats.dropped, distinct, stats.processed_fps
    )
    .map_err(write_err)?;
    Ok(summary)
}

pub fn synth_scenario(a: &SynthArgs) -> Result<Scenario, CliError> {
    let mut s = match (&a.preset, &a.scenario) {
        (Some(name), None) => preset(name)?,
        (None, Some(path)) => {
            let mut text = String::new();
            open(path)?
                .read_to_string(&mut text)
                .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
            Scenario::from_toml_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?
        }
        _ => return Err(CliError::Usage("give exactly one of --preset or --scenario".into())),
    };
    if let Some(v) = a.sigma_px {
        s.noise.sigma_px = v;
    }
    if let Some(v) = a.miss_prob {
        s.noise.miss_prob = v;
    }
    if let Some(v) = a.fp_rate {
        s.noise.fp_rate = v;
    }
    if let Some(v) = a.seed {
        s.noise.seed = v;
    }
    s.validate()?;
    Ok(s)
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.list {
        for n in PRESET_NAMES {
            writeln!(out, "{n}").map_err(write_err)?;
        }
        return Ok(());
    }
    let s = synth_scenario(a)?;
    let g = generate(&s)?;
    std::fs::create_dir_all(&a.out_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", a.out_dir.display())))?;
    let mut truth = TruthCsvWriter::new(create(&a.out_dir.join("truth.csv"))?)?;
    for r in &g.truth {
        truth.write(r)?;
    }
    truth.finish()?;
    let mut det = create(&a.out_dir.join("detections.jsonl"))?;
    write_detections(&mut det, &g.detections)?;
    let mut sc = create(&a.out_dir.join("scenario.toml"))?;
    sc.write_all(s.to_toml_string().as_bytes()).map_err(write_err)?;
    sc.flush().map_err(write_err)?;
    writeln!(
        out,
        "wrote {} frames, {} ground-truth rows to {}",
        g.detections.len(),
        g.truth.len(),
        a.out_dir.display()
    )
    .map_err(write_err)?;
    Ok(())
}

fn load_boxes(path: &Path) -> Result<FrameBoxes, CliError> {
    let file = open(path)?;
    if path.extension().is_some_and(|e| e == "jsonl") {
        let mut out = FrameBoxes::new();
        for f in read_detection_stream(BufReader::new(file)) {
            let f = f?;
            let boxes = f.corners().into_iter().map(|bbox| LabeledBox { id: None, bbox }).collect();
            out.insert(f.frame, boxes);
        }
        Ok(out)
    } else {
        let rows = read_box_table(BufReader::new(file)).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        Ok(frames_from_rows(&rows))
    }
}

fn print_counts(out: &mut dyn Write, label: &str, c: ConfusionCounts) -> Result<(), CliError> {
    let metrics = match prf(c) {
        Ok(m) => {
            let m = m.rounded();
            format!("P {:.2} R {:.2} F1 {:.2}", m.precision, m.recall, m.f1)
        }
        Err(e) => e.to_string(),
    };
    writeln!(out, "{label}TP {} FP {} FN {} {metrics}", c.tp, c.fp, c.fn_).map_err(write_err)
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<Option<EvalReport>, CliError> {
    if let (Some(tp), Some(fp), Some(fn_)) = (a.tp, a.fp, a.fn_) {
        let c = ConfusionCounts { tp, fp, fn_ };
        prf(c)?;
        print_counts(out, "", c)?;
        return Ok(None);
    }
    let (Some(truth), Some(pred)) = (&a.truth, &a.predictions) else {
        return Err(CliError::Usage("eval needs TRUTH and PREDICTIONS files, or --tp/--fp/--fn".into()));
    };
    if !(a.iou_match > 0.0 && a.iou_match <= 1.0) {
        return Err(CliError::Usage(format!("--iou-match must lie in (0, 1], got {}", a.iou_match)));
    }
    let bucket = (a.fps * a.bucket_s).round();
    if bucket.is_nan() || bucket < 1.0 {
        return Err(CliError::Usage("--fps and --bucket-s must give at least one frame per bucket".into()));
    }
    let t = load_boxes(truth)?;
    let p = load_boxes(pred)?;
    let report = evaluate(&t, &p, a.iou_match, Some(bucket as u64))?;
    prf(report.counts)?;
    print_counts(out, "", report.counts)?;
    for b in &report.buckets {
        print_counts(out, &format!("bucket {} frames {}-{}: ", b.index, b.first_frame, b.last_frame), b.counts)?;
    }
    if let Some(n) = report.id_switches {
        writeln!(out, "id switches {n}").map_err(write_err)?;
    }
    if let Some(path) = &a.report {
        let mut w = create(path)?;
        serde_json::to_writer_pretty(&mut w, &report).map_err(write_err)?;
        w.write_all(b"\n").map_err(write_err)?;
        w.flush().map_err(write_err)?;
    }
    Ok(Some(report))
}

/// Reads a whole detection file into memory.
pub fn read_detections(path: &Path) -> Result<Vec<DetectionFrame>, CliError> {
    let reader: Box<dyn BufRead> = Box::new(BufReader::new(open(path)?));
    read_detection_stream(reader).map(|r| r.map_err(CliError::from)).collect()
}
