//! Multi-rate ingestion: sensor producers hand events to a single fusion
//! consumer through bounded channels.
//!
//! Events are merged by `(t, source priority)` with GPS before IMU before
//! vision, so the consumer sees the same sequence no matter how the
//! producers are scheduled. [`run_reference`] does the merge on one thread
//! and is the yardstick for [`run_concurrent`].

mod engine;

pub use engine::{FammConfig, FilterConfig, FusionEngine, ModelMode, SensorSet, StepRecord};

use crate::famm::{FammError, MotionModel};
use crate::fusion::{Covariance, FilterState, FusionError};
use crate::geodesy::{GeodesyError, GeodeticPosition};
use crate::imu::{calibrate, AttitudeMeasurement, ImuError, ImuSample};
use crate::metrics::{mean_std, ModelHistogram};
use crate::sim::Dataset;
use crate::vision::VisionDelta;
use crossbeam_channel::{bounded, Receiver, Sender, TrySendError};
use std::cmp::Ordering;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Famm(#[from] FammError),
    #[error(transparent)]
    Imu(#[from] ImuError),
    #[error(transparent)]
    Geodesy(#[from] GeodesyError),
    #[error("pipeline config: {0}")]
    Config(String),
    #[error("event stream out of order at t = {0}")]
    OutOfOrder(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SensorPayload {
    GpsFix { position: GeodeticPosition, satellites: u8 },
    Imu(ImuSample),
    Vision(VisionDelta),
    Attitude(AttitudeMeasurement),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorEvent {
    pub t: f64,
    pub payload: SensorPayload,
}

impl SensorEvent {
    /// Tie-break rank for equal timestamps.
    pub fn priority(&self) -> u8 {
        match self.payload {
            SensorPayload::GpsFix { .. } => 0,
            SensorPayload::Imu(_) => 1,
            SensorPayload::Attitude(_) => 2,
            SensorPayload::Vision(_) => 3,
        }
    }

    fn order(&self, other: &SensorEvent) -> Ordering {
        self.t.total_cmp(&other.t).then(self.priority().cmp(&other.priority()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Clock {
    #[default]
    AsFastAsPossible,
    /// Producers release events at `t / speed` seconds of wall time.
    RealTime { speed: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub imu_batch: usize,
    pub clock: Clock,
    pub queue_capacity: usize,
    /// Covariance snapshot cadence in ticks; 0 keeps only the final one.
    pub snapshot_every: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            imu_batch: 4,
            clock: Clock::AsFastAsPossible,
            queue_capacity: 1024,
            snapshot_every: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.imu_batch < 1 {
            return Err(PipelineError::Config("imu_batch must be at least 1".into()));
        }
        if self.queue_capacity < 16 {
            return Err(PipelineError::Config("queue_capacity must be at least 16".into()));
        }
        if let Clock::RealTime { speed } = self.clock {
            if !(speed > 0.0 && speed.is_finite()) {
                return Err(PipelineError::Config("real-time speed must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Aggregates over the per-step records.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub steps: usize,
    pub mean_error: f64,
    pub std_error: f64,
    pub histogram: ModelHistogram,
    pub dropped: u64,
    pub pseudo_inverse_steps: usize,
    pub final_trace: f64,
}

/// Everything a run produces except timing, so equal inputs give equal
/// reports.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub steps: Vec<StepRecord>,
    pub snapshots: Vec<(f64, Covariance)>,
    pub final_state: Option<FilterState>,
    /// First GPS fix; the local frame of every estimate.
    pub frame_origin: Option<GeodeticPosition>,
    pub summary: RunSummary,
}

impl RunReport {
    fn build(
        steps: Vec<StepRecord>,
        mut snapshots: Vec<(f64, Covariance)>,
        final_state: Option<FilterState>,
        frame_origin: Option<GeodeticPosition>,
        dropped: u64,
    ) -> Self {
        let errors: Vec<f64> = steps.iter().map(|s| s.y_p).collect();
        let (mean_error, std_error) = mean_std(&errors);
        let mut histogram = ModelHistogram::default();
        for s in &steps {
            histogram.add(s.model);
        }
        if let (Some(last), Some(state)) = (steps.last(), final_state.as_ref()) {
            if snapshots.last().map(|(t, _)| *t) != Some(last.t) {
                snapshots.push((last.t, state.sigma));
            }
        }
        let summary = RunSummary {
            steps: steps.len(),
            mean_error,
            std_error,
            histogram,
            dropped,
            pseudo_inverse_steps: steps.iter().filter(|s| s.used_pseudo_inverse).count(),
            final_trace: final_state.as_ref().map_or(f64::NAN, |s| s.trace()),
        };
        Self {
            steps,
            snapshots,
            final_state,
            frame_origin,
            summary,
        }
    }

    /// Model labels per step, for colouring trajectories.
    pub fn model_labels(&self) -> Vec<MotionModel> {
        self.steps.iter().map(|s| s.model).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub report: RunReport,
    pub wall_clock: Duration,
}

/// The two producer streams: vision, and the event-driven GPS+IMU side
/// (which also carries any external attitude log).
pub fn split_streams(dataset: &Dataset) -> (Vec<SensorEvent>, Vec<SensorEvent>) {
    let log = &dataset.log;
    let mut gps_imu: Vec<SensorEvent> = log
        .gps
        .iter()
        .map(|g| SensorEvent {
            t: g.t,
            payload: SensorPayload::GpsFix {
                position: g.position,
                satellites: g.satellites,
            },
        })
        .chain(log.imu.iter().map(|s| SensorEvent {
            t: s.t,
            payload: SensorPayload::Imu(*s),
        }))
        .chain(log.attitude.iter().map(|a| SensorEvent {
            t: a.t,
            payload: SensorPayload::Attitude(*a),
        }))
        .collect();
    gps_imu.sort_by(|a, b| a.order(b));
    let vision = log
        .vision
        .iter()
        .map(|d| SensorEvent {
            t: d.t,
            payload: SensorPayload::Vision(*d),
        })
        .collect();
    (gps_imu, vision)
}

/// Stable k-way merge of individually sorted streams.
pub fn merge_events(streams: &[Vec<SensorEvent>]) -> Vec<SensorEvent> {
    let mut all: Vec<SensorEvent> = streams.iter().flatten().copied().collect();
    all.sort_by(|a, b| a.order(b));
    all
}

fn check_sorted(events: &[SensorEvent]) -> Result<(), PipelineError> {
    for w in events.windows(2) {
        if w[1].t < w[0].t || !w[1].t.is_finite() {
            return Err(PipelineError::OutOfOrder(w[1].t));
        }
    }
    Ok(())
}

fn make_engine(
    dataset: &Dataset,
    cfg: &PipelineConfig,
    filter: &FilterConfig,
    famm: &FammConfig,
) -> Result<FusionEngine, PipelineError> {
    cfg.validate()?;
    filter.noise.validate()?;
    famm.membership.positional.validate()?;
    famm.membership.rotational.validate()?;
    let calibration = calibrate(&dataset.log.calibration)?;
    Ok(FusionEngine::new(calibration, cfg.imu_batch, filter.clone(), famm.clone(), dataset.site.ellipsoid)
        .tick_on_gps(dataset.log.vision.is_empty())
        .snapshot_every(cfg.snapshot_every))
}

fn finish(engine: FusionEngine, dropped: u64) -> RunReport {
    let (steps, snapshots, state, origin) = engine.into_parts();
    RunReport::build(steps, snapshots, state, origin, dropped)
}

/// Merges and fuses on the calling thread without touching the clock, so
/// it also runs where `Instant` is unavailable (wasm32).
pub fn replay(
    dataset: &Dataset,
    cfg: &PipelineConfig,
    filter: &FilterConfig,
    famm: &FammConfig,
) -> Result<RunReport, PipelineError> {
    let mut engine = make_engine(dataset, cfg, filter, famm)?;
    let (gps_imu, vision) = split_streams(dataset);
    check_sorted(&gps_imu)?;
    check_sorted(&vision)?;
    for event in merge_events(&[gps_imu, vision]) {
        engine.handle(&event)?;
    }
    Ok(finish(engine, 0))
}

/// Single-threaded executor: [`replay`] with a wall-clock measurement.
pub fn run_reference(
    dataset: &Dataset,
    cfg: &PipelineConfig,
    filter: &FilterConfig,
    famm: &FammConfig,
) -> Result<RunOutcome, PipelineError> {
    let start = Instant::now();
    let report = replay(dataset, cfg, filter, famm)?;
    Ok(RunOutcome {
        report,
        wall_clock: start.elapsed(),
    })
}

/// `own_rx` lets a paced producer evict the oldest queued event. It is only
/// handed out under real-time pacing so that an unpaced producer sees the
/// channel disconnect when the consumer stops early.
fn produce(
    events: Vec<SensorEvent>,
    tx: Sender<SensorEvent>,
    own_rx: Option<Receiver<SensorEvent>>,
    clock: Clock,
    dropped: Arc<AtomicU64>,
) {
    let start = Instant::now();
    for event in events {
        match clock {
            Clock::AsFastAsPossible => {
                if tx.send(event).is_err() {
                    return;
                }
            }
            Clock::RealTime { speed } => {
                let due = Duration::from_secs_f64((event.t / speed).max(0.0));
                if let Some(wait) = due.checked_sub(start.elapsed()) {
                    thread::sleep(wait);
                }
                let mut pending = event;
                loop {
                    match tx.try_send(pending) {
                        Ok(()) => break,
                        Err(TrySendError::Full(e)) => {
                            // Drop the oldest queued event to make room.
                            if own_rx.as_ref().is_some_and(|rx| rx.try_recv().is_ok()) {
                                dropped.fetch_add(1, AtomicOrdering::Relaxed);
                            }
                            pending = e;
                        }
                        Err(TrySendError::Disconnected(_)) => return,
                    }
                }
            }
        }
    }
}

/// Concurrent executor: one thread per producer, fusion on the calling
/// thread. The consumer always holds the head of every open stream before
/// releasing the earliest one, which reproduces the reference order.
pub fn run_concurrent(
    dataset: &Dataset,
    cfg: &PipelineConfig,
    filter: &FilterConfig,
    famm: &FammConfig,
) -> Result<RunOutcome, PipelineError> {
    let start = Instant::now();
    let mut engine = make_engine(dataset, cfg, filter, famm)?;
    let (gps_imu, vision) = split_streams(dataset);
    check_sorted(&gps_imu)?;
    check_sorted(&vision)?;
    let dropped = Arc::new(AtomicU64::new(0));

    let result = thread::scope(|scope| -> Result<(), PipelineError> {
        let mut receivers = Vec::new();
        for stream in [gps_imu, vision] {
            let (tx, rx) = bounded(cfg.queue_capacity);
            let rx_for_drop = matches!(cfg.clock, Clock::RealTime { .. }).then(|| rx.clone());
            let dropped = Arc::clone(&dropped);
            let clock = cfg.clock;
            scope.spawn(move || produce(stream, tx, rx_for_drop, clock, dropped));
            receivers.push(rx);
        }
        let mut heads: Vec<Option<SensorEvent>> = receivers.iter().map(|rx| rx.recv().ok()).collect();
        let mut last_t = f64::NEG_INFINITY;
        loop {
            let next = heads
                .iter()
                .enumerate()
                .filter_map(|(k, h)| h.map(|e| (k, e)))
                .min_by(|(_, a), (_, b)| a.order(b));
            let Some((k, event)) = next else { break };
            if event.t < last_t {
                return Err(PipelineError::OutOfOrder(event.t));
            }
            last_t = event.t;
            heads[k] = receivers[k].recv().ok();
            engine.handle(&event)?;
        }
        Ok(())
    });
    result?;
    Ok(RunOutcome {
        report: finish(engine, dropped.load(AtomicOrdering::Relaxed)),
        wall_clock: start.elapsed(),
    })
}
