//! Streaming overload detection: a 1024-sample ring buffer feeding the
//! classifier at a fixed hop, with k-of-m debounce and a latched trip that
//! drives the shutdown decision.

use crate::signal::SignalTrace;
use crate::tensornet::{InferenceNet, NetworkError};
use crate::transform::{pid_transform, TransformError, Window, WINDOW_LEN};
use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    /// Samples between inferences once the buffer is full.
    pub hop: usize,
    /// Trip when `k` of the last `m` verdicts flag a fault.
    pub debounce_k: usize,
    pub debounce_m: usize,
    /// Fault probability at or above which a single verdict flags a fault.
    pub score_threshold: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            hop: 256,
            debounce_k: 2,
            debounce_m: 3,
            score_threshold: 0.5,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        if self.hop == 0 {
            return Err(DetectorError::BadConfig("hop must be at least 1".into()));
        }
        if self.debounce_k == 0 || self.debounce_k > self.debounce_m {
            return Err(DetectorError::BadConfig(
                "debounce requires 1 <= k <= m".into(),
            ));
        }
        if !(self.score_threshold > 0.0 && self.score_threshold < 1.0) {
            return Err(DetectorError::BadConfig(
                "score_threshold must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// One classification of the latest full window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    /// Zero-based inference ordinal.
    pub window_seq: u64,
    pub fault_probability: f64,
    pub is_fault: bool,
    /// Debounced, latched trip state as of this verdict.
    pub tripped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DetectorError {
    BadConfig(String),
    Transform(TransformError),
    /// Inference failed structurally. The detector latches a trip before
    /// surfacing this: a broken model must not silently pass.
    Inference(NetworkError),
}

impl fmt::Display for DetectorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DetectorError::BadConfig(msg) => write!(f, "bad detector config: {msg}"),
            DetectorError::Transform(e) => write!(f, "window transform failed: {e}"),
            DetectorError::Inference(e) => write!(f, "inference failed: {e}"),
        }
    }
}

impl std::error::Error for DetectorError {}

/// Streaming state: single-owner, one sample source per instance.
pub struct Detector {
    net: Arc<InferenceNet>,
    config: DetectorConfig,
    sample_interval: f64,
    ring: Vec<f64>,
    /// Samples pushed so far.
    count: u64,
    verdicts_emitted: u64,
    recent: VecDeque<bool>,
    tripped: bool,
}

impl Detector {
    pub fn new(
        net: Arc<InferenceNet>,
        config: DetectorConfig,
        sample_interval: f64,
    ) -> Result<Self, DetectorError> {
        config.validate()?;
        if !(sample_interval > 0.0) {
            return Err(DetectorError::BadConfig(
                "sample_interval must be > 0".into(),
            ));
        }
        Ok(Detector {
            net,
            config,
            sample_interval,
            ring: vec![0.0; WINDOW_LEN],
            count: 0,
            verdicts_emitted: 0,
            recent: VecDeque::new(),
            tripped: false,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn tripped(&self) -> bool {
        self.tripped
    }

    pub fn samples_seen(&self) -> u64 {
        self.count
    }

    /// Clears the trip latch and the debounce history. Buffered samples are
    /// kept so a stream can continue after an operator reset.
    pub fn reset(&mut self) {
        self.tripped = false;
        self.recent.clear();
    }

    /// Appends one sample. Once 1024 samples have been seen, an inference
    /// fires on every `hop`-th sample and yields a verdict.
    pub fn push_sample(&mut self, amps: f64) -> Result<Option<Verdict>, DetectorError> {
        let slot = (self.count % WINDOW_LEN as u64) as usize;
        self.ring[slot] = amps;
        self.count += 1;

        if self.count < WINDOW_LEN as u64 {
            return Ok(None);
        }
        if (self.count - WINDOW_LEN as u64) % self.config.hop as u64 != 0 {
            return Ok(None);
        }

        // Chronological view of the last 1024 samples.
        let mut values = Vec::with_capacity(WINDOW_LEN);
        for j in 0..WINDOW_LEN as u64 {
            values.push(self.ring[((self.count + j) % WINDOW_LEN as u64) as usize]);
        }
        let window = Window::new(values, self.sample_interval).map_err(|e| {
            self.tripped = true;
            DetectorError::Transform(e)
        })?;
        let image = pid_transform(&window).map_err(|e| {
            self.tripped = true;
            DetectorError::Transform(e)
        })?;
        let prediction = self.net.forward(&image).map_err(|e| {
            self.tripped = true;
            DetectorError::Inference(e)
        })?;

        let fault_probability = prediction.probabilities[1] as f64;
        let is_fault = fault_probability >= self.config.score_threshold;
        self.recent.push_back(is_fault);
        while self.recent.len() > self.config.debounce_m {
            self.recent.pop_front();
        }
        let flagged = self.recent.iter().filter(|&&f| f).count();
        if flagged >= self.config.debounce_k {
            self.tripped = true;
        }

        let verdict = Verdict {
            window_seq: self.verdicts_emitted,
            fault_probability,
            is_fault,
            tripped: self.tripped,
        };
        self.verdicts_emitted += 1;
        Ok(Some(verdict))
    }

    /// Feeds a whole trace, collecting every verdict.
    pub fn run_trace(&mut self, trace: &SignalTrace) -> Result<Vec<Verdict>, DetectorError> {
        let mut verdicts = Vec::new();
        for &(_, current) in trace.samples() {
            if let Some(v) = self.push_sample(current)? {
                verdicts.push(v);
            }
        }
        Ok(verdicts)
    }
}

/// Outcome of a latency measurement over one trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LatencyOutcome {
    /// Seconds from the annotated fault onset to the first tripped verdict.
    Detected { seconds: f64 },
    /// The stream ended without a trip.
    Miss,
    /// The detector tripped on a trace with no fault annotation.
    FalseTrip { at_seconds: f64 },
}

/// Streams `trace` through a fresh view of `detector`, reporting the delay
/// between the annotated fault onset and the first tripped verdict.
pub fn detection_latency(
    detector: &mut Detector,
    trace: &SignalTrace,
) -> Result<LatencyOutcome, DetectorError> {
    for &(t, current) in trace.samples() {
        let verdict = detector.push_sample(current)?;
        if verdict.is_some_and(|v| v.tripped) {
            return Ok(match trace.fault_onset() {
                Some(onset) => LatencyOutcome::Detected {
                    seconds: t - onset,
                },
                None => LatencyOutcome::FalseTrip { at_seconds: t },
            });
        }
    }
    Ok(LatencyOutcome::Miss)
}

/// Formats a verdict as the `seq,probability,is_fault,tripped` CSV row.
pub fn verdict_csv_row(v: &Verdict) -> String {
    format!(
        "{},{},{},{}",
        v.window_seq,
        v.fault_probability,
        u8::from(v.is_fault),
        u8::from(v.tripped)
    )
}
