//! Exogenous input processes: network condition traces and frame arrivals.
//!
//! Everything here is immutable after construction and cheap to share across
//! training workers. Trace files use the CSV schema
//! `t,throughput_bps,latency_s`; units are normalized to bits/second and
//! seconds at load time.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Sampled throughput is clamped below at 1 kbit/s so Gaussian draws can
/// never produce a non-physical link.
pub const THROUGHPUT_FLOOR_BPS: f64 = 1_000.0;
/// Sampled latency is clamped below at zero.
pub const LATENCY_FLOOR_S: f64 = 0.0;

/// One timestamped network measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    /// Seconds since trace start; strictly increasing within a trace.
    pub t: f64,
    /// Bits per second, strictly positive.
    pub throughput: f64,
    /// Seconds, non-negative.
    pub latency: f64,
}

/// An ordered series of network measurements driving one input process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkTrace {
    pub id: String,
    pub samples: Vec<TraceSample>,
}

impl NetworkTrace {
    /// Validates the trace invariants: strictly increasing timestamps,
    /// positive throughput, non-negative latency.
    pub fn new(id: impl Into<String>, samples: Vec<TraceSample>) -> Result<Self> {
        let trace = NetworkTrace {
            id: id.into(),
            samples,
        };
        trace.validate()?;
        Ok(trace)
    }

    fn validate(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            if !(s.throughput > 0.0) || !s.throughput.is_finite() {
                return Err(Error::validation(format!(
                    "trace {}: sample {} throughput must be > 0, got {}",
                    self.id, i, s.throughput
                )));
            }
            if !(s.latency >= 0.0) || !s.latency.is_finite() {
                return Err(Error::validation(format!(
                    "trace {}: sample {} latency must be >= 0, got {}",
                    self.id, i, s.latency
                )));
            }
            if i > 0 && !(s.t > self.samples[i - 1].t) {
                return Err(Error::validation(format!(
                    "trace {}: timestamps not strictly increasing at sample {} ({} after {})",
                    self.id,
                    i,
                    s.t,
                    self.samples[i - 1].t
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Serializes to the `t,throughput_bps,latency_s` CSV schema.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,throughput_bps,latency_s\n");
        for s in &self.samples {
            let _ = writeln!(out, "{},{},{}", s.t, s.throughput, s.latency);
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// A per-frame arrival process. The FPS sets the decision epoch of the
/// downstream environments; one trace sample is consumed per decision step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTrace {
    pub id: String,
    /// Frames per second, strictly positive.
    pub fps: f64,
    pub frames: Vec<FrameRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: usize,
    /// Raw (pre-compression) frame size in bytes, strictly positive.
    pub raw_size: u64,
}

impl FrameTrace {
    pub fn new(id: impl Into<String>, fps: f64, frames: Vec<FrameRecord>) -> Result<Self> {
        if !(fps > 0.0) {
            return Err(Error::validation(format!("fps must be > 0, got {fps}")));
        }
        for (i, f) in frames.iter().enumerate() {
            if f.index != i {
                return Err(Error::validation(format!(
                    "frame indices must be contiguous from 0: expected {i}, got {}",
                    f.index
                )));
            }
            if f.raw_size == 0 {
                return Err(Error::validation(format!("frame {i} raw_size must be > 0")));
            }
        }
        Ok(FrameTrace {
            id: id.into(),
            fps,
            frames,
        })
    }

    /// A constant-size frame trace, the common synthetic case.
    pub fn constant(id: impl Into<String>, fps: f64, raw_size: u64, count: usize) -> Result<Self> {
        let frames = (0..count)
            .map(|index| FrameRecord { index, raw_size })
            .collect();
        FrameTrace::new(id, fps, frames)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Link condition generator: either constant or i.i.d. Gaussian per step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub kind: LinkKind,
    /// Bits per second.
    pub mean_throughput: f64,
    /// Seconds.
    pub mean_latency: f64,
    /// Bits per second; must be 0 for fixed links.
    pub std_throughput: f64,
    /// Seconds; must be 0 for fixed links.
    pub std_latency: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    Fixed,
    Gaussian,
}

impl LinkModel {
    pub fn fixed(mean_throughput: f64, mean_latency: f64) -> Self {
        LinkModel {
            kind: LinkKind::Fixed,
            mean_throughput,
            mean_latency,
            std_throughput: 0.0,
            std_latency: 0.0,
            seed: 0,
        }
    }

    pub fn gaussian(
        mean_throughput: f64,
        mean_latency: f64,
        std_throughput: f64,
        std_latency: f64,
        seed: u64,
    ) -> Self {
        LinkModel {
            kind: LinkKind::Gaussian,
            mean_throughput,
            mean_latency,
            std_throughput,
            std_latency,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == LinkKind::Fixed && (self.std_throughput != 0.0 || self.std_latency != 0.0)
        {
            return Err(Error::validation(
                "fixed link model must have zero std fields",
            ));
        }
        if !(self.mean_throughput > 0.0) {
            return Err(Error::validation("link mean_throughput must be > 0"));
        }
        if !(self.mean_latency >= 0.0) {
            return Err(Error::validation("link mean_latency must be >= 0"));
        }
        if self.std_throughput < 0.0 || self.std_latency < 0.0 {
            return Err(Error::validation("link std fields must be >= 0"));
        }
        Ok(())
    }

    /// Draws one (throughput, latency) pair, clamped to the physical floors.
    pub fn sample(&self, rng: &mut impl Rng) -> (f64, f64) {
        match self.kind {
            LinkKind::Fixed => (self.mean_throughput, self.mean_latency),
            LinkKind::Gaussian => {
                let thr = self.mean_throughput + self.std_throughput * standard_normal(rng);
                let lat = self.mean_latency + self.std_latency * standard_normal(rng);
                (thr.max(THROUGHPUT_FLOOR_BPS), lat.max(LATENCY_FLOOR_S))
            }
        }
    }
}

/// Box-Muller standard normal. `rand_distr` is avoided so the exact draw
/// sequence stays pinned by this crate alone.
pub(crate) fn standard_normal(rng: &mut impl Rng) -> f64 {
    loop {
        let u1: f64 = rng.gen::<f64>();
        let u2: f64 = rng.gen::<f64>();
        if u1 > f64::MIN_POSITIVE {
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}

/// Loads a network trace from a `t,throughput_bps,latency_s` CSV file.
///
/// Parse failures report the 1-based line number; traces with fewer than two
/// samples, non-monotone timestamps, or non-positive throughput are rejected.
pub fn load_network_trace(path: impl AsRef<Path>) -> Result<NetworkTrace> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Validation(format!("cannot read trace file {}: {e}", path.display()))
    })?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "trace".to_string());
    parse_network_trace_csv(&text, &id, &path.display().to_string())
}

fn parse_network_trace_csv(text: &str, id: &str, path: &str) -> Result<NetworkTrace> {
    let mut samples = Vec::new();
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format {
            path: path.to_string(),
            line: 1,
            reason: "empty file".to_string(),
        })?
        .1
        .trim();
    if header != "t,throughput_bps,latency_s" {
        return Err(Error::Format {
            path: path.to_string(),
            line: 1,
            reason: format!("expected header `t,throughput_bps,latency_s`, got `{header}`"),
        });
    }
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let mut next_field = |name: &str| -> Result<f64> {
            let field = fields.next().ok_or_else(|| Error::Format {
                path: path.to_string(),
                line: line_no,
                reason: format!("missing field `{name}`"),
            })?;
            field.trim().parse::<f64>().map_err(|e| Error::Format {
                path: path.to_string(),
                line: line_no,
                reason: format!("bad {name} `{}`: {e}", field.trim()),
            })
        };
        let t = next_field("t")?;
        let throughput = next_field("throughput_bps")?;
        let latency = next_field("latency_s")?;
        if fields.next().is_some() {
            return Err(Error::Format {
                path: path.to_string(),
                line: line_no,
                reason: "too many fields".to_string(),
            });
        }
        samples.push(TraceSample {
            t,
            throughput,
            latency,
        });
    }
    if samples.len() < 2 {
        return Err(Error::validation(format!(
            "trace {id}: need at least 2 samples, got {}",
            samples.len()
        )));
    }
    NetworkTrace::new(id, samples)
}

/// Splits samples into `n_parts` contiguous, non-overlapping traces whose
/// sizes differ by at most one. Partitioning is contiguous rather than
/// shuffled so each part keeps the temporal correlation of the source.
pub fn partition_trace(samples: &[TraceSample], n_parts: usize) -> Result<Vec<NetworkTrace>> {
    if n_parts == 0 {
        return Err(Error::argument("n_parts must be >= 1"));
    }
    if samples.len() < n_parts {
        return Err(Error::argument(format!(
            "cannot partition {} samples into {} parts",
            samples.len(),
            n_parts
        )));
    }
    let base = samples.len() / n_parts;
    let rem = samples.len() % n_parts;
    let mut parts = Vec::with_capacity(n_parts);
    let mut start = 0;
    for i in 0..n_parts {
        let size = base + usize::from(i < rem);
        let chunk = samples[start..start + size].to_vec();
        parts.push(NetworkTrace {
            id: format!("part{i:02}"),
            samples: chunk,
        });
        start += size;
    }
    Ok(parts)
}

/// Generates a trace of `horizon` samples from a link model, one sample per
/// decision step (t = 0, 1, 2, ...). Pure function of the model's seed.
pub fn gen_link_trace(model: &LinkModel, horizon: usize) -> Result<NetworkTrace> {
    if horizon == 0 {
        return Err(Error::argument("horizon must be >= 1"));
    }
    model.validate()?;
    let mut rng = rng::rng(model.seed, Stream::TraceGen, 0);
    let samples = (0..horizon)
        .map(|i| {
            let (throughput, latency) = model.sample(&mut rng);
            TraceSample {
                t: i as f64,
                throughput,
                latency,
            }
        })
        .collect();
    NetworkTrace::new(format!("link-{:?}", model.kind).to_lowercase(), samples)
}

/// Parameters of the synthetic congestion-style trace: a two-state Markov
/// chain over {low, high} mean throughput with Gaussian jitter, giving the
/// bursty dynamics of commute-style cellular measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CongestionModel {
    pub low_throughput: f64,
    pub high_throughput: f64,
    /// Relative jitter applied to the regime mean (fraction of mean).
    pub jitter: f64,
    /// Per-step probability of switching regime.
    pub switch_prob: f64,
    pub mean_latency: f64,
    pub std_latency: f64,
    pub seed: u64,
}

impl Default for CongestionModel {
    fn default() -> Self {
        CongestionModel {
            low_throughput: 1.5e6,
            high_throughput: 8e6,
            jitter: 0.25,
            switch_prob: 0.05,
            mean_latency: 0.05,
            std_latency: 0.01,
            seed: 0,
        }
    }
}

/// Generates a bursty two-regime trace; used when no measured file is
/// supplied.
pub fn gen_congestion_trace(model: &CongestionModel, horizon: usize) -> Result<NetworkTrace> {
    if horizon == 0 {
        return Err(Error::argument("horizon must be >= 1"));
    }
    if !(model.low_throughput > 0.0 && model.high_throughput > 0.0) {
        return Err(Error::validation("regime throughputs must be > 0"));
    }
    if !(0.0..=1.0).contains(&model.switch_prob) {
        return Err(Error::validation("switch_prob must lie in [0, 1]"));
    }
    let mut rng = rng::rng(model.seed, Stream::TraceGen, 1);
    let mut high = rng.gen_bool(0.5);
    let samples = (0..horizon)
        .map(|i| {
            if rng.gen::<f64>() < model.switch_prob {
                high = !high;
            }
            let mean = if high {
                model.high_throughput
            } else {
                model.low_throughput
            };
            let thr = mean * (1.0 + model.jitter * standard_normal(&mut rng));
            let lat = model.mean_latency + model.std_latency * standard_normal(&mut rng);
            TraceSample {
                t: i as f64,
                throughput: thr.max(THROUGHPUT_FLOOR_BPS),
                latency: lat.max(LATENCY_FLOOR_S),
            }
        })
        .collect();
    NetworkTrace::new("congestion", samples)
}
