//! Chunked video streaming over a variable-bandwidth link.
//!
//! The input process is a [`BandwidthTrace`]: sample `i` gives the bandwidth
//! (bytes/s) over `[t_i, t_{i+1})`; the last sample holds for one more
//! sampling interval. Each step downloads one chunk at the chosen bitrate.

use std::any::Any;
use std::collections::VecDeque;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::imdp::{Agent, InputDrivenEnv, InputSequence, Observation, StepOutcome};
use crate::rng::{self, stream, Rng};
use crate::{Error, Result};

pub const NUM_BITRATES: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceSource {
    File,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthTrace {
    /// `(time_offset_seconds, bytes_per_second)`, strictly increasing in time.
    pub samples: Vec<(f64, f64)>,
    pub source: TraceSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTraceParams {
    /// Lower bandwidth bound, bytes/s.
    pub lo: f64,
    /// Upper bandwidth bound, bytes/s.
    pub hi: f64,
    /// Standard deviation of the per-sample log-bandwidth step.
    pub sigma: f64,
    /// Seconds between samples.
    pub dt: f64,
    pub num_samples: usize,
}

impl Default for SyntheticTraceParams {
    fn default() -> Self {
        Self {
            lo: 0.1e6,
            hi: 1.0e6,
            sigma: 0.15,
            dt: 1.0,
            num_samples: 4000,
        }
    }
}

/// Which kind of trace to produce.
pub enum TraceKind<'a> {
    MarkovSynthetic(&'a SyntheticTraceParams),
    FromFile(&'a Path),
}

pub fn gen_bandwidth_trace(kind: TraceKind<'_>, rng_seed: u64) -> Result<BandwidthTrace> {
    match kind {
        TraceKind::MarkovSynthetic(p) => BandwidthTrace::synthetic(p, 0, rng_seed),
        TraceKind::FromFile(path) => BandwidthTrace::from_file(path),
    }
}

fn reflect(mut x: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    // fold into [lo, hi]; terminates since each pass shrinks the overshoot or exits
    loop {
        if x > hi {
            x = 2.0 * hi - x;
        } else if x < lo {
            x = 2.0 * lo - x;
        } else {
            return x;
        }
    }
}

impl BandwidthTrace {
    pub fn new(samples: Vec<(f64, f64)>, source: TraceSource) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("bandwidth trace is empty"));
        }
        for (i, w) in samples.windows(2).enumerate() {
            if !(w[1].0 > w[0].0) {
                return Err(Error::invalid(format!(
                    "trace timestamps not strictly increasing at sample {}",
                    i + 1
                )));
            }
        }
        if let Some(i) = samples.iter().position(|s| !(s.1 > 0.0) || !s.1.is_finite() || !s.0.is_finite()) {
            return Err(Error::invalid(format!("sample {i} has a non-positive or non-finite value")));
        }
        Ok(Self { samples, source })
    }

    /// Log-bandwidth random walk reflected at `[ln lo, ln hi]`, starting at the
    /// geometric midpoint.
    pub fn synthetic(p: &SyntheticTraceParams, id: u64, rng_seed: u64) -> Result<Self> {
        if !(p.lo > 0.0 && p.lo < p.hi) {
            return Err(Error::invalid("synthetic trace needs 0 < lo < hi"));
        }
        if !(p.sigma >= 0.0) || !(p.dt > 0.0) || p.num_samples == 0 {
            return Err(Error::invalid("synthetic trace needs sigma >= 0, dt > 0, num_samples >= 1"));
        }
        let (llo, lhi) = (p.lo.ln(), p.hi.ln());
        let mut rng = rng::rng_from(rng_seed, &[stream::INPUT, id]);
        let mut x = 0.5 * (llo + lhi);
        let mut samples = Vec::with_capacity(p.num_samples);
        for i in 0..p.num_samples {
            samples.push((i as f64 * p.dt, x.exp().clamp(p.lo, p.hi)));
            let step: f64 = StandardNormal.sample(&mut rng);
            x = reflect(x + p.sigma * step, llo, lhi);
        }
        Self::new(samples, TraceSource::Synthetic)
    }

    /// Header-less `time_seconds,bytes_per_second` lines.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut samples = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse { line: i + 1, msg };
            let mut parts = line.split(',');
            let (t, b) = match (parts.next(), parts.next(), parts.next()) {
                (Some(t), Some(b), None) => (t.trim(), b.trim()),
                _ => return Err(parse_err(format!("expected 2 fields in {line:?}"))),
            };
            let t: f64 = t.parse().map_err(|e| parse_err(format!("time {t:?}: {e}")))?;
            let b: f64 = b.parse().map_err(|e| parse_err(format!("bandwidth {b:?}: {e}")))?;
            if let Some(&(prev, _)) = samples.last() {
                if !(t > prev) {
                    return Err(parse_err(format!("timestamp {t} not after {prev}")));
                }
            }
            if !(b > 0.0) {
                return Err(parse_err(format!("bandwidth {b} must be positive")));
            }
            samples.push((t, b));
        }
        Self::new(samples, TraceSource::File)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse_csv(&std::fs::read_to_string(path)?)
    }

    pub fn to_csv(&self) -> String {
        self.samples.iter().map(|(t, b)| format!("{t},{b}\n")).collect()
    }

    pub fn to_input_sequence(&self, id: u64) -> Result<InputSequence> {
        InputSequence::new(id, self.samples.iter().map(|&(t, b)| vec![t, b]).collect())
    }

    pub fn from_input_sequence(input: &InputSequence) -> Result<Self> {
        if input.dim() != 2 {
            return Err(Error::invalid("bandwidth inputs are [time, bytes_per_second] pairs"));
        }
        Self::new(input.rows().map(|r| (r[0], r[1])).collect(), TraceSource::File)
    }

    fn end_time(&self) -> f64 {
        let n = self.samples.len();
        let last = self.samples[n - 1].0;
        let tail = if n >= 2 { last - self.samples[n - 2].0 } else { 1.0 };
        last + tail
    }

    pub fn duration(&self) -> f64 {
        self.end_time() - self.samples[0].0
    }

    /// Seconds needed to move `bytes` starting at `start` (seconds since trace start).
    pub fn download_time(&self, start: f64, bytes: f64, looped: bool) -> Result<f64> {
        let t0 = self.samples[0].0;
        let span = self.duration();
        let end = self.end_time();
        let mut remaining = bytes;
        let mut elapsed = 0.0;
        let mut now = start;
        if looped {
            now = now.rem_euclid(span);
        }
        let mut idx = self.segment_at(t0 + now);
        let mut laps = 0usize;
        while remaining > 0.0 {
            let Some(i) = idx else {
                if !looped {
                    return Err(Error::TraceTooShort {
                        needed: start + elapsed + remaining / self.samples.last().expect("non-empty").1,
                        available: span,
                    });
                }
                laps += 1;
                if laps > 1_000_000 {
                    return Err(Error::numerical("download does not terminate"));
                }
                now = 0.0;
                idx = Some(0);
                continue;
            };
            let seg_end = self.samples.get(i + 1).map_or(end, |s| s.0) - t0;
            let bw = self.samples[i].1;
            let avail = (seg_end - now).max(0.0);
            let need = remaining / bw;
            if need <= avail {
                elapsed += need;
                remaining = 0.0;
            } else {
                elapsed += avail;
                remaining -= avail * bw;
                now = seg_end;
                idx = if i + 1 < self.samples.len() { Some(i + 1) } else { None };
            }
        }
        Ok(elapsed)
    }

    fn segment_at(&self, abs_time: f64) -> Option<usize> {
        if abs_time >= self.end_time() {
            return None;
        }
        let i = self.samples.partition_point(|s| s.0 <= abs_time);
        Some(i.saturating_sub(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbrConfig {
    pub bitrates_kbps: Vec<f64>,
    pub chunk_duration: f64,
    pub buffer_max: f64,
    pub num_chunks: usize,
    pub w_quality: f64,
    pub w_rebuffer: f64,
    pub w_smooth: f64,
    pub history_len: usize,
    /// Wrap around to the start when the trace runs out.
    pub loop_trace: bool,
    pub reward_scale: f64,
    pub trace: SyntheticTraceParams,
}

/// Seven levels spaced geometrically between 300 and 4800 kbps.
pub fn default_ladder() -> Vec<f64> {
    let ratio = (4800.0f64 / 300.0).powf(1.0 / (NUM_BITRATES - 1) as f64);
    (0..NUM_BITRATES).map(|i| 300.0 * ratio.powi(i as i32)).collect()
}

impl Default for AbrConfig {
    fn default() -> Self {
        Self {
            bitrates_kbps: default_ladder(),
            chunk_duration: 4.0,
            buffer_max: 60.0,
            num_chunks: 500,
            w_quality: 1.0,
            w_rebuffer: 4.3,
            w_smooth: 1.0,
            history_len: 8,
            loop_trace: true,
            reward_scale: 1.0,
            trace: SyntheticTraceParams::default(),
        }
    }
}

impl AbrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bitrates_kbps.len() != NUM_BITRATES {
            return Err(Error::invalid(format!("bitrate ladder must have {NUM_BITRATES} levels")));
        }
        if self.bitrates_kbps.iter().any(|b| !(*b > 0.0)) {
            return Err(Error::invalid("bitrates must be positive"));
        }
        if !(self.chunk_duration > 0.0) || !(self.buffer_max >= self.chunk_duration) {
            return Err(Error::invalid("need chunk_duration > 0 and buffer_max >= chunk_duration"));
        }
        if self.num_chunks == 0 || self.history_len == 0 {
            return Err(Error::invalid("num_chunks and history_len must be >= 1"));
        }
        Ok(())
    }

    pub fn chunk_bytes(&self, index: usize) -> f64 {
        self.bitrates_kbps[index] * 1000.0 / 8.0 * self.chunk_duration
    }

    /// Quality of a level in Mbps.
    pub fn quality(&self, index: usize) -> f64 {
        self.bitrates_kbps[index] / 1000.0
    }

    pub fn obs_dim(&self) -> usize {
        3 + self.history_len
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbrState {
    pub buffer: f64,
    pub last_bitrate_index: usize,
    pub chunks_remaining: usize,
    /// Most recent last; at most `history_len` throughputs in bytes/s.
    pub bandwidth_history: VecDeque<f64>,
    pub clock: f64,
}

impl AbrState {
    pub fn initial(config: &AbrConfig) -> Self {
        Self {
            buffer: 0.0,
            last_bitrate_index: 0,
            chunks_remaining: config.num_chunks,
            bandwidth_history: VecDeque::with_capacity(config.history_len),
            clock: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChunkOutcome {
    pub download_time: f64,
    pub rebuffer: f64,
    /// Time spent waiting because the buffer would exceed its cap.
    pub sleep: f64,
    pub throughput: f64,
}

/// Buffer recursion shared by the environment and the MPC planner.
/// Returns `(buffer', rebuffer, sleep)`.
pub fn buffer_update(buffer: f64, download_time: f64, chunk_duration: f64, buffer_max: f64) -> (f64, f64, f64) {
    let rebuffer = (download_time - buffer).max(0.0);
    let next = (buffer - download_time).max(0.0) + chunk_duration;
    let sleep = (next - buffer_max).max(0.0);
    (next - sleep, rebuffer, sleep)
}

pub fn qoe(config: &AbrConfig, action: usize, last: usize, rebuffer: f64) -> f64 {
    let q = config.quality(action);
    config.w_quality * q - config.w_rebuffer * rebuffer - config.w_smooth * (q - config.quality(last)).abs()
}

/// Downloads one chunk at bitrate `action`. The reward is unscaled QoE.
pub fn abr_step(
    state: &AbrState,
    action: usize,
    trace: &BandwidthTrace,
    config: &AbrConfig,
) -> Result<(AbrState, f64, ChunkOutcome)> {
    if action >= NUM_BITRATES {
        return Err(Error::invalid(format!("bitrate index {action} out of range")));
    }
    if state.chunks_remaining == 0 {
        return Err(Error::invalid("no chunks remaining"));
    }
    let bytes = config.chunk_bytes(action);
    let download_time = trace.download_time(state.clock, bytes, config.loop_trace)?;
    let (buffer, rebuffer, sleep) = buffer_update(state.buffer, download_time, config.chunk_duration, config.buffer_max);
    let throughput = bytes / download_time;
    let mut history = state.bandwidth_history.clone();
    if history.len() == config.history_len {
        history.pop_front();
    }
    history.push_back(throughput);
    let reward = qoe(config, action, state.last_bitrate_index, rebuffer);
    let next = AbrState {
        buffer,
        last_bitrate_index: action,
        chunks_remaining: state.chunks_remaining - 1,
        bandwidth_history: history,
        clock: state.clock + download_time + sleep,
    };
    Ok((
        next,
        reward,
        ChunkOutcome {
            download_time,
            rebuffer,
            sleep,
            throughput,
        },
    ))
}

/// Harmonic mean of the last (up to) five throughputs.
pub fn harmonic_mean_throughput(history: &VecDeque<f64>) -> Option<f64> {
    let recent: Vec<f64> = history.iter().rev().take(5).copied().collect();
    if recent.is_empty() {
        return None;
    }
    Some(recent.len() as f64 / recent.iter().map(|x| 1.0 / x).sum::<f64>())
}

/// First action of the QoE-maximizing plan over all `7^horizon` bitrate
/// sequences, simulated at a constant `predicted_bw` (bytes/s).
/// Ties go to the lexicographically smallest plan.
pub fn mpc_plan(buffer: f64, last: usize, predicted_bw: f64, horizon: usize, config: &AbrConfig) -> Result<usize> {
    if horizon == 0 {
        return Err(Error::invalid("MPC horizon must be >= 1"));
    }
    if !(predicted_bw > 0.0) {
        return Ok(0);
    }
    fn search(buffer: f64, last: usize, depth: usize, bw: f64, config: &AbrConfig) -> f64 {
        if depth == 0 {
            return 0.0;
        }
        let mut best = f64::NEG_INFINITY;
        for a in 0..NUM_BITRATES {
            let v = step_value(buffer, last, a, bw, config) + {
                let d = config.chunk_bytes(a) / bw;
                let (b, _, _) = buffer_update(buffer, d, config.chunk_duration, config.buffer_max);
                search(b, a, depth - 1, bw, config)
            };
            if v > best {
                best = v;
            }
        }
        best
    }
    fn step_value(buffer: f64, last: usize, a: usize, bw: f64, config: &AbrConfig) -> f64 {
        let d = config.chunk_bytes(a) / bw;
        let (_, rebuffer, _) = buffer_update(buffer, d, config.chunk_duration, config.buffer_max);
        qoe(config, a, last, rebuffer)
    }
    let mut best = (f64::NEG_INFINITY, 0);
    for a in 0..NUM_BITRATES {
        let d = config.chunk_bytes(a) / predicted_bw;
        let (b, _, _) = buffer_update(buffer, d, config.chunk_duration, config.buffer_max);
        let v = step_value(buffer, last, a, predicted_bw, config) + search(b, a, horizon - 1, predicted_bw, config);
        if v > best.0 {
            best = (v, a);
        }
    }
    Ok(best.1)
}

/// Conservative throughput predictor plus exhaustive-plan MPC.
///
/// The prediction is the harmonic mean of recent throughputs divided by
/// `1 + max recent relative prediction error`.
#[derive(Debug, Clone)]
pub struct MpcController {
    pub horizon: usize,
    past_errors: VecDeque<f64>,
    last_prediction: Option<f64>,
}

impl MpcController {
    pub fn new(horizon: usize) -> Self {
        Self {
            horizon,
            past_errors: VecDeque::new(),
            last_prediction: None,
        }
    }

    pub fn reset(&mut self) {
        self.past_errors.clear();
        self.last_prediction = None;
    }

    /// `trace_history` is the observed throughput history; its newest entry is
    /// the throughput of the chunk downloaded after the previous decision.
    pub fn choose(&mut self, state: &AbrState, config: &AbrConfig) -> Result<usize> {
        let Some(&latest) = state.bandwidth_history.back() else {
            return Ok(0);
        };
        if let Some(pred) = self.last_prediction {
            if self.past_errors.len() == 5 {
                self.past_errors.pop_front();
            }
            self.past_errors.push_back((pred - latest).abs() / latest);
        }
        let hm = harmonic_mean_throughput(&state.bandwidth_history).expect("non-empty history");
        self.last_prediction = Some(hm);
        let max_err = self.past_errors.iter().copied().fold(0.0, f64::max);
        mpc_plan(state.buffer, state.last_bitrate_index, hm / (1.0 + max_err), self.horizon, config)
    }
}

pub struct MpcAgent(pub MpcController);

impl Agent for MpcAgent {
    fn act(&mut self, _obs: &Observation, env: &dyn InputDrivenEnv, _rng: &mut Rng) -> Result<(usize, f64)> {
        let abr = env
            .as_any()
            .downcast_ref::<AbrEnv>()
            .ok_or_else(|| Error::invalid("MPC agent needs an ABR environment"))?;
        if abr.state().chunks_remaining == abr.config().num_chunks {
            self.0.reset();
        }
        Ok((self.0.choose(abr.state(), abr.config())?, 0.0))
    }
}

#[derive(Debug, Clone)]
pub struct AbrEnv {
    config: AbrConfig,
    trace: Option<BandwidthTrace>,
    state: AbrState,
    total_rebuffer: f64,
    total_sleep: f64,
}

impl AbrEnv {
    pub fn new(config: AbrConfig) -> Result<Self> {
        config.validate()?;
        let state = AbrState::initial(&config);
        Ok(Self {
            config,
            trace: None,
            state,
            total_rebuffer: 0.0,
            total_sleep: 0.0,
        })
    }

    pub fn state(&self) -> &AbrState {
        &self.state
    }

    pub fn config(&self) -> &AbrConfig {
        &self.config
    }

    pub fn total_rebuffer(&self) -> f64 {
        self.total_rebuffer
    }

    /// Wall-clock time elapsed plus the buffered video still to be played.
    pub fn playback_span(&self) -> f64 {
        self.state.clock + self.state.buffer
    }

    fn observe(&self) -> Observation {
        let c = &self.config;
        let mut v = Vec::with_capacity(c.obs_dim());
        v.push(c.quality(self.state.last_bitrate_index) / c.quality(NUM_BITRATES - 1));
        v.push(self.state.buffer / 10.0);
        v.push(self.state.chunks_remaining as f64 / c.num_chunks as f64);
        let pad = c.history_len - self.state.bandwidth_history.len();
        v.extend(std::iter::repeat_n(0.0, pad));
        v.extend(self.state.bandwidth_history.iter().map(|b| b / 1e6));
        Observation::new(v, false)
    }
}

impl InputDrivenEnv for AbrEnv {
    fn obs_dim(&self) -> usize {
        self.config.obs_dim()
    }

    fn num_actions(&self) -> usize {
        NUM_BITRATES
    }

    fn reset(&mut self, input: &InputSequence) -> Result<Observation> {
        self.trace = Some(BandwidthTrace::from_input_sequence(input)?);
        self.state = AbrState::initial(&self.config);
        self.total_rebuffer = 0.0;
        self.total_sleep = 0.0;
        Ok(self.observe())
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        let trace = self.trace.as_ref().ok_or_else(|| Error::invalid("reset before step"))?;
        let (next, reward, info) = abr_step(&self.state, action, trace, &self.config)?;
        self.state = next;
        self.total_rebuffer += info.rebuffer;
        self.total_sleep += info.sleep;
        Ok(StepOutcome {
            observation: self.observe(),
            reward: reward * self.config.reward_scale,
            done: self.state.chunks_remaining == 0,
        })
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
