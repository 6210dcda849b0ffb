//! Multi-server scheduling environment.
//!
//! One frame arrives per decision epoch (1/fps seconds). The agent picks a
//! server; the frame's three pipeline sub-tasks are transmitted over that
//! server's link, enqueued in dependency order (tracking first, the two
//! parallel stages behind it), and drained by the server at its fixed rate
//! without preemption. Sub-task deadlines are fixed fractions of the frame
//! period, measured from arrival at the server — and hidden from every
//! observation the agent sees; the only way to learn them is through the
//! post-hoc safety labels.
//!
//! The per-step cost couples an overdue-work term `exp(ST_ddl / ST_a)`
//! (active sub-tasks already past their deadline, over all active
//! sub-tasks; 1 when idle) with a workload-balance term
//! `1 / (1 + exp(-std(queue lengths)))`.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::traces::{standard_normal, LinkModel};

/// Observation normalization constants (documented, fixed).
pub const FRAME_SIZE_REF: f64 = 1e6;
pub const LATENCY_REF: f64 = 0.1;
pub const THROUGHPUT_REF: f64 = 2e8;
pub const BACKLOG_COUNT_REF: f64 = 30.0;
pub const BACKLOG_WORK_REF: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubTaskKind {
    Tracking,
    LocalMapping,
    LoopClosing,
}

impl SubTaskKind {
    /// Queue ordering rank: tracking precedes the two parallel stages.
    pub fn order_rank(self) -> u8 {
        match self {
            SubTaskKind::Tracking => 0,
            SubTaskKind::LocalMapping | SubTaskKind::LoopClosing => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SubTaskKind::Tracking => "tracking",
            SubTaskKind::LocalMapping => "local_mapping",
            SubTaskKind::LoopClosing => "loop_closing",
        }
    }
}

pub const SUBTASK_KINDS: [SubTaskKind; 3] = [
    SubTaskKind::Tracking,
    SubTaskKind::LocalMapping,
    SubTaskKind::LoopClosing,
];

/// One pipeline sub-task. The deadline is carried for bookkeeping but never
/// surfaces in any observation.
#[derive(Debug, Clone, PartialEq)]
pub struct SubTask {
    pub kind: SubTaskKind,
    /// Work units.
    pub size: f64,
    pub order_rank: u8,
    /// Seconds; hidden from the scheduler.
    pub deadline: f64,
    /// Arrival at the server (post-transmission), stamped at dispatch.
    pub arrival_time: f64,
    /// Originating frame (decision step index).
    pub frame: usize,
}

/// Work decomposition and deadline ratios of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskShape {
    /// Work-size shares of (tracking, local_mapping, loop_closing).
    pub size_shares: [f64; 3],
    /// Deadline shares of the frame period for the three kinds.
    pub deadline_shares: [f64; 3],
    /// Work units per compressed byte.
    pub work_per_byte: f64,
}

impl Default for TaskShape {
    fn default() -> Self {
        TaskShape {
            size_shares: [0.5, 0.3, 0.2],
            deadline_shares: [0.4, 0.35, 0.25],
            work_per_byte: 1.0,
        }
    }
}

/// Splits a frame into its three sub-tasks: work proportional to the
/// compressed size, deadlines as fixed fractions of `1/fps`. The raw frame
/// size is carried for bookkeeping only.
pub fn decompose(
    frame_size: f64,
    compressed_size: f64,
    fps: f64,
    shape: &TaskShape,
) -> Result<Vec<SubTask>> {
    if !(frame_size > 0.0 && compressed_size > 0.0) {
        return Err(Error::argument("frame sizes must be > 0"));
    }
    if !(fps > 0.0) {
        return Err(Error::argument("fps must be > 0"));
    }
    let total_work = compressed_size * shape.work_per_byte;
    let period = 1.0 / fps;
    Ok(SUBTASK_KINDS
        .iter()
        .enumerate()
        .map(|(i, &kind)| SubTask {
            kind,
            size: total_work * shape.size_shares[i],
            order_rank: kind.order_rank(),
            deadline: period * shape.deadline_shares[i],
            arrival_time: 0.0,
            frame: 0,
        })
        .collect())
}

/// Penalty over completed sub-tasks:
/// `exp(sum_j max(0.001, (w_j - DDL_j) / DDL_j))`.
pub fn penalty(completed: &[(f64, f64)]) -> f64 {
    let sum: f64 = completed
        .iter()
        .map(|&(w, ddl)| ((w - ddl) / ddl).max(0.001))
        .sum();
    sum.exp()
}

/// Exogenous compressed-frame-size process: Gaussian around the mean with a
/// heavy burst tail (occasional keyframe-sized frames).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameSizeModel {
    pub mean: f64,
    pub std: f64,
    pub floor: f64,
    /// Probability that a frame is a burst.
    pub burst_prob: f64,
    /// Burst multiplier range (uniform).
    pub burst_factor: (f64, f64),
}

impl Default for FrameSizeModel {
    fn default() -> Self {
        FrameSizeModel {
            mean: 1e5,
            std: 1.5e4,
            floor: 3e4,
            burst_prob: 0.05,
            burst_factor: (8.0, 18.0),
        }
    }
}

impl FrameSizeModel {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        use rand::Rng;
        let mut size = self.mean + self.std * standard_normal(rng);
        if rng.gen::<f64>() < self.burst_prob {
            let (lo, hi) = self.burst_factor;
            size *= if hi > lo { rng.gen_range(lo..hi) } else { lo };
        }
        size.max(self.floor)
    }
}

/// Server rates linearly spaced over `[0.8, 2.0] x base`, with the base
/// calibrated so the slowest server finishes a mean-size frame's full
/// pipeline within `headroom` of the tightest (loop-closing) deadline.
pub fn calibrated_rates(
    servers: usize,
    fps: f64,
    mean_frame_work: f64,
    headroom: f64,
    shape: &TaskShape,
) -> Vec<f64> {
    let loop_budget = shape.deadline_shares[2] / fps;
    let r_slow = mean_frame_work / (headroom * loop_budget);
    let base = r_slow / 0.8;
    (0..servers)
        .map(|i| {
            let f = if servers == 1 {
                0.8
            } else {
                0.8 + 1.2 * i as f64 / (servers - 1) as f64
            };
            base * f
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedEnvConfig {
    pub rates: Vec<f64>,
    pub links: Vec<LinkModel>,
    pub fps: f64,
    pub shape: TaskShape,
    pub frame_size: FrameSizeModel,
    pub episode_len: usize,
    /// Measure the balance term in work units instead of sub-task counts.
    pub queue_std_in_work: bool,
}

impl SchedEnvConfig {
    /// Desk-scale default: K heterogeneous servers, moderate headroom, the
    /// default burst process.
    pub fn desk(servers: usize, links: Vec<LinkModel>) -> Self {
        let shape = TaskShape::default();
        let frame_size = FrameSizeModel::default();
        let fps = 30.0;
        SchedEnvConfig {
            rates: calibrated_rates(
                servers,
                fps,
                frame_size.mean * shape.work_per_byte,
                0.7,
                &shape,
            ),
            links,
            fps,
            shape,
            frame_size,
            episode_len: 1000,
            queue_std_in_work: false,
        }
    }

    pub fn servers(&self) -> usize {
        self.rates.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.rates.is_empty() {
            return Err(Error::validation("need at least one server"));
        }
        if self.rates.len() != self.links.len() {
            return Err(Error::validation(format!(
                "{} rates but {} links",
                self.rates.len(),
                self.links.len()
            )));
        }
        if self.rates.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::validation("server rates must be > 0"));
        }
        if !(self.fps > 0.0) {
            return Err(Error::validation("fps must be > 0"));
        }
        if self.episode_len == 0 {
            return Err(Error::validation("episode_len must be >= 1"));
        }
        for link in &self.links {
            link.validate()?;
        }
        Ok(())
    }
}

/// What the scheduler can see, before encoding. Deadlines do not appear.
#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerState {
    /// Incoming compressed frame size (bytes).
    pub frame_size: f64,
    /// Per-server (latency s, throughput bps) for the upcoming dispatch.
    pub links: Vec<(f64, f64)>,
    /// Per-server active sub-task counts (queued + in service).
    pub backlog_counts: Vec<usize>,
    /// Per-server backlog work: queued sizes plus remaining in-service work.
    pub backlog_work: Vec<f64>,
}

impl SchedulerState {
    /// Fixed-layout encoding: `[size, lat x K, thr x K, count x K, work x K]`,
    /// min-max normalized by the documented reference constants.
    pub fn to_vector(&self) -> Vec<f64> {
        let k = self.links.len();
        let mut v = Vec::with_capacity(1 + 4 * k);
        v.push(self.frame_size / FRAME_SIZE_REF);
        v.extend(self.links.iter().map(|(lat, _)| lat / LATENCY_REF));
        v.extend(self.links.iter().map(|(_, thr)| thr / THROUGHPUT_REF));
        v.extend(
            self.backlog_counts
                .iter()
                .map(|&c| c as f64 / BACKLOG_COUNT_REF),
        );
        v.extend(self.backlog_work.iter().map(|w| w / BACKLOG_WORK_REF));
        v
    }

    pub fn dim(servers: usize) -> usize {
        1 + 4 * servers
    }
}

/// A finished sub-task with its realized sojourn time.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletedSubTask {
    pub kind: SubTaskKind,
    pub server: usize,
    pub w: f64,
    pub deadline: f64,
    pub violated: bool,
}

/// Post-hoc safety of one step: did any sub-task completed during the step
/// overshoot its deadline?
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyLabel {
    pub unsafe_flag: bool,
    pub violating: Vec<CompletedSubTask>,
    /// `max_j (w_j - DDL_j) / DDL_j` over the step's completions.
    pub margin: Option<f64>,
}

/// Cost decomposition for audits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParts {
    pub exp_term: f64,
    pub sigmoid_term: f64,
    pub st_ddl: usize,
    pub st_a: usize,
    pub queue_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedStep {
    pub state: SchedulerState,
    pub cost: f64,
    pub cost_parts: CostParts,
    pub safety: SafetyLabel,
    pub completed: Vec<CompletedSubTask>,
    pub done: bool,
}

/// Event-log record, one per completed sub-task.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub t: usize,
    pub frame: usize,
    pub kind: SubTaskKind,
    pub server: usize,
    pub enqueue_t: f64,
    pub start_t: f64,
    pub finish_t: f64,
    pub w: f64,
    pub ddl: f64,
    pub violated: bool,
}

pub const EVENT_LOG_HEADER: &str =
    "t,frame,subtask_kind,server,enqueue_t,start_t,finish_t,w_j,ddl,violated";

pub fn event_log_csv(records: &[EventRecord]) -> String {
    let mut out = String::from(EVENT_LOG_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.frame,
            r.kind.label(),
            r.server,
            r.enqueue_t,
            r.start_t,
            r.finish_t,
            r.w,
            r.ddl,
            u8::from(r.violated)
        );
    }
    out
}

#[derive(Debug, Clone)]
struct InService {
    task: SubTask,
    start: f64,
    finish: f64,
}

#[derive(Debug, Clone)]
struct ServerState {
    rate: f64,
    /// Dispatched but unfinished tasks, ordered by (arrival, batch rank).
    pending: VecDeque<SubTask>,
    in_service: Option<InService>,
    /// Time the server last became free.
    free_time: f64,
}

impl ServerState {
    fn new(rate: f64) -> Self {
        ServerState {
            rate,
            pending: VecDeque::new(),
            in_service: None,
            free_time: 0.0,
        }
    }

    /// Inserts a dispatched batch keeping the pending queue sorted by
    /// arrival time; within a batch the given (rank-sorted) order holds.
    fn enqueue_batch(&mut self, batch: Vec<SubTask>) {
        for task in batch {
            let mut pos = self.pending.len();
            while pos > 0 && self.pending[pos - 1].arrival_time > task.arrival_time {
                pos -= 1;
            }
            self.pending.insert(pos, task);
        }
    }

    /// Advances the server clock to `until`, completing what fits.
    fn advance(&mut self, until: f64, completions: &mut Vec<(SubTask, f64, f64)>) {
        loop {
            if let Some(svc) = &self.in_service {
                if svc.finish <= until {
                    let svc = self.in_service.take().unwrap();
                    self.free_time = svc.finish;
                    completions.push((svc.task, svc.start, svc.finish));
                } else {
                    return;
                }
            } else {
                let Some(head) = self.pending.front() else {
                    return;
                };
                let start = self.free_time.max(head.arrival_time);
                if start >= until {
                    return;
                }
                let task = self.pending.pop_front().unwrap();
                let finish = start + task.size / self.rate;
                self.in_service = Some(InService { task, start, finish });
            }
        }
    }

    /// Sub-tasks arrived at the server and unfinished at time `now`.
    fn active_at(&self, now: f64) -> impl Iterator<Item = &SubTask> {
        self.in_service
            .iter()
            .map(|s| &s.task)
            .chain(self.pending.iter().filter(move |t| t.arrival_time <= now))
    }

    fn backlog_count(&self, now: f64) -> usize {
        self.active_at(now).count()
    }

    fn backlog_work(&self, now: f64) -> f64 {
        let queued: f64 = self
            .pending
            .iter()
            .filter(|t| t.arrival_time <= now)
            .map(|t| t.size)
            .sum();
        let in_service = self
            .in_service
            .as_ref()
            .map(|s| (s.finish - now).max(0.0) * self.rate)
            .unwrap_or(0.0);
        queued + in_service
    }
}

/// Single-owner environment instance, seeded per episode.
#[derive(Debug, Clone)]
pub struct SchedEnv {
    config: SchedEnvConfig,
    servers: Vec<ServerState>,
    now: f64,
    step_idx: usize,
    done: bool,
    size_rng: ChaCha8Rng,
    link_rng: ChaCha8Rng,
    next_frame_size: f64,
    next_links: Vec<(f64, f64)>,
    log: Vec<EventRecord>,
    miss_count: usize,
    arrival_count: usize,
}

impl SchedEnv {
    pub fn new(config: SchedEnvConfig, episode_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut env = SchedEnv {
            servers: config.rates.iter().map(|&r| ServerState::new(r)).collect(),
            size_rng: rng::rng(episode_seed, Stream::Env, 1),
            link_rng: rng::rng(episode_seed, Stream::Env, 2),
            next_frame_size: 0.0,
            next_links: Vec::new(),
            now: 0.0,
            step_idx: 0,
            done: false,
            log: Vec::new(),
            miss_count: 0,
            arrival_count: 0,
            config,
        };
        env.draw_exogenous();
        Ok(env)
    }

    fn draw_exogenous(&mut self) {
        self.next_frame_size = self.config.frame_size.sample(&mut self.size_rng);
        self.next_links = self
            .config
            .links
            .iter()
            .map(|m| {
                let (thr, lat) = m.sample(&mut self.link_rng);
                (lat, thr)
            })
            .collect();
    }

    pub fn servers(&self) -> usize {
        self.servers.len()
    }

    pub fn config(&self) -> &SchedEnvConfig {
        &self.config
    }

    pub fn step_index(&self) -> usize {
        self.step_idx
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn event_log(&self) -> &[EventRecord] {
        &self.log
    }

    /// Deadline misses and sub-task arrivals so far this episode.
    pub fn miss_stats(&self) -> (usize, usize) {
        (self.miss_count, self.arrival_count)
    }

    /// Deterministic scheduler-visible snapshot.
    pub fn observe(&self) -> SchedulerState {
        SchedulerState {
            frame_size: self.next_frame_size,
            links: self.next_links.clone(),
            backlog_counts: self
                .servers
                .iter()
                .map(|s| s.backlog_count(self.now))
                .collect(),
            backlog_work: self
                .servers
                .iter()
                .map(|s| s.backlog_work(self.now))
                .collect(),
        }
    }

    /// Dispatches the pending frame to `action`, advances one decision
    /// epoch, and scores the resulting system state.
    pub fn step(&mut self, action: usize) -> Result<SchedStep> {
        if self.done {
            return Err(Error::state("episode is done"));
        }
        if action >= self.servers.len() {
            return Err(Error::argument(format!(
                "server id {action} out of range 0..{}",
                self.servers.len()
            )));
        }

        let frame_size = self.next_frame_size;
        let (latency, throughput) = self.next_links[action];
        let tx_delay = latency + 8.0 * frame_size / throughput;
        let arrival = self.now + tx_delay;

        let mut batch = decompose(frame_size, frame_size, self.config.fps, &self.config.shape)?;
        batch.sort_by_key(|t| t.order_rank);
        for task in batch.iter_mut() {
            task.arrival_time = arrival;
            task.frame = self.step_idx;
        }
        self.arrival_count += batch.len();
        self.servers[action].enqueue_batch(batch);

        let epoch_end = self.now + 1.0 / self.config.fps;
        let mut completions: Vec<(usize, SubTask, f64, f64)> = Vec::new();
        for (sid, server) in self.servers.iter_mut().enumerate() {
            let mut local = Vec::new();
            server.advance(epoch_end, &mut local);
            for (task, start, finish) in local {
                completions.push((sid, task, start, finish));
            }
        }
        self.now = epoch_end;
        self.step_idx += 1;

        let mut completed = Vec::with_capacity(completions.len());
        for (sid, task, start, finish) in completions {
            let w = finish - task.arrival_time;
            let violated = w > task.deadline;
            if violated {
                self.miss_count += 1;
            }
            self.log.push(EventRecord {
                t: self.step_idx - 1,
                frame: task.frame,
                kind: task.kind,
                server: sid,
                enqueue_t: task.arrival_time,
                start_t: start,
                finish_t: finish,
                w,
                ddl: task.deadline,
                violated,
            });
            completed.push(CompletedSubTask {
                kind: task.kind,
                server: sid,
                w,
                deadline: task.deadline,
                violated,
            });
        }

        let violating: Vec<CompletedSubTask> =
            completed.iter().filter(|c| c.violated).cloned().collect();
        let margin = completed
            .iter()
            .map(|c| (c.w - c.deadline) / c.deadline)
            .fold(None, |acc: Option<f64>, m| Some(acc.map_or(m, |a| a.max(m))));
        let safety = SafetyLabel {
            unsafe_flag: !violating.is_empty(),
            violating,
            margin,
        };

        let cost_parts = self.cost_parts();
        let cost = cost_parts.exp_term + cost_parts.sigmoid_term;

        self.done = self.step_idx >= self.config.episode_len;
        self.draw_exogenous();

        Ok(SchedStep {
            state: self.observe(),
            cost,
            cost_parts,
            safety,
            completed,
            done: self.done,
        })
    }

    fn cost_parts(&self) -> CostParts {
        let now = self.now;
        let mut st_a = 0usize;
        let mut st_ddl = 0usize;
        for server in &self.servers {
            for task in server.active_at(now) {
                st_a += 1;
                if now - task.arrival_time > task.deadline {
                    st_ddl += 1;
                }
            }
        }
        // ST_a = 0 convention: the ratio is taken as 0, so the exp term is 1.
        let exp_term = if st_a == 0 {
            1.0
        } else {
            (st_ddl as f64 / st_a as f64).exp()
        };
        let lengths: Vec<f64> = if self.config.queue_std_in_work {
            self.servers.iter().map(|s| s.backlog_work(now)).collect()
        } else {
            self.servers
                .iter()
                .map(|s| s.backlog_count(now) as f64)
                .collect()
        };
        let mean = lengths.iter().sum::<f64>() / lengths.len() as f64;
        let queue_std = (lengths.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>()
            / lengths.len() as f64)
            .sqrt();
        let sigmoid_term = 1.0 / (1.0 + (-queue_std).exp());
        CostParts {
            exp_term,
            sigmoid_term,
            st_ddl,
            st_a,
            queue_std,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fast_links(k: usize) -> Vec<LinkModel> {
        vec![LinkModel::fixed(1e9, 0.001); k]
    }

    fn tiny_config(k: usize, rate: f64) -> SchedEnvConfig {
        SchedEnvConfig {
            rates: vec![rate; k],
            links: fast_links(k),
            fps: 30.0,
            shape: TaskShape::default(),
            frame_size: FrameSizeModel {
                mean: 1e5,
                std: 0.0,
                floor: 1e5,
                burst_prob: 0.0,
                burst_factor: (1.0, 1.0),
            },
            episode_len: 100,
            queue_std_in_work: false,
        }
    }

    #[test]
    fn decompose_deadlines_and_shares() {
        let shape = TaskShape::default();
        let tasks = decompose(2e5, 1e5, 30.0, &shape).unwrap();
        assert_eq!(tasks.len(), 3);
        assert!((tasks[0].deadline - 0.4 / 30.0).abs() < 1e-12);
        assert!((tasks[1].deadline - 0.35 / 30.0).abs() < 1e-12);
        assert!((tasks[2].deadline - 0.25 / 30.0).abs() < 1e-12);
        // Deadline budget sums to one frame period; sizes to the work total.
        let ddl_sum: f64 = tasks.iter().map(|t| t.deadline).sum();
        assert!((ddl_sum - 1.0 / 30.0).abs() < 1e-12);
        let size_sum: f64 = tasks.iter().map(|t| t.size).sum();
        assert!((size_sum - 1e5).abs() < 1e-9);
        assert_eq!(tasks[0].order_rank, 0);
        assert_eq!(tasks[1].order_rank, 1);

        // Doubling the compressed size doubles every sub-task.
        let doubled = decompose(2e5, 2e5, 30.0, &shape).unwrap();
        for (a, b) in tasks.iter().zip(&doubled) {
            assert!((b.size - 2.0 * a.size).abs() < 1e-9);
        }
    }

    #[test]
    fn penalty_examples() {
        let on_time = vec![(0.01, 0.013), (0.01, 0.012), (0.005, 0.008)];
        assert!((penalty(&on_time) - 0.003f64.exp()).abs() < 1e-12);
        let double = vec![(0.02, 0.01)];
        assert!((penalty(&double) - 1f64.exp()).abs() < 1e-12);
        assert_eq!(penalty(&[]), 1.0);
    }

    #[test]
    fn empty_system_cost_is_one_point_five() {
        // Fast servers: the frame fully completes within the epoch, leaving
        // zero active sub-tasks and equal (empty) queues.
        let mut env = SchedEnv::new(tiny_config(3, 1e8), 7).unwrap();
        let step = env.step(0).unwrap();
        assert_eq!(step.completed.len(), 3);
        assert_eq!(step.cost_parts.st_a, 0);
        assert!((step.cost - 1.5).abs() < 1e-9, "cost {}", step.cost);
        assert!(!step.safety.unsafe_flag);
    }

    #[test]
    fn all_overdue_active_subtasks_give_exp_term_e() {
        // One extremely slow server accumulates overdue work.
        let mut env = SchedEnv::new(tiny_config(1, 1.0), 8).unwrap();
        let mut last = None;
        for _ in 0..3 {
            last = Some(env.step(0).unwrap());
        }
        let parts = last.unwrap().cost_parts;
        assert!(parts.st_a > 0);
        assert_eq!(parts.st_ddl, parts.st_a);
        assert!((parts.exp_term - 1f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn hot_server_raises_queue_std_term_over_round_robin() {
        let config = {
            let mut c = tiny_config(10, 2e6);
            c.episode_len = 100;
            c
        };
        let run = |pick: &dyn Fn(usize) -> usize| -> f64 {
            let mut env = SchedEnv::new(config.clone(), 42).unwrap();
            let mut total = 0.0;
            for t in 0..100 {
                total += env.step(pick(t)).unwrap().cost_parts.sigmoid_term;
            }
            total / 100.0
        };
        let hot = run(&|_| 0usize);
        let rr = run(&|t| t % 10);
        assert!(
            hot > rr,
            "hot-server sigma term {hot} not above round-robin {rr}"
        );
    }

    #[test]
    fn invalid_server_id_is_an_argument_error() {
        let mut env = SchedEnv::new(tiny_config(2, 1e7), 0).unwrap();
        assert!(matches!(env.step(2).unwrap_err(), Error::Argument(_)));
    }

    #[test]
    fn observe_layout_and_purity() {
        let env = SchedEnv::new(tiny_config(10, 1e7), 3).unwrap();
        let state = env.observe();
        let v = state.to_vector();
        assert_eq!(v.len(), SchedulerState::dim(10));
        assert_eq!(v.len(), 41);
        // Fresh env: all backlog features zero.
        assert!(v[21..].iter().all(|&x| x == 0.0));
        let again = env.observe().to_vector();
        assert_eq!(v, again);
    }

    #[test]
    fn deadlines_never_reach_observations() {
        // Two configs differing only in deadline shares: identical
        // observation streams, different safety labels.
        let mut base = tiny_config(2, 2e7);
        base.frame_size.std = 1e4;
        let mut tight = base.clone();
        tight.shape.deadline_shares = [0.04, 0.035, 0.025];

        let mut env_a = SchedEnv::new(base, 11).unwrap();
        let mut env_b = SchedEnv::new(tight, 11).unwrap();
        let mut label_diverged = false;
        let mut obs_a = vec![env_a.observe().to_vector()];
        let mut obs_b = vec![env_b.observe().to_vector()];
        for t in 0..50 {
            let a = env_a.step(t % 2).unwrap();
            let b = env_b.step(t % 2).unwrap();
            obs_a.push(a.state.to_vector());
            obs_b.push(b.state.to_vector());
            if a.safety.unsafe_flag != b.safety.unsafe_flag {
                label_diverged = true;
            }
        }
        assert_eq!(obs_a, obs_b, "deadline change leaked into observations");
        assert!(label_diverged, "tight deadlines never produced a violation");
    }

    #[test]
    fn safety_label_matches_event_log_recomputation() {
        let mut config = tiny_config(3, 2.5e6);
        config.frame_size.burst_prob = 0.15;
        config.frame_size.burst_factor = (6.0, 12.0);
        config.episode_len = 200;
        let mut env = SchedEnv::new(config, 21).unwrap();
        let mut per_step_unsafe = Vec::new();
        for t in 0..200 {
            let step = env.step(t % 3).unwrap();
            per_step_unsafe.push(step.safety.unsafe_flag);
        }
        // Recompute from the log: step t is unsafe iff some record with
        // t == step index is violated.
        for (t, &flag) in per_step_unsafe.iter().enumerate() {
            let from_log = env.event_log().iter().any(|r| r.t == t && r.violated);
            assert_eq!(flag, from_log, "step {t}");
        }
    }

    #[test]
    fn work_conservation_and_fifo_audit() {
        let mut config = tiny_config(2, 2e6);
        config.frame_size.burst_prob = 0.2;
        config.frame_size.burst_factor = (4.0, 9.0);
        config.episode_len = 300;
        let mut env = SchedEnv::new(config.clone(), 31).unwrap();
        for t in 0..300 {
            env.step((t * 7 + 1) % 2).unwrap();
        }
        let log = env.event_log();
        assert!(!log.is_empty());
        for server in 0..2 {
            let mut events: Vec<&EventRecord> =
                log.iter().filter(|r| r.server == server).collect();
            events.sort_by(|a, b| a.start_t.partial_cmp(&b.start_t).unwrap());
            let mut busy = 0.0;
            let mut prev_finish: f64 = 0.0;
            for e in &events {
                // No overlap: the server serves one sub-task at a time.
                assert!(
                    e.start_t >= prev_finish - 1e-9,
                    "server {server}: overlapping service"
                );
                // Never starts before the sub-task arrived.
                assert!(e.start_t >= e.enqueue_t - 1e-12);
                busy += e.finish_t - e.start_t;
                prev_finish = e.finish_t;
            }
            // Busy time bounded by rate x elapsed horizon (work conservation:
            // completed work <= rate x busy interval, equality per task).
            let horizon = 300.0 / config.fps;
            assert!(busy <= horizon + 1e-9);

            // FIFO within order_rank: a sub-task never finishes before an
            // earlier-enqueued one on the same server (single service line).
            for i in 0..events.len() {
                for j in i + 1..events.len() {
                    let (a, b) = (events[i], events[j]);
                    if a.enqueue_t < b.enqueue_t - 1e-12 {
                        assert!(
                            a.finish_t <= b.finish_t + 1e-9,
                            "later-enqueued sub-task finished first on {server}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn cost_invariant_under_server_permutation() {
        let mut config = tiny_config(3, 1e6);
        config.rates = vec![1e6, 2e6, 3e6];
        config.frame_size.std = 1e4;
        let perm = [2usize, 0, 1];
        let mut permuted = config.clone();
        permuted.rates = perm.iter().map(|&i| config.rates[i]).collect();
        permuted.links = perm.iter().map(|&i| config.links[i]).collect();

        // Same episode seed draws identical frame sizes. Links are fixed so
        // the per-server draw order does not matter.
        let mut env_a = SchedEnv::new(config, 5).unwrap();
        let mut env_b = SchedEnv::new(permuted, 5).unwrap();
        let actions = [0usize, 1, 2, 2, 1, 0, 0, 2, 1, 1];
        for (t, &a) in actions.iter().enumerate() {
            // In env_b, server j holds what server perm[j] held in env_a.
            let b_action = perm.iter().position(|&p| p == a).unwrap();
            let sa = env_a.step(a).unwrap();
            let sb = env_b.step(b_action).unwrap();
            assert!(
                (sa.cost - sb.cost).abs() < 1e-12,
                "step {t}: cost changed under permutation"
            );
        }
    }

    #[test]
    fn episode_terminates_and_rejects_further_steps() {
        let mut config = tiny_config(1, 1e8);
        config.episode_len = 3;
        let mut env = SchedEnv::new(config, 1).unwrap();
        for _ in 0..2 {
            assert!(!env.step(0).unwrap().done);
        }
        assert!(env.step(0).unwrap().done);
        assert!(matches!(env.step(0).unwrap_err(), Error::State(_)));
    }

    #[test]
    fn event_log_csv_schema() {
        let mut env = SchedEnv::new(tiny_config(1, 1e8), 2).unwrap();
        env.step(0).unwrap();
        let csv = event_log_csv(env.event_log());
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), EVENT_LOG_HEADER);
        let first = lines.next().unwrap();
        assert!(first.starts_with("0,0,tracking,0,"), "{first}");
    }
}
