//! Heterogeneous-server load balancer. Jobs arrive as a Poisson process with
//! Pareto sizes; each arriving job is assigned to one FIFO server queue.
//!
//! The input row for job `i` is `[interarrival_i, size_i]`, where the
//! interarrival is measured from job `i − 1` (ignored for job 0).

use std::any::Any;
use std::collections::VecDeque;

use rand_distr::{Distribution, Exp, Pareto};
use serde::{Deserialize, Serialize};

use crate::imdp::{Agent, InputDrivenEnv, InputSequence, Observation, StepOutcome};
use crate::rng::{self, stream, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JobArrival {
    pub interarrival_time: f64,
    pub size: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// `−∫ (jobs in system) dt`, integrated piecewise between completions.
    Exact,
    /// `−τ × j` with `j` counted right after the assignment.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadBalanceConfig {
    pub server_rates: Vec<f64>,
    pub num_jobs: usize,
    pub pareto_scale: f64,
    pub pareto_shape: f64,
    pub mean_interarrival: f64,
    pub reward_mode: RewardMode,
    /// Observation entries are work units divided by this.
    pub obs_scale: f64,
    /// Rewards are multiplied by this before being returned.
    pub reward_scale: f64,
}

/// `n` rates spaced linearly over `[lo, hi]` inclusive.
pub fn linear_rates(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

impl LoadBalanceConfig {
    /// Ten servers with rates 0.15 … 1.05, 500 jobs per sequence.
    pub fn ten_server() -> Self {
        Self {
            server_rates: linear_rates(10, 0.15, 1.05),
            num_jobs: 500,
            pareto_scale: 100.0,
            pareto_shape: 1.5,
            mean_interarrival: 55.0,
            reward_mode: RewardMode::Exact,
            obs_scale: 1000.0,
            reward_scale: 1e-4,
        }
    }

    /// Two identical unit-rate servers. The interarrival mean keeps offered load at 0.9.
    pub fn motivating_two_server() -> Self {
        Self {
            server_rates: vec![1.0, 1.0],
            num_jobs: 500,
            pareto_scale: 100.0,
            pareto_shape: 1.5,
            mean_interarrival: 300.0 / (0.9 * 2.0),
            reward_mode: RewardMode::Exact,
            obs_scale: 1000.0,
            reward_scale: 1e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.server_rates.is_empty() || self.server_rates.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::invalid("server rates must be positive and non-empty"));
        }
        if self.num_jobs == 0 {
            return Err(Error::invalid("num_jobs must be >= 1"));
        }
        if !(self.pareto_scale > 0.0) || !(self.mean_interarrival > 0.0) {
            return Err(Error::invalid("Pareto scale and mean interarrival must be positive"));
        }
        if !(self.pareto_shape > 1.0) {
            return Err(Error::InfiniteMeanWorkload(self.pareto_shape));
        }
        if !(self.obs_scale > 0.0) || !self.reward_scale.is_finite() {
            return Err(Error::invalid("obs_scale must be positive and reward_scale finite"));
        }
        Ok(())
    }

    pub fn num_servers(&self) -> usize {
        self.server_rates.len()
    }

    /// Mean work arrival rate over total service capacity.
    pub fn offered_load(&self) -> f64 {
        let mean_size = self.pareto_shape * self.pareto_scale / (self.pareto_shape - 1.0);
        mean_size / self.mean_interarrival / self.server_rates.iter().sum::<f64>()
    }
}

/// Poisson arrivals (exponential interarrivals with the given mean) and
/// i.i.d. Pareto job sizes.
pub fn gen_loadbalance_inputs(
    num_jobs: usize,
    pareto_scale: f64,
    pareto_shape: f64,
    mean_interarrival: f64,
    id: u64,
    rng_seed: u64,
) -> Result<InputSequence> {
    if !(pareto_shape > 1.0) {
        return Err(Error::InfiniteMeanWorkload(pareto_shape));
    }
    if num_jobs == 0 || !(pareto_scale > 0.0) || !(mean_interarrival > 0.0) {
        return Err(Error::invalid("need num_jobs >= 1 and positive scale / interarrival"));
    }
    let sizes = Pareto::new(pareto_scale, pareto_shape).map_err(|e| Error::invalid(e.to_string()))?;
    let gaps = Exp::new(1.0 / mean_interarrival).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = rng::rng_from(rng_seed, &[stream::INPUT, id]);
    let rows = (0..num_jobs)
        .map(|_| {
            let gap: f64 = gaps.sample(&mut rng);
            let size: f64 = sizes.sample(&mut rng);
            // Exp can return exactly 0.0 with vanishing probability
            vec![gap.max(f64::MIN_POSITIVE), size]
        })
        .collect();
    InputSequence::new(id, rows)
}

pub fn job_at(input: &InputSequence, i: usize, step: usize) -> Result<JobArrival> {
    let row = input.require(i, step)?;
    if row.len() != 2 {
        return Err(Error::invalid("job inputs are [interarrival, size] pairs"));
    }
    Ok(JobArrival {
        interarrival_time: row[0],
        size: row[1],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadBalanceState {
    pub incoming_job_size: f64,
    /// Remaining work of each queued job, head first.
    pub queues: Vec<VecDeque<f64>>,
    pub server_rates: Vec<f64>,
    pub sim_clock: f64,
    pub work_arrived: f64,
    pub work_drained: f64,
}

impl LoadBalanceState {
    pub fn new(server_rates: Vec<f64>, incoming_job_size: f64) -> Self {
        Self {
            incoming_job_size,
            queues: vec![VecDeque::new(); server_rates.len()],
            server_rates,
            sim_clock: 0.0,
            work_arrived: 0.0,
            work_drained: 0.0,
        }
    }

    pub fn queue_work(&self) -> Vec<f64> {
        self.queues.iter().map(|q| q.iter().sum()).collect()
    }

    pub fn jobs_in_system(&self) -> usize {
        self.queues.iter().map(VecDeque::len).sum()
    }

    fn enqueue(&mut self, server: usize, size: f64) {
        self.queues[server].push_back(size);
        self.work_arrived += size;
    }

    /// Serves every queue for `tau` time units; returns `∫ (jobs in system) dt`.
    fn advance(&mut self, tau: f64) -> f64 {
        let area = self.serve(tau);
        self.sim_clock += tau;
        area
    }

    /// Runs until every queue is empty; returns the area and the elapsed time.
    fn drain(&mut self) -> (f64, f64) {
        let tau = self.drain_time();
        let area = self.serve(f64::INFINITY);
        self.sim_clock += tau;
        (area, tau)
    }

    fn serve(&mut self, tau: f64) -> f64 {
        let mut area = 0.0;
        for (queue, &rate) in self.queues.iter_mut().zip(&self.server_rates) {
            let mut left = tau;
            while let Some(&head) = queue.front() {
                let finish = head / rate;
                let active = queue.len() as f64;
                if finish <= left {
                    area += active * finish;
                    left -= finish;
                    self.work_drained += queue.pop_front().expect("non-empty");
                } else {
                    area += active * left;
                    let served = rate * left;
                    *queue.front_mut().expect("non-empty") -= served;
                    self.work_drained += served;
                    break;
                }
            }
        }
        area
    }

    /// Time until every queue is empty.
    fn drain_time(&self) -> f64 {
        self.queues
            .iter()
            .zip(&self.server_rates)
            .map(|(q, r)| q.iter().sum::<f64>() / r)
            .fold(0.0, f64::max)
    }
}

/// Assigns the incoming job to `action`, then advances to the next arrival.
///
/// Returns the next state (exposing the next job's size) and the unscaled reward.
pub fn loadbalance_step(
    state: &LoadBalanceState,
    action: usize,
    next_arrival: JobArrival,
    mode: RewardMode,
) -> Result<(LoadBalanceState, f64)> {
    if action >= state.queues.len() {
        return Err(Error::invalid(format!(
            "server {action} out of range for {} servers",
            state.queues.len()
        )));
    }
    if !(next_arrival.interarrival_time >= 0.0) {
        return Err(Error::invalid("interarrival time must be non-negative"));
    }
    let mut next = state.clone();
    next.enqueue(action, state.incoming_job_size);
    let reward = assign_and_advance(&mut next, next_arrival.interarrival_time, mode);
    next.incoming_job_size = next_arrival.size;
    Ok((next, reward))
}

fn assign_and_advance(state: &mut LoadBalanceState, tau: f64, mode: RewardMode) -> f64 {
    let jobs_now = state.jobs_in_system() as f64;
    let area = state.advance(tau);
    match mode {
        RewardMode::Exact => -area,
        RewardMode::Sampled => -tau * jobs_now,
    }
}

/// Index of the least-loaded queue (by remaining work), lowest index on ties.
pub fn shortest_queue_action(state: &LoadBalanceState) -> usize {
    let work = state.queue_work();
    let mut best = 0;
    for (i, w) in work.iter().enumerate() {
        if *w < work[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct LoadBalanceEnv {
    config: LoadBalanceConfig,
    input: Option<InputSequence>,
    state: LoadBalanceState,
    job: usize,
}

impl LoadBalanceEnv {
    pub fn new(config: LoadBalanceConfig) -> Result<Self> {
        config.validate()?;
        let state = LoadBalanceState::new(config.server_rates.clone(), 0.0);
        Ok(Self {
            config,
            input: None,
            state,
            job: 0,
        })
    }

    pub fn state(&self) -> &LoadBalanceState {
        &self.state
    }

    pub fn config(&self) -> &LoadBalanceConfig {
        &self.config
    }

    /// Observation vector `(j, q_1, …, q_k) / obs_scale` for arbitrary values.
    pub fn observation_for(config: &LoadBalanceConfig, job_size: f64, queue_work: &[f64]) -> Observation {
        let mut v = Vec::with_capacity(queue_work.len() + 1);
        v.push(job_size / config.obs_scale);
        v.extend(queue_work.iter().map(|q| q / config.obs_scale));
        Observation::new(v, true)
    }

    fn observe(&self) -> Observation {
        Self::observation_for(&self.config, self.state.incoming_job_size, &self.state.queue_work())
    }
}

impl InputDrivenEnv for LoadBalanceEnv {
    fn obs_dim(&self) -> usize {
        self.config.num_servers() + 1
    }

    fn num_actions(&self) -> usize {
        self.config.num_servers()
    }

    fn reset(&mut self, input: &InputSequence) -> Result<Observation> {
        let first = job_at(input, 0, 0)?;
        self.input = Some(input.clone());
        self.state = LoadBalanceState::new(self.config.server_rates.clone(), first.size);
        self.job = 0;
        Ok(self.observe())
    }

    /// The final job's step runs the system until it is empty, so an episode's
    /// exact-mode reward sums to minus the total job sojourn time.
    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        let input = self.input.as_ref().ok_or_else(|| Error::invalid("reset before step"))?;
        if self.job >= input.len() {
            return Err(Error::invalid("step after episode end"));
        }
        if action >= self.config.num_servers() {
            return Err(Error::invalid(format!("server {action} out of range")));
        }
        let step = self.job;
        let (reward, done) = if self.job + 1 < input.len() {
            let next = job_at(input, self.job + 1, step)?;
            let (next_state, r) = loadbalance_step(&self.state, action, next, self.config.reward_mode)?;
            self.state = next_state;
            (r, false)
        } else {
            let size = self.state.incoming_job_size;
            self.state.enqueue(action, size);
            let jobs_now = self.state.jobs_in_system() as f64;
            let (area, tau) = self.state.drain();
            let r = match self.config.reward_mode {
                RewardMode::Exact => -area,
                RewardMode::Sampled => -tau * jobs_now,
            };
            self.state.incoming_job_size = 0.0;
            (r, true)
        };
        self.job += 1;
        Ok(StepOutcome {
            observation: self.observe(),
            reward: reward * self.config.reward_scale,
            done,
        })
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Join-shortest-queue controller.
pub struct ShortestQueueAgent;

impl Agent for ShortestQueueAgent {
    fn act(&mut self, _obs: &Observation, env: &dyn InputDrivenEnv, _rng: &mut Rng) -> Result<(usize, f64)> {
        let lb = env
            .as_any()
            .downcast_ref::<LoadBalanceEnv>()
            .ok_or_else(|| Error::invalid("shortest-queue agent needs a load-balance environment"))?;
        Ok((shortest_queue_action(lb.state()), 0.0))
    }
}

/// Uniformly random server assignment.
pub struct RandomAgent;

impl Agent for RandomAgent {
    fn act(&mut self, _obs: &Observation, env: &dyn InputDrivenEnv, rng: &mut Rng) -> Result<(usize, f64)> {
        use rand::Rng as _;
        let n = env.num_actions();
        Ok((rng.random_range(0..n), -(n as f64).ln()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imdp::run_episode;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn empty(rates: Vec<f64>, incoming: f64) -> LoadBalanceState {
        LoadBalanceState::new(rates, incoming)
    }

    fn arrival(tau: f64) -> JobArrival {
        JobArrival { interarrival_time: tau, size: 1.0 }
    }

    #[test]
    fn single_job_active_whole_interval() {
        let s = empty(vec![1.0], 10.0);
        let (n, r) = loadbalance_step(&s, 0, arrival(5.0), RewardMode::Exact).unwrap();
        assert_relative_eq!(r, -5.0);
        assert_relative_eq!(n.queue_work()[0], 5.0);
        assert_relative_eq!(n.sim_clock, 5.0);
    }

    #[test]
    fn job_finishing_mid_interval_is_integrated_piecewise() {
        let s = empty(vec![2.0], 4.0);
        let (n, r) = loadbalance_step(&s, 0, arrival(5.0), RewardMode::Exact).unwrap();
        // finishes at t = 2
        assert_relative_eq!(r, -2.0);
        assert_eq!(n.jobs_in_system(), 0);
        let (_, sampled) = loadbalance_step(&s, 0, arrival(5.0), RewardMode::Sampled).unwrap();
        assert_relative_eq!(sampled, -5.0);
    }

    #[test]
    fn empty_interval_has_zero_reward() {
        // a vanishing job keeps the system empty over the interval
        let s = empty(vec![1.0, 1.0], 0.0);
        let (_, r) = loadbalance_step(&s, 1, arrival(5.0), RewardMode::Exact).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn two_long_jobs_double_the_penalty() {
        let mut s = empty(vec![1.0, 1.0], 100.0);
        s.enqueue(0, 100.0);
        let (_, r) = loadbalance_step(&s, 1, arrival(5.0), RewardMode::Exact).unwrap();
        assert_relative_eq!(r, -10.0);
        let (_, r2) = loadbalance_step(&s, 1, arrival(5.0), RewardMode::Sampled).unwrap();
        assert_relative_eq!(r2, -10.0);
    }

    #[test]
    fn out_of_range_action() {
        let s = empty(vec![1.0], 1.0);
        assert!(loadbalance_step(&s, 1, arrival(1.0), RewardMode::Exact).is_err());
    }

    #[test]
    fn shortest_queue_examples() {
        let with = |works: &[f64]| {
            let mut s = empty(vec![1.0; works.len()], 1.0);
            for (i, w) in works.iter().enumerate() {
                s.enqueue(i, *w);
            }
            shortest_queue_action(&s)
        };
        assert_eq!(with(&[3.0, 7.0]), 0);
        assert_eq!(with(&[5.0, 5.0]), 0);
        assert_eq!(with(&[2.0, 1.0, 4.0]), 1);
    }

    #[test]
    fn shape_at_most_one_is_rejected() {
        assert!(matches!(
            gen_loadbalance_inputs(10, 100.0, 1.0, 55.0, 0, 0),
            Err(Error::InfiniteMeanWorkload(_))
        ));
    }

    #[test]
    fn ten_server_preset_rates_and_load() {
        let c = LoadBalanceConfig::ten_server();
        assert_relative_eq!(c.server_rates[0], 0.15);
        assert_relative_eq!(c.server_rates[9], 1.05, epsilon = 1e-12);
        assert_relative_eq!(c.server_rates.iter().sum::<f64>(), 6.0, epsilon = 1e-12);
        assert_relative_eq!(c.offered_load(), 300.0 / 55.0 / 6.0, epsilon = 1e-12);
        assert!((c.offered_load() - 0.909).abs() < 1e-3);
        assert_relative_eq!(LoadBalanceConfig::motivating_two_server().offered_load(), 0.9, epsilon = 1e-12);
    }

    #[test]
    fn generator_moments() {
        let s = gen_loadbalance_inputs(1_000_000, 100.0, 1.5, 55.0, 0, 42).unwrap();
        let n = s.len() as f64;
        let sizes: f64 = s.rows().map(|r| r[1]).sum::<f64>() / n;
        let gaps: Vec<f64> = s.rows().map(|r| r[0]).collect();
        let gm = gaps.iter().sum::<f64>() / n;
        let gv = gaps.iter().map(|g| (g - gm) * (g - gm)).sum::<f64>() / (n - 1.0);
        assert!((sizes / 300.0 - 1.0).abs() < 0.02, "mean size {sizes}");
        assert!((gm / 55.0 - 1.0).abs() < 0.01, "mean gap {gm}");
        assert!((gv / (55.0 * 55.0) - 1.0).abs() < 0.05, "gap variance {gv}");
        assert!(s.rows().all(|r| r[1] >= 100.0));
    }

    #[test]
    fn episode_reward_is_total_sojourn_time() {
        let mut cfg = LoadBalanceConfig::motivating_two_server();
        cfg.reward_scale = 1.0;
        cfg.num_jobs = 50;
        let input = gen_loadbalance_inputs(50, 100.0, 1.5, cfg.mean_interarrival, 3, 3).unwrap();
        let mut env = LoadBalanceEnv::new(cfg).unwrap();
        let mut rng = rng::rng_from(0, &[]);
        let traj = run_episode(&mut ShortestQueueAgent, &mut env, &input, 10_000, &mut rng).unwrap();
        assert_eq!(traj.len(), 50);
        assert!(traj.transitions.last().unwrap().done);
        assert_eq!(env.state().jobs_in_system(), 0);
        assert!(traj.total_reward() < 0.0);
    }

    #[test]
    fn shortest_queue_beats_random_on_identical_servers() {
        let mut cfg = LoadBalanceConfig::motivating_two_server();
        cfg.num_jobs = 200;
        let mut env = LoadBalanceEnv::new(cfg.clone()).unwrap();
        let (mut jsq, mut rnd) = (0.0, 0.0);
        for ep in 0..100u64 {
            let input = gen_loadbalance_inputs(200, 100.0, 1.5, cfg.mean_interarrival, ep, 17).unwrap();
            let mut rng = rng::rng_from(ep, &[]);
            jsq += run_episode(&mut ShortestQueueAgent, &mut env, &input, 1000, &mut rng).unwrap().total_reward();
            rnd += run_episode(&mut RandomAgent, &mut env, &input, 1000, &mut rng).unwrap().total_reward();
        }
        // rewards are minus total completion time
        assert!(jsq >= rnd, "jsq {jsq} vs random {rnd}");
    }

    proptest! {
        #[test]
        fn work_is_conserved(
            jobs in prop::collection::vec((0.01f64..200.0, 1.0f64..2000.0, 0usize..3), 1..60),
        ) {
            let mut s = empty(vec![0.5, 1.0, 2.5], 10.0);
            for (tau, size, a) in jobs {
                let (n, r) = loadbalance_step(&s, a, JobArrival { interarrival_time: tau, size }, RewardMode::Exact).unwrap();
                prop_assert!(r <= 0.0);
                let held: f64 = n.queue_work().iter().sum();
                prop_assert!(n.queues.iter().flatten().all(|w| *w >= 0.0));
                let scale = n.work_arrived.max(1.0);
                prop_assert!(((n.work_arrived - n.work_drained) - held).abs() <= 1e-9 * scale);
                s = n;
            }
        }
    }
}
