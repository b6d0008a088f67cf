//! The planning-and-learning orchestrator.
//!
//! [`train`] interleaves, per real environment step: one ε-greedy action,
//! one stored transition, one real-batch TD update, a recursive
//! least-squares update of the adapted road model, and N TD updates on
//! batches of transitions imagined by the model's one-step predictor.
//! With N = 0 the planning loop vanishes and the schedule degenerates to
//! plain deep Q-learning; [`train_plain_dqn`] is that degenerate loop
//! written without any model machinery, used to prove the reduction.
//!
//! [`evaluate`] rolls out a frozen policy (a Q-network checkpoint or the
//! built-in car-following controller) over a list of seeds, and
//! [`validate_model`] measures the one-step predictor's density and speed
//! errors against the micro-simulator, for adapted and frozen parameters.

use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adaptive_model::{one_step_predict, save_filters, ModelState};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::mdp::{ActionSet, RewardBreakdown, StateVec};
use crate::micro_env::MicroEnv;
use crate::outputs::{
    ErrorAverages, EvalWriter, RunWriter, SeriesWriter, ValidateSummary, ValidateWriter,
    VariantSummary,
};
use crate::qlearn::{
    epsilon_greedy, load_qnet, save_qnet, td_update, Adam, BatchItem, EpsSchedule, Normalizer,
    QNetwork, ReplayMemory, Transition,
};
use crate::seeding::{labels, stream_rng, stream_seed};

/// File names of the checkpoints a training run maintains in its output
/// directory.
pub const QNET_FILE: &str = "qnet.txt";
pub const FILTERS_FILE: &str = "filters.txt";

/// One line of `metrics.jsonl`: everything a finished (or budget-cut)
/// episode is summarized by. Deliberately free of wall-clock readings so
/// reruns are byte-identical.
#[derive(Debug, Clone, Serialize)]
pub struct EpisodeRecord {
    pub episode: u64,
    /// Control steps taken in this episode.
    pub steps: u64,
    /// Cumulative environment steps after this episode.
    pub env_steps_total: u64,
    pub total_reward: f64,
    /// Sum of the per-step fuel terms (≤ 0).
    pub fuel_penalty: f64,
    pub bonus: f64,
    pub timeout_penalty: f64,
    pub accel_penalty: f64,
    /// Fuel burned on the controlled road this episode, liters.
    pub fuel_l: f64,
    pub finished: bool,
    pub timed_out: bool,
    /// Greedy probability in force at the episode's last step.
    pub greedy_prob: f64,
    /// Mean real-batch TD loss over the episode's warm steps.
    pub mean_td_loss: Option<f64>,
}

/// Aggregate counters of one training run.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetrics {
    pub episodes: u64,
    pub total_env_steps: u64,
    pub transitions_stored: u64,
    pub real_updates: u64,
    pub virtual_updates: u64,
    pub episodes_finished: u64,
    /// Cumulative env-step count at the end of the first episode the
    /// platoon completed without timing out.
    pub first_success_env_step: Option<u64>,
    pub records: Vec<EpisodeRecord>,
}

/// Value-learning state shared by the planning and plain variants:
/// network pair, optimizer, replay memory, exploration, and the seeded
/// streams they draw from.
struct Learner {
    net: QNetwork,
    target: QNetwork,
    adam: Adam,
    memory: ReplayMemory,
    norm: Normalizer,
    actions: ActionSet,
    schedule: EpsSchedule,
    gamma: f64,
    batch_size: usize,
    sync_period: u64,
    n_cells: usize,
    explore_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
}

impl Learner {
    fn new(cfg: &RunConfig) -> Learner {
        let mut init_rng = stream_rng(cfg.run.seed, labels::WEIGHT_INIT);
        let net = QNetwork::xavier(&cfg.net_sizes(), &mut init_rng);
        let target = net.clone();
        let adam = Adam::new(cfg.agent.lr, &net);
        Learner {
            adam,
            memory: ReplayMemory::new(cfg.agent.replay_capacity),
            norm: cfg.normalizer(),
            actions: cfg.action_set(),
            schedule: cfg.eps_schedule(),
            gamma: cfg.agent.gamma,
            batch_size: cfg.agent.batch_size,
            sync_period: cfg.agent.sync_period,
            n_cells: net.n_inputs() / 2 - 1,
            net,
            target,
            explore_rng: stream_rng(cfg.run.seed, labels::EXPLORE),
            replay_rng: stream_rng(cfg.run.seed, labels::REPLAY),
        }
    }

    /// ε-greedy action for the current state; `global_step` drives the
    /// exploration ramp.
    fn act(&mut self, s: &StateVec, global_step: u64) -> (usize, f64) {
        let q = self.net.forward(&self.norm.normalize(&s.flatten()));
        let greedy = self.schedule.greedy_prob(global_step);
        let idx = epsilon_greedy(&q, greedy, &mut self.explore_rng);
        (idx, self.actions.index_to_action(idx))
    }

    fn store(&mut self, s: &StateVec, a: usize, r: f64, s_next: &StateVec, done: bool) {
        self.memory.push(Transition {
            s: s.flatten().into_boxed_slice(),
            a,
            r,
            s_next: s_next.flatten().into_boxed_slice(),
            done,
        });
    }

    /// Updates only run once the memory can fill a batch.
    fn warm(&self) -> bool {
        self.memory.len() >= self.batch_size
    }

    /// One TD update on a batch of stored real transitions.
    fn real_update(&mut self) -> Result<f64> {
        let idx = self.memory.sample_indices(self.batch_size, &mut self.replay_rng)?;
        let batch: Vec<BatchItem> = idx
            .into_iter()
            .map(|i| {
                let t = self.memory.get(i);
                BatchItem {
                    s: self.norm.normalize(&t.s),
                    a: t.a,
                    r: t.r,
                    s_next: self.norm.normalize(&t.s_next),
                    done: t.done,
                }
            })
            .collect();
        Ok(td_update(&mut self.net, &self.target, &batch, self.gamma, &mut self.adam))
    }

    /// One TD update on a batch imagined by the adapted model: stored
    /// (state, action) pairs are re-rolled through the one-step predictor,
    /// replacing the stored reward and successor.
    fn virtual_update(&mut self, model: &ModelState, rng: &mut ChaCha8Rng) -> Result<f64> {
        let idx = self.memory.sample_indices(self.batch_size, rng)?;
        let control_length = model.reward.control_length;
        let batch: Vec<BatchItem> = idx
            .into_iter()
            .map(|i| {
                let t = self.memory.get(i);
                let s = StateVec::from_flat(&t.s, self.n_cells);
                let a_value = self.actions.index_to_action(t.a);
                let (s_next_m, r_m) = one_step_predict(model, &s, a_value);
                let done_m = s_next_m.x_p >= control_length;
                BatchItem {
                    s: self.norm.normalize(&t.s),
                    a: t.a,
                    r: r_m,
                    s_next: self.norm.normalize(&s_next_m.flatten()),
                    done: done_m,
                }
            })
            .collect();
        Ok(td_update(&mut self.net, &self.target, &batch, self.gamma, &mut self.adam))
    }

    /// Hard-copy the online network into the target every `sync_period`
    /// environment steps.
    fn sync_if_due(&mut self, env_steps_taken: u64) {
        if env_steps_taken % self.sync_period == 0 {
            self.target = self.net.clone();
        }
    }
}

/// Per-episode accumulator for the reward breakdown.
#[derive(Default)]
struct EpisodeSums {
    steps: u64,
    total: f64,
    fuel: f64,
    bonus: f64,
    timeout: f64,
    accel: f64,
    loss_sum: f64,
    loss_count: u64,
}

impl EpisodeSums {
    fn absorb(&mut self, rb: &RewardBreakdown) {
        self.steps += 1;
        self.total += rb.total;
        self.fuel += rb.r_fc;
        self.bonus += rb.r_bonus;
        self.timeout += rb.r_ot;
        self.accel += rb.r_acc;
    }

    fn record(
        &self,
        episode: u64,
        env_steps_total: u64,
        finished: bool,
        timed_out: bool,
        greedy_prob: f64,
    ) -> EpisodeRecord {
        EpisodeRecord {
            episode,
            steps: self.steps,
            env_steps_total,
            total_reward: self.total,
            fuel_penalty: self.fuel,
            bonus: self.bonus,
            timeout_penalty: self.timeout,
            accel_penalty: self.accel,
            fuel_l: -self.fuel,
            finished,
            timed_out,
            greedy_prob,
            mean_td_loss: if self.loss_count > 0 {
                Some(self.loss_sum / self.loss_count as f64)
            } else {
                None
            },
        }
    }
}

fn check_finite(loss: f64, kind: &str, episode: u64, step: u64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::State(format!(
            "non-finite {kind} TD loss ({loss}) at episode {episode}, env step {step}"
        )))
    }
}

/// Write the per-step series shared by training and evaluation: fuel burn
/// rate and vehicle equivalents per cell.
fn write_step_series(
    series: &mut SeriesWriter,
    step: u64,
    rb: &RewardBreakdown,
    s_next: &StateVec,
    dt: f64,
    dx: f64,
) -> Result<()> {
    series.fuel_rate(step, -rb.r_fc / dt)?;
    let per_cell: Vec<f64> = s_next.rho.iter().map(|r| r * dx).collect();
    series.density_rows(step, &per_cell)
}

/// Train with N = `cfg.agent.planning_steps` model-based updates per real
/// step. Writes `metrics.jsonl`, `fuel.csv`, `density.csv`, and the
/// network/filter checkpoints into the writer's directory.
pub fn train(cfg: &RunConfig, writer: &mut RunWriter) -> Result<RunMetrics> {
    let mut learner = Learner::new(cfg);
    let mut model = cfg.model_state();
    let mut planning_rng = stream_rng(cfg.run.seed, labels::PLANNING);
    let n_planning = cfg.agent.planning_steps;
    let env_cfg = cfg.env_config();
    let (dt, dx) = (cfg.grid.dt, cfg.grid.dx);

    let mut metrics = RunMetrics {
        episodes: 0,
        total_env_steps: 0,
        transitions_stored: 0,
        real_updates: 0,
        virtual_updates: 0,
        episodes_finished: 0,
        first_success_env_step: None,
        records: Vec::new(),
    };

    'run: for episode in 0..cfg.train.episodes {
        if metrics.total_env_steps >= cfg.train.max_env_steps {
            break;
        }
        let env_seed = stream_seed(cfg.run.seed, &format!("env.episode.{episode}"));
        let (mut env, mut s) = MicroEnv::start(env_cfg.clone(), env_seed)?;
        let mut sums = EpisodeSums::default();

        loop {
            let step = metrics.total_env_steps;
            let (a_idx, a_value) = learner.act(&s, step);
            let (s_next, rb, done) = env.step_control(a_value);
            learner.store(&s, a_idx, rb.total, &s_next, done);
            metrics.transitions_stored += 1;
            sums.absorb(&rb);
            write_step_series(&mut writer.series, step, &rb, &s_next, dt, dx)?;

            let updates_before = (metrics.real_updates, metrics.virtual_updates);
            if learner.warm() {
                let loss = learner.real_update()?;
                check_finite(loss, "real", episode, step)?;
                metrics.real_updates += 1;
                sums.loss_sum += loss;
                sums.loss_count += 1;
            }
            model.adapt_to_observation(&s_next);
            if learner.warm() {
                for _ in 0..n_planning {
                    let loss = learner.virtual_update(&model, &mut planning_rng)?;
                    check_finite(loss, "virtual", episode, step)?;
                    metrics.virtual_updates += 1;
                }
                debug_assert_eq!(
                    (metrics.real_updates, metrics.virtual_updates),
                    (updates_before.0 + 1, updates_before.1 + n_planning as u64),
                    "each warm step must do exactly 1 real and N virtual updates"
                );
            }

            metrics.total_env_steps += 1;
            learner.sync_if_due(metrics.total_env_steps);
            s = s_next;

            if done || metrics.total_env_steps >= cfg.train.max_env_steps {
                let finished = env.finished();
                if finished {
                    metrics.episodes_finished += 1;
                    if metrics.first_success_env_step.is_none() {
                        metrics.first_success_env_step = Some(metrics.total_env_steps);
                    }
                }
                let rec = sums.record(
                    episode,
                    metrics.total_env_steps,
                    finished,
                    env.timed_out(),
                    learner.schedule.greedy_prob(metrics.total_env_steps - 1),
                );
                writer.episode(&rec)?;
                metrics.records.push(rec);
                metrics.episodes += 1;
                save_qnet(&writer.dir().join(QNET_FILE), &learner.net)?;
                save_filters(&writer.dir().join(FILTERS_FILE), &model.filters)?;
                if done {
                    break;
                }
                break 'run;
            }
        }
    }
    Ok(metrics)
}

/// Plain deep Q-learning: the same schedule with the model, its
/// adaptation, and the planning loop absent. With equal seeds this
/// produces bit-identical parameters to [`train`] at
/// `planning_steps = 0`, which is the degenerate form of the algorithm.
pub fn train_plain_dqn(cfg: &RunConfig, writer: &mut RunWriter) -> Result<RunMetrics> {
    let mut learner = Learner::new(cfg);
    let env_cfg = cfg.env_config();
    let (dt, dx) = (cfg.grid.dt, cfg.grid.dx);

    let mut metrics = RunMetrics {
        episodes: 0,
        total_env_steps: 0,
        transitions_stored: 0,
        real_updates: 0,
        virtual_updates: 0,
        episodes_finished: 0,
        first_success_env_step: None,
        records: Vec::new(),
    };

    'run: for episode in 0..cfg.train.episodes {
        if metrics.total_env_steps >= cfg.train.max_env_steps {
            break;
        }
        let env_seed = stream_seed(cfg.run.seed, &format!("env.episode.{episode}"));
        let (mut env, mut s) = MicroEnv::start(env_cfg.clone(), env_seed)?;
        let mut sums = EpisodeSums::default();

        loop {
            let step = metrics.total_env_steps;
            let (a_idx, a_value) = learner.act(&s, step);
            let (s_next, rb, done) = env.step_control(a_value);
            learner.store(&s, a_idx, rb.total, &s_next, done);
            metrics.transitions_stored += 1;
            sums.absorb(&rb);
            write_step_series(&mut writer.series, step, &rb, &s_next, dt, dx)?;

            if learner.warm() {
                let loss = learner.real_update()?;
                check_finite(loss, "real", episode, step)?;
                metrics.real_updates += 1;
                sums.loss_sum += loss;
                sums.loss_count += 1;
            }

            metrics.total_env_steps += 1;
            learner.sync_if_due(metrics.total_env_steps);
            s = s_next;

            if done || metrics.total_env_steps >= cfg.train.max_env_steps {
                let finished = env.finished();
                if finished {
                    metrics.episodes_finished += 1;
                    if metrics.first_success_env_step.is_none() {
                        metrics.first_success_env_step = Some(metrics.total_env_steps);
                    }
                }
                let rec = sums.record(
                    episode,
                    metrics.total_env_steps,
                    finished,
                    env.timed_out(),
                    learner.schedule.greedy_prob(metrics.total_env_steps - 1),
                );
                writer.episode(&rec)?;
                metrics.records.push(rec);
                metrics.episodes += 1;
                save_qnet(&writer.dir().join(QNET_FILE), &learner.net)?;
                if done {
                    break;
                }
                break 'run;
            }
        }
    }
    Ok(metrics)
}

/// What controls the platoon during an evaluation rollout.
#[derive(Debug, Clone)]
pub enum PolicySource {
    /// Greedy actions from a saved Q-network.
    Checkpoint(PathBuf),
    /// The built-in safe-speed car-following law (the uncontrolled
    /// benchmark).
    Krauss,
}

impl PolicySource {
    fn label(&self) -> &'static str {
        match self {
            PolicySource::Checkpoint(_) => "checkpoint",
            PolicySource::Krauss => "krauss",
        }
    }
}

/// One evaluated seed's totals.
#[derive(Debug, Clone, Serialize)]
pub struct EvalOutcome {
    pub seed: u64,
    pub fuel_l: f64,
    pub total_reward: f64,
    pub steps: u64,
    pub timed_out: bool,
}

/// Greedy rollout of a policy over each seed. Writes the evaluation
/// table plus per-seed fuel/density (and optional trajectory) series.
pub fn evaluate(
    cfg: &RunConfig,
    source: &PolicySource,
    seeds: &[u64],
    writer: &mut EvalWriter,
) -> Result<Vec<EvalOutcome>> {
    let net = match source {
        PolicySource::Checkpoint(path) => {
            let net = load_qnet(path)?;
            let expected_in = 2 + 2 * cfg.geometry()?.n_cells;
            let expected_out = cfg.action_set().len();
            if net.n_inputs() != expected_in || net.n_outputs() != expected_out {
                return Err(Error::Checkpoint(format!(
                    "network shape {}→{} does not fit this config (expected {expected_in}→{expected_out})",
                    net.n_inputs(),
                    net.n_outputs()
                )));
            }
            Some(net)
        }
        PolicySource::Krauss => None,
    };
    let norm = cfg.normalizer();
    let actions = cfg.action_set();
    let env_cfg = cfg.env_config();
    let (dt, dx) = (cfg.grid.dt, cfg.grid.dx);

    let mut outcomes = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut series = writer.series(seed, cfg.env.log_trajectories)?;
        let (mut env, mut s) = MicroEnv::start(env_cfg.clone(), seed)?;
        let mut fuel_l = 0.0;
        let mut total_reward = 0.0;
        let mut steps = 0u64;
        loop {
            let (s_next, rb, done) = match &net {
                Some(net) => {
                    let q = net.forward(&norm.normalize(&s.flatten()));
                    let a = actions.index_to_action(crate::qlearn::argmax(&q));
                    env.step_control(a)
                }
                None => {
                    let (s_next, rb, done, _implied_a) = env.step_baseline();
                    (s_next, rb, done)
                }
            };
            fuel_l += -rb.r_fc;
            total_reward += rb.total;
            write_step_series(&mut series, steps, &rb, &s_next, dt, dx)?;
            if series.logs_trajectories() {
                for row in env.snapshot() {
                    series.traj_row(env.time(), &row)?;
                }
            }
            steps += 1;
            s = s_next;
            if done {
                break;
            }
        }
        series.finish()?;
        let out = EvalOutcome { seed, fuel_l, total_reward, steps, timed_out: env.timed_out() };
        writer.seed_row(source.label(), seed, fuel_l, total_reward, steps, out.timed_out)?;
        outcomes.push(out);
    }

    let n = outcomes.len().max(1) as f64;
    let mean_fuel = outcomes.iter().map(|o| o.fuel_l).sum::<f64>() / n;
    let mean_reward = outcomes.iter().map(|o| o.total_reward).sum::<f64>() / n;
    let mean_steps = outcomes.iter().map(|o| o.steps as f64).sum::<f64>() / n;
    let timeouts = outcomes.iter().filter(|o| o.timed_out).count();
    writer.mean_row(source.label(), mean_fuel, mean_reward, mean_steps, timeouts)?;
    Ok(outcomes)
}

/// Error accumulator for one predictor variant.
#[derive(Default)]
struct ErrAccum {
    density_err: f64,
    speed_err: f64,
}

/// Drive the simulator with the car-following controller for `max_steps`
/// control steps (spanning episodes as needed), and at every step compare
/// the one-step prediction from the current true state against the next
/// true observation — once with continuously adapted filters, once with
/// the initial parameters frozen. Errors at a step use the filters as
/// adapted through the *previous* observation.
pub fn validate_model(
    cfg: &RunConfig,
    base_seed: u64,
    max_steps: u64,
    writer: &mut ValidateWriter,
) -> Result<ValidateSummary> {
    let mut adapted = cfg.model_state();
    let frozen = cfg.model_state();
    let env_cfg = cfg.env_config();
    let dx = cfg.grid.dx;

    let mut adapted_sum = ErrAccum::default();
    let mut frozen_sum = ErrAccum::default();
    let mut density_mag = 0.0;
    let mut speed_mag = 0.0;
    let mut step = 0u64;
    let mut episode = 0u64;

    while step < max_steps {
        let env_seed = stream_seed(base_seed, &format!("env.episode.{episode}"));
        let (mut env, mut s) = MicroEnv::start(env_cfg.clone(), env_seed)?;
        episode += 1;
        loop {
            let (s_next, _rb, done, implied_a) = env.step_baseline();
            for (variant, model, sums) in [
                ("adapted", &adapted, &mut adapted_sum),
                ("frozen", &frozen, &mut frozen_sum),
            ] {
                let (pred, _r) = one_step_predict(model, &s, implied_a);
                let n = pred.n_cells();
                let density_err = (0..n)
                    .map(|i| (pred.rho[i] - s_next.rho[i]).abs() * dx)
                    .sum::<f64>()
                    / n as f64;
                let occupied: Vec<usize> = (0..n).filter(|&i| s_next.rho[i] > 0.0).collect();
                let speed_err = if occupied.is_empty() {
                    0.0
                } else {
                    occupied.iter().map(|&i| (pred.vbar[i] - s_next.vbar[i]).abs()).sum::<f64>()
                        / occupied.len() as f64
                };
                sums.density_err += density_err;
                sums.speed_err += speed_err;
                writer.error_row(step, density_err, speed_err, variant)?;
                if variant == "adapted" {
                    // Observed magnitudes (denominators of the relative
                    // errors) are variant-independent; accumulate once.
                    let n_occ = occupied.len().max(1) as f64;
                    density_mag +=
                        s_next.rho.iter().map(|r| r.abs() * dx).sum::<f64>() / n as f64;
                    speed_mag +=
                        occupied.iter().map(|&i| s_next.vbar[i].abs()).sum::<f64>() / n_occ;
                }
            }
            adapted.adapt_to_observation(&s_next);
            s = s_next;
            step += 1;
            if step >= max_steps || done {
                break;
            }
        }
    }

    let steps_f = step as f64;
    let rel = |err_sum: f64, mag_sum: f64| {
        if mag_sum > 0.0 {
            err_sum / mag_sum * 100.0
        } else {
            0.0
        }
    };
    let variant_summary = |sums: &ErrAccum| VariantSummary {
        density: ErrorAverages {
            absolute: sums.density_err / steps_f,
            relative_pct: rel(sums.density_err, density_mag),
        },
        speed: ErrorAverages {
            absolute: sums.speed_err / steps_f,
            relative_pct: rel(sums.speed_err, speed_mag),
        },
    };
    let summary = ValidateSummary {
        steps: step,
        adapted: variant_summary(&adapted_sum),
        frozen: variant_summary(&frozen_sum),
    };
    writer.summary(&summary)?;
    Ok(summary)
}

/// Load a training checkpoint's network for reuse (evaluation, tests).
pub fn load_checkpoint_net(dir: &Path) -> Result<QNetwork> {
    load_qnet(&dir.join(QNET_FILE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::fuel_rate;
    use crate::outputs::RunWriter;

    /// A deliberately tiny corridor so unit tests run in milliseconds:
    /// 200 m controlled road, 4 cells, 2 segments.
    fn tiny_cfg() -> RunConfig {
        let text = r#"
[run]
seed = 11
out_dir = "out"

[env]
preheat_len = 100.0
full_width_len = 100.0
reduced_len = 100.0
lanes = 3
v_max = 15.0
inflow_veh_per_hour = 720.0
vehicle_length = 5.0
min_gap = 2.5
platoon_entry_time = 5.0
platoon_length = 30.0
platoon_equivalents = 5.0
step_limit = 60
merge_zone = 50.0

[krauss]
tau = 1.0
b_comfort = 5.0
sigma = 0.5
a_max = 3.0

[grid]
dt = 1.0
dx = 50.0
cells_per_segment = 2

[model]
init_free_speed = 15.0
init_jam_density = 0.4

[mdp]
b_cell = 10.0
b_end = 100.0
c_timeout = 3000.0
c_accel = 1.0
accel_min = -5
accel_max = 3

[agent]
hidden = [8]
lr = 0.001
gamma = 0.99
batch_size = 4
replay_capacity = 1000
eps_ramp_steps = 50
eps_greedy_max = 0.9
sync_period = 10
planning_steps = 2

[train]
episodes = 3
max_env_steps = 40
"#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        cfg.validate().unwrap();
        cfg
    }

    #[test]
    fn smoke_run_accounting_matches_the_schedule() {
        let mut cfg = tiny_cfg();
        cfg.agent.batch_size = 1;
        cfg.agent.planning_steps = 1;
        cfg.train.episodes = 1;
        cfg.train.max_env_steps = 5;
        let tmp = tempfile::tempdir().unwrap();
        let mut writer = RunWriter::create(tmp.path()).unwrap();
        let metrics = train(&cfg, &mut writer).unwrap();
        writer.finish().unwrap();
        assert_eq!(metrics.transitions_stored, 5);
        assert_eq!(metrics.real_updates, 5);
        assert_eq!(metrics.virtual_updates, 5);
        assert_eq!(metrics.total_env_steps, 5);
        assert_eq!(metrics.episodes, 1);
        assert!(tmp.path().join(QNET_FILE).exists());
        assert!(tmp.path().join(FILTERS_FILE).exists());
    }

    #[test]
    fn planning_free_training_reduces_to_plain_dqn() {
        let mut cfg = tiny_cfg();
        cfg.agent.planning_steps = 0;
        let run = |dqn: bool| {
            let tmp = tempfile::tempdir().unwrap();
            let mut writer = RunWriter::create(tmp.path()).unwrap();
            let metrics = if dqn {
                train_plain_dqn(&cfg, &mut writer).unwrap()
            } else {
                train(&cfg, &mut writer).unwrap()
            };
            writer.finish().unwrap();
            let qnet = std::fs::read(tmp.path().join(QNET_FILE)).unwrap();
            let jsonl = std::fs::read(tmp.path().join("metrics.jsonl")).unwrap();
            let fuel = std::fs::read(tmp.path().join("fuel.csv")).unwrap();
            (metrics, qnet, jsonl, fuel)
        };
        let (m_dyna, q_dyna, j_dyna, f_dyna) = run(false);
        let (m_dqn, q_dqn, j_dqn, f_dqn) = run(true);
        assert_eq!(q_dyna, q_dqn, "network parameters diverged");
        assert_eq!(j_dyna, j_dqn, "episode metrics diverged");
        assert_eq!(f_dyna, f_dqn, "fuel series diverged");
        assert_eq!(m_dyna.virtual_updates, 0);
        assert_eq!(m_dqn.virtual_updates, 0);
        assert_eq!(m_dyna.real_updates, m_dqn.real_updates);
    }

    #[test]
    fn rerun_is_byte_identical() {
        let cfg = tiny_cfg();
        let run = || {
            let tmp = tempfile::tempdir().unwrap();
            let mut writer = RunWriter::create(tmp.path()).unwrap();
            train(&cfg, &mut writer).unwrap();
            writer.finish().unwrap();
            [
                std::fs::read(tmp.path().join("metrics.jsonl")).unwrap(),
                std::fs::read(tmp.path().join("fuel.csv")).unwrap(),
                std::fs::read(tmp.path().join("density.csv")).unwrap(),
                std::fs::read(tmp.path().join(QNET_FILE)).unwrap(),
                std::fs::read(tmp.path().join(FILTERS_FILE)).unwrap(),
            ]
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn fuel_series_integrates_to_episode_totals() {
        let cfg = tiny_cfg();
        let tmp = tempfile::tempdir().unwrap();
        let mut writer = RunWriter::create(tmp.path()).unwrap();
        let metrics = train(&cfg, &mut writer).unwrap();
        writer.finish().unwrap();
        let fuel_csv = std::fs::read_to_string(tmp.path().join("fuel.csv")).unwrap();
        let series_total: f64 = fuel_csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap() * cfg.grid.dt)
            .sum();
        let episode_total: f64 = metrics.records.iter().map(|r| r.fuel_l).sum();
        assert!(
            (series_total - episode_total).abs() < 1e-9,
            "{series_total} vs {episode_total}"
        );
        // The breakdown reconciles: total = fuel + bonus + timeout + accel.
        for r in &metrics.records {
            let sum = r.fuel_penalty + r.bonus + r.timeout_penalty + r.accel_penalty;
            assert!((r.total_reward - sum).abs() < 1e-9);
        }
    }

    #[test]
    fn krauss_on_an_empty_road_burns_free_flow_fuel() {
        let mut cfg = tiny_cfg();
        cfg.env.inflow_veh_per_hour = 0.0;
        let tmp = tempfile::tempdir().unwrap();
        let mut writer = EvalWriter::create(tmp.path()).unwrap();
        let outcomes = evaluate(&cfg, &PolicySource::Krauss, &[3], &mut writer).unwrap();
        writer.finish().unwrap();
        assert_eq!(outcomes.len(), 1);
        let o = &outcomes[0];
        assert!(!o.timed_out);
        // Alone on the road the platoon holds the speed limit the whole
        // way, so each step burns exactly its own equivalents' worth.
        let per_step = cfg.env.platoon_equivalents * fuel_rate(cfg.env.v_max) * cfg.grid.dt;
        assert!(
            (o.fuel_l - per_step * o.steps as f64).abs() < 1e-9,
            "fuel {} over {} steps, expected {} per step",
            o.fuel_l,
            o.steps,
            per_step
        );
        // 200 m at 15 m/s is a hair under 14 steps.
        assert!((13..=15).contains(&o.steps), "steps = {}", o.steps);
        let table = std::fs::read_to_string(tmp.path().join("eval.csv")).unwrap();
        assert_eq!(table.lines().count(), 3, "header + seed row + mean row");
        assert!(table.lines().nth(1).unwrap().starts_with("krauss,3,"));
        assert!(table.lines().nth(2).unwrap().starts_with("krauss,mean,"));
    }

    #[test]
    fn checkpoint_evaluation_matches_greedy_training_behavior() {
        let cfg = tiny_cfg();
        let tmp = tempfile::tempdir().unwrap();
        let mut writer = RunWriter::create(tmp.path()).unwrap();
        train(&cfg, &mut writer).unwrap();
        writer.finish().unwrap();

        let mut ew = EvalWriter::create(&tmp.path().join("eval")).unwrap();
        let source = PolicySource::Checkpoint(tmp.path().join(QNET_FILE));
        let outcomes = evaluate(&cfg, &source, &[5], &mut ew).unwrap();
        ew.finish().unwrap();

        // Replay the same rollout by hand with the loaded network.
        let net = load_checkpoint_net(tmp.path()).unwrap();
        let norm = cfg.normalizer();
        let actions = cfg.action_set();
        let (mut env, mut s) = MicroEnv::start(cfg.env_config(), 5).unwrap();
        let mut fuel = 0.0;
        loop {
            let q = net.forward(&norm.normalize(&s.flatten()));
            let a = actions.index_to_action(crate::qlearn::argmax(&q));
            let (s_next, rb, done) = env.step_control(a);
            fuel += -rb.r_fc;
            s = s_next;
            if done {
                break;
            }
        }
        assert_eq!(outcomes[0].fuel_l.to_bits(), fuel.to_bits());
    }

    #[test]
    fn shape_mismatched_checkpoint_is_rejected() {
        let cfg = tiny_cfg();
        let tmp = tempfile::tempdir().unwrap();
        let mut rng = stream_rng(0, "test.net");
        let net = QNetwork::xavier(&[4, 3, 2], &mut rng);
        let path = tmp.path().join("small.txt");
        save_qnet(&path, &net).unwrap();
        let mut ew = EvalWriter::create(&tmp.path().join("eval")).unwrap();
        let err =
            evaluate(&cfg, &PolicySource::Checkpoint(path), &[1], &mut ew).unwrap_err();
        assert!(err.to_string().contains("does not fit"));
    }

    #[test]
    fn validation_accumulates_requested_steps_across_episodes() {
        let cfg = tiny_cfg();
        let tmp = tempfile::tempdir().unwrap();
        let mut writer = ValidateWriter::create(tmp.path()).unwrap();
        let summary = validate_model(&cfg, 11, 30, &mut writer).unwrap();
        writer.finish().unwrap();
        assert_eq!(summary.steps, 30);
        for v in [&summary.adapted, &summary.frozen] {
            assert!(v.density.absolute.is_finite() && v.density.absolute >= 0.0);
            assert!(v.speed.absolute.is_finite() && v.speed.absolute >= 0.0);
            assert!(v.density.relative_pct >= 0.0 && v.speed.relative_pct >= 0.0);
        }
        let errors = std::fs::read_to_string(tmp.path().join("errors.csv")).unwrap();
        // Header + two variants per step.
        assert_eq!(errors.lines().count(), 1 + 2 * 30);
        assert!(tmp.path().join("validate_summary.json").exists());
    }

    #[test]
    fn empty_road_validation_preserves_vacuum_exactly() {
        let mut cfg = tiny_cfg();
        cfg.env.inflow_veh_per_hour = 0.0;

        // Cells with nothing in them and nothing upstream must stay exactly
        // empty in both the prediction and the truth, every step.
        let model = cfg.model_state();
        let (mut env, mut s) = MicroEnv::start(cfg.env_config(), 2).unwrap();
        loop {
            let (s_next, _rb, done, implied_a) = env.step_baseline();
            let (pred, _) = one_step_predict(&model, &s, implied_a);
            for i in 0..pred.n_cells() {
                let upstream_empty = if i == 0 { true } else { s.rho[i - 1] == 0.0 };
                if s.rho[i] == 0.0 && upstream_empty {
                    assert_eq!(pred.rho[i], 0.0, "cell {i} gained predicted mass");
                    assert_eq!(s_next.rho[i], 0.0, "cell {i} gained true mass");
                }
            }
            s = s_next;
            if done {
                break;
            }
        }

        // Aggregate error is bounded by the platoon's own equivalents: the
        // observation carries it as a 5-vehicle point mass hopping between
        // cells while the model spreads it as a continuum.
        let tmp = tempfile::tempdir().unwrap();
        let mut writer = ValidateWriter::create(tmp.path()).unwrap();
        let summary = validate_model(&cfg, 2, 12, &mut writer).unwrap();
        writer.finish().unwrap();
        assert!(
            summary.adapted.density.absolute < 2.5,
            "density error {}",
            summary.adapted.density.absolute
        );
    }

    #[test]
    fn budget_cut_mid_episode_still_records_the_partial_episode() {
        let mut cfg = tiny_cfg();
        cfg.train.max_env_steps = 7; // far below one episode's length
        let tmp = tempfile::tempdir().unwrap();
        let mut writer = RunWriter::create(tmp.path()).unwrap();
        let metrics = train(&cfg, &mut writer).unwrap();
        writer.finish().unwrap();
        assert_eq!(metrics.total_env_steps, 7);
        assert_eq!(metrics.episodes, 1);
        assert_eq!(metrics.records[0].steps, 7);
        assert!(!metrics.records[0].finished);
        assert!(!metrics.records[0].timed_out);
    }
}
