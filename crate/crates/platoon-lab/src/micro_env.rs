//! Microscopic ground-truth simulator: a multi-lane corridor of
//! individually modeled vehicles around one controllable platoon.
//!
//! Humans follow a stochastic safe-speed car-following law: each step a
//! driver takes the least of the free-speed limit, the acceleration-limited
//! speed, and a safe speed
//!
//! ```text
//! v_safe = v_l + (g - v_l tau) / (tau + (v_f + v_l) / (2 b)),
//! ```
//!
//! then dawdles by a random fraction of one step's acceleration. `g` is the
//! bumper gap minus a standstill margin; a hard positional cap `g / dt` on
//! top of `v_safe` makes vehicle overlap impossible under simultaneous
//! updates even when a leader out-brakes the comfortable rate `b`.
//!
//! The corridor loses its outermost lane partway down; vehicles in that
//! lane merge inward inside a finite zone when both neighbor gaps admit
//! them, and otherwise queue behind a virtual wall at the drop.
//!
//! The platoon is a single long rigid vehicle. Before the controlled
//! stretch it drives by the same car-following law (without dawdling);
//! inside it takes commanded accelerations, overridden only by its own
//! safety envelope.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::macro_model::RoadGeometry;
use crate::mdp::{reward_env_side, RewardBreakdown, RewardParams, StateVec};
use crate::seeding::{labels, stream_rng};

/// Minimal speed at which a queued vehicle is allowed to enter the road;
/// below it the entry area counts as blocked and the spawn waits.
const ENTRY_SPEED_FLOOR: f64 = 1.0;
/// Float slack for the per-lane spacing invariant.
const GAP_SLACK: f64 = 1e-6;
/// Minimal next-step speed advantage (m/s) a neighboring lane must offer
/// before a discretionary lane change; keeps vehicles from ping-ponging
/// between equivalent lanes.
const LANE_CHANGE_GAIN: f64 = 1.0;
/// Fraction of the lag vehicle's time headway a lane changer must leave
/// it; below 1 the receiving driver yields and brakes rather than being
/// owed a full headway.
const LAG_HEADWAY_FACTOR: f64 = 0.5;
/// Within this distance of the hard end of the dropping lane, a merger
/// takes any physically free slot (zipper merging), forcing the receiving
/// lane to brake behind it.
const FORCED_MERGE_DISTANCE: f64 = 30.0;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// All physical and episode parameters of the simulator.
#[derive(Debug, Clone)]
pub struct EnvConfig {
    /// Warm-in stretch upstream of the controlled road, m.
    pub preheat_len: f64,
    /// Full-width stretch (all lanes available), m; the controlled road
    /// starts where this stretch begins.
    pub full_width_len: f64,
    /// Reduced-width tail (one lane fewer), m.
    pub reduced_len: f64,
    /// Lane count of the full-width road; the outermost lane drops.
    pub lanes: usize,
    /// Observation cell length, m.
    pub dx: f64,
    /// Observation cells per adapted segment.
    pub cells_per_segment: usize,
    /// Step length, s.
    pub dt: f64,
    /// Speed limit, m/s.
    pub v_max: f64,
    /// Upstream arrival rate over all lanes, veh/s.
    pub inflow: f64,
    /// Human vehicle body length, m.
    pub vehicle_length: f64,
    /// Standstill margin kept between bumpers, m.
    pub min_gap: f64,
    /// Simulated time at which the platoon enters, s.
    pub platoon_entry_time: f64,
    /// Platoon body length, m.
    pub platoon_length: f64,
    /// Vehicle equivalents the platoon contributes to densities and fuel.
    pub platoon_equivalents: f64,
    /// Driver reaction time, s.
    pub tau: f64,
    /// Comfortable braking rate assumed of leaders, m/s².
    pub b_comfort: f64,
    /// Dawdling intensity in [0, 1].
    pub sigma: f64,
    /// Maximal acceleration, m/s².
    pub a_max: f64,
    /// Control steps before the episode times out.
    pub step_limit: u64,
    /// Length of the merge zone upstream of the lane drop, m.
    pub merge_zone: f64,
    /// Reward constants; `dt`, `dx` and `control_length` must agree with
    /// the fields above.
    pub reward: RewardParams,
}

impl EnvConfig {
    /// Total corridor length, m.
    pub fn corridor_len(&self) -> f64 {
        self.preheat_len + self.full_width_len + self.reduced_len
    }

    /// Where the controlled (observed) stretch begins, m.
    pub fn control_start(&self) -> f64 {
        self.preheat_len
    }

    /// Length of the controlled stretch, m.
    pub fn control_len(&self) -> f64 {
        self.full_width_len + self.reduced_len
    }

    /// Position of the lane drop, m.
    pub fn drop_pos(&self) -> f64 {
        self.preheat_len + self.full_width_len
    }

    /// Discretization of the controlled stretch.
    pub fn geometry(&self) -> Result<RoadGeometry> {
        RoadGeometry::new(self.control_len(), self.dx, self.cells_per_segment)
    }
}

// ---------------------------------------------------------------------------
// State
// ---------------------------------------------------------------------------

/// One simulated vehicle. `x` is the front bumper.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vehicle {
    pub id: u64,
    pub lane: usize,
    pub x: f64,
    pub v: f64,
    pub len: f64,
}

impl Vehicle {
    pub fn rear(&self) -> f64 {
        self.x - self.len
    }
}

/// How the platoon's speed is chosen during one step.
#[derive(Debug, Clone, Copy)]
enum PlatoonMode {
    /// Car-following law, no dawdling.
    CarFollowing,
    /// Commanded acceleration, overridden by the safety envelope.
    Commanded(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Control,
    Done,
}

/// Snapshot row for trajectory logging.
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryRow {
    pub id: u64,
    pub lane: usize,
    pub x: f64,
    pub v: f64,
    pub is_platoon: bool,
}

#[derive(Clone, Copy)]
enum Who {
    Human(usize),
    Platoon,
}

#[derive(Clone, Copy)]
struct Slot {
    who: Who,
    x: f64,
    rear: f64,
    v: f64,
}

/// The simulator. Construct with [`MicroEnv::start`], which runs the
/// warm-in phases and hands back the first decision-point observation.
#[derive(Debug, Clone)]
pub struct MicroEnv {
    cfg: EnvConfig,
    geom: RoadGeometry,
    vehicles: Vec<Vehicle>,
    platoon: Option<Vehicle>,
    phase: Phase,
    steps_total: u64,
    control_steps: u64,
    spawn_accum: f64,
    spawn_queue: VecDeque<usize>,
    next_id: u64,
    inflow_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    spawned: u64,
    exited: u64,
    merged: u64,
    lane_changes: u64,
    finished: bool,
    timed_out: bool,
}

impl MicroEnv {
    /// Build the corridor, run the empty-road warm-in until the platoon's
    /// entry time, insert the platoon, and drive it to the start of the
    /// controlled stretch. Returns the environment at its first decision
    /// point together with the observation there.
    pub fn start(cfg: EnvConfig, seed: u64) -> Result<(MicroEnv, StateVec)> {
        assert!(cfg.lanes >= 2, "need at least two lanes for a lane drop");
        assert!(cfg.dt > 0.0 && cfg.v_max > 0.0 && cfg.inflow >= 0.0);
        assert!((0.0..=1.0).contains(&cfg.sigma), "dawdling intensity outside [0, 1]");
        assert!(cfg.tau > 0.0 && cfg.b_comfort > 0.0 && cfg.a_max > 0.0);
        assert!(cfg.vehicle_length > 0.0 && cfg.min_gap >= 0.0 && cfg.platoon_length > 0.0);
        assert!(cfg.step_limit > 0, "episodes need a positive step budget");
        assert_eq!(cfg.reward.dt, cfg.dt, "reward dt disagrees with simulator dt");
        assert_eq!(cfg.reward.dx, cfg.dx, "reward dx disagrees with simulator dx");
        assert_eq!(
            cfg.reward.control_length,
            cfg.control_len(),
            "reward control length disagrees with the corridor sections"
        );
        let geom = cfg.geometry()?;
        let mut env = MicroEnv {
            inflow_rng: stream_rng(seed, labels::INFLOW),
            noise_rng: stream_rng(seed, labels::DRIVER_NOISE),
            geom,
            vehicles: Vec::new(),
            platoon: None,
            phase: Phase::Control,
            steps_total: 0,
            control_steps: 0,
            spawn_accum: 0.0,
            spawn_queue: VecDeque::new(),
            next_id: 0,
            spawned: 0,
            exited: 0,
            merged: 0,
            lane_changes: 0,
            finished: false,
            timed_out: false,
            cfg,
        };

        // Warm-in: humans only.
        while env.time() < env.cfg.platoon_entry_time {
            env.advance(PlatoonMode::CarFollowing);
        }
        // Insert the platoon as soon as the entry area admits it, then
        // drive it to the controlled stretch. A generous step bound turns
        // a pathological configuration into an error instead of a hang.
        let budget = env.steps_total + (3600.0 / env.cfg.dt).ceil() as u64;
        loop {
            if env.platoon.is_none() {
                env.try_place_platoon();
            }
            match &env.platoon {
                Some(p) if p.x >= env.cfg.control_start() => break,
                _ => env.advance(PlatoonMode::CarFollowing),
            }
            if env.steps_total > budget {
                return Err(Error::State(
                    "platoon failed to reach the controlled stretch during warm-in".into(),
                ));
            }
        }
        let obs = env.observe();
        Ok((env, obs))
    }

    pub fn time(&self) -> f64 {
        self.steps_total as f64 * self.cfg.dt
    }

    pub fn control_steps(&self) -> u64 {
        self.control_steps
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    pub fn finished(&self) -> bool {
        self.finished
    }

    pub fn timed_out(&self) -> bool {
        self.timed_out
    }

    pub fn humans_on_road(&self) -> usize {
        self.vehicles.len()
    }

    pub fn merges(&self) -> u64 {
        self.merged
    }

    pub fn lane_changes(&self) -> u64 {
        self.lane_changes
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    /// One control step with a commanded platoon acceleration. Returns the
    /// next observation, the reward split into its terms, and whether the
    /// episode ended.
    pub fn step_control(&mut self, action: f64) -> (StateVec, RewardBreakdown, bool) {
        let (obs, rb, done, _) = self.step_with(PlatoonMode::Commanded(action), action);
        (obs, rb, done)
    }

    /// One control step with the platoon driven by the car-following law
    /// (the uncontrolled baseline). The reward charges the acceleration the
    /// law happened to produce, which is also returned.
    pub fn step_baseline(&mut self) -> (StateVec, RewardBreakdown, bool, f64) {
        let v_before = self.platoon.as_ref().expect("platoon must be on the road").v;
        let (obs, rb, done, v_after) = self.step_with(PlatoonMode::CarFollowing, f64::NAN);
        let implied = (v_after - v_before) / self.cfg.dt;
        // Recompute the acceleration term with the implied value.
        let r_acc = -self.cfg.reward.c_accel * implied.abs();
        let rb = RewardBreakdown {
            r_acc,
            total: rb.r_fc + rb.r_bonus + rb.r_ot + r_acc,
            ..rb
        };
        (obs, rb, done, implied)
    }

    fn step_with(
        &mut self,
        mode: PlatoonMode,
        charged_accel: f64,
    ) -> (StateVec, RewardBreakdown, bool, f64) {
        assert_eq!(self.phase, Phase::Control, "stepping a finished episode");
        let cs = self.cfg.control_start();
        let prev_x = self.platoon.as_ref().expect("platoon must be on the road").x;

        self.advance(mode);
        self.control_steps += 1;

        let p = self.platoon.as_ref().expect("platoon cannot leave mid-episode");
        let next_x = p.x;
        let v_after = p.v;
        self.finished = next_x - cs >= self.cfg.control_len();
        self.timed_out = !self.finished && self.control_steps >= self.cfg.step_limit;
        let done = self.finished || self.timed_out;
        if done {
            self.phase = Phase::Done;
        }

        let speeds: Vec<f64> = self
            .vehicles
            .iter()
            .filter(|v| v.x >= cs && v.x < self.cfg.corridor_len())
            .map(|v| v.v)
            .collect();
        let charged = if charged_accel.is_nan() { 0.0 } else { charged_accel };
        let rb = reward_env_side(
            prev_x - cs,
            next_x - cs,
            charged,
            &speeds,
            Some(v_after),
            self.timed_out,
            &self.cfg.reward,
        );
        (self.observe(), rb, done, v_after)
    }

    // -- world dynamics ----------------------------------------------------

    /// Advance every vehicle one step: lane changes, simultaneous speed
    /// update, movement, exits, arrivals, invariant checks.
    fn advance(&mut self, mode: PlatoonMode) {
        self.lane_change_pass();
        self.speed_and_move(mode);
        self.retire_exited();
        self.spawn_arrivals();
        self.steps_total += 1;
        self.assert_invariants();
    }

    /// One front-to-back lane-change sweep over the human vehicles (the
    /// platoon never changes lanes).
    ///
    /// Vehicles in the dropping lane merge inward: unconditionally inside
    /// the merge zone, and upstream of it as soon as the surviving lane
    /// clearly outruns theirs (escaping a queue that backed up past the
    /// zone). Everyone else may move one lane sideways — never into the
    /// dropping lane — when the neighbor offers a clear speed gain. Every
    /// change requires a time-headway gap on both sides in the target lane.
    fn lane_change_pass(&mut self) {
        let drop_lane = self.cfg.lanes - 1;
        let zone_start = self.cfg.drop_pos() - self.cfg.merge_zone;
        let mut order: Vec<usize> = (0..self.vehicles.len()).collect();
        order.sort_by(|&a, &b| self.vehicles[b].x.total_cmp(&self.vehicles[a].x));
        for i in order {
            let me = self.vehicles[i];
            if me.lane == drop_lane {
                let target = drop_lane - 1;
                let wanted = me.x >= zone_start
                    || self.lane_gain(i, target) >= LANE_CHANGE_GAIN;
                let forced = self.cfg.drop_pos() - me.x <= FORCED_MERGE_DISTANCE;
                if wanted && self.gap_accepts(i, target, forced) {
                    self.vehicles[i].lane = target;
                    self.merged += 1;
                }
            } else {
                let mut best: Option<(usize, f64)> = None;
                for target in [me.lane.wrapping_sub(1), me.lane + 1] {
                    if target >= drop_lane {
                        continue;
                    }
                    let gain = self.lane_gain(i, target);
                    if gain >= LANE_CHANGE_GAIN
                        && best.is_none_or(|(_, g)| gain > g)
                        && self.gap_accepts(i, target, false)
                    {
                        best = Some((target, gain));
                    }
                }
                if let Some((target, _)) = best {
                    self.vehicles[i].lane = target;
                    self.lane_changes += 1;
                }
            }
        }
    }

    /// How much faster vehicle `i` could go next step in `lane` than where
    /// it is now.
    fn lane_gain(&self, i: usize, lane: usize) -> f64 {
        self.lane_potential(i, lane) - self.lane_potential(i, self.vehicles[i].lane)
    }

    /// Attainable next-step speed for vehicle `i` if it sat in `lane` at
    /// its current position (the dropping lane includes its standing
    /// virtual wall).
    fn lane_potential(&self, i: usize, lane: usize) -> f64 {
        let me = self.vehicles[i];
        let mut leader: Option<(f64, f64)> = None;
        for s in self.lane_slots_of(lane) {
            if let Who::Human(j) = s.who {
                if j == i {
                    continue;
                }
            }
            if s.x > me.x && leader.is_none_or(|(rear, _)| s.rear < rear) {
                leader = Some((s.rear, s.v));
            }
        }
        let mut vd = self.desired_speed(me.v, me.x, leader);
        if lane == self.cfg.lanes - 1 {
            vd = vd.min(self.desired_speed(me.v, me.x, Some((self.cfg.drop_pos(), 0.0))));
        }
        vd
    }

    /// Whether the target lane has room for vehicle `i`: a time-headway
    /// gap ahead, and behind either a courtesy fraction of the lag
    /// vehicle's headway or — for a `forced` zipper merge — bare standing
    /// room, leaving the lag vehicle to brake.
    fn gap_accepts(&self, i: usize, target: usize, forced: bool) -> bool {
        let me = self.vehicles[i];
        let mut lead_gap = f64::INFINITY;
        let mut lag_gap = f64::INFINITY;
        let mut lag_v = 0.0;
        for s in self.lane_slots_of(target) {
            if s.x >= me.x {
                lead_gap = lead_gap.min(s.rear - me.x);
            } else {
                let g = me.rear() - s.x;
                if g < lag_gap {
                    lag_gap = g;
                    lag_v = s.v;
                }
            }
        }
        let lag_need = if forced {
            self.cfg.min_gap
        } else {
            self.cfg.min_gap + lag_v * self.cfg.tau * LAG_HEADWAY_FACTOR
        };
        lead_gap >= self.cfg.min_gap + me.v * self.cfg.tau && lag_gap >= lag_need
    }

    /// All entities (humans and the platoon) in one lane, unordered.
    fn lane_slots_of(&self, lane: usize) -> Vec<Slot> {
        let mut out = Vec::new();
        for (i, v) in self.vehicles.iter().enumerate() {
            if v.lane == lane {
                out.push(Slot { who: Who::Human(i), x: v.x, rear: v.rear(), v: v.v });
            }
        }
        if let Some(p) = &self.platoon {
            if p.lane == lane {
                out.push(Slot { who: Who::Platoon, x: p.x, rear: p.rear(), v: p.v });
            }
        }
        out
    }

    /// Desired speed of a follower: free limit, acceleration limit, then
    /// safe speed and positional cap against the leader if there is one.
    fn desired_speed(&self, v: f64, front: f64, leader: Option<(f64, f64)>) -> f64 {
        let c = &self.cfg;
        let mut vd = c.v_max.min(v + c.a_max * c.dt);
        if let Some((l_rear, l_v)) = leader {
            let g = l_rear - front - c.min_gap;
            vd = vd.min(krauss_safe_speed(v, l_v, g, c.tau, c.b_comfort)).min(g / c.dt);
        }
        vd.max(0.0)
    }

    /// Compute every entity's new speed from the current state, then move
    /// everyone at once.
    fn speed_and_move(&mut self, mode: PlatoonMode) {
        let c = self.cfg.clone();
        let drop_lane = c.lanes - 1;
        let mut new_v = vec![0.0f64; self.vehicles.len()];
        let mut new_v_p = self.platoon.as_ref().map(|p| p.v);

        for lane in 0..c.lanes {
            let mut slots = self.lane_slots_of(lane);
            slots.sort_by(|a, b| a.x.total_cmp(&b.x));
            for (k, slot) in slots.iter().enumerate() {
                let leader = slots.get(k + 1).map(|l| (l.rear, l.v));
                match slot.who {
                    Who::Human(i) => {
                        let mut vd = self.desired_speed(slot.v, slot.x, leader);
                        if lane == drop_lane {
                            // Virtual wall at the drop, a standing obstacle.
                            vd = vd.min(self.desired_speed(
                                slot.v,
                                slot.x,
                                Some((c.drop_pos(), 0.0)),
                            ));
                        }
                        let u: f64 = self.noise_rng.random();
                        new_v[i] = (vd - c.sigma * c.a_max * c.dt * u).max(0.0);
                    }
                    Who::Platoon => {
                        new_v_p = Some(match mode {
                            PlatoonMode::CarFollowing => {
                                self.desired_speed(slot.v, slot.x, leader)
                            }
                            PlatoonMode::Commanded(a) => {
                                let mut vn = (slot.v + a * c.dt).clamp(0.0, c.v_max);
                                if let Some((l_rear, l_v)) = leader {
                                    let g = l_rear - slot.x - c.min_gap;
                                    let safe =
                                        krauss_safe_speed(slot.v, l_v, g, c.tau, c.b_comfort);
                                    vn = vn.min(safe.max(0.0)).min((g / c.dt).max(0.0));
                                }
                                vn
                            }
                        });
                    }
                }
            }
        }

        for (veh, v) in self.vehicles.iter_mut().zip(&new_v) {
            veh.v = *v;
            veh.x += *v * c.dt;
        }
        if let (Some(p), Some(v)) = (self.platoon.as_mut(), new_v_p) {
            p.v = v;
            p.x += v * c.dt;
        }
    }

    fn retire_exited(&mut self) {
        let end = self.cfg.corridor_len();
        let before = self.vehicles.len();
        self.vehicles.retain(|v| v.rear() < end);
        self.exited += (before - self.vehicles.len()) as u64;
    }

    /// Accumulate arrivals at the configured rate, assign each a lane as it
    /// joins the queue (so arrival patterns do not depend on road state or
    /// policy), and place queued vehicles in order while the entry admits
    /// them.
    fn spawn_arrivals(&mut self) {
        self.spawn_accum += self.cfg.inflow * self.cfg.dt;
        while self.spawn_accum >= 1.0 {
            self.spawn_accum -= 1.0;
            let lane = self.inflow_rng.random_range(0..self.cfg.lanes);
            self.spawn_queue.push_back(lane);
        }
        let platoon_pending =
            self.platoon.is_none() && self.time() >= self.cfg.platoon_entry_time;
        while let Some(&lane) = self.spawn_queue.front() {
            // Keep the platoon's lane clear while its own entry is due.
            if platoon_pending && lane == 0 {
                break;
            }
            if !self.try_place_human(lane) {
                break;
            }
            self.spawn_queue.pop_front();
        }
    }

    /// Entry speed admitted by the rearmost entity of a lane for a new
    /// vehicle whose front bumper would sit at `front`: conservative safe
    /// speed plus the positional cap, or the speed limit on an empty lane.
    fn entry_speed(&self, lane: usize, front: f64) -> Option<f64> {
        let c = &self.cfg;
        let slots = self.lane_slots_of(lane);
        let rearmost = slots.iter().min_by(|a, b| a.x.total_cmp(&b.x));
        match rearmost {
            None => Some(c.v_max),
            Some(l) => {
                let g = l.rear - front - c.min_gap;
                if g < 0.0 {
                    return None;
                }
                let safe = krauss_safe_speed(c.v_max, l.v, g, c.tau, c.b_comfort).max(0.0);
                let v0 = c.v_max.min(safe).min(g / c.dt);
                if v0 >= ENTRY_SPEED_FLOOR {
                    Some(v0)
                } else {
                    None
                }
            }
        }
    }

    fn try_place_human(&mut self, lane: usize) -> bool {
        let front = self.cfg.vehicle_length;
        match self.entry_speed(lane, front) {
            Some(v0) => {
                self.vehicles.push(Vehicle {
                    id: self.next_id,
                    lane,
                    x: front,
                    v: v0,
                    len: self.cfg.vehicle_length,
                });
                self.next_id += 1;
                self.spawned += 1;
                true
            }
            None => false,
        }
    }

    fn try_place_platoon(&mut self) -> bool {
        let front = self.cfg.platoon_length;
        match self.entry_speed(0, front) {
            Some(v0) => {
                self.platoon = Some(Vehicle {
                    id: u64::MAX,
                    lane: 0,
                    x: front,
                    v: v0,
                    len: self.cfg.platoon_length,
                });
                true
            }
            None => false,
        }
    }

    // -- observation and logging --------------------------------------------

    /// Aggregate the controlled stretch into per-cell densities (front
    /// bumpers per cell over all lanes, platoon counted as its vehicle
    /// equivalents) and count-weighted mean speeds; empty cells report the
    /// speed limit.
    pub fn observe(&self) -> StateVec {
        let cs = self.cfg.control_start();
        let n = self.geom.n_cells;
        let mut count = vec![0.0f64; n];
        let mut vsum = vec![0.0f64; n];
        for v in &self.vehicles {
            if let Some(c) = self.geom.cell_of_position(v.x - cs) {
                count[c] += 1.0;
                vsum[c] += v.v;
            }
        }
        let p = self.platoon.as_ref().expect("observation requires the platoon on the road");
        if let Some(c) = self.geom.cell_of_position(p.x - cs) {
            count[c] += self.cfg.platoon_equivalents;
            vsum[c] += self.cfg.platoon_equivalents * p.v;
        }
        let rho: Vec<f64> = count.iter().map(|&k| k / self.cfg.dx).collect();
        let vbar: Vec<f64> = count
            .iter()
            .zip(&vsum)
            .map(|(&k, &s)| if k > 0.0 { s / k } else { self.cfg.v_max })
            .collect();
        StateVec { x_p: p.x - cs, v_p: p.v, rho, vbar }
    }

    /// Positions of everything on the road, for trajectory logs.
    pub fn snapshot(&self) -> Vec<TrajectoryRow> {
        let mut rows: Vec<TrajectoryRow> = self
            .vehicles
            .iter()
            .map(|v| TrajectoryRow { id: v.id, lane: v.lane, x: v.x, v: v.v, is_platoon: false })
            .collect();
        if let Some(p) = &self.platoon {
            rows.push(TrajectoryRow { id: p.id, lane: p.lane, x: p.x, v: p.v, is_platoon: true });
        }
        rows.sort_by_key(|r| r.id);
        rows
    }

    // -- invariants ----------------------------------------------------------

    fn assert_invariants(&self) {
        let c = &self.cfg;
        let drop_lane = c.lanes - 1;
        for lane in 0..c.lanes {
            let mut slots = self.lane_slots_of(lane);
            slots.sort_by(|a, b| a.x.total_cmp(&b.x));
            for pair in slots.windows(2) {
                let gap = pair[1].rear - pair[0].x;
                assert!(
                    gap >= c.min_gap - GAP_SLACK,
                    "spacing violated in lane {lane}: gap {gap} m at t = {} s",
                    self.time()
                );
            }
            if lane == drop_lane {
                if let Some(last) = slots.last() {
                    assert!(
                        last.x <= c.drop_pos() + GAP_SLACK,
                        "vehicle passed the lane drop in the dropping lane"
                    );
                }
            }
        }
        for v in &self.vehicles {
            assert!(v.x.is_finite() && v.v >= 0.0 && v.v <= c.v_max + 1e-9);
        }
        if let Some(p) = &self.platoon {
            assert!(p.x.is_finite() && p.v >= 0.0 && p.v <= c.v_max + 1e-9);
        }
        assert_eq!(
            self.spawned - self.exited,
            self.vehicles.len() as u64,
            "vehicle bookkeeping out of balance"
        );
    }
}

/// Safe following speed: the fastest speed from which the follower can
/// stay behind a leader that brakes at rate `b`, given reaction time `tau`
/// and the current bumper gap `g` (already net of the standstill margin).
pub fn krauss_safe_speed(v_follower: f64, v_leader: f64, g: f64, tau: f64, b: f64) -> f64 {
    v_leader + (g - v_leader * tau) / (tau + (v_follower + v_leader) / (2.0 * b))
}
