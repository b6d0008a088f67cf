//! Run configuration: a sectioned TOML file covering every knob of the
//! laboratory, cross-field validation, and builders that assemble the
//! domain objects the modules consume.
//!
//! Unknown keys are hard errors — a mistyped hyperparameter must fail
//! loudly, not silently fall back to a default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adaptive_model::{ModelState, SegmentFilter, FREE_SPEED_MAX};
use crate::error::{Error, Result};
use crate::macro_model::{check_cfl, RoadGeometry};
use crate::mdp::{ActionSet, RewardParams};
use crate::micro_env::EnvConfig;
use crate::qlearn::{EpsSchedule, Normalizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub env: EnvSection,
    pub krauss: KraussSection,
    pub grid: GridSection,
    pub model: ModelSection,
    pub mdp: MdpSection,
    pub agent: AgentSection,
    pub train: TrainSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Root seed; every random consumer derives its own stream from it.
    pub seed: u64,
    /// Default output directory (overridable on the command line).
    pub out_dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub preheat_len: f64,
    pub full_width_len: f64,
    pub reduced_len: f64,
    pub lanes: usize,
    pub v_max: f64,
    /// Aggregate human arrival rate over all lanes, veh/h.
    pub inflow_veh_per_hour: f64,
    pub vehicle_length: f64,
    pub min_gap: f64,
    pub platoon_entry_time: f64,
    pub platoon_length: f64,
    pub platoon_equivalents: f64,
    pub step_limit: u64,
    pub merge_zone: f64,
    /// Write per-step vehicle positions during evaluation runs.
    #[serde(default)]
    pub log_trajectories: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KraussSection {
    /// Driver reaction time, s.
    pub tau: f64,
    /// Comfortable braking rate, m/s².
    pub b_comfort: f64,
    /// Dawdling intensity in [0, 1].
    pub sigma: f64,
    /// Maximal acceleration, m/s².
    pub a_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dt: f64,
    pub dx: f64,
    pub cells_per_segment: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Initial free speed of every segment filter, m/s.
    pub init_free_speed: f64,
    /// Initial jam density of full-width segments, veh/m; reduced-width
    /// segments scale it by the remaining lane fraction.
    pub init_jam_density: f64,
    /// Bottleneck factor applied at the platoon's cell during virtual
    /// steps; 1.0 disables the restriction.
    #[serde(default = "default_capacity_reduction")]
    pub capacity_reduction: f64,
}

fn default_capacity_reduction() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpSection {
    pub b_cell: f64,
    pub b_end: f64,
    pub c_timeout: f64,
    pub c_accel: f64,
    /// Discrete acceleration bounds, inclusive, m/s².
    pub accel_min: i32,
    pub accel_max: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSection {
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub eps_ramp_steps: u64,
    pub eps_greedy_max: f64,
    /// Target network sync period, in training steps.
    pub sync_period: u64,
    /// Virtual updates per real step; 0 disables planning.
    pub planning_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    /// Maximal number of episodes.
    pub episodes: u64,
    /// Hard budget of real environment steps across all episodes; training
    /// stops at whichever limit is hit first.
    pub max_env_steps: u64,
}

impl RunConfig {
    /// Parse and validate a configuration file.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::ConfigParse {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::ConfigParse {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-field validation; every builder below is safe to call once
    /// this passes.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ConfigInvalid(msg));

        let e = &self.env;
        if e.lanes < 2 {
            return bad(format!("env.lanes must be at least 2 for a lane drop, got {}", e.lanes));
        }
        if !(e.v_max > 0.0 && e.v_max <= 15.0) {
            return bad(format!(
                "env.v_max must lie in (0, 15] (the fuel model's calibrated range), got {}",
                e.v_max
            ));
        }
        if e.inflow_veh_per_hour < 0.0 {
            return bad(format!("env.inflow_veh_per_hour must be ≥ 0, got {}", e.inflow_veh_per_hour));
        }
        for (name, v) in [
            ("env.preheat_len", e.preheat_len),
            ("env.full_width_len", e.full_width_len),
            ("env.reduced_len", e.reduced_len),
            ("env.vehicle_length", e.vehicle_length),
            ("env.platoon_length", e.platoon_length),
            ("env.platoon_equivalents", e.platoon_equivalents),
            ("env.merge_zone", e.merge_zone),
        ] {
            if !(v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if e.min_gap < 0.0 {
            return bad(format!("env.min_gap must be ≥ 0, got {}", e.min_gap));
        }
        if e.platoon_entry_time < 0.0 {
            return bad(format!("env.platoon_entry_time must be ≥ 0, got {}", e.platoon_entry_time));
        }
        if e.step_limit == 0 {
            return bad("env.step_limit must be positive".into());
        }

        let k = &self.krauss;
        if !(k.tau > 0.0 && k.b_comfort > 0.0 && k.a_max > 0.0) {
            return bad(format!(
                "krauss.tau, krauss.b_comfort, krauss.a_max must be positive, got {} {} {}",
                k.tau, k.b_comfort, k.a_max
            ));
        }
        if !(0.0..=1.0).contains(&k.sigma) {
            return bad(format!("krauss.sigma must lie in [0, 1], got {}", k.sigma));
        }

        let g = &self.grid;
        check_cfl(e.v_max, g.dt, g.dx)?;
        let geom = self.geometry()?;
        // The lane drop must fall on a segment boundary so each filter sees
        // a single lane count.
        let seg_len = g.dx * g.cells_per_segment as f64;
        if (e.full_width_len / seg_len).fract().abs() > 1e-9 {
            return bad(format!(
                "the lane drop at {} m does not fall on a segment boundary (segment length {} m)",
                e.full_width_len, seg_len
            ));
        }

        let m = &self.model;
        if !(m.init_free_speed > 0.0 && m.init_jam_density > 0.0) {
            return bad(format!(
                "model.init_free_speed and model.init_jam_density must be positive, got {} {}",
                m.init_free_speed, m.init_jam_density
            ));
        }
        if !(m.capacity_reduction > 0.0 && m.capacity_reduction <= 1.0) {
            return bad(format!(
                "model.capacity_reduction must lie in (0, 1], got {}",
                m.capacity_reduction
            ));
        }

        let d = &self.mdp;
        ActionSet::new(d.accel_min, d.accel_max)?;
        for (name, v) in [
            ("mdp.b_cell", d.b_cell),
            ("mdp.b_end", d.b_end),
            ("mdp.c_timeout", d.c_timeout),
            ("mdp.c_accel", d.c_accel),
        ] {
            if v < 0.0 {
                return bad(format!("{name} must be ≥ 0, got {v}"));
            }
        }

        let a = &self.agent;
        if a.hidden.is_empty() || a.hidden.iter().any(|&h| h == 0) {
            return bad("agent.hidden must list at least one positive layer width".into());
        }
        if !(a.lr > 0.0) {
            return bad(format!("agent.lr must be positive, got {}", a.lr));
        }
        if !(a.gamma >= 0.0 && a.gamma < 1.0) {
            return bad(format!("agent.gamma must lie in [0, 1), got {}", a.gamma));
        }
        if a.batch_size == 0 {
            return bad("agent.batch_size must be positive".into());
        }
        if a.replay_capacity < a.batch_size {
            return bad(format!(
                "agent.replay_capacity ({}) must be at least agent.batch_size ({})",
                a.replay_capacity, a.batch_size
            ));
        }
        if !(0.0..=1.0).contains(&a.eps_greedy_max) {
            return bad(format!("agent.eps_greedy_max must lie in [0, 1], got {}", a.eps_greedy_max));
        }
        if a.sync_period == 0 {
            return bad("agent.sync_period must be positive".into());
        }

        let t = &self.train;
        if t.episodes == 0 || t.max_env_steps == 0 {
            return bad("train.episodes and train.max_env_steps must be positive".into());
        }

        // Exercise the remaining constructors so any leftover
        // inconsistency surfaces here, not mid-run.
        let _ = geom;
        let _ = self.initial_filters();
        Ok(())
    }

    // -- builders -----------------------------------------------------------

    pub fn control_len(&self) -> f64 {
        self.env.full_width_len + self.env.reduced_len
    }

    pub fn geometry(&self) -> Result<RoadGeometry> {
        RoadGeometry::new(self.control_len(), self.grid.dx, self.grid.cells_per_segment)
    }

    /// Aggregate arrival rate in veh/s.
    pub fn inflow_veh_per_s(&self) -> f64 {
        self.env.inflow_veh_per_hour / 3600.0
    }

    pub fn reward_params(&self) -> RewardParams {
        RewardParams {
            b_cell: self.mdp.b_cell,
            b_end: self.mdp.b_end,
            c_timeout: self.mdp.c_timeout,
            c_accel: self.mdp.c_accel,
            dt: self.grid.dt,
            dx: self.grid.dx,
            control_length: self.control_len(),
            platoon_equivalents: self.env.platoon_equivalents,
        }
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            preheat_len: self.env.preheat_len,
            full_width_len: self.env.full_width_len,
            reduced_len: self.env.reduced_len,
            lanes: self.env.lanes,
            dx: self.grid.dx,
            cells_per_segment: self.grid.cells_per_segment,
            dt: self.grid.dt,
            v_max: self.env.v_max,
            inflow: self.inflow_veh_per_s(),
            vehicle_length: self.env.vehicle_length,
            min_gap: self.env.min_gap,
            platoon_entry_time: self.env.platoon_entry_time,
            platoon_length: self.env.platoon_length,
            platoon_equivalents: self.env.platoon_equivalents,
            tau: self.krauss.tau,
            b_comfort: self.krauss.b_comfort,
            sigma: self.krauss.sigma,
            a_max: self.krauss.a_max,
            step_limit: self.env.step_limit,
            merge_zone: self.env.merge_zone,
            reward: self.reward_params(),
        }
    }

    pub fn action_set(&self) -> ActionSet {
        ActionSet::new(self.mdp.accel_min, self.mdp.accel_max)
            .expect("validated configuration has ordered action bounds")
    }

    /// Ceiling for adapted free speeds: the physical bound tightened by
    /// the virtual solver's stability condition on this grid.
    pub fn filter_speed_limit(&self) -> f64 {
        FREE_SPEED_MAX.min(self.grid.dx / (2.0 * self.grid.dt))
    }

    /// One fresh filter per segment. Segments lying past the lane drop
    /// start from a jam density scaled by the remaining lane fraction.
    pub fn initial_filters(&self) -> Vec<SegmentFilter> {
        let geom = self.geometry().expect("validated configuration has a consistent grid");
        let seg_len = self.grid.dx * self.grid.cells_per_segment as f64;
        let v_limit = self.filter_speed_limit();
        let lane_fraction = (self.env.lanes - 1) as f64 / self.env.lanes as f64;
        (0..geom.n_segments)
            .map(|s| {
                let reduced = (s as f64 + 0.5) * seg_len > self.env.full_width_len;
                let r0 = if reduced {
                    self.model.init_jam_density * lane_fraction
                } else {
                    self.model.init_jam_density
                };
                SegmentFilter::new(self.model.init_free_speed, r0, v_limit)
            })
            .collect()
    }

    /// The virtual-step world model at its initial parameters.
    pub fn model_state(&self) -> ModelState {
        ModelState::new(
            self.initial_filters(),
            self.geometry().expect("validated configuration has a consistent grid"),
            self.grid.dt,
            self.env.v_max,
            self.inflow_veh_per_s(),
            self.env.platoon_length,
            self.model.capacity_reduction,
            self.reward_params(),
        )
    }

    pub fn normalizer(&self) -> Normalizer {
        let geom = self.geometry().expect("validated configuration has a consistent grid");
        Normalizer {
            pos_scale: self.control_len(),
            speed_scale: self.env.v_max,
            density_scale: self.model.init_jam_density,
            n_cells: geom.n_cells,
        }
    }

    pub fn eps_schedule(&self) -> EpsSchedule {
        EpsSchedule {
            ramp_steps: self.agent.eps_ramp_steps,
            max_greedy: self.agent.eps_greedy_max,
        }
    }

    /// Layer sizes of the Q-network: state width, hidden widths, actions.
    pub fn net_sizes(&self) -> Vec<usize> {
        let geom = self.geometry().expect("validated configuration has a consistent grid");
        let mut sizes = vec![2 + 2 * geom.n_cells];
        sizes.extend_from_slice(&self.agent.hidden);
        sizes.push(self.action_set().len());
        sizes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn paper_scale_toml() -> String {
        r#"
[run]
seed = 1
out_dir = "out"

[env]
preheat_len = 200.0
full_width_len = 500.0
reduced_len = 300.0
lanes = 3
v_max = 15.0
inflow_veh_per_hour = 3600.0
vehicle_length = 5.0
min_gap = 2.5
platoon_entry_time = 100.0
platoon_length = 30.0
platoon_equivalents = 5.0
step_limit = 300
merge_zone = 100.0

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
hidden = [64, 64]
lr = 0.0001
gamma = 0.99
batch_size = 64
replay_capacity = 300000
eps_ramp_steps = 20000
eps_greedy_max = 0.95
sync_period = 500
planning_steps = 5

[train]
episodes = 300
max_env_steps = 100000
"#
        .to_string()
    }

    fn parse(toml_text: &str) -> RunConfig {
        let cfg: RunConfig = toml::from_str(toml_text).unwrap();
        cfg.validate().unwrap();
        cfg
    }

    #[test]
    fn paper_scale_config_builds_every_object() {
        let cfg = parse(&paper_scale_toml());
        let geom = cfg.geometry().unwrap();
        assert_eq!(geom.n_cells, 16);
        assert_eq!(geom.n_segments, 8);
        assert_eq!(cfg.net_sizes(), vec![34, 64, 64, 9]);
        assert_eq!(cfg.action_set().len(), 9);
        assert_eq!(cfg.inflow_veh_per_s(), 1.0);
        assert_eq!(cfg.filter_speed_limit(), 25.0);
        let filters = cfg.initial_filters();
        assert_eq!(filters.len(), 8);
        // 500 m of full width = 5 segments; the remaining 3 are reduced.
        for (s, f) in filters.iter().enumerate() {
            let r = f.phi[0] / f.phi[1];
            if s < 5 {
                assert!((r - 0.4).abs() < 1e-12, "segment {s}: {r}");
            } else {
                assert!((r - 0.4 * 2.0 / 3.0).abs() < 1e-12, "segment {s}: {r}");
            }
            assert_eq!(f.phi[0], 15.0);
        }
        assert_eq!(cfg.model.capacity_reduction, 1.0); // defaulted
        assert!(!cfg.env.log_trajectories); // defaulted
    }

    #[test]
    fn round_trip_preserves_the_config() {
        let cfg = parse(&paper_scale_toml());
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = paper_scale_toml();
        text.push_str("\n[agent2]\nlr = 1.0\n");
        assert!(toml::from_str::<RunConfig>(&text).is_err());
        let text = paper_scale_toml().replace("b_cell = 10.0", "b_cel = 10.0");
        assert!(toml::from_str::<RunConfig>(&text).is_err());
    }

    #[test]
    fn unstable_discretization_is_rejected() {
        let text = paper_scale_toml().replace("dt = 1.0", "dt = 2.0");
        let cfg: RunConfig = toml::from_str(&text).unwrap();
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("unstable"));
    }

    #[test]
    fn lane_drop_off_segment_boundary_is_rejected() {
        let text = paper_scale_toml()
            .replace("full_width_len = 500.0", "full_width_len = 450.0")
            .replace("reduced_len = 300.0", "reduced_len = 350.0");
        let cfg: RunConfig = toml::from_str(&text).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn speed_beyond_fuel_calibration_is_rejected() {
        let text = paper_scale_toml().replace("v_max = 15.0", "v_max = 20.0");
        let cfg: RunConfig = toml::from_str(&text).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn load_reports_the_offending_path() {
        let err = RunConfig::load(Path::new("/nonexistent/lab.toml")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/lab.toml"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn loads_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lab.toml");
        std::fs::write(&path, paper_scale_toml()).unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.run.seed, 1);
    }
}
