//! Adaptive world model: per-segment recursive least-squares filters over
//! the speed-law parameters, and the one-step predictor built on them.
//!
//! Each road segment carries a two-entry parameter state
//! `phi = [V, V/R]` and a 2×2 covariance `P`. An observation pair
//! (density `rho`, mean speed `v`) enters through the regressor
//! `h = [1, -rho]`, so the predicted cell speed is the inner product
//! `h^T phi = V (1 - rho/R)`. With identity dynamics, no process noise,
//! and unit measurement weight, the filter update reduces to
//!
//! ```text
//! K = P h / (1 + h^T P h),   P' = (I - K h^T) P,
//! phi' = phi + K (v - h^T phi),
//! ```
//!
//! which is exactly recursive least squares: after any observation
//! sequence, `phi` minimizes the squared residuals plus a `P0^{-1}`-
//! weighted pull toward the initial parameters.
//!
//! The predictor advances a raw decision state one step: platoon
//! kinematics (with a congestion cap from the density just ahead), then a
//! conservative density step under the adapted diagrams, then cell speeds
//! from the adapted speed law.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::macro_model::{
    self, platoon_speed_cap, CellGrid, FundamentalDiagram, PlatoonState, RoadGeometry,
};
use crate::mdp::{reward_model_side, RewardParams, StateVec};

/// Hard floor for the adapted free speed, m/s.
pub const FREE_SPEED_MIN: f64 = 0.5;
/// Hard ceiling for the adapted free speed before stability tightening, m/s.
pub const FREE_SPEED_MAX: f64 = 40.0;
/// Bounds for the implied jam density, veh/m.
pub const JAM_DENSITY_MIN: f64 = 0.01;
pub const JAM_DENSITY_MAX: f64 = 2.0;

// ---------------------------------------------------------------------------
// Filter
// ---------------------------------------------------------------------------

/// Parameter filter of one road segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFilter {
    /// `[V, V/R]`.
    pub phi: [f64; 2],
    /// 2×2 covariance, kept symmetric positive semi-definite.
    pub p: [[f64; 2]; 2],
    /// Upper clamp for `phi[0]`: the smaller of [`FREE_SPEED_MAX`] and the
    /// speed admitted by the solver's stability condition for the grid the
    /// filter feeds (`dx / (2 dt)`), so adapted parameters can never make
    /// the virtual density step unstable.
    pub v_limit: f64,
}

impl SegmentFilter {
    /// Fresh filter at `V = free_speed`, `R = jam_density`, `P = I`. The
    /// free speed is capped at `v_limit` up front (preserving `R`) so even
    /// the initial parameters respect the stability bound.
    pub fn new(free_speed: f64, jam_density: f64, v_limit: f64) -> Self {
        assert!(free_speed > 0.0 && jam_density > 0.0 && v_limit >= FREE_SPEED_MIN);
        let v = free_speed.min(v_limit);
        SegmentFilter { phi: [v, v / jam_density], p: [[1.0, 0.0], [0.0, 1.0]], v_limit }
    }

    /// Speed law currently implied by the parameters.
    pub fn implied_diagram(&self) -> FundamentalDiagram {
        FundamentalDiagram { free_speed: self.phi[0], jam_density: self.phi[0] / self.phi[1] }
    }
}

/// One recursive least-squares update from an observed (density, speed)
/// pair. Returns the updated filter; parameters are clamped to physical
/// and stability bounds afterwards.
pub fn rls_update(filter: &SegmentFilter, rho_obs: f64, v_obs: f64) -> SegmentFilter {
    assert!(rho_obs.is_finite() && rho_obs >= 0.0, "bad density observation {rho_obs}");
    assert!(v_obs.is_finite(), "bad speed observation {v_obs}");
    let [[p00, p01], [p10, p11]] = filter.p;
    let rho = rho_obs;

    // h = [1, -rho]
    let ph = [p00 - p01 * rho, p10 - p11 * rho];
    let hph = ph[0] - rho * ph[1];
    let denom = 1.0 + hph;
    let k = [ph[0] / denom, ph[1] / denom];

    // P' = (I - K h^T) P, then symmetrized against float drift.
    let htp = [p00 - rho * p10, p01 - rho * p11];
    let mut p = [
        [p00 - k[0] * htp[0], p01 - k[0] * htp[1]],
        [p10 - k[1] * htp[0], p11 - k[1] * htp[1]],
    ];
    let off = 0.5 * (p[0][1] + p[1][0]);
    p[0][1] = off;
    p[1][0] = off;

    let innovation = v_obs - (filter.phi[0] - filter.phi[1] * rho);
    let mut phi = [filter.phi[0] + k[0] * innovation, filter.phi[1] + k[1] * innovation];
    phi[0] = phi[0].clamp(FREE_SPEED_MIN, filter.v_limit);
    phi[1] = phi[1].clamp(phi[0] / JAM_DENSITY_MAX, phi[0] / JAM_DENSITY_MIN);

    SegmentFilter { phi, p, v_limit: filter.v_limit }
}

/// Mean speed the filter predicts for a cell at density `rho`, clamped to
/// `[0, V]`.
pub fn predict_cell_speed(filter: &SegmentFilter, rho: f64) -> f64 {
    assert!(rho.is_finite() && rho >= 0.0, "bad density {rho}");
    (filter.phi[0] - filter.phi[1] * rho).clamp(0.0, filter.phi[0])
}

// ---------------------------------------------------------------------------
// Predictor
// ---------------------------------------------------------------------------

/// Advance the platoon one step under constant acceleration `a`, clamping
/// speed to `[0, v_max]`. When the clamp binds mid-step, the position
/// integrates the two kinematic phases separately.
pub fn predict_platoon(p: &PlatoonState, a: f64, dt: f64, v_max: f64) -> PlatoonState {
    assert!(dt > 0.0, "time step must be positive");
    let v0 = p.v_p;
    let v_raw = v0 + a * dt;
    let v1 = v_raw.clamp(0.0, v_max);
    let advance = if v_raw == v1 {
        v0 * dt + 0.5 * a * dt * dt
    } else {
        let t_star = ((v1 - v0) / a).clamp(0.0, dt);
        v0 * t_star + 0.5 * a * t_star * t_star + v1 * (dt - t_star)
    };
    PlatoonState { x_p: p.x_p + advance, v_p: v1, length: p.length }
}

/// The full adapted world model: one filter per segment plus everything
/// the one-step predictor needs.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub filters: Vec<SegmentFilter>,
    pub geom: RoadGeometry,
    pub dt: f64,
    pub v_max: f64,
    /// Demand offered at the upstream boundary during virtual steps, veh/s
    /// (the configured nominal inflow).
    pub inflow_demand: f64,
    pub platoon_length: f64,
    /// Optional bottleneck factor at the platoon's position; 1.0 disables.
    pub capacity_reduction: f64,
    pub reward: RewardParams,
}

impl ModelState {
    pub fn new(
        filters: Vec<SegmentFilter>,
        geom: RoadGeometry,
        dt: f64,
        v_max: f64,
        inflow_demand: f64,
        platoon_length: f64,
        capacity_reduction: f64,
        reward: RewardParams,
    ) -> Self {
        assert_eq!(filters.len(), geom.n_segments, "one filter per segment required");
        assert!(capacity_reduction > 0.0 && capacity_reduction <= 1.0);
        ModelState {
            filters,
            geom,
            dt,
            v_max,
            inflow_demand,
            platoon_length,
            capacity_reduction,
            reward,
        }
    }

    /// Feed every occupied cell of a real observation to its segment's
    /// filter. Empty cells have no defined mean speed and are skipped.
    pub fn adapt_to_observation(&mut self, obs: &StateVec) {
        assert_eq!(obs.n_cells(), self.geom.n_cells);
        for i in 0..obs.n_cells() {
            if obs.rho[i] > 0.0 {
                let seg = self.geom.segment_of_cell(i);
                self.filters[seg] = rls_update(&self.filters[seg], obs.rho[i], obs.vbar[i]);
            }
        }
    }
}

/// One virtual environment step: returns the predicted next state and the
/// model-side reward. Pure — identical inputs give bit-identical outputs.
pub fn one_step_predict(model: &ModelState, s: &StateVec, a: f64) -> (StateVec, f64) {
    let geom = &model.geom;
    let n = geom.n_cells;
    assert_eq!(s.n_cells(), n, "state does not match the model geometry");
    let fds: Vec<FundamentalDiagram> =
        model.filters.iter().map(SegmentFilter::implied_diagram).collect();

    // 1. Platoon kinematics, then the congestion cap from the density just
    //    ahead of the front.
    let plat = PlatoonState { x_p: s.x_p, v_p: s.v_p, length: model.platoon_length };
    let mut next_plat = predict_platoon(&plat, a, model.dt, model.v_max);
    let platoon_cell = geom.cell_of_position(s.x_p);
    if let Some(c) = platoon_cell {
        let fd = &fds[geom.segment_of_cell(c)];
        let rho_ahead = s.rho[c].clamp(0.0, fd.jam_density);
        let v_d = next_plat.v_p.min(fd.free_speed);
        next_plat.v_p = platoon_speed_cap(rho_ahead, v_d, fd);
    }

    // 2. Conservative density step under the adapted diagrams. Observed
    //    densities can exceed an adapted jam density, so they are clamped
    //    into the diagram's domain first.
    let mut rho = Vec::with_capacity(n);
    for i in 0..n {
        let fd = &fds[geom.segment_of_cell(i)];
        rho.push(s.rho[i].clamp(0.0, fd.jam_density));
    }
    let grid = CellGrid { rho, vbar: s.vbar.clone() };
    let stepped = match platoon_cell {
        Some(c) if model.capacity_reduction < 1.0 => {
            let cap = model.capacity_reduction * fds[geom.segment_of_cell(c)].max_flux();
            macro_model::step_density_with_interface_cap(
                &grid,
                model.inflow_demand,
                model.dt,
                geom,
                &fds,
                c + 1,
                cap,
            )
        }
        _ => macro_model::step_density(&grid, model.inflow_demand, model.dt, geom, &fds),
    }
    .expect("density step cannot fail on clamped inputs under the stability-bounded diagrams");

    // 3. Cell speeds from the adapted speed law.
    let vbar: Vec<f64> = (0..n)
        .map(|i| predict_cell_speed(&model.filters[geom.segment_of_cell(i)], stepped.rho[i]))
        .collect();

    let s_next = StateVec { x_p: next_plat.x_p, v_p: next_plat.v_p, rho: stepped.rho, vbar };
    let r = reward_model_side(s, a, &s_next, &model.reward).total;
    (s_next, r)
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

/// Write all segment filters as a line-oriented text checkpoint. Floats
/// are printed in shortest round-trip form, so save → load is lossless.
pub fn save_filters(path: &Path, filters: &[SegmentFilter]) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "model v1");
    let _ = writeln!(out, "segments {}", filters.len());
    for (i, f) in filters.iter().enumerate() {
        let _ = writeln!(
            out,
            "filter {i} {} {} {} {} {} {}",
            f.phi[0], f.phi[1], f.p[0][0], f.p[0][1], f.p[1][0], f.p[1][1]
        );
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Load filters saved by [`save_filters`]. The stability clamp `v_limit`
/// is not persisted; the caller supplies it from the active configuration.
pub fn load_filters(path: &Path, v_limit: f64) -> Result<Vec<SegmentFilter>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("model v1") => {}
        other => {
            return Err(Error::Checkpoint(format!(
                "expected header 'model v1', found {other:?} in {}",
                path.display()
            )))
        }
    }
    let n: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("segments "))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Checkpoint("missing segment count".into()))?;
    let mut filters = Vec::with_capacity(n);
    for (i, line) in lines.enumerate() {
        let mut parts = line.split_whitespace();
        if parts.next() != Some("filter") {
            return Err(Error::Checkpoint(format!("bad filter line: {line}")));
        }
        let idx: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Checkpoint(format!("bad filter index on line: {line}")))?;
        if idx != i {
            return Err(Error::Checkpoint(format!("filter lines out of order at {idx}")));
        }
        let mut vals = [0.0f64; 6];
        for v in vals.iter_mut() {
            *v = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("short filter line: {line}")))?;
        }
        if parts.next().is_some() {
            return Err(Error::Checkpoint(format!("trailing fields on line: {line}")));
        }
        filters.push(SegmentFilter {
            phi: [vals[0], vals[1]],
            p: [[vals[2], vals[3]], [vals[4], vals[5]]],
            v_limit,
        });
    }
    if filters.len() != n {
        return Err(Error::Checkpoint(format!(
            "checkpoint declares {n} segments but contains {}",
            filters.len()
        )));
    }
    Ok(filters)
}
