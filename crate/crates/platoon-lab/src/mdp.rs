//! Decision-process plumbing: state encoding, the discrete acceleration
//! action set, and the reward function.
//!
//! The reward is a sum of four terms: a fuel penalty (from a calibrated
//! sixth-order consumption polynomial), a progress bonus for entering new
//! cells or finishing, a position-scaled timeout penalty, and an
//! acceleration penalty. Two fuel variants exist: the environment side
//! charges individual vehicles, the model side charges density mass —
//! the two coincide when every vehicle in a cell shares one speed.

use crate::macro_model::{CellGrid, PlatoonState};

// ---------------------------------------------------------------------------
// State encoding
// ---------------------------------------------------------------------------

/// Raw (unnormalized) decision state: platoon front position (m, measured
/// from the start of the controlled stretch), platoon speed, then per-cell
/// densities (veh/m) and mean speeds (m/s).
#[derive(Debug, Clone, PartialEq)]
pub struct StateVec {
    pub x_p: f64,
    pub v_p: f64,
    pub rho: Vec<f64>,
    pub vbar: Vec<f64>,
}

impl StateVec {
    pub fn n_cells(&self) -> usize {
        debug_assert_eq!(self.rho.len(), self.vbar.len());
        self.rho.len()
    }

    /// Total number of entries: 2 + 2 * n_cells.
    pub fn dim(&self) -> usize {
        2 + 2 * self.n_cells()
    }

    /// Flat layout `[x_p, v_p, rho_1.., vbar_1..]`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.push(self.x_p);
        out.push(self.v_p);
        out.extend_from_slice(&self.rho);
        out.extend_from_slice(&self.vbar);
        out
    }

    /// Inverse of [`StateVec::flatten`]. Panics on a malformed slice.
    pub fn from_flat(flat: &[f64], n_cells: usize) -> StateVec {
        assert_eq!(flat.len(), 2 + 2 * n_cells, "flat state has wrong length");
        assert!(flat.iter().all(|x| x.is_finite()), "flat state has non-finite entries");
        StateVec {
            x_p: flat[0],
            v_p: flat[1],
            rho: flat[2..2 + n_cells].to_vec(),
            vbar: flat[2 + n_cells..].to_vec(),
        }
    }
}

/// Assemble the decision state from the platoon (position already relative
/// to the controlled stretch) and the cell grid.
pub fn encode_state(platoon: &PlatoonState, cells: &CellGrid) -> StateVec {
    assert_eq!(cells.rho.len(), cells.vbar.len(), "cell grid is ragged");
    StateVec {
        x_p: platoon.x_p,
        v_p: platoon.v_p,
        rho: cells.rho.clone(),
        vbar: cells.vbar.clone(),
    }
}

// ---------------------------------------------------------------------------
// Actions
// ---------------------------------------------------------------------------

/// Integer accelerations `{min, min+1, .., max}` m/s², indexed from 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionSet {
    min: i32,
    max: i32,
}

impl ActionSet {
    pub fn new(min: i32, max: i32) -> crate::error::Result<Self> {
        if min >= max {
            return Err(crate::error::Error::ConfigInvalid(format!(
                "action bounds must satisfy min < max, got {min}..{max}"
            )));
        }
        Ok(ActionSet { min, max })
    }

    pub fn len(&self) -> usize {
        (self.max - self.min) as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Acceleration value (m/s²) of action index `i`. Panics out of range.
    pub fn index_to_action(&self, i: usize) -> f64 {
        assert!(i < self.len(), "action index {i} out of range 0..{}", self.len());
        (self.min + i as i32) as f64
    }

    /// Index of an integer acceleration value. Panics if not in the set.
    pub fn action_to_index(&self, a: i32) -> usize {
        assert!(a >= self.min && a <= self.max, "acceleration {a} not in {}..{}", self.min, self.max);
        (a - self.min) as usize
    }
}

// ---------------------------------------------------------------------------
// Fuel model
// ---------------------------------------------------------------------------

/// Average fuel consumption rate (L/s) of one vehicle travelling at `v` m/s.
///
/// Calibrated sixth-order polynomial; valid for speeds in `[0, 15]` m/s.
/// Note the constant term: the model charges 0.99 L/s even at standstill,
/// which is kept verbatim from the calibration source.
pub fn fuel_rate(v: f64) -> f64 {
    assert!(
        v.is_finite() && v >= 0.0 && v <= 15.0 + 1e-9,
        "fuel polynomial evaluated outside its calibrated range: {v} m/s"
    );
    // Coefficients for v^6 .. v^0.
    ((((((5.7e-12 * v - 3.6e-9) * v + 7.6e-7) * v - 6.1e-5) * v + 1.9e-3) * v + 1.6e-2) * v)
        + 0.99
}

// ---------------------------------------------------------------------------
// Reward
// ---------------------------------------------------------------------------

/// Constants and geometry needed by the reward terms.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardParams {
    /// Bonus for entering the next cell.
    pub b_cell: f64,
    /// Bonus for reaching the end of the controlled stretch.
    pub b_end: f64,
    /// Scale of the timeout penalty (charged once, scaled by the distance
    /// still to cover).
    pub c_timeout: f64,
    /// Per-unit acceleration penalty.
    pub c_accel: f64,
    /// Step length, s.
    pub dt: f64,
    /// Cell length, m.
    pub dx: f64,
    /// Length of the controlled stretch, m.
    pub control_length: f64,
    /// Vehicle-equivalent count of the platoon for fuel charging.
    pub platoon_equivalents: f64,
}

/// One step's reward, split into its four terms.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct RewardBreakdown {
    pub r_fc: f64,
    pub r_bonus: f64,
    pub r_ot: f64,
    pub r_acc: f64,
    pub total: f64,
}

/// Progress bonus for moving from `prev_x` to `next_x`: `b_cell` per
/// interior cell boundary crossed plus `b_end` on reaching the end.
fn progress_bonus(prev_x: f64, next_x: f64, p: &RewardParams) -> f64 {
    if next_x <= prev_x {
        return 0.0;
    }
    let mut bonus = 0.0;
    let last_interior = (p.control_length / p.dx).round() as i64 - 1;
    let mut j = (prev_x / p.dx).floor() as i64 + 1;
    while (j as f64) * p.dx <= next_x {
        if j >= 1 && j <= last_interior && (j as f64) * p.dx > prev_x {
            bonus += p.b_cell;
        }
        j += 1;
    }
    if prev_x < p.control_length && next_x >= p.control_length {
        bonus += p.b_end;
    }
    bonus
}

fn assemble(
    prev_x: f64,
    next_x: f64,
    action: f64,
    fuel_l_per_s: f64,
    timed_out: bool,
    p: &RewardParams,
) -> RewardBreakdown {
    let r_fc = -fuel_l_per_s * p.dt;
    let r_bonus = progress_bonus(prev_x, next_x, p);
    let r_ot = if timed_out {
        let remaining = (p.control_length - next_x.clamp(0.0, p.control_length)).max(0.0);
        -p.c_timeout * remaining / p.control_length
    } else {
        0.0
    };
    let r_acc = -p.c_accel * action.abs();
    RewardBreakdown { r_fc, r_bonus, r_ot, r_acc, total: r_fc + r_bonus + r_ot + r_acc }
}

/// Environment-side reward: fuel charged per actual vehicle inside the
/// controlled stretch, with the platoon contributing its vehicle
/// equivalents at its own speed (pass `None` once the platoon has left).
pub fn reward_env_side(
    prev_x_p: f64,
    next_x_p: f64,
    action: f64,
    vehicle_speeds: &[f64],
    platoon_speed: Option<f64>,
    timed_out: bool,
    p: &RewardParams,
) -> RewardBreakdown {
    let mut fuel = vehicle_speeds.iter().map(|&v| fuel_rate(v)).sum::<f64>();
    if let Some(v_p) = platoon_speed {
        fuel += p.platoon_equivalents * fuel_rate(v_p);
    }
    assemble(prev_x_p, next_x_p, action, fuel, timed_out, p)
}

/// Model-side reward: fuel charged per unit of density mass, since the
/// predictor carries no individual vehicles. Timeouts never fire here —
/// a one-step prediction has no episode clock.
pub fn reward_model_side(
    s: &StateVec,
    action: f64,
    s_next: &StateVec,
    p: &RewardParams,
) -> RewardBreakdown {
    let mut fuel = 0.0;
    for (&rho, &vbar) in s_next.rho.iter().zip(&s_next.vbar) {
        fuel += rho * p.dx * fuel_rate(vbar.clamp(0.0, 15.0));
    }
    if s.x_p < p.control_length {
        fuel += p.platoon_equivalents * fuel_rate(s_next.v_p.clamp(0.0, 15.0));
    }
    assemble(s.x_p, s_next.x_p, action, fuel, false, p)
}
