//! First-order macroscopic traffic model on a 1-D cell grid.
//!
//! Densities evolve by vehicle conservation,
//!
//! ```text
//! rho_i(k+1) = rho_i(k) - dt/dx * (F_{i+1/2} - F_{i-1/2}),
//! ```
//!
//! where interface flows are Godunov demand–supply minima over a linear
//! speed law `v(rho) = V (1 - rho/R)` with flux `f(rho) = rho v(rho)`.
//! The scheme is conservative and, under the stability condition
//! `2 V dt <= dx`, obeys a maximum principle: densities stay in `[0, R]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance before an out-of-bound post-step density is treated
/// as a solver error rather than float drift.
pub const DENSITY_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Flux–density relation of one road segment: a downward parabola
/// `f(rho) = V rho (1 - rho/R)` peaking at the critical density `R/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FundamentalDiagram {
    /// Maximal (free-flow) speed V, m/s.
    pub free_speed: f64,
    /// Maximal (jam) density R, veh/m.
    pub jam_density: f64,
}

impl FundamentalDiagram {
    pub fn new(free_speed: f64, jam_density: f64) -> Result<Self> {
        if !(free_speed > 0.0) || !free_speed.is_finite() {
            return Err(Error::ConfigInvalid(format!(
                "fundamental diagram needs free_speed > 0, got {free_speed}"
            )));
        }
        if !(jam_density > 0.0) || !jam_density.is_finite() {
            return Err(Error::ConfigInvalid(format!(
                "fundamental diagram needs jam_density > 0, got {jam_density}"
            )));
        }
        Ok(FundamentalDiagram { free_speed, jam_density })
    }

    /// Density at which flux peaks: exactly `R/2` for the linear speed law.
    pub fn critical_density(&self) -> f64 {
        self.jam_density / 2.0
    }

    /// Peak flux: exactly `V R / 4`.
    pub fn max_flux(&self) -> f64 {
        self.free_speed * self.jam_density / 4.0
    }
}

/// Discretization of the controlled road stretch into equal cells grouped
/// into contiguous, equally sized segments (one parameter set per segment).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadGeometry {
    /// Length of the controlled stretch, m.
    pub control_length: f64,
    /// Cell length, m.
    pub dx: f64,
    /// Number of cells; `n_cells * dx == control_length`.
    pub n_cells: usize,
    /// Cells per segment; segments are contiguous runs of cells.
    pub cells_per_segment: usize,
    /// Number of segments; `n_segments * cells_per_segment == n_cells`.
    pub n_segments: usize,
}

impl RoadGeometry {
    pub fn new(control_length: f64, dx: f64, cells_per_segment: usize) -> Result<Self> {
        if !(control_length > 0.0) || !(dx > 0.0) {
            return Err(Error::ConfigInvalid(format!(
                "geometry needs positive lengths, got control_length={control_length} dx={dx}"
            )));
        }
        let n_cells_f = control_length / dx;
        let n_cells = n_cells_f.round() as usize;
        if n_cells == 0 || (n_cells as f64 * dx - control_length).abs() > 1e-9 {
            return Err(Error::ConfigInvalid(format!(
                "cell length {dx} m does not evenly divide the {control_length} m control stretch"
            )));
        }
        if cells_per_segment == 0 || n_cells % cells_per_segment != 0 {
            return Err(Error::ConfigInvalid(format!(
                "{n_cells} cells cannot be grouped into segments of {cells_per_segment}"
            )));
        }
        Ok(RoadGeometry {
            control_length,
            dx,
            n_cells,
            cells_per_segment,
            n_segments: n_cells / cells_per_segment,
        })
    }

    pub fn segment_of_cell(&self, cell: usize) -> usize {
        debug_assert!(cell < self.n_cells);
        cell / self.cells_per_segment
    }

    /// Cell index containing position `x` (m, measured from the start of the
    /// controlled stretch), or `None` when `x` lies outside it.
    pub fn cell_of_position(&self, x: f64) -> Option<usize> {
        if x < 0.0 || x >= self.control_length {
            return None;
        }
        Some(((x / self.dx) as usize).min(self.n_cells - 1))
    }
}

/// Per-cell densities and mean speeds of the discretized road.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGrid {
    /// veh/m, one entry per cell.
    pub rho: Vec<f64>,
    /// m/s, one entry per cell.
    pub vbar: Vec<f64>,
}

impl CellGrid {
    pub fn uniform(n_cells: usize, rho: f64, vbar: f64) -> Self {
        CellGrid { rho: vec![rho; n_cells], vbar: vec![vbar; n_cells] }
    }

    /// Total vehicle count represented by the grid.
    pub fn total_mass(&self, dx: f64) -> f64 {
        self.rho.iter().sum::<f64>() * dx
    }
}

/// Rigid platoon tracked as an ODE coupled to the density field: a
/// downstream endpoint (front) position, a speed, and a fixed length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlatoonState {
    /// Front (downstream endpoint) position, m.
    pub x_p: f64,
    /// Speed, m/s.
    pub v_p: f64,
    /// Fixed body length, m.
    pub length: f64,
}

// ---------------------------------------------------------------------------
// Pointwise flow operations
// ---------------------------------------------------------------------------

#[inline]
fn assert_density_domain(rho: f64, fd: &FundamentalDiagram) {
    assert!(
        rho.is_finite() && rho >= 0.0 && rho <= fd.jam_density,
        "density {rho} veh/m outside [0, {}]",
        fd.jam_density
    );
}

/// Equilibrium speed `v(rho) = V (1 - rho/R)`.
///
/// Panics if `rho` lies outside `[0, R]`; the solver maintains that
/// invariant, so a violation is a programming error.
pub fn equilibrium_speed(rho: f64, fd: &FundamentalDiagram) -> f64 {
    assert_density_domain(rho, fd);
    fd.free_speed * (1.0 - rho / fd.jam_density)
}

/// Flux `f(rho) = V rho (1 - rho/R)`, veh/s.
pub fn flux(rho: f64, fd: &FundamentalDiagram) -> f64 {
    assert_density_domain(rho, fd);
    fd.free_speed * rho * (1.0 - rho / fd.jam_density)
}

/// Sending capacity of a cell: the flux it can emit downstream.
pub fn demand(rho: f64, fd: &FundamentalDiagram) -> f64 {
    assert_density_domain(rho, fd);
    if rho < fd.critical_density() {
        flux(rho, fd)
    } else {
        fd.max_flux()
    }
}

/// Receiving capacity of a cell: the flux it can absorb from upstream.
pub fn supply(rho: f64, fd: &FundamentalDiagram) -> f64 {
    assert_density_domain(rho, fd);
    if rho < fd.critical_density() {
        fd.max_flux()
    } else {
        flux(rho, fd)
    }
}

/// Godunov interface flow: the minimum of upstream demand and downstream
/// supply, each evaluated on its own side's diagram.
pub fn interface_flux(
    rho_up: f64,
    fd_up: &FundamentalDiagram,
    rho_dn: f64,
    fd_dn: &FundamentalDiagram,
) -> f64 {
    demand(rho_up, fd_up).min(supply(rho_dn, fd_dn))
}

/// Achievable platoon speed given the density just ahead of its front:
/// `min(V_d, v(rho_ahead))`.
pub fn platoon_speed_cap(rho_ahead: f64, v_d: f64, fd: &FundamentalDiagram) -> f64 {
    assert!(
        v_d.is_finite() && v_d >= 0.0 && v_d <= fd.free_speed + 1e-9,
        "desired speed {v_d} outside [0, {}]",
        fd.free_speed
    );
    v_d.min(equilibrium_speed(rho_ahead, fd))
}

/// Stability gate `2 V dt <= dx`; rejects configurations before stepping.
pub fn check_cfl(v_max: f64, dt: f64, dx: f64) -> Result<()> {
    if !(v_max > 0.0 && dt > 0.0 && dx > 0.0) {
        return Err(Error::ConfigInvalid(format!(
            "stability check needs positive arguments, got v_max={v_max} dt={dt} dx={dx}"
        )));
    }
    if 2.0 * v_max * dt <= dx {
        Ok(())
    } else {
        Err(Error::ConfigInvalid(format!(
            "unstable discretization: 2 * {v_max} m/s * {dt} s = {} m exceeds dx = {dx} m",
            2.0 * v_max * dt
        )))
    }
}

// ---------------------------------------------------------------------------
// Density stepping
// ---------------------------------------------------------------------------

enum Boundary {
    /// Upstream flow limited by an external demand (veh/s); downstream
    /// outflow is free (the road empties past the modeled stretch).
    Open { inflow_demand: f64 },
    /// Closed ring, used by conservation tests.
    Periodic,
}

/// Advance densities one step on open boundaries. The upstream boundary
/// flow is `min(inflow_demand, supply(cell 0))`; the downstream boundary
/// flow is `demand(last cell)`.
pub fn step_density(
    grid: &CellGrid,
    inflow_demand: f64,
    dt: f64,
    geom: &RoadGeometry,
    fds: &[FundamentalDiagram],
) -> Result<CellGrid> {
    assert!(inflow_demand >= 0.0, "inflow demand must be non-negative");
    step_impl(grid, Boundary::Open { inflow_demand }, dt, geom, fds, None)
}

/// Like [`step_density`], but additionally caps the flow across one
/// interface (index `i` lies between cells `i-1` and `i`; index `n_cells`
/// is the downstream boundary). Used to model a capacity restriction at a
/// slow vehicle's position. A cap can only lower fluxes, so boundedness
/// and conservation are unaffected.
pub fn step_density_with_interface_cap(
    grid: &CellGrid,
    inflow_demand: f64,
    dt: f64,
    geom: &RoadGeometry,
    fds: &[FundamentalDiagram],
    interface: usize,
    cap: f64,
) -> Result<CellGrid> {
    assert!(inflow_demand >= 0.0, "inflow demand must be non-negative");
    assert!(cap >= 0.0, "flux cap must be non-negative");
    step_impl(grid, Boundary::Open { inflow_demand }, dt, geom, fds, Some((interface, cap)))
}

/// Advance densities one step on a closed ring (test-only mode: total mass
/// is exactly conserved up to float rounding).
pub fn step_density_ring(
    grid: &CellGrid,
    dt: f64,
    geom: &RoadGeometry,
    fds: &[FundamentalDiagram],
) -> Result<CellGrid> {
    step_impl(grid, Boundary::Periodic, dt, geom, fds, None)
}

fn step_impl(
    grid: &CellGrid,
    boundary: Boundary,
    dt: f64,
    geom: &RoadGeometry,
    fds: &[FundamentalDiagram],
    flux_cap: Option<(usize, f64)>,
) -> Result<CellGrid> {
    let n = geom.n_cells;
    assert_eq!(grid.rho.len(), n, "grid/geometry cell count mismatch");
    assert_eq!(fds.len(), geom.n_segments, "one diagram per segment required");
    let fd_of = |i: usize| &fds[geom.segment_of_cell(i)];
    for fd in fds {
        debug_assert!(2.0 * fd.free_speed * dt <= geom.dx + 1e-12, "stability condition violated");
    }

    // fluxes[j] flows across the interface between cell j-1 and cell j.
    let mut fluxes = vec![0.0; n + 1];
    for j in 1..n {
        fluxes[j] = interface_flux(grid.rho[j - 1], fd_of(j - 1), grid.rho[j], fd_of(j));
    }
    match boundary {
        Boundary::Open { inflow_demand } => {
            fluxes[0] = inflow_demand.min(supply(grid.rho[0], fd_of(0)));
            fluxes[n] = demand(grid.rho[n - 1], fd_of(n - 1));
        }
        Boundary::Periodic => {
            let wrap = interface_flux(grid.rho[n - 1], fd_of(n - 1), grid.rho[0], fd_of(0));
            fluxes[0] = wrap;
            fluxes[n] = wrap;
        }
    }
    if let Some((j, cap)) = flux_cap {
        assert!(j <= n, "capped interface {j} out of range 0..={n}");
        fluxes[j] = fluxes[j].min(cap);
    }

    let mut rho = Vec::with_capacity(n);
    let mut vbar = Vec::with_capacity(n);
    let r = dt / geom.dx;
    for i in 0..n {
        let fd = fd_of(i);
        let mut value = grid.rho[i] - r * (fluxes[i + 1] - fluxes[i]);
        if value < -DENSITY_TOL || value > fd.jam_density + DENSITY_TOL {
            return Err(Error::State(format!(
                "density step left cell {i} at {value} veh/m, outside [0, {}]",
                fd.jam_density
            )));
        }
        value = value.clamp(0.0, fd.jam_density);
        vbar.push(equilibrium_speed(value, fd));
        rho.push(value);
    }
    Ok(CellGrid { rho, vbar })
}
