//! Scratch probe: how the open outflow boundary perturbs a stationary
//! interface-aligned shock. Not part of the shipped artifact.

use platoon_lab::macro_model::{flux, step_density, CellGrid, FundamentalDiagram, RoadGeometry};

fn main() {
    let fd = FundamentalDiagram::new(15.0, 0.4).unwrap();
    let dx = 50.0;
    let geom = RoadGeometry::new(3000.0, dx, 1).unwrap();
    let fds = vec![fd; geom.n_segments];
    let mut grid = CellGrid::uniform(geom.n_cells, 0.0, 0.0);
    for i in 0..geom.n_cells {
        let c = (i as f64 + 0.5) * dx;
        grid.rho[i] = if c < 1500.0 { 0.1 } else { 0.3 };
    }
    let rho0 = grid.rho.clone();
    let dt = dx / 30.0;
    let inflow = flux(0.1, &fd);
    for step in 0..90 {
        grid = step_density(&grid, inflow, dt, &geom, &fds).unwrap();
        if step % 30 == 29 {
            let diffs: Vec<(usize, f64)> = grid
                .rho
                .iter()
                .zip(&rho0)
                .enumerate()
                .filter(|(_, (a, b))| (*a - *b).abs() > 1e-12)
                .map(|(i, (a, b))| (i, a - b))
                .collect();
            println!(
                "t={:5.1}: {} cells changed; first five {:?}",
                (step + 1) as f64 * dt,
                diffs.len(),
                &diffs[..diffs.len().min(5)]
            );
        }
    }
}
