//! Scratch probe: per-cell one-step density error of the adapted
//! predictor along a driven rollout. Not part of the shipped artifact.

use platoon_lab::adaptive_model::one_step_predict;
use platoon_lab::config::RunConfig;
use platoon_lab::micro_env::MicroEnv;
use platoon_lab::seeding::stream_seed;
use std::path::Path;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let cfg = RunConfig::load(Path::new(&args[1])).unwrap();
    let base_seed: u64 = args[2].parse().unwrap();
    let max_steps: u64 = args[3].parse().unwrap();

    let mut model = cfg.model_state();
    let env_cfg = cfg.env_config();
    let dx = cfg.grid.dx;
    let n = cfg.geometry().unwrap().n_cells;
    let mut cell_err = vec![0.0f64; n];
    let mut plat_cell_err = 0.0; // error in the platoon's own cell
    let mut step = 0u64;
    let mut episode = 0u64;

    while step < max_steps {
        let env_seed = stream_seed(base_seed, &format!("env.episode.{episode}"));
        let (mut env, mut s) = MicroEnv::start(env_cfg.clone(), env_seed).unwrap();
        episode += 1;
        loop {
            let (s_next, _rb, done, implied_a) = env.step_baseline();
            let (pred, _r) = one_step_predict(&model, &s, implied_a);
            let cell = ((s.x_p / dx) as usize).min(n - 1);
            for i in 0..n {
                let e = (pred.rho[i] - s_next.rho[i]).abs() * dx;
                cell_err[i] += e;
                if i == cell {
                    plat_cell_err += e;
                }
            }
            model.adapt_to_observation(&s_next);
            s = s_next;
            step += 1;
            if step >= max_steps || done {
                break;
            }
        }
    }
    let sf = step as f64;
    println!("per-cell mean |err| veh over {step} steps:");
    for (i, e) in cell_err.iter().enumerate() {
        println!("  cell {i}: {:.3}", e / sf);
    }
    println!("mean over cells: {:.4}", cell_err.iter().sum::<f64>() / sf / n as f64);
    println!("platoon-cell share: {:.4}", plat_cell_err / sf);
}
