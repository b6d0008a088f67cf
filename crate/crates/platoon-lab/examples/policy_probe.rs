//! Scratch probe: paired fuel of hand-crafted platoon policies vs the
//! car-following baseline. Not part of the shipped tool.

use platoon_lab::config::RunConfig;
use platoon_lab::micro_env::MicroEnv;

fn run_policy(cfg: &RunConfig, seed: u64, policy: &str) -> (f64, f64, u64, bool) {
    let env_cfg = cfg.env_config();
    let (mut env, mut s) = MicroEnv::start(env_cfg, seed).unwrap();
    let dt = cfg.grid.dt;
    let n = s.rho.len();
    let dx = cfg.grid.dx;
    let detail = std::env::var("PROBE_DETAIL").is_ok();
    let mut fuel = 0.0;
    let mut reward = 0.0;
    let mut steps = 0u64;
    let mut stop_steps = 0u64;
    let mut slow_steps = 0u64;
    let mut cutins = 0u64;
    let mut prev_lane: std::collections::HashMap<u64, usize> = std::collections::HashMap::new();
    loop {
        if detail {
            let rows = env.snapshot();
            let plat = *rows.iter().find(|r| r.is_platoon).unwrap();
            for r in &rows {
                if !r.is_platoon
                    && r.lane == 0
                    && prev_lane.get(&r.id) == Some(&1)
                    && r.x > plat.x
                    && r.x < plat.x + 60.0
                {
                    cutins += 1;
                }
            }
            prev_lane = rows.iter().filter(|r| !r.is_platoon).map(|r| (r.id, r.lane)).collect();
            if plat.v < 1.0 {
                stop_steps += 1;
            } else if plat.v < 6.0 {
                slow_steps += 1;
            }
        }
        let (s_next, rb, done) = if policy == "krauss" {
            let (sn, rb, done, _) = env.step_baseline();
            (sn, rb, done)
        } else {
            let cell = ((s.x_p / dx) as usize).min(n - 1);
            let target = match policy {
                "full" => 15.0,
                "hold7" => 7.0,
                "hold10" => 10.0,
                "hold12" => 12.0,
                "look2" => {
                    let a = (cell + 1).min(n - 1);
                    let b = (cell + 2).min(n - 1);
                    (0.5 * (s.vbar[a] + s.vbar[b])).max(2.0)
                }
                "look3" => {
                    let mut m = f64::INFINITY;
                    for k in 1..=3 {
                        m = m.min(s.vbar[(cell + k).min(n - 1)]);
                    }
                    m.max(2.0)
                }
                "look2soft" => {
                    let a = (cell + 1).min(n - 1);
                    let b = (cell + 2).min(n - 1);
                    (0.5 * (s.vbar[a] + s.vbar[b]) + 2.0).max(3.0)
                }
                "creep" => {
                    let q = s.vbar[(cell + 1).min(n - 1)].min(s.vbar[(cell + 2).min(n - 1)]);
                    if q < 4.0 {
                        if s.v_p <= q + 1.0 { 0.0 } else { q }
                    } else {
                        15.0
                    }
                }
                "creep6" => {
                    let q = s.vbar[(cell + 1).min(n - 1)].min(s.vbar[(cell + 2).min(n - 1)]);
                    if q < 6.0 {
                        if s.v_p <= q + 1.0 { 0.0 } else { q }
                    } else {
                        15.0
                    }
                }
                _ => panic!("unknown policy"),
            };
            let a = ((target - s.v_p) / dt).clamp(-5.0, 3.0);
            // snap to the discrete action grid the agent would use
            let a = a.round().clamp(-5.0, 3.0);
            env.step_control(a)
        };
        fuel += -rb.r_fc * dt;
        reward += rb.total;
        steps += 1;
        s = s_next;
        if done {
            if detail {
                eprintln!(
                    "detail {policy} seed {seed}: steps {steps} stop {stop_steps} slow {slow_steps} cutins {cutins}"
                );
            }
            return (fuel, reward, steps, env.timed_out());
        }
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let cfg = RunConfig::load(std::path::Path::new(&args[1])).unwrap();
    let seeds: Vec<u64> = args[2].split(',').map(|s| s.parse().unwrap()).collect();
    let policies =
        ["krauss", "full", "hold7", "hold10", "hold12", "look2", "look3", "look2soft", "creep", "creep6"];
    println!("{:>10} {:>6} {:>10} {:>12} {:>6} {:>3}", "policy", "seed", "fuel", "reward", "steps", "to");
    for p in policies {
        let mut tot = 0.0;
        for &seed in &seeds {
            let (fuel, reward, steps, to) = run_policy(&cfg, seed, p);
            tot += fuel;
            println!("{p:>10} {seed:>6} {fuel:>10.1} {reward:>12.1} {steps:>6} {:>3}", if to { "T" } else { "." });
        }
        println!("{p:>10}   mean {:>10.1}", tot / seeds.len() as f64);
    }
}
