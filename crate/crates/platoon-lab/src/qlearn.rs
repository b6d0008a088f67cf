//! Q-function machinery: a small fully connected network with hand-rolled
//! backpropagation, an Adam optimizer, an experience replay ring, and the
//! ε-greedy exploration schedule.
//!
//! The network maps a normalized state vector to one Q-value per discrete
//! action. Updates minimize the mean squared one-step temporal-difference
//! error against a periodically synchronized frozen copy of the network:
//!
//! ```text
//! L = 1/B * sum_i ( Q(s_i, a_i) - y_i )²,
//! y_i = r_i                         if the transition ended the episode,
//!       r_i + gamma * max_a Q'(s'_i, a)   otherwise.
//! ```

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

/// Fully connected network: rectified-linear hidden layers, identity
/// output. `weights[l]` is row-major `sizes[l+1] × sizes[l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl QNetwork {
    /// Glorot-uniform weights (`±sqrt(6 / (fan_in + fan_out))`), zero
    /// biases. Draw order is fixed: layer by layer, row-major.
    pub fn xavier(sizes: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(sizes.len() >= 2, "a network needs at least input and output layers");
        assert!(sizes.iter().all(|&s| s > 0), "zero-width layer");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        QNetwork { sizes: sizes.to_vec(), weights, biases }
    }

    pub fn n_inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Q-values for one input.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).pop().unwrap()
    }

    /// Activations of every layer (input first, output last); hidden
    /// activations are post-rectification, which is all backprop needs
    /// since `relu'(z) = [a > 0]` once `a = relu(z)`.
    fn forward_cached(&self, x: &[f64]) -> Vec<Vec<f64>> {
        assert_eq!(x.len(), self.n_inputs(), "input width mismatch");
        let last = self.weights.len() - 1;
        let mut acts = vec![x.to_vec()];
        for l in 0..self.weights.len() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let prev = &acts[l];
            let mut a = Vec::with_capacity(n_out);
            for i in 0..n_out {
                let row = &self.weights[l][i * n_in..(i + 1) * n_in];
                let mut z = self.biases[l][i];
                for (w, p) in row.iter().zip(prev) {
                    z += w * p;
                }
                a.push(if l < last { z.max(0.0) } else { z });
            }
            acts.push(a);
        }
        acts
    }
}

/// Gradient (or first/second moment) storage shaped like a [`QNetwork`].
#[derive(Debug, Clone)]
pub struct Grads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(net: &QNetwork) -> Self {
        Grads {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }
}

/// One replay sample, already normalized for network input.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub s: Vec<f64>,
    pub a: usize,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}

/// Mean squared TD error of a batch and its gradient with respect to the
/// online network's parameters (the frozen target network provides the
/// bootstrap values and receives no gradient).
pub fn loss_and_grads(
    net: &QNetwork,
    target: &QNetwork,
    batch: &[BatchItem],
    gamma: f64,
) -> (f64, Grads) {
    assert!(!batch.is_empty(), "empty batch");
    assert_eq!(net.sizes, target.sizes, "online/target architecture mismatch");
    let mut grads = Grads::zeros_like(net);
    let mut loss = 0.0;
    let inv_b = 1.0 / batch.len() as f64;

    for item in batch {
        let acts = net.forward_cached(&item.s);
        let q = acts.last().unwrap();
        assert!(item.a < q.len(), "action index out of range");
        let y = if item.done {
            item.r
        } else {
            let qn = target.forward(&item.s_next);
            item.r + gamma * qn.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        };
        let delta = q[item.a] - y;
        loss += delta * delta * inv_b;

        // Backward pass: d(loss)/d(output_j) is nonzero only at the taken
        // action.
        let mut d = vec![0.0; q.len()];
        d[item.a] = 2.0 * delta * inv_b;
        for l in (0..net.weights.len()).rev() {
            let (n_in, n_out) = (net.sizes[l], net.sizes[l + 1]);
            let prev = &acts[l];
            let gw = &mut grads.weights[l];
            for i in 0..n_out {
                let di = d[i];
                if di == 0.0 {
                    continue;
                }
                let row = &mut gw[i * n_in..(i + 1) * n_in];
                for (g, p) in row.iter_mut().zip(prev) {
                    *g += di * p;
                }
                grads.biases[l][i] += di;
            }
            if l > 0 {
                let mut d_prev = vec![0.0; n_in];
                for i in 0..n_out {
                    let di = d[i];
                    if di == 0.0 {
                        continue;
                    }
                    let row = &net.weights[l][i * n_in..(i + 1) * n_in];
                    for (j, w) in row.iter().enumerate() {
                        d_prev[j] += w * di;
                    }
                }
                // Rectifier gate: units that output zero pass no gradient.
                for (dp, a) in d_prev.iter_mut().zip(prev) {
                    if *a <= 0.0 {
                        *dp = 0.0;
                    }
                }
                d = d_prev;
            }
        }
    }
    (loss, grads)
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Grads,
    v: Grads,
}

impl Adam {
    pub fn new(lr: f64, net: &QNetwork) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Grads::zeros_like(net),
            v: Grads::zeros_like(net),
        }
    }

    /// Apply one update step in place.
    pub fn step(&mut self, net: &mut QNetwork, grads: &Grads) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let apply = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        };
        for l in 0..net.weights.len() {
            apply(&mut net.weights[l], &grads.weights[l], &mut self.m.weights[l], &mut self.v.weights[l]);
            apply(&mut net.biases[l], &grads.biases[l], &mut self.m.biases[l], &mut self.v.biases[l]);
        }
    }
}

/// One TD update: gradient of the batch loss, then an Adam step. Returns
/// the (pre-step) loss.
pub fn td_update(
    net: &mut QNetwork,
    target: &QNetwork,
    batch: &[BatchItem],
    gamma: f64,
    adam: &mut Adam,
) -> f64 {
    let (loss, grads) = loss_and_grads(net, target, batch, gamma);
    adam.step(net, &grads);
    loss
}

// ---------------------------------------------------------------------------
// Replay memory
// ---------------------------------------------------------------------------

/// One stored interaction, kept in raw (unnormalized) units.
#[derive(Debug, Clone)]
pub struct Transition {
    pub s: Box<[f64]>,
    pub a: usize,
    pub r: f64,
    pub s_next: Box<[f64]>,
    pub done: bool,
}

/// Fixed-capacity ring: once full, each push overwrites the oldest entry.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay memory needs positive capacity");
        ReplayMemory { capacity, items: Vec::new(), next: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    /// Uniform sample with replacement. Errors when the buffer holds fewer
    /// entries than requested — callers gate training on a warm-up fill.
    pub fn sample_indices(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        if self.items.len() < n {
            return Err(Error::State(format!(
                "replay memory holds {} transitions, cannot sample a batch of {n}",
                self.items.len()
            )));
        }
        Ok((0..n).map(|_| rng.random_range(0..self.items.len())).collect())
    }
}

// ---------------------------------------------------------------------------
// Exploration
// ---------------------------------------------------------------------------

/// Probability of acting greedily ramps linearly from 0 to `max_greedy`
/// over `ramp_steps` environment steps, then stays flat.
#[derive(Debug, Clone, Copy)]
pub struct EpsSchedule {
    pub ramp_steps: u64,
    pub max_greedy: f64,
}

impl EpsSchedule {
    pub fn greedy_prob(&self, step: u64) -> f64 {
        assert!((0.0..=1.0).contains(&self.max_greedy));
        if self.ramp_steps == 0 {
            return self.max_greedy;
        }
        self.max_greedy * (step as f64 / self.ramp_steps as f64).min(1.0)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(q: &[f64]) -> usize {
    assert!(!q.is_empty());
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// ε-greedy choice: greedy with probability `greedy_prob`, otherwise a
/// uniformly random action.
pub fn epsilon_greedy(q: &[f64], greedy_prob: f64, rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    if u < greedy_prob {
        argmax(q)
    } else {
        rng.random_range(0..q.len())
    }
}

// ---------------------------------------------------------------------------
// Input normalization
// ---------------------------------------------------------------------------

/// Scales raw state entries into network-friendly ranges: position by the
/// stretch length, speeds by the speed limit, densities by the nominal jam
/// density.
#[derive(Debug, Clone, Copy)]
pub struct Normalizer {
    pub pos_scale: f64,
    pub speed_scale: f64,
    pub density_scale: f64,
    pub n_cells: usize,
}

impl Normalizer {
    pub fn normalize(&self, flat: &[f64]) -> Vec<f64> {
        assert_eq!(flat.len(), 2 + 2 * self.n_cells, "flat state width mismatch");
        let mut out = Vec::with_capacity(flat.len());
        out.push(flat[0] / self.pos_scale);
        out.push(flat[1] / self.speed_scale);
        for &r in &flat[2..2 + self.n_cells] {
            out.push(r / self.density_scale);
        }
        for &v in &flat[2 + self.n_cells..] {
            out.push(v / self.speed_scale);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

/// Line-oriented text checkpoint; floats print in shortest round-trip form
/// so identical networks produce byte-identical files.
pub fn save_qnet(path: &Path, net: &QNetwork) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "qnet v1");
    let _ = write!(out, "sizes");
    for s in &net.sizes {
        let _ = write!(out, " {s}");
    }
    let _ = writeln!(out);
    for l in 0..net.weights.len() {
        let _ = write!(out, "weights {l}");
        for w in &net.weights[l] {
            let _ = write!(out, " {w}");
        }
        let _ = writeln!(out);
        let _ = write!(out, "biases {l}");
        for b in &net.biases[l] {
            let _ = write!(out, " {b}");
        }
        let _ = writeln!(out);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_qnet(path: &Path) -> Result<QNetwork> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("qnet v1") => {}
        other => {
            return Err(Error::Checkpoint(format!(
                "expected header 'qnet v1', found {other:?} in {}",
                path.display()
            )))
        }
    }
    let sizes: Vec<usize> = lines
        .next()
        .and_then(|l| l.strip_prefix("sizes"))
        .map(|rest| rest.split_whitespace().map(|t| t.parse::<usize>()).collect())
        .transpose()
        .ok()
        .flatten()
        .ok_or_else(|| Error::Checkpoint("bad or missing sizes line".into()))?;
    if sizes.len() < 2 {
        return Err(Error::Checkpoint("network needs at least two layers".into()));
    }
    let mut net = QNetwork {
        sizes: sizes.clone(),
        weights: Vec::new(),
        biases: Vec::new(),
    };
    for l in 0..sizes.len() - 1 {
        let parse_row = |line: Option<&str>, tag: &str, want: usize| -> Result<Vec<f64>> {
            let line = line.ok_or_else(|| Error::Checkpoint(format!("missing {tag} {l}")))?;
            let rest = line
                .strip_prefix(&format!("{tag} {l}"))
                .ok_or_else(|| Error::Checkpoint(format!("expected '{tag} {l}', got: {line}")))?;
            let vals: std::result::Result<Vec<f64>, _> =
                rest.split_whitespace().map(|t| t.parse::<f64>()).collect();
            let vals =
                vals.map_err(|e| Error::Checkpoint(format!("bad float in {tag} {l}: {e}")))?;
            if vals.len() != want {
                return Err(Error::Checkpoint(format!(
                    "{tag} {l} holds {} values, expected {want}",
                    vals.len()
                )));
            }
            Ok(vals)
        };
        net.weights.push(parse_row(lines.next(), "weights", sizes[l] * sizes[l + 1])?);
        net.biases.push(parse_row(lines.next(), "biases", sizes[l + 1])?);
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::stream_rng;
    use proptest::prelude::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        stream_rng(seed, "test.qlearn")
    }

    #[test]
    fn hand_computed_forward_pass() {
        // 2-2-1 net evaluated by hand, including a rectified-away unit.
        let net = QNetwork {
            sizes: vec![2, 2, 1],
            weights: vec![vec![1.0, -1.0, 0.5, 0.5], vec![2.0, 3.0]],
            biases: vec![vec![0.0, -2.0], vec![0.25]],
        };
        // x = [1, 2]: z = [1-2, 0.5+1-2] = [-1, -0.5] -> relu [0, 0]
        // out = 0.25.
        assert_eq!(net.forward(&[1.0, 2.0]), vec![0.25]);
        // x = [3, 1]: z = [2, 0] -> relu [2, 0]; out = 4 + 0 + 0.25.
        assert_eq!(net.forward(&[3.0, 1.0]), vec![4.25]);
    }

    #[test]
    fn xavier_bounds_and_determinism() {
        let sizes = [4, 8, 3];
        let a = QNetwork::xavier(&sizes, &mut rng(1));
        let b = QNetwork::xavier(&sizes, &mut rng(1));
        assert_eq!(a, b);
        let bound0 = (6.0 / 12.0f64).sqrt();
        assert!(a.weights[0].iter().all(|w| w.abs() < bound0));
        assert!(a.weights[0].iter().any(|w| w.abs() > bound0 * 0.5), "suspiciously tight init");
        assert!(a.biases.iter().flatten().all(|&b| b == 0.0));
    }

    fn toy_batch() -> Vec<BatchItem> {
        vec![
            BatchItem {
                s: vec![0.3, -0.2, 0.9],
                a: 0,
                r: 1.0,
                s_next: vec![0.1, 0.4, -0.6],
                done: false,
            },
            BatchItem {
                s: vec![-0.7, 0.5, 0.2],
                a: 1,
                r: -2.0,
                s_next: vec![0.0, 0.0, 0.0],
                done: true,
            },
            BatchItem {
                s: vec![0.9, 0.9, -0.1],
                a: 1,
                r: 0.5,
                s_next: vec![-0.3, 0.8, 0.2],
                done: false,
            },
        ]
    }

    /// Central-difference check of every weight and bias gradient.
    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut net = QNetwork::xavier(&[3, 5, 2], &mut rng(7));
        let target = QNetwork::xavier(&[3, 5, 2], &mut rng(8));
        let batch = toy_batch();
        let gamma = 0.9;
        let (_, grads) = loss_and_grads(&net, &target, &batch, gamma);
        let eps = 1e-5;
        let mut checked = 0;
        for l in 0..net.weights.len() {
            for k in 0..net.weights[l].len() + net.biases[l].len() {
                let read = |n: &QNetwork| {
                    if k < n.weights[l].len() {
                        n.weights[l][k]
                    } else {
                        n.biases[l][k - n.weights[l].len()]
                    }
                };
                let write = |n: &mut QNetwork, v: f64| {
                    let nw = n.weights[l].len();
                    if k < nw {
                        n.weights[l][k] = v;
                    } else {
                        n.biases[l][k - nw] = v;
                    }
                };
                let orig = read(&net);
                write(&mut net, orig + eps);
                let up = loss_and_grads(&net, &target, &batch, gamma).0;
                write(&mut net, orig - eps);
                let dn = loss_and_grads(&net, &target, &batch, gamma).0;
                write(&mut net, orig);
                let numeric = (up - dn) / (2.0 * eps);
                let analytic = if k < grads.weights[l].len() {
                    grads.weights[l][k]
                } else {
                    grads.biases[l][k - grads.weights[l].len()]
                };
                let denom = numeric.abs().max(analytic.abs()).max(1e-8);
                assert!(
                    (numeric - analytic).abs() / denom < 1e-5,
                    "layer {l} param {k}: numeric {numeric} vs analytic {analytic}"
                );
                checked += 1;
            }
        }
        assert_eq!(checked, 3 * 5 + 5 + 5 * 2 + 2);
    }

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        let mut net = QNetwork {
            sizes: vec![1, 1],
            weights: vec![vec![0.5]],
            biases: vec![vec![0.1]],
        };
        let mut adam = Adam::new(0.01, &net);
        let grads = Grads { weights: vec![vec![3.7]], biases: vec![vec![-0.002]] };
        adam.step(&mut net, &grads);
        // First step: m̂ = g, v̂ = g², so the move is lr·g/(|g|+ε) ≈ lr·sign(g).
        assert!((net.weights[0][0] - (0.5 - 0.01)).abs() < 1e-6);
        assert!((net.biases[0][0] - (0.1 + 0.01)).abs() < 1e-5);
    }

    #[test]
    fn repeated_updates_shrink_the_loss() {
        let mut net = QNetwork::xavier(&[3, 8, 2], &mut rng(3));
        let target = net.clone();
        let mut adam = Adam::new(3e-3, &net);
        let batch = toy_batch();
        let first = td_update(&mut net, &target, &batch, 0.9, &mut adam);
        let mut last = first;
        for _ in 0..300 {
            last = td_update(&mut net, &target, &batch, 0.9, &mut adam);
        }
        assert!(
            last < first * 0.05,
            "optimizer failed to fit a fixed batch: {first} -> {last}"
        );
    }

    #[test]
    fn replay_overwrites_oldest_first() {
        let mut mem = ReplayMemory::new(3);
        let item = |r: f64| Transition {
            s: vec![0.0].into_boxed_slice(),
            a: 0,
            r,
            s_next: vec![0.0].into_boxed_slice(),
            done: false,
        };
        for i in 0..5 {
            mem.push(item(i as f64));
        }
        let mut rs: Vec<f64> = (0..mem.len()).map(|i| mem.get(i).r).collect();
        rs.sort_by(f64::total_cmp);
        assert_eq!(rs, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn sampling_needs_enough_entries() {
        let mem = ReplayMemory::new(8);
        assert!(mem.sample_indices(1, &mut rng(0)).is_err());
    }

    #[test]
    fn exploration_schedule_endpoints() {
        let e = EpsSchedule { ramp_steps: 1000, max_greedy: 0.95 };
        assert_eq!(e.greedy_prob(0), 0.0);
        assert!((e.greedy_prob(500) - 0.475).abs() < 1e-12);
        assert_eq!(e.greedy_prob(1000), 0.95);
        assert_eq!(e.greedy_prob(10_000), 0.95);
        let flat = EpsSchedule { ramp_steps: 0, max_greedy: 0.5 };
        assert_eq!(flat.greedy_prob(0), 0.5);
    }

    #[test]
    fn argmax_breaks_ties_toward_lower_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[5.0]), 0);
        assert_eq!(argmax(&[-2.0, -9.0]), 0);
    }

    #[test]
    fn fully_greedy_choice_is_the_argmax() {
        let mut r = rng(5);
        for _ in 0..50 {
            assert_eq!(epsilon_greedy(&[0.0, 2.0, 1.0], 1.0, &mut r), 1);
        }
    }

    #[test]
    fn fully_random_choice_is_roughly_uniform() {
        let mut r = rng(6);
        let q = vec![0.0; 9];
        let mut counts = [0u32; 9];
        for _ in 0..9000 {
            counts[epsilon_greedy(&q, 0.0, &mut r)] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            assert!((800..=1200).contains(&c), "action {i} drawn {c} times out of 9000");
        }
    }

    #[test]
    fn normalizer_scales_each_block() {
        let n = Normalizer { pos_scale: 800.0, speed_scale: 15.0, density_scale: 0.4, n_cells: 2 };
        let out = n.normalize(&[400.0, 7.5, 0.1, 0.4, 15.0, 3.0]);
        assert_eq!(out, vec![0.5, 0.5, 0.25, 1.0, 1.0, 0.2]);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("qnet.ckpt");
        let net = QNetwork::xavier(&[6, 10, 4], &mut rng(9));
        save_qnet(&path, &net).unwrap();
        let back = load_qnet(&path).unwrap();
        assert_eq!(net, back);
        // And re-saving produces byte-identical files.
        let path2 = dir.path().join("qnet2.ckpt");
        save_qnet(&path2, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn checkpoint_rejects_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("qnet.ckpt");
        std::fs::write(&path, "qnet v2\nsizes 2 2\n").unwrap();
        assert!(load_qnet(&path).is_err());
        std::fs::write(&path, "qnet v1\nsizes 2 2\nweights 0 1 2 3\nbiases 0 1 2\n").unwrap();
        assert!(load_qnet(&path).is_err(), "wrong weight count must be rejected");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// The ring always holds exactly the most recent `min(n, capacity)`
        /// pushes.
        #[test]
        fn replay_ring_keeps_the_most_recent(cap in 1usize..20, n in 0usize..60) {
            let mut mem = ReplayMemory::new(cap);
            for i in 0..n {
                mem.push(Transition {
                    s: vec![].into_boxed_slice(),
                    a: 0,
                    r: i as f64,
                    s_next: vec![].into_boxed_slice(),
                    done: false,
                });
            }
            let kept = n.min(cap);
            prop_assert_eq!(mem.len(), kept);
            let mut rs: Vec<usize> = (0..mem.len()).map(|i| mem.get(i).r as usize).collect();
            rs.sort_unstable();
            let expect: Vec<usize> = (n - kept..n).collect();
            prop_assert_eq!(rs, expect);
        }

        /// Shifting all Q-values by a constant never changes the greedy
        /// choice.
        #[test]
        fn argmax_is_shift_invariant(
            q in prop::collection::vec(-100.0f64..100.0, 1..12),
            shift in -50.0f64..50.0,
        ) {
            let shifted: Vec<f64> = q.iter().map(|v| v + shift).collect();
            prop_assert_eq!(argmax(&q), argmax(&shifted));
        }
    }
}
