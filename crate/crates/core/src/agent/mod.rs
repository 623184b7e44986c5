//! Torsion policy network.
//!
//! Per step: atom features are projected to `M` dims and refined by `S`
//! rounds of edge-conditioned message passing with a GRU update. A set-to-set
//! LSTM readout pools the atoms, an episode-level LSTM memory consumes the
//! pooled vector, and every torsion gets a categorical distribution over
//! buckets from its four atom embeddings plus the memory. A linear value head
//! reads the memory.
//!
//! Parameters live in one flat vector. Gradients are exact reverse-mode,
//! including through the memory across an episode.

mod layers;
pub mod optim;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::{MoleculeGraph, EDGE_FEATURES};
use crate::geometry::Coordinates;
use crate::rng::{self, Rng};
use layers::{Gru, GruCache, Linear, Lstm, LstmCache};

pub use layers::{log_softmax, softmax};
pub use optim::Adam;

/// Element one-hot plus 3D position.
pub const NODE_FEATURES: usize = 5;

pub const CHECKPOINT_FORMAT: &str = "torsionworks-policy";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    /// Node embedding width.
    pub node_dim: usize,
    /// Episode memory width.
    pub memory_dim: usize,
    pub message_steps: usize,
    pub pool_passes: usize,
    pub edge_hidden: usize,
    pub head_hidden: usize,
    pub buckets: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            node_dim: 16,
            memory_dim: 32,
            message_steps: 3,
            pool_passes: 3,
            edge_hidden: 16,
            head_hidden: 32,
            buckets: 6,
        }
    }
}

impl AgentConfig {
    /// Full-size network.
    pub fn large() -> Self {
        AgentConfig {
            node_dim: 128,
            memory_dim: 256,
            message_steps: 6,
            pool_passes: 6,
            edge_hidden: 128,
            head_hidden: 128,
            buckets: 6,
        }
    }

    /// Tiny network for gradient checks.
    pub fn toy() -> Self {
        AgentConfig {
            node_dim: 4,
            memory_dim: 4,
            message_steps: 2,
            pool_passes: 2,
            edge_hidden: 3,
            head_hidden: 5,
            buckets: 6,
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let positive = [
            ("node_dim", self.node_dim),
            ("memory_dim", self.memory_dim),
            ("pool_passes", self.pool_passes),
            ("edge_hidden", self.edge_hidden),
            ("head_hidden", self.head_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(AgentError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.buckets < 2 {
            return Err(AgentError::InvalidConfig("buckets must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    input: Linear,
    edge_hidden: Linear,
    edge_out: Linear,
    node_update: Gru,
    pool: Lstm,
    memory: Lstm,
    head_hidden: Linear,
    head_out: Linear,
    value: Linear,
    total: usize,
    /// (name, layer) in storage order, for the checkpoint manifest.
    named: Vec<(&'static str, Linear)>,
}

impl Layout {
    fn new(c: &AgentConfig) -> Self {
        let mut next = 0;
        let mut named = Vec::new();
        let mut lin = |name: &'static str, inp: usize, out: usize| {
            let l = Linear { w: next, b: next + inp * out, inp, out };
            next += l.len();
            named.push((name, l));
            l
        };
        let m = c.node_dim;
        let g = c.memory_dim;
        let input = lin("input", NODE_FEATURES, m);
        let edge_hidden = lin("edge.hidden", EDGE_FEATURES, c.edge_hidden);
        let edge_out = lin("edge.out", c.edge_hidden, m * m);
        let node_update = Gru {
            update: lin("node.update", 2 * m, m),
            reset: lin("node.reset", 2 * m, m),
            candidate: lin("node.candidate", 2 * m, m),
        };
        let pool = Lstm { gates: lin("pool.gates", 3 * m, 4 * m), hidden: m };
        let memory = Lstm { gates: lin("memory.gates", 2 * m + g, 4 * g), hidden: g };
        let head_hidden = lin("head.hidden", 4 * m + g, c.head_hidden);
        let head_out = lin("head.out", c.head_hidden, c.buckets);
        let value = lin("value", g, 1);
        Layout {
            input,
            edge_hidden,
            edge_out,
            node_update,
            pool,
            memory,
            head_hidden,
            head_out,
            value,
            total: next,
            named,
        }
    }
}

/// Network input for one conformer: node features, bonds and torsion quads.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub nodes: Vec<[f64; NODE_FEATURES]>,
    /// Undirected bonds with their features; messages flow both ways.
    pub edges: Vec<(usize, usize, [f64; EDGE_FEATURES])>,
    pub torsions: Vec<[usize; 4]>,
}

impl GraphInput {
    /// Features from a molecule and (pose-normalized) coordinates.
    pub fn new(g: &MoleculeGraph, coords: &Coordinates) -> Self {
        let nodes = g
            .atoms()
            .iter()
            .zip(&coords.0)
            .map(|(a, p)| {
                let [c, o] = a.element.one_hot();
                [c, o, p.x, p.y, p.z]
            })
            .collect();
        let edges = g.bonds().iter().map(|b| (b.i, b.j, b.features())).collect();
        let torsions = g.torsions().iter().map(|t| t.atoms()).collect();
        GraphInput { nodes, edges, torsions }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl MemoryState {
    pub fn zeros(dim: usize) -> Self {
        MemoryState { h: vec![0.0; dim], c: vec![0.0; dim] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// Per-torsion logits over buckets.
    pub logits: Vec<Vec<f64>>,
    pub probs: Vec<Vec<f64>>,
    pub value: f64,
    pub memory: MemoryState,
    /// Final node embeddings.
    pub embeddings: Vec<Vec<f64>>,
    /// Pooled graph vector.
    pub pooled: Vec<f64>,
}

#[derive(Debug, Clone)]
struct PoolPass {
    prev_star: Vec<f64>,
    lstm: LstmCache,
    query: Vec<f64>,
    attention: Vec<f64>,
}

#[derive(Debug, Clone)]
struct StepTape {
    input: GraphInput,
    edge_pre: Vec<Vec<f64>>,
    edge_hidden: Vec<Vec<f64>>,
    edge_mats: Vec<Vec<f64>>,
    /// Node embeddings entering each message round, plus the final ones.
    rounds: Vec<Vec<Vec<f64>>>,
    gru: Vec<Vec<GruCache>>,
    pool: Vec<PoolPass>,
    memory: LstmCache,
    memory_h: Vec<f64>,
    head_in: Vec<Vec<f64>>,
    head_hidden: Vec<Vec<f64>>,
}

/// Recorded forward pass over a whole episode, for backpropagation.
#[derive(Debug, Clone)]
pub struct EpisodeTape {
    steps: Vec<StepTape>,
}

impl EpisodeTape {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledAction {
    pub buckets: Vec<usize>,
    /// Sum of per-torsion log-probabilities.
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    config: AgentConfig,
    layout: Layout,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    offset: usize,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: AgentConfig,
    manifest: Vec<ManifestEntry>,
    params: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
}

impl Policy {
    /// Seeded uniform(±1/√fan_in) weights, zero biases.
    pub fn new(config: AgentConfig, seed: u64) -> Result<Self, AgentError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        let mut r = rng::seeded(seed);
        for (_, l) in &layout.named {
            let bound = 1.0 / (l.inp as f64).sqrt();
            for w in &mut params[l.w..l.w + l.inp * l.out] {
                *w = bound * (2.0 * rng::uniform_unit(&mut r) - 1.0);
            }
        }
        Ok(Policy { config, layout, params })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) {
        assert_eq!(params.len(), self.layout.total, "parameter count");
        self.params = params;
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    /// Offsets of the torsion-head output biases.
    pub fn head_bias_range(&self) -> std::ops::Range<usize> {
        let l = self.layout.head_out;
        l.b..l.b + l.out
    }

    pub fn initial_memory(&self) -> MemoryState {
        MemoryState::zeros(self.config.memory_dim)
    }

    /// Node embeddings only (no pooling or heads).
    pub fn embed(&self, input: &GraphInput) -> Vec<Vec<f64>> {
        self.forward_step(input, &self.initial_memory()).1.rounds.pop().expect("final round")
    }

    /// One step from a memory state; the tape is discarded.
    pub fn step(&self, input: &GraphInput, memory: &MemoryState) -> StepOutput {
        self.forward_step(input, memory).0
    }

    /// Forward over an episode from zero memory, recording everything needed
    /// for [`Policy::backward_episode`].
    pub fn forward_episode(&self, inputs: &[GraphInput]) -> (Vec<StepOutput>, EpisodeTape) {
        let mut memory = self.initial_memory();
        let mut outs = Vec::with_capacity(inputs.len());
        let mut steps = Vec::with_capacity(inputs.len());
        for input in inputs {
            let (out, tape) = self.forward_step(input, &memory);
            memory = out.memory.clone();
            outs.push(out);
            steps.push(tape);
        }
        (outs, EpisodeTape { steps })
    }

    fn forward_step(&self, input: &GraphInput, memory: &MemoryState) -> (StepOutput, StepTape) {
        let p = &self.params;
        let l = &self.layout;
        let m = self.config.node_dim;

        let x0: Vec<Vec<f64>> = input.nodes.iter().map(|f| l.input.forward(p, f)).collect();

        let mut edge_pre = Vec::with_capacity(input.edges.len());
        let mut edge_hidden = Vec::with_capacity(input.edges.len());
        let mut edge_mats = Vec::with_capacity(input.edges.len());
        for (_, _, feat) in &input.edges {
            let pre = l.edge_hidden.forward(p, feat);
            let hid: Vec<f64> = pre.iter().map(|v| v.tanh()).collect();
            edge_mats.push(l.edge_out.forward(p, &hid));
            edge_pre.push(pre);
            edge_hidden.push(hid);
        }

        let mut rounds = vec![x0];
        let mut gru = Vec::with_capacity(self.config.message_steps);
        for _ in 0..self.config.message_steps {
            let x = rounds.last().expect("round");
            let msgs = messages(&input.edges, &edge_mats, x, m);
            let (next, caches): (Vec<_>, Vec<_>) =
                x.iter().zip(&msgs).map(|(xi, mi)| l.node_update.forward(p, mi, xi)).unzip();
            rounds.push(next);
            gru.push(caches);
        }
        let x = rounds.last().expect("round").clone();

        // Set-to-set pooling.
        let mut star = vec![0.0; 2 * m];
        let (mut qh, mut qc) = (vec![0.0; m], vec![0.0; m]);
        let mut pool = Vec::with_capacity(self.config.pool_passes);
        for _ in 0..self.config.pool_passes {
            let (h, c, cache) = l.pool.forward(p, &star, &qh, &qc);
            let scores: Vec<f64> = x.iter().map(|xi| dot(xi, &h)).collect();
            let attention = layers::softmax(&scores);
            let mut readout = vec![0.0; m];
            for (xi, a) in x.iter().zip(&attention) {
                readout.iter_mut().zip(xi).for_each(|(r, v)| *r += a * v);
            }
            let next_star = [h.clone(), readout].concat();
            pool.push(PoolPass { prev_star: star, lstm: cache, query: h.clone(), attention });
            star = next_star;
            qh = h;
            qc = c;
        }
        let pooled = star;

        let (mh, mc, mcache) = l.memory.forward(p, &pooled, &memory.h, &memory.c);

        let mut head_in = Vec::with_capacity(input.torsions.len());
        let mut head_hidden = Vec::with_capacity(input.torsions.len());
        let mut logits = Vec::with_capacity(input.torsions.len());
        for quad in &input.torsions {
            let mut u = Vec::with_capacity(4 * m + mh.len());
            for &a in quad {
                u.extend_from_slice(&x[a]);
            }
            u.extend_from_slice(&mh);
            let hid: Vec<f64> = l.head_hidden.forward(p, &u).into_iter().map(f64::tanh).collect();
            logits.push(l.head_out.forward(p, &hid));
            head_in.push(u);
            head_hidden.push(hid);
        }
        let probs = logits.iter().map(|z| layers::softmax(z)).collect();
        let value = l.value.forward(p, &mh)[0];

        let out = StepOutput {
            logits,
            probs,
            value,
            memory: MemoryState { h: mh.clone(), c: mc },
            embeddings: x,
            pooled,
        };
        let tape = StepTape {
            input: input.clone(),
            edge_pre,
            edge_hidden,
            edge_mats,
            rounds,
            gru,
            pool,
            memory: mcache,
            memory_h: mh,
            head_in,
            head_hidden,
        };
        (out, tape)
    }

    /// Accumulates `dL/dθ` into `grad` given `dL/dlogits` and `dL/dvalue` for
    /// every step of a recorded episode.
    pub fn backward_episode(
        &self,
        tape: &EpisodeTape,
        dlogits: &[Vec<Vec<f64>>],
        dvalues: &[f64],
        grad: &mut [f64],
    ) {
        assert_eq!(grad.len(), self.layout.total);
        assert_eq!(dlogits.len(), tape.steps.len());
        assert_eq!(dvalues.len(), tape.steps.len());
        let g = self.config.memory_dim;
        let mut dh_next = vec![0.0; g];
        let mut dc_next = vec![0.0; g];
        for (t, step) in tape.steps.iter().enumerate().rev() {
            let (dh, dc) = self.backward_step(step, &dlogits[t], dvalues[t], &dh_next, &dc_next, grad);
            dh_next = dh;
            dc_next = dc;
        }
    }

    fn backward_step(
        &self,
        s: &StepTape,
        dlogits: &[Vec<f64>],
        dvalue: f64,
        dh_carry: &[f64],
        dc_carry: &[f64],
        grad: &mut [f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let p = &self.params;
        let l = &self.layout;
        let m = self.config.node_dim;
        let n_atoms = s.input.nodes.len();
        let x = s.rounds.last().expect("round");

        let mut dx = vec![vec![0.0; m]; n_atoms];
        let mut dmem_h = dh_carry.to_vec();
        add_into(&mut dmem_h, &l.value.backward(p, grad, &s.memory_h, &[dvalue]));

        for (k, quad) in s.input.torsions.iter().enumerate() {
            let dhid = l.head_out.backward(p, grad, &s.head_hidden[k], &dlogits[k]);
            let dpre: Vec<f64> =
                dhid.iter().zip(&s.head_hidden[k]).map(|(d, h)| d * (1.0 - h * h)).collect();
            let du = l.head_hidden.backward(p, grad, &s.head_in[k], &dpre);
            for (slot, &a) in quad.iter().enumerate() {
                add_into(&mut dx[a], &du[slot * m..(slot + 1) * m]);
            }
            add_into(&mut dmem_h, &du[4 * m..]);
        }

        let (dpooled, dh_prev, dc_prev) = l.memory.backward(p, grad, &s.memory, &dmem_h, dc_carry);

        // Set-to-set, last pass first.
        let mut dstar = dpooled;
        let mut dq_carry = vec![0.0; m];
        let mut dc_pool = vec![0.0; m];
        for pass in s.pool.iter().rev() {
            let mut dq: Vec<f64> = dstar[..m].iter().zip(&dq_carry).map(|(a, b)| a + b).collect();
            let dr = &dstar[m..];
            let da: Vec<f64> = x.iter().map(|xi| dot(xi, dr)).collect();
            let mean = dot(&pass.attention, &da);
            for (i, xi) in x.iter().enumerate() {
                let a = pass.attention[i];
                let de = a * (da[i] - mean);
                for k in 0..m {
                    dx[i][k] += a * dr[k] + de * pass.query[k];
                    dq[k] += de * xi[k];
                }
            }
            let (din, dh, dc) = l.pool.backward(p, grad, &pass.lstm, &dq, &dc_pool);
            debug_assert_eq!(din.len(), pass.prev_star.len());
            dstar = din;
            dq_carry = dh;
            dc_pool = dc;
        }

        // Message passing, last round first.
        let mut dmats = vec![vec![0.0; m * m]; s.input.edges.len()];
        for r in (0..s.gru.len()).rev() {
            let xin = &s.rounds[r];
            let mut dxin = vec![vec![0.0; m]; n_atoms];
            let mut dmsg = vec![vec![0.0; m]; n_atoms];
            for i in 0..n_atoms {
                let (dm, ds) = l.node_update.backward(p, grad, &s.gru[r][i], &dx[i]);
                dmsg[i] = dm;
                add_into(&mut dxin[i], &ds);
            }
            for (e, &(a, b, _)) in s.input.edges.iter().enumerate() {
                let mat = &s.edge_mats[e];
                for (to, from) in [(a, b), (b, a)] {
                    for row in 0..m {
                        let d = dmsg[to][row];
                        if d == 0.0 {
                            continue;
                        }
                        for col in 0..m {
                            dmats[e][row * m + col] += d * xin[from][col];
                            dxin[from][col] += d * mat[row * m + col];
                        }
                    }
                }
            }
            dx = dxin;
        }

        for (e, (_, _, feat)) in s.input.edges.iter().enumerate() {
            let dhid = l.edge_out.backward(p, grad, &s.edge_hidden[e], &dmats[e]);
            let dpre: Vec<f64> =
                dhid.iter().zip(&s.edge_hidden[e]).map(|(d, h)| d * (1.0 - h * h)).collect();
            debug_assert_eq!(dpre.len(), s.edge_pre[e].len());
            l.edge_hidden.backward(p, grad, feat, &dpre);
        }
        for (i, feat) in s.input.nodes.iter().enumerate() {
            l.input.backward(p, grad, feat, &dx[i]);
        }
        (dh_prev, dc_prev)
    }

    /// Independent categorical draw per torsion.
    pub fn sample(&self, out: &StepOutput, r: &mut Rng) -> SampledAction {
        let mut buckets = Vec::with_capacity(out.probs.len());
        let mut log_prob = 0.0;
        for (probs, logits) in out.probs.iter().zip(&out.logits) {
            let u = rng::uniform_unit(r);
            let mut acc = 0.0;
            let mut pick = probs.len() - 1;
            for (k, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = k;
                    break;
                }
            }
            log_prob += layers::log_softmax(logits)[pick];
            buckets.push(pick);
        }
        SampledAction { buckets, log_prob }
    }

    /// Most likely bucket per torsion, lowest index on ties.
    pub fn greedy(&self, out: &StepOutput) -> SampledAction {
        let mut buckets = Vec::with_capacity(out.probs.len());
        let mut log_prob = 0.0;
        for logits in &out.logits {
            let mut best = 0;
            for (k, v) in logits.iter().enumerate() {
                if *v > logits[best] {
                    best = k;
                }
            }
            log_prob += layers::log_softmax(logits)[best];
            buckets.push(best);
        }
        SampledAction { buckets, log_prob }
    }

    pub fn to_checkpoint_json(&self) -> String {
        let manifest = self
            .layout
            .named
            .iter()
            .flat_map(|(name, l)| {
                [
                    ManifestEntry { name: format!("{name}.weight"), offset: l.w, shape: vec![l.out, l.inp] },
                    ManifestEntry { name: format!("{name}.bias"), offset: l.b, shape: vec![l.out] },
                ]
            })
            .collect();
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: self.config,
            manifest,
            params: self.params.clone(),
        };
        serde_json::to_string(&ck).expect("checkpoint serializes")
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self, AgentError> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| AgentError::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(AgentError::Checkpoint(format!(
                "unsupported format {} v{}",
                ck.format, ck.version
            )));
        }
        ck.config.validate()?;
        let layout = Layout::new(&ck.config);
        if ck.params.len() != layout.total {
            return Err(AgentError::Checkpoint(format!(
                "expected {} parameters, found {}",
                layout.total,
                ck.params.len()
            )));
        }
        for entry in &ck.manifest {
            let ok = layout.named.iter().any(|(name, l)| {
                (entry.name == format!("{name}.weight") && entry.offset == l.w && entry.shape == [l.out, l.inp])
                    || (entry.name == format!("{name}.bias") && entry.offset == l.b && entry.shape == [l.out])
            });
            if !ok {
                return Err(AgentError::Checkpoint(format!("manifest mismatch at {}", entry.name)));
            }
        }
        if ck.params.iter().any(|v| !v.is_finite()) {
            return Err(AgentError::Checkpoint("non-finite parameter".into()));
        }
        Ok(Policy { config: ck.config, layout, params: ck.params })
    }

    pub fn save(&self, path: &Path) -> Result<(), AgentError> {
        std::fs::write(path, self.to_checkpoint_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AgentError> {
        Self::from_checkpoint_json(&std::fs::read_to_string(path)?)
    }
}

fn messages(
    edges: &[(usize, usize, [f64; EDGE_FEATURES])],
    mats: &[Vec<f64>],
    x: &[Vec<f64>],
    m: usize,
) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; m]; x.len()];
    for ((a, b, _), mat) in edges.iter().zip(mats) {
        for (to, from) in [(*a, *b), (*b, *a)] {
            for row in 0..m {
                out[to][row] += dot(&mat[row * m..(row + 1) * m], &x[from]);
            }
        }
    }
    out
}
