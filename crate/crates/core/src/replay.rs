//! Per-environment FIFO replay buffers and the composite process
//! `Y = [RB(1..K), I, J]` driven by interaction and sampling draws.

use std::collections::VecDeque;
use std::fmt;
use std::io::Write;

use nalgebra::DVector;
use sha2::{Digest as _, Sha256};

use crate::env_model::{
    induced_transition_matrix, stationary_distribution, EnvironmentSet, FeatureMap,
    TabularSoftmaxPolicy,
};
use crate::error::{Error, Result};
use crate::rng::{Purpose, SeededRng};

/// One stored interaction `(s, a, r, s')` with its global birth time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
    /// Global interaction step at which the transition was generated.
    pub born_at: u64,
    /// FNV-1a digest of the policy parameters that generated it.
    pub born_theta_hash: u64,
}

/// 64-bit FNV-1a over the bit patterns of `theta`.
pub fn theta_digest(theta: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for x in theta {
        for b in x.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// FIFO store of at most `capacity` transitions. Slot `n = 1` is the newest.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    slots: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        Self {
            capacity,
            slots: VecDeque::with_capacity(capacity),
        }
    }

    /// Rebuild from slots listed newest first.
    pub fn from_slots(capacity: usize, slots: Vec<Transition>) -> Result<Self> {
        if capacity == 0 || slots.len() > capacity {
            return Err(Error::Precondition(format!(
                "{} slots for capacity {capacity}",
                slots.len()
            )));
        }
        if slots.windows(2).any(|w| w[0].born_at <= w[1].born_at) {
            return Err(Error::Precondition(
                "slot birth times must strictly decrease".into(),
            ));
        }
        Ok(Self {
            capacity,
            slots: slots.into(),
        })
    }

    /// Push as the newest slot; returns the evicted oldest transition when
    /// the buffer was full.
    pub fn push(&mut self, t: Transition) -> Option<Transition> {
        let evicted = if self.slots.len() == self.capacity {
            self.slots.pop_back()
        } else {
            None
        };
        self.slots.push_front(t);
        evicted
    }

    /// Slot `n` (1-based, newest first).
    pub fn slot(&self, n: usize) -> Option<&Transition> {
        n.checked_sub(1).and_then(|i| self.slots.get(i))
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.slots.len() == self.capacity
    }

    /// Newest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.slots.iter()
    }
}

/// Independent random streams of one process: the collection draw `I`, one
/// stream per environment for actions and next states, and the sampling
/// draws (`J` and slots).
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessRng {
    pub collect: SeededRng,
    pub environments: Vec<SeededRng>,
    pub sample: SeededRng,
}

impl ProcessRng {
    pub fn new(seed: u64, num_envs: usize) -> Self {
        Self {
            collect: SeededRng::for_purpose(seed, Purpose::Collect, 0),
            environments: (0..num_envs)
                .map(|k| SeededRng::for_purpose(seed, Purpose::Environment, k as u64))
                .collect(),
            sample: SeededRng::for_purpose(seed, Purpose::Sample, 0),
        }
    }
}

/// How each environment's first state is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialStates {
    Fixed(Vec<usize>),
    Uniform,
    /// Draw from each environment's stationary law under the given policy.
    Stationary(TabularSoftmaxPolicy),
}

/// Snapshot of the composite process: all buffers, each environment's
/// current state, the last draws of `I` and `J`, and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct MixProcessState {
    buffers: Vec<ReplayBuffer>,
    current_states: Vec<usize>,
    interactions: Vec<u64>,
    i_draw: Option<usize>,
    j_draw: Option<usize>,
    tau: u64,
}

impl MixProcessState {
    pub fn new(
        envs: &EnvironmentSet,
        capacity: usize,
        init: &InitialStates,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("buffer capacity must be positive".into()));
        }
        let k = envs.len();
        let n = envs.num_states();
        let current_states = match init {
            InitialStates::Fixed(s) => {
                if s.len() != k || s.iter().any(|&x| x >= n) {
                    return Err(Error::Dimension("initial states do not match".into()));
                }
                s.clone()
            }
            InitialStates::Uniform => (0..k).map(|_| rng.index(n)).collect(),
            InitialStates::Stationary(policy) => {
                let mut out = Vec::with_capacity(k);
                for m in envs.mdps() {
                    let mu = stationary_distribution(&induced_transition_matrix(m, policy)?)?;
                    out.push(rng.categorical(mu.as_slice()));
                }
                out
            }
        };
        Ok(Self {
            buffers: (0..k).map(|_| ReplayBuffer::new(capacity)).collect(),
            current_states,
            interactions: vec![0; k],
            i_draw: None,
            j_draw: None,
            tau: 0,
        })
    }

    /// Assemble a state from its parts (used to replay from snapshots).
    pub fn from_parts(
        buffers: Vec<ReplayBuffer>,
        current_states: Vec<usize>,
        interactions: Vec<u64>,
        i_draw: Option<usize>,
        j_draw: Option<usize>,
        tau: u64,
    ) -> Result<Self> {
        let k = buffers.len();
        if current_states.len() != k || interactions.len() != k {
            return Err(Error::Dimension("per-environment vectors must have length K".into()));
        }
        Ok(Self {
            buffers,
            current_states,
            interactions,
            i_draw,
            j_draw,
            tau,
        })
    }

    pub fn buffers(&self) -> &[ReplayBuffer] {
        &self.buffers
    }

    pub fn buffer(&self, k: usize) -> &ReplayBuffer {
        &self.buffers[k]
    }

    pub fn current_states(&self) -> &[usize] {
        &self.current_states
    }

    /// Interaction counts `t_k`.
    pub fn interactions(&self) -> &[u64] {
        &self.interactions
    }

    pub fn i_draw(&self) -> Option<usize> {
        self.i_draw
    }

    pub fn j_draw(&self) -> Option<usize> {
        self.j_draw
    }

    /// Number of interaction steps taken.
    pub fn tau(&self) -> u64 {
        self.tau
    }

    pub fn all_full(&self) -> bool {
        self.buffers.iter().all(ReplayBuffer::is_full)
    }
}

/// Sample `i ~ q`, act in environment `i` with `pi`, push the transition to
/// `RB(i)`, and advance that environment. Returns `i`.
pub fn interact_step(
    state: &mut MixProcessState,
    envs: &EnvironmentSet,
    policy: &TabularSoftmaxPolicy,
    rng: &mut ProcessRng,
) -> usize {
    let table = probability_table(policy);
    interact_step_table(state, envs, &table, theta_digest(policy.theta()), rng)
}

/// Flattened action probabilities `table[s * |A| + a]` of `policy`.
pub fn probability_table(policy: &TabularSoftmaxPolicy) -> Vec<f64> {
    (0..policy.num_states()).flat_map(|s| policy.probs(s)).collect()
}

/// [`interact_step`] driven by a precomputed probability table (see
/// [`probability_table`]) and policy digest.
pub fn interact_step_table(
    state: &mut MixProcessState,
    envs: &EnvironmentSet,
    table: &[f64],
    theta_hash: u64,
    rng: &mut ProcessRng,
) -> usize {
    let na = envs.num_actions();
    let i = rng.collect.categorical(envs.collect());
    let mdp = envs.mdp(i);
    let env_rng = &mut rng.environments[i];
    let s = state.current_states[i];
    let a = env_rng.categorical(&table[s * na..(s + 1) * na]);
    let s_next = env_rng.categorical(mdp.row(s, a));
    state.buffers[i].push(Transition {
        s,
        a,
        r: mdp.reward(s, a),
        s_next,
        born_at: state.tau,
        born_theta_hash: theta_hash,
    });
    state.current_states[i] = s_next;
    state.interactions[i] += 1;
    state.i_draw = Some(i);
    state.tau += 1;
    i
}

/// Sample `j ~ beta` and `n_batch` slots of `RB(j)` uniformly with
/// replacement.
pub fn sample_batch(
    state: &mut MixProcessState,
    envs: &EnvironmentSet,
    n_batch: usize,
    rng: &mut ProcessRng,
) -> Result<(usize, Vec<Transition>)> {
    let j = rng.sample.categorical(envs.optimize());
    state.j_draw = Some(j);
    let buf = &state.buffers[j];
    if buf.is_empty() {
        return Err(Error::Warmup {
            buffer: j,
            len: 0,
            needed: 1,
        });
    }
    let batch = (0..n_batch)
        .map(|_| buf.slots[rng.sample.index(buf.len())])
        .collect();
    Ok((j, batch))
}

/// SHA-256 digest of a process snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SnapshotDigest(pub [u8; 32]);

impl fmt::Display for SnapshotDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// Deterministic digest over every buffer slot, the current states, the
/// interaction counters, the last `I` and `J` draws, and the step counter.
pub fn snapshot_digest(state: &MixProcessState) -> SnapshotDigest {
    let mut h = Sha256::new();
    let opt = |x: Option<usize>| x.map_or(u64::MAX, |v| v as u64);
    h.update((state.buffers.len() as u64).to_le_bytes());
    for buf in &state.buffers {
        h.update((buf.capacity as u64).to_le_bytes());
        h.update((buf.len() as u64).to_le_bytes());
        for t in buf.iter() {
            h.update((t.s as u64).to_le_bytes());
            h.update((t.a as u64).to_le_bytes());
            h.update(t.r.to_bits().to_le_bytes());
            h.update((t.s_next as u64).to_le_bytes());
            h.update(t.born_at.to_le_bytes());
            h.update(t.born_theta_hash.to_le_bytes());
        }
    }
    for (&s, &c) in state.current_states.iter().zip(&state.interactions) {
        h.update((s as u64).to_le_bytes());
        h.update(c.to_le_bytes());
    }
    h.update(opt(state.i_draw).to_le_bytes());
    h.update(opt(state.j_draw).to_le_bytes());
    h.update(state.tau.to_le_bytes());
    let out = h.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&out);
    SnapshotDigest(bytes)
}

/// Write every buffer as CSV with columns `k,n,s,a,r,s_next,born_at`
/// (`k` and `n` are 1-based).
pub fn write_buffers_csv<W: Write>(state: &MixProcessState, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "n", "s", "a", "r", "s_next", "born_at"])?;
    for (k, buf) in state.buffers.iter().enumerate() {
        for (n, t) in buf.iter().enumerate() {
            w.write_record([
                (k + 1).to_string(),
                (n + 1).to_string(),
                t.s.to_string(),
                t.a.to_string(),
                t.r.to_string(),
                t.s_next.to_string(),
                t.born_at.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// How Monte-Carlo draws treat the buffers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrawMode {
    /// Draw from the current buffer contents only; estimates the
    /// expectation conditional on those contents. Standard errors assume
    /// independent draws.
    Frozen,
    /// Before each draw take one interaction step, so buffer contents keep
    /// turning over; estimates the expectation over the process itself.
    /// Standard errors from `batches` non-overlapping batch means.
    Streaming { batches: usize },
}

/// Reward offset used in the TD error of a draw from `RB(k)`.
#[derive(Debug, Clone, PartialEq)]
pub enum RewardOffset {
    /// One tracker for all buffers, as in the learner.
    Shared(f64),
    /// `eta_k` for draws from `RB(k)`.
    PerEnvironment(Vec<f64>),
}

impl RewardOffset {
    fn get(&self, k: usize) -> f64 {
        match self {
            RewardOffset::Shared(e) => *e,
            RewardOffset::PerEnvironment(v) => v[k],
        }
    }
}

/// Monte-Carlo mean with per-coordinate standard errors.
#[derive(Debug, Clone)]
pub struct McEstimate {
    pub mean: DVector<f64>,
    pub std_error: DVector<f64>,
    pub draws: usize,
}

impl McEstimate {
    /// Largest `|mean - target| / std_error` over coordinates; coordinates
    /// with zero error must match exactly.
    pub fn max_z(&self, target: &DVector<f64>) -> f64 {
        self.mean
            .iter()
            .zip(self.std_error.iter())
            .zip(target.iter())
            .map(|((m, se), t)| {
                let d = (m - t).abs();
                if *se > 0.0 {
                    d / se
                } else if d == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Monte-Carlo mean of `stat(k, transition)` with `j ~ beta` and a
/// uniformly chosen slot of `RB(j)`. Requires full buffers.
#[allow(clippy::too_many_arguments)]
pub fn empirical_rb_statistic<F>(
    state: &mut MixProcessState,
    envs: &EnvironmentSet,
    policy: &TabularSoftmaxPolicy,
    dim: usize,
    n_draws: usize,
    mode: DrawMode,
    rng: &mut ProcessRng,
    mut stat: F,
) -> Result<McEstimate>
where
    F: FnMut(usize, &Transition, &mut DVector<f64>),
{
    for (k, b) in state.buffers.iter().enumerate() {
        if !b.is_full() {
            return Err(Error::Warmup {
                buffer: k,
                len: b.len(),
                needed: b.capacity(),
            });
        }
    }
    if n_draws == 0 {
        return Err(Error::Precondition("n_draws must be positive".into()));
    }
    let theta_hash = theta_digest(policy.theta());
    let table = probability_table(policy);
    let mut x = DVector::zeros(dim);
    let mut draw = |state: &mut MixProcessState, rng: &mut ProcessRng, x: &mut DVector<f64>| {
        let j = rng.sample.categorical(envs.optimize());
        let buf = &state.buffers[j];
        let t = buf.slots[rng.sample.index(buf.len())];
        x.fill(0.0);
        stat(j, &t, x);
    };
    match mode {
        DrawMode::Frozen => {
            let mut sum = DVector::zeros(dim);
            let mut sq = DVector::zeros(dim);
            for _ in 0..n_draws {
                draw(state, rng, &mut x);
                sum += &x;
                sq += x.component_mul(&x);
            }
            let n = n_draws as f64;
            let mean = sum / n;
            let var = (sq / n - mean.component_mul(&mean)).map(|v| v.max(0.0) * n / (n - 1.0).max(1.0));
            let std_error = var.map(|v| (v / n).sqrt());
            Ok(McEstimate {
                mean,
                std_error,
                draws: n_draws,
            })
        }
        DrawMode::Streaming { batches } => {
            if batches < 2 || n_draws < batches {
                return Err(Error::Precondition(format!(
                    "{n_draws} draws cannot form {batches} batches"
                )));
            }
            let per = n_draws / batches;
            let mut means: Vec<DVector<f64>> = Vec::with_capacity(batches);
            for _ in 0..batches {
                let mut sum = DVector::zeros(dim);
                for _ in 0..per {
                    interact_step_table(state, envs, &table, theta_hash, rng);
                    draw(state, rng, &mut x);
                    sum += &x;
                }
                means.push(sum / per as f64);
            }
            let b = batches as f64;
            let mean = means.iter().fold(DVector::zeros(dim), |acc, m| acc + m) / b;
            let var = means
                .iter()
                .fold(DVector::zeros(dim), |acc, m| {
                    let d = m - &mean;
                    acc + d.component_mul(&d)
                })
                / (b - 1.0);
            Ok(McEstimate {
                mean,
                std_error: var.map(|v| (v / b).sqrt()),
                draws: per * batches,
            })
        }
    }
}

/// Monte-Carlo estimate of `E[delta(O) phi(s)]` over the buffers with
/// `delta = r - eta + phi(s')^T v - phi(s)^T v`.
#[allow(clippy::too_many_arguments)]
pub fn empirical_rb_expectation(
    state: &mut MixProcessState,
    envs: &EnvironmentSet,
    policy: &TabularSoftmaxPolicy,
    features: &FeatureMap,
    v: &DVector<f64>,
    eta: &RewardOffset,
    n_draws: usize,
    mode: DrawMode,
    rng: &mut ProcessRng,
) -> Result<McEstimate> {
    check_offset(eta, envs.len())?;
    let values: Vec<f64> = (0..features.num_states()).map(|s| features.value(s, v)).collect();
    let phi = features.matrix();
    empirical_rb_statistic(state, envs, policy, features.dim(), n_draws, mode, rng, |k, t, x| {
        let delta = t.r - eta.get(k) + values[t.s_next] - values[t.s];
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = delta * phi[(t.s, i)];
        }
    })
}

/// Monte-Carlo estimate of `E[delta(O) psi(s,a)]` (the expected actor
/// increment direction before step size and sign).
#[allow(clippy::too_many_arguments)]
pub fn empirical_actor_direction(
    state: &mut MixProcessState,
    envs: &EnvironmentSet,
    policy: &TabularSoftmaxPolicy,
    features: &FeatureMap,
    v: &DVector<f64>,
    eta: &RewardOffset,
    n_draws: usize,
    mode: DrawMode,
    rng: &mut ProcessRng,
) -> Result<McEstimate> {
    check_offset(eta, envs.len())?;
    let values: Vec<f64> = (0..features.num_states()).map(|s| features.value(s, v)).collect();
    let scorer = policy.clone();
    empirical_rb_statistic(state, envs, policy, policy.dim(), n_draws, mode, rng, |k, t, x| {
        let delta = t.r - eta.get(k) + values[t.s_next] - values[t.s];
        scorer.add_score(t.s, t.a, delta, x);
    })
}

fn check_offset(eta: &RewardOffset, k: usize) -> Result<()> {
    if let RewardOffset::PerEnvironment(v) = eta {
        if v.len() != k {
            return Err(Error::Dimension(format!(
                "{} reward offsets for {k} environments",
                v.len()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_model::FiniteMdp;

    fn t(born_at: u64) -> Transition {
        Transition {
            s: 0,
            a: 0,
            r: 0.0,
            s_next: 0,
            born_at,
            born_theta_hash: 0,
        }
    }

    fn envs(collect: Vec<f64>, optimize: Vec<f64>) -> EnvironmentSet {
        let m = FiniteMdp::new(
            2,
            2,
            vec![0.9, 0.1, 0.2, 0.8, 0.5, 0.5, 0.3, 0.7],
            vec![1.0, 0.5, 0.0, -0.5],
        )
        .unwrap();
        EnvironmentSet::new(vec![m.clone(), m], collect, optimize).unwrap()
    }

    #[test]
    fn fifo_shift_law() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..3 {
            assert!(b.push(t(i)).is_none());
        }
        let before: Vec<Transition> = b.iter().copied().collect();
        let evicted = b.push(t(3)).unwrap();
        assert_eq!(evicted.born_at, 0);
        assert_eq!(b.slot(1).unwrap().born_at, 3);
        for n in 1..3 {
            assert_eq!(*b.slot(n + 1).unwrap(), before[n - 1]);
        }
        assert!(b.slot(0).is_none() && b.slot(4).is_none());
    }

    #[test]
    fn degenerate_collect_law() {
        let e = envs(vec![1.0, 0.0], vec![1.0, 0.0]);
        let pol = TabularSoftmaxPolicy::uniform(2, 2);
        let mut rng = ProcessRng::new(5, 2);
        let mut st =
            MixProcessState::new(&e, 10, &InitialStates::Uniform, &mut SeededRng::new(1)).unwrap();
        for _ in 0..100 {
            let i = interact_step(&mut st, &e, &pol, &mut rng);
            assert_eq!(i, 0);
        }
        assert!(st.buffer(1).is_empty());
        assert_eq!(st.tau(), 100);
        for tr in st.buffer(0).iter() {
            assert_eq!(tr.r, e.mdp(0).reward(tr.s, tr.a));
        }
    }

    #[test]
    fn sampling_errors_on_empty_buffer() {
        let e = envs(vec![1.0, 0.0], vec![0.0, 1.0]);
        let mut st =
            MixProcessState::new(&e, 4, &InitialStates::Fixed(vec![0, 1]), &mut SeededRng::new(1))
                .unwrap();
        let mut rng = ProcessRng::new(2, 2);
        assert!(matches!(
            sample_batch(&mut st, &e, 2, &mut rng),
            Err(Error::Warmup { buffer: 1, .. })
        ));
    }

    #[test]
    fn singleton_buffer_batch() {
        let e = envs(vec![0.5, 0.5], vec![0.0, 1.0]);
        let pol = TabularSoftmaxPolicy::uniform(2, 2);
        let mut st =
            MixProcessState::new(&e, 1, &InitialStates::Uniform, &mut SeededRng::new(3)).unwrap();
        let mut rng = ProcessRng::new(4, 2);
        while st.buffer(1).is_empty() {
            interact_step(&mut st, &e, &pol, &mut rng);
        }
        let only = *st.buffer(1).slot(1).unwrap();
        let (j, batch) = sample_batch(&mut st, &e, 8, &mut rng).unwrap();
        assert_eq!(j, 1);
        assert_eq!(st.j_draw(), Some(1));
        assert!(batch.iter().all(|x| *x == only));
    }

    #[test]
    fn digest_sensitivity() {
        let e = envs(vec![0.5, 0.5], vec![0.5, 0.5]);
        let pol = TabularSoftmaxPolicy::uniform(2, 2);
        let mut st =
            MixProcessState::new(&e, 5, &InitialStates::Uniform, &mut SeededRng::new(3)).unwrap();
        let mut rng = ProcessRng::new(4, 2);
        for _ in 0..12 {
            interact_step(&mut st, &e, &pol, &mut rng);
        }
        assert_eq!(snapshot_digest(&st), snapshot_digest(&st.clone()));
        let mut slots: Vec<Transition> = st.buffer(0).iter().copied().collect();
        slots[0].r += 0.25;
        let mut buffers = st.buffers().to_vec();
        buffers[0] = ReplayBuffer::from_slots(5, slots).unwrap();
        let altered = MixProcessState::from_parts(
            buffers,
            st.current_states().to_vec(),
            st.interactions().to_vec(),
            st.i_draw(),
            st.j_draw(),
            st.tau(),
        )
        .unwrap();
        assert_ne!(snapshot_digest(&st), snapshot_digest(&altered));
    }

    #[test]
    fn zero_reward_expectation_is_exactly_zero() {
        let m = FiniteMdp::new(2, 1, vec![0.4, 0.6, 0.7, 0.3], vec![0.0, 0.0]).unwrap();
        let e = EnvironmentSet::new(vec![m.clone(), m], vec![0.5, 0.5], vec![0.3, 0.7]).unwrap();
        let pol = TabularSoftmaxPolicy::uniform(2, 1);
        let f = FeatureMap::tabular_anchored(2, 1).unwrap();
        let mut st =
            MixProcessState::new(&e, 8, &InitialStates::Uniform, &mut SeededRng::new(3)).unwrap();
        let mut rng = ProcessRng::new(9, 2);
        assert!(matches!(
            empirical_rb_expectation(&mut st, &e, &pol, &f, &DVector::zeros(1), &RewardOffset::Shared(0.0), 10, DrawMode::Frozen, &mut rng),
            Err(Error::Warmup { .. })
        ));
        while !st.all_full() {
            interact_step(&mut st, &e, &pol, &mut rng);
        }
        let est = empirical_rb_expectation(
            &mut st,
            &e,
            &pol,
            &f,
            &DVector::zeros(1),
            &RewardOffset::Shared(0.0),
            1000,
            DrawMode::Streaming { batches: 10 },
            &mut rng,
        )
        .unwrap();
        assert_eq!(est.mean[0], 0.0);
        assert_eq!(est.std_error[0], 0.0);
    }

    #[test]
    fn csv_export_columns() {
        let e = envs(vec![0.5, 0.5], vec![0.5, 0.5]);
        let pol = TabularSoftmaxPolicy::uniform(2, 2);
        let mut st =
            MixProcessState::new(&e, 3, &InitialStates::Uniform, &mut SeededRng::new(3)).unwrap();
        let mut rng = ProcessRng::new(4, 2);
        for _ in 0..10 {
            interact_step(&mut st, &e, &pol, &mut rng);
        }
        let mut out = Vec::new();
        write_buffers_csv(&st, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "k,n,s,a,r,s_next,born_at");
        assert_eq!(lines.count(), st.buffer(0).len() + st.buffer(1).len());
    }
}
