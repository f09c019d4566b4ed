//! Seeded random streams, random strategies and random models. Every stream
//! is derived from a tuple of integers so that parallel and sequential runs
//! draw identical numbers.

use alloc::format;
use alloc::vec::Vec;

use crate::mdp::{ActionId, Mdp, MdpBuilder, StateId, Strategy};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn stream(keys: &[u64]) -> ChaCha8Rng {
    // splitmix64 over the keys
    let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
    for &k in keys {
        h ^= k;
        h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Uniform in the open interval (0, 1).
pub fn open01(rng: &mut impl RngCore) -> f64 {
    loop {
        let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        if u > 0.0 {
            return u;
        }
    }
}

/// Symmetric Dirichlet(1) sample of dimension `k`, i.e. a uniform point on
/// the probability simplex.
pub fn dirichlet1(rng: &mut impl RngCore, k: usize) -> Vec<f64> {
    let mut x: Vec<f64> = (0..k).map(|_| -libm::log(open01(rng))).collect();
    let s: f64 = x.iter().sum();
    for v in &mut x {
        *v /= s;
    }
    x
}

/// Uniform integer in `0..n`.
pub fn below(rng: &mut impl RngCore, n: usize) -> usize {
    (open01(rng) * n as f64) as usize % n.max(1)
}

/// Independent Dirichlet(1) rows for the decision states; single-action
/// states get their only action. Depends only on the model and the seed.
pub fn random_strategy(m: &Mdp, seed: u64) -> Strategy {
    let fp = m.fingerprint();
    let rows = m
        .states()
        .map(|s| {
            let k = m.choices(s).len();
            if k == 1 {
                return m.enabled(s).map(|a| (a, 1.0)).collect();
            }
            let w = dirichlet1(&mut stream(&[fp, seed, s.0 as u64]), k);
            m.enabled(s).zip(w).collect()
        })
        .collect();
    Strategy::from_rows(rows)
}

/// Shape of a random model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomMdpSpec {
    /// Total states, including the absorbing `target` and `sink`.
    pub states: usize,
    /// Actions available to a decision state (at least 2).
    pub max_actions: usize,
    /// Probability that a non-absorbing state is a decision state.
    pub decision_ratio: f64,
    /// Successors per action beyond the forward edge.
    pub extra_successors: usize,
    pub seed: u64,
}

/// A random model with its target state.
#[derive(Debug, Clone)]
pub struct RandomMdp {
    pub mdp: Mdp,
    pub target: StateId,
    pub sink: StateId,
}

/// States `q0 .. q{n-3}` form a forward chain through the first action, so
/// every state is reachable from `q0` and can reach `target`; the remaining
/// actions and successors are drawn at random. The last two states are the
/// absorbing `target` and `sink`.
pub fn random_mdp(spec: &RandomMdpSpec) -> RandomMdp {
    let n = spec.states.max(3);
    let mut rng = stream(&[0x6d64_70, spec.seed]);
    let mut b = MdpBuilder::new();
    let ids: Vec<StateId> = (0..n - 2).map(|i| b.state(format!("q{i}"))).collect();
    let target = b.state("target");
    let sink = b.state("sink");
    let k = spec.max_actions.max(2);
    let actions: Vec<ActionId> = (0..k).map(|i| b.action(format!("a{i}"))).collect();
    let stay = b.action("stay");
    let all = n;
    for (i, &s) in ids.iter().enumerate() {
        let decision = open01(&mut rng) < spec.decision_ratio;
        let count = if decision { 2 + below(&mut rng, k - 1) } else { 1 };
        for (j, &a) in actions.iter().take(count).enumerate() {
            let mut succ: Vec<usize> = Vec::new();
            if j == 0 {
                succ.push(if i + 1 < ids.len() { i + 1 } else { target.0 });
            }
            // actions other than the first always get at least one successor
            let extra = below(&mut rng, spec.extra_successors + 1) + usize::from(j > 0);
            for _ in 0..extra {
                succ.push(below(&mut rng, all));
            }
            succ.sort_unstable();
            succ.dedup();
            let w = dirichlet1(&mut rng, succ.len());
            let to: Vec<(StateId, f64)> = succ.iter().zip(w).map(|(&t, p)| (StateId(t), p)).collect();
            b.transition(s, a, &to);
        }
    }
    b.transition(target, stay, &[(target, 1.0)]);
    b.transition(sink, stay, &[(sink, 1.0)]);
    let mdp = b.build().expect("generated model is well formed");
    RandomMdp { mdp, target, sink }
}
