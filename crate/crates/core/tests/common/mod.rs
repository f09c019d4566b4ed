#![allow(dead_code)]

use recourse_core::rng::{below, dirichlet1, open01, stream};
use recourse_core::{ActionId, Mdp, MdpBuilder, StateId};

/// A small model with arbitrary cycles. The last state is the absorbing
/// target; every other state gets between one and `max_actions` actions.
pub fn small_mdp(seed: u64, max_states: usize, max_actions: usize) -> (Mdp, StateId) {
    let mut rng = stream(&[0x5eed, seed]);
    let n = 2 + below(&mut rng, max_states - 1);
    let mut b = MdpBuilder::new();
    let states: Vec<StateId> = (0..n).map(|i| b.state(format!("s{i}"))).collect();
    let actions: Vec<ActionId> = (0..max_actions).map(|i| b.action(format!("a{i}"))).collect();
    let t = states[n - 1];
    for &s in &states[..n - 1] {
        let k = 1 + below(&mut rng, max_actions);
        for &a in &actions[..k] {
            let mut succ: Vec<usize> = (0..1 + below(&mut rng, n)).map(|_| below(&mut rng, n)).collect();
            if open01(&mut rng) < 0.3 {
                succ.push(n - 1);
            }
            succ.sort_unstable();
            succ.dedup();
            let w = dirichlet1(&mut rng, succ.len());
            let to: Vec<(StateId, f64)> = succ.iter().zip(w).map(|(&s, p)| (StateId(s), p)).collect();
            b.transition(s, a, &to);
        }
    }
    b.transition(t, actions[0], &[(t, 1.0)]);
    (b.build().unwrap(), t)
}
