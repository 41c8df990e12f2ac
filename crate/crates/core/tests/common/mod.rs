use popo::gap::{TabularMdp, TabularTransition};

/// MDP whose kernel is exactly the normalized count tensor, plus the
/// transitions realizing those counts.
pub fn counted_mdp(
    counts: &[Vec<Vec<Vec<u32>>>],
    reward_support: Vec<f64>,
    gamma: f64,
) -> (TabularMdp, Vec<TabularTransition>) {
    let states = counts.len();
    let mut data = Vec::new();
    let p = counts
        .iter()
        .enumerate()
        .map(|(s, by_a)| {
            by_a.iter()
                .enumerate()
                .map(|(a, by_s2)| {
                    let total: u32 = by_s2.iter().flatten().sum();
                    by_s2
                        .iter()
                        .enumerate()
                        .map(|(s_next, by_r)| {
                            by_r.iter()
                                .enumerate()
                                .map(|(r, &c)| {
                                    data.extend((0..c).map(|_| TabularTransition {
                                        s,
                                        a,
                                        r,
                                        s_next,
                                    }));
                                    c as f64 / total as f64
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let mdp = TabularMdp {
        states,
        actions: counts[0].len(),
        reward_support,
        p,
        rho0: vec![1.0 / states as f64; states],
        gamma,
    };
    (mdp, data)
}
