use morap::model::{Absorbing, Mdp, MdpBuilder};
use morap::numerics::{evaluate_scheduler, exact_evaluate, optimal_scheduler, IterOptions, Scheduler};
use proptest::prelude::*;

/// Explicit model with a given done set.
struct Plain {
    mdp: Mdp,
    done: Vec<bool>,
}

impl Absorbing for Plain {
    fn model(&self) -> &Mdp {
        &self.mdp
    }
    fn done(&self) -> &[bool] {
        &self.done
    }
}

#[derive(Clone, Debug)]
struct Spec {
    /// per state, per action: (successor offsets, weights, reward)
    rows: Vec<Vec<(Vec<(usize, f64)>, f64)>>,
    done_from: usize,
}

/// Models where every action either self-loops or moves to a higher id,
/// with at least half the mass moving forward, and the top states done.
/// Every scheduler therefore reaches `done` with probability 1.
fn spec_strategy(max_states: usize, max_actions: usize) -> impl Strategy<Value = Spec> {
    (2..=max_states).prop_flat_map(move |n| {
        let action = (
            0.0f64..0.5,
            prop::collection::vec((1usize..4, 0.1f64..1.0), 1..3),
            -3.0f64..0.0,
        );
        let state = prop::collection::vec(action, 1..=max_actions);
        (prop::collection::vec(state, n), 1..=(n / 3).max(1)).prop_map(move |(raw, dones)| {
            let rows = raw
                .into_iter()
                .enumerate()
                .map(|(s, acts)| {
                    acts.into_iter()
                        .map(|(stay, jumps, r)| {
                            let total: f64 = jumps.iter().map(|j| j.1).sum();
                            let mut row = vec![(s, stay)];
                            for (d, w) in jumps {
                                row.push(((s + d).min(n - 1), (1.0 - stay) * w / total));
                            }
                            (row, r)
                        })
                        .collect()
                })
                .collect();
            Spec {
                rows,
                done_from: n - dones,
            }
        })
    })
}

fn build(spec: &Spec) -> (Plain, Vec<f64>) {
    let mut b = MdpBuilder::new();
    let mut reward = Vec::new();
    for (s, acts) in spec.rows.iter().enumerate() {
        b.add_state(Vec::new());
        if s >= spec.done_from {
            b.add_choice("idle", vec![(s, 1.0)]);
            reward.push(0.0);
            continue;
        }
        for (k, (row, r)) in acts.iter().enumerate() {
            b.add_choice(format!("a{k}"), row.clone());
            reward.push(*r);
        }
    }
    let n = spec.rows.len();
    let done = (0..n).map(|s| s >= spec.done_from).collect();
    (
        Plain {
            mdp: b.build(0).unwrap(),
            done,
        },
        reward,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn iterative_matches_exact(spec in spec_strategy(50, 3), pick in prop::collection::vec(0usize..3, 50)) {
        let (model, reward) = build(&spec);
        let m = model.model();
        let choices: Vec<usize> = (0..m.num_states()).map(|s| pick[s] % m.choices(s).len()).collect();
        let sched = Scheduler::simple(choices);
        let opts = IterOptions::default();
        let approx = evaluate_scheduler(&model, &sched, &reward, opts).unwrap();
        let exact = exact_evaluate(&model, &sched, &reward).unwrap();
        prop_assert!((approx.value - exact).abs() <= 100.0 * opts.eps, "{} vs {}", approx.value, exact);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn optimum_dominates_pure_schedulers(spec in spec_strategy(10, 3)) {
        let (model, reward) = build(&spec);
        let m = model.model();
        let sizes: Vec<usize> = (0..m.num_states()).map(|s| m.choices(s).len()).collect();
        let total: usize = sizes.iter().product();
        prop_assume!(total <= 20_000);
        let best = optimal_scheduler(&model, &reward, IterOptions { eps: 1e-10, ..Default::default() }).unwrap();
        let mut idx = vec![0usize; sizes.len()];
        loop {
            let v = exact_evaluate(&model, &Scheduler::simple(idx.clone()), &reward).unwrap();
            prop_assert!(best.solution.value >= v - 1e-7, "{} < {}", best.solution.value, v);
            let mut k = 0;
            while k < idx.len() {
                idx[k] += 1;
                if idx[k] < sizes[k] {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == idx.len() {
                break;
            }
        }
    }

    #[test]
    fn sweeps_from_zero_are_monotone(spec in spec_strategy(20, 2)) {
        let (model, reward) = build(&spec);
        let n = model.model().num_states();
        let sched = Scheduler::first_choice(model.model());
        let mut x = vec![0.0; n];
        let mut y = vec![0.0; n];
        for _ in 0..200 {
            morap::numerics::sweep_scheduler(&model, &sched, &reward, &x, &mut y);
            for s in 0..n {
                prop_assert!(y[s] <= x[s] + 1e-12);
            }
            std::mem::swap(&mut x, &mut y);
        }
    }
}
