use std::collections::{BTreeSet, VecDeque};

use continual_rl::envs::{make_task, GridEnv, TaskSpec};
use proptest::prelude::*;

/// Independent BFS over the wall mask with 4-neighbour moves.
fn bfs(env: &GridEnv, from: (usize, usize), to: (usize, usize)) -> Option<usize> {
    let n = env.size();
    let walls = env.walls();
    let mut dist = vec![usize::MAX; n * n];
    let mut q = VecDeque::from([from]);
    dist[from.0 * n + from.1] = 0;
    while let Some((r, c)) = q.pop_front() {
        if (r, c) == to {
            return Some(dist[r * n + c]);
        }
        let d = dist[r * n + c];
        for (dr, dc) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
            let (nr, nc) = (r as i64 + dr, c as i64 + dc);
            if nr < 0 || nc < 0 || nr >= n as i64 || nc >= n as i64 {
                continue;
            }
            let i = nr as usize * n + nc as usize;
            if !walls[i] && dist[i] == usize::MAX {
                dist[i] = d + 1;
                q.push_back((nr as usize, nc as usize));
            }
        }
    }
    None
}

/// `(horizontal, wall index, gap index)` read off an interior crossing layout.
fn crossing_shape(env: &GridEnv) -> (bool, usize, usize) {
    let n = env.size();
    for k in 1..n - 1 {
        let row: Vec<bool> = (1..n - 1).map(|c| env.is_wall((k, c))).collect();
        if row.iter().filter(|&&w| w).count() == n - 3 {
            return (true, k, row.iter().position(|&w| !w).unwrap() + 1);
        }
        let col: Vec<bool> = (1..n - 1).map(|r| env.is_wall((r, k))).collect();
        if col.iter().filter(|&&w| w).count() == n - 3 {
            return (false, k, col.iter().position(|&w| !w).unwrap() + 1);
        }
    }
    panic!("no crossing wall found");
}

#[test]
fn crossing_layouts_vary_and_are_solvable() {
    let mut orientations = BTreeSet::new();
    let mut gaps = BTreeSet::new();
    for seed in 0..100 {
        let env = make_task(&TaskSpec::crossing(seed)).unwrap();
        let (horizontal, _, gap) = crossing_shape(&env);
        orientations.insert(horizontal);
        gaps.insert(gap);
        assert_eq!(env.start(), (1, 1));
        assert_eq!(env.goal(), (7, 7));
        let oracle = bfs(&env, env.start(), env.goal()).expect("goal reachable");
        assert_eq!(env.shortest_path_len(env.start(), env.goal()), Some(oracle));
    }
    assert!(orientations.len() >= 2);
    assert!(gaps.len() >= 3, "gaps {gaps:?}");
}

#[test]
fn crossing_seed_is_deterministic() {
    let a = make_task(&TaskSpec::crossing(7)).unwrap();
    let b = make_task(&TaskSpec::crossing(7)).unwrap();
    assert_eq!(a.walls(), b.walls());
    assert_eq!(a.render(), b.render());
}

#[test]
fn four_rooms_bfs_agrees_with_oracle() {
    let env = make_task(&TaskSpec::four_rooms(0)).unwrap();
    let free: Vec<(usize, usize)> = (0..env.size())
        .flat_map(|r| (0..env.size()).map(move |c| (r, c)))
        .filter(|&p| !env.is_wall(p))
        .collect();
    assert_eq!(free.len(), 68);
    for &p in &free {
        assert_eq!(env.shortest_path_len(env.start(), p), bfs(&env, env.start(), p));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Observations never reveal which corner holds the goal.
    #[test]
    fn four_rooms_observations_identical_across_goals(actions in prop::collection::vec(0usize..4, 1..150)) {
        let mut envs: Vec<GridEnv> = (0..4).map(|g| make_task(&TaskSpec::four_rooms(g)).unwrap()).collect();
        let first: Vec<_> = envs.iter_mut().map(|e| e.reset()).collect();
        prop_assert!(first.windows(2).all(|w| w[0] == w[1]));
        for a in actions {
            let steps: Vec<_> = envs.iter_mut().map(|e| e.step(a).unwrap()).collect();
            if steps.iter().any(|s| s.done) {
                break;
            }
            prop_assert!(steps.windows(2).all(|w| w[0].obs == w[1].obs));
        }
    }

    /// Episodes end by the horizon and only the goal step pays.
    #[test]
    fn episodes_respect_horizon(seed in 0u64..500, horizon in 1usize..60, actions in prop::collection::vec(0usize..3, 200)) {
        let mut env = make_task(&TaskSpec { horizon, ..TaskSpec::crossing(seed) }).unwrap();
        env.reset();
        let mut steps = 0;
        for a in actions {
            let r = env.step(a).unwrap();
            steps += 1;
            prop_assert!(env.state().steps_taken <= horizon);
            if r.info.reached_goal {
                prop_assert!(r.reward > 0.0);
            } else {
                prop_assert_eq!(r.reward, 0.0);
            }
            if r.done {
                break;
            }
        }
        prop_assert!(steps <= horizon);
    }
}
