use pac_envs::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn desk() -> PredatorPrey {
    PredatorPrey::new(PredatorPreyConfig::desk(-1.5)).unwrap()
}

fn small(n_pred: usize, n_prey: usize, penalty: f32) -> PredatorPrey {
    PredatorPrey::new(PredatorPreyConfig {
        width: 5,
        height: 5,
        n_predators: n_pred,
        n_prey,
        miscapture_penalty: penalty,
        episode_limit: 50,
        ..PredatorPreyConfig::desk(0.0)
    })
    .unwrap()
}

#[test]
fn matrix_game_observations() {
    let mut env = MatrixGame::new(MatrixGameConfig::default()).unwrap();
    let mut seen = [false; 2];
    for seed in 0..32 {
        let o = env.reset(seed);
        let s = env.current_state();
        seen[s] = true;
        let mut one_hot = [0.0; 2];
        one_hot[s] = 1.0;
        assert_eq!(o.state, one_hot);
        assert_eq!(&o.obs[..2], &[1.0, 0.0]);
        assert_eq!(&o.obs[2..], &one_hot);
        assert!(o.avail.iter().all(|&a| a));
    }
    assert!(seen[0] && seen[1]);
}

#[test]
fn matrix_game_payoffs() {
    let cfg = MatrixGameConfig::default();
    let mut env = MatrixGame::new(cfg.clone()).unwrap();
    let mut play = |state: usize, a: [usize; 2]| {
        let seed = (0..).find(|&s| {
            env.reset(s);
            env.current_state() == state
        });
        env.reset(seed.unwrap());
        let r = env.step(&a).unwrap();
        assert!(r.terminated && !r.truncated);
        r.reward
    };
    assert_eq!(play(0, [0, 0]), 4.0);
    assert_eq!(play(0, [1, 1]), 0.0);
    assert_eq!(play(0, [0, 1]), -2.0);
    assert_eq!(play(1, [1, 0]), 4.0);
    assert_eq!(play(1, [0, 0]), -2.0);

    for s in 0..2 {
        let best = cfg.payoff(s).iter().flatten().fold(f32::MIN, |a, &b| a.max(b));
        assert_eq!(best, 4.0);
        let mean: f32 = cfg.payoff(s).iter().flatten().sum::<f32>() / 9.0;
        assert!((mean + 4.0 / 9.0).abs() < 1e-6);
    }
}

#[test]
fn matrix_game_rejects_bad_input() {
    let mut env = MatrixGame::new(MatrixGameConfig::default()).unwrap();
    env.reset(1);
    assert_eq!(
        env.step(&[3, 0]),
        Err(EnvError::UnavailableAction { agent: 0, action: 3 })
    );
    assert!(matches!(env.step(&[0]), Err(EnvError::ActionCount { .. })));
    env.step(&[0, 0]).unwrap();
    assert_eq!(env.step(&[0, 0]), Err(EnvError::EpisodeOver));
    let cfg = MatrixGameConfig {
        episode_limit: 0,
        ..Default::default()
    };
    assert!(MatrixGame::new(cfg).is_err());
}

#[test]
fn multi_step_matrix_game_runs_to_limit() {
    let mut env = MatrixGame::new(MatrixGameConfig {
        episode_limit: 3,
        ..Default::default()
    })
    .unwrap();
    env.reset(4);
    assert!(!env.step(&[0, 0]).unwrap().terminated);
    assert!(!env.step(&[0, 0]).unwrap().terminated);
    assert!(env.step(&[0, 0]).unwrap().terminated);
}

#[test]
fn predator_prey_reset_places_distinct_cells() {
    let mut env = PredatorPrey::new(PredatorPreyConfig::paper(0.0)).unwrap();
    let o = env.reset(9);
    assert_eq!(env.spec().n_agents, 8);
    assert_eq!(o.obs.len(), 8 * 50);
    let mut cells: Vec<_> = env
        .predator_positions()
        .iter()
        .chain(env.prey_positions())
        .map(|p| p.unwrap())
        .collect();
    assert_eq!(cells.len(), 16);
    cells.sort();
    cells.dedup();
    assert_eq!(cells.len(), 16);

    let a = env.reset(9);
    let mut other = PredatorPrey::new(PredatorPreyConfig::paper(0.0)).unwrap();
    assert_eq!(other.reset(9), a);
    assert_eq!(other.predator_positions(), env.predator_positions());
}

#[test]
fn corner_predator_masks_off_grid_moves() {
    let mut env = small(1, 1, 0.0);
    env.set_positions(&[Some((0, 0))], &[Some((4, 4))]).unwrap();
    let m = env.avail_actions();
    assert_eq!(m, vec![true, false, true, false, true, false]);
}

#[test]
fn catch_requires_adjacent_prey_and_moves_need_free_cells() {
    let mut env = small(2, 1, 0.0);
    env.set_positions(&[Some((2, 2)), Some((2, 3))], &[Some((1, 2))])
        .unwrap();
    let m = env.avail_actions();
    // agent 0: north is the prey, east is agent 1
    assert_eq!(&m[..6], &[true, false, true, true, false, true]);
    // agent 1: not adjacent to the prey
    assert_eq!(&m[6..], &[true, true, true, false, true, false]);
}

#[test]
fn removed_agents_can_only_stay() {
    let mut env = small(2, 1, 0.0);
    env.set_positions(&[None, Some((0, 0))], &[Some((3, 3))]).unwrap();
    let m = env.avail_actions();
    assert_eq!(&m[..6], &[true, false, false, false, false, false]);
    assert!(env.observe(0).iter().all(|&v| v == 0.0));
    assert!(env.step(&[1, 0]).is_err());
}

#[test]
fn lone_predator_observation() {
    let mut env = small(1, 1, 0.0);
    env.set_positions(&[Some((2, 2))], &[Some((1, 2))]).unwrap();
    let o = env.observe(0);
    let (agents, prey) = o.split_at(25);
    for (k, &v) in agents.iter().enumerate() {
        assert_eq!(v, if k == 12 { 1.0 } else { 0.0 });
    }
    // prey directly north: window row 1, col 2
    for (k, &v) in prey.iter().enumerate() {
        assert_eq!(v, if k == 7 { 1.0 } else { 0.0 });
    }
}

#[test]
fn edge_observation_matches_hand_built_window() {
    let mut env = small(2, 1, 0.0);
    env.set_positions(&[Some((0, 1)), Some((1, 3))], &[Some((2, 0))])
        .unwrap();
    let o = env.observe(0);
    #[rustfmt::skip]
    let agents = [
        -1., -1., -1., -1., -1.,
        -1., -1., -1., -1., -1.,
        -1.,  0.,  1.,  0.,  0.,
        -1.,  0.,  0.,  0.,  1.,
        -1.,  0.,  0.,  0.,  0.,
    ];
    #[rustfmt::skip]
    let prey = [
        -1., -1., -1., -1., -1.,
        -1., -1., -1., -1., -1.,
        -1.,  0.,  0.,  0.,  0.,
        -1.,  0.,  0.,  0.,  0.,
        -1.,  1.,  0.,  0.,  0.,
    ];
    assert_eq!(&o[..25], &agents);
    assert_eq!(&o[25..], &prey);
}

#[test]
fn joint_catch_captures_and_removes() {
    let mut env = small(3, 2, -2.0);
    env.set_positions(
        &[Some((1, 2)), Some((2, 1)), Some((4, 4))],
        &[Some((2, 2)), Some((0, 4))],
    )
    .unwrap();
    let r = env.step(&[CATCH, CATCH, STAY]).unwrap();
    assert_eq!(r.reward, 10.0);
    assert_eq!(env.predator_positions()[0], None);
    assert_eq!(env.predator_positions()[1], None);
    assert!(env.predator_positions()[2].is_some());
    assert_eq!(env.prey_positions()[0], None);
    assert_eq!(env.stats().captures, Some(1));
    assert!(!r.terminated);
}

#[test]
fn single_catch_is_penalised() {
    let mut env = small(2, 1, -2.0);
    env.set_positions(&[Some((1, 2)), Some((4, 4))], &[Some((2, 2))])
        .unwrap();
    let r = env.step(&[CATCH, STAY]).unwrap();
    assert_eq!(r.reward, -2.0);
    assert!(env.predator_positions()[0].is_some());
    assert_eq!(env.stats().captures, Some(0));
}

#[test]
fn third_catcher_is_not_removed_or_penalised() {
    let mut env = small(3, 1, -2.0);
    env.set_positions(&[Some((1, 2)), Some((2, 1)), Some((2, 3))], &[Some((2, 2))])
        .unwrap();
    let r = env.step(&[CATCH, CATCH, CATCH]).unwrap();
    assert_eq!(r.reward, 10.0);
    assert_eq!(env.predator_positions()[..2], [None, None]);
    assert!(env.predator_positions()[2].is_some());
    assert!(r.terminated, "all prey captured");
}

#[test]
fn episode_ends_when_all_predators_are_removed() {
    let mut env = small(2, 2, 0.0);
    env.set_positions(&[Some((1, 2)), Some((2, 1))], &[Some((2, 2)), Some((4, 4))])
        .unwrap();
    let r = env.step(&[CATCH, CATCH]).unwrap();
    assert!(r.terminated);
    assert!(!r.truncated);
    assert_eq!(env.step(&[STAY, STAY]), Err(EnvError::EpisodeOver));
}

#[test]
fn invalid_configs_are_rejected() {
    let even = PredatorPreyConfig {
        obs_window: 4,
        ..PredatorPreyConfig::desk(0.0)
    };
    assert!(PredatorPrey::new(even).is_err());
    let crowded = PredatorPreyConfig {
        width: 2,
        height: 2,
        ..PredatorPreyConfig::desk(0.0)
    };
    assert!(PredatorPrey::new(crowded).is_err());
}

/// Random available actions for many episodes: shared reward, conservation,
/// termination bound, availability soundness.
#[test]
fn random_play_respects_invariants() {
    let mut env = desk();
    let spec = env.spec().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for ep in 0..40 {
        let mut o = env.reset(ep);
        let mut steps = 0;
        loop {
            let mut actions = Vec::new();
            for i in 0..spec.n_agents {
                let row = &o.avail[i * 6..(i + 1) * 6];
                assert!(row.iter().any(|&a| a));
                let opts: Vec<usize> = (0..6).filter(|&a| row[a]).collect();
                // bias toward catching so captures happen
                let a = if row[CATCH] && rng.random_bool(0.7) {
                    CATCH
                } else {
                    opts[rng.random_range(0..opts.len())]
                };
                actions.push(a);
            }
            if let Some(i) = (0..spec.n_agents).find(|&i| !o.avail[i * 6 + CATCH]) {
                let mut bad = actions.clone();
                bad[i] = CATCH;
                let mut probe = env.clone();
                assert!(probe.step(&bad).is_err());
            }
            let r = env.step(&actions).unwrap();
            steps += 1;
            let removed = env.predator_positions().iter().filter(|p| p.is_none()).count();
            assert_eq!(removed / 2, env.stats().captures.unwrap() as usize);
            assert_eq!(removed % 2, 0);
            assert!(!(r.terminated && r.truncated));
            o = r.next;
            if r.terminated || r.truncated {
                break;
            }
        }
        assert!(steps <= spec.episode_limit);
    }
}
