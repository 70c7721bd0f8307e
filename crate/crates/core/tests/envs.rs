use marl_core::envcore::{EnvError, Environment, StepType, TimeStep};
use marl_core::scenarios::{list_scenarios, make_env};
use marl_core::substrates::kitchen::{DOWN, INTERACT, LEFT, RIGHT, SOUP_REWARD, STAY, UP};
use marl_core::substrates::{Kitchen, SUBSTRATES};
use proptest::prelude::*;

/// Both cooks working together from reset. Hand-executing the transition
/// rules (interacts, then moves, then the pot timer):
///
/// | step | cook 0                         | cook 1                           |
/// |------|--------------------------------|----------------------------------|
/// | 1    | up to (1,1)                    | turn right toward onion pile     |
/// | 2    | turn left toward onion pile    | take onion                       |
/// | 3    | take onion                     | left to (2,1)                    |
/// | 4    | stay                           | turn up toward pot               |
/// | 5    | stay                           | onion in (pot 1)                 |
/// | 6    | right to (2,1)                 | right to (3,1), facing pile      |
/// | 7    | turn up                        | take onion                       |
/// | 8    | onion in (pot 2)               | stay                             |
/// | 9    | left to (1,1)                  | left to (2,1)                    |
/// | 10   | down to (1,2), facing dishes   | turn up                          |
/// | 11   | take dish                      | onion in (pot 3), timer 20 → 19  |
/// | 12   | up to (1,1)                    | right to (3,1)                   |
/// | 13   | right to (2,1)                 | down to (3,2)                    |
/// | 14   | turn up                        | left to (2,2)                    |
///
/// The timer reads `30 - s` after step `s`, so the soup is ready from step
/// 31: scoop (31), right to (3,1) (32), down to (3,2) facing the window
/// (33), deliver (34).
const FIRST_DELIVERY: usize = 34;

fn delivery_script() -> Vec<[usize; 2]> {
    let mut script = vec![
        [UP, RIGHT],
        [LEFT, INTERACT],
        [INTERACT, LEFT],
        [STAY, UP],
        [STAY, INTERACT],
        [RIGHT, RIGHT],
        [UP, INTERACT],
        [INTERACT, STAY],
        [LEFT, LEFT],
        [DOWN, UP],
        [INTERACT, INTERACT],
        [UP, RIGHT],
        [RIGHT, DOWN],
        [UP, LEFT],
    ];
    script.resize(30, [STAY, STAY]);
    script.extend([[INTERACT, STAY], [RIGHT, STAY], [DOWN, STAY], [INTERACT, STAY]]);
    script
}

#[test]
fn scripted_kitchen_delivers_first_soup_at_hand_computed_step() {
    let mut env = Kitchen::new();
    env.reset();
    let script = delivery_script();
    assert_eq!(script.len(), FIRST_DELIVERY);
    for (i, actions) in script.iter().enumerate() {
        let ts = env.step(actions).unwrap();
        let step = i + 1;
        if step == 11 {
            assert_eq!((env.state().pot_onions, env.state().cook_timer), (3, 19));
        }
        if step == 30 {
            assert!(env.state().soup_ready());
        }
        if step < FIRST_DELIVERY {
            assert_eq!(ts.rewards, vec![0.0, 0.0], "step {step}");
        } else {
            assert_eq!(ts.rewards, vec![SOUP_REWARD, SOUP_REWARD]);
            assert_eq!(ts.step_type, StepType::Mid);
        }
    }
    assert_eq!(env.state().deliveries, 1);
    assert_eq!(env.state().pot_onions, 0);
}

fn all_env_names() -> Vec<String> {
    let mut names: Vec<String> = SUBSTRATES.iter().map(|s| s.to_string()).collect();
    for s in SUBSTRATES {
        names.extend(list_scenarios(s).unwrap().into_iter().map(|sc| sc.name));
    }
    names
}

fn check_shape(ts: &TimeStep, players: usize, obs_dim: usize) {
    assert_eq!(ts.rewards.len(), players);
    assert_eq!(ts.observations.len(), players);
    assert!(ts.observations.iter().all(|o| o.len() == obs_dim));
    assert!(ts
        .rewards
        .iter()
        .chain(ts.observations.iter().flatten())
        .all(|x| x.is_finite()));
}

/// Plays `episodes` episodes with actions drawn from `choices` and returns
/// every time step seen.
fn play(name: &str, seed: u64, choices: &[usize], episodes: usize) -> Vec<TimeStep> {
    let mut env = make_env(name, seed).unwrap();
    let spec = env.spec();
    let mut seen = Vec::new();
    let mut k = 0;
    for _ in 0..episodes {
        let first = env.reset();
        assert_eq!((first.step_type, first.discount), (StepType::First, 1.0));
        check_shape(&first, spec.num_players, spec.obs_dim);
        seen.push(first);
        let mut len = 0;
        loop {
            let actions: Vec<usize> = (0..spec.num_players)
                .map(|p| choices[(k + p) % choices.len()] % spec.num_actions)
                .collect();
            k += 1;
            let ts = env.step(&actions).unwrap();
            len += 1;
            check_shape(&ts, spec.num_players, spec.obs_dim);
            assert!(len <= spec.max_episode_len);
            let last = ts.step_type == StepType::Last;
            if last {
                assert!(ts.discount == 0.0 || ts.discount == 1.0);
                if ts.discount == 1.0 {
                    assert_eq!(len, spec.max_episode_len, "truncation only at the step limit");
                }
            } else {
                assert_eq!((ts.step_type, ts.discount), (StepType::Mid, 1.0));
            }
            seen.push(ts);
            if last {
                break;
            }
        }
        assert!(matches!(
            env.step(&vec![0; spec.num_players]),
            Err(EnvError::StepAfterEnd)
        ));
    }
    seen
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_env_follows_the_step_protocol_and_is_deterministic(
        seed in any::<u64>(),
        choices in prop::collection::vec(0usize..6, 1..40),
    ) {
        for name in all_env_names() {
            let a = play(&name, seed, &choices, 2);
            let b = play(&name, seed, &choices, 2);
            prop_assert_eq!(a, b, "{}", name);
        }
    }
}

#[test]
fn bad_joint_actions_are_rejected() {
    for name in all_env_names() {
        let mut env = make_env(&name, 0).unwrap();
        let spec = env.spec();
        assert!(matches!(
            env.step(&vec![0; spec.num_players]),
            Err(EnvError::StepAfterEnd)
        ));
        env.reset();
        assert!(matches!(
            env.step(&vec![0; spec.num_players + 1]),
            Err(EnvError::BadActionCount { .. })
        ));
        assert!(matches!(
            env.step(&vec![spec.num_actions; spec.num_players]),
            Err(EnvError::ActionOutOfRange { .. })
        ));
        // A rejected step leaves the episode usable.
        assert_eq!(env.step(&vec![0; spec.num_players]).unwrap().step_type, StepType::Mid);
    }
}
