//! Background bots. Scripted bots are pure functions of the observation
//! (plus the RNG for stochastic ones); checkpoint bots sample from a frozen
//! policy network.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;

use crate::checkpoint::load_checkpoint;
use crate::nn::{forward, sample_action, Params};
use crate::substrates::kitchen::{self, cell_at, neighbour, Cell, Facing, Held, Pos};
use crate::substrates::matrix::{COOPERATE, DEFECT, PAPER, ROCK, SCISSORS};
use crate::substrates::{CRAMPED_KITCHEN, PD_MATRIX, RPS_MATRIX};

use super::ScenarioError;

#[derive(Debug, Clone, PartialEq)]
pub enum BotPolicy {
    /// Always plays the same action.
    Constant(usize),
    UniformRandom {
        num_actions: usize,
    },
    /// Opens with action 0, then copies the opponent's previous action.
    TitForTat {
        num_actions: usize,
    },
    /// Plays the best response to the opponent's previous action; uniform on
    /// the first round.
    BestResponseToLast {
        substrate: &'static str,
    },
    KitchenCoordinator,
    Checkpoint(Arc<Params>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundBot {
    pub id: String,
    pub policy: BotPolicy,
}

impl BackgroundBot {
    pub fn is_deterministic(&self) -> bool {
        !matches!(
            self.policy,
            BotPolicy::UniformRandom { .. } | BotPolicy::BestResponseToLast { .. } | BotPolicy::Checkpoint(_)
        )
    }
}

fn matrix_actions(substrate: &str) -> Option<usize> {
    match substrate {
        RPS_MATRIX => Some(3),
        PD_MATRIX => Some(2),
        _ => None,
    }
}

fn static_substrate(substrate: &str) -> Option<&'static str> {
    [RPS_MATRIX, PD_MATRIX, CRAMPED_KITCHEN]
        .into_iter()
        .find(|s| *s == substrate)
}

/// Resolves a bot identifier for use on `substrate`.
///
/// Checkpoint bots are written `ckpt:<path>` (agent 0) or
/// `ckpt:<path>#<agent>`.
pub fn resolve_bot(id: &str, substrate: &str) -> Result<BackgroundBot, ScenarioError> {
    let unknown = || ScenarioError::UnknownBot {
        bot: id.to_string(),
        substrate: substrate.to_string(),
    };
    let num_actions = match substrate {
        CRAMPED_KITCHEN => kitchen::NUM_ACTIONS,
        s => matrix_actions(s).ok_or_else(|| ScenarioError::UnknownSubstrate(s.to_string()))?,
    };

    if let Some(rest) = id.strip_prefix("ckpt:") {
        let (path, agent) = match rest.rsplit_once('#') {
            Some((p, a)) => (p, a.parse::<usize>().map_err(|_| unknown())?),
            None => (rest, 0),
        };
        let population = load_checkpoint(Path::new(path))?;
        let params = population
            .into_iter()
            .nth(agent)
            .ok_or_else(|| ScenarioError::ArityMismatch(format!("checkpoint {path} has no agent {agent}")))?;
        return Ok(BackgroundBot {
            id: id.to_string(),
            policy: BotPolicy::Checkpoint(Arc::new(params)),
        });
    }

    let policy = match (id, substrate) {
        ("always_rock", RPS_MATRIX) => BotPolicy::Constant(ROCK),
        ("always_paper", RPS_MATRIX) => BotPolicy::Constant(PAPER),
        ("always_scissors", RPS_MATRIX) => BotPolicy::Constant(SCISSORS),
        ("always_cooperate", PD_MATRIX) => BotPolicy::Constant(COOPERATE),
        ("always_defect", PD_MATRIX) => BotPolicy::Constant(DEFECT),
        ("tit_for_tat", RPS_MATRIX | PD_MATRIX) => BotPolicy::TitForTat { num_actions },
        ("best_response_to_last", RPS_MATRIX | PD_MATRIX) => BotPolicy::BestResponseToLast {
            substrate: static_substrate(substrate).expect("matched above"),
        },
        ("kitchen_coordinator", CRAMPED_KITCHEN) => BotPolicy::KitchenCoordinator,
        ("always_stay", CRAMPED_KITCHEN) => BotPolicy::Constant(kitchen::STAY),
        ("uniform_random", _) => BotPolicy::UniformRandom { num_actions },
        _ => return Err(unknown()),
    };
    Ok(BackgroundBot {
        id: id.to_string(),
        policy,
    })
}

fn opponent_last(observation: &[f32], num_actions: usize) -> Option<usize> {
    if observation[2 * num_actions] > 0.5 {
        return None;
    }
    (0..num_actions).find(|&a| observation[num_actions + a] > 0.5)
}

pub fn bot_action<R: Rng + ?Sized>(bot: &BackgroundBot, observation: &[f32], rng: &mut R) -> usize {
    match &bot.policy {
        BotPolicy::Constant(a) => *a,
        BotPolicy::UniformRandom { num_actions } => rng.gen_range(0..*num_actions),
        BotPolicy::TitForTat { num_actions } => opponent_last(observation, *num_actions).unwrap_or(0),
        BotPolicy::BestResponseToLast { substrate } => {
            let num_actions = matrix_actions(substrate).expect("matrix substrate");
            match opponent_last(observation, num_actions) {
                None => rng.gen_range(0..num_actions),
                Some(last) if *substrate == RPS_MATRIX => (last + 1) % 3,
                Some(_) => DEFECT,
            }
        }
        BotPolicy::KitchenCoordinator => coordinator_action(observation),
        BotPolicy::Checkpoint(params) => {
            let (logits, _) = forward(params, observation).expect("checkpoint bot arity checked at scenario build");
            sample_action(&logits, rng).0
        }
    }
}

fn argmax(xs: &[f32]) -> usize {
    xs.iter()
        .enumerate()
        .fold(
            (0, f32::NEG_INFINITY),
            |best, (i, &x)| if x > best.1 { (i, x) } else { best },
        )
        .0
}

fn decode_pos(x: f32, y: f32) -> Pos {
    (
        (x * (kitchen::WIDTH - 1) as f32).round() as usize,
        (y * (kitchen::HEIGHT - 1) as f32).round() as usize,
    )
}

fn direction_action(facing: Facing) -> usize {
    match facing {
        Facing::Up => kitchen::UP,
        Facing::Down => kitchen::DOWN,
        Facing::Left => kitchen::LEFT,
        Facing::Right => kitchen::RIGHT,
    }
}

const DIRECTIONS: [Facing; 4] = [Facing::Up, Facing::Down, Facing::Left, Facing::Right];

/// Greedy single-cook policy: fill the pot with onions, fetch a dish while it
/// cooks, scoop, deliver. Navigation is BFS over floor cells treating the
/// partner as an obstacle.
fn coordinator_action(obs: &[f32]) -> usize {
    let me = decode_pos(obs[0], obs[1]);
    let facing = Facing::from_index(argmax(&obs[2..6]));
    let held = match argmax(&obs[6..10]) {
        0 => Held::Nothing,
        1 => Held::Onion,
        2 => Held::Dish,
        _ => Held::Soup,
    };
    let partner = decode_pos(obs[10], obs[11]);
    let pot_onions = (obs[20] * 3.0).round() as u32;

    let target = match held {
        Held::Nothing if pot_onions < 3 => Cell::OnionPile,
        Held::Nothing => Cell::DishPile,
        Held::Onion if pot_onions < 3 => Cell::Pot,
        Held::Onion => return kitchen::STAY,
        Held::Dish => Cell::Pot,
        Held::Soup => Cell::Window,
    };

    // Already adjacent to a target cell: face it and interact.
    for dir in DIRECTIONS {
        if let Some((x, y)) = neighbour(me, dir) {
            if cell_at(x, y) == target {
                return if dir == facing {
                    kitchen::INTERACT
                } else {
                    direction_action(dir)
                };
            }
        }
    }

    let is_goal = |p: Pos| {
        DIRECTIONS
            .iter()
            .any(|&d| neighbour(p, d).is_some_and(|(x, y)| cell_at(x, y) == target))
    };
    first_step_towards(me, partner, is_goal).map_or(kitchen::STAY, direction_action)
}

fn first_step_towards(start: Pos, blocked: Pos, is_goal: impl Fn(Pos) -> bool) -> Option<Facing> {
    let mut seen = vec![start];
    let mut queue = VecDeque::new();
    for dir in DIRECTIONS {
        if let Some(p) = neighbour(start, dir) {
            if cell_at(p.0, p.1) == Cell::Floor && p != blocked && !seen.contains(&p) {
                seen.push(p);
                queue.push_back((p, dir));
            }
        }
    }
    while let Some((p, first)) = queue.pop_front() {
        if is_goal(p) {
            return Some(first);
        }
        for dir in DIRECTIONS {
            if let Some(q) = neighbour(p, dir) {
                if cell_at(q.0, q.1) == Cell::Floor && q != blocked && !seen.contains(&q) {
                    seen.push(q);
                    queue.push_back((q, first));
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn always_rock_ignores_observation() {
        let bot = resolve_bot("always_rock", RPS_MATRIX).unwrap();
        assert_eq!(bot_action(&bot, &[0.0; 7], &mut rng()), ROCK);
        assert_eq!(bot_action(&bot, &[0., 1., 0., 0., 0., 1., 0.], &mut rng()), ROCK);
    }

    #[test]
    fn tit_for_tat_on_pd() {
        let bot = resolve_bot("tit_for_tat", PD_MATRIX).unwrap();
        // First round: flag set.
        assert_eq!(bot_action(&bot, &[0., 0., 0., 0., 1.], &mut rng()), COOPERATE);
        // Opponent defected last round.
        assert_eq!(bot_action(&bot, &[1., 0., 0., 1., 0.], &mut rng()), DEFECT);
        assert_eq!(bot_action(&bot, &[0., 1., 1., 0., 0.], &mut rng()), COOPERATE);
    }

    #[test]
    fn best_response_to_last_rps() {
        let bot = resolve_bot("best_response_to_last", RPS_MATRIX).unwrap();
        // Opponent last played scissors -> rock.
        assert_eq!(bot_action(&bot, &[1., 0., 0., 0., 0., 1., 0.], &mut rng()), ROCK);
        assert_eq!(bot_action(&bot, &[1., 0., 0., 1., 0., 0., 0.], &mut rng()), PAPER);
    }

    #[test]
    fn unknown_or_mismatched_bots_are_rejected() {
        assert!(matches!(
            resolve_bot("always_rock", PD_MATRIX),
            Err(ScenarioError::UnknownBot { .. })
        ));
        assert!(matches!(
            resolve_bot("nobody", RPS_MATRIX),
            Err(ScenarioError::UnknownBot { .. })
        ));
        assert!(matches!(
            resolve_bot("ckpt:/definitely/not/here.majx", RPS_MATRIX),
            Err(ScenarioError::CheckpointLoad(_))
        ));
    }

    #[test]
    fn coordinator_heads_for_onions_first() {
        let state = kitchen::KitchenState::initial();
        // Agent 1 at (3,1) facing up: the onion pile is to its right.
        assert_eq!(coordinator_action(&state.observation(1)), kitchen::RIGHT);
        // Agent 0 at (1,2): nearest onion approach is (1,1), one step up.
        assert_eq!(coordinator_action(&state.observation(0)), kitchen::UP);
    }
}
