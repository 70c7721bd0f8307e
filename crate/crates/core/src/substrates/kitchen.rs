//! A two-cook kitchen on a fixed 5×4 "cramped room" map.
//!
//! ```text
//!   x: 0 1 2 3 4
//! y0:  # # P # #
//! y1:  O . . . O
//! y2:  # . . . #
//! y3:  # D # S #
//! ```
//!
//! `#` wall, `O` onion pile, `P` pot, `D` dish pile, `S` serving window,
//! `.` floor. Agent 0 starts at (1,2), agent 1 at (3,1), both facing up.
//!
//! Recipe: three onions into the pot start a `COOK_TIME`-tick timer; once it
//! reaches zero, an agent holding a dish scoops the soup and delivers it at the
//! window for `SOUP_REWARD` to both agents.
//!
//! Tick order: interacts resolve first (agent 0 then agent 1), then movement,
//! then the pot timer counts down by one.
//!
//! Per-agent observation (ego-centric, `OBS_DIM = 23`):
//! own x/4, own y/3, own facing one-hot (4: up, down, left, right), own held
//! one-hot (4: nothing, onion, dish, soup), then the same 10 features for the
//! partner, then pot onions/3, pot timer/`COOK_TIME`, soup-ready flag.

use crate::envcore::{EnvError, EnvSpec, Environment, EpisodeClock, TimeStep};

pub const WIDTH: usize = 5;
pub const HEIGHT: usize = 4;
pub const COOK_TIME: u32 = 20;
pub const SOUP_REWARD: f32 = 20.0;
pub const MAX_EPISODE_LEN: usize = 200;
pub const NUM_ACTIONS: usize = 6;
pub const OBS_DIM: usize = 23;

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;
pub const STAY: usize = 4;
pub const INTERACT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Wall,
    Floor,
    OnionPile,
    Pot,
    DishPile,
    Window,
}

const LAYOUT: [&str; HEIGHT] = ["##P##", "O...O", "#...#", "#D#S#"];

pub fn cell_at(x: usize, y: usize) -> Cell {
    match LAYOUT[y].as_bytes()[x] {
        b'.' => Cell::Floor,
        b'O' => Cell::OnionPile,
        b'P' => Cell::Pot,
        b'D' => Cell::DishPile,
        b'S' => Cell::Window,
        _ => Cell::Wall,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Facing {
    Up,
    Down,
    Left,
    Right,
}

impl Facing {
    pub fn index(self) -> usize {
        match self {
            Facing::Up => 0,
            Facing::Down => 1,
            Facing::Left => 2,
            Facing::Right => 3,
        }
    }

    pub fn from_index(i: usize) -> Self {
        [Facing::Up, Facing::Down, Facing::Left, Facing::Right][i]
    }

    fn from_action(action: usize) -> Option<Self> {
        (action < 4).then(|| Self::from_index(action))
    }

    pub fn delta(self) -> (isize, isize) {
        match self {
            Facing::Up => (0, -1),
            Facing::Down => (0, 1),
            Facing::Left => (-1, 0),
            Facing::Right => (1, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Held {
    Nothing,
    Onion,
    Dish,
    Soup,
}

impl Held {
    pub fn index(self) -> usize {
        match self {
            Held::Nothing => 0,
            Held::Onion => 1,
            Held::Dish => 2,
            Held::Soup => 3,
        }
    }
}

pub type Pos = (usize, usize);

/// The neighbouring grid coordinate in direction `facing`, if on the map.
pub fn neighbour(pos: Pos, facing: Facing) -> Option<Pos> {
    let (dx, dy) = facing.delta();
    let x = pos.0.checked_add_signed(dx)?;
    let y = pos.1.checked_add_signed(dy)?;
    (x < WIDTH && y < HEIGHT).then_some((x, y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cook {
    pub pos: Pos,
    pub facing: Facing,
    pub held: Held,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct KitchenState {
    pub agents: [Cook; 2],
    pub pot_onions: u32,
    /// Ticks until the soup is ready; nonzero only while three onions cook.
    pub cook_timer: u32,
    pub onions_inserted: u64,
    pub deliveries: u64,
}

impl KitchenState {
    pub fn initial() -> Self {
        Self {
            agents: [
                Cook {
                    pos: (1, 2),
                    facing: Facing::Up,
                    held: Held::Nothing,
                },
                Cook {
                    pos: (3, 1),
                    facing: Facing::Up,
                    held: Held::Nothing,
                },
            ],
            pot_onions: 0,
            cook_timer: 0,
            onions_inserted: 0,
            deliveries: 0,
        }
    }

    pub fn soup_ready(&self) -> bool {
        self.pot_onions == 3 && self.cook_timer == 0
    }

    pub fn observation(&self, player: usize) -> Vec<f32> {
        let mut obs = Vec::with_capacity(OBS_DIM);
        for cook in [&self.agents[player], &self.agents[1 - player]] {
            obs.push(cook.pos.0 as f32 / (WIDTH - 1) as f32);
            obs.push(cook.pos.1 as f32 / (HEIGHT - 1) as f32);
            let mut facing = [0.0; 4];
            facing[cook.facing.index()] = 1.0;
            obs.extend_from_slice(&facing);
            let mut held = [0.0; 4];
            held[cook.held.index()] = 1.0;
            obs.extend_from_slice(&held);
        }
        obs.push(self.pot_onions as f32 / 3.0);
        obs.push(self.cook_timer as f32 / COOK_TIME as f32);
        obs.push(if self.soup_ready() { 1.0 } else { 0.0 });
        obs
    }
}

fn interact(state: &mut KitchenState, who: usize) -> f32 {
    let cook = state.agents[who];
    let Some((x, y)) = neighbour(cook.pos, cook.facing) else {
        return 0.0;
    };
    let mut reward = 0.0;
    let held = match (cell_at(x, y), cook.held) {
        (Cell::OnionPile, Held::Nothing) => Held::Onion,
        (Cell::DishPile, Held::Nothing) => Held::Dish,
        (Cell::Pot, Held::Onion) if state.pot_onions < 3 => {
            state.pot_onions += 1;
            state.onions_inserted += 1;
            if state.pot_onions == 3 {
                state.cook_timer = COOK_TIME;
            }
            Held::Nothing
        }
        (Cell::Pot, Held::Dish) if state.soup_ready() => {
            state.pot_onions = 0;
            Held::Soup
        }
        (Cell::Window, Held::Soup) => {
            state.deliveries += 1;
            reward = SOUP_REWARD;
            Held::Nothing
        }
        (_, held) => held,
    };
    state.agents[who].held = held;
    reward
}

/// Applies one simultaneous joint action. Invalid interacts are no-ops.
///
/// Movement turns the agent toward the chosen direction and moves it when the
/// target is free floor. Two agents targeting the same cell, or trying to swap
/// cells, both stay put.
pub fn kitchen_step(state: &KitchenState, actions: [usize; 2]) -> (KitchenState, [f32; 2]) {
    let mut next = state.clone();
    let mut reward = 0.0;
    for (who, &action) in actions.iter().enumerate() {
        if action == INTERACT {
            reward += interact(&mut next, who);
        }
    }

    let mut proposed = [next.agents[0].pos, next.agents[1].pos];
    for (who, &action) in actions.iter().enumerate() {
        if let Some(facing) = Facing::from_action(action) {
            next.agents[who].facing = facing;
            if let Some((x, y)) = neighbour(next.agents[who].pos, facing) {
                if cell_at(x, y) == Cell::Floor {
                    proposed[who] = (x, y);
                }
            }
        }
    }
    let current = [next.agents[0].pos, next.agents[1].pos];
    let same_target = proposed[0] == proposed[1];
    let swap = proposed[0] == current[1] && proposed[1] == current[0];
    if !same_target && !swap {
        next.agents[0].pos = proposed[0];
        next.agents[1].pos = proposed[1];
    }

    if next.cook_timer > 0 {
        next.cook_timer -= 1;
    }
    (next, [reward, reward])
}

pub struct Kitchen {
    state: KitchenState,
    clock: EpisodeClock,
}

impl Kitchen {
    pub fn new() -> Self {
        Self {
            state: KitchenState::initial(),
            clock: EpisodeClock::new(Self::env_spec()),
        }
    }

    fn env_spec() -> EnvSpec {
        EnvSpec {
            num_players: 2,
            obs_dim: OBS_DIM,
            num_actions: NUM_ACTIONS,
            max_episode_len: MAX_EPISODE_LEN,
        }
    }

    pub fn state(&self) -> &KitchenState {
        &self.state
    }

    fn observations(&self) -> Vec<Vec<f32>> {
        vec![self.state.observation(0), self.state.observation(1)]
    }
}

impl Default for Kitchen {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for Kitchen {
    fn reset(&mut self) -> TimeStep {
        self.clock.reset();
        self.state = KitchenState::initial();
        TimeStep::first(self.observations())
    }

    fn step(&mut self, actions: &[usize]) -> Result<TimeStep, EnvError> {
        self.clock.check(actions)?;
        let (next, rewards) = kitchen_step(&self.state, [actions[0], actions[1]]);
        self.state = next;
        let (step_type, discount) = self.clock.advance(false);
        Ok(TimeStep {
            step_type,
            rewards: rewards.to_vec(),
            discount,
            observations: self.observations(),
        })
    }

    fn spec(&self) -> EnvSpec {
        Self::env_spec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(state: &KitchenState, a0: usize, a1: usize) -> (KitchenState, [f32; 2]) {
        kitchen_step(state, [a0, a1])
    }

    #[test]
    fn layout_matches_map() {
        assert_eq!(cell_at(2, 0), Cell::Pot);
        assert_eq!(cell_at(0, 1), Cell::OnionPile);
        assert_eq!(cell_at(4, 1), Cell::OnionPile);
        assert_eq!(cell_at(1, 3), Cell::DishPile);
        assert_eq!(cell_at(3, 3), Cell::Window);
        let floor = (0..HEIGHT)
            .flat_map(|y| (0..WIDTH).map(move |x| (x, y)))
            .filter(|&(x, y)| cell_at(x, y) == Cell::Floor)
            .count();
        assert_eq!(floor, 6);
    }

    #[test]
    fn interact_facing_wall_is_noop() {
        let mut s = KitchenState::initial();
        // Agent 1 at (3,1) facing up sees the wall at (3,0).
        s.agents[1].facing = Facing::Up;
        let (next, r) = step(&s, STAY, INTERACT);
        assert_eq!(next, s);
        assert_eq!(r, [0.0, 0.0]);
    }

    #[test]
    fn same_target_collision_blocks_both() {
        let mut s = KitchenState::initial();
        s.agents[0].pos = (1, 1);
        s.agents[1].pos = (3, 1);
        let (next, _) = step(&s, RIGHT, LEFT);
        assert_eq!(next.agents[0].pos, (1, 1));
        assert_eq!(next.agents[1].pos, (3, 1));
        assert_eq!(next.agents[0].facing, Facing::Right);
        assert_eq!(next.agents[1].facing, Facing::Left);
    }

    #[test]
    fn swap_blocks_both() {
        let mut s = KitchenState::initial();
        s.agents[0].pos = (1, 1);
        s.agents[1].pos = (2, 1);
        let (next, _) = step(&s, RIGHT, LEFT);
        assert_eq!(next.agents[0].pos, (1, 1));
        assert_eq!(next.agents[1].pos, (2, 1));
    }

    #[test]
    fn moving_into_staying_agent_is_blocked() {
        let mut s = KitchenState::initial();
        s.agents[0].pos = (1, 1);
        s.agents[1].pos = (2, 1);
        let (next, _) = step(&s, RIGHT, STAY);
        assert_eq!(next.agents[0].pos, (1, 1));
    }

    #[test]
    fn walls_block_movement_but_turn() {
        let s = KitchenState::initial();
        let (next, _) = step(&s, LEFT, STAY);
        assert_eq!(next.agents[0].pos, (1, 2));
        assert_eq!(next.agents[0].facing, Facing::Left);
    }

    #[test]
    fn pot_rejects_fourth_onion_and_dish_before_ready() {
        let mut s = KitchenState::initial();
        s.agents[0].pos = (2, 1);
        s.agents[0].facing = Facing::Up;
        s.agents[0].held = Held::Onion;
        s.pot_onions = 3;
        s.cook_timer = 5;
        let (next, _) = step(&s, INTERACT, STAY);
        assert_eq!(next.agents[0].held, Held::Onion);
        assert_eq!(next.pot_onions, 3);
        assert_eq!(next.cook_timer, 4);

        s.agents[0].held = Held::Dish;
        let (next, _) = step(&s, INTERACT, STAY);
        assert_eq!(next.agents[0].held, Held::Dish);
    }

    #[test]
    fn observation_layout() {
        let s = KitchenState::initial();
        let o0 = s.observation(0);
        let o1 = s.observation(1);
        assert_eq!(o0.len(), OBS_DIM);
        assert_eq!(&o0[0..2], &[0.25, 2.0 / 3.0]);
        assert_eq!(&o0[2..6], &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(&o0[6..10], &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(&o0[0..10], &o1[10..20]);
        assert_eq!(&o0[20..], &[0.0, 0.0, 0.0]);
    }
}
