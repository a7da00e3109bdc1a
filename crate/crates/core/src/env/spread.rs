//! SignalSpread: a speaker that sees the goal but cannot move, and listeners
//! that move but cannot see the goal. Only communication makes the goal
//! reachable above chance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::actions::{self, MOVES};
use super::{check_actions, norm_coord, one_hot, EnvSpec, MultiAgentEnv, StepResult};
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::policy::{AgentObservation, GlobalState, ObsLayout, StateLayout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpreadConfig {
    pub grid: usize,
    /// Agent 0 is the speaker; the rest are listeners.
    pub n_agents: usize,
    pub max_steps: usize,
    /// Minimum Manhattan distance between the goal and each listener's start.
    pub min_start_distance: usize,
    pub goal_reward: f64,
    pub step_penalty: f64,
}

impl Default for SpreadConfig {
    fn default() -> Self {
        Self {
            grid: 5,
            n_agents: 2,
            max_steps: 8,
            min_start_distance: 3,
            goal_reward: 1.0,
            step_penalty: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pos {
    pub x: i64,
    pub y: i64,
}

impl Pos {
    fn manhattan(self, o: Pos) -> usize {
        ((self.x - o.x).abs() + (self.y - o.y).abs()) as usize
    }
}

/// Mutable world contents, exposed so tests can edit positions directly.
#[derive(Debug, Clone, PartialEq)]
pub struct SpreadWorld {
    pub goal: Pos,
    pub positions: Vec<Pos>,
    pub t: usize,
    pub done: bool,
}

pub struct SignalSpread {
    cfg: SpreadConfig,
    spec: EnvSpec,
    world: SpreadWorld,
}

impl SignalSpread {
    pub fn new(cfg: SpreadConfig) -> Result<Self> {
        if cfg.n_agents < 2 {
            return Err(Error::Config("signal_spread needs a speaker and at least one listener".into()));
        }
        if cfg.grid < 2 || cfg.max_steps == 0 {
            return Err(Error::Config("signal_spread needs grid >= 2 and max_steps >= 1".into()));
        }
        if cfg.min_start_distance > 2 * (cfg.grid - 1) {
            return Err(Error::Config(format!(
                "min_start_distance {} unreachable on a {}x{} grid",
                cfg.min_start_distance, cfg.grid, cfg.grid
            )));
        }
        let n = cfg.n_agents;
        let spec = EnvSpec {
            name: "signal_spread".into(),
            n_agents: n,
            n_enemies: 0,
            action_names: ["noop", "up", "down", "left", "right"]
                .map(String::from)
                .to_vec(),
            obs: ObsLayout {
                own: 5,
                allies: 2 * (n - 1),
                enemies: 0,
                movement: 4,
                agent_id: n,
            },
            state: StateLayout {
                n_agents: n,
                agent_width: 3 + n,
                n_enemies: 0,
                enemy_width: 0,
                env_width: 3,
            },
            max_steps: cfg.max_steps,
            reward_scale: 1.0,
        };
        let world = SpreadWorld {
            goal: Pos { x: 0, y: 0 },
            positions: vec![Pos { x: 0, y: 0 }; n],
            t: 0,
            done: true,
        };
        Ok(Self { cfg, spec, world })
    }

    pub fn world(&self) -> &SpreadWorld {
        &self.world
    }

    pub fn world_mut(&mut self) -> &mut SpreadWorld {
        &mut self.world
    }

    fn in_bounds(&self, p: Pos) -> bool {
        let g = self.cfg.grid as i64;
        (0..g).contains(&p.x) && (0..g).contains(&p.y)
    }

    pub fn masks(&self) -> Vec<Vec<bool>> {
        (0..self.cfg.n_agents)
            .map(|i| {
                let mut m = vec![false; 5];
                m[actions::NOOP] = true;
                if i > 0 {
                    let p = self.world.positions[i];
                    for (a, (dx, dy)) in MOVES {
                        m[a] = self.in_bounds(Pos { x: p.x + dx, y: p.y + dy });
                    }
                }
                m
            })
            .collect()
    }

    fn observe(&self, masks: &[Vec<bool>]) -> Vec<AgentObservation> {
        let g = self.cfg.grid as i64;
        let n = self.cfg.n_agents;
        let span = (g - 1).max(1) as f64;
        (0..n)
            .map(|i| {
                let p = self.world.positions[i];
                let own = if i == 0 {
                    vec![
                        norm_coord(p.x, g),
                        norm_coord(p.y, g),
                        norm_coord(self.world.goal.x, g),
                        norm_coord(self.world.goal.y, g),
                        1.0,
                    ]
                } else {
                    vec![norm_coord(p.x, g), norm_coord(p.y, g), 0.0, 0.0, 0.0]
                };
                let allies = (0..n)
                    .filter(|&j| j != i)
                    .flat_map(|j| {
                        let q = self.world.positions[j];
                        [(q.x - p.x) as f64 / span, (q.y - p.y) as f64 / span]
                    })
                    .collect();
                let movement = MOVES
                    .iter()
                    .map(|(a, _)| if masks[i][*a] { 1.0 } else { 0.0 })
                    .collect();
                AgentObservation {
                    own,
                    allies,
                    enemies: Vec::new(),
                    movement,
                    agent_id: one_hot(i, n),
                }
            })
            .collect()
    }

    /// Agent rows `[x, y, is_speaker, id…]`; env features `[goal_x, goal_y, t/T]`.
    pub fn build_state(&self) -> GlobalState {
        let g = self.cfg.grid as i64;
        let n = self.cfg.n_agents;
        let mut agents = Matrix::zeros(n, 3 + n);
        for (i, p) in self.world.positions.iter().enumerate() {
            let row = agents.row_mut(i);
            row[0] = norm_coord(p.x, g);
            row[1] = norm_coord(p.y, g);
            row[2] = if i == 0 { 1.0 } else { 0.0 };
            row[3 + i] = 1.0;
        }
        GlobalState {
            agents,
            enemies: Matrix::zeros(0, 0),
            env: vec![
                norm_coord(self.world.goal.x, g),
                norm_coord(self.world.goal.y, g),
                self.world.t as f64 / self.cfg.max_steps as f64,
            ],
        }
    }

    fn result(&self, reward: f64, success: bool, truncated: bool) -> StepResult {
        let masks = self.masks();
        StepResult {
            observations: self.observe(&masks),
            state: self.build_state(),
            rewards: vec![reward * self.spec.reward_scale; self.cfg.n_agents],
            done: self.world.done,
            truncated,
            success,
            masks,
        }
    }
}

impl MultiAgentEnv for SignalSpread {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> StepResult {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = self.cfg.grid as i64;
        let cell = |rng: &mut ChaCha8Rng| Pos {
            x: rng.random_range(0..g),
            y: rng.random_range(0..g),
        };
        let goal = cell(&mut rng);
        let mut positions = Vec::with_capacity(self.cfg.n_agents);
        loop {
            let p = cell(&mut rng);
            if p != goal {
                positions.push(p);
                break;
            }
        }
        for _ in 1..self.cfg.n_agents {
            loop {
                let p = cell(&mut rng);
                if p.manhattan(goal) >= self.cfg.min_start_distance {
                    positions.push(p);
                    break;
                }
            }
        }
        self.world = SpreadWorld {
            goal,
            positions,
            t: 0,
            done: false,
        };
        self.result(0.0, false, false)
    }

    fn step(&mut self, acts: &[usize]) -> Result<StepResult> {
        if self.world.done {
            return Err(Error::Env("step called on a finished episode; reset first".into()));
        }
        check_actions(&self.spec, &self.masks(), acts)?;
        for (i, &a) in acts.iter().enumerate().skip(1) {
            if let Some((_, (dx, dy))) = MOVES.iter().find(|(m, _)| *m == a) {
                let p = &mut self.world.positions[i];
                p.x += dx;
                p.y += dy;
            }
        }
        self.world.t += 1;
        let success = self.world.positions[1..].contains(&self.world.goal);
        let truncated = !success && self.world.t >= self.cfg.max_steps;
        self.world.done = success || truncated;
        let reward = -self.cfg.step_penalty + if success { self.cfg.goal_reward } else { 0.0 };
        Ok(self.result(reward, success, truncated))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> SignalSpread {
        SignalSpread::new(SpreadConfig::default()).unwrap()
    }

    #[test]
    fn reset_is_deterministic() {
        let mut e = env();
        assert_eq!(e.reset(42), e.reset(42));
        assert!(!e.reset(42).done);
    }

    #[test]
    fn speaker_only_has_noop_and_listeners_stay_in_bounds() {
        let mut e = env();
        for s in 0..100 {
            let r = e.reset(s);
            assert_eq!(r.masks[0], vec![true, false, false, false, false]);
            let p = e.world().positions[1];
            assert_eq!(r.masks[1][actions::LEFT], p.x > 0);
            assert_eq!(r.masks[1][actions::UP], p.y > 0);
            assert!(p.manhattan(e.world().goal) >= 3);
        }
    }

    #[test]
    fn only_speaker_observes_goal() {
        let mut e = env();
        let r = e.reset(5);
        assert_eq!(r.observations[0].own[4], 1.0);
        assert_eq!(&r.observations[1].own[2..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn reaching_goal_pays_and_ends() {
        let mut e = env();
        e.reset(1);
        let goal = e.world().goal;
        // Park the listener next to the goal and step on it.
        let (start, action) = if goal.x > 0 {
            (Pos { x: goal.x - 1, y: goal.y }, actions::RIGHT)
        } else {
            (Pos { x: goal.x + 1, y: goal.y }, actions::LEFT)
        };
        e.world_mut().positions[1] = start;
        let r = e.step(&[actions::NOOP, action]).unwrap();
        assert!(r.done && r.success && !r.truncated);
        assert!((r.rewards[0] - 0.99).abs() < 1e-12);
        assert!(e.step(&[0, 0]).is_err());
    }

    #[test]
    fn time_limit_truncates() {
        let mut e = env();
        let mut r = e.reset(9);
        let mut steps = 0;
        while !r.done {
            r = e.step(&[0, 0]).unwrap();
            steps += 1;
            assert!((r.rewards[1] + 0.01).abs() < 1e-12);
        }
        assert_eq!(steps, 8);
        assert!(r.truncated && !r.success);
    }

    #[test]
    fn state_has_no_enemy_segment_and_documented_width() {
        let e = env();
        let s = e.build_state();
        let l = s.layout();
        assert_eq!(l.enemy_segment_width(), 0);
        assert_eq!(l.width(), 2 * (3 + 2) + 3);
        assert_eq!(s.flatten().len(), e.spec().state_width());
    }

    #[test]
    fn moving_one_agent_changes_only_its_row() {
        let mut e = env();
        e.reset(4);
        let before = e.build_state();
        let p = e.world().positions[1];
        e.world_mut().positions[1] = Pos { x: (p.x + 1) % 5, y: p.y };
        let after = e.build_state();
        assert_eq!(before.agents.row(0), after.agents.row(0));
        assert_ne!(before.agents.row(1), after.agents.row(1));
        assert_eq!(before.env, after.env);
    }

    #[test]
    fn random_policy_rarely_succeeds() {
        let mut e = env();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut wins = 0;
        for seed in 0..1000 {
            let mut r = e.reset(seed);
            while !r.done {
                let acts: Vec<usize> = r
                    .masks
                    .iter()
                    .map(|m| {
                        let legal: Vec<usize> = (0..m.len()).filter(|&a| m[a]).collect();
                        legal[rng.random_range(0..legal.len())]
                    })
                    .collect();
                r = e.step(&acts).unwrap();
            }
            wins += r.success as usize;
        }
        assert!(wins < 150, "random success {wins}/1000");
    }
}
