//! MicroSkirmish: a small team battle in the spirit of SMAC micromanagement.
//! Agents outrange the enemies, which close in every other step, so focusing
//! fire and keeping distance both pay off.

use rand::seq::index::sample;
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
pub struct SkirmishConfig {
    pub width: usize,
    pub height: usize,
    pub n_agents: usize,
    pub n_enemies: usize,
    pub agent_hp: u32,
    pub enemy_hp: u32,
    pub agent_damage: u32,
    pub enemy_damage: u32,
    /// Manhattan attack ranges.
    pub agent_range: usize,
    pub enemy_range: usize,
    pub sight: usize,
    /// Enemies move only on steps where `t % enemy_move_period == 0`.
    pub enemy_move_period: usize,
    pub max_steps: usize,
    /// Weight on damage taken in the team reward.
    pub damage_taken_weight: f64,
    pub win_bonus: f64,
}

impl Default for SkirmishConfig {
    fn default() -> Self {
        Self {
            width: 8,
            height: 6,
            n_agents: 3,
            n_enemies: 3,
            agent_hp: 4,
            enemy_hp: 3,
            agent_damage: 1,
            enemy_damage: 1,
            agent_range: 2,
            enemy_range: 1,
            sight: 4,
            enemy_move_period: 2,
            max_steps: 40,
            damage_taken_weight: 0.5,
            win_bonus: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Unit {
    pub x: i64,
    pub y: i64,
    pub hp: u32,
}

impl Unit {
    pub fn alive(&self) -> bool {
        self.hp > 0
    }

    fn dist(&self, o: &Unit) -> usize {
        ((self.x - o.x).abs() + (self.y - o.y).abs()) as usize
    }
}

/// Mutable battle contents, exposed so tests can set up positions directly.
#[derive(Debug, Clone, PartialEq)]
pub struct SkirmishWorld {
    pub agents: Vec<Unit>,
    pub enemies: Vec<Unit>,
    pub t: usize,
    pub done: bool,
}

impl SkirmishWorld {
    fn occupied(&self, x: i64, y: i64) -> bool {
        self.agents
            .iter()
            .chain(&self.enemies)
            .any(|u| u.alive() && u.x == x && u.y == y)
    }
}

pub struct MicroSkirmish {
    cfg: SkirmishConfig,
    spec: EnvSpec,
    world: SkirmishWorld,
}

/// Index of the nearest living unit in `pool` within `range` of `from`,
/// lowest index on ties.
fn nearest(from: &Unit, pool: &[Unit], range: usize) -> Option<usize> {
    pool.iter()
        .enumerate()
        .filter(|(_, u)| u.alive() && from.dist(u) <= range)
        .min_by_key(|(i, u)| (from.dist(u), *i))
        .map(|(i, _)| i)
}

impl MicroSkirmish {
    pub fn new(cfg: SkirmishConfig) -> Result<Self> {
        if cfg.n_agents == 0 || cfg.n_enemies == 0 {
            return Err(Error::Config("micro_skirmish needs at least one unit per side".into()));
        }
        if cfg.width < 4 || cfg.n_agents > cfg.height || cfg.n_enemies > cfg.height {
            return Err(Error::Config(format!(
                "micro_skirmish: {}x{} grid cannot spawn {} agents and {} enemies",
                cfg.width, cfg.height, cfg.n_agents, cfg.n_enemies
            )));
        }
        if cfg.agent_hp == 0 || cfg.enemy_hp == 0 || cfg.sight == 0 || cfg.max_steps == 0 {
            return Err(Error::Config("micro_skirmish: hp, sight and max_steps must be positive".into()));
        }
        if cfg.enemy_move_period == 0 {
            return Err(Error::Config("micro_skirmish: enemy_move_period must be >= 1".into()));
        }
        let n = cfg.n_agents;
        let m = cfg.n_enemies;
        let mut names: Vec<String> = ["noop", "up", "down", "left", "right"]
            .map(String::from)
            .to_vec();
        names.push("attack".into());
        let spec = EnvSpec {
            name: "micro_skirmish".into(),
            n_agents: n,
            n_enemies: m,
            action_names: names,
            obs: ObsLayout {
                own: 3,
                allies: 4 * (n - 1),
                enemies: 5 * m,
                movement: 4,
                agent_id: n,
            },
            state: StateLayout {
                n_agents: n,
                agent_width: 4 + n,
                n_enemies: m,
                enemy_width: 4,
                env_width: 1,
            },
            max_steps: cfg.max_steps,
            reward_scale: 1.0,
        };
        let world = SkirmishWorld {
            agents: Vec::new(),
            enemies: Vec::new(),
            t: 0,
            done: true,
        };
        Ok(Self { cfg, spec, world })
    }

    pub fn config(&self) -> &SkirmishConfig {
        &self.cfg
    }

    pub fn world(&self) -> &SkirmishWorld {
        &self.world
    }

    pub fn world_mut(&mut self) -> &mut SkirmishWorld {
        &mut self.world
    }

    fn free(&self, x: i64, y: i64) -> bool {
        (0..self.cfg.width as i64).contains(&x)
            && (0..self.cfg.height as i64).contains(&y)
            && !self.world.occupied(x, y)
    }

    pub fn masks(&self) -> Vec<Vec<bool>> {
        self.world
            .agents
            .iter()
            .map(|a| {
                let mut m = vec![false; 6];
                m[actions::NOOP] = true;
                if a.alive() {
                    for (act, (dx, dy)) in MOVES {
                        m[act] = self.free(a.x + dx, a.y + dy);
                    }
                    m[actions::ATTACK] =
                        nearest(a, &self.world.enemies, self.cfg.agent_range).is_some();
                }
                m
            })
            .collect()
    }

    fn observe(&self, masks: &[Vec<bool>]) -> Vec<AgentObservation> {
        let c = &self.cfg;
        let (w, h) = (c.width as i64, c.height as i64);
        let sight = c.sight as f64;
        let n = c.n_agents;
        let layout = self.spec.obs;
        (0..n)
            .map(|i| {
                let me = self.world.agents[i];
                if !me.alive() {
                    return AgentObservation {
                        own: vec![0.0; layout.own],
                        allies: vec![0.0; layout.allies],
                        enemies: vec![0.0; layout.enemies],
                        movement: vec![0.0; layout.movement],
                        agent_id: one_hot(i, n),
                    };
                }
                let rel = |u: &Unit, hp_max: u32| -> [f64; 4] {
                    if u.alive() && me.dist(u) <= c.sight {
                        [
                            1.0,
                            (u.x - me.x) as f64 / sight,
                            (u.y - me.y) as f64 / sight,
                            u.hp as f64 / hp_max as f64,
                        ]
                    } else {
                        [0.0; 4]
                    }
                };
                let allies = (0..n)
                    .filter(|&j| j != i)
                    .flat_map(|j| rel(&self.world.agents[j], c.agent_hp))
                    .collect();
                let enemies = self
                    .world
                    .enemies
                    .iter()
                    .flat_map(|e| {
                        let r = rel(e, c.enemy_hp);
                        let attackable = r[0] > 0.0 && me.dist(e) <= c.agent_range;
                        [r[0], r[1], r[2], r[3], if attackable { 1.0 } else { 0.0 }]
                    })
                    .collect();
                AgentObservation {
                    own: vec![
                        norm_coord(me.x, w),
                        norm_coord(me.y, h),
                        me.hp as f64 / c.agent_hp as f64,
                    ],
                    allies,
                    enemies,
                    movement: MOVES
                        .iter()
                        .map(|(a, _)| if masks[i][*a] { 1.0 } else { 0.0 })
                        .collect(),
                    agent_id: one_hot(i, n),
                }
            })
            .collect()
    }

    /// Agent rows `[x, y, hp, alive, id…]`, enemy rows `[x, y, hp, alive]`,
    /// env `[t/T]`. Health is a fraction of the starting value.
    pub fn build_state(&self) -> GlobalState {
        let c = &self.cfg;
        let (w, h) = (c.width as i64, c.height as i64);
        let n = c.n_agents;
        let mut agents = Matrix::zeros(n, 4 + n);
        for (i, a) in self.world.agents.iter().enumerate() {
            let row = agents.row_mut(i);
            row[0] = norm_coord(a.x, w);
            row[1] = norm_coord(a.y, h);
            row[2] = a.hp as f64 / c.agent_hp as f64;
            row[3] = if a.alive() { 1.0 } else { 0.0 };
            row[4 + i] = 1.0;
        }
        let mut enemies = Matrix::zeros(c.n_enemies, 4);
        for (i, e) in self.world.enemies.iter().enumerate() {
            let row = enemies.row_mut(i);
            row[0] = norm_coord(e.x, w);
            row[1] = norm_coord(e.y, h);
            row[2] = e.hp as f64 / c.enemy_hp as f64;
            row[3] = if e.alive() { 1.0 } else { 0.0 };
        }
        GlobalState {
            agents,
            enemies,
            env: vec![self.world.t as f64 / c.max_steps as f64],
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

    /// Enemy `k` attacks if an agent is in range, otherwise it may step
    /// toward the nearest living agent. Returns damage dealt to agents.
    fn enemy_act(&mut self, k: usize) -> u32 {
        let c = &self.cfg;
        let e = self.world.enemies[k];
        if !e.alive() {
            return 0;
        }
        if let Some(j) = nearest(&e, &self.world.agents, c.enemy_range) {
            let a = &mut self.world.agents[j];
            let dealt = c.enemy_damage.min(a.hp);
            a.hp -= dealt;
            return dealt;
        }
        if !self.world.t.is_multiple_of(c.enemy_move_period) {
            return 0;
        }
        let Some(j) = nearest(&e, &self.world.agents, usize::MAX) else {
            return 0;
        };
        let target = self.world.agents[j];
        let (dx, dy) = (target.x - e.x, target.y - e.y);
        let horizontal = (dx.signum(), 0);
        let vertical = (0, dy.signum());
        let order = if dx.abs() >= dy.abs() {
            [horizontal, vertical]
        } else {
            [vertical, horizontal]
        };
        for (sx, sy) in order {
            if (sx, sy) != (0, 0) && self.free(e.x + sx, e.y + sy) {
                let u = &mut self.world.enemies[k];
                u.x += sx;
                u.y += sy;
                break;
            }
        }
        0
    }
}

impl MultiAgentEnv for MicroSkirmish {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> StepResult {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &self.cfg;
        let w = c.width as i64;
        let spawn = |rng: &mut ChaCha8Rng, count: usize, xs: [i64; 2], hp: u32| -> Vec<Unit> {
            sample(rng, c.height, count)
                .into_iter()
                .map(|row| Unit {
                    x: xs[rng.random_range(0..2)],
                    y: row as i64,
                    hp,
                })
                .collect()
        };
        let agents = spawn(&mut rng, c.n_agents, [0, 1], c.agent_hp);
        let enemies = spawn(&mut rng, c.n_enemies, [w - 2, w - 1], c.enemy_hp);
        self.world = SkirmishWorld {
            agents,
            enemies,
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
        let range = self.cfg.agent_range;
        let mut dealt = 0u32;
        for (i, &a) in acts.iter().enumerate() {
            let me = self.world.agents[i];
            if !me.alive() {
                continue;
            }
            if a == actions::ATTACK {
                // Targets can die earlier in the same step.
                if let Some(k) = nearest(&me, &self.world.enemies, range) {
                    let e = &mut self.world.enemies[k];
                    let d = self.cfg.agent_damage.min(e.hp);
                    e.hp -= d;
                    dealt += d;
                }
            } else if let Some((_, (dx, dy))) = MOVES.iter().find(|(m, _)| *m == a) {
                if self.free(me.x + dx, me.y + dy) {
                    let u = &mut self.world.agents[i];
                    u.x += dx;
                    u.y += dy;
                }
            }
        }
        let won = self.world.enemies.iter().all(|e| !e.alive());
        let mut taken = 0u32;
        if !won {
            for k in 0..self.world.enemies.len() {
                taken += self.enemy_act(k);
            }
        }
        self.world.t += 1;
        let lost = self.world.agents.iter().all(|a| !a.alive());
        let truncated = !won && !lost && self.world.t >= self.cfg.max_steps;
        self.world.done = won || lost || truncated;
        let reward = dealt as f64 - self.cfg.damage_taken_weight * taken as f64
            + if won { self.cfg.win_bonus } else { 0.0 };
        Ok(self.result(reward, won, truncated))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> MicroSkirmish {
        MicroSkirmish::new(SkirmishConfig::default()).unwrap()
    }

    fn unit(x: i64, y: i64, hp: u32) -> Unit {
        Unit { x, y, hp }
    }

    #[test]
    fn spawns_on_opposite_edges_in_distinct_rows() {
        let mut e = env();
        for s in 0..50 {
            e.reset(s);
            let w = e.world();
            assert!(w.agents.iter().all(|a| a.x <= 1 && a.hp == 4));
            assert!(w.enemies.iter().all(|u| u.x >= 6 && u.hp == 3));
            let mut rows: Vec<i64> = w.agents.iter().map(|a| a.y).collect();
            rows.sort();
            rows.dedup();
            assert_eq!(rows.len(), 3);
        }
    }

    #[test]
    fn observation_width_matches_layout() {
        let mut e = env();
        let r = e.reset(0);
        assert_eq!(e.spec().obs_width(), 33);
        assert_eq!(r.observations[0].width(), 33);
        assert_eq!(e.spec().state_width(), 3 * 7 + 3 * 4 + 1);
        assert_eq!(e.spec().state.enemy_segment_width(), 12);
    }

    #[test]
    fn noop_without_contact_gives_zero_reward() {
        let mut e = env();
        e.reset(0);
        // Spawns are at least four columns apart, so nobody can hit anybody.
        let r = e.step(&[0, 0, 0]).unwrap();
        assert_eq!(r.rewards, vec![0.0; 3]);
        assert!(!r.done);
    }

    #[test]
    fn attack_damages_nearest_enemy_and_win_pays_bonus() {
        let mut e = env();
        e.reset(0);
        {
            let w = e.world_mut();
            w.agents = vec![unit(2, 0, 4), unit(0, 5, 4), unit(0, 3, 4)];
            w.enemies = vec![unit(4, 0, 1), unit(3, 1, 3), unit(7, 5, 0)];
        }
        let masks = e.masks();
        assert!(masks[0][actions::ATTACK]);
        assert!(!masks[1][actions::ATTACK]);
        // Enemies 0 and 1 are both at distance 2; the lower index is hit.
        let r = e.step(&[actions::ATTACK, 0, 0]).unwrap();
        assert!(!e.world().enemies[0].alive());
        assert_eq!(e.world().enemies[1].hp, 3);
        // Out of its range, enemy 1 steps along the larger axis toward agent 0.
        assert_eq!((e.world().enemies[1].x, e.world().enemies[1].y), (2, 1));
        assert!((r.rewards[0] - 1.0).abs() < 1e-12);

        e.world_mut().enemies[1] = unit(3, 0, 1);
        let r = e.step(&[actions::ATTACK, 0, 0]).unwrap();
        assert!(r.done && r.success && !r.truncated);
        assert!((r.rewards[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn damage_taken_is_penalised() {
        let mut e = env();
        e.reset(0);
        {
            let w = e.world_mut();
            w.agents = vec![unit(0, 0, 4), unit(0, 4, 4), unit(0, 5, 4)];
            w.enemies = vec![unit(1, 0, 3), unit(7, 2, 3), unit(7, 3, 3)];
        }
        let r = e.step(&[0, 0, 0]).unwrap();
        assert_eq!(e.world().agents[0].hp, 3);
        assert!((r.rewards[0] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn health_never_negative_and_dead_units_only_noop() {
        let mut e = env();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..100 {
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
                for (a, m) in e.world().agents.iter().zip(&r.masks) {
                    assert!(a.hp <= 4);
                    if !a.alive() {
                        assert_eq!(m, &vec![true, false, false, false, false, false]);
                    }
                }
                for (i, o) in r.observations.iter().enumerate() {
                    if !e.world().agents[i].alive() {
                        let f = o.flatten();
                        assert_eq!(f.iter().filter(|&&x| x != 0.0).count(), 1);
                    }
                }
            }
        }
    }

    #[test]
    fn time_limit_truncates() {
        let cfg = SkirmishConfig {
            enemy_move_period: 1000,
            ..Default::default()
        };
        let mut e = MicroSkirmish::new(cfg).unwrap();
        let mut r = e.reset(0);
        let mut steps = 0;
        while !r.done {
            r = e.step(&[0, 0, 0]).unwrap();
            steps += 1;
            assert_eq!(r.rewards[0], 0.0);
        }
        assert_eq!(steps, 40);
        assert!(r.truncated && !r.success);
        assert!(e.step(&[0, 0, 0]).is_err());
    }

    #[test]
    fn moving_one_agent_changes_only_its_row() {
        let mut e = env();
        e.reset(2);
        let before = e.build_state();
        e.world_mut().agents[1].x += 1;
        let after = e.build_state();
        for i in [0, 2] {
            assert_eq!(before.agents.row(i), after.agents.row(i));
        }
        assert_ne!(before.agents.row(1), after.agents.row(1));
        assert_eq!(before.enemies, after.enemies);
        assert_eq!(before.env, after.env);
    }
}
