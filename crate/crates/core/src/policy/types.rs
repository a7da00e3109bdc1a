use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Segment widths of a per-agent observation, in concatenation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObsLayout {
    pub own: usize,
    pub allies: usize,
    pub enemies: usize,
    pub movement: usize,
    pub agent_id: usize,
}

impl ObsLayout {
    pub fn width(&self) -> usize {
        self.own + self.allies + self.enemies + self.movement + self.agent_id
    }
}

/// A local observation split into own ‖ allies ‖ enemies ‖ movement ‖ agent_id.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentObservation {
    pub own: Vec<f64>,
    pub allies: Vec<f64>,
    pub enemies: Vec<f64>,
    pub movement: Vec<f64>,
    pub agent_id: Vec<f64>,
}

impl AgentObservation {
    pub fn layout(&self) -> ObsLayout {
        ObsLayout {
            own: self.own.len(),
            allies: self.allies.len(),
            enemies: self.enemies.len(),
            movement: self.movement.len(),
            agent_id: self.agent_id.len(),
        }
    }

    pub fn width(&self) -> usize {
        self.layout().width()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.width());
        self.write_into(&mut v);
        v
    }

    pub fn write_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.own);
        out.extend_from_slice(&self.allies);
        out.extend_from_slice(&self.enemies);
        out.extend_from_slice(&self.movement);
        out.extend_from_slice(&self.agent_id);
    }

    /// Splits a flat vector back into segments.
    pub fn from_flat(layout: ObsLayout, flat: &[f64]) -> Result<Self> {
        if flat.len() != layout.width() {
            return Err(Error::shape("observation", layout.width(), flat.len()));
        }
        let mut off = 0;
        let mut take = |n: usize| {
            let s = flat[off..off + n].to_vec();
            off += n;
            s
        };
        Ok(Self {
            own: take(layout.own),
            allies: take(layout.allies),
            enemies: take(layout.enemies),
            movement: take(layout.movement),
            agent_id: take(layout.agent_id),
        })
    }
}

/// Widths of the global state: one row per agent, one row per enemy, then
/// environment-level features. Flattened as agents ‖ enemies ‖ env.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateLayout {
    pub n_agents: usize,
    pub agent_width: usize,
    pub n_enemies: usize,
    pub enemy_width: usize,
    pub env_width: usize,
}

impl StateLayout {
    pub fn width(&self) -> usize {
        self.n_agents * self.agent_width + self.enemy_segment_width() + self.env_width
    }

    pub fn agent_segment_width(&self) -> usize {
        self.n_agents * self.agent_width
    }

    pub fn enemy_segment_width(&self) -> usize {
        self.n_enemies * self.enemy_width
    }

    pub fn agent_range(&self) -> std::ops::Range<usize> {
        0..self.agent_segment_width()
    }

    pub fn enemy_range(&self) -> std::ops::Range<usize> {
        let a = self.agent_segment_width();
        a..a + self.enemy_segment_width()
    }

    pub fn env_range(&self) -> std::ops::Range<usize> {
        let e = self.enemy_range().end;
        e..e + self.env_width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState {
    /// `(n_agents, agent_width)`
    pub agents: Matrix,
    /// `(n_enemies, enemy_width)`
    pub enemies: Matrix,
    pub env: Vec<f64>,
}

impl GlobalState {
    pub fn layout(&self) -> StateLayout {
        StateLayout {
            n_agents: self.agents.rows(),
            agent_width: self.agents.cols(),
            n_enemies: self.enemies.rows(),
            enemy_width: self.enemies.cols(),
            env_width: self.env.len(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.layout().width());
        v.extend_from_slice(self.agents.data());
        v.extend_from_slice(self.enemies.data());
        v.extend_from_slice(&self.env);
        v
    }

    pub fn enemy_segment(&self) -> &[f64] {
        self.enemies.data()
    }

    pub fn from_flat(layout: StateLayout, flat: &[f64]) -> Result<Self> {
        if flat.len() != layout.width() {
            return Err(Error::shape("global state", layout.width(), flat.len()));
        }
        Ok(Self {
            agents: Matrix::from_vec(
                layout.n_agents,
                layout.agent_width,
                flat[layout.agent_range()].to_vec(),
            )?,
            enemies: Matrix::from_vec(
                layout.n_enemies,
                layout.enemy_width,
                flat[layout.enemy_range()].to_vec(),
            )?,
            env: flat[layout.env_range()].to_vec(),
        })
    }
}

/// Categorical distribution over discrete actions, optionally masked.
/// Masked actions have probability exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDistribution {
    pub logits: Vec<f64>,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
    mask: Option<Vec<bool>>,
}

impl PolicyDistribution {
    pub fn new(logits: Vec<f64>) -> Result<Self> {
        Self::masked(logits, None)
    }

    pub fn masked(logits: Vec<f64>, mask: Option<Vec<bool>>) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::shape("policy logits", "at least one action", 0));
        }
        if let Some(m) = &mask {
            if m.len() != logits.len() {
                return Err(Error::shape("action mask", logits.len(), m.len()));
            }
            if !m.iter().any(|&b| b) {
                return Err(Error::Env("every action is masked".into()));
            }
        }
        let legal = |i: usize| mask.as_ref().is_none_or(|m| m[i]);
        let max = logits
            .iter()
            .enumerate()
            .filter(|(i, _)| legal(*i))
            .map(|(_, &l)| l)
            .fold(f64::NEG_INFINITY, f64::max);
        let log_z = max
            + logits
                .iter()
                .enumerate()
                .filter(|(i, _)| legal(*i))
                .map(|(_, &l)| (l - max).exp())
                .sum::<f64>()
                .ln();
        let mut log_probs = vec![f64::NEG_INFINITY; logits.len()];
        let mut probs = vec![0.0; logits.len()];
        for i in 0..logits.len() {
            if legal(i) {
                log_probs[i] = logits[i] - log_z;
                probs[i] = log_probs[i].exp();
            }
        }
        Ok(Self {
            logits,
            probs,
            log_probs,
            mask,
        })
    }

    pub fn num_actions(&self) -> usize {
        self.logits.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn is_legal(&self, a: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[a])
    }

    /// `−∞` for masked actions.
    pub fn log_prob(&self, a: usize) -> f64 {
        self.log_probs[a]
    }

    pub fn entropy(&self) -> f64 {
        self.probs
            .iter()
            .zip(&self.log_probs)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, lp)| -p * lp)
            .sum()
    }

    /// Most probable legal action, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = None;
        for (i, &p) in self.probs.iter().enumerate() {
            if !self.is_legal(i) {
                continue;
            }
            match best {
                Some((_, bp)) if p <= bp => {}
                _ => best = Some((i, p)),
            }
        }
        best.expect("at least one legal action").0
    }

    /// Inverse-CDF sample from a uniform draw `u ∈ [0, 1)`.
    pub fn sample_with(&self, u: f64) -> usize {
        let mut acc = 0.0;
        let mut last_legal = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last_legal = i;
                if u < acc {
                    return i;
                }
            }
        }
        last_legal
    }

    /// d(log π(a))/d logits.
    pub fn grad_log_prob(&self, a: usize) -> Vec<f64> {
        let mut g: Vec<f64> = self.probs.iter().map(|p| -p).collect();
        g[a] += 1.0;
        g
    }

    /// d(entropy)/d logits = −p_j (log p_j + H), zero for masked actions.
    pub fn grad_entropy(&self) -> Vec<f64> {
        let h = self.entropy();
        self.probs
            .iter()
            .zip(&self.log_probs)
            .map(|(&p, &lp)| if p > 0.0 { -p * (lp + h) } else { 0.0 })
            .collect()
    }
}
