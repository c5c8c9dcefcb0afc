use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    apply_behavior, evaluate_trigger, sample_activation, Activation, AdversityKind, AdversityLog, AdversitySpec,
    DecisionRecord, Override, Result, StaticRecord, WorldView,
};
use crate::class::AgentClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CandidateAgent {
    pub id: u32,
    pub class: AgentClass,
    pub is_ego: bool,
}

/// Per-step activation control for dynamic adversities.
#[derive(Debug, Clone)]
pub struct Orchestrator {
    specs: Vec<AdversitySpec>,
    global_cap: usize,
    cooldown_until: BTreeMap<String, f64>,
    active: Vec<Override>,
    rng: ChaCha8Rng,
    log: AdversityLog,
}

impl Orchestrator {
    /// `specs` are sorted by id; static specs are logged as applied and never sampled.
    pub fn new(mut specs: Vec<AdversitySpec>, global_cap: usize, seed: u64) -> Result<Self> {
        for s in &specs {
            s.validate()?;
        }
        specs.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = specs.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(super::AdversityError::InvalidSpec { id: w[0].id.clone(), reason: "duplicate id".into() });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let mut log = AdversityLog { episode_weight: 1.0, ..Default::default() };
        for s in specs.iter().filter(|s| s.kind == AdversityKind::Static) {
            log.static_applied.push(StaticRecord { spec_id: s.id.clone(), behavior: s.behavior.name().to_string() });
        }
        Ok(Self { specs, global_cap: global_cap.max(1), cooldown_until: BTreeMap::new(), active: Vec::new(), rng, log })
    }

    pub fn specs(&self) -> &[AdversitySpec] {
        &self.specs
    }

    pub fn active(&self) -> &[Override] {
        &self.active
    }

    pub fn override_for(&self, agent: u32) -> Option<&Override> {
        self.active.iter().find(|o| o.agent == agent)
    }

    pub fn log(&self) -> &AdversityLog {
        &self.log
    }

    pub fn into_log(mut self) -> AdversityLog {
        self.log.refresh_weight();
        self.log
    }

    /// Detach the override on `agent`, if any.
    pub fn finish(&mut self, agent: u32, t: f64) {
        if let Some(i) = self.active.iter().position(|o| o.agent == agent) {
            let o = self.active.remove(i);
            self.close_activation(&o, t);
        }
    }

    fn close_activation(&mut self, o: &Override, t: f64) {
        if let Some(a) = self
            .log
            .activations
            .iter_mut()
            .rev()
            .find(|a| a.agent == o.agent && a.spec_id == o.spec_id && a.end_t.is_none())
        {
            a.end_t = Some(t);
        }
    }

    fn expire(&mut self, t: f64) {
        let (done, keep): (Vec<Override>, Vec<Override>) = self.active.drain(..).partition(|o| o.end_t <= t + 1e-9);
        self.active = keep;
        for o in done {
            let end = o.end_t;
            self.close_activation(&o, end);
        }
    }

    /// Evaluate every (spec, eligible agent) pair in id order and return the overrides
    /// that activate this step.
    pub fn step(&mut self, world: &dyn WorldView, agents: &[CandidateAgent]) -> Vec<Override> {
        let t = world.time();
        self.expire(t);
        let mut sorted: Vec<CandidateAgent> = agents.to_vec();
        sorted.sort_by_key(|a| a.id);
        let mut fresh = Vec::new();
        for si in 0..self.specs.len() {
            if self.active.len() >= self.global_cap {
                break;
            }
            let spec = &self.specs[si];
            if spec.kind == AdversityKind::Static {
                continue;
            }
            if self.cooldown_until.get(&spec.id).is_some_and(|&until| t < until - 1e-9) {
                continue;
            }
            let mut running = self.active.iter().filter(|o| o.spec_id == spec.id).count();
            for a in &sorted {
                if running >= spec.max_concurrent || self.active.len() >= self.global_cap {
                    break;
                }
                if a.is_ego || !spec.behavior.applies_to(a.class) || self.active.iter().any(|o| o.agent == a.id) {
                    continue;
                }
                let triggered = evaluate_trigger(&spec.trigger, world, a.id);
                if !triggered {
                    continue;
                }
                let (activated, factor) = sample_activation(spec, true, &mut self.rng);
                self.log.decisions.push(DecisionRecord {
                    t,
                    spec_id: spec.id.clone(),
                    agent: a.id,
                    activated,
                    factor,
                });
                if !activated {
                    continue;
                }
                let o = apply_behavior(a.id, a.class, &spec.behavior, &spec.id, t)
                    .expect("eligibility checked above");
                self.log.activations.push(Activation {
                    t,
                    spec_id: spec.id.clone(),
                    agent: a.id,
                    behavior: spec.behavior.name().to_string(),
                    end_t: None,
                });
                self.active.push(o.clone());
                fresh.push(o);
                running += 1;
                if spec.cooldown_s > 0.0 {
                    self.cooldown_until.insert(spec.id.clone(), t + spec.cooldown_s);
                    break;
                }
            }
        }
        self.log.refresh_weight();
        fresh
    }

    /// Close every open override at the end of an episode.
    pub fn close_all(&mut self, t: f64) {
        let open: Vec<Override> = self.active.drain(..).collect();
        for o in open {
            self.close_activation(&o, t.min(o.end_t));
        }
        self.log.refresh_weight();
    }
}
