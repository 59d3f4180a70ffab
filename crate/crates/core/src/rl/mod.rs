//! Independent PPO: every agent owns an LSTM actor-critic and learns only
//! from its own rewards, while all agents see the same observation.

pub mod policy;
pub mod ppo;

pub use policy::{PolicyNet, PolicyOutput, PolicyState};
pub use ppo::{gae, ppo_loss_and_grads, ppo_update, AgentBatch, LossParts, PpoConfig, UpdateStats};

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{AgentAction, ClimateEnv, EngineTag, EpisodeRecord, ObsNormalizer, TrajectoryStore};
use crate::error::{Error, Result};
use crate::io::{write_container, ContainerReader};
use crate::nn::{seeded_rng, Adam, AdamConfig, Params};

pub const POLICY_KIND: &str = "policies";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub ppo: PpoConfig,
    pub hidden: usize,
    /// Episodes collected per update.
    pub n_parallel_envs: usize,
    /// Budget in joint environment steps (one step is one year for all agents).
    pub total_env_steps: usize,
    pub seed: u64,
    /// Keep every k-th episode's trajectory for later replay.
    pub store_every: usize,
    pub normalize_observations: bool,
    /// Stop after this many updates without a relative improvement of
    /// `plateau_tolerance` in mean episode return; zero disables.
    pub plateau_window: usize,
    pub plateau_tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            ppo: PpoConfig::default(),
            hidden: 32,
            n_parallel_envs: 32,
            total_env_steps: 200_000,
            seed: 0,
            store_every: 1,
            normalize_observations: true,
            plateau_window: 0,
            plateau_tolerance: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let p = &self.ppo;
        if !(p.gamma > 0.0 && p.gamma <= 1.0) {
            return Err(Error::Config("gamma must lie in (0, 1]".into()));
        }
        if !(p.clip > 0.0) {
            return Err(Error::Config("clip must be positive".into()));
        }
        if !(0.0..=1.0).contains(&p.gae_lambda) {
            return Err(Error::Config("GAE lambda must lie in [0, 1]".into()));
        }
        if self.hidden == 0 || self.n_parallel_envs == 0 || p.epochs == 0 || self.store_every == 0 {
            return Err(Error::Config(
                "hidden size, envs per update, epochs and store_every must be positive".into(),
            ));
        }
        if !(p.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// One policy per agent plus the observation scaling they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySet {
    pub agents: Vec<PolicyNet>,
    pub normalizer: ObsNormalizer,
    pub scenario: String,
    pub engine: EngineTag,
}

#[derive(Debug, Serialize, Deserialize)]
struct PolicyHeader {
    scenario: String,
    engine: EngineTag,
    obs_dim: usize,
    hidden: usize,
    n_agents: usize,
    scale: Vec<f64>,
}

impl PolicySet {
    pub fn new(n_agents: usize, obs_dim: usize, hidden: usize, seed: u64, normalizer: ObsNormalizer) -> Self {
        let agents = (0..n_agents)
            .map(|i| PolicyNet::new(obs_dim, hidden, agent_seed(seed, i)))
            .collect();
        PolicySet {
            agents,
            normalizer,
            scenario: String::new(),
            engine: EngineTag::Mock,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let first = self.agents.first().ok_or_else(|| Error::InvalidInput("empty policy set".into()))?;
        let header = PolicyHeader {
            scenario: self.scenario.clone(),
            engine: self.engine,
            obs_dim: first.obs_dim,
            hidden: first.hidden,
            n_agents: self.agents.len(),
            scale: self.normalizer.scale.clone(),
        };
        let values: Vec<f64> = self.agents.iter().flat_map(|a| a.params.flatten()).collect();
        write_container(path, POLICY_KIND, &header, &values)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, values) = ContainerReader::<PolicyHeader>::open(path, POLICY_KIND)?.read_all()?;
        let template = PolicyNet::new(h.obs_dim, h.hidden, 0);
        let per = template.params.n_values();
        if values.len() != per * h.n_agents || h.scale.len() != h.obs_dim {
            return Err(Error::format(path, "policy payload does not match its header"));
        }
        let agents = values
            .chunks_exact(per)
            .map(|flat| {
                Params::from_flat(template.params.names.clone(), &template.params.shapes(), flat)
                    .and_then(|p| PolicyNet::from_params(h.obs_dim, h.hidden, p))
                    .ok_or_else(|| Error::format(path, "bad policy layout"))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PolicySet {
            agents,
            normalizer: ObsNormalizer { scale: h.scale },
            scenario: h.scenario,
            engine: h.engine,
        })
    }

    pub fn hashes(&self) -> Vec<String> {
        self.agents.iter().map(|a| a.params.hash()).collect()
    }
}

fn agent_seed(seed: u64, agent: usize) -> u64 {
    seed ^ (agent as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// How actions are drawn when playing a policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    Sample,
    Greedy,
}

/// Raw per-step data of one episode from every agent's perspective.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRollout {
    pub obs: Vec<Vec<f64>>,
    /// `[t][agent]`.
    pub actions: Vec<Vec<AgentAction>>,
    pub log_probs: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
    pub rewards: Vec<Vec<f64>>,
    pub record: EpisodeRecord,
}

/// Plays one episode with the given policies.
pub fn play_episode(
    env: &mut ClimateEnv,
    policies: &PolicySet,
    seed: u64,
    mode: ActionMode,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeRollout> {
    let n = env.n_agents();
    if policies.agents.len() != n {
        return Err(Error::Shape {
            what: "policies per agent",
            expected: n,
            got: policies.agents.len(),
        });
    }
    let mut obs = env.reset(seed)?;
    policies.normalizer.apply(&mut obs);
    let mut states: Vec<PolicyState> = policies.agents.iter().map(|a| a.initial_state()).collect();
    let mut out = EpisodeRollout {
        obs: vec![],
        actions: vec![],
        log_probs: vec![],
        values: vec![],
        rewards: vec![],
        record: EpisodeRecord::empty(env.engine_tag(), &env.spec().name, seed, env.spec().first_year, 0),
    };
    loop {
        let mut joint = Vec::with_capacity(n);
        let mut lps = Vec::with_capacity(n);
        let mut vals = Vec::with_capacity(n);
        for (net, st) in policies.agents.iter().zip(&mut states) {
            let o = net.step(&obs, st);
            let a = match mode {
                ActionMode::Sample => o.sample(rng),
                ActionMode::Greedy => o.greedy(),
            };
            lps.push(o.log_prob(&a));
            vals.push(o.value);
            joint.push(a);
        }
        let step = env.step(&joint)?;
        out.obs.push(std::mem::replace(&mut obs, step.observation));
        policies.normalizer.apply(&mut obs);
        out.actions.push(joint);
        out.log_probs.push(lps);
        out.values.push(vals);
        out.rewards.push(step.rewards);
        if step.done {
            break;
        }
    }
    out.record = env.take_record();
    Ok(out)
}

/// Per-episode training log: returns and the mean effort each agent put on
/// each lever (energy, methane, agriculture in effort units, adaptation in
/// spend units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: u64,
    pub env_steps: u64,
    pub returns: Vec<f64>,
    pub efforts: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateLog {
    pub update: usize,
    pub env_steps: u64,
    pub mean_return: f64,
    pub losses: Vec<UpdateStats>,
}

pub struct TrainOutcome {
    pub policies: PolicySet,
    pub episodes: Vec<EpisodeLog>,
    pub updates: Vec<UpdateLog>,
    pub store: TrajectoryStore,
    pub env_steps: u64,
    pub stopped_early: bool,
}

impl TrainOutcome {
    /// Mean effort per lever over the last `fraction` of episodes, averaged
    /// over agents.
    pub fn final_efforts(&self, fraction: f64) -> [f64; 4] {
        final_efforts(&self.episodes, fraction)
    }
}

pub fn final_efforts(episodes: &[EpisodeLog], fraction: f64) -> [f64; 4] {
    let k = ((episodes.len() as f64 * fraction).ceil() as usize).clamp(1, episodes.len().max(1));
    let tail = &episodes[episodes.len().saturating_sub(k)..];
    let mut out = [0.0; 4];
    let mut n = 0.0;
    for e in tail {
        for a in &e.efforts {
            for l in 0..4 {
                out[l] += a[l];
            }
            n += 1.0;
        }
    }
    out.map(|v| if n > 0.0 { v / n } else { 0.0 })
}

fn episode_log(env: &ClimateEnv, ro: &EpisodeRollout, episode: u64, env_steps: u64) -> Result<EpisodeLog> {
    let n = env.n_agents();
    let levels = &env.spec().levels;
    let mut efforts = vec![[0.0; 4]; n];
    for joint in &ro.actions {
        for (i, a) in joint.iter().enumerate() {
            let (e, spend) = a.resolve(levels)?;
            let v = [e[0], e[1], e[2], spend];
            for l in 0..4 {
                efforts[i][l] += v[l];
            }
        }
    }
    let h = ro.actions.len().max(1) as f64;
    for e in &mut efforts {
        e.iter_mut().for_each(|v| *v /= h);
    }
    let returns = (0..n).map(|i| ro.rewards.iter().map(|r| r[i]).sum()).collect();
    Ok(EpisodeLog {
        episode,
        env_steps,
        returns,
        efforts,
    })
}

fn agent_batch(rollouts: &[EpisodeRollout], agent: usize, cfg: &PpoConfig) -> AgentBatch {
    let mut b = AgentBatch {
        obs: vec![],
        actions: vec![],
        log_probs: vec![],
        advantages: vec![],
        returns: vec![],
    };
    for ro in rollouts {
        let r: Vec<f64> = ro.rewards.iter().map(|x| x[agent]).collect();
        let v: Vec<f64> = ro.values.iter().map(|x| x[agent]).collect();
        let (adv, ret) = gae(&r, &v, cfg.gamma, cfg.gae_lambda);
        b.obs.push(ro.obs.clone());
        b.actions.push(ro.actions.iter().map(|x| x[agent]).collect());
        b.log_probs.push(ro.log_probs.iter().map(|x| x[agent]).collect());
        b.advantages.push(adv);
        b.returns.push(ret);
    }
    b
}

/// Trains one policy per agent until the step budget is spent or returns
/// plateau.
pub fn train(env: &mut ClimateEnv, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let n = env.n_agents();
    let obs_dim = env.observation_len();
    let normalizer = if config.normalize_observations {
        ObsNormalizer::from_env(env)
    } else {
        ObsNormalizer::identity(obs_dim)
    };
    let mut policies = PolicySet::new(n, obs_dim, config.hidden, config.seed, normalizer);
    policies.scenario = env.spec().name.clone();
    policies.engine = env.engine_tag();
    let adam = AdamConfig {
        learning_rate: config.ppo.learning_rate,
        clip_norm: config.ppo.max_grad_norm,
        ..AdamConfig::default()
    };
    let mut opts: Vec<Adam> = policies.agents.iter().map(|a| Adam::new(adam, &a.params)).collect();
    let mut act_rng = seeded_rng(config.seed ^ 0xac75);
    let mut mb_rngs: Vec<ChaCha8Rng> = (0..n).map(|i| seeded_rng(agent_seed(config.seed ^ 0x3b, i))).collect();

    let horizon = env.spec().horizon() as u64;
    let per_update = config.n_parallel_envs as u64 * horizon;
    let n_updates = (config.total_env_steps as u64).div_ceil(per_update.max(1)) as usize;
    let first_year = env.spec().first_year;
    let record_years = env.spec().horizon() + env.spec().lookahead_years;
    let mut store = TrajectoryStore::new(
        env.engine_tag(),
        &env.spec().name,
        first_year,
        record_years,
        env.registry().len(),
    );
    let mut episodes = Vec::new();
    let mut updates = Vec::new();
    let mut env_steps = 0u64;
    let mut episode = 0u64;
    let mut best: Option<(f64, usize, Vec<PolicyNet>)> = None;
    let mut stopped_early = false;

    for u in 0..n_updates {
        let mut rollouts = Vec::with_capacity(config.n_parallel_envs);
        for _ in 0..config.n_parallel_envs {
            let seed = config.seed.wrapping_add(episode);
            match play_episode(env, &policies, seed, ActionMode::Sample, &mut act_rng) {
                Ok(ro) => {
                    env_steps += ro.actions.len() as u64;
                    episodes.push(episode_log(env, &ro, episode, env_steps)?);
                    if episode % config.store_every as u64 == 0 {
                        store.push(episode, &ro.record)?;
                    }
                    rollouts.push(ro);
                }
                Err(e) => log::warn!("episode {episode} aborted: {e}"),
            }
            episode += 1;
        }
        if rollouts.is_empty() {
            return Err(Error::InvalidInput(format!("every episode of update {u} failed")));
        }
        let mut losses = Vec::with_capacity(n);
        for i in 0..n {
            let batch = agent_batch(&rollouts, i, &config.ppo);
            losses.push(ppo_update(
                &mut policies.agents[i],
                &mut opts[i],
                &batch,
                &config.ppo,
                &mut mb_rngs[i],
            ));
        }
        let mean_return = rollouts
            .iter()
            .map(|ro| ro.rewards.iter().flatten().sum::<f64>() / n as f64)
            .sum::<f64>()
            / rollouts.len() as f64;
        log::info!(
            "update {u}/{n_updates} steps {env_steps} mean return {mean_return:.4} entropy {:.3}",
            losses[0].loss.entropy
        );
        updates.push(UpdateLog {
            update: u,
            env_steps,
            mean_return,
            losses,
        });
        let improved = match &best {
            None => true,
            Some((b, _, _)) => mean_return > b + config.plateau_tolerance * b.abs(),
        };
        if improved {
            best = Some((mean_return, u, policies.agents.clone()));
        } else if config.plateau_window > 0 {
            let since = u - best.as_ref().map_or(u, |b| b.1);
            if since >= config.plateau_window {
                log::info!("mean return plateaued for {since} updates; stopping");
                stopped_early = true;
                break;
            }
        }
    }
    if let (Some((b, bu, agents)), Some(last)) = (best, updates.last()) {
        if last.mean_return < b - config.plateau_tolerance * b.abs() {
            log::warn!(
                "final mean return {:.4} is below the best {b:.4} from update {bu}; keeping the best policies",
                last.mean_return
            );
            policies.agents = agents;
        }
    }
    Ok(TrainOutcome {
        policies,
        episodes,
        updates,
        store,
        env_steps,
        stopped_early,
    })
}

/// Episode returns per agent, one row per episode.
pub fn write_reward_csv(path: &Path, episodes: &[EpisodeLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let n = episodes.first().map_or(0, |e| e.returns.len());
    let mut head = vec!["episode".to_string(), "env_steps".to_string()];
    head.extend((0..n).map(|i| format!("agent_{i}")));
    w.write_record(&head)?;
    for e in episodes {
        let mut row = vec![e.episode.to_string(), e.env_steps.to_string()];
        row.extend(e.returns.iter().map(|r| format!("{r:e}")));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Mean lever effort per agent per episode.
pub fn write_lever_csv(path: &Path, episodes: &[EpisodeLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["episode", "env_steps", "agent", "energy", "methane", "agriculture", "adaptation"])?;
    for e in episodes {
        for (i, l) in e.efforts.iter().enumerate() {
            w.write_record(&[
                e.episode.to_string(),
                e.env_steps.to_string(),
                i.to_string(),
                format!("{:e}", l[0]),
                format!("{:e}", l[1]),
                format!("{:e}", l[2]),
                format!("{:e}", l[3]),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{MockBackend, ScenarioSpec};
    use crate::scenario::baseline::{synthetic_baseline, BaselineConfig};
    use crate::species::default_registry;

    fn mock_env(spec: ScenarioSpec) -> ClimateEnv {
        let reg = default_registry();
        let base = synthetic_baseline(&reg, &BaselineConfig::default()).unwrap();
        ClimateEnv::new(spec, reg, base, Box::new(MockBackend::constant(1.2))).unwrap()
    }

    fn small() -> TrainConfig {
        TrainConfig {
            hidden: 4,
            n_parallel_envs: 3,
            total_env_steps: 2 * 3 * 35,
            ppo: PpoConfig {
                epochs: 1,
                minibatch_episodes: 3,
                ..PpoConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn rollout_shapes_and_record_length() {
        let mut env = mock_env(ScenarioSpec::homogeneous());
        let pol = PolicySet::new(4, env.observation_len(), 4, 0, ObsNormalizer::identity(46));
        let ro = play_episode(&mut env, &pol, 1, ActionMode::Sample, &mut seeded_rng(0)).unwrap();
        assert_eq!(ro.actions.len(), 35);
        assert!(ro.actions.iter().all(|a| a.len() == 4));
        assert_eq!(ro.record.n_years(), 50);
        assert_eq!(ro.record.emissions.len(), 50 * 40);
    }

    #[test]
    fn training_is_reproducible() {
        let run = || {
            let mut env = mock_env(ScenarioSpec::homogeneous());
            let out = train(&mut env, &small()).unwrap();
            (out.policies.hashes(), out.episodes, out.store)
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert_eq!(a.1.len(), 6);
        assert_eq!(a.2.len(), 6);
    }

    #[test]
    fn updating_one_agent_leaves_the_others_untouched() {
        let mut env = mock_env(ScenarioSpec::homogeneous());
        let mut pol = PolicySet::new(4, env.observation_len(), 4, 0, ObsNormalizer::identity(46));
        let ros: Vec<_> = (0..2)
            .map(|s| play_episode(&mut env, &pol, s, ActionMode::Sample, &mut seeded_rng(s)).unwrap())
            .collect();
        let before = pol.hashes();
        let cfg = PpoConfig::default();
        let batch = agent_batch(&ros, 2, &cfg);
        let mut opt = Adam::new(AdamConfig::default(), &pol.agents[2].params);
        ppo_update(&mut pol.agents[2], &mut opt, &batch, &cfg, &mut seeded_rng(0));
        let after = pol.hashes();
        for i in 0..4 {
            assert_eq!(before[i] == after[i], i != 2, "agent {i}");
        }
    }

    #[test]
    fn zero_costs_give_zero_rewards() {
        let mut spec = ScenarioSpec::homogeneous();
        for c in &mut spec.costs {
            *c = crate::env::AgentCosts {
                climate: 0.0,
                energy: 0.0,
                methane: 0.0,
                agriculture: 0.0,
                adaptation: 0.0,
            };
        }
        let mut env = mock_env(spec);
        let out = train(&mut env, &small()).unwrap();
        assert!(out.episodes.iter().all(|e| e.returns.iter().all(|&r| r == 0.0)));
    }

    #[test]
    fn plateau_stops_early() {
        let mut env = mock_env(ScenarioSpec::homogeneous());
        let cfg = TrainConfig {
            total_env_steps: 20 * 3 * 35,
            plateau_window: 2,
            plateau_tolerance: 10.0,
            ..small()
        };
        let out = train(&mut env, &cfg).unwrap();
        assert!(out.stopped_early);
        assert_eq!(out.updates.len(), 3);
    }

    #[test]
    fn policy_set_round_trip() {
        let mut p = PolicySet::new(3, 7, 4, 5, ObsNormalizer::identity(7));
        p.scenario = "x".into();
        p.engine = EngineTag::Sim;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        p.save(&path).unwrap();
        assert_eq!(PolicySet::load(&path).unwrap(), p);
    }

    #[test]
    fn final_efforts_average_the_tail() {
        let log = |e: u64, v: f64| EpisodeLog {
            episode: e,
            env_steps: 0,
            returns: vec![0.0],
            efforts: vec![[v, 0.0, 0.0, 0.0]],
        };
        let eps: Vec<_> = (0..10).map(|e| log(e, if e == 9 { 1.0 } else { 0.0 })).collect();
        assert_eq!(final_efforts(&eps, 0.1)[0], 1.0);
        assert_eq!(final_efforts(&eps, 0.2)[0], 0.5);
    }
}
