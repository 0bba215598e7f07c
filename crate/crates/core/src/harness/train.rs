use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::agent::Policy;
use super::checkpoint::save_checkpoint;
use super::config::{Algo, TrainConfig};
use super::metrics::{write_header, EpochMetrics};
use crate::baseline::{pd_actor_step, pid_update, PidState};
use crate::cmdp::{convert_threshold, ReplayBuffer, Trajectory, Transition};
use crate::critics::CriticPair;
use crate::diagnostics::{
    cost_advantage_gap, cost_advantage_gap_estimate, cost_bound, elbo_estimate, particle_density,
};
use crate::envs::{AnyEnv, Environment};
use crate::error::{Error, Result};
use crate::estep::{
    cost_minimizing_weights, min_feasible_cost, solve_dual, variational_weights, DualOptions, DualStatus,
    ParticleSet, VariationalWeights,
};
use crate::mstep::{exact_tabular_mstep, mean_kl, policy_update, MStepState};
use crate::nn::Optimizer;
use crate::policy::{GaussianPolicy, TabularPolicy};

const DELTA_STATES: usize = 16;
const DELTA_SAMPLES: usize = 16;

/// Per-epoch accumulator over learning updates.
#[derive(Default)]
struct UpdateStats {
    n: usize,
    loss_r: f64,
    loss_c: f64,
    loss_pi: f64,
    all_slater: bool,
    all_infeasible: bool,
    eta: f64,
    lam: f64,
    elbo: f64,
    c_mu: f64,
    c_sigma: f64,
    delta_c: f64,
    bound: f64,
}

/// State of one training run.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub env: AnyEnv,
    pub eps1: f64,
    pub policy: Policy,
    pub critics: CriticPair,
    pub mstep: MStepState,
    pub pid: PidState,
    buffer: ReplayBuffer,
    popt: Optimizer,
    rng: ChaCha8Rng,
    act_rng: ChaCha8Rng,
    env_seeds: ChaCha8Rng,
    pub epoch: usize,
    pub env_steps: usize,
    pub episodes: usize,
    pub cumulative_cost: f64,
    /// `(reward, cost)` of each episode rolled out in the latest epoch.
    pub last_episodes: Vec<(f64, f64)>,
    infeasible_streak: usize,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let env = cfg.build_env()?;
        let eps1 = cfg.eps1(&env)?;
        let spec = env.spec().clone();
        let mut init_rng = stream(cfg.seed, 0);
        let hidden = [cfg.hidden, cfg.hidden];
        let (policy, critics, popt) = match &env {
            AnyEnv::Grid(g) => {
                let m = g.model();
                let pol = TabularPolicy::uniform(m.n_states, m.n_actions);
                let cr = CriticPair::tabular(m.n_states, m.n_actions, cfg.tabular_critic_lr, cfg.gamma)?;
                (Policy::Tabular(pol), cr, Optimizer::sgd(cfg.pd_lr))
            }
            AnyEnv::Circle(_) => {
                let sd = spec.state_space.encoded_len();
                let (low, high) = match &spec.action_space {
                    crate::cmdp::ActionSpace::Box { low, high } => (low.clone(), high.clone()),
                    _ => unreachable!("circle has box actions"),
                };
                let ad = low.len();
                let pol = GaussianPolicy::new(sd, low, high, &hidden, cfg.init_var, &mut init_rng)?;
                let cr = CriticPair::mlp(sd, ad, &hidden, cfg.critic_lr, cfg.gamma, &mut init_rng)?;
                let n = pol.n_params();
                (Policy::Gaussian(pol), cr, Optimizer::adam(cfg.policy_lr, n))
            }
        };
        let mstep = MStepState {
            alpha_mu: cfg.alpha_mu,
            alpha_sigma: cfg.alpha_sigma,
            alpha_theta: cfg.policy_lr,
            eps_mu: cfg.eps_mu,
            eps_sigma: cfg.eps_sigma,
            iters: cfg.mstep_iters,
            ..MStepState::default()
        };
        let buffer = ReplayBuffer::new(spec, cfg.buffer, cfg.seed, 1)?;
        Ok(Self {
            pid: PidState::with_gains(cfg.kp, cfg.ki, cfg.kd),
            rng: stream(cfg.seed, 2),
            act_rng: stream(cfg.seed, 3),
            env_seeds: stream(cfg.seed, 4),
            cfg,
            env,
            eps1,
            policy,
            critics,
            mstep,
            buffer,
            popt,
            epoch: 0,
            env_steps: 0,
            episodes: 0,
            cumulative_cost: 0.0,
            last_episodes: Vec::new(),
            infeasible_streak: 0,
        })
    }

    fn rollout(&mut self) -> Result<Trajectory> {
        let seed = self.env_seeds.random::<u64>();
        let mut s = self.env.reset(seed);
        let mut traj = Trajectory::new();
        loop {
            let a = self.policy.act(&s, false, &mut self.act_rng)?;
            let st = self.env.step(&a)?;
            let t = Transition {
                state: s,
                action: a,
                next_state: st.next_state.clone(),
                reward: st.reward,
                cost: st.cost,
                terminal: st.terminal && !st.truncated,
            };
            self.buffer.push(t.clone())?;
            traj.push(t);
            s = st.next_state;
            if st.terminal {
                break;
            }
        }
        Ok(traj)
    }

    /// Runs one epoch: rollouts, `updates` learning steps, then metrics.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        let mut rew = 0.0;
        let mut cost = 0.0;
        self.last_episodes.clear();
        for _ in 0..self.cfg.rollouts {
            let tr = self.rollout()?;
            self.env_steps += tr.len();
            rew += tr.episodic_reward();
            cost += tr.episodic_cost();
            self.last_episodes.push((tr.episodic_reward(), tr.episodic_cost()));
        }
        self.episodes += self.cfg.rollouts;
        self.cumulative_cost += cost;
        let n_roll = self.cfg.rollouts as f64;
        let mut st = UpdateStats {
            all_slater: true,
            all_infeasible: true,
            ..UpdateStats::default()
        };
        if self.buffer.len() >= self.cfg.batch {
            for u in 0..self.cfg.updates {
                let last = u + 1 == self.cfg.updates;
                self.update(&mut st, last)?;
            }
        }
        if self.cfg.algo == Algo::Pd {
            let spec = self.env.spec();
            let jc = convert_threshold(cost / n_roll, spec.episode_limit, spec.gamma)?;
            self.pid = pid_update(self.pid, jc, self.eps1)?;
        }
        if self.cfg.algo == Algo::Cvpo && st.n > 0 && st.all_infeasible {
            self.infeasible_streak += 1;
            if self.infeasible_streak >= self.cfg.abort_after {
                return Err(Error::Infeasible(format!(
                    "E-step infeasible for {} consecutive epochs; the cost limit may be unattainable",
                    self.infeasible_streak
                )));
            }
        } else {
            self.infeasible_streak = 0;
        }
        let n = st.n.max(1) as f64;
        let m = EpochMetrics {
            env: self.cfg.env.to_string(),
            algo: self.cfg.algo.to_string(),
            seed: self.cfg.seed,
            epoch: self.epoch + 1,
            env_steps: self.env_steps,
            episodes: self.episodes,
            ep_reward_mean: rew / n_roll,
            ep_cost_mean: cost / n_roll,
            cumulative_cost: self.cumulative_cost,
            eta: st.eta,
            lambda: if self.cfg.algo == Algo::Pd { self.pid.lambda } else { st.lam },
            beta_mu: if self.cfg.algo == Algo::Cvpo { self.mstep.beta_mu } else { 0.0 },
            beta_sigma: if self.cfg.algo == Algo::Cvpo { self.mstep.beta_sigma } else { 0.0 },
            elbo: st.elbo,
            c_mu: st.c_mu,
            c_sigma: st.c_sigma,
            slater_ok: (st.n > 0 && st.all_slater) as u8,
            loss_r: st.loss_r / n,
            loss_c: st.loss_c / n,
            loss_pi: st.loss_pi / n,
            delta_c: st.delta_c,
            cost_bound: st.bound,
        };
        for v in m.numeric() {
            if !v.is_finite() {
                return Err(Error::Numerical(format!("non-finite metric at epoch {}", self.epoch)));
            }
        }
        self.epoch += 1;
        Ok(m)
    }

    fn update(&mut self, st: &mut UpdateStats, last: bool) -> Result<()> {
        let batch = self.buffer.sample_batch(self.cfg.batch)?;
        let n_next = self.cfg.n_next();
        let (lr, lc) = {
            let policy = &self.policy;
            let rng = &mut self.rng;
            let mut next = |s: &[f64]| -> Vec<(Vec<f64>, f64)> {
                match policy {
                    Policy::Gaussian(p) => {
                        let w = 1.0 / n_next as f64;
                        p.sample_actions(s, n_next, rng).into_iter().map(|a| (a, w)).collect()
                    }
                    Policy::Tabular(p) => p
                        .probs(s[0] as usize)
                        .expect("state in range")
                        .into_iter()
                        .enumerate()
                        .map(|(a, w)| (vec![a as f64], w))
                        .collect(),
                }
            };
            self.critics.td_update(&batch, &mut next)?
        };
        if !(lr.is_finite() && lc.is_finite()) {
            return Err(Error::Numerical("non-finite critic loss".into()));
        }
        st.loss_r += lr;
        st.loss_c += lc;
        st.n += 1;
        match (self.cfg.algo, &self.policy) {
            (Algo::Cvpo, Policy::Gaussian(_)) => self.cvpo_gaussian(&batch, st, last)?,
            (Algo::Cvpo, Policy::Tabular(_)) => self.cvpo_tabular(&batch, st, last)?,
            (Algo::Pd, Policy::Gaussian(_)) => self.pd_gaussian(&batch, st, last)?,
            (Algo::Pd, Policy::Tabular(_)) => self.pd_tabular(&batch, st, last)?,
        }
        self.critics.polyak(self.cfg.polyak)?;
        if let Policy::Gaussian(p) = &mut self.policy {
            p.polyak(self.cfg.polyak)?;
        }
        Ok(())
    }

    /// E-step shared by both policy kinds: weights, dual solution and Slater flag.
    fn estep(&self, ps: &ParticleSet, st: &mut UpdateStats) -> Result<(VariationalWeights, f64)> {
        let slater = min_feasible_cost(ps, self.cfg.eps2)? < self.eps1;
        st.all_slater &= slater;
        let sol = solve_dual(ps, self.eps1, self.cfg.eps2, &DualOptions::default())?;
        st.lam = sol.lam;
        if sol.status == DualStatus::InfeasibleDetected {
            let (w, eta) = cost_minimizing_weights(ps, self.cfg.eps2)?;
            st.eta = eta;
            Ok((w, eta))
        } else {
            st.all_infeasible = false;
            st.eta = sol.eta;
            Ok((variational_weights(ps, &sol)?, sol.eta))
        }
    }

    fn cvpo_gaussian(&mut self, batch: &[Transition], st: &mut UpdateStats, last: bool) -> Result<()> {
        let Policy::Gaussian(pol) = &self.policy else { unreachable!() };
        let k = self.cfg.particles;
        let states: Vec<Vec<f64>> = batch.iter().map(|t| t.state.clone()).collect();
        let mut actions = Vec::with_capacity(states.len() * k);
        for s in &states {
            actions.extend(pol.sample_target_actions(s, k, &mut self.rng));
        }
        let pairs: Vec<(&[f64], &[f64])> = actions
            .iter()
            .enumerate()
            .map(|(i, a)| (states[i / k].as_slice(), a.as_slice()))
            .collect();
        let (qr, qc) = self.critics.q_batch(&pairs);
        let ps = ParticleSet::new(states, actions, qr, qc)?;
        let (w, eta) = self.estep(&ps, st)?;
        let Policy::Gaussian(pol) = &mut self.policy else { unreachable!() };
        let rep = policy_update(pol, &ps, &w, self.mstep, &mut self.popt)?;
        self.mstep = rep.state;
        st.loss_pi += rep.loss;
        st.c_mu = rep.c_mu;
        st.c_sigma = rep.c_sigma;
        let mut lr = Vec::with_capacity(ps.n_states * ps.k);
        let (curs, olds) = (pol.dists(&ps.states), pol.target_dists(&ps.states));
        for (b, (cur, old)) in curs.iter().zip(&olds).enumerate() {
            for a in &ps.actions[b * ps.k..(b + 1) * ps.k] {
                lr.push(cur.log_prob_unchecked(a) - old.log_prob_unchecked(a));
            }
        }
        let theta = particle_density(&ps, &lr)?;
        st.elbo = elbo_estimate(&ps, &w, &theta, eta)?;
        if last {
            let n = ps.states.len().min(DELTA_STATES);
            st.delta_c =
                cost_advantage_gap_estimate(pol, &self.critics, &ps.states[..n], DELTA_SAMPLES, &mut self.rng)?;
            st.bound = cost_bound(self.eps1, self.cfg.gamma, self.mstep.total_kl(), st.delta_c)?;
        }
        Ok(())
    }

    /// Batch states with their frequencies, in first-seen order.
    fn state_counts(batch: &[Transition]) -> (Vec<usize>, Vec<f64>) {
        let mut idx: BTreeMap<usize, usize> = BTreeMap::new();
        let mut order = Vec::new();
        let mut counts = Vec::new();
        for t in batch {
            let s = t.state[0] as usize;
            let j = *idx.entry(s).or_insert_with(|| {
                order.push(s);
                counts.push(0.0);
                order.len() - 1
            });
            counts[j] += 1.0;
        }
        let n = batch.len() as f64;
        (order, counts.into_iter().map(|c| c / n).collect())
    }

    fn cvpo_tabular(&mut self, batch: &[Transition], st: &mut UpdateStats, last: bool) -> Result<()> {
        let Policy::Tabular(pol) = &self.policy else { unreachable!() };
        let na = pol.n_actions;
        let (states, w_s) = Self::state_counts(batch);
        let mut base = Vec::with_capacity(states.len() * na);
        let mut actions = Vec::with_capacity(states.len() * na);
        let mut qr = Vec::new();
        let mut qc = Vec::new();
        for &s in &states {
            base.extend(pol.probs(s)?);
            for a in 0..na {
                let (sv, av) = ([s as f64], [a as f64]);
                actions.push(av.to_vec());
                qr.push(self.critics.q_r(&sv, &av));
                qc.push(self.critics.q_c(&sv, &av));
            }
        }
        let ps = ParticleSet::new(states.iter().map(|&s| vec![s as f64]).collect(), actions, qr, qc)?
            .with_base(base.clone())?
            .with_state_weights(w_s.clone())?;
        let (w, eta) = self.estep(&ps, st)?;
        let sub = TabularPolicy::from_probs(na, &base)?;
        let budget = self.mstep.total_kl();
        let (new_sub, _) = exact_tabular_mstep(&sub, &w.w, Some(&w_s), budget)?;
        let new_rows = new_sub.table();
        st.c_mu = mean_kl(&base, &new_rows, na, Some(&w_s))?;
        st.c_sigma = 0.0;
        let theta = VariationalWeights {
            n_states: states.len(),
            k: na,
            w: new_rows.clone(),
        };
        st.elbo = elbo_estimate(&ps, &w, &theta, eta)?;
        st.loss_pi -= (0..w.w.len())
            .map(|i| w_s[i / na] * w.w[i] * new_rows[i].max(1e-300).ln())
            .sum::<f64>();
        let Policy::Tabular(pol) = &mut self.policy else { unreachable!() };
        let old_table = pol.table();
        for (j, &s) in states.iter().enumerate() {
            for a in 0..na {
                pol.logits[s * na + a] = new_rows[j * na + a].ln();
            }
        }
        if last {
            self.tabular_bound(&old_table, st, budget)?;
        }
        Ok(())
    }

    fn tabular_bound(&self, old_table: &[f64], st: &mut UpdateStats, eps: f64) -> Result<()> {
        let (AnyEnv::Grid(g), Policy::Tabular(pol)) = (&self.env, &self.policy) else {
            return Ok(());
        };
        st.delta_c = cost_advantage_gap(g.model(), old_table, &pol.table())?;
        st.bound = cost_bound(self.eps1, self.cfg.gamma, eps, st.delta_c)?;
        Ok(())
    }

    fn pd_gaussian(&mut self, batch: &[Transition], st: &mut UpdateStats, _last: bool) -> Result<()> {
        let Policy::Gaussian(pol) = &mut self.policy else { unreachable!() };
        let states: Vec<Vec<f64>> = batch.iter().map(|t| t.state.clone()).collect();
        let obj = pd_actor_step(pol, &self.critics, &states, self.pid.lambda, &mut self.popt, &mut self.rng)?;
        st.loss_pi -= obj;
        st.all_slater = false;
        Ok(())
    }

    fn pd_tabular(&mut self, batch: &[Transition], st: &mut UpdateStats, _last: bool) -> Result<()> {
        let (states, w_s) = Self::state_counts(batch);
        let lam = self.pid.lambda;
        let Policy::Tabular(pol) = &mut self.policy else { unreachable!() };
        let na = pol.n_actions;
        let mut obj = 0.0;
        for (j, &s) in states.iter().enumerate() {
            let p = pol.probs(s)?;
            let l: Vec<f64> = (0..na)
                .map(|a| {
                    let (sv, av) = ([s as f64], [a as f64]);
                    self.critics.q_r(&sv, &av) - lam * self.critics.q_c(&sv, &av)
                })
                .collect();
            let v: f64 = p.iter().zip(&l).map(|(x, y)| x * y).sum();
            obj += w_s[j] * v;
            for a in 0..na {
                pol.logits[s * na + a] += self.cfg.pd_lr * (l[a] - v);
            }
        }
        st.loss_pi -= obj;
        st.all_slater = false;
        Ok(())
    }
}

/// Trains with `cfg` and writes `metrics.csv` (plus checkpoints under
/// `ckpt/`) into `out`. Returns the metrics path.
pub fn run_training(cfg: &TrainConfig, out: &Path) -> Result<PathBuf> {
    let mut tr = Trainer::new(cfg.clone())?;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.txt"), cfg.to_text())?;
    let path = out.join("metrics.csv");
    let mut w = BufWriter::new(fs::File::create(&path)?);
    write_header(&mut w)?;
    for e in 0..cfg.epochs {
        let m = tr.run_epoch()?;
        writeln!(w, "{}", m.to_row())?;
        w.flush()?;
        if cfg.checkpoint_every > 0 && (e + 1) % cfg.checkpoint_every == 0 {
            save_checkpoint(&out.join(format!("ckpt_{:05}", e + 1)), cfg, &tr.policy)?;
        }
    }
    save_checkpoint(&out.join("ckpt"), cfg, &tr.policy)?;
    Ok(path)
}
