use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::eval::quantile;
use super::metrics::{header, read_metrics, EpochMetrics};
use crate::error::{invalid, Error, Result};

/// Files written by [`emit_plotdata`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlotFiles {
    pub long: PathBuf,
    pub aggregate: PathBuf,
    pub reward_vs_cost: PathBuf,
    pub convergence: PathBuf,
}

/// 1-based epochs `first..=last` of the final 20% of an `n`-epoch run.
pub fn convergence_window(n: usize) -> (usize, usize) {
    let w = ((n as f64 * 0.2).ceil() as usize).max(1).min(n.max(1));
    (n + 1 - w, n)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

/// Summary of the convergence window of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSummary {
    pub first: usize,
    pub last: usize,
    pub cost_mean: f64,
    pub cost_q1: f64,
    pub cost_median: f64,
    pub cost_q3: f64,
    pub reward_mean: f64,
}

pub fn window_summary(rows: &[EpochMetrics]) -> Result<WindowSummary> {
    if rows.is_empty() {
        return Err(invalid("run has no epochs"));
    }
    let n = rows.iter().map(|r| r.epoch).max().unwrap_or(0);
    let (first, last) = convergence_window(n);
    let win: Vec<&EpochMetrics> = rows.iter().filter(|r| r.epoch >= first && r.epoch <= last).collect();
    let mut costs: Vec<f64> = win.iter().map(|r| r.ep_cost_mean).collect();
    costs.sort_by(f64::total_cmp);
    let rewards: Vec<f64> = win.iter().map(|r| r.ep_reward_mean).collect();
    Ok(WindowSummary {
        first,
        last,
        cost_mean: mean_std(&costs).0,
        cost_q1: quantile(&costs, 0.25),
        cost_median: quantile(&costs, 0.5),
        cost_q3: quantile(&costs, 0.75),
        reward_mean: mean_std(&rewards).0,
    })
}

/// Reshapes metrics CSVs into plot-ready tables under `out`:
/// `long.csv` (all rows, keyed by env, algo, seed, epoch), `aggregate.csv`
/// (mean and std across seeds per epoch), `reward_vs_cost.csv` and
/// `convergence.csv` (final-20% window per run and pooled per algorithm).
pub fn emit_plotdata(inputs: &[PathBuf], out: &Path) -> Result<PlotFiles> {
    if inputs.is_empty() {
        return Err(invalid("no metrics files given"));
    }
    let mut runs: BTreeMap<(String, String, u64), Vec<EpochMetrics>> = BTreeMap::new();
    for p in inputs {
        for r in read_metrics(p)? {
            let key = (r.env.clone(), r.algo.clone(), r.seed);
            runs.entry(key).or_default().push(r);
        }
    }
    for (k, rows) in &mut runs {
        rows.sort_by_key(|r| r.epoch);
        if rows.windows(2).any(|w| w[0].epoch == w[1].epoch) {
            return Err(Error::Schema(format!("duplicate epochs for run {k:?}")));
        }
    }
    fs::create_dir_all(out)?;

    let mut long = header();
    long.push('\n');
    for rows in runs.values() {
        for r in rows {
            long.push_str(&r.to_row());
            long.push('\n');
        }
    }

    let mut by_epoch: BTreeMap<(String, String, usize), Vec<&EpochMetrics>> = BTreeMap::new();
    for ((env, algo, _), rows) in &runs {
        for r in rows {
            by_epoch.entry((env.clone(), algo.clone(), r.epoch)).or_default().push(r);
        }
    }
    let mut agg = String::from(
        "env,algo,epoch,n_seeds,env_steps_mean,ep_reward_mean,ep_reward_std,ep_cost_mean,ep_cost_std,cumulative_cost_mean,cumulative_cost_std\n",
    );
    let mut rvc = String::from("env,algo,epoch,cumulative_cost_mean,log10_cumulative_cost,ep_reward_mean\n");
    for ((env, algo, epoch), rows) in &by_epoch {
        let col = |f: fn(&EpochMetrics) -> f64| -> Vec<f64> { rows.iter().map(|r| f(r)).collect() };
        let (steps, _) = mean_std(&col(|r| r.env_steps as f64));
        let (rm, rs) = mean_std(&col(|r| r.ep_reward_mean));
        let (cm, cs) = mean_std(&col(|r| r.ep_cost_mean));
        let (km, ks) = mean_std(&col(|r| r.cumulative_cost));
        writeln!(agg, "{env},{algo},{epoch},{},{steps},{rm},{rs},{cm},{cs},{km},{ks}", rows.len()).unwrap();
        let lg = if km > 0.0 { km.log10().to_string() } else { String::new() };
        writeln!(rvc, "{env},{algo},{epoch},{km},{lg},{rm}").unwrap();
    }

    let mut conv =
        String::from("env,algo,seed,first_epoch,last_epoch,cost_mean,cost_q1,cost_median,cost_q3,reward_mean\n");
    let mut pooled: BTreeMap<(String, String), Vec<EpochMetrics>> = BTreeMap::new();
    for ((env, algo, seed), rows) in &runs {
        let w = window_summary(rows)?;
        writeln!(
            conv,
            "{env},{algo},{seed},{},{},{},{},{},{},{}",
            w.first, w.last, w.cost_mean, w.cost_q1, w.cost_median, w.cost_q3, w.reward_mean
        )
        .unwrap();
        pooled
            .entry((env.clone(), algo.clone()))
            .or_default()
            .extend(rows.iter().filter(|r| r.epoch >= w.first).cloned());
    }
    for ((env, algo), rows) in &pooled {
        let mut costs: Vec<f64> = rows.iter().map(|r| r.ep_cost_mean).collect();
        costs.sort_by(f64::total_cmp);
        let rewards: Vec<f64> = rows.iter().map(|r| r.ep_reward_mean).collect();
        writeln!(
            conv,
            "{env},{algo},all,,,{},{},{},{},{}",
            mean_std(&costs).0,
            quantile(&costs, 0.25),
            quantile(&costs, 0.5),
            quantile(&costs, 0.75),
            mean_std(&rewards).0
        )
        .unwrap();
    }

    let files = PlotFiles {
        long: out.join("long.csv"),
        aggregate: out.join("aggregate.csv"),
        reward_vs_cost: out.join("reward_vs_cost.csv"),
        convergence: out.join("convergence.csv"),
    };
    fs::write(&files.long, long)?;
    fs::write(&files.aggregate, agg)?;
    fs::write(&files.reward_vs_cost, rvc)?;
    fs::write(&files.convergence, conv)?;
    Ok(files)
}
