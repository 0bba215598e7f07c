use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column order of the metrics CSV.
pub const COLUMNS: [&str; 22] = [
    "env",
    "algo",
    "seed",
    "epoch",
    "env_steps",
    "episodes",
    "ep_reward_mean",
    "ep_cost_mean",
    "cumulative_cost",
    "eta",
    "lambda",
    "beta_mu",
    "beta_sigma",
    "elbo",
    "c_mu",
    "c_sigma",
    "slater_ok",
    "loss_r",
    "loss_c",
    "loss_pi",
    "delta_c",
    "cost_bound",
];

/// One row of the metrics CSV. Columns that do not apply to an algorithm
/// (or to epochs before the first update) are 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub env: String,
    pub algo: String,
    pub seed: u64,
    pub epoch: usize,
    pub env_steps: usize,
    pub episodes: usize,
    pub ep_reward_mean: f64,
    pub ep_cost_mean: f64,
    pub cumulative_cost: f64,
    pub eta: f64,
    pub lambda: f64,
    pub beta_mu: f64,
    pub beta_sigma: f64,
    pub elbo: f64,
    pub c_mu: f64,
    pub c_sigma: f64,
    /// 1 when every E-step of the epoch certified Slater's condition.
    pub slater_ok: u8,
    pub loss_r: f64,
    pub loss_c: f64,
    pub loss_pi: f64,
    pub delta_c: f64,
    pub cost_bound: f64,
}

impl EpochMetrics {
    pub fn to_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.env,
            self.algo,
            self.seed,
            self.epoch,
            self.env_steps,
            self.episodes,
            self.ep_reward_mean,
            self.ep_cost_mean,
            self.cumulative_cost,
            self.eta,
            self.lambda,
            self.beta_mu,
            self.beta_sigma,
            self.elbo,
            self.c_mu,
            self.c_sigma,
            self.slater_ok,
            self.loss_r,
            self.loss_c,
            self.loss_pi,
            self.delta_c,
            self.cost_bound
        )
    }

    pub fn from_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != COLUMNS.len() {
            return Err(Error::Schema(format!("expected {} columns, got {}", COLUMNS.len(), f.len())));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse()
                .map_err(|_| Error::Schema(format!("column {} is not numeric: '{}'", COLUMNS[i], f[i])))
        };
        let int = |i: usize| -> Result<usize> {
            f[i].parse()
                .map_err(|_| Error::Schema(format!("column {} is not an integer: '{}'", COLUMNS[i], f[i])))
        };
        Ok(Self {
            env: f[0].into(),
            algo: f[1].into(),
            seed: int(2)? as u64,
            epoch: int(3)?,
            env_steps: int(4)?,
            episodes: int(5)?,
            ep_reward_mean: num(6)?,
            ep_cost_mean: num(7)?,
            cumulative_cost: num(8)?,
            eta: num(9)?,
            lambda: num(10)?,
            beta_mu: num(11)?,
            beta_sigma: num(12)?,
            elbo: num(13)?,
            c_mu: num(14)?,
            c_sigma: num(15)?,
            slater_ok: int(16)? as u8,
            loss_r: num(17)?,
            loss_c: num(18)?,
            loss_pi: num(19)?,
            delta_c: num(20)?,
            cost_bound: num(21)?,
        })
    }

    pub fn numeric(&self) -> [f64; 19] {
        [
            self.epoch as f64,
            self.env_steps as f64,
            self.episodes as f64,
            self.ep_reward_mean,
            self.ep_cost_mean,
            self.cumulative_cost,
            self.eta,
            self.lambda,
            self.beta_mu,
            self.beta_sigma,
            self.elbo,
            self.c_mu,
            self.c_sigma,
            self.slater_ok as f64,
            self.loss_r,
            self.loss_c,
            self.loss_pi,
            self.delta_c,
            self.cost_bound,
        ]
    }
}

pub fn header() -> String {
    COLUMNS.join(",")
}

pub fn write_header<W: Write>(w: &mut W) -> Result<()> {
    writeln!(w, "{}", header())?;
    Ok(())
}

/// Reads a metrics CSV, checking the header.
pub fn read_metrics(path: &std::path::Path) -> Result<Vec<EpochMetrics>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == header() => {}
        _ => return Err(Error::Schema(format!("{} lacks the metrics header", path.display()))),
    }
    lines.filter(|l| !l.trim().is_empty()).map(EpochMetrics::from_row).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_round_trip() {
        let m = EpochMetrics {
            env: "grid".into(),
            algo: "cvpo".into(),
            seed: 3,
            epoch: 4,
            env_steps: 100,
            episodes: 2,
            ep_reward_mean: 0.5,
            ep_cost_mean: 1.25,
            cumulative_cost: 7.0,
            eta: 0.1,
            lambda: 2.0,
            beta_mu: 1.0,
            beta_sigma: 0.0,
            elbo: -0.3,
            c_mu: 1e-4,
            c_sigma: 2e-5,
            slater_ok: 1,
            loss_r: 0.01,
            loss_c: 0.02,
            loss_pi: 1.5,
            delta_c: 0.0,
            cost_bound: 0.3,
        };
        assert_eq!(EpochMetrics::from_row(&m.to_row()).unwrap(), m);
        assert_eq!(header().split(',').count(), COLUMNS.len());
    }
}
