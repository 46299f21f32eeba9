//! Deterministic run metrics.
//!
//! Every run emits one [`MetricsLog`]: an evaluation row per eval point
//! (fixed column order, documented in [`METRICS_COLUMNS`]) plus
//! per-component update counters that make algorithm-variant purity
//! assertable (e.g. a run that must never touch the planner shows
//! `planner = 0`). Serialization goes through Rust's shortest
//! round-trip float formatting, so identical runs produce byte-identical
//! tables; columns that do not apply to a variant hold `NaN`.

use super::TrainerError;
use std::fmt::Write as _;
use std::path::Path;

/// Column order of the delimited metrics table.
pub const METRICS_COLUMNS: [&str; 13] = [
    "epoch",
    "env_steps",
    "mean_return",
    "success_rate",
    "mean_episode_len",
    "planner_mse",
    "discriminator_loss",
    "q_loss",
    "planner_depg_loss",
    "planner_supervised_loss",
    "planner_cdepg_loss",
    "invdyn_loss",
    "policy_loss",
];

/// One evaluation point. Loss columns hold the mean over the epoch's
/// gradient steps (or `NaN` where the variant has no such component).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    /// Cumulative environment interactions, including pre-training.
    pub env_steps: u64,
    pub mean_return: f64,
    pub success_rate: f64,
    pub mean_episode_len: f64,
    pub planner_mse: f64,
    pub discriminator_loss: f64,
    pub q_loss: f64,
    pub planner_depg_loss: f64,
    pub planner_supervised_loss: f64,
    pub planner_cdepg_loss: f64,
    pub invdyn_loss: f64,
    pub policy_loss: f64,
}

impl MetricsRow {
    fn to_csv_line(&self) -> String {
        format!(
            "{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            self.epoch,
            self.env_steps,
            self.mean_return,
            self.success_rate,
            self.mean_episode_len,
            self.planner_mse,
            self.discriminator_loss,
            self.q_loss,
            self.planner_depg_loss,
            self.planner_supervised_loss,
            self.planner_cdepg_loss,
            self.invdyn_loss,
            self.policy_loss,
        )
    }
}

/// How often each trainable component received an optimizer step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UpdateCounters {
    pub planner: u64,
    pub invdyn: u64,
    pub q: u64,
    pub discriminator: u64,
    pub policy: u64,
}

/// The complete measurement record of one agent's run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub env_id: String,
    pub variant: String,
    pub seed: u64,
    /// Hex digest of the configuration that produced this log.
    pub config_hash: String,
    pub rows: Vec<MetricsRow>,
    pub counters: UpdateCounters,
}

impl MetricsLog {
    pub fn new(env_id: String, variant: String, seed: u64, config_hash: String) -> Self {
        MetricsLog {
            env_id,
            variant,
            seed,
            config_hash,
            rows: Vec::new(),
            counters: UpdateCounters::default(),
        }
    }

    /// Appends an evaluation row; the environment-step axis must not move
    /// backwards.
    pub fn push_row(&mut self, row: MetricsRow) {
        if let Some(last) = self.rows.last() {
            assert!(
                row.env_steps >= last.env_steps,
                "metrics rows must be pushed in env-step order ({} after {})",
                row.env_steps,
                last.env_steps
            );
        }
        self.rows.push(row);
    }

    pub fn final_row(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }

    /// Environment steps at the first evaluation whose success rate reached
    /// `threshold`, if any did.
    pub fn steps_to_success(&self, threshold: f64) -> Option<u64> {
        self.rows
            .iter()
            .find(|r| r.success_rate >= threshold)
            .map(|r| r.env_steps)
    }

    /// The delimited-text table: `key=value` metadata comments, one header
    /// line, one line per evaluation row, and a trailing counters comment.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# env_id={} variant={} seed={} config_hash={}",
            self.env_id, self.variant, self.seed, self.config_hash
        );
        let _ = writeln!(out, "{}", METRICS_COLUMNS.join(","));
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.to_csv_line());
        }
        let c = &self.counters;
        let _ = writeln!(
            out,
            "# updates planner={} invdyn={} q={} discriminator={} policy={}",
            c.planner, c.invdyn, c.q, c.discriminator, c.policy
        );
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), TrainerError> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Inverse of [`Self::to_csv`]: accepts exactly the format this module
    /// writes (header comment, column line, data rows, counters comment).
    pub fn from_csv(text: &str) -> Result<Self, TrainerError> {
        fn bad(reason: impl Into<String>) -> TrainerError {
            TrainerError::MalformedMetrics {
                reason: reason.into(),
            }
        }
        fn kv<'a>(fields: &'a [&str], key: &str) -> Result<&'a str, TrainerError> {
            fields
                .iter()
                .find_map(|f| f.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| bad(format!("missing '{key}=' in header comment")))
        }

        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty input"))?;
        let header_fields: Vec<&str> = header
            .strip_prefix('#')
            .ok_or_else(|| bad("first line must be the '# env_id=…' comment"))?
            .split_whitespace()
            .collect();
        let env_id = kv(&header_fields, "env_id")?.to_string();
        let variant = kv(&header_fields, "variant")?.to_string();
        let seed: u64 = kv(&header_fields, "seed")?
            .parse()
            .map_err(|_| bad("seed is not an integer"))?;
        let config_hash = kv(&header_fields, "config_hash")?.to_string();

        let columns = lines.next().ok_or_else(|| bad("missing column line"))?;
        if columns != METRICS_COLUMNS.join(",") {
            return Err(bad(format!("unexpected column line: {columns}")));
        }

        let mut rows = Vec::new();
        let mut counters = None;
        for line in lines {
            if let Some(rest) = line.strip_prefix('#') {
                let fields: Vec<&str> = rest.split_whitespace().collect();
                if fields.first() != Some(&"updates") {
                    return Err(bad(format!("unexpected trailing comment: {line}")));
                }
                let int = |key: &str| -> Result<u64, TrainerError> {
                    kv(&fields, key)?
                        .parse()
                        .map_err(|_| bad(format!("counter '{key}' is not an integer")))
                };
                counters = Some(UpdateCounters {
                    planner: int("planner")?,
                    invdyn: int("invdyn")?,
                    q: int("q")?,
                    discriminator: int("discriminator")?,
                    policy: int("policy")?,
                });
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != METRICS_COLUMNS.len() {
                return Err(bad(format!(
                    "row has {} fields, expected {}",
                    cells.len(),
                    METRICS_COLUMNS.len()
                )));
            }
            let f = |i: usize| -> Result<f64, TrainerError> {
                cells[i]
                    .parse()
                    .map_err(|_| bad(format!("field '{}' is not a number", cells[i])))
            };
            let row = MetricsRow {
                epoch: cells[0]
                    .parse()
                    .map_err(|_| bad("epoch is not an integer"))?,
                env_steps: cells[1]
                    .parse()
                    .map_err(|_| bad("env_steps is not an integer"))?,
                mean_return: f(2)?,
                success_rate: f(3)?,
                mean_episode_len: f(4)?,
                planner_mse: f(5)?,
                discriminator_loss: f(6)?,
                q_loss: f(7)?,
                planner_depg_loss: f(8)?,
                planner_supervised_loss: f(9)?,
                planner_cdepg_loss: f(10)?,
                invdyn_loss: f(11)?,
                policy_loss: f(12)?,
            };
            if let Some(prev) = rows.last() {
                let prev: &MetricsRow = prev;
                if row.env_steps < prev.env_steps {
                    return Err(bad("env_steps column is not monotone"));
                }
            }
            rows.push(row);
        }
        Ok(MetricsLog {
            env_id,
            variant,
            seed,
            config_hash,
            rows,
            counters: counters.ok_or_else(|| bad("missing trailing '# updates …' comment"))?,
        })
    }
}
