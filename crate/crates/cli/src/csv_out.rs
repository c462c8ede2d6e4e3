//! CSV schemas. The first header cell of every file is its schema tag; in
//! data rows that column holds the row kind (`episode`, `summary`, ...).
//!
//! `atacom-rollout/1` columns, in order:
//! `row, episode, steps, return, discounted_return, final_goal_distance,
//! min_margin, violation_steps, collision, early_termination, reached_goal,
//! saturation_steps`. The summary row holds the episode count, mean steps,
//! mean returns, mean final distance, the minimum margin and the counts
//! (sums) of the remaining columns.

use std::io::Write;

use atacom::learn::{CemLogRow, EpisodeMetrics, Evaluation};

pub const ROLLOUT_SCHEMA: &str = "atacom-rollout/1";
pub const TRAIN_SCHEMA: &str = "atacom-train/1";
pub const COMPARE_SCHEMA: &str = "atacom-compare/1";

pub const ROLLOUT_COLUMNS: [&str; 11] = [
    "episode",
    "steps",
    "return",
    "discounted_return",
    "final_goal_distance",
    "min_margin",
    "violation_steps",
    "collision",
    "early_termination",
    "reached_goal",
    "saturation_steps",
];

fn flag(b: bool) -> String {
    u8::from(b).to_string()
}

fn episode_record(m: &EpisodeMetrics) -> Vec<String> {
    vec![
        "episode".into(),
        m.episode.to_string(),
        m.steps.to_string(),
        m.total_return.to_string(),
        m.discounted_return.to_string(),
        m.final_goal_distance.to_string(),
        m.min_margin.to_string(),
        m.violation_steps.to_string(),
        flag(m.collision),
        flag(m.early_termination),
        flag(m.reached_goal),
        m.saturation_steps.to_string(),
    ]
}

fn count(eval: &Evaluation, f: impl Fn(&EpisodeMetrics) -> bool) -> String {
    eval.episodes.iter().filter(|m| f(m)).count().to_string()
}

pub fn write_rollout(w: impl Write, eval: &Evaluation) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec![ROLLOUT_SCHEMA];
    header.extend(ROLLOUT_COLUMNS);
    out.write_record(&header)?;
    for m in &eval.episodes {
        out.write_record(episode_record(m))?;
    }
    out.write_record([
        "summary".to_string(),
        eval.episodes.len().to_string(),
        eval.mean_steps().to_string(),
        eval.mean_return().to_string(),
        eval.mean_discounted_return().to_string(),
        eval.mean_final_distance().to_string(),
        eval.min_margin().to_string(),
        eval.violation_steps().to_string(),
        count(eval, |m| m.collision),
        count(eval, |m| m.early_termination),
        count(eval, |m| m.reached_goal),
        eval.episodes.iter().map(|m| m.saturation_steps).sum::<usize>().to_string(),
    ])?;
    out.flush()?;
    Ok(())
}

pub fn write_training_log(w: impl Write, log: &[CemLogRow]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        TRAIN_SCHEMA,
        "iteration",
        "best_return",
        "mean_return",
        "mean_final_distance",
        "iteration_steps",
        "cumulative_violations",
        "cumulative_collisions",
    ])?;
    for r in log {
        out.write_record([
            "iteration".to_string(),
            r.iteration.to_string(),
            r.best_return.to_string(),
            r.mean_return.to_string(),
            r.mean_final_distance.to_string(),
            r.iteration_steps.to_string(),
            r.cumulative_violations.to_string(),
            r.cumulative_collisions.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// One configuration of a comparison sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub slack: String,
    pub basis: String,
    pub correction_gain: f64,
    pub episodes: usize,
    pub collisions: usize,
    pub violation_steps: usize,
    pub mean_return: f64,
    pub mean_discounted_return: f64,
    pub mean_steps: f64,
}

pub fn write_compare(w: impl Write, rows: &[CompareRow]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        COMPARE_SCHEMA,
        "slack",
        "basis",
        "correction_gain",
        "episodes",
        "collisions",
        "violation_steps",
        "mean_return",
        "mean_discounted_return",
        "mean_steps",
    ])?;
    for r in rows {
        out.write_record([
            "config".to_string(),
            r.slack.clone(),
            r.basis.clone(),
            r.correction_gain.to_string(),
            r.episodes.to_string(),
            r.collisions.to_string(),
            r.violation_steps.to_string(),
            r.mean_return.to_string(),
            r.mean_discounted_return.to_string(),
            r.mean_steps.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
