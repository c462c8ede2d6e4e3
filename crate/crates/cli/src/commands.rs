use std::fs;
use std::io::Write;
use std::path::Path;

use atacom::envs::Environment;
use atacom::learn::{cem_train, derive_seed, evaluate_policy, CemResult, Evaluation, LinearPolicy, Policy, RandomPolicy, ZeroPolicy};

use crate::config::{LoadedConfig, PolicyChoice, RunConfig};
use crate::csv_out::{self, CompareRow};
use crate::CliError;

/// Stream used to derive the held-out evaluation seed after training.
const EVAL_STREAM: u64 = 7;

pub fn build_policy(cfg: &RunConfig, env: &dyn Environment) -> Result<Box<dyn Policy>, CliError> {
    Ok(match cfg.experiment.policy {
        PolicyChoice::Random => Box::new(RandomPolicy {
            bounds: env.alpha_bounds().clone(),
        }),
        PolicyChoice::Zero => Box::new(ZeroPolicy {
            dim: env.alpha_bounds().dim(),
        }),
        PolicyChoice::Saved => {
            let path = cfg.experiment.policy_file.as_ref().expect("checked by validate");
            let p = LinearPolicy::load(path).map_err(|e| CliError::Config(e.to_string()))?;
            if p.feature_dim() != env.feature_dim() || p.action_dim() != env.alpha_bounds().dim() {
                return Err(CliError::Config(format!(
                    "policy {} is {}x{}, env needs {}x{}",
                    path.display(),
                    p.action_dim(),
                    p.feature_dim(),
                    env.alpha_bounds().dim(),
                    env.feature_dim()
                )));
            }
            Box::new(p)
        }
    })
}

/// Creates the output directory and echoes the configuration into it.
fn prepare_output(loaded: &LoadedConfig) -> Result<&Path, CliError> {
    let dir = loaded.config.experiment.output.as_path();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.input.toml"), &loaded.source)?;
    let mut resolved = String::new();
    for o in &loaded.overrides {
        resolved.push_str(&format!("# --set {o}\n"));
    }
    resolved.push_str(&loaded.config.to_toml());
    fs::write(dir.join("config.resolved.toml"), resolved)?;
    Ok(dir)
}

fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> Result<(), CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

fn summary_line(eval: &Evaluation) -> String {
    format!(
        "episodes {} | collisions {} | violation steps {}/{} | min margin {:.4} | mean return {:.2} | mean steps {:.1} | goals {}",
        eval.episodes.len(),
        eval.collisions(),
        eval.violation_steps(),
        eval.total_steps(),
        eval.min_margin(),
        eval.mean_return(),
        eval.mean_steps(),
        eval.episodes.iter().filter(|m| m.reached_goal).count()
    )
}

pub fn cmd_rollout(loaded: &LoadedConfig, out: &mut dyn Write) -> Result<Evaluation, CliError> {
    let cfg = &loaded.config;
    let env = cfg.build_env()?;
    let controller = if cfg.experiment.safety {
        Some(cfg.build_controller(env.as_ref())?)
    } else {
        None
    };
    let policy = build_policy(cfg, env.as_ref())?;
    let dir = prepare_output(loaded)?;
    let eval = evaluate_policy(
        policy.as_ref(),
        env.as_ref(),
        controller.as_ref(),
        cfg.experiment.episodes,
        cfg.experiment.seed,
        cfg.rollout_settings(),
    )?;
    let path = dir.join("rollout.csv");
    write_file(&path, |b| csv_out::write_rollout(b, &eval))?;
    writeln!(
        out,
        "rollout {} safety={} policy={:?}: {}",
        env.name(),
        if cfg.experiment.safety { "on" } else { "off" },
        cfg.experiment.policy,
        summary_line(&eval)
    )?;
    writeln!(out, "wrote {}", path.display())?;
    Ok(eval)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub result: CemResult,
    /// The final policy on held-out episodes.
    pub evaluation: Evaluation,
}

pub fn cmd_train(loaded: &LoadedConfig, out: &mut dyn Write) -> Result<TrainOutcome, CliError> {
    let cfg = &loaded.config;
    let env = cfg.build_env()?;
    let controller = cfg.build_controller(env.as_ref())?;
    let dir = prepare_output(loaded)?;
    let result = cem_train(
        env.as_ref(),
        Some(&controller),
        &cfg.training,
        cfg.rollout_settings(),
        cfg.experiment.seed,
    )?;
    for row in &result.log {
        writeln!(
            out,
            "iter {:>3} best {:>10.3} mean {:>10.3} dist {:.3} collisions {}",
            row.iteration, row.best_return, row.mean_return, row.mean_final_distance, row.cumulative_collisions
        )?;
    }
    result.mean_policy.save(dir.join("policy.txt"))?;
    result.best_policy.save(dir.join("best_policy.txt"))?;
    write_file(&dir.join("training_log.csv"), |b| csv_out::write_training_log(b, &result.log))?;

    let eval_seed = derive_seed(cfg.experiment.seed, EVAL_STREAM, 0);
    let evaluation = evaluate_policy(
        &result.mean_policy,
        env.as_ref(),
        Some(&controller),
        cfg.experiment.episodes,
        eval_seed,
        cfg.rollout_settings(),
    )?;
    write_file(&dir.join("eval.csv"), |b| csv_out::write_rollout(b, &evaluation))?;
    writeln!(
        out,
        "training: {} steps, {} collisions, {} violation steps",
        result.total_steps, result.total_collisions, result.total_violations
    )?;
    writeln!(out, "final policy (held out): {}", summary_line(&evaluation))?;
    writeln!(out, "wrote {}", dir.display())?;
    Ok(TrainOutcome { result, evaluation })
}

pub fn cmd_compare(loaded: &LoadedConfig, out: &mut dyn Write) -> Result<Vec<CompareRow>, CliError> {
    let cfg = &loaded.config;
    let env = cfg.build_env()?;
    let policy = build_policy(cfg, env.as_ref())?;
    let dir = prepare_output(loaded)?;
    let settings = cfg.rollout_settings();
    let episodes = cfg.compare.episodes;
    let seed = cfg.experiment.seed;
    let row = |slack: String, basis: String, gain: f64, eval: &Evaluation| CompareRow {
        slack,
        basis,
        correction_gain: gain,
        episodes,
        collisions: eval.collisions(),
        violation_steps: eval.violation_steps(),
        mean_return: eval.mean_return(),
        mean_discounted_return: eval.mean_discounted_return(),
        mean_steps: eval.mean_steps(),
    };

    let mut rows = Vec::new();
    if cfg.compare.include_unsafe {
        let eval = evaluate_policy(policy.as_ref(), env.as_ref(), None, episodes, seed, settings)?;
        rows.push(row("none".into(), "none".into(), 0.0, &eval));
    }
    for &slack in &cfg.compare.slacks {
        for &basis in &cfg.compare.bases {
            for &gain in &cfg.compare.gains {
                let mut variant = cfg.clone();
                variant.controller.slack = slack;
                variant.controller.basis = basis;
                variant.controller.correction_gain = gain;
                let controller = variant.build_controller(env.as_ref())?;
                let eval = evaluate_policy(policy.as_ref(), env.as_ref(), Some(&controller), episodes, seed, settings)?;
                rows.push(row(slack.to_string(), basis.to_string(), gain, &eval));
            }
        }
    }
    write_file(&dir.join("compare.csv"), |b| csv_out::write_compare(b, &rows))?;
    writeln!(
        out,
        "{:<12} {:<10} {:>6} {:>10} {:>10} {:>12} {:>10}",
        "slack", "basis", "K_c", "collisions", "violations", "mean return", "mean steps"
    )?;
    for r in &rows {
        writeln!(
            out,
            "{:<12} {:<10} {:>6} {:>10} {:>10} {:>12.2} {:>10.1}",
            r.slack, r.basis, r.correction_gain, r.collisions, r.violation_steps, r.mean_return, r.mean_steps
        )?;
    }
    writeln!(out, "wrote {}", dir.join("compare.csv").display())?;
    Ok(rows)
}
