use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use kneecast::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use kneecast::dataset::{
    prediction_windows, load_recording, save_cache, split_examples, synthesize_subject, write_recording, ExampleCache,
    PreprocessedExample, SplitPolicy, SynthSpec,
};
use kneecast::io::write_atomic;
use kneecast::metrics::{evaluate_model, predict_examples, MetricsReport};
use kneecast::model::{build_model, forward, ModelGraph};
use kneecast::train::{finetune, holdout, run_stage_plan, train, transfer, PlanSettings, TrainConfig, TrainHistory};
use kneecast::{Error, Result, Scenario};

use crate::config::RunConfig;
use crate::data::{config_datasets, load_examples};
use crate::{Command, RunArgs};

pub(crate) fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth { cycles, condition, seed, forces, subject, trial, period, output } => {
            let spec = SynthSpec {
                n_cycles: cycles,
                condition,
                seed,
                include_forces: forces,
                cycle_period_s: period,
                subject_id: subject,
                trial_id: trial,
                ..SynthSpec::default()
            };
            let rec = synthesize_subject(&spec)?;
            write_recording(&rec, &output)?;
            println!("wrote {} samples to {}", rec.len(), output.display());
            Ok(())
        }
        Command::Preprocess { inputs, scenario, horizon, config, output } => {
            let c = resolve(config.as_deref(), scenario, horizon, None, None)?;
            let examples = load_examples(&inputs, c.scenario, c.horizon, &c.preprocess)?;
            let n = examples.len();
            save_cache(&ExampleCache { scenario: c.scenario, horizon: c.horizon, preprocess: c.preprocess, examples }, &output)?;
            println!("cached {n} examples in {}", output.display());
            Ok(())
        }
        Command::Train { inputs, scenario, horizon, run, output } => {
            let c = resolve(run.config.as_deref(), scenario, horizon, run.seed, run.epochs)?;
            let out = output
                .or_else(|| c.output_dir.clone())
                .ok_or_else(|| Error::Config("no output directory (-o or output_dir)".into()))?;
            match &c.plan {
                Some(_) if !inputs.is_empty() => {
                    Err(Error::Config("a stage plan takes its data from the config, not the command line".into()))
                }
                Some(plan) => run_plan(&c, plan, out),
                None => train_command(&c, &inputs, &out),
            }
        }
        Command::Transfer { inputs, from, scenario, run, output } => transfer_command(&inputs, &from, scenario, &run, &output),
        Command::Finetune { inputs, model, lr_scale, run, output } => {
            finetune_command(&inputs, &model, lr_scale, &run, &output)
        }
        Command::Eval { inputs, model, scenario, config, output, plot } => {
            let ckpt = load_checkpoint(&model)?;
            let m = &ckpt.model;
            if let Some(s) = scenario {
                if s != m.scenario() {
                    return Err(Error::Config(format!(
                        "checkpoint is a {} model, not {s}; use `transfer` to graft it",
                        m.scenario()
                    )));
                }
            }
            if let Some(path) = config {
                check_agrees(&RunConfig::load(&path)?, &ckpt, true)?;
            }
            let examples = load_examples(&inputs, m.scenario(), m.hyper().horizon, &ckpt.preprocess)?;
            let report = evaluate_model(m, &examples)?;
            if let Some(p) = plot {
                write_atomic(&p, plot_csv(&ckpt, &examples)?.as_bytes())?;
            }
            match output {
                Some(p) => write_atomic(&p, report.to_json().as_bytes()),
                None => {
                    print!("{}", report.to_table());
                    Ok(())
                }
            }
        }
        Command::Predict { input, model, horizon, output } => {
            let ckpt = load_checkpoint(&model)?;
            if let Some(h) = horizon {
                if h != ckpt.model.hyper().horizon {
                    return Err(Error::Config(format!("checkpoint forecasts {} steps, not {h}", ckpt.model.hyper().horizon)));
                }
            }
            let csv = predict_csv(&ckpt, &input)?;
            match output {
                Some(p) => write_atomic(&p, csv.as_bytes()),
                None => std::io::stdout()
                    .write_all(csv.as_bytes())
                    .map_err(|e| Error::io("<stdout>", e)),
            }
        }
    }
}

/// Config file (or defaults) with command-line overrides applied.
fn resolve(
    path: Option<&Path>,
    scenario: Option<Scenario>,
    horizon: Option<usize>,
    seed: Option<u64>,
    epochs: Option<usize>,
) -> Result<RunConfig> {
    let mut c = match (path, scenario) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(s)) => RunConfig::new(s),
        (None, None) => return Err(Error::Config("give --scenario or --config".into())),
    };
    if let Some(s) = scenario {
        c.scenario = s;
    }
    if let Some(h) = horizon {
        c.horizon = h;
    }
    if let Some(s) = seed {
        c.seed = s;
    }
    if let Some(e) = epochs {
        c.train.max_epochs = e;
    }
    c.validate()?;
    Ok(c)
}

/// Training settings for commands that start from a checkpoint.
fn run_settings(run: &RunArgs, ckpt: &Checkpoint) -> Result<(TrainConfig, Option<RunConfig>)> {
    let config = run.config.as_deref().map(RunConfig::load).transpose()?;
    let mut t = config.as_ref().map_or_else(TrainConfig::default, |c| c.train_config());
    if config.is_none() {
        t.seed = ckpt.seed;
    }
    if let Some(s) = run.seed {
        t.seed = s;
    }
    if let Some(e) = run.epochs {
        t.max_epochs = e;
    }
    Ok((t, config))
}

/// A config used with a checkpoint must describe the same data.
fn check_agrees(c: &RunConfig, ckpt: &Checkpoint, same_scenario: bool) -> Result<()> {
    let m = &ckpt.model;
    if same_scenario && c.scenario != m.scenario() {
        return Err(Error::Config(format!(
            "config is for {} but the checkpoint is a {} model; use `transfer` to graft it",
            c.scenario,
            m.scenario()
        )));
    }
    if c.horizon != m.hyper().horizon {
        return Err(Error::Config(format!("config horizon {} differs from the checkpoint's {}", c.horizon, m.hyper().horizon)));
    }
    if c.preprocess != ckpt.preprocess {
        return Err(Error::Config("config preprocessing differs from the checkpoint's".into()));
    }
    Ok(())
}

fn write_outputs(
    dir: &Path,
    ckpt: &Checkpoint,
    history: &TrainHistory,
    metrics: &MetricsReport,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_checkpoint(ckpt, &dir.join("model.ckpt"))?;
    write_atomic(&dir.join("history.json"), history.to_json().as_bytes())?;
    write_atomic(&dir.join("metrics.json"), metrics.to_json().as_bytes())?;
    println!(
        "{} epochs ({:?}), eval nmae {:.5} nrmse {:.5}; outputs in {}",
        history.epochs(),
        history.stop_reason,
        metrics.nmae,
        metrics.nrmse,
        dir.display()
    );
    Ok(())
}

fn train_command(c: &RunConfig, inputs: &[PathBuf], out: &Path) -> Result<()> {
    let examples = load_examples(inputs, c.scenario, c.horizon, &c.preprocess)?;
    let sets = split_examples(&examples, &c.split)?;
    let (fit, val) = holdout(&sets.train);
    let model = build_model(c.scenario, c.hyper(), c.seed)?;
    let outcome = train(&model, fit, val, &c.train_config())?;
    let metrics = evaluate_model(&outcome.model, &sets.eval)?;
    let mut model = outcome.model;
    model.provenance.push(format!("train {}", c.scenario));
    write_outputs(out, &Checkpoint { model, preprocess: c.preprocess, seed: c.seed }, &outcome.history, &metrics)
}

fn run_plan(c: &RunConfig, plan: &kneecast::train::StagePlan, out: PathBuf) -> Result<()> {
    let data = config_datasets(c)?;
    let settings = PlanSettings {
        scenario: c.scenario,
        hyper: c.hyper(),
        seed: c.seed,
        train: c.train_config(),
        preprocess: c.preprocess,
        output_dir: Some(out),
    };
    for a in run_stage_plan(plan, &settings, &data)? {
        let score = a.metrics.as_ref().map_or("-".to_string(), |m| format!("{:.5}", m.nmae));
        println!("{} ({:?}): {} epochs, eval nmae {score}", a.name, a.kind, a.history.epochs());
    }
    Ok(())
}

fn transfer_command(inputs: &[PathBuf], from: &Path, scenario: Option<Scenario>, run: &RunArgs, out: &Path) -> Result<()> {
    let source = load_checkpoint(from)?;
    let target = match (scenario, source.model.scenario()) {
        (Some(s), _) => s,
        (None, Scenario::Sic) => Scenario::Dic,
        (None, Scenario::SicF) => Scenario::DicF,
        (None, s) => return Err(Error::Config(format!("{s} has no default transfer target; pass --scenario"))),
    };
    let (config, file) = run_settings(run, &source)?;
    if let Some(c) = &file {
        check_agrees(c, &source, false)?;
    }
    let split = file.as_ref().map_or_else(SplitPolicy::default, |c| c.split.clone());
    let (model, graft) = transfer(&source.model, target, *source.model.hyper(), config.seed)?;
    let examples = load_examples(inputs, target, model.hyper().horizon, &source.preprocess)?;
    let sets = split_examples(&examples, &split)?;
    let (fit, val) = holdout(&sets.train);
    let outcome = train(&model, fit, val, &config)?;
    let metrics = evaluate_model(&outcome.model, &sets.eval)?;
    let ckpt = Checkpoint { model: outcome.model, preprocess: source.preprocess, seed: config.seed };
    write_outputs(out, &ckpt, &outcome.history, &metrics)?;
    let graft = serde_json::to_string_pretty(&graft).expect("graft serialize");
    write_atomic(&out.join("graft.json"), graft.as_bytes())
}

fn finetune_command(inputs: &[PathBuf], model: &Path, lr_scale: f64, run: &RunArgs, out: &Path) -> Result<()> {
    let ckpt = load_checkpoint(model)?;
    let (mut config, file) = run_settings(run, &ckpt)?;
    if let Some(c) = &file {
        check_agrees(c, &ckpt, true)?;
    }
    config.lr_scale = lr_scale;
    let m = &ckpt.model;
    let examples = load_examples(inputs, m.scenario(), m.hyper().horizon, &ckpt.preprocess)?;
    let sets = split_examples(&examples, &SplitPolicy::half_half())?;
    let outcome = finetune(m, &sets.train, &sets.eval, &config, &ckpt.preprocess.window)?;
    let adapted = Checkpoint { model: outcome.model, preprocess: ckpt.preprocess, seed: config.seed };
    write_outputs(out, &adapted, &outcome.history, &outcome.report)?;
    println!("zero-shot nmae {:.5}", outcome.zero_shot.nmae);
    write_atomic(&out.join("zero_shot.json"), outcome.zero_shot.to_json().as_bytes())
}

fn plot_csv(ckpt: &Checkpoint, examples: &[PreprocessedExample]) -> Result<String> {
    let pred = predict_examples(&ckpt.model, examples)?;
    let h = ckpt.model.hyper().horizon;
    let rate = ckpt.preprocess.window.input_rate_hz as f64;
    let step_ms = 1000.0 * ckpt.preprocess.window.decimation() as f64 / rate;
    let mut s = String::from("subject_id,trial_id,end_time_ms,step,target_time_ms,truth_deg,pred_deg\n");
    for (e, p) in examples.iter().zip(pred.chunks_exact(h)) {
        let end = 1000.0 * e.window.end_index as f64 / rate;
        for (k, (t, y)) in e.target.iter().zip(p).enumerate() {
            let at = end + step_ms * (k + 1) as f64;
            let _ = writeln!(s, "{},{},{end},{},{at},{t},{y}", e.subject_id, e.trial_id, k + 1);
        }
    }
    Ok(s)
}

fn predict_csv(ckpt: &Checkpoint, input: &Path) -> Result<String> {
    let m: &ModelGraph = &ckpt.model;
    let rec = load_recording(input)?;
    let windows = prediction_windows(&rec, m.scenario(), &ckpt.preprocess)?;
    let h = m.hyper().horizon;
    let mut s = String::from("end_time_ms");
    for k in 1..=h {
        let _ = write!(s, ",pred_{k}");
    }
    let attention = m.scenario().uses_kinematics();
    if attention {
        s.push_str(",attn_bf,attn_rf,attn_st,attn_vm");
    }
    s.push('\n');
    if windows.is_empty() {
        return Ok(s);
    }
    let refs: Vec<_> = windows.iter().collect();
    let out = forward(m, &refs)?;
    let preds = out.predictions.data();
    let attn = out.attention.as_ref().map(|a| (a.shape()[1], a.data()));
    for (i, w) in windows.iter().enumerate() {
        let _ = write!(s, "{}", rec.time_ms[w.end_index]);
        for v in &preds[i * h..(i + 1) * h] {
            let _ = write!(s, ",{v}");
        }
        if let Some((steps, a)) = attn {
            let block = &a[i * steps * 4..(i + 1) * steps * 4];
            for c in 0..4 {
                let mean = block.iter().skip(c).step_by(4).sum::<f64>() / steps as f64;
                let _ = write!(s, ",{mean}");
            }
        }
        s.push('\n');
    }
    Ok(s)
}
