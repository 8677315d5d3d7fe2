use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use tracing::info;

use tnorm_shield::attack::TraceEntry;
use tnorm_shield::defense::{calibrate_tau, pairing_score, RejectionRule};
use tnorm_shield::harness::{
    attack_dataset, classification_quality, gen_toy, sweep, write_reports_csv, ExperimentConfig,
};
use tnorm_shield::knowledge::TOY_KNOWLEDGE;
use tnorm_shield::training::{select_lambda, train, LAMBDA_GRID};
use tnorm_shield::{parse_knowledge_file, ConstraintSet, Dataset, KnowledgeBase, Model, Split, WeightSet};

#[derive(Parser)]
#[command(name = "tnorm-shield", version, about = "Knowledge-constrained classifiers, rejection and attacks")]
struct Cli {
    /// TOML experiment config with [model], [train], [attack], [defense], [toy] and [sweep] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config entry, e.g. `--set train.lambda=0.1`. Repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct KnowledgeArg {
    /// Knowledge file; the built-in toy knowledge when omitted.
    #[arg(long)]
    knowledge: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Print each compiled formula as an S-expression, followed by the weight totals.
    Compile {
        #[command(flatten)]
        knowledge: KnowledgeArg,
        /// Comma-separated class order; the sorted predicate names when omitted.
        #[arg(long, value_delimiter = ',')]
        classes: Vec<String>,
    },
    /// Write train.csv, val.csv and test.csv drawn from the [toy] section.
    Toygen {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a model on a CSV dataset.
    Train {
        #[command(flatten)]
        knowledge: KnowledgeArg,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch history CSV.
        #[arg(long)]
        history: Option<PathBuf>,
        /// Pick lambda from the standard grid by validation macro-F1 instead of using train.lambda.
        #[arg(long)]
        select_lambda: bool,
    },
    /// Fit the rejection threshold on a validation set.
    Calibrate {
        #[command(flatten)]
        knowledge: KnowledgeArg,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attack every sample of a dataset and write the perturbed copy.
    Attack {
        #[command(flatten)]
        knowledge: KnowledgeArg,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Optimize against this model and transfer to --model.
        #[arg(long)]
        surrogate: Option<PathBuf>,
        #[arg(long)]
        rule: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-iteration JSON-lines trace.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Evaluate quality with and without rejection over the [sweep] epsilons.
    Sweep {
        #[command(flatten)]
        knowledge: KnowledgeArg,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        rule: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        surrogate: Option<PathBuf>,
        /// Training data; adds the pairing score to every row.
        #[arg(long)]
        pairing_data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print one JSON evaluation report for clean data and an optional perturbed copy.
    Eval {
        #[command(flatten)]
        knowledge: KnowledgeArg,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        rule: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        adversarial: Option<PathBuf>,
        /// Budget the perturbed copy was made with; 0 scores rejections as errors.
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    Ok(ExperimentConfig::from_toml_with_overrides(&text, &cli.overrides)?)
}

fn load_knowledge(arg: &KnowledgeArg) -> Result<KnowledgeBase> {
    let text = match &arg.knowledge {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => TOY_KNOWLEDGE.to_string(),
    };
    Ok(parse_knowledge_file(&text)?)
}

fn constraints(cfg: &ExperimentConfig, arg: &KnowledgeArg, data: &Dataset) -> Result<ConstraintSet> {
    let kb = load_knowledge(arg)?;
    Ok(ConstraintSet::new(cfg.bind(&kb, data.class_names())?)?)
}

fn load_data(path: &Path, split: Split) -> Result<Dataset> {
    Dataset::load_csv(path, split).with_context(|| format!("reading {}", path.display()))
}

fn load_model(path: &Path) -> Result<Model> {
    Model::load(path).with_context(|| format!("reading {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

#[derive(Serialize)]
struct TraceLine<'a> {
    sample: usize,
    #[serde(flatten)]
    entry: &'a TraceEntry,
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Compile { knowledge, classes } => {
            let kb = load_knowledge(knowledge)?;
            let names: Vec<String> = if classes.is_empty() {
                kb.predicates().into_iter().map(str::to_string).collect()
            } else {
                classes.clone()
            };
            let cs = ConstraintSet::new(cfg.bind(&kb, &names)?)?;
            let mut out = std::io::stdout().lock();
            for (wf, program) in kb.formulas().iter().zip(cs.programs()) {
                writeln!(
                    out,
                    "# line {} w={},{} : {}",
                    wf.source_line, wf.weight_train, wf.weight_test, wf.formula
                )?;
                writeln!(out, "{}", program.to_sexpr(Some(&names)))?;
            }
            writeln!(out, "gamma_train {}", cs.gamma(WeightSet::Train))?;
            writeln!(out, "gamma_test {}", cs.gamma(WeightSet::Test))?;
        }
        Command::Toygen { out_dir } => {
            std::fs::create_dir_all(out_dir)?;
            let (train_set, val, test) = gen_toy(&cfg.toy)?;
            for (name, d) in [("train.csv", &train_set), ("val.csv", &val), ("test.csv", &test)] {
                d.save_csv(out_dir.join(name))?;
            }
            info!(train = train_set.len(), val = val.len(), test = test.len(), "toy data written");
        }
        Command::Train {
            knowledge,
            train: train_path,
            val,
            out,
            history,
            select_lambda: select,
        } => {
            let train_set = load_data(train_path, Split::Train)?;
            let val = load_data(val, Split::Validation)?;
            let cs = constraints(&cfg, knowledge, &train_set)?;
            let init = cfg.model.init(train_set.input_dim(), train_set.num_classes())?;
            let (model, hist) = if *select {
                let sel = select_lambda(&init, &train_set, &val, &cs, &cfg.train, &LAMBDA_GRID)?;
                for c in &sel.candidates {
                    info!(lambda = c.lambda, val_f1 = c.val_f1, val_closs = c.val_closs, "candidate");
                }
                eprintln!("selected lambda {}", sel.lambda);
                (sel.model, sel.history)
            } else {
                train(&init, &train_set, &val, &cs, &cfg.train)?
            };
            model.save(out)?;
            if let Some(h) = history {
                hist.write_csv(create(h)?)?;
            }
            if let Some(best) = hist.best() {
                eprintln!("best epoch {} val_f1 {:.4}", best.epoch, best.val_f1);
            }
        }
        Command::Calibrate {
            knowledge,
            model,
            data,
            out,
        } => {
            let data = load_data(data, Split::Validation)?;
            let model = load_model(model)?;
            let cs = constraints(&cfg, knowledge, &data)?;
            let rule = calibrate_tau(&model, data.features(), &cs, cfg.defense.target_rate)?;
            rule.save(out)?;
            eprintln!("tau {}", rule.tau);
        }
        Command::Attack {
            knowledge,
            model,
            data,
            surrogate,
            rule,
            out,
            trace,
        } => {
            let data = load_data(data, Split::Test)?;
            let model = load_model(model)?;
            let surrogate = surrogate.as_deref().map(load_model).transpose()?;
            let cs = constraints(&cfg, knowledge, &data)?;
            let rule = rule.as_deref().map(RejectionRule::load).transpose()?;
            if let Some(r) = &rule {
                r.check_knowledge(&cs)?;
            }
            let attacked = attack_dataset(&model, surrogate.as_ref(), &cs, &data, &cfg.attack, rule.as_ref())?;
            attacked.adversarial.save_csv(out)?;
            if let Some(t) = trace {
                let mut w = create(t)?;
                for (sample, r) in attacked.results.iter().enumerate() {
                    for entry in r.iter().flat_map(|r| &r.trace) {
                        serde_json::to_writer(&mut w, &TraceLine { sample, entry })?;
                        writeln!(w)?;
                    }
                }
                w.flush()?;
            }
            let done: Vec<_> = attacked.results.iter().flatten().collect();
            let changed = done.iter().filter(|r| r.outcome.prediction_changed).count();
            let evaded = done.iter().filter(|r| r.outcome.evaded).count();
            eprintln!("attacked {} of {}; prediction changed {changed}; evaded {evaded}", done.len(), data.len());
        }
        Command::Sweep {
            knowledge,
            model,
            rule,
            data,
            surrogate,
            pairing_data,
            out,
        } => {
            let data = load_data(data, Split::Test)?;
            let model = load_model(model)?;
            let surrogate = surrogate.as_deref().map(load_model).transpose()?;
            let cs = constraints(&cfg, knowledge, &data)?;
            let rule = RejectionRule::load(rule)?;
            rule.check_knowledge(&cs)?;
            let mut reports = sweep(&model, surrogate.as_ref(), &rule, &cs, &data, &cfg.sweep.epsilons, &cfg.attack)?;
            if let Some(p) = pairing_data {
                let support = load_data(p, Split::Train)?;
                let zeta = pairing_score(&model, support.features(), &cs, &cfg.defense.pairing)?;
                reports.iter_mut().for_each(|r| r.pairing = Some(zeta));
            }
            write_reports_csv(&reports, create(out)?)?;
            for r in &reports {
                if let Some((plain, rej)) = r.quality(cfg.sweep.metric) {
                    eprintln!("eps {:<6} quality {plain:.4} with rejection {rej:.4}", r.epsilon);
                }
            }
        }
        Command::Eval {
            knowledge,
            model,
            rule,
            data,
            adversarial,
            epsilon,
        } => {
            let clean = load_data(data, Split::Test)?;
            let adv = match adversarial {
                Some(p) => load_data(p, Split::Test)?,
                None => clean.clone(),
            };
            if adversarial.is_none() && *epsilon != 0.0 {
                bail!("--epsilon needs --adversarial");
            }
            let model = load_model(model)?;
            let cs = constraints(&cfg, knowledge, &clean)?;
            let rule = RejectionRule::load(rule)?;
            rule.check_knowledge(&cs)?;
            let report = classification_quality(&model, &rule, &cs, &clean, &adv, *epsilon)?;
            println!("{}", serde_json::to_string(&report)?);
        }
    }
    Ok(())
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
