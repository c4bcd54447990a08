use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};
use ivos_core::build_classification_tasks;
use ivos_service::pipeline::{self, TaskSets};
use ivos_service::{
    evaluate, format_ranking, router, write_report, CriteriaChoice, CriteriaModels, EvalInputs, ModelKind,
    PipelineConfig, Snapshot,
};

#[derive(Parser)]
#[command(name = "ivos", version, about = "Switch-readiness forecasting pipeline and review service")]
struct Cli {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true, default_value = "configs/desk.json")]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CriteriaArg {
    Strict,
    Loose,
}

impl CriteriaArg {
    fn choice(self) -> CriteriaChoice {
        CriteriaChoice::named(match self {
            CriteriaArg::Strict => "strict",
            CriteriaArg::Loose => "loose",
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic cohort (JSONL).
    Synth,
    /// Fit the forecaster and write its checkpoint.
    Train {
        /// Search channels and learning rate instead of the preset alone.
        #[arg(long)]
        grid_search: bool,
    },
    /// Fit the classification head on the frozen forecaster.
    TuneHead {
        #[arg(long, value_enum)]
        criteria: Option<CriteriaArg>,
    },
    /// Fit logistic regression and GBDT classifiers; with the primary
    /// criteria, also the forecasting GBDT.
    TrainBaselines {
        #[arg(long, value_enum)]
        criteria: Option<CriteriaArg>,
    },
    /// Write the evaluation report (JSON and text table).
    Evaluate,
    /// Print one test day's ranked list.
    Rank {
        #[arg(long)]
        day: NaiveDate,
        #[arg(long, default_value = "np")]
        model: String,
        #[arg(long)]
        top: Option<usize>,
        #[arg(long, value_enum)]
        criteria: Option<CriteriaArg>,
    },
    /// Serve the review API over the test days.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, value_enum)]
        criteria: Option<CriteriaArg>,
    },
}

fn criteria_or(cfg: &PipelineConfig, arg: Option<CriteriaArg>) -> CriteriaChoice {
    arg.map_or_else(|| cfg.criteria.clone(), CriteriaArg::choice)
}

fn snapshot(cfg: &PipelineConfig, choice: &CriteriaChoice, only_day: Option<NaiveDate>) -> Result<Snapshot> {
    let base = pipeline::load_forecaster(cfg)?;
    let models = CriteriaModels::load(cfg, choice)?;
    let splits = pipeline::load_splits(cfg)?;
    let mut tasks = build_classification_tasks(&splits.test, &cfg.task, &models.criteria);
    if let Some(day) = only_day {
        let first = tasks.first().map(|t| t.day_key);
        let last = tasks.last().map(|t| t.day_key);
        tasks.retain(|t| t.day_key == day);
        if tasks.is_empty() {
            match (first, last) {
                (Some(a), Some(b)) => bail!("no active tasks on {day}; test days run from {a} to {b}"),
                _ => bail!("no active tasks on {day}; the test split has no classification tasks"),
            }
        }
    }
    Snapshot::build(tasks, &base, &models, cfg.task)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = PipelineConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Command::Serve { port: Some(p), .. } = cli.command {
        cfg.port = p;
    }
    eprintln!("config: {}", serde_json::to_string(&cfg)?);
    eprintln!("seed: {}", cfg.seed);

    match cli.command {
        Command::Synth => {
            let summary = pipeline::synth(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            eprintln!("wrote {}", cfg.paths.cohort.display());
        }
        Command::Train { grid_search } => {
            cfg.grid_search |= grid_search;
            let splits = pipeline::load_splits(&cfg)?;
            let tasks = TaskSets::forecast(&splits, &cfg.task, cfg.seed);
            let model = pipeline::train_forecaster(&cfg, &tasks)?;
            pipeline::save_forecaster(&cfg, &model)?;
            eprintln!(
                "best epoch {} (val NLL {:.4}); wrote {}",
                model.log.best_epoch,
                model.log.best_val_nll,
                cfg.np_dir().display()
            );
        }
        Command::TuneHead { criteria } => {
            let choice = criteria_or(&cfg, criteria);
            let base = pipeline::load_forecaster(&cfg)?;
            let splits = pipeline::load_splits(&cfg)?;
            let tasks = TaskSets::classification(&splits, &cfg.task, &choice.resolve()?);
            let head = pipeline::tune_head(&cfg, &base, &tasks)?;
            pipeline::save_head(&cfg, &choice, &head)?;
            eprintln!("head val AP {:.4}; wrote {}", head.log.best_val_ap, cfg.criteria_dir(&choice).display());
        }
        Command::TrainBaselines { criteria } => {
            let choice = criteria_or(&cfg, criteria);
            let splits = pipeline::load_splits(&cfg)?;
            let tasks = TaskSets::classification(&splits, &cfg.task, &choice.resolve()?);
            let classifiers = pipeline::train_classifiers(&cfg, &tasks)?;
            pipeline::save_classifiers(&cfg, &choice, &classifiers)?;
            if choice == cfg.criteria {
                let ftasks = TaskSets::forecast(&splits, &cfg.task, cfg.seed);
                let gbdt = pipeline::train_forecast_gbdt(&cfg, &ftasks)?;
                pipeline::save_forecast_gbdt(&cfg, &gbdt)?;
            }
            eprintln!("wrote {}", cfg.criteria_dir(&choice).display());
        }
        Command::Evaluate => {
            let base = pipeline::load_forecaster(&cfg)?;
            let forecast_gbdt = pipeline::load_forecast_gbdt(&cfg)?;
            let primary = CriteriaModels::load(&cfg, &cfg.criteria)?;
            let rerun = cfg
                .rerun_criteria
                .as_ref()
                .map(|c| CriteriaModels::load(&cfg, c))
                .transpose()?;
            let splits = pipeline::load_splits(&cfg)?;
            let inputs = EvalInputs {
                base: &base,
                forecast_gbdt: &forecast_gbdt,
                primary: &primary,
                rerun: rerun.as_ref(),
            };
            let report = evaluate(&cfg, &splits, &inputs)?;
            write_report(&cfg, &report)?;
            print!("{}", report.to_table());
            eprintln!("wrote {}", cfg.report_json().display());
        }
        Command::Rank {
            day,
            model,
            top,
            criteria,
        } => {
            let model: ModelKind = model.parse()?;
            let choice = criteria_or(&cfg, criteria);
            let snap = snapshot(&cfg, &choice, Some(day))?;
            let mut entries = snap.ranking(day, model).context("day vanished from snapshot")?;
            entries.truncate(top.unwrap_or(cfg.top_k));
            print!("{}", format_ranking(&entries));
        }
        Command::Serve { criteria, .. } => {
            let choice = criteria_or(&cfg, criteria);
            let snap = Arc::new(snapshot(&cfg, &choice, None)?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let addr = std::net::SocketAddr::from(([127, 0, 0, 1], cfg.port));
                let listener = tokio::net::TcpListener::bind(addr).await?;
                eprintln!("serving {} days on http://{addr}", snap.days().len());
                axum::serve(listener, router(snap))
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await?;
                anyhow::Ok(())
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
