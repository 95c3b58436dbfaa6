mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use config::{parse_config, Keys, RunConfig};
use veriscope::error::{Error, MesError};
use veriscope::experiments::{run_comparison, ComparisonSetup, Strategy};
use veriscope::io::{
    aggregate_csv, curves_csv, labels_csv, load_database, load_labels, load_truth, mes_csv, outputs_csv,
    provenance_csv, read_text, risky_csv, summary_json, trace_csv, write_text,
};
use veriscope::reduce::re_verify;
use veriscope::risky::classify_tuples;
use veriscope::verifier::{Budget, Verifier, VoteStreams};
use veriscope::{
    evaluate_with_provenance, mes, mes_reduce, parse_query, run_baseline, AnnotatedDes, ProvExpr, QueryResult,
    ReductionTrace, Tri, World,
};

#[derive(Parser, Debug)]
#[command(name = "veriscope", version, about = "Error scores and verification planning for SPJU queries over uncertain labels")]
struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    keys: Keys,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Evaluate the query and write outputs with provenance.
    Eval,
    /// Maximal error score of each output (or of `--output N`).
    Mes,
    /// Classify the tuples of `--output N` as risky or safe.
    Risky,
    /// Spend the budget with the reduction loop.
    Reduce,
    /// Spend the budget with a fixed-order baseline.
    Baseline,
    /// Compare strategies over generated scenarios.
    Experiment,
}

enum CliError {
    /// Bad configuration or unreadable input: exit 2.
    Input(String),
    /// A well-formed request the data does not allow: exit 3.
    Precondition(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Mes(MesError::Precondition(_) | MesError::UnknownOutputLabel | MesError::CapExceeded { .. }) => {
                CliError::Precondition(e.to_string())
            }
            other => CliError::Input(other.to_string()),
        }
    }
}

macro_rules! impl_from_error {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::from(Error::from(e))
            }
        })*
    };
}

impl_from_error!(
    veriscope::error::FormatError,
    veriscope::error::QueryError,
    veriscope::error::MesError,
    veriscope::error::DesError
);

struct Context {
    cfg: RunConfig,
    des: AnnotatedDes,
    result: QueryResult,
}

impl Context {
    fn load(cfg: RunConfig) -> Result<Self, CliError> {
        let schema = cfg
            .schema
            .as_deref()
            .ok_or_else(|| CliError::Input("no schema file given (schema = ...)".into()))?;
        let db = Arc::new(load_database(schema, cfg.relations_dir.as_deref())?);
        let des = match &cfg.labels {
            Some(p) => load_labels(p, db)?,
            None => AnnotatedDes::unlabeled(db),
        };
        let query = cfg
            .query
            .as_deref()
            .ok_or_else(|| CliError::Input("no query file given (query = ...)".into()))?;
        let plan = parse_query(&read_text(query)?, des.db())?;
        let result = evaluate_with_provenance(&des, &plan)?;
        Ok(Context { cfg, des, result })
    }

    fn provs(&self) -> Vec<ProvExpr> {
        self.result.outputs.iter().map(|o| o.prov.clone()).collect()
    }

    fn selected(&self) -> Result<Vec<usize>, CliError> {
        match self.cfg.output {
            None => Ok((0..self.result.outputs.len()).collect()),
            Some(i) if i <= self.result.outputs.len() => Ok(vec![i - 1]),
            Some(i) => Err(CliError::Input(format!(
                "output {i} does not exist; the query has {} outputs",
                self.result.outputs.len()
            ))),
        }
    }

    fn truth(&self) -> Result<World, CliError> {
        let path = self
            .cfg
            .truth
            .as_deref()
            .ok_or_else(|| CliError::Input("this command needs a ground-truth file (truth = ...)".into()))?;
        let world = load_truth(path, self.des.db())?;
        if !world.is_total_over(self.des.db()) {
            return Err(CliError::Input(format!("{}: every tuple needs a ground-truth label", path.display())));
        }
        Ok(world)
    }

    fn verifier(&self) -> Result<Box<dyn Verifier>, CliError> {
        self.cfg.verifier().map_err(CliError::Input)
    }

    fn write(&self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(&self.cfg.out)
            .map_err(|e| CliError::Input(format!("{}: {e}", self.cfg.out.display())))?;
        let path = self.cfg.out.join(name);
        write_text(&path, text)?;
        println!("wrote {}", path.display());
        Ok(path)
    }

    fn refresh(&mut self) -> Result<(), CliError> {
        for o in &mut self.result.outputs {
            o.derived = o.prov.eval_k3(&self.des).map_err(Error::from)?;
        }
        Ok(())
    }
}

fn cmd_eval(ctx: &Context) -> Result<(), CliError> {
    ctx.write("outputs.csv", &outputs_csv(&ctx.result))?;
    ctx.write("provenance.csv", &provenance_csv(&ctx.result))?;
    Ok(())
}

fn cmd_mes(ctx: &mut Context) -> Result<(), CliError> {
    let selected = ctx.selected()?;
    let unknown: Vec<usize> = selected
        .iter()
        .copied()
        .filter(|&i| ctx.result.outputs[i].derived == Tri::Unknown)
        .collect();
    if !unknown.is_empty() {
        if !ctx.cfg.reverify {
            let names: Vec<String> = unknown.iter().map(|i| format!("o{}", i + 1)).collect();
            return Err(CliError::Precondition(format!(
                "outputs {} have an unknown derived label; pass --reverify with a truth file to label them first",
                names.join(", ")
            )));
        }
        let truth = ctx.truth()?;
        let verifier = ctx.verifier()?;
        let provs: Vec<ProvExpr> = unknown.iter().map(|&i| ctx.result.outputs[i].prov.clone()).collect();
        let mut budget = Budget::new(ctx.cfg.budget);
        let mut streams = VoteStreams::new(ctx.cfg.seed);
        re_verify(
            &mut ctx.des,
            &provs,
            &mut budget,
            ctx.cfg.reduce.reverify_target,
            &truth,
            verifier.as_ref(),
            &mut streams,
        )?;
        ctx.refresh()?;
        if let Some(i) = selected.iter().find(|&&i| ctx.result.outputs[i].derived == Tri::Unknown) {
            return Err(CliError::Precondition(format!(
                "output o{} is still unknown after spending the budget",
                i + 1
            )));
        }
        ctx.write("labels.csv", &labels_csv(&ctx.des))?;
    }
    let scores = {
        use rayon::prelude::*;
        selected
            .par_iter()
            .map(|&i| mes(&ctx.des, &ctx.result.outputs[i].prov))
            .collect::<Result<Vec<_>, _>>()?
    };
    let rows: Vec<_> = selected
        .iter()
        .zip(&scores)
        .map(|(&i, s)| (i, &ctx.result.outputs[i], s))
        .collect();
    ctx.write("mes.csv", &mes_csv(&rows))?;
    Ok(())
}

fn cmd_risky(ctx: &Context) -> Result<(), CliError> {
    let i = match ctx.cfg.output {
        Some(_) => ctx.selected()?[0],
        None => return Err(CliError::Input("risky needs an output (--output N)".into())),
    };
    let reports = classify_tuples(&ctx.des, &ctx.result.outputs[i].prov, &ctx.cfg.reduce.risky)?;
    ctx.write("risky.csv", &risky_csv(i, &reports))?;
    Ok(())
}

fn write_run(ctx: &Context, trace: &ReductionTrace, fin: &AnnotatedDes, what: &str) -> Result<(), CliError> {
    ctx.write("trace.csv", &trace_csv(trace))?;
    let extra = BTreeMap::from([
        ("strategy".to_string(), what.into()),
        ("seed".to_string(), ctx.cfg.seed.into()),
        ("verifier".to_string(), ctx.verifier()?.name().into()),
        ("outputs".to_string(), ctx.result.outputs.len().into()),
    ]);
    ctx.write("summary.json", &summary_json(trace, &extra))?;
    ctx.write("labels.csv", &labels_csv(fin))?;
    Ok(())
}

fn cmd_reduce(ctx: &Context) -> Result<(), CliError> {
    let truth = ctx.truth()?;
    let verifier = ctx.verifier()?;
    let provs = ctx.provs();
    let (trace, fin) = mes_reduce(
        &ctx.des,
        &provs,
        ctx.cfg.budget,
        &ctx.cfg.reduce,
        &truth,
        verifier.as_ref(),
        ctx.cfg.seed,
    )?;
    write_run(ctx, &trace, &fin, "mesreduce")
}

fn cmd_baseline(ctx: &Context) -> Result<(), CliError> {
    let kind = ctx
        .cfg
        .baseline
        .ok_or_else(|| CliError::Input("baseline needs a strategy (--baseline random|formula-count|occurrences-count|prob-greedy)".into()))?;
    let truth = ctx.truth()?;
    let verifier = ctx.verifier()?;
    let provs = ctx.provs();
    let (trace, fin) = run_baseline(
        kind,
        ctx.cfg.p,
        &ctx.des,
        &provs,
        ctx.cfg.budget,
        &truth,
        verifier.as_ref(),
        ctx.cfg.seed,
    )?;
    write_run(ctx, &trace, &fin, &veriscope::experiments::Strategy::Baseline(kind, ctx.cfg.p).name())
}

fn file_stem(strategy: &Strategy) -> String {
    strategy
        .name()
        .chars()
        .filter_map(|c| match c {
            '(' => Some('-'),
            ')' | '=' => None,
            c => Some(c),
        })
        .collect()
}

fn cmd_experiment(ctx: &Context) -> Result<(), CliError> {
    let strategies: Vec<Strategy> = if ctx.cfg.strategies.trim() == "all" {
        Strategy::all(ctx.cfg.p)
    } else {
        ctx.cfg
            .strategies
            .split(',')
            .map(|s| {
                Strategy::parse(s, ctx.cfg.p).ok_or_else(|| CliError::Input(format!("strategies: unknown strategy {s:?}")))
            })
            .collect::<Result<_, _>>()?
    };
    let needs_loaded = ctx.cfg.scenarios.contains(&veriscope::experiments::ScenarioKind::Rlbl);
    let truth = if needs_loaded { Some(ctx.truth()?) } else { None };
    let provs = ctx.provs();
    let setup = ComparisonSetup {
        db: ctx.des.db_arc().clone(),
        provs: &provs,
        budget: ctx.cfg.budget,
        repeats: ctx.cfg.repeats,
        seed: ctx.cfg.seed,
        config: ctx.cfg.reduce.clone(),
        loaded: truth.as_ref().map(|t| (&ctx.des, t)),
    };
    let verifier = ctx.verifier()?;
    let reports = run_comparison(&setup, &ctx.cfg.scenarios, &strategies, verifier.as_ref())?;
    for r in &reports {
        for run in &r.runs {
            let name = format!(
                "traces/{}_{}_{}.csv",
                r.scenario.name(),
                file_stem(&r.strategy),
                run.repeat
            );
            std::fs::create_dir_all(ctx.cfg.out.join("traces"))
                .map_err(|e| CliError::Input(format!("{}: {e}", ctx.cfg.out.display())))?;
            let path = ctx.cfg.out.join(&name);
            write_text(&path, &trace_csv(&run.trace))?;
        }
    }
    ctx.write("aggregate.csv", &aggregate_csv(&reports))?;
    ctx.write("curves.csv", &curves_csv(&reports))?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => {
            let text = read_text(path)?;
            let base = path.parent().unwrap_or(Path::new("."));
            parse_config(&text, base).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        }
        None => BTreeMap::new(),
    };
    let cfg = RunConfig::resolve(file, cli.keys.to_map()).map_err(CliError::Input)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build_global()
        .map_err(|e| CliError::Input(e.to_string()))?;
    let mut ctx = Context::load(cfg)?;
    match cli.command {
        Command::Eval => cmd_eval(&ctx),
        Command::Mes => cmd_mes(&mut ctx),
        Command::Risky => cmd_risky(&ctx),
        Command::Reduce => cmd_reduce(&ctx),
        Command::Baseline => cmd_baseline(&ctx),
        Command::Experiment => cmd_experiment(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Precondition(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
