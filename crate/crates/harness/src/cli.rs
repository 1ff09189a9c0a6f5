//! Command-line front end. `run` returns whether every check passed.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::audit::{
    algebra_suite, compare_paths, equivariance_suite, gradient_suite, model_gradient_suite, path_count_suite,
    EquivarianceOptions, GradientOptions, Report,
};
use crate::config::{Overrides, RunConfig, RunFile};
use crate::data::{load_xyz, Dataset};
use crate::metrics::{Metrics, Prediction};
use crate::train::{evaluate, train, EpochLog, TrainedModel};
use equiformer::irreps::Irreps;
use equiformer::model::{Equiformer, Mode};
use equiformer::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "equiformer", about = "Train, evaluate and audit equivariant graph attention models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and store its parameters.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        seed: Option<u64>,
        /// Parameter file to write; overrides `out.params`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print metrics of stored parameters on an extended-XYZ file.
    Eval {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Run a numerical audit.
    Audit {
        suite: Suite,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
        /// Negative control: SiLU on gate scalars.
        #[arg(long)]
        corrupt_gate: bool,
        /// Explicit tensor-product inputs for `paths`, e.g. "[(2,0),(2,1)]" or "[(2,0,e),(2,1,o)]".
        #[arg(long, requires = "in2")]
        in1: Option<String>,
        #[arg(long, requires = "in1")]
        in2: Option<String>,
        #[arg(long)]
        l_max: Option<u32>,
    },
    /// Write per-frame predictions and metrics as JSON.
    DumpPreds {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Equivariance,
    Gradcheck,
    Paths,
    Forces,
    Algebra,
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse::<Mode>().map_err(|e| e.to_string())
}

#[derive(Serialize)]
pub struct PredictionDump {
    pub metrics: Metrics,
    pub predictions: Vec<Prediction>,
}

fn resolve(run: &RunArgs, mode: Option<Mode>, seed: Option<u64>) -> Result<RunConfig> {
    let file = match &run.config {
        Some(p) => RunFile::load(p)?,
        None => RunFile::default(),
    };
    file.resolve(&Overrides {
        preset: run.preset.clone(),
        mode,
        seed,
    })
}

fn epoch_line(e: &EpochLog) -> String {
    let f = |m: Option<f64>| m.map_or("-".to_string(), |v| format!("{v:.6}"));
    let mut s = format!(
        "epoch {:>4} lr {:.3e} loss {:.6} energy_mae {:.6} force_mae {}",
        e.epoch,
        e.lr,
        e.train_loss,
        e.train.energy_mae,
        f(e.train.force_mae)
    );
    if let Some(v) = &e.val {
        s.push_str(&format!(" val_energy_mae {:.6} val_force_mae {}", v.energy_mae, f(v.force_mae)));
    }
    s
}

fn csv_line(e: &EpochLog) -> String {
    let o = |m: Option<f64>| m.map_or(String::new(), |v| v.to_string());
    format!(
        "{},{},{},{},{},{},{}",
        e.epoch,
        e.lr,
        e.train_loss,
        e.train.energy_mae,
        o(e.train.force_mae),
        o(e.val.map(|v| v.energy_mae)),
        o(e.val.and_then(|v| v.force_mae)),
    )
}

fn load_frames(path: &PathBuf) -> Result<Dataset> {
    let d = load_xyz(path, false)?;
    if d.is_empty() {
        return Err(Error::Input(format!("{} holds no frames", path.display())));
    }
    Ok(d)
}

fn load_trained(params: &PathBuf) -> Result<(TrainedModel, Equiformer)> {
    let t = TrainedModel::load(params)?;
    let m = t.model()?;
    Ok((t, m))
}

fn audit(
    suite: Suite,
    cfg: &RunConfig,
    corrupt_gate: bool,
    explicit: Option<(Irreps, Irreps, u32)>,
) -> Result<Report> {
    let a = &cfg.audit;
    let grad = GradientOptions {
        seed: a.seed,
        instances: a.instances,
        atoms: a.atoms,
        entries_per_leaf: a.entries_per_leaf,
        force_weight: if cfg.train.force_weight > 0.0 { cfg.train.force_weight } else { 80.0 },
        ..Default::default()
    };
    match suite {
        Suite::Equivariance => equivariance_suite(
            &cfg.model,
            &EquivarianceOptions {
                rotations: a.rotations,
                seed: a.seed,
                atoms: a.atoms,
                corrupt_gate,
                model: true,
            },
        ),
        Suite::Gradcheck => gradient_suite(&cfg.model, &grad),
        Suite::Forces => model_gradient_suite(
            &cfg.model,
            &GradientOptions {
                energy_params: false,
                loss: false,
                ..grad
            },
        ),
        Suite::Algebra => {
            let mut r = algebra_suite(a.seed, a.rotations)?;
            r.extend(path_count_suite(a.seed, 50)?);
            Ok(r)
        }
        Suite::Paths => {
            let mut r = Report::new();
            match explicit {
                Some((in1, in2, l_max)) => {
                    compare_paths(&mut r, "paths", &in1, &in2, l_max)?;
                }
                None => {
                    let model = Equiformer::new(&cfg.model)?;
                    for (name, plan) in model.plans() {
                        compare_paths(&mut r, &name, &plan.irreps_in1, &plan.irreps_in2, plan.l_max)?;
                    }
                }
            }
            Ok(r)
        }
    }
}

/// Parse `args` (program name first) and execute.
pub fn run<I, T>(args: I, out: &mut impl Write) -> Result<bool>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            write!(out, "{e}")?;
            return Ok(true);
        }
        Err(e) => return Err(Error::Input(e.to_string().trim_start_matches("error: ").trim_end().to_string())),
    };
    match cli.command {
        Command::Train { run, seed, out: dest } => {
            let cfg = resolve(&run, None, seed)?;
            let (train_set, val_set) = cfg.datasets()?;
            let mut csv = match &cfg.out.log {
                Some(p) => {
                    let mut f = std::fs::File::create(p)?;
                    writeln!(f, "epoch,lr,train_loss,energy_mae,force_mae,val_energy_mae,val_force_mae")?;
                    Some(f)
                }
                None => None,
            };
            let mut io_err = None;
            let outcome = train(&cfg.model, &train_set, val_set.as_ref(), &cfg.train, |e| {
                let r = writeln!(out, "{}", epoch_line(e))
                    .and_then(|_| csv.as_mut().map_or(Ok(()), |f| writeln!(f, "{}", csv_line(e))));
                if let Err(err) = r {
                    io_err.get_or_insert(err);
                }
            })?;
            if let Some(e) = io_err {
                return Err(e.into());
            }
            let path = dest.or(cfg.out.params).unwrap_or_else(|| PathBuf::from("params.json"));
            TrainedModel {
                store: outcome.store,
                normalizer: outcome.normalizer,
            }
            .save(&path)?;
            writeln!(out, "wrote {}", path.display())?;
            Ok(true)
        }
        Command::Eval { params, data } => {
            let (t, model) = load_trained(&params)?;
            let data = load_frames(&data)?;
            let (m, _) = evaluate(&model, &t.store.params, &t.normalizer, &data)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&m)?)?;
            Ok(true)
        }
        Command::DumpPreds { params, data, out: dest } => {
            let (t, model) = load_trained(&params)?;
            let data = load_frames(&data)?;
            let (metrics, predictions) = evaluate(&model, &t.store.params, &t.normalizer, &data)?;
            std::fs::write(&dest, serde_json::to_string(&PredictionDump { metrics, predictions })?)?;
            writeln!(out, "wrote {} predictions to {}", data.len(), dest.display())?;
            Ok(true)
        }
        Command::Audit {
            suite,
            run,
            mode,
            corrupt_gate,
            in1,
            in2,
            l_max,
        } => {
            let cfg = resolve(&run, mode, None)?;
            let explicit = match (in1, in2) {
                (Some(a), Some(b)) => Some((a.parse()?, b.parse()?, l_max.unwrap_or(cfg.model.l_max))),
                _ => None,
            };
            if suite == Suite::Paths {
                if let Some((a, b, l)) = &explicit {
                    write!(out, "{}", equiformer::irreps::build_dtp_plan(a, b, *l)?.describe())?;
                }
            }
            let report = audit(suite, &cfg, corrupt_gate, explicit)?;
            write!(out, "{report}")?;
            let failed = report.failures().count();
            writeln!(out, "{}", if failed == 0 { "all checks passed".to_string() } else { format!("{failed} checks failed") })?;
            Ok(report.passed())
        }
    }
}
