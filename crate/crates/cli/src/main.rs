use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use sidetune::ablation::{self, Axis};
use sidetune::accounting::{count_params, count_params_reference, memory_report, vanilla_adapter_config, RegimeReport};
use sidetune::adapters::AdapterConfig;
use sidetune::attention::{self, LayerAttention};
use sidetune::autograd::Graph;
use sidetune::checkpoint::Checkpoint;
use sidetune::config::RunConfig;
use sidetune::data::{self, vocab, Dataset, Sample};
use sidetune::fusion::mean_attention;
use sidetune::model::Model;
use sidetune::regime::RegimeKind;
use sidetune::report::{self, Row};
use sidetune::train::{evaluate, train, Prepared, Progress};

#[derive(Parser)]
#[command(name = "sidetune", version, about = "Side-network adapter tuning on a synthetic grounding task")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.steps=100`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Start from the fixed-budget benchmark settings with this seed.
    #[arg(long, value_name = "SEED")]
    benchmark: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match self.benchmark {
            Some(seed) => RunConfig::benchmark(RunConfig::default().regime(), seed),
            None => RunConfig::default(),
        };
        if let Some(p) = &self.config {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            cfg.apply_text(&text).with_context(|| format!("parsing {}", p.display()))?;
        }
        cfg.apply_overrides(&self.overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset and write `train.srds` / `val.srds`.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        train: usize,
        #[arg(long, default_value_t = 500)]
        val: usize,
    },
    /// Train one regime and write a run directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory with `train.srds` and `val.srds`; generated from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Overrides `out_dir` from the configuration.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the validation split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train (or only account) every listed regime under one configuration.
    Compare {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated regimes; all seven by default.
        #[arg(long, value_delimiter = ',')]
        regimes: Vec<RegimeKind>,
        /// Report parameter and memory accounting without training.
        #[arg(long)]
        accounting_only: bool,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Sweep one ablation axis: components, mixing, form, positions, density or c_i.
    Ablate {
        axis: Axis,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        accounting_only: bool,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Print adapter parameter counts at reference and model widths.
    CountParams {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Use the reference adapter settings instead of the configuration's.
        #[arg(long)]
        reference: bool,
    },
    /// Export fusion attention for one validation sample as a text file.
    DumpAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenData { out, seed, train, val } => gen_data(&out, seed, train, val),
        Command::Train { cfg, data, out_dir } => {
            let mut cfg = cfg.load()?;
            if let Some(d) = out_dir {
                cfg.out_dir = d;
            }
            let dataset = load_or_generate(&cfg, data.as_deref())?;
            run_train(&cfg, &dataset, data.as_deref())
        }
        Command::Eval { checkpoint, data } => run_eval(&checkpoint, data.as_deref()),
        Command::Compare {
            cfg,
            regimes,
            accounting_only,
            data,
            out_dir,
        } => {
            let cfg = cfg.load()?;
            let regimes = if regimes.is_empty() { RegimeKind::ALL.to_vec() } else { regimes };
            let variants = regimes
                .into_iter()
                .map(|r| {
                    let mut c = cfg.clone();
                    c.model.regime = r;
                    c.form = None;
                    (r.name().to_string(), c)
                })
                .collect();
            let dir = out_dir.unwrap_or_else(|| cfg.out_dir.join("compare"));
            sweep(&cfg, variants, accounting_only, data.as_deref(), &dir)
        }
        Command::Ablate {
            axis,
            cfg,
            accounting_only,
            data,
            out_dir,
        } => {
            let cfg = cfg.load()?;
            let variants = ablation::variants(axis, &cfg)?;
            let dir = out_dir.unwrap_or_else(|| cfg.out_dir.join(format!("ablate_{axis}")));
            sweep(&cfg, variants, accounting_only, data.as_deref(), &dir)
        }
        Command::CountParams { cfg, reference } => count(&cfg.load()?, reference),
        Command::DumpAttention {
            checkpoint,
            index,
            data,
            out,
        } => dump_attention(&checkpoint, index, data.as_deref(), out.as_deref()),
    }
}

fn gen_data(out: &Path, seed: u64, n_train: usize, n_val: usize) -> Result<()> {
    let d = data::generate_dataset(seed, n_train, n_val)?;
    fs::create_dir_all(out)?;
    data::save_samples(&out.join("train.srds"), &d.train)?;
    data::save_samples(&out.join("val.srds"), &d.val)?;
    write_json(
        &out.join("manifest.json"),
        &json!({ "seed": seed, "train": n_train, "val": n_val }),
    )?;
    println!("wrote {n_train} train and {n_val} val samples to {}", out.display());
    Ok(())
}

fn load_or_generate(cfg: &RunConfig, dir: Option<&Path>) -> Result<Dataset> {
    match dir {
        Some(d) => {
            let load = |name: &str| -> Result<Vec<Sample>> {
                let p = d.join(name);
                data::load_samples(&p).with_context(|| format!("loading {}", p.display()))
            };
            Ok(Dataset {
                train: load("train.srds")?,
                val: load("val.srds")?,
            })
        }
        None => Ok(data::generate_dataset(cfg.data_seed, cfg.n_train, cfg.n_val)?),
    }
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn manifest(cfg: &RunConfig, data: Option<&Path>) -> serde_json::Value {
    json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": cfg.hash(),
        "regime": cfg.regime().name(),
        "seeds": {
            "frozen": cfg.model.vision.seed,
            "trainable": cfg.model.trainable_seed,
            "data": cfg.data_seed,
        },
        "data": data.map_or("generated".to_string(), |d| d.display().to_string()),
    })
}

fn run_train(cfg: &RunConfig, data: &Dataset, data_dir: Option<&Path>) -> Result<()> {
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.txt"), cfg.to_text())?;
    write_json(&dir.join("manifest.json"), &manifest(cfg, data_dir))?;
    let start = Instant::now();
    let every = cfg.eval_every;
    let mut window = Vec::with_capacity(every);
    let out = train(cfg, data, |p| match p {
        Progress::Step { step, loss } => {
            window.push(loss);
            if window.len() == every {
                eprintln!(
                    "step {:>5}  loss {:.4}  ({:.1}s)",
                    step + 1,
                    window.iter().sum::<f64>() / every as f64,
                    start.elapsed().as_secs_f64()
                );
                window.clear();
            }
        }
        Progress::Eval { step, precision } => {
            eprintln!("step {step:>5}  val P@{} {:.2}%", cfg.threshold, 100.0 * precision)
        }
    })?;
    fs::write(dir.join("report.json"), out.report.to_json() + "\n")?;
    Checkpoint::from_model(cfg, &out.model).save(&dir.join("checkpoint.srck"))?;
    let r = &out.report.regime_report;
    println!(
        "{}: trainable {} / {} ({:.3}%), retained {}, val P@{} {:.2}% -> {:.2}%",
        r.regime,
        r.trainable_params,
        r.total_params,
        100.0 * r.trainable_fraction,
        r.retained_activations,
        cfg.threshold,
        100.0 * out.report.initial_val_precision,
        100.0 * r.metrics.as_ref().map_or(0.0, |m| m.precision_at_05),
    );
    println!("run written to {}", dir.display());
    Ok(())
}

fn run_eval(checkpoint: &Path, data: Option<&Path>) -> Result<()> {
    let ck = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let (cfg, model) = ck.restore()?;
    let val = load_or_generate(&cfg, data)?.val;
    let prepared = Prepared::new(&model, &val)?;
    let r = evaluate(&model, &prepared, cfg.lambda, cfg.beta, cfg.threshold)?;
    println!("regime            {}", cfg.regime());
    println!("config hash       {}", cfg.hash());
    println!("samples           {}", val.len());
    println!("mean loss         {:.6}", r.mean_loss);
    println!("precision@{}     {:.2}%", cfg.threshold, 100.0 * r.precision);
    Ok(())
}

fn sweep(
    base: &RunConfig,
    variants: Vec<(String, RunConfig)>,
    accounting_only: bool,
    data_dir: Option<&Path>,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let data = load_or_generate(base, data_dir)?;
    let mut rows = Vec::with_capacity(variants.len());
    let mut hashes = Vec::new();
    for (label, cfg) in variants {
        eprintln!("== {label}");
        let report = if accounting_only {
            let model = Model::build(cfg.model_config()?)?;
            let retained = memory_report(&model, &data.train[..1])?;
            RegimeReport::new(&model, retained, None)
        } else {
            let out = train(&cfg, &data, |_| {})?;
            let file = dir.join(format!("{}.json", sanitize(&label)));
            fs::write(&file, out.report.to_json() + "\n")?;
            out.report.regime_report
        };
        hashes.push(json!({ "label": label, "config_hash": cfg.hash() }));
        rows.push(Row { label, report });
    }
    fs::write(dir.join("table.csv"), report::to_csv(&rows))?;
    let text = report::to_text(&rows);
    fs::write(dir.join("table.txt"), &text)?;
    let mut m = manifest(base, data_dir);
    m["variants"] = json!(hashes);
    m["accounting_only"] = json!(accounting_only);
    write_json(&dir.join("manifest.json"), &m)?;
    print!("{text}");
    Ok(())
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect()
}

fn count(cfg: &RunConfig, reference: bool) -> Result<()> {
    let adapter = if reference {
        AdapterConfig::reference()
    } else {
        cfg.model_config()?.adapter
    };
    let c = count_params_reference(&adapter);
    let vanilla = count_params_reference(&vanilla_adapter_config(adapter.c_d)).total;
    println!("adapter settings: c_d={} c_i={} mixing={} components={} pairs={}",
        adapter.c_d, adapter.c_i, adapter.mixing, adapter.components, adapter.n_pairs());
    println!("reference widths (C_v=256, C_l=768):");
    println!("  VEA   each {:>10}  total {:>10}", c.vea_each, c.vea_total);
    println!("  LEA   each {:>10}  total {:>10}", c.lea_each, c.lea_total);
    println!("  IEA   each {:>10}  total {:>10}", c.iea_each, c.iea_total);
    println!("  side network total {:>10} ({:.2}M)", c.total, c.total as f64 / 1e6);
    println!("  vanilla adapters   {:>10} ({:.2}M)", vanilla, vanilla as f64 / 1e6);
    let m = cfg.model_config()?;
    let toy = count_params(&adapter, m.vision.channel_dim, m.language.channel_dim);
    println!(
        "model widths (C_v={}, C_l={}): side network total {}",
        m.vision.channel_dim, m.language.channel_dim, toy.total
    );
    println!("{:<22} {:>10} {:>10} {:>9}", "regime", "trainable", "total", "fraction");
    for r in RegimeKind::ALL {
        let mut rc = cfg.clone();
        rc.model.regime = r;
        rc.form = None;
        let model = Model::build(rc.model_config()?)?;
        println!(
            "{:<22} {:>10} {:>10} {:>8.4}%",
            r.name(),
            model.trainable_count(),
            model.total_count(),
            100.0 * model.trainable_count() as f64 / model.total_count() as f64
        );
    }
    Ok(())
}

fn dump_attention(checkpoint: &Path, index: usize, data: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let ck = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let (cfg, model) = ck.restore()?;
    let val = load_or_generate(&cfg, data)?.val;
    let Some(sample) = val.get(index) else {
        bail!("index {index} is out of range for {} validation samples", val.len());
    };
    let mut g = Graph::new();
    let f = model.forward(&mut g, &sample.image, &sample.tokens)?;
    let layers = f
        .fusion
        .attention
        .iter()
        .enumerate()
        .map(|(layer, heads)| Ok(LayerAttention { layer, matrix: mean_attention(&g, heads)? }))
        .collect::<Result<Vec<_>>>()?;
    let comments = vec![
        "fusion attention, mean over heads, one matrix per layer".to_string(),
        format!("validation sample {index}: \"{}\"", vocab::decode(&sample.tokens)?),
        format!("gt {:?} pred {:?}", sample.gt.as_array(), Model::pred_box(&g, &f).as_array()),
        format!(
            "token order: [REG], {} vision tokens row-major, {} language tokens (<s>, words, </s>)",
            f.fusion.n_vision, f.fusion.n_language
        ),
    ];
    let text = attention::write(&comments, &layers);
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}
