//! Command-line front end: city synthesis, the annotation pipeline, model
//! runs, and the three-task evaluation protocol.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use trajprism::annotate::{
    agreement_pm1, build_prompt, default_assignment, generate, judge_score, qc_diversity,
    qc_grounding, qc_hallucination, qc_punctuation, qc_terminology, select_top, AnnotationRecord,
    HeuristicJudge, Judge, RemoteJudge, ScoreCard, TemplateGenerator, TerminologyMap,
};
use trajprism::fuse;
use trajprism::harness::run::{
    run_benchmark_with_input, task1_predictions, task3_captions, BenchmarkConfig, LoadedCity,
    Task1Method, Task3Method,
};
use trajprism::harness::synth::{synth_city, SynthConfig};
use trajprism::harness::{split, write_jsonl, CityBundle, SplitSpec};
use trajprism::intent::{sample_persona_style, sample_profile, StylePools};
use trajprism::provider::{Embedder, HashEmbedder, HttpProvider, TextProvider, PROVIDER_URL_ENV};
use trajprism::traj::compress;

#[derive(Parser)]
#[command(
    name = "trajprism",
    about = "Trajectory-language benchmark toolkit",
    long_about = "Builds synthetic cities, compresses trajectories into semantic phases, \
samples travel intents, generates and quality-controls language annotations, runs the \
three proof-of-concept models, and scores everything with the three-task protocol. \
Set TRAJPRISM_PROVIDER_URL to route generation and judging through a remote provider; \
without it every stage runs on deterministic local defaults."
)]
struct Cli {
    /// Seed for sampling and splits (overrides the city config seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Benchmark config JSON overriding the evaluation defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for batch stages (0 = all cores).
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CityArg {
    /// City bundle directory.
    #[arg(long)]
    city: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a city bundle and print its stats.
    Ingest(CityArg),
    /// Generate a synthetic city bundle.
    SynthCity {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        grid: usize,
        #[arg(long, default_value_t = 100)]
        n_traj: usize,
    },
    /// Compress trajectories into phase sequences (JSONL).
    Compress {
        #[command(flatten)]
        city: CityArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample intent profiles and persona/style hints per trajectory.
    SampleIntents {
        #[command(flatten)]
        city: CityArg,
        #[arg(long)]
        out: PathBuf,
        /// Optional pools config file (key = value lines).
        #[arg(long)]
        pools: Option<PathBuf>,
    },
    /// Generate annotations (remote provider when configured, template
    /// generator otherwise).
    Annotate {
        #[command(flatten)]
        city: CityArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        pools: Option<PathBuf>,
    },
    /// Run the QC stages: sanitize records and write a per-record report.
    Qc {
        #[command(flatten)]
        city: CityArg,
        /// Annotations to check (defaults to the bundle's annotations).
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Sanitized records output.
        #[arg(long)]
        out: PathBuf,
        /// QC report output.
        #[arg(long)]
        report: PathBuf,
    },
    /// Score annotations with the rubric judge; optionally select the top N.
    Judge {
        #[command(flatten)]
        city: CityArg,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Keep the top N trajectory ids by mean score.
        #[arg(long)]
        top: Option<usize>,
        /// Where to write the selected ids (requires --top).
        #[arg(long)]
        selected: Option<PathBuf>,
    },
    /// Split trajectory ids into train/val/test.
    Split {
        #[command(flatten)]
        city: CityArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.70)]
        train: f64,
        #[arg(long, default_value_t = 0.10)]
        val: f64,
        #[arg(long, default_value_t = 0.20)]
        test: f64,
    },
    /// Run a task-1 routing model over the test split.
    AnchorRun {
        #[command(flatten)]
        city: CityArg,
        /// Split to evaluate (only `test` is supported).
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        mode: String,
        #[arg(long, default_value_t = 5)]
        pool: usize,
        #[arg(long, default_value_t = 3)]
        skeleton: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the fused retrieval model and persist params plus the fused
    /// database over the test pool.
    FuseTrain {
        #[command(flatten)]
        city: CityArg,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        db: PathBuf,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long, default_value_t = 0.4)]
        lr: f64,
    },
    /// Retrieve trajectories for a query against a fused database.
    FuseRetrieve {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Generate captions for the test split.
    RapRun {
        #[command(flatten)]
        city: CityArg,
        #[arg(long, default_value = "rap")]
        mode: String,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one evaluation task end to end and write report files.
    Eval {
        #[command(flatten)]
        city: CityArg,
        #[arg(long)]
        task: u8,
        #[arg(long)]
        method: String,
        #[arg(long)]
        out: PathBuf,
        /// Score pre-generated rows (predictions/rankings/captions JSONL,
        /// e.g. from anchor-run or rap-run) instead of recomputing them.
        #[arg(long)]
        input: Option<PathBuf>,
        /// J@K aggregation: max (default) or mean.
        #[arg(long, default_value = "max")]
        jk_form: String,
        /// EDR spatial threshold in km.
        #[arg(long, default_value_t = 0.1)]
        eps_km: f64,
    },
    /// Convert a report JSON into figure-ready CSV.
    FigureData {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn generator_provider() -> Result<Box<dyn TextProvider>> {
    match HttpProvider::from_env()? {
        Some(p) => Ok(Box::new(p)),
        None => Ok(Box::new(TemplateGenerator)),
    }
}

fn judge_provider(cells: trajprism::geo::CellIndex) -> Result<Box<dyn Judge>> {
    match HttpProvider::from_env()? {
        Some(p) => Ok(Box::new(RemoteJudge::new(p))),
        None => Ok(Box::new(HeuristicJudge::new(cells))),
    }
}

fn bench_config(
    cli_seed: Option<u64>,
    config: &Option<PathBuf>,
    bundle: &CityBundle,
) -> Result<BenchmarkConfig> {
    let mut cfg = match config {
        Some(path) => serde_json::from_str(
            &std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?,
        )?,
        None => BenchmarkConfig::default(),
    };
    cfg.split.seed = cli_seed.unwrap_or(bundle.config.seed);
    Ok(cfg)
}

fn effective_seed(cli_seed: Option<u64>, bundle: &CityBundle) -> u64 {
    cli_seed.unwrap_or(bundle.config.seed)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load_annotations(
    bundle: &CityBundle,
    path: &Option<PathBuf>,
) -> Result<Vec<AnnotationRecord>> {
    match path {
        Some(p) => Ok(trajprism::harness::read_jsonl(p)?),
        None => Ok(bundle.load_annotations()?),
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let threads = if cli.jobs == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        cli.jobs
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .ok();

    match cli.command {
        Command::Ingest(city) => {
            let bundle = CityBundle::open(&city.city)?;
            let stats = bundle.validate()?;
            print_json(&stats)?;
        }
        Command::SynthCity { out, grid, n_traj } => {
            let cfg = SynthConfig {
                grid_n: grid,
                n_traj,
                seed: cli.seed.unwrap_or(0),
                ..Default::default()
            };
            let bundle = synth_city(&cfg, &out)?;
            let stats = bundle.validate()?;
            eprintln!("wrote city {} to {}", bundle.config.name, out.display());
            print_json(&stats)?;
        }
        Command::Compress { city, out } => {
            let bundle = CityBundle::open(&city.city)?;
            let g = bundle.load_graph()?;
            let cells = bundle.load_cells()?;
            let trajs = bundle.load_trajectories()?;
            let mut lines =
                vec![serde_json::json!({"schema": "trajprism.phases", "version": 1}).to_string()];
            for t in &trajs {
                let ps = compress(t, &g, &cells, &bundle.config.hex)?;
                lines.push(ps.to_json_string());
            }
            std::fs::write(&out, lines.join("\n") + "\n")?;
            eprintln!("compressed {} trajectories to {}", trajs.len(), out.display());
        }
        Command::SampleIntents { city, out, pools } => {
            let bundle = CityBundle::open(&city.city)?;
            let pools = match pools {
                Some(p) => StylePools::load(&p)?,
                None => StylePools::default(),
            };
            let seed = effective_seed(cli.seed, &bundle);
            let trajs = bundle.load_trajectories()?;
            #[derive(Serialize)]
            struct IntentRow {
                traj_id: u64,
                scenarios: Vec<String>,
                k: usize,
                orthogonal_cooccurrence: bool,
                persona: String,
                assignment: [Vec<u8>; 3],
            }
            let rows: Result<Vec<IntentRow>> = trajs
                .iter()
                .map(|t| {
                    let profile = sample_profile(seed, t.mm_id);
                    let style = sample_persona_style(&pools, seed, t.mm_id)?;
                    Ok(IntentRow {
                        traj_id: t.mm_id,
                        scenarios: profile
                            .scenarios
                            .iter()
                            .map(|s| s.id().to_string())
                            .collect(),
                        k: profile.k,
                        orthogonal_cooccurrence: profile.orthogonal_cooccurrence,
                        persona: style.persona,
                        assignment: default_assignment(seed, t.mm_id).0,
                    })
                })
                .collect();
            write_jsonl(&out, "trajprism.intents", rows?)?;
            eprintln!("sampled intents for {} trajectories", trajs.len());
        }
        Command::Annotate { city, out, pools } => {
            let bundle = CityBundle::open(&city.city)?;
            let g = bundle.load_graph()?;
            let cells = bundle.load_cells()?;
            let trajs = bundle.load_trajectories()?;
            let pools = match pools {
                Some(p) => StylePools::load(&p)?,
                None => StylePools::default(),
            };
            let seed = effective_seed(cli.seed, &bundle);
            let provider = generator_provider()?;
            // Provider calls run in parallel, bounded by the --jobs pool;
            // ordered collection keeps the output deterministic.
            let records: Vec<AnnotationRecord> = {
                use rayon::prelude::*;
                trajs
                    .par_iter()
                    .map(|t| -> Result<AnnotationRecord> {
                        let ps = compress(t, &g, &cells, &bundle.config.hex)?;
                        let profile = sample_profile(seed, t.mm_id);
                        let style = sample_persona_style(&pools, seed, t.mm_id)?;
                        let assignment = default_assignment(seed, t.mm_id);
                        let prompt = build_prompt(&ps, &profile, &style, &assignment)?;
                        Ok(generate(provider.as_ref(), &prompt, t.mm_id)?)
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            write_jsonl(&out, "trajprism.annotations", &records)?;
            eprintln!(
                "annotated {} trajectories via {}",
                records.len(),
                std::env::var(PROVIDER_URL_ENV).unwrap_or_else(|_| "template generator".into())
            );
        }
        Command::Qc { city, annotations, out, report } => {
            let bundle = CityBundle::open(&city.city)?;
            let g = bundle.load_graph()?;
            let cells = bundle.load_cells()?;
            let trajs = trajprism::harness::traj_map(&bundle.load_trajectories()?);
            let records = load_annotations(&bundle, &annotations)?;
            let judge = judge_provider(cells.clone())?;
            let terms = TerminologyMap::default();

            #[derive(Serialize)]
            struct QcRow {
                traj_id: u64,
                grounding: trajprism::annotate::GroundingReport,
                diversity: trajprism::annotate::DiversityReport,
                hallucination: trajprism::annotate::HallucinationReport,
            }
            let pairs: Vec<(AnnotationRecord, QcRow)> = {
                use rayon::prelude::*;
                records
                    .par_iter()
                    .map(|rec| -> Result<(AnnotationRecord, QcRow)> {
                        let clean = qc_punctuation(&qc_terminology(rec, &terms));
                        let t = trajs.get(&rec.traj_id).with_context(|| {
                            format!("annotation {} has no trajectory", rec.traj_id)
                        })?;
                        let ps = compress(t, &g, &cells, &bundle.config.hex)?;
                        let row = QcRow {
                            traj_id: rec.traj_id,
                            grounding: qc_grounding(&clean, &ps, &cells),
                            diversity: qc_diversity(&clean),
                            hallucination: qc_hallucination(judge.as_ref(), &clean, &ps, &cells)?,
                        };
                        Ok((clean, row))
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            let (sanitized, rows): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            write_jsonl(&out, "trajprism.annotations", &sanitized)?;
            write_jsonl(&report, "trajprism.qc", &rows)?;
            eprintln!("qc complete: {} records", sanitized.len());
        }
        Command::Judge { city, annotations, out, top, selected } => {
            let bundle = CityBundle::open(&city.city)?;
            let g = bundle.load_graph()?;
            let cells = bundle.load_cells()?;
            let trajs = trajprism::harness::traj_map(&bundle.load_trajectories()?);
            let records = load_annotations(&bundle, &annotations)?;
            let judge = judge_provider(cells.clone())?;

            #[derive(Serialize)]
            struct ScoreRow {
                traj_id: u64,
                #[serde(flatten)]
                card: ScoreCard,
                mean: f64,
            }
            let scored: Vec<(u64, ScoreCard)> = {
                use rayon::prelude::*;
                records
                    .par_iter()
                    .map(|rec| -> Result<(u64, ScoreCard)> {
                        let t = trajs.get(&rec.traj_id).with_context(|| {
                            format!("annotation {} has no trajectory", rec.traj_id)
                        })?;
                        let ps = compress(t, &g, &cells, &bundle.config.hex)?;
                        Ok((rec.traj_id, judge_score(judge.as_ref(), rec, &ps)?))
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            let agreement = agreement_pm1(&scored, &scored)?;
            eprintln!(
                "judge {} scored {} records (self pm1 agreement {:.3})",
                judge.id(),
                scored.len(),
                agreement.mean
            );
            let rows: Vec<ScoreRow> = scored
                .iter()
                .map(|(id, card)| ScoreRow {
                    traj_id: *id,
                    card: card.clone(),
                    mean: card.mean(),
                })
                .collect();
            write_jsonl(&out, "trajprism.scores", &rows)?;
            if let Some(n) = top {
                let ids = select_top(&scored, n)?;
                let path = selected.unwrap_or_else(|| out.with_extension("selected.json"));
                std::fs::write(&path, serde_json::to_string_pretty(&ids)?)?;
                eprintln!("selected top {n} -> {}", path.display());
            }
        }
        Command::Split { city, out, train, val, test } => {
            let bundle = CityBundle::open(&city.city)?;
            let spec = SplitSpec::new(train, val, test, effective_seed(cli.seed, &bundle))?;
            let ids: Vec<u64> = bundle.load_trajectories()?.iter().map(|t| t.mm_id).collect();
            let s = split(&ids, &spec)?;
            std::fs::write(&out, serde_json::to_string_pretty(&s)?)?;
            eprintln!(
                "split {} ids into {}/{}/{}",
                ids.len(),
                s.train.len(),
                s.val.len(),
                s.test.len()
            );
        }
        Command::AnchorRun { city, split: split_name, mode, pool, skeleton, out } => {
            if split_name != "test" {
                bail!("only --split test is supported");
            }
            let bundle = CityBundle::open(&city.city)?;
            let mut cfg = bench_config(cli.seed, &cli.config, &bundle)?;
            cfg.pool = pool;
            cfg.skeleton_m = skeleton;
            let method =
                Task1Method::parse(&mode).with_context(|| format!("unknown mode {mode:?}"))?;
            let cityd = LoadedCity::load(bundle)?;
            let rows = task1_predictions(&cityd, &cfg, method)?;
            write_jsonl(&out, "trajprism.predictions", &rows)?;
            eprintln!("wrote {} predictions ({})", rows.len(), method.as_str());
        }
        Command::FuseTrain { city, params, db, epochs, batch, lr } => {
            let bundle = CityBundle::open(&city.city)?;
            let cfg = bench_config(cli.seed, &cli.config, &bundle)?;
            let cityd = LoadedCity::load(bundle)?;
            let sp = cityd.split(&cfg.split)?;
            let by_id = trajprism::harness::traj_map(&cityd.trajectories);
            let embedder = HashEmbedder::default();
            let train_pairs: Vec<(String, trajprism::traj::Trajectory)> = sp
                .train
                .iter()
                .filter_map(|id| {
                    let t = by_id.get(id)?;
                    let rec = cityd.annotations.get(id)?;
                    Some(
                        rec.queries()
                            .iter()
                            .map(|q| (q.to_string(), t.clone()))
                            .collect::<Vec<_>>(),
                    )
                })
                .flatten()
                .collect();
            let train_ds = fuse::FuseDataset::build(
                &train_pairs,
                &embedder,
                &cityd.graph,
                &cityd.cells,
                &cityd.bundle.config.hex,
            )?;
            let tc = fuse::TrainConfig { epochs, batch, lr, seed: cfg.split.seed };
            let (p, curve) = fuse::train(&train_ds, embedder.dim(), &tc)?;
            std::fs::write(&params, serde_json::to_string(&p)?)?;
            let pool_pairs: Vec<(String, trajprism::traj::Trajectory)> = sp
                .test
                .iter()
                .map(|id| (String::new(), by_id[id].clone()))
                .collect();
            let pool_ds = fuse::FuseDataset::build(
                &pool_pairs,
                &embedder,
                &cityd.graph,
                &cityd.cells,
                &cityd.bundle.config.hex,
            )?;
            let fdb = fuse::build_db(&p, &pool_ds)?;
            fuse::save_db(&fdb, &db)?;
            eprintln!(
                "trained {} pairs over {} epochs (loss {:.4} -> {:.4}); db of {} trajectories",
                train_ds.ids.len(),
                epochs,
                curve.first().unwrap_or(&f64::NAN),
                curve.last().unwrap_or(&f64::NAN),
                fdb.len()
            );
        }
        Command::FuseRetrieve { db, query, k } => {
            let fdb = fuse::load_db(&db)?;
            let embedder = HashEmbedder::default();
            let ranked = fuse::retrieve(&query, &fdb, &embedder, k)?;
            print_json(&ranked)?;
        }
        Command::RapRun { city, mode, k, out } => {
            let bundle = CityBundle::open(&city.city)?;
            let mut cfg = bench_config(cli.seed, &cli.config, &bundle)?;
            cfg.rap_k = k;
            let method =
                Task3Method::parse(&mode).with_context(|| format!("unknown mode {mode:?}"))?;
            let cityd = LoadedCity::load(bundle)?;
            let rows = task3_captions(&cityd, &cfg, method)?;
            write_jsonl(&out, "trajprism.captions", &rows)?;
            eprintln!("wrote {} captions ({})", rows.len(), method.as_str());
        }
        Command::Eval { city, task, method, out, input, jk_form, eps_km } => {
            let bundle = CityBundle::open(&city.city)?;
            let mut cfg = bench_config(cli.seed, &cli.config, &bundle)?;
            cfg.eps_km = eps_km;
            cfg.jk_form = match jk_form.as_str() {
                "max" => trajprism::metrics::JkForm::Max,
                "mean" => trajprism::metrics::JkForm::Mean,
                other => bail!("unknown --jk-form {other:?}"),
            };
            let cityd = LoadedCity::load(bundle)?;
            let value = run_benchmark_with_input(&cityd, &cfg, task, &method, &out, input.as_deref())?;
            print_json(&value)?;
        }
        Command::FigureData { report, out } => {
            let value: serde_json::Value =
                serde_json::from_str(&std::fs::read_to_string(&report)?)?;
            let csv = if let Some(rows) = value.get("style_breakdown").and_then(|v| v.as_array())
            {
                let mut csv = String::from("style,jaccard,n\n");
                for r in rows {
                    csv.push_str(&format!(
                        "{},{},{}\n",
                        r["style"].as_str().unwrap_or(""),
                        r["jaccard"],
                        r["n"]
                    ));
                }
                csv
            } else if let Some(rows) =
                value.get("dimension_breakdown").and_then(|v| v.as_array())
            {
                let mut csv = String::from("dimension,mrr,n\n");
                for r in rows {
                    csv.push_str(&format!("{},{},{}\n", r["dimension"], r["mrr"], r["n"]));
                }
                csv
            } else if let Some(rep) = value.get("report").and_then(|v| v.as_object()) {
                let mut csv = String::from("metric,value\n");
                for (k, v) in rep {
                    if v.is_number() {
                        csv.push_str(&format!("{k},{v}\n"));
                    }
                }
                csv
            } else {
                bail!("report {} has no figure data", report.display());
            };
            std::fs::write(&out, csv)?;
            eprintln!("wrote {}", out.display());
        }
    }
    Ok(())
}
