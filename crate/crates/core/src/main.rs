use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use deepsv::backends::{fit_backend, Backend};
use deepsv::container::{write_atomic, Archive, VectorSet};
use deepsv::corpus::Manifest;
use deepsv::datagen::{generate_corpus, split_train_eval};
use deepsv::dvector::train_dvector;
use deepsv::e2e::{train_e2e, E2EModel};
use deepsv::eval::{
    build_conditions, compute_eer, emit_report, read_scores, read_trial_list, write_scores, write_segments,
    write_trials, ConditionSpec, ReportCell,
};
use deepsv::pipeline::{
    backend_label, extract_dvectors, extract_embeddings, featurize, labeled, load_model, read_feature_dir,
    reduced_gradcheck, run_pipeline, score_trials, trial_list_features, utt_infos, vector_labels, write_dvector_log, write_e2e_log,
    write_feature_dir, AnyModel, RunConfig, Scorer,
};
use deepsv::{Error, Exec, Result};

#[derive(Parser)]
#[command(name = "deepsv", version, about = "Deep speaker verification workbench")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run every batch loop sequentially.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with train/eval manifests.
    GenData {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Compute model features for every utterance of a manifest.
    Featurize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train the frame-level speaker classifier.
    TrainDvector(TrainArgs),
    /// Train the pairwise end-to-end network.
    TrainE2e(TrainArgs),
    /// Extract d-vectors or embeddings for utterances or trial segments.
    Extract {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Extract per trial-list segment instead of per utterance.
        #[arg(long, requires = "segments")]
        trials: Option<PathBuf>,
        #[arg(long)]
        segments: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a cosine, LDA or PLDA back-end on utterance d-vectors.
    FitBackend {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        vectors: PathBuf,
        /// Manifest providing speaker labels for the vector ids.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build an evaluation condition from an eval manifest.
    Trials {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        enroll_secs: f64,
        #[arg(long)]
        test_secs: f64,
        #[arg(long, default_value_t = 1)]
        enrollments_per_speaker: usize,
        /// Writes `<prefix>.trials.tsv` and `<prefix>.segments.tsv`.
        #[arg(long)]
        out_prefix: PathBuf,
    },
    /// Score a trial list.
    Score {
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        segments: PathBuf,
        /// Segment vectors from `extract`.
        #[arg(long)]
        vectors: Option<PathBuf>,
        /// Back-end archive for d-vectors.
        #[arg(long, conflicts_with_all = ["e2e_model", "random_seed"])]
        backend: Option<PathBuf>,
        /// End-to-end model whose bilinear scorer is used.
        #[arg(long, conflicts_with = "random_seed")]
        e2e_model: Option<PathBuf>,
        /// Uniform random scores (chance-level control).
        #[arg(long)]
        random_seed: Option<u64>,
        #[arg(long)]
        system: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute EERs for score files and print the report table.
    Eval {
        #[arg(required = true)]
        scores: Vec<PathBuf>,
        /// Also write the TSV summary here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of both networks at small widths.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Central-difference step.
        #[arg(long, default_value_t = 1e-4)]
        step: f64,
    },
    /// Run every stage end to end.
    Pipeline {
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Training log (TSV).
    #[arg(long)]
    log: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.resolve_seeds();
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let exec = if cli.common.sequential { Exec::Sequential } else { Exec::Parallel };
    match cli.command {
        Command::GenData { out_dir } => {
            cfg.datagen.validate()?;
            let manifest = generate_corpus(&cfg.datagen, &out_dir, exec)?;
            let (train, eval) = split_train_eval(
                &manifest,
                cfg.split.train_speakers,
                cfg.split.eval_speakers,
                cfg.split_seed(),
            )?;
            train.write(&out_dir.join("train.tsv"))?;
            eval.write(&out_dir.join("eval.tsv"))?;
            println!(
                "{} utterances from {} speakers in {}",
                manifest.entries.len(),
                manifest.speakers().len(),
                out_dir.display()
            );
        }
        Command::Featurize { manifest, out_dir } => {
            let m = Manifest::read(&manifest)?;
            let feats = featurize(&m, &cfg.frontend, exec)?;
            write_feature_dir(&out_dir, &m, &feats)?;
            println!("{} feature files in {}", feats.len(), out_dir.display());
        }
        Command::TrainDvector(a) => {
            cfg.dvector.validate()?;
            let m = Manifest::read(&a.manifest)?;
            let data = labeled(&m, read_feature_dir(&a.features, &m)?)?;
            let (model, logs) = train_dvector(&data, &cfg.dvector, &cfg.trainer.dvector, exec, |_| {})?;
            model.to_archive().write(&a.out)?;
            if let Some(p) = &a.log {
                write_dvector_log(p, &logs)?;
            }
            if let Some(l) = logs.last() {
                println!("final loss {:.4}, frame accuracy {:.3}", l.loss, l.frame_accuracy);
            }
        }
        Command::TrainE2e(a) => {
            cfg.e2e.validate()?;
            let m = Manifest::read(&a.manifest)?;
            let data = labeled(&m, read_feature_dir(&a.features, &m)?)?;
            let (model, logs) = train_e2e(
                &data,
                &cfg.e2e,
                &cfg.e2e_pairs,
                &cfg.e2e_loss,
                &cfg.trainer.e2e,
                exec,
                |_| {},
            )?;
            model.to_archive().write(&a.out)?;
            if let Some(p) = &a.log {
                write_e2e_log(p, &logs)?;
            }
            if let Some(l) = logs.last() {
                println!("final normalized loss {:.4}", l.normalized_loss);
            }
        }
        Command::Extract {
            model,
            manifest,
            features,
            trials,
            segments,
            out,
        } => {
            let m = Manifest::read(&manifest)?;
            let feats = read_feature_dir(&features, &m)?;
            let (ids, mats) = match (&trials, &segments) {
                (Some(t), Some(s)) => trial_list_features(&read_trial_list(t, s)?, &m, &feats)?,
                _ => (m.entries.iter().map(|e| e.utt_id.clone()).collect(), feats),
            };
            let set = match load_model(&model)? {
                AnyModel::DVector(d) => extract_dvectors(&d, &ids, &mats, exec)?,
                AnyModel::E2E(e) => extract_embeddings(&e, &ids, &mats, exec)?,
            };
            set.write(&out)?;
            println!("{} {} vectors written to {}", set.ids.len(), set.kind, out.display());
        }
        Command::FitBackend {
            kind,
            vectors,
            manifest,
            out,
        } => {
            let set = VectorSet::read(&vectors)?;
            let labels = vector_labels(&set, &Manifest::read(&manifest)?)?;
            let b = fit_backend(&kind, &set.vectors, &labels, &cfg.backends)?;
            b.to_archive().write(&out)?;
            println!("{} back-end written to {}", b.name(), out.display());
        }
        Command::Trials {
            manifest,
            features,
            enroll_secs,
            test_secs,
            enrollments_per_speaker,
            out_prefix,
        } => {
            let m = Manifest::read(&manifest)?;
            let feats = read_feature_dir(&features, &m)?;
            let cond = ConditionSpec {
                enrollments_per_speaker,
                ..ConditionSpec::new(enroll_secs, test_secs)
            };
            let list = build_conditions(&utt_infos(&m, &feats), &cond, cfg.framing())?;
            write_trials(&with_suffix(&out_prefix, ".trials.tsv"), &list)?;
            write_segments(&with_suffix(&out_prefix, ".segments.tsv"), &list)?;
            println!(
                "{}: {} targets, {} nontargets",
                list.condition.name,
                list.num_targets(),
                list.num_nontargets()
            );
        }
        Command::Score {
            trials,
            segments,
            vectors,
            backend,
            e2e_model,
            random_seed,
            system,
            out,
        } => {
            let list = read_trial_list(&trials, &segments)?;
            let vecs = vectors.as_deref().map(VectorSet::read).transpose()?;
            let (set, default_system) = if let Some(p) = backend {
                let b = Backend::from_archive(&Archive::read(&p)?)?;
                let name = format!("dvector/{}", b.name());
                (score_trials(&list, vecs.as_ref(), &Scorer::Backend(&b), &name, exec)?, name)
            } else if let Some(p) = e2e_model {
                let m = E2EModel::from_archive(&Archive::read(&p)?)?;
                let name = "e2e/bilinear".to_string();
                (score_trials(&list, vecs.as_ref(), &Scorer::Bilinear(&m), &name, exec)?, name)
            } else if let Some(seed) = random_seed {
                let name = "control/random".to_string();
                (score_trials(&list, None, &Scorer::Random(seed), &name, exec)?, name)
            } else {
                return Err(Error::Usage("one of --backend, --e2e-model or --random-seed is required".into()));
            };
            let set = deepsv::eval::ScoreSet {
                system: system.unwrap_or(default_system),
                ..set
            };
            write_scores(&out, &set)?;
            println!("{} trials scored", set.records.len());
        }
        Command::Eval { scores, out } => {
            let mut cells = Vec::new();
            for p in &scores {
                let set = read_scores(p)?;
                let eer = compute_eer(&set.labeled_scores())
                    .map_err(|e| Error::Usage(format!("{}: {e}", p.display())))?;
                let (system, scoring) = split_system(&set.system);
                cells.push(ReportCell {
                    system,
                    scoring,
                    condition: set.condition.clone(),
                    eer,
                });
            }
            let (table, tsv) = emit_report(&cells);
            print!("{table}");
            if let Some(p) = out {
                write_atomic(&p, tsv.as_bytes())?;
            }
        }
        Command::Gradcheck { tolerance, step } => gradcheck(tolerance, step)?,
        Command::Pipeline { out_dir } => {
            let outcome = run_pipeline(&cfg, &out_dir, exec)?;
            print!("{}", outcome.table);
            for (cond, eer) in &outcome.controls {
                println!("random control {cond}: {:.2}", eer.eer);
            }
        }
    }
    Ok(())
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn split_system(system: &str) -> (String, String) {
    match system.split_once('/') {
        Some(("dvector", kind)) => ("d-vector".into(), backend_label(kind).into()),
        Some(("e2e", _)) => ("end-to-end".into(), "Bilinear".into()),
        Some((a, b)) => (a.into(), b.into()),
        None => (system.into(), "-".into()),
    }
}

fn gradcheck(tolerance: f64, step: f64) -> Result<()> {
    let reports = reduced_gradcheck(step, 7)?;
    for (name, r) in &reports {
        print_report(name, r, tolerance);
    }
    if reports.iter().all(|(_, r)| r.passes(tolerance)) {
        Ok(())
    } else {
        Err(Error::Usage(format!("gradient check exceeded tolerance {tolerance}")))
    }
}

fn print_report(name: &str, r: &deepsv::nn::GradCheckReport, tolerance: f64) {
    for p in &r.params {
        println!("{name}\t{}\t{}\t{:.3e}", p.name, p.entries, p.max_rel_error);
    }
    println!(
        "{name}: max relative error {:.3e} ({})",
        r.max_rel_error(),
        if r.passes(tolerance) { "ok" } else { "FAIL" }
    );
}
