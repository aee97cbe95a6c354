use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use invface::breeding::{breed, save_rounds_csv, BreedingContext};
use invface::config::{ExperimentConfig, LossKind};
use invface::corpus::{generate_corpus_range, read_shard, write_shard, CorpusShard};
use invface::evaluation::{evaluate, evaluate_state, iou, mean_parameters, EvalReport};
use invface::face_model::{generate_model, FaceModel};
use invface::image::{Mask, RgbImage};
use invface::params::{LabeledParams, ParameterVector};
use invface::regressor::{train, RegressorState};
use invface::renderer::render;

#[derive(Parser, Debug)]
#[command(name = "invface", version, about = "Inverse face rendering toolkit")]
pub struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "INVFACE_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// Experiment configuration (JSON). Desk defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<ExperimentConfig> {
        match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| p.display().to_string()),
            None => Ok(ExperimentConfig::default()),
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PriorChoice {
    Base,
    Target,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LossChoice {
    Weighted,
    Euclidean,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the procedural face model.
    GenModel {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a labeled corpus shard from a prior.
    GenCorpus {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value = "base")]
        prior: PriorChoice,
        #[arg(long)]
        count: usize,
        /// Sample index of the first record.
        #[arg(long, default_value_t = 0)]
        first_index: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a regressor, from scratch or continuing from --init.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 5000)]
        iters: usize,
        /// Overrides the configured loss.
        #[arg(long, value_enum)]
        loss: Option<LossChoice>,
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Adapt a trained regressor to an unlabeled target shard.
    Breed {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Directory receiving each round's bred shard.
        #[arg(long)]
        bred_dir: Option<PathBuf>,
    },
    /// Predict parameters for one image.
    Infer {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render labeled parameters to an image and mask.
    Render {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Mask to compare against; the IOU is printed to stderr.
        #[arg(long)]
        reference_mask: Option<PathBuf>,
    },
    /// Score a regressor on a labeled shard.
    Eval {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Shard whose mean parameters form the constant baseline
        /// (defaults to the evaluated shard).
        #[arg(long)]
        baseline_corpus: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Write one corpus record as image, mask and labeled parameters.
    ExportSample {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        index: usize,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        params: Option<PathBuf>,
    },
}

fn at<T>(r: invface::Result<T>, path: &Path) -> Result<T> {
    r.with_context(|| path.display().to_string())
}

fn load_model(path: &Path, config: &ExperimentConfig) -> Result<FaceModel> {
    let model = at(FaceModel::load(path), path)?;
    if model.spec.layout() != config.model.layout() {
        return Err(anyhow!(
            "{}: model parameter dimension {} does not match the configuration ({})",
            path.display(),
            model.layout().len(),
            config.model.layout().len()
        ));
    }
    Ok(model)
}

fn load_shard(path: &Path, model: &FaceModel) -> Result<CorpusShard> {
    let shard = at(read_shard(path), path)?;
    at(shard.ensure_m(model.layout().len()), path)?;
    Ok(shard)
}

fn load_net(path: &Path, model: Option<&FaceModel>) -> Result<RegressorState> {
    let state = at(RegressorState::load(path), path)?;
    if let Some(m) = model {
        if state.spec().layout != m.layout() {
            return Err(anyhow!(
                "{}: network predicts {} parameters but the model has {}",
                path.display(),
                state.output_dim(),
                m.layout().len()
            ));
        }
    }
    Ok(state)
}

pub fn run(cli: Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .context("configuring worker threads")?;
    match cli.command {
        Command::GenModel { config, out } => {
            let config = config.load()?;
            let model = generate_model(&config.model)?;
            at(model.save(&out), &out)?;
            eprintln!("model: {} vertices, m = {}", model.n_vertices(), model.layout().len());
        }
        Command::GenCorpus {
            config,
            model,
            prior,
            count,
            first_index,
            out,
        } => {
            let config = config.load()?;
            let model = load_model(&model, &config)?;
            let prior = match prior {
                PriorChoice::Base => config.base_prior,
                PriorChoice::Target => config.target_prior,
            };
            let shard = generate_corpus_range(&model, &config.camera, &prior, first_index, count)?;
            at(write_shard(&shard, &out), &out)?;
            eprintln!("corpus: {} records, {} skipped", shard.len(), shard.header.skipped.len());
        }
        Command::Train {
            config,
            model,
            corpus,
            iters,
            loss,
            init,
            out,
            trace,
        } => {
            let mut config = config.load()?;
            let model = load_model(&model, &config)?;
            let shard = load_shard(&corpus, &model)?;
            if let Some(l) = loss {
                config.loss.kind = match l {
                    LossChoice::Weighted => LossKind::Weighted,
                    LossChoice::Euclidean => LossKind::Euclidean,
                };
            }
            let metric = config.loss.metric(&model)?;
            let mut state = match &init {
                Some(p) => load_net(p, Some(&model))?,
                None => RegressorState::new(config.network.clone())?,
            };
            let t = train(&mut state, &shard, &metric, &config.training, iters)?;
            at(state.save(&out), &out)?;
            if let Some(p) = trace {
                at(t.save_csv(&p), &p)?;
            }
            if let Some((i, l)) = t.rows.last() {
                eprintln!("iteration {i}: loss {l:.1}");
            }
        }
        Command::Breed {
            config,
            model,
            net,
            target,
            out,
            metrics,
            bred_dir,
        } => {
            let config = config.load()?;
            let model = load_model(&model, &config)?;
            let mut state = load_net(&net, Some(&model))?;
            let target_shard = load_shard(&target, &model)?;
            let (target_shard, holdout) = target_shard.split_tail(config.breeding.holdout_count);
            let metric = config.loss.metric(&model)?;
            let ctx = BreedingContext {
                model: &model,
                camera: &config.camera,
                metric: &metric,
                train: &config.training,
                config: &config.breeding,
            };
            if let Some(dir) = &bred_dir {
                std::fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
            }
            let mut write_err = None;
            let rounds = breed(&mut state, &target_shard, &ctx, holdout.as_ref(), |r, shard| {
                if let Some(e) = &r.eval {
                    eprintln!(
                        "round {}: loss {:.1}, photometric {:.2}, geometric {:.3}, iou {:.2}",
                        r.round, e.weighted_loss.mean, e.photometric.mean, e.geometric.mean, e.iou.mean
                    );
                }
                if let Some(dir) = &bred_dir {
                    let p = dir.join(format!("round{}.ifnc", r.round));
                    if let Err(e) = write_shard(shard, &p) {
                        write_err.get_or_insert(anyhow!(e).context(p.display().to_string()));
                    }
                }
            })?;
            if let Some(e) = write_err {
                return Err(e);
            }
            at(state.save(&out), &out)?;
            if let Some(p) = metrics {
                at(save_rounds_csv(&rounds, &p), &p)?;
            }
        }
        Command::Infer { net, image, out } => {
            let state = load_net(&net, None)?;
            let img = at(RgbImage::load_ppm(&image), &image)?;
            let row = at(state.predict_one(&img), &image)?;
            let theta = ParameterVector::from_f32(state.spec().layout, &row)?;
            let json = serde_json::to_string_pretty(&LabeledParams::from(&theta))?;
            std::fs::write(&out, json + "\n").with_context(|| out.display().to_string())?;
        }
        Command::Render {
            config,
            model,
            params,
            out,
            mask,
            reference_mask,
        } => {
            let config = config.load()?;
            let model = load_model(&model, &config)?;
            let text = std::fs::read_to_string(&params).with_context(|| params.display().to_string())?;
            let labeled: LabeledParams =
                serde_json::from_str(&text).with_context(|| params.display().to_string())?;
            let theta = at(labeled.to_vector(), &params)?;
            let sample = at(render(&model, &config.camera, &theta), &params)?;
            at(sample.image.save_ppm(&out), &out)?;
            if let Some(p) = mask {
                at(sample.mask.save_pgm(&p), &p)?;
            }
            if let Some(p) = reference_mask {
                let reference = at(Mask::load_pgm(&p), &p)?;
                eprintln!("iou: {:.2}", at(iou(&reference, &sample.mask), &p)?);
            }
        }
        Command::Eval {
            config,
            model,
            net,
            corpus,
            baseline_corpus,
            report,
        } => {
            let config = config.load()?;
            let model = load_model(&model, &config)?;
            let state = load_net(&net, Some(&model))?;
            let shard = load_shard(&corpus, &model)?;
            let metric = config.loss.metric(&model)?;
            let result = evaluate_state(&state, &model, &config.camera, &shard, &metric)?;
            let mean = match &baseline_corpus {
                Some(p) => mean_parameters(&load_shard(p, &model)?)?,
                None => mean_parameters(&shard)?,
            };
            let baseline = evaluate(&model, &config.camera, &shard, &vec![mean; shard.len()], &metric)?;
            std::fs::write(&report, report_csv(&result, &baseline))
                .with_context(|| report.display().to_string())?;
            println!("{}", result.summary());
            println!("constant mean predictor:\n{}", baseline.summary());
        }
        Command::ExportSample {
            config,
            corpus,
            index,
            image,
            mask,
            params,
        } => {
            let shard = at(read_shard(&corpus), &corpus)?;
            let rec = shard.records.get(index).ok_or_else(|| {
                anyhow!("{}: index {index} out of range ({} records)", corpus.display(), shard.len())
            })?;
            at(rec.image.save_ppm(&image), &image)?;
            if let Some(p) = mask {
                at(rec.mask.save_pgm(&p), &p)?;
            }
            if let Some(p) = params {
                let layout = config.load()?.model.layout();
                at(shard.ensure_m(layout.len()), &corpus)?;
                let theta = ParameterVector::from_f32(layout, &rec.params)?;
                let json = serde_json::to_string_pretty(&LabeledParams::from(&theta))?;
                std::fs::write(&p, json + "\n").with_context(|| p.display().to_string())?;
            }
        }
    }
    Ok(())
}

fn report_csv(result: &EvalReport, baseline: &EvalReport) -> String {
    let mut s = result.to_csv();
    let stats = [baseline.weighted_loss, baseline.photometric, baseline.geometric, baseline.iou];
    s += &format!("baseline_mean,{}\n", stats.map(|t| t.mean.to_string()).join(","));
    s += &format!("baseline_std,{}\n", stats.map(|t| t.std.to_string()).join(","));
    s
}
