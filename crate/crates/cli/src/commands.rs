use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ibner::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use ibner::corpus::{
    attach_synonyms, build_vocab, load_corpus, load_synonym_dict, write_corpus, write_synonym_dict,
    EntityTypes, Sentence,
};
use ibner::eval::{
    evaluate, export_posteriors, reconstruction_report, write_predictions, write_reconstructions,
    Evaluation, ReconstructionReport,
};
use ibner::model::LatentSource;
use ibner::{LossRecord, Mode, Trainer};
use serde::Serialize;

use crate::args::{CheckpointArgs, EvalArgs, ExportArgs, GridArgs, SynthArgs};
use crate::error::{CliError, Context, Result};
use crate::run_config::RunConfigFile;

pub const CONFIG_ECHO: &str = "config.toml";
pub const LOSS_LOG: &str = "loss.tsv";
pub const PRETRAIN_LOG: &str = "pretrain_loss.tsv";
pub const DEV_LOG: &str = "dev.tsv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const DEV_PREDICTIONS: &str = "dev_predictions.jsonl";
pub const PREDICTIONS: &str = "predictions.jsonl";
pub const REPORT: &str = "report.json";
pub const RECONSTRUCTIONS: &str = "reconstructions.tsv";
pub const GRID_TABLE: &str = "grid.tsv";

fn posterior_file(source: LatentSource) -> String {
    format!("posteriors_{}.tsv", source.as_str())
}

fn read_corpus(path: &Path, max_len: usize) -> Result<Vec<Sentence>> {
    let (sents, stats) =
        load_corpus(path, max_len).context(|| format!("loading corpus {}", path.display()))?;
    log::info!(
        "{}: {} records, {} sentences",
        path.display(),
        stats.records,
        sents.len()
    );
    Ok(sents)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).context(|| format!("writing {}", path.display()))
}

/// Loss log with one column per active objective term.
pub fn loss_table(mode: Mode, records: &[LossRecord]) -> String {
    let mut cols = vec!["step", "L"];
    if mode.has_vib() {
        cols.push("L_VIB");
    }
    if mode.has_sr() {
        cols.push("L_SR");
    }
    if mode.has_sg() {
        cols.push("L_SG");
    }
    let mut out = cols.join("\t");
    out.push('\n');
    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| x.to_string());
    for r in records {
        let _ = write!(out, "{}\t{}", r.step, r.total);
        if mode.has_vib() {
            let _ = write!(out, "\t{}", cell(r.vib));
        }
        if mode.has_sr() {
            let _ = write!(out, "\t{}", cell(r.sr));
        }
        if mode.has_sg() {
            let _ = write!(out, "\t{}", cell(r.sg));
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainSummary {
    pub out: PathBuf,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
    pub final_dev_f1: f64,
    pub synonym_coverage: f64,
}

pub fn train(run: &RunConfigFile) -> Result<TrainSummary> {
    let config = run.model.clone();
    let out = run.out.clone().ok_or_else(|| {
        CliError::Usage("no output directory (--out or `out` in the config)".into())
    })?;
    let train_path = run.train.as_ref().ok_or_else(|| {
        CliError::Usage("no training corpus (--corpus or `train` in the config)".into())
    })?;
    if config.mode.has_sg() && run.dict.is_none() {
        return Err(CliError::Usage(format!(
            "mode `{}` needs a synonym dictionary (--dict)",
            config.mode
        )));
    }

    let mut train = read_corpus(train_path, config.max_sentence_length)?;
    let mut dev = match &run.dev {
        Some(p) => read_corpus(p, config.max_sentence_length)?,
        None => train.clone(),
    };
    let mut coverage = 0.0;
    if let Some(p) = &run.dict {
        let dict =
            load_synonym_dict(p).context(|| format!("loading dictionary {}", p.display()))?;
        let cov = attach_synonyms(&mut train, &dict);
        attach_synonyms(&mut dev, &dict);
        coverage = cov.percent();
        log::info!(
            "synonym coverage {:.1}% ({}/{})",
            coverage,
            cov.hits,
            cov.total
        );
    }
    let vocab = build_vocab(&train, config.min_freq).context(|| "building vocabulary".into())?;
    let types = EntityTypes::from_corpus(&train);
    types.check(&dev).context(|| "dev corpus".into())?;

    create_dir(&out)?;
    write_file(&out.join(CONFIG_ECHO), &run.to_toml())?;

    let mode = config.mode;
    let threshold = config.threshold;
    let mut trainer =
        Trainer::init(config, vocab, types).context(|| "initializing model".into())?;
    let pre = trainer
        .pretrain_vaes(&train)
        .context(|| "VAE pretraining".into())?;
    if mode.has_sr() {
        write_file(&out.join(PRETRAIN_LOG), &loss_table(mode, &pre))?;
    }

    let best_path = out.join(BEST_CHECKPOINT);
    let mut best = (0usize, f64::NEG_INFINITY);
    let mut last_f1 = 0.0;
    let mut dev_log = String::from("epoch\tP\tR\tF1\n");
    trainer
        .train_joint(&train, |t, epoch| {
            let (e, _) = evaluate(&t.model, &dev, threshold)?;
            let m = e.report.micro;
            let _ = writeln!(dev_log, "{epoch}\t{}\t{}\t{}", m.precision, m.recall, m.f1);
            last_f1 = m.f1;
            if m.f1 > best.1 {
                best = (epoch, m.f1);
                save_checkpoint(&best_path, &t.model, &t.state)?;
            }
            Ok(())
        })
        .context(|| "joint training".into())?;

    let final_path = out.join(FINAL_CHECKPOINT);
    save_checkpoint(&final_path, &trainer.model, &trainer.state)
        .context(|| format!("writing {}", final_path.display()))?;
    if best.0 == 0 {
        save_checkpoint(&best_path, &trainer.model, &trainer.state)
            .context(|| format!("writing {}", best_path.display()))?;
        best.1 = last_f1;
    }
    write_file(
        &out.join(LOSS_LOG),
        &loss_table(mode, &trainer.state.history),
    )?;
    write_file(&out.join(DEV_LOG), &dev_log)?;
    let (_, scored) =
        evaluate(&trainer.model, &dev, threshold).context(|| "dev predictions".into())?;
    let pred_path = out.join(DEV_PREDICTIONS);
    write_predictions(&pred_path, &scored)
        .context(|| format!("writing {}", pred_path.display()))?;

    Ok(TrainSummary {
        out,
        best_epoch: best.0,
        best_dev_f1: best.1,
        final_dev_f1: last_f1,
        synonym_coverage: coverage,
    })
}

/// Loads a checkpoint and a corpus that only uses the checkpoint's entity types.
fn load_pair(args: &CheckpointArgs) -> Result<(Checkpoint, Vec<Sentence>)> {
    let ckpt = load_checkpoint(&args.checkpoint)
        .context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let corpus = read_corpus(&args.corpus, ckpt.model.config.max_sentence_length)?;
    ckpt.model
        .types
        .check(&corpus)
        .context(|| "type inventory mismatch between checkpoint and corpus".into())?;
    Ok((ckpt, corpus))
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalOutput {
    #[serde(flatten)]
    pub evaluation: Evaluation,
    /// Mean reconstruction BLEU-2, for models with a reconstruction decoder.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu2: Option<f64>,
}

pub fn eval(args: &EvalArgs) -> Result<EvalOutput> {
    let (ckpt, corpus) = load_pair(&args.common)?;
    let threshold = args.threshold.unwrap_or(ckpt.model.config.threshold);
    let (evaluation, scored) =
        evaluate(&ckpt.model, &corpus, threshold).context(|| "evaluation".into())?;
    let bleu2 = match ckpt.model.sr {
        Some(_) => Some(
            reconstruction_report(&ckpt.model, &corpus)
                .context(|| "reconstruction".into())?
                .mean_bleu2,
        ),
        None => None,
    };
    let output = EvalOutput { evaluation, bleu2 };
    if let Some(out) = &args.common.out {
        create_dir(out)?;
        let p = out.join(PREDICTIONS);
        write_predictions(&p, &scored).context(|| format!("writing {}", p.display()))?;
        let json = serde_json::to_string_pretty(&output).expect("report serializes");
        write_file(&out.join(REPORT), &(json + "\n"))?;
    }
    Ok(output)
}

pub fn reconstruct(args: &CheckpointArgs) -> Result<ReconstructionReport> {
    let (ckpt, corpus) = load_pair(args)?;
    let report = reconstruction_report(&ckpt.model, &corpus)
        .context(|| args.checkpoint.display().to_string())?;
    if let Some(out) = &args.out {
        create_dir(out)?;
        let p = out.join(RECONSTRUCTIONS);
        write_reconstructions(&p, &report).context(|| format!("writing {}", p.display()))?;
    }
    Ok(report)
}

/// Returns the output path, row count and vector width.
pub fn export(args: &ExportArgs) -> Result<(PathBuf, usize, usize)> {
    let (ckpt, corpus) = load_pair(&args.common)?;
    let dir = args
        .common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("."));
    create_dir(&dir)?;
    let path = dir.join(posterior_file(args.source));
    let (rows, width) = export_posteriors(&ckpt.model, &corpus, args.source, &path)
        .context(|| format!("exporting {} posteriors", args.source.as_str()))?;
    Ok((path, rows, width))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridCell {
    pub beta: f64,
    pub gamma: f64,
    pub dev_f1: f64,
    pub best: bool,
}

pub const MAX_GRID_CELLS: usize = 9;

/// Trains every (beta, gamma) pair with the same seed into `out/beta=..,gamma=..`.
pub fn grid(args: &GridArgs) -> Result<Vec<GridCell>> {
    let base = args.run.resolve()?;
    let out = base.out.clone().ok_or_else(|| {
        CliError::Usage("no output directory (--out or `out` in the config)".into())
    })?;
    let betas = if args.betas.is_empty() {
        vec![base.model.beta]
    } else {
        args.betas.clone()
    };
    let gammas = if args.gammas.is_empty() {
        vec![base.model.gamma]
    } else {
        args.gammas.clone()
    };
    if betas.len() * gammas.len() > MAX_GRID_CELLS {
        return Err(CliError::Usage(format!(
            "grid has {} cells, at most {MAX_GRID_CELLS} allowed",
            betas.len() * gammas.len()
        )));
    }
    let mut cells = Vec::new();
    for &beta in &betas {
        for &gamma in &gammas {
            let mut run = base.clone();
            run.model.beta = beta;
            run.model.gamma = gamma;
            run.model
                .validate()
                .map_err(|e| CliError::Usage(e.to_string()))?;
            run.out = Some(out.join(format!("beta={beta},gamma={gamma}")));
            log::info!("grid cell beta={beta} gamma={gamma}");
            let s = train(&run)?;
            cells.push(GridCell {
                beta,
                gamma,
                dev_f1: s.best_dev_f1,
                best: false,
            });
        }
    }
    // First maximum wins on ties.
    let best = (0..cells.len()).fold(0, |b, i| {
        if cells[i].dev_f1 > cells[b].dev_f1 {
            i
        } else {
            b
        }
    });
    cells[best].best = true;
    create_dir(&out)?;
    write_file(&out.join(GRID_TABLE), &grid_table(&cells))?;
    Ok(cells)
}

pub fn grid_table(cells: &[GridCell]) -> String {
    let mut s = String::from("beta\tgamma\tdev_f1\tbest\n");
    for c in cells {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}",
            c.beta,
            c.gamma,
            c.dev_f1,
            if c.best { "*" } else { "" }
        );
    }
    s
}

/// Writes `toy.jsonl` and `toy.dict.tsv` into `args.out`.
pub fn synth(args: &SynthArgs) -> Result<(PathBuf, PathBuf)> {
    let c = ibner::synth::generate(args.sentences, args.seed);
    create_dir(&args.out)?;
    let corpus = args.out.join("toy.jsonl");
    let dict = args.out.join("toy.dict.tsv");
    write_corpus(&corpus, &c.sentences).context(|| format!("writing {}", corpus.display()))?;
    write_synonym_dict(&dict, &c.dictionary).context(|| format!("writing {}", dict.display()))?;
    Ok((corpus, dict))
}
