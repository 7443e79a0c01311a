use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::cachestore::{build_cache, disk_report, DiskReport, PromptCache};
use crate::cli::config::{Paths, RunConfig};
use crate::cli::report::{
    ablation_table, mean_vqa_accuracy, sample_curve, AblationRow, LatencyReport, MetricsReport,
};
use crate::error::{Error, Result};
use crate::modulator::{prepare_instances, train, Frozen, PreparedInstance, Racc, Toggles, Variant};
use crate::retrieval::io::{read_corpus, read_instances, write_corpus, write_instances};
use crate::retrieval::task::vocabulary;
use crate::retrieval::{generate_task, prrecall_at_k, Document, Retriever, TaskConfig, VqaInstance};
use crate::tinylm::{pretrain, qa_accuracy_with_context, BaseInput, ModelConfig, PretrainConfig, TinyLm, Vocabulary};

const GEN: &str = "racc gen";
const PRETRAIN: &str = "racc pretrain";
const PRETRAIN_HETERO: &str = "racc pretrain --variant hetero";
const TRAIN: &str = "racc train";

fn require(path: &Path, command: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            command,
        })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

/// Files written by `cmd_gen`.
pub struct TaskData {
    pub config: TaskConfig,
    pub vocab: Vocabulary,
    pub corpus: Vec<Document>,
    pub train: Vec<VqaInstance>,
    pub val: Vec<VqaInstance>,
}

impl TaskData {
    pub fn load(paths: &Paths) -> Result<Self> {
        for p in [
            paths.task_config(),
            paths.corpus(),
            paths.train_instances(),
            paths.val_instances(),
        ] {
            require(&p, GEN)?;
        }
        let config: TaskConfig = read_json(&paths.task_config())?;
        Ok(Self {
            vocab: vocabulary(config.n_entities, config.n_attributes)?,
            corpus: read_corpus(&paths.corpus())?,
            train: read_instances(&paths.train_instances())?,
            val: read_instances(&paths.val_instances())?,
            config,
        })
    }

    pub fn retriever(&self, cfg: &RunConfig) -> Result<Retriever> {
        Retriever::new(
            &self.corpus,
            &self.vocab,
            self.config.n_patches,
            cfg.retriever_dim,
            cfg.retriever_seed,
        )
    }
}

/// Frozen models written by `cmd_pretrain`.
pub struct Models {
    pub hyper: TinyLm,
    /// Separate base model of the hetero variant.
    pub base: Option<TinyLm>,
}

impl Models {
    pub fn load(paths: &Paths, variant: Variant) -> Result<Self> {
        require(&paths.hyper_model(), PRETRAIN)?;
        let hyper = TinyLm::load(&paths.hyper_model())?;
        let base = match variant {
            Variant::Homo => None,
            Variant::Hetero => {
                require(&paths.hetero_base_model(), PRETRAIN_HETERO)?;
                Some(TinyLm::load(&paths.hetero_base_model())?)
            }
        };
        Ok(Self { hyper, base })
    }

    pub fn frozen(&self) -> Frozen<'_> {
        Frozen {
            hyper: &self.hyper,
            base: self.base.as_ref().unwrap_or(&self.hyper),
        }
    }
}

/// Generates the synthetic task and writes corpus and instance files.
pub fn cmd_gen(cfg: &RunConfig) -> Result<TaskData> {
    cfg.validate()?;
    let paths = cfg.paths();
    fs::create_dir_all(&paths.root)?;
    let task = generate_task(&cfg.task)?;
    write_json(&paths.task_config(), &task.config)?;
    write_corpus(&paths.corpus(), &task.corpus)?;
    write_instances(&paths.train_instances(), &task.train)?;
    write_instances(&paths.val_instances(), &task.val)?;
    info!(
        "wrote {} documents, {} train and {} val instances to {}",
        task.corpus.len(),
        task.train.len(),
        task.val.len(),
        paths.root.display()
    );
    Ok(TaskData {
        vocab: task.vocabulary()?,
        config: task.config,
        corpus: task.corpus,
        train: task.train,
        val: task.val,
    })
}

/// Stage-0 pretraining of one model. The pretraining worlds use the task's
/// entity and attribute counts so every word stays in the vocabulary.
pub fn pretrain_model(model_cfg: ModelConfig, vocab: &Vocabulary, task: &TaskConfig, pre: &PretrainConfig) -> Result<TinyLm> {
    let pre = PretrainConfig {
        n_entities: task.n_entities,
        n_attributes: task.n_attributes,
        ..pre.clone()
    };
    let mut model = TinyLm::new(model_cfg, pre.seed)?;
    let losses = pretrain(&mut model, vocab, &pre)?;
    let with = qa_accuracy_with_context(&model, vocab, &pre, 100, pre.seed + 1, true)?;
    let without = qa_accuracy_with_context(&model, vocab, &pre, 100, pre.seed + 1, false)?;
    info!(
        "pretrained {:?}: final loss {:.4}, accuracy {:.2} with context, {:.2} without",
        model.config().arch,
        losses.last().copied().unwrap_or(f64::NAN),
        with,
        without
    );
    Ok(model)
}

/// Pretrains the hyper model, plus the wider base model for the hetero variant.
pub fn cmd_pretrain(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let paths = cfg.paths();
    require(&paths.task_config(), GEN)?;
    let task: TaskConfig = read_json(&paths.task_config())?;
    let vocab = vocabulary(task.n_entities, task.n_attributes)?;
    let hyper = pretrain_model(ModelConfig::hyper(vocab.len()), &vocab, &task, &cfg.pretrain)?;
    hyper.save(&paths.hyper_model())?;
    if cfg.variant() == Variant::Hetero {
        let base = pretrain_model(ModelConfig::hetero_base(vocab.len()), &vocab, &task, &cfg.pretrain)?;
        base.save(&paths.hetero_base_model())?;
    }
    Ok(())
}

/// Trains RACC parameters from scratch under `cfg.racc.toggles`.
pub fn train_racc(cfg: &RunConfig, data: &TaskData, models: &Models) -> Result<(Racc, Vec<f64>)> {
    let retriever = data.retriever(cfg)?;
    let prepared = prepare_instances(&data.train, &data.corpus, &retriever, &data.vocab, cfg.train.k)?;
    let frozen = models.frozen();
    let mut racc = Racc::new(cfg.racc.clone(), frozen, &data.vocab)?;
    let losses = train(&mut racc, frozen, &prepared, &cfg.train, |_, _| {})?;
    Ok((racc, losses))
}

/// Trains and snapshots RACC parameters; returns the per-step losses.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let paths = cfg.paths();
    let data = TaskData::load(&paths)?;
    let models = Models::load(&paths, cfg.variant())?;
    let (racc, losses) = train_racc(cfg, &data, &models)?;
    racc.save(&paths.racc())?;
    write_json(&paths.losses(), &losses)?;
    info!("trained {} steps, final loss {:.4}", losses.len(), losses.last().copied().unwrap_or(f64::NAN));
    Ok(losses)
}

/// Mean VQA accuracy of greedy RACC answers.
pub fn racc_accuracy(racc: &Racc, frozen: Frozen<'_>, vocab: &Vocabulary, val: &[PreparedInstance]) -> Result<f64> {
    let preds = val
        .iter()
        .map(|inst| Ok(vocab.detokenize(&racc.answer(frozen, inst, None)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_vqa_accuracy(preds.iter().map(String::as_str).zip(val.iter().map(|i| i.answers.as_slice()))))
}

/// Mean VQA accuracy of the frozen base model with no modulation.
pub fn baseline_accuracy(base: &TinyLm, vocab: &Vocabulary, val: &[PreparedInstance], max_len: usize) -> Result<f64> {
    let preds = val
        .iter()
        .map(|inst| {
            let input = BaseInput {
                image: &inst.image,
                question: &inst.question,
                context: &[],
            };
            Ok(vocab.detokenize(&base.generate(&input, None, max_len)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_vqa_accuracy(preds.iter().map(String::as_str).zip(val.iter().map(|i| i.answers.as_slice()))))
}

/// Evaluates the trained RACC snapshot and writes the metrics report.
pub fn cmd_eval(cfg: &RunConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let paths = cfg.paths();
    let data = TaskData::load(&paths)?;
    let models = Models::load(&paths, cfg.variant())?;
    require(&paths.racc(), TRAIN)?;
    require(&paths.losses(), TRAIN)?;
    let racc = Racc::load(&paths.racc())?;
    let losses: Vec<f64> = read_json(&paths.losses())?;
    let start = Instant::now();
    let retriever = data.retriever(cfg)?;
    let val = prepare_instances(&data.val, &data.corpus, &retriever, &data.vocab, cfg.train.k)?;
    let frozen = models.frozen();
    let accuracy = racc_accuracy(&racc, frozen, &data.vocab, &val)?;
    let baseline = baseline_accuracy(frozen.base, &data.vocab, &val, racc.config().max_answer_len)?;
    let depth = 5.min(data.corpus.len());
    let sets = data
        .val
        .iter()
        .map(|inst| retriever.retrieve_labeled(inst, &data.corpus, depth))
        .collect::<Result<Vec<_>>>()?;
    let report = MetricsReport {
        variant: cfg.variant(),
        toggles: racc.config().toggles,
        k: cfg.train.k,
        val_instances: val.len(),
        vqa_accuracy: accuracy,
        baseline_accuracy: baseline,
        prrecall_at_1: prrecall_at_k(&sets, 1)?,
        prrecall_at_3: prrecall_at_k(&sets, 3)?,
        prrecall_at_5: prrecall_at_k(&sets, 5)?,
        loss_curve: sample_curve(&losses, 100),
        eval_seconds: start.elapsed().as_secs_f64(),
        latency: None,
        disk: None,
    };
    write_report(&paths, &report)?;
    info!("val VQA accuracy {:.4} (baseline {:.4})", accuracy, baseline);
    Ok(report)
}

fn write_report(paths: &Paths, report: &MetricsReport) -> Result<()> {
    if !report.is_finite() {
        return Err(Error::Config("metrics report contains non-finite values".into()));
    }
    write_json(&paths.metrics_json(), report)?;
    fs::write(paths.metrics_txt(), report.to_table())?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub latency: LatencyReport,
    pub disk: DiskReport,
}

/// Times RACC answers with and without the pre-saved prompt cache.
///
/// Retrieval runs before timing starts. The two paths alternate per instance,
/// and the val split is cycled until `min_instances` have been timed.
pub fn benchmark(
    racc: &Racc,
    frozen: Frozen<'_>,
    cache: &mut PromptCache,
    val: &[PreparedInstance],
    min_instances: usize,
) -> Result<LatencyReport> {
    if val.is_empty() {
        return Err(Error::EmptyInput("val instances"));
    }
    let mut identical = 0;
    let (mut with_s, mut without_s) = (0.0, 0.0);
    let n = val.len().max(min_instances);
    for i in 0..n {
        let inst = &val[i % val.len()];
        let t = Instant::now();
        let cold = racc.answer(frozen, inst, None)?;
        without_s += t.elapsed().as_secs_f64();
        let t = Instant::now();
        let warm = racc.answer(frozen, inst, Some(&mut *cache))?;
        with_s += t.elapsed().as_secs_f64();
        if i < val.len() && cold == warm {
            identical += 1;
        }
    }
    let (with_cache_s, without_cache_s) = (with_s / n as f64, without_s / n as f64);
    Ok(LatencyReport {
        instances: n,
        with_cache_s,
        without_cache_s,
        saving: 1.0 - with_cache_s / without_cache_s,
        identical_answers: identical,
    })
}

/// Runs the latency benchmark; `pre_save` (re)builds the cache first.
/// Adds latency and disk figures to the metrics report.
pub fn cmd_bench(cfg: &RunConfig, pre_save: bool) -> Result<MetricsReport> {
    cfg.validate()?;
    let paths = cfg.paths();
    let data = TaskData::load(&paths)?;
    let models = Models::load(&paths, cfg.variant())?;
    require(&paths.racc(), TRAIN)?;
    let racc = Racc::load(&paths.racc())?;
    let frozen = models.frozen();
    if pre_save {
        let s = build_cache(&data.corpus, &data.vocab, frozen.hyper, racc.theta_d(), &paths.cache())?;
        info!("cached {} prompts in {} bytes (raw corpus {} bytes)", s.count, s.cache_bytes, s.raw_bytes);
    }
    let mut cache = PromptCache::open(&paths.cache(), frozen.hyper, racc.theta_d())?;
    let retriever = data.retriever(cfg)?;
    let val = prepare_instances(&data.val, &data.corpus, &retriever, &data.vocab, cfg.train.k)?;
    let latency = benchmark(&racc, frozen, &mut cache, &val, cfg.bench_min_instances)?;
    let disk = disk_report(&paths.cache(), &data.corpus)?;
    info!(
        "latency {:.6}s -> {:.6}s per instance ({:.1}% saving), {}/{} identical answers",
        latency.without_cache_s,
        latency.with_cache_s,
        100.0 * latency.saving,
        latency.identical_answers,
        val.len()
    );
    write_json(
        &paths.bench_json(),
        &BenchReport {
            latency: latency.clone(),
            disk,
        },
    )?;
    let mut report = if paths.metrics_json().exists() {
        read_json(&paths.metrics_json())?
    } else {
        cmd_eval(cfg)?
    };
    report.latency = Some(latency);
    report.disk = Some(disk);
    write_report(&paths, &report)?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Toggle {
    Pipe,
    Prdb,
    Dcse,
    Rgca,
}

impl Toggle {
    pub const ALL: [Toggle; 4] = [Toggle::Pipe, Toggle::Dcse, Toggle::Rgca, Toggle::Prdb];

    pub fn set(self, t: &mut Toggles, on: bool) {
        match self {
            Toggle::Pipe => t.pipe = on,
            Toggle::Prdb => t.prdb = on,
            Toggle::Dcse => t.dcse = on,
            Toggle::Rgca => t.rgca = on,
        }
    }
}

impl FromStr for Toggle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pipe" => Ok(Toggle::Pipe),
            "prdb" => Ok(Toggle::Prdb),
            "dcse" => Ok(Toggle::Dcse),
            "rgca" => Ok(Toggle::Rgca),
            other => Err(Error::Config(format!("unknown toggle `{other}`"))),
        }
    }
}

/// Every on/off combination of `vary`, starting from all on. Toggles not in
/// `vary` keep their value from `base`.
pub fn toggle_grid(base: Toggles, vary: &[Toggle]) -> Vec<Toggles> {
    let n = vary.len();
    (0..1usize << n)
        .map(|mask| {
            let mut t = base;
            for (i, tog) in vary.iter().enumerate() {
                tog.set(&mut t, mask >> (n - 1 - i) & 1 == 0);
            }
            t
        })
        .collect()
}

/// Trains one RACC per toggle combination with a shared seed and reports val accuracy.
pub fn cmd_ablate(cfg: &RunConfig, vary: &[Toggle]) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let mut vary = vary.to_vec();
    vary.dedup();
    let paths = cfg.paths();
    let data = TaskData::load(&paths)?;
    let models = Models::load(&paths, cfg.variant())?;
    let retriever = data.retriever(cfg)?;
    let val = prepare_instances(&data.val, &data.corpus, &retriever, &data.vocab, cfg.train.k)?;
    let mut rows = Vec::new();
    for toggles in toggle_grid(cfg.racc.toggles, &vary) {
        let mut run = cfg.clone();
        run.racc.toggles = toggles;
        let (racc, losses) = train_racc(&run, &data, &models)?;
        let acc = racc_accuracy(&racc, models.frozen(), &data.vocab, &val)?;
        info!("{toggles:?}: accuracy {acc:.4}");
        rows.push(AblationRow {
            toggles,
            vqa_accuracy: acc,
            final_loss: losses.last().copied().unwrap_or(f64::NAN),
        });
    }
    write_json(&paths.ablation_json(), &rows)?;
    fs::write(paths.ablation_txt(), ablation_table(&rows))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_sizes_and_order() {
        let g = toggle_grid(Toggles::default(), &[Toggle::Pipe, Toggle::Rgca]);
        assert_eq!(g.len(), 4);
        assert_eq!(g[0], Toggles::default());
        assert!(!g[3].pipe && !g[3].rgca && g[3].dcse && g[3].prdb);
        assert_eq!(toggle_grid(Toggles::default(), &Toggle::ALL).len(), 16);
        assert_eq!(*toggle_grid(Toggles::default(), &Toggle::ALL).last().unwrap(), Toggles::all_off());
    }

    #[test]
    fn missing_artifacts_name_the_command() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            out: dir.path().to_path_buf(),
            ..Default::default()
        };
        let err = cmd_train(&cfg).err().unwrap();
        assert!(err.to_string().contains("racc gen"), "{err}");
        let err = cmd_pretrain(&cfg).err().unwrap();
        assert!(err.to_string().contains("racc gen"), "{err}");
    }

    #[test]
    fn toggle_names_parse() {
        assert_eq!("DCSE".parse::<Toggle>().unwrap(), Toggle::Dcse);
        assert!("nope".parse::<Toggle>().is_err());
    }
}
