//! Turning a run configuration into data, a vocabulary and a model.
//!
//! A run configuration is a flat `key = value` file. Model keys:
//!
//! ```text
//! task            classify | nli | qa | document | seq2seq | recall
//! variant         nli: nse | mma | mma-attention; seq2seq: lstm-lstm | nse-lstm | nse-nse
//! top             document: nse | lstm
//! dim, hidden     encoder width, classifier hidden width
//! compose_hidden  comma list of composition MLP widths
//! read_layers, write_layers, read_alignment
//! embed_scale     uniform init range of trainable embeddings
//! embeddings      word-vector file; embed_dim gives its width (default dim)
//! fixed_embeddings
//! init_seed       parameter init seed (default: seed)
//! ```
//!
//! Data keys: `train`, `dev` (TSV paths, relative to the config file),
//! `lowercase`, `vocab_cap`, `max_len` (pad/crop classifier inputs), and
//! `joined_pairs` (classify a premise/hypothesis file as one sequence).
//! Training keys are those of [`TrainConfig`].

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use nse_core::cells::Init;
use nse_core::data::{
    joined_pair, load_embeddings, pad_or_crop, read_labeled, read_pairs, Labeled, Pair, SeqExample, Vocabulary, PAD,
};
use nse_core::heads::{
    mean_average_precision, mean_reciprocal_rank, ClassifierConfig, DocumentModel, Embedder, NliConfig, NliModel,
    NliVariant, QaConfig, QaModel, RecallModel, Seq2Seq, Seq2SeqConfig, Seq2SeqVariant, SentenceClassifier, NLI_LABELS,
};
use nse_core::nse::{NseConfig, NseEncoder};
use nse_core::tasks::{
    greedy_token_accuracy, ClassExample, ClassifyTask, DocExample, DocumentTask, NliTask, PairExample, QaExample, QaTask,
    RecallExample, RecallTask, SeqPairExample, Seq2SeqTask,
};
use nse_core::train::{KeyValues, Objective, TrainConfig};
use nse_core::{Graph, ParameterSet, Real};

/// Token that separates sentences of a document.
pub const SENTENCE_BREAK: &str = "|||";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Classify,
    Nli,
    Qa,
    Document,
    Seq2Seq,
    Recall,
}

impl FromStr for Kind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "classify" => Self::Classify,
            "nli" => Self::Nli,
            "qa" => Self::Qa,
            "document" => Self::Document,
            "seq2seq" => Self::Seq2Seq,
            "recall" => Self::Recall,
            _ => bail!("unknown task `{s}` (classify, nli, qa, document, seq2seq, recall)"),
        })
    }
}

impl Kind {
    fn uses_pairs(self, kv: &KeyValues) -> Result<bool> {
        Ok(match self {
            Self::Nli | Self::Qa => true,
            Self::Classify => kv.get_or("joined_pairs", false)?,
            _ => false,
        })
    }

    /// Whether the label column is a token sequence that belongs in the vocabulary.
    fn label_is_text(self) -> bool {
        matches!(self, Self::Seq2Seq | Self::Recall)
    }
}

/// Records as read from a TSV file.
pub enum Records {
    Labeled(Vec<Labeled>),
    Pairs(Vec<Pair>),
}

impl Records {
    pub fn len(&self) -> usize {
        match self {
            Self::Labeled(r) => r.len(),
            Self::Pairs(r) => r.len(),
        }
    }

    fn tokens(&self, with_labels: bool) -> Vec<&str> {
        let mut out = Vec::new();
        match self {
            Self::Labeled(rs) => {
                for r in rs {
                    out.extend(r.tokens.iter().map(String::as_str));
                    if with_labels {
                        out.extend(r.label.split_whitespace());
                    }
                }
            }
            Self::Pairs(rs) => {
                for r in rs {
                    out.extend(r.a.iter().chain(&r.b).map(String::as_str));
                }
            }
        }
        out
    }

    fn labels(&self) -> Vec<&str> {
        match self {
            Self::Labeled(rs) => rs.iter().map(|r| r.label.as_str()).collect(),
            Self::Pairs(rs) => rs.iter().map(|r| r.label.as_str()).collect(),
        }
    }
}

/// Everything needed to rebuild a model: the configuration, its vocabulary
/// and its output labels.
pub struct Setup {
    pub kv: KeyValues,
    pub kind: Kind,
    pub vocab: Vocabulary,
    pub labels: Vec<String>,
    base: PathBuf,
}

impl Setup {
    /// Fresh setup from a user configuration: reads the training file (when
    /// given) to build the vocabulary and label set.
    pub fn from_config(path: &Path, extra_tokens: &[String]) -> Result<Self> {
        let kv = KeyValues::load(path).with_context(|| format!("reading config {}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let kind: Kind = kv.require::<String>("task")?.parse()?;
        let mut setup = Self {
            kv,
            kind,
            vocab: Vocabulary::new(),
            labels: Vec::new(),
            base,
        };
        let train = match setup.path("train") {
            Some(p) => Some(setup.read(&p)?),
            None => None,
        };
        let cap = setup.kv.get("vocab_cap").map(str::parse::<usize>).transpose()?;
        let mut tokens: Vec<&str> = train.as_ref().map_or(Vec::new(), |r| r.tokens(kind.label_is_text()));
        tokens.extend(extra_tokens.iter().map(String::as_str));
        setup.vocab = Vocabulary::build(tokens, cap);
        setup.labels = match kind {
            Kind::Nli => NLI_LABELS.iter().map(|s| s.to_string()).collect(),
            Kind::Qa => vec!["0".into(), "1".into()],
            Kind::Classify | Kind::Document => match &train {
                Some(r) => r.labels().into_iter().collect::<BTreeSet<_>>().into_iter().map(String::from).collect(),
                None => setup.kv.list("labels")?,
            },
            Kind::Seq2Seq => Vec::new(),
            Kind::Recall => {
                let r = train.as_ref().ok_or_else(|| anyhow!("a recall run needs `train` data"))?;
                let answers: BTreeSet<usize> = r.labels().iter().map(|t| setup.vocab.id_or_unk(t)).collect();
                answers.into_iter().map(|id| setup.vocab.token(id).map(str::to_string)).collect::<Result<_, _>>()?
            }
        };
        Ok(setup)
    }

    /// Setup stored next to a checkpoint by `train`.
    pub fn from_run_dir(dir: &Path) -> Result<Self> {
        let kv = KeyValues::load(dir.join("config.txt")).with_context(|| format!("reading {}/config.txt", dir.display()))?;
        let kind: Kind = kv.require::<String>("task")?.parse()?;
        let text = std::fs::read_to_string(dir.join("vocab.txt")).with_context(|| format!("reading {}/vocab.txt", dir.display()))?;
        let vocab = Vocabulary::from_tokens(text.lines().filter(|l| !l.is_empty()));
        let labels = kv.list("labels")?;
        Ok(Self {
            kv,
            kind,
            vocab,
            labels,
            base: dir.to_path_buf(),
        })
    }

    /// Writes `config.txt` (with labels and absolute data paths) and `vocab.txt`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut kv = self.kv.clone();
        for key in ["train", "dev", "embeddings"] {
            if let Some(p) = self.path(key) {
                kv.set(key, std::path::absolute(&p)?.display());
            }
        }
        if !self.labels.is_empty() {
            kv.set("labels", self.labels.join(","));
        }
        let mut text = String::new();
        for key in kv.keys() {
            text.push_str(&format!("{key} = {}\n", kv.get(key).unwrap_or_default()));
        }
        std::fs::write(dir.join("config.txt"), text)?;
        let mut vocab = self.vocab.tokens()[4..].join("\n");
        vocab.push('\n');
        std::fs::write(dir.join("vocab.txt"), vocab)?;
        Ok(())
    }

    /// A data path from the configuration, resolved against its directory.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.kv.get(key).filter(|v| !v.is_empty()).map(|v| self.base.join(v))
    }

    pub fn read(&self, path: &Path) -> Result<Records> {
        let lower = self.kv.get_or("lowercase", false)?;
        let records = if self.kind.uses_pairs(&self.kv)? {
            Records::Pairs(read_pairs(path, lower)?.records)
        } else {
            Records::Labeled(read_labeled(path, lower)?.records)
        };
        if records.len() == 0 {
            bail!("{} has no usable records", path.display());
        }
        Ok(records)
    }

    fn max_len(&self) -> Result<Option<usize>> {
        Ok(self.kv.get("max_len").map(str::parse).transpose()?)
    }

    /// Token ids, padded or cropped when `max_len` is set.
    fn ids(&self, tokens: &[String], crop: Option<usize>) -> Vec<usize> {
        match crop {
            Some(n) => self.vocab.encode(&pad_or_crop(tokens, n, PAD.to_string())),
            None => self.vocab.encode(tokens),
        }
    }

    fn label_index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| anyhow!("label `{label}` is not one of {:?}", self.labels))
    }

    fn nse_config(&self, train: &TrainConfig) -> Result<NseConfig> {
        let kv = &self.kv;
        let dim: usize = kv.get_or("dim", 32)?;
        let mut c = NseConfig::new(dim);
        c.input_dim = if kv.get("embeddings").is_some() { kv.get_or("embed_dim", dim)? } else { dim };
        c.read_layers = kv.get_or("read_layers", 1)?;
        c.write_layers = kv.get_or("write_layers", 1)?;
        c.compose_hidden = kv.list("compose_hidden")?;
        c.read_alignment = kv.get_or("read_alignment", 0.0)?;
        c.input_dropout = train.input_dropout;
        c.rw_dropout = train.rw_dropout;
        Ok(c)
    }

    /// Token embeddings: pre-trained vectors when `embeddings` is set
    /// (unknown words get zero vectors), otherwise a random table.
    fn embedder<T: Real>(&self, init: &mut Init<'_, T>, name: &str, dim: usize) -> Result<Embedder> {
        match self.path("embeddings") {
            Some(p) => {
                let table = load_embeddings(&p, dim).with_context(|| format!("loading {}", p.display()))?;
                let trainable = !self.kv.get_or("fixed_embeddings", false)?;
                Ok(Embedder::from_table(init.params_mut(), name, table.matrix_for(&self.vocab), trainable)?)
            }
            None => Ok(Embedder::new(init, name, self.vocab.len(), dim, self.kv.get_or("embed_scale", 0.1)?)?),
        }
    }

    /// Builds the model into `params` with the configured init seed.
    pub fn build<T: Real>(&self, train: &TrainConfig, params: &mut ParameterSet<T>) -> Result<Task> {
        let kv = &self.kv;
        let enc = self.nse_config(train)?;
        let hidden: usize = kv.get_or("hidden", 2 * enc.dim)?;
        let mut init = Init::new(params, kv.get_or("init_seed", train.seed)?);
        let embed = self.embedder(&mut init, "emb", enc.input_dim)?;
        let variant = kv.get("variant");
        Ok(match self.kind {
            Kind::Classify => {
                let mut c = ClassifierConfig::new(enc.dim, hidden, self.labels.len());
                c.encoder = enc;
                c.out_dropout = train.out_dropout;
                Task::Classify(ClassifyTask {
                    embed,
                    model: SentenceClassifier::new(&mut init, "cls", &c)?,
                })
            }
            Kind::Nli => {
                let mut c = NliConfig::new(variant.unwrap_or("mma").parse::<NliVariant>()?, enc.dim, hidden);
                c.encoder = enc;
                c.out_dropout = train.out_dropout;
                Task::Nli(NliTask {
                    embed,
                    model: NliModel::new(&mut init, "nli", &c)?,
                })
            }
            Kind::Qa => {
                let mut c = QaConfig::new(enc.dim, hidden);
                c.encoder = enc;
                c.out_dropout = train.out_dropout;
                Task::Qa(QaTask {
                    embed,
                    model: QaModel::new(&mut init, "qa", &c)?,
                })
            }
            Kind::Document => {
                let top_nse = match kv.get("top").unwrap_or("nse") {
                    "nse" => true,
                    "lstm" => false,
                    other => bail!("unknown document top model `{other}` (nse, lstm)"),
                };
                Task::Document(DocumentTask {
                    embed,
                    model: DocumentModel::new(&mut init, "doc", &enc, top_nse, hidden, self.labels.len())?,
                })
            }
            Kind::Seq2Seq => {
                let v: Seq2SeqVariant = variant.unwrap_or("nse-nse").parse()?;
                let mut c = Seq2SeqConfig::new(v, enc.dim, self.vocab.len(), Vocabulary::BOS_ID, Vocabulary::EOS_ID);
                c.encoder = enc;
                c.out_dropout = train.out_dropout;
                Task::Seq2Seq(Seq2SeqTask {
                    source: embed,
                    model: Seq2Seq::new(&mut init, "s2s", &c)?,
                })
            }
            Kind::Recall => {
                let answers = self.vocab.encode(&self.labels);
                Task::Recall(RecallTask {
                    embed,
                    model: RecallModel::new(&mut init, "rec", enc)?,
                    answers,
                })
            }
        })
    }
}

pub enum Task {
    Classify(ClassifyTask),
    Nli(NliTask),
    Qa(QaTask),
    Document(DocumentTask),
    Seq2Seq(Seq2SeqTask),
    Recall(RecallTask),
}

/// Runs `$body` with `$t` bound to the concrete task.
macro_rules! with_task {
    ($task:expr, |$t:ident| $body:expr) => {
        match $task {
            $crate::setup::Task::Classify($t) => $body,
            $crate::setup::Task::Nli($t) => $body,
            $crate::setup::Task::Qa($t) => $body,
            $crate::setup::Task::Document($t) => $body,
            $crate::setup::Task::Seq2Seq($t) => $body,
            $crate::setup::Task::Recall($t) => $body,
        }
    };
}
pub(crate) use with_task;

impl Task {
    /// The embedder and memory encoder whose reads a trace records.
    pub fn traced_encoder(&self) -> Result<(&Embedder, &NseEncoder)> {
        Ok(match self {
            Task::Classify(t) => (&t.embed, &t.model.encoder),
            Task::Nli(t) => (&t.embed, &t.model.premise),
            Task::Qa(t) => (&t.embed, &t.model.answer),
            Task::Document(t) => (&t.embed, &t.model.sentence),
            Task::Seq2Seq(t) => (
                &t.source,
                t.model
                    .nse_encoder()
                    .ok_or_else(|| anyhow!("the lstm-lstm model has no memory to trace"))?,
            ),
            Task::Recall(t) => (&t.embed, &t.model.encoder),
        })
    }
}

/// Per-task conversion of records to examples, plus task-specific metrics.
pub trait TaskData<T: Real>: Objective<T> {
    fn examples(&self, setup: &Setup, records: &Records) -> Result<Vec<Self::Example>>;

    /// The token ids the traced encoder reads for an example.
    fn traced_tokens<'a>(&self, example: &'a Self::Example) -> &'a [usize];

    fn extra_metrics(&self, _params: &ParameterSet<T>, _data: &[Self::Example]) -> Result<Vec<(&'static str, f64)>> {
        Ok(Vec::new())
    }
}

fn labeled(records: &Records) -> Result<&[Labeled]> {
    match records {
        Records::Labeled(r) => Ok(r),
        Records::Pairs(_) => bail!("expected `label<TAB>text` records"),
    }
}

fn pairs(records: &Records) -> Result<&[Pair]> {
    match records {
        Records::Pairs(r) => Ok(r),
        Records::Labeled(_) => bail!("expected `label<TAB>text<TAB>text` records"),
    }
}

impl<T: Real> TaskData<T> for ClassifyTask {
    fn examples(&self, setup: &Setup, records: &Records) -> Result<Vec<ClassExample>> {
        let crop = setup.max_len()?;
        let rows: Vec<(Vec<String>, &str)> = match records {
            Records::Labeled(r) => r.iter().map(|l| (l.tokens.clone(), l.label.as_str())).collect(),
            Records::Pairs(r) => r.iter().map(|p| (joined_pair(p), p.label.as_str())).collect(),
        };
        rows.into_iter()
            .map(|(t, l)| Ok((setup.ids(&t, crop), setup.label_index(l)?)))
            .collect()
    }

    fn traced_tokens<'a>(&self, ex: &'a ClassExample) -> &'a [usize] {
        &ex.0
    }
}

impl<T: Real> TaskData<T> for NliTask {
    fn examples(&self, setup: &Setup, records: &Records) -> Result<Vec<PairExample>> {
        let crop = setup.max_len()?;
        pairs(records)?
            .iter()
            .map(|p| Ok((setup.ids(&p.a, crop), setup.ids(&p.b, crop), setup.label_index(&p.label)?)))
            .collect()
    }

    fn traced_tokens<'a>(&self, ex: &'a PairExample) -> &'a [usize] {
        &ex.0
    }
}

fn relevance(label: &str) -> Result<bool> {
    match label {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        _ => bail!("answer relevance must be 0 or 1, got `{label}`"),
    }
}

impl<T: Real> TaskData<T> for QaTask {
    /// Records are `relevance<TAB>question<TAB>answer`.
    fn examples(&self, setup: &Setup, records: &Records) -> Result<Vec<QaExample>> {
        let crop = setup.max_len()?;
        pairs(records)?
            .iter()
            .map(|p| Ok((setup.ids(&p.a, crop), setup.ids(&p.b, crop), relevance(&p.label)?)))
            .collect()
    }

    fn traced_tokens<'a>(&self, ex: &'a QaExample) -> &'a [usize] {
        &ex.1
    }

    /// MAP and MRR with candidates grouped by question.
    fn extra_metrics(&self, params: &ParameterSet<T>, data: &[QaExample]) -> Result<Vec<(&'static str, f64)>> {
        let mut index: HashMap<&[usize], usize> = HashMap::new();
        let mut groups: Vec<(Vec<f64>, Vec<bool>)> = Vec::new();
        for (q, a, rel) in data {
            let mut g = Graph::with_params(params);
            let qs = self.embed.lookup(&mut g, q)?;
            let as_ = self.embed.lookup(&mut g, a)?;
            let p = self.model.score(&mut g, &qs, &as_)?;
            let slot = *index.entry(q.as_slice()).or_insert_with(|| {
                groups.push((Vec::new(), Vec::new()));
                groups.len() - 1
            });
            groups[slot].0.push(p);
            groups[slot].1.push(*rel);
        }
        Ok(vec![
            ("map", mean_average_precision(&groups)?),
            ("mrr", mean_reciprocal_rank(&groups)?),
        ])
    }
}

impl<T: Real> TaskData<T> for DocumentTask {
    /// Sentences are separated by the `|||` token.
    fn examples(&self, setup: &Setup, records: &Records) -> Result<Vec<DocExample>> {
        labeled(records)?
            .iter()
            .map(|l| {
                let sentences: Vec<Vec<usize>> = l
                    .tokens
                    .split(|t| t == SENTENCE_BREAK)
                    .filter(|s| !s.is_empty())
                    .map(|s| setup.vocab.encode(s))
                    .collect();
                Ok((sentences, setup.label_index(&l.label)?))
            })
            .collect()
    }

    fn traced_tokens<'a>(&self, ex: &'a DocExample) -> &'a [usize] {
        &ex.0[0]
    }
}

impl<T: Real> TaskData<T> for Seq2SeqTask {
    /// Records are `target<TAB>source`.
    fn examples(&self, setup: &Setup, records: &Records) -> Result<Vec<SeqPairExample>> {
        Ok(labeled(records)?
            .iter()
            .map(|l| {
                let ex = SeqExample::from_labeled(l);
                (setup.vocab.encode(&ex.source), setup.vocab.encode(&ex.target))
            })
            .collect())
    }

    fn traced_tokens<'a>(&self, ex: &'a SeqPairExample) -> &'a [usize] {
        &ex.0
    }

    fn extra_metrics(&self, params: &ParameterSet<T>, data: &[SeqPairExample]) -> Result<Vec<(&'static str, f64)>> {
        Ok(vec![("greedy_token_acc", greedy_token_accuracy(self, params, data)?)])
    }
}

impl<T: Real> TaskData<T> for RecallTask {
    /// Records are `answer<TAB>sequence`.
    fn examples(&self, setup: &Setup, records: &Records) -> Result<Vec<RecallExample>> {
        let seqs: Vec<SeqExample> = labeled(records)?.iter().map(SeqExample::from_labeled).collect();
        Ok(RecallTask::examples(self, &setup.vocab, &seqs)?)
    }

    fn traced_tokens<'a>(&self, ex: &'a RecallExample) -> &'a [usize] {
        &ex.0
    }
}
