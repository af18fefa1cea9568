//! Dataset directories.
//!
//! ```text
//! dataset.json       {"version", "word_dim", "modalities": [{"name", "dim"}]}
//! vocab.json         {token: row}
//! word_vectors.bin   MEEB [V × word_dim]
//! samples.jsonl      {"id", "tokens": [row…], "streams": {name: {"offset", "frame_count"}}, "mc"?}
//! <modality>.bin     MEEB [frames × dim], rows addressed by the sample records
//! ```
//!
//! Everything is validated when the directory is opened; samples are then
//! assembled on demand.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use mee_core::data::{Caption, Pair, SyntheticDataset, VideoSample};
use mee_core::eval::{MultipleChoiceItem, MULTIPLE_CHOICE_CANDIDATES};
use mee_core::model::ModelConfig;
use mee_core::{init, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format;

pub const VERSION: u32 = 1;
pub const DEFAULT_CAPTION_CAP: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityMeta {
    pub name: String,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub version: u32,
    pub word_dim: usize,
    pub modalities: Vec<ModalityMeta>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamRef {
    pub offset: u64,
    pub frame_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McRecord {
    pub candidates: Vec<Vec<u32>>,
    pub answer: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub tokens: Vec<u32>,
    #[serde(default)]
    pub streams: BTreeMap<String, StreamRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McRecord>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    dir: PathBuf,
    meta: DatasetMeta,
    vocab: BTreeMap<String, u32>,
    word_vectors: Tensor<f32>,
    records: Vec<SampleRecord>,
    streams: Vec<Tensor<f32>>,
    caption_cap: usize,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn stream_file(dir: &Path, modality: &str) -> PathBuf {
    dir.join(format!("{modality}.bin"))
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let invalid = |what: String| Error::InvalidDataset {
            path: dir.to_path_buf(),
            what,
        };
        let meta: DatasetMeta = read_json(&dir.join("dataset.json"))?;
        if meta.version != VERSION {
            return Err(Error::Version {
                path: dir.join("dataset.json"),
                expected: VERSION,
                found: meta.version,
            });
        }
        if meta.word_dim == 0 {
            return Err(invalid("word_dim must be >= 1".into()));
        }
        for (i, m) in meta.modalities.iter().enumerate() {
            if m.dim == 0 || m.name.is_empty() || m.name.contains(['/', '\\']) {
                return Err(invalid(format!("bad modality entry {:?}", m.name)));
            }
            if meta.modalities[..i].iter().any(|o| o.name == m.name) {
                return Err(invalid(format!("modality {:?} listed twice", m.name)));
            }
        }

        let vocab: BTreeMap<String, u32> = read_json(&dir.join("vocab.json"))?;
        let wv_path = dir.join("word_vectors.bin");
        let word_vectors = format::read_matrix(&wv_path)?;
        if word_vectors.cols() != meta.word_dim {
            return Err(invalid(format!(
                "word_vectors.bin has {} columns, word_dim is {}",
                word_vectors.cols(),
                meta.word_dim
            )));
        }
        if let Some((tok, row)) = vocab.iter().find(|(_, &r)| r as usize >= word_vectors.rows()) {
            return Err(invalid(format!(
                "vocab entry {tok:?} points at row {row} of {}",
                word_vectors.rows()
            )));
        }

        let mut streams = Vec::with_capacity(meta.modalities.len());
        for m in &meta.modalities {
            let path = stream_file(dir, &m.name);
            let s = format::read_matrix(&path)?;
            if s.cols() != m.dim {
                return Err(invalid(format!("{} has {} columns, expected {}", path.display(), s.cols(), m.dim)));
            }
            streams.push(s);
        }

        let samples_path = dir.join("samples.jsonl");
        let file = File::open(&samples_path).map_err(|e| Error::io(&samples_path, e))?;
        let mut records = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&samples_path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: SampleRecord = serde_json::from_str(&line).map_err(|source| Error::JsonLine {
                path: samples_path.clone(),
                line: n + 1,
                source,
            })?;
            records.push(rec);
        }

        let ds = Self {
            dir: dir.to_path_buf(),
            meta,
            vocab,
            word_vectors,
            records,
            streams,
            caption_cap: DEFAULT_CAPTION_CAP,
        };
        for rec in &ds.records {
            ds.validate_record(rec)?;
        }
        Ok(ds)
    }

    fn check_tokens(&self, id: &str, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::InvalidSample {
                id: id.into(),
                what: "empty caption".into(),
            });
        }
        let vocab = self.word_vectors.rows();
        match tokens.iter().find(|&&t| t as usize >= vocab) {
            Some(&token) => Err(Error::UnknownToken {
                id: id.into(),
                token,
                vocab,
            }),
            None => Ok(()),
        }
    }

    fn validate_record(&self, rec: &SampleRecord) -> Result<()> {
        let invalid = |what: String| Error::InvalidSample {
            id: rec.id.clone(),
            what,
        };
        self.check_tokens(&rec.id, &rec.tokens)?;
        if rec.streams.is_empty() {
            return Err(invalid("no modality available".into()));
        }
        for (name, r) in &rec.streams {
            let k = self
                .modality_index(name)
                .ok_or_else(|| invalid(format!("unknown modality {name:?}")))?;
            if r.frame_count == 0 {
                return Err(invalid(format!("empty {name} stream")));
            }
            let rows = self.streams[k].rows();
            let end = r.offset.saturating_add(r.frame_count);
            if end > rows as u64 {
                return Err(Error::OffsetOutOfRange {
                    id: rec.id.clone(),
                    modality: name.clone(),
                    offset: r.offset,
                    end,
                    rows,
                });
            }
        }
        if let Some(mc) = &rec.mc {
            if mc.candidates.len() != MULTIPLE_CHOICE_CANDIDATES || mc.answer >= mc.candidates.len() {
                return Err(invalid(format!(
                    "multiple choice needs {MULTIPLE_CHOICE_CANDIDATES} candidates and an answer among them"
                )));
            }
            for c in &mc.candidates {
                self.check_tokens(&rec.id, c)?;
            }
        }
        Ok(())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn vocab(&self) -> &BTreeMap<String, u32> {
        &self.vocab
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Captions longer than `cap` tokens are truncated at the tail.
    pub fn set_caption_cap(&mut self, cap: usize) -> Result<()> {
        if cap == 0 {
            return Err(Error::Config("caption cap must be >= 1".into()));
        }
        self.caption_cap = cap;
        Ok(())
    }

    pub fn modality_index(&self, name: &str) -> Option<usize> {
        self.meta.modalities.iter().position(|m| m.name == name)
    }

    pub fn caption(&self, tokens: &[u32]) -> Caption<f32> {
        let kept = &tokens[..tokens.len().min(self.caption_cap)];
        let d = self.meta.word_dim;
        let mut data = Vec::with_capacity(kept.len() * d);
        for &t in kept {
            data.extend_from_slice(self.word_vectors.row(t as usize));
        }
        Caption(Tensor::from_vec(&[kept.len(), d], data).expect("validated at open"))
    }

    /// Dataset modalities the model does not use.
    pub fn unused_modalities(&self, config: &ModelConfig) -> Vec<String> {
        self.meta
            .modalities
            .iter()
            .filter(|m| config.modality_index(&m.name).is_none())
            .map(|m| m.name.clone())
            .collect()
    }

    fn check_layout(&self, config: &ModelConfig) -> Result<()> {
        if config.word_dim != self.meta.word_dim {
            return Err(Error::Config(format!(
                "model word_dim {} but dataset word vectors are {}-d",
                config.word_dim, self.meta.word_dim
            )));
        }
        for m in &config.modalities {
            let k = self
                .modality_index(&m.name)
                .ok_or_else(|| Error::MissingModality(m.name.clone()))?;
            if self.meta.modalities[k].dim != m.input_dim {
                return Err(Error::Config(format!(
                    "modality {} is {}-d in the dataset, model expects {}",
                    m.name, self.meta.modalities[k].dim, m.input_dim
                )));
            }
        }
        Ok(())
    }

    /// Video of record `i` with streams ordered as in `config`.
    pub fn video(&self, i: usize, config: &ModelConfig) -> Result<VideoSample<f32>> {
        let rec = &self.records[i];
        let mut streams = Vec::with_capacity(config.modalities.len());
        for m in &config.modalities {
            let k = self
                .modality_index(&m.name)
                .ok_or_else(|| Error::MissingModality(m.name.clone()))?;
            streams.push(rec.streams.get(&m.name).map(|r| {
                let (start, n) = (r.offset as usize, r.frame_count as usize);
                let d = self.streams[k].cols();
                let data = self.streams[k].data()[start * d..(start + n) * d].to_vec();
                Tensor::from_vec(&[n, d], data).expect("validated at open")
            }));
        }
        Ok(VideoSample::new(rec.id.clone(), streams))
    }

    /// Every record as a caption–video pair laid out for `config`.
    pub fn pairs_for(&self, config: &ModelConfig) -> Result<Vec<Pair<f32>>> {
        self.check_layout(config)?;
        let dims = config.stream_dims();
        (0..self.len())
            .map(|i| {
                let video = self.video(i, config)?;
                video.validate(&dims)?;
                Ok(Pair {
                    caption: self.caption(&self.records[i].tokens),
                    video,
                })
            })
            .collect()
    }

    pub fn multiple_choice_for(&self, config: &ModelConfig) -> Result<Vec<MultipleChoiceItem<f32>>> {
        self.check_layout(config)?;
        let dims = config.stream_dims();
        let mut items = Vec::new();
        for (i, rec) in self.records.iter().enumerate() {
            if let Some(mc) = &rec.mc {
                let video = self.video(i, config)?;
                video.validate(&dims)?;
                items.push(MultipleChoiceItem {
                    video,
                    candidates: mc.candidates.iter().map(|c| self.caption(c)).collect(),
                    answer: mc.answer,
                });
            }
        }
        if items.is_empty() {
            return Err(Error::NoMultipleChoice);
        }
        Ok(items)
    }
}

/// Everything needed to write a dataset directory.
#[derive(Debug, Clone)]
pub struct DatasetContents {
    pub meta: DatasetMeta,
    /// Token strings in row order of `word_vectors`.
    pub tokens: Vec<String>,
    pub word_vectors: Tensor<f32>,
    pub records: Vec<SampleRecord>,
    /// One `[frames × dim]` matrix per modality in `meta` order.
    pub streams: Vec<Tensor<f32>>,
}

pub fn write_dataset(dir: &Path, contents: &DatasetContents) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join("dataset.json"), &contents.meta)?;
    let vocab: BTreeMap<&str, u32> = contents
        .tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i as u32))
        .collect();
    write_json(&dir.join("vocab.json"), &vocab)?;
    format::write_matrix(&dir.join("word_vectors.bin"), &contents.word_vectors)?;
    for (m, s) in contents.meta.modalities.iter().zip(&contents.streams) {
        format::write_matrix(&stream_file(dir, &m.name), s)?;
    }
    let path = dir.join("samples.jsonl");
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    for rec in &contents.records {
        let line = serde_json::to_string(rec).expect("record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Lays out generated pairs as a dataset. Every word occurrence gets its own
/// vocabulary row. With `mc_seed` set, each record also gets a 5-way
/// multiple-choice item whose distractors are captions of other records.
pub fn synthetic_contents(ds: &SyntheticDataset, mc_seed: Option<u64>) -> DatasetContents {
    let meta = DatasetMeta {
        version: VERSION,
        word_dim: ds.word_dim,
        modalities: ds
            .modalities
            .iter()
            .map(|(name, dim)| ModalityMeta {
                name: name.clone(),
                dim: *dim,
            })
            .collect(),
    };
    let mut tokens = Vec::new();
    let mut wv = Vec::new();
    let mut stream_data: Vec<Vec<f32>> = vec![Vec::new(); ds.modalities.len()];
    let mut stream_rows = vec![0u64; ds.modalities.len()];
    let mut records = Vec::with_capacity(ds.pairs.len());
    for pair in &ds.pairs {
        let words = pair.caption.words();
        let mut ids = Vec::with_capacity(words.rows());
        for w in 0..words.rows() {
            ids.push(tokens.len() as u32);
            tokens.push(format!("{}#{w}", pair.video.id));
            wv.extend_from_slice(words.row(w));
        }
        let mut streams = BTreeMap::new();
        for (k, s) in pair.video.streams.iter().enumerate() {
            if let Some(s) = s {
                streams.insert(
                    ds.modalities[k].0.clone(),
                    StreamRef {
                        offset: stream_rows[k],
                        frame_count: s.rows() as u64,
                    },
                );
                stream_data[k].extend_from_slice(s.data());
                stream_rows[k] += s.rows() as u64;
            }
        }
        records.push(SampleRecord {
            id: pair.video.id.clone(),
            tokens: ids,
            streams,
            mc: None,
        });
    }
    if let Some(seed) = mc_seed {
        add_multiple_choice(&mut records, seed);
    }
    let streams = stream_data
        .into_iter()
        .zip(&ds.modalities)
        .zip(&stream_rows)
        .map(|((data, (_, dim)), &rows)| Tensor::from_vec(&[rows as usize, *dim], data).expect("finite"))
        .collect();
    DatasetContents {
        meta,
        word_vectors: Tensor::from_vec(&[tokens.len(), ds.word_dim], wv).expect("finite"),
        tokens,
        records,
        streams,
    }
}

fn add_multiple_choice(records: &mut [SampleRecord], seed: u64) {
    let n = records.len();
    if n < MULTIPLE_CHOICE_CANDIDATES {
        return;
    }
    let mut rng = init::rng(seed);
    let captions: Vec<Vec<u32>> = records.iter().map(|r| r.tokens.clone()).collect();
    for (i, rec) in records.iter_mut().enumerate() {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.shuffle(&mut rng);
        let mut candidates: Vec<Vec<u32>> = others[..MULTIPLE_CHOICE_CANDIDATES - 1]
            .iter()
            .map(|&j| captions[j].clone())
            .collect();
        let answer = rng.random_range(0..MULTIPLE_CHOICE_CANDIDATES);
        candidates.insert(answer, captions[i].clone());
        rec.mc = Some(McRecord { candidates, answer });
    }
}
