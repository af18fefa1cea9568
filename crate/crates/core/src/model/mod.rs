//! The mixture-of-embedding-experts similarity model.
//!
//! A caption is aggregated by NetVLAD into `h(X)`. For every modality `i` a
//! text-side gated embedding unit `f_i` maps `h(X)` into that expert's space,
//! while the video side aggregates stream `i` over time (max pooling or
//! NetVLAD) and embeds it with `g_i`. The gate head predicts softmax weights
//! `w_i(X)` from `h(X)`; the final score averages the per-expert cosine
//! similarities with these weights, renormalized over the modalities the video
//! actually has.

pub mod mixture;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{AvailabilityMask, Caption, VideoSample};
use crate::error::{Error, Result};
use crate::init;
use crate::layers::{
    maxpool_forward, GateHead, GatedEmbeddingUnit, GeuCache, NetVladAggregator, NetVladCache,
};
use crate::param::{Parameter, ParameterRegistry};
use crate::real::Real;
use crate::tensor::{dot, softmax_backward, Tensor};

pub use mixture::{mixture_backward, mixture_forward, renormalize};

/// Temporal aggregation applied to one modality's descriptor stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Aggregation {
    MaxPool,
    NetVlad { clusters: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModalityConfig {
    pub name: String,
    pub input_dim: usize,
    pub aggregation: Aggregation,
    pub embed_dim: usize,
}

impl ModalityConfig {
    pub fn new(name: impl Into<String>, input_dim: usize, aggregation: Aggregation, embed_dim: usize) -> Self {
        Self {
            name: name.into(),
            input_dim,
            aggregation,
            embed_dim,
        }
    }

    /// Default descriptor setup for the well-known stream names: 2048-d
    /// appearance, 1024-d motion and 128-d face streams are max-pooled, the
    /// 128-d audio stream goes through a 16-cluster NetVLAD.
    pub fn preset(name: &str, embed_dim: usize) -> Option<Self> {
        let (dim, agg) = match name {
            "appearance" => (2048, Aggregation::MaxPool),
            "motion" => (1024, Aggregation::MaxPool),
            "face" => (128, Aggregation::MaxPool),
            "audio" => (128, Aggregation::NetVlad { clusters: 16 }),
            _ => return None,
        };
        Some(Self::new(name, dim, agg, embed_dim))
    }

    /// Dimension of the aggregated stream fed to the video-side unit.
    pub fn aggregated_dim(&self) -> usize {
        match self.aggregation {
            Aggregation::MaxPool => self.input_dim,
            Aggregation::NetVlad { clusters } => clusters * self.input_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    pub word_dim: usize,
    pub text_clusters: usize,
    pub modalities: Vec<ModalityConfig>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let embed = 512;
        Self {
            word_dim: 300,
            text_clusters: 32,
            modalities: ["appearance", "motion", "audio", "face"]
                .iter()
                .filter_map(|n| ModalityConfig::preset(n, embed))
                .collect(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.word_dim == 0 || self.text_clusters == 0 {
            return Err(Error::InvalidConfig("word_dim and text_clusters must be >= 1"));
        }
        if self.modalities.is_empty() {
            return Err(Error::InvalidConfig("at least one modality is required"));
        }
        for (i, m) in self.modalities.iter().enumerate() {
            if m.input_dim == 0 || m.embed_dim == 0 {
                return Err(Error::InvalidConfig("modality dimensions must be >= 1"));
            }
            if matches!(m.aggregation, Aggregation::NetVlad { clusters: 0 }) {
                return Err(Error::InvalidConfig("NetVLAD needs at least one cluster"));
            }
            if self.modalities[..i].iter().any(|o| o.name == m.name) {
                return Err(Error::InvalidConfig("modality names must be unique"));
            }
        }
        Ok(())
    }

    pub fn text_dim(&self) -> usize {
        self.text_clusters * self.word_dim
    }

    pub fn experts(&self) -> usize {
        self.modalities.len()
    }

    pub fn modality_index(&self, name: &str) -> Option<usize> {
        self.modalities.iter().position(|m| m.name == name)
    }

    pub fn stream_dims(&self) -> Vec<(&str, usize)> {
        self.modalities
            .iter()
            .map(|m| (m.name.as_str(), m.input_dim))
            .collect()
    }
}

/// One modality's text/video embedding pair plus its optional stream aggregator.
#[derive(Debug, Clone, PartialEq)]
pub struct Expert<T> {
    pub aggregator: Option<NetVladAggregator<T>>,
    pub text_geu: GatedEmbeddingUnit<T>,
    pub video_geu: GatedEmbeddingUnit<T>,
}

/// All learnable state of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct MeeParams<T> {
    config: ModelConfig,
    pub text_vlad: NetVladAggregator<T>,
    pub gate: GateHead<T>,
    pub experts: Vec<Expert<T>>,
}

/// Text-side outputs for one caption.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding<T> {
    pub hx: Tensor<T>,
    /// `f_i(h(X))`, one unit vector per expert.
    pub experts: Vec<Tensor<T>>,
    /// Softmax expert weights over all configured experts.
    pub weights: Tensor<T>,
}

#[derive(Debug, Clone)]
enum AggCache<T> {
    MaxPool,
    NetVlad(NetVladCache<T>),
}

#[derive(Debug, Clone)]
struct VideoExpertCache<T> {
    /// Batch columns (videos) for which this modality is present.
    columns: Vec<usize>,
    aggs: Vec<AggCache<T>>,
    geu: Option<GeuCache<T>>,
    /// `[C × d2]`, zero rows where the modality is missing.
    embeddings: Tensor<T>,
}

/// Forward pass over `Q` captions × `C` videos with everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct BatchForward<T> {
    pub scores: Tensor<T>,
    text_vlad: Vec<NetVladCache<T>>,
    hx: Tensor<T>,
    weights: Tensor<T>,
    text_geu: Vec<GeuCache<T>>,
    video: Vec<VideoExpertCache<T>>,
    expert_scores: Vec<Tensor<T>>,
    masks: Vec<AvailabilityMask>,
}

impl<T> BatchForward<T> {
    pub fn weights(&self) -> &Tensor<T> {
        &self.weights
    }

    pub fn expert_scores(&self) -> &[Tensor<T>] {
        &self.expert_scores
    }

    pub fn masks(&self) -> &[AvailabilityMask] {
        &self.masks
    }
}

impl<T: Real> MeeParams<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = init::rng(seed);
        let text_vlad = NetVladAggregator::new("text.netvlad", config.text_clusters, config.word_dim, &mut rng);
        let gate = GateHead::new("gate.a", config.experts(), config.text_dim(), &mut rng);
        let experts = config
            .modalities
            .iter()
            .map(|m| {
                let aggregator = match m.aggregation {
                    Aggregation::MaxPool => None,
                    Aggregation::NetVlad { clusters } => Some(NetVladAggregator::new(
                        &format!("{}.netvlad", m.name),
                        clusters,
                        m.input_dim,
                        &mut rng,
                    )),
                };
                let text_geu = GatedEmbeddingUnit::new(
                    &format!("expert.{}.text_geu", m.name),
                    config.text_dim(),
                    m.embed_dim,
                    &mut rng,
                );
                let video_geu = GatedEmbeddingUnit::new(
                    &format!("expert.{}.video_geu", m.name),
                    m.aggregated_dim(),
                    m.embed_dim,
                    &mut rng,
                );
                Expert {
                    aggregator,
                    text_geu,
                    video_geu,
                }
            })
            .collect();
        let params = Self {
            config,
            text_vlad,
            gate,
            experts,
        };
        params.check_unique_names()?;
        Ok(params)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Same architecture in another precision; optimizer state is reset.
    pub fn cast<U: Real>(&self) -> MeeParams<U> {
        let mut out = MeeParams::<U>::new(self.config.clone(), 0).expect("config already validated");
        for (dst, src) in out.parameters_mut().into_iter().zip(self.parameters()) {
            dst.value = src.value.cast();
        }
        out
    }

    /// A model made of only the experts in `keep` (in that order), with the
    /// corresponding gate rows and unchanged parameter values.
    pub fn restrict(&self, keep: &[usize]) -> Result<Self> {
        if keep.is_empty() || keep.iter().any(|&k| k >= self.experts.len()) {
            return Err(Error::InvalidConfig("restrict: bad expert subset"));
        }
        let config = ModelConfig {
            word_dim: self.config.word_dim,
            text_clusters: self.config.text_clusters,
            modalities: keep.iter().map(|&k| self.config.modalities[k].clone()).collect(),
        };
        config.validate()?;
        let rows: Vec<&[T]> = keep.iter().map(|&k| self.gate.a.value.row(k)).collect();
        let gate = GateHead {
            a: Parameter::new(self.gate.a.name.clone(), Tensor::from_rows(&rows)?),
        };
        Ok(Self {
            config,
            text_vlad: self.text_vlad.clone(),
            gate,
            experts: keep.iter().map(|&k| self.experts[k].clone()).collect(),
        })
    }

    fn check_caption(&self, caption: &Caption<T>) -> Result<()> {
        let w = caption.words();
        if w.rank() != 2 || w.cols() != self.config.word_dim {
            return Err(Error::CaptionDim {
                expected: self.config.word_dim,
                got: w.cols(),
            });
        }
        if w.rows() == 0 {
            return Err(Error::EmptySequence("caption"));
        }
        Ok(())
    }

    pub fn embed_text(&self, caption: &Caption<T>) -> Result<TextEmbedding<T>> {
        self.check_caption(caption)?;
        let hx = self.text_vlad.forward(caption.words())?.output().clone();
        let row = hx.clone().reshape(&[1, hx.len()])?;
        let weights = self.gate.logits(&row)?.softmax(1)?;
        let experts = self
            .experts
            .iter()
            .map(|e| {
                let out = e.text_geu.forward(&row)?.output().clone();
                let d = out.cols();
                Ok(out.reshape(&[d])?)
            })
            .collect::<Result<Vec<_>>>()?;
        let n = weights.len();
        Ok(TextEmbedding {
            hx,
            experts,
            weights: weights.reshape(&[n])?,
        })
    }

    fn aggregate(&self, k: usize, stream: &Tensor<T>) -> Result<(Tensor<T>, AggCache<T>)> {
        match &self.experts[k].aggregator {
            None => Ok((maxpool_forward(stream)?.output, AggCache::MaxPool)),
            Some(agg) => {
                let cache = agg.forward(stream)?;
                Ok((cache.output().clone(), AggCache::NetVlad(cache)))
            }
        }
    }

    /// `g_i(h_i(I_i))` for every available modality; `None` for missing ones.
    pub fn embed_video(&self, video: &VideoSample<T>) -> Result<Vec<Option<Tensor<T>>>> {
        video.validate(&self.config.stream_dims())?;
        (0..video.streams.len())
            .map(|k| {
                video
                    .stream(k)
                    .map(|s| {
                        let (agg, _) = self.aggregate(k, s)?;
                        let row = agg.reshape(&[1, self.config.modalities[k].aggregated_dim()])?;
                        let out = self.experts[k].video_geu.forward(&row)?.output().clone();
                        let d = out.cols();
                        Ok(out.reshape(&[d])?)
                    })
                    .transpose()
            })
            .collect()
    }

    pub fn similarity(&self, caption: &Caption<T>, video: &VideoSample<T>) -> Result<T> {
        let text = self.embed_text(caption)?;
        let vid = self.embed_video(video)?;
        let w = renormalize(text.weights.data(), &video.mask());
        Ok(vid
            .iter()
            .enumerate()
            .filter_map(|(k, g)| g.as_ref().map(|g| w[k] * dot(text.experts[k].data(), g.data())))
            .sum())
    }

    /// `f(X) = [w_i f_i]` and `g(Y) = [g_i]` with zero blocks for missing modalities.
    ///
    /// With every modality present `⟨f, g⟩` equals [`similarity`](Self::similarity).
    /// With missing modalities it is the partial sum `Σ_{i∈D} w_i s_i`, without
    /// the renormalization by `Σ_{i∈D} w_i`.
    pub fn export_joint_embeddings(&self, caption: &Caption<T>, video: &VideoSample<T>) -> Result<(Vec<T>, Vec<T>)> {
        Ok((self.export_text(caption)?, self.export_video(video)?))
    }

    pub fn export_text(&self, caption: &Caption<T>) -> Result<Vec<T>> {
        let text = self.embed_text(caption)?;
        let mut f = Vec::new();
        for (k, e) in text.experts.iter().enumerate() {
            let w = text.weights.data()[k];
            f.extend(e.data().iter().map(|v| *v * w));
        }
        Ok(f)
    }

    pub fn export_video(&self, video: &VideoSample<T>) -> Result<Vec<T>> {
        let vid = self.embed_video(video)?;
        let mut g = Vec::new();
        for (k, e) in vid.iter().enumerate() {
            match e {
                Some(e) => g.extend_from_slice(e.data()),
                None => g.extend(core::iter::repeat_n(T::zero(), self.config.modalities[k].embed_dim)),
            }
        }
        Ok(g)
    }

    pub fn joint_dim(&self) -> usize {
        self.config.modalities.iter().map(|m| m.embed_dim).sum()
    }

    /// Square `B × B` similarity matrix of a training batch.
    pub fn batch_similarity(&self, captions: &[Caption<T>], videos: &[VideoSample<T>]) -> Result<Tensor<T>> {
        if captions.len() != videos.len() {
            return Err(Error::BatchMismatch {
                captions: captions.len(),
                videos: videos.len(),
            });
        }
        Ok(self.forward_batch(captions, videos)?.scores)
    }

    /// Scores every caption against every video: `[Q × C]`.
    pub fn score_matrix(&self, captions: &[Caption<T>], videos: &[VideoSample<T>]) -> Result<Tensor<T>> {
        Ok(self.forward_batch(captions, videos)?.scores)
    }

    pub fn forward_batch(&self, captions: &[Caption<T>], videos: &[VideoSample<T>]) -> Result<BatchForward<T>> {
        if captions.is_empty() || videos.is_empty() {
            return Err(Error::EmptySequence("batch"));
        }
        let dims = self.config.stream_dims();
        for v in videos {
            v.validate(&dims)?;
        }
        let (q, c, d_h) = (captions.len(), videos.len(), self.config.text_dim());
        let mut hx = Tensor::zeros(&[q, d_h]);
        let mut text_vlad = Vec::with_capacity(q);
        for (i, cap) in captions.iter().enumerate() {
            self.check_caption(cap)?;
            let cache = self.text_vlad.forward(cap.words())?;
            hx.row_mut(i).copy_from_slice(cache.output().data());
            text_vlad.push(cache);
        }
        let weights = self.gate.logits(&hx)?.softmax(1)?;
        let text_geu = self
            .experts
            .iter()
            .map(|e| e.text_geu.forward(&hx))
            .collect::<Result<Vec<_>>>()?;
        let masks: Vec<AvailabilityMask> = videos.iter().map(VideoSample::mask).collect();

        let mut video = Vec::with_capacity(self.experts.len());
        let mut expert_scores = Vec::with_capacity(self.experts.len());
        for (k, m) in self.config.modalities.iter().enumerate() {
            let columns: Vec<usize> = (0..c).filter(|&j| masks[j].is_available(k)).collect();
            let mut inputs = Tensor::zeros(&[columns.len(), m.aggregated_dim()]);
            let mut aggs = Vec::with_capacity(columns.len());
            for (r, &j) in columns.iter().enumerate() {
                let stream = videos[j].stream(k).expect("mask says present");
                let (agg, cache) = self.aggregate(k, stream)?;
                inputs.row_mut(r).copy_from_slice(agg.data());
                aggs.push(cache);
            }
            let mut embeddings = Tensor::zeros(&[c, m.embed_dim]);
            let geu = if columns.is_empty() {
                None
            } else {
                let cache = self.experts[k].video_geu.forward(&inputs)?;
                for (r, &j) in columns.iter().enumerate() {
                    embeddings.row_mut(j).copy_from_slice(cache.output().row(r));
                }
                Some(cache)
            };
            expert_scores.push(text_geu[k].output().matmul_nt(&embeddings)?);
            video.push(VideoExpertCache {
                columns,
                aggs,
                geu,
                embeddings,
            });
        }
        let scores = mixture_forward(&weights, &expert_scores, &masks)?;
        Ok(BatchForward {
            scores,
            text_vlad,
            hx,
            weights,
            text_geu,
            video,
            expert_scores,
            masks,
        })
    }

    /// Accumulates `∂(Σ upstream ∘ S)/∂θ` into every parameter's gradient.
    ///
    /// Experts missing from video `j` receive nothing through column `j`.
    pub fn backward_batch(
        &mut self,
        fwd: &BatchForward<T>,
        captions: &[Caption<T>],
        videos: &[VideoSample<T>],
        upstream: &Tensor<T>,
    ) -> Result<()> {
        let (q, c) = (captions.len(), videos.len());
        if upstream.shape() != [q, c] || fwd.scores.shape() != [q, c] {
            return Err(crate::tensor::TensorError::ShapeMismatch {
                op: "model_backward",
                left: upstream.shape().to_vec(),
                right: fwd.scores.shape().to_vec(),
            }
            .into());
        }
        let (d_w, d_e) = mixture_backward(&fwd.weights, &fwd.expert_scores, &fwd.masks, &fwd.scores, upstream)?;
        let n = self.experts.len();
        let mut d_logits = Tensor::zeros(&[q, n]);
        for i in 0..q {
            softmax_backward(fwd.weights.row(i), d_w.row(i), d_logits.row_mut(i));
        }
        let (d_a, mut d_hx) = self.gate.backward(&fwd.hx, &d_logits)?;
        self.gate.a.accumulate(&d_a)?;

        for k in 0..n {
            let vc = &fwd.video[k];
            let d_f = d_e[k].matmul(&vc.embeddings)?;
            let tg = self.experts[k].text_geu.backward(&fwd.text_geu[k], &d_f)?;
            d_hx.add_assign(&tg.input)?;
            self.experts[k].text_geu.accumulate(&tg)?;

            let Some(geu_cache) = &vc.geu else { continue };
            let d_g_all = d_e[k].matmul_tn(fwd.text_geu[k].output())?;
            let mut d_g = Tensor::zeros(&[vc.columns.len(), d_g_all.cols()]);
            for (r, &j) in vc.columns.iter().enumerate() {
                d_g.row_mut(r).copy_from_slice(d_g_all.row(j));
            }
            let vg = self.experts[k].video_geu.backward(geu_cache, &d_g)?;
            self.experts[k].video_geu.accumulate(&vg)?;
            // Max pooling has no parameters and the descriptors are fixed inputs,
            // so only NetVLAD aggregators need a backward pass here.
            if let Some(agg) = &self.experts[k].aggregator {
                let mut total = None;
                for (r, (&j, cache)) in vc.columns.iter().zip(&vc.aggs).enumerate() {
                    let AggCache::NetVlad(cache) = cache else { continue };
                    let stream = videos[j].stream(k).expect("mask says present");
                    let up = Tensor::vector(vg.input.row(r).to_vec())?;
                    let g = agg.backward(stream, cache, &up)?;
                    match &mut total {
                        None => total = Some(g),
                        Some(t) => {
                            let t: &mut crate::layers::NetVladGrads<T> = t;
                            t.centers.add_assign(&g.centers)?;
                            t.assign_w.add_assign(&g.assign_w)?;
                            t.assign_b.add_assign(&g.assign_b)?;
                        }
                    }
                }
                if let Some(t) = total {
                    self.experts[k]
                        .aggregator
                        .as_mut()
                        .expect("checked above")
                        .accumulate(&t)?;
                }
            }
        }

        let mut total = None;
        for (i, cap) in captions.iter().enumerate() {
            let up = Tensor::vector(d_hx.row(i).to_vec())?;
            let g = self.text_vlad.backward(cap.words(), &fwd.text_vlad[i], &up)?;
            match &mut total {
                None => total = Some(g),
                Some(t) => {
                    let t: &mut crate::layers::NetVladGrads<T> = t;
                    t.centers.add_assign(&g.centers)?;
                    t.assign_w.add_assign(&g.assign_w)?;
                    t.assign_b.add_assign(&g.assign_b)?;
                }
            }
        }
        if let Some(t) = total {
            self.text_vlad.accumulate(&t)?;
        }
        Ok(())
    }
}

impl<T: Real> ParameterRegistry<T> for MeeParams<T> {
    fn parameters(&self) -> Vec<&Parameter<T>> {
        let mut out = self.text_vlad.parameters();
        out.extend(self.gate.parameters());
        for e in &self.experts {
            if let Some(a) = &e.aggregator {
                out.extend(a.parameters());
            }
            out.extend(e.text_geu.parameters());
            out.extend(e.video_geu.parameters());
        }
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut out = self.text_vlad.parameters_mut();
        out.extend(self.gate.parameters_mut());
        for e in &mut self.experts {
            if let Some(a) = &mut e.aggregator {
                out.extend(a.parameters_mut());
            }
            out.extend(e.text_geu.parameters_mut());
            out.extend(e.video_geu.parameters_mut());
        }
        out
    }
}
