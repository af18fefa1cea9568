//! Export of the concatenated text and video embeddings.

use std::fs;
use std::path::Path;

use mee_core::model::MeeParams;
use mee_core::Tensor;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::format;

pub const TEXT_FILE: &str = "text.bin";
pub const VIDEO_FILE: &str = "video.bin";
pub const IDS_FILE: &str = "ids.json";

#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub ids: Vec<String>,
    /// `[n × joint_dim]` weighted text vectors.
    pub text: Tensor<f32>,
    /// `[n × joint_dim]` video vectors, zero blocks for missing modalities.
    pub video: Tensor<f32>,
}

pub fn compute(params: &MeeParams<f32>, data: &Dataset) -> Result<Embeddings> {
    let pairs = data.pairs_for(params.config())?;
    let d = params.joint_dim();
    let mut text = Vec::with_capacity(pairs.len() * d);
    let mut video = Vec::with_capacity(pairs.len() * d);
    let mut ids = Vec::with_capacity(pairs.len());
    for p in &pairs {
        let (f, g) = params.export_joint_embeddings(&p.caption, &p.video)?;
        text.extend(f);
        video.extend(g);
        ids.push(p.video.id.clone());
    }
    Ok(Embeddings {
        text: Tensor::from_vec(&[ids.len(), d], text)?,
        video: Tensor::from_vec(&[ids.len(), d], video)?,
        ids,
    })
}

pub fn write(out: &Path, e: &Embeddings) -> Result<()> {
    fs::create_dir_all(out).map_err(|err| Error::io(out, err))?;
    format::write_matrix(&out.join(TEXT_FILE), &e.text)?;
    format::write_matrix(&out.join(VIDEO_FILE), &e.video)?;
    let ids_path = out.join(IDS_FILE);
    let json = serde_json::to_vec_pretty(&e.ids).expect("ids serialize");
    fs::write(&ids_path, json).map_err(|err| Error::io(&ids_path, err))
}
