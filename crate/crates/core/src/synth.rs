//! Seeded synthetic datasets with planted co-occurrence structure.
//!
//! Each attribute owns a unit latent direction `u_i`. Instances draw a scene
//! direction and their labels by Gibbs sampling, so attributes with aligned
//! latents co-occur and anti-aligned ones avoid each other. Contradiction
//! pairs have opposite latents and are mutually exclusive outright.
//!
//! Word vectors are `[c ; s u_i ; b t_i]`: a shared component, a small
//! visual component and a dominant text component `t_i`, a noisy image of
//! `u_i`. A contradiction pair shares its text component up to a small
//! perturbation, so the two vectors are almost parallel although the
//! attributes never co-occur. Text similarity is therefore a useful but
//! imperfect proxy for co-occurrence, and only a map that can weight the
//! visual component separates the pairs.
//!
//! Features are `A y + noise` for a fixed Gaussian `A`.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domain::{AnnotationMatrix, AttributeVocabulary, FeatureMatrix};
use crate::error::{Error, Result};
use crate::ingest::{save_annotations, save_features, save_word_vectors, WordVectorTable};

/// Weight of the component shared by every word vector.
const COMMON_WEIGHT: f64 = 0.3;
/// Scale of the perturbation separating the text parts of a contradiction pair.
const PAIR_PERTURBATION: f64 = 0.05;
/// Lower bound on the cosine of a contradiction pair.
pub const PAIR_MIN_COSINE: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_attributes: usize,
    pub num_novel: usize,
    pub num_instances: usize,
    pub embed_dim: usize,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub contradiction_pairs: usize,
    pub seed: u64,
    /// Dimension of the latent attribute directions.
    pub latent_dim: usize,
    /// Norm of the visual block inside each unit word vector.
    pub visual_scale: f64,
    /// Noise mixed into the text block; larger is less informative.
    pub text_noise: f64,
    /// Strength of the per-instance scene field.
    pub scene_strength: f64,
    /// Pairwise coupling between latent-aligned attributes.
    pub coupling: f64,
    /// Logit offset of every attribute; sets label sparsity.
    pub bias: f64,
    pub gibbs_sweeps: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_attributes: 30,
            num_novel: 6,
            num_instances: 2000,
            embed_dim: 12,
            feature_dim: 40,
            feature_noise: 0.5,
            contradiction_pairs: 4,
            seed: 0,
            latent_dim: 3,
            visual_scale: 0.15,
            text_noise: 0.6,
            scene_strength: 3.0,
            coupling: 0.5,
            bias: -3.5,
            gibbs_sweeps: 50,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_attributes < 2 || self.num_instances == 0 || self.feature_dim == 0 {
            return bad(
                "num_attributes >= 2, num_instances >= 1 and feature_dim >= 1 required".into(),
            );
        }
        if self.num_novel == 0 || self.num_novel >= self.num_attributes {
            return bad(format!(
                "num_novel must be in 1..{}, got {}",
                self.num_attributes, self.num_novel
            ));
        }
        if self.contradiction_pairs > self.num_attributes / 2 {
            return bad(format!(
                "{} contradiction pairs need {} attributes, only {} available",
                self.contradiction_pairs,
                2 * self.contradiction_pairs,
                self.num_attributes
            ));
        }
        if self.latent_dim == 0 || self.embed_dim < self.latent_dim + 2 {
            return bad(format!(
                "embed_dim must be at least latent_dim + 2 = {}",
                self.latent_dim + 2
            ));
        }
        for (name, v) in [
            ("feature_noise", self.feature_noise),
            ("text_noise", self.text_noise),
            ("scene_strength", self.scene_strength),
            ("coupling", self.coupling),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !self.bias.is_finite() {
            return bad("bias must be finite".into());
        }
        // opposite visual blocks cost 2 s^2 of cosine, the perturbation less than its square
        let budget = 1.0 - PAIR_MIN_COSINE - PAIR_PERTURBATION * PAIR_PERTURBATION;
        if !(self.visual_scale > 0.0 && 2.0 * self.visual_scale.powi(2) <= budget) {
            return bad(format!(
                "visual_scale must be in (0, {:.4}], got {}",
                (budget / 2.0).sqrt(),
                self.visual_scale
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub config: SynthConfig,
    /// Mutually exclusive pairs with near-parallel word vectors.
    pub contradiction_pairs: Vec<(String, String)>,
    /// Latent direction of every attribute.
    pub latent: Vec<Vec<f64>>,
    pub pair_cosines: Vec<f64>,
    pub mean_positives: f64,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub vocabulary: AttributeVocabulary,
    pub vectors: WordVectorTable,
    pub features: FeatureMatrix,
    pub annotations: AnnotationMatrix,
    pub manifest: SynthManifest,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn unit(v: DVector<f64>) -> DVector<f64> {
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        v
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let p = cfg.num_attributes;
    let k = cfg.latent_dim;
    let dt = cfg.embed_dim - 1 - k;
    let width = (p - 1).to_string().len();
    let vocabulary = AttributeVocabulary::new((0..p).map(|i| format!("attr{i:0width$}")))?;

    let mut latent: Vec<DVector<f64>> = (0..p).map(|_| unit(gaussian_vec(&mut rng, k))).collect();
    let mut order: Vec<usize> = (0..p).collect();
    order.shuffle(&mut rng);
    let mut partner = vec![None; p];
    let pairs: Vec<(usize, usize)> = (0..cfg.contradiction_pairs)
        .map(|c| {
            let (a, b) = (order[2 * c], order[2 * c + 1]);
            let (a, b) = (a.min(b), a.max(b));
            latent[b] = -&latent[a];
            partner[a] = Some(b);
            partner[b] = Some(a);
            (a, b)
        })
        .collect();

    // text block: noisy image of the latent direction
    let w = DMatrix::from_fn(dt, k, |_, _| {
        rng.sample::<f64, _>(StandardNormal) / (k as f64).sqrt()
    });
    let mut text: Vec<DVector<f64>> = latent
        .iter()
        .map(|u| {
            let g = gaussian_vec(&mut rng, dt) / (dt as f64).sqrt();
            unit(&w * u + g * cfg.text_noise)
        })
        .collect();
    for &(a, b) in &pairs {
        let d = gaussian_vec(&mut rng, dt) * (PAIR_PERTURBATION / (dt as f64).sqrt());
        text[b] = unit(&text[a] + d);
    }
    let s = cfg.visual_scale;
    let tb = (1.0 - COMMON_WEIGHT * COMMON_WEIGHT - s * s).sqrt();
    let mut vectors = WordVectorTable::new(cfg.embed_dim)?;
    let mut embedded = Vec::with_capacity(p);
    for i in 0..p {
        let mut v = Vec::with_capacity(cfg.embed_dim);
        v.push(COMMON_WEIGHT);
        v.extend(latent[i].iter().map(|x| s * x));
        v.extend(text[i].iter().map(|x| tb * x));
        embedded.push(DVector::from_vec(v.clone()));
        vectors.insert(vocabulary.name(i).to_string(), v, i + 2)?;
    }
    let pair_cosines: Vec<f64> = pairs
        .iter()
        .map(|&(a, b)| embedded[a].dot(&embedded[b]) / (embedded[a].norm() * embedded[b].norm()))
        .collect();

    let affinity = DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            0.0
        } else {
            cfg.coupling * latent[i].dot(&latent[j])
        }
    });
    let n = cfg.num_instances;
    let mut cells = DMatrix::<u8>::zeros(p, n);
    for c in 0..n {
        let z = unit(gaussian_vec(&mut rng, k));
        let field: Vec<f64> = latent
            .iter()
            .map(|u| cfg.bias + cfg.scene_strength * u.dot(&z))
            .collect();
        let mut y = vec![0u8; p];
        for _ in 0..cfg.gibbs_sweeps {
            for i in 0..p {
                let r: f64 = rng.random();
                if partner[i].is_some_and(|j| y[j] == 1) {
                    y[i] = 0;
                    continue;
                }
                let h = field[i]
                    + (0..p)
                        .filter(|&j| y[j] == 1)
                        .map(|j| affinity[(i, j)])
                        .sum::<f64>();
                y[i] = u8::from(r < sigmoid(h));
            }
        }
        if y.iter().all(|&v| v == 0) {
            let best = (0..p)
                .max_by(|&a, &b| field[a].total_cmp(&field[b]))
                .expect("at least two attributes");
            y[best] = 1;
        }
        for (i, &v) in y.iter().enumerate() {
            cells[(i, c)] = v;
        }
    }

    let a = DMatrix::from_fn(cfg.feature_dim, p, |_, _| {
        rng.sample::<f64, _>(StandardNormal)
    });
    let noise = DMatrix::from_fn(cfg.feature_dim, n, |_, _| {
        rng.sample::<f64, _>(StandardNormal)
    });
    let data = a * cells.map(f64::from) + noise * cfg.feature_noise;

    let width = (n.max(2) - 1).to_string().len();
    let ids: Vec<String> = (0..n).map(|i| format!("inst{i:0width$}")).collect();
    let mean_positives = cells.iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64;
    let manifest = SynthManifest {
        config: cfg.clone(),
        contradiction_pairs: pairs
            .iter()
            .map(|&(a, b)| {
                (
                    vocabulary.name(a).to_string(),
                    vocabulary.name(b).to_string(),
                )
            })
            .collect(),
        latent: latent.iter().map(|u| u.iter().copied().collect()).collect(),
        pair_cosines,
        mean_positives,
    };
    Ok(SynthDataset {
        features: FeatureMatrix::new(ids.clone(), data)?,
        annotations: AnnotationMatrix::new(vocabulary.clone(), ids, cells)?,
        vocabulary,
        vectors,
        manifest,
    })
}

pub const VECTORS_FILE: &str = "vectors.txt";
pub const ANNOTATIONS_FILE: &str = "annotations.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes the dataset in the ingestible formats plus `manifest.json`.
pub fn save(dataset: &SynthDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_word_vectors(&dataset.vectors, dir.join(VECTORS_FILE))?;
    save_annotations(&dataset.annotations, dir.join(ANNOTATIONS_FILE))?;
    save_features(&dataset.features, dir.join(FEATURES_FILE))?;
    let path = dir.join(MANIFEST_FILE);
    let mut text =
        serde_json::to_string_pretty(&dataset.manifest).map_err(|e| Error::json(&path, e))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
