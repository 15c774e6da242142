//! Staged knowledge-base construction and its on-disk form.
//!
//! Layout under the KB directory: `manifest.json` plus one
//! `k<t>_<name>.json` file per built layer. The manifest keeps each stage's
//! prompt fingerprint, so a rerun reuses a layer whenever the prompt it was
//! built from is unchanged.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use semsynth_core::kb::{validate_layer, KbError, Layer, Provenance};
use semsynth_core::prompt::{repair_request, stage_prompt};
use semsynth_core::{DatabaseSchema, InstanceSample, KnowledgeBase, LayerId, PartialKb, Stage};

use crate::llm::{ChatRequest, Gateway, LlmError, ResponseKind, JUDGE_TEMPERATURE};

#[derive(Debug, thiserror::Error)]
pub enum KbBuildError {
    #[error(transparent)]
    MissingPriorLayer(#[from] KbError),
    #[error("{stage}: {source}")]
    Llm { stage: Stage, source: LlmError },
    #[error("{stage} failed validation: {}", problems.join("; "))]
    ValidationFailure { stage: Stage, problems: Vec<String> },
    #[error("knowledge base storage: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub prompt_fingerprint: String,
    /// Hex SHA-256 of the layer as written; a file edited since no longer
    /// matches and is rebuilt.
    #[serde(default)]
    pub layer_digest: String,
    pub model_id: String,
    pub timestamp: u64,
    pub file: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub repairs: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbManifest {
    pub db_name: String,
    /// Stage index to its record, for every persisted layer.
    pub stages: BTreeMap<u8, StageRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
}

/// A KB directory.
#[derive(Debug, Clone)]
pub struct KbStore {
    dir: PathBuf,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(tmp, path)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> std::io::Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))
}

impl KbStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        KbStore { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn manifest_path(&self) -> PathBuf {
        self.dir.join("manifest.json")
    }

    pub fn manifest(&self) -> std::io::Result<Option<KbManifest>> {
        let p = self.manifest_path();
        if p.exists() {
            read_json(&p).map(Some)
        } else {
            Ok(None)
        }
    }

    fn save_manifest(&self, m: &KbManifest) -> std::io::Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        write_json(&self.manifest_path(), m)
    }

    fn save_layer(&self, layer: &Layer) -> std::io::Result<String> {
        std::fs::create_dir_all(&self.dir)?;
        let file = format!("{}.json", layer.id().file_stem());
        write_json(&self.dir.join(&file), layer)?;
        Ok(file)
    }

    /// Every layer listed in the manifest, with its provenance.
    pub fn load_partial(&self) -> std::io::Result<PartialKb> {
        let mut kb = PartialKb::default();
        let Some(m) = self.manifest()? else { return Ok(kb) };
        for (t, rec) in &m.stages {
            let Some(stage) = Stage::new(*t) else { continue };
            let value: serde_json::Value = read_json(&self.dir.join(&rec.file))?;
            let layer = Layer::from_value(stage.output(), value)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            kb.insert(layer, provenance(stage, rec));
        }
        Ok(kb)
    }

    /// The complete KB, failing if any layer is missing.
    pub fn load(&self) -> Result<KnowledgeBase, KbBuildError> {
        Ok(self.load_partial()?.complete()?)
    }
}

fn provenance(stage: Stage, rec: &StageRecord) -> Provenance {
    Provenance {
        stage: stage.index(),
        prompt_fingerprint: rec.prompt_fingerprint.clone(),
        model_id: rec.model_id.clone(),
        timestamp: rec.timestamp,
    }
}

fn layer_digest(layer: &Layer) -> String {
    hex::encode(Sha256::digest(serde_json::to_string(layer).unwrap_or_default().as_bytes()))
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Hex SHA-256 of the KB layers; provenance is excluded.
pub fn kb_fingerprint(kb: &KnowledgeBase) -> String {
    let mut h = Sha256::new();
    for id in LayerId::ALL {
        let text = match id {
            LayerId::K1 => serde_json::to_string(&kb.k1_metadata),
            LayerId::K2 => serde_json::to_string(&kb.k2_domain),
            LayerId::K3 => serde_json::to_string(&kb.k3_field_types),
            LayerId::K4 => serde_json::to_string(&kb.k4_columns),
            LayerId::K5 => serde_json::to_string(&kb.k5_tables),
            LayerId::K6 => serde_json::to_string(&kb.k6_relations),
        }
        .unwrap_or_default();
        h.update(text.as_bytes());
        h.update([0]);
    }
    hex::encode(h.finalize())
}

/// Layer plus what it took to get it.
#[derive(Debug, Clone)]
pub struct StageResult {
    pub layer: Layer,
    pub provenance: Provenance,
    pub repairs: Vec<String>,
}

/// Runs one extraction stage against `prior`. A reply that fails validation
/// is sent back once with the problems listed.
pub fn run_stage(
    gw: &Gateway,
    stage: Stage,
    schema: &DatabaseSchema,
    sample: &InstanceSample,
    prior: &PartialKb,
) -> Result<StageResult, KbBuildError> {
    let view = prior.inputs_for(stage, schema, sample)?;
    let prompt = stage_prompt(&view);
    let req = ChatRequest::new(prompt.clone(), JUDGE_TEMPERATURE, ResponseKind::StructuredRecord)
        .with_purpose(format!("kb stage {}", stage.index()));
    let fingerprint = req.fingerprint();
    let llm = |source| KbBuildError::Llm { stage, source };
    let raw: serde_json::Value = gw.complete_structured(&req).map_err(llm)?;
    let validated = match validate_layer(stage, &raw, schema, sample, prior) {
        Ok(v) => v,
        Err(failure) => {
            log::warn!("{stage}: {failure}; asking for a repair");
            let retry = ChatRequest::new(
                repair_request(&prompt, &failure.problems),
                JUDGE_TEMPERATURE,
                ResponseKind::StructuredRecord,
            )
            .with_purpose(format!("kb stage {} repair", stage.index()));
            let raw: serde_json::Value = gw.complete_structured(&retry).map_err(llm)?;
            validate_layer(stage, &raw, schema, sample, prior)
                .map_err(|f| KbBuildError::ValidationFailure { stage, problems: f.problems })?
        }
    };
    let repairs: Vec<String> = validated.repairs.iter().map(ToString::to_string).collect();
    Ok(StageResult {
        layer: validated.layer,
        provenance: Provenance {
            stage: stage.index(),
            prompt_fingerprint: fingerprint,
            model_id: gw.model_id().to_string(),
            timestamp: now(),
        },
        repairs,
    })
}

/// Builds stages 1 to 6 in order. With a store, each finished layer is
/// persisted immediately and layers whose prompt fingerprint still matches
/// are loaded instead of rebuilt; a failed build leaves the finished prefix
/// on disk.
pub fn build(
    gw: &Gateway,
    schema: &DatabaseSchema,
    sample: &InstanceSample,
    store: Option<&KbStore>,
) -> Result<KnowledgeBase, KbBuildError> {
    let mut manifest = match store {
        Some(s) => s.manifest()?.unwrap_or_default(),
        None => KbManifest::default(),
    };
    manifest.db_name = schema.db_name.clone();
    manifest.fingerprint = None;
    let mut stored = match store {
        Some(s) => s.load_partial()?,
        None => PartialKb::default(),
    };
    let mut kb = PartialKb::default();
    for stage in Stage::ALL {
        let id = stage.output();
        let prompt_fp = {
            let view = kb.inputs_for(stage, schema, sample)?;
            ChatRequest::new(stage_prompt(&view), JUDGE_TEMPERATURE, ResponseKind::StructuredRecord).fingerprint()
        };
        if let (Some(rec), Some(layer), Some(p)) =
            (manifest.stages.get(&stage.index()), stored.layer(id), stored.provenance.get(&id).cloned())
        {
            if rec.prompt_fingerprint == prompt_fp && rec.layer_digest == layer_digest(&layer) {
                log::info!("{stage}: reusing stored layer");
                kb.insert(layer, p);
                continue;
            }
            log::info!("{stage}: stored layer is stale");
        }
        // Anything downstream of a rebuilt stage is stale.
        stored.truncate_from(id);
        manifest.stages.retain(|t, _| *t < stage.index());
        log::info!("{stage}: extracting");
        let result = run_stage(gw, stage, schema, sample, &kb)?;
        if let Some(s) = store {
            let file = s.save_layer(&result.layer)?;
            let p = &result.provenance;
            manifest.stages.insert(
                stage.index(),
                StageRecord {
                    prompt_fingerprint: p.prompt_fingerprint.clone(),
                    layer_digest: layer_digest(&result.layer),
                    model_id: p.model_id.clone(),
                    timestamp: p.timestamp,
                    file,
                    repairs: result.repairs.clone(),
                },
            );
            s.save_manifest(&manifest)?;
        }
        kb.insert(result.layer, result.provenance);
    }
    let kb = kb.complete()?;
    if let Some(s) = store {
        manifest.fingerprint = Some(kb_fingerprint(&kb));
        s.save_manifest(&manifest)?;
    }
    Ok(kb)
}
