use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelSpec, TrainedModel};
use crate::dataset::{Lag, ParticipantDataset};
use crate::domain::{DailyFeatureVector, Modality};
use crate::error::{Error, Result};
use crate::labeling::TargetSpec;

/// A participant's model plus the feature layout it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantModel {
    pub participant_id: String,
    pub target: TargetSpec,
    pub modalities: Vec<Modality>,
    pub feature_ids: Vec<String>,
    pub lag: Lag,
    pub model: TrainedModel,
}

impl ParticipantModel {
    pub fn train(
        ds: &ParticipantDataset,
        target: &TargetSpec,
        modalities: &[Modality],
        lag: Lag,
        spec: &ModelSpec,
    ) -> Result<Self> {
        Ok(ParticipantModel {
            participant_id: ds.participant_id.clone(),
            target: target.clone(),
            modalities: modalities.to_vec(),
            feature_ids: ds.feature_ids.clone(),
            lag,
            model: TrainedModel::train(spec, &ds.rows, &ds.labels)?,
        })
    }

    /// The model's input row from one day's features, if all are present.
    pub fn row_for(&self, features: &DailyFeatureVector) -> Option<Vec<f64>> {
        self.feature_ids.iter().map(|id| features.get(id).value()).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: ParticipantModel = serde_json::from_str(&text)?;
        if m.model.format_version != super::MODEL_FORMAT_VERSION {
            return Err(Error::ModelConfig(format!(
                "unsupported model format version {}",
                m.model.format_version
            )));
        }
        if m.feature_ids.len() != m.model.n_features() {
            return Err(Error::SchemaMismatch {
                expected: m.model.n_features(),
                found: m.feature_ids.len(),
            });
        }
        Ok(m)
    }
}
