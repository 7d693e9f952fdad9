//! Shared vocabulary: modalities, feature schemas, daily feature vectors,
//! affect reports and participant timelines.

mod affect;
mod schema;
mod timeline;

pub use affect::{AffectPolarity, AffectReport, ITEMS_PER_POLARITY, RATING_MAX, RATING_MIN};
pub use schema::{parse_modalities, FeatureDef, FeatureKind, FeatureSchema, Modality};
pub use timeline::{
    filter_eligible_participants, load_timelines, valid_affect_day_count, DailyFeatureVector, DayRecord,
    FeatureValue, ParticipantTimeline, Provenance,
};

/// Participants must report on more than this many days to be modeled.
pub const DEFAULT_ELIGIBILITY_THRESHOLD: usize = 200;
