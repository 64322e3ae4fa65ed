//! Per-resource benchmark profiles of execution units.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::PartitionSchema;
use crate::network::Tier;

#[derive(Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("malformed profile document: {0}")]
    Malformed(String),
    #[error("runs must be at least 1, got {0}")]
    NoRuns(u32),
    #[error("missing unit {0}")]
    MissingUnit(usize),
    #[error("unit {0} appears more than once")]
    DuplicateUnit(usize),
    #[error("unit {unit} is not part of the schema ({units} units)")]
    UnknownUnit { unit: usize, units: usize },
    #[error("unit {unit}: negative or non-finite time {value}")]
    NegativeTime { unit: usize, value: f64 },
    #[error("unit {unit}: neither mean_s nor samples_s given")]
    NoTiming { unit: usize },
    #[error("unit {unit}: {found} samples but runs = {runs}")]
    SampleCount {
        unit: usize,
        found: usize,
        runs: u32,
    },
    #[error("profile is for model '{profile}' but the graph is '{graph}'")]
    ModelMismatch { profile: String, graph: String },
    #[error("cannot aggregate an empty sample list")]
    EmptySamples,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitEntry {
    pub unit_id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_s: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileDocument {
    pub resource_id: String,
    pub tier: Tier,
    pub model_name: String,
    pub runs: u32,
    pub units: Vec<UnitEntry>,
}

/// Mean execution time of every unit of one model on one resource.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceProfile {
    pub resource_id: String,
    pub tier: Tier,
    pub model_name: String,
    pub runs: u32,
    /// Indexed by unit id.
    pub unit_times: Vec<f64>,
    pub raw_samples: Vec<Option<Vec<f64>>>,
}

/// Arithmetic mean of the timed runs.
pub fn aggregate_runs(samples: &[f64]) -> Result<f64, ProfileError> {
    if samples.is_empty() {
        return Err(ProfileError::EmptySamples);
    }
    Ok(samples.iter().sum::<f64>() / samples.len() as f64)
}

/// Whole-model time on the resource: the sum over all units.
pub fn native_time(profile: &ResourceProfile) -> f64 {
    profile.unit_times.iter().sum()
}

impl ResourceProfile {
    /// Validates a profile document. Unit ids must be dense from 0; means
    /// are recomputed from samples when samples are present.
    pub fn from_document(doc: ProfileDocument) -> Result<Self, ProfileError> {
        if doc.runs < 1 {
            return Err(ProfileError::NoRuns(doc.runs));
        }
        let count = doc.units.iter().map(|u| u.unit_id + 1).max().unwrap_or(0);
        let mut unit_times: Vec<Option<f64>> = vec![None; count];
        let mut raw_samples = vec![None; count];
        for entry in doc.units {
            let unit = entry.unit_id;
            if unit_times[unit].is_some() {
                return Err(ProfileError::DuplicateUnit(unit));
            }
            let check = |value: f64| {
                if value.is_finite() && value >= 0.0 {
                    Ok(value)
                } else {
                    Err(ProfileError::NegativeTime { unit, value })
                }
            };
            let mean = match (&entry.samples_s, entry.mean_s) {
                (Some(samples), _) => {
                    if samples.len() != doc.runs as usize {
                        return Err(ProfileError::SampleCount {
                            unit,
                            found: samples.len(),
                            runs: doc.runs,
                        });
                    }
                    for &s in samples {
                        check(s)?;
                    }
                    aggregate_runs(samples)?
                }
                (None, Some(mean)) => check(mean)?,
                (None, None) => return Err(ProfileError::NoTiming { unit }),
            };
            unit_times[unit] = Some(mean);
            raw_samples[unit] = entry.samples_s;
        }
        let unit_times = unit_times
            .into_iter()
            .enumerate()
            .map(|(unit, t)| t.ok_or(ProfileError::MissingUnit(unit)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ResourceProfile {
            resource_id: doc.resource_id,
            tier: doc.tier,
            model_name: doc.model_name,
            runs: doc.runs,
            unit_times,
            raw_samples,
        })
    }

    /// Builds a profile from known means.
    pub fn from_means(
        resource_id: impl Into<String>,
        tier: Tier,
        model_name: impl Into<String>,
        unit_times: Vec<f64>,
    ) -> Self {
        let raw_samples = vec![None; unit_times.len()];
        ResourceProfile {
            resource_id: resource_id.into(),
            tier,
            model_name: model_name.into(),
            runs: 1,
            unit_times,
            raw_samples,
        }
    }

    /// Checks that the profile covers exactly the units of `schema`.
    pub fn check_alignment(&self, schema: &PartitionSchema) -> Result<(), ProfileError> {
        if self.model_name != schema.model_name {
            return Err(ProfileError::ModelMismatch {
                profile: self.model_name.clone(),
                graph: schema.model_name.clone(),
            });
        }
        let units = schema.unit_count();
        match self.unit_times.len() {
            n if n < units => Err(ProfileError::MissingUnit(n)),
            n if n > units => Err(ProfileError::UnknownUnit { unit: n - 1, units }),
            _ => Ok(()),
        }
    }

    pub fn to_document(&self) -> ProfileDocument {
        ProfileDocument {
            resource_id: self.resource_id.clone(),
            tier: self.tier,
            model_name: self.model_name.clone(),
            runs: self.runs,
            units: self
                .unit_times
                .iter()
                .zip(&self.raw_samples)
                .enumerate()
                .map(|(unit_id, (&mean, samples))| UnitEntry {
                    unit_id,
                    mean_s: Some(mean),
                    samples_s: samples.clone(),
                })
                .collect(),
        }
    }
}

/// Parses a profile document, and when a schema is given, checks alignment.
pub fn ingest_profile(
    document: &str,
    schema: Option<&PartitionSchema>,
) -> Result<ResourceProfile, ProfileError> {
    let doc: ProfileDocument =
        serde_json::from_str(document).map_err(|e| ProfileError::Malformed(e.to_string()))?;
    let profile = ResourceProfile::from_document(doc)?;
    if let Some(schema) = schema {
        profile.check_alignment(schema)?;
    }
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{find_cut_points, DnnGraph};
    use proptest::prelude::*;

    fn schema(layers: usize) -> PartitionSchema {
        find_cut_points(&DnnGraph::chain("toy", 10, &vec![4; layers]).unwrap())
    }

    fn doc(units: &str) -> String {
        format!(
            r#"{{"resource_id":"pi","tier":"device","model_name":"toy","runs":5,"units":[{units}]}}"#
        )
    }

    #[test]
    fn means_are_recomputed_from_samples() {
        let text = doc(
            r#"{"unit_id":0,"mean_s":99.0,"samples_s":[0.010,0.012,0.011,0.009,0.013]},
                          {"unit_id":1,"mean_s":0.5}"#,
        );
        let p = ingest_profile(&text, None).unwrap();
        assert!((p.unit_times[0] - 0.011).abs() < 1e-12);
        assert_eq!(p.unit_times[1], 0.5);
        assert_eq!(p.raw_samples[0].as_ref().unwrap().len(), 5);
    }

    #[test]
    fn missing_units_are_named() {
        let gap = doc(
            r#"{"unit_id":0,"mean_s":1},{"unit_id":1,"mean_s":1},{"unit_id":2,"mean_s":1},
                         {"unit_id":4,"mean_s":1}"#,
        );
        assert_eq!(
            ingest_profile(&gap, None).unwrap_err(),
            ProfileError::MissingUnit(3)
        );
        assert_eq!(
            ingest_profile(&gap, Some(&schema(5))).unwrap_err(),
            ProfileError::MissingUnit(3)
        );
        assert_eq!(ProfileError::MissingUnit(3).to_string(), "missing unit 3");

        let short =
            doc(r#"{"unit_id":0,"mean_s":1},{"unit_id":1,"mean_s":1},{"unit_id":2,"mean_s":1}"#);
        assert_eq!(
            ingest_profile(&short, Some(&schema(5))).unwrap_err(),
            ProfileError::MissingUnit(3)
        );
        assert!(ingest_profile(&short, Some(&schema(3))).is_ok());
        assert!(matches!(
            ingest_profile(&short, Some(&schema(2))).unwrap_err(),
            ProfileError::UnknownUnit { unit: 2, units: 2 }
        ));
    }

    #[test]
    fn rejects_bad_values() {
        let negative = doc(r#"{"unit_id":0,"mean_s":-0.1}"#);
        assert!(matches!(
            ingest_profile(&negative, None),
            Err(ProfileError::NegativeTime { unit: 0, .. })
        ));
        let neg_sample = doc(r#"{"unit_id":0,"samples_s":[0.1,0.1,-0.1,0.1,0.1]}"#);
        assert!(matches!(
            ingest_profile(&neg_sample, None),
            Err(ProfileError::NegativeTime { .. })
        ));
        let dup = doc(r#"{"unit_id":0,"mean_s":1},{"unit_id":0,"mean_s":1}"#);
        assert_eq!(
            ingest_profile(&dup, None).unwrap_err(),
            ProfileError::DuplicateUnit(0)
        );
        let few = doc(r#"{"unit_id":0,"samples_s":[0.1]}"#);
        assert!(matches!(
            ingest_profile(&few, None),
            Err(ProfileError::SampleCount { found: 1, .. })
        ));
        let none = doc(r#"{"unit_id":0}"#);
        assert_eq!(
            ingest_profile(&none, None).unwrap_err(),
            ProfileError::NoTiming { unit: 0 }
        );

        let zero_runs =
            r#"{"resource_id":"pi","tier":"device","model_name":"toy","runs":0,"units":[]}"#;
        assert_eq!(
            ingest_profile(zero_runs, None).unwrap_err(),
            ProfileError::NoRuns(0)
        );
        assert!(matches!(
            ingest_profile("{}", None),
            Err(ProfileError::Malformed(_))
        ));
    }

    #[test]
    fn model_name_must_match() {
        let text =
            doc(r#"{"unit_id":0,"mean_s":1},{"unit_id":1,"mean_s":1},{"unit_id":2,"mean_s":1}"#);
        let other = find_cut_points(&DnnGraph::chain("other", 10, &[4, 4, 4]).unwrap());
        assert!(matches!(
            ingest_profile(&text, Some(&other)).unwrap_err(),
            ProfileError::ModelMismatch { .. }
        ));
    }

    #[test]
    fn aggregate_and_native_examples() {
        assert_eq!(aggregate_runs(&[1.0]).unwrap(), 1.0);
        assert_eq!(aggregate_runs(&[0.0; 5]).unwrap(), 0.0);
        assert_eq!(aggregate_runs(&[]).unwrap_err(), ProfileError::EmptySamples);

        let p = ResourceProfile::from_means("r", Tier::Edge, "m", vec![0.1, 0.2, 0.3]);
        assert!((native_time(&p) - 0.6).abs() < 1e-15);
        assert_eq!(
            native_time(&ResourceProfile::from_means(
                "r",
                Tier::Edge,
                "m",
                vec![0.0; 4]
            )),
            0.0
        );
    }

    #[test]
    fn aggregate_matches_independent_mean() {
        // five samples with an exactly representable mean, summed by hand
        let samples = [0.0625, 0.125, 0.1875, 0.25, 0.3125];
        let by_hand = (((0.0625 + 0.125) + 0.1875) + 0.25 + 0.3125) / 5.0;
        assert!((aggregate_runs(&samples).unwrap() - by_hand).abs() < 1e-12);
        assert!((by_hand - 0.1875f64).abs() < 1e-12);
    }

    #[test]
    fn native_time_matches_fold_on_twenty_units() {
        let times: Vec<f64> = (0..20)
            .map(|i| ((i * 37 % 11) as f64 + 0.5) * 1e-3)
            .collect();
        let mut fold = 0.0;
        for t in times.iter().rev() {
            fold += t;
        }
        let p = ResourceProfile::from_means("r", Tier::Cloud, "m", times);
        assert!((native_time(&p) - fold).abs() < 1e-12);
    }

    #[test]
    fn document_round_trip() {
        let text = doc(r#"{"unit_id":0,"samples_s":[1,2,3,4,5]},{"unit_id":1,"mean_s":0.5}"#);
        let p = ingest_profile(&text, None).unwrap();
        let again = ResourceProfile::from_document(p.to_document()).unwrap();
        assert_eq!(p, again);
    }

    proptest! {
        #[test]
        fn aggregation_is_permutation_invariant(mut samples in prop::collection::vec(0.0f64..10.0, 1..12), seed in any::<u64>()) {
            let before = aggregate_runs(&samples).unwrap();
            let n = samples.len();
            samples.rotate_left((seed as usize) % n);
            samples.reverse();
            let after = aggregate_runs(&samples).unwrap();
            prop_assert!((before - after).abs() <= 1e-12 * before.max(1.0));
        }
    }
}
