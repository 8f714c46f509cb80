//! Brain-penetration stand-in scenario: a synthetic historical table with
//! the shape of the CNS case study (three QSAR predictors, three $400
//! in-vitro transporter assays and a $4000 in-vivo kpuu assay that is also
//! the target), plus the QSAR rule-of-thumb baseline.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::belief::CandidateState;
use crate::data::{
    AssaySpec, Dataset, DatasetParts, FeatureId, FeatureKind, FeatureSpec, GoalRange,
    HistoricalRecord, Schema,
};
use crate::env::AssaySet;
use crate::error::{Error, Result};

pub const PREDICTORS: [&str; 3] = ["qsar_pgp_1um", "qsar_bcrp_100nm", "qsar_mrt"];
pub const IN_VITRO: [&str; 3] = ["pgp_100nm", "pgp_1um", "bcrp_100nm"];
pub const TARGET: &str = "kpuu";
pub const IN_VITRO_COST: [f64; 2] = [400.0, 7.0];
pub const IN_VIVO_COST: [f64; 2] = [4000.0, 21.0];
/// Dollars for every assay in the panel.
pub const FULL_PANEL_SPEND: f64 = 5200.0;
pub const DEFAULT_RECORDS: usize = 220;
pub const DEFAULT_SEED: u64 = 2024;

/// Bundled copies of the generated table and its schema.
pub const BUNDLED_CSV: &str = include_str!("../data/cns_standin.csv");
pub const BUNDLED_SCHEMA: &str = include_str!("../data/cns_schema.toml");

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Generates the stand-in table. Efflux ratios are log-normal, QSARs are
/// noisy copies of the measured ratios, and kpuu falls with efflux.
pub fn generate(n_records: usize, seed: u64) -> Result<Dataset> {
    if n_records < 2 {
        return Err(Error::Config("scenario needs at least two records".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Normal::new(0.0, 1.0).expect("unit normal");
    let mut records = Vec::with_capacity(n_records);
    for i in 0..n_records {
        let mut draw = || z.sample(&mut rng);
        let pgp_1um = (2.5f64.ln() + 0.6 * draw()).exp().clamp(0.5, 12.0);
        let pgp_100nm = (pgp_1um * (0.2 + 0.2 * draw()).exp()).clamp(0.5, 15.0);
        let bcrp = (2.0f64.ln() + 0.5 * draw()).exp().clamp(0.5, 10.0);
        let kpuu = (0.6 - pgp_1um.ln() - 0.6 * bcrp.ln() + 0.2 * draw())
            .exp()
            .clamp(0.01, 3.0);
        let qsar_pgp = pgp_1um * (0.35 * draw()).exp();
        let qsar_bcrp = bcrp * (0.35 * draw()).exp();
        let qsar_mrt = 1.5 + 0.4 * kpuu.ln() + 0.5 * draw();
        let values = [
            qsar_pgp, qsar_bcrp, qsar_mrt, pgp_100nm, pgp_1um, bcrp, kpuu,
        ]
        .into_iter()
        .map(round3)
        .collect();
        records.push(HistoricalRecord {
            record_id: format!("cmpd_{:03}", i + 1),
            values,
            target: Some(round3(kpuu)),
        });
    }

    let feature = |name: &str, kind| FeatureSpec {
        name: name.into(),
        kind,
        lambda: 1.0,
        required: kind == FeatureKind::Predictor,
        stats: None,
    };
    let mut features: Vec<FeatureSpec> = PREDICTORS
        .iter()
        .map(|n| feature(n, FeatureKind::Predictor))
        .collect();
    features.extend(
        IN_VITRO
            .iter()
            .chain(std::iter::once(&TARGET))
            .map(|n| feature(n, FeatureKind::AssayOutcome)),
    );
    let mut assays: Vec<AssaySpec> = IN_VITRO
        .iter()
        .enumerate()
        .map(|(j, n)| AssaySpec {
            name: (*n).into(),
            outcome_feature: FeatureId(PREDICTORS.len() + j),
            cost: IN_VITRO_COST.to_vec(),
        })
        .collect();
    assays.push(AssaySpec {
        name: TARGET.into(),
        outcome_feature: FeatureId(PREDICTORS.len() + IN_VITRO.len()),
        cost: IN_VIVO_COST.to_vec(),
    });
    let target_assay = Some(crate::data::AssayId(assays.len() - 1));
    Dataset::from_parts(DatasetParts {
        features,
        assays,
        records,
        target_name: TARGET.into(),
        goal_range: GoalRange::new(0.5, 1.0),
        cost_dims: vec!["usd".into(), "days".into()],
        target_assay,
    })?
    .with_feature_stats()
}

/// The bundled table, parsed through the regular CSV path.
pub fn bundled() -> Result<Dataset> {
    let schema = Schema::from_toml_str(BUNDLED_SCHEMA)?;
    crate::data::read_dataset(
        BUNDLED_CSV.as_bytes(),
        std::path::Path::new("cns_standin.csv"),
        &schema,
    )?
    .with_feature_stats()
}

/// A candidate described only by its QSAR predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnsCandidate {
    pub label: String,
    pub qsar_pgp_1um: f64,
    pub qsar_bcrp_100nm: f64,
    pub qsar_mrt: f64,
}

impl CnsCandidate {
    pub fn root_state(&self, dataset: &Dataset) -> Result<CandidateState> {
        let mut known = BTreeMap::new();
        for (name, value) in
            PREDICTORS
                .iter()
                .zip([self.qsar_pgp_1um, self.qsar_bcrp_100nm, self.qsar_mrt])
        {
            let f = dataset
                .feature_by_name(name)
                .ok_or_else(|| Error::UnknownFeature((*name).into()))?;
            known.insert(f, value);
        }
        Ok(CandidateState::new(known))
    }

    pub fn baseline(&self) -> RuleVerdict {
        rule_based_verdict(self.qsar_pgp_1um, self.qsar_bcrp_100nm)
    }
}

/// Four representative candidates: QSARs that wrongly look poor, a
/// borderline profile, a clear profile and conflicting QSARs.
pub fn representative_candidates() -> Vec<CnsCandidate> {
    let c = |label: &str, pgp, bcrp, mrt| CnsCandidate {
        label: label.into(),
        qsar_pgp_1um: pgp,
        qsar_bcrp_100nm: bcrp,
        qsar_mrt: mrt,
    };
    vec![
        c("opportunity", 4.5, 2.5, 2.0),
        c("borderline", 3.0, 1.8, 1.2),
        c("confirmation", 1.2, 1.1, 1.6),
        c("conflicting", 1.9, 4.5, 1.8),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleVerdict {
    Promising,
    NonPromising,
    Inconclusive,
}

/// QSAR rule of thumb: promising when both efflux predictions are below 2,
/// non-promising when either exceeds 4.
pub fn rule_based_verdict(qsar_pgp_1um: f64, qsar_bcrp_100nm: f64) -> RuleVerdict {
    if qsar_pgp_1um < 2.0 && qsar_bcrp_100nm < 2.0 {
        RuleVerdict::Promising
    } else if qsar_pgp_1um > 4.0 || qsar_bcrp_100nm > 4.0 {
        RuleVerdict::NonPromising
    } else {
        RuleVerdict::Inconclusive
    }
}

/// The conventional plan runs every assay in the panel.
pub fn baseline_panel(dataset: &Dataset) -> AssaySet {
    AssaySet::full(dataset.n_assays())
}
