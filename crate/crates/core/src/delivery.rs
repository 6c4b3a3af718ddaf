//! Campaigns: who is eligible, who gets the ad, what it costs, and what the
//! advertiser and the user are told afterwards.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geo::{self, GeoError, LocationSpec};
use crate::insights::{check_filters, satisfies_all, InsightFilter, InsightsError};
use crate::matching::{AudienceId, AudienceStore};
use crate::model::{CountingRule, PlatformPolicy, Population, UserId, AGE_CATEGORY};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DeliveryError {
    #[error("campaign `{0}` has no targeting criteria")]
    NoCriteria(String),
    #[error("campaign references unknown audience `{}`", .0 .0)]
    DanglingAudience(AudienceId),
    #[error(transparent)]
    Filter(#[from] InsightsError),
    #[error("location: {0}")]
    Location(#[from] GeoError),
    #[error("click probability {0} outside [0, 1]")]
    BadClickProbability(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct CampaignSpec {
    pub campaign_id: String,
    pub advertiser_id: String,
    #[serde(default)]
    pub audience: Option<AudienceId>,
    #[serde(default)]
    pub filters: Vec<InsightFilter>,
    #[serde(default)]
    pub location: Option<LocationSpec>,
    /// Price per click in cents.
    pub bid_cents: u64,
}

impl CampaignSpec {
    pub fn validate(&self, policy: &PlatformPolicy) -> Result<(), DeliveryError> {
        if self.audience.is_none() && self.filters.is_empty() && self.location.is_none() {
            return Err(DeliveryError::NoCriteria(self.campaign_id.clone()));
        }
        if let Some(loc) = &self.location {
            loc.validate(policy.min_circle_radius_m)?;
        }
        Ok(())
    }
}

/// Users matching every targeting criterion of the campaign, less opted-out
/// users when the policy honors opt-outs.
pub fn eligible_set(
    spec: &CampaignSpec,
    audiences: &AudienceStore,
    population: &Population,
    policy: &PlatformPolicy,
) -> Result<BTreeSet<UserId>, DeliveryError> {
    spec.validate(policy)?;
    check_filters(&spec.filters, population.taxonomy())?;
    let audience = match &spec.audience {
        Some(id) => Some(
            audiences
                .get(id)
                .ok_or_else(|| DeliveryError::DanglingAudience(id.clone()))?,
        ),
        None => None,
    };
    Ok(population
        .users()
        .iter()
        .filter(|u| audience.map_or(true, |a| a.matched.contains(&u.id)))
        .filter(|u| satisfies_all(u, &spec.filters))
        .filter(|u| spec.location.as_ref().map_or(true, |l| geo::region_contains(l, u.home)))
        .filter(|u| !(policy.respect_opt_out && u.opted_out))
        .map(|u| u.id)
        .collect())
}

/// How delivered users respond to the ad.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClickModel {
    /// Exactly the listed users click when reached.
    TargetAlwaysClicks(BTreeSet<UserId>),
    NobodyClicks,
    /// Each reached user clicks independently with this probability.
    FixedProbability(f64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct DeliveryLog {
    pub delivered_to: BTreeSet<UserId>,
    pub clicks: BTreeSet<UserId>,
    pub total_cost_cents: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectionReason {
    InvalidAudience,
    BelowDeliveryThreshold,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Rejection {
    pub reason: RejectionReason,
    pub counted: usize,
    pub threshold: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "status")]
pub enum CampaignOutcome {
    Delivered(DeliveryLog),
    Rejected(Rejection),
}

impl CampaignOutcome {
    pub fn delivered(&self) -> Option<&DeliveryLog> {
        match self {
            CampaignOutcome::Delivered(log) => Some(log),
            CampaignOutcome::Rejected(_) => None,
        }
    }

    pub fn is_rejected(&self) -> bool {
        matches!(self, CampaignOutcome::Rejected(_))
    }
}

/// Size of the eligible set as the policy's counting rule sees it.
pub fn counted_audience(eligible: &BTreeSet<UserId>, population: &Population, policy: &PlatformPolicy) -> usize {
    match policy.counting_rule {
        CountingRule::CountAllMatched => eligible.len(),
        CountingRule::CountOnlyDeliverable => eligible
            .iter()
            .filter_map(|id| population.user(*id))
            .filter(|u| u.active && !u.adblock)
            .count(),
    }
}

/// Runs a campaign: rejects it when the counted audience is below the
/// delivery threshold (or its custom audience is invalid), otherwise
/// delivers to every eligible user without an ad blocker and draws clicks
/// from `clicks`.
pub fn run_campaign(
    spec: &CampaignSpec,
    audiences: &AudienceStore,
    population: &Population,
    policy: &PlatformPolicy,
    clicks: &ClickModel,
    seed: u64,
) -> Result<CampaignOutcome, DeliveryError> {
    if let ClickModel::FixedProbability(p) = clicks {
        if !(0.0..=1.0).contains(p) {
            return Err(DeliveryError::BadClickProbability(*p));
        }
    }
    let eligible = eligible_set(spec, audiences, population, policy)?;
    let counted = counted_audience(&eligible, population, policy);

    if let Some(a) = spec.audience.as_ref().and_then(|id| audiences.get(id)) {
        if !a.valid {
            return Ok(CampaignOutcome::Rejected(Rejection {
                reason: RejectionReason::InvalidAudience,
                counted,
                threshold: policy.audience_validity_threshold,
            }));
        }
    }
    if !policy.admits(counted, policy.delivery_threshold) {
        return Ok(CampaignOutcome::Rejected(Rejection {
            reason: RejectionReason::BelowDeliveryThreshold,
            counted,
            threshold: policy.delivery_threshold,
        }));
    }

    let delivered_to: BTreeSet<UserId> = eligible
        .into_iter()
        .filter(|id| population.user(*id).is_some_and(|u| !u.adblock))
        .collect();
    let clicked: BTreeSet<UserId> = match clicks {
        ClickModel::TargetAlwaysClicks(targets) => delivered_to.intersection(targets).copied().collect(),
        ClickModel::NobodyClicks => BTreeSet::new(),
        ClickModel::FixedProbability(p) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            delivered_to.iter().copied().filter(|_| rng.gen_bool(*p)).collect()
        }
    };
    let total_cost_cents = clicked.len() as u64 * spec.bid_cents;
    Ok(CampaignOutcome::Delivered(DeliveryLog {
        delivered_to,
        clicks: clicked,
        total_cost_cents,
    }))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct PerformanceReport {
    pub impressions: u64,
    pub age: BTreeMap<String, u64>,
    pub gender: BTreeMap<String, u64>,
    pub device: BTreeMap<String, u64>,
}

/// Five-year band label for an age, e.g. 37 -> "35-39".
pub fn age_band(age: Option<u32>) -> String {
    match age {
        Some(a) => {
            let lo = a / 5 * 5;
            alloc::format!("{}-{}", lo, lo + 4)
        }
        None => "unknown".to_string(),
    }
}

/// Exact impression count and demographic breakdown of a delivery.
pub fn performance_report(log: &DeliveryLog, population: &Population) -> PerformanceReport {
    let mut r = PerformanceReport::default();
    for u in log.delivered_to.iter().filter_map(|id| population.user(*id)) {
        r.impressions += 1;
        *r.age.entry(age_band(u.age())).or_default() += 1;
        *r.gender.entry(u.gender.clone()).or_default() += 1;
        *r.device.entry(u.device_type.clone()).or_default() += 1;
    }
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "criterion", content = "value")]
pub enum DisclosedCriterion {
    Location(LocationSpec),
    Filter(InsightFilter),
    CustomAudience(AudienceId),
    Advertiser(String),
}

/// What a user is told about why they saw the ad. Partial mode discloses at
/// most the location and an age filter, in that order; full mode discloses
/// the audience, location, every filter and the advertiser.
pub fn transparency_report(spec: &CampaignSpec, policy: &PlatformPolicy) -> Vec<DisclosedCriterion> {
    use crate::model::TransparencyMode;
    let mut out = Vec::new();
    match policy.transparency {
        TransparencyMode::Partial => {
            if let Some(loc) = &spec.location {
                out.push(DisclosedCriterion::Location(loc.clone()));
            }
            if let Some(f) = spec.filters.iter().find(|f| f.category.as_str() == AGE_CATEGORY) {
                out.push(DisclosedCriterion::Filter(f.clone()));
            }
        }
        TransparencyMode::Full => {
            if let Some(a) = &spec.audience {
                out.push(DisclosedCriterion::CustomAudience(a.clone()));
            }
            if let Some(loc) = &spec.location {
                out.push(DisclosedCriterion::Location(loc.clone()));
            }
            out.extend(spec.filters.iter().cloned().map(DisclosedCriterion::Filter));
            out.push(DisclosedCriterion::Advertiser(spec.advertiser_id.clone()));
        }
    }
    out
}
