//! The three attacks, automated: single-person insights, single-person
//! targeting through audience padding, and single-house location targeting.
//! Each run yields an [`AttackReport`] scored against the population's
//! ground truth.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::delivery::{
    performance_report, run_campaign, CampaignOutcome, CampaignSpec, ClickModel, DeliveryError, PerformanceReport,
};
use crate::geo::{self, construct_geofence_with, Coordinate, GeoError, GeofenceParams, LocationSpec};
use crate::insights::{page_likes_dashboard, InsightFilter, InsightsError};
use crate::matching::{create_custom_audience_with, normalize_record, AudienceStore, CustomerRecord, MatchError, MatchOutcome, Matcher};
use crate::model::{AttrValue, CategoryId, PlatformPolicy, Population, UserId};

/// Default bound on the measured region width for the location attack.
pub const DEFAULT_WIDTH_BOUND_M: f64 = 160.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AttackError {
    #[error(transparent)]
    Insights(#[from] InsightsError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Delivery(#[from] DeliveryError),
    #[error(transparent)]
    Match(#[from] MatchError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    SinglePersonInsights,
    SinglePersonTargeting,
    SingleHouseTargeting,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::SinglePersonInsights => "single-person-insights",
            AttackKind::SinglePersonTargeting => "single-person-targeting",
            AttackKind::SingleHouseTargeting => "single-house-targeting",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct AttackReport {
    pub kind: AttackKind,
    pub policy_name: String,
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub inferred: BTreeMap<CategoryId, AttrValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepted: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delivered_only_to_target: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delivered_count: Option<usize>,
    pub cost_cents: u64,
    pub queries_used: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_width_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complicit_needed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub performance: Option<PerformanceReport>,
}

impl AttackReport {
    fn new(kind: AttackKind, policy: &PlatformPolicy) -> Self {
        AttackReport {
            kind,
            policy_name: policy.name.clone(),
            success: false,
            reason: None,
            inferred: BTreeMap::new(),
            accepted: None,
            delivered_only_to_target: None,
            delivered_count: None,
            cost_cents: 0,
            queries_used: 0,
            region_width_m: None,
            complicit_needed: None,
            performance: None,
        }
    }

    fn failed(mut self, reason: impl Into<String>) -> Self {
        self.success = false;
        self.reason = Some(reason.into());
        self
    }
}

/// Resolves a target record to its user, or explains why it cannot.
fn resolve_target(target: &CustomerRecord, matcher: &Matcher) -> Result<UserId, String> {
    let rec = normalize_record(target).map_err(|e| e.to_string())?;
    match matcher.match_record(&rec) {
        MatchOutcome::Unique(u) => Ok(u),
        MatchOutcome::NoMatch => Err("target record matches no user".to_string()),
        MatchOutcome::Ambiguous => Err("target record matches more than one user".to_string()),
    }
}

/// Learns a single user's attributes from the page-likes dashboard.
///
/// Uploads a one-record audience, checks that its unfiltered dashboard
/// appears, then applies one filter at a time: for every category each
/// candidate value is tried, and a value is inferred when it is the only one
/// that keeps the dashboard up. `rng` feeds the platform's noise, if any.
pub fn single_person_insights<R: Rng + ?Sized>(
    target: &CustomerRecord,
    categories: &[CategoryId],
    population: &Population,
    policy: &PlatformPolicy,
    rng: &mut R,
) -> Result<AttackReport, AttackError> {
    let mut report = AttackReport::new(AttackKind::SinglePersonInsights, policy);
    let taxonomy = population.taxonomy();
    let probes = categories
        .iter()
        .map(|id| {
            taxonomy
                .get(id)
                .ok_or_else(|| InsightsError::UnknownCategory(id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let matcher = Matcher::new(population);
    let user_id = match resolve_target(target, &matcher) {
        Ok(u) => u,
        Err(why) => return Ok(report.failed(why)),
    };
    let audience = create_custom_audience_with(core::slice::from_ref(target), &matcher, policy)?;

    report.queries_used = 1;
    if !page_likes_dashboard(&audience, &[], population, policy, rng)?.visible {
        return Ok(report.failed("baseline dashboard did not appear"));
    }

    for cat in &probes {
        let mut visible = Vec::new();
        for value in cat.candidate_values() {
            report.queries_used += 1;
            let filter = InsightFilter::new(cat.id.clone(), value.clone());
            if page_likes_dashboard(&audience, &[filter], population, policy, rng)?.visible {
                visible.push(value);
            }
        }
        if let [only] = visible.as_slice() {
            report.inferred.insert(cat.id.clone(), only.clone());
        }
    }

    let truth = population.user(user_id).expect("matched user exists");
    let all_correct = probes
        .iter()
        .filter(|c| !c.sensitive)
        .all(|c| report.inferred.get(&c.id) == truth.attribute(&c.id));
    report.success = all_correct;
    if !all_correct {
        report.reason = Some("some probed categories were not recovered".to_string());
    }
    Ok(report)
}

/// Reaches one person with a campaign whose custom audience is padded with
/// accounts that cannot receive the ad. Succeeds when the platform accepts
/// the campaign and the ad reaches the target and nobody else; the target is
/// the only one who clicks.
pub fn single_person_targeting(
    target: &CustomerRecord,
    complicit: &[CustomerRecord],
    population: &Population,
    policy: &PlatformPolicy,
    bid_cents: u64,
) -> Result<AttackReport, AttackError> {
    let mut report = AttackReport::new(AttackKind::SinglePersonTargeting, policy);
    report.complicit_needed = Some(policy.complicit_needed());
    let matcher = Matcher::new(population);
    let target_id = match resolve_target(target, &matcher) {
        Ok(u) => u,
        Err(why) => return Ok(report.failed(why)),
    };

    let mut file: Vec<CustomerRecord> = complicit.to_vec();
    file.push(target.clone());
    let audience = create_custom_audience_with(&file, &matcher, policy)?;
    let mut store = AudienceStore::new();
    let audience_id = store.insert(audience);
    let spec = CampaignSpec {
        campaign_id: String::from("single-person"),
        advertiser_id: String::from("adversary"),
        audience: Some(audience_id),
        filters: Vec::new(),
        location: None,
        bid_cents,
    };
    let clicks = ClickModel::TargetAlwaysClicks(BTreeSet::from([target_id]));
    match run_campaign(&spec, &store, population, policy, &clicks, 0)? {
        CampaignOutcome::Rejected(r) => {
            report.accepted = Some(false);
            Ok(report.failed(alloc::format!(
                "campaign rejected ({:?}): counted {} against threshold {}; {} complicit accounts required",
                r.reason,
                r.counted,
                r.threshold,
                policy.complicit_needed()
            )))
        }
        CampaignOutcome::Delivered(log) => {
            let only_target = log.delivered_to.len() == 1 && log.delivered_to.contains(&target_id);
            report.accepted = Some(true);
            report.delivered_only_to_target = Some(only_target);
            report.delivered_count = Some(log.delivered_to.len());
            report.cost_cents = log.total_cost_cents;
            report.performance = Some(performance_report(&log, population));
            report.success = only_target;
            if !only_target {
                report.reason = Some("ad reached users other than the target".to_string());
            }
            Ok(report)
        }
    }
}

/// Emails of the first `n` ad-blocking users other than `exclude`, in id order.
pub fn adblock_accomplices(population: &Population, n: usize, exclude: Option<UserId>) -> Vec<CustomerRecord> {
    population
        .users()
        .iter()
        .filter(|u| u.adblock && Some(u.id) != exclude)
        .filter_map(|u| u.pii.email.as_deref())
        .take(n)
        .map(CustomerRecord::email)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct HouseAttackParams {
    pub geofence: GeofenceParams,
    pub width_bound_m: f64,
    pub samples: usize,
    pub seed: u64,
    pub click_probability: f64,
}

impl Default for HouseAttackParams {
    fn default() -> Self {
        HouseAttackParams {
            geofence: GeofenceParams::default(),
            width_bound_m: DEFAULT_WIDTH_BOUND_M,
            samples: 100_000,
            seed: 0,
            click_probability: 0.02,
        }
    }
}

/// Targets the home at `target` with a perimeter-pin geofence.
pub fn single_house_targeting(
    target: Coordinate,
    params: &HouseAttackParams,
    population: &Population,
    policy: &PlatformPolicy,
    bid_cents: u64,
) -> Result<AttackReport, AttackError> {
    let spec = construct_geofence_with(target, params.geofence, policy)?;
    location_attack(&spec, params, population, policy, bid_cents)
}

/// Runs a location-only campaign on `spec` and scores it: success needs an
/// accepted campaign with a non-empty delivery, every delivered home inside
/// the region, and a measured region width under the bound.
pub fn location_attack(
    spec: &LocationSpec,
    params: &HouseAttackParams,
    population: &Population,
    policy: &PlatformPolicy,
    bid_cents: u64,
) -> Result<AttackReport, AttackError> {
    let mut report = AttackReport::new(AttackKind::SingleHouseTargeting, policy);
    let measure = geo::measure_region(spec, params.samples, params.seed)?;
    report.region_width_m = Some(measure.max_width_m);
    if let Err(e) = spec.validate(policy.min_circle_radius_m) {
        report.accepted = Some(false);
        report.delivered_count = Some(0);
        return Ok(report.failed(alloc::format!("platform refused the location targeting: {e}")));
    }

    let campaign = CampaignSpec {
        campaign_id: String::from("single-house"),
        advertiser_id: String::from("adversary"),
        audience: None,
        filters: Vec::new(),
        location: Some(spec.clone()),
        bid_cents,
    };
    let clicks = ClickModel::FixedProbability(params.click_probability);
    match run_campaign(&campaign, &AudienceStore::new(), population, policy, &clicks, params.seed)? {
        CampaignOutcome::Rejected(r) => {
            report.accepted = Some(false);
            report.delivered_count = Some(0);
            Ok(report.failed(alloc::format!(
                "campaign rejected ({:?}): counted {} against threshold {}",
                r.reason, r.counted, r.threshold
            )))
        }
        CampaignOutcome::Delivered(log) => {
            report.accepted = Some(true);
            report.delivered_count = Some(log.delivered_to.len());
            report.cost_cents = log.total_cost_cents;
            let inside = log
                .delivered_to
                .iter()
                .filter_map(|id| population.user(*id))
                .all(|u| geo::region_contains(spec, u.home));
            let narrow = measure.max_width_m < params.width_bound_m;
            report.success = inside && narrow && !log.delivered_to.is_empty();
            if !report.success {
                report.reason = Some(alloc::format!(
                    "delivered {} users, all inside region: {}, width {:.1} m vs bound {:.1} m",
                    log.delivered_to.len(),
                    inside,
                    measure.max_width_m,
                    params.width_bound_m
                ));
            }
            report.performance = Some(performance_report(&log, population));
            Ok(report)
        }
    }
}
