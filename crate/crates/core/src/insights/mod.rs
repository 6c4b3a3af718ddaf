//! Audience Insights: attribute filters over a custom audience and the
//! page-likes dashboard whose appearance is gated on audience size.

mod noise;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use noise::{noisy_count, two_sided_geometric};

use crate::matching::CustomAudience;
use crate::model::{AttrValue, CategoryId, CategoryTaxonomy, PageId, PlatformPolicy, Population, UserId, UserProfile};

/// Audiences smaller than this never see a dashboard filtered on a
/// sensitive category, whatever the configured dashboard threshold.
pub const SENSITIVE_MIN_AUDIENCE: i64 = 20;

/// Most pages the dashboard lists.
pub const MAX_TOP_PAGES: usize = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InsightsError {
    #[error("unknown category `{0}`")]
    UnknownCategory(CategoryId),
    #[error("`{value}` is not a legal value for `{category}`")]
    IllegalValue { category: CategoryId, value: AttrValue },
    #[error("epsilon must be positive and finite, got {0}")]
    BadEpsilon(f64),
    #[error("policy `{0}` has no insights epsilon")]
    NoEpsilon(alloc::string::String),
}

/// Keep only users whose `category` equals `value`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct InsightFilter {
    pub category: CategoryId,
    pub value: AttrValue,
}

impl InsightFilter {
    pub fn new(category: impl Into<CategoryId>, value: AttrValue) -> Self {
        InsightFilter {
            category: category.into(),
            value,
        }
    }

    pub fn matches(&self, user: &UserProfile) -> bool {
        user.attributes.get(&self.category) == Some(&self.value)
    }
}

impl From<&str> for InsightFilter {
    /// `category=value`, where `true`/`false` are boolean values.
    fn from(s: &str) -> Self {
        let (c, v) = s.split_once('=').unwrap_or((s, "true"));
        let value = match v {
            "true" => AttrValue::Bool(true),
            "false" => AttrValue::Bool(false),
            other => AttrValue::bucket(other),
        };
        InsightFilter::new(c, value)
    }
}

/// Checks every filter against the taxonomy.
pub fn check_filters(filters: &[InsightFilter], taxonomy: &CategoryTaxonomy) -> Result<(), InsightsError> {
    for f in filters {
        let cat = taxonomy
            .get(&f.category)
            .ok_or_else(|| InsightsError::UnknownCategory(f.category.clone()))?;
        if !cat.admits(&f.value) {
            return Err(InsightsError::IllegalValue {
                category: f.category.clone(),
                value: f.value.clone(),
            });
        }
    }
    Ok(())
}

pub fn satisfies_all(user: &UserProfile, filters: &[InsightFilter]) -> bool {
    filters.iter().all(|f| f.matches(user))
}

/// Matched users satisfying every filter (conjunction).
pub fn filtered_audience(
    audience: &CustomAudience,
    filters: &[InsightFilter],
    population: &Population,
) -> Result<BTreeSet<UserId>, InsightsError> {
    check_filters(filters, population.taxonomy())?;
    Ok(audience
        .matched
        .iter()
        .filter_map(|id| population.user(*id))
        .filter(|u| satisfies_all(u, filters))
        .map(|u| u.id)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct DashboardResult {
    pub visible: bool,
    pub top_pages: Vec<PageId>,
}

impl DashboardResult {
    fn hidden() -> Self {
        DashboardResult {
            visible: false,
            top_pages: Vec::new(),
        }
    }
}

fn touches_sensitive(filters: &[InsightFilter], taxonomy: &CategoryTaxonomy) -> bool {
    filters
        .iter()
        .any(|f| taxonomy.get(&f.category).is_some_and(|c| c.sensitive))
}

fn rank_pages(mut counts: Vec<(PageId, i64)>) -> Vec<PageId> {
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    counts.into_iter().take(MAX_TOP_PAGES).map(|(p, _)| p).collect()
}

fn like_counts<'a>(users: impl Iterator<Item = &'a UserProfile>) -> BTreeMap<PageId, i64> {
    let mut counts = BTreeMap::new();
    for u in users {
        let liked: BTreeSet<PageId> = u.page_likes.iter().copied().collect();
        for p in liked {
            *counts.entry(p).or_insert(0) += 1;
        }
    }
    counts
}

/// The page-likes dashboard for an audience narrowed by `filters`.
///
/// Only active users with at least one page like feed the dashboard. With
/// exact counts it appears when that set is non-empty and clears the
/// dashboard threshold; with an insights epsilon the threshold test uses a
/// noisy count and pages are ranked by noisy per-page counts. Filters on a
/// sensitive category hide it for audiences below
/// `max(dashboard threshold, SENSITIVE_MIN_AUDIENCE)`. `rng` is only drawn
/// from under an insights epsilon.
pub fn page_likes_dashboard<R: Rng + ?Sized>(
    audience: &CustomAudience,
    filters: &[InsightFilter],
    population: &Population,
    policy: &PlatformPolicy,
    rng: &mut R,
) -> Result<DashboardResult, InsightsError> {
    let filtered = filtered_audience(audience, filters, population)?;
    let signal: Vec<&UserProfile> = filtered
        .iter()
        .filter_map(|id| population.user(*id))
        .filter(|u| u.has_insights_signal())
        .collect();
    let size = signal.len();

    let sensitive_floor = policy.dashboard_threshold.max(SENSITIVE_MIN_AUDIENCE);
    if touches_sensitive(filters, population.taxonomy()) && !policy.admits(size, sensitive_floor) {
        return Ok(DashboardResult::hidden());
    }

    match policy.insights_epsilon {
        None => {
            if size == 0 || !policy.admits(size, policy.dashboard_threshold) {
                return Ok(DashboardResult::hidden());
            }
            let counts = like_counts(signal.iter().copied());
            Ok(DashboardResult {
                visible: true,
                top_pages: rank_pages(counts.into_iter().collect()),
            })
        }
        Some(eps) => {
            let noisy = noisy_count(size as u64, eps, rng)?;
            if !policy.admits(noisy as usize, policy.dashboard_threshold) || population.page_count() == 0 {
                return Ok(DashboardResult::hidden());
            }
            let exact = like_counts(signal.iter().copied());
            let mut noisy_pages = Vec::with_capacity(population.page_count() as usize);
            for p in 0..population.page_count() {
                let page = PageId(p);
                let c = exact.get(&page).copied().unwrap_or(0);
                noisy_pages.push((page, c + two_sided_geometric(eps, rng)?));
            }
            Ok(DashboardResult {
                visible: true,
                top_pages: rank_pages(noisy_pages),
            })
        }
    }
}

/// Size of the filtered audience plus two-sided geometric noise of scale
/// 1/epsilon, clamped at zero.
pub fn noisy_audience_count<R: Rng + ?Sized>(
    audience: &CustomAudience,
    filters: &[InsightFilter],
    population: &Population,
    policy: &PlatformPolicy,
    rng: &mut R,
) -> Result<u64, InsightsError> {
    let eps = policy
        .insights_epsilon
        .ok_or_else(|| InsightsError::NoEpsilon(policy.name.clone()))?;
    noise::check_epsilon(eps)?;
    let n = filtered_audience(audience, filters, population)?.len();
    noisy_count(n as u64, eps, rng)
}
