//! Domain types shared by every module, and the platform policy that encodes
//! the guardrails an ad platform can apply.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::geo::Coordinate;

/// One mile in meters.
pub const MILE_M: f64 = 1609.344;

/// Category holding the 1-year age bucket.
pub const AGE_CATEGORY: &str = "age-year";
/// Youngest and oldest representable ages in the default taxonomy.
pub const MIN_AGE: u32 = 18;
pub const MAX_AGE: u32 = 80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub u32);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "u{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PageId(pub u32);

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryId(String);

impl CategoryId {
    pub fn new(id: impl Into<String>) -> Self {
        CategoryId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for CategoryId {
    fn from(s: &str) -> Self {
        CategoryId(s.to_string())
    }
}

impl fmt::Display for CategoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Value of a single attribute: a boolean flag or a bucket label.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Bool(bool),
    Bucket(String),
}

impl AttrValue {
    pub fn bucket(label: impl Into<String>) -> Self {
        AttrValue::Bucket(label.into())
    }
}

impl fmt::Display for AttrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrValue::Bool(b) => write!(f, "{b}"),
            AttrValue::Bucket(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CategoryKind {
    Boolean,
    Bucketed(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: CategoryId,
    pub name: String,
    pub kind: CategoryKind,
    pub sensitive: bool,
}

impl Category {
    pub fn boolean(id: &str, name: &str) -> Self {
        Category {
            id: id.into(),
            name: name.to_string(),
            kind: CategoryKind::Boolean,
            sensitive: false,
        }
    }

    pub fn bucketed(id: &str, name: &str, labels: &[&str]) -> Self {
        Category {
            id: id.into(),
            name: name.to_string(),
            kind: CategoryKind::Bucketed(labels.iter().map(|s| s.to_string()).collect()),
            sensitive: false,
        }
    }

    pub fn sensitive(mut self) -> Self {
        self.sensitive = true;
        self
    }

    /// Every value a filter on this category can take, in probe order.
    pub fn candidate_values(&self) -> Vec<AttrValue> {
        match &self.kind {
            CategoryKind::Boolean => alloc::vec![AttrValue::Bool(true), AttrValue::Bool(false)],
            CategoryKind::Bucketed(labels) => {
                labels.iter().map(|l| AttrValue::Bucket(l.clone())).collect()
            }
        }
    }

    pub fn admits(&self, value: &AttrValue) -> bool {
        match (&self.kind, value) {
            (CategoryKind::Boolean, AttrValue::Bool(_)) => true,
            (CategoryKind::Bucketed(labels), AttrValue::Bucket(l)) => labels.iter().any(|x| x == l),
            _ => false,
        }
    }

    pub fn is_boolean(&self) -> bool {
        matches!(self.kind, CategoryKind::Boolean)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TaxonomyError {
    #[error("duplicate category id `{0}`")]
    DuplicateId(CategoryId),
    #[error("bucketed category `{0}` needs at least two labels")]
    TooFewBuckets(CategoryId),
    #[error("bucketed category `{0}` repeats a label")]
    DuplicateBucket(CategoryId),
}

/// Ordered list of targetable categories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Category>", into = "Vec<Category>")]
pub struct CategoryTaxonomy {
    categories: Vec<Category>,
}

impl CategoryTaxonomy {
    pub fn new(categories: Vec<Category>) -> Result<Self, TaxonomyError> {
        for (i, c) in categories.iter().enumerate() {
            if categories[..i].iter().any(|p| p.id == c.id) {
                return Err(TaxonomyError::DuplicateId(c.id.clone()));
            }
            if let CategoryKind::Bucketed(labels) = &c.kind {
                if labels.len() < 2 {
                    return Err(TaxonomyError::TooFewBuckets(c.id.clone()));
                }
                for (j, l) in labels.iter().enumerate() {
                    if labels[..j].contains(l) {
                        return Err(TaxonomyError::DuplicateBucket(c.id.clone()));
                    }
                }
            }
        }
        Ok(CategoryTaxonomy { categories })
    }

    /// The 32-category desk-scale taxonomy.
    pub fn desk_scale() -> Self {
        let ages: Vec<String> = (MIN_AGE..=MAX_AGE).map(|a| a.to_string()).collect();
        let age_refs: Vec<&str> = ages.iter().map(String::as_str).collect();
        let categories = alloc::vec![
            Category::bucketed(
                "relationship-status",
                "Relationship status",
                &["single", "in-a-relationship", "engaged", "married"],
            ),
            Category::bucketed(
                "net-worth",
                "Net worth",
                &["under-100k", "100k-250k", "250k-500k", "500k-1m", "over-1m"],
            ),
            Category::bucketed(
                "household-income",
                "Household income",
                &["under-40k", "40k-75k", "75k-125k", "125k-250k", "over-250k"],
            ),
            Category::bucketed(
                "home-value",
                "Home value",
                &["under-200k", "200k-400k", "400k-750k", "over-750k"],
            ),
            Category::bucketed(AGE_CATEGORY, "Age", &age_refs),
            Category::boolean("lives-with-housemates", "Lives with housemates"),
            Category::boolean("interested-in-hunting", "Interested in hunting"),
            Category::boolean("dieting", "Dieting"),
            Category::boolean("buys-plus-size-clothing", "Buys plus-size clothing"),
            Category::bucketed(
                "frequency-of-travel",
                "Frequency of travel",
                &["never", "rarely", "sometimes", "frequently"],
            ),
            Category::boolean("gambling", "Gambling"),
            Category::bucketed(
                "sexual-orientation",
                "Sexual orientation",
                &["heterosexual", "gay-or-lesbian", "bisexual"],
            )
            .sensitive(),
            Category::bucketed(
                "life-events",
                "Life events",
                &["none", "newly-engaged", "new-job", "recently-moved", "new-parent"],
            )
            .sensitive(),
            Category::bucketed(
                "education-level",
                "Education level",
                &["high-school", "some-college", "bachelors", "graduate"],
            ),
            Category::boolean("home-owner", "Home owner"),
            Category::boolean("has-children", "Has children"),
            Category::boolean("pet-owner", "Pet owner"),
            Category::boolean("frequent-gamer", "Frequent gamer"),
            Category::boolean("interested-in-fitness", "Interested in fitness"),
            Category::boolean("interested-in-cooking", "Interested in cooking"),
            Category::boolean("politically-active", "Politically active"),
            Category::boolean("small-business-owner", "Small business owner"),
            Category::boolean("commuter", "Commuter"),
            Category::boolean("online-shopper", "Online shopper"),
            Category::boolean("interested-in-fashion", "Interested in fashion"),
            Category::boolean("interested-in-outdoors", "Interested in outdoors"),
            Category::boolean("vehicle-owner", "Vehicle owner"),
            Category::bucketed(
                "employment-status",
                "Employment status",
                &["employed", "self-employed", "student", "retired", "unemployed"],
            ),
            Category::boolean("interested-in-technology", "Interested in technology"),
            Category::boolean("expat", "Lives abroad"),
            Category::boolean("interested-in-music", "Interested in music"),
            Category::bucketed(
                "primary-language",
                "Primary language",
                &["english", "spanish", "chinese", "other"],
            ),
        ];
        CategoryTaxonomy::new(categories).expect("desk-scale taxonomy is well formed")
    }

    pub fn get(&self, id: &CategoryId) -> Option<&Category> {
        self.categories.iter().find(|c| &c.id == id)
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn non_sensitive(&self) -> impl Iterator<Item = &Category> {
        self.categories.iter().filter(|c| !c.sensitive)
    }
}

impl Default for CategoryTaxonomy {
    fn default() -> Self {
        Self::desk_scale()
    }
}

impl TryFrom<Vec<Category>> for CategoryTaxonomy {
    type Error = TaxonomyError;

    fn try_from(v: Vec<Category>) -> Result<Self, Self::Error> {
        CategoryTaxonomy::new(v)
    }
}

impl From<CategoryTaxonomy> for Vec<Category> {
    fn from(t: CategoryTaxonomy) -> Self {
        t.categories
    }
}

/// Personally identifying fields. Any subset may be present.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Pii {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub email: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phone: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zip: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub birth_year: Option<String>,
}

impl Pii {
    pub fn is_empty(&self) -> bool {
        self.fields().iter().all(|f| f.is_none())
    }

    pub fn email(email: &str) -> Self {
        Pii {
            email: Some(email.to_string()),
            ..Pii::default()
        }
    }

    pub(crate) fn fields(&self) -> [&Option<String>; 6] {
        [
            &self.email,
            &self.phone,
            &self.first_name,
            &self.last_name,
            &self.zip,
            &self.birth_year,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct UserProfile {
    pub id: UserId,
    pub pii: Pii,
    pub attributes: BTreeMap<CategoryId, AttrValue>,
    pub page_likes: Vec<PageId>,
    pub adblock: bool,
    pub active: bool,
    pub opted_out: bool,
    pub home: Coordinate,
    pub gender: String,
    pub device_type: String,
}

impl UserProfile {
    pub fn attribute(&self, id: &CategoryId) -> Option<&AttrValue> {
        self.attributes.get(id)
    }

    /// Age from the 1-year age bucket, if present.
    pub fn age(&self) -> Option<u32> {
        match self.attributes.get(&CategoryId::from(AGE_CATEGORY))? {
            AttrValue::Bucket(label) => label.parse().ok(),
            AttrValue::Bool(_) => None,
        }
    }

    /// Whether the platform considers this user data-rich enough for the
    /// page-likes dashboard.
    pub fn has_insights_signal(&self) -> bool {
        self.active && !self.page_likes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PopulationError {
    #[error("duplicate user id {0}")]
    DuplicateUser(UserId),
    #[error("user {user}: attribute `{category}` is not in the taxonomy")]
    UnknownCategory { user: UserId, category: CategoryId },
    #[error("user {user}: `{value}` is not a legal value for `{category}`")]
    IllegalValue {
        user: UserId,
        category: CategoryId,
        value: AttrValue,
    },
    #[error("user {user}: page id {page} outside catalog of {page_count}")]
    UnknownPage { user: UserId, page: u32, page_count: u32 },
}

/// A synthetic population: the ground truth the platform holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Population {
    taxonomy: CategoryTaxonomy,
    users: Vec<UserProfile>,
    seed: u64,
    page_count: u32,
}

impl Population {
    /// Builds a population, sorting users by id and checking every profile
    /// against the taxonomy.
    pub fn new(
        taxonomy: CategoryTaxonomy,
        mut users: Vec<UserProfile>,
        seed: u64,
        page_count: u32,
    ) -> Result<Self, PopulationError> {
        users.sort_by_key(|u| u.id);
        for w in users.windows(2) {
            if w[0].id == w[1].id {
                return Err(PopulationError::DuplicateUser(w[0].id));
            }
        }
        for u in &users {
            for (cid, value) in &u.attributes {
                let cat = taxonomy
                    .get(cid)
                    .ok_or_else(|| PopulationError::UnknownCategory {
                        user: u.id,
                        category: cid.clone(),
                    })?;
                if !cat.admits(value) {
                    return Err(PopulationError::IllegalValue {
                        user: u.id,
                        category: cid.clone(),
                        value: value.clone(),
                    });
                }
            }
            if let Some(p) = u.page_likes.iter().find(|p| p.0 >= page_count) {
                return Err(PopulationError::UnknownPage {
                    user: u.id,
                    page: p.0,
                    page_count,
                });
            }
        }
        Ok(Population {
            taxonomy,
            users,
            seed,
            page_count,
        })
    }

    pub fn taxonomy(&self) -> &CategoryTaxonomy {
        &self.taxonomy
    }

    /// Users sorted by id.
    pub fn users(&self) -> &[UserProfile] {
        &self.users
    }

    pub fn user(&self, id: UserId) -> Option<&UserProfile> {
        self.users
            .binary_search_by_key(&id, |u| u.id)
            .ok()
            .map(|i| &self.users[i])
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn page_count(&self) -> u32 {
        self.page_count
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountingRule {
    /// Every eligible member counts toward the delivery threshold.
    CountAllMatched,
    /// Ad-blocking and inactive members are not counted.
    CountOnlyDeliverable,
}

/// How a count is compared against a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdRule {
    #[default]
    AtLeast,
    Above,
}

impl ThresholdRule {
    pub fn admits(self, count: usize, threshold: i64) -> bool {
        let count = count as i64;
        match self {
            ThresholdRule::AtLeast => count >= threshold,
            ThresholdRule::Above => count > threshold,
        }
    }

    /// Smallest count admitted against `threshold`.
    pub fn minimum_admitted(self, threshold: i64) -> u64 {
        let t = threshold.max(0) as u64;
        match self {
            ThresholdRule::AtLeast => t,
            ThresholdRule::Above => t + 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransparencyMode {
    Partial,
    Full,
}

/// Every tunable guardrail of the simulated platform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct PlatformPolicy {
    pub name: String,
    pub audience_validity_threshold: i64,
    pub dashboard_threshold: i64,
    pub delivery_threshold: i64,
    pub counting_rule: CountingRule,
    #[serde(default)]
    pub threshold_rule: ThresholdRule,
    pub min_circle_radius_m: f64,
    #[serde(default)]
    pub insights_epsilon: Option<f64>,
    pub transparency: TransparencyMode,
    pub respect_opt_out: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyViolation {
    #[error("policy name is empty")]
    EmptyName,
    #[error("negative threshold: {0}")]
    NegativeThreshold(&'static str),
    #[error("min-circle-radius must be positive, got {0} m")]
    NonPositiveRadius(f64),
    #[error("insights-epsilon must be positive and finite, got {0}")]
    BadEpsilon(f64),
}

impl PlatformPolicy {
    fn preset(name: &str, threshold: i64, counting_rule: CountingRule) -> Self {
        PlatformPolicy {
            name: name.to_string(),
            audience_validity_threshold: threshold,
            dashboard_threshold: threshold,
            delivery_threshold: threshold,
            counting_rule,
            threshold_rule: ThresholdRule::AtLeast,
            min_circle_radius_m: MILE_M,
            insights_epsilon: None,
            transparency: TransparencyMode::Partial,
            respect_opt_out: false,
        }
    }

    /// Every invariant the policy breaks; empty when valid.
    pub fn violations(&self) -> Vec<PolicyViolation> {
        let mut out = Vec::new();
        if self.name.trim().is_empty() {
            out.push(PolicyViolation::EmptyName);
        }
        for (field, value) in [
            ("audience-validity-threshold", self.audience_validity_threshold),
            ("dashboard-threshold", self.dashboard_threshold),
            ("delivery-threshold", self.delivery_threshold),
        ] {
            if value < 0 {
                out.push(PolicyViolation::NegativeThreshold(field));
            }
        }
        if !(self.min_circle_radius_m > 0.0) || !self.min_circle_radius_m.is_finite() {
            out.push(PolicyViolation::NonPositiveRadius(self.min_circle_radius_m));
        }
        if let Some(eps) = self.insights_epsilon {
            if !(eps > 0.0) || !eps.is_finite() {
                out.push(PolicyViolation::BadEpsilon(eps));
            }
        }
        out
    }

    /// Smallest audience the platform will both accept as valid and deliver to.
    pub fn minimum_audience(&self) -> u64 {
        self.threshold_rule
            .minimum_admitted(self.audience_validity_threshold.max(self.delivery_threshold))
    }

    /// Accounts an adversary must add around a single target to clear the
    /// audience thresholds.
    pub fn complicit_needed(&self) -> u64 {
        self.minimum_audience().saturating_sub(1)
    }

    pub fn admits(&self, count: usize, threshold: i64) -> bool {
        self.threshold_rule.admits(count, threshold)
    }
}

/// Returns every invariant violation of `policy`; `Ok` iff there are none.
pub fn validate_policy(policy: &PlatformPolicy) -> Result<(), Vec<PolicyViolation>> {
    let v = policy.violations();
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

/// Platform presets: Facebook before and after the insights fix, and the
/// PII-audience thresholds surveyed for LinkedIn, Twitter and Google.
pub fn builtin_policies() -> Vec<PlatformPolicy> {
    let mut fb = PlatformPolicy::preset("facebook-2018", 20, CountingRule::CountAllMatched);
    fb.dashboard_threshold = 1;
    alloc::vec![
        fb,
        PlatformPolicy::preset("facebook-postfix", 20, CountingRule::CountAllMatched),
        PlatformPolicy::preset("linkedin", 300, CountingRule::CountAllMatched),
        PlatformPolicy::preset("twitter", 500, CountingRule::CountOnlyDeliverable),
        PlatformPolicy::preset("google", 1000, CountingRule::CountAllMatched),
    ]
}

/// Looks up a builtin preset by name.
pub fn builtin_policy(name: &str) -> Option<PlatformPolicy> {
    builtin_policies().into_iter().find(|p| p.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_thresholds() {
        let p = |n| builtin_policy(n).unwrap();
        assert_eq!(p("google").audience_validity_threshold, 1000);
        assert_eq!(p("facebook-2018").dashboard_threshold, 1);
        assert_eq!(p("facebook-postfix").dashboard_threshold, 20);
        assert_eq!(p("facebook-2018").audience_validity_threshold, 20);
        assert_eq!(p("linkedin").audience_validity_threshold, 300);
        assert_eq!(p("twitter").audience_validity_threshold, 500);
        assert_eq!(p("twitter").counting_rule, CountingRule::CountOnlyDeliverable);
        assert_eq!(builtin_policies().len(), 5);
    }

    #[test]
    fn presets_are_valid() {
        for p in builtin_policies() {
            assert_eq!(validate_policy(&p), Ok(()), "{}", p.name);
        }
    }

    #[test]
    fn negative_threshold_and_zero_radius_are_reported() {
        let mut p = builtin_policy("facebook-2018").unwrap();
        p.delivery_threshold = -1;
        p.min_circle_radius_m = 0.0;
        let v = validate_policy(&p).unwrap_err();
        assert!(v.contains(&PolicyViolation::NegativeThreshold("delivery-threshold")));
        assert!(v.iter().any(|x| matches!(x, PolicyViolation::NonPositiveRadius(_))));
        assert!(v[0].to_string().starts_with("negative threshold"));
    }

    #[test]
    fn complicit_needed_is_threshold_minus_one() {
        let needed: Vec<u64> = ["facebook-2018", "linkedin", "twitter", "google"]
            .iter()
            .map(|n| builtin_policy(n).unwrap().complicit_needed())
            .collect();
        assert_eq!(needed, [19, 299, 499, 999]);

        let mut strict = builtin_policy("facebook-2018").unwrap();
        strict.threshold_rule = ThresholdRule::Above;
        assert_eq!(strict.complicit_needed(), 20);
    }

    #[test]
    fn threshold_rule_flips_the_boundary() {
        assert!(ThresholdRule::AtLeast.admits(20, 20));
        assert!(!ThresholdRule::Above.admits(20, 20));
        assert!(ThresholdRule::Above.admits(21, 20));
        assert!(ThresholdRule::AtLeast.admits(0, 0));
    }

    #[test]
    fn desk_scale_taxonomy_shape() {
        let t = CategoryTaxonomy::desk_scale();
        assert_eq!(t.len(), 32);
        assert_eq!(t.non_sensitive().count(), 30);
        let sensitive: Vec<_> = t.categories().iter().filter(|c| c.sensitive).map(|c| c.id.as_str()).collect();
        assert_eq!(sensitive, ["sexual-orientation", "life-events"]);
        let age = t.get(&AGE_CATEGORY.into()).unwrap();
        assert_eq!(age.candidate_values().len(), (MAX_AGE - MIN_AGE + 1) as usize);
    }

    #[test]
    fn taxonomy_rejects_malformed_categories() {
        let dup = CategoryTaxonomy::new(alloc::vec![Category::boolean("a", "A"), Category::boolean("a", "B")]);
        assert!(matches!(dup, Err(TaxonomyError::DuplicateId(_))));
        let one = CategoryTaxonomy::new(alloc::vec![Category::bucketed("b", "B", &["x"])]);
        assert!(matches!(one, Err(TaxonomyError::TooFewBuckets(_))));
    }
}
