//! Scenario files: one TOML document naming a population, the policies to
//! test, the attacks to run and the seeds to run them with.
//!
//! ```toml
//! name = "example"
//! seeds = [1, 2]
//! output = "out/example"
//!
//! [population]
//! n-users = 1000
//!
//! [[policies]]
//! name = "facebook-2018"
//!
//! [[policies]]
//! name = "fb-dp"
//! base = "facebook-2018"
//! insights-epsilon = 0.1
//!
//! [[attacks]]
//! kind = "single-person-targeting"
//! complicit = 19
//! ```

use std::collections::BTreeSet;
use std::ops::Range;
use std::path::{Path, PathBuf};

use adsim_core::geo::{Circle, Coordinate, GeofenceParams, LocationSpec};
use adsim_core::model::{
    builtin_policies, builtin_policy, validate_policy, CategoryId, CategoryTaxonomy, CountingRule, PlatformPolicy,
    ThresholdRule, TransparencyMode, MILE_M,
};
use adsim_core::popgen::{GeoLayout, PopulationConfig};
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    #[serde(default)]
    seeds: Option<Spanned<Vec<u64>>>,
    output: Option<PathBuf>,
    population: Option<Spanned<PopulationConfig>>,
    policies: Spanned<Vec<Spanned<PolicyEntry>>>,
    attacks: Spanned<Vec<Spanned<AttackEntry>>>,
}

/// A policy line in a scenario: a preset by name, or a named variant of a
/// preset with some fields overridden.
#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct PolicyEntry {
    pub name: Spanned<String>,
    pub base: Option<Spanned<String>>,
    pub audience_validity_threshold: Option<i64>,
    pub dashboard_threshold: Option<i64>,
    pub delivery_threshold: Option<i64>,
    pub counting_rule: Option<CountingRule>,
    pub threshold_rule: Option<ThresholdRule>,
    pub min_circle_radius_miles: Option<f64>,
    pub insights_epsilon: Option<f64>,
    pub transparency: Option<TransparencyMode>,
    pub respect_opt_out: Option<bool>,
}

impl PolicyEntry {
    fn has_overrides(&self) -> bool {
        self.audience_validity_threshold.is_some()
            || self.dashboard_threshold.is_some()
            || self.delivery_threshold.is_some()
            || self.counting_rule.is_some()
            || self.threshold_rule.is_some()
            || self.min_circle_radius_miles.is_some()
            || self.insights_epsilon.is_some()
            || self.transparency.is_some()
            || self.respect_opt_out.is_some()
    }

    fn apply(&self, mut p: PlatformPolicy) -> PlatformPolicy {
        p.name = self.name.get_ref().clone();
        if let Some(v) = self.audience_validity_threshold {
            p.audience_validity_threshold = v;
        }
        if let Some(v) = self.dashboard_threshold {
            p.dashboard_threshold = v;
        }
        if let Some(v) = self.delivery_threshold {
            p.delivery_threshold = v;
        }
        if let Some(v) = self.counting_rule {
            p.counting_rule = v;
        }
        if let Some(v) = self.threshold_rule {
            p.threshold_rule = v;
        }
        if let Some(v) = self.min_circle_radius_miles {
            p.min_circle_radius_m = v * MILE_M;
        }
        if self.insights_epsilon.is_some() {
            p.insights_epsilon = self.insights_epsilon;
        }
        if let Some(v) = self.transparency {
            p.transparency = v;
        }
        if let Some(v) = self.respect_opt_out {
            p.respect_opt_out = v;
        }
        p
    }
}

/// Which user an attack goes after. With neither field set the runner draws
/// a suitable user from the run seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TargetChoice {
    pub target_user: Option<u32>,
    pub target_email: Option<String>,
}

fn default_bid() -> u64 {
    100
}

fn default_complicit() -> usize {
    19
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct InsightsAttack {
    pub target_user: Option<u32>,
    pub target_email: Option<String>,
    /// Categories to probe; all taxonomy categories when absent.
    pub categories: Option<Vec<CategoryId>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TargetingAttack {
    pub target_user: Option<u32>,
    pub target_email: Option<String>,
    /// Number of ad-blocking accomplices drawn from the population.
    #[serde(default = "default_complicit")]
    pub complicit: usize,
    /// Customer file of accomplices, relative to the scenario file. Replaces
    /// `complicit` when set.
    pub complicit_file: Option<PathBuf>,
    #[serde(default = "default_bid")]
    pub bid_cents: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct CircleConfig {
    pub lat: f64,
    pub lon: f64,
    pub radius_miles: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RegionConfig {
    pub includes: Vec<CircleConfig>,
    #[serde(default)]
    pub excludes: Vec<CircleConfig>,
}

impl RegionConfig {
    pub fn to_spec(&self) -> std::result::Result<LocationSpec, String> {
        let conv = |c: &CircleConfig| {
            Coordinate::new(c.lat, c.lon)
                .map(|center| Circle::new(center, c.radius_miles * MILE_M))
                .map_err(|e| e.to_string())
        };
        Ok(LocationSpec {
            includes: self.includes.iter().map(conv).collect::<std::result::Result<_, _>>()?,
            excludes: self.excludes.iter().map(conv).collect::<std::result::Result<_, _>>()?,
        })
    }
}

fn default_ring() -> usize {
    GeofenceParams::default().ring_size
}

fn default_spacing() -> f64 {
    GeofenceParams::default().spacing
}

fn default_width_bound() -> f64 {
    adsim_core::attacks::DEFAULT_WIDTH_BOUND_M
}

fn default_samples() -> usize {
    100_000
}

fn default_click_probability() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct HouseAttack {
    /// Home to target; defaults to the house of a single-house-cluster layout.
    pub target_home: Option<Coordinate>,
    #[serde(default = "default_ring")]
    pub ring_size: usize,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    /// Explicit include/exclude circles, used instead of the generated geofence.
    pub region: Option<RegionConfig>,
    #[serde(default = "default_width_bound")]
    pub width_bound_m: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_click_probability")]
    pub click_probability: f64,
    #[serde(default = "default_bid")]
    pub bid_cents: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AttackEntry {
    SinglePersonInsights(InsightsAttack),
    SinglePersonTargeting(TargetingAttack),
    SingleHouseTargeting(HouseAttack),
}

impl AttackEntry {
    pub fn kind_str(&self) -> &'static str {
        match self {
            AttackEntry::SinglePersonInsights(_) => "single-person-insights",
            AttackEntry::SinglePersonTargeting(_) => "single-person-targeting",
            AttackEntry::SingleHouseTargeting(_) => "single-house-targeting",
        }
    }

    pub fn target(&self) -> TargetChoice {
        match self {
            AttackEntry::SinglePersonInsights(a) => TargetChoice {
                target_user: a.target_user,
                target_email: a.target_email.clone(),
            },
            AttackEntry::SinglePersonTargeting(a) => TargetChoice {
                target_user: a.target_user,
                target_email: a.target_email.clone(),
            },
            AttackEntry::SingleHouseTargeting(_) => TargetChoice::default(),
        }
    }
}

/// A validated scenario, ready to run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub population: PopulationConfig,
    pub policies: Vec<PlatformPolicy>,
    pub attacks: Vec<AttackEntry>,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    /// Directory relative paths in the scenario resolve against.
    pub base_dir: PathBuf,
}

/// 1-based line of a byte offset.
fn line_of(src: &str, span: &Range<usize>) -> usize {
    src[..span.start.min(src.len())].matches('\n').count() + 1
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario> {
        let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".into());
        Scenario::parse(&src, &path.display().to_string(), &stem, &base)
    }

    /// Parses and validates scenario text. `file` labels diagnostics,
    /// `default_name` names an unnamed scenario, and `base_dir` anchors
    /// relative paths.
    pub fn parse(src: &str, file: &str, default_name: &str, base_dir: &Path) -> Result<Scenario> {
        let raw: RawScenario = toml::from_str(src).map_err(|e| Error::config(file, e.to_string().trim_end()))?;
        let at = |span: &Range<usize>, key: &str, msg: &str| {
            Error::config(file, format!("line {}: `{key}`: {msg}", line_of(src, span)))
        };

        let population = match raw.population {
            Some(p) => {
                let violations = p.get_ref().violations(&CategoryTaxonomy::desk_scale());
                if !violations.is_empty() {
                    let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
                    return Err(at(&p.span(), "population", &list.join("; ")));
                }
                p.into_inner()
            }
            None => PopulationConfig::default(),
        };

        let seeds = match raw.seeds {
            Some(s) if s.get_ref().is_empty() => return Err(at(&s.span(), "seeds", "must list at least one seed")),
            Some(s) => s.into_inner(),
            None => vec![1],
        };

        if raw.policies.get_ref().is_empty() {
            return Err(at(&raw.policies.span(), "policies", "must list at least one policy"));
        }
        let mut policies = Vec::new();
        let mut names = BTreeSet::new();
        for (i, entry) in raw.policies.get_ref().iter().enumerate() {
            let e = entry.get_ref();
            let (key, base) = match &e.base {
                Some(b) => (format!("policies[{i}].base"), b),
                None => (format!("policies[{i}].name"), &e.name),
            };
            let Some(preset) = builtin_policy(base.get_ref()) else {
                let known: Vec<String> = builtin_policies().into_iter().map(|p| p.name).collect();
                let msg = format!("unknown policy `{}` (known presets: {})", base.get_ref(), known.join(", "));
                return Err(at(&base.span(), &key, &msg));
            };
            if e.base.is_none() && e.has_overrides() {
                let msg = "overrides need a `base` preset and a new `name`";
                return Err(at(&entry.span(), &format!("policies[{i}]"), msg));
            }
            let policy = e.apply(preset);
            if let Err(v) = validate_policy(&policy) {
                let list: Vec<String> = v.iter().map(ToString::to_string).collect();
                return Err(at(&entry.span(), &format!("policies[{i}]"), &list.join("; ")));
            }
            if !names.insert(policy.name.clone()) {
                return Err(at(&e.name.span(), &format!("policies[{i}].name"), "duplicate policy name"));
            }
            policies.push(policy);
        }

        if raw.attacks.get_ref().is_empty() {
            return Err(at(&raw.attacks.span(), "attacks", "must list at least one attack"));
        }
        let taxonomy = CategoryTaxonomy::desk_scale();
        let mut attacks = Vec::new();
        for (i, entry) in raw.attacks.get_ref().iter().enumerate() {
            let key = format!("attacks[{i}]");
            if let Err(msg) = check_attack(entry.get_ref(), &population, &taxonomy, base_dir) {
                return Err(at(&entry.span(), &key, &msg));
            }
            attacks.push(entry.get_ref().clone());
        }

        let name = raw.name.unwrap_or_else(|| default_name.to_string());
        let output = raw.output.unwrap_or_else(|| PathBuf::from("out").join(&name));
        Ok(Scenario {
            name,
            population,
            policies,
            attacks,
            seeds,
            output,
            base_dir: base_dir.to_path_buf(),
        })
    }

    /// Seeds `1..=n`, replacing the configured list.
    pub fn with_seed_count(mut self, n: u64) -> Self {
        self.seeds = (1..=n).collect();
        self
    }

    pub fn run_count(&self) -> usize {
        self.attacks.len() * self.policies.len() * self.seeds.len()
    }
}

fn check_target(target_user: Option<u32>, target_email: &Option<String>, pop: &PopulationConfig) -> std::result::Result<(), String> {
    match (target_user, target_email) {
        (Some(_), Some(_)) => Err("set at most one of `target-user` and `target-email`".into()),
        (Some(u), None) if u as usize >= pop.n_users => {
            Err(format!("target-user {u} outside population of {}", pop.n_users))
        }
        _ => Ok(()),
    }
}

fn check_attack(
    attack: &AttackEntry,
    pop: &PopulationConfig,
    taxonomy: &CategoryTaxonomy,
    base_dir: &Path,
) -> std::result::Result<(), String> {
    match attack {
        AttackEntry::SinglePersonInsights(a) => {
            check_target(a.target_user, &a.target_email, pop)?;
            for c in a.categories.iter().flatten() {
                if taxonomy.get(c).is_none() {
                    return Err(format!("unknown category `{c}`"));
                }
            }
            Ok(())
        }
        AttackEntry::SinglePersonTargeting(a) => {
            check_target(a.target_user, &a.target_email, pop)?;
            if let Some(f) = &a.complicit_file {
                let p = base_dir.join(f);
                if !p.is_file() {
                    return Err(format!("complicit-file `{}` not found", p.display()));
                }
            }
            Ok(())
        }
        AttackEntry::SingleHouseTargeting(a) => {
            if a.ring_size < 3 {
                return Err(format!("ring-size must be at least 3, got {}", a.ring_size));
            }
            if !(a.spacing > 1.0 && a.spacing < 2.0) {
                return Err(format!("spacing must lie strictly between 1 and 2, got {}", a.spacing));
            }
            if a.samples < 1000 {
                return Err(format!("samples must be at least 1000, got {}", a.samples));
            }
            if !(0.0..=1.0).contains(&a.click_probability) {
                return Err(format!("click-probability must lie in [0, 1], got {}", a.click_probability));
            }
            if let Some(r) = &a.region {
                r.to_spec()?;
                if r.includes.is_empty() {
                    return Err("region needs at least one include circle".into());
                }
            } else if a.target_home.is_none() && !matches!(pop.geo_layout, GeoLayout::SingleHouseCluster { .. }) {
                return Err("target-home is required unless the layout is single-house-cluster".into());
            }
            Ok(())
        }
    }
}
