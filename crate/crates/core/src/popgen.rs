//! Seeded synthetic populations.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geo::{destination, Coordinate};
use crate::model::{
    AttrValue, CategoryId, CategoryTaxonomy, PageId, Pii, Population, PopulationError, UserId, UserProfile,
};

/// Reference year for deriving birth years from ages.
pub const REFERENCE_YEAR: u32 = 2018;
/// Residents of a single-house cluster live within this distance of its center.
pub const HOUSE_RADIUS_M: f64 = 30.0;

const FIRST_NAMES: &[&str] = &[
    "James", "Mary", "John", "Patricia", "Robert", "Jennifer", "Michael", "Linda", "William", "Elizabeth",
    "David", "Barbara", "Richard", "Susan", "Joseph", "Jessica", "Thomas", "Sarah", "Carlos", "Karen",
    "Wei", "Nancy", "Daniel", "Lisa", "Matthew", "Betty", "Anthony", "Maria", "Mark", "Sandra",
    "Ahmed", "Ashley", "Steven", "Priya", "Paul", "Emily", "Andrew", "Donna", "Kenji", "Michelle",
];
const LAST_NAMES: &[&str] = &[
    "Smith", "Johnson", "Williams", "Brown", "Jones", "Garcia", "Miller", "Davis", "Rodriguez", "Martinez",
    "Hernandez", "Lopez", "Gonzalez", "Wilson", "Anderson", "Thomas", "Taylor", "Moore", "Jackson", "Martin",
    "Lee", "Perez", "Thompson", "White", "Harris", "Sanchez", "Clark", "Ramirez", "Lewis", "Robinson",
    "Walker", "Young", "Allen", "King", "Wright", "Scott", "Torres", "Nguyen", "Hill", "Flores",
];
const ZIPS: &[&str] = &[
    "90007", "90012", "90024", "90034", "90045", "90064", "90210", "90291", "91101", "91505",
];
const GENDERS: &[(&str, f64)] = &[("female", 0.49), ("male", 0.49), ("non-binary", 0.02)];
const DEVICES: &[(&str, f64)] = &[("mobile", 0.6), ("desktop", 0.3), ("tablet", 0.1)];

/// Where homes are placed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum GeoLayout {
    /// Square grid of `blocks` x `blocks` city blocks around `center`; each
    /// home sits near a random block corner.
    CityGrid {
        center: Coordinate,
        blocks: u32,
        block_spacing_m: f64,
    },
    /// Homes uniform over a disc.
    RuralScatter { center: Coordinate, radius_m: f64 },
    /// The first `residents` users share one house at `center`; everyone else
    /// lives uniformly between `keep_out_m` and `spread_m` from it.
    SingleHouseCluster {
        center: Coordinate,
        residents: usize,
        #[serde(default = "default_spread")]
        spread_m: f64,
        #[serde(default = "default_keep_out")]
        keep_out_m: f64,
    },
}

fn default_spread() -> f64 {
    8000.0
}

fn default_keep_out() -> f64 {
    400.0
}

impl Default for GeoLayout {
    fn default() -> Self {
        GeoLayout::CityGrid {
            center: Coordinate::new(34.0522, -118.2437).expect("valid"),
            blocks: 40,
            block_spacing_m: 120.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default, deny_unknown_fields)]
pub struct PopulationConfig {
    pub n_users: usize,
    pub seed: u64,
    pub adblock_fraction: f64,
    pub inactive_fraction: f64,
    pub optout_fraction: f64,
    /// Per-category value weights, in candidate-value order. Categories not
    /// listed are uniform.
    pub attribute_weights: BTreeMap<CategoryId, Vec<f64>>,
    pub geo_layout: GeoLayout,
    pub pages: u32,
    /// Probability that a user copies the previous user's first and last name.
    pub name_collision_rate: f64,
    pub max_likes_per_user: u32,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            n_users: 1000,
            seed: 42,
            adblock_fraction: 0.1,
            inactive_fraction: 0.1,
            optout_fraction: 0.0,
            attribute_weights: BTreeMap::new(),
            geo_layout: GeoLayout::default(),
            pages: 200,
            name_collision_rate: 0.02,
            max_likes_per_user: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigViolation {
    FractionOutOfRange { field: &'static str, value: f64 },
    UnknownCategory(CategoryId),
    WeightCount { category: CategoryId, expected: usize, got: usize },
    BadWeights(CategoryId),
    NoPages,
    NoLikes,
    TooManyResidents { residents: usize, n_users: usize },
    BadGeometry(&'static str),
}

impl fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigViolation::FractionOutOfRange { field, value } => write!(f, "{field} = {value} is outside [0, 1]"),
            ConfigViolation::UnknownCategory(c) => write!(f, "attribute-weights: unknown category `{c}`"),
            ConfigViolation::WeightCount { category, expected, got } => {
                write!(f, "attribute-weights.{category}: expected {expected} weights, got {got}")
            }
            ConfigViolation::BadWeights(c) => {
                write!(f, "attribute-weights.{c}: weights must be non-negative with a positive sum")
            }
            ConfigViolation::NoPages => f.write_str("pages must be at least 1"),
            ConfigViolation::NoLikes => f.write_str("max-likes-per-user must be at least 1"),
            ConfigViolation::TooManyResidents { residents, n_users } => {
                write!(f, "geo-layout.residents = {residents} exceeds n-users = {n_users}")
            }
            ConfigViolation::BadGeometry(what) => write!(f, "geo-layout: {what}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PopgenError {
    #[error("invalid population config: {}", join(.0))]
    Invalid(Vec<ConfigViolation>),
    #[error(transparent)]
    Population(#[from] PopulationError),
}

fn join(v: &[ConfigViolation]) -> String {
    let mut s = String::new();
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push_str("; ");
        }
        s.push_str(&x.to_string());
    }
    s
}

impl PopulationConfig {
    pub fn violations(&self, taxonomy: &CategoryTaxonomy) -> Vec<ConfigViolation> {
        let mut out = Vec::new();
        for (field, value) in [
            ("adblock-fraction", self.adblock_fraction),
            ("inactive-fraction", self.inactive_fraction),
            ("optout-fraction", self.optout_fraction),
            ("name-collision-rate", self.name_collision_rate),
        ] {
            if !(0.0..=1.0).contains(&value) {
                out.push(ConfigViolation::FractionOutOfRange { field, value });
            }
        }
        for (cid, weights) in &self.attribute_weights {
            let Some(cat) = taxonomy.get(cid) else {
                out.push(ConfigViolation::UnknownCategory(cid.clone()));
                continue;
            };
            let expected = cat.candidate_values().len();
            if weights.len() != expected {
                out.push(ConfigViolation::WeightCount {
                    category: cid.clone(),
                    expected,
                    got: weights.len(),
                });
            } else if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || !(weights.iter().sum::<f64>() > 0.0) {
                out.push(ConfigViolation::BadWeights(cid.clone()));
            }
        }
        if self.pages == 0 {
            out.push(ConfigViolation::NoPages);
        }
        if self.max_likes_per_user == 0 {
            out.push(ConfigViolation::NoLikes);
        }
        match &self.geo_layout {
            GeoLayout::CityGrid { blocks, block_spacing_m, .. } => {
                if *blocks == 0 || !(*block_spacing_m > 0.0) {
                    out.push(ConfigViolation::BadGeometry("city-grid needs blocks >= 1 and positive spacing"));
                }
            }
            GeoLayout::RuralScatter { radius_m, .. } => {
                if !(*radius_m > 0.0) {
                    out.push(ConfigViolation::BadGeometry("rural-scatter radius must be positive"));
                }
            }
            GeoLayout::SingleHouseCluster {
                residents,
                spread_m,
                keep_out_m,
                ..
            } => {
                if *residents > self.n_users {
                    out.push(ConfigViolation::TooManyResidents {
                        residents: *residents,
                        n_users: self.n_users,
                    });
                }
                if !(*keep_out_m >= HOUSE_RADIUS_M && *spread_m > *keep_out_m) {
                    out.push(ConfigViolation::BadGeometry(
                        "single-house-cluster needs 30 m <= keep-out-m < spread-m",
                    ));
                }
            }
        }
        out
    }
}

/// Uniform point in the annulus [inner, outer] meters around `center`.
fn point_in_annulus(center: Coordinate, inner: f64, outer: f64, rng: &mut impl Rng) -> Coordinate {
    let bearing = rng.gen::<f64>() * 360.0;
    let (a, b) = (inner * inner, outer * outer);
    let dist = libm::sqrt(a + (b - a) * rng.gen::<f64>());
    destination(center, bearing, dist)
}

fn place_home(layout: &GeoLayout, index: usize, rng: &mut impl Rng) -> Coordinate {
    match layout {
        GeoLayout::CityGrid {
            center,
            blocks,
            block_spacing_m,
        } => {
            let half = (*blocks as f64 - 1.0) / 2.0;
            let bx = rng.gen_range(0..*blocks) as f64 - half;
            let by = rng.gen_range(0..*blocks) as f64 - half;
            let jitter = block_spacing_m / 4.0;
            let east = bx * block_spacing_m + rng.gen_range(-jitter..=jitter);
            let north = by * block_spacing_m + rng.gen_range(-jitter..=jitter);
            let p = destination(*center, 0.0, north);
            destination(p, 90.0, east)
        }
        GeoLayout::RuralScatter { center, radius_m } => point_in_annulus(*center, 0.0, *radius_m, rng),
        GeoLayout::SingleHouseCluster {
            center,
            residents,
            spread_m,
            keep_out_m,
        } => {
            if index < *residents {
                point_in_annulus(*center, 0.0, HOUSE_RADIUS_M, rng)
            } else {
                point_in_annulus(*center, *keep_out_m, *spread_m, rng)
            }
        }
    }
}

fn pick<'a>(table: &[(&'a str, f64)], rng: &mut impl Rng) -> &'a str {
    let idx = WeightedIndex::new(table.iter().map(|(_, w)| *w)).expect("static weights");
    table[idx.sample(rng)].0
}

/// Generates a population over the desk-scale taxonomy.
pub fn generate(config: &PopulationConfig) -> Result<Population, PopgenError> {
    generate_with_taxonomy(config, CategoryTaxonomy::desk_scale())
}

pub fn generate_with_taxonomy(config: &PopulationConfig, taxonomy: CategoryTaxonomy) -> Result<Population, PopgenError> {
    let violations = config.violations(&taxonomy);
    if !violations.is_empty() {
        return Err(PopgenError::Invalid(violations));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let samplers: Vec<(CategoryId, Vec<AttrValue>, WeightedIndex<f64>)> = taxonomy
        .categories()
        .iter()
        .map(|c| {
            let values = c.candidate_values();
            let weights = config
                .attribute_weights
                .get(&c.id)
                .cloned()
                .unwrap_or_else(|| alloc::vec![1.0; values.len()]);
            let w = WeightedIndex::new(weights).expect("weights validated");
            (c.id.clone(), values, w)
        })
        .collect();

    let mut users: Vec<UserProfile> = Vec::with_capacity(config.n_users);
    for i in 0..config.n_users {
        let mut attributes = BTreeMap::new();
        for (cid, values, w) in &samplers {
            attributes.insert(cid.clone(), values[w.sample(&mut rng)].clone());
        }
        let (first, last) = match users.last() {
            Some(prev) if rng.gen_bool(config.name_collision_rate) => {
                (prev.pii.first_name.clone(), prev.pii.last_name.clone())
            }
            _ => (
                Some(FIRST_NAMES[rng.gen_range(0..FIRST_NAMES.len())].to_string()),
                Some(LAST_NAMES[rng.gen_range(0..LAST_NAMES.len())].to_string()),
            ),
        };
        let zip = ZIPS[rng.gen_range(0..ZIPS.len())].to_string();
        let adblock = rng.gen_bool(config.adblock_fraction);
        let active = !rng.gen_bool(config.inactive_fraction);
        let opted_out = rng.gen_bool(config.optout_fraction);
        let n_likes = if active {
            rng.gen_range(1..=config.max_likes_per_user)
        } else {
            rng.gen_range(0..=2u32)
        }
        .min(config.pages) as usize;
        let mut page_likes: Vec<PageId> = index::sample(&mut rng, config.pages as usize, n_likes)
            .into_iter()
            .map(|p| PageId(p as u32))
            .collect();
        page_likes.sort();
        let gender = pick(GENDERS, &mut rng).to_string();
        let device_type = pick(DEVICES, &mut rng).to_string();
        let home = place_home(&config.geo_layout, i, &mut rng);

        let mut user = UserProfile {
            id: UserId(i as u32),
            pii: Pii {
                email: Some(alloc::format!("user{i:06}@example.com")),
                phone: Some(alloc::format!("555{i:07}")),
                first_name: first,
                last_name: last,
                zip: Some(zip),
                birth_year: None,
            },
            attributes,
            page_likes,
            adblock,
            active,
            opted_out,
            home,
            gender,
            device_type,
        };
        user.pii.birth_year = user.age().map(|a| (REFERENCE_YEAR - a).to_string());
        users.push(user);
    }
    Ok(Population::new(taxonomy, users, config.seed, config.pages)?)
}
