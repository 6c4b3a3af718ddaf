//! Executes a scenario: every attack against every policy for every seed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use adsim_core::attacks::{
    adblock_accomplices, location_attack, single_house_targeting, single_person_insights, single_person_targeting,
    AttackReport, HouseAttackParams,
};
use adsim_core::geo::{Coordinate, GeofenceParams};
use adsim_core::matching::CustomerRecord;
use adsim_core::model::{CategoryId, Pii, PlatformPolicy, Population, UserId, UserProfile};
use adsim_core::popgen::{generate, GeoLayout};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::formats::read_customer_file;
use crate::scenario::{AttackEntry, Scenario};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const MATRIX_FILE: &str = "matrix.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORTS_DIR: &str = "reports";
const TIMESTAMP_KEY: &str = "generated-at";

/// Whom or what a run attacked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum TargetInfo {
    User { id: Option<UserId>, email: String },
    Home { at: Coordinate },
    Region,
}

/// One run's self-contained report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RunRecord {
    pub scenario: String,
    pub attack_index: usize,
    pub seed: u64,
    pub attack: AttackEntry,
    pub target: TargetInfo,
    pub policy: PlatformPolicy,
    pub report: AttackReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub runs: usize,
    pub successes: usize,
    pub files: Vec<PathBuf>,
}

struct Prepared {
    population: Population,
    /// Complicit files loaded up front, by attack index.
    complicit: Vec<Option<Vec<CustomerRecord>>>,
}

fn prepare(scenario: &Scenario) -> Result<Prepared> {
    let population = generate(&scenario.population).map_err(|e| Error::config("population", e.to_string()))?;
    let mut complicit = Vec::new();
    for a in &scenario.attacks {
        let loaded = match a {
            AttackEntry::SinglePersonTargeting(t) => match &t.complicit_file {
                Some(f) => {
                    let path = scenario.base_dir.join(f);
                    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
                    let recs = read_customer_file(file).map_err(|e| match e {
                        crate::formats::FormatError::Io(io) => Error::io(&path, io),
                        other => Error::config(path.display().to_string(), other.to_string()),
                    })?;
                    Some(recs)
                }
                None => None,
            },
            _ => None,
        };
        complicit.push(loaded);
    }
    Ok(Prepared { population, complicit })
}

fn run_rng(seed: u64, attack_index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (attack_index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Picks the attacked user: the configured one, or a seeded draw from the
/// users matching `suitable` (any user if none do).
fn pick_target<'a>(
    entry: &AttackEntry,
    pop: &'a Population,
    rng: &mut ChaCha8Rng,
    suitable: impl Fn(&UserProfile) -> bool,
) -> Result<(Option<&'a UserProfile>, CustomerRecord)> {
    let choice = entry.target();
    if let Some(email) = choice.target_email {
        let user = pop.users().iter().find(|u| u.pii.email.as_deref() == Some(email.as_str()));
        return Ok((user, Pii::email(&email)));
    }
    let user = match choice.target_user {
        Some(id) => pop.user(UserId(id)),
        None => {
            let pool: Vec<&UserProfile> = pop.users().iter().filter(|u| suitable(u)).collect();
            if pool.is_empty() {
                pop.users().choose(rng)
            } else {
                pool.choose(rng).copied()
            }
        }
    };
    let user = user.ok_or_else(|| Error::config("population", "no user available as a target"))?;
    Ok((Some(user), user.pii.clone()))
}

fn user_target(user: Option<&UserProfile>, record: &CustomerRecord) -> TargetInfo {
    TargetInfo::User {
        id: user.map(|u| u.id),
        email: record.email.clone().unwrap_or_default(),
    }
}

fn run_one(
    scenario: &Scenario,
    prep: &Prepared,
    attack_index: usize,
    policy: &PlatformPolicy,
    seed: u64,
) -> Result<RunRecord> {
    let pop = &prep.population;
    let entry = &scenario.attacks[attack_index];
    let mut rng = run_rng(seed, attack_index);
    let label = || format!("attacks[{attack_index}] {} / {} / seed {seed}", entry.kind_str(), policy.name);
    let wrap = |source| Error::Run { run: label(), source };

    let (target, report) = match entry {
        AttackEntry::SinglePersonInsights(a) => {
            let (user, record) = pick_target(entry, pop, &mut rng, UserProfile::has_insights_signal)?;
            let categories: Vec<CategoryId> = match &a.categories {
                Some(c) => c.clone(),
                None => pop.taxonomy().categories().iter().map(|c| c.id.clone()).collect(),
            };
            let mut noise = ChaCha8Rng::seed_from_u64(seed);
            let report = single_person_insights(&record, &categories, pop, policy, &mut noise).map_err(wrap)?;
            (user_target(user, &record), report)
        }
        AttackEntry::SinglePersonTargeting(a) => {
            let (user, record) = pick_target(entry, pop, &mut rng, |u| u.active && !u.adblock)?;
            let complicit = match &prep.complicit[attack_index] {
                Some(recs) => recs.clone(),
                None => adblock_accomplices(pop, a.complicit, user.map(|u| u.id)),
            };
            let report = single_person_targeting(&record, &complicit, pop, policy, a.bid_cents).map_err(wrap)?;
            (user_target(user, &record), report)
        }
        AttackEntry::SingleHouseTargeting(a) => {
            let params = HouseAttackParams {
                geofence: GeofenceParams {
                    ring_size: a.ring_size,
                    spacing: a.spacing,
                },
                width_bound_m: a.width_bound_m,
                samples: a.samples,
                seed,
                click_probability: a.click_probability,
            };
            match &a.region {
                Some(region) => {
                    let spec = region.to_spec().map_err(|m| Error::config(label(), m))?;
                    let report = location_attack(&spec, &params, pop, policy, a.bid_cents).map_err(wrap)?;
                    (TargetInfo::Region, report)
                }
                None => {
                    let home = match (a.target_home, &scenario.population.geo_layout) {
                        (Some(h), _) => h,
                        (None, GeoLayout::SingleHouseCluster { center, .. }) => *center,
                        (None, _) => return Err(Error::config(label(), "target-home is required")),
                    };
                    let report = single_house_targeting(home, &params, pop, policy, a.bid_cents).map_err(wrap)?;
                    (TargetInfo::Home { at: home }, report)
                }
            }
        }
    };
    Ok(RunRecord {
        scenario: scenario.name.clone(),
        attack_index,
        seed,
        attack: entry.clone(),
        target,
        policy: policy.clone(),
        report,
    })
}

/// Runs every (attack, policy, seed) combination, in parallel, returning the
/// records in attack-major, then policy, then seed order.
pub fn execute(scenario: &Scenario) -> Result<Vec<RunRecord>> {
    let prep = prepare(scenario)?;
    let mut keys = Vec::with_capacity(scenario.run_count());
    for a in 0..scenario.attacks.len() {
        for p in &scenario.policies {
            for &s in &scenario.seeds {
                keys.push((a, p, s));
            }
        }
    }
    keys.par_iter()
        .map(|&(a, p, s)| run_one(scenario, &prep, a, p, s))
        .collect()
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

pub fn report_file_name(r: &RunRecord) -> String {
    format!(
        "{:02}-{}__{}__seed{}.json",
        r.attack_index,
        r.report.kind.as_str(),
        sanitize(&r.policy.name),
        r.seed
    )
}

fn width_cell(w: Option<f64>) -> String {
    w.map(|w| format!("{w:.1}")).unwrap_or_default()
}

/// One row per run.
pub fn summary_csv(records: &[RunRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["attack_index", "attack", "policy", "seed", "success", "cost_cents", "queries", "region_width_m"])
        .expect("in-memory write");
    for r in records {
        w.write_record([
            r.attack_index.to_string(),
            r.report.kind.as_str().to_string(),
            r.policy.name.clone(),
            r.seed.to_string(),
            r.report.success.to_string(),
            r.report.cost_cents.to_string(),
            r.report.queries_used.to_string(),
            width_cell(r.report.region_width_m),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

/// Policy x attack matrix aggregated over seeds.
pub fn matrix_csv(records: &[RunRecord]) -> String {
    let mut cells: Vec<((usize, String), Vec<&RunRecord>)> = Vec::new();
    for r in records {
        let key = (r.attack_index, r.policy.name.clone());
        match cells.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => cells.push((key, vec![r])),
        }
    }
    let mut out = String::from("attack_index,attack,policy,runs,success_rate,mean_cost_cents,mean_queries\n");
    for ((index, policy), runs) in &cells {
        let n = runs.len() as f64;
        let rate = runs.iter().filter(|r| r.report.success).count() as f64 / n;
        let cost = runs.iter().map(|r| r.report.cost_cents as f64).sum::<f64>() / n;
        let queries = runs.iter().map(|r| r.report.queries_used as f64).sum::<f64>() / n;
        let _ = writeln!(
            out,
            "{index},{},{},{},{rate:.3},{cost:.1},{queries:.1}",
            runs[0].report.kind.as_str(),
            csv_field(policy),
            runs.len()
        );
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Serialize)]
#[serde(rename_all = "kebab-case")]
struct ManifestEntry {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
#[serde(rename_all = "kebab-case")]
struct Manifest<'a> {
    scenario: &'a str,
    generated_at: u64,
    runs: usize,
    successes: usize,
    files: Vec<ManifestEntry>,
}

/// Replaces the manifest's generation time with zero so two runs can be
/// compared byte for byte.
pub fn normalize_timestamps(manifest: &str) -> String {
    match serde_json::from_str::<serde_json::Value>(manifest) {
        Ok(mut v) => {
            if let Some(t) = v.get_mut(TIMESTAMP_KEY) {
                *t = serde_json::Value::from(0);
            }
            serde_json::to_string_pretty(&v).expect("json value serializes")
        }
        Err(_) => manifest.to_string(),
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes reports, summary, matrix and manifest under `out_dir`. Writes are
/// sequential and in record order.
pub fn write_outputs(scenario: &Scenario, records: &[RunRecord], out_dir: &Path) -> Result<RunSummary> {
    let reports = out_dir.join(REPORTS_DIR);
    fs::create_dir_all(&reports).map_err(|e| Error::io(&reports, e))?;
    let mut entries = Vec::new();
    let mut files = Vec::new();
    let mut emit = |rel: String, bytes: Vec<u8>| -> Result<()> {
        let path = out_dir.join(&rel);
        write(&path, &bytes)?;
        entries.push(ManifestEntry {
            path: rel,
            sha256: Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect(),
        });
        files.push(path);
        Ok(())
    };
    for r in records {
        let mut json = serde_json::to_vec_pretty(r).expect("records serialize");
        json.push(b'\n');
        emit(format!("{REPORTS_DIR}/{}", report_file_name(r)), json)?;
    }
    emit(SUMMARY_FILE.to_string(), summary_csv(records).into_bytes())?;
    emit(MATRIX_FILE.to_string(), matrix_csv(records).into_bytes())?;

    let successes = records.iter().filter(|r| r.report.success).count();
    let manifest = Manifest {
        scenario: &scenario.name,
        generated_at: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        runs: records.len(),
        successes,
        files: entries,
    };
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    json.push(b'\n');
    write(&manifest_path, &json)?;
    files.push(manifest_path);

    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        runs: records.len(),
        successes,
        files,
    })
}

/// Runs `scenario` and writes its outputs to `out_dir`.
pub fn run_scenario(scenario: &Scenario, out_dir: &Path) -> Result<RunSummary> {
    let records = execute(scenario)?;
    write_outputs(scenario, &records, out_dir)
}
