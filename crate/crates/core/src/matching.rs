//! Customer-file matching: records are normalized, digested with SHA-256 and
//! resolved to platform users to form Custom Audiences.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{Pii, PlatformPolicy, Population, UserId};

/// One row of an uploaded customer file.
pub type CustomerRecord = Pii;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MatchError {
    #[error("customer record has no fields")]
    EmptyRecord,
    #[error("customer file is empty")]
    EmptyUpload,
    #[error("customer file row {row} has no fields")]
    EmptyRow { row: usize },
}

/// Lowercases and trims every field and strips phones down to digits.
/// Fields that end up blank are dropped.
pub fn normalize_record(record: &CustomerRecord) -> Result<CustomerRecord, MatchError> {
    fn text(f: &Option<String>) -> Option<String> {
        f.as_deref()
            .map(|s| s.trim().to_lowercase())
            .filter(|s| !s.is_empty())
    }
    let out = CustomerRecord {
        email: text(&record.email),
        phone: record
            .phone
            .as_deref()
            .map(|p| p.chars().filter(char::is_ascii_digit).collect::<String>())
            .filter(|p| !p.is_empty()),
        first_name: text(&record.first_name),
        last_name: text(&record.last_name),
        zip: text(&record.zip),
        birth_year: text(&record.birth_year),
    };
    if out.is_empty() {
        Err(MatchError::EmptyRecord)
    } else {
        Ok(out)
    }
}

type KeyDigest = [u8; 32];

fn digest_key(parts: &[&str]) -> KeyDigest {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    h.finalize().into()
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "outcome", content = "user")]
pub enum MatchOutcome {
    Unique(UserId),
    NoMatch,
    Ambiguous,
}

impl MatchOutcome {
    fn from_candidates(c: Option<&Vec<UserId>>) -> Option<Self> {
        match c.map(Vec::as_slice) {
            None | Some([]) => None,
            Some([u]) => Some(MatchOutcome::Unique(*u)),
            Some(_) => Some(MatchOutcome::Ambiguous),
        }
    }
}

/// Digest index over a population's PII.
///
/// Key precedence: email, then phone, then first + last name (+ zip when the
/// record carries one). The first key that hits decides; more than one user
/// under that key is ambiguous.
#[derive(Debug, Clone, Default)]
pub struct Matcher {
    email: BTreeMap<KeyDigest, Vec<UserId>>,
    phone: BTreeMap<KeyDigest, Vec<UserId>>,
    name: BTreeMap<KeyDigest, Vec<UserId>>,
    name_zip: BTreeMap<KeyDigest, Vec<UserId>>,
}

impl Matcher {
    pub fn new(population: &Population) -> Self {
        let mut m = Matcher::default();
        for u in population.users() {
            let Ok(pii) = normalize_record(&u.pii) else {
                continue;
            };
            if let Some(e) = &pii.email {
                m.email.entry(digest_key(&["email", e])).or_default().push(u.id);
            }
            if let Some(p) = &pii.phone {
                m.phone.entry(digest_key(&["phone", p])).or_default().push(u.id);
            }
            if let (Some(f), Some(l)) = (&pii.first_name, &pii.last_name) {
                m.name.entry(digest_key(&["name", f, l])).or_default().push(u.id);
                if let Some(z) = &pii.zip {
                    m.name_zip
                        .entry(digest_key(&["name-zip", f, l, z]))
                        .or_default()
                        .push(u.id);
                }
            }
        }
        m
    }

    /// Resolves an already-normalized record.
    pub fn match_record(&self, record: &CustomerRecord) -> MatchOutcome {
        if let Some(e) = &record.email {
            if let Some(o) = MatchOutcome::from_candidates(self.email.get(&digest_key(&["email", e]))) {
                return o;
            }
        }
        if let Some(p) = &record.phone {
            if let Some(o) = MatchOutcome::from_candidates(self.phone.get(&digest_key(&["phone", p]))) {
                return o;
            }
        }
        if let (Some(f), Some(l)) = (&record.first_name, &record.last_name) {
            let hit = match &record.zip {
                Some(z) => self.name_zip.get(&digest_key(&["name-zip", f, l, z])),
                None => self.name.get(&digest_key(&["name", f, l])),
            };
            if let Some(o) = MatchOutcome::from_candidates(hit) {
                return o;
            }
        }
        MatchOutcome::NoMatch
    }
}

/// Resolves one normalized record against the population.
pub fn match_record(record: &CustomerRecord, population: &Population) -> MatchOutcome {
    Matcher::new(population).match_record(record)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AudienceId(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct CustomAudience {
    pub id: AudienceId,
    pub matched: BTreeSet<UserId>,
    pub uploaded_record_count: usize,
    pub valid: bool,
    /// Hex SHA-256 of the normalized upload.
    pub created_from: String,
}

impl CustomAudience {
    pub fn len(&self) -> usize {
        self.matched.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matched.is_empty()
    }
}

/// Matches every record of an uploaded file and builds the audience. Invalid
/// audiences are still returned so that they can be referenced.
pub fn create_custom_audience(
    file: &[CustomerRecord],
    population: &Population,
    policy: &PlatformPolicy,
) -> Result<CustomAudience, MatchError> {
    create_custom_audience_with(file, &Matcher::new(population), policy)
}

/// [`create_custom_audience`] against a prebuilt index, for callers that
/// upload many files to one population.
pub fn create_custom_audience_with(
    file: &[CustomerRecord],
    matcher: &Matcher,
    policy: &PlatformPolicy,
) -> Result<CustomAudience, MatchError> {
    if file.is_empty() {
        return Err(MatchError::EmptyUpload);
    }
    let normalized = file
        .iter()
        .enumerate()
        .map(|(row, r)| normalize_record(r).map_err(|_| MatchError::EmptyRow { row }))
        .collect::<Result<Vec<_>, _>>()?;

    let mut h = Sha256::new();
    for r in &normalized {
        for f in r.fields() {
            let v = f.as_deref().unwrap_or("");
            h.update((v.len() as u64).to_le_bytes());
            h.update(v.as_bytes());
        }
    }
    let created_from = hex(&h.finalize());

    let matched: BTreeSet<UserId> = normalized
        .iter()
        .filter_map(|r| match matcher.match_record(r) {
            MatchOutcome::Unique(u) => Some(u),
            _ => None,
        })
        .collect();
    let valid = policy.admits(matched.len(), policy.audience_validity_threshold);
    Ok(CustomAudience {
        id: AudienceId(alloc::format!("ca-{}", &created_from[..16])),
        matched,
        uploaded_record_count: file.len(),
        valid,
        created_from,
    })
}

/// Audiences an advertiser has uploaded, addressable by id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudienceStore {
    audiences: BTreeMap<AudienceId, CustomAudience>,
}

impl AudienceStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, audience: CustomAudience) -> AudienceId {
        let id = audience.id.clone();
        self.audiences.insert(id.clone(), audience);
        id
    }

    pub fn get(&self, id: &AudienceId) -> Option<&CustomAudience> {
        self.audiences.get(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::Coordinate;
    use crate::model::{builtin_policy, CategoryTaxonomy, UserProfile};
    use alloc::string::ToString;

    fn user(id: u32, email: &str, first: &str, last: &str, zip: &str) -> UserProfile {
        UserProfile {
            id: UserId(id),
            pii: Pii {
                email: Some(email.to_string()),
                phone: Some(alloc::format!("555{id:07}")),
                first_name: Some(first.to_string()),
                last_name: Some(last.to_string()),
                zip: Some(zip.to_string()),
                birth_year: None,
            },
            attributes: Default::default(),
            page_likes: alloc::vec![],
            adblock: false,
            active: true,
            opted_out: false,
            home: Coordinate::new(0.0, 0.0).unwrap(),
            gender: "female".to_string(),
            device_type: "mobile".to_string(),
        }
    }

    fn pop() -> Population {
        Population::new(
            CategoryTaxonomy::desk_scale(),
            alloc::vec![
                user(1, "ann@x.org", "Ann", "Lee", "90001"),
                user(2, "bob@x.org", "Ann", "Lee", "90002"),
                user(3, "cy@x.org", "Cy", "Ng", "90001"),
            ],
            0,
            10,
        )
        .unwrap()
    }

    #[test]
    fn normalization() {
        let r = normalize_record(&Pii::email(" A@B.Com ")).unwrap();
        assert_eq!(r.email.as_deref(), Some("a@b.com"));
        let p = normalize_record(&Pii {
            phone: Some("(555) 010-2233".to_string()),
            ..Pii::default()
        })
        .unwrap();
        assert_eq!(p.phone.as_deref(), Some("5550102233"));
        assert_eq!(normalize_record(&Pii::default()), Err(MatchError::EmptyRecord));
        let blank = Pii {
            first_name: Some("   ".to_string()),
            ..Pii::default()
        };
        assert_eq!(normalize_record(&blank), Err(MatchError::EmptyRecord));
    }

    #[test]
    fn key_precedence_and_ambiguity() {
        let p = pop();
        let m = Matcher::new(&p);
        let rec = |f: &str, l: &str, z: Option<&str>| Pii {
            first_name: Some(f.to_string()),
            last_name: Some(l.to_string()),
            zip: z.map(str::to_string),
            ..Pii::default()
        };
        assert_eq!(m.match_record(&Pii::email("bob@x.org")), MatchOutcome::Unique(UserId(2)));
        assert_eq!(m.match_record(&rec("ann", "lee", None)), MatchOutcome::Ambiguous);
        assert_eq!(m.match_record(&rec("ann", "lee", Some("90002"))), MatchOutcome::Unique(UserId(2)));
        assert_eq!(m.match_record(&rec("ann", "lee", Some("11111"))), MatchOutcome::NoMatch);
        // unknown email falls through to the name key
        let mut r = rec("cy", "ng", Some("90001"));
        r.email = Some("nobody@x.org".to_string());
        assert_eq!(m.match_record(&r), MatchOutcome::Unique(UserId(3)));
        assert_eq!(match_record(&Pii::email("zed@x.org"), &p), MatchOutcome::NoMatch);
    }

    #[test]
    fn audience_creation() {
        let p = pop();
        let fb = builtin_policy("facebook-2018").unwrap();
        let file = alloc::vec![Pii::email("ann@x.org"), Pii::email("ANN@x.org "), Pii::email("nobody@x.org")];
        let a = create_custom_audience(&file, &p, &fb).unwrap();
        assert_eq!(a.matched.iter().copied().collect::<Vec<_>>(), [UserId(1)]);
        assert_eq!(a.uploaded_record_count, 3);
        assert!(!a.valid);
        assert_eq!(a.created_from.len(), 64);
        assert!(a.id.0.starts_with("ca-"));

        let none = create_custom_audience(&[Pii::email("nobody@x.org")], &p, &fb).unwrap();
        assert!(none.is_empty() && !none.valid);

        assert_eq!(create_custom_audience(&[], &p, &fb), Err(MatchError::EmptyUpload));
        assert_eq!(
            create_custom_audience(&[Pii::email("a@b"), Pii::default()], &p, &fb),
            Err(MatchError::EmptyRow { row: 1 })
        );
    }

    #[test]
    fn zero_threshold_validates_empty_audience() {
        let p = pop();
        let mut pol = builtin_policy("facebook-2018").unwrap();
        pol.audience_validity_threshold = 0;
        assert!(create_custom_audience(&[Pii::email("q@q")], &p, &pol).unwrap().valid);
    }
}
