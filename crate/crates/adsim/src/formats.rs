//! On-disk formats: customer files and population exports.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

use adsim_core::geo::Coordinate;
use adsim_core::matching::CustomerRecord;
use adsim_core::model::{AttrValue, CategoryTaxonomy, PageId, Pii, Population, UserId, UserProfile};
use serde::{Deserialize, Serialize};

/// Header of an uploadable customer file.
pub const CUSTOMER_HEADER: [&str; 6] = ["email", "phone", "fn", "ln", "zip", "birth_year"];

const POPULATION_FIXED: [&str; 15] = [
    "id", "email", "phone", "fn", "ln", "zip", "birth_year", "gender", "device", "lat", "lon", "adblock", "active",
    "opted_out", "page_likes",
];

const POPULATION_MAGIC: &str = "#adsim-population";

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Line { line: u64, message: String },
    #[error("{0}")]
    Other(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FormatError {
    fn at(line: u64, message: impl Into<String>) -> Self {
        FormatError::Line {
            line,
            message: message.into(),
        }
    }
}

fn from_csv(e: csv::Error) -> FormatError {
    let line = e.position().map(|p| p.line());
    match (e.kind(), line) {
        (csv::ErrorKind::Io(_), _) => match e.into_kind() {
            csv::ErrorKind::Io(io) => FormatError::Io(io),
            _ => unreachable!(),
        },
        (_, Some(line)) => FormatError::at(line, e.to_string()),
        (_, None) => FormatError::Other(e.to_string()),
    }
}

#[derive(Serialize, Deserialize)]
struct CustomerRow {
    email: Option<String>,
    phone: Option<String>,
    #[serde(rename = "fn")]
    first_name: Option<String>,
    #[serde(rename = "ln")]
    last_name: Option<String>,
    zip: Option<String>,
    birth_year: Option<String>,
}

fn blank_to_none(s: Option<String>) -> Option<String> {
    s.filter(|v| !v.trim().is_empty())
}

/// Reads a customer file. Blank cells are absent fields; a row with every
/// cell blank is an error.
pub fn read_customer_file<R: Read>(reader: R) -> Result<Vec<CustomerRecord>, FormatError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(from_csv)?.clone();
    if let Some(missing) = CUSTOMER_HEADER.iter().find(|h| !headers.iter().any(|x| x == **h)) {
        return Err(FormatError::at(1, format!("missing column `{missing}`")));
    }
    let mut out = Vec::new();
    for row in rdr.deserialize::<CustomerRow>() {
        let row = row.map_err(from_csv)?;
        let rec = Pii {
            email: blank_to_none(row.email),
            phone: blank_to_none(row.phone),
            first_name: blank_to_none(row.first_name),
            last_name: blank_to_none(row.last_name),
            zip: blank_to_none(row.zip),
            birth_year: blank_to_none(row.birth_year),
        };
        if rec.is_empty() {
            // header is line 1
            return Err(FormatError::at(out.len() as u64 + 2, "row has no identifying fields"));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_customer_file<W: Write>(records: &[CustomerRecord], writer: W) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(CustomerRow {
            email: r.email.clone(),
            phone: r.phone.clone(),
            first_name: r.first_name.clone(),
            last_name: r.last_name.clone(),
            zip: r.zip.clone(),
            birth_year: r.birth_year.clone(),
        })
        .map_err(from_csv)?;
    }
    w.flush()?;
    Ok(())
}

fn attr_cell(v: Option<&AttrValue>) -> String {
    match v {
        Some(AttrValue::Bool(b)) => b.to_string(),
        Some(AttrValue::Bucket(label)) => label.clone(),
        None => String::new(),
    }
}

/// Writes one row per user with one column per taxonomy category. The first
/// line records the population seed and page catalog size so the file can be
/// read back into an identical population.
pub fn write_population_csv<W: Write>(population: &Population, mut writer: W) -> Result<(), FormatError> {
    writeln!(
        writer,
        "{POPULATION_MAGIC} seed={} pages={}",
        population.seed(),
        population.page_count()
    )?;
    let mut w = csv::Writer::from_writer(writer);
    let cats = population.taxonomy().categories();
    let header = POPULATION_FIXED
        .iter()
        .map(|s| s.to_string())
        .chain(cats.iter().map(|c| c.id.as_str().to_string()));
    w.write_record(header).map_err(from_csv)?;
    let opt = |s: &Option<String>| s.clone().unwrap_or_default();
    for u in population.users() {
        let likes = u.page_likes.iter().map(|p| p.0.to_string()).collect::<Vec<_>>().join(";");
        let mut row = vec![
            u.id.0.to_string(),
            opt(&u.pii.email),
            opt(&u.pii.phone),
            opt(&u.pii.first_name),
            opt(&u.pii.last_name),
            opt(&u.pii.zip),
            opt(&u.pii.birth_year),
            u.gender.clone(),
            u.device_type.clone(),
            u.home.lat().to_string(),
            u.home.lon().to_string(),
            u.adblock.to_string(),
            u.active.to_string(),
            u.opted_out.to_string(),
            likes,
        ];
        row.extend(cats.iter().map(|c| attr_cell(u.attribute(&c.id))));
        w.write_record(&row).map_err(from_csv)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_magic(line: &str) -> Option<(u64, u32)> {
    let rest = line.trim().strip_prefix(POPULATION_MAGIC)?;
    let (mut seed, mut pages) = (None, None);
    for kv in rest.split_whitespace() {
        match kv.split_once('=')? {
            ("seed", v) => seed = v.parse().ok(),
            ("pages", v) => pages = v.parse().ok(),
            _ => {}
        }
    }
    Some((seed?, pages?))
}

/// Reads a population written by [`write_population_csv`]. Category columns
/// are interpreted against `taxonomy`; boolean categories take `true` or
/// `false`, bucketed ones a bucket label, and a blank cell leaves the
/// attribute unset.
pub fn read_population_csv<R: Read>(reader: R, taxonomy: CategoryTaxonomy) -> Result<Population, FormatError> {
    let mut buf = BufReader::new(reader);
    let mut first = String::new();
    buf.read_line(&mut first)?;
    let (seed, pages) = parse_magic(&first).ok_or_else(|| FormatError::at(1, format!("expected `{POPULATION_MAGIC} seed=N pages=N`")))?;

    // csv counts lines from the header; the magic line comes first
    let shifted = |e: csv::Error| match from_csv(e) {
        FormatError::Line { line, message } => FormatError::Line { line: line + 1, message },
        other => other,
    };
    let mut rdr = csv::ReaderBuilder::new().from_reader(buf);
    let headers = rdr.headers().map_err(shifted)?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut fixed = [0usize; 15];
    for (slot, name) in fixed.iter_mut().zip(POPULATION_FIXED) {
        *slot = col(name).ok_or_else(|| FormatError::at(2, format!("missing column `{name}`")))?;
    }
    let mut attr_cols = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if POPULATION_FIXED.contains(&h) {
            continue;
        }
        let cat = taxonomy
            .get(&h.into())
            .ok_or_else(|| FormatError::at(2, format!("unknown category column `{h}`")))?;
        attr_cols.push((i, cat.clone()));
    }

    let mut users = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(shifted)?;
        // magic line and header precede the first record
        let line = n as u64 + 3;
        let cell = |k: usize| rec.get(fixed[k]).unwrap_or("");
        let opt = |k: usize| Some(cell(k).to_string()).filter(|s| !s.is_empty());
        let num = |k: usize| -> Result<f64, FormatError> {
            cell(k)
                .parse()
                .map_err(|_| FormatError::at(line, format!("`{}` is not a number", cell(k))))
        };
        let flag = |k: usize| -> Result<bool, FormatError> {
            cell(k)
                .parse()
                .map_err(|_| FormatError::at(line, format!("`{}` is not true/false", cell(k))))
        };
        let id: u32 = cell(0)
            .parse()
            .map_err(|_| FormatError::at(line, format!("bad user id `{}`", cell(0))))?;
        let home = Coordinate::new(num(9)?, num(10)?).map_err(|e| FormatError::at(line, e.to_string()))?;
        let page_likes = cell(14)
            .split(';')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map(PageId))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| FormatError::at(line, format!("bad page list `{}`", cell(14))))?;
        let mut attributes = BTreeMap::new();
        for (i, cat) in &attr_cols {
            let raw = rec.get(*i).unwrap_or("");
            if raw.is_empty() {
                continue;
            }
            let value = if cat.is_boolean() {
                AttrValue::Bool(
                    raw.parse()
                        .map_err(|_| FormatError::at(line, format!("`{}`: `{raw}` is not true/false", cat.id)))?,
                )
            } else {
                AttrValue::bucket(raw)
            };
            attributes.insert(cat.id.clone(), value);
        }
        users.push(UserProfile {
            id: UserId(id),
            pii: Pii {
                email: opt(1),
                phone: opt(2),
                first_name: opt(3),
                last_name: opt(4),
                zip: opt(5),
                birth_year: opt(6),
            },
            attributes,
            page_likes,
            adblock: flag(11)?,
            active: flag(12)?,
            opted_out: flag(13)?,
            home,
            gender: cell(7).to_string(),
            device_type: cell(8).to_string(),
        });
    }
    Population::new(taxonomy, users, seed, pages).map_err(|e| FormatError::Other(e.to_string()))
}
