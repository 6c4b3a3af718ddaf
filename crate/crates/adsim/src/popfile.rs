//! Population generation from a config file, for `gen-pop`.

use std::path::Path;

use adsim_core::model::{CategoryTaxonomy, Population};
use adsim_core::popgen::{generate, PopulationConfig};
use serde::Deserialize;
use toml::Spanned;

use crate::error::{Error, Result};
use crate::formats::{write_population_csv, FormatError};

#[derive(Deserialize)]
struct Wrapped {
    population: Spanned<PopulationConfig>,
}

/// Reads a population config: either a scenario file (its `[population]`
/// table is used) or a file holding only population keys.
pub fn parse_population_config(src: &str, file: &str) -> Result<PopulationConfig> {
    let table: toml::Table = toml::from_str(src).map_err(|e| Error::config(file, e.to_string().trim_end()))?;
    let (config, line) = if table.contains_key("population") {
        let w: Wrapped = toml::from_str(src).map_err(|e| Error::config(file, e.to_string().trim_end()))?;
        let line = src[..w.population.span().start].matches('\n').count() + 1;
        (w.population.into_inner(), line)
    } else {
        let c: PopulationConfig = toml::from_str(src).map_err(|e| Error::config(file, e.to_string().trim_end()))?;
        (c, 1)
    };
    let violations = config.violations(&CategoryTaxonomy::desk_scale());
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(Error::config(file, format!("line {line}: `population`: {}", list.join("; "))));
    }
    Ok(config)
}

pub fn generate_from_file(path: &Path) -> Result<Population> {
    let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config = parse_population_config(&src, &path.display().to_string())?;
    generate(&config).map_err(|e| Error::config(path.display().to_string(), e.to_string()))
}

/// Writes `population` as CSV to `out`.
pub fn export(population: &Population, out: &Path) -> Result<()> {
    let file = std::fs::File::create(out).map_err(|e| Error::io(out, e))?;
    write_population_csv(population, std::io::BufWriter::new(file)).map_err(|e| match e {
        FormatError::Io(io) => Error::io(out, io),
        other => Error::config(out.display().to_string(), other.to_string()),
    })
}
