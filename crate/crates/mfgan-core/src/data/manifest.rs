//! The split-manifest directory: catalog maps, per-split sequences, and
//! per-factor bin tables, all line-oriented UTF-8 with LF endings and
//! bit-exact across runs for the same inputs.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::bins::{bin_factor_values, BinKind, BinSpec, FactorValue};
use super::split::{DatasetSplit, UserSplit};
use crate::discriminator::FactorTable;
use crate::error::{Error, Result};

/// Where a declared factor's values come from.
#[derive(Clone, Debug, PartialEq)]
pub enum FactorSource {
    /// The item id itself.
    ItemId,
    /// Train-split interaction counts, quantile-binned.
    Popularity { bins: usize },
    /// A categorical column of the factors file.
    Categorical,
    /// A numeric column of the factors file, quantile-binned.
    Numeric { bins: usize },
}

impl FactorSource {
    pub fn label(&self) -> &'static str {
        match self {
            FactorSource::ItemId => "item-id",
            FactorSource::Popularity { .. } => "popularity",
            FactorSource::Categorical => "categorical",
            FactorSource::Numeric { .. } => "numeric",
        }
    }
}

/// A factor declaration from the run configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorDeclaration {
    pub name: String,
    pub source: FactorSource,
}

/// A fully prepared factor: its total item→bin table plus reporting info.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedFactor {
    pub name: String,
    pub kind_label: String,
    pub table: FactorTable,
    pub warning: Option<String>,
}

/// Everything the training and evaluation stages need from prep.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub split: DatasetSplit,
    pub factors: Vec<PreparedFactor>,
    /// Interactions retained after filtering and short-user drops.
    pub interactions: usize,
}

/// Parsed factors file: named columns of raw values per item string.
#[derive(Clone, Debug, Default)]
pub struct FactorFile {
    pub columns: Vec<String>,
    /// Row order preserved; first appearance drives categorical bin order.
    pub rows: Vec<(String, Vec<String>)>,
}

impl FactorFile {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

/// Read `item<TAB>col1<TAB>col2...` with a mandatory header row naming the
/// factor columns.
pub fn read_factor_file(path: &Path) -> Result<FactorFile> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open factors file {}: {e}", path.display())))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data("factors file is empty".into()))??;
    let mut cols: Vec<String> = header.split('\t').map(|s| s.trim().to_string()).collect();
    if cols.len() < 2 {
        return Err(Error::Data("factors file header needs item plus >= 1 column".into()));
    }
    cols.remove(0); // the item column
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts: Vec<String> = line.split('\t').map(|s| s.trim().to_string()).collect();
        if parts.len() != cols.len() + 1 {
            return Err(Error::Data(format!(
                "factors row has {} fields, expected {}",
                parts.len(),
                cols.len() + 1
            )));
        }
        let item = parts.remove(0);
        rows.push((item, parts));
    }
    Ok(FactorFile { columns: cols, rows })
}

/// Train-visible items: everything occurring in some user's train portion.
fn train_visible(split: &DatasetSplit) -> Vec<bool> {
    let mut seen = vec![false; split.item_count() + 1];
    for u in &split.users {
        for &it in &u.train {
            seen[it] = true;
        }
    }
    seen
}

/// Build the total bin table for one declared factor.
pub fn prepare_factor(
    decl: &FactorDeclaration,
    split: &DatasetSplit,
    factor_file: Option<&FactorFile>,
) -> Result<PreparedFactor> {
    let items = split.item_count();
    match &decl.source {
        FactorSource::ItemId => Ok(PreparedFactor {
            name: decl.name.clone(),
            kind_label: decl.source.label().to_string(),
            table: FactorTable::item_identity(&decl.name, items),
            warning: None,
        }),
        FactorSource::Popularity { bins } => {
            let counts = split.train_popularity();
            let visible = train_visible(split);
            let train_values: Vec<FactorValue> = (1..=items)
                .filter(|&i| visible[i])
                .map(|i| FactorValue::Num(counts[i] as f32))
                .collect();
            let spec = bin_factor_values(&decl.name, &train_values, *bins)?;
            let assignments: Vec<Option<usize>> = std::iter::once(None)
                .chain((1..=items).map(|i| spec.bin_of(&FactorValue::Num(counts[i] as f32))))
                .collect();
            let table = FactorTable::new(&decl.name, &assignments, spec.bin_count())?;
            Ok(PreparedFactor {
                name: decl.name.clone(),
                kind_label: decl.source.label().to_string(),
                table,
                warning: spec.warning,
            })
        }
        FactorSource::Categorical | FactorSource::Numeric { .. } => {
            let file = factor_file.ok_or_else(|| {
                Error::Data(format!("factor {} needs a factors file", decl.name))
            })?;
            let col = file.column_index(&decl.name).ok_or_else(|| {
                Error::Data(format!("factors file has no column named {}", decl.name))
            })?;
            let numeric_bins = match &decl.source {
                FactorSource::Numeric { bins } => Some(*bins),
                _ => None,
            };
            // raw value per item id, in factor-file row order for binning
            let mut by_item: Vec<Option<FactorValue>> = vec![None; items + 1];
            let mut train_values: Vec<FactorValue> = Vec::new();
            let visible = train_visible(split);
            for (item_name, fields) in &file.rows {
                let Some(id) = split.item_id(item_name) else { continue };
                let raw = fields[col].trim();
                if raw.is_empty() {
                    continue; // missing value -> unknown bin
                }
                let value = match numeric_bins {
                    Some(_) => FactorValue::Num(raw.parse::<f32>().map_err(|_| {
                        Error::Data(format!(
                            "factor {}: item {item_name} value {raw:?} is not numeric",
                            decl.name
                        ))
                    })?),
                    None => FactorValue::Cat(raw.to_string()),
                };
                if visible[id] && by_item[id].is_none() {
                    train_values.push(value.clone());
                }
                by_item[id] = Some(value);
            }
            if train_values.is_empty() {
                return Err(Error::Data(format!(
                    "factor {}: no train-visible values",
                    decl.name
                )));
            }
            let spec = bin_factor_values(&decl.name, &train_values, numeric_bins.unwrap_or(2))?;
            let assignments: Vec<Option<usize>> = std::iter::once(None)
                .chain((1..=items).map(|i| by_item[i].as_ref().and_then(|v| spec.bin_of(v))))
                .collect();
            let table = FactorTable::new(&decl.name, &assignments, spec.bin_count())?;
            Ok(PreparedFactor {
                name: decl.name.clone(),
                kind_label: decl.source.label().to_string(),
                table,
                warning: spec.warning,
            })
        }
    }
}

/// Boundary/category detail lines for the bins file (reference only).
fn spec_detail(spec: &BinSpec) -> String {
    match &spec.kind {
        BinKind::Categorical { values } => format!("# categories\t{}", values.join("\t")),
        BinKind::Numeric { boundaries } => format!(
            "# boundaries\t{}",
            boundaries.iter().map(|b| b.to_string()).collect::<Vec<_>>().join("\t")
        ),
    }
}

const CATALOG_FILE: &str = "catalog.tsv";
const USERS_FILE: &str = "users.tsv";
const TRAIN_FILE: &str = "train.tsv";
const VALID_FILE: &str = "valid.tsv";
const TEST_FILE: &str = "test.tsv";
const BINS_FILE: &str = "bins.tsv";
const STATS_FILE: &str = "stats.tsv";

/// Write every manifest file into `dir` (created if needed).
pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let split = &manifest.split;

    let mut catalog = String::new();
    for id in 1..=split.item_count() {
        catalog.push_str(&format!("{id}\t{}\n", split.item_name(id)));
    }
    write_file(&dir.join(CATALOG_FILE), &catalog)?;

    let mut users = String::new();
    let mut train = String::new();
    let mut valid = String::new();
    let mut test = String::new();
    for (idx, u) in split.users.iter().enumerate() {
        users.push_str(&format!("{idx}\t{}\n", u.user));
        let ids: Vec<String> = u.train.iter().map(|i| i.to_string()).collect();
        train.push_str(&format!("{idx}\t{}\n", ids.join(" ")));
        valid.push_str(&format!("{idx}\t{}\n", u.valid_target));
        test.push_str(&format!("{idx}\t{}\n", u.test_target));
    }
    write_file(&dir.join(USERS_FILE), &users)?;
    write_file(&dir.join(TRAIN_FILE), &train)?;
    write_file(&dir.join(VALID_FILE), &valid)?;
    write_file(&dir.join(TEST_FILE), &test)?;

    let mut bins = String::new();
    for f in &manifest.factors {
        bins.push_str(&format!(
            "factor\t{}\t{}\t{}\n",
            f.name,
            f.kind_label,
            f.table.bins()
        ));
        let map: Vec<String> =
            f.table.map().iter().skip(1).map(|b| b.to_string()).collect();
        bins.push_str(&format!("map\t{}\n", map.join(" ")));
    }
    write_file(&dir.join(BINS_FILE), &bins)?;

    let stats = format!(
        "users\t{}\nitems\t{}\ninteractions\t{}\nfactors\t{}\ndropped_short\t{}\n",
        split.user_count(),
        split.item_count(),
        manifest.interactions,
        manifest.factors.len(),
        split.dropped_short,
    );
    write_file(&dir.join(STATS_FILE), &stats)?;
    Ok(())
}

/// Extra reference lines appended by `run_prep` (bin boundaries etc.); kept
/// separate so `write_manifest`/`read_manifest` stay exact inverses.
pub fn bins_reference_lines(specs: &[(String, BinSpec)]) -> String {
    let mut out = String::new();
    for (name, spec) in specs {
        out.push_str(&format!("# factor {name}\n{}\n", spec_detail(spec)));
    }
    out
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(content.as_bytes())?;
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("manifest file {} missing: {e}", path.display())))?;
    BufReader::new(file)
        .lines()
        .map(|l| l.map_err(Error::from))
        .collect()
}

fn split_kv(line: &str, file: &str) -> Result<(String, String)> {
    match line.split_once('\t') {
        Some((k, v)) => Ok((k.to_string(), v.to_string())),
        None => Err(Error::Data(format!("malformed line in {file}: {line:?}"))),
    }
}

/// Load a manifest directory written by [`write_manifest`].
pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let mut item_names = Vec::new();
    for line in read_lines(&dir.join(CATALOG_FILE))? {
        let (id, name) = split_kv(&line, CATALOG_FILE)?;
        let id: usize = id
            .parse()
            .map_err(|_| Error::Data(format!("bad catalog id {id:?}")))?;
        if id != item_names.len() + 1 {
            return Err(Error::Data(format!("catalog ids out of order at {id}")));
        }
        item_names.push(name);
    }
    let item_count = item_names.len();

    let parse_usize = |s: &str, what: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::Data(format!("bad {what}: {s:?}")))
    };

    let users_lines = read_lines(&dir.join(USERS_FILE))?;
    let train_lines = read_lines(&dir.join(TRAIN_FILE))?;
    let valid_lines = read_lines(&dir.join(VALID_FILE))?;
    let test_lines = read_lines(&dir.join(TEST_FILE))?;
    if users_lines.len() != train_lines.len()
        || users_lines.len() != valid_lines.len()
        || users_lines.len() != test_lines.len()
    {
        return Err(Error::Data("manifest split files disagree on user count".into()));
    }
    let mut users = Vec::with_capacity(users_lines.len());
    for i in 0..users_lines.len() {
        let (_, user) = split_kv(&users_lines[i], USERS_FILE)?;
        let (_, train_f) = split_kv(&train_lines[i], TRAIN_FILE)?;
        let (_, valid_f) = split_kv(&valid_lines[i], VALID_FILE)?;
        let (_, test_f) = split_kv(&test_lines[i], TEST_FILE)?;
        let train: Vec<usize> = train_f
            .split_whitespace()
            .map(|t| parse_usize(t, "train item"))
            .collect::<Result<_>>()?;
        let valid_target = parse_usize(&valid_f, "valid target")?;
        let test_target = parse_usize(&test_f, "test target")?;
        for &it in train.iter().chain([&valid_target, &test_target]) {
            if it == 0 || it > item_count {
                return Err(Error::Data(format!("item id {it} outside catalog")));
            }
        }
        users.push(UserSplit { user, train, valid_target, test_target });
    }
    let split = DatasetSplit::from_parts(item_names, users, 0);

    let mut factors = Vec::new();
    let bins_lines = read_lines(&dir.join(BINS_FILE))?;
    let mut i = 0;
    while i < bins_lines.len() {
        let line = &bins_lines[i];
        if line.starts_with('#') || line.trim().is_empty() {
            i += 1;
            continue;
        }
        let head: Vec<&str> = line.split('\t').collect();
        if head.len() != 4 || head[0] != "factor" {
            return Err(Error::Data(format!("bad factor header: {line:?}")));
        }
        let name = head[1].to_string();
        let kind_label = head[2].to_string();
        let bins = parse_usize(head[3], "bin count")?;
        let map_line = bins_lines
            .get(i + 1)
            .ok_or_else(|| Error::Data(format!("factor {name}: missing map line")))?;
        let (tag, payload) = split_kv(map_line, BINS_FILE)?;
        if tag != "map" {
            return Err(Error::Data(format!("factor {name}: expected map line")));
        }
        let mut map = vec![0usize];
        for t in payload.split_whitespace() {
            map.push(parse_usize(t, "bin id")?);
        }
        if map.len() != item_count + 1 {
            return Err(Error::Data(format!(
                "factor {name}: map covers {} items, catalog has {item_count}",
                map.len() - 1
            )));
        }
        factors.push(PreparedFactor {
            name: name.clone(),
            kind_label,
            table: FactorTable::from_bin_map(&name, bins, map)?,
            warning: None,
        });
        i += 2;
    }

    let mut interactions = 0usize;
    for line in read_lines(&dir.join(STATS_FILE))? {
        let (k, v) = split_kv(&line, STATS_FILE)?;
        if k == "interactions" {
            interactions = parse_usize(&v, "interaction count")?;
        }
    }

    Ok(Manifest { split, factors, interactions })
}

/// Convenience for tests: factor values per item id keyed by column.
pub fn factor_file_from_pairs(columns: &[&str], rows: &[(&str, &[&str])]) -> FactorFile {
    FactorFile {
        columns: columns.iter().map(|s| s.to_string()).collect(),
        rows: rows
            .iter()
            .map(|(item, vals)| {
                (item.to_string(), vals.iter().map(|v| v.to_string()).collect())
            })
            .collect(),
    }
}

/// Used by prep to pair warnings with factors for reporting.
pub fn collect_warnings(factors: &[PreparedFactor]) -> Vec<String> {
    factors.iter().filter_map(|f| f.warning.clone()).collect()
}
