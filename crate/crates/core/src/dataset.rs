//! Observation records, CSV ingestion driven by a column spec, derived
//! variables and descriptive balance statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::stats::{mean, sample_sd, sample_variance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Binary,
    Continuous,
    Count,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnRole {
    Outcome,
    Treatment,
    Confounder,
    /// A confounder that is also offered to the heterogeneity analyses.
    Heterogeneity,
    Cluster,
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    pub role: ColumnRole,
}

pub const SCHEMA_VERSION: u32 = 1;

/// Column spec file contents (TOML):
///
/// ```toml
/// version = 1
/// [[columns]]
/// name = "won"
/// kind = "binary"
/// role = "outcome"
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub version: u32,
    pub columns: Vec<ColumnSpec>,
}

impl Schema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self> {
        let s = Schema {
            version: SCHEMA_VERSION,
            columns,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Schema = toml::from_str(text)
            .map_err(|e| Error::config(format!("column spec: {}", e.message())))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SCHEMA_VERSION {
            return Err(Error::config(format!(
                "column spec version {} unsupported (expected {SCHEMA_VERSION})",
                self.version
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::config(format!("duplicate column `{}`", c.name)));
            }
        }
        let count = |role| self.columns.iter().filter(|c| c.role == role).count();
        for (role, label) in [
            (ColumnRole::Outcome, "outcome"),
            (ColumnRole::Treatment, "treatment"),
        ] {
            if count(role) != 1 {
                return Err(Error::config(format!(
                    "column spec needs exactly one {label} column"
                )));
            }
        }
        if count(ColumnRole::Cluster) > 1 {
            return Err(Error::config("at most one cluster column allowed"));
        }
        for c in &self.columns {
            if matches!(c.role, ColumnRole::Outcome | ColumnRole::Treatment)
                && c.kind != ColumnKind::Binary
            {
                return Err(Error::config(format!("column `{}` must be binary", c.name)));
            }
        }
        Ok(())
    }

    fn name_of(&self, role: ColumnRole) -> Option<&str> {
        self.columns
            .iter()
            .find(|c| c.role == role)
            .map(|c| c.name.as_str())
    }
}

/// One observation: outcome, treatment, confounders and cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    pub y: u8,
    pub d: u8,
    pub x: Vec<f64>,
    pub cluster_id: u64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XColumn {
    pub name: String,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Provenance {
    pub source: String,
    pub n_source_rows: usize,
    /// Dropped-row counts keyed by reason.
    pub drops: BTreeMap<String, usize>,
    pub log: Vec<String>,
}

impl Provenance {
    pub fn n_dropped(&self) -> usize {
        self.drops.values().sum()
    }

    /// Lines of the form `missing treatment: 1`.
    pub fn drop_log(&self) -> Vec<String> {
        self.drops.iter().map(|(k, v)| format!("{k}: {v}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<ObservationRecord>,
    outcome_name: String,
    treatment_name: String,
    cluster_name: Option<String>,
    x_columns: Vec<XColumn>,
    z_index: Vec<usize>,
    pub provenance: Provenance,
}

impl Dataset {
    /// Builds a dataset and checks its invariants: binary `y`/`d`, finite
    /// confounders of the declared width, n >= 2 and both arms present.
    pub fn new(
        records: Vec<ObservationRecord>,
        outcome_name: impl Into<String>,
        treatment_name: impl Into<String>,
        cluster_name: Option<String>,
        x_columns: Vec<XColumn>,
        z_names: &[&str],
        provenance: Provenance,
    ) -> Result<Self> {
        let p = x_columns.len();
        for (i, r) in records.iter().enumerate() {
            if r.y > 1 || r.d > 1 {
                return Err(Error::Row {
                    row: i + 1,
                    message: "outcome and treatment must be 0 or 1".into(),
                });
            }
            if r.x.len() != p {
                return Err(Error::Dimension {
                    expected: p,
                    got: r.x.len(),
                });
            }
            if r.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Row {
                    row: i + 1,
                    message: "non-finite covariate".into(),
                });
            }
            if !(r.weight >= 0.0 && r.weight.is_finite()) {
                return Err(Error::Row {
                    row: i + 1,
                    message: "weight must be non-negative".into(),
                });
            }
        }
        if records.len() < 2 {
            return Err(Error::data(format!(
                "need at least 2 observations, have {}",
                records.len()
            )));
        }
        let treated = records.iter().filter(|r| r.d == 1).count();
        if treated == 0 || treated == records.len() {
            return Err(Error::data("both treatment arms must be non-empty"));
        }
        let mut z_index = Vec::with_capacity(z_names.len());
        for z in z_names {
            let hits: Vec<usize> = x_columns
                .iter()
                .enumerate()
                .filter(|(_, c)| c.name == *z)
                .map(|(j, _)| j)
                .collect();
            match hits.as_slice() {
                [j] => z_index.push(*j),
                _ => {
                    return Err(Error::data(format!(
                        "heterogeneity variable `{z}` must match exactly one confounder"
                    )))
                }
            }
        }
        Ok(Dataset {
            records,
            outcome_name: outcome_name.into(),
            treatment_name: treatment_name.into(),
            cluster_name,
            x_columns,
            z_index,
            provenance,
        })
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn records(&self) -> &[ObservationRecord] {
        &self.records
    }

    pub fn outcome_name(&self) -> &str {
        &self.outcome_name
    }

    pub fn treatment_name(&self) -> &str {
        &self.treatment_name
    }

    pub fn x_columns(&self) -> &[XColumn] {
        &self.x_columns
    }

    pub fn x_names(&self) -> Vec<String> {
        self.x_columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn z_names(&self) -> Vec<String> {
        self.z_index
            .iter()
            .map(|&j| self.x_columns[j].name.clone())
            .collect()
    }

    pub fn y(&self) -> Vec<f64> {
        self.records.iter().map(|r| f64::from(r.y)).collect()
    }

    pub fn d(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.d).collect()
    }

    pub fn cluster_ids(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.cluster_id).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.weight).collect()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.x_columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::data(format!("unknown column `{name}`")))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.column_index(name)?;
        Ok(self.records.iter().map(|r| r.x[j]).collect())
    }

    /// Confounder matrix (n x p).
    pub fn x_matrix(&self) -> Matrix {
        let cols = (0..self.x_columns.len())
            .map(|j| self.records.iter().map(|r| r.x[j]).collect())
            .collect();
        Matrix::from_columns(cols).expect("records have uniform width")
    }

    /// Matrix of the named columns, in the requested order.
    pub fn columns_matrix(&self, names: &[&str]) -> Result<Matrix> {
        let cols = names
            .iter()
            .map(|n| self.column(n))
            .collect::<Result<Vec<_>>>()?;
        if cols.is_empty() {
            return Err(Error::data("no columns requested"));
        }
        Matrix::from_columns(cols)
    }

    /// Appends `a - b` as a new confounder (player-pair difference variables).
    pub fn with_pair_difference(
        mut self,
        a: &str,
        b: &str,
        name: &str,
        heterogeneity: bool,
    ) -> Result<Self> {
        let ja = self.column_index(a)?;
        let jb = self.column_index(b)?;
        if self.column_index(name).is_ok() {
            return Err(Error::data(format!("column `{name}` already exists")));
        }
        for r in &mut self.records {
            let v = r.x[ja] - r.x[jb];
            r.x.push(v);
        }
        self.x_columns.push(XColumn {
            name: name.to_string(),
            kind: ColumnKind::Continuous,
        });
        if heterogeneity {
            self.z_index.push(self.x_columns.len() - 1);
        }
        self.provenance
            .log
            .push(format!("derived {name} = {a} - {b}"));
        Ok(self)
    }

    /// Column spec describing this dataset as written by [`Dataset::write_csv`].
    pub fn schema(&self) -> Schema {
        let mut columns = vec![
            ColumnSpec {
                name: self.outcome_name.clone(),
                kind: ColumnKind::Binary,
                role: ColumnRole::Outcome,
            },
            ColumnSpec {
                name: self.treatment_name.clone(),
                kind: ColumnKind::Binary,
                role: ColumnRole::Treatment,
            },
        ];
        if let Some(c) = &self.cluster_name {
            columns.push(ColumnSpec {
                name: c.clone(),
                kind: ColumnKind::Count,
                role: ColumnRole::Cluster,
            });
        }
        for (j, c) in self.x_columns.iter().enumerate() {
            columns.push(ColumnSpec {
                name: c.name.clone(),
                kind: c.kind,
                role: if self.z_index.contains(&j) {
                    ColumnRole::Heterogeneity
                } else {
                    ColumnRole::Confounder
                },
            });
        }
        Schema {
            version: SCHEMA_VERSION,
            columns,
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![self.outcome_name.clone(), self.treatment_name.clone()];
        if let Some(c) = &self.cluster_name {
            header.push(c.clone());
        }
        header.extend(self.x_names());
        w.write_record(&header).map_err(csv_write_err)?;
        for r in &self.records {
            let mut row = vec![r.y.to_string(), r.d.to_string()];
            if self.cluster_name.is_some() {
                row.push(r.cluster_id.to_string());
            }
            row.extend(r.x.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_write_err)?;
        }
        w.flush().map_err(|e| Error::data(e.to_string()))?;
        Ok(())
    }

    /// SHA-256 over the canonical content of every record.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.records {
            h.update([r.y, r.d]);
            h.update(r.cluster_id.to_le_bytes());
            h.update(r.weight.to_bits().to_le_bytes());
            for v in &r.x {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

fn csv_write_err(e: csv::Error) -> Error {
    Error::data(format!("csv write: {e}"))
}

fn is_missing(field: &str) -> bool {
    let t = field.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na")
}

fn parse_value(field: &str, spec: &ColumnSpec, row: usize) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::Row {
        row,
        message: format!("malformed value `{field}` in column `{}`", spec.name),
    })?;
    if !v.is_finite() {
        return Err(Error::Row {
            row,
            message: format!("non-finite value in column `{}`", spec.name),
        });
    }
    match spec.kind {
        ColumnKind::Binary if v != 0.0 && v != 1.0 => Err(Error::Row {
            row,
            message: format!("non-binary value {v} in binary column `{}`", spec.name),
        }),
        ColumnKind::Count if v < 0.0 || v.fract() != 0.0 => Err(Error::Row {
            row,
            message: format!("invalid count {v} in column `{}`", spec.name),
        }),
        _ => Ok(v),
    }
}

/// Reads a comma-separated file with a header row.
///
/// Rows with a missing required field are dropped and counted under
/// `missing outcome`, `missing treatment`, `missing cluster` or
/// `missing covariate`; malformed values are errors naming the 1-based data
/// row. Columns with role `ignore` must be declared but are skipped.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<Dataset> {
    schema.validate()?;
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, &path.display().to_string(), schema)
}

pub fn read_csv<R: std::io::Read>(input: R, source: &str, schema: &Schema) -> Result<Dataset> {
    let csv_err = |e: csv::Error| Error::Csv {
        path: source.into(),
        message: e.to_string(),
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(input);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let mut positions = BTreeMap::new();
    for (pos, h) in header.iter().enumerate() {
        let h = h.trim();
        if !schema.columns.iter().any(|c| c.name == h) {
            return Err(Error::data(format!("unknown column `{h}` in {source}")));
        }
        positions.insert(h.to_string(), pos);
    }
    for c in &schema.columns {
        if !positions.contains_key(&c.name) {
            return Err(Error::data(format!(
                "column `{}` declared in spec but absent from {source}",
                c.name
            )));
        }
    }
    let col = |role| {
        let name = schema.name_of(role)?;
        let spec = schema.columns.iter().find(|c| c.name == name)?;
        Some((positions[name], spec))
    };
    let (y_pos, y_spec) = col(ColumnRole::Outcome).expect("validated");
    let (d_pos, d_spec) = col(ColumnRole::Treatment).expect("validated");
    let cluster = col(ColumnRole::Cluster);
    let x_specs: Vec<&ColumnSpec> = schema
        .columns
        .iter()
        .filter(|c| matches!(c.role, ColumnRole::Confounder | ColumnRole::Heterogeneity))
        .collect();

    let mut prov = Provenance {
        source: source.to_string(),
        ..Default::default()
    };
    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(csv_err)?;
        prov.n_source_rows += 1;
        let field = |pos: usize| rec.get(pos).unwrap_or("");
        let reason = if is_missing(field(y_pos)) {
            Some("missing outcome")
        } else if is_missing(field(d_pos)) {
            Some("missing treatment")
        } else if cluster.is_some_and(|(p, _)| is_missing(field(p))) {
            Some("missing cluster")
        } else if x_specs.iter().any(|s| is_missing(field(positions[&s.name]))) {
            Some("missing covariate")
        } else {
            None
        };
        if let Some(reason) = reason {
            *prov.drops.entry(reason.to_string()).or_default() += 1;
            continue;
        }
        let y = parse_value(field(y_pos), y_spec, row)? as u8;
        let d = parse_value(field(d_pos), d_spec, row)? as u8;
        let cluster_id = match cluster {
            Some((p, spec)) => {
                let v = parse_value(field(p), spec, row)?;
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(Error::Row {
                        row,
                        message: format!("cluster id {v} is not a non-negative integer"),
                    });
                }
                v as u64
            }
            None => row as u64,
        };
        let x = x_specs
            .iter()
            .map(|s| parse_value(field(positions[&s.name]), s, row))
            .collect::<Result<Vec<_>>>()?;
        records.push(ObservationRecord {
            y,
            d,
            x,
            cluster_id,
            weight: 1.0,
        });
    }
    prov.log.push(format!(
        "loaded {} of {} rows from {source}",
        records.len(),
        prov.n_source_rows
    ));
    prov.log.extend(prov.drop_log());
    let x_columns = x_specs
        .iter()
        .map(|s| XColumn {
            name: s.name.clone(),
            kind: s.kind,
        })
        .collect();
    let z_names: Vec<&str> = schema
        .columns
        .iter()
        .filter(|c| c.role == ColumnRole::Heterogeneity)
        .map(|c| c.name.as_str())
        .collect();
    Dataset::new(
        records,
        y_spec.name.clone(),
        d_spec.name.clone(),
        cluster.map(|(_, s)| s.name.clone()),
        x_columns,
        &z_names,
        prov,
    )
}

/// Min-max scales prize money to [0, 1] over the whole pool of keys.
pub fn standardize_prize_money<K: Ord + Clone>(
    values: &BTreeMap<K, f64>,
) -> Result<BTreeMap<K, f64>> {
    let (lo, hi) = values
        .values()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if values.is_empty() || values.values().any(|v| !v.is_finite()) {
        return Err(Error::data("prize money must be a non-empty set of finite values"));
    }
    if hi <= lo {
        return Err(Error::data("degenerate prize range"));
    }
    Ok(values
        .iter()
        .map(|(k, &v)| (k.clone(), (v - lo) / (hi - lo)))
        .collect())
}

/// 1 when the venue is within `radius_km` of home (boundary inclusive).
pub fn derive_home(distance_km: f64, radius_km: f64) -> Result<u8> {
    if !distance_km.is_finite() || !radius_km.is_finite() {
        return Err(Error::data("distance and radius must be finite"));
    }
    if distance_km < 0.0 {
        return Err(Error::data(format!("negative distance {distance_km}")));
    }
    if radius_km <= 0.0 {
        return Err(Error::data(format!("radius must be positive, got {radius_km}")));
    }
    Ok(u8::from(distance_km <= radius_km))
}

/// `100 * |mean_1 - mean_0| / sqrt((var_1 + var_0) / 2)` with sample variances.
pub fn standardized_difference(values: &[f64], d: &[u8]) -> Result<f64> {
    if values.len() != d.len() {
        return Err(Error::Dimension {
            expected: values.len(),
            got: d.len(),
        });
    }
    let (t, c) = split_by_arm(values, d);
    if t.is_empty() || c.is_empty() {
        return Err(Error::data("both treatment arms must be non-empty"));
    }
    let pooled = (sample_variance(&t) + sample_variance(&c)) / 2.0;
    if pooled <= 0.0 {
        return Err(Error::data("constant variable"));
    }
    Ok(100.0 * (mean(&t) - mean(&c)).abs() / pooled.sqrt())
}

fn split_by_arm(values: &[f64], d: &[u8]) -> (Vec<f64>, Vec<f64>) {
    let mut t = Vec::new();
    let mut c = Vec::new();
    for (v, &di) in values.iter().zip(d) {
        if di == 1 {
            t.push(*v);
        } else {
            c.push(*v);
        }
    }
    (t, c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptiveRole {
    Outcome,
    Treatment,
    Covariate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DescriptiveRow {
    pub variable: String,
    pub role: DescriptiveRole,
    pub mean: f64,
    pub sd: f64,
    pub mean_treated: f64,
    pub mean_control: f64,
    /// Raw arm difference for the outcome, standardized difference for
    /// covariates (absent when the covariate is constant), none for the
    /// treatment itself.
    pub difference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DescriptivesTable {
    pub n: usize,
    pub n_treated: usize,
    pub rows: Vec<DescriptiveRow>,
}

pub fn descriptives(data: &Dataset) -> DescriptivesTable {
    let d = data.d();
    let row = |name: &str, role, values: Vec<f64>| {
        let (t, c) = split_by_arm(&values, &d);
        let difference = match role {
            DescriptiveRole::Outcome => Some(mean(&t) - mean(&c)),
            DescriptiveRole::Treatment => None,
            DescriptiveRole::Covariate => standardized_difference(&values, &d).ok(),
        };
        DescriptiveRow {
            variable: name.to_string(),
            role,
            mean: mean(&values),
            sd: sample_sd(&values),
            mean_treated: mean(&t),
            mean_control: mean(&c),
            difference,
        }
    };
    let mut rows = vec![
        row(data.outcome_name(), DescriptiveRole::Outcome, data.y()),
        row(
            data.treatment_name(),
            DescriptiveRole::Treatment,
            d.iter().map(|&v| f64::from(v)).collect(),
        ),
    ];
    for c in data.x_columns() {
        rows.push(row(
            &c.name,
            DescriptiveRole::Covariate,
            data.column(&c.name).expect("own column"),
        ));
    }
    DescriptivesTable {
        n: data.n(),
        n_treated: d.iter().filter(|&&v| v == 1).count(),
        rows,
    }
}

impl DescriptivesTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variable,role,mean,sd,mean_treated,mean_control,difference\n");
        for r in &self.rows {
            let role = match r.role {
                DescriptiveRole::Outcome => "outcome",
                DescriptiveRole::Treatment => "treatment",
                DescriptiveRole::Covariate => "covariate",
            };
            let _ = writeln!(
                s,
                "{},{role},{},{},{},{},{}",
                r.variable,
                r.mean,
                r.sd,
                r.mean_treated,
                r.mean_control,
                r.difference.map(|v| v.to_string()).unwrap_or_default()
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema::from_toml_str(
            r#"
version = 1
[[columns]]
name = "won"
kind = "binary"
role = "outcome"
[[columns]]
name = "starts"
kind = "binary"
role = "treatment"
[[columns]]
name = "player"
kind = "count"
role = "cluster"
[[columns]]
name = "ability"
kind = "continuous"
role = "heterogeneity"
[[columns]]
name = "home"
kind = "binary"
role = "confounder"
[[columns]]
name = "note"
kind = "continuous"
role = "ignore"
"#,
        )
        .unwrap()
    }

    fn read(text: &str) -> Result<Dataset> {
        read_csv(text.as_bytes(), "inline", &schema())
    }

    #[test]
    fn well_formed_file_loads_every_row() {
        let ds = read(
            "won,starts,player,ability,home,note\n1,1,3,0.5,1,x\n0,0,4,0.1,0,\n1,0,3,0.2,1,y\n",
        )
        .unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.provenance.n_dropped(), 0);
        assert_eq!(ds.z_names(), vec!["ability"]);
        assert_eq!(ds.cluster_ids(), vec![3, 4, 3]);
    }

    #[test]
    fn missing_treatment_is_dropped_and_logged() {
        let ds = read("won,starts,player,ability,home,note\n1,1,3,0.5,1,\n0,,4,0.1,0,\n1,0,3,0.2,1,\n0,0,5,0.3,0,\n")
            .unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.provenance.drop_log(), vec!["missing treatment: 1"]);
        assert_eq!(ds.n() + ds.provenance.n_dropped(), ds.provenance.n_source_rows);
    }

    #[test]
    fn non_binary_treatment_names_row() {
        let err = read("won,starts,player,ability,home,note\n1,1,3,0.5,1,\n0,2,4,0.1,0,\n").unwrap_err();
        match err {
            Error::Row { row, .. } => assert_eq!(row, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_and_absent_columns_rejected() {
        assert!(read("won,starts,player,ability,home,note,extra\n1,1,3,0.5,1,,1\n").is_err());
        assert!(read("won,starts,player,ability,note\n1,1,3,0.5,\n").is_err());
    }

    #[test]
    fn malformed_value_rejected() {
        let err = read("won,starts,player,ability,home,note\n1,1,3,abc,1,\n0,0,3,0.1,1,\n").unwrap_err();
        assert!(err.to_string().contains("row 1"));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_csv(Path::new("/nonexistent/file.csv"), &schema()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn schema_rejects_unknown_keys() {
        let err = Schema::from_toml_str(
            "version = 1\n[[columns]]\nname='a'\nkind='binary'\nrole='outcome'\ncolour='red'\n",
        );
        assert!(err.is_err());
    }

    #[test]
    fn prize_money_examples() {
        let pool: BTreeMap<(&str, u32), f64> = [
            (("a", 2010), 100_000.0),
            (("a", 2015), 300_000.0),
            (("b", 2019), 500_000.0),
        ]
        .into_iter()
        .collect();
        let s = standardize_prize_money(&pool).unwrap();
        assert_eq!(s[&("a", 2010)], 0.0);
        assert_eq!(s[&("a", 2015)], 0.5);
        assert_eq!(s[&("b", 2019)], 1.0);
        let flat: BTreeMap<u32, f64> = [(1, 5.0), (2, 5.0)].into_iter().collect();
        assert_eq!(
            standardize_prize_money(&flat).unwrap_err().to_string(),
            "invalid data: degenerate prize range"
        );
    }

    #[test]
    fn home_radius_rule() {
        assert_eq!(derive_home(50.0, 100.0).unwrap(), 1);
        assert_eq!(derive_home(150.0, 100.0).unwrap(), 0);
        assert_eq!(derive_home(100.0, 100.0).unwrap(), 1);
        assert!(derive_home(-1.0, 100.0).is_err());
    }

    #[test]
    fn standardized_difference_examples() {
        let d = [1, 1, 0, 0];
        assert_eq!(standardized_difference(&[1.0, 2.0, 1.0, 2.0], &d).unwrap(), 0.0);
        // arm means 1 and 0, each with sample variance 0.5
        let v = [0.5, 1.5, -0.5, 0.5];
        let sd = standardized_difference(&v, &d).unwrap();
        assert!((sd - 100.0 / 0.5f64.sqrt()).abs() < 1e-9);
        assert!((sd - 141.42135623730951).abs() < 1e-9);
        let swapped: Vec<u8> = d.iter().map(|x| 1 - x).collect();
        assert_eq!(standardized_difference(&v, &swapped).unwrap(), sd);
        assert_eq!(
            standardized_difference(&[2.0; 4], &d).unwrap_err().to_string(),
            "invalid data: constant variable"
        );
    }

    #[test]
    fn descriptives_constant_column() {
        let ds = read("won,starts,player,ability,home,note\n1,1,3,0.5,1,\n0,0,4,0.5,1,\n1,0,3,0.5,1,\n")
            .unwrap();
        let t = descriptives(&ds);
        let a = t.rows.iter().find(|r| r.variable == "ability").unwrap();
        assert_eq!(a.mean, 0.5);
        assert_eq!(a.sd, 0.0);
        assert_eq!(a.difference, None);
        let out = t.rows.iter().find(|r| r.role == DescriptiveRole::Outcome).unwrap();
        assert_eq!(out.difference, Some(1.0 - 0.5));
        assert!(t.to_csv().starts_with("variable,role,mean"));
    }

    #[test]
    fn csv_roundtrip_via_schema() {
        let ds = read("won,starts,player,ability,home,note\n1,1,3,0.25,1,\n0,0,4,0.1,0,\n").unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let again = read_csv(buf.as_slice(), "mem", &ds.schema()).unwrap();
        assert_eq!(again.records(), ds.records());
        assert_eq!(again.content_hash(), ds.content_hash());
    }

    #[test]
    fn pair_difference_column() {
        let ds = read("won,starts,player,ability,home,note\n1,1,3,0.5,1,\n0,0,4,0.25,0,\n").unwrap();
        let ds = ds.with_pair_difference("ability", "home", "diff", true).unwrap();
        assert_eq!(ds.column("diff").unwrap(), vec![-0.5, 0.25]);
        assert_eq!(ds.z_names(), vec!["ability", "diff"]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn std_diff_affine_invariant(
                v in prop::collection::vec(-10.0f64..10.0, 6..40),
                a in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
                b in -10.0f64..10.0,
            ) {
                let d: Vec<u8> = (0..v.len()).map(|i| (i % 2) as u8).collect();
                if let Ok(s0) = standardized_difference(&v, &d) {
                    let w: Vec<f64> = v.iter().map(|x| a * x + b).collect();
                    let s1 = standardized_difference(&w, &d).unwrap();
                    prop_assert!((s0 - s1).abs() <= 1e-6 * s0.max(1.0));
                }
            }

            #[test]
            fn home_monotone_in_radius(dist in 0.0f64..500.0, r1 in 1.0f64..300.0, extra in 0.0f64..300.0) {
                prop_assert!(derive_home(dist, r1).unwrap() <= derive_home(dist, r1 + extra).unwrap());
            }

            #[test]
            fn prize_scaling_preserves_order(v in prop::collection::vec(0.0f64..1e6, 2..20)) {
                let pool: BTreeMap<usize, f64> = v.iter().copied().enumerate().collect();
                if let Ok(s) = standardize_prize_money(&pool) {
                    for i in 0..v.len() {
                        for j in 0..v.len() {
                            if v[i] < v[j] { prop_assert!(s[&i] <= s[&j]); }
                        }
                    }
                }
            }
        }
    }
}
