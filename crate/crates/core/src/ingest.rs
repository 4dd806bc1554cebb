//! Streaming access to wide, sparse, row-aligned CSV files.
//!
//! A dataset is up to three files (numeric, categorical, date) that share the
//! same `Id` ordering. They are read in lock-step, one row at a time, so memory
//! stays bounded by a single row regardless of file size. Empty cells are
//! missing and never materialised.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::util::splitmix64;

pub const ID_COLUMN: &str = "Id";
pub const LABEL_COLUMN: &str = "Response";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureKind {
    Numeric,
    Date,
    Categorical,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Numeric => "numeric",
            FeatureKind::Date => "date",
            FeatureKind::Categorical => "categorical",
        }
    }

    /// Segment letter used when formatting a name of this kind.
    fn letter(self) -> char {
        match self {
            FeatureKind::Date => 'D',
            FeatureKind::Numeric | FeatureKind::Categorical => 'F',
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parsed coordinate of a column name such as `L3_S50_F4243`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureId {
    pub line: u32,
    pub station: u32,
    pub kind: FeatureKind,
    pub test_id: u32,
    pub raw_name: String,
}

impl FeatureId {
    pub fn new(line: u32, station: u32, kind: FeatureKind, test_id: u32) -> Self {
        FeatureId {
            line,
            station,
            kind,
            test_id,
            raw_name: Self::format(line, station, kind, test_id),
        }
    }

    pub fn format(line: u32, station: u32, kind: FeatureKind, test_id: u32) -> String {
        format!("L{}_S{}_{}{}", line, station, kind.letter(), test_id)
    }
}

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw_name)
    }
}

/// Parse `L<int>_S<int>_<F|D><int>`. The kind follows the segment letter.
pub fn parse_feature_name(name: &str) -> Result<FeatureId> {
    let malformed = || Error::MalformedName(name.to_string());

    fn number(s: &str) -> Option<u32> {
        if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        s.parse().ok()
    }

    let mut parts = name.split('_');
    let (Some(l), Some(s), Some(t), None) = (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return Err(malformed());
    };
    let line = l.strip_prefix('L').and_then(number).ok_or_else(malformed)?;
    let station = s.strip_prefix('S').and_then(number).ok_or_else(malformed)?;
    let (kind, rest) = if let Some(rest) = t.strip_prefix('F') {
        (FeatureKind::Numeric, rest)
    } else if let Some(rest) = t.strip_prefix('D') {
        (FeatureKind::Date, rest)
    } else {
        return Err(malformed());
    };
    let test_id = number(rest).ok_or_else(malformed)?;
    Ok(FeatureId {
        line,
        station,
        kind,
        test_id,
        raw_name: name.to_string(),
    })
}

/// Parse a name found in a file of the given kind; categorical files override the kind.
pub fn parse_feature_name_as(name: &str, source_kind: FeatureKind) -> Result<FeatureId> {
    let mut id = parse_feature_name(name)?;
    if source_kind == FeatureKind::Categorical {
        id.kind = FeatureKind::Categorical;
    }
    Ok(id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Id,
    Label,
    Feature(usize),
}

/// Header layout of one source file.
#[derive(Debug, Clone)]
pub struct Schema {
    pub source_kind: FeatureKind,
    /// Every header cell, in file order.
    pub columns: Vec<String>,
    /// Feature columns only, in file order.
    pub features: Vec<Arc<FeatureId>>,
    slots: Vec<Slot>,
}

impl Schema {
    pub fn has_label(&self) -> bool {
        self.slots.contains(&Slot::Label)
    }

    pub fn arity(&self) -> usize {
        self.columns.len()
    }

    pub fn label_column(&self) -> Option<&str> {
        self.has_label().then_some(LABEL_COLUMN)
    }
}

pub fn read_schema(header_line: &str, source_kind: FeatureKind) -> Result<Schema> {
    let header = header_line.trim_end_matches(['\r', '\n']);
    let header = header.strip_prefix('\u{feff}').unwrap_or(header);
    let columns: Vec<String> = header.split(',').map(str::to_string).collect();
    if columns[0] != ID_COLUMN {
        return Err(Error::MissingIdColumn(columns[0].clone()));
    }
    let mut seen = HashSet::with_capacity(columns.len());
    let mut slots = Vec::with_capacity(columns.len());
    let mut features = Vec::new();
    for (i, name) in columns.iter().enumerate() {
        if !seen.insert(name.as_str()) {
            return Err(Error::DuplicateColumn(name.clone()));
        }
        let slot = if i == 0 {
            Slot::Id
        } else if name == LABEL_COLUMN {
            Slot::Label
        } else {
            features.push(Arc::new(parse_feature_name_as(name, source_kind)?));
            Slot::Feature(features.len() - 1)
        };
        slots.push(slot);
    }
    Ok(Schema {
        source_kind,
        columns,
        features,
        slots,
    })
}

/// One product part. Missing cells are absent from the lists.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseRow {
    pub id: u64,
    pub numeric: Vec<(Arc<FeatureId>, f64)>,
    pub date: Vec<(Arc<FeatureId>, f64)>,
    pub categorical: Vec<(Arc<FeatureId>, String)>,
    pub label: Option<u8>,
}

impl SparseRow {
    pub fn new(id: u64) -> Self {
        SparseRow {
            id,
            ..Default::default()
        }
    }

    /// Every present feature of every kind.
    pub fn features(&self) -> impl Iterator<Item = &FeatureId> {
        self.numeric
            .iter()
            .map(|(f, _)| f.as_ref())
            .chain(self.date.iter().map(|(f, _)| f.as_ref()))
            .chain(self.categorical.iter().map(|(f, _)| f.as_ref()))
    }

    pub fn n_present(&self) -> usize {
        self.numeric.len() + self.date.len() + self.categorical.len()
    }

    pub fn require_label(&self) -> Result<u8> {
        self.label.ok_or(Error::MissingLabel(self.id))
    }
}

/// Schemas of the files that make up one dataset.
#[derive(Debug, Clone, Default)]
pub struct SchemaSet {
    pub numeric: Option<Arc<Schema>>,
    pub categorical: Option<Arc<Schema>>,
    pub date: Option<Arc<Schema>>,
}

impl SchemaSet {
    pub fn get(&self, kind: FeatureKind) -> Option<&Arc<Schema>> {
        match kind {
            FeatureKind::Numeric => self.numeric.as_ref(),
            FeatureKind::Categorical => self.categorical.as_ref(),
            FeatureKind::Date => self.date.as_ref(),
        }
    }

    fn slot_mut(&mut self, kind: FeatureKind) -> &mut Option<Arc<Schema>> {
        match kind {
            FeatureKind::Numeric => &mut self.numeric,
            FeatureKind::Categorical => &mut self.categorical,
            FeatureKind::Date => &mut self.date,
        }
    }

    pub fn features(&self, kind: FeatureKind) -> &[Arc<FeatureId>] {
        self.get(kind).map(|s| s.features.as_slice()).unwrap_or(&[])
    }

    /// Reconstruct schemas from in-memory rows, columns in order of first appearance.
    pub fn infer(rows: &[SparseRow]) -> SchemaSet {
        fn collect<'a, T: 'a>(
            kind: FeatureKind,
            cells: impl Iterator<Item = &'a (Arc<FeatureId>, T)>,
            any_label: bool,
        ) -> Option<Arc<Schema>> {
            let mut seen = HashSet::new();
            let mut features = Vec::new();
            for (f, _) in cells {
                if seen.insert(f.raw_name.clone()) {
                    features.push(Arc::clone(f));
                }
            }
            if features.is_empty() {
                return None;
            }
            let mut columns = vec![ID_COLUMN.to_string()];
            let mut slots = vec![Slot::Id];
            for (i, f) in features.iter().enumerate() {
                columns.push(f.raw_name.clone());
                slots.push(Slot::Feature(i));
            }
            if any_label {
                columns.push(LABEL_COLUMN.to_string());
                slots.push(Slot::Label);
            }
            Some(Arc::new(Schema {
                source_kind: kind,
                columns,
                features,
                slots,
            }))
        }
        let labelled = rows.iter().any(|r| r.label.is_some());
        SchemaSet {
            numeric: collect(
                FeatureKind::Numeric,
                rows.iter().flat_map(|r| r.numeric.iter()),
                labelled,
            ),
            categorical: collect(
                FeatureKind::Categorical,
                rows.iter().flat_map(|r| r.categorical.iter()),
                false,
            ),
            date: collect(FeatureKind::Date, rows.iter().flat_map(|r| r.date.iter()), false),
        }
    }
}

/// Paths of the (up to) three aligned source files.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetFiles {
    pub numeric: Option<PathBuf>,
    pub categorical: Option<PathBuf>,
    pub date: Option<PathBuf>,
}

impl DatasetFiles {
    /// Locate `<prefix>_numeric.csv`, `<prefix>_categorical.csv` and `<prefix>_date.csv`
    /// inside `dir`. Absent files are skipped; at least one must exist.
    pub fn in_dir(dir: impl AsRef<Path>, prefix: &str) -> Result<Self> {
        let dir = dir.as_ref();
        let find = |kind: FeatureKind| {
            let p = dir.join(format!("{prefix}_{}.csv", kind.as_str()));
            p.is_file().then_some(p)
        };
        let files = DatasetFiles {
            numeric: find(FeatureKind::Numeric),
            categorical: find(FeatureKind::Categorical),
            date: find(FeatureKind::Date),
        };
        if files.numeric.is_none() && files.categorical.is_none() && files.date.is_none() {
            return Err(Error::MissingInput(dir.join(format!("{prefix}_*.csv"))));
        }
        Ok(files)
    }

    fn entries(&self) -> impl Iterator<Item = (FeatureKind, &PathBuf)> {
        [
            (FeatureKind::Numeric, self.numeric.as_ref()),
            (FeatureKind::Categorical, self.categorical.as_ref()),
            (FeatureKind::Date, self.date.as_ref()),
        ]
        .into_iter()
        .filter_map(|(k, p)| p.map(|p| (k, p)))
    }

    pub fn open(&self) -> Result<RowStream> {
        let mut readers: Vec<(FeatureKind, Box<dyn BufRead + Send>)> = Vec::new();
        for (kind, path) in self.entries() {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            readers.push((kind, Box::new(BufReader::with_capacity(1 << 20, file))));
        }
        RowStream::from_readers(readers)
    }

    pub fn read_schemas(&self) -> Result<SchemaSet> {
        Ok(self.open()?.schemas().clone())
    }
}

struct SourceReader {
    kind: FeatureKind,
    schema: Arc<Schema>,
    reader: Box<dyn BufRead + Send>,
    line_no: u64,
    buf: String,
}

impl SourceReader {
    /// Advance to the next non-empty line; `false` at end of input.
    fn advance(&mut self) -> std::io::Result<bool> {
        loop {
            self.buf.clear();
            if self.reader.read_line(&mut self.buf)? == 0 {
                return Ok(false);
            }
            self.line_no += 1;
            let len = self.buf.trim_end_matches(['\r', '\n']).len();
            if len > 0 {
                self.buf.truncate(len);
                return Ok(true);
            }
        }
    }
}

/// Lock-step iterator over aligned source files.
pub struct RowStream {
    sources: Vec<SourceReader>,
    schemas: SchemaSet,
    rows_read: u64,
    done: bool,
}

impl RowStream {
    pub fn from_readers(readers: Vec<(FeatureKind, Box<dyn BufRead + Send>)>) -> Result<Self> {
        if readers.is_empty() {
            return Err(Error::EmptyData("no source files"));
        }
        let mut sources = Vec::with_capacity(readers.len());
        let mut schemas = SchemaSet::default();
        for (kind, mut reader) in readers {
            let mut buf = String::new();
            let mut line_no = 0;
            let header = loop {
                buf.clear();
                if reader
                    .read_line(&mut buf)
                    .map_err(|e| Error::io(format!("<{kind} source>"), e))?
                    == 0
                {
                    return Err(Error::EmptyData("source file has no header line"));
                }
                line_no += 1;
                let h = buf.trim_end_matches(['\r', '\n']);
                if !h.is_empty() {
                    break h.to_string();
                }
            };
            let src = SourceReader {
                kind,
                schema: Arc::new(read_schema(&header, kind)?),
                reader,
                line_no,
                buf,
            };
            *schemas.slot_mut(kind) = Some(Arc::clone(&src.schema));
            sources.push(src);
        }
        Ok(RowStream {
            sources,
            schemas,
            rows_read: 0,
            done: false,
        })
    }

    pub fn schemas(&self) -> &SchemaSet {
        &self.schemas
    }

    fn read_row(&mut self) -> Result<Option<SparseRow>> {
        let mut row: Option<SparseRow> = None;
        let mut first: Option<(&'static str, u64)> = None;
        let mut ended: Vec<&'static str> = Vec::new();
        let row_no = self.rows_read + 1;
        for src in &mut self.sources {
            let kind = src.kind;
            let schema = Arc::clone(&src.schema);
            if !src
                .advance()
                .map_err(|e| Error::io(format!("<{kind} source>"), e))?
            {
                ended.push(kind.as_str());
                continue;
            }
            let line_no = src.line_no;
            let line = src.buf.as_str();
            let mut cells = line.split(',');
            let mut n_cells = 0usize;
            let mut id = 0u64;
            let target = row.get_or_insert_with(SparseRow::default);
            for (slot, cell) in schema.slots.iter().zip(&mut cells) {
                n_cells += 1;
                match *slot {
                    Slot::Id => {
                        id = cell.trim().parse().map_err(|_| Error::ParseValue {
                            line: line_no,
                            column: ID_COLUMN.into(),
                            value: cell.into(),
                        })?;
                    }
                    Slot::Label => {
                        if cell.is_empty() {
                            continue;
                        }
                        let label = match cell.trim() {
                            "0" => 0,
                            "1" => 1,
                            _ => {
                                return Err(Error::ParseValue {
                                    line: line_no,
                                    column: LABEL_COLUMN.into(),
                                    value: cell.into(),
                                })
                            }
                        };
                        target.label.get_or_insert(label);
                    }
                    Slot::Feature(_) if cell.is_empty() => {}
                    Slot::Feature(f) => {
                        let feature = Arc::clone(&schema.features[f]);
                        let parse = |cell: &str| -> Result<f64> {
                            cell.trim().parse::<f64>().map_err(|_| Error::ParseValue {
                                line: line_no,
                                column: feature.raw_name.clone(),
                                value: cell.into(),
                            })
                        };
                        match kind {
                            FeatureKind::Numeric => {
                                let v = parse(cell)?;
                                target.numeric.push((feature, v));
                            }
                            FeatureKind::Date => {
                                let v = parse(cell)?;
                                target.date.push((feature, v));
                            }
                            FeatureKind::Categorical => {
                                target.categorical.push((feature, cell.to_string()));
                            }
                        }
                    }
                }
            }
            n_cells += cells.count();
            if n_cells != schema.arity() {
                return Err(Error::ArityMismatch {
                    kind: kind.as_str(),
                    line: line_no,
                    expected: schema.arity(),
                    found: n_cells,
                });
            }
            match first {
                None => {
                    first = Some((kind.as_str(), id));
                    target.id = id;
                }
                Some((left_kind, left)) if left != id => {
                    return Err(Error::IdMismatch {
                        row: row_no,
                        left_kind,
                        left,
                        right_kind: kind.as_str(),
                        right: id,
                    })
                }
                Some(_) => {}
            }
        }
        if !ended.is_empty() {
            if ended.len() == self.sources.len() {
                return Ok(None);
            }
            return Err(Error::RowCountMismatch {
                kind: ended[0],
                rows: self.rows_read,
            });
        }
        self.rows_read += 1;
        Ok(row)
    }
}

impl Iterator for RowStream {
    type Item = Result<SparseRow>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.read_row() {
            Ok(Some(row)) => Some(Ok(row)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

pub type RowIter<'a> = Box<dyn Iterator<Item = Result<SparseRow>> + Send + 'a>;

/// Anything that can be streamed more than once, in a stable order.
pub trait RowSource: Sync {
    fn rows(&self) -> Result<RowIter<'_>>;
    fn schemas(&self) -> Result<SchemaSet>;
}

impl RowSource for DatasetFiles {
    fn rows(&self) -> Result<RowIter<'_>> {
        Ok(Box::new(self.open()?))
    }

    fn schemas(&self) -> Result<SchemaSet> {
        self.read_schemas()
    }
}

/// Rows held in memory, with an explicit column layout.
#[derive(Debug, Clone, Default)]
pub struct InMemoryRows {
    pub schemas: SchemaSet,
    pub rows: Vec<SparseRow>,
}

impl InMemoryRows {
    pub fn new(rows: Vec<SparseRow>) -> Self {
        InMemoryRows {
            schemas: SchemaSet::infer(&rows),
            rows,
        }
    }
}

impl RowSource for InMemoryRows {
    fn rows(&self) -> Result<RowIter<'_>> {
        Ok(Box::new(self.rows.iter().cloned().map(Ok)))
    }

    fn schemas(&self) -> Result<SchemaSet> {
        Ok(self.schemas.clone())
    }
}

/// Deterministic fold of a row id: a keyed hash of `(seed, id)` reduced mod `k`.
pub fn assign_fold(id: u64, k: usize, seed: u64) -> Result<usize> {
    if k < 2 {
        return Err(Error::InvalidK(k));
    }
    Ok((splitmix64(splitmix64(seed) ^ splitmix64(id)) % k as u64) as usize)
}

/// Balanced fold of a stream position: each consecutive block of `k` positions
/// receives a seeded permutation of `0..k`, so fold sizes differ by at most one.
pub fn balanced_fold(position: u64, k: usize, seed: u64) -> Result<usize> {
    if k < 2 {
        return Err(Error::InvalidK(k));
    }
    let block = position / k as u64;
    let offset = (position % k as u64) as usize;
    let mut state = splitmix64(seed ^ splitmix64(block.wrapping_add(0x5eed)));
    let mut perm: Vec<usize> = (0..k).collect();
    for i in (1..k).rev() {
        state = splitmix64(state);
        let j = (state % (i as u64 + 1)) as usize;
        perm.swap(i, j);
    }
    Ok(perm[offset])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn reader(s: &str) -> Box<dyn BufRead + Send> {
        Box::new(Cursor::new(s.to_string().into_bytes()))
    }

    #[test]
    fn parses_example_names() {
        let f = parse_feature_name("L3_S50_F4243").unwrap();
        assert_eq!((f.line, f.station, f.kind, f.test_id), (3, 50, FeatureKind::Numeric, 4243));
        let d = parse_feature_name("L3_S50_D4242").unwrap();
        assert_eq!((d.line, d.station, d.kind, d.test_id), (3, 50, FeatureKind::Date, 4242));
        let z = parse_feature_name("L0_S0_F20").unwrap();
        assert_eq!((z.line, z.station, z.kind, z.test_id), (0, 0, FeatureKind::Numeric, 20));
    }

    #[test]
    fn rejects_malformed_names() {
        for bad in ["S50_F4243", "", "L3_S50", "L3_S50_X1", "L_S1_F1", "L1_S1_F1_x", "L-1_S1_F1", "L1_S1_F"] {
            assert!(
                matches!(parse_feature_name(bad), Err(Error::MalformedName(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn categorical_source_overrides_kind() {
        let f = parse_feature_name_as("L0_S1_F25", FeatureKind::Categorical).unwrap();
        assert_eq!(f.kind, FeatureKind::Categorical);
    }

    #[test]
    fn schema_with_label() {
        let s = read_schema("Id,L0_S0_F0,Response", FeatureKind::Numeric).unwrap();
        assert_eq!(s.features.len(), 1);
        assert!(s.has_label());
        assert_eq!(s.arity(), 3);
    }

    #[test]
    fn schema_duplicate_column() {
        assert!(matches!(
            read_schema("Id,L0_S0_F0,L0_S0_F0", FeatureKind::Numeric),
            Err(Error::DuplicateColumn(c)) if c == "L0_S0_F0"
        ));
        assert!(matches!(
            read_schema("Id,L0_S0_F0,bogus", FeatureKind::Numeric),
            Err(Error::MalformedName(_))
        ));
        assert!(matches!(
            read_schema("Row,L0_S0_F0", FeatureKind::Numeric),
            Err(Error::MissingIdColumn(_))
        ));
    }

    #[test]
    fn empty_cells_are_omitted() {
        let mut s = RowStream::from_readers(vec![(
            FeatureKind::Numeric,
            reader("Id,L0_S0_F0,L0_S0_F2\n7,,0.03\n"),
        )])
        .unwrap();
        let row = s.next().unwrap().unwrap();
        assert_eq!(row.id, 7);
        assert_eq!(row.numeric.len(), 1);
        assert_eq!(row.numeric[0].0.raw_name, "L0_S0_F2");
        assert_eq!(row.numeric[0].1, 0.03);
        assert!(s.next().is_none());
    }

    #[test]
    fn zero_is_present() {
        let mut s = RowStream::from_readers(vec![(
            FeatureKind::Numeric,
            reader("Id,L0_S0_F0\r\n1,0\r\n"),
        )])
        .unwrap();
        let row = s.next().unwrap().unwrap();
        assert_eq!(row.numeric.len(), 1);
        assert_eq!(row.numeric[0].1, 0.0);
    }

    #[test]
    fn id_mismatch_between_files() {
        let mut s = RowStream::from_readers(vec![
            (FeatureKind::Numeric, reader("Id,L0_S0_F0\n5,1.0\n")),
            (FeatureKind::Date, reader("Id,L0_S0_D1\n6,2.0\n")),
        ])
        .unwrap();
        assert!(matches!(
            s.next().unwrap(),
            Err(Error::IdMismatch { left: 5, right: 6, .. })
        ));
        assert!(s.next().is_none());
    }

    #[test]
    fn arity_mismatch() {
        let mut s = RowStream::from_readers(vec![(
            FeatureKind::Numeric,
            reader("Id,L0_S0_F0,L0_S0_F2\n1,2\n"),
        )])
        .unwrap();
        assert!(matches!(
            s.next().unwrap(),
            Err(Error::ArityMismatch { expected: 3, found: 2, .. })
        ));
        let mut s = RowStream::from_readers(vec![(
            FeatureKind::Numeric,
            reader("Id,L0_S0_F0\n1,2,3\n"),
        )])
        .unwrap();
        assert!(matches!(s.next().unwrap(), Err(Error::ArityMismatch { found: 3, .. })));
    }

    #[test]
    fn three_rows_ids_preserved_across_files() {
        let rows: Vec<SparseRow> = RowStream::from_readers(vec![
            (
                FeatureKind::Numeric,
                reader("Id,L0_S0_F0,Response\n4,1.5,0\n9,,1\n11,-2,0\n"),
            ),
            (FeatureKind::Categorical, reader("Id,L0_S0_F1\n4,T1\n9,\n11,T48\n")),
            (FeatureKind::Date, reader("Id,L0_S0_D2\n4,82.24\n9,87.33\n11,\n")),
        ])
        .unwrap()
        .collect::<Result<_>>()
        .unwrap();
        assert_eq!(rows.iter().map(|r| r.id).collect::<Vec<_>>(), vec![4, 9, 11]);
        assert_eq!(rows[1].label, Some(1));
        assert_eq!(rows[0].categorical[0].1, "T1");
        assert_eq!(rows[0].categorical[0].0.kind, FeatureKind::Categorical);
        assert!(rows[1].numeric.is_empty());
        assert_eq!(rows[2].date.len(), 0);
    }

    #[test]
    fn unequal_row_counts_are_reported() {
        let mut s = RowStream::from_readers(vec![
            (FeatureKind::Numeric, reader("Id,L0_S0_F0\n1,1\n2,2\n")),
            (FeatureKind::Date, reader("Id,L0_S0_D1\n1,1\n")),
        ])
        .unwrap();
        assert!(s.next().unwrap().is_ok());
        assert!(matches!(s.next().unwrap(), Err(Error::RowCountMismatch { .. })));
    }

    #[test]
    fn fold_is_deterministic_and_validates_k() {
        assert_eq!(assign_fold(123, 3, 9).unwrap(), assign_fold(123, 3, 9).unwrap());
        assert!(matches!(assign_fold(1, 1, 0), Err(Error::InvalidK(1))));
        assert!(matches!(balanced_fold(1, 0, 0), Err(Error::InvalidK(0))));
    }

    #[test]
    fn folds_are_near_uniform() {
        let mut counts = [0usize; 3];
        for id in 0..100_000u64 {
            counts[assign_fold(id, 3, 2016).unwrap()] += 1;
        }
        for c in counts {
            let frac = c as f64 / 100_000.0;
            assert!((frac - 1.0 / 3.0).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn balanced_fold_sizes_differ_by_at_most_one() {
        for n in 0..40u64 {
            for k in 2..5 {
                let mut counts = vec![0u64; k];
                for p in 0..n {
                    counts[balanced_fold(p, k, 77).unwrap()] += 1;
                }
                let max = counts.iter().max().unwrap();
                let min = counts.iter().min().unwrap();
                assert!(max - min <= 1, "n={n} k={k} {counts:?}");
            }
        }
    }
}
