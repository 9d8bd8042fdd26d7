use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Bidirectional map between external string ids and dense indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    ids: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_ids(ids: Vec<String>) -> Self {
        let mut v = Vocabulary::new();
        for id in ids {
            v.intern(&id);
        }
        v
    }

    /// Index of `id`, assigning the next free index on first sight.
    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), i);
        i
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Record {
    pub user: usize,
    pub item: usize,
    pub timestamp: u64,
}

/// Chronological click log with dense user and item indices.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionLog {
    records: Vec<Record>,
    pub users: Vocabulary,
    pub items: Vocabulary,
    /// Exact `(user, item, timestamp)` repeats dropped while loading.
    pub duplicates_removed: usize,
    pub item_features: Option<ItemFeatures>,
}

impl InteractionLog {
    /// Builds a log from already-indexed records: exact repeats are dropped and
    /// the rest stably sorted by timestamp.
    pub fn from_records(users: Vocabulary, items: Vocabulary, records: Vec<Record>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut kept = Vec::with_capacity(records.len());
        let mut duplicates = 0;
        for r in records {
            if r.user >= users.len() {
                return Err(Error::IndexOutOfRange {
                    what: "user",
                    index: r.user,
                    len: users.len(),
                });
            }
            if r.item >= items.len() {
                return Err(Error::IndexOutOfRange {
                    what: "item",
                    index: r.item,
                    len: items.len(),
                });
            }
            if seen.insert(r) {
                kept.push(r);
            } else {
                duplicates += 1;
            }
        }
        kept.sort_by_key(|r| r.timestamp);
        if duplicates > 0 {
            log::warn!("dropped {duplicates} duplicate interaction record(s)");
        }
        Ok(InteractionLog {
            records: kept,
            users,
            items,
            duplicates_removed: duplicates,
            item_features: None,
        })
    }

    /// Parses tab-separated `user_id  item_id  timestamp` lines (no header).
    ///
    /// Blank lines are ignored. Dense indices follow first appearance in the text.
    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut users = Vocabulary::new();
        let mut items = Vocabulary::new();
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            let (u, i, ts) = (fields[0].trim(), fields[1].trim(), fields[2].trim());
            if u.is_empty() || i.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "empty user or item id".into(),
                });
            }
            let timestamp: u64 = ts.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("timestamp `{ts}` is not a nonnegative integer"),
            })?;
            records.push(Record {
                user: users.intern(u),
                item: items.intern(i),
                timestamp,
            });
        }
        Self::from_records(users, items, records)
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    /// Serializes back to the TSV interchange format.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(self.users.id(r.user));
            out.push('\t');
            out.push_str(self.items.id(r.item));
            out.push('\t');
            out.push_str(&r.timestamp.to_string());
            out.push('\n');
        }
        out
    }

    pub fn with_features(mut self, features: ItemFeatures) -> Result<Self> {
        if features.matrix.rows() != self.n_items() {
            return Err(crate::error::mismatch(
                "item features",
                &[self.n_items(), features.dim()],
                features.matrix.shape(),
            ));
        }
        self.item_features = Some(features);
        Ok(self)
    }
}

/// Per-item feature vectors aligned with an item vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemFeatures {
    /// `n_items × F`; items absent from the feature file keep a zero row.
    pub matrix: Tensor<f64>,
    pub missing: usize,
}

impl ItemFeatures {
    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    /// Parses `item_id` followed by `dim` whitespace-separated reals per line.
    /// Lines for items outside `items` are ignored.
    pub fn parse(text: &str, dim: usize, items: &Vocabulary) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("feature dimension must be positive".into()));
        }
        let mut matrix = Tensor::zeros(&[items.len(), dim]);
        let mut filled = alloc::vec![false; items.len()];
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let id = fields.next().unwrap_or_default();
            let values = fields
                .map(|f| {
                    f.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| Error::Parse {
                        line: line_no,
                        message: format!("feature value `{f}` is not a finite real"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if values.len() != dim {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected {dim} feature values, found {}", values.len()),
                });
            }
            if let Some(idx) = items.get(id) {
                matrix.row_mut(idx).copy_from_slice(&values);
                filled[idx] = true;
            }
        }
        let missing = filled.iter().filter(|f| !**f).count();
        if missing > 0 {
            log::warn!("{missing} item(s) have no feature vector; using zeros");
        }
        Ok(ItemFeatures { matrix, missing })
    }
}
