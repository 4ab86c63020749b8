use std::collections::HashMap;

use crate::error::{PaseError, Result};

/// Ordered phoneme labels plus the viseme group each one belongs to.
///
/// Labels are ARPAbet symbols; lookups ignore case and trailing stress digits
/// so aligner output such as `AH0` resolves to `AH`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeInventory {
    labels: Vec<String>,
    viseme_class: Vec<usize>,
    index: HashMap<String, usize>,
}

/// Viseme-sharing groups for consonants whose lip shapes are interchangeable:
/// plosives, nasals, fricatives and affricates.
pub const VISEME_SHARING_GROUPS: &[&[&str]] = &[
    &["P", "B"],
    &["T", "D"],
    &["K", "G"],
    &["M", "N", "NG"],
    &["F", "V"],
    &["S", "Z"],
    &["TH", "DH"],
    &["SH", "ZH"],
    &["CH", "JH"],
];

pub fn normalize_label(label: &str) -> String {
    label
        .trim()
        .trim_end_matches(|c: char| c.is_ascii_digit())
        .to_ascii_uppercase()
}

impl PhonemeInventory {
    pub fn new<S: AsRef<str>>(entries: &[(S, usize)]) -> Result<Self> {
        let mut labels = Vec::with_capacity(entries.len());
        let mut viseme_class = Vec::with_capacity(entries.len());
        let mut index = HashMap::new();
        for (label, class) in entries {
            let norm = normalize_label(label.as_ref());
            if norm.is_empty() {
                return Err(PaseError::Corpus("empty phoneme label".into()));
            }
            if index.insert(norm.clone(), labels.len()).is_some() {
                return Err(PaseError::Corpus(format!("duplicate phoneme label {norm}")));
            }
            labels.push(norm);
            viseme_class.push(*class);
        }
        Ok(Self {
            labels,
            viseme_class,
            index,
        })
    }

    /// All phonemes of the viseme-sharing table, one class per group.
    pub fn viseme_table() -> Self {
        let entries: Vec<(&str, usize)> = VISEME_SHARING_GROUPS
            .iter()
            .enumerate()
            .flat_map(|(class, group)| group.iter().map(move |&p| (p, class)))
            .collect();
        Self::new(&entries).expect("static table is valid")
    }

    /// Eight phonemes in four viseme classes, used by the synthetic corpus.
    /// Class ids are ordered by mouth aperture: closed, nasal, fricative, stop.
    pub fn desk() -> Self {
        Self::new(&[
            ("P", 0),
            ("B", 0),
            ("M", 1),
            ("N", 1),
            ("S", 2),
            ("Z", 2),
            ("T", 3),
            ("D", 3),
        ])
        .expect("static inventory is valid")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(&normalize_label(label)).copied()
    }

    pub fn viseme_class(&self, id: usize) -> usize {
        self.viseme_class[id]
    }

    pub fn same_viseme(&self, a: usize, b: usize) -> bool {
        self.viseme_class[a] == self.viseme_class[b]
    }

    /// Number of distinct class ids in use.
    pub fn class_count(&self) -> usize {
        let mut classes = self.viseme_class.clone();
        classes.sort_unstable();
        classes.dedup();
        classes.len()
    }

    /// Unordered pairs of distinct phonemes that share a viseme class.
    pub fn viseme_sharing_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for a in 0..self.len() {
            for b in a + 1..self.len() {
                if self.same_viseme(a, b) {
                    out.push((a, b));
                }
            }
        }
        out
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("# label\tviseme_class\n");
        for (l, c) in self.labels.iter().zip(&self.viseme_class) {
            s.push_str(&format!("{l}\t{c}\n"));
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(label), Some(class), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(PaseError::MalformedLine {
                    line: i + 1,
                    reason: "expected LABEL<TAB>CLASS".into(),
                });
            };
            let class = class.trim().parse::<usize>().map_err(|e| PaseError::MalformedLine {
                line: i + 1,
                reason: e.to_string(),
            })?;
            entries.push((label.to_string(), class));
        }
        Self::new(&entries)
    }
}
