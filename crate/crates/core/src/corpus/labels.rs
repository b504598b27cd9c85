use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_unique_ids, is_imdb_id, CorpusError, ScreenplayRecord};

/// Award meta-classes that count as a writing nomination.
pub const NOMINATION_CLASSES: &[&str] = &["Writing", "Title"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AwardRecord {
    pub imdb_id: String,
    pub category_class: String,
    pub won: bool,
}

impl AwardRecord {
    pub fn new(imdb_id: impl Into<String>, category_class: impl Into<String>, won: bool) -> Result<Self, CorpusError> {
        let imdb_id = imdb_id.into();
        if !is_imdb_id(&imdb_id) {
            return Err(CorpusError::InvalidImdbId(imdb_id));
        }
        Ok(Self { imdb_id, category_class: category_class.into(), won })
    }

    pub fn counts_as_nomination(&self) -> bool {
        NOMINATION_CLASSES.contains(&self.category_class.as_str())
    }
}

/// Labels every record from the award list. Only `Writing`/`Title` classes
/// count; the result does not depend on award order.
pub fn assign_labels(
    mut records: Vec<ScreenplayRecord>,
    awards: &[AwardRecord],
) -> Result<Vec<ScreenplayRecord>, CorpusError> {
    check_unique_ids(&records)?;
    let mut won_by_id: HashMap<&str, bool> = HashMap::new();
    for a in awards.iter().filter(|a| a.counts_as_nomination()) {
        *won_by_id.entry(a.imdb_id.as_str()).or_insert(false) |= a.won;
    }
    for r in &mut records {
        let (nominated, winner) = match won_by_id.get(r.imdb_id.as_str()) {
            Some(&won) => (1, u8::from(won)),
            None => (0, 0),
        };
        r.nominated = nominated;
        r.winner = winner;
    }
    Ok(records)
}

fn parse_flag(s: &str) -> bool {
    matches!(s.trim().to_ascii_lowercase().as_str(), "true" | "1" | "yes" | "y" | "t")
}

const ID_COLUMNS: &[&str] = &["imdb_id", "FilmId", "film_id"];
const CLASS_COLUMNS: &[&str] = &["category_class", "Class", "class"];
const WON_COLUMNS: &[&str] = &["won", "winner", "Winner"];

/// Loads award rows from CSV (header-matched; accepts the oscar-records
/// column names `FilmId`/`Class`/`Winner`), JSON array, or JSON lines.
///
/// Rows whose film id field holds several ids produce one record per id.
/// Rows with no valid IMDb id are skipped and counted in the second value.
pub fn load_awards(path: &Path) -> Result<(Vec<AwardRecord>, usize), CorpusError> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    let rows: Vec<(String, String, bool)> = match ext.as_str() {
        "json" | "jsonl" | "ndjson" => parse_json_awards(path, &text)?,
        _ => parse_csv_awards(path, &text)?,
    };
    let mut out = Vec::with_capacity(rows.len());
    let mut skipped = 0;
    for (ids, class, won) in rows {
        let mut any = false;
        for id in ids.split(|c: char| c == ',' || c == ';' || c.is_whitespace()) {
            if let Ok(rec) = AwardRecord::new(id.trim(), class.trim(), won) {
                out.push(rec);
                any = true;
            }
        }
        if !any {
            skipped += 1;
        }
    }
    if skipped > 0 {
        tracing::warn!(skipped, path = %path.display(), "award rows without a valid imdb id");
    }
    Ok((out, skipped))
}

fn parse_csv_awards(path: &Path, text: &str) -> Result<Vec<(String, String, bool)>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let parse_err = |line: usize, reason: String| CorpusError::Parse { path: path.to_path_buf(), line, reason };
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let find = |names: &[&str]| headers.iter().position(|h| names.contains(&h.trim()));
    let id_col = find(ID_COLUMNS).ok_or_else(|| parse_err(1, "no imdb id column".into()))?;
    let class_col = find(CLASS_COLUMNS).ok_or_else(|| parse_err(1, "no category class column".into()))?;
    let won_col = find(WON_COLUMNS);
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(i + 2, e.to_string()))?;
        let get = |c: usize| rec.get(c).unwrap_or("").to_string();
        let won = won_col.map(|c| parse_flag(&get(c))).unwrap_or(false);
        rows.push((get(id_col), get(class_col), won));
    }
    Ok(rows)
}

fn parse_json_awards(path: &Path, text: &str) -> Result<Vec<(String, String, bool)>, CorpusError> {
    let parse_err = |line: usize, reason: String| CorpusError::Parse { path: path.to_path_buf(), line, reason };
    let values: Vec<serde_json::Value> = if text.trim_start().starts_with('[') {
        serde_json::from_str(text).map_err(|e| parse_err(e.line(), e.to_string()))?
    } else {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| parse_err(i + 1, e.to_string())))
            .collect::<Result<_, _>>()?
    };
    let field = |v: &serde_json::Value, names: &[&str]| -> Option<serde_json::Value> {
        names.iter().find_map(|n| v.get(*n).cloned())
    };
    Ok(values
        .iter()
        .map(|v| {
            let s = |x: Option<serde_json::Value>| match x {
                Some(serde_json::Value::String(s)) => s,
                Some(serde_json::Value::Null) | None => String::new(),
                Some(other) => other.to_string(),
            };
            let won = match field(v, WON_COLUMNS) {
                Some(serde_json::Value::Bool(b)) => b,
                Some(serde_json::Value::Number(n)) => n.as_f64() == Some(1.0),
                Some(serde_json::Value::String(s)) => parse_flag(&s),
                _ => false,
            };
            (s(field(v, ID_COLUMNS)), s(field(v, CLASS_COLUMNS)), won)
        })
        .collect())
}

/// Label distribution of one record set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub total: usize,
    pub nominated: usize,
    pub winners: usize,
}

impl LabelSummary {
    pub fn from_records(records: &[ScreenplayRecord]) -> Self {
        Self {
            total: records.len(),
            nominated: records.iter().filter(|r| r.nominated == 1).count(),
            winners: records.iter().filter(|r| r.winner == 1).count(),
        }
    }

    pub fn positive_rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.nominated as f64 / self.total as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{RawScreenplay, TransitionRules};
    use proptest::prelude::*;

    fn record(id: &str) -> ScreenplayRecord {
        static RULES: std::sync::LazyLock<TransitionRules> = std::sync::LazyLock::new(TransitionRules::default);
        ScreenplayRecord::from_raw(
            RawScreenplay {
                movie_name: format!("film_{}", 2000),
                imdb_id: id.into(),
                script: "x".into(),
                summary: "y".into(),
            },
            &RULES,
        )
        .unwrap()
    }

    #[test]
    fn writing_nomination_without_win() {
        let awards = [AwardRecord::new("tt001", "Writing", false).unwrap()];
        let out = assign_labels(vec![record("tt001")], &awards).unwrap();
        assert_eq!((out[0].nominated, out[0].winner), (1, 0));
    }

    #[test]
    fn unmatched_record_is_negative() {
        let awards = [AwardRecord::new("tt999", "Writing", true).unwrap()];
        let out = assign_labels(vec![record("tt001")], &awards).unwrap();
        assert_eq!((out[0].nominated, out[0].winner), (0, 0));
    }

    #[test]
    fn other_classes_are_filtered() {
        let awards = [
            AwardRecord::new("tt001", "Acting", true).unwrap(),
            AwardRecord::new("tt002", "Title", true).unwrap(),
        ];
        let out = assign_labels(vec![record("tt001"), record("tt002")], &awards).unwrap();
        assert_eq!((out[0].nominated, out[0].winner), (0, 0));
        assert_eq!((out[1].nominated, out[1].winner), (1, 1));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = assign_labels(vec![record("tt001"), record("tt001")], &[]).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateImdbId(id) if id == "tt001"));
    }

    #[test]
    fn invalid_award_id_rejected() {
        assert!(AwardRecord::new("nm123", "Writing", false).is_err());
    }

    #[test]
    fn csv_with_oscar_record_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("oscars.csv");
        std::fs::write(
            &path,
            "Ceremony,Class,FilmId,Winner\n1,Writing,tt0000001,True\n1,Title,tt0000002,\n1,Acting,,\n1,Writing,\"tt0000003,tt0000004\",\n",
        )
        .unwrap();
        let (awards, skipped) = load_awards(&path).unwrap();
        assert_eq!(skipped, 1);
        assert_eq!(awards.len(), 4);
        assert!(awards[0].won && !awards[1].won);
        assert_eq!(awards[3].imdb_id, "tt0000004");
    }

    #[test]
    fn json_and_jsonl_awards() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        std::fs::write(&a, r#"[{"imdb_id":"tt1","category_class":"Writing","won":true}]"#).unwrap();
        let b = dir.path().join("b.jsonl");
        std::fs::write(&b, "{\"imdb_id\":\"tt2\",\"category_class\":\"Title\",\"won\":\"False\"}\n").unwrap();
        assert_eq!(load_awards(&a).unwrap().0, vec![AwardRecord::new("tt1", "Writing", true).unwrap()]);
        assert_eq!(load_awards(&b).unwrap().0, vec![AwardRecord::new("tt2", "Title", false).unwrap()]);
    }

    proptest! {
        #[test]
        fn labels_independent_of_award_order(
            picks in proptest::collection::vec((0usize..8, 0usize..3, any::<bool>()), 0..20),
            seed in any::<u64>(),
        ) {
            let classes = ["Writing", "Title", "Directing"];
            let awards: Vec<AwardRecord> = picks
                .iter()
                .map(|&(i, c, w)| AwardRecord::new(format!("tt{i}"), classes[c], w).unwrap())
                .collect();
            let mut shuffled = awards.clone();
            use rand::{seq::SliceRandom, SeedableRng};
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let recs: Vec<_> = (0..8).map(|i| record(&format!("tt{i}"))).collect();
            let a = assign_labels(recs.clone(), &awards).unwrap();
            let b = assign_labels(recs, &shuffled).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
