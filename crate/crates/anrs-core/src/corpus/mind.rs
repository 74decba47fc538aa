//! Tab-separated news and behavior log parsing.
//!
//! News lines: `id \t category \t subcategory \t title \t abstract \t url
//! \t entities…`. Behavior lines: `impression_id \t user_id \t time \t
//! space-separated history \t space-separated newsid-label candidates`.

use std::io::{BufRead, BufReader};
use std::path::Path;

use super::tokenize::tokenize;
use super::{CategoryVocab, CorpusError};

/// A parsed news line before vocabulary indexing.
#[derive(Clone, Debug, PartialEq)]
pub struct RawNews {
    pub news_id: String,
    pub category: String,
    pub subcategory: String,
    pub title_words: Vec<String>,
    pub abstract_words: Vec<String>,
}

#[derive(Debug)]
pub struct ParsedNews {
    pub records: Vec<RawNews>,
    pub categories: CategoryVocab,
    pub subcategories: CategoryVocab,
    pub malformed: usize,
    pub total_lines: usize,
}

/// Lines older than this count apply the 1% malformed-line limit; tiny
/// hand-written fixtures only warn.
const MALFORMED_LIMIT_FLOOR: usize = 1000;

fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let file = std::fs::File::open(path)
        .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
    BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })
}

/// Parse a news TSV. Malformed lines (fewer than five fields or an empty id)
/// are skipped and counted; past 1% malformed on a real-sized file the whole
/// parse fails.
pub fn parse_news(path: &Path) -> Result<ParsedNews, CorpusError> {
    let lines = read_lines(path)?;
    let mut records = Vec::with_capacity(lines.len());
    let mut categories = CategoryVocab::new();
    let mut subcategories = CategoryVocab::new();
    let mut malformed = 0usize;
    let mut total = 0usize;

    for line in &lines {
        if line.is_empty() {
            continue;
        }
        total += 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 5 || fields[0].is_empty() {
            malformed += 1;
            continue;
        }
        categories.intern(fields[1]);
        subcategories.intern(fields[2]);
        records.push(RawNews {
            news_id: fields[0].to_string(),
            category: fields[1].to_string(),
            subcategory: fields[2].to_string(),
            title_words: tokenize(fields[3]),
            abstract_words: tokenize(fields[4]),
        });
    }

    if total >= MALFORMED_LIMIT_FLOOR && malformed * 100 > total {
        return Err(CorpusError::TooManyMalformed {
            path: path.display().to_string(),
            malformed,
            total,
        });
    }
    Ok(ParsedNews { records, categories, subcategories, malformed, total_lines: total })
}

/// A parsed behavior line with unresolved news-id strings.
#[derive(Clone, Debug, PartialEq)]
pub struct RawImpression {
    pub impression_id: String,
    pub user_id: String,
    pub history: Vec<String>,
    pub candidates: Vec<(String, u8)>,
}

#[derive(Debug)]
pub struct ParsedBehaviors {
    pub records: Vec<RawImpression>,
    /// `(line number, reason)` for every rejected line.
    pub rejected: Vec<(usize, String)>,
    /// Total positive labels across all accepted lines.
    pub clicks: usize,
}

/// Parse a behaviors TSV. A line is rejected (not fatal) when it has fewer
/// than five fields, no candidates, or any candidate without a `-0`/`-1`
/// suffix. Empty history is a valid cold-start user.
pub fn parse_behaviors(path: &Path) -> Result<ParsedBehaviors, CorpusError> {
    let lines = read_lines(path)?;
    let mut records = Vec::with_capacity(lines.len());
    let mut rejected = Vec::new();

    'lines: for (idx, line) in lines.iter().enumerate() {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 5 {
            rejected.push((line_no, format!("expected 5 fields, got {}", fields.len())));
            continue;
        }
        let history: Vec<String> = fields[3].split_whitespace().map(str::to_string).collect();
        let mut candidates = Vec::new();
        for cand in fields[4].split_whitespace() {
            let (news_id, label) = match cand.rsplit_once('-') {
                Some((id, "0")) if !id.is_empty() => (id.to_string(), 0u8),
                Some((id, "1")) if !id.is_empty() => (id.to_string(), 1u8),
                _ => {
                    rejected.push((line_no, format!("candidate {cand:?} lacks -0/-1 suffix")));
                    continue 'lines;
                }
            };
            candidates.push((news_id, label));
        }
        if candidates.is_empty() {
            rejected.push((line_no, "no candidates".to_string()));
            continue;
        }
        records.push(RawImpression {
            impression_id: fields[0].to_string(),
            user_id: fields[1].to_string(),
            history,
            candidates,
        });
    }

    // Only accepted lines contribute to the click count.
    let clicks: usize = records
        .iter()
        .map(|r| r.candidates.iter().filter(|(_, l)| *l == 1).count())
        .sum();
    Ok(ParsedBehaviors { records, rejected, clicks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.tsv");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        (dir, path)
    }

    #[test]
    fn empty_abstract_parses() {
        let (_d, path) =
            write_tmp("N1\tsports\tfootball\tTeam wins\t\thttp://x\t[]\t[]\n");
        let parsed = parse_news(&path).unwrap();
        assert_eq!(parsed.records.len(), 1);
        let rec = &parsed.records[0];
        assert_eq!(rec.title_words, vec!["team", "wins"]);
        assert!(rec.abstract_words.is_empty());
        assert_eq!(parsed.categories.get("sports"), 1);
    }

    #[test]
    fn malformed_line_skipped_and_counted() {
        let (_d, path) = write_tmp(
            "N1\ta\tb\tTitle one\tAbs\nBADLINE\nN2\ta\tc\tTitle two\tAbs\n",
        );
        let parsed = parse_news(&path).unwrap();
        assert_eq!(parsed.records.len(), 2);
        assert_eq!(parsed.malformed, 1);
    }

    #[test]
    fn excess_malformed_fails_at_scale() {
        let mut contents = String::new();
        for i in 0..980 {
            contents.push_str(&format!("N{i}\tcat\tsub\tTitle {i}\tAbstract\n"));
        }
        for _ in 0..20 {
            contents.push_str("garbage line\n");
        }
        let (_d, path) = write_tmp(&contents);
        assert!(matches!(parse_news(&path), Err(CorpusError::TooManyMalformed { .. })));
    }

    #[test]
    fn candidate_labels_parse() {
        let (_d, path) = write_tmp("1\tU1\t11/11/2019\tN10 N11\tN1-1 N2-0 N3-0\n");
        let parsed = parse_behaviors(&path).unwrap();
        assert_eq!(parsed.records.len(), 1);
        let imp = &parsed.records[0];
        assert_eq!(imp.history, vec!["N10", "N11"]);
        assert_eq!(
            imp.candidates,
            vec![("N1".into(), 1u8), ("N2".into(), 0u8), ("N3".into(), 0u8)]
        );
        assert_eq!(parsed.clicks, 1);
    }

    #[test]
    fn empty_history_is_cold_start() {
        let (_d, path) = write_tmp("1\tU1\t11/11/2019\t\tN1-1\n");
        let parsed = parse_behaviors(&path).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert!(parsed.records[0].history.is_empty());
    }

    #[test]
    fn bad_suffix_rejects_line() {
        let (_d, path) = write_tmp(
            "1\tU1\tt\tN9\tN1-1 N2-x\n2\tU2\tt\tN9\tN3-0 N4-1\n",
        );
        let parsed = parse_behaviors(&path).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.rejected.len(), 1);
        assert_eq!(parsed.rejected[0].0, 1);
        assert_eq!(parsed.clicks, 1);
    }
}
