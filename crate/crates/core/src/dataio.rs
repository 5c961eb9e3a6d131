//! Task files (JSONL), TREC run/qrels adapters and run-file output.
//!
//! JSONL is the canonical format, one task per line:
//!
//! ```json
//! {"query_id": "q1", "query": "...", "passages": [{"id": "d1", "text": "...", "score": 12.3}], "gold": ["d1"]}
//! ```
//!
//! Passages are taken in file order as the initial ranking.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{binarize_judgments, RankedList, RankingTask, RelevanceJudgments};

/// Minimum qrels grade that counts as relevant for TREC deep-learning style judgments.
pub const DEFAULT_RELEVANCE_THRESHOLD: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PassageRecord {
    id: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TaskRecord {
    query_id: String,
    query: String,
    passages: Vec<PassageRecord>,
    #[serde(default)]
    gold: Vec<String>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads tasks from any buffered reader; `origin` only labels errors.
pub fn read_jsonl(reader: impl BufRead, origin: &Path) -> Result<Vec<RankingTask>> {
    let mut tasks = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in reader.lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TaskRecord = serde_json::from_str(&line).map_err(|e| parse_err(origin, lineno, e.to_string()))?;
        if !seen.insert(rec.query_id.clone()) {
            return Err(Error::DuplicateQueryId(rec.query_id));
        }
        let task = RankingTask::new(
            rec.query_id,
            rec.query,
            rec.passages.into_iter().map(|p| (p.id, p.text, p.score)),
            rec.gold,
        )
        .map_err(|e| parse_err(origin, lineno, e.to_string()))?;
        tasks.push(task);
    }
    Ok(tasks)
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<RankingTask>> {
    let path = path.as_ref();
    read_jsonl(open(path)?, path)
}

pub fn write_jsonl<'a>(tasks: impl IntoIterator<Item = &'a RankingTask>, mut out: impl Write) -> std::io::Result<()> {
    for t in tasks {
        let rec = TaskRecord {
            query_id: t.query_id.clone(),
            query: t.query_text.clone(),
            passages: t
                .passages()
                .iter()
                .map(|p| PassageRecord {
                    id: p.id.clone(),
                    text: p.text.clone(),
                    score: p.initial_score,
                })
                .collect(),
            gold: t.gold().iter().cloned().collect(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_jsonl(tasks: &[RankingTask], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_jsonl(tasks, BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

/// 4-column qrels: `qid 0 docid grade`. Negative grades clamp to 0.
pub fn load_qrels(path: impl AsRef<Path>) -> Result<RelevanceJudgments> {
    let path = path.as_ref();
    let mut j = RelevanceJudgments::new();
    for (n, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() < 4 {
            return Err(parse_err(path, n + 1, "qrels lines need 4 columns"));
        }
        let grade: i64 = cols[3]
            .parse()
            .map_err(|_| parse_err(path, n + 1, format!("bad grade `{}`", cols[3])))?;
        j.insert(cols[0], cols[2], grade.max(0) as u32);
    }
    Ok(j)
}

/// One line of a 6-column run file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLine {
    pub query_id: String,
    pub doc_id: String,
    pub rank: usize,
    pub score: f64,
}

fn read_run_lines(path: &Path) -> Result<Vec<RunLine>> {
    let mut out = Vec::new();
    for (n, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            continue;
        }
        if cols.len() < 6 {
            return Err(parse_err(path, n + 1, "run lines need 6 columns"));
        }
        out.push(RunLine {
            query_id: cols[0].to_string(),
            doc_id: cols[2].to_string(),
            rank: cols[3]
                .parse()
                .map_err(|_| parse_err(path, n + 1, format!("bad rank `{}`", cols[3])))?,
            score: cols[4]
                .parse()
                .map_err(|_| parse_err(path, n + 1, format!("bad score `{}`", cols[4])))?,
        });
    }
    Ok(out)
}

/// Run file grouped per query, each list ordered by the rank column.
pub fn load_run(path: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<RunLine>>> {
    let mut by_query: BTreeMap<String, Vec<RunLine>> = BTreeMap::new();
    for l in read_run_lines(path.as_ref())? {
        by_query.entry(l.query_id.clone()).or_default().push(l);
    }
    for lines in by_query.values_mut() {
        lines.sort_by_key(|l| l.rank);
    }
    Ok(by_query)
}

/// Tab-separated `qid<TAB>query text`.
pub fn load_queries(path: impl AsRef<Path>) -> Result<HashMap<String, String>> {
    let path = path.as_ref();
    let mut out = HashMap::new();
    for (n, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (qid, text) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, n + 1, "expected qid<TAB>text"))?;
        out.insert(qid.trim().to_string(), text.trim().to_string());
    }
    Ok(out)
}

/// JSONL `{"id": ..., "text": ...}` per line.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<HashMap<String, String>> {
    #[derive(Deserialize)]
    struct Doc {
        id: String,
        text: String,
    }
    let path = path.as_ref();
    let mut out = HashMap::new();
    for (n, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let d: Doc = serde_json::from_str(&line).map_err(|e| parse_err(path, n + 1, e.to_string()))?;
        out.insert(d.id, d.text);
    }
    Ok(out)
}

/// Paths making up a TREC-style dataset.
#[derive(Debug, Clone)]
pub struct TrecSources<'a> {
    pub run: &'a Path,
    pub qrels: &'a Path,
    pub corpus: &'a Path,
    pub queries: &'a Path,
}

/// Builds tasks from a run file, ordering passages by the rank column and
/// marking grades `>= threshold` as gold.
pub fn load_trec(src: &TrecSources<'_>, threshold: u32) -> Result<Vec<RankingTask>> {
    let run = load_run(src.run)?;
    let judgments = load_qrels(src.qrels)?;
    let gold = binarize_judgments(&judgments, threshold);
    let corpus = load_corpus(src.corpus)?;
    let queries = load_queries(src.queries)?;
    run.into_iter()
        .map(|(qid, lines)| {
            let query = queries
                .get(&qid)
                .ok_or_else(|| Error::InvalidTask(format!("no query text for {qid}")))?;
            let passages = lines
                .into_iter()
                .map(|l| {
                    let text = corpus
                        .get(&l.doc_id)
                        .ok_or_else(|| Error::MissingCorpusText(l.doc_id.clone()))?;
                    Ok((l.doc_id, text.clone(), Some(l.score)))
                })
                .collect::<Result<Vec<_>>>()?;
            let candidates: HashSet<&str> = passages.iter().map(|p| p.0.as_str()).collect();
            // judged-relevant documents outside the candidate list cannot be retrieved
            let g: Vec<String> = gold
                .get(&qid)
                .map(|s| s.iter().filter(|d| candidates.contains(d.as_str())).cloned().collect())
                .unwrap_or_default();
            RankingTask::new(qid.clone(), query.clone(), passages, g)
        })
        .collect()
}

/// Writes `qid Q0 docid rank score tag`, rank 1-based and score `N - position`.
pub fn write_run<'a>(
    lists: impl IntoIterator<Item = &'a RankedList>,
    tag: &str,
    mut out: impl Write,
) -> std::io::Result<()> {
    for list in lists {
        let n = list.len();
        for (pos, id) in list.ordering().iter().enumerate() {
            writeln!(out, "{} Q0 {} {} {} {}", list.query_id, id, pos + 1, n - pos, tag)?;
        }
    }
    out.flush()
}

pub fn save_run(lists: &[RankedList], path: impl AsRef<Path>, tag: &str) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_run(lists, tag, BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn reads_two_tasks() {
        let data = r#"{"query_id":"a","query":"q a","passages":[{"id":"1","text":"x"},{"id":"2","text":"y","score":1.5}],"gold":["2"]}
{"query_id":"b","query":"q b","passages":[{"id":"1","text":"z"}]}
"#;
        let tasks = read_jsonl(Cursor::new(data), Path::new("mem")).unwrap();
        assert_eq!(tasks.len(), 2);
        assert_eq!(tasks[0].passages()[1].initial_score, Some(1.5));
        assert!(tasks[0].is_gold("2"));
        assert!(tasks[1].gold().is_empty());
    }

    #[test]
    fn missing_query_reports_line() {
        let data = "{\"query_id\":\"a\",\"query\":\"q\",\"passages\":[{\"id\":\"1\",\"text\":\"x\"}]}\n\
                    {\"query_id\":\"b\",\"passages\":[]}\n";
        match read_jsonl(Cursor::new(data), Path::new("f.jsonl")) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("query"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_query_ids_rejected() {
        let line = r#"{"query_id":"a","query":"q","passages":[{"id":"1","text":"x"}]}"#;
        let data = format!("{line}\n{line}\n");
        assert!(matches!(
            read_jsonl(Cursor::new(data), Path::new("m")),
            Err(Error::DuplicateQueryId(q)) if q == "a"
        ));
    }

    #[test]
    fn run_format() {
        let task = RankingTask::new(
            "q7",
            "x",
            ["d1", "d2", "d3"].map(|d| (d.to_string(), "t".to_string(), None)),
            Vec::<String>::new(),
        )
        .unwrap();
        let list = RankedList::from_ids(&task, vec!["d3".into(), "d1".into(), "d2".into()]).unwrap();
        let mut buf = Vec::new();
        write_run([&list], "tag", &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "q7 Q0 d3 1 3 tag\nq7 Q0 d1 2 2 tag\nq7 Q0 d2 3 1 tag\n");
        let mut empty = Vec::new();
        write_run(std::iter::empty(), "tag", &mut empty).unwrap();
        assert!(empty.is_empty());
    }
}
