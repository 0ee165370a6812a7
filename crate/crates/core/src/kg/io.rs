use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::KnowledgeGraph;
use crate::error::{Error, Result};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn fields<'a>(path: &Path, lineno: usize, line: &'a str, n: usize) -> Result<Vec<&'a str>> {
    let parts: Vec<&str> = line.split('\t').collect();
    if parts.len() != n {
        return Err(parse_err(
            path,
            lineno,
            format!("expected {n} tab-separated fields, found {}", parts.len()),
        ));
    }
    if let Some(i) = parts.iter().position(|p| p.is_empty()) {
        return Err(parse_err(path, lineno, format!("field {} is empty", i + 1)));
    }
    Ok(parts)
}

/// Reads `subject<TAB>relation<TAB>object` lines. Ids follow first
/// appearance; duplicate lines are dropped and counted. Blank lines are
/// skipped.
pub fn load_triples(path: impl AsRef<Path>) -> Result<(KnowledgeGraph, usize)> {
    let path = path.as_ref();
    let text = read(path)?;
    let mut g = KnowledgeGraph::new();
    let mut duplicates = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let f = fields(path, i + 1, line, 3)?;
        if !g.add_named(f[0], f[1], f[2]) {
            duplicates += 1;
        }
    }
    if g.num_triples() == 0 {
        return Err(Error::EmptyGraph(path.to_path_buf()));
    }
    Ok((g, duplicates))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn write_triples(path: impl AsRef<Path>, g: &KnowledgeGraph) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for t in g.triples() {
        writeln!(
            w,
            "{}\t{}\t{}",
            g.entities().name(t.subject),
            g.relations().name(t.relation),
            g.entities().name(t.object)
        )
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `entity1<TAB>entity2` lines. Names not yet in a graph's vocabulary
/// are added to it as isolated entities.
pub fn load_pairs(
    path: impl AsRef<Path>,
    g1: &mut KnowledgeGraph,
    g2: &mut KnowledgeGraph,
) -> Result<Vec<(usize, usize)>> {
    let path = path.as_ref();
    let text = read(path)?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let f = fields(path, i + 1, line, 2)?;
        pairs.push((g1.add_entity(f[0]), g2.add_entity(f[1])));
    }
    Ok(pairs)
}

pub fn write_pairs(
    path: impl AsRef<Path>,
    pairs: &[(usize, usize)],
    g1: &KnowledgeGraph,
    g2: &KnowledgeGraph,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for &(a, b) in pairs {
        writeln!(w, "{}\t{}", g1.entities().name(a), g2.entities().name(b))
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One entity name per line.
pub fn write_entity_list(path: impl AsRef<Path>, g: &KnowledgeGraph, ids: &[usize]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for &id in ids {
        writeln!(w, "{}", g.entities().name(id)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_and_deduplicates() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.tsv", "a\tr\tb\nb\tr\tc\nc\ts\ta\n");
        let (g, dup) = load_triples(&p).unwrap();
        assert_eq!((g.num_triples(), dup), (3, 0));
        assert_eq!(g.entities().names(), &["a", "b", "c"]);

        let p = write(dir.path(), "b.tsv", "a\tr\tb\na\tr\tb\n");
        let (g, dup) = load_triples(&p).unwrap();
        assert_eq!((g.num_triples(), dup), (1, 1));
    }

    #[test]
    fn reports_malformed_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "bad.tsv", "a\tr\tb\na r b\n");
        match load_triples(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let p = write(dir.path(), "empty.tsv", "");
        assert!(matches!(load_triples(&p), Err(Error::EmptyGraph(_))));
    }

    #[test]
    fn vocab_sizes_match_set_count() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::new();
        let mut x: u64 = 12345;
        let mut next = || {
            x = x
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (x >> 33) as usize
        };
        let mut lines = Vec::new();
        for _ in 0..1000 {
            let (s, r, o) = (next() % 150, next() % 12, next() % 150);
            lines.push((format!("ent{s}"), format!("rel{r}"), format!("ent{o}")));
        }
        for (s, r, o) in &lines {
            body.push_str(&format!("{s}\t{r}\t{o}\n"));
        }
        let p = write(dir.path(), "big.tsv", &body);
        let (g, dup) = load_triples(&p).unwrap();
        let ents: HashSet<&String> = lines.iter().flat_map(|(s, _, o)| [s, o]).collect();
        let rels: HashSet<&String> = lines.iter().map(|(_, r, _)| r).collect();
        let distinct: HashSet<&(String, String, String)> = lines.iter().collect();
        assert_eq!(g.num_entities(), ents.len());
        assert_eq!(g.num_relations(), rels.len());
        assert_eq!(g.num_triples(), distinct.len());
        assert_eq!(dup, 1000 - distinct.len());

        let out = dir.path().join("round.tsv");
        write_triples(&out, &g).unwrap();
        assert_eq!(load_triples(&out).unwrap().0, g);
    }
}
