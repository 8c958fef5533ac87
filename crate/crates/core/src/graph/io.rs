use std::fs;
use std::path::Path;

use super::{build_graph, Entity, EntityId, GraphError, Modality, MultimodalGraph, Relation, Triple};
use crate::textfmt::{join_fields, split_fields};

const MAGIC: &str = "MMKG";
const VERSION: &str = "v1";

/// Serialize a graph to the line-delimited text format.
///
/// ```text
/// MMKG v1 <n_entities> <n_relations> <n_triples>
/// E <id> <modality> <name> [payload_ref]
/// R <id> <name>
/// T <head> <relation> <tail>
/// ```
pub fn write_graph(graph: &MultimodalGraph) -> String {
    let mut out = format!(
        "{MAGIC} {VERSION} {} {} {}\n",
        graph.entity_count(),
        graph.relation_count(),
        graph.triple_count()
    );
    for e in graph.entities() {
        let id = e.id.0.to_string();
        let mut fields = vec!["E", id.as_str(), e.modality.as_str(), e.name.as_str()];
        if let Some(p) = &e.payload_ref {
            fields.push(p);
        }
        out.push_str(&join_fields(fields));
        out.push('\n');
    }
    for r in graph.relations() {
        out.push_str(&join_fields(["R", &r.id.0.to_string(), &r.name]));
        out.push('\n');
    }
    for t in graph.triples() {
        out.push_str(&format!("T {} {} {}\n", t.head, t.relation, t.tail));
    }
    out
}

pub fn save_graph(graph: &MultimodalGraph, path: impl AsRef<Path>) -> Result<(), GraphError> {
    fs::write(path, write_graph(graph))?;
    Ok(())
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<MultimodalGraph, GraphError> {
    let bytes = fs::read(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|e| GraphError::Format { line: 0, message: format!("invalid UTF-8: {e}") })?;
    parse_graph(&text)
}

fn format_err(line: usize, message: impl Into<String>) -> GraphError {
    GraphError::Format { line, message: message.into() }
}

fn parse_u64(line: usize, field: &str, what: &str) -> Result<u64, GraphError> {
    field.parse().map_err(|_| format_err(line, format!("bad {what} {field:?}")))
}

/// Parse the text graph format. Line numbers in errors are 1-based.
pub fn parse_graph(text: &str) -> Result<MultimodalGraph, GraphError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| format_err(1, "missing header"))?;
    let header = split_fields(header).map_err(|m| format_err(1, m))?;
    match header.as_slice() {
        [magic, ..] if magic != MAGIC => return Err(format_err(1, "bad magic")),
        [_, version, ..] if version != VERSION => {
            return Err(format_err(1, format!("unsupported version {version:?}")))
        }
        [_, _, _, _, _] => {}
        _ => return Err(format_err(1, "header must be `MMKG v1 <entities> <relations> <triples>`")),
    }
    let n_entities = parse_u64(1, &header[2], "entity count")? as usize;
    let n_relations = parse_u64(1, &header[3], "relation count")? as usize;
    let n_triples = parse_u64(1, &header[4], "triple count")? as usize;

    let mut entities = Vec::new();
    let mut relations = Vec::new();
    let mut triples = Vec::new();
    let mut last_line = 1;
    for (no, line) in lines {
        last_line = no;
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_fields(line).map_err(|m| format_err(no, m))?;
        match fields.first().map(String::as_str) {
            Some("E") => {
                if !(4..=5).contains(&fields.len()) {
                    return Err(format_err(no, "entity record needs 4 or 5 fields"));
                }
                let modality: Modality = fields[2].parse().map_err(|m: String| format_err(no, m))?;
                let payload_ref = fields.get(4).cloned();
                if modality == Modality::Image && payload_ref.is_none() {
                    return Err(format_err(no, "image entity without payload reference"));
                }
                entities.push(Entity {
                    id: EntityId(parse_u64(no, &fields[1], "entity id")?),
                    name: fields[3].clone(),
                    modality,
                    payload_ref,
                });
            }
            Some("R") => {
                if fields.len() != 3 {
                    return Err(format_err(no, "relation record needs 3 fields"));
                }
                relations.push(Relation::new(parse_u64(no, &fields[1], "relation id")?, &fields[2]));
            }
            Some("T") => {
                if fields.len() != 4 {
                    return Err(format_err(no, "triple record needs 4 fields"));
                }
                triples.push(Triple::new(
                    parse_u64(no, &fields[1], "head id")?,
                    parse_u64(no, &fields[2], "relation id")?,
                    parse_u64(no, &fields[3], "tail id")?,
                ));
            }
            Some(other) => return Err(format_err(no, format!("unknown record tag {other:?}"))),
            None => unreachable!("blank lines skipped"),
        }
    }
    if entities.len() != n_entities || relations.len() != n_relations || triples.len() != n_triples
    {
        return Err(format_err(
            last_line,
            format!(
                "header declares {n_entities}/{n_relations}/{n_triples} records, found {}/{}/{}",
                entities.len(),
                relations.len(),
                triples.len()
            ),
        ));
    }
    build_graph(entities, relations, triples).map_err(|e| format_err(0, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ingest_scene_graph, BoundingBox, SceneGraphRecord, SceneObject};

    #[test]
    fn empty_round_trip() {
        let g = build_graph([], [], []).unwrap();
        assert_eq!(write_graph(&g), "MMKG v1 0 0 0\n");
        assert_eq!(parse_graph(&write_graph(&g)).unwrap(), g);
    }

    #[test]
    fn ingested_round_trip_through_file() {
        let bbox = BoundingBox { x: 0.0, y: 0.0, w: 10.0, h: 10.0 };
        let record = SceneGraphRecord {
            image_ref: "photo 1.jpg".into(),
            objects: vec![
                SceneObject { name: "man".into(), bbox, attributes: vec!["tall".into(), "young".into()] },
                SceneObject { name: "surf board".into(), bbox, attributes: vec![] },
                SceneObject { name: "wave".into(), bbox, attributes: vec!["white".into()] },
            ],
            relations: vec![],
            region_qa: vec![],
        };
        let g = ingest_scene_graph(&record).unwrap();
        assert_eq!(g.entity_count(), 9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.mmkg");
        save_graph(&g, &path).unwrap();
        assert_eq!(load_graph(&path).unwrap(), g);
    }

    #[test]
    fn truncated_file_is_format_error() {
        let g = build_graph(
            [Entity::text(0, "a"), Entity::text(1, "b")],
            [Relation::new(0, "r")],
            [Triple::new(0, 0, 1)],
        )
        .unwrap();
        let text = write_graph(&g);
        let cut = &text[..text.len() - 8];
        assert!(matches!(parse_graph(cut), Err(GraphError::Format { .. })));
        let no_triples: String = text.lines().take(4).map(|l| format!("{l}\n")).collect();
        assert!(matches!(parse_graph(&no_triples), Err(GraphError::Format { .. })));
    }

    #[test]
    fn header_errors() {
        assert!(matches!(parse_graph(""), Err(GraphError::Format { line: 1, .. })));
        assert!(matches!(parse_graph("KGMM v1 0 0 0"), Err(GraphError::Format { line: 1, .. })));
        assert!(matches!(parse_graph("MMKG v2 0 0 0"), Err(GraphError::Format { line: 1, .. })));
        assert!(matches!(parse_graph("MMKG v1 0 0"), Err(GraphError::Format { line: 1, .. })));
    }

    #[test]
    fn dangling_reference_on_load() {
        let text = "MMKG v1 1 1 1\nE 0 text a\nR 0 r\nT 0 0 5\n";
        assert!(matches!(parse_graph(text), Err(GraphError::Format { .. })));
    }

    #[test]
    fn bad_record_names_line() {
        let text = "MMKG v1 1 0 0\nE zero text a\n";
        assert!(matches!(parse_graph(text), Err(GraphError::Format { line: 2, .. })));
    }
}
