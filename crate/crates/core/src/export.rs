//! DOT, GraphML and edge-list CSV renderings of a [`ConceptGraph`].
//! Output is sorted so that equal graphs export identically.

use crate::graph::ConceptGraph;

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Directed DOT graph; the root is drawn as a filled double octagon.
pub fn to_dot(graph: &ConceptGraph) -> String {
    let mut out = String::from("digraph concepts {\n");
    for name in graph.sorted_node_names() {
        if name == graph.root() {
            out.push_str(&format!(
                "  \"{}\" [shape=doubleoctagon, style=filled, fillcolor=lightgoldenrod];\n",
                dot_escape(name)
            ));
        } else {
            out.push_str(&format!("  \"{}\";\n", dot_escape(name)));
        }
    }
    for e in graph.sorted_edges() {
        out.push_str(&format!(
            "  \"{}\" -> \"{}\" [provenance=\"{}\"];\n",
            dot_escape(e.src),
            dot_escape(e.dst),
            e.provenance
        ));
    }
    out.push_str("}\n");
    out
}

pub fn to_graphml(graph: &ConceptGraph) -> String {
    let names = graph.sorted_node_names();
    let id_of = |n: &str| names.binary_search(&n).expect("edge endpoint is a node");
    let mut out = String::from(concat!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n",
        "<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n",
        "  <key id=\"name\" for=\"node\" attr.name=\"name\" attr.type=\"string\"/>\n",
        "  <key id=\"root\" for=\"node\" attr.name=\"root\" attr.type=\"boolean\"/>\n",
        "  <key id=\"provenance\" for=\"edge\" attr.name=\"provenance\" attr.type=\"string\"/>\n",
        "  <graph id=\"G\" edgedefault=\"directed\">\n",
    ));
    for (i, name) in names.iter().enumerate() {
        out.push_str(&format!(
            "    <node id=\"n{i}\"><data key=\"name\">{}</data><data key=\"root\">{}</data></node>\n",
            xml_escape(name),
            *name == graph.root()
        ));
    }
    for (i, e) in graph.sorted_edges().iter().enumerate() {
        out.push_str(&format!(
            "    <edge id=\"e{i}\" source=\"n{}\" target=\"n{}\"><data key=\"provenance\">{}</data></edge>\n",
            id_of(e.src),
            id_of(e.dst),
            e.provenance
        ));
    }
    out.push_str("  </graph>\n</graphml>\n");
    out
}

/// `source,target,provenance` rows with a header.
pub fn to_edge_csv(graph: &ConceptGraph) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(["source", "target", "provenance"])
        .expect("in-memory write");
    for e in graph.sorted_edges() {
        w.write_record([e.src, e.dst, e.provenance.as_str()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}
