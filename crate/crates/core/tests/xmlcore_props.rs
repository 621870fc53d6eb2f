//! Property tests for the XML model: round-trip, canonical idempotence,
//! attribute-order independence, and agreement with an independent parser.

use proptest::prelude::*;
use streamsign::xmlcore::{canonicalize, parse, serialize, Child, XmlName, XmlNode};

const NAMESPACES: &[(&str, &str)] = &[("", ""), ("", "urn:d"), ("p", "urn:p"), ("q", "urn:q")];
const LOCALS: &[&str] = &["a", "b", "item", "data", "x-y", "n.1"];

fn name() -> impl Strategy<Value = XmlName> {
    (0..NAMESPACES.len(), 0..LOCALS.len()).prop_map(|(n, l)| {
        let (prefix, uri) = NAMESPACES[n];
        XmlName::new(prefix, LOCALS[l], uri).unwrap()
    })
}

fn attr_name() -> impl Strategy<Value = XmlName> {
    name().prop_map(|n| {
        if n.prefix().is_empty() {
            XmlName::local(n.local_name()).unwrap()
        } else {
            n
        }
    })
}

fn text() -> impl Strategy<Value = String> {
    "[a-z <>&\"'\t\r\n\u{e9}\u{4e2d}]{1,12}"
}

fn leaf() -> impl Strategy<Value = XmlNode> {
    (name(), prop::collection::vec((attr_name(), text()), 0..4)).prop_map(|(n, attrs)| {
        let mut node = XmlNode::new(n);
        for (a, v) in attrs {
            node.set_attribute(a, v).unwrap();
        }
        node
    })
}

fn tree() -> impl Strategy<Value = XmlNode> {
    leaf().prop_recursive(4, 32, 5, |inner| {
        (
            leaf(),
            prop::collection::vec(prop_oneof![inner.prop_map(Child::Element), text().prop_map(Child::Text)], 0..5),
        )
            .prop_map(|(mut node, children)| {
                node.children = children;
                node.normalize();
                node
            })
    })
}

/// Independent namespace-aware parse, reduced to a comparable shape.
fn oracle_shape(bytes: &[u8]) -> String {
    let text = std::str::from_utf8(bytes).unwrap();
    let doc = roxmltree::Document::parse(text).unwrap();
    let mut out = String::new();
    shape_rox(doc.root_element(), &mut out);
    out
}

fn shape_rox(node: roxmltree::Node, out: &mut String) {
    out.push_str(&format!("<{{{}}}{}", node.tag_name().namespace().unwrap_or(""), node.tag_name().name()));
    let mut attrs: Vec<_> = node
        .attributes()
        .map(|a| format!("{{{}}}{}={:?}", a.namespace().unwrap_or(""), a.name(), a.value()))
        .collect();
    attrs.sort();
    out.push_str(&attrs.join(","));
    out.push('>');
    for child in node.children() {
        if child.is_element() {
            shape_rox(child, out);
        } else if let Some(t) = child.text() {
            out.push_str(&format!("{t:?}"));
        }
    }
    out.push_str("</>");
}

fn shape_ours(node: &XmlNode, out: &mut String) {
    out.push_str(&format!("<{{{}}}{}", node.name.namespace_uri(), node.name.local_name()));
    let mut attrs: Vec<_> = node
        .attributes
        .iter()
        .map(|a| format!("{{{}}}{}={:?}", a.name.namespace_uri(), a.name.local_name(), a.value))
        .collect();
    attrs.sort();
    out.push_str(&attrs.join(","));
    out.push('>');
    for child in &node.children {
        match child {
            Child::Element(e) => shape_ours(e, out),
            Child::Text(t) => out.push_str(&format!("{t:?}")),
        }
    }
    out.push_str("</>");
}

#[test]
fn namespace_example_matches_oracle() {
    let input = br#"<x:e xmlns:x="u"><y/></x:e>"#;
    let ours = parse(input).unwrap();
    let mut shape = String::new();
    shape_ours(&ours, &mut shape);
    assert_eq!(shape, oracle_shape(input));
    assert_eq!(shape, "<{u}e><{}y></></>");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn serialize_round_trips(node in tree()) {
        let bytes = serialize(&node);
        prop_assert_eq!(parse(&bytes).unwrap(), node);
    }

    #[test]
    fn canonical_is_idempotent(node in tree()) {
        let once = canonicalize(&node);
        let twice = canonicalize(&parse(&once).unwrap());
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn attribute_order_does_not_matter(node in tree(), seed in any::<u64>()) {
        let mut shuffled = node.clone();
        let mut stack = vec![&mut shuffled];
        let mut s = seed;
        while let Some(n) = stack.pop() {
            let len = n.attributes.len();
            for i in (1..len).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                n.attributes.swap(i, (s >> 33) as usize % (i + 1));
            }
            stack.extend(n.elements_mut());
        }
        prop_assert_eq!(canonicalize(&node), canonicalize(&shuffled));
    }

    #[test]
    fn parse_agrees_with_independent_parser(node in tree()) {
        for bytes in [serialize(&node), canonicalize(&node).into_vec()] {
            let ours = parse(&bytes).unwrap();
            let mut shape = String::new();
            shape_ours(&ours, &mut shape);
            prop_assert_eq!(shape, oracle_shape(&bytes));
        }
    }
}
