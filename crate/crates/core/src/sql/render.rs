//! Canonical rendering and shape fingerprints.
//!
//! Canonical form: uppercase keywords, single spaces, `<>` for not-equal,
//! quoted identifiers stripped, non-atom predicate children parenthesized,
//! explicit ASC/DESC. Parsing the canonical rendering yields the same
//! template.

use sha2::{Digest, Sha256};

use super::{Atom, ColRef, Operand, Pred, Projection, QueryTemplate};
use crate::value::Value;

fn col(c: &ColRef) -> String {
    match &c.table {
        Some(t) => format!("{t}.{}", c.column),
        None => c.column.clone(),
    }
}

fn operand(o: &Operand, abstract_literals: bool) -> String {
    match o {
        Operand::Col(c) => col(c),
        Operand::Length(c) => format!("LENGTH({})", col(c)),
        Operand::Param(n) => format!("${n}"),
        Operand::Lit(v) => {
            if abstract_literals {
                format!("?{}", v.type_tag())
            } else {
                v.render_sql()
            }
        }
    }
}

fn atom(a: &Atom, abstract_literals: bool) -> String {
    match a {
        Atom::Cmp { left, op, right } => format!(
            "{} {} {}",
            operand(left, abstract_literals),
            op.as_str(),
            operand(right, abstract_literals)
        ),
        Atom::InList { col: c, items, negated } => {
            let list = items
                .iter()
                .map(|i| operand(i, abstract_literals))
                .collect::<Vec<_>>()
                .join(", ");
            format!("{} {}IN ({list})", col(c), if *negated { "NOT " } else { "" })
        }
        Atom::InSubquery { col: c, table, column, negated } => format!(
            "{} {}IN (SELECT {column} FROM {table})",
            col(c),
            if *negated { "NOT " } else { "" }
        ),
        Atom::IsNull { col: c, negated } => {
            format!("{} IS {}NULL", col(c), if *negated { "NOT " } else { "" })
        }
        Atom::Regex { col: c, pattern, case_insensitive, negated } => {
            let op = match (negated, case_insensitive) {
                (false, false) => "~",
                (false, true) => "~*",
                (true, false) => "!~",
                (true, true) => "!~*",
            };
            let quoted = Value::Text(pattern.clone()).render_sql();
            format!("{} {op} {quoted}", col(c))
        }
        Atom::Const(b) => if *b { "TRUE" } else { "FALSE" }.into(),
    }
}

fn pred(p: &Pred, abstract_literals: bool) -> String {
    let child = |c: &Pred| -> String {
        let s = pred(c, abstract_literals);
        match c {
            Pred::Atom(_) => s,
            _ => format!("({s})"),
        }
    };
    match p {
        Pred::Atom(a) => atom(a, abstract_literals),
        Pred::Not(inner) => format!("NOT ({})", pred(inner, abstract_literals)),
        Pred::And(cs) => cs.iter().map(child).collect::<Vec<_>>().join(" AND "),
        Pred::Or(cs) => cs.iter().map(child).collect::<Vec<_>>().join(" OR "),
    }
}

fn render_with(t: &QueryTemplate, abstract_literals: bool) -> String {
    let mut out = String::from("SELECT ");
    if t.distinct {
        out.push_str("DISTINCT ");
    }
    let projs = t
        .projections
        .iter()
        .map(|p| match p {
            Projection::Star => "*".to_string(),
            Projection::TableStar(tab) => format!("{tab}.*"),
            Projection::Col(c) => col(c),
            Projection::CountStar => "COUNT(*)".to_string(),
        })
        .collect::<Vec<_>>()
        .join(", ");
    out.push_str(&projs);
    out.push_str(" FROM ");
    out.push_str(&t.from);
    for j in &t.joins {
        out.push_str(&format!(
            " INNER JOIN {} ON {} = {}",
            j.table,
            col(&j.left),
            col(&j.right)
        ));
    }
    if !t.predicate.is_const(true) {
        out.push_str(" WHERE ");
        out.push_str(&pred(&t.predicate, abstract_literals));
    }
    if !t.group_by.is_empty() {
        out.push_str(" GROUP BY ");
        out.push_str(
            &t.group_by
                .iter()
                .map(col)
                .collect::<Vec<_>>()
                .join(", "),
        );
    }
    if let Some(h) = &t.having {
        out.push_str(&format!(" HAVING COUNT(*) {} {}", h.op.as_str(), h.count));
    }
    if !t.order_by.is_empty() {
        out.push_str(" ORDER BY ");
        out.push_str(
            &t.order_by
                .iter()
                .map(|(c, asc)| format!("{} {}", col(c), if *asc { "ASC" } else { "DESC" }))
                .collect::<Vec<_>>()
                .join(", "),
        );
    }
    if let Some(n) = t.limit {
        out.push_str(&format!(" LIMIT {n}"));
    }
    out
}

pub fn render(t: &QueryTemplate) -> String {
    render_with(t, false)
}

/// Canonical rendering with literals abstracted to typed placeholders,
/// SHA-256 hashed. Queries of equal shape share a fingerprint regardless of
/// literal values; DISTINCT and other structure participate.
pub fn fingerprint(t: &QueryTemplate) -> String {
    let abstract_text = render_with(t, true);
    let digest = Sha256::digest(abstract_text.as_bytes());
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

#[cfg(test)]
mod tests {
    use super::super::parse_template;

    #[test]
    fn canonicalizes_case_spacing_and_parens() {
        let t = parse_template(
            "select distinct users.* from users inner join members on members.user_id = users.id where users.status = 'active' and (members.project_id = 2)",
        )
        .unwrap();
        assert_eq!(
            t.render(),
            "SELECT DISTINCT users.* FROM users INNER JOIN members ON members.user_id = users.id WHERE users.status = 'active' AND members.project_id = 2"
        );
    }

    #[test]
    fn render_parse_round_trip_is_stable() {
        let cases = [
            "SELECT * FROM t WHERE a = 1 AND (b = 2 OR c = 3)",
            "SELECT COUNT(*) FROM t WHERE a IN (1, 2, 3)",
            "SELECT a, b FROM t GROUP BY a, b HAVING COUNT(*) > 1",
            "SELECT t.a FROM t ORDER BY t.a DESC LIMIT 3",
            "SELECT * FROM t WHERE NOT (a >= 0)",
            "SELECT * FROM t WHERE a IS NOT NULL AND b !~ 'x.*y'",
            "SELECT * FROM t WHERE fk NOT IN (SELECT id FROM p)",
        ];
        for sql in cases {
            let t = parse_template(sql).unwrap();
            let rendered = t.render();
            let reparsed = parse_template(&rendered).unwrap();
            assert_eq!(reparsed.render(), rendered, "case: {sql}");
        }
    }

    #[test]
    fn fingerprint_abstracts_literals_only() {
        let a = parse_template("SELECT * FROM members WHERE project_id = 2").unwrap();
        let b = parse_template("SELECT * FROM members WHERE project_id = 7").unwrap();
        let c = parse_template("SELECT DISTINCT * FROM members WHERE project_id = 2").unwrap();
        let d = parse_template("SELECT * FROM members WHERE project_id = 'two'").unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
        assert_ne!(a.fingerprint(), d.fingerprint());
        assert_eq!(a.fingerprint(), parse_template("SELECT * FROM members WHERE project_id = 2").unwrap().fingerprint());
    }

    #[test]
    fn not_equal_normalizes_to_angle_brackets() {
        let t = parse_template("SELECT * FROM t WHERE a != 1").unwrap();
        assert_eq!(t.render(), "SELECT * FROM t WHERE a <> 1");
    }
}
