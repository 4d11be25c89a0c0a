//! Bracketed constituency trees: `(TOP (IP (NP (NR 中国)) ...))`.

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tree {
    Node { label: String, children: Vec<Tree> },
    Leaf(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeError(pub String);

impl fmt::Display for TreeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for TreeError {}

#[derive(Debug, PartialEq)]
enum Tok<'a> {
    Open,
    Close,
    Atom(&'a str),
}

fn tokenize(s: &str) -> Vec<Tok<'_>> {
    let mut toks = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in s.char_indices() {
        if c == '(' || c == ')' || c.is_whitespace() {
            if let Some(st) = start.take() {
                toks.push(Tok::Atom(&s[st..i]));
            }
            match c {
                '(' => toks.push(Tok::Open),
                ')' => toks.push(Tok::Close),
                _ => {}
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(st) = start {
        toks.push(Tok::Atom(&s[st..]));
    }
    toks
}

impl Tree {
    pub fn parse(s: &str) -> Result<Tree, TreeError> {
        let toks = tokenize(s);
        let mut pos = 0;
        let tree = parse_node(&toks, &mut pos, 0)?;
        if pos != toks.len() {
            return Err(TreeError(format!(
                "unexpected content after the root at token {pos}"
            )));
        }
        Ok(tree)
    }

    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Tree::Leaf(w) => out.push(w),
            Tree::Node { children, .. } => children.iter().for_each(|c| c.collect_leaves(out)),
        }
    }
}

fn parse_node(toks: &[Tok<'_>], pos: &mut usize, depth: usize) -> Result<Tree, TreeError> {
    if depth > 512 {
        return Err(TreeError("tree nesting too deep".into()));
    }
    match toks.get(*pos) {
        Some(Tok::Open) => {}
        Some(Tok::Close) => return Err(TreeError("unbalanced ')'".into())),
        Some(Tok::Atom(a)) => return Err(TreeError(format!("expected '(' before {a:?}"))),
        None => return Err(TreeError("empty tree".into())),
    }
    *pos += 1;
    let label = match toks.get(*pos) {
        Some(Tok::Atom(a)) => {
            *pos += 1;
            a.to_string()
        }
        _ => return Err(TreeError("node without a label".into())),
    };
    let mut children = Vec::new();
    loop {
        match toks.get(*pos) {
            Some(Tok::Close) => {
                *pos += 1;
                break;
            }
            Some(Tok::Open) => children.push(parse_node(toks, pos, depth + 1)?),
            Some(Tok::Atom(a)) => {
                children.push(Tree::Leaf(a.to_string()));
                *pos += 1;
            }
            None => return Err(TreeError(format!("unclosed node {label:?}"))),
        }
    }
    if children.is_empty() {
        return Err(TreeError(format!("node {label:?} has no children")));
    }
    Ok(Tree::Node { label, children })
}

#[cfg(test)]
mod tests {
    use super::*;

    const ZH: &str = "(TOP\n  (IP\n    (NP (NP (NR 中国)) (NP (NN 保险) (NN 监管) (NN 项目)))\n    (VP (PP (P 在) (NP (NR 京))) (VP (VV 启动)))))";

    #[test]
    fn parses_indented_tree() {
        let t = Tree::parse(ZH).unwrap();
        assert_eq!(
            t.leaves(),
            vec!["中国", "保险", "监管", "项目", "在", "京", "启动"]
        );
    }

    #[test]
    fn rejects_unbalanced() {
        assert!(Tree::parse("(TOP (NP (NN a))").is_err());
        assert!(Tree::parse("(TOP (NP (NN a)))) ").is_err());
        assert!(Tree::parse("(TOP)").is_err());
        assert!(Tree::parse("").is_err());
    }
}
