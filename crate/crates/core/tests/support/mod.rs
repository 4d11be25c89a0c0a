//! Independent oracles and seeded generators. Shared with the acceptance
//! harness in the CLI crate, so it only depends on `nerqa_core`, serde and std.
#![allow(dead_code)]

pub mod golden;

use std::collections::{BTreeMap, BTreeSet};

use nerqa_core::corpus::{Mention, SplitMix64};
use nerqa_core::scoreboard::ErrorCategory;

pub struct Gen(SplitMix64);

impl Gen {
    pub fn new(seed: u64) -> Self {
        Gen(SplitMix64::new(seed))
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.0.next_u64() % n as u64) as usize
    }

    pub fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.below(hi - lo + 1)
    }

    pub fn chance(&mut self, num: usize, den: usize) -> bool {
        self.below(den) < num
    }

    pub fn pick<'a, T>(&mut self, xs: &'a [T]) -> &'a T {
        &xs[self.below(xs.len())]
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}

// ---- voting ----

pub const SURFACES: [&str; 5] = ["京", "中国", "Tony Blair", "UN", "保险"];
pub const LABELS: [&str; 4] = ["PER", "LOC", "ORG", "GPE"];

/// n in 1..=7 responses over at most 5 surfaces and 4 labels. Responses may
/// repeat a mention or give one surface two labels.
pub fn random_vote_input(g: &mut Gen) -> Vec<Vec<Mention>> {
    let n = g.range(1, 7);
    let ns = g.range(1, 5);
    let nl = g.range(1, 4);
    (0..n)
        .map(|_| {
            let len = g.range(0, 6);
            (0..len)
                .map(|_| Mention::new(SURFACES[g.below(ns)], LABELS[g.below(nl)]))
                .collect()
        })
        .collect()
}

/// Brute-force two-stage vote: count responses per surface, keep strict
/// majorities, then take the label present in most responses. Equal counts
/// go to the label whose first appearance is earliest in response order.
pub fn vote_oracle(responses: &[Vec<Mention>]) -> BTreeSet<Mention> {
    let n = responses.len();
    let surfaces: BTreeSet<&str> = responses
        .iter()
        .flatten()
        .map(|m| m.surface.as_str())
        .collect();
    let mut out = BTreeSet::new();
    for s in surfaces {
        let with_s = responses
            .iter()
            .filter(|r| r.iter().any(|m| m.surface == s))
            .count();
        if with_s <= n / 2 {
            continue;
        }
        let mut best: Option<(usize, (usize, usize), &str)> = None;
        for (ri, r) in responses.iter().enumerate() {
            for (pi, m) in r.iter().enumerate() {
                if m.surface != s {
                    continue;
                }
                let count = responses
                    .iter()
                    .filter(|r2| r2.iter().any(|x| x.surface == s && x.label == m.label))
                    .count();
                let better = match best {
                    None => true,
                    Some((c, pos, _)) => count > c || (count == c && (ri, pi) < pos),
                };
                if better {
                    best = Some((count, (ri, pi), m.label.as_str()));
                }
            }
        }
        out.insert(Mention::new(s, best.unwrap().2));
    }
    out
}

/// Exact-pair variant: keep every pair found in a strict majority.
pub fn vote_oracle_pairs(responses: &[Vec<Mention>]) -> BTreeSet<Mention> {
    let n = responses.len();
    let pairs: BTreeSet<&Mention> = responses.iter().flatten().collect();
    pairs
        .into_iter()
        .filter(|p| 2 * responses.iter().filter(|r| r.contains(p)).count() > n)
        .cloned()
        .collect()
}

// ---- parsing ----

const PIECES: [&str; 24] = [
    "[", "]", "{", "}", "'", "\"", ":", ",", "\\", "```", "json", " ", "\n", "None", "\\u4e2d",
    "[{'", "'}]", "': '", "x", "京", "中国", "人名", "\t", "\u{feff}",
];

/// Random UTF-8 biased toward answer-list syntax.
pub fn random_utf8(g: &mut Gen) -> String {
    let len = g.range(0, 40);
    let mut s = String::new();
    for _ in 0..len {
        if g.chance(1, 3) {
            loop {
                let cp = g.below(0x11_0000) as u32;
                if let Some(c) = char::from_u32(cp) {
                    s.push(c);
                    break;
                }
            }
        } else {
            s.push_str(g.pick(&PIECES));
        }
    }
    s
}

const SURFACE_CHARS: [char; 20] = [
    'a', 'Z', '9', '京', '中', '国', '\'', '"', '\\', '[', ']', '{', '}', ':', ',', '-', 'é', '😀',
    '.', '/',
];

fn random_token(g: &mut Gen) -> String {
    let len = g.range(1, 6);
    let mut s: String = (0..len).map(|_| *g.pick(&SURFACE_CHARS)).collect();
    if g.chance(1, 4) {
        s.push(' ');
        s.push(*g.pick(&SURFACE_CHARS));
    }
    s
}

/// Mention lists with quoting hazards inside surfaces and labels, and with
/// repeats so that dedup has work to do.
pub fn random_mentions(g: &mut Gen) -> Vec<Mention> {
    let len = g.range(0, 8);
    let mut out: Vec<Mention> = Vec::new();
    for _ in 0..len {
        if !out.is_empty() && g.chance(1, 5) {
            let again = g.pick(&out).clone();
            out.push(again);
        } else {
            out.push(Mention::new(random_token(g), random_token(g)));
        }
    }
    out
}

// ---- taxonomy ----

pub struct TaxonomyCase {
    pub text: String,
    pub gold: Vec<Mention>,
    pub pred: Vec<Mention>,
    pub labels: Vec<String>,
}

const ALPHABET: [&str; 6] = ["a", "b", "c", "京", "国", "d"];

pub fn random_taxonomy_case(g: &mut Gen) -> TaxonomyCase {
    let text: String = (0..g.range(4, 14)).map(|_| *g.pick(&ALPHABET)).collect();
    let chars: Vec<char> = text.chars().collect();
    let labels: Vec<String> = ["PER", "LOC", "ORG"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let sub = |g: &mut Gen| -> String {
        let a = g.below(chars.len());
        let b = g.range(a + 1, (a + 4).min(chars.len()));
        chars[a..b].iter().collect()
    };
    let gold: Vec<Mention> = (0..g.range(0, 4))
        .map(|_| Mention::new(sub(g), g.pick(&labels).clone()))
        .collect();
    let mut pred = Vec::new();
    for _ in 0..g.range(0, 6) {
        let surface = match g.below(5) {
            0 if !gold.is_empty() => g.pick(&gold).surface.clone(),
            1 => format!("{}z", sub(g)),
            _ => sub(g),
        };
        let label = if g.chance(1, 8) {
            "MISC".to_string()
        } else {
            g.pick(&labels).clone()
        };
        pred.push(Mention::new(surface, label));
    }
    if !gold.is_empty() && g.chance(1, 3) {
        pred.push(g.pick(&gold).clone());
    }
    TaxonomyCase {
        text,
        gold,
        pred,
        labels,
    }
}

fn byte_span(text: &str, s: &str) -> Option<(usize, usize)> {
    text.find(s).map(|i| (i, i + s.len()))
}

/// Which of the seven prediction rules hold for `p`, evaluated separately.
pub fn rules_holding(p: &Mention, text: &str, gold: &[Mention], labels: &[String]) -> [bool; 7] {
    let r1 = !text.contains(p.surface.as_str());
    let r2 = !labels.contains(&p.label);
    let r3 = gold
        .iter()
        .any(|g| g.surface == p.surface && g.label != p.label);
    let r4 = gold
        .iter()
        .any(|g| g.surface.len() < p.surface.len() && p.surface.contains(g.surface.as_str()));
    let r5 = gold
        .iter()
        .any(|g| p.surface.len() < g.surface.len() && g.surface.contains(p.surface.as_str()));
    let r6 = match byte_span(text, &p.surface) {
        None => false,
        Some((ps, pe)) => {
            gold.iter()
                .filter_map(|g| byte_span(text, &g.surface))
                .any(|(gs, ge)| {
                    let share = ps.max(gs) < pe.min(ge);
                    let p_in_g = gs <= ps && pe <= ge;
                    let g_in_p = ps <= gs && ge <= pe;
                    share && !p_in_g && !g_in_p
                })
        }
    };
    let r7 = !(r1 || r2 || r3 || r4 || r5 || r6);
    [r1, r2, r3, r4, r5, r6, r7]
}

pub const RULE_CATEGORIES: [ErrorCategory; 7] = [
    ErrorCategory::OodMention,
    ErrorCategory::OodType,
    ErrorCategory::WrongType,
    ErrorCategory::ContainGold,
    ErrorCategory::ContainedByGold,
    ErrorCategory::OverlapGold,
    ErrorCategory::CompletelyO,
];

/// Multiset difference `a - b`.
pub fn multiset_minus(a: &[Mention], b: &[Mention]) -> Vec<Mention> {
    let mut left: BTreeMap<&Mention, usize> = BTreeMap::new();
    for m in b {
        *left.entry(m).or_default() += 1;
    }
    let mut out = Vec::new();
    for m in a {
        match left.get_mut(m) {
            Some(k) if *k > 0 => *k -= 1,
            _ => out.push(m.clone()),
        }
    }
    out
}
