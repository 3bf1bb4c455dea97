//! Answer / supporting-fact / joint metrics and per-category breakdown.

use crate::corpus::{normalize_text, QAExample, QuestionType};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

/// Prediction file: `answer: {id → text}` and `sp: {id → [[title, idx]]}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub answer: BTreeMap<String, String>,
    pub sp: BTreeMap<String, Vec<(String, usize)>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub em: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

impl Prf {
    fn add(&mut self, o: &Prf) {
        self.em += o.em;
        self.f1 += o.f1;
        self.precision += o.precision;
        self.recall += o.recall;
    }

    fn div(&mut self, n: f64) {
        self.em /= n;
        self.f1 /= n;
        self.precision /= n;
        self.recall /= n;
    }
}

pub fn answer_scores(prediction: &str, gold: &str) -> Prf {
    let np = normalize_text(prediction);
    let ng = normalize_text(gold);
    let em = f64::from(u8::from(np == ng));
    let special = ["yes", "no", "noanswer"];
    if (special.contains(&np.as_str()) || special.contains(&ng.as_str())) && np != ng {
        return Prf {
            em,
            ..Default::default()
        };
    }
    let pt: Vec<&str> = np.split_whitespace().collect();
    let gt: Vec<&str> = ng.split_whitespace().collect();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut same = 0usize;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                same += 1;
            }
        }
    }
    if same == 0 {
        return Prf {
            em,
            ..Default::default()
        };
    }
    let precision = same as f64 / pt.len() as f64;
    let recall = same as f64 / gt.len() as f64;
    Prf {
        em,
        f1: 2.0 * precision * recall / (precision + recall),
        precision,
        recall,
    }
}

pub fn support_scores(prediction: &[(String, usize)], gold: &[(String, usize)]) -> Prf {
    let p: HashSet<&(String, usize)> = prediction.iter().collect();
    let g: HashSet<&(String, usize)> = gold.iter().collect();
    let tp = p.intersection(&g).count() as f64;
    let fp = p.len() as f64 - tp;
    let fn_ = g.len() as f64 - tp;
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Prf {
        em: f64::from(u8::from(fp + fn_ == 0.0)),
        f1,
        precision,
        recall,
    }
}

pub fn joint_scores(ans: &Prf, sup: &Prf) -> Prf {
    let precision = ans.precision * sup.precision;
    let recall = ans.recall * sup.recall;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Prf {
        em: ans.em * sup.em,
        f1,
        precision,
        recall,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "comp-yn")]
    CompYn,
    #[serde(rename = "comp-span")]
    CompSpan,
    #[serde(rename = "bridge")]
    Bridge,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::CompYn, Category::CompSpan, Category::Bridge];

    pub fn name(self) -> &'static str {
        match self {
            Category::CompYn => "comp-yn",
            Category::CompSpan => "comp-span",
            Category::Bridge => "bridge",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn categorize(ex: &QAExample) -> Category {
    match ex.qtype {
        QuestionType::Bridge => Category::Bridge,
        QuestionType::Comparison if ex.yes_no().is_some() => Category::CompYn,
        QuestionType::Comparison => Category::CompSpan,
    }
}

/// Category from a raw type string and answer, as found in foreign files.
pub fn categorize_raw(qtype: &str, answer: &str) -> Result<Category> {
    let qt = QuestionType::from_str(qtype)?;
    Ok(match qt {
        QuestionType::Bridge => Category::Bridge,
        QuestionType::Comparison if matches!(normalize_text(answer).as_str(), "yes" | "no") => {
            Category::CompYn
        }
        QuestionType::Comparison => Category::CompSpan,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: Category,
    pub count: usize,
    /// Percentage of all questions.
    pub pct: f64,
    pub ans_em: f64,
    pub sup_em: f64,
    pub joint_em: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub missing: usize,
    pub answer: Prf,
    pub support: Prf,
    pub joint: Prf,
    pub categories: Vec<CategoryRow>,
}

/// Scores `preds` against `gold`, averaging over the gold examples. A gold
/// id without a prediction scores zero.
pub fn score(preds: &Predictions, gold: &[QAExample]) -> Result<MetricsReport> {
    if gold.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (mut ans, mut sup, mut joint) = (Prf::default(), Prf::default(), Prf::default());
    let mut missing = 0;
    let mut per_cat: BTreeMap<Category, (usize, f64, f64, f64)> = BTreeMap::new();
    for ex in gold {
        let a = match preds.answer.get(&ex.id) {
            Some(p) => answer_scores(p, &ex.answer),
            None => {
                log::warn!("missing answer prediction for {}", ex.id);
                missing += 1;
                Prf::default()
            }
        };
        let gold_sp: Vec<(String, usize)> = ex
            .supporting_facts
            .iter()
            .map(|sf| (sf.0.clone(), sf.1))
            .collect();
        let s = match preds.sp.get(&ex.id) {
            Some(p) => support_scores(p, &gold_sp),
            None => {
                log::warn!("missing support prediction for {}", ex.id);
                if preds.answer.contains_key(&ex.id) {
                    missing += 1;
                }
                Prf::default()
            }
        };
        let j = joint_scores(&a, &s);
        ans.add(&a);
        sup.add(&s);
        joint.add(&j);
        let c = per_cat.entry(categorize(ex)).or_default();
        c.0 += 1;
        c.1 += a.em;
        c.2 += s.em;
        c.3 += j.em;
    }
    let n = gold.len() as f64;
    ans.div(n);
    sup.div(n);
    joint.div(n);
    let categories = Category::ALL
        .iter()
        .map(|&cat| {
            let (k, a, s, j) = per_cat.get(&cat).copied().unwrap_or_default();
            let kf = (k as f64).max(1.0);
            CategoryRow {
                category: cat,
                count: k,
                pct: 100.0 * k as f64 / n,
                ans_em: a / kf,
                sup_em: s / kf,
                joint_em: j / kf,
            }
        })
        .collect();
    Ok(MetricsReport {
        n: gold.len(),
        missing,
        answer: ans,
        support: sup,
        joint,
        categories,
    })
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

/// Aligned text table with one row per labelled report, columns EM/F1/P/R
/// for Answer, Support and Joint (values in percent).
pub fn metrics_table(rows: &[(String, &MetricsReport)]) -> String {
    let mut header = vec!["Model".to_string()];
    for group in ["Ans", "Sup", "Joint"] {
        for m in ["EM", "F1", "P", "R"] {
            header.push(format!("{group} {m}"));
        }
    }
    let mut body: Vec<Vec<String>> = Vec::new();
    for (name, r) in rows {
        let mut line = vec![name.clone()];
        for m in [&r.answer, &r.support, &r.joint] {
            line.extend([pct(m.em), pct(m.f1), pct(m.precision), pct(m.recall)]);
        }
        body.push(line);
    }
    render(&header, &body)
}

/// Per-category table: Pct, Ans EM, Sup EM, Joint EM.
pub fn category_table(report: &MetricsReport) -> String {
    let header: Vec<String> = ["Category", "Pct", "Ans EM", "Sup EM", "Joint EM"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let body: Vec<Vec<String>> = report
        .categories
        .iter()
        .map(|c| {
            vec![
                c.category.to_string(),
                format!("{:.1}", c.pct),
                pct(c.ans_em),
                pct(c.sup_em),
                pct(c.joint_em),
            ]
        })
        .collect();
    render(&header, &body)
}

fn render(header: &[String], body: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for line in body {
        for (w, c) in widths.iter_mut().zip(line) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let fmt_line = |cells: &[String], out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| {
                if i == 0 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    fmt_line(header, &mut out);
    let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    let _ = writeln!(out, "{}", "-".repeat(total));
    for line in body {
        fmt_line(line, &mut out);
    }
    out
}
