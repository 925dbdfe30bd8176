//! Ranking metrics, the popularity split, sample utilization, beam evaluation and
//! the metric record/summary formats.

use std::collections::HashSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::decoding::{self, rank_order};
use crate::error::{Error, Result};
use crate::item_space::{ItemCatalog, PrefixTree, Token};
use crate::policy::PolicyState;
use crate::rollout::RolloutGroup;
use crate::world::{assemble_prompt, Interaction};

pub const DEFAULT_CUTOFFS: [usize; 3] = [5, 10, 20];

/// Distinct catalog item ids with non-increasing scores.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedList {
    items: Vec<usize>,
    scores: Vec<f64>,
}

impl RankedList {
    pub fn new(items: Vec<usize>, scores: Vec<f64>) -> Result<Self> {
        if items.len() != scores.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} items, {} scores",
                items.len(),
                scores.len()
            )));
        }
        let distinct: HashSet<_> = items.iter().collect();
        if distinct.len() != items.len() {
            return Err(Error::ContractViolation("ranked list repeats an item".into()));
        }
        if scores.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::ContractViolation("ranked scores increase".into()));
        }
        Ok(Self { items, scores })
    }

    /// Maps decoded token sequences to item ids.
    pub fn from_decoded(decoded: &[(Vec<Token>, f64)], catalog: &ItemCatalog) -> Result<Self> {
        let mut items = Vec::with_capacity(decoded.len());
        let mut scores = Vec::with_capacity(decoded.len());
        for (tokens, score) in decoded {
            let id = catalog
                .id_of(tokens)
                .ok_or_else(|| Error::OutOfCatalog(tokens.clone()))?;
            items.push(id);
            scores.push(*score);
        }
        Self::new(items, scores)
    }

    pub fn items(&self) -> &[usize] {
        &self.items
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// 1-based position of `truth`.
    pub fn rank_of(&self, truth: usize) -> Option<usize> {
        self.items.iter().position(|&i| i == truth).map(|p| p + 1)
    }
}

pub fn hr_at_n(ranked: &RankedList, truth: usize, n: usize) -> f64 {
    match ranked.rank_of(truth) {
        Some(r) if r <= n => 1.0,
        _ => 0.0,
    }
}

pub fn ndcg_at_n(ranked: &RankedList, truth: usize, n: usize) -> f64 {
    match ranked.rank_of(truth) {
        Some(r) if r <= n => 1.0 / ((r + 1) as f64).log2(),
        _ => 0.0,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PopularitySplit {
    pub popular: Vec<usize>,
    pub unpopular: Vec<usize>,
    is_popular: Vec<bool>,
}

impl PopularitySplit {
    pub fn is_popular(&self, item: usize) -> bool {
        self.is_popular.get(item).copied().unwrap_or(false)
    }
}

/// Top 20% of items by target frequency (ties to the lower id) are popular.
pub fn popularity_split<'a, I>(num_items: usize, train: I) -> PopularitySplit
where
    I: IntoIterator<Item = &'a Interaction>,
{
    let mut freq = vec![0usize; num_items];
    for i in train {
        if i.target < num_items {
            freq[i.target] += 1;
        }
    }
    let mut order: Vec<usize> = (0..num_items).collect();
    order.sort_by(|&a, &b| freq[b].cmp(&freq[a]).then(a.cmp(&b)));
    let k = (0.2 * num_items as f64).round() as usize;
    let mut is_popular = vec![false; num_items];
    for &i in &order[..k] {
        is_popular[i] = true;
    }
    let mut popular = order[..k].to_vec();
    popular.sort_unstable();
    let unpopular = (0..num_items).filter(|&i| !is_popular[i]).collect();
    PopularitySplit {
        popular,
        unpopular,
        is_popular,
    }
}

/// Fraction of groups that contribute a nonzero gradient: groups with mixed
/// rewards, plus every all-miss group when the SimPO term is active.
pub fn sample_utilization(groups: &[RolloutGroup], simpo_enabled: bool) -> f64 {
    if groups.is_empty() {
        return 0.0;
    }
    let useful = groups
        .iter()
        .filter(|g| g.has_signal() || (simpo_enabled && !g.is_success()))
        .count();
    useful as f64 / groups.len() as f64
}

/// Mean HR@N and NDCG@N over a set of interactions.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub count: usize,
    pub hr: Vec<(usize, f64)>,
    pub ndcg: Vec<(usize, f64)>,
}

impl MetricSet {
    pub fn hr(&self, n: usize) -> Option<f64> {
        self.hr.iter().find(|(c, _)| *c == n).map(|&(_, v)| v)
    }

    pub fn ndcg(&self, n: usize) -> Option<f64> {
        self.ndcg.iter().find(|(c, _)| *c == n).map(|&(_, v)| v)
    }
}

#[derive(Default)]
struct Accumulator {
    count: usize,
    hr: Vec<f64>,
    ndcg: Vec<f64>,
}

impl Accumulator {
    fn add(&mut self, ranked: &RankedList, truth: usize, cutoffs: &[usize]) {
        if self.hr.is_empty() {
            self.hr = vec![0.0; cutoffs.len()];
            self.ndcg = vec![0.0; cutoffs.len()];
        }
        self.count += 1;
        for (k, &n) in cutoffs.iter().enumerate() {
            self.hr[k] += hr_at_n(ranked, truth, n);
            self.ndcg[k] += ndcg_at_n(ranked, truth, n);
        }
    }

    fn finish(self, cutoffs: &[usize]) -> MetricSet {
        let denom = self.count.max(1) as f64;
        let get = |v: &[f64], k: usize| v.get(k).copied().unwrap_or(0.0) / denom;
        MetricSet {
            count: self.count,
            hr: cutoffs.iter().enumerate().map(|(k, &n)| (n, get(&self.hr, k))).collect(),
            ndcg: cutoffs.iter().enumerate().map(|(k, &n)| (n, get(&self.ndcg, k))).collect(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub all: MetricSet,
    pub popular: MetricSet,
    pub unpopular: MetricSet,
}

/// Beam-search evaluation of every interaction; `split` assigns popular/unpopular
/// sub-metrics by the ground-truth item.
pub fn evaluate(
    policy: &PolicyState,
    catalog: &ItemCatalog,
    trie: &PrefixTree,
    interactions: &[Interaction],
    beam_width: usize,
    cutoffs: &[usize],
    split: Option<&PopularitySplit>,
) -> Result<EvalReport> {
    if let Some(&max) = cutoffs.iter().max() {
        if max > beam_width {
            return Err(Error::Config(format!(
                "cutoff {max} exceeds beam width {beam_width}"
            )));
        }
    }
    let (mut all, mut pop, mut unpop) = (
        Accumulator::default(),
        Accumulator::default(),
        Accumulator::default(),
    );
    for inter in interactions {
        let ranked = rank_items(policy, catalog, trie, &inter.history, beam_width)?;
        all.add(&ranked, inter.target, cutoffs);
        if let Some(s) = split {
            if s.is_popular(inter.target) {
                pop.add(&ranked, inter.target, cutoffs);
            } else {
                unpop.add(&ranked, inter.target, cutoffs);
            }
        }
    }
    Ok(EvalReport {
        all: all.finish(cutoffs),
        popular: pop.finish(cutoffs),
        unpopular: unpop.finish(cutoffs),
    })
}

pub fn rank_items(
    policy: &PolicyState,
    catalog: &ItemCatalog,
    trie: &PrefixTree,
    history: &[usize],
    beam_width: usize,
) -> Result<RankedList> {
    let prompt = assemble_prompt(history, catalog)?;
    let h = policy.encode(&prompt)?;
    let decoded = decoding::beam_from_state(policy, &h, beam_width, trie)?;
    RankedList::from_decoded(&decoded, catalog)
}

/// Scores every catalog item by total log-probability; the oracle for beam search.
pub fn exhaustive_ranking(policy: &PolicyState, prompt: &[Token], catalog: &ItemCatalog) -> Result<RankedList> {
    let h = policy.encode(prompt)?;
    let mut scored = Vec::with_capacity(catalog.len());
    for item in catalog.items() {
        let lp = policy.token_log_probs_from(&h, item.tokens())?;
        scored.push((item.tokens().to_vec(), lp.iter().sum::<f64>()));
    }
    scored.sort_by(rank_order);
    RankedList::from_decoded(&scored, catalog)
}

/// One line of the metrics stream.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub stage: String,
    pub step: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grpo_term: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penalty_term: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simpo_term: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub succ_groups: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fail_groups: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outliers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unique_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_norm: Option<f64>,
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub grad_clipped: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_utilization: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hr1_val: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_entropy: Option<f64>,
}

impl MetricRecord {
    pub fn write_line<W: Write>(&self, mut out: W) -> Result<()> {
        let line = serde_json::to_string(self)
            .map_err(|e| Error::Data(format!("metric record: {e}")))?;
        writeln!(out, "{line}")?;
        Ok(())
    }
}

pub fn read_metric_records(text: &str) -> Result<Vec<MetricRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Data(format!("metric record: {e}"))))
        .collect()
}

/// One row of the summary table.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub run: String,
    pub subset: String,
    pub metrics: MetricSet,
}

pub fn summary_rows(run: &str, report: &EvalReport) -> Vec<SummaryRow> {
    [
        ("all", &report.all),
        ("popular", &report.popular),
        ("unpopular", &report.unpopular),
    ]
    .into_iter()
    .filter(|(_, m)| m.count > 0)
    .map(|(subset, m)| SummaryRow {
        run: run.to_string(),
        subset: subset.to_string(),
        metrics: m.clone(),
    })
    .collect()
}

pub fn write_summary<W: Write>(mut out: W, rows: &[SummaryRow], cutoffs: &[usize]) -> Result<()> {
    let mut header = vec!["run".to_string(), "subset".into(), "count".into()];
    header.extend(cutoffs.iter().map(|n| format!("hr@{n}")));
    header.extend(cutoffs.iter().map(|n| format!("ndcg@{n}")));
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        let mut cells = vec![row.run.clone(), row.subset.clone(), row.metrics.count.to_string()];
        for &n in cutoffs {
            cells.push(format!("{:.6}", row.metrics.hr(n).unwrap_or(0.0)));
        }
        for &n in cutoffs {
            cells.push(format!("{:.6}", row.metrics.ndcg(n).unwrap_or(0.0)));
        }
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(items: &[usize]) -> RankedList {
        let scores = (0..items.len()).map(|i| -(i as f64)).collect();
        RankedList::new(items.to_vec(), scores).unwrap()
    }

    #[test]
    fn hit_ratio_cases() {
        let l = list(&[7, 1, 2, 3, 4, 9, 8]);
        assert_eq!(hr_at_n(&l, 7, 5), 1.0);
        assert_eq!(hr_at_n(&l, 42, 5), 0.0);
        assert_eq!(hr_at_n(&l, 9, 5), 0.0);
        assert_eq!(hr_at_n(&l, 9, 10), 1.0);
    }

    #[test]
    fn ndcg_cases() {
        let l = list(&[7, 1, 2]);
        assert_eq!(ndcg_at_n(&l, 7, 5), 1.0);
        assert!((ndcg_at_n(&l, 1, 5) - 0.6309).abs() < 1e-4);
        assert_eq!(ndcg_at_n(&l, 2, 2), 0.0);
    }

    #[test]
    fn ranked_list_validation() {
        assert!(RankedList::new(vec![1, 1], vec![0.0, -1.0]).is_err());
        assert!(RankedList::new(vec![1, 2], vec![-1.0, 0.0]).is_err());
    }

    fn inter(target: usize) -> Interaction {
        Interaction {
            user: 0,
            history: vec![0],
            target,
            timestamp: 0,
        }
    }

    #[test]
    fn popularity_cases() {
        let mut data = Vec::new();
        for item in 0..10 {
            for _ in 0..(9 - item) {
                data.push(inter(item));
            }
        }
        let s = popularity_split(10, &data);
        assert_eq!(s.popular, vec![0, 1]);
        assert_eq!(s.popular.len() + s.unpopular.len(), 10);

        let uniform: Vec<Interaction> = (0..10).rev().map(inter).collect();
        assert_eq!(popularity_split(10, &uniform).popular, vec![0, 1]);

        let mut shuffled = data.clone();
        shuffled.reverse();
        assert_eq!(popularity_split(10, &shuffled), s);
    }

    #[test]
    fn summary_csv_shape() {
        let m = MetricSet {
            count: 3,
            hr: vec![(5, 0.5), (10, 0.75)],
            ndcg: vec![(5, 0.25), (10, 0.3)],
        };
        let rows = vec![SummaryRow {
            run: "sft".into(),
            subset: "all".into(),
            metrics: m,
        }];
        let mut buf = Vec::new();
        write_summary(&mut buf, &rows, &[5, 10]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "run,subset,count,hr@5,hr@10,ndcg@5,ndcg@10");
        assert_eq!(lines[1], "sft,all,3,0.500000,0.750000,0.250000,0.300000");
    }

    #[test]
    fn metric_record_roundtrip() {
        let r = MetricRecord {
            stage: "rl".into(),
            step: 3,
            loss: Some(0.25),
            hr1_val: Some(0.1),
            ..Default::default()
        };
        let mut buf = Vec::new();
        r.write_line(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(!text.contains("simpo_term"));
        assert_eq!(read_metric_records(&text).unwrap(), vec![r]);
    }
}
